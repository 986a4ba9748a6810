"""Exact small-instance checks of adaptive composition.

Adaptive mechanisms over finite alphabets are enumerated path by path, so
output distributions and Renyi divergences are computed exactly (up to
floating point) rather than sampled. Per-round losses fed to filters are
measured from the mechanism tables themselves: for each history prefix, the
largest order-alpha divergence over the allowed dataset pairs.

Prefixes are indexed in mixed radix, earliest output most significant: the
child of prefix ``p`` with output ``a`` in a round of alphabet ``A`` is
``p * A + a``.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.special import logsumexp

from .core import SUM_TOLERANCE, _log_moment_divergence, check_order
from .errors import InvariantError, ParameterError, QuadratureError, SizeLimitError
from .filters import FilterDecision, FilterState, rdp_filter_check
from .ledger import IndividualLedger, begin_round, commit_round

MAX_ALPHABET = 16
MAX_ROUNDS = 5
MAX_PATHS = 16**5
VALIDATION_SLACK = 1e-9


def _check_table(table: np.ndarray, what: str) -> np.ndarray:
    table = np.array(table, dtype=float)
    if table.ndim != 3:
        raise InvariantError(f"{what} must be (prefixes, datasets, alphabet)")
    if table.shape[2] > MAX_ALPHABET:
        raise SizeLimitError(f"alphabet of {table.shape[2]} exceeds {MAX_ALPHABET}")
    if not np.all(np.isfinite(table)) or np.any(table < 0):
        raise InvariantError(f"{what} has negative or non-finite entries")
    if np.any(np.abs(table.sum(axis=2) - 1) > SUM_TOLERANCE):
        raise InvariantError(f"{what} has a row not summing to 1")
    table.setflags(write=False)
    return table


@dataclass(frozen=True, eq=False)
class DiscreteMechanism:
    """One adaptive round: a distribution for every (history prefix, dataset)."""

    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "table", _check_table(self.table, "mechanism table"))

    @classmethod
    def history_independent(cls, per_dataset, num_prefixes: int = 1) -> "DiscreteMechanism":
        rows = np.asarray(per_dataset, dtype=float)
        return cls(np.broadcast_to(rows, (num_prefixes,) + rows.shape).copy())

    @property
    def num_prefixes(self) -> int:
        return self.table.shape[0]

    @property
    def num_datasets(self) -> int:
        return self.table.shape[1]

    @property
    def alphabet_size(self) -> int:
        return self.table.shape[2]

    def distribution(self, prefix: int, dataset: int) -> np.ndarray:
        return self.table[prefix, dataset]


@dataclass(frozen=True)
class AdaptivePlan:
    """A sequence of adaptive rounds, optionally run under an RDP filter.

    ``pairs`` lists the ordered dataset pairs (S, S') whose worst-case
    divergence defines each round's loss.
    """

    rounds: tuple
    pairs: tuple = ((0, 1), (1, 0))
    budget: Optional[float] = None
    order: Optional[float] = None

    def __post_init__(self):
        rounds = tuple(self.rounds)
        if not 1 <= len(rounds) <= MAX_ROUNDS:
            raise SizeLimitError(f"plans have 1..{MAX_ROUNDS} rounds, got {len(rounds)}")
        expected = 1
        for t, mech in enumerate(rounds, start=1):
            if mech.num_prefixes != expected:
                raise InvariantError(
                    f"round {t} defines {mech.num_prefixes} prefixes, expected {expected}"
                )
            if mech.num_datasets != rounds[0].num_datasets:
                raise InvariantError("every round must cover the same datasets")
            expected *= mech.alphabet_size
        if expected > MAX_PATHS:
            raise SizeLimitError(f"{expected} paths exceeds the limit of {MAX_PATHS}")
        for s, s2 in self.pairs:
            if not (0 <= s < rounds[0].num_datasets and 0 <= s2 < rounds[0].num_datasets):
                raise ParameterError(f"dataset pair {(s, s2)} out of range")
        if (self.budget is None) != (self.order is None):
            raise ParameterError("a filter needs both a budget and an order")
        object.__setattr__(self, "rounds", rounds)
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))

    @property
    def num_datasets(self) -> int:
        return self.rounds[0].num_datasets

    @property
    def alphabets(self) -> tuple[int, ...]:
        return tuple(m.alphabet_size for m in self.rounds)

    def with_filter(self, budget: float, order: float) -> "AdaptivePlan":
        return replace(self, budget=float(budget), order=check_order(order))

    def without_filter(self) -> "AdaptivePlan":
        return replace(self, budget=None, order=None)


def _row_divergences(P: np.ndarray, Q: np.ndarray, alpha: float) -> np.ndarray:
    """D_alpha(P[r] || Q[r]) for every row r, +inf where absolute continuity fails."""
    support = P > 0
    singular = np.any(support & (Q == 0), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = np.where(support, np.log(np.where(support, P, 1.0)), -np.inf)
        lq = np.log(np.where(support, Q, 1.0))
        if alpha == 1:
            out = np.sum(np.where(support, P * (lp - lq), 0.0), axis=1)
        else:
            terms = np.where(support, alpha * lp + (1 - alpha) * lq, -np.inf)
            out = logsumexp(terms, axis=1) / (alpha - 1)
    out = np.maximum(out, 0.0)
    out[singular] = math.inf
    return out


def step_losses(plan: AdaptivePlan, order: float) -> list[np.ndarray]:
    """Per-prefix loss of every round: the worst divergence over ``plan.pairs``."""
    alpha = check_order(order)
    out = []
    for mech in plan.rounds:
        worst = np.zeros(mech.num_prefixes)
        for s, s2 in plan.pairs:
            worst = np.maximum(worst, _row_divergences(mech.table[:, s], mech.table[:, s2], alpha))
        out.append(worst)
    return out


@dataclass(frozen=True, eq=False)
class _Terminals:
    """Terminal outputs of a run: level (output length), prefix index, mass per dataset."""

    level: np.ndarray
    index: np.ndarray
    probs: np.ndarray  # (terminals, datasets)
    rho_sum: np.ndarray


def _enumerate(plan: AdaptivePlan, losses: Optional[list] = None) -> _Terminals:
    D = plan.num_datasets
    filtered = plan.budget is not None
    if filtered and losses is None:
        losses = step_losses(plan, plan.order)
    alive = np.zeros(1, dtype=np.int64)
    mass = np.ones((1, D))
    states = [FilterState(plan.order, plan.budget)] if filtered else None
    levels, indices, probs, sums = [], [], [], []

    def emit(level, idx, m, st):
        levels.append(np.full(idx.size, level, dtype=np.int64))
        indices.append(idx)
        probs.append(m)
        sums.append(np.array([s.consumed for s in st]) if filtered else np.zeros(idx.size))

    for t, mech in enumerate(plan.rounds):
        if filtered:
            rho = losses[t][alive]
            keep = np.zeros(alive.size, dtype=bool)
            next_states = []
            for j, (state, r) in enumerate(zip(states, rho)):
                if not math.isfinite(r):
                    continue
                decision, new = rdp_filter_check(state, r)
                if decision is FilterDecision.CONT:
                    keep[j] = True
                    next_states.append(new)
            if not keep.all():
                halted = ~keep
                emit(t, alive[halted], mass[halted], [s for s, k in zip(states, keep) if not k])
            alive, mass = alive[keep], mass[keep]
            states = next_states
        A = mech.alphabet_size
        rows = mech.table[alive]  # (m, D, A)
        mass = (mass[:, :, None] * rows).transpose(0, 2, 1).reshape(-1, D)
        alive = (alive[:, None] * A + np.arange(A)[None, :]).reshape(-1)
        if filtered:
            states = [s for s in states for _ in range(A)]
    emit(len(plan.rounds), alive, mass, states or [])
    return _Terminals(
        np.concatenate(levels), np.concatenate(indices), np.concatenate(probs), np.concatenate(sums)
    )


def _decode(plan: AdaptivePlan, level: int, index: int) -> tuple[int, ...]:
    out = []
    for A in reversed(plan.alphabets[:level]):
        index, a = divmod(int(index), A)
        out.append(a)
    return tuple(reversed(out))


@dataclass(frozen=True, eq=False)
class PathTable:
    """Exact output distribution: each path (tuple of outputs) with its probability."""

    paths: tuple
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if abs(probs.sum() - 1) > SUM_TOLERANCE:
            raise InvariantError(f"path probabilities sum to {probs.sum()!r}")
        object.__setattr__(self, "probs", probs)

    def as_dict(self) -> dict:
        return dict(zip(self.paths, self.probs.tolist()))

    def marginalize(self) -> "PathTable":
        """Drop the last output of every path and merge equal prefixes."""
        merged: dict = {}
        for path, p in zip(self.paths, self.probs):
            key = path[:-1]
            merged[key] = merged.get(key, 0.0) + p
        keys = tuple(sorted(merged))
        return PathTable(keys, np.array([merged[k] for k in keys]))


def _check_dataset(plan: AdaptivePlan, dataset: int) -> None:
    if not 0 <= dataset < plan.num_datasets:
        raise ParameterError(f"dataset {dataset} not in plan")


def exact_joint_distribution(plan: AdaptivePlan, dataset_id: int) -> PathTable:
    _check_dataset(plan, dataset_id)
    term = _enumerate(plan)
    paths = tuple(_decode(plan, lv, ix) for lv, ix in zip(term.level, term.index))
    return PathTable(paths, term.probs[:, dataset_id])


def exact_composed_divergence(plan: AdaptivePlan, s: int, s_prime: int, order: float) -> float:
    """D_order between the (possibly filter-truncated) outputs on datasets s and s_prime."""
    _check_dataset(plan, s)
    _check_dataset(plan, s_prime)
    term = _enumerate(plan)
    return _log_moment_divergence(term.probs[:, s], term.probs[:, s_prime], check_order(order))


@dataclass
class FilterReport:
    budget: float
    orders: tuple
    checks: int = 0
    max_divergence: float = 0.0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def min_slack(self) -> float:
        return self.budget - self.max_divergence

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "orders": list(self.orders),
            "checks": self.checks,
            "max_divergence": self.max_divergence,
            "min_slack": self.min_slack,
            "violations": self.violations,
        }


def _witness(plan, term: _Terminals, s: int, s2: int, alpha: float, top: int = 5) -> list:
    p, q = term.probs[:, s], term.probs[:, s2]
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(p > 0, alpha * np.log(p) + (1 - alpha) * np.log(q), -np.inf)
    rows = []
    for j in np.argsort(-contrib)[:top]:
        rows.append(
            {
                "path": list(_decode(plan, term.level[j], term.index[j])),
                "p": float(p[j]),
                "p_prime": float(q[j]),
                "rho_sum": float(term.rho_sum[j]),
            }
        )
    return rows


def validate_filter_budget(
    plan: AdaptivePlan, budget: float, orders: Sequence[float], pairs=None
) -> FilterReport:
    """Run the plan under an RDP filter at each order; check every pair's divergence <= budget."""
    orders = tuple(check_order(a) for a in orders)
    pairs = plan.pairs if pairs is None else tuple(pairs)
    report = FilterReport(float(budget), orders)
    for alpha in orders:
        wired = plan.with_filter(budget, alpha)
        term = _enumerate(wired, step_losses(wired, alpha))
        for s, s2 in pairs:
            div = _log_moment_divergence(term.probs[:, s], term.probs[:, s2], alpha)
            report.checks += 1
            report.max_divergence = max(report.max_divergence, div)
            if not div <= budget + VALIDATION_SLACK:
                report.violations.append(
                    {
                        "order": alpha,
                        "pair": [s, s2],
                        "divergence": div,
                        "witness": _witness(wired, term, s, s2, alpha),
                    }
                )
    return report


# --- randomized adversarial plans -------------------------------------------


def random_plan(
    rng: np.random.Generator, max_alphabet: int = 8, max_rounds: int = 4
) -> AdaptivePlan:
    """Two-dataset plan whose later rounds leak more after rare first outputs.

    Output 0 of round 1 is made rare; prefixes starting with it get nearly
    disjoint distributions for the two datasets, others get mild or no
    differences, and a few prefixes break absolute continuity outright.
    """
    n_rounds = int(rng.integers(1, max_rounds + 1))
    alphabets = [int(rng.integers(2, max_alphabet + 1)) for _ in range(n_rounds)]
    rounds, num_prefixes = [], 1
    for t, A in enumerate(alphabets):
        table = np.empty((num_prefixes, 2, A))
        for p in range(num_prefixes):
            base = rng.dirichlet(np.full(A, rng.uniform(0.3, 3.0)))
            first = p // (num_prefixes // alphabets[0]) if t > 0 else None
            if t == 0:
                base = np.concatenate([[rng.uniform(1e-3, 0.05)], base[1:] / base[1:].sum()])
                base[1:] *= 1 - base[0]
                weight = rng.uniform(0.0, 0.4)
            elif first == 0:
                weight = rng.uniform(0.6, 1.0)
            else:
                weight = rng.choice([0.0, rng.uniform(0.0, 0.25), rng.uniform(0.0, 0.6)])
            other = rng.dirichlet(np.full(A, 0.5))
            alt = (1 - weight) * base + weight * other
            if rng.random() < 0.05:
                alt[rng.integers(A)] = 0.0
            table[p, 0] = base / base.sum()
            table[p, 1] = alt / alt.sum()
        rounds.append(DiscreteMechanism(table))
        num_prefixes *= A
    return AdaptivePlan(tuple(rounds))


def _fuzz_one(args):
    seed_seq, budgets, orders, max_alphabet, max_rounds = args
    rng = np.random.default_rng(seed_seq)
    plan = random_plan(rng, max_alphabet, max_rounds)
    return [validate_filter_budget(plan, b, orders) for b in budgets]


@dataclass
class SuiteReport:
    name: str
    cases: int = 0
    checks: int = 0
    max_divergence: float = 0.0
    max_ratio: float = 0.0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "cases": self.cases,
            "checks": self.checks,
            "max_divergence": self.max_divergence,
            "max_divergence_over_budget": self.max_ratio,
            "violations": self.violations,
        }


def fuzz_filter_suite(
    n_plans: int = 200,
    seed: int = 0,
    budgets: Sequence[float] = (0.1, 0.5, 1.0),
    orders: Sequence[float] = (1.5, 2.0, 4.0, 8.0),
    max_alphabet: int = 8,
    max_rounds: int = 4,
    workers: int = 0,
) -> SuiteReport:
    """Validate the RDP filter on seeded random plans.

    Each plan gets its own child seed, so results do not depend on ``workers``.
    """
    seeds = np.random.SeedSequence(seed).spawn(n_plans)
    jobs = [(s, tuple(budgets), tuple(orders), max_alphabet, max_rounds) for s in seeds]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_fuzz_one, jobs))
    else:
        results = [_fuzz_one(j) for j in jobs]
    suite = SuiteReport("rdp_filter")
    for plan_id, reports in enumerate(results):
        suite.cases += 1
        for rep in reports:
            suite.checks += rep.checks
            suite.max_divergence = max(suite.max_divergence, rep.max_divergence)
            suite.max_ratio = max(suite.max_ratio, rep.max_divergence / rep.budget)
            for v in rep.violations:
                suite.violations.append(dict(v, plan=plan_id, budget=rep.budget))
    return suite


# --- individual filter on tiny datasets ---------------------------------------


def _multisets(domain_size: int, max_points: int) -> list[tuple[int, ...]]:
    out = []
    for size in range(max_points + 1):
        out.extend(itertools.combinations_with_replacement(range(domain_size), size))
    return out


@dataclass(frozen=True, eq=False)
class IndividualPlan:
    """Adaptive rounds whose output law depends on the multiset of participating values.

    ``rounds[t]`` has shape (prefixes, multisets, alphabet), multisets being
    every sorted tuple of at most ``max_points`` values from ``range(domain_size)``.
    """

    domain_size: int
    max_points: int
    rounds: tuple

    def __post_init__(self):
        if not 1 <= len(self.rounds) <= MAX_ROUNDS:
            raise SizeLimitError(f"plans have 1..{MAX_ROUNDS} rounds")
        tables, expected = [], 1
        n_sets = len(self.multisets)
        for t, table in enumerate(self.rounds, start=1):
            table = _check_table(table, f"round {t}")
            if table.shape[:2] != (expected, n_sets):
                raise InvariantError(
                    f"round {t} table has shape {table.shape}, expected ({expected}, {n_sets}, A)"
                )
            tables.append(table)
            expected *= table.shape[2]
        if expected > MAX_PATHS:
            raise SizeLimitError(f"{expected} paths exceeds the limit of {MAX_PATHS}")
        object.__setattr__(self, "rounds", tuple(tables))

    @property
    def multisets(self) -> list[tuple[int, ...]]:
        return _multisets(self.domain_size, self.max_points)

    def point_losses(self, order: float) -> list[np.ndarray]:
        """Loss of a point by value, per prefix: shape (prefixes, domain_size).

        Worst two-sided divergence over every multiset containing the value
        versus the same multiset with one copy removed.
        """
        alpha = check_order(order)
        sets = self.multisets
        where = {m: i for i, m in enumerate(sets)}
        out = []
        for table in self.rounds:
            losses = np.zeros((table.shape[0], self.domain_size))
            for m in sets:
                for v in set(m):
                    rest = list(m)
                    rest.remove(v)
                    a, b = table[:, where[m]], table[:, where[tuple(rest)]]
                    both = np.maximum(_row_divergences(a, b, alpha), _row_divergences(b, a, alpha))
                    losses[:, v] = np.maximum(losses[:, v], both)
            out.append(losses)
        return out


def run_individual_filter(
    plan: IndividualPlan, values: Sequence[int], order: float, budget: float, losses=None
) -> np.ndarray:
    """Exact output law of individual filtering on the dataset ``values``.

    Returns path probabilities indexed like full-length prefixes.
    """
    values = tuple(int(v) for v in values)
    if len(values) > plan.max_points or any(not 0 <= v < plan.domain_size for v in values):
        raise ParameterError(f"dataset {values} is outside the plan's universe")
    losses = plan.point_losses(order) if losses is None else losses
    where = {m: i for i, m in enumerate(plan.multisets)}
    probs = np.ones(1)
    ledgers = [IndividualLedger.fresh(len(values), order, budget)]
    for t, table in enumerate(plan.rounds):
        A = table.shape[2]
        child_probs = np.empty(probs.size * A)
        child_ledgers = []
        for p, (mass, ledger) in enumerate(zip(probs, ledgers)):
            proposal = losses[t][p, list(values)] if values else np.zeros(0)
            active, committed = begin_round(ledger, proposal)
            participating = tuple(sorted(values[i] for i in active))
            child_probs[p * A : (p + 1) * A] = mass * table[p, where[participating]]
            child_ledgers.extend([commit_round(ledger, committed)] * A)
        probs, ledgers = child_probs, child_ledgers
    return probs


def validate_individual_filter(
    plan: IndividualPlan, values: Sequence[int], order: float, budget: float
) -> FilterReport:
    """Check D_alpha in both directions between the run on ``values`` and on each removal."""
    alpha = check_order(order)
    losses = plan.point_losses(alpha)
    full = run_individual_filter(plan, values, alpha, budget, losses)
    report = FilterReport(float(budget), (alpha,))
    for i in range(len(values)):
        reduced = tuple(values[:i]) + tuple(values[i + 1 :])
        removed = run_individual_filter(plan, reduced, alpha, budget, losses)
        for direction, (p, q) in (("S||S-i", (full, removed)), ("S-i||S", (removed, full))):
            div = _log_moment_divergence(p, q, alpha)
            report.checks += 1
            report.max_divergence = max(report.max_divergence, div)
            if not div <= budget + VALIDATION_SLACK:
                report.violations.append(
                    {
                        "values": list(values),
                        "removed": i,
                        "direction": direction,
                        "order": alpha,
                        "divergence": div,
                    }
                )
    return report


def random_individual_plan(
    rng: np.random.Generator,
    rounds: int = 3,
    alphabet: int = 4,
    domain_size: int = 2,
    max_points: int = 2,
) -> IndividualPlan:
    """Randomized-response-style rounds: output law shifts with the count of ones present.

    The shift strength varies per prefix, so point losses are adaptive.
    """
    sets = _multisets(domain_size, max_points)
    tables, num_prefixes = [], 1
    for _ in range(rounds):
        table = np.empty((num_prefixes, len(sets), alphabet))
        for p in range(num_prefixes):
            strength = rng.choice([0.0, rng.uniform(0, 0.5), rng.uniform(0.5, 2.5)])
            base = rng.normal(size=alphabet)
            direction = rng.normal(size=alphabet)
            for j, m in enumerate(sets):
                signal = sum(m) + 0.3 * rng.normal() * (strength > 0) * len(m)
                logits = base + strength * signal * direction
                w = np.exp(logits - logits.max())
                table[p, j] = w / w.sum()
        tables.append(table)
        num_prefixes *= alphabet
    return IndividualPlan(domain_size, max_points, tuple(tables))


def individual_filter_suite(
    n_plans: int = 40,
    seed: int = 1,
    budgets: Sequence[float] = (0.1, 0.5, 1.0),
    orders: Sequence[float] = (1.5, 2.0, 4.0, 8.0),
) -> SuiteReport:
    suite = SuiteReport("individual_filter")
    for plan_id, child in enumerate(np.random.SeedSequence(seed).spawn(n_plans)):
        plan = random_individual_plan(np.random.default_rng(child))
        suite.cases += 1
        for values in itertools.product(range(plan.domain_size), repeat=plan.max_points):
            for alpha in orders:
                for budget in budgets:
                    rep = validate_individual_filter(plan, values, alpha, budget)
                    suite.checks += rep.checks
                    suite.max_divergence = max(suite.max_divergence, rep.max_divergence)
                    suite.max_ratio = max(suite.max_ratio, rep.max_divergence / budget)
                    for v in rep.violations:
                        suite.violations.append(dict(v, plan=plan_id, budget=budget))
    return suite


# --- odometer counterexample -----------------------------------------------------


def _randomized_response(p: float) -> tuple[np.ndarray, np.ndarray]:
    return np.array([1 - p, p]), np.array([p, 1 - p])


def _log_moment(p: np.ndarray, q: np.ndarray, alpha: float) -> float:
    """log E_{q}[(p/q)^alpha] by direct enumeration."""
    mask = q > 0
    return float(logsumexp(alpha * np.log(p[mask]) + (1 - alpha) * np.log(q[mask])))


def _calibrate_second_round(target: float, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Binary randomized response whose order-alpha divergence (input 0 vs 1) is ``target``."""
    if target == 0:
        return _randomized_response(0.5)

    def gap(p):
        a, b = _randomized_response(p)
        return _log_moment(a, b, alpha) / (alpha - 1) - target

    p = optimize.brentq(gap, 0.5, 1 - 1e-15, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    return _randomized_response(p)


@dataclass
class OdometerWitness:
    order: float
    outputs: tuple
    rho_1: float
    rho_2: list
    conditional_loss: list
    odometer_moment: list
    margins: list
    violation: bool
    witness_output: Optional[float]
    margin: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def odometer_counterexample(
    order: float,
    first_round_zero: Sequence[float] = (0.75, 0.25),
    first_round_one: Sequence[float] = (0.25, 0.75),
    outputs: Sequence[float] = (0.2, 0.6),
    tol: float = 1e-12,
) -> OdometerWitness:
    """Show that summing per-round losses is not a valid odometer.

    Round 1 maps the input bit to one of ``outputs`` (nonnegative reals)
    with the given laws. Round 2 is calibrated so its loss equals the
    realized first output. For each value s of rho_1 + rho_2, the exact
    conditional moment E[Loss^(2) | s] under input 1 is compared with
    exp((alpha - 1) s); ``margins`` are the excess in nats,
    log(lhs / rhs) / (alpha - 1). A violation is a margin above ``tol``.
    """
    alpha = check_order(order)
    if alpha == 1:
        raise ParameterError("the construction needs order > 1")
    p0 = np.asarray(first_round_zero, dtype=float)
    p1 = np.asarray(first_round_one, dtype=float)
    outs = tuple(float(o) for o in outputs)
    if p0.shape != p1.shape or p0.size != len(outs):
        raise ParameterError("first-round laws must match the output alphabet")
    if any(o < 0 for o in outs) or any(p <= 0 for p in p1):
        raise ParameterError("outputs must be >= 0 and input 1 must give them positive mass")
    for dist in (p0, p1):
        if abs(dist.sum() - 1) > SUM_TOLERANCE or np.any(dist < 0):
            raise InvariantError("first-round laws must be distributions")

    log_loss_1 = alpha * (np.log(p0) - np.log(p1))  # log Loss_1(a_1; 0, 1)
    rho_1 = float(logsumexp(log_loss_1, b=p1)) / (alpha - 1)

    # Conditional moment of round 2 given a_1, by enumeration over a_2.
    rho_2, log_cond_2 = [], []
    for a1 in outs:
        law0, law1 = _calibrate_second_round(a1, alpha)
        lm = _log_moment(law0, law1, alpha)
        log_cond_2.append(lm)
        rho_2.append(lm / (alpha - 1))

    # Group first-round outputs by the realized odometer value rho_1 + rho_2.
    groups: dict = {}
    for j, r2 in enumerate(rho_2):
        groups.setdefault(rho_1 + r2, []).append(j)
    margins = [0.0] * len(outs)
    lhs_list, rhs_list = [0.0] * len(outs), [0.0] * len(outs)
    for total, members in groups.items():
        weights = p1[members]
        log_lhs = float(
            logsumexp(log_loss_1[members] + np.array(log_cond_2)[members], b=weights)
            - math.log(weights.sum())
        )
        log_rhs = (alpha - 1) * total
        for j in members:
            margins[j] = (log_lhs - log_rhs) / (alpha - 1)
            lhs_list[j], rhs_list[j] = math.exp(log_lhs), math.exp(log_rhs)
    best = int(np.argmax(margins))
    violation = margins[best] > tol
    return OdometerWitness(
        order=alpha,
        outputs=outs,
        rho_1=rho_1,
        rho_2=rho_2,
        conditional_loss=lhs_list,
        odometer_moment=rhs_list,
        margins=margins,
        violation=violation,
        witness_output=outs[best] if violation else None,
        margin=margins[best],
    )


def counterexample_grid() -> list[dict]:
    """Twenty instances: four orders times five first-round law pairs (one degenerate)."""
    laws = [
        ((0.75, 0.25), (0.25, 0.75)),
        ((0.5, 0.5), (0.25, 0.75)),
        ((0.875, 0.125), (0.5, 0.5)),
        ((0.625, 0.375), (0.375, 0.625)),
        ((0.5, 0.5), (0.5, 0.5)),
    ]
    out = []
    for alpha in (1.5, 2.0, 4.0, 8.0):
        for zero, one in laws:
            out.append(
                {
                    "order": alpha,
                    "first_round_zero": zero,
                    "first_round_one": one,
                    "degenerate": zero == one,
                }
            )
    return out


# --- Gaussian quadrature -----------------------------------------------------------


def numeric_gaussian_divergence(mean_a: float, mean_b: float, sigma: float, order: float) -> float:
    """D_alpha(N(mean_a, sigma^2) || N(mean_b, sigma^2)) by adaptive quadrature.

    The integrand p^alpha q^(1-alpha) is integrated over +/- 12 sigma around
    its peak, after dividing out its peak value.
    """
    alpha = check_order(order)
    if not sigma > 0:
        raise ParameterError("sigma must be > 0")
    if mean_a == mean_b:
        return 0.0

    def log_pdf(x, m):
        return -0.5 * ((x - m) / sigma) ** 2 - math.log(sigma * math.sqrt(2 * math.pi))

    if alpha == 1:
        lo, hi = mean_a - 12 * sigma, mean_a + 12 * sigma
        val, err = integrate.quad(
            lambda x: math.exp(log_pdf(x, mean_a)) * (log_pdf(x, mean_a) - log_pdf(x, mean_b)),
            lo,
            hi,
            epsabs=1e-11,
            epsrel=1e-12,
            limit=200,
        )
        if err > 1e-9:
            raise QuadratureError("KL quadrature did not converge", err)
        return max(val, 0.0)

    center = alpha * mean_a + (1 - alpha) * mean_b

    def log_integrand(x):
        return alpha * log_pdf(x, mean_a) + (1 - alpha) * log_pdf(x, mean_b)

    peak = log_integrand(center)
    val, err = integrate.quad(
        lambda x: math.exp(log_integrand(x) - peak),
        center - 12 * sigma,
        center + 12 * sigma,
        epsabs=1e-13,
        epsrel=1e-12,
        limit=200,
    )
    if err > 1e-9 * max(val, 1.0):
        raise QuadratureError("Renyi quadrature did not converge", err)
    return max((peak + math.log(val)) / (alpha - 1), 0.0)


# --- declarative plans ----------------------------------------------------------------


def plan_from_dict(doc: dict) -> AdaptivePlan:
    """Build a plan from ``{"rounds": [table, ...], "pairs": [[s, s'], ...], "filter": {...}}``.

    Each table is nested lists indexed [prefix][dataset][output].
    """
    try:
        rounds = tuple(DiscreteMechanism(np.array(t, dtype=float)) for t in doc["rounds"])
        pairs = tuple(tuple(p) for p in doc.get("pairs", ((0, 1), (1, 0))))
        filt = doc.get("filter")
    except (KeyError, TypeError, ValueError) as exc:
        raise ParameterError(f"malformed plan document: {exc}") from exc
    plan = AdaptivePlan(rounds, pairs)
    if filt is not None:
        plan = plan.with_filter(filt["budget"], filt["order"])
    return plan


def plan_to_dict(plan: AdaptivePlan) -> dict:
    doc = {
        "rounds": [m.table.tolist() for m in plan.rounds],
        "pairs": [list(p) for p in plan.pairs],
    }
    if plan.budget is not None:
        doc["filter"] = {"budget": plan.budget, "order": plan.order}
    return doc
