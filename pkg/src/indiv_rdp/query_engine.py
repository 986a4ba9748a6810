"""Adaptive answering of bounded linear queries with Gaussian noise.

Each query arrives already evaluated on every point (``q_values[i]`` is the
query applied to point i, in [0, 1]). A point's loss for the round is
``alpha * q_i**2 / (2 sigma**2)``; it keeps contributing to the answers while
its running total stays within the budget, which is the same as
``sum_j q_j(x_i)**2 <= 2 B sigma**2 / alpha``.

Noise comes from a numpy ``Generator`` (PCG64, ziggurat normal sampler), so a
session is reproducible from its seed and its bit-generator state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import check_delta, check_order
from .errors import ParameterError, PreconditionError, QueryValidationError
from .ledger import IndividualLedger, begin_round, commit_round


@dataclass
class QueryDataset:
    """Points held by the engine. Queries are evaluated by the caller."""

    values: np.ndarray
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.ids is None:
            self.ids = np.arange(len(self.values))

    def __len__(self):
        return len(self.values)

    def evaluate(self, query: Callable[[np.ndarray], float]) -> np.ndarray:
        return np.array([query(row) for row in self.values], dtype=float)


@dataclass
class QuerySession:
    """Single-writer session; answers must be requested in order."""

    ledger: IndividualLedger
    sigma: float
    seed: Optional[int] = None
    rng: np.random.Generator = field(default=None, repr=False)
    noise: Optional[Callable[[], float]] = field(default=None, repr=False)
    answers: list = field(default_factory=list)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @classmethod
    def start(cls, n: int, sigma: float, order: float, budget_b: float, seed=None, noise=None):
        ledger = IndividualLedger.fresh(n, check_order(order), budget_b)
        return cls(ledger, sigma, seed=seed, noise=noise)

    @property
    def order(self) -> float:
        return self.ledger.order

    @property
    def budget_b(self) -> float:
        return self.ledger.budget_b

    @property
    def norm_budget(self) -> float:
        """Squared-norm allowance per point, 2 B sigma^2 / alpha."""
        return 2 * self.budget_b * self.sigma**2 / self.order

    def losses_for(self, q_values) -> np.ndarray:
        q = _validated(q_values, self.ledger.n)
        return self.order * q * q / (2 * self.sigma**2)

    def _draw(self) -> float:
        if self.noise is not None:
            return float(self.noise())
        return float(self.rng.standard_normal()) * self.sigma


def _validated(q_values, n: int) -> np.ndarray:
    q = np.asarray(q_values, dtype=float).reshape(-1)
    if q.size != n:
        raise QueryValidationError(f"query evaluated on {q.size} points, dataset has {n}")
    bad = np.flatnonzero(~((q >= 0) & (q <= 1)))
    if bad.size:
        raise QueryValidationError(
            f"query value {q[bad[0]]!r} at point {int(bad[0])} is outside [0, 1]"
        )
    return q


def answer_query(session: QuerySession, q_values) -> tuple[float, int]:
    """Release the noisy sum over the active set; returns (answer, active_count).

    An empty active set still yields an answer (pure noise).
    """
    q = _validated(q_values, session.ledger.n)
    active_set, committed = begin_round(session.ledger, session.losses_for(q))
    answer = float(np.sum(q[active_set])) + session._draw()
    session.ledger = commit_round(session.ledger, committed)
    session.answers.append((session.ledger.round, answer, int(active_set.size)))
    return answer, int(active_set.size)


def accuracy_probe(
    session: QuerySession, q_values, n_trials: int, delta: float, seed=None
) -> float:
    """Fraction of re-simulated answers within sqrt(2 log(1/delta)) sigma of the true sum.

    Only meaningful while every point stays within budget after this query.
    Draws from its own generator so the session stream is not advanced.
    """
    delta = check_delta(delta)
    q = _validated(q_values, session.ledger.n)
    ledger = session.ledger
    if not np.all(ledger.active) or np.any(
        ledger.cumulative + session.losses_for(q) > ledger.budget_b
    ):
        raise PreconditionError("accuracy bound requires every point to remain active")
    if n_trials < 1:
        raise ParameterError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    true_sum = float(np.sum(q))
    answers = true_sum + rng.standard_normal(n_trials) * session.sigma
    threshold = math.sqrt(2 * math.log(1 / delta)) * session.sigma
    return float(np.mean(np.abs(answers - true_sum) <= threshold))


def closed_form_active(
    history: np.ndarray, sigma: float, order: float, budget_b: float
) -> np.ndarray:
    """Points whose squared query sum over ``history`` (rounds x points) is <= 2 B sigma^2/alpha."""
    history = np.atleast_2d(np.asarray(history, dtype=float))
    return np.sum(history**2, axis=0) <= 2 * budget_b * sigma**2 / order
