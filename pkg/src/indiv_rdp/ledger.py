"""Per-point privacy accounting: the individual filter and discretized odometers.

The individual filter works in two phases. ``begin_round`` decides the active
set for a proposed vector of per-point losses without touching the ledger;
the caller runs its mechanism on that set, then ``commit_round`` folds in the
committed (zeroed for excluded points) losses.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import check_order
from .errors import DimensionMismatchError, ParameterError, PreconditionError, StateError
from .filters import FilterDecision, FilterState, rdp_filter_check


class AccountingMode(enum.Enum):
    """Which individual loss notion the per-point losses were measured under.

    ``INDIVIDUAL`` takes the supremum over all datasets containing the point
    and is safe to filter on. ``PER_INSTANCE`` is measured against the one
    analysed dataset; it still yields valid odometer readings but dropping a
    point does not stop its leakage, so ledgers refuse it.
    """

    INDIVIDUAL = "individual"
    PER_INSTANCE = "per_instance"

    @property
    def filterable(self) -> bool:
        return self is AccountingMode.INDIVIDUAL


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RoundProposal:
    losses: np.ndarray

    def __post_init__(self):
        losses = np.array(self.losses, dtype=float).reshape(-1)
        if not np.all(np.isfinite(losses)):
            raise ParameterError("proposed losses must be finite")
        bad = np.flatnonzero(losses < 0)
        if bad.size:
            raise ParameterError(f"negative proposed loss at point {int(bad[0])}")
        object.__setattr__(self, "losses", _frozen(losses))

    def __len__(self):
        return self.losses.size


@dataclass(frozen=True, eq=False)
class CommittedRound:
    """Output of ``begin_round``; only valid for the ledger state that produced it."""

    losses: np.ndarray
    active: np.ndarray
    round: int
    _token: bytes = field(repr=False)

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.active)


@dataclass(frozen=True, eq=False)
class IndividualLedger:
    order: float
    budget_b: float
    cumulative: np.ndarray
    active: np.ndarray
    round: int = 0
    mode: AccountingMode = AccountingMode.INDIVIDUAL

    def __post_init__(self):
        object.__setattr__(self, "order", check_order(self.order))
        if not (math.isfinite(self.budget_b) and self.budget_b >= 0):
            raise ParameterError(f"budget must be finite and >= 0, got {self.budget_b}")
        if not AccountingMode(self.mode).filterable:
            raise ParameterError(
                "per-instance losses cannot drive an individual filter; use odometers"
            )
        cum = np.array(self.cumulative, dtype=float).reshape(-1)
        act = np.array(self.active, dtype=bool).reshape(-1)
        if cum.shape != act.shape:
            raise DimensionMismatchError("cumulative and active vectors differ in length")
        if np.any(cum < 0) or np.any(cum > self.budget_b):
            raise PreconditionError("cumulative losses must lie in [0, budget]")
        object.__setattr__(self, "cumulative", _frozen(cum))
        object.__setattr__(self, "active", _frozen(act))

    @classmethod
    def fresh(cls, n: int, order: float, budget_b: float) -> "IndividualLedger":
        return cls(order, budget_b, np.zeros(n), np.ones(n, dtype=bool))

    @property
    def n(self) -> int:
        return self.cumulative.size

    def _token(self) -> bytes:
        return self.round.to_bytes(8, "little") + self.cumulative.tobytes() + self.active.tobytes()

    def loss_of(self, i: int) -> float:
        """Accumulated loss of one point; access control is the caller's concern."""
        return float(self.cumulative[i])


def begin_round(
    ledger: IndividualLedger, proposal: RoundProposal | Sequence[float]
) -> tuple[np.ndarray, CommittedRound]:
    if not isinstance(proposal, RoundProposal):
        proposal = RoundProposal(proposal)
    if len(proposal) != ledger.n:
        raise DimensionMismatchError(
            f"proposal has {len(proposal)} losses for a ledger of {ledger.n} points"
        )
    # Same float expression as in commit_round, so admitted points land <= budget exactly.
    fits = (ledger.cumulative + proposal.losses) <= ledger.budget_b
    active = ledger.active & fits
    committed = np.where(active, proposal.losses, 0.0)
    result = CommittedRound(_frozen(committed), _frozen(active), ledger.round, ledger._token())
    return result.active_set, result


def commit_round(ledger: IndividualLedger, committed: CommittedRound) -> IndividualLedger:
    if not isinstance(committed, CommittedRound) or committed._token != ledger._token():
        raise StateError("commit does not match a begin_round on this ledger state")
    new = replace(
        ledger,
        cumulative=ledger.cumulative + committed.losses,
        active=committed.active.copy(),
        round=ledger.round + 1,
    )
    assert np.all(new.cumulative <= new.budget_b)
    return new


@dataclass(frozen=True)
class OdometerState:
    """Running upper bound built from restarted filters of budget ``delta``.

    ``bound`` is always ``segments * delta``; ``segment`` is the filter
    currently open since ``restart_round``.
    """

    order: float
    delta: float
    segments: int = 1
    segment: FilterState | None = None
    restart_round: int = 1
    round: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ParameterError(f"discretization must be finite and > 0, got {self.delta}")
        if self.segments < 1:
            raise ParameterError("an odometer has at least one segment")
        if self.segment is None:
            object.__setattr__(self, "segment", FilterState(self.order, self.delta))

    @property
    def bound(self) -> float:
        return self.segments * self.delta

    @property
    def segment_consumed(self) -> float:
        return self.segment.consumed


def odometer_update(state: OdometerState, rho: float) -> OdometerState:
    rho = float(rho)
    if not math.isfinite(rho) or rho < 0:
        raise ParameterError(f"rho must be finite and >= 0, got {rho}")
    if Fraction(rho) > Fraction(state.delta):
        raise PreconditionError(f"rho={rho} exceeds the discretization {state.delta}")
    t = state.round + 1
    decision, segment = rdp_filter_check(state.segment, rho)
    if decision is FilterDecision.CONT:
        return replace(state, segment=segment, round=t)
    # The halted filter never committed rho; it opens the next segment.
    _, segment = rdp_filter_check(FilterState(state.order, state.delta), rho)
    return replace(state, segments=state.segments + 1, segment=segment, restart_round=t, round=t)


@dataclass(frozen=True)
class IndividualOdometers:
    states: tuple[OdometerState, ...]
    mode: AccountingMode = AccountingMode.INDIVIDUAL

    @classmethod
    def fresh(
        cls, n: int, order: float, delta: float, mode: AccountingMode = AccountingMode.INDIVIDUAL
    ) -> "IndividualOdometers":
        return cls(tuple(OdometerState(order, delta) for _ in range(n)), AccountingMode(mode))

    def __len__(self):
        return len(self.states)

    @property
    def bounds(self) -> np.ndarray:
        return np.array([s.bound for s in self.states], dtype=float)

    def bound_of(self, i: int) -> float:
        return self.states[i].bound


def individual_odometer_update(
    odometers: IndividualOdometers, proposal: RoundProposal | Sequence[float]
) -> IndividualOdometers:
    losses = proposal.losses if isinstance(proposal, RoundProposal) else list(proposal)
    if len(losses) != len(odometers):
        raise DimensionMismatchError(
            f"proposal has {len(losses)} losses for {len(odometers)} odometers"
        )
    updated = []
    for i, (state, rho) in enumerate(zip(odometers.states, losses)):
        try:
            updated.append(odometer_update(state, rho))
        except (ParameterError, PreconditionError) as exc:
            raise type(exc)(f"point {i}: {exc}") from exc
    return replace(odometers, states=tuple(updated))
