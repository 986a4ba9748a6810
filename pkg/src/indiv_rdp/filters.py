"""Stopping rules for fully adaptive composition.

Both filters keep the running loss as an exact rational sum of the accepted
floats, so the closed ``<=`` comparison against the budget has no rounding
slack in either direction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from fractions import Fraction

from .core import check_delta, check_order, zcdp_budget_for_dp
from .errors import ParameterError


class FilterDecision(enum.Enum):
    CONT = "CONT"
    HALT = "HALT"


def _exact(value: float, name: str) -> Fraction:
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise ParameterError(f"{name} must be finite and >= 0, got {value}")
    return Fraction(value)


@dataclass(frozen=True)
class FilterState:
    """Renyi filter at a fixed order: continue while the summed losses stay within budget."""

    order: float
    budget_b: float
    consumed_exact: Fraction = Fraction(0)
    history_len: int = 0

    def __post_init__(self):
        object.__setattr__(self, "order", check_order(self.order))
        _exact(self.budget_b, "budget")
        if self.consumed_exact < 0:
            raise ParameterError("consumed loss cannot be negative")

    @property
    def consumed(self) -> float:
        return float(self.consumed_exact)

    @property
    def remaining(self) -> float:
        return float(Fraction(self.budget_b) - self.consumed_exact)


def rdp_filter_check(state: FilterState, next_rho: float) -> tuple[FilterDecision, FilterState]:
    """Ask whether ``next_rho`` fits. On HALT the state is returned untouched."""
    proposed = state.consumed_exact + _exact(next_rho, "rho")
    if proposed <= Fraction(state.budget_b):
        return FilterDecision.CONT, replace(
            state, consumed_exact=proposed, history_len=state.history_len + 1
        )
    return FilterDecision.HALT, state


@dataclass(frozen=True)
class DpFilterState:
    """Filter for pure-DP constituents, via the zCDP level of the global budget."""

    eps_budget: float
    delta_budget: float
    consumed_half_sq_exact: Fraction = Fraction(0)
    history_len: int = 0

    def __post_init__(self):
        check_delta(self.delta_budget)
        _exact(self.eps_budget, "eps budget")

    @property
    def zcdp_budget(self) -> float:
        return zcdp_budget_for_dp(self.eps_budget, self.delta_budget)

    @property
    def consumed_half_sq(self) -> float:
        return float(self.consumed_half_sq_exact)


def dp_filter_check(state: DpFilterState, next_eps: float) -> tuple[FilterDecision, DpFilterState]:
    eps = _exact(next_eps, "eps")
    proposed = state.consumed_half_sq_exact + eps * eps / 2
    if proposed <= Fraction(state.zcdp_budget):
        return FilterDecision.CONT, replace(
            state, consumed_half_sq_exact=proposed, history_len=state.history_len + 1
        )
    return FilterDecision.HALT, state


def fixed_rate_equivalence(k: int, eps: float, delta: float) -> float:
    """Total epsilon of k eps-DP steps under the DP filter.

    Equals k eps^2 / 2 + eps sqrt(2 k log(1/delta)).
    """
    if int(k) != k or k < 1:
        raise ParameterError(f"k must be a positive integer, got {k}")
    if not eps >= 0:
        raise ParameterError(f"eps must be >= 0, got {eps}")
    delta = check_delta(delta)
    return 0.5 * k * eps * eps + eps * math.sqrt(2 * k * math.log(1 / delta))
