"""Renyi divergence primitives and RDP/DP parameter conversions.

All losses are in nats. Orders are plain floats validated on entry; order 1
means the Kullback-Leibler limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DimensionMismatchError,
    InvariantError,
    ParameterError,
    UnsupportedOrderError,
)

# Returned when absolute continuity fails. Log-space accumulation never
# overflows, so an infinite result always carries this meaning.
DIVERGENCE_INFINITE = math.inf

SUM_TOLERANCE = 1e-12

DEFAULT_ORDERS: tuple[float, ...] = tuple(
    sorted({1 + k / 4 for k in range(1, 17)} | {float(a) for a in range(2, 65)} | {128.0, 256.0})
)


def check_order(alpha: float) -> float:
    alpha = float(alpha)
    if not math.isfinite(alpha) or alpha < 1:
        raise ParameterError(f"Renyi order must be finite and >= 1, got {alpha}")
    return alpha


def check_delta(delta: float) -> float:
    delta = float(delta)
    if not 0 < delta < 1:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    return delta


@dataclass(frozen=True)
class RdpPoint:
    order: float
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "order", check_order(self.order))
        rho = float(self.rho)
        if not math.isfinite(rho) or rho < 0:
            raise ParameterError(f"rho must be finite and >= 0, got {rho}")
        object.__setattr__(self, "rho", rho)


@dataclass(frozen=True)
class DpPoint:
    eps: float
    delta: float

    def __post_init__(self):
        if not self.eps >= 0:
            raise ParameterError(f"eps must be >= 0, got {self.eps}")
        check_delta(self.delta)


@dataclass(frozen=True)
class RdpCurve:
    """Loss-vs-order map of a mechanism, orders strictly increasing."""

    orders: tuple[float, ...]
    rhos: tuple[float, ...]

    def __post_init__(self):
        orders = tuple(check_order(a) for a in self.orders)
        rhos = tuple(float(r) for r in self.rhos)
        if len(orders) != len(rhos):
            raise DimensionMismatchError("orders and rhos differ in length")
        if any(b <= a for a, b in zip(orders, orders[1:])):
            raise InvariantError("curve orders must be strictly increasing")
        if any(not (math.isfinite(r) and r >= 0) for r in rhos):
            raise InvariantError("curve losses must be finite and >= 0")
        object.__setattr__(self, "orders", orders)
        object.__setattr__(self, "rhos", rhos)

    @classmethod
    def from_mapping(cls, points: Mapping[float, float]) -> "RdpCurve":
        items = sorted(points.items())
        return cls(tuple(a for a, _ in items), tuple(r for _, r in items))

    @classmethod
    def linear(cls, slope: float, orders: Iterable[float] = DEFAULT_ORDERS) -> "RdpCurve":
        """Curve alpha -> slope * alpha, the shape of every Gaussian composition."""
        orders = tuple(orders)
        return cls(orders, tuple(slope * a for a in orders))

    def __len__(self):
        return len(self.orders)

    def __iter__(self):
        for a, r in zip(self.orders, self.rhos):
            yield RdpPoint(a, r)

    def rho_at(self, alpha: float) -> float:
        try:
            return self.rhos[self.orders.index(float(alpha))]
        except ValueError:
            raise ParameterError(f"order {alpha} is not on the curve") from None


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size == 0:
            raise InvariantError("distribution has empty support")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InvariantError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > SUM_TOLERANCE:
            raise InvariantError(f"probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size

    def __eq__(self, other):
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return self.probs.shape == other.probs.shape and bool(np.all(self.probs == other.probs))

    def __hash__(self):
        return hash(self.probs.tobytes())


def _as_probs(p) -> np.ndarray:
    if isinstance(p, DiscreteDistribution):
        return p.probs
    return DiscreteDistribution(p).probs


def renyi_divergence_discrete(p, q, order: float) -> float:
    """D_order(p || q) in nats for finite distributions.

    Returns DIVERGENCE_INFINITE if p puts mass where q has none.
    """
    alpha = check_order(order)
    p, q = _as_probs(p), _as_probs(q)
    if p.shape != q.shape:
        raise DimensionMismatchError(f"support sizes differ: {p.size} vs {q.size}")
    return _log_moment_divergence(p, q, alpha)


def _log_moment_divergence(p: np.ndarray, q: np.ndarray, alpha: float) -> float:
    # Caller guarantees validity; shared with the oracle's path tables.
    mask = p > 0
    if np.any(q[mask] == 0):
        return DIVERGENCE_INFINITE
    lp, lq = np.log(p[mask]), np.log(q[mask])
    if alpha == 1:
        value = float(np.sum(p[mask] * (lp - lq)))
    else:
        value = float(logsumexp(alpha * lp + (1 - alpha) * lq)) / (alpha - 1)
    return max(value, 0.0)


def symmetric_divergence(p, q, order: float) -> float:
    return max(renyi_divergence_discrete(p, q, order), renyi_divergence_discrete(q, p, order))


def gaussian_individual_rdp(
    contribution_norm: float, lipschitz: float, sigma: float, order: float
) -> RdpPoint:
    """Individual RDP of a Gaussian mechanism for one point.

    The point moves the (L-Lipschitz) statistic by at most
    ``lipschitz * contribution_norm``; noise has standard deviation ``sigma``.
    """
    alpha = check_order(order)
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    if contribution_norm < 0 or lipschitz < 0:
        raise ParameterError("norm and Lipschitz constant must be >= 0")
    shift = lipschitz * contribution_norm
    return RdpPoint(alpha, alpha * shift * shift / (2 * sigma * sigma))


def rdp_to_dp(point: RdpPoint, delta: float) -> DpPoint:
    delta = check_delta(delta)
    if point.order == 1:
        raise UnsupportedOrderError("RDP to DP conversion is undefined at order 1")
    return DpPoint(point.rho + math.log(1 / delta) / (point.order - 1), delta)


def best_dp_over_curve(curve: RdpCurve, delta: float) -> tuple[DpPoint, float]:
    """Smallest epsilon over the curve's orders; ties go to the smaller order.

    An order-1 point, if present, is skipped since the conversion needs alpha > 1.
    """
    best = None
    for point in curve:
        if point.order == 1:
            continue
        dp = rdp_to_dp(point, delta)
        if best is None or dp.eps < best[0].eps:
            best = (dp, point.order)
    if best is None:
        raise ParameterError("curve has no order above 1 to convert")
    return best


def zcdp_budget_for_dp(eps_g: float, delta_g: float) -> float:
    """Largest zCDP level that converts to (eps_g, delta_g)-DP.

    Uses (sqrt(L + eps) - sqrt(L))**2 with L = log(1/delta), rewritten as
    eps**2 / (sqrt(L + eps) + sqrt(L))**2 to avoid cancellation.
    """
    delta_g = check_delta(delta_g)
    if not (math.isfinite(eps_g) and eps_g >= 0):
        raise ParameterError(f"eps_g must be finite and >= 0, got {eps_g}")
    log_inv = math.log(1 / delta_g)
    denom = math.sqrt(log_inv + eps_g) + math.sqrt(log_inv)
    return eps_g * eps_g / (denom * denom)
