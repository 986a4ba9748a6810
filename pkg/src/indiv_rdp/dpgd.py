"""Full-batch noisy gradient descent, plain and with individual filtering.

Both variants share one loop. Plain mode clips every per-example gradient
to ``clip_c``; filtered mode clips point i to
``min(clip_c, sqrt(norm_budget - spent_i))`` where ``spent_i`` is the sum of
its past squared clipped norms, so a point drops out once its squared-norm
budget is used up. The noisy mean always divides by the full dataset size
and draws one N(0, sigma^2 C^2 I) vector per point, in ascending point order.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import expit

from .core import DEFAULT_ORDERS, RdpCurve
from .errors import DimensionMismatchError, InvariantError, ParameterError


class LossKind(enum.Enum):
    LOGISTIC = "logistic"
    SQUARED = "squared"


class Mode(enum.Enum):
    PLAIN = "plain"
    FILTERED = "filtered"


@dataclass(frozen=True)
class LossSpec:
    """Per-example loss. Logistic expects labels in {0, 1}; both add (reg/2)||theta||^2."""

    kind: LossKind = LossKind.LOGISTIC
    regularization: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if not self.regularization >= 0:
            raise ParameterError("regularization must be >= 0")

    def values(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        z = X @ theta
        if self.kind is LossKind.LOGISTIC:
            base = np.logaddexp(0.0, z) - y * z
        else:
            base = 0.5 * (z - y) ** 2
        return base + 0.5 * self.regularization * float(theta @ theta)

    def gradients(self, theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-example gradients, one row per example."""
        z = X @ theta
        if self.kind is LossKind.LOGISTIC:
            residual = expit(z) - y
        else:
            residual = z - y
        return residual[:, None] * X + self.regularization * theta[None, :]


def per_example_gradient(loss: LossSpec, theta, x, y: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if theta.shape != x.shape or theta.ndim != 1:
        raise DimensionMismatchError(f"theta {theta.shape} and x {x.shape} do not agree")
    return loss.gradients(theta, x[None, :], np.array([float(y)]))[0]


def clip_gradient(g, cap: float) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    return clip_rows(g[None, :], np.array([cap]))[0][0]


def clip_rows(G: np.ndarray, caps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clip each row of G to its cap.

    Returns the clipped rows and their squared norms; a row scaled down to
    its cap is recorded as exactly cap**2.
    """
    sq = np.einsum("ij,ij->i", G, G)
    norms = np.sqrt(sq)
    over = norms > caps
    scale = np.ones_like(norms)
    np.divide(caps, norms, out=scale, where=over)
    clipped = G * scale[:, None]
    return clipped, np.where(over, caps * caps, sq)


def adaptive_cap(clip_c: float, norm_budget: float, spent: float) -> float:
    if spent > norm_budget:
        raise InvariantError(f"spent {spent!r} exceeds the squared-norm budget {norm_budget!r}")
    if spent < 0:
        raise InvariantError("spent cannot be negative")
    return min(clip_c, math.sqrt(norm_budget - spent))


def _adaptive_caps(clip_c: float, norm_budget: float, spent: np.ndarray) -> np.ndarray:
    if np.any(spent > norm_budget):
        i = int(np.argmax(spent > norm_budget))
        raise InvariantError(f"point {i} spent {spent[i]!r} > budget {norm_budget!r}")
    return np.minimum(clip_c, np.sqrt(norm_budget - spent))


Schedule = Union[float, Callable[[int], float]]


@dataclass
class GdConfig:
    sigma: float
    clip_c: float
    steps: int
    learning_rate: Schedule = 0.1
    norm_budget: Optional[float] = None
    seed: Optional[int] = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ParameterError("sigma must be > 0")
        if not self.clip_c > 0:
            raise ParameterError("clip value must be > 0")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ParameterError("steps must be a positive integer")
        if self.norm_budget is not None and not self.norm_budget > 0:
            raise ParameterError("squared-norm budget must be > 0")

    def eta(self, t: int) -> float:
        lr = self.learning_rate(t) if callable(self.learning_rate) else self.learning_rate
        if not lr > 0:
            raise ParameterError(f"learning rate at round {t} must be > 0, got {lr}")
        return float(lr)


@dataclass
class GdTrace:
    thetas: list = field(default_factory=list)
    clipped_sq_norms: list = field(default_factory=list)
    spent: list = field(default_factory=list)
    active_count: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return len(self.thetas)

    def max_spent(self, t: int) -> float:
        return float(np.max(self.spent[t])) if len(self.spent[t]) else 0.0

    def rows(self):
        for t in range(self.rounds):
            yield (
                t + 1,
                self.loss[t],
                self.accuracy[t],
                self.active_count[t],
                self.max_spent(t),
            )


TRACE_HEADER = ("round", "loss", "accuracy", "active_count", "max_spent")


class RunAborted(RuntimeError):
    def __init__(self, message: str, trace: GdTrace):
        super().__init__(message)
        self.trace = trace


def accuracy(theta: np.ndarray, X: np.ndarray, y: np.ndarray, loss: LossSpec) -> float:
    z = X @ theta
    if loss.kind is LossKind.LOGISTIC:
        pred = (z > 0).astype(float)
    else:
        pred = (z > 0.5).astype(float)
    return float(np.mean(pred == y))


def run_private_gd(
    config: GdConfig,
    X,
    y,
    loss: LossSpec = LossSpec(),
    mode: Union[Mode, str] = Mode.PLAIN,
    theta0=None,
    noise_sampler: Optional[Callable[[tuple], np.ndarray]] = None,
) -> tuple[np.ndarray, GdTrace]:
    """Run ``config.steps`` rounds (k in plain mode, k_max in filtered mode).

    ``noise_sampler(shape)`` replaces the standard-normal draws; tests use it
    to switch noise off.
    """
    mode = Mode(mode)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ParameterError("data must be a nonempty 2-D array")
    if y.shape[0] != X.shape[0]:
        raise DimensionMismatchError("features and labels differ in length")
    if mode is Mode.FILTERED and config.norm_budget is None:
        raise ParameterError("filtered mode needs a squared-norm budget")
    n, d = X.shape
    theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)
    rng = np.random.default_rng(config.seed)
    draw = noise_sampler or rng.standard_normal
    noise_scale = config.sigma * config.clip_c
    C, budget = config.clip_c, config.norm_budget
    spent = np.zeros(n)
    trace = GdTrace()

    for t in range(1, config.steps + 1):
        G = loss.gradients(theta, X, y)
        if not np.all(np.isfinite(G)):
            raise RunAborted(f"non-finite gradient at round {t}", trace)
        if mode is Mode.PLAIN:
            caps = np.full(n, C)
        else:
            caps = _adaptive_caps(C, budget, spent)
        clipped, sq = clip_rows(G, caps)
        noisy_sum = np.sum(clipped + draw((n, d)) * noise_scale, axis=0)
        theta = theta - config.eta(t) * (noisy_sum / n)
        if mode is Mode.PLAIN:
            spent = spent + sq
        else:
            # A point clipped by its remaining budget has used it up exactly.
            exhausted = (caps < C) & (sq >= caps * caps)
            spent = np.where(exhausted, budget, np.minimum(spent + sq, budget))
        losses = loss.values(theta, X, y)
        trace.thetas.append(theta.copy())
        trace.clipped_sq_norms.append(sq)
        trace.spent.append(spent.copy())
        trace.active_count.append(int(np.count_nonzero(caps > 0)))
        trace.loss.append(float(np.mean(losses)))
        trace.accuracy.append(accuracy(theta, X, y, loss))
        if not (np.all(np.isfinite(theta)) and np.isfinite(trace.loss[-1])):
            raise RunAborted(f"non-finite parameters or loss at round {t}", trace)
    return theta, trace


def privacy_report(config: GdConfig, mode: Union[Mode, str], orders=DEFAULT_ORDERS) -> RdpCurve:
    """RDP curve of a run: alpha k / (2 sigma^2), or alpha B_norm / (2 sigma^2 C^2) when filtered.

    The filtered guarantee does not depend on the number of steps.
    """
    mode = Mode(mode)
    if mode is Mode.PLAIN:
        slope = config.steps / (2 * config.sigma**2)
    else:
        if config.norm_budget is None:
            raise ParameterError("filtered mode needs a squared-norm budget")
        slope = config.norm_budget / (2 * config.sigma**2 * config.clip_c**2)
    return RdpCurve.linear(slope, orders)


def individual_losses(sq_norms: np.ndarray, config: GdConfig, order: float) -> np.ndarray:
    """Per-point RDP loss of one round, alpha ||g_i||^2 / (2 sigma^2 C^2)."""
    return order * np.asarray(sq_norms) / (2 * config.sigma**2 * config.clip_c**2)


def synthetic_blobs(
    n: int, d: int, separation: float = 2.0, seed: Optional[int] = 0, scale: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Two isotropic Gaussian blobs at +/- (separation / 2) along a random unit direction.

    Labels are 0/1 with equal class probability.
    """
    if n < 1 or d < 1:
        raise ParameterError("need n >= 1 and d >= 1")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    y = rng.integers(0, 2, size=n).astype(float)
    centers = np.outer(2 * y - 1, direction) * (separation / 2)
    X = centers + scale * rng.standard_normal((n, d))
    return X, y
