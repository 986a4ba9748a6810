import math

import numpy as np
import pytest

from indiv_rdp.core import best_dp_over_curve
from indiv_rdp.dpgd import (
    GdConfig,
    LossKind,
    LossSpec,
    Mode,
    RunAborted,
    adaptive_cap,
    clip_gradient,
    clip_rows,
    individual_losses,
    per_example_gradient,
    privacy_report,
    run_private_gd,
    synthetic_blobs,
)
from indiv_rdp.errors import DimensionMismatchError, InvariantError, ParameterError

LOSSES = [LossSpec(LossKind.LOGISTIC), LossSpec(LossKind.SQUARED), LossSpec(LossKind.LOGISTIC, 0.3)]


def zero_noise(shape):
    return np.zeros(shape)


def finite_difference(loss, theta, x, y, h=1e-5):
    grad = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h
        up = loss.values(theta + e, x[None, :], np.array([y]))[0]
        down = loss.values(theta - e, x[None, :], np.array([y]))[0]
        grad[j] = (up - down) / (2 * h)
    return grad


def test_gradient_at_zero():
    x = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(per_example_gradient(LossSpec(), np.zeros(3), x, 1.0), -0.5 * x)
    np.testing.assert_allclose(per_example_gradient(LossSpec(), np.zeros(3), x, 0.0), 0.5 * x)
    np.testing.assert_allclose(
        per_example_gradient(LossSpec("squared"), np.zeros(3), x, 2.0), -2 * x
    )


@pytest.mark.parametrize("loss", LOSSES, ids=["logistic", "squared", "logistic_reg"])
def test_gradients_match_finite_differences(loss):
    rng = np.random.default_rng(42)
    for _ in range(100):
        d = int(rng.integers(1, 8))
        theta, x = rng.normal(size=d), rng.normal(size=d)
        y = float(rng.integers(0, 2)) if loss.kind is LossKind.LOGISTIC else rng.normal()
        analytic = per_example_gradient(loss, theta, x, y)
        numeric = finite_difference(loss, theta, x, y)
        err = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-8)
        assert err <= 1e-5


def test_gradient_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        per_example_gradient(LossSpec(), np.zeros(3), np.zeros(2), 1.0)


def test_clip_gradient_examples():
    g = np.array([3.0, 0.0])
    np.testing.assert_array_equal(clip_gradient(g, 10), g)
    big = np.array([12.0, 16.0])
    assert np.linalg.norm(clip_gradient(big, 10)) == pytest.approx(10, abs=1e-12)
    np.testing.assert_array_equal(clip_gradient(np.zeros(4), 5), np.zeros(4))
    np.testing.assert_array_equal(clip_gradient(np.zeros(4), 0), np.zeros(4))
    np.testing.assert_array_equal(clip_gradient(big, 0), np.zeros(2))


def test_clip_rows_records_cap_squared():
    rng = np.random.default_rng(0)
    G = rng.normal(size=(500, 6)) * rng.uniform(0, 5, size=(500, 1))
    caps = rng.uniform(0, 3, size=500)
    clipped, sq = clip_rows(G, caps)
    norms = np.linalg.norm(clipped, axis=1)
    assert np.all(norms <= caps * (1 + 1e-12))
    np.testing.assert_allclose(sq, norms**2, rtol=1e-12, atol=1e-15)
    assert np.all(sq <= caps * caps)


def test_adaptive_cap_examples():
    assert adaptive_cap(10, 10400, 10396) == 2.0
    assert adaptive_cap(10, 10400, 0) == 10
    assert adaptive_cap(10, 10400, 10400) == 0.0
    with pytest.raises(InvariantError):
        adaptive_cap(10, 10400, 10400.5)


def blobs(n=200, d=5, seed=0):
    return synthetic_blobs(n, d, separation=2.0, seed=seed)


@pytest.mark.parametrize("clip_c", [1.0, 0.5, 10.0])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_filtered_recovers_plain_bitwise(clip_c, seed):
    X, y = blobs()
    k = 15
    _, plain = run_private_gd(GdConfig(2.0, clip_c, k, 0.5, None, seed), X, y, mode="plain")
    _, filt = run_private_gd(
        GdConfig(2.0, clip_c, k, 0.5, k * clip_c**2, seed), X, y, mode="filtered"
    )
    for a, b in zip(plain.thetas, filt.thetas):
        assert a.tobytes() == b.tobytes()
    assert plain.loss == filt.loss and plain.accuracy == filt.accuracy


@pytest.mark.parametrize("budget", [3.0, 7.5, 20.0])
def test_spend_safety_and_warm_up(budget):
    X, y = blobs(seed=4)
    config = GdConfig(1.0, 1.0, 30, 0.3, budget, seed=3)
    _, trace = run_private_gd(config, X, y, mode="filtered")
    warm = math.floor(budget / config.clip_c**2)
    spent_before = np.zeros(len(y))
    for t in range(trace.rounds):
        assert trace.max_spent(t) <= budget
        caps = np.minimum(config.clip_c, np.sqrt(budget - spent_before))
        if t + 1 <= warm:
            assert np.all(caps == config.clip_c)
        assert np.all(trace.clipped_sq_norms[t] <= caps * caps)
        spent_before = trace.spent[t]
    # The ledger view of the same spend stays within the filtered guarantee.
    rho = individual_losses(trace.spent[-1], config, 8.0)
    assert np.all(rho <= privacy_report(config, "filtered", [8.0]).rho_at(8.0))


def test_filtered_run_eventually_drops_points():
    X, y = blobs(seed=5)
    _, trace = run_private_gd(GdConfig(1.0, 1.0, 40, 0.3, 4.0, 0), X, y, mode="filtered")
    assert trace.active_count[0] == len(y)
    assert trace.active_count[-1] < len(y)
    assert all(b <= a for a, b in zip(trace.active_count, trace.active_count[1:]))


def test_noiseless_descent_on_separable_pair():
    X = np.array([[1.0, 0.5], [-1.0, -0.2]])
    y = np.array([1.0, 0.0])
    config = GdConfig(1.0, 100.0, 25, 0.1)
    _, trace = run_private_gd(config, X, y, noise_sampler=zero_noise)
    assert all(b < a for a, b in zip(trace.loss, trace.loss[1:]))
    assert trace.accuracy[-1] == 1.0


def test_learning_rate_schedule():
    X, y = blobs()
    config = GdConfig(1.0, 1.0, 5, lambda t: 1.0 / t, None, 0)
    assert config.eta(4) == 0.25
    run_private_gd(config, X, y)
    with pytest.raises(ParameterError):
        GdConfig(1.0, 1.0, 5, lambda t: -1.0).eta(1)


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_divergence_aborts_with_trace():
    X = np.array([[1e100, 1e100], [-1e100, 2e100]])
    y = np.array([1.0, -1.0])
    config = GdConfig(1.0, 1e150, 200, 10.0)
    with pytest.raises(RunAborted) as info:
        run_private_gd(config, X, y, LossSpec("squared"), noise_sampler=zero_noise)
    assert info.value.trace.rounds < 200


def test_config_errors():
    with pytest.raises(ParameterError):
        GdConfig(0.0, 1.0, 5)
    with pytest.raises(ParameterError):
        GdConfig(1.0, -1.0, 5)
    with pytest.raises(ParameterError):
        GdConfig(1.0, 1.0, 0)
    X, y = blobs()
    with pytest.raises(ParameterError):
        run_private_gd(GdConfig(1.0, 1.0, 5), X, y, mode="filtered")
    with pytest.raises(DimensionMismatchError):
        run_private_gd(GdConfig(1.0, 1.0, 5), X, y[:-1])


def test_privacy_report_examples():
    plain = privacy_report(GdConfig(170, 10, 104), "plain")
    assert 0.29 <= best_dp_over_curve(plain, 1e-5)[0].eps <= 0.31
    plain = privacy_report(GdConfig(130, 10, 180), "plain")
    assert 0.49 <= best_dp_over_curve(plain, 1e-5)[0].eps <= 0.51
    filt = privacy_report(GdConfig(170, 10, 125, norm_budget=104 * 100.0), Mode.FILTERED)
    assert filt.rhos == pytest.approx(plain_curve_rhos(170, 104))


def plain_curve_rhos(sigma, k):
    return privacy_report(GdConfig(sigma, 10, k), "plain").rhos


def test_filtered_guarantee_ignores_step_count():
    a = privacy_report(GdConfig(5.0, 2.0, 10, norm_budget=40.0), "filtered")
    b = privacy_report(GdConfig(5.0, 2.0, 1000, norm_budget=40.0), "filtered")
    assert a == b


def test_synthetic_blobs_shape_and_labels():
    X, y = synthetic_blobs(300, 4, separation=3.0, seed=1)
    assert X.shape == (300, 4) and set(np.unique(y)) == {0.0, 1.0}
    X2, y2 = synthetic_blobs(300, 4, separation=3.0, seed=1)
    assert np.array_equal(X, X2) and np.array_equal(y, y2)
