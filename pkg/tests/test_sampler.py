from __future__ import annotations

import numpy as np
import pytest

from olm_tools.ndgrad import eval as replay
from olm_tools.ndgrad import finite_diff_grad, numpy_ops
from olm_tools.rng import generator
from olm_tools.sampler import (
    M_LEAF,
    SamplerConfig,
    SamplerError,
    TraceBudgetError,
    conditional_direction,
    mmse_estimate,
    parameter_study,
    project,
    sample_conditional,
    sample_prior,
    trace_to_csv,
    unrolled_reconstruct,
)

AXIS = np.array([[1.0], [0.0]])
# leading principal direction of the gaussian2d covariance
LEADING = np.array([[1.0], [1.0]]) / np.sqrt(2.0)


def test_noise_gain() -> None:
    cfg = SamplerConfig(h=0.1, beta=0.1)
    assert cfg.noise_gain == pytest.approx(np.sqrt(0.99**2 - 0.9**2))
    assert SamplerConfig(h=0.1, beta=1.0).noise_gain == 0.0


def test_prior_samples_stop_below_sigma_end(oracle, fast_sampler) -> None:
    samples, trace = sample_prior(oracle, fast_sampler, n=64)
    assert samples.shape == (64, 2)
    assert not trace.hit_t_max
    assert np.all(trace.steps >= 1)
    # a chain stops after the first step whose level fell below sigma_end
    rows = np.arange(64)
    assert np.all(trace.sigma[trace.steps - 1, rows] < fast_sampler.sigma_end)
    longer = trace.steps >= 2
    assert np.all(trace.sigma[trace.steps[longer] - 2, rows[longer]] >= fast_sampler.sigma_end)


def test_prior_samples_lie_along_the_correlated_axis(oracle) -> None:
    cfg = SamplerConfig(h=0.1, beta=0.5, sigma_end=0.02, fill=0.0, seed=1)
    samples, _ = sample_prior(oracle, cfg, n=400)
    assert np.corrcoef(samples.T)[0, 1] > 0
    assert np.all(np.abs(samples.mean(axis=0)) < 0.2)


def test_prior_sampling_is_seeded(oracle, fast_sampler) -> None:
    a, _ = sample_prior(oracle, fast_sampler, n=4)
    b, _ = sample_prior(oracle, fast_sampler, n=4)
    c, _ = sample_prior(oracle, fast_sampler.model_copy(update={"seed": 4}), n=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_conditional_samples_honour_measurements(oracle, fast_sampler) -> None:
    m = np.array([[0.7], [-1.2]])
    samples, trace = sample_conditional(oracle, AXIS, m, fast_sampler, n_samples=3)
    assert samples.shape == (2, 3, 2)
    bound = 3 * fast_sampler.sigma_end
    assert np.all(np.abs(samples[..., 0] - m) <= bound)
    assert trace.residual is not None
    assert np.all(trace.residual[trace.steps - 1, np.arange(6)] <= bound)


def test_conditional_single_measurement_vector(oracle, fast_sampler) -> None:
    samples, _ = sample_conditional(oracle, AXIS, np.array([0.5]), fast_sampler, n_samples=2)
    assert samples.shape == (2, 2)


def test_conditional_samples_move_towards_the_conditional_mean(oracle) -> None:
    cfg = SamplerConfig(h=0.1, beta=0.5, sigma_end=0.02, fill=0.0, seed=2)
    samples, _ = sample_conditional(oracle, AXIS, np.array([1.0]), cfg, n_samples=300)
    # E[x2 | x1 = 1] under the prior smoothed at level s is 0.8 / (1 + s²)
    assert 0.35 < samples[:, 1].mean() < 0.85


def test_mmse_estimate_is_independent_of_batching(oracle, fast_sampler) -> None:
    m = np.linspace(-1, 1, 6)[:, None]
    whole = mmse_estimate(oracle, AXIS, m, 2, fast_sampler)
    head = mmse_estimate(oracle, AXIS, m[:4], 2, fast_sampler)
    tail = mmse_estimate(oracle, AXIS, m[4:], 2, fast_sampler, item_offset=4)
    assert np.allclose(whole, np.concatenate([head, tail]), rtol=1e-10, atol=1e-12)


def test_strict_sampler_raises_at_t_max(oracle) -> None:
    cfg = SamplerConfig(t_max=2, fill=0.0)
    with pytest.raises(SamplerError, match="t_max"):
        unrolled_reconstruct(oracle, AXIS, np.ones((2, 2)), cfg, 1, strict=True)
    with pytest.warns(UserWarning, match="t_max"):
        sample_prior(oracle, cfg, n=2)


def test_trace_budget(oracle) -> None:
    cfg = SamplerConfig(fill=0.0, trace_budget_mb=0.01)
    with pytest.raises(TraceBudgetError, match="budget"):
        unrolled_reconstruct(oracle, AXIS, np.ones((4, 2)), cfg, 2)


def test_unrolled_forward_matches_eager(oracle, fast_sampler) -> None:
    x = np.array([[0.3, 0.1], [-0.8, -0.5], [1.1, 0.9]])
    rec = unrolled_reconstruct(oracle, AXIS, x, fast_sampler, 2)
    eager = mmse_estimate(oracle, AXIS, x @ AXIS, 2, fast_sampler)
    assert np.array_equal(rec.value, eager)
    assert rec.leaf == M_LEAF


def test_frozen_steps_replay(oracle, fast_sampler) -> None:
    x = np.array([[0.3, 0.1], [-0.8, -0.5]])
    rec = unrolled_reconstruct(oracle, AXIS, x, fast_sampler, 1)
    replayed = mmse_estimate(oracle, AXIS, x @ AXIS, 1, fast_sampler, frozen_steps=rec.steps)
    assert np.array_equal(replayed, rec.value)


def test_unrolled_gradient_matches_finite_differences(oracle, fast_sampler) -> None:
    x = np.array([[0.3, 0.1], [-0.8, -0.5]])
    theta = 0.4
    matrix = np.array([[np.cos(theta)], [np.sin(theta)]])
    rec = unrolled_reconstruct(oracle, matrix, x, fast_sampler, 1)
    graph = rec.graph
    graph.set_root(graph.mean(graph.square(graph.sub(rec.estimate, graph.constant(x)))))
    grad_m = graph.backward([M_LEAF])[M_LEAF]

    def loss(m: np.ndarray) -> float:
        xhat = mmse_estimate(oracle, m, x @ m, 1, fast_sampler, frozen_steps=rec.steps)
        return float(np.mean((xhat - x) ** 2))

    expected = finite_diff_grad(loss, matrix, h=1e-6)
    assert np.allclose(grad_m, expected, atol=1e-5)
    assert replay(graph, {M_LEAF: matrix}) == pytest.approx(loss(matrix))


def test_measurement_noise_shifts_the_estimate(oracle, fast_sampler) -> None:
    x = np.array([[0.3, 0.1]])
    clean = unrolled_reconstruct(oracle, AXIS, x, fast_sampler, 1)
    noisy = unrolled_reconstruct(oracle, AXIS, x, fast_sampler, 1, measurement_noise=[[0.5]])
    assert noisy.value[0, 0] == pytest.approx(clean.value[0, 0] + 0.5, abs=3 * fast_sampler.sigma_end)
    with pytest.raises(ValueError, match="does not match"):
        unrolled_reconstruct(oracle, AXIS, x, fast_sampler, 1, measurement_noise=[[0.5, 0.1]])


def test_model_dimension_is_checked(tiny_model, fast_sampler) -> None:
    with pytest.raises(ValueError, match="does not match"):
        mmse_estimate(tiny_model, np.eye(3)[:, :1], np.zeros((1, 1)), 1, fast_sampler)


def test_project() -> None:
    x = np.array([[2.0, 3.0]])
    assert np.allclose(project(AXIS, x), [[2.0, 0.0]])
    assert np.allclose(project(AXIS, x, mean=[0.0, 1.0]), [[2.0, 1.0]])


def test_trace_csv(tmp_path, oracle, fast_sampler) -> None:
    _, trace = sample_conditional(oracle, AXIS, np.array([[0.5], [0.1]]), fast_sampler)
    path = tmp_path / "trace.csv"
    trace_to_csv(trace, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,chain,sigma,l_norm,residual"
    assert len(lines) == 1 + int(trace.steps.sum())


def test_parameter_study(oracle, fast_sampler) -> None:
    x = np.array([[0.3, 0.1], [-0.8, -0.5], [1.1, 0.9]])
    records = parameter_study(oracle, AXIS, x, fast_sampler, {"h": [0.2, 0.4], "beta": [0.5]}, n_samples=1)
    assert [(r["param"], r["value"]) for r in records] == [("h", 0.2), ("h", 0.4), ("beta", 0.5)]
    assert all(np.isfinite(r["psnr"]) for r in records)
    with pytest.raises(ValueError, match="Unknown sampler parameter"):
        parameter_study(oracle, AXIS, x, fast_sampler, {"gamma": [1.0]})


def test_conditional_direction_splits_into_measured_and_unmeasured_parts() -> None:
    rng = generator(5)
    matrix, _ = np.linalg.qr(rng.standard_normal((5, 2)))
    g, y = rng.standard_normal((2, 7, 5))
    m = rng.standard_normal((7, 2))
    l = conditional_direction(numpy_ops, g, y, matrix, m)
    measured = matrix @ matrix.T
    assert np.allclose(l @ measured, (m - y @ matrix) @ matrix.T, atol=1e-12)
    assert np.allclose(l @ (np.eye(5) - measured), g @ (np.eye(5) - measured), atol=1e-12)


def test_full_rank_measurements_pin_the_sample(oracle, fast_sampler) -> None:
    angle = 0.7
    rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    x = generator(6).standard_normal((5, 2))
    samples, _ = sample_conditional(oracle, rotation, x @ rotation, fast_sampler, n_samples=3)
    assert np.all(np.abs(samples - x[:, None, :]) <= 3 * fast_sampler.sigma_end)


def test_mmse_error_shrinks_with_more_samples(oracle) -> None:
    cfg = SamplerConfig(h=0.2, beta=0.5, sigma_end=0.01, fill=0.0, seed=7)
    m = np.linspace(-2, 2, 128)[:, None]
    # along the leading direction the posterior mean is m times that direction
    expected = m @ LEADING.T
    errors = {
        n: float(np.sum((mmse_estimate(oracle, LEADING, m, n, cfg) - expected) ** 2))
        for n in (2, 16)
    }
    assert errors[16] <= errors[2]


def test_mmse_estimate_approaches_the_posterior_mean(oracle) -> None:
    cfg = SamplerConfig(h=0.2, beta=0.5, sigma_end=0.01, fill=0.0, seed=8)
    magnitude = np.linspace(1.5, 2.5, 32)
    m = np.concatenate([magnitude, -magnitude])[:, None]
    expected = m @ LEADING.T
    estimate = mmse_estimate(oracle, LEADING, m, 64, cfg)
    assert np.linalg.norm(estimate - expected) < 0.05 * np.linalg.norm(expected)
