from __future__ import annotations

import numpy as np
import pytest

from olm_tools.baselines import pca
from olm_tools.denoiser import GaussianOracle
from olm_tools.measurement import orthonormality_error
from olm_tools.ndgrad import finite_diff_grad, numpy_ops
from olm_tools.optimize import (
    JointParameterization,
    NullSpaceExtension,
    Objective,
    OptRunConfig,
    batch_gradient,
    fit_measurement,
    measurement_gradient,
    olm_noise_robust,
    olm_optimize,
    olm_sequential,
    reconstruction_loss,
)

COV3 = np.array([[1.0, 0.6, 0.2], [0.6, 1.0, 0.4], [0.2, 0.4, 1.0]])


@pytest.fixture
def run_cfg() -> OptRunConfig:
    return OptRunConfig(lr=0.05, epochs=2, batch=16, n_samples=1, micro_batch=8, seed=0)


def test_objective_validation() -> None:
    with pytest.raises(ValueError, match="Unknown objective"):
        Objective("l1")  # type: ignore[arg-type]
    with pytest.raises(ValueError, match="image shape"):
        Objective("ssim")


@pytest.mark.parametrize("tag, shape", [("mse", None), ("ssim", (4, 4))])
def test_objective_is_zero_for_exact_reconstructions(tag, shape) -> None:
    x = np.random.default_rng(0).random((2, 16))
    assert float(Objective(tag, shape).loss(numpy_ops, x, x)) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize(
    "parameterization",
    [
        JointParameterization(5, 2),
        NullSpaceExtension(np.eye(4)),
        NullSpaceExtension(np.eye(4)[:, 1:], fixed=np.eye(4)[:, :1]),
    ],
)
def test_pullback_matches_finite_differences(parameterization) -> None:
    rng = np.random.default_rng(1)
    theta = 0.5 * rng.standard_normal(parameterization.size())
    upstream = rng.standard_normal((parameterization.d, parameterization.k))
    m = parameterization.assemble(theta)
    assert m.matrix.shape == (parameterization.d, parameterization.k)
    assert orthonormality_error(m.matrix) < 1e-12
    expected = finite_diff_grad(lambda t: np.sum(parameterization.assemble(t).matrix * upstream), theta)
    assert np.allclose(parameterization.pullback(theta, upstream), expected, atol=1e-6)


def test_null_space_extension_keeps_the_fixed_columns() -> None:
    ext = NullSpaceExtension(np.eye(4)[:, 1:], fixed=np.eye(4)[:, :1])
    assert (ext.d, ext.k, ext.size()) == (4, 2, 2)
    m = ext.assemble(np.array([0.3, -0.2]))
    assert np.array_equal(m.matrix[:, 0], [1.0, 0.0, 0.0, 0.0])
    assert m.matrix[0, 1] == 0.0


def test_loss_gradient_reaches_the_parameters(oracle, fast_sampler) -> None:
    x = np.array([[0.4, 0.2], [-0.9, -0.6], [1.2, 0.7]])
    param = JointParameterization(2, 1)
    theta = np.array([0.3])
    obj = Objective()
    loss, grad_m, steps = measurement_gradient(oracle, param.assemble(theta).matrix, x, obj, fast_sampler, 1)
    grad_theta = param.pullback(theta, grad_m)

    def objective(t: np.ndarray) -> float:
        return reconstruction_loss(oracle, param.assemble(t), x, obj, fast_sampler, 1, frozen_steps=steps)

    assert loss == pytest.approx(objective(theta))
    assert np.allclose(grad_theta, finite_diff_grad(objective, theta, h=1e-6), atol=1e-5)


def test_batch_gradient_is_independent_of_micro_batching(oracle, fast_sampler, points) -> None:
    x = points[:10]
    matrix = np.array([[np.cos(0.2)], [np.sin(0.2)]])
    results = [
        batch_gradient(
            oracle, matrix, x, Objective(), fast_sampler,
            OptRunConfig(micro_batch=size, n_samples=1, seed=0), noise=0.1, noise_seed=7,
        )
        for size in (2, 3, 10)
    ]
    for loss, grad_m in results[1:]:
        assert loss == pytest.approx(results[0][0], rel=1e-10)
        assert np.allclose(grad_m, results[0][1], rtol=1e-8, atol=1e-12)


def test_fit_measurement_keeps_the_best_holdout_iterate(oracle, fast_sampler, points, run_cfg) -> None:
    result = fit_measurement(oracle, points[:64], JointParameterization(2, 1), Objective(), run_cfg, fast_sampler)
    assert len(result.train_loss) == 2
    assert len(result.holdout_loss) == 3
    assert result.holdout_loss[result.best_epoch] == min(result.holdout_loss)
    assert orthonormality_error(result.matrix.matrix) < 1e-10


def test_zero_epochs_returns_the_initialization(oracle, fast_sampler, points, run_cfg) -> None:
    cfg = run_cfg.model_copy(update={"epochs": 0, "holdout": 0.0})
    result = fit_measurement(oracle, points[:64], JointParameterization(2, 1), Objective(), cfg, fast_sampler)
    assert result.best_epoch == 0
    assert result.train_loss == []
    expected = pca(points[:64], 1).matrix
    assert np.allclose(np.abs(result.matrix.matrix), np.abs(expected))


def test_fit_measurement_validation(oracle, fast_sampler, points, run_cfg) -> None:
    with pytest.raises(ValueError, match="disagree"):
        fit_measurement(oracle, np.zeros((8, 3)), JointParameterization(3, 1), Objective(), run_cfg, fast_sampler)
    with pytest.raises(ValueError, match="non-negative"):
        fit_measurement(
            oracle, points[:8], JointParameterization(2, 1), Objective(), run_cfg, fast_sampler, noise=-1.0
        )
    with pytest.raises(ValueError, match="Expected 1 parameters"):
        fit_measurement(
            oracle, points[:8], JointParameterization(2, 1), Objective(), run_cfg, fast_sampler, initial=[0.0, 1.0]
        )


def test_olm_optimize_records_provenance(oracle, fast_sampler, points, run_cfg) -> None:
    m = olm_optimize(oracle, points[:48], 1, Objective(), run_cfg.model_copy(update={"epochs": 1}), fast_sampler)
    assert (m.d, m.k) == (2, 1)
    assert m.attrs["method"] == "olm"
    assert m.attrs["objective"] == "mse"
    assert len(m.attrs["fingerprint"]) == 16
    with pytest.raises(ValueError, match="1 <= k < d"):
        olm_optimize(oracle, points[:48], 2, Objective(), run_cfg, fast_sampler)


def test_noise_robust_records_the_noise(oracle, fast_sampler, points, run_cfg) -> None:
    cfg = run_cfg.model_copy(update={"epochs": 1})
    m = olm_noise_robust(oracle, points[:32], 1, 0.2, Objective(), cfg, fast_sampler)
    assert m.attrs["method"] == "olm_noise"
    assert m.attrs["noise"] == 0.2


def test_sequential_matrices_are_nested(fast_sampler, run_cfg) -> None:
    oracle = GaussianOracle(np.zeros(3), COV3)
    data = np.random.default_rng(5).multivariate_normal(np.zeros(3), COV3, size=24)
    matrices = olm_sequential(oracle, data, 2, Objective(), run_cfg.model_copy(update={"epochs": 1}), fast_sampler)
    assert [m.k for m in matrices] == [1, 2]
    assert np.allclose(matrices[1].matrix[:, 0], matrices[0].matrix[:, 0])
    assert orthonormality_error(matrices[1].matrix) < 1e-10
    assert all(m.attrs["method"] == "olm_seq" for m in matrices)
