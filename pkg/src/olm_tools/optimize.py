"""
End-to-end optimization of orthonormal measurement matrices.

The loss of a batch is the reconstruction error of `unrolled_reconstruct`.
Its gradient reaches the free parameters in two hops: the recorded
reconstruction gives ∂L/∂M, and a small graph of the parameterization M(θ)
pulls that back to ∂L/∂θ. Parameterizations are Householder products, so every
iterate is orthonormal by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from olm_tools.baselines import pca
from olm_tools.datasets import as_matrix
from olm_tools.householder import (
    HouseholderParams,
    householder_from_basis,
    householder_product,
    n_params,
    null_space_basis,
)
from olm_tools.measurement import MeasurementMatrix, fingerprint, orthonormality_error
from olm_tools.metrics import SSIMWindow, ssim_ops
from olm_tools.ndgrad import AdamState, Graph, NonFiniteError, adam_step, numpy_ops, value_and_grad
from olm_tools.parallel import parallel_map
from olm_tools.rng import chain_keys, counter_normal, derive_seed, generator
from olm_tools.sampler import SamplerConfig, mmse_estimate, unrolled_reconstruct
from olm_tools.type import InitMode, ObjectiveTag  # noqa: TCH001

if TYPE_CHECKING:
    import numpy.typing as npt

    from olm_tools.datasets import Dataset
    from olm_tools.type import Tensor

logger = logging.getLogger(__name__)

# stream keys that keep holdout and measurement-noise draws apart from batch draws
HOLDOUT_STREAM = 1 << 20
NOISE_STREAM = 1 << 21
PARAM_LEAF = "phi"
UPSTREAM_LEAF = "upstream"


class NonFiniteLossError(FloatingPointError):
    def __init__(self, msg: str, *, epoch: int, items: list[int]) -> None:
        super().__init__(msg)
        self.epoch = epoch
        self.items = items


@dataclass(frozen=True)
class Objective:
    """
    What a reconstruction is scored with: per-pixel MSE, or 1 − SSIM for
    images of the given `shape`.
    """

    tag: ObjectiveTag = "mse"
    shape: tuple[int, int] | None = None
    window: SSIMWindow = field(default_factory=SSIMWindow)

    def __post_init__(self) -> None:
        if self.tag not in ("mse", "ssim"):
            msg = f"Unknown objective {self.tag!r}"
            raise ValueError(msg)
        if self.tag == "ssim" and self.shape is None:
            msg = "The SSIM objective needs the image shape"
            raise ValueError(msg)

    def loss(self, ops: Any, xhat: Any, x: Any) -> Any:
        if self.tag == "mse":
            return ops.mean(ops.square(ops.sub(xhat, x)))
        assert self.shape is not None
        return ops.sub(1.0, ssim_ops(ops, xhat, x, self.shape, self.window))


class OptRunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr: float = Field(default=1e-4, gt=0)
    decay: float = Field(default=0.9, gt=0, le=1)
    batch: int = Field(default=64, ge=1)
    epochs: int = Field(default=16, ge=0)
    n_samples: int = Field(default=2, ge=1)
    holdout: float = Field(default=0.1, ge=0, lt=1)
    holdout_max: int = Field(default=256, ge=1)
    micro_batch: int = Field(default=8, ge=1)
    init: InitMode = "pca"
    init_scale: float = Field(default=0.1, gt=0)
    seed: int = Field(ge=0)


class Parameterization:
    """
    A differentiable map from a flat parameter vector θ to a d x k
    orthonormal matrix.
    """

    d: int
    k: int

    def size(self) -> int:
        raise NotImplementedError

    def assemble_ops(self, ops: Any, theta: Any) -> Any:
        raise NotImplementedError

    def initial(self, data: Tensor, cfg: OptRunConfig) -> Tensor:
        raise NotImplementedError

    def assemble(self, theta: npt.ArrayLike) -> MeasurementMatrix:
        return MeasurementMatrix(np.array(self.assemble_ops(numpy_ops, np.asarray(theta, dtype=np.float64))))

    def pullback_graph(self) -> Graph:
        """
        A graph whose root is sum(M(θ) ∘ G) for the leaves θ and G, so its
        gradient in θ is the pullback of an upstream gradient G.
        """
        graph = Graph()
        theta = graph.leaf(PARAM_LEAF, np.zeros(self.size()))
        upstream = graph.leaf(UPSTREAM_LEAF, np.zeros((self.d, self.k)))
        graph.set_root(graph.sum(graph.mul(self.assemble_ops(graph, theta), upstream)))
        return graph

    def pullback(self, theta: npt.ArrayLike, grad_m: npt.ArrayLike, graph: Graph | None = None) -> Tensor:
        graph = graph or self.pullback_graph()
        _, grads = value_and_grad(
            graph, {PARAM_LEAF: theta, UPSTREAM_LEAF: grad_m}, wrt=[PARAM_LEAF]
        )
        return grads[PARAM_LEAF]


@dataclass(frozen=True)
class JointParameterization(Parameterization):
    """
    All k columns as one Householder product.
    """

    d: int
    k: int

    def size(self) -> int:
        return n_params(self.d, self.k)

    def assemble_ops(self, ops: Any, theta: Any) -> Any:
        return householder_product(ops, theta, self.d, self.k)

    def initial(self, data: Tensor, cfg: OptRunConfig) -> Tensor:
        if cfg.init == "random":
            return HouseholderParams.random(self.d, self.k, cfg.seed, cfg.init_scale).phi
        return householder_from_basis(pca(data, self.k)).phi


@dataclass(frozen=True)
class NullSpaceExtension(Parameterization):
    """
    A fixed d x k0 matrix extended by one unit column Uλ(θ), where the columns
    of U span the complement of the fixed ones and λ(θ) is a single
    Householder direction.
    """

    basis: Tensor
    fixed: Tensor | None = None

    @property
    def d(self) -> int:  # type: ignore[override]
        return self.basis.shape[0]

    @property
    def k(self) -> int:  # type: ignore[override]
        return 1 if self.fixed is None else self.fixed.shape[1] + 1

    def size(self) -> int:
        return n_params(self.basis.shape[1], 1)

    def assemble_ops(self, ops: Any, theta: Any) -> Any:
        direction = householder_product(ops, theta, self.basis.shape[1], 1)
        column = ops.matmul(ops.constant(self.basis), direction)
        if self.fixed is None:
            return column
        return ops.concat([ops.constant(self.fixed), column], axis=1)

    def initial(self, data: Tensor, cfg: OptRunConfig) -> Tensor:
        if self.size() == 0:
            return np.zeros(0)
        if cfg.init == "random":
            return HouseholderParams.random(self.basis.shape[1], 1, cfg.seed, cfg.init_scale).phi
        return householder_from_basis(pca(data @ self.basis, 1)).phi


@dataclass
class OptimizationResult:
    """
    The outcome of `fit_measurement`. Index 0 of `holdout_loss` is the loss at
    initialization, index e + 1 the loss after epoch e.
    """

    matrix: MeasurementMatrix
    params: Tensor
    train_loss: list[float]
    holdout_loss: list[float]
    best_epoch: int


def measurement_gradient(
    model: Any,
    matrix: Tensor,
    x: Tensor,
    obj: Objective,
    sampler_cfg: SamplerConfig,
    n_samples: int,
    *,
    item_offset: int = 0,
    frozen_steps: npt.ArrayLike | None = None,
    measurement_noise: npt.ArrayLike | None = None,
) -> tuple[float, Tensor, npt.NDArray[np.int64]]:
    """
    Loss of reconstructing the rows of `x` from their measurements, its
    gradient with respect to the measurement matrix, and the realized steps.
    """
    rec = unrolled_reconstruct(
        model, matrix, x, sampler_cfg, n_samples,
        item_offset=item_offset, frozen_steps=frozen_steps,
        measurement_noise=measurement_noise,
    )
    graph = rec.graph
    loss = obj.loss(graph, rec.estimate, graph.constant(x))
    grads = graph.backward([rec.leaf], root=loss)
    return float(graph.value(loss)), grads[rec.leaf], rec.steps


def reconstruction_loss(
    model: Any,
    M: MeasurementMatrix | npt.ArrayLike,
    x: npt.ArrayLike,
    obj: Objective,
    sampler_cfg: SamplerConfig,
    n_samples: int,
    *,
    item_offset: int = 0,
    frozen_steps: npt.ArrayLike | None = None,
) -> float:
    """
    The objective of MMSE reconstructions of `x`, evaluated eagerly.
    """
    matrix = M.matrix if isinstance(M, MeasurementMatrix) else np.asarray(M, dtype=np.float64)
    data = np.asarray(x, dtype=np.float64)
    xhat = mmse_estimate(
        model, matrix, data @ matrix, n_samples, sampler_cfg,
        item_offset=item_offset, frozen_steps=frozen_steps,
    )
    return float(obj.loss(numpy_ops, xhat, data))


def _chunks(n: int, size: int) -> list[tuple[int, int]]:
    return [(start, min(start + size, n)) for start in range(0, n, size)]


def batch_gradient(
    model: Any,
    matrix: Tensor,
    x: Tensor,
    obj: Objective,
    sampler_cfg: SamplerConfig,
    cfg: OptRunConfig,
    *,
    noise: float = 0.0,
    noise_seed: int = 0,
) -> tuple[float, Tensor]:
    """
    Mean loss over the rows of `x` and its gradient in the measurement
    matrix, from micro-batches of `cfg.micro_batch` rows evaluated in
    parallel. Row r always uses the noise streams of item r, so the result
    does not depend on the micro-batch size or thread count.
    """
    chunks = _chunks(len(x), cfg.micro_batch)

    def micro(span: tuple[int, int]) -> tuple[float, Tensor]:
        a, z = span
        eps = None
        if noise > 0:
            keys = chain_keys(z - a, 1, item_offset=a)
            eps = noise * counter_normal(noise_seed, keys, 0, matrix.shape[1])
        loss, grad_m, _ = measurement_gradient(
            model, matrix, x[a:z], obj, sampler_cfg, cfg.n_samples,
            item_offset=a, measurement_noise=eps,
        )
        return loss, grad_m

    loss = 0.0
    grad_m = np.zeros_like(matrix)
    for (part_loss, part_grad), (a, z) in zip(parallel_map(micro, chunks), chunks):
        weight = (z - a) / len(x)
        loss += weight * part_loss
        grad_m += weight * part_grad
    return loss, grad_m


def _holdout_split(n: int, cfg: OptRunConfig) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    n_hold = min(int(round(cfg.holdout * n)), cfg.holdout_max, n - 1)
    if n_hold <= 0:
        return np.arange(n), np.arange(0)
    order = generator(cfg.seed, 0).permutation(n)
    return np.sort(order[n_hold:]), np.sort(order[:n_hold])


def fit_measurement(
    model: Any,
    train: Dataset | npt.ArrayLike,
    parameterization: Parameterization,
    obj: Objective,
    cfg: OptRunConfig,
    sampler_cfg: SamplerConfig,
    *,
    noise: float = 0.0,
    initial: npt.ArrayLike | None = None,
) -> OptimizationResult:
    """
    Minimize the mean reconstruction loss over `train` with Adam on the
    parameters of `parameterization`.

    Every epoch shuffles the training items into batches. Each batch is split
    into micro-batches whose recorded reconstructions are evaluated in
    parallel and whose gradients are summed in a fixed order, weighted by
    micro-batch size. After every epoch the loss on a held-out slice is
    computed with fixed noise, and the iterate with the lowest held-out loss
    (including the initial one) is returned.

    Parameters
    ----------
    noise: float
        Standard deviation of Gaussian noise added to the measurements of
        every training item, fresh per batch. Reconstruction still treats
        the noisy measurements as exact.
    initial: array-like, optional
        Starting parameters. Defaults to `parameterization.initial`.
    """
    if noise < 0:
        msg = f"Measurement noise must be non-negative, got {noise}"
        raise ValueError(msg)
    data = as_matrix(train)
    n, d = data.shape
    if d != parameterization.d or model.dim != d:
        msg = f"Data of width {d}, model of dimension {model.dim} and a {parameterization.d}-dimensional measurement disagree"
        raise ValueError(msg)
    train_idx, hold_idx = _holdout_split(n, cfg)
    fit_data, hold_data = data[train_idx], data[hold_idx]

    theta = parameterization.initial(fit_data, cfg) if initial is None else np.asarray(initial, dtype=np.float64)
    if theta.shape != (parameterization.size(),):
        msg = f"Expected {parameterization.size()} parameters, got shape {theta.shape}"
        raise ValueError(msg)
    hold_cfg = sampler_cfg.model_copy(update={"seed": derive_seed(cfg.seed, HOLDOUT_STREAM)})

    def holdout_loss(theta: Tensor) -> float:
        if len(hold_data) == 0:
            return float("nan")
        matrix = parameterization.assemble(theta).matrix
        chunks = _chunks(len(hold_data), cfg.micro_batch)
        losses = parallel_map(
            lambda span: reconstruction_loss(
                model, matrix, hold_data[span[0] : span[1]], obj, hold_cfg, cfg.n_samples,
                item_offset=span[0],
            ),
            chunks,
        )
        return float(sum(loss * (b - a) for loss, (a, b) in zip(losses, chunks)) / len(hold_data))

    best_theta = theta
    holdout_history = [holdout_loss(theta)]
    best_loss = holdout_history[0]
    best_epoch = 0
    train_history: list[float] = []

    if parameterization.size() == 0 or cfg.epochs == 0:
        return _result(parameterization, theta, train_history, holdout_history, 0)

    pullback = parameterization.pullback_graph()
    state = AdamState.create({PARAM_LEAF: theta}, lr=cfg.lr, decay=cfg.decay)
    batch = min(cfg.batch, len(fit_data))
    for epoch in tqdm(range(cfg.epochs), desc="measurement", disable=None):
        order = generator(cfg.seed, 1, epoch).permutation(len(fit_data))
        total = 0.0
        for b, start in enumerate(range(0, len(fit_data), batch)):
            items = order[start : start + batch]
            x = fit_data[items]
            matrix = parameterization.assemble(theta).matrix
            batch_cfg = sampler_cfg.model_copy(update={"seed": derive_seed(cfg.seed, epoch, b)})
            noise_seed = derive_seed(cfg.seed, NOISE_STREAM, epoch, b)
            try:
                loss, grad_m = batch_gradient(
                    model, matrix, x, obj, batch_cfg, cfg,
                    noise=noise, noise_seed=noise_seed,
                )
            except NonFiniteError as e:
                msg = f"Non-finite value while optimizing at epoch {epoch}, batch {b}: {e}"
                raise NonFiniteLossError(msg, epoch=epoch, items=[int(i) for i in train_idx[items]]) from e
            if not (np.isfinite(loss) and np.all(np.isfinite(grad_m))):
                msg = f"Non-finite loss {loss} at epoch {epoch}, batch {b}"
                raise NonFiniteLossError(msg, epoch=epoch, items=[int(i) for i in train_idx[items]])
            grad_theta = parameterization.pullback(theta, grad_m, pullback)
            params, state = adam_step({PARAM_LEAF: theta}, {PARAM_LEAF: grad_theta}, state)
            theta = params[PARAM_LEAF]
            total += loss * len(x)
        state = state.decayed()

        error = orthonormality_error(parameterization.assemble(theta).matrix)
        if error >= 1e-10:
            msg = f"Measurement matrix lost orthonormality at epoch {epoch}: {error:.3e}"
            raise RuntimeError(msg)
        train_history.append(total / len(fit_data))
        holdout_history.append(holdout_loss(theta))
        logger.info(
            "Measurement epoch %d: train loss %.6g, holdout loss %.6g",
            epoch, train_history[-1], holdout_history[-1],
        )
        if len(hold_data) == 0 or holdout_history[-1] < best_loss:
            best_loss = holdout_history[-1]
            best_theta = theta
            best_epoch = epoch + 1

    return _result(parameterization, best_theta, train_history, holdout_history, best_epoch)


def _result(
    parameterization: Parameterization,
    theta: Tensor,
    train_history: list[float],
    holdout_history: list[float],
    best_epoch: int,
) -> OptimizationResult:
    return OptimizationResult(
        matrix=parameterization.assemble(theta),
        params=theta,
        train_loss=train_history,
        holdout_loss=holdout_history,
        best_epoch=best_epoch,
    )


def _check_k(k: int, d: int) -> None:
    if not 1 <= k < d:
        msg = f"Need 1 <= k < d, got k={k} for d={d}"
        raise ValueError(msg)


def _provenance(
    result: OptimizationResult, method: str, obj: Objective, cfg: OptRunConfig, data: Tensor
) -> MeasurementMatrix:
    return result.matrix.with_attrs(
        method=method,
        objective=obj.tag,
        seed=cfg.seed,
        fingerprint=fingerprint(data),
        best_epoch=result.best_epoch,
    )


def olm_optimize(
    model: Any,
    train: Dataset | npt.ArrayLike,
    k: int,
    obj: Objective,
    cfg: OptRunConfig,
    sampler_cfg: SamplerConfig,
) -> MeasurementMatrix:
    """
    Jointly optimize k orthonormal measurement vectors for reconstruction
    through the denoiser prior.
    """
    data = as_matrix(train)
    _check_k(k, data.shape[1])
    result = fit_measurement(model, data, JointParameterization(data.shape[1], k), obj, cfg, sampler_cfg)
    return _provenance(result, "olm", obj, cfg, data)


def olm_noise_robust(
    model: Any,
    train: Dataset | npt.ArrayLike,
    k: int,
    sigma_noise: float,
    obj: Objective,
    cfg: OptRunConfig,
    sampler_cfg: SamplerConfig,
) -> MeasurementMatrix:
    """
    As `olm_optimize`, with Gaussian noise of standard deviation
    `sigma_noise` added to the measurements during optimization.
    """
    data = as_matrix(train)
    _check_k(k, data.shape[1])
    result = fit_measurement(
        model, data, JointParameterization(data.shape[1], k), obj, cfg, sampler_cfg,
        noise=sigma_noise,
    )
    return _provenance(result, "olm_noise", obj, cfg, data).with_attrs(noise=sigma_noise)


def olm_sequential(
    model: Any,
    train: Dataset | npt.ArrayLike,
    k_max: int,
    obj: Objective,
    cfg: OptRunConfig,
    sampler_cfg: SamplerConfig,
) -> list[MeasurementMatrix]:
    """
    Greedily grow a nested family of measurement matrices M_1 ⊂ ... ⊂ M_k_max.

    Each step keeps the previous columns fixed and optimizes one new unit
    column Uλ in the complement U of their span.

    Returns
    -------
    The matrices for k = 1, ..., k_max in order.
    """
    data = as_matrix(train)
    d = data.shape[1]
    _check_k(k_max, d)
    matrices: list[MeasurementMatrix] = []
    fixed: Tensor | None = None
    basis = np.eye(d)
    for k in range(1, k_max + 1):
        step_cfg = cfg.model_copy(update={"seed": derive_seed(cfg.seed, k)})
        result = fit_measurement(model, data, NullSpaceExtension(basis, fixed), obj, step_cfg, sampler_cfg)
        matrix = _provenance(result, "olm_seq", obj, cfg, data)
        matrices.append(matrix)
        logger.info("Sequential measurement %d of %d done", k, k_max)
        fixed = matrix.matrix
        if k < k_max:
            basis = null_space_basis(matrix)
    return matrices
