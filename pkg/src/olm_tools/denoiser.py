"""
Bias-free least-squares denoisers and the analytic oracles for the 2-D priors.

A denoiser maps a noisy row y to an estimate x̂(y); its residual x̂(y) − y is
the (σ²-scaled) score of the noise-smoothed prior, which is all the samplers
need. Models carry no additive constants, so with relu activations they are
positively homogeneous: f(αy) = αf(y) for α > 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from tqdm import tqdm

from olm_tools.datasets import (
    ELLIPSE_ANGLE,
    ELLIPSE_AXES,
    ELLIPSE_JITTER,
    GAUSSIAN_COV,
    KSPARSE_SCALES,
    as_matrix,
    ellipse_rotation,
)
from olm_tools.io.core import read, write
from olm_tools.io.sidecar import parse_ints, read_sidecar, write_sidecar
from olm_tools.ndgrad import (
    AdamState,
    Graph,
    NonFiniteError,
    adam_step,
    as_tensor,
    numpy_ops,
    value_and_grad,
)
from olm_tools.rng import generator

if TYPE_CHECKING:
    from collections.abc import Sequence

    import numpy.typing as npt

    from olm_tools.datasets import Dataset
    from olm_tools.type import PathLike, Tensor

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "olm-denoiser/1"
# midpoints of the noise-level grid the blind oracle integrates over
BLIND_LEVELS = 64
# Gaussians along the ellipse in the manifold2d oracle
MANIFOLD_COMPONENTS = 32


class DivergenceError(RuntimeError):
    def __init__(self, msg: str, *, epoch: int, batch: int, loss: float) -> None:
        super().__init__(msg)
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


@dataclass(frozen=True)
class DenoiserModel:
    """
    A fully connected network with relu hidden layers, a linear output layer
    and no biases.

    Attributes
    ----------
    widths: tuple[int, ...]
        Layer widths from input to output; the first and last are both d.
    weights: tuple[Tensor, ...]
        One `widths[i] x widths[i + 1]` matrix per layer, applied to rows.
    """

    widths: tuple[int, ...]
    weights: tuple[Tensor, ...]
    activation: Literal["relu"] = "relu"

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or widths[0] != widths[-1] or min(widths) < 1:
            msg = f"Layer widths must start and end at the same positive d, got {widths}"
            raise ValueError(msg)
        weights = tuple(as_tensor(w) for w in self.weights)
        expected = list(zip(widths[:-1], widths[1:]))
        if [w.shape for w in weights] != expected:
            msg = f"Weight shapes {[w.shape for w in weights]} do not match widths {widths}"
            raise ValueError(msg)
        if self.activation != "relu":
            msg = f"Unsupported activation {self.activation!r}"
            raise ValueError(msg)
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return self.widths[0]

    @property
    def param_names(self) -> list[str]:
        return [f"w{i}" for i in range(len(self.weights))]

    def params(self) -> dict[str, Tensor]:
        return dict(zip(self.param_names, self.weights))

    def with_params(self, params: dict[str, Tensor]) -> DenoiserModel:
        return DenoiserModel(self.widths, tuple(params[n] for n in self.param_names), self.activation)

    def bind(self, ops: Any) -> list[Any]:
        return [ops.constant(w) for w in self.weights]

    def apply(self, ops: Any, y: Any, params: Sequence[Any] | None = None) -> Any:
        if params is None:
            params = self.bind(ops)
        h = y
        last = len(params) - 1
        for i, w in enumerate(params):
            h = ops.matmul(h, w)
            if i < last:
                h = ops.relu(h)
        return h


def hidden_widths(d: int) -> tuple[int, ...]:
    return (64, 64) if d <= 16 else (512, 512)


def init_model(widths: Sequence[int], seed: int) -> DenoiserModel:
    """
    A model with weights drawn uniformly from ±1/√fan_in.
    """
    widths = tuple(widths)
    rng = generator(seed, 0)
    weights = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
    return DenoiserModel(widths, tuple(weights))


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    sigma_min: float = Field(default=0.0, ge=0.0, le=1.0)
    sigma_max: float = Field(default=1.0, ge=0.0, le=1.0)
    batch: int = Field(default=256, ge=1)
    epochs: int = Field(default=20, ge=0)
    lr: float = Field(default=1e-3, gt=0)
    decay: float = Field(default=1.0, gt=0, le=1.0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    hidden: tuple[int, ...] | None = None
    seed: int = Field(ge=0)

    @model_validator(mode="after")
    def _check_sigma_range(self) -> TrainConfig:
        if self.sigma_min > self.sigma_max:
            msg = f"sigma_min ({self.sigma_min}) exceeds sigma_max ({self.sigma_max})"
            raise ValueError(msg)
        return self


def _loss_graph(model: DenoiserModel, d: int) -> Graph:
    graph = Graph()
    params = [graph.leaf(name, w) for name, w in model.params().items()]
    noisy = graph.leaf("noisy", np.zeros((1, d)))
    clean = graph.leaf("clean", np.zeros((1, d)))
    residual = graph.sub(model.apply(graph, noisy, params), clean)
    graph.set_root(graph.mean(graph.square(residual)))
    return graph


def fit_denoiser(
    train: Dataset | npt.ArrayLike,
    cfg: TrainConfig,
    *,
    model: DenoiserModel | None = None,
) -> tuple[DenoiserModel, list[float]]:
    """
    Train a blind denoiser by minimizing E‖f(x + σz) − x‖², with σ drawn
    uniformly from [sigma_min, sigma_max] for every example.

    Returns
    -------
    The trained model and the mean training loss of every epoch.
    """
    data = as_matrix(train)
    n, d = data.shape
    if n == 0:
        msg = "Cannot train a denoiser on an empty dataset"
        raise ValueError(msg)
    if model is None:
        model = init_model((d, *(cfg.hidden or hidden_widths(d)), d), cfg.seed)
    elif model.dim != d:
        msg = f"Model dimension {model.dim} does not match data dimension {d}"
        raise ValueError(msg)

    graph = _loss_graph(model, d)
    names = model.param_names
    params = model.params()
    state = AdamState.create(
        params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, decay=cfg.decay
    )
    history: list[float] = []
    batch = min(cfg.batch, n)
    for epoch in tqdm(range(cfg.epochs), desc="denoiser", disable=None):
        rng = generator(cfg.seed, 1, epoch)
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, batch)):
            clean = data[order[start : start + batch]]
            sigma = rng.uniform(cfg.sigma_min, cfg.sigma_max, (len(clean), 1))
            noisy = clean + sigma * rng.standard_normal(clean.shape)
            try:
                loss, grads = value_and_grad(
                    graph, {**params, "noisy": noisy, "clean": clean}, wrt=names
                )
            except NonFiniteError as e:
                msg = f"Denoiser training diverged at epoch {epoch}, batch {b}: {e}"
                raise DivergenceError(msg, epoch=epoch, batch=b, loss=float("nan")) from e
            params, state = adam_step(params, grads, state)
            if not all(np.all(np.isfinite(p)) for p in params.values()):
                msg = f"Denoiser weights became non-finite at epoch {epoch}, batch {b} (loss {loss})"
                raise DivergenceError(msg, epoch=epoch, batch=b, loss=loss)
            total += loss * len(clean)
        history.append(total / n)
        state = state.decayed()
        logger.info("Denoiser epoch %d: loss %.6g", epoch, history[-1])
    return model.with_params(params), history


def train_denoiser(train: Dataset | npt.ArrayLike, cfg: TrainConfig) -> DenoiserModel:
    return fit_denoiser(train, cfg)[0]


def _check_rows(model: Any, y: npt.ArrayLike) -> Tensor:
    rows = as_tensor(y)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.ndim != 2 or rows.shape[1] != model.dim:
        msg = f"Expected rows of width {model.dim}, got an array of shape {np.shape(y)}"
        raise ValueError(msg)
    return rows


def denoise(model: Any, y: npt.ArrayLike) -> Tensor:
    """
    The denoised estimate x̂(y) for each row of `y`.
    """
    rows = _check_rows(model, y)
    out = numpy_ops.value(model.apply(numpy_ops, rows))
    return out.reshape(np.shape(y))


def score(model: Any, y: npt.ArrayLike) -> Tensor:
    """
    The denoiser residual x̂(y) − y, equal to σ²∇log p_σ(y).
    """
    return denoise(model, y) - np.asarray(y, dtype=np.float64)


def _posterior_gain(cov: Tensor, sigma: float) -> Tensor:
    smoothed = cov + sigma**2 * np.eye(cov.shape[0])
    try:
        return np.linalg.solve(smoothed, cov)
    except np.linalg.LinAlgError as e:
        msg = f"Σ + σ²I is singular for σ = {sigma}"
        raise ValueError(msg) from e


def _check_gaussian(mean: npt.ArrayLike, cov: npt.ArrayLike) -> tuple[Tensor, Tensor]:
    mu = as_tensor(mean)
    sigma_x = as_tensor(cov)
    d = mu.shape[0] if mu.ndim == 1 else -1
    if mu.ndim != 1 or sigma_x.shape != (d, d):
        msg = f"Expected a length-d mean and a d x d covariance, got {mu.shape} and {sigma_x.shape}"
        raise ValueError(msg)
    if not np.allclose(sigma_x, sigma_x.T):
        msg = "Covariance must be symmetric"
        raise ValueError(msg)
    return mu, sigma_x


def analytic_gaussian_denoiser(
    mean: npt.ArrayLike, cov: npt.ArrayLike, sigma: float, y: npt.ArrayLike
) -> Tensor:
    """
    Posterior mean μ + Σ(Σ + σ²I)⁻¹(y − μ) of a Gaussian prior N(μ, Σ)
    observed in Gaussian noise of standard deviation `sigma`.
    """
    if sigma < 0:
        msg = f"Noise level must be non-negative, got {sigma}"
        raise ValueError(msg)
    mu, sigma_x = _check_gaussian(mean, cov)
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != mu.shape[0]:
        msg = f"Rows of width {y.shape[-1]} do not match a prior of dimension {mu.shape[0]}"
        raise ValueError(msg)
    if sigma == 0:
        return y.copy()
    return mu + (y - mu) @ _posterior_gain(sigma_x, sigma)


def gaussian_denoising_mse(cov: npt.ArrayLike, sigma: float) -> float:
    """
    Per-coordinate MSE of the Gaussian posterior mean at noise level `sigma`:
    tr(Σ − Σ(Σ + σ²I)⁻¹Σ) / d.
    """
    sigma_x = as_tensor(cov)
    if sigma == 0:
        return 0.0
    residual = sigma_x - sigma_x @ _posterior_gain(sigma_x, sigma)
    return float(np.trace(residual) / sigma_x.shape[0])


def _mixture_posterior_mean(
    ops: Any, y: Any, weights: Tensor, means: Tensor, covs: Tensor, levels: Tensor
) -> Any:
    """
    E[x | y] under the prior Σ_j π_j N(μ_j, C_j) with y = x + sz and the
    level s drawn uniformly from `levels`, for every row of `y` on `ops`.

    Each (component, level) pair is one term with precision P = (C + s²I)⁻¹.
    Its log evidence is −½yᵀPy + yᵀPμ + const and its posterior mean is
    yG + μ − μG with G = PC, so every term is evaluated by a few matmuls
    against stacked constants.
    """
    d = means.shape[1]
    precisions, gains, offsets, linear, consts = [], [], [], [], []
    for pi, mu, cov in zip(weights, means, covs):
        for s in levels:
            smoothed = cov + s**2 * np.eye(d)
            _, logdet = np.linalg.slogdet(smoothed)
            precision = np.linalg.inv(smoothed)
            gain = precision @ cov
            precisions.append(precision.ravel())
            gains.append(gain.ravel())
            offsets.append(mu - mu @ gain)
            linear.append(precision @ mu)
            consts.append(np.log(pi) - 0.5 * (mu @ precision @ mu + logdet + d * np.log(2 * np.pi)))
    n_terms = len(consts)
    # column a*d + b of `outer` holds y_a y_b
    pick_a = np.kron(np.eye(d), np.ones((1, d)))
    pick_b = np.tile(np.eye(d), (1, d))
    outer = ops.mul(ops.matmul(y, ops.constant(pick_a)), ops.matmul(y, ops.constant(pick_b)))
    log_evidence = ops.add(
        ops.sub(
            ops.matmul(y, ops.constant(np.stack(linear, axis=1))),
            ops.scale(ops.matmul(outer, ops.constant(np.stack(precisions, axis=1))), 0.5),
        ),
        ops.constant(np.array(consts)[None, :]),
    )
    # softmax over terms; the shift cancels in the ratio
    shift = np.max(ops.value(log_evidence), axis=1, keepdims=True)
    w = ops.exp(ops.sub(log_evidence, ops.constant(shift)))
    w = ops.div(w, ops.matmul(w, ops.constant(np.ones((n_terms, 1)))))
    # Σ_t w_t (yG_t)_c = Σ_a y_a (Σ_t w_t G_t[a, c])
    mixed_gain = ops.matmul(w, ops.constant(np.stack(gains)))
    collapse = np.tile(np.eye(d), (d, 1))
    linear_part = ops.matmul(ops.mul(ops.matmul(y, ops.constant(pick_a)), mixed_gain), ops.constant(collapse))
    return ops.add(linear_part, ops.matmul(w, ops.constant(np.stack(offsets))))


def _blind_levels() -> Tensor:
    return (np.arange(BLIND_LEVELS) + 0.5) / BLIND_LEVELS


@dataclass(frozen=True)
class GaussianOracle:
    """
    The exact MMSE denoiser for a Gaussian prior N(mean, cov).

    With a fixed `sigma` this is the affine posterior-mean map. With
    `sigma=None` it is the blind denoiser for noise levels drawn uniformly
    from [0, 1]: the posterior means at a grid of levels are averaged with
    weights given by the evidence N(y; μ, Σ + σ²I). Both forms run on either
    backend, so the oracle can stand in for a trained model anywhere.
    """

    mean: Tensor
    cov: Tensor
    sigma: float | None = None

    def __post_init__(self) -> None:
        mu, sigma_x = _check_gaussian(self.mean, self.cov)
        if self.sigma is not None and self.sigma < 0:
            msg = f"Noise level must be non-negative, got {self.sigma}"
            raise ValueError(msg)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "cov", sigma_x)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def bind(self, ops: Any) -> None:
        return None

    def apply(self, ops: Any, y: Any, params: Any = None) -> Any:
        if self.sigma is not None:
            mean = ops.constant(self.mean)
            gain = np.eye(self.dim) if self.sigma == 0 else _posterior_gain(self.cov, self.sigma)
            return ops.add(ops.matmul(ops.sub(y, mean), ops.constant(gain)), mean)
        return _mixture_posterior_mean(
            ops, y, np.ones(1), self.mean[None, :], self.cov[None, :, :], _blind_levels()
        )


@dataclass(frozen=True)
class GaussianMixtureOracle:
    """
    The exact MMSE denoiser for a mixture Σ_j π_j N(μ_j, C_j).

    Components may be degenerate, such as a Gaussian confined to a line.
    `sigma` has the meaning it has for `GaussianOracle`; at `sigma=0` the
    denoiser is the identity.
    """

    weights: Tensor
    means: Tensor
    covs: Tensor
    sigma: float | None = None

    def __post_init__(self) -> None:
        weights = as_tensor(self.weights)
        means = as_tensor(self.means)
        covs = as_tensor(self.covs)
        if means.ndim != 2 or weights.shape != (len(means),) or covs.shape != (*means.shape, means.shape[1]):
            msg = (
                f"Expected J weights, J x d means and J x d x d covariances, got shapes "
                f"{weights.shape}, {means.shape} and {covs.shape}"
            )
            raise ValueError(msg)
        if np.any(weights <= 0):
            msg = "Mixture weights must be positive"
            raise ValueError(msg)
        if not np.allclose(covs, np.swapaxes(covs, 1, 2)) or np.any(np.linalg.eigvalsh(covs) < -1e-12):
            msg = "Component covariances must be symmetric positive semi-definite"
            raise ValueError(msg)
        if self.sigma is not None and self.sigma < 0:
            msg = f"Noise level must be non-negative, got {self.sigma}"
            raise ValueError(msg)
        object.__setattr__(self, "weights", weights / weights.sum())
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def bind(self, ops: Any) -> None:
        return None

    def apply(self, ops: Any, y: Any, params: Any = None) -> Any:
        if self.sigma == 0:
            return y
        levels = _blind_levels() if self.sigma is None else np.array([self.sigma])
        return _mixture_posterior_mean(ops, y, self.weights, self.means, self.covs, levels)


def ksparse_oracle(scales: tuple[float, float] = KSPARSE_SCALES) -> GaussianMixtureOracle:
    """
    The blind oracle for `sample_ksparse2d`: two equally likely Gaussians,
    each confined to one coordinate axis.
    """
    covs = np.array([np.diag([scales[0] ** 2, 0.0]), np.diag([0.0, scales[1] ** 2])])
    return GaussianMixtureOracle(np.full(2, 0.5), np.zeros((2, 2)), covs)


def manifold_oracle(
    n_components: int = MANIFOLD_COMPONENTS,
    *,
    axes: tuple[float, float] = ELLIPSE_AXES,
    angle: float = ELLIPSE_ANGLE,
    jitter: float = ELLIPSE_JITTER,
) -> GaussianMixtureOracle:
    """
    A blind oracle for `sample_manifold2d`: equally weighted Gaussians at
    evenly spaced parameter angles of the ellipse. Each has the jitter
    variance along the normal and the variance of a uniform spread over its
    arc segment along the tangent.
    """
    if n_components < 3:
        msg = f"Need at least 3 components along the ellipse, got {n_components}"
        raise ValueError(msg)
    a, b = axes
    rotation = ellipse_rotation(angle)
    t = 2.0 * np.pi * np.arange(n_components) / n_components
    centres = np.stack([a * np.cos(t), b * np.sin(t)], axis=1) @ rotation.T
    tangent = np.stack([-a * np.sin(t), b * np.cos(t)], axis=1) @ rotation.T
    speed = np.linalg.norm(tangent, axis=1, keepdims=True)
    tangent /= speed
    normal = tangent @ np.array([[0.0, 1.0], [-1.0, 0.0]])
    arc_var = (speed[:, 0] * 2.0 * np.pi / n_components) ** 2 / 12.0
    covs = (
        arc_var[:, None, None] * tangent[:, :, None] * tangent[:, None, :]
        + jitter**2 * normal[:, :, None] * normal[:, None, :]
    )
    return GaussianMixtureOracle(np.full(n_components, 1.0 / n_components), centres, covs)


def oracle_prior(kind: str) -> GaussianOracle | GaussianMixtureOracle:
    """
    The analytic blind denoiser for a synthetic 2-D dataset kind.
    """
    if kind == "gaussian2d":
        return GaussianOracle(np.zeros(2), GAUSSIAN_COV)
    if kind == "ksparse2d":
        return ksparse_oracle()
    if kind == "manifold2d":
        return manifold_oracle()
    msg = f"No analytic prior for dataset kind {kind!r}"
    raise ValueError(msg)


def denoising_mse(model: Any, x: npt.ArrayLike, sigma: float, seed: int) -> float:
    """
    Per-coordinate MSE of `model` on `x` corrupted by noise of level `sigma`.
    """
    clean = as_tensor(x)
    noisy = clean + sigma * generator(seed, 2).standard_normal(clean.shape)
    return float(np.mean((denoise(model, noisy) - clean) ** 2))


def save_model(model: DenoiserModel, directory: PathLike) -> None:
    """
    Store one OLMT tensor per layer plus a `model.txt` sidecar in `directory`.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, w in enumerate(model.weights):
        write(directory / f"layer_{i}.olmt", w)
    write_sidecar(
        directory / "model.txt",
        {"format": CHECKPOINT_FORMAT, "widths": model.widths, "activation": model.activation},
    )
    logger.info("Saved denoiser with widths %s to %s", model.widths, directory)


def load_model(directory: PathLike) -> DenoiserModel:
    directory = Path(directory)
    meta = read_sidecar(directory / "model.txt")
    if meta.get("format") != CHECKPOINT_FORMAT:
        msg = f"Unrecognized checkpoint format {meta.get('format')!r} in {directory}"
        raise ValueError(msg)
    widths = parse_ints(meta["widths"])
    weights = tuple(read(directory / f"layer_{i}.olmt") for i in range(len(widths) - 1))
    return DenoiserModel(widths, weights, meta.get("activation", "relu"))  # type: ignore[arg-type]
