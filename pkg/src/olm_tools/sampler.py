"""
Score-ascent sampling with a denoiser prior.

`sample_prior` draws unconditional samples, `sample_conditional` draws samples
consistent with linear measurements m = xM, and `mmse_estimate` averages
conditional samples into a reconstruction. `unrolled_reconstruct` runs the same
chains on a recorded `Graph` so the reconstruction can be differentiated with
respect to the measurement matrix.

Chains are batched: a call with B items and n samples per item advances
B * n rows at once, item-major. Each row draws its noise from its own
counter-based stream and stops on its own; stopped rows are frozen.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import fsspec
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from xarray import DataArray, Dataset

from olm_tools.measurement import MeasurementMatrix
from olm_tools.metrics import psnr_per_image
from olm_tools.ndgrad import Graph, Node, NonFiniteError, as_tensor, numpy_ops
from olm_tools.rng import chain_keys, counter_normal

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping, Sequence

    import numpy.typing as npt

    from olm_tools.type import PathLike, Tensor

logger = logging.getLogger(__name__)

M_LEAF = "M"


class SamplerError(RuntimeError):
    pass


class TraceBudgetError(MemoryError):
    pass


class SamplerConfig(BaseModel):
    """
    Step size `h`, injected-noise fraction `beta`, stopping level `sigma_end`,
    initial noise level `sigma_0` and the cap `t_max` on steps per chain.
    `fill` is the value unmeasured directions start from.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    h: float = Field(default=0.1, gt=0, le=1)
    beta: float = Field(default=0.1, ge=0, le=1)
    sigma_end: float = Field(default=0.01, gt=0)
    sigma_0: float = Field(default=1.0, gt=0)
    t_max: int = Field(default=1000, ge=1)
    fill: float = 0.5
    seed: int = Field(default=0, ge=0)
    trace_budget_mb: float = Field(default=2048.0, gt=0)

    @property
    def noise_gain(self) -> float:
        """
        γ_t / σ_t, the noise injected per unit of estimated noise level.
        """
        return math.sqrt(max((1 - self.beta * self.h) ** 2 - (1 - self.h) ** 2, 0.0))


@dataclass
class SampleTrace:
    """
    Per-step diagnostics of a batch of chains. Arrays indexed [step, row] hold
    NaN once a row has stopped.

    Attributes
    ----------
    sigma: Tensor
        The noise level that scaled the injected noise of each step.
    l_norm: Tensor
        Norm of the ascent direction (the score, or the conditional gradient).
    residual: Tensor | None
        max |yM − m| per row after the step, for conditional chains.
    steps: ndarray
        Number of updates applied to each row.
    hit_t_max: bool
        Whether any row was still active when the step cap was reached.
    """

    sigma: Tensor
    l_norm: Tensor
    residual: Tensor | None
    steps: npt.NDArray[np.int64]
    hit_t_max: bool
    states: list[Tensor] | None = field(default=None, repr=False)
    noises: list[Tensor] | None = field(default=None, repr=False)

    @property
    def n_steps(self) -> int:
        return int(self.steps.max(initial=0))


def _rms(ops: Any, v: Any, rows: int) -> Any:
    return ops.reshape(ops.sqrt(ops.mean(ops.square(v), axis=1)), (rows, 1))


def _matrix_of(m: MeasurementMatrix | npt.ArrayLike) -> Tensor:
    if isinstance(m, MeasurementMatrix):
        return m.matrix
    return as_tensor(m)


def _check_frozen(frozen_steps: npt.ArrayLike | None, rows: int) -> npt.NDArray[np.int64] | None:
    if frozen_steps is None:
        return None
    schedule = np.asarray(frozen_steps, dtype=np.int64)
    if schedule.shape != (rows,) or np.any(schedule < 0):
        msg = f"Expected {rows} non-negative step counts, got {schedule.shape} array"
        raise ValueError(msg)
    return schedule


@dataclass
class _Chains:
    """
    Loop state shared by the prior and conditional samplers.
    """

    ops: Any
    cfg: SamplerConfig
    keys: npt.NDArray[np.uint64]
    d: int
    frozen_steps: npt.NDArray[np.int64] | None = None
    strict: bool = False
    record_states: bool = False

    @property
    def rows(self) -> int:
        return len(self.keys)

    def noise(self, step: int) -> Tensor:
        return counter_normal(self.cfg.seed, self.keys, step, self.d)

    def run(
        self,
        y: Any,
        sigma: Any,
        direction: Callable[[Any, Any, int], tuple[Any, Any, Any]],
        *,
        inclusive: bool,
        residual: Callable[[Tensor], Tensor] | None = None,
    ) -> tuple[Any, SampleTrace]:
        """
        Advance every row until its noise level falls below `sigma_end`.

        A row keeps stepping while its current level is >= `sigma_end` when
        `inclusive`, else while it is strictly greater. With `frozen_steps`
        set, row r takes exactly `frozen_steps[r]` steps instead.
        """
        ops, cfg, rows = self.ops, self.cfg, self.rows
        gain = cfg.noise_gain
        ones = np.ones((1, self.d))
        active = np.ones(rows, dtype=bool)
        steps = np.zeros(rows, dtype=np.int64)
        sigmas: list[Tensor] = []
        norms: list[Tensor] = []
        residuals: list[Tensor] = []
        states: list[Tensor] = [np.array(ops.value(y))] if self.record_states else []
        noises: list[Tensor] = []
        limit = cfg.t_max if self.frozen_steps is None else int(self.frozen_steps.max(initial=0))
        budget = cfg.trace_budget_mb * 2**20

        t = 0
        while True:
            if self.frozen_steps is None:
                level = ops.value(sigma).reshape(rows)
                active &= level >= cfg.sigma_end if inclusive else level > cfg.sigma_end
            else:
                active &= self.frozen_steps > t
            if not active.any() or t >= limit:
                break
            t += 1
            g, noise_level, sigma = direction(y, sigma, t)
            z = self.noise(t)
            step = ops.scale(g, cfg.h)
            if gain > 0:
                coeff = ops.matmul(ops.scale(noise_level, gain), ops.constant(ones))
                step = ops.add(step, ops.mul(coeff, ops.constant(z)))
            if not active.all():
                mask = np.repeat(active[:, None].astype(np.float64), self.d, axis=1)
                step = ops.mul(step, ops.constant(mask))
            y = ops.add(y, step)

            y_value = ops.value(y)
            if not np.all(np.isfinite(y_value)):
                msg = f"Sampler state became non-finite at step {t}"
                raise NonFiniteError(msg)
            if ops.nbytes > budget:
                msg = (
                    f"Recorded sampler trace uses {ops.nbytes / 2**20:.1f} MiB after {t} steps, "
                    f"over the budget of {cfg.trace_budget_mb} MiB"
                )
                raise TraceBudgetError(msg)

            steps[active] += 1
            sigmas.append(np.where(active, ops.value(noise_level).reshape(rows), np.nan))
            norms.append(np.where(active, np.linalg.norm(ops.value(g), axis=1), np.nan))
            if residual is not None:
                residuals.append(np.where(active, residual(y_value), np.nan))
            if self.record_states:
                states.append(np.array(y_value))
                noises.append(z)

        hit_t_max = self.frozen_steps is None and bool(active.any())
        if hit_t_max:
            msg = (
                f"{int(active.sum())} of {rows} chains were still above sigma_end="
                f"{cfg.sigma_end} after t_max={cfg.t_max} steps"
            )
            if self.strict:
                raise SamplerError(msg)
            warnings.warn(msg, stacklevel=3)
        logger.debug("Chains finished after %d steps (%d rows)", t, rows)

        def stack(records: list[Tensor]) -> Tensor:
            return np.stack(records) if records else np.empty((0, rows))

        trace = SampleTrace(
            sigma=stack(sigmas),
            l_norm=stack(norms),
            residual=stack(residuals) if residual is not None else None,
            steps=steps,
            hit_t_max=hit_t_max,
            states=states if self.record_states else None,
            noises=noises if self.record_states else None,
        )
        return y, trace


def sample_prior(
    model: Any,
    cfg: SamplerConfig,
    n: int = 1,
    *,
    record_states: bool = False,
) -> tuple[Tensor, SampleTrace]:
    """
    Draw `n` samples from the prior embedded in `model` by ascending the
    denoiser residual with partial steps and injected noise.

    Chains start at N(fill, sigma_0² I). Every step computes the residual
    s = f(y) − y and its level σ = ‖s‖/√d, then moves y by h·s plus noise of
    scale γ = √((1 − βh)² − (1 − h)²)·σ. A chain stops once σ < sigma_end.

    Returns
    -------
    An `n x d` array of samples and the `SampleTrace` of the run.
    """
    if n < 1:
        msg = f"Number of samples must be at least 1, got {n}"
        raise ValueError(msg)
    d = model.dim
    ops = numpy_ops
    chains = _Chains(ops, cfg, chain_keys(n, 1), d, record_states=record_states)
    params = model.bind(ops)
    y = ops.add(ops.constant(np.full((n, d), cfg.fill)), ops.constant(cfg.sigma_0 * chains.noise(0)))

    def direction(y: Any, sigma: Any, t: int) -> tuple[Any, Any, Any]:
        g = ops.sub(model.apply(ops, y, params), y)
        level = _rms(ops, g, n)
        return g, level, level

    y, trace = chains.run(y, ops.constant(np.full((n, 1), cfg.sigma_0)), direction, inclusive=True)
    return np.array(ops.value(y)), trace


def conditional_direction(ops: Any, g: Any, y: Any, matrix: Any, m: Any) -> Any:
    """
    The conditional ascent direction l = (I − MMᵀ)g + M(m − Mᵀy).

    The first term is the denoiser residual `g` with its measured part
    removed, the second pulls the measured coordinates of `y` onto `m`.
    """
    mt = ops.transpose(matrix)
    prior_part = ops.sub(g, ops.matmul(ops.matmul(g, matrix), mt))
    measured_part = ops.matmul(ops.sub(m, ops.matmul(y, matrix)), mt)
    return ops.add(prior_part, measured_part)


def _conditional_chains(
    ops: Any,
    model: Any,
    matrix: Any,
    measurements: Any,
    cfg: SamplerConfig,
    n_samples: int,
    *,
    item_offset: int = 0,
    frozen_steps: npt.ArrayLike | None = None,
    strict: bool = False,
    record_states: bool = False,
) -> tuple[Any, SampleTrace]:
    """
    Run `n_samples` measurement-constrained chains for every row of
    `measurements` on `ops`. `matrix` and `measurements` are handles of `ops`.
    """
    d, k = ops.value(matrix).shape
    n_items = ops.value(measurements).shape[0]
    rows = n_items * n_samples
    chains = _Chains(
        ops,
        cfg,
        chain_keys(n_items, n_samples, item_offset=item_offset),
        d,
        frozen_steps=_check_frozen(frozen_steps, rows),
        strict=strict,
        record_states=record_states,
    )
    params = model.bind(ops)

    replicate = np.repeat(np.eye(n_items), n_samples, axis=0)
    m = ops.matmul(ops.constant(replicate), measurements)
    mt = ops.transpose(matrix)
    measured_ones = ops.reshape(ops.matmul(ops.matmul(ops.constant(np.ones((1, d))), matrix), mt), (d,))
    unmeasured = ops.scale(ops.sub(ops.constant(np.ones(d)), measured_ones), cfg.fill)
    mu = ops.add(ops.matmul(m, mt), unmeasured)
    y = ops.add(mu, ops.constant(cfg.sigma_0 * chains.noise(0)))

    def residual_of(y: Any) -> Any:
        return ops.sub(model.apply(ops, y, params), y)

    initial = residual_of(y)
    pending = [initial]

    def direction(y: Any, sigma: Any, t: int) -> tuple[Any, Any, Any]:
        g = pending.pop() if pending else residual_of(y)
        l = conditional_direction(ops, g, y, matrix, m)
        return l, sigma, _rms(ops, l, rows)

    m_value = ops.value(m)
    matrix_value = ops.value(matrix)

    def measurement_residual(y_value: Tensor) -> Tensor:
        return np.max(np.abs(y_value @ matrix_value - m_value), axis=1)

    logger.debug("Running %d conditional chains with d=%d, k=%d", rows, d, k)
    return chains.run(
        y, _rms(ops, initial, rows), direction, inclusive=False, residual=measurement_residual
    )


def _check_measurements(
    matrix: Tensor, m: npt.ArrayLike
) -> tuple[Tensor, bool]:
    values = as_tensor(m)
    single = values.ndim == 1
    if single:
        values = values[None, :]
    if values.ndim != 2 or values.shape[1] != matrix.shape[1]:
        msg = f"Expected measurements of width k={matrix.shape[1]}, got shape {np.shape(m)}"
        raise ValueError(msg)
    return values, single


def _check_model(model: Any, matrix: Tensor) -> None:
    if model.dim != matrix.shape[0]:
        msg = f"Model dimension {model.dim} does not match measurement dimension {matrix.shape[0]}"
        raise ValueError(msg)


def sample_conditional(
    model: Any,
    M: MeasurementMatrix | npt.ArrayLike,
    m: npt.ArrayLike,
    cfg: SamplerConfig,
    n_samples: int = 1,
    *,
    record_states: bool = False,
) -> tuple[Tensor, SampleTrace]:
    """
    Draw samples from the prior conditioned on the measurements `m = xM`.

    Each chain starts at μ = fill·(1 − MMᵀ1) + Mm plus noise and ascends the
    conditional gradient l = (I − MMᵀ)g(y) + M(m − Mᵀy), where g is the
    denoiser residual. The noise level driving the next step is ‖l‖/√d.

    Parameters
    ----------
    m: array-like
        A length-k measurement vector, or a B x k batch of them.

    Returns
    -------
    Samples of shape `(n_samples, d)` for a single measurement vector, else
    `(B, n_samples, d)`, and the trace of all B * n_samples chains.
    """
    if n_samples < 1:
        msg = f"Number of samples must be at least 1, got {n_samples}"
        raise ValueError(msg)
    matrix = _matrix_of(M)
    _check_model(model, matrix)
    values, single = _check_measurements(matrix, m)
    ops = numpy_ops
    y, trace = _conditional_chains(
        ops, model, ops.constant(matrix), ops.constant(values), cfg, n_samples,
        record_states=record_states,
    )
    samples = np.array(ops.value(y)).reshape(len(values), n_samples, matrix.shape[0])
    return (samples[0] if single else samples), trace


def _average(ops: Any, y: Any, n_items: int, n_samples: int, d: int) -> Any:
    return ops.mean(ops.reshape(y, (n_items, n_samples, d)), axis=1)


def mmse_estimate(
    model: Any,
    M: MeasurementMatrix | npt.ArrayLike,
    m: npt.ArrayLike,
    n_samples: int,
    cfg: SamplerConfig,
    *,
    item_offset: int = 0,
    frozen_steps: npt.ArrayLike | None = None,
) -> Tensor:
    """
    Approximate the posterior mean E[x | m] by averaging `n_samples`
    independent conditional samples per measurement vector.

    `item_offset` is the global index of the first measurement vector, which
    keys the noise streams. `frozen_steps` replays a fixed number of steps per
    chain instead of applying the stopping rule.
    """
    if n_samples < 1:
        msg = f"Number of samples must be at least 1, got {n_samples}"
        raise ValueError(msg)
    matrix = _matrix_of(M)
    _check_model(model, matrix)
    values, single = _check_measurements(matrix, m)
    ops = numpy_ops
    y, _ = _conditional_chains(
        ops, model, ops.constant(matrix), ops.constant(values), cfg, n_samples,
        item_offset=item_offset, frozen_steps=frozen_steps,
    )
    estimate = np.array(_average(ops, y, len(values), n_samples, matrix.shape[0]))
    return estimate[0] if single else estimate


@dataclass
class UnrolledReconstruction:
    """
    A recorded reconstruction. `estimate` is the node holding the B x d MMSE
    estimate; the measurement matrix is the leaf named `leaf`.
    """

    graph: Graph
    estimate: Node
    leaf: str
    steps: npt.NDArray[np.int64]
    trace: SampleTrace

    @property
    def value(self) -> Tensor:
        return self.graph.value(self.estimate)


def unrolled_reconstruct(
    model: Any,
    M: MeasurementMatrix | npt.ArrayLike,
    x: npt.ArrayLike,
    cfg: SamplerConfig,
    n_samples: int,
    *,
    item_offset: int = 0,
    frozen_steps: npt.ArrayLike | None = None,
    measurement_noise: npt.ArrayLike | None = None,
    strict: bool = True,
) -> UnrolledReconstruction:
    """
    Reconstruct the rows of `x` from their measurements xM while recording
    the computation on a `Graph` with M as the leaf `"M"`.

    The forward value is bit-identical to `mmse_estimate(model, M, x @ M, ...)`
    under the same seeds. Injected noise enters as constants, and the number
    of steps of every chain is fixed at the count realized in this pass (or
    given by `frozen_steps`), so the recorded map is differentiable in M.

    Parameters
    ----------
    measurement_noise: array-like, optional
        B x k noise added to the measurements before reconstruction.
    strict: bool
        Raise `SamplerError` rather than warn when a chain reaches `t_max`.
    """
    if n_samples < 1:
        msg = f"Number of samples must be at least 1, got {n_samples}"
        raise ValueError(msg)
    matrix = _matrix_of(M)
    _check_model(model, matrix)
    data = as_tensor(x)
    if data.ndim != 2 or data.shape[1] != matrix.shape[0]:
        msg = f"Expected rows of width {matrix.shape[0]}, got shape {data.shape}"
        raise ValueError(msg)

    graph = Graph()
    leaf = graph.leaf(M_LEAF, matrix)
    m = graph.matmul(graph.constant(data), leaf)
    if measurement_noise is not None:
        noise = as_tensor(measurement_noise)
        if noise.shape != (data.shape[0], matrix.shape[1]):
            msg = f"Measurement noise of shape {noise.shape} does not match {(data.shape[0], matrix.shape[1])}"
            raise ValueError(msg)
        m = graph.add(m, graph.constant(noise))
    y, trace = _conditional_chains(
        graph, model, leaf, m, cfg, n_samples,
        item_offset=item_offset, frozen_steps=frozen_steps, strict=strict,
    )
    estimate = _average(graph, y, data.shape[0], n_samples, matrix.shape[0])
    return UnrolledReconstruction(graph, estimate, M_LEAF, trace.steps, trace)


def project(
    M: MeasurementMatrix | npt.ArrayLike, x: npt.ArrayLike, mean: npt.ArrayLike | None = None
) -> Tensor:
    """
    Linear reconstruction mean + (x − mean)MMᵀ from the measurements alone.
    """
    matrix = _matrix_of(M)
    data = np.asarray(x, dtype=np.float64)
    center = np.zeros(matrix.shape[0]) if mean is None else np.asarray(mean, dtype=np.float64)
    return center + (data - center) @ matrix @ matrix.T


def trace_to_csv(trace: SampleTrace, path: PathLike) -> None:
    """
    Write one line per (step, chain) with columns t, chain, sigma, l_norm and
    residual. Steps after a chain stopped are omitted.
    """
    n_steps, rows = trace.sigma.shape
    coords = {"t": np.arange(1, n_steps + 1), "chain": np.arange(rows)}
    variables = {
        "sigma": DataArray(trace.sigma, dims=("t", "chain"), coords=coords),
        "l_norm": DataArray(trace.l_norm, dims=("t", "chain"), coords=coords),
    }
    residual = trace.residual if trace.residual is not None else np.full_like(trace.sigma, np.nan)
    variables["residual"] = DataArray(residual, dims=("t", "chain"), coords=coords)
    frame = Dataset(variables).to_dataframe().dropna(subset=["sigma"]).reset_index()
    with fsspec.open(str(path), mode="w") as fh:
        frame.to_csv(fh, columns=["t", "chain", "sigma", "l_norm", "residual"], index=False)


def parameter_study(
    model: Any,
    M: MeasurementMatrix | npt.ArrayLike,
    x: npt.ArrayLike,
    cfg: SamplerConfig,
    grid: Mapping[str, Sequence[float]],
    *,
    n_samples: int = 2,
) -> list[dict[str, float | str]]:
    """
    Mean reconstruction PSNR on `x` when one sampler parameter at a time is
    varied over `grid`, all others held at their values in `cfg`.

    Returns
    -------
    One record `{"param", "value", "psnr"}` per grid point. Exact
    reconstructions are left out of the mean.
    """
    matrix = _matrix_of(M)
    data = as_tensor(x)
    measurements = data @ matrix
    records: list[dict[str, float | str]] = []
    for name, values in grid.items():
        if name not in SamplerConfig.model_fields:
            msg = f"Unknown sampler parameter {name!r}"
            raise ValueError(msg)
        for value in values:
            varied = SamplerConfig.model_validate({**cfg.model_dump(), name: value})
            xhat = mmse_estimate(model, matrix, measurements, n_samples, varied)
            scores = psnr_per_image(data, xhat)
            finite = scores[np.isfinite(scores)]
            mean = float(finite.mean()) if finite.size else float("inf")
            records.append({"param": name, "value": float(value), "psnr": mean})
            logger.info("Sampler %s=%g: mean PSNR %.3f dB", name, value, mean)
    return records
