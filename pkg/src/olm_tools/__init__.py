from olm_tools._version import version

__version__ = version

from olm_tools.baselines import fast_ica, pca, random_orthonormal
from olm_tools.denoiser import analytic_gaussian_denoiser, denoise, score, train_denoiser
from olm_tools.experiment import run_experiment, sweep_2d
from olm_tools.householder import householder_assemble, null_space_basis
from olm_tools.measurement import MeasurementMatrix
from olm_tools.optimize import olm_noise_robust, olm_optimize, olm_sequential
from olm_tools.report import render_report
from olm_tools.sampler import mmse_estimate, sample_conditional, sample_prior, unrolled_reconstruct

__all__ = [
    "MeasurementMatrix",
    "analytic_gaussian_denoiser",
    "denoise",
    "fast_ica",
    "householder_assemble",
    "mmse_estimate",
    "null_space_basis",
    "olm_noise_robust",
    "olm_optimize",
    "olm_sequential",
    "pca",
    "random_orthonormal",
    "render_report",
    "run_experiment",
    "sample_conditional",
    "sample_prior",
    "score",
    "sweep_2d",
    "train_denoiser",
    "unrolled_reconstruct",
]
