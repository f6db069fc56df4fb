"""Grayscale denoising with non-local means, Fields of Experts and their
Bayesian ensemble."""

__version__ = "0.1.0"

from .ensemble import (
    EnsembleParams,
    EnsembleResult,
    PseudoObservation,
    combine_weights,
    combine_weights_multi,
    denoise_ensemble,
    make_pseudo,
    make_pseudo_multi,
    run_ensemble,
)
from .errors import (
    ConfigError,
    DenoiseError,
    DimensionError,
    DivergenceError,
    ImageIOError,
    ValidationError,
)
from .foe import (
    FilterBank,
    FoeParams,
    bundled_bank,
    denoise_foe,
    fallback_bank,
    grad_log_posterior,
    load_filter_bank,
    log_posterior,
    log_prior,
    save_filter_bank,
)
from .imaging import convolve_mirrored, extract_patch, read_image, write_image
from .metrics import IDENTICAL, psnr, quality, ssim
from .nlm import NlmParams, denoise_nlm, patch_distance
from .noise import add_noise, derive_seed
from .tuning import TunedTable, load_table, save_table, tune_sigma_nl, tune_table
