"""Bayesian ensemble of non-local means and Fields of Experts.

The NLM output ``D`` is modelled as a Gaussian observation of the clean
image with std ``sigma_nl``, alongside the noisy image ``N`` with std
``sigma_n``.  The product of the two Gaussians is again a Gaussian, centred
on the precision-weighted pseudo-observation::

    alpha = sigma_n^-2 / (sigma_n^-2 + sigma_nl^-2)
    beta  = sigma_nl^-2 / (sigma_n^-2 + sigma_nl^-2)
    N_pseudo = alpha * N + beta * D
    sigma_pseudo^2 = 1 / (sigma_n^-2 + sigma_nl^-2)

so the ensemble posterior is an ordinary FoE denoising problem on
``N_pseudo`` at noise level ``sigma_pseudo``.  The same algebra extends to
any number of Gaussian-modelled denoiser outputs.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .foe import FoeParams, denoise_foe
from .imaging import as_image, check_same_shape
from .nlm import NlmParams, denoise_nlm


def combine_weights(sigma_n, sigma_nl):
    """Return ``(alpha, beta, sigma_pseudo)`` for the two-source fusion."""
    if not (sigma_n > 0 and sigma_nl > 0):
        raise ValidationError(f"noise levels must be > 0, got {sigma_n}, {sigma_nl}")
    weights, sigma_pseudo = combine_weights_multi([sigma_n, sigma_nl])
    return weights[0], weights[1], sigma_pseudo


def combine_weights_multi(sigmas):
    """Precision weights for ``[sigma_n, sigma_1, ..., sigma_M]``.

    Returns ``(weights, sigma_pseudo)``.  The first ``M`` weights are
    computed as precision ratios and the last as the complement, so the
    weights sum to one.
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise ValidationError("need at least one noise level")
    if not all(s > 0 for s in sigmas):
        raise ValidationError(f"noise levels must be > 0, got {sigmas}")
    precisions = [1.0 / (s * s) for s in sigmas]
    total = math.fsum(precisions)
    weights = [p / total for p in precisions[:-1]]
    weights.append(1.0 - math.fsum(weights))
    return weights, math.sqrt(1.0 / total)


@dataclass(frozen=True)
class PseudoObservation:
    n_pseudo: np.ndarray
    sigma_pseudo: float
    alpha: float
    beta: float


def make_pseudo(noisy, d_nl, sigma_n, sigma_nl):
    noisy = as_image(noisy, "noisy")
    d_nl = as_image(d_nl, "d_nl")
    check_same_shape(noisy, d_nl)
    alpha, beta, sigma_pseudo = combine_weights(sigma_n, sigma_nl)
    return PseudoObservation(alpha * noisy + beta * d_nl, sigma_pseudo, alpha, beta)


def make_pseudo_multi(noisy, sigma_n, extra):
    """Pseudo-observation from the noisy image plus ``extra`` ``(image, sigma)`` pairs.

    Returns ``(n_pseudo, weights, sigma_pseudo)``.
    """
    noisy = as_image(noisy, "noisy")
    images = [noisy]
    for img, _ in extra:
        img = as_image(img, "denoised input")
        check_same_shape(noisy, img)
        images.append(img)
    weights, sigma_pseudo = combine_weights_multi([sigma_n] + [s for _, s in extra])
    n_pseudo = weights[0] * images[0]
    for w, img in zip(weights[1:], images[1:]):
        n_pseudo = n_pseudo + w * img
    return n_pseudo, weights, sigma_pseudo


@dataclass(frozen=True)
class EnsembleParams:
    sigma_n: float
    sigma_nl: float
    nlm: NlmParams = None
    foe: FoeParams = None
    extra_sigmas: tuple = field(default=())

    def __post_init__(self):
        if not (self.sigma_n > 0 and self.sigma_nl > 0):
            raise ValidationError("sigma_n and sigma_nl must be > 0")
        if self.nlm is None:
            object.__setattr__(self, "nlm", NlmParams.for_sigma(self.sigma_n))
        if self.foe is None:
            object.__setattr__(self, "foe", FoeParams(sigma=self.sigma_n))


@dataclass(frozen=True)
class EnsembleResult:
    denoised: np.ndarray
    d_nl: np.ndarray
    pseudo: PseudoObservation


def run_ensemble(noisy, bank, params, d_nl=None, extra=(), threads=1):
    """Full NLM -> pseudo-observation -> FoE pipeline.

    ``d_nl`` may be supplied to reuse an NLM result.  ``extra`` holds further
    ``(denoised_image, sigma)`` pairs fused alongside the NLM output.
    """
    noisy = as_image(noisy, "noisy")
    if d_nl is None:
        d_nl = denoise_nlm(noisy, params.nlm, threads=threads)
    if extra:
        n_pseudo, weights, sigma_pseudo = make_pseudo_multi(
            noisy, params.sigma_n, [(d_nl, params.sigma_nl)] + list(extra)
        )
        pseudo = PseudoObservation(n_pseudo, sigma_pseudo, weights[0], weights[1])
    else:
        pseudo = make_pseudo(noisy, d_nl, params.sigma_n, params.sigma_nl)
    foe_params = replace(params.foe, sigma=pseudo.sigma_pseudo)
    denoised = denoise_foe(pseudo.n_pseudo, bank, foe_params)
    return EnsembleResult(denoised, d_nl, pseudo)


def denoise_ensemble(noisy, bank, params, d_nl=None, extra=(), threads=1):
    return run_ensemble(noisy, bank, params, d_nl=d_nl, extra=extra, threads=threads).denoised
