"""PSNR and SSIM image quality metrics.

Inputs are compared as given; nothing is clamped or quantized first.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .imaging import as_image, check_same_shape

PEAK = 255.0
C1 = (0.01 * PEAK) ** 2
C2 = (0.03 * PEAK) ** 2

#: PSNR returned for identical images.  It is produced explicitly (never by
#: dividing by a zero MSE); use :func:`is_identical` to test for it.
IDENTICAL = math.inf


def is_identical(psnr_db):
    return psnr_db == IDENTICAL


def mse(a, b):
    a = as_image(a, "a")
    b = as_image(b, "b")
    check_same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB for an 8-bit peak of 255.

    Returns :data:`IDENTICAL` when the images are equal.
    """
    err = mse(a, b)
    if err == 0.0:
        return IDENTICAL
    return 20.0 * math.log10(PEAK / math.sqrt(err))


def _window_sums(x, size):
    # sums over every size x size window, via a 2-D cumulative sum
    c = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    c[1:, 1:] = x.cumsum(0).cumsum(1)
    return c[size:, size:] - c[:-size, size:] - c[size:, :-size] + c[:-size, :-size]


def _gaussian_window(size, sigma):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _weighted_window_sums(x, weights):
    size = weights.shape[0]
    h, w = x.shape[0] - size + 1, x.shape[1] - size + 1
    out = np.zeros((h, w))
    for u in range(size):
        for v in range(size):
            out += weights[u, v] * x[u:u + h, v:v + w]
    return out


def ssim_map(a, b, window=8, gaussian=False, gaussian_sigma=1.5):
    """Per-window SSIM over all stride-1 windows lying fully inside the image.

    The default is a uniform ``window x window`` window with population
    (divide-by-N) moments.  ``gaussian=True`` switches to a normalized
    Gaussian-weighted window, conventionally ``window=11, gaussian_sigma=1.5``.
    """
    a = as_image(a, "a")
    b = as_image(b, "b")
    check_same_shape(a, b)
    if min(a.shape) < window:
        raise DimensionError(f"image {a.shape} smaller than the {window}x{window} SSIM window")
    if gaussian:
        wts = _gaussian_window(window, gaussian_sigma)
        def mean(x):
            return _weighted_window_sums(x, wts)
    else:
        n = float(window * window)
        def mean(x):
            return _window_sums(x, window) / n
    mu_a = mean(a)
    mu_b = mean(b)
    var_a = mean(a * a) - mu_a * mu_a
    var_b = mean(b * b) - mu_b * mu_b
    cov = mean(a * b) - mu_a * mu_b
    # unclamped moments keep the a == b ratio at exactly 1
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2)
    return num / den


def ssim(a, b, window=8, gaussian=False):
    """Mean structural similarity; exactly 1.0 when ``a`` equals ``b``."""
    return float(np.mean(ssim_map(a, b, window=window, gaussian=gaussian)))


@dataclass(frozen=True)
class QualityReport:
    psnr_db: float
    ssim: float
    mse: float

    def lines(self):
        shown = "identical" if is_identical(self.psnr_db) else repr(self.psnr_db)
        return [f"psnr_db={shown}", f"ssim={self.ssim!r}", f"mse={self.mse!r}"]

    def as_dict(self):
        return {
            "psnr_db": None if is_identical(self.psnr_db) else self.psnr_db,
            "identical": is_identical(self.psnr_db),
            "ssim": self.ssim,
            "mse": self.mse,
        }


def quality(reference, test):
    return QualityReport(psnr_db=psnr(reference, test), ssim=ssim(reference, test), mse=mse(reference, test))
