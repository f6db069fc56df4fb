"""Non-local means denoising.

Each output pixel is a normalized exponential-weighted average of the
pixels ``j`` in a square search window around ``i``.  The weight of ``j``
decays with the Gaussian-weighted squared distance between the patches
centred on ``i`` and ``j``.  Patches near the border read mirror-padded
values; the search window itself is clipped to the image.

The expected-distance offset of ``2 sigma^2`` for noisy patches is constant
in ``j`` and cancels in the normalization, so it is not subtracted.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .imaging import as_image, extract_patch, mirror_pad

#: h = DEFAULT_H_FACTOR * sigma when only the noise level is known.  With a
#: unit-sum patch kernel, same-content noisy patches sit at distance about
#: 2 sigma^2, which this factor maps to a weight of about exp(-1.2).
DEFAULT_H_FACTOR = 1.3


@dataclass(frozen=True)
class NlmParams:
    h: float
    patch_radius: int = 3
    search_radius: int = 10
    a: float = 1.0

    def __post_init__(self):
        if self.patch_radius < 0:
            raise ValidationError("patch_radius must be >= 0")
        if self.search_radius < self.patch_radius:
            raise ValidationError("search_radius must be >= patch_radius")
        if not self.h > 0:
            raise ValidationError("h must be > 0")
        if not self.a > 0:
            raise ValidationError("kernel std a must be > 0")

    @classmethod
    def for_sigma(cls, sigma, h_factor=DEFAULT_H_FACTOR, **kwargs):
        return cls(h=h_factor * sigma, **kwargs)


def patch_kernel(patch_radius, a):
    """Isotropic Gaussian over patch offsets, normalized to sum to 1."""
    ax = np.arange(-patch_radius, patch_radius + 1, dtype=np.float64)
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * a * a))
    return g / g.sum()


def patch_distance(img, i, j, params):
    """Gaussian-weighted squared distance between the patches at ``i`` and ``j``."""
    img = as_image(img)
    g = patch_kernel(params.patch_radius, params.a)
    pi = extract_patch(img, i, params.patch_radius)
    pj = extract_patch(img, j, params.patch_radius)
    return float(np.sum(g * (pi - pj) ** 2))


def pixel_weights(img, i, params):
    """Normalized weights over the (clipped) search window of pixel ``i``.

    Returns ``(weights, rows, cols)`` where ``weights[k]`` belongs to pixel
    ``(rows[k], cols[k])``; entries are in row-major window order.
    """
    img = as_image(img)
    h, w = img.shape
    r, R = params.patch_radius, params.search_radius
    g = patch_kernel(r, params.a)
    padded = mirror_pad(img, r)
    r0, c0 = i
    if not (0 <= r0 < h and 0 <= c0 < w):
        raise IndexError(f"pixel {i} outside {h}x{w} image")
    centre = padded[r0:r0 + 2 * r + 1, c0:c0 + 2 * r + 1]
    rows, cols, dists = [], [], []
    for y in range(max(0, r0 - R), min(h, r0 + R + 1)):
        for x in range(max(0, c0 - R), min(w, c0 + R + 1)):
            rows.append(y)
            cols.append(x)
            dists.append(float(np.sum(g * (centre - padded[y:y + 2 * r + 1, x:x + 2 * r + 1]) ** 2)))
    raw = np.exp(-np.asarray(dists) / params.h ** 2)
    return raw / raw.sum(), np.asarray(rows), np.asarray(cols)


def _nlm_rows(padded, img, row0, row1, params, g):
    """Denoise output rows ``row0:row1``; ``padded`` is padded by r + R."""
    h, w = img.shape
    r, R = params.patch_radius, params.search_radius
    pad = r + R
    nr = row1 - row0
    inv_h2 = 1.0 / params.h ** 2
    # centre patches for the block, extended by r on each side
    centre = padded[row0 + R:row1 + R + 2 * r, R:R + w + 2 * r]
    ys = np.arange(row0, row1)[:, None]
    xs = np.arange(w)[None, :]
    num = np.zeros((nr, w))
    norm = np.zeros((nr, w))
    for dy in range(-R, R + 1):
        valid_y = (ys + dy >= 0) & (ys + dy < h)
        if not valid_y.any():
            continue
        for dx in range(-R, R + 1):
            valid = valid_y & (xs + dx >= 0) & (xs + dx < w)
            shifted = padded[row0 + R + dy:row1 + R + dy + 2 * r, R + dx:R + dx + w + 2 * r]
            diff2 = (centre - shifted) ** 2
            dist = np.zeros((nr, w))
            for u in range(2 * r + 1):
                for v in range(2 * r + 1):
                    dist += g[u, v] * diff2[u:u + nr, v:v + w]
            wt = np.where(valid, np.exp(-dist * inv_h2), 0.0)
            norm += wt
            num += wt * padded[pad + row0 + dy:pad + row1 + dy, pad + dx:pad + dx + w]
    return num / norm


def denoise_nlm(img, params, threads=1, block_rows=16):
    """Non-local means estimate of ``img``.

    Rows are processed in fixed blocks; each pixel's window accumulation
    order is fixed (row-major over offsets), so the result is bitwise
    identical for any ``threads``.
    """
    img = as_image(img)
    r, R = params.patch_radius, params.search_radius
    g = patch_kernel(r, params.a)
    padded = mirror_pad(img, r + R)
    h = img.shape[0]
    blocks = [(s, min(h, s + block_rows)) for s in range(0, h, block_rows)]

    def run(block):
        return _nlm_rows(padded, img, block[0], block[1], params, g)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return np.concatenate(parts, axis=0)
