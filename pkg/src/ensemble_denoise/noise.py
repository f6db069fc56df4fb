"""Seeded additive white Gaussian noise.

Noise is drawn from numpy's PCG64 bit generator seeded with the given
64-bit integer, one standard normal per pixel in row-major order, then
scaled by ``sigma``.  Results are neither clamped nor quantized.
"""

import hashlib

import numpy as np

from .errors import ValidationError
from .imaging import as_image


def noise_field(shape, sigma, seed):
    if not sigma > 0:
        raise ValidationError(f"noise sigma must be > 0, got {sigma}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return sigma * rng.standard_normal(shape)


def add_noise(img, sigma, seed):
    """Return ``img + n`` with ``n ~ N(0, sigma^2)`` i.i.d. per pixel."""
    img = as_image(img)
    return img + noise_field(img.shape, sigma, seed)


def derive_seed(master_seed, image_name, sigma):
    """Stable 64-bit seed for one (image, noise level) pair."""
    key = f"{int(master_seed)}|{image_name}|{float(sigma)!r}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
