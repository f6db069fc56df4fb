"""Fields-of-Experts prior and MAP denoising by gradient ascent.

The log-prior of an image ``I`` under a bank of filters ``J_i`` with expert
weights ``alpha_i`` is::

    log p(I) = -sum_p sum_i alpha_i * log(1 + 0.5 * (J_i . I_p)^2)

where ``I_p`` is the mirror-padded patch centred on pixel ``p``.  MAP
inference adds the Gaussian log-likelihood ``-|N - I|^2 / (2 sigma^2)`` and
climbs the sum with fixed-step gradient ascent starting from ``N``.
"""

import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy import sparse

from .errors import DimensionError, DivergenceError, ValidationError
from .imaging import (
    as_image,
    as_kernel,
    atomic_write_bytes,
    check_same_shape,
    filter_responses,
)

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6

#: Unit filters of the shipped fallback bank, in bank order.
_FALLBACK_SHAPES = {
    "dx": [[0, 0, 0], [0, -1, 1], [0, 0, 0]],
    "dy": [[0, 0, 0], [0, -1, 0], [0, 1, 0]],
    "diag": [[0, 0, 0], [0, -1, 0], [0, 0, 1]],
    "anti_diag": [[0, 0, 0], [0, -1, 0], [1, 0, 0]],
    "dxx": [[0, 0, 0], [1, -2, 1], [0, 0, 0]],
    "dyy": [[0, 1, 0], [0, -2, 0], [0, 1, 0]],
    "dxy": [[1, 0, -1], [0, 0, 0], [-1, 0, 1]],
    "laplacian": [[0, 1, 0], [1, -4, 1], [0, 1, 0]],
}

#: Response scale of the fallback filters.  Small-amplitude texture and
#: noise stay in the expert's quadratic region; only steps of roughly 70
#: grey levels or more reach its heavy tail (|r| > sqrt 2).
FALLBACK_SCALE = 0.02


@dataclass(frozen=True, eq=False)
class FilterBank:
    """``K`` square filters of one odd size with positive expert weights."""

    filters: np.ndarray
    alphas: np.ndarray

    def __post_init__(self):
        filters = np.asarray(self.filters, dtype=np.float64)
        alphas = np.asarray(self.alphas, dtype=np.float64).reshape(-1)
        if filters.ndim != 3 or filters.shape[0] < 1:
            raise ValidationError(f"filters must have shape (K, s, s) with K >= 1, got {filters.shape}")
        for f in filters:
            as_kernel(f)
        if alphas.shape[0] != filters.shape[0]:
            raise ValidationError(
                f"{alphas.shape[0]} expert weights for {filters.shape[0]} filters"
            )
        if not np.all(np.isfinite(alphas)) or np.any(alphas <= 0):
            raise ValidationError("expert weights must be finite and > 0")
        filters.flags.writeable = False
        alphas.flags.writeable = False
        object.__setattr__(self, "filters", filters)
        object.__setattr__(self, "alphas", alphas)

    @property
    def size(self):
        return self.filters.shape[1]

    def __len__(self):
        return self.filters.shape[0]

    def __eq__(self, other):
        if not isinstance(other, FilterBank):
            return NotImplemented
        return np.array_equal(self.filters, other.filters) and np.array_equal(self.alphas, other.alphas)

    def key(self):
        return (self.filters.shape, self.filters.tobytes(), self.alphas.tobytes())

    def to_json(self):
        return {
            "size": int(self.size),
            "alphas": [float(a) for a in self.alphas],
            "filters": [[float(c) for c in f.ravel()] for f in self.filters],
        }

    @classmethod
    def from_json(cls, obj):
        try:
            size = obj["size"]
            alphas = obj["alphas"]
            raw = obj["filters"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"filter bank missing field {exc}") from None
        if not isinstance(size, int) or size < 1 or size % 2 == 0:
            raise ValidationError(f"filter size must be an odd positive integer, got {size!r}")
        if not isinstance(raw, list) or not isinstance(alphas, list):
            raise ValidationError("'filters' and 'alphas' must be lists")
        filters = []
        for n, f in enumerate(raw):
            if not isinstance(f, list) or len(f) != size * size:
                raise ValidationError(f"filter {n} does not have {size}x{size} coefficients")
            filters.append(np.asarray(f, dtype=np.float64).reshape(size, size))
        if not filters:
            raise ValidationError("filter bank has no filters")
        return cls(np.stack(filters), np.asarray(alphas, dtype=np.float64))


def fallback_bank(scale=FALLBACK_SCALE):
    """Hand-built zero-mean 3x3 bank: first and second differences, Laplacian."""
    filters = scale * np.array(list(_FALLBACK_SHAPES.values()), dtype=np.float64)
    return FilterBank(filters, np.ones(len(filters)))


def load_filter_bank(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed filter bank JSON ({exc})") from exc
    return FilterBank.from_json(obj)


def dumps_filter_bank(bank):
    obj = bank.to_json()
    filters = ",\n    ".join(json.dumps(f) for f in obj["filters"])
    return (
        "{\n"
        f'  "size": {obj["size"]},\n'
        f'  "alphas": {json.dumps(obj["alphas"])},\n'
        f'  "filters": [\n    {filters}\n  ]\n'
        "}\n"
    )


def save_filter_bank(bank, path):
    atomic_write_bytes(path, dumps_filter_bank(bank).encode("utf-8"))


def bundled_bank():
    """The fallback bank as shipped in the package data."""
    text = resources.files("ensemble_denoise").joinpath("data/fallback_bank.json").read_text()
    return FilterBank.from_json(json.loads(text))


@dataclass(frozen=True)
class FoeParams:
    sigma: float
    iterations: int = 5000
    step_size: float = None
    clamp_each_step: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError("sigma must be > 0")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValidationError("step_size must be > 0")

    def step_for(self, bank, shape):
        """Explicit step, or ``1 / L`` with ``L`` the posterior's curvature bound."""
        if self.step_size is not None:
            return float(self.step_size)
        return 1.0 / (1.0 / self.sigma ** 2 + prior_operator(bank, shape).curvature)


class PriorOperator:
    """The bank's mirror-padded filters for one image shape as a sparse matrix.

    Row ``k * H * W + p`` holds filter ``k`` centred at pixel ``p``, with the
    mirror padding folded into the column indices, so ``matrix.T`` is the
    exact adjoint including the border.
    """

    def __init__(self, bank, shape):
        h, w = shape
        k, s, _ = bank.filters.shape
        r = s // 2
        if s > 2 * min(shape):
            raise DimensionError(f"filter size {s} too large for a {h}x{w} image")
        ys, xs = np.mgrid[0:h, 0:w]
        rows, cols, vals = [], [], []
        for i in range(k):
            for u in range(s):
                for v in range(s):
                    c = bank.filters[i, u, v]
                    if c == 0.0:
                        continue
                    yy = _reflect(ys + u - r, h)
                    xx = _reflect(xs + v - r, w)
                    rows.append(i * h * w + (ys * w + xs).ravel())
                    cols.append((yy * w + xx).ravel())
                    vals.append(np.full(h * w, c))
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.intp)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.intp)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        self.shape = (h, w)
        self.matrix = sparse.csr_matrix((vals, (rows, cols)), shape=(k * h * w, h * w))
        self.adjoint = self.matrix.T.tocsr()
        self.weights = np.repeat(bank.alphas, h * w)
        self.curvature = self._curvature()

    def responses(self, img):
        return self.matrix @ img.ravel()

    def grad(self, img):
        """Gradient of the log-prior at ``img``."""
        r = self.responses(img)
        return -(self.adjoint @ (self.weights * expert_psi(r))).reshape(self.shape)

    def _curvature(self, iterations=200):
        # Power iteration on A^T diag(alpha) A from a fixed start.  Since
        # |psi'| <= 1 this bounds the log-prior's curvature; the estimate
        # approaches from below, so a 10% margin is added.
        n = self.matrix.shape[1]
        x = np.cos(np.arange(n) * 0.7) + 0.5
        lam = 0.0
        for _ in range(iterations):
            y = self.adjoint @ (self.weights * (self.matrix @ x))
            lam = float(np.linalg.norm(y))
            if lam == 0.0:
                return 0.0
            x = y / lam
        return 1.1 * lam


def _reflect(idx, n):
    idx = np.mod(idx, 2 * n)
    return np.where(idx >= n, 2 * n - 1 - idx, idx)


@lru_cache(maxsize=32)
def _cached_operator(key, shape):
    (fshape, fbytes, abytes) = key
    filters = np.frombuffer(fbytes).reshape(fshape)
    alphas = np.frombuffer(abytes)
    return PriorOperator(FilterBank(filters.copy(), alphas.copy()), shape)


def prior_operator(bank, shape):
    return _cached_operator(bank.key(), tuple(shape))


def expert_log(responses):
    return np.log1p(0.5 * responses * responses)


def expert_psi(responses):
    """Derivative of ``log(1 + r^2 / 2)``."""
    return responses / (1.0 + 0.5 * responses * responses)


def log_prior(img, bank):
    img = as_image(img)
    resp = filter_responses(img, bank.filters)
    per_filter = expert_log(resp).sum(axis=(1, 2))
    return -float(np.dot(bank.alphas, per_filter))


def grad_log_prior(img, bank):
    img = as_image(img)
    return prior_operator(bank, img.shape).grad(img)


def log_likelihood(img, noisy, sigma):
    return -float(np.sum((noisy - img) ** 2)) / (2.0 * sigma ** 2)


def log_posterior(img, noisy, bank, sigma):
    return log_likelihood(img, noisy, sigma) + log_prior(img, bank)


def grad_log_posterior(img, noisy, bank, params):
    img = as_image(img)
    noisy = as_image(noisy, "noisy")
    check_same_shape(img, noisy)
    return (noisy - img) / params.sigma ** 2 + grad_log_prior(img, bank)


def denoise_foe(noisy, bank, params, callback=None):
    """MAP estimate by fixed-step gradient ascent from the noisy image.

    ``callback(step, image)`` is invoked after every step when given.
    Raises :class:`DivergenceError` if any pixel magnitude exceeds 1e6.
    """
    noisy = as_image(noisy, "noisy")
    op = prior_operator(bank, noisy.shape)
    step = params.step_for(bank, noisy.shape)
    inv_var = 1.0 / params.sigma ** 2
    img = noisy.copy()
    for n in range(1, params.iterations + 1):
        img = img + step * ((noisy - img) * inv_var + op.grad(img))
        if params.clamp_each_step:
            np.clip(img, 0.0, 255.0, out=img)
        peak = float(np.max(np.abs(img)))
        if not peak <= DIVERGENCE_LIMIT:
            raise DivergenceError(n, peak if math.isfinite(peak) else math.inf)
        if callback is not None:
            callback(n, img)
    return img
