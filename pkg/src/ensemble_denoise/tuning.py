"""Grid search for the NLM residual std ``sigma_nl`` per input noise level.

For every training image the noisy instance and its NLM estimate are
computed once; each grid candidate then only reruns the pseudo-observation
and FoE stages.  The candidate with the highest mean score wins, ties going
to the smallest ``sigma_nl``.
"""

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .ensemble import EnsembleParams, denoise_ensemble
from .errors import ImageIOError, ValidationError
from .imaging import atomic_write_bytes, read_image
from .metrics import psnr, ssim
from .nlm import denoise_nlm
from .noise import add_noise, derive_seed

log = logging.getLogger(__name__)

DEFAULT_GRID = (1, 2, 3, 5, 10, 20, 30, 40, 50, 100, 250, 500)
DEFAULT_SIGMAS = (10, 15, 20, 25, 30, 40, 50, 75, 100)

IMAGE_SUFFIXES = (".pgm", ".png")


def list_images(directory):
    """Sorted image paths in ``directory``; raises if there are none."""
    try:
        names = sorted(os.listdir(directory))
    except OSError as exc:
        raise ImageIOError(f"{directory}: {exc.strerror or exc}") from exc
    paths = [os.path.join(directory, n) for n in names if n.lower().endswith(IMAGE_SUFFIXES)]
    if not paths:
        raise ImageIOError(f"{directory}: no .pgm or .png images found")
    return paths


def image_name(path):
    return os.path.splitext(os.path.basename(path))[0]


def dataset_id(paths):
    """Content hash identifying a set of image files."""
    digest = hashlib.sha256()
    for p in paths:
        digest.update(os.path.basename(p).encode("utf-8") + b"\0")
        with open(p, "rb") as fh:
            digest.update(hashlib.sha256(fh.read()).digest())
    return digest.hexdigest()[:16]


def format_sigma(value):
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)


@dataclass
class TunedTable:
    entries: dict
    grid: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = [float(g) for g in self.grid]
        self.entries = {float(k): float(v) for k, v in self.entries.items()}
        self.validate()

    def validate(self):
        if not self.grid:
            raise ValidationError("tuning grid is empty")
        if any(not g > 0 for g in self.grid):
            raise ValidationError("grid values must be > 0")
        for key, value in self.entries.items():
            if not (key > 0 and value > 0):
                raise ValidationError(f"entry {key} -> {value} is not positive")
            if value not in self.grid:
                raise ValidationError(f"entry {format_sigma(key)} -> {format_sigma(value)} is not in the grid")

    def lookup(self, sigma_n):
        """Exact-key lookup; there is no interpolation between noise levels."""
        try:
            return self.entries[float(sigma_n)]
        except KeyError:
            raise KeyError(f"no tuned sigma_nl for sigma {format_sigma(sigma_n)}") from None

    def to_json(self):
        return {
            "grid": [_num(g) for g in self.grid],
            "entries": {format_sigma(k): _num(v) for k, v in sorted(self.entries.items())},
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict) or not {"grid", "entries"} <= obj.keys():
            raise ValidationError("tuned table needs 'grid' and 'entries'")
        try:
            entries = {float(k): float(v) for k, v in obj["entries"].items()}
            grid = [float(g) for g in obj["grid"]]
        except (TypeError, ValueError, AttributeError) as exc:
            raise ValidationError(f"malformed tuned table ({exc})") from None
        return cls(entries, grid, dict(obj.get("metadata") or {}))


def _num(x):
    return int(x) if float(x).is_integer() else float(x)


def save_table(table, path):
    text = json.dumps(table.to_json(), indent=2, sort_keys=False) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def load_table(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc})") from exc
    return TunedTable.from_json(obj)


@dataclass
class TuningReport:
    sigma_n: float
    grid: list
    images: list
    scores: np.ndarray  # (images, candidates)
    metric: str = "psnr"

    @property
    def mean_scores(self):
        return self.scores.mean(axis=0)

    @property
    def selected(self):
        means = self.mean_scores
        best = max(range(len(self.grid)), key=lambda i: (means[i], -self.grid[i]))
        return self.grid[best]

    def as_dict(self):
        return {
            "sigma_n": self.sigma_n,
            "metric": self.metric,
            "selected": self.selected,
            "candidates": [
                {"sigma_nl": g, f"mean_{self.metric}": float(m)}
                for g, m in zip(self.grid, self.mean_scores)
            ],
        }


def tune_sigma_nl(training_dir, sigma_n, grid, bank, base=None, seed=0,
                  metric="psnr", nlm_fn=denoise_nlm, threads=1):
    """Select ``sigma_nl`` from ``grid`` for noise level ``sigma_n``.

    ``base`` supplies the NLM and FoE settings (its noise levels are
    replaced).  ``nlm_fn(noisy, nlm_params)`` is called exactly once per
    training image.  Returns ``(selected_sigma_nl, report)``.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ValidationError("tuning grid is empty")
    if metric not in ("psnr", "ssim"):
        raise ValidationError(f"unknown selection metric {metric!r}")
    score = psnr if metric == "psnr" else ssim
    if base is None:
        base = EnsembleParams(sigma_n=sigma_n, sigma_nl=grid[0])
    paths = list_images(training_dir)
    # read everything up front so an unreadable file fails before any work
    clean = [read_image(p) for p in paths]

    def evaluate(k):
        name = image_name(paths[k])
        noisy = add_noise(clean[k], sigma_n, derive_seed(seed, name, sigma_n))
        d_nl = nlm_fn(noisy, base.nlm)
        row = []
        for cand in grid:
            params = replace(base, sigma_n=sigma_n, sigma_nl=cand)
            out = denoise_ensemble(noisy, bank, params, d_nl=d_nl)
            row.append(score(clean[k], out))
        log.info("tuned %s at sigma %s", name, format_sigma(sigma_n))
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(evaluate, range(len(paths))))
    else:
        rows = [evaluate(k) for k in range(len(paths))]
    report = TuningReport(float(sigma_n), grid, [image_name(p) for p in paths],
                          np.asarray(rows, dtype=np.float64), metric)
    return report.selected, report


def tune_table(training_dir, sigmas, grid, bank, seed=0, make_base=None,
               metric="psnr", threads=1, timestamp=None, **kwargs):
    """Run :func:`tune_sigma_nl` for every noise level and collect a table.

    ``make_base(sigma_n)`` builds the per-level :class:`EnsembleParams`
    template.  ``timestamp`` is recorded verbatim in the metadata.
    """
    reports = []
    entries = {}
    for sigma_n in sigmas:
        base = make_base(sigma_n) if make_base else None
        selected, report = tune_sigma_nl(training_dir, sigma_n, grid, bank, base=base,
                                         seed=seed, metric=metric, threads=threads, **kwargs)
        entries[float(sigma_n)] = selected
        reports.append(report)
    paths = list_images(training_dir)
    metadata = {
        "training_set": os.path.basename(os.path.normpath(training_dir)),
        "training_set_hash": dataset_id(paths),
        "images": len(paths),
        "seed": seed,
        "metric": metric,
        "timestamp": timestamp,
    }
    return TunedTable(entries, list(grid), metadata), reports
