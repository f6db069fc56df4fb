"""Batch evaluation of NLM, FoE and the ensemble over an image directory.

Each (image, sigma) cell gets one seeded noise realization shared by all
methods.  Per-image rows are followed by per (sigma, method) aggregates:
the mean and the standard error (sample std / sqrt(count)).
"""

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .ensemble import EnsembleParams, run_ensemble
from .errors import ConfigError
from .foe import FoeParams, denoise_foe, fallback_bank
from .imaging import atomic_write_bytes, read_image
from .metrics import psnr, ssim
from .nlm import DEFAULT_H_FACTOR, NlmParams, denoise_nlm
from .noise import add_noise, derive_seed
from .tuning import format_sigma, image_name, list_images

METHODS = ("ensemble", "foe", "nlm")
CSV_HEADER = ("image", "sigma", "method", "psnr_db", "ssim", "wall_ms")
MEAN_ROW = "__mean__"
STDERR_ROW = "__stderr__"


@dataclass
class ExperimentSpec:
    image_dir: str
    sigmas: list
    methods: list = field(default_factory=lambda: list(METHODS))
    table: object = None            # TunedTable, needed for "ensemble"
    bank: object = None             # FilterBank; defaults to the fallback bank
    master_seed: int = 0
    sigma_nl: float = None          # overrides the table for every sigma
    h_factor: float = DEFAULT_H_FACTOR
    iterations: int = 5000
    threads: int = 1

    def validate(self):
        if not self.sigmas:
            raise ConfigError("no noise levels given")
        if any(not s > 0 for s in self.sigmas):
            raise ConfigError("noise levels must be > 0")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if "ensemble" in self.methods:
            for s in self.sigmas:
                self.sigma_nl_for(s)

    def sigma_nl_for(self, sigma):
        if self.sigma_nl is not None:
            return float(self.sigma_nl)
        if self.table is None:
            raise ConfigError("ensemble needs a tuned table or an explicit sigma_nl")
        try:
            return self.table.lookup(sigma)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None


@dataclass(frozen=True)
class ResultRow:
    image: str
    sigma: float
    method: str
    psnr_db: float
    ssim: float
    wall_ms: float


@dataclass(frozen=True)
class AggregateRow:
    sigma: float
    method: str
    count: int
    psnr_mean: float
    psnr_stderr: float
    ssim_mean: float
    ssim_stderr: float


def _stderr(values):
    if len(values) < 2:
        return math.nan
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def aggregate(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r.sigma, r.method), []).append(r)
    out = []
    for (sigma, method), members in sorted(groups.items()):
        p = [m.psnr_db for m in members]
        s = [m.ssim for m in members]
        out.append(AggregateRow(sigma, method, len(members), float(np.mean(p)), _stderr(p),
                                float(np.mean(s)), _stderr(s)))
    return out


def _run_cell(spec, bank, path, clean, sigma):
    name = image_name(path)
    noisy = add_noise(clean, sigma, derive_seed(spec.master_seed, name, sigma))
    rows = []

    def record(method, out, elapsed):
        rows.append(ResultRow(name, float(sigma), method, psnr(clean, out), ssim(clean, out),
                              elapsed * 1000.0))

    nlm_params = NlmParams.for_sigma(sigma, spec.h_factor)
    d_nl, nlm_time = None, 0.0
    if "nlm" in spec.methods or "ensemble" in spec.methods:
        t0 = time.perf_counter()
        d_nl = denoise_nlm(noisy, nlm_params)
        nlm_time = time.perf_counter() - t0
        if "nlm" in spec.methods:
            record("nlm", d_nl, nlm_time)
    if "foe" in spec.methods:
        t0 = time.perf_counter()
        out = denoise_foe(noisy, bank, FoeParams(sigma, iterations=spec.iterations))
        record("foe", out, time.perf_counter() - t0)
    if "ensemble" in spec.methods:
        params = EnsembleParams(sigma, spec.sigma_nl_for(sigma), nlm_params,
                                FoeParams(sigma, iterations=spec.iterations))
        t0 = time.perf_counter()
        out = run_ensemble(noisy, bank, params, d_nl=d_nl).denoised
        record("ensemble", out, nlm_time + time.perf_counter() - t0)
    return rows


def run_experiment(spec):
    """Evaluate every (image, sigma, method); returns ``(rows, aggregates)``.

    Configuration problems raise :class:`ConfigError` before any image is
    processed.
    """
    spec.validate()
    bank = spec.bank if spec.bank is not None else fallback_bank()
    paths = list_images(spec.image_dir)
    images = [read_image(p) for p in paths]
    cells = [(p, img, float(s)) for p, img in zip(paths, images) for s in spec.sigmas]

    def run(cell):
        return _run_cell(spec, bank, *cell)

    if spec.threads > 1:
        with ThreadPoolExecutor(max_workers=spec.threads) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    rows = sorted((r for part in results for r in part),
                  key=lambda r: (r.image, r.sigma, r.method))
    return rows, aggregate(rows)


def _fmt(x):
    return "nan" if math.isnan(x) else repr(float(x))


def results_csv(rows, aggregates, include_timing=False):
    """CSV text; ``wall_ms`` is left empty unless ``include_timing``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        wall = _fmt(r.wall_ms) if include_timing else ""
        writer.writerow([r.image, format_sigma(r.sigma), r.method, _fmt(r.psnr_db), _fmt(r.ssim), wall])
    for a in aggregates:
        sigma = format_sigma(a.sigma)
        writer.writerow([MEAN_ROW, sigma, a.method, _fmt(a.psnr_mean), _fmt(a.ssim_mean), ""])
        writer.writerow([STDERR_ROW, sigma, a.method, _fmt(a.psnr_stderr), _fmt(a.ssim_stderr), ""])
    return buf.getvalue()


def write_results_csv(path, rows, aggregates, include_timing=False):
    atomic_write_bytes(path, results_csv(rows, aggregates, include_timing).encode("utf-8"))


def published_reference():
    """Published per-image PSNR values (dB) as a list of dicts."""
    text = resources.files("ensemble_denoise").joinpath("data/reference/published_psnr.json").read_text()
    return json.loads(text)["rows"]


def reference_comparison(aggregates):
    """Text lines putting aggregate PSNR next to the published means.

    The published values come from trained 5x5 filters on 512x512 images,
    so they are context, not a target.
    """
    published = published_reference()
    lines = []
    for a in aggregates:
        ref = [row[a.method] for row in published if row["sigma"] == a.sigma]
        ref_txt = f"{np.mean(ref):.2f}" if ref else "n/a"
        lines.append(f"sigma={format_sigma(a.sigma)} method={a.method} "
                     f"psnr_mean={a.psnr_mean:.2f} published_mean={ref_txt}")
    return lines
