"""Command-line entry point.

Exit status is 0 on success, 2 for usage errors (bad or missing flags,
missing input files, flag values that fail validation) and 1 for runtime
failures such as unreadable image data or diverging inference.  Output
files are written atomically, so a failed run leaves none behind.

Images ending in ``.npy`` are read and written as float64 arrays, which
keeps noisy images unquantized between commands; anything else is PGM.
"""

import argparse
import io
import json
import logging
import os
import sys
from contextlib import contextmanager
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .ensemble import EnsembleParams, run_ensemble
from .errors import ConfigError, DenoiseError, ImageIOError, ValidationError
from .evaluation import METHODS, ExperimentSpec, reference_comparison, run_experiment, write_results_csv
from .foe import (
    FALLBACK_SCALE,
    FoeParams,
    denoise_foe,
    fallback_bank,
    load_filter_bank,
    save_filter_bank,
)
from .imaging import as_image, atomic_write_bytes, read_image, write_image
from .metrics import quality
from .nlm import DEFAULT_H_FACTOR, NlmParams, denoise_nlm
from .noise import add_noise
from .tuning import DEFAULT_GRID, load_table, save_table, tune_table

log = logging.getLogger("ensemble_denoise")


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {cause}")


@contextmanager
def stage(name):
    try:
        yield
    except (DenoiseError, OSError) as exc:
        raise StageError(name, exc) from exc


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def load_any(path):
    if str(path).endswith(".npy"):
        try:
            return as_image(np.load(path, allow_pickle=False), os.path.basename(path))
        except ValueError as exc:
            raise ImageIOError(f"{path}: {exc}") from exc
    return read_image(path)


def save_any(img, path):
    if str(path).endswith(".npy"):
        buf = io.BytesIO()
        np.save(buf, np.ascontiguousarray(img, dtype=np.float64), allow_pickle=False)
        atomic_write_bytes(path, buf.getvalue())
    else:
        write_image(img, path)


def float_list(text):
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def name_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def sigma_nl_arg(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from None


def require_file(path, flag):
    if not os.path.isfile(path):
        raise UsageError(f"{flag}: no such file: {path}")


def require_dir(path, flag):
    if not os.path.isdir(path):
        raise UsageError(f"{flag}: no such directory: {path}")


def require_out_dir(path, flag):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"{flag}: output directory does not exist: {parent}")


def bank_from_args(args):
    if args.filters is None:
        return fallback_bank()
    require_file(args.filters, "--filters")
    try:
        return load_filter_bank(args.filters)
    except (ValidationError, OSError) as exc:
        raise UsageError(f"--filters: {exc}") from None


def nlm_params_from_args(args, sigma):
    h = args.h if args.h is not None else args.h_factor * sigma
    return NlmParams(h=h, patch_radius=args.patch_radius, search_radius=args.search_radius, a=args.kernel_a)


# ---------------------------------------------------------------------------
# subcommands: each returns a zero-argument callable doing the work, after
# validating every flag
# ---------------------------------------------------------------------------

def cmd_add_noise(args):
    require_file(args.input, "--in")
    require_out_dir(args.output, "--out")
    if not args.sigma > 0:
        raise UsageError("--sigma must be > 0")

    def run():
        with stage("read"):
            img = load_any(args.input)
        with stage("add-noise"):
            noisy = add_noise(img, args.sigma, args.seed)
        with stage("write"):
            save_any(noisy, args.output)
    return run


def cmd_denoise(args):
    require_file(args.input, "--in")
    require_out_dir(args.output, "--out")
    if args.nlm_out:
        require_out_dir(args.nlm_out, "--nlm-out")
    sigma = args.sigma
    nlm_params = nlm_params_from_args(args, sigma)
    foe_params = FoeParams(sigma=sigma, iterations=args.iterations, step_size=args.step_size,
                           clamp_each_step=args.clamp_each_step)
    bank = bank_from_args(args) if args.method in ("foe", "ensemble") else None
    params = None
    if args.method == "ensemble":
        if args.sigma_nl is None:
            raise UsageError("--method ensemble requires --sigma-nl")
        if args.sigma_nl == "auto":
            if args.table is None:
                raise UsageError("--sigma-nl auto requires --table")
            require_file(args.table, "--table")
            try:
                sigma_nl = load_table(args.table).lookup(sigma)
            except (ValidationError, OSError) as exc:
                raise UsageError(f"--table: {exc}") from None
            except KeyError as exc:
                raise UsageError(f"--table: {exc.args[0]}") from None
        else:
            sigma_nl = args.sigma_nl
        params = EnsembleParams(sigma, sigma_nl, nlm_params, foe_params)

    def run():
        with stage("read"):
            noisy = load_any(args.input)
        if args.method == "nlm":
            with stage("nlm"):
                out = denoise_nlm(noisy, nlm_params, threads=args.threads)
        elif args.method == "foe":
            with stage("foe"):
                out = denoise_foe(noisy, bank, foe_params)
        else:
            with stage("ensemble"):
                result = run_ensemble(noisy, bank, params, threads=args.threads)
            out = result.denoised
            log.info("sigma_pseudo=%r alpha=%r beta=%r", result.pseudo.sigma_pseudo,
                     result.pseudo.alpha, result.pseudo.beta)
            if args.nlm_out:
                with stage("write"):
                    save_any(result.d_nl, args.nlm_out)
        with stage("write"):
            save_any(out, args.output)
    return run


def cmd_tune(args):
    require_dir(args.train_dir, "--train-dir")
    require_out_dir(args.output, "--out")
    if args.report:
        require_out_dir(args.report, "--report")
    bank = bank_from_args(args)
    if any(not g > 0 for g in args.grid) or any(not s > 0 for s in args.sigmas):
        raise UsageError("--sigmas and --grid values must be > 0")

    def make_base(sigma):
        return EnsembleParams(sigma, args.grid[0], nlm_params_from_args(args, sigma),
                              FoeParams(sigma=sigma, iterations=args.iterations))

    for s in args.sigmas:
        make_base(s)  # validates NLM/FoE flags before any work
    timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds") if args.timestamp else None

    def run():
        with stage("tune"):
            table, reports = tune_table(args.train_dir, args.sigmas, args.grid, bank, seed=args.seed,
                                        make_base=make_base, metric=args.metric,
                                        threads=args.threads, timestamp=timestamp)
        for rep in reports:
            log.info("sigma %g -> sigma_nl %g", rep.sigma_n, rep.selected)
        with stage("write"):
            save_table(table, args.output)
            if args.report:
                text = json.dumps([r.as_dict() for r in reports], indent=2) + "\n"
                atomic_write_bytes(args.report, text.encode("utf-8"))
    return run


def cmd_evaluate(args):
    require_dir(args.image_dir, "--image-dir")
    require_out_dir(args.output, "--out")
    table = None
    if args.table is not None:
        require_file(args.table, "--table")
        try:
            table = load_table(args.table)
        except (ValidationError, OSError) as exc:
            raise UsageError(f"--table: {exc}") from None
    sigma_nl = None if args.sigma_nl in (None, "auto") else args.sigma_nl
    spec = ExperimentSpec(
        image_dir=args.image_dir, sigmas=args.sigmas, methods=args.methods, table=table,
        bank=bank_from_args(args), master_seed=args.seed, sigma_nl=sigma_nl,
        h_factor=args.h_factor, iterations=args.iterations, threads=args.threads,
    )
    try:
        spec.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from None

    def run():
        with stage("evaluate"):
            rows, aggregates = run_experiment(spec)
        with stage("write"):
            write_results_csv(args.output, rows, aggregates, include_timing=args.timing)
        if args.reference:
            for line in reference_comparison(aggregates):
                print(line)
    return run


def cmd_metrics(args):
    require_file(args.ref, "--ref")
    require_file(args.test, "--test")

    def run():
        with stage("read"):
            ref = load_any(args.ref)
            test = load_any(args.test)
        with stage("metrics"):
            report = quality(ref, test)
        if args.json:
            print(json.dumps(report.as_dict(), sort_keys=True))
        else:
            for line in report.lines():
                print(line)
    return run


def cmd_make_bank(args):
    require_out_dir(args.output, "--out")
    if not args.scale > 0:
        raise UsageError("--scale must be > 0")

    def run():
        with stage("write"):
            save_filter_bank(fallback_bank(args.scale), args.output)
    return run


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one-line diagnostic, exit status 2
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common(defaults):
    p = argparse.ArgumentParser(add_help=False)
    sup = {} if defaults else {"default": argparse.SUPPRESS}
    p.add_argument("--seed", type=int, help="master random seed (default 0)",
                   **({"default": 0} if defaults else sup))
    p.add_argument("--threads", type=int, help="worker threads (default 1)",
                   **({"default": 1} if defaults else sup))
    p.add_argument("--quiet", action="store_true", help="only report errors",
                   **({"default": False} if defaults else sup))
    return p


def _nlm_flags(p):
    g = p.add_argument_group("non-local means")
    g.add_argument("--patch-radius", type=int, default=3)
    g.add_argument("--search-radius", type=int, default=10)
    g.add_argument("--h", type=float, default=None, help="filtering degree (default h-factor * sigma)")
    g.add_argument("--h-factor", type=float, default=DEFAULT_H_FACTOR)
    g.add_argument("--kernel-a", type=float, default=1.0, help="patch Gaussian std in pixels")


def _foe_flags(p, with_step=True):
    g = p.add_argument_group("fields of experts")
    g.add_argument("--filters", default=None, help="filter bank JSON (default: built-in bank)")
    g.add_argument("--iterations", type=int, default=5000)
    if with_step:
        g.add_argument("--step-size", type=float, default=None,
                       help="gradient step (default: inverse curvature bound)")
        g.add_argument("--clamp-each-step", action="store_true")


def build_parser():
    parser = _Parser(prog="ensemble-denoise", description=__doc__.splitlines()[0],
                     parents=[_common(True)])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)
    common = _common(False)

    p = sub.add_parser("add-noise", parents=[common], help="add seeded Gaussian noise")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.set_defaults(handler=cmd_add_noise)

    p = sub.add_parser("denoise", parents=[common], help="denoise one image")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--sigma", type=float, required=True, help="input noise std")
    p.add_argument("--sigma-nl", type=sigma_nl_arg, default=None, help="number or 'auto'")
    p.add_argument("--table", default=None, help="tuned table for --sigma-nl auto")
    p.add_argument("--nlm-out", default=None, help="also write the NLM stage output")
    _nlm_flags(p)
    _foe_flags(p)
    p.set_defaults(handler=cmd_denoise)

    p = sub.add_parser("tune", parents=[common], help="grid-search sigma_nl on training images")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--sigmas", type=float_list, required=True)
    p.add_argument("--grid", type=float_list, default=list(DEFAULT_GRID))
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--report", default=None, help="write per-candidate scores as JSON")
    p.add_argument("--metric", choices=("psnr", "ssim"), default="psnr")
    p.add_argument("--timestamp", action="store_true", help="record the wall-clock time in the table")
    _nlm_flags(p)
    _foe_flags(p, with_step=False)
    p.set_defaults(handler=cmd_tune)

    p = sub.add_parser("evaluate", parents=[common], help="batch PSNR/SSIM evaluation to CSV")
    p.add_argument("--image-dir", required=True)
    p.add_argument("--sigmas", type=float_list, required=True)
    p.add_argument("--methods", type=name_list, default=list(METHODS))
    p.add_argument("--table", default=None)
    p.add_argument("--sigma-nl", type=sigma_nl_arg, default=None)
    p.add_argument("--h-factor", type=float, default=DEFAULT_H_FACTOR)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    p.add_argument("--reference", action="store_true",
                   help="print aggregates next to published reference means")
    _foe_flags(p, with_step=False)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("metrics", parents=[common], help="PSNR / SSIM / MSE of two images")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("make-bank", parents=[common], help="write the built-in filter bank")
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--scale", type=float, default=FALLBACK_SCALE, help="filter coefficient scale")
    p.set_defaults(handler=cmd_make_bank)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        work = args.handler(args)
    except UsageError as exc:
        parser.error(f"{args.command}: {exc}")
    except (ValidationError, ConfigError) as exc:
        parser.error(f"{args.command}: {exc}")
    try:
        work()
    except StageError as exc:
        print(f"{parser.prog}: {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
