"""Command-line interface.

Every subcommand accepts ``--config FILE``: a JSON object whose keys are the
long flag names (dashes or underscores).  Values on the command line win over
the file.  Failures print a JSON object to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import estimate_strain_gp
from .data import DroppedRowsWarning, ingest_spectrum, load_pixel_stack, macro_pixel_average, save_pixel_stack
from .errors import BraggEdgeError
from .gp import KINDS
from .lsq import fit_santisteban, fit_tremsin
from .noise import SIGMA_24, NoiseModel, noise_analysis, write_noise_report
from .simulate import GridSpec, TrialConfig, generate_trial, write_manifest, write_spectrum_csv
from .study import (METHODS, StudySettings, metrics_csv, metrics_markdown, run_trial_study,
                    write_histogram_csv, write_records_csv)
from .xcorr import SGConfig, fit_xcorr_strain, sg_config_for_noise

EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _pair(text):
    return float(text)


def _add_common(p):
    p.add_argument("--config", help="JSON file with default values for the flags")


def _add_grid(p):
    p.add_argument("--grid-center", type=float)
    p.add_argument("--grid-half-width", type=float)
    p.add_argument("--grid-points", type=int)


def _add_trials(p):
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--trials", type=int, help="trials per group")
    p.add_argument("--groups", type=int)
    p.add_argument("--seed", type=int)
    _add_grid(p)


def build_parser():
    parser = _Parser(prog="braggedge", description="Bragg-edge strain estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write simulated trial spectra")
    _add_common(p)
    _add_trials(p)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("fit", help="estimate strain from one spectrum")
    _add_common(p)
    p.add_argument("spectrum", nargs="?", help="spectrum CSV")
    p.add_argument("--format", choices=("csv_tr", "csv_counts"))
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--edge-model", choices=("kropff", "vogel"))
    p.add_argument("--reference", help="stress-free spectrum CSV (xcorr, gp)")
    p.add_argument("--lambda0", type=float, help="stress-free edge wavelength")
    p.add_argument("--left", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--right", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--edge-window", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--noise-model", help="NoiseModel JSON supplying per-point noise")
    p.add_argument("--noise-scale", type=float, help="multiplier on the noise model std")
    p.add_argument("--sg-window", type=int)
    p.add_argument("--sg-order", type=int)
    p.add_argument("--kernels", nargs="+", choices=KINDS)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="JSON output file (default stdout)")

    p = sub.add_parser("trial-study", help="compare methods over random trials")
    _add_common(p)
    _add_trials(p)
    p.add_argument("--methods", nargs="+", choices=METHODS)
    p.add_argument("--workers", type=int)
    p.add_argument("--kernels", nargs="+", choices=KINDS)
    p.add_argument("--samples", type=int)
    p.add_argument("--bins", type=int, help="histogram bins")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("noise-analysis", help="fit the variance law to spectra")
    _add_common(p)
    p.add_argument("spectra", nargs="*", help="spectrum CSV files")
    p.add_argument("--format", choices=("csv_tr", "csv_counts"))
    p.add_argument("--bin-edges", type=float, nargs="+")
    p.add_argument("--left", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--right", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--report", help="per-bin CSV report")
    p.add_argument("--out", help="NoiseModel JSON output (default stdout)")

    p = sub.add_parser("macro-bin", help="average p x p pixel blocks")
    _add_common(p)
    p.add_argument("stack", nargs="?", help="input .npz with wavelengths and spectra")
    p.add_argument("--p", type=int)
    p.add_argument("--out", help="output .npz")
    return parser


DEFAULTS = {
    "simulate": dict(noise_scale=1.0, trials=100, groups=10, seed=0, out="simulated"),
    "fit": dict(format="csv_tr", method="gp", edge_model="kropff", noise_scale=1.0,
                samples=1000, seed=0, kernels=["squared_exponential"]),
    "trial-study": dict(noise_scale=1.0, trials=100, groups=10, seed=0, methods=list(METHODS),
                        workers=1, samples=1000, bins=40, out="study",
                        kernels=["squared_exponential"]),
    "noise-analysis": dict(format="csv_tr", bin_edges=[0.1, 0.15, 0.3, 0.35, 0.5, 0.55, 0.7, 0.75]),
    "macro-bin": dict(p=24),
}


def resolve(args):
    """Merge built-in defaults, the config file and explicit flags."""
    merged = dict(DEFAULTS.get(args.command, {}))
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        known = set(vars(args))
        for key, value in cfg.items():
            k = key.replace("-", "_")
            if k not in known:
                raise UsageError(f"unknown config key {key!r}")
            merged[k] = value
    for key, value in vars(args).items():
        if value is not None:
            merged[key] = value
        else:
            merged.setdefault(key, None)
    return argparse.Namespace(**merged)


def _trial_config(a):
    grid = GridSpec()
    grid = GridSpec(a.grid_center if a.grid_center is not None else grid.center,
                    a.grid_half_width if a.grid_half_width is not None else grid.half_width,
                    a.grid_points if a.grid_points is not None else grid.n)
    return TrialConfig(n_groups=a.groups, trials_per_group=a.trials, noise_scale=a.noise_scale,
                       seed=a.seed, grid=grid, lambda0=grid.center)


def cmd_simulate(a):
    config = _trial_config(a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for g in range(config.n_groups):
        for t in range(config.trials_per_group):
            trial = generate_trial(config, g, t)
            stem = f"g{g:03d}_t{t:04d}"
            write_spectrum_csv(out / f"{stem}.csv", trial.spectrum)
            write_spectrum_csv(out / f"{stem}_reference.csv", trial.reference)
            write_manifest(out / f"{stem}.json", trial, config.seed)
    with open(out / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
    return {"written": config.n_trials, "out": str(out)}


def _load_noise_model(path):
    if path is None:
        return None
    with open(path) as fh:
        return NoiseModel.from_json(fh.read())


def _ingest(path, fmt, noise_model, scale):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DroppedRowsWarning)
        spec = ingest_spectrum(path, fmt, noise_model)
    dropped = sum(w.message.count for w in caught if isinstance(w.message, DroppedRowsWarning))
    if noise_model is not None and scale != 1.0:
        spec = spec.with_noise_std(spec.noise_std * scale)
    return spec, dropped


def cmd_fit(a):
    if not a.spectrum:
        raise UsageError("fit needs a spectrum file")
    model = _load_noise_model(a.noise_model)
    spec, dropped = _ingest(a.spectrum, a.format, model, a.noise_scale)
    ref = None
    if a.reference:
        ref, _ = _ingest(a.reference, a.format, model, a.noise_scale)
    left = tuple(a.left) if a.left else None
    right = tuple(a.right) if a.right else None
    out = {"method": a.method, "spectrum": a.spectrum, "dropped_rows": dropped}
    if a.method in ("santisteban", "tremsin"):
        if a.lambda0 is None:
            raise UsageError(f"--lambda0 is required for {a.method}")
        if a.method == "santisteban":
            fit, est = fit_santisteban(spec, a.lambda0, left, right,
                                       tuple(a.edge_window) if a.edge_window else None,
                                       a.edge_model)
        else:
            fit, est = fit_tremsin(spec, a.lambda0,
                                   tuple(a.edge_window) if a.edge_window else None)
        out["fit"] = fit.to_json_dict()
    elif a.method == "xcorr":
        if ref is None:
            raise UsageError("xcorr needs --reference")
        sg = sg_config_for_noise(a.noise_scale)
        sg = SGConfig(a.sg_window or sg.window_length, a.sg_order or sg.polynomial_order)
        est = fit_xcorr_strain(spec, ref, sg=sg, lambda0=a.lambda0)
        out["fit"] = est.details["fit"].to_json_dict()
        out["lambda0"] = est.details["lambda0"]
    else:
        if ref is None and a.lambda0 is None:
            raise UsageError("gp needs --reference (or --lambda0 as the reference peak)")
        est = estimate_strain_gp(spec, ref if ref is not None else a.lambda0,
                                 n_samples=a.samples, rng=np.random.default_rng(a.seed),
                                 kernel_candidates=tuple(a.kernels), left=left, right=right)
        out["kernel"] = est.details["fit"].kernel.to_json_dict()
    out["estimate"] = est.to_json_dict()
    text = json.dumps(out, indent=2, sort_keys=True, allow_nan=True)
    if a.out:
        Path(a.out).write_text(text + "\n")
        return {"written": a.out}
    print(text)
    return None


def cmd_trial_study(a):
    config = _trial_config(a)
    settings = StudySettings(gp_kernels=tuple(a.kernels), gp_samples=a.samples)
    result = run_trial_study(config, a.methods, workers=a.workers, settings=settings)
    metrics = result.metrics()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(metrics))
    (out / "metrics.md").write_text(metrics_markdown(metrics))
    write_records_csv(out / "records.csv", result.records)
    for m in result.methods:
        write_histogram_csv(out / f"histogram_{m}.csv", result.records, m, a.bins)
    with open(out / "config.json", "w") as fh:
        json.dump({"trial_config": config.to_dict(), "settings": settings.to_dict(),
                   "methods": list(result.methods)}, fh, indent=2, sort_keys=True)
    print(metrics_markdown(metrics), end="")
    return None


def cmd_noise_analysis(a):
    if not a.spectra:
        raise UsageError("noise-analysis needs at least one spectrum file")
    spectra = [_ingest(p, a.format, None, 1.0)[0] for p in a.spectra]
    result = noise_analysis(spectra, a.bin_edges,
                            tuple(a.left) if a.left else None,
                            tuple(a.right) if a.right else None)
    if a.report:
        write_noise_report(a.report, result.bins)
    text = json.dumps({"a": result.model.a, "b": result.model.b,
                       "n_residuals": int(result.residuals.size),
                       "n_dropped": result.n_dropped}, indent=2, sort_keys=True)
    if a.out:
        Path(a.out).write_text(text + "\n")
        return {"written": a.out}
    print(text)
    return None


def cmd_macro_bin(a):
    if not a.stack or not a.out:
        raise UsageError("macro-bin needs an input stack and --out")
    stack = load_pixel_stack(a.stack)
    binned = macro_pixel_average(stack, a.p)
    save_pixel_stack(a.out, binned)
    return {"written": a.out, "height": binned.height, "width": binned.width}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "trial-study": cmd_trial_study,
    "noise-analysis": cmd_noise_analysis,
    "macro-bin": cmd_macro_bin,
}


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return _json_safe(obj.item())
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return repr(obj)


def _fail(kind, message, code, details=None):
    payload = {"error": kind, "message": message}
    if details:
        payload["details"] = _json_safe(details)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = resolve(parser.parse_args(argv))
        summary = COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except BraggEdgeError as exc:
        details = dict(getattr(exc, "diagnostics", {}) or {})
        for attr in ("stage", "line", "condition_estimate"):
            if getattr(exc, attr, None) is not None:
                details[attr] = getattr(exc, attr)
        return _fail(type(exc).__name__, str(exc), EXIT_FAILURE, details)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_FAILURE)
    if summary is not None:
        print(json.dumps(_json_safe(summary), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
