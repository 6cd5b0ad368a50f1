"""Random-trial comparison of the four strain methods.

Every trial is a pure function of ``(config, settings, group, trial)``, so a
study gives identical records whether it runs serially or on a process pool
of any size.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bayes import estimate_strain_gp
from .lsq import TREMSIN_HALF_WIDTH, fit_santisteban, fit_tremsin, steepest_rise
from .results import MICRO
from .simulate import generate_trial
from .xcorr import SGConfig, fit_xcorr_strain, sg_config_for_noise

METHODS = ("santisteban", "tremsin", "xcorr", "gp")
#: Extra stream index so Monte Carlo draws never share a stream with the
#: simulated noise of the same trial.
GP_STREAM = 1


@dataclass(frozen=True)
class StudySettings:
    """Per-method knobs for a trial study.

    ``gp_noise_std`` is the noise level assumed by the GP when a spectrum
    carries none (noiseless trials).  ``sg`` defaults to the hand-tuned filter
    for the study's noise level.
    """

    edge_model: str = "kropff"
    tremsin_half_width: float = TREMSIN_HALF_WIDTH
    sg: SGConfig = None
    gp_kernels: tuple = ("squared_exponential",)
    gp_samples: int = 1000
    gp_starts: int = 1
    gp_noise_std: float = 1e-4
    gp_zeta0: str = "noiseless"

    def to_dict(self):
        d = asdict(self)
        d["gp_kernels"] = list(self.gp_kernels)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("sg") is not None and not isinstance(d["sg"], SGConfig):
            d["sg"] = SGConfig(**d["sg"])
        if "gp_kernels" in d:
            d["gp_kernels"] = tuple(d["gp_kernels"])
        return cls(**d)


@dataclass
class TrialRecord:
    """One method's outcome on one trial; errors are in strain units."""

    group: int
    trial: int
    method: str
    true_strain: float
    strain: float = float("nan")
    predicted_std: float = float("nan")
    failure: str = ""
    flags: tuple = ()

    @property
    def failed(self):
        return bool(self.failure)

    @property
    def error(self):
        return self.strain - self.true_strain


def _run_method(method, trial, config, settings):
    spec, ref = trial.spectrum, trial.reference
    lambda0 = config.lambda0
    if method == "santisteban":
        _, est = fit_santisteban(spec, lambda0, edge_model=settings.edge_model)
    elif method == "tremsin":
        c = steepest_rise(spec)
        hw = settings.tremsin_half_width
        _, est = fit_tremsin(spec, lambda0, window=(c - hw, c + hw))
    elif method == "xcorr":
        sg = settings.sg or sg_config_for_noise(config.noise_scale)
        est = fit_xcorr_strain(spec, ref, sg=sg, lambda0=lambda0)
    elif method == "gp":
        rng = np.random.default_rng([int(config.seed), trial.group, trial.index, GP_STREAM])
        noise = None if spec.noise_std is not None else settings.gp_noise_std
        est = estimate_strain_gp(spec, ref, n_samples=settings.gp_samples, rng=rng,
                                 zeta0_mode=settings.gp_zeta0,
                                 kernel_candidates=settings.gp_kernels,
                                 n_starts=settings.gp_starts, noise_std=noise)
    else:
        raise ValueError(f"unknown method {method!r}")
    return est


def run_single_trial(config, settings, methods, group, index):
    """Records for every method on trial ``(group, index)``."""
    trial = generate_trial(config, group, index)
    out = []
    for m in methods:
        rec = TrialRecord(group, index, m, trial.true_strain)
        try:
            est = _run_method(m, trial, config, settings)
        except Exception as exc:  # any failure is recorded, never fatal
            rec.failure = f"{type(exc).__name__}: {exc}"
        else:
            rec.strain = float(est.strain_mean)
            rec.predicted_std = float(est.strain_std)
            rec.flags = tuple(sorted(est.flags))
        out.append(rec)
    return out


def _run_task(args):
    return run_single_trial(*args)


@dataclass
class TrialMetrics:
    """Error summary for one method, in micro-strain.

    ``coverage`` is the fraction of successful trials whose true strain lies
    within two predicted standard deviations of the estimate; trials without
    a finite predicted std count as misses.
    """

    method: str
    error_mean: float
    mean_magnitude: float
    maximum: float
    error_std: float
    mean_predicted_std: float
    coverage: float
    n_trials: int
    n_failures: int
    n_flagged: int = 0

    @classmethod
    def from_records(cls, method, records):
        recs = [r for r in records if r.method == method]
        ok = [r for r in recs if not r.failed]
        n_flagged = sum(1 for r in ok if r.flags)
        if not ok:
            nan = float("nan")
            return cls(method, nan, nan, nan, nan, nan, nan, len(recs), len(recs), 0)
        err = np.array([r.error for r in ok]) * MICRO
        pred = np.array([r.predicted_std for r in ok]) * MICRO
        finite = np.isfinite(pred)
        mean_pred = float(pred[finite].mean()) if finite.any() else float("nan")
        covered = np.zeros(err.size, dtype=bool)
        covered[finite] = np.abs(err[finite]) <= 2.0 * pred[finite]
        return cls(method, float(err.mean()), float(np.abs(err).mean()),
                   float(np.abs(err).max()), float(err.std()), mean_pred,
                   float(covered.mean()), len(recs), len(recs) - len(ok), n_flagged)


@dataclass
class StudyResult:
    config: object
    settings: StudySettings
    methods: tuple
    records: list = field(default_factory=list)

    def metrics(self):
        return [TrialMetrics.from_records(m, self.records) for m in self.methods]

    def by_method(self, method):
        return [r for r in self.records if r.method == method]


def run_trial_study(config, methods=METHODS, workers=1, settings=None):
    """Run every trial of ``config`` through each method.

    Parameters
    ----------
    config : TrialConfig
    methods : sequence of str
    workers : int
        Process count; 1 runs in-process.  Results do not depend on it.
    settings : StudySettings, optional
    """
    methods = tuple(methods)
    if not methods:
        raise ValueError("at least one method is required")
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown method(s) {bad}; choose from {METHODS}")
    settings = settings or StudySettings()
    tasks = [(config, settings, methods, g, t)
             for g in range(config.n_groups) for t in range(config.trials_per_group)]
    if workers <= 1:
        chunks = map(_run_task, tasks)
        records = [r for chunk in chunks for r in chunk]
    else:
        with ProcessPoolExecutor(max_workers=int(workers)) as pool:
            # map preserves submission order, so aggregation is order-stable
            records = [r for chunk in pool.map(_run_task, tasks, chunksize=4) for r in chunk]
    return StudyResult(config, settings, methods, records)


METRIC_COLUMNS = ("method", "error_mean", "mean_magnitude", "maximum", "error_std",
                  "mean_predicted_std", "coverage", "n_trials", "n_failures", "n_flagged")


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.2f}" if np.isfinite(v) else "nan"


def _fmt_cov(v):
    return f"{v:.4f}" if np.isfinite(v) else "nan"


def _row(m):
    d = asdict(m)
    return [_fmt_cov(d[c]) if c == "coverage" else _fmt(d[c]) for c in METRIC_COLUMNS]


def metrics_csv(metrics):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for m in metrics:
        w.writerow(_row(m))
    return buf.getvalue()


def metrics_markdown(metrics):
    lines = ["| " + " | ".join(METRIC_COLUMNS) + " |",
             "|" + "---|" * len(METRIC_COLUMNS)]
    for m in metrics:
        lines.append("| " + " | ".join(_row(m)) + " |")
    return "\n".join(lines) + "\n"


def write_records_csv(path, records):
    """Per-trial records; metrics recomputed from this file match exactly."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "trial", "method", "true_strain", "strain", "predicted_std",
                    "failure", "flags"])
        for r in records:
            w.writerow([r.group, r.trial, r.method, repr(r.true_strain), repr(r.strain),
                        repr(r.predicted_std), r.failure, ";".join(r.flags)])


def read_records_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(TrialRecord(int(row["group"]), int(row["trial"]), row["method"],
                                   float(row["true_strain"]), float(row["strain"]),
                                   float(row["predicted_std"]), row["failure"],
                                   tuple(f for f in row["flags"].split(";") if f)))
    return out


def error_histogram(records, method, bins=40):
    """Histogram of a method's errors (micro-strain) with the Gaussian implied
    by its mean predicted std, centred on zero.

    Returns ``(centers, counts, overlay, ci)`` where ``ci`` is the
    ``(-2 sigma, +2 sigma)`` mean predicted interval.
    """
    m = TrialMetrics.from_records(method, records)
    err = np.array([r.error for r in records if r.method == method and not r.failed]) * MICRO
    if err.size == 0:
        return np.empty(0), np.empty(0, dtype=int), np.empty(0), (float("nan"),) * 2
    counts, edges = np.histogram(err, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    sd = m.mean_predicted_std
    if np.isfinite(sd) and sd > 0:
        width = np.diff(edges)
        overlay = err.size * width * np.exp(-0.5 * (centers / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
    else:
        overlay = np.full(centers.shape, np.nan)
    return centers, counts, overlay, (-2.0 * sd, 2.0 * sd)


def write_histogram_csv(path, records, method, bins=40):
    centers, counts, overlay, _ = error_histogram(records, method, bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_center", "count", "gaussian_overlay"])
        for c, n, g in zip(centers, counts, overlay):
            w.writerow([repr(float(c)), int(n), repr(float(g))])
