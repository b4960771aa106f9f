"""Seeded Monte Carlo experiments over the random witness models.

Two modes:

* ``sigma``: sample M = D X only, and tabulate how often sigma_n(M), sigma_n(D)
  and sigma_n(X) fall below the thresholds n^-b, n^-3/2 and n^(-b+3/2).
  Every trial is also checked against inequalities that must hold exactly
  (t <= 0, |t| <= 1/sigma_n, sigma_n(D) sigma_n(X) <= sigma_n(M), ...).
* ``queries``: run the full envy-free protocol and tabulate its query counts.

Trial (n, k) draws from its own stream keyed by (seed, n, k), and results
are merged by trial index, so output does not depend on the thread count.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import DomainError, ResourceError, SingularError, SingularWitnessMatrix
from .linalg import determinant, invert, singular_values, tail_exponent
from .measure import make_oracles
from .models import ModelConfig, sample, trial_rng, measures_from_matrix
from .protocols import NearExactConfig, envy_free

SIGMA_COLUMNS = [
    "model", "n", "b", "trials", "hits_sigma_le", "freq", "wilson_lo", "wilson_hi",
    "freq_D_component", "freq_X_event", "sigma_median", "sigma_q01", "ref_ne_sqrt", "ref_tail_curve",
]
QUERY_COLUMNS = [
    "model", "n", "b", "trials", "censored", "C_min", "C_med", "C_max", "C_q99",
    "hits_C_ge_n7b", "audit_pass_rate", "webb_bound_med", "sigma_bound_med",
]
FOOTER = (
    "Tail probabilities are asymptotic statements in n; at these sizes the expected "
    "number of hits is tiny, so the table can show consistency with the bounds but "
    "cannot exhibit the decay rate. No constant is fitted."
)
REL_SLACK = 1e-9


def wilson_interval(hits: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1 or not (0 <= hits <= trials):
        raise DomainError(f"need 0 <= hits <= trials and trials >= 1, got {hits}/{trials}")
    if not (0.0 < confidence < 1.0):
        raise DomainError("confidence must lie in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = hits / trials
    z2n = z * z / trials
    centre = (p + z2n / 2) / (1 + z2n)
    half = z / (1 + z2n) * math.sqrt(p * (1 - p) / trials + z2n / (4 * trials))
    lo = 0.0 if hits == 0 else max(0.0, centre - half)
    hi = 1.0 if hits == trials else min(1.0, centre + half)
    return lo, hi


@dataclass
class ExperimentSpec:
    model: ModelConfig
    n_grid: list[int]
    b: float = 5
    trials: int = 1000
    seed: int = 0
    threads: int = 1
    mode: str = "sigma"
    trials_by_n: dict = field(default_factory=dict)
    epsilon_mode: str = "fast"
    assignment: str = "greedy"
    k_cap: int = 2 ** 20

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in ("sigma", "queries", "audit"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.trials < 1 or any(v < 1 for v in self.trials_by_n.values()):
            raise DomainError("trials must be >= 1")
        if self.threads < 1:
            raise DomainError("threads must be >= 1")
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise DomainError("n_grid must list positive integers")

    def trials_for(self, n: int) -> int:
        return int(self.trials_by_n.get(n, self.trials))

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "n_grid": list(self.n_grid),
            "b": self.b,
            "trials": self.trials,
            "trials_by_n": {str(k): v for k, v in sorted(self.trials_by_n.items())},
            "seed": self.seed,
            "mode": self.mode,
            "epsilon_mode": self.epsilon_mode,
            "assignment": self.assignment,
            "k_cap": self.k_cap,
        }


@dataclass
class TrialResult:
    n: int
    trial: int
    sigma_M: float
    sigma_D: float
    sigma_X: float
    det_M: float
    t: float
    delta: float | None = None
    C_measured: int | None = None
    audits_passed: bool | None = None
    super_envy_own_margin: float | None = None
    near_exact_passed: bool | None = None
    webb_bound: float | None = None
    sigma_bound: float | None = None
    censored: str | None = None
    violations: list = field(default_factory=list)


def _run_parallel(fn, jobs, threads: int):
    if threads == 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def _sigma_trial(spec: ExperimentSpec, cfg: ModelConfig, n: int, k: int) -> TrialResult:
    rec = sample(cfg, trial_rng(spec.seed, n, k), seed_path=(spec.seed, n, k))
    sv = singular_values(rec.M)
    s_m = float(sv[-1])
    s_x = float(singular_values(rec.X)[-1])
    s_d = float(np.min(np.abs(np.diag(rec.D))))  # a diagonal matrix's singular values are |d_ii|
    det = determinant(rec.M)
    try:
        t = float(np.min(invert(rec.M, check_sigma=False))) if s_m >= 1e-12 * sv[0] else math.nan
    except SingularError:
        t = math.nan
    bad = []
    if n >= 2 and not math.isnan(t):
        if t > 0:
            bad.append(f"t = {t} > 0")
        if abs(t) > (1.0 / s_m) * (1 + REL_SLACK):
            bad.append(f"|t| = {abs(t)} > 1/sigma_n = {1 / s_m}")
    if s_d * s_x > s_m * (1 + REL_SLACK):
        bad.append(f"sigma_D sigma_X = {s_d * s_x} > sigma_M = {s_m}")
    if n <= 50 and det != 0.0 and sv[-1] > 0:
        log_prod = math.fsum(np.log(sv).tolist())
        if abs(log_prod - math.log(abs(det))) > 1e-8:
            bad.append(f"prod sigma != |det| (log gap {log_prod - math.log(abs(det)):.3g})")
    thr_m = float(n) ** (-spec.b)
    thr_d = float(n) ** -1.5
    if s_m <= thr_m and s_d >= thr_d and s_x > float(n) ** (-spec.b + 1.5) * (1 + REL_SLACK):
        bad.append("trial in B but not in C")
    if cfg.kind == "h2" and n >= 3 and s_d <= thr_d:
        bad.append(f"H2 with n >= 3 but sigma_D = {s_d} <= n^-3/2")
    return TrialResult(n, k, s_m, s_d, s_x, det, t, violations=bad)


def _query_trial(spec: ExperimentSpec, cfg: ModelConfig, n: int, k: int) -> TrialResult:
    rec = sample(cfg, trial_rng(spec.seed, n, k), seed_path=(spec.seed, n, k))
    ne = NearExactConfig(epsilon_mode=spec.epsilon_mode, assignment=spec.assignment,
                         k_cap=spec.k_cap, seed=spec.seed, key=(n, k))
    oracles = make_oracles(measures_from_matrix(rec.M))
    s_m = float(singular_values(rec.M)[-1])
    s_x = float(singular_values(rec.X)[-1])
    s_d = float(np.min(np.abs(np.diag(rec.D))))
    res = TrialResult(n, k, s_m, s_d, s_x, determinant(rec.M), math.nan)
    try:
        report = envy_free(oracles, ne)
    except ResourceError:
        res.censored = "resource"
        return res
    except SingularWitnessMatrix:
        res.censored = "singular"
        return res
    a = report.audits
    res.t = report.t
    res.delta = report.delta
    res.C_measured = report.queries_total
    res.near_exact_passed = bool(a["near_exact"]["passed"])
    res.audits_passed = bool(a["super_envy_free"]["passed"] and a["envy_free"]["passed"]
                             and a["proportional"]["passed"] and res.near_exact_passed)
    res.super_envy_own_margin = a["super_envy_free"].get("own_margin")
    res.webb_bound = report.bounds["webb_query_bound"]
    res.sigma_bound = report.bounds["sigma_query_bound"]
    return res


def run_trials(spec: ExperimentSpec) -> list[TrialResult]:
    worker = _sigma_trial if spec.mode == "sigma" else _query_trial
    jobs = []
    for n in spec.n_grid:
        cfg = spec.model.with_n(n)
        jobs.extend((spec, cfg, n, k) for k in range(spec.trials_for(n)))
    results = _run_parallel(worker, jobs, spec.threads)
    return sorted(results, key=lambda r: (spec.n_grid.index(r.n), r.trial))


def _q(values, q):
    return float(np.quantile(np.asarray(values, dtype=float), q)) if len(values) else math.nan


@dataclass
class Summary:
    spec: ExperimentSpec
    columns: list[str]
    rows: list[dict]
    trials: list[TrialResult]

    @property
    def violations(self) -> list[str]:
        return [f"n={r.n} trial={r.trial}: {v}" for r in self.trials for v in r.violations]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "seed": self.spec.seed,
            "columns": self.columns,
            "rows": [_jsonable(r) for r in self.rows],
            "violations": self.violations,
            "footer": FOOTER,
        }


def mc_sigma(spec: ExperimentSpec) -> Summary:
    if spec.mode != "sigma":
        raise DomainError("mc_sigma needs mode 'sigma'")
    results = run_trials(spec)
    rows = []
    for n in spec.n_grid:
        rs = [r for r in results if r.n == n]
        T = len(rs)
        sig = np.array([r.sigma_M for r in rs])
        hits = int(np.sum(sig <= float(n) ** (-spec.b)))
        lo, hi = wilson_interval(hits, T)
        rows.append({
            "model": spec.model.kind, "n": n, "b": spec.b, "trials": T,
            "hits_sigma_le": hits, "freq": hits / T, "wilson_lo": lo, "wilson_hi": hi,
            "freq_D_component": float(np.mean([r.sigma_D <= float(n) ** -1.5 for r in rs])),
            "freq_X_event": float(np.mean([r.sigma_X <= float(n) ** (-spec.b + 1.5) for r in rs])),
            "sigma_median": _q(sig, 0.5), "sigma_q01": _q(sig, 0.01),
            "ref_ne_sqrt": n * math.exp(-math.sqrt(n)),
            "ref_tail_curve": float(n) ** float(tail_exponent(spec.b)) if spec.b > 4 else math.nan,
        })
    return Summary(spec, SIGMA_COLUMNS, rows, results)


def mc_queries(spec: ExperimentSpec) -> Summary:
    if spec.mode not in ("queries", "audit"):
        raise DomainError("mc_queries needs mode 'queries' or 'audit'")
    results = run_trials(spec)
    rows = []
    for n in spec.n_grid:
        rs = [r for r in results if r.n == n]
        done = [r for r in rs if r.censored is None]
        C = [r.C_measured for r in done]
        thr = float(n) ** (7 + spec.b)
        rows.append({
            "model": spec.model.kind, "n": n, "b": spec.b, "trials": len(rs),
            "censored": len(rs) - len(done),
            "C_min": min(C) if C else math.nan,
            "C_med": _q(C, 0.5), "C_max": max(C) if C else math.nan, "C_q99": _q(C, 0.99),
            "hits_C_ge_n7b": int(sum(c >= thr for c in C)),
            "audit_pass_rate": float(np.mean([r.audits_passed for r in done])) if done else math.nan,
            "webb_bound_med": _q([r.webb_bound for r in done if r.webb_bound is not None], 0.5),
            "sigma_bound_med": _q([r.sigma_bound for r in done if r.sigma_bound is not None], 0.5),
        })
    return Summary(spec, QUERY_COLUMNS, rows, results)


def survival(values, thresholds) -> list[float]:
    """Empirical P(C >= T) for each threshold T."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return [math.nan for _ in thresholds]
    return [float(v.size - np.searchsorted(v, t, side="left")) / v.size for t in thresholds]


# -- output ------------------------------------------------------------------

def _cell(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    return repr(v) if isinstance(v, float) else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def atomic_write(path, text: str) -> None:
    """Write text to path through a temp file in the same directory plus rename."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def json_text(report) -> str:
    obj = report.to_dict() if hasattr(report, "to_dict") else report
    return json.dumps(_jsonable(obj), indent=2, allow_nan=False) + "\n"


def write_csv(table, path, columns=None) -> None:
    if isinstance(table, Summary):
        columns, rows = table.columns, table.rows
    else:
        rows = table
    if columns is None:
        raise DomainError("columns are required for a bare row list")
    atomic_write(path, csv_text(rows, columns))


def write_json(report, path) -> None:
    atomic_write(path, json_text(report))


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
