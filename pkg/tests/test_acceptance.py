"""Acceptance gate. Each test records one PASS/FAIL line, printed in the terminal summary.

Runtime limits are stated for machines with several cores; they are asserted
only when at least that many cores are available and are otherwise reported.
"""
import json
import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from cakecut.cli import main
from cakecut.errors import ConfigError
from cakecut.harness import ExperimentSpec, mc_queries, mc_sigma, wilson_interval
from cakecut.linalg import (
    delta,
    determinant,
    invert,
    min_entry,
    ratio_matrix,
    singular_values,
    tail_exponent,
    target_matrix,
    webb_query_bound,
)
from cakecut.measure import make_oracles, recount_trace, uniform_measure, PiecewiseConstantMeasure
from cakecut.models import ModelConfig, measures_from_matrix, sample_h1, trial_rng
from cakecut.protocols import envy_free

RESULTS = {}
CORES = os.cpu_count() or 1
SEED = 0


def record(number, passed, detail):
    RESULTS[number] = (passed, detail)


def runtime_ok(elapsed, limit, cores):
    """True when within the limit, or when the limit's core count is not available here."""
    if CORES >= cores:
        return elapsed <= limit, f"{elapsed:.0f}s (limit {limit}s on {cores} cores)"
    return True, f"{elapsed:.0f}s on {CORES} core(s); limit {limit}s is stated for {cores} cores, not asserted"


@pytest.fixture(scope="module")
def webb_runs():
    t0 = time.time()
    out = {}
    for name, model in (("H1", ModelConfig("h1", 3)), ("H2(0.1)", ModelConfig("h2", 3, epsilon=0.1))):
        spec = ExperimentSpec(model, n_grid=[3, 4, 5, 6], trials=200, seed=SEED, threads=CORES,
                              mode="audit", epsilon_mode="fast")
        out[name] = mc_queries(spec)
    return out, time.time() - t0


def test_criterion_1_webb_correctness(webb_runs):
    runs, elapsed = webb_runs
    passed, details = True, []
    for name, summary in runs.items():
        done = [r for r in summary.trials if r.censored is None]
        ok = [r for r in done if r.audits_passed]
        worst = min(r.super_envy_own_margin - (r.delta - r.delta / (2 * (r.n - 1))) for r in done)
        passed &= len(ok) == len(done) and worst >= -1e-9 and len(done) > 0
        details.append(f"{name}: {len(ok)}/{len(done)} pass, {len(summary.trials) - len(done)} censored, "
                       f"min(own margin - (delta - eps)) = {worst:.3g}")
    t_ok, t_msg = runtime_ok(elapsed, 600, 4)
    record(1, passed and t_ok, "; ".join(details) + f"; {t_msg}")
    assert passed and t_ok


def test_criterion_2_near_exact_contract(webb_runs):
    runs, _ = webb_runs
    calls = bad = 0
    for summary in runs.values():
        for r in summary.trials:
            if r.censored is None:
                calls += 1
                bad += not r.near_exact_passed
    record(2, bad == 0 and calls > 0, f"{bad} violations over {calls} protocol runs (every cell audited)")
    assert bad == 0 and calls > 0


def random_stochastic(rng, n):
    alpha = rng.choice([0.2, 1.0, 5.0])
    return rng.dirichlet(np.full(n, alpha), size=n)


def test_criterion_3_ratio_matrix():
    rng = np.random.default_rng(SEED)
    t0 = time.time()
    count = worst_sum = 0
    lo, hi, t_max = math.inf, -math.inf, -math.inf
    while count < 10_000:
        n = int(rng.integers(2, 31))
        m = random_stochastic(rng, n)
        sv = singular_values(m)
        if sv[-1] < 1e-12 * sv[0]:
            continue
        inv = invert(m, check_sigma=False)
        t = min_entry(inv)
        r = ratio_matrix(inv, target_matrix(n, delta(n, t)))
        worst_sum = max(worst_sum, float(np.max(np.abs(r.sum(axis=1) - 1))))
        lo, hi = min(lo, float(r.min())), max(hi, float(r.min()))
        t_max = max(t_max, t)
        count += 1
    elapsed = time.time() - t0
    passed = worst_sum <= 1e-9 and lo >= -1e-12 and hi <= 1e-9 and t_max <= 0 and elapsed <= 60
    record(3, passed, f"{count} matrices: max row-sum error {worst_sum:.2g}, min entry in [{lo:.2g}, {hi:.2g}], "
                      f"max t {t_max:.3g}, {elapsed:.0f}s")
    assert passed


def test_criterion_4_singular_values():
    rng = np.random.default_rng(SEED + 4)
    t0 = time.time()
    ident = all(np.array_equal(singular_values(np.eye(n)), np.ones(n)) for n in range(1, 60))
    det_gap = 0.0
    for _ in range(1000):
        m = rng.standard_normal((50, 50))
        sv = singular_values(m)
        log_prod = math.fsum(np.log(sv).tolist())
        det_gap = max(det_gap, abs(math.expm1(log_prod - math.log(abs(determinant(m))))))
    entry_bad = product_bad = 0
    for _ in range(1000):
        n = int(rng.integers(2, 21))
        a, b = random_stochastic(rng, n), random_stochastic(rng, n)
        s_a = singular_values(a)[-1]
        if s_a > 1e-12:
            entry_bad += np.max(np.abs(invert(a, check_sigma=False))) > (1 / s_a) * (1 + 1e-9)
        x = rng.standard_normal((n, n))
        product_bad += singular_values(a)[-1] * singular_values(x)[-1] > singular_values(a @ x)[-1] * (1 + 1e-9)
        product_bad += singular_values(x)[-1] * singular_values(b)[-1] > singular_values(x @ b)[-1] * (1 + 1e-9)
    elapsed = time.time() - t0
    passed = ident and det_gap <= 1e-8 and entry_bad == 0 and product_bad == 0 and elapsed <= 120
    record(4, passed, f"identity exact: {ident}; max rel |prod sigma - |det|| {det_gap:.2g}; "
                      f"inverse-entry violations {entry_bad}; product violations {product_bad}; {elapsed:.0f}s")
    assert passed


def test_criterion_5_tail_consistency():
    t0 = time.time()
    h1 = mc_sigma(ExperimentSpec(ModelConfig("h1", 10), n_grid=[10, 20, 50, 100, 200], b=5,
                                 trials=10_000, trials_by_n={200: 1000}, seed=SEED, threads=CORES))
    summaries = [h1]
    # H2(eps) needs every base entry above eps with unit row sums, so n eps < 1
    feasible, infeasible = [], {}
    for n in (10, 20, 50):
        try:
            ModelConfig("h2", n, epsilon=0.1)
            feasible.append(n)
        except ConfigError as exc:
            infeasible[n] = str(exc)
    d_ok = True
    if feasible:
        h2 = mc_sigma(ExperimentSpec(ModelConfig("h2", feasible[0], epsilon=0.1), n_grid=feasible, b=5,
                                     trials=10_000, seed=SEED, threads=CORES))
        summaries.append(h2)
        d_ok = all(r.sigma_D > r.n ** -1.5 for r in h2.trials)
    elapsed = time.time() - t0
    hits = {f"{s.spec.model.kind}:{r['n']}": r["hits_sigma_le"] for s in summaries for r in s.rows}
    upper = {f"{s.spec.model.kind}:{r['n']}": r["wilson_hi"] for s in summaries for r in s.rows}
    violations = [v for s in summaries for v in s.violations]
    wilson_ok = abs(wilson_interval(0, 10_000)[1] - 3.8e-4) < 1e-5
    t_ok, t_msg = runtime_ok(elapsed, 1800, 8)
    passed = (all(v == 0 for v in hits.values()) and not infeasible and d_ok and not violations
              and wilson_ok and t_ok)
    h2_msg = "; ".join(f"H2(0.1) n={n} not constructible: {msg}" for n, msg in infeasible.items())
    record(5, passed, f"hits {hits}; Wilson upper {{{', '.join(f'{k}: {v:.2g}' for k, v in upper.items())}}}; "
                      f"{h2_msg + '; ' if h2_msg else ''}"
                      f"H2 sigma_D > n^-1.5 in every trial run: {d_ok}; per-trial violations {len(violations)}; "
                      f"{t_msg}")
    assert passed


def test_criterion_6_sampler_law():
    rng = trial_rng(SEED, 6)
    draws = np.array([sample_h1(5, rng).M[0, 0] for _ in range(10_000)])
    ks = stats.kstest(draws, lambda x: 1 - (1 - x) ** 4).statistic
    record(6, ks < 0.02, f"KS distance {ks:.4f} (threshold 0.02)")
    assert ks < 0.02


def test_criterion_7_calculators():
    e5, e11 = tail_exponent(5), tail_exponent(11)
    w = webb_query_bound(2, -1)
    passed = e5 == Fraction(-1, 3) and e11 == Fraction(-7, 3) and abs(w / 735.0580079512686 - 1) <= 1e-6 \
        and round(w, 2) == 735.06
    record(7, passed, f"tail_exponent(5) = {e5}, tail_exponent(11) = {e11}, webb_query_bound(2, -1) = {w:.6f}")
    assert passed


def test_criterion_8_cli_determinism(tmp_path):
    def invocations(tag, threads):
        d = tmp_path / tag
        d.mkdir()
        mc = ["--seed", "3", "--threads", str(threads)]
        return d, [
            ["sample", "--model", "h1", "--n", "6", "--seed", "3", "--out", str(d / "sample.json")],
            ["sample", "--model", "h2", "--n", "4", "--epsilon", "0.1", "--seed", "3",
             "--out", str(d / "sample2.json")],
            ["run", "--model", "h1", "--n", "5", "--seed", "7", "--out", str(d / "run.json"),
             "--measures-out", str(d / "measures.json")],
            ["run", "--model", "h2", "--n", "3", "--epsilon", "0.1", "--seed", "7", "--epsilon-mode", "paper",
             "--out", str(d / "run2.json")],
            ["audit", "--report", str(d / "run.json"), "--measures", str(d / "measures.json"),
             "--out", str(d / "audit.json")],
            ["bound", "--n", "2", "--t", "-1", "--b", "5", "--out", str(d / "bound.json")],
            ["mc-sigma", "--model", "h1", "--n-grid", "10,20", "--b", "5", "--trials", "200", *mc,
             "--out", str(d / "sigma.csv"), "--json", str(d / "sigma.json")],
            ["mc-queries", "--model", "h1", "--n-grid", "3,4", "--b", "5", "--trials", "4", *mc,
             "--out", str(d / "queries.csv"), "--json", str(d / "queries.json")],
        ]

    outputs = []
    for tag, threads in (("a1", 1), ("a8", 8), ("b1", 1), ("b8", 8)):
        d, calls = invocations(tag, threads)
        codes = [main(argv) for argv in calls]
        assert codes == [0] * len(calls), codes
        outputs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    files = sorted(outputs[0])
    same = all(o == outputs[0] for o in outputs[1:])
    record(8, same, f"{len(files)} output files x 4 runs (threads 1 and 8, repeated): "
                    f"{'byte-identical' if same else 'DIFFER'}")
    assert same


def test_criterion_9_query_ledger():
    os_ = make_oracles(measures_from_matrix(np.eye(2)), trace=True)
    rep = envy_free(os_)
    c_identity = rep.queries_total

    rng = np.random.default_rng(SEED + 9)
    ms = [uniform_measure(), PiecewiseConstantMeasure([0, 0.3, 1], [0.5, 17 / 14])]
    scripted = make_oracles(ms, trace=True)
    points = np.round(rng.random(2000), 3)
    for i in range(1000):
        o = scripted[i % 2]
        x, y = sorted(points[2 * i: 2 * i + 2])
        if i % 4 == 0:
            o.cut(x, o.eval(x, y))
        elif i % 4 == 1:
            o.eval_many([x, x, y], [y, y, 1.0])
        else:
            o.eval(x, y)
    led = scripted[0].ledger
    recount = recount_trace(led.trace)
    before = led.total
    scripted[0].eval(0.1, 0.2)
    after_first = led.total
    scripted[0].eval(0.1, 0.2)
    scripted[0].eval_many([0.1, 0.1], [0.2, 0.2])
    repeat_free = led.total == after_first and after_first <= before + 1
    passed = c_identity == 4 and led.total - (after_first - before) == recount and repeat_free
    record(9, passed, f"C on identity instance = {c_identity}; ledger {before} vs trace recount {recount} "
                      f"({len(led.trace)} raw queries); repeats free: {repeat_free}")
    assert passed
