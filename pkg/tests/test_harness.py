import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cakecut.errors import DomainError
from cakecut.harness import (
    QUERY_COLUMNS,
    SIGMA_COLUMNS,
    ExperimentSpec,
    mc_queries,
    mc_sigma,
    read_csv,
    survival,
    wilson_interval,
    write_csv,
    write_json,
)
from cakecut.models import ModelConfig


def wilson_closed_form(k, n, z=1.959963984540054):
    p = k / n
    centre = (p + z * z / (2 * n)) / (1 + z * z / n)
    half = z / (1 + z * z / n) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return centre - half, centre + half


def test_wilson_examples():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0 and hi == pytest.approx(0.03699349820698566, rel=1e-12)
    lo, hi = wilson_interval(100, 100)
    assert hi == 1 and lo == pytest.approx(1 - 0.03699349820698566, rel=1e-12)
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert wilson_interval(0, 10_000)[1] == pytest.approx(3.84e-4, rel=2e-3)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 10_000).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_wilson_matches_closed_form(kn):
    k, n = kn
    lo, hi = wilson_interval(k, n)
    elo, ehi = wilson_closed_form(k, n)
    assert 0 <= lo <= k / n <= hi <= 1
    if 0 < k < n:
        assert lo == pytest.approx(elo, abs=1e-12) and hi == pytest.approx(ehi, abs=1e-12)


def test_mc_sigma_rows_and_n1():
    spec = ExperimentSpec(ModelConfig("h1", 1), n_grid=[1, 4, 8], b=5, trials=50, seed=3)
    s = mc_sigma(spec)
    assert s.columns == SIGMA_COLUMNS
    assert [r["n"] for r in s.rows] == [1, 4, 8]
    assert s.rows[0]["freq"] == 1.0 and s.rows[0]["hits_sigma_le"] == 50
    assert s.violations == []


def test_mc_sigma_h2_invariants():
    spec = ExperimentSpec(ModelConfig("h2", 3, epsilon=0.1), n_grid=[3, 6], b=5, trials=200, seed=1)
    s = mc_sigma(spec)
    assert s.violations == []
    assert all(r["freq_D_component"] == 0.0 for r in s.rows)


def test_threads_do_not_change_results():
    base = dict(model=ModelConfig("h1", 5), n_grid=[5, 9], b=5, trials=40, seed=11)
    a = mc_sigma(ExperimentSpec(threads=1, **base)).to_dict()
    b = mc_sigma(ExperimentSpec(threads=4, **base)).to_dict()
    assert a == b


def test_mc_queries_small():
    spec = ExperimentSpec(ModelConfig("h1", 3), n_grid=[2, 3], b=5, trials=4, seed=2, mode="queries")
    s = mc_queries(spec)
    assert s.columns == QUERY_COLUMNS
    for row in s.rows:
        assert row["audit_pass_rate"] == 1.0
        assert row["censored"] == 0
        assert row["C_min"] <= row["C_med"] <= row["C_max"]
    assert all(r.C_measured >= r.n ** 2 for r in s.trials)


def test_mc_queries_censors_resource_cap():
    spec = ExperimentSpec(ModelConfig("h1", 3), n_grid=[3], trials=3, seed=2, mode="queries", k_cap=4)
    s = mc_queries(spec)
    assert s.rows[0]["censored"] == 3
    assert math.isnan(s.rows[0]["audit_pass_rate"])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10 ** 6), max_size=50), st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=20))
def test_survival_is_monotone(values, thresholds):
    ts = sorted(thresholds)
    sv = survival(values, ts)
    if values:
        assert all(a >= b for a, b in zip(sv, sv[1:]))
        assert sv[0] == pytest.approx(np.mean(np.array(values) >= ts[0]))


def test_spec_validation():
    with pytest.raises(DomainError):
        ExperimentSpec(ModelConfig("h1", 2), n_grid=[2], trials=0)
    with pytest.raises(DomainError):
        ExperimentSpec(ModelConfig("h1", 2), n_grid=[2], mode="plot")
    with pytest.raises(DomainError):
        ExperimentSpec(ModelConfig("h1", 2), n_grid=[], trials=3)


def test_csv_json_round_trip(tmp_path):
    spec = ExperimentSpec(ModelConfig("h1", 2), n_grid=[2, 3], trials=20, seed=0)
    s = mc_sigma(spec)
    write_csv(s, tmp_path / "t.csv")
    write_json(s, tmp_path / "t.json")
    rows = read_csv(tmp_path / "t.csv")
    assert list(rows[0]) == SIGMA_COLUMNS
    assert float(rows[1]["sigma_median"]) == s.rows[1]["sigma_median"]
    report = json.loads((tmp_path / "t.json").read_text())
    assert report["seed"] == 0 and len(report["rows"]) == 2
    assert "decay rate" in report["footer"]
    assert [p.name for p in tmp_path.iterdir() if p.name.startswith(".tmp")] == []
