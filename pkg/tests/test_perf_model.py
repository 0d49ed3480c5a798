from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aldram_lab.perf_model import (COHORT_COLUMNS, Access, AccessTrace, PerfKnobs, WorkloadError, WorkloadStats,
                                   access_latency, amat, classify, cohort_report, estimate_speedup,
                                   geomean_speedup, load_trace, load_workloads, matched_trace, check_trace_events,
                                   trace_simulate)
from aldram_lab.timing import reduce, standard_ddr3

STD = standard_ddr3()
AL = reduce(STD, (0.27, 0.32, 0.33, 0.18))
ANCHOR = WorkloadStats("anchor", 30.0, 0.4, 0.3, 0.3, 0.0, 0.6)


def cohort():
    return load_workloads(resources.files("aldram_lab") / "data" / "cohort35.csv")


class TestAnalytic:
    def test_identity(self):
        assert estimate_speedup(ANCHOR, STD, STD) == 0.0

    def test_no_memory_no_speedup(self):
        w = WorkloadStats("cpu", 0.0, 0.4, 0.3, 0.3, 0.2, 1.0)
        assert estimate_speedup(w, STD, AL) == 0.0

    def test_regression_anchor(self):
        # frozen on first computation
        assert estimate_speedup(ANCHOR, STD, AL) == pytest.approx(5.045075651867936, rel=1e-12)

    def test_formula(self):
        lat = 0.4 * STD.t_cl + 0.3 * (STD.t_rcd + STD.t_cl) + 0.3 * (STD.t_rp + STD.t_rcd + STD.t_cl)
        assert amat(ANCHOR, STD) == pytest.approx(lat)

    def test_write_conflict_waits_for_recovery(self):
        t = STD.with_field("t_wr", 20.0)
        assert access_latency(t, "conflict", "write") == 20.0 + t.t_rcd + t.t_cl
        assert access_latency(t, "conflict", "read") == t.t_rp + t.t_rcd + t.t_cl

    def test_rejects_slower_reduced(self):
        with pytest.raises(WorkloadError):
            estimate_speedup(ANCHOR, AL, STD)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 100), st.floats(0, 1), st.floats(0, 1), st.floats(0.2, 3))
    def test_non_negative_and_monotone_in_mpki(self, mpki, hit, w, base_cpi):
        rest = 1 - hit
        a = WorkloadStats("a", mpki, hit, rest / 2, 1 - hit - rest / 2, w, base_cpi)
        b = WorkloadStats("b", mpki + 5, hit, rest / 2, 1 - hit - rest / 2, w, base_cpi)
        sa, sb = estimate_speedup(a, STD, AL), estimate_speedup(b, STD, AL)
        assert sa >= 0
        assert sb >= sa - 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 0.3), min_size=4, max_size=4), st.floats(0, 1))
    def test_more_reduction_more_speedup(self, pct, k):
        small = reduce(STD, [p * k for p in pct])
        big = reduce(STD, pct)
        assert estimate_speedup(ANCHOR, STD, big) >= estimate_speedup(ANCHOR, STD, small) - 1e-12

    def test_classify(self):
        assert classify(ANCHOR) == "memory_intensive"
        assert classify(WorkloadStats("x", 9.99, 1, 0, 0, 0, 1)) == "non_intensive"

    def test_stats_validation(self):
        with pytest.raises(WorkloadError):
            WorkloadStats("x", 1, 0.5, 0.5, 0.5, 0, 1)
        with pytest.raises(WorkloadError):
            WorkloadStats("x", -1, 1, 0, 0, 0, 1)
        with pytest.raises(WorkloadError):
            WorkloadStats("x", 1, 1, 0, 0, 0, 0)


class TestTrace:
    def test_single_read(self):
        r = trace_simulate(AccessTrace([Access(0, 0)]), STD)
        assert r.latencies == [pytest.approx(STD.t_rcd + STD.t_cl)]

    def test_row_hit(self):
        r = trace_simulate(AccessTrace([Access(0, 0), Access(0, 0)]), STD)
        assert r.latencies[1] == pytest.approx(STD.t_cl)
        assert r.kinds == ["miss", "hit"]

    def test_conflict_gated_by_ras(self):
        r = trace_simulate(AccessTrace([Access(0, 0), Access(0, 1)]), STD)
        assert r.total_time >= STD.t_ras + STD.t_rp + STD.t_rcd + STD.t_cl - 1e-9
        assert r.kinds[1] == "conflict"

    def test_write_recovery_gates_precharge(self):
        r = trace_simulate(AccessTrace([Access(0, 0, "write"), Access(0, 1)]), STD)
        wr_end = STD.t_rcd + STD.t_cl
        assert r.total_time == pytest.approx(wr_end + STD.t_wr + STD.t_rp + STD.t_rcd + STD.t_cl)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.booleans()), min_size=1, max_size=60))
    def test_checker_finds_no_violations(self, items):
        trace = AccessTrace([Access(b, r, "write" if w else "read") for b, r, w in items])
        for t in (STD, AL):
            assert check_trace_events(trace_simulate(trace, t).events, t) == []

    def test_checker_catches_injected_violation(self):
        events = [(0.0, 0, "ACT"), (1.0, 0, "RD")]
        assert any("tRCD" in p for p in check_trace_events(events, STD))

    @pytest.mark.parametrize("w", cohort()[::7], ids=lambda w: w.name)
    def test_analytic_matches_trace(self, w):
        trace = matched_trace(w, 20000, seed=5)
        for t in (STD, AL):
            sim = trace_simulate(trace, t)
            got = np.mean(sim.latencies[8:])
            assert got == pytest.approx(amat(w, t), rel=0.05)

    def test_load_trace(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("bank,row,op\n0,1,read\n0,2,write\n")
        assert load_trace(p).accesses == [Access(0, 1, "read"), Access(0, 2, "write")]
        p.write_text("bank,row\n0,1\n")
        with pytest.raises(WorkloadError):
            load_trace(p)


class TestCohort:
    def test_shipped_cohort(self):
        ws = cohort()
        assert len(ws) == 35
        rep = cohort_report(ws, STD, AL)
        assert rep.counts["memory_intensive"] + rep.counts["non_intensive"] == 35
        assert rep.means["memory_intensive"] > rep.means["non_intensive"] > 0

    def test_all_zero_mpki(self):
        ws = [WorkloadStats(f"w{i}", 0.0, 1, 0, 0, 0, 1) for i in range(3)]
        assert cohort_report(ws, STD, AL).means == {"non_intensive": 0.0, "overall": 0.0}

    def test_single_workload(self):
        rep = cohort_report([ANCHOR], STD, AL)
        assert rep.means["overall"] == pytest.approx(estimate_speedup(ANCHOR, STD, AL))

    def test_geomean(self):
        assert geomean_speedup([10.0, 10.0]) == pytest.approx(10.0)
        assert geomean_speedup([0.0, 21.0]) == pytest.approx(100 * (1.1 - 1))

    def test_bad_cohort_file(self, tmp_path):
        p = tmp_path / "c.csv"
        p.write_text(",".join(COHORT_COLUMNS) + "\nx,1,0.5,0.5,0.5,0,1\n")
        with pytest.raises(WorkloadError, match="row 1"):
            load_workloads(p)

    def test_write(self, tmp_path):
        cohort_report(cohort(), STD, AL, PerfKnobs()).write(tmp_path)
        assert (tmp_path / "perf_workloads.csv").read_text().count("\n") == 36
