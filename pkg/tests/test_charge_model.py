import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aldram_lab.charge_model import (ChargeState, ElectricalParams, ParamError, Stage, access_outcome,
                                     charge_share, evaluate_cells, leak, leak_tau, precharge_residual,
                                     required_differential, restore, sense_level, share_differential,
                                     time_to_read)
from aldram_lab.timing import TimingParams, reduce, standard_ddr3
from aldram_lab.variation import CellSample, Dimm, VariationSpec, sample_dimm, worst_case_corner

from oracles import rk4_relax

# the provisional constants the worked examples are stated in
TEXTBOOK = ElectricalParams(c_ratio=5.0, tau_sense=3.0, tau_restore_nominal=9.0, tau_precharge=4.0,
                            v_read=0.75, t_overhead_act=2.0, t_overhead_pre=1.0)
P = ElectricalParams()
NOMINAL = CellSample()


class TestChargeShare:
    def test_examples(self):
        assert charge_share(ChargeState(0.5), TEXTBOOK) == 0.0
        assert charge_share(ChargeState(1.0), TEXTBOOK) == pytest.approx(0.083333, abs=1e-6)
        assert charge_share(ChargeState(1.0, 0.1), TEXTBOOK) == pytest.approx(0.066667, abs=1e-6)

    @given(st.floats(0, 1), st.floats(-0.5, 0.5))
    def test_mirror_symmetry(self, q, delta):
        s = ChargeState(q, delta)
        # a '0' stored symmetrically about the offset precharge level gives the negated signal
        q0 = 2 * (0.5 + delta) - q
        if 0 <= q0 <= 1:
            assert charge_share(ChargeState(q0, delta), TEXTBOOK) == pytest.approx(-charge_share(s, TEXTBOOK))
        m = s.mirrored()
        assert (m.q, m.delta_bl) == pytest.approx((1 - q, -delta))

    def test_state_validation(self):
        with pytest.raises(ParamError):
            ChargeState(1.2)
        with pytest.raises(ParamError):
            ChargeState(0.5, 0.6)


class TestSensing:
    def test_level_examples(self):
        assert sense_level(0.2, 0.0, TEXTBOOK) == 0.2
        t = TEXTBOOK.tau_sense * math.log((1 - 0.083333) / 0.25)
        assert t == pytest.approx(1.2993 * 3, abs=1e-3)
        assert sense_level(0.083333, t, TEXTBOOK) == pytest.approx(0.75, abs=1e-12)
        assert sense_level(0.75, 0.0, TEXTBOOK) == 0.75

    def test_negative_differential_rejected(self):
        with pytest.raises(ValueError, match="wrong value"):
            sense_level(-0.01, 1.0, TEXTBOOK)

    def test_time_to_read_examples(self):
        assert time_to_read(0.75, TEXTBOOK) == 0.0
        assert time_to_read(0.083333, TEXTBOOK) == pytest.approx(3 * math.log(0.916667 / 0.25), abs=1e-6)
        assert time_to_read(0.083333, TEXTBOOK) == pytest.approx(3.898, abs=1e-3)
        assert time_to_read(0.3, TEXTBOOK) == pytest.approx(3 * math.log(0.7 / 0.25), abs=1e-12)
        assert time_to_read(0.3, TEXTBOOK) == pytest.approx(3.0889, abs=1e-4)
        assert time_to_read(0.3, TEXTBOOK) < time_to_read(0.083333, TEXTBOOK)

    @given(st.floats(0.0, 0.999).map(lambda u: u * P.v_read))
    def test_round_trip(self, d):
        assert sense_level(d, time_to_read(d, P), P) == pytest.approx(P.v_read, abs=1e-9)

    @given(st.floats(0.1, 50.0))
    def test_required_differential_inverts(self, t):
        d = required_differential(t, P)
        if d >= 0:
            assert time_to_read(d, P) == pytest.approx(t, rel=1e-9)


class TestRestorePrechargeLeak:
    def test_restore_examples(self):
        assert restore(1.0, 17.0, 9.0) == 1.0
        assert restore(0.0, 9.0, 9.0) == pytest.approx(0.63212, abs=1e-5)
        assert restore(0.0, 27.0, 9.0) == pytest.approx(0.95021, abs=1e-5)

    def test_precharge_examples(self):
        assert precharge_residual(0.0, TEXTBOOK) == 0.5
        assert precharge_residual(4.0, TEXTBOOK) == pytest.approx(0.18394, abs=1e-5)
        assert precharge_residual(20.0, TEXTBOOK) == pytest.approx(0.0033690, abs=1e-7)
        assert precharge_residual(-3.0, TEXTBOOK) == 0.5

    def test_leak_examples(self):
        assert leak(0.8, 0.0, 85.0, 1.0, P) == 0.8
        tau = leak_tau(70.0, 1.3, P)
        assert leak(1.0, tau, 70.0, 1.3, P) == pytest.approx(math.exp(-1))
        assert leak_tau(P.t_ref + P.leak_halving_per, 1.0, P) == pytest.approx(leak_tau(P.t_ref, 1.0, P) / 2)

    @given(st.floats(0, 1), st.floats(0, 100), st.floats(0.1, 10))
    def test_restore_bounds(self, q0, t, tau):
        q = restore(q0, t, tau)
        assert q0 - 1e-15 <= q <= 1.0
        assert restore(q0, t + 1.0, tau) >= q

    @given(st.floats(0, 100), st.floats(0.2, 5))
    def test_leak_strictly_faster_when_hot(self, temp, rm):
        assert leak_tau(temp + 1.0, rm, P) < leak_tau(temp, rm, P)


def test_closed_forms_match_rk4_on_1000_draws():
    """Every exponential phase against RK4 of its ODE, step <= tau/1000."""
    rng = np.random.default_rng(20)
    n = 1000
    tau = rng.uniform(0.5, 200.0, n)
    t_end = tau * rng.uniform(0.0, 5.0, n)
    steps = 5000  # t_end <= 5 tau, so h <= tau/1000
    y0 = rng.uniform(0.0, 1.0, n)
    # restore: dq/dt = (1 - q)/tau
    exact = restore(y0, t_end, tau)
    assert np.max(np.abs(rk4_relax(y0, 1.0, tau, t_end, steps) / exact - 1)) <= 1e-6
    # sensing: ds/dt = (1 - s)/tau_sense
    for i in range(0, n, 100):
        p = ElectricalParams(tau_sense=float(tau[i]), v_read=0.5)
        assert sense_level(y0[i], t_end[i], p) == pytest.approx(
            rk4_relax(y0[i], 1.0, tau[i], t_end[i], steps), rel=1e-6)
    # precharge: d(delta)/dt = -delta/tau_p from 0.5
    exact = np.array([precharge_residual(t, ElectricalParams(tau_precharge=float(tp)))
                      for t, tp in zip(t_end, tau)])
    assert np.max(np.abs(rk4_relax(np.full(n, 0.5), 0.0, tau, t_end, steps) / exact - 1)) <= 1e-6
    # leakage: dq/dt = -q/tau(T)
    temps = rng.uniform(0, 100, n)
    rm = rng.uniform(0.3, 3, n)
    lt = leak_tau(temps, rm, P)
    dt = lt * rng.uniform(0.0, 5.0, n)
    assert np.max(np.abs(rk4_relax(y0, 0.0, lt, dt, steps) / leak(y0, dt, temps, rm, P) - 1)) <= 1e-6


class TestAccessOutcome:
    def test_nominal_cell_passes_standard_at_55(self):
        assert access_outcome(NOMINAL, standard_ddr3(), 55.0, 64.0, 1.0, P).correct

    def test_zero_trcd_is_readout_failure(self):
        # a zero-length field is not a valid timing set; the smallest positive one never senses
        t = standard_ddr3().with_field("t_rcd", 1e-9)
        assert access_outcome(NOMINAL, t, 55.0, 64.0, 1.0, P) == access_outcome(NOMINAL, t, 55.0, 64.0, 1.0, P)
        assert access_outcome(NOMINAL, t, 55.0, 64.0, 1.0, P).stage is Stage.READOUT

    def test_worst_corner_passes_standard_fails_ten_percent(self):
        corner = worst_case_corner(VariationSpec())
        assert access_outcome(corner, standard_ddr3(), 85.0, 64.0, 1.15, P).correct
        t = reduce(standard_ddr3(), (0.1,) * 4)
        assert not access_outcome(corner, t, 85.0, 64.0, 1.15, P).correct

    def test_invalid_timings_are_config_errors(self):
        with pytest.raises(ValueError):
            access_outcome(NOMINAL, TimingParams(20, 10, 15, 13), 55.0, 64.0, 1.0, P)
        with pytest.raises(ValueError):
            access_outcome(NOMINAL, standard_ddr3(), 55.0, 65.0, 1.0, P)

    def test_stage_attribution(self):
        base = standard_ddr3()
        leaky = CellSample(retention_factor=1e-4)
        assert access_outcome(leaky, base, 85.0, 64.0, 1.0, P).stage is Stage.SENSE_OFFSET
        assert access_outcome(NOMINAL, base.with_field("t_wr", 0.3), 55.0, 64.0, 1.0, P).stage \
            is Stage.RESTORE_INSUFFICIENT
        short_rp = base.with_field("t_rp", P.t_overhead_pre * 0.5)
        assert access_outcome(NOMINAL, short_rp, 55.0, 64.0, 1.0, P).stage is Stage.PRECHARGE_INSUFFICIENT

    def test_vectorized_matches_scalar(self):
        dimm = sample_dimm(VariationSpec(sigma_resistance=0.4, sigma_retention=0.8), seed=3)
        rng = np.random.default_rng(1)
        for _ in range(5):
            t = reduce(standard_ddr3(), rng.uniform(0, 0.45, 4))
            for temp in (45.0, 85.0):
                codes = evaluate_cells(dimm.resistance, dimm.capacitance, dimm.retention, t, temp, 64.0, 1.15, P)
                scalar = [access_outcome(c, t, temp, 64.0, 1.15, P).stage for c in dimm.cells]
                assert [s.value for s in scalar] == [Stage.__members__[k.upper()].value
                                                     for k in (_name(c) for c in codes)]


def _name(code):
    from aldram_lab.charge_model import STAGES
    return STAGES[int(code)].name


field_frac = st.floats(0.0, 0.6)


@settings(max_examples=150, deadline=None)
@given(st.floats(0.5, 2.5), st.floats(0.7, 1.3), st.floats(0.2, 3.0), st.floats(0, 100),
       st.sampled_from(["t_rcd", "t_ras", "t_wr", "t_rp"]), field_frac, st.floats(0.01, 0.3))
def test_monotonicity_chain(r, c, rt, temp, name, frac, step):
    cell = CellSample(r, c, rt)
    base = standard_ddr3()
    t = base.with_field(name, getattr(base, name) * (1 - frac))
    if t.t_ras < t.t_rcd:
        return
    ok = access_outcome(cell, t, temp, 64.0, 1.0, P).correct
    longer = t.with_field(name, getattr(t, name) * (1 + step))
    if ok:
        assert access_outcome(cell, longer, temp, 64.0, 1.0, P).correct
        assert access_outcome(CellSample(r, c, rt * (1 + step)), t, temp, 64.0, 1.0, P).correct
    else:
        assert not access_outcome(cell, t, temp + 5.0, 64.0, 1.0, P).correct


def test_params_validation_and_round_trip():
    assert ElectricalParams.from_dict(P.to_dict()) == P
    with pytest.raises(ParamError):
        ElectricalParams(tau_sense=0.0)
    with pytest.raises(ParamError):
        ElectricalParams(v_read=0.01)
    with pytest.raises(ParamError):
        ElectricalParams.from_dict({"c_rato": 1.0})
    assert share_differential(1.0, 0.0, 5.0) == pytest.approx(1 / 12)
