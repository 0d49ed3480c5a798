"""Simulated timing characterization of DIMM populations.

The profiler plays the role of a hardware tester: for each DIMM and
temperature it searches for the shortest value of each critical timing
parameter at which every tracked cell still passes the canonical access
sequence, evaluated just before refresh (the charge minimum).

Searches run on a grid anchored at the baseline value, ``base - k *
resolution``, so results are exactly reproducible and can be cross-checked
against an exhaustive scan.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .charge_model import (SOLID_PATTERN, WORST_PATTERN, ElectricalParams, PatternStress, evaluate_cells,
                           leak_tau, stage_codes)
from .timing import CRITICAL_FIELDS, TimingParams, latency_sums, standard_ddr3, validate
from .variation import Dimm

log = logging.getLogger(__name__)

CSV_COLUMNS = ("dimm_id", "temp_c", "t_rcd", "t_ras", "t_wr", "t_rp",
               "red_rcd", "red_ras", "red_wr", "red_rp", "read_sum_ns", "write_sum_ns")
SCENARIOS = ("same_test", "data_pattern", "timing_combination", "temperature", "read_write")


class ProfilingError(RuntimeError):
    pass


class StandardTimingsUnsafe(ProfilingError):
    """The DIMM fails even at baseline timings: the model is miscalibrated."""


class InfeasibleFix(ProfilingError):
    pass


@dataclass(frozen=True)
class ProfileRequest:
    dimm: Dimm
    temp: float
    pattern: PatternStress = WORST_PATTERN
    t_refw: float = 64.0
    mode: str = "per_parameter"
    resolution: float = 0.05

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        if not 0.0 <= self.temp <= 100.0:
            raise ValueError(f"temp {self.temp} outside [0, 100]")
        if self.mode not in ("per_parameter", "joint"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.t_refw > 0:
            raise ValueError("t_refw must be > 0")


@dataclass(frozen=True)
class DimmTimingProfile:
    dimm_id: int
    temp: float
    min_safe: TimingParams
    reductions: tuple[float, float, float, float]
    read_sum: float
    write_sum: float
    mode: str = "per_parameter"
    t_refw: float = 64.0

    def csv_row(self) -> list[str]:
        t = self.min_safe
        return ([str(self.dimm_id), _fmt(self.temp, 2)]
                + [_fmt(v, 4) for v in t.critical()]
                + [_fmt(r, 6) for r in self.reductions]
                + [_fmt(self.read_sum, 4), _fmt(self.write_sum, 4)])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["min_safe"] = self.min_safe.to_dict()
        d["reductions"] = list(self.reductions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DimmTimingProfile":
        d = dict(d)
        d["min_safe"] = TimingParams.from_dict(d["min_safe"])
        d["reductions"] = tuple(d["reductions"])
        return cls(**d)


def _fmt(x: float, nd: int) -> str:
    s = f"{x:.{nd}f}"
    return "0." + "0" * nd if s == "-0." + "0" * nd else s


def _grid(base: float, k: int, res: float) -> float:
    return round(base - k * res, 9)


def make_profile(dimm_id: int, temp: float, t: TimingParams, base: TimingParams,
                 mode: str = "per_parameter") -> DimmTimingProfile:
    red = tuple(1.0 - a / b for a, b in zip(t.critical(), base.critical()))
    rs, ws = latency_sums(t)
    return DimmTimingProfile(dimm_id, temp, t, red, rs, ws, mode, t.t_refw)  # type: ignore[arg-type]


class _Tester:
    """Pass/fail oracle for one DIMM at fixed conditions."""

    def __init__(self, dimm: Dimm, temp: float, pattern: float, params: ElectricalParams):
        self.dimm, self.temp, self.pattern, self.params = dimm, temp, pattern, params
        self.calls = 0

    def passes(self, t: TimingParams) -> bool:
        self.calls += 1
        d = self.dimm
        codes = evaluate_cells(d.resistance, d.capacitance, d.retention, t, self.temp, t.t_refw,
                               self.pattern, self.params)
        return not codes.any()


def dimm_passes(dimm: Dimm, t: TimingParams, temp: float, params: ElectricalParams,
                pattern: float = WORST_PATTERN) -> bool:
    return _Tester(dimm, temp, pattern, params).passes(t)


def _search_field(tester: _Tester, current: TimingParams, name: str, base: TimingParams,
                  res: float) -> TimingParams:
    """Binary-search ``name`` down the grid from its current value, holding the others fixed."""
    b = getattr(base, name)
    floor = current.t_rcd if name == "t_ras" else 0.0
    k_cur = int(round((b - getattr(current, name)) / res))
    k_max = int(np.floor((b - floor) / res + 1e-9))
    while k_max > k_cur and _grid(b, k_max, res) <= 0:
        k_max -= 1
    if name == "t_ras" and _grid(b, k_max, res) < floor:
        k_max -= 1

    def ok(k: int) -> bool:
        return tester.passes(current.with_field(name, _grid(b, k, res)))

    lo, hi = k_cur, k_max + 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    # linear confirmation of the boundary
    if not ok(lo) or (lo + 1 <= k_max and ok(lo + 1)):
        raise ProfilingError(f"non-monotone pass/fail boundary for {name} on DIMM {tester.dimm.dimm_id}")
    return current.with_field(name, _grid(b, lo, res))


def min_safe_timings(req: ProfileRequest, params: ElectricalParams,
                     base: TimingParams | None = None) -> DimmTimingProfile:
    """Shortest error-free timings for one DIMM at ``req.temp``.

    ``per_parameter`` shrinks each field alone with the others at baseline;
    ``joint`` runs round-robin coordinate descent over (t_rcd, t_ras, t_wr,
    t_rp) until a full pass makes no progress.
    """
    base = replace(base or standard_ddr3(), t_refw=req.t_refw)
    validate(base)
    tester = _Tester(req.dimm, req.temp, req.pattern, params)
    if not tester.passes(base):
        raise StandardTimingsUnsafe(f"DIMM {req.dimm.dimm_id} fails baseline timings at {req.temp} C")
    if req.mode == "per_parameter":
        vals = {n: getattr(_search_field(tester, base, n, base, req.resolution), n) for n in CRITICAL_FIELDS}
        out = replace(base, **vals)
    else:
        out = base
        while True:
            before = out
            for n in CRITICAL_FIELDS:
                out = _search_field(tester, out, n, base, req.resolution)
            if out == before:
                break
    return make_profile(req.dimm.dimm_id, req.temp, out, base, req.mode)


def verify_minimality(profile: DimmTimingProfile, dimm: Dimm, params: ElectricalParams,
                      resolution: float = 0.05, pattern: float = WORST_PATTERN) -> bool:
    """Re-check the certificate: each minimum passes, and one step lower on it fails.

    Per-parameter minima are checked one field at a time against the
    baseline, joint minima as one set.
    """
    t = profile.min_safe
    tester = _Tester(dimm, profile.temp, pattern, params)
    base = replace(standard_ddr3(), t_refw=t.t_refw)
    solo = profile.mode == "per_parameter"
    if not solo and not tester.passes(t):
        return False
    for n in CRITICAL_FIELDS:
        start = base if solo else t
        if solo and not tester.passes(start.with_field(n, getattr(t, n))):
            return False
        v = round(getattr(t, n) - resolution, 9)
        if v <= 0 or (n == "t_ras" and v < start.t_rcd):
            continue
        if tester.passes(start.with_field(n, v)):
            return False
    return True


# ---------------------------------------------------------------------------
# populations
# ---------------------------------------------------------------------------

@dataclass
class PopulationReport:
    profiles: list[DimmTimingProfile]
    errors: list[dict] = field(default_factory=list)

    @property
    def temps(self) -> list[float]:
        return sorted({p.temp for p in self.profiles})

    def at(self, temp: float) -> list[DimmTimingProfile]:
        return [p for p in self.profiles if p.temp == temp]

    def summary(self) -> dict:
        out = {}
        base = standard_ddr3()
        b_read, b_write = latency_sums(base)
        for temp in self.temps:
            ps = self.at(temp)
            red = np.array([p.reductions for p in ps])
            sums = np.array([[p.read_sum, p.write_sum] for p in ps])
            entry = {"n_dimms": len(ps)}
            for i, n in enumerate(CRITICAL_FIELDS):
                entry[f"mean_red_{n[2:]}"] = float(red[:, i].mean())
                entry[f"std_red_{n[2:]}"] = float(red[:, i].std())
            entry["mean_read_sum_ns"] = float(sums[:, 0].mean())
            entry["std_read_sum_ns"] = float(sums[:, 0].std())
            entry["mean_write_sum_ns"] = float(sums[:, 1].mean())
            entry["std_write_sum_ns"] = float(sums[:, 1].std())
            entry["mean_read_red"] = 1.0 - entry["mean_read_sum_ns"] / b_read
            entry["mean_write_red"] = 1.0 - entry["mean_write_sum_ns"] / b_write
            out[_fmt(temp, 2)] = entry
        return out

    def mean_reductions(self, temp: float) -> tuple[float, ...]:
        red = np.array([p.reductions for p in self.at(temp)])
        return tuple(float(x) for x in red.mean(axis=0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for p in self.profiles:
            w.writerow(p.csv_row())
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps({"per_temperature": self.summary(), "errors": self.errors}, indent=2, sort_keys=True)

    def write(self, out_dir: Path, stem: str = "profile") -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}.csv").write_text(self.to_csv())
        (out_dir / f"{stem}_summary.json").write_text(self.summary_json() + "\n")
        (out_dir / f"{stem}_profiles.json").write_text(
            json.dumps([p.to_dict() for p in self.profiles], indent=1, sort_keys=True) + "\n")


def _profile_item(args):
    req, params = args
    try:
        return min_safe_timings(req, params), None
    except ProfilingError as exc:
        return None, {"dimm_id": req.dimm.dimm_id, "temp": req.temp, "error": type(exc).__name__,
                      "message": str(exc)}


def population_profile(dimms: Sequence[Dimm], temps: Sequence[float], params: ElectricalParams, *,
                       pattern: float = WORST_PATTERN, t_refw: float = 64.0, mode: str = "per_parameter",
                       resolution: float = 0.05, jobs: int = 1) -> PopulationReport:
    """Profile every (DIMM, temperature) pair; rows are ordered by DIMM then temperature."""
    if not dimms or not temps:
        raise ValueError("need at least one DIMM and one temperature")
    items = [(ProfileRequest(d, float(t), pattern, t_refw, mode, resolution), params)
             for d in dimms for t in temps]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_profile_item, items, chunksize=max(1, len(items) // (4 * jobs))))
    else:
        results = [_profile_item(it) for it in items]
    report = PopulationReport(profiles=[p for p, _ in results if p is not None],
                              errors=[e for _, e in results if e is not None])
    for e in report.errors:
        log.warning("DIMM %s at %s C: %s", e["dimm_id"], e["temp"], e["message"])
    return report


def refresh_sweep(dimm: Dimm, temp: float, intervals: Sequence[float], params: ElectricalParams, *,
                  pattern: float = WORST_PATTERN, resolution: float = 0.05,
                  mode: str = "per_parameter") -> list[DimmTimingProfile]:
    ivals = [float(i) for i in intervals]
    if any(i <= 0 for i in ivals) or ivals != sorted(ivals, reverse=True):
        raise ValueError("intervals must be positive and sorted descending")
    return [min_safe_timings(ProfileRequest(dimm, temp, pattern, i, mode, resolution), params) for i in ivals]


def interaction_study(dimm: Dimm, temp: float, fix_field: str, fix_fraction: float,
                      params: ElectricalParams, *, pattern: float = WORST_PATTERN, t_refw: float = 64.0,
                      resolution: float = 0.05) -> DimmTimingProfile:
    """Minimum safe values of the other fields while ``fix_field`` is held at a reduced value.

    Raises :class:`InfeasibleFix` if the fixed reduction alone already fails.
    """
    if fix_field not in CRITICAL_FIELDS:
        raise ValueError(f"unknown field {fix_field!r}")
    base = replace(standard_ddr3(), t_refw=t_refw)
    tester = _Tester(dimm, temp, pattern, params)
    if not tester.passes(base):
        raise StandardTimingsUnsafe(f"DIMM {dimm.dimm_id} fails baseline timings at {temp} C")
    fixed = base.with_field(fix_field, round(getattr(base, fix_field) * (1.0 - fix_fraction), 9))
    validate(fixed)
    if not tester.passes(fixed):
        raise InfeasibleFix(f"{fix_field} reduced by {fix_fraction:.4f} fails on its own")
    solo = min_safe_timings(ProfileRequest(dimm, temp, pattern, t_refw, "per_parameter", resolution), params)
    vals = {}
    for n in CRITICAL_FIELDS:
        if n == fix_field:
            continue
        v = getattr(_search_field(tester, fixed, n, base, resolution), n)
        # t_ras may legitimately go lower once t_rcd (its floor) is fixed lower
        floored = n == "t_ras" and solo.min_safe.t_ras <= base.t_rcd
        if v < getattr(solo.min_safe, n) and not floored:
            raise ProfilingError(f"{n} shrank further with {fix_field} fixed: model is not monotone")
        vals[n] = v
    return make_profile(dimm.dimm_id, temp, replace(fixed, **vals), base, "interaction")


# ---------------------------------------------------------------------------
# repeatability
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RepeatabilityResult:
    scenario: str
    n_erroneous: int
    n_repeatable: int

    @property
    def status(self) -> str:
        return "no_erroneous_cells" if self.n_erroneous == 0 else "ok"

    @property
    def fraction(self) -> float | None:
        return None if self.n_erroneous == 0 else self.n_repeatable / self.n_erroneous


def _scenario_condition(scenario: str, i: int, timings: TimingParams, temp: float, pattern: float):
    """(timings, temp, pattern, test) of iteration ``i`` within a scenario."""
    if scenario == "same_test":
        return timings, temp, pattern, "both"
    if scenario == "data_pattern":
        return timings, temp, (WORST_PATTERN, SOLID_PATTERN)[i % 2] * pattern / WORST_PATTERN, "both"
    if scenario == "timing_combination":
        name = CRITICAL_FIELDS[i % 4]
        return timings.with_field(name, round(getattr(timings, name) * 0.99, 9)), temp, pattern, "both"
    if scenario == "temperature":
        return timings, temp + (-5.0 if i % 2 == 0 else 5.0), pattern, "both"
    if scenario == "read_write":
        return timings, temp, pattern, ("read", "write")[i % 2]
    raise ValueError(f"unknown scenario {scenario!r}")


def repeatability_test(dimms: Dimm | Sequence[Dimm], timings: TimingParams, temp: float,
                       params: ElectricalParams, *, scenarios: Iterable[str] = ("same_test",),
                       iterations: int = 10, trial_noise_sigma: float = 0.35, seed: int = 0,
                       pattern: float = WORST_PATTERN) -> dict[str, RepeatabilityResult]:
    """Fraction of erroneous cells that fail in every iteration of each scenario.

    Each iteration draws a fresh lognormal multiplier (shape
    ``trial_noise_sigma``) on every cell's sense threshold. A cell is erroneous
    if it fails at least once and repeatable if it fails every time.
    """
    if iterations < 2:
        raise ValueError("iterations must be >= 2")
    validate(timings)
    dimms = [dimms] if isinstance(dimms, Dimm) else list(dimms)
    R = np.concatenate([d.resistance for d in dimms])
    C = np.concatenate([d.capacitance for d in dimms])
    Rt = np.concatenate([d.retention for d in dimms])
    scenarios = list(scenarios)
    children = np.random.SeedSequence(int(seed)).spawn(len(scenarios))
    out = {}
    for scen, ss in zip(scenarios, children):
        rngs = [np.random.default_rng(s) for s in ss.spawn(iterations)]
        fails = np.empty((iterations, R.size), dtype=bool)
        for i, rng in enumerate(rngs):
            t, tc, pat, test = _scenario_condition(scen, i, timings, temp, pattern)
            noise = np.exp(trial_noise_sigma * rng.standard_normal(R.size)) if trial_noise_sigma > 0 else 1.0
            codes = stage_codes(R, C, Rt, t.t_rcd, t.t_ras, t.t_wr, t.t_rp, t.t_refw, tc, t.t_refw,
                                params.d_sense * noise * pat, params, test)
            fails[i] = codes != 0
        ever = fails.any(axis=0)
        always = fails.all(axis=0)
        out[scen] = RepeatabilityResult(scen, int(ever.sum()), int(always.sum()))
    return out


# ---------------------------------------------------------------------------
# continuous per-cell minima (used by calibration)
# ---------------------------------------------------------------------------

def cell_field_minima(R, C, Rt, temp: float, params: ElectricalParams, base: TimingParams | None = None,
                      pattern: float = WORST_PATTERN, iters: int = 26, span: float = 3.0) -> np.ndarray:
    """Continuous per-cell minimum of each critical field, others at ``base``.

    Returns shape ``(n_cells, 4)``; ``inf`` where a cell fails even at
    ``span * base``.
    """
    base = base or standard_ddr3()
    thr = params.d_sense * pattern
    R, C, Rt = (np.asarray(a, dtype=float) for a in (R, C, Rt))
    out = np.empty((R.size, 4))
    for j, name in enumerate(CRITICAL_FIELDS):
        b = getattr(base, name)
        lo = np.zeros(R.size)
        hi = np.full(R.size, span * b)
        args = dict(t_rcd=base.t_rcd, t_ras=base.t_ras, t_wr=base.t_wr, t_rp=base.t_rp)

        def ok(x):
            a = dict(args)
            a[name] = x
            return stage_codes(R, C, Rt, a["t_rcd"], a["t_ras"], a["t_wr"], a["t_rp"], base.t_refw,
                               temp, base.t_refw, thr, params) == 0

        never = ~ok(hi)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            good = ok(mid)
            hi = np.where(good, mid, hi)
            lo = np.where(good, lo, mid)
        hi[never] = np.inf
        out[:, j] = hi
    return out


def population_field_minima(dimms: Sequence[Dimm], temp: float, params: ElectricalParams,
                            base: TimingParams | None = None, pattern: float = WORST_PATTERN) -> np.ndarray:
    """Continuous per-DIMM minima, shape ``(n_dimms, 4)``."""
    R = np.concatenate([d.resistance for d in dimms])
    C = np.concatenate([d.capacitance for d in dimms])
    Rt = np.concatenate([d.retention for d in dimms])
    per_cell = cell_field_minima(R, C, Rt, temp, params, base, pattern)
    starts = np.cumsum([0] + [len(d) for d in dimms[:-1]])
    return np.maximum.reduceat(per_cell, starts, axis=0)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

DEFAULT_TARGETS = (0.27, 0.32, 0.33, 0.18)


class CalibrationInfeasible(ProfilingError):
    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


def solve_corner(params: ElectricalParams, spec, temp: float = 85.0, base: TimingParams | None = None,
                 pattern: float = WORST_PATTERN) -> ElectricalParams | None:
    """Pin the worst-case corner to exactly ``spec.extra_margin_fraction`` slack per field.

    Keeps ``c_ratio``, ``tau_leak_ref``, ``v_read``, ``t_overhead_act`` and the
    temperature law, and solves for ``tau_sense``, ``tau_restore_nominal``,
    ``tau_precharge`` and ``t_overhead_pre``. Returns ``None`` when no
    consistent solution exists. With all fields at baseline except one
    shortened by the margin ``m``:

    * t_wr: the first read lands exactly on the read-out level ``g``;
    * t_ras: the second read does (baseline precharge residual);
    * t_rp: the second read does (baseline restoration);
    * t_rcd: the weaker of the two reads exactly meets the shortened
      sensing time.
    """
    from scipy.optimize import brentq

    from .variation import worst_case_corner

    S = base or standard_ddr3()
    m = spec.extra_margin_fraction
    cell = worst_case_corner(spec)
    c = params.c_ratio / cell.capacitance_mult
    L = float(np.exp(-S.t_refw / leak_tau(temp, cell.retention_mult, params)))
    v, toa = params.v_read, params.t_overhead_act
    thr = params.d_sense * pattern

    def parts(ts):
        g = 1 - (1 - v) * np.exp((S.t_rcd - toa) / ts)
        d_star = 1 - (1 - v) * np.exp(((1 - m) * S.t_rcd - toa) / ts)
        qg = 0.5 + g * (1 + c)
        if g <= 0 or qg / L >= 1:
            return None
        tau_w = -(1 - m) * S.t_wr / np.log(1 - qg / L)
        d1 = (L * (1 - np.exp(-S.t_wr / tau_w)) - 0.5) / (1 + c)
        qs = 0.5 + d1
        d_short = L * (1 - (1 - qs) * np.exp(-((1 - m) * S.t_ras - toa) / tau_w)) - qg
        d_full = L * (1 - (1 - qs) * np.exp(-(S.t_ras - toa) / tau_w)) - qg
        d3 = g + (d_full - d_short) / (1 + c)
        return g, d_star, tau_w, d1, d3, d_short, d_full

    def residual(ts):
        # vectorized f for bracketing the roots; invalid entries masked by valid()
        g = 1 - (1 - v) * np.exp((S.t_rcd - toa) / ts)
        d_star = 1 - (1 - v) * np.exp(((1 - m) * S.t_rcd - toa) / ts)
        qg = 0.5 + g * (1 + c)
        tau_w = -(1 - m) * S.t_wr / np.log(1 - qg / L)
        d1 = (L * (1 - np.exp(-S.t_wr / tau_w)) - 0.5) / (1 + c)
        qs = 0.5 + d1
        d_short = L * (1 - (1 - qs) * np.exp(-((1 - m) * S.t_ras - toa) / tau_w)) - qg
        d_full = L * (1 - (1 - qs) * np.exp(-(S.t_ras - toa) / tau_w)) - qg
        return np.minimum(d1, g + (d_full - d_short) / (1 + c)) - d_star

    def valid(ts):
        g = 1 - (1 - v) * np.exp((S.t_rcd - toa) / ts)
        return (g > 0) & (0.5 + g * (1 + c) < L)

    def f(ts):
        p = parts(ts)
        return np.nan if p is None else min(p[3], p[4]) - p[1]

    grid = np.exp(np.linspace(np.log(0.3), np.log(5000.0), 800))
    with np.errstate(all="ignore"):
        vals = np.where(valid(grid), residual(grid), np.nan)
    for k in range(len(grid) - 1):
        fa, fb = vals[k], vals[k + 1]
        if not (np.isfinite(fa) and np.isfinite(fb)) or fa * fb > 0:
            continue
        ts = brentq(f, grid[k], grid[k + 1], xtol=1e-13)
        g, _, tau_w, _, _, d_short, d_full = parts(ts)
        if not (g >= thr and 0 < d_short < d_full < 0.5):
            continue
        tp = m * S.t_rp / np.log(d_full / d_short)
        top = S.t_rp - tp * np.log(0.5 / d_short)
        if top <= 0:
            continue
        try:
            return replace(params, tau_sense=float(ts), tau_restore_nominal=float(tau_w / cell.resistance_mult),
                           tau_precharge=float(tp), t_overhead_pre=float(top))
        except ValueError:
            continue
    return None


@dataclass(frozen=True)
class CalibrationResult:
    params: ElectricalParams
    targets: tuple[float, float, float, float]
    achieved: tuple[float, float, float, float]
    temp: float
    hot_achieved: tuple[float, float, float, float] | None = None
    read_gap: float | None = None
    iterations: int = 0

    @property
    def residuals(self) -> tuple[float, ...]:
        return tuple(a - t for a, t in zip(self.achieved, self.targets))

    def report(self) -> dict:
        out = {"temp_c": self.temp, "params": self.params.to_dict(), "iterations": self.iterations, "fields": {}}
        for n, t, a in zip(CRITICAL_FIELDS, self.targets, self.achieved):
            out["fields"][n] = {"target": t, "achieved": a, "residual": a - t}
        if self.hot_achieved is not None:
            out["hot_achieved"] = dict(zip(CRITICAL_FIELDS, self.hot_achieved))
            out["read_gap"] = self.read_gap
        return out


def read_sum_reduction(red: Sequence[float], base: TimingParams | None = None) -> float:
    b = base or standard_ddr3()
    return (red[0] * b.t_rcd + red[1] * b.t_ras + red[3] * b.t_rp) / (b.t_rcd + b.t_ras + b.t_rp)


def continuous_reductions(dimms: Sequence[Dimm], temp: float, params: ElectricalParams) -> np.ndarray:
    base = standard_ddr3()
    mins = population_field_minima(dimms, temp, params, base)
    return 1.0 - mins / np.array(base.critical())


def calibrate(spec, params: ElectricalParams, targets: Sequence[float] = DEFAULT_TARGETS, temp: float = 55.0, *,
              dimms: Sequence[Dimm] | None = None, n_dimms: int = 100, seed: int = 0, hot_temp: float = 85.0,
              min_read_gap: float = 0.04, tol: float = 0.05, max_iter: int = 400) -> CalibrationResult:
    """Fit the free electrical constants to population-mean reductions at ``temp``.

    The corner at ``hot_temp`` is re-pinned by :func:`solve_corner` at every
    step, so only ``c_ratio``, ``tau_leak_ref``, ``t_overhead_act`` and
    ``v_read`` are searched (Nelder-Mead in transformed coordinates). A
    hinge penalty keeps the read-sum reduction gap between ``temp`` and
    ``hot_temp`` at least ``min_read_gap``.

    Returns the input unchanged when it already meets every target within
    ``tol`` and the read gap; raises :class:`CalibrationInfeasible` when the best fit
    misses any target by more than ``tol``.
    """
    from scipy.optimize import minimize

    from .variation import sample_population

    targets = tuple(float(t) for t in targets)
    if len(targets) != 4:
        raise ValueError("need four targets (t_rcd, t_ras, t_wr, t_rp)")
    if dimms is None:
        dimms = sample_population(spec, seed, n_dimms)

    def measure(p):
        red = continuous_reductions(dimms, temp, p)
        hot = continuous_reductions(dimms, hot_temp, p)
        if not (np.isfinite(red).all() and np.isfinite(hot).all()):
            return None
        r, h = tuple(red.mean(axis=0)), tuple(hot.mean(axis=0))
        return r, h, read_sum_reduction(r) - read_sum_reduction(h)

    def pack(p):
        return np.array([np.log(p.c_ratio), np.log(p.tau_leak_ref), np.log(p.t_overhead_act), np.log(p.v_read)])

    def unpack(x):
        try:
            p = replace(params, c_ratio=float(np.exp(x[0])), tau_leak_ref=float(np.exp(x[1])),
                        t_overhead_act=float(np.exp(x[2])), v_read=float(np.exp(x[3])))
        except ValueError:
            return None
        return solve_corner(p, spec, hot_temp)

    def loss(x):
        p = unpack(x)
        if p is None:
            return 1e3
        got = measure(p)
        if got is None:
            return 1e3
        r, _, gap = got
        err = sum((a - t) ** 2 for a, t in zip(r, targets))
        return err + 5.0 * max(0.0, min_read_gap - gap) ** 2 * 10

    start = measure(params)
    if start is not None and all(abs(a - t) <= tol for a, t in zip(start[0], targets)) \
            and start[2] >= min_read_gap:
        return CalibrationResult(params, targets, start[0], temp, start[1], start[2], 0)

    x0 = pack(params)
    res = minimize(loss, x0, method="Nelder-Mead",
                   options=dict(maxiter=max_iter, xatol=1e-3, fatol=1e-7))
    best = unpack(res.x)
    got = measure(best) if best is not None else None
    if got is None:
        raise CalibrationInfeasible("no parameter set satisfies the corner constraints", None)
    r, h, gap = got
    resid = tuple(a - t for a, t in zip(r, targets))
    if any(abs(e) > tol for e in resid):
        raise CalibrationInfeasible(f"best fit misses targets: residuals {np.round(resid, 4).tolist()}", resid)
    return CalibrationResult(best, targets, r, temp, h, gap, int(res.nit))
