"""Temperature-adaptive timing selection on the memory-controller side.

A :class:`ProfileTable` holds, for every DIMM, a short ascending list of
temperature bins. Each bin carries the timings profiled at its upper
temperature, inflated by a small timing guardband. At run time the controller
picks the coolest bin whose upper edge still clears the current temperature
plus a temperature guardband, with hysteresis on the way back down.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .charge_model import STAGES, WORST_PATTERN, ElectricalParams, evaluate_cells
from .profiler import DimmTimingProfile
from .timing import CRITICAL_FIELDS, TimingParams, elementwise_max, latency_sums, standard_ddr3
from .variation import Dimm

log = logging.getLogger(__name__)

ANCHOR_TEMP = 85.0
TIMELINE_COLUMNS = ("time_s", "temp_c", "bin", "read_sum_ns", "write_sum_ns")
STANDARD_BIN = "standard"


class TableError(ValueError):
    pass


class TraceError(ValueError):
    pass


class SafetyViolation(RuntimeError):
    """A cell failed under the timings the controller applied."""

    def __init__(self, time_s: float, dimm_id: int, cell: int, stage: str, temp: float, timings: TimingParams):
        super().__init__(f"t={time_s:g}s dimm={dimm_id} cell={cell} stage={stage} temp={temp:.3f}C")
        self.time_s, self.dimm_id, self.cell, self.stage = time_s, dimm_id, cell, stage
        self.temp, self.timings = temp, timings

    def record(self) -> dict:
        return {"time_s": self.time_s, "dimm_id": self.dimm_id, "cell": self.cell, "stage": self.stage,
                "temp_c": self.temp, "timings": self.timings.to_dict()}


@dataclass(frozen=True)
class Bin:
    upper: float
    timings: TimingParams


@dataclass(frozen=True)
class ProfileTable:
    bins: dict[int, tuple[Bin, ...]]
    guardband_temp: float = 5.0
    guardband_timing_fraction: float = 0.02

    def __post_init__(self):
        if self.guardband_temp < 0 or self.guardband_timing_fraction < 0:
            raise TableError("guardbands must be >= 0")
        for dimm_id, bins in self.bins.items():
            if not bins:
                raise TableError(f"DIMM {dimm_id} has no bins")
            uppers = [b.upper for b in bins]
            if uppers != sorted(uppers) or len(set(uppers)) != len(uppers):
                raise TableError(f"DIMM {dimm_id}: bins not strictly ascending")
            if uppers[-1] < ANCHOR_TEMP:
                raise TableError(f"DIMM {dimm_id}: highest bin does not cover {ANCHOR_TEMP} C")
            for lo, hi in zip(bins, bins[1:]):
                if not hi.timings.dominates(lo.timings):
                    raise TableError(f"DIMM {dimm_id}: timings decrease between bins {lo.upper} and {hi.upper}")

    @property
    def dimm_ids(self) -> list[int]:
        return sorted(self.bins)

    def to_dict(self) -> dict:
        return {
            "guardband_temp": self.guardband_temp,
            "guardband_timing_fraction": self.guardband_timing_fraction,
            "dimms": {str(k): [{"upper": b.upper, "timings": b.timings.to_dict()} for b in self.bins[k]]
                      for k in self.dimm_ids},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileTable":
        bins = {int(k): tuple(Bin(float(b["upper"]), TimingParams.from_dict(b["timings"])) for b in v)
                for k, v in d["dimms"].items()}
        return cls(bins, float(d["guardband_temp"]), float(d["guardband_timing_fraction"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ProfileTable":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _guarded(t: TimingParams, frac: float, base: TimingParams) -> TimingParams:
    vals = {n: min(getattr(base, n), round(getattr(t, n) * (1.0 + frac), 9)) for n in CRITICAL_FIELDS}
    return replace(t, **vals)


def build_table(profiles: Iterable[DimmTimingProfile], guardband_temp: float = 5.0,
                guardband_timing_fraction: float = 0.02, base: TimingParams | None = None) -> ProfileTable:
    """One bin per profiled temperature, upper edge at that temperature.

    Timings are min_safe inflated by ``guardband_timing_fraction`` and capped
    at the baseline. A running elementwise max enforces monotonicity; bins
    left identical to their hotter neighbour are merged into it.

    Only ``joint`` profiles are accepted: per-parameter minima are each safe
    alone but generally not when applied together.
    """
    base = base or standard_ddr3()
    by_dimm: dict[int, dict[float, TimingParams]] = {}
    for p in profiles:
        if p.mode != "joint":
            raise TableError(f"DIMM {p.dimm_id} at {p.temp} C: table needs joint-mode profiles, got {p.mode!r}")
        by_dimm.setdefault(p.dimm_id, {})[float(p.temp)] = p.min_safe
    if not by_dimm:
        raise TableError("no profiles given")
    bins = {}
    for dimm_id, temps in by_dimm.items():
        if ANCHOR_TEMP not in temps:
            raise TableError(f"DIMM {dimm_id}: profiles lack the {ANCHOR_TEMP} C anchor")
        out: list[Bin] = []
        running = None
        for temp in sorted(temps):
            t = _guarded(temps[temp], guardband_timing_fraction, base)
            running = t if running is None else elementwise_max([running, t])
            out.append(Bin(temp, running))
        merged: list[Bin] = []
        for b in out:
            if merged and merged[-1].timings == b.timings:
                merged[-1] = b
            else:
                merged.append(b)
        bins[dimm_id] = tuple(merged)
    return ProfileTable(bins, guardband_temp, guardband_timing_fraction)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def _target_index(uppers: Sequence[float], temp: float, guard: float) -> int:
    for i, u in enumerate(uppers):
        if u >= temp + guard:
            return i
    return len(uppers)


def select_timings(table: ProfileTable, dimm_id: int, temp: float,
                   base: TimingParams | None = None) -> TimingParams:
    """Stateless selection: coolest bin with ``upper >= temp + guardband_temp``."""
    base = base or standard_ddr3()
    bins = table.bins.get(dimm_id)
    if bins is None:
        log.warning("DIMM %s not in profile table; using standard timings", dimm_id)
        return base
    i = _target_index([b.upper for b in bins], temp, table.guardband_temp)
    return base if i == len(bins) else bins[i].timings


class Selector:
    """Hysteretic bin selector for one set of bin edges.

    Promotion is immediate. Demotion to a cooler bin ``j`` happens only once
    ``temp <= upper_j - 2 * guard``, i.e. one guardband below the point where
    bin ``j`` would first become eligible. Index ``len(uppers)`` means
    standard timings.
    """

    def __init__(self, uppers: Sequence[float], guard: float):
        self.uppers = list(uppers)
        self.guard = guard
        self.current: int | None = None
        self.transitions = 0

    def step(self, temp: float) -> int:
        target = _target_index(self.uppers, temp, self.guard)
        if self.current is None:
            self.current = target
        elif target > self.current:
            self.current = target
            self.transitions += 1
        elif target < self.current:
            lower = [j for j in range(target, self.current) if temp <= self.uppers[j] - 2 * self.guard]
            if lower:
                self.current = lower[0]
                self.transitions += 1
        return self.current


def naive_selection(uppers: Sequence[float], temps: Iterable[float], guard: float) -> list[int]:
    """Reference selector without hysteresis."""
    return [_target_index(uppers, t, guard) for t in temps]


# ---------------------------------------------------------------------------
# temperature traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TempTrace:
    times: np.ndarray
    temps: np.ndarray
    slew_limit: float = 0.1

    def __post_init__(self):
        if len(self.times) != len(self.temps):
            raise TraceError("times and temps differ in length")
        if len(self.times) > 1:
            dt = np.diff(self.times)
            if np.any(dt <= 0):
                raise TraceError("trace times must be strictly increasing")
            slope = np.abs(np.diff(self.temps)) / dt
            worst = int(np.argmax(slope))
            if slope[worst] > self.slew_limit * (1 + 1e-9):
                raise TraceError(f"slew {slope[worst]:.4f} C/s at t={self.times[worst]:g}s exceeds "
                                 f"limit {self.slew_limit}")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def max_slope(self) -> float:
        if len(self) < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.temps)) / np.diff(self.times)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("time_s", "temp_c"))
        for t, c in zip(self.times, self.temps):
            w.writerow((f"{t:.3f}", f"{c:.6f}"))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path: str | Path, slew_limit: float = 0.1) -> "TempTrace":
        rows = list(csv.DictReader(Path(path).read_text().splitlines()))
        return cls(np.array([float(r["time_s"]) for r in rows]), np.array([float(r["temp_c"]) for r in rows]),
                   slew_limit)


def gen_temp_trace(profile: str, duration: float, slew_cap: float = 0.1, seed: int = 0, *,
                   interval: float = 1.0, temp: float = 34.0, start: float = 30.0, end: float = 40.0,
                   mean: float = 45.0, amplitude: float = 20.0, period: float = 86400.0) -> TempTrace:
    """Synthetic temperature trace sampled every ``interval`` seconds.

    ``constant`` holds ``temp``; ``ramp`` goes linearly from ``start`` to
    ``end`` over ``duration``; ``diurnal`` is a sine around ``mean`` whose
    phase is drawn from ``seed``.
    """
    if not duration > 0 or not interval > 0:
        raise TraceError("duration and interval must be > 0")
    n = int(math.floor(duration / interval + 1e-9)) + 1
    t = np.arange(n) * interval
    if profile == "constant":
        y = np.full(n, float(temp))
    elif profile == "ramp":
        slope = abs(end - start) / duration
        if slope > slew_cap * (1 + 1e-12):
            raise TraceError(f"ramp needs {slope:.4f} C/s, above slew cap {slew_cap}")
        y = start + (end - start) * np.minimum(t / duration, 1.0)
    elif profile == "diurnal":
        slope = 2 * math.pi * abs(amplitude) / period
        if slope > slew_cap:
            raise TraceError(f"diurnal swing needs {slope:.4f} C/s, above slew cap {slew_cap}")
        phase = np.random.default_rng(seed).uniform(0.0, 2 * math.pi)
        y = mean + amplitude * np.sin(2 * math.pi * t / period + phase)
    else:
        raise TraceError(f"unknown trace profile {profile!r}")
    return TempTrace(t, y, slew_cap)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@dataclass
class ControllerReport:
    times: np.ndarray
    temps: np.ndarray
    labels: list[str]
    read_sums: np.ndarray
    write_sums: np.ndarray
    transitions: dict[int, int] = field(default_factory=dict)
    violations: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)

    def _weights(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(0)
        if len(self) == 1:
            return np.ones(1)
        dt = np.diff(self.times)
        return np.append(dt, np.median(dt))

    @property
    def avg_read_sum(self) -> float | None:
        return float(np.average(self.read_sums, weights=self._weights())) if len(self) else None

    @property
    def avg_write_sum(self) -> float | None:
        return float(np.average(self.write_sums, weights=self._weights())) if len(self) else None

    def timeline_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TIMELINE_COLUMNS)
        for row in zip(self.times, self.temps, self.labels, self.read_sums, self.write_sums):
            w.writerow((f"{row[0]:.3f}", f"{row[1]:.4f}", row[2], f"{row[3]:.4f}", f"{row[4]:.4f}"))
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "samples": len(self),
            "violations": self.violations,
            "avg_read_sum_ns": self.avg_read_sum,
            "avg_write_sum_ns": self.avg_write_sum,
            "transitions": {str(k): v for k, v in sorted(self.transitions.items())},
            "bins_visited": sorted(set(self.labels)),
        }

    def write(self, out_dir: Path, stem: str = "controller") -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{stem}_timeline.csv").write_text(self.timeline_csv())
        (out_dir / f"{stem}_report.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _label(bins: Sequence[Bin], i: int) -> str:
    return STANDARD_BIN if i == len(bins) else f"{bins[i].upper:g}"


def _check_segment(dimm: Dimm, t: TimingParams, temps: np.ndarray, times: np.ndarray,
                   params: ElectricalParams, pattern: float) -> SafetyViolation | None:
    """Check one constant-timing segment; failing is monotone in temperature."""
    def codes(temp):
        return evaluate_cells(dimm.resistance, dimm.capacitance, dimm.retention, t, float(temp), t.t_refw,
                              pattern, params)

    if not codes(temps.max()).any():
        return None
    for time_s, temp in zip(times, temps):
        c = codes(temp)
        if c.any():
            cell = int(np.flatnonzero(c)[0])
            return SafetyViolation(float(time_s), dimm.dimm_id, cell, STAGES[int(c[cell])].value, float(temp), t)
    return None


def simulate_controller(table: ProfileTable, trace: TempTrace, dimms: Sequence[Dimm], params: ElectricalParams,
                        pattern: float = WORST_PATTERN, base: TimingParams | None = None) -> ControllerReport:
    """Apply the hysteretic selector to every DIMM along ``trace`` and verify every cell.

    The timeline reports, per sample, the hottest bin label selected across
    DIMMs and the mean latency sums across DIMMs. Raises
    :class:`SafetyViolation` for the earliest failing sample.
    """
    base = base or standard_ddr3()
    n = len(trace)
    if n == 0:
        return ControllerReport(np.zeros(0), np.zeros(0), [], np.zeros(0), np.zeros(0))
    times, temps = np.asarray(trace.times, float), np.asarray(trace.temps, float)
    read = np.zeros(n)
    write = np.zeros(n)
    rank = np.full(n, -1)
    label_of_rank: dict[int, str] = {}
    transitions: dict[int, int] = {}
    seq_cache: dict[tuple[float, ...], tuple[np.ndarray, int]] = {}
    first: SafetyViolation | None = None
    for d in dimms:
        bins = table.bins.get(d.dimm_id)
        if bins is None:
            log.warning("DIMM %s not in profile table; using standard timings", d.dimm_id)
            bins = ()
        uppers = tuple(b.upper for b in bins)
        if uppers not in seq_cache:
            sel = Selector(uppers, table.guardband_temp)
            seq_cache[uppers] = (np.array([sel.step(x) for x in temps]), sel.transitions)
        seq, transitions[d.dimm_id] = seq_cache[uppers]
        choices = list(bins) + [Bin(math.inf, base)]
        sums = np.array([latency_sums(b.timings) for b in choices])
        read += sums[seq, 0]
        write += sums[seq, 1]
        for i in np.unique(seq):
            r = int(round(choices[i].upper * 1000)) if i < len(bins) else 10**9
            label_of_rank[r] = _label(bins, int(i))
            rank = np.where(seq == i, np.maximum(rank, r), rank)
        # constant-timing segments
        edges = np.flatnonzero(np.diff(seq)) + 1
        for lo, hi in zip(np.r_[0, edges], np.r_[edges, n]):
            v = _check_segment(d, choices[seq[lo]].timings, temps[lo:hi], times[lo:hi], params, pattern)
            if v is not None:
                if first is None or v.time_s < first.time_s:
                    first = v
                break
    if first is not None:
        raise first
    k = len(dimms)
    labels = [label_of_rank[int(r)] for r in rank]
    return ControllerReport(times, temps, labels, read / k, write / k, transitions)
