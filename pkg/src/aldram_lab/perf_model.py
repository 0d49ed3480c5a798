"""Workload performance estimates from timing-parameter reductions.

Two routes are provided. ``estimate_speedup`` is an analytic CPI model driven
by MPKI and row-buffer outcome fractions. ``trace_simulate`` is a minimal
open-page bank state machine used to validate the analytic latency
composition on synthetic traces.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .timing import CRITICAL_FIELDS, TimingParams, validate

Kind = Literal["hit", "miss", "conflict"]
Op = Literal["read", "write"]

DEFAULT_TCK_NS = 1.25
DEFAULT_BLOCKING_FACTOR = 0.7
DEFAULT_MPKI_THRESHOLD = 10.0

COHORT_COLUMNS = ("name", "mpki", "row_hit_frac", "row_miss_frac", "row_conflict_frac", "write_frac", "base_cpi")


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadStats:
    name: str
    mpki: float
    row_hit_frac: float
    row_miss_frac: float
    row_conflict_frac: float
    write_frac: float
    base_cpi: float

    def __post_init__(self):
        fr = (self.row_hit_frac, self.row_miss_frac, self.row_conflict_frac, self.write_frac)
        if any(not 0.0 <= f <= 1.0 for f in fr):
            raise WorkloadError(f"{self.name}: fractions must lie in [0, 1]")
        if abs(self.row_hit_frac + self.row_miss_frac + self.row_conflict_frac - 1.0) > 1e-9:
            raise WorkloadError(f"{self.name}: hit+miss+conflict must sum to 1")
        if self.mpki < 0:
            raise WorkloadError(f"{self.name}: mpki must be >= 0")
        if not self.base_cpi > 0:
            raise WorkloadError(f"{self.name}: base_cpi must be > 0")


@dataclass(frozen=True)
class PerfKnobs:
    mpki_threshold: float = DEFAULT_MPKI_THRESHOLD
    blocking_factor: float = DEFAULT_BLOCKING_FACTOR
    t_ck: float = DEFAULT_TCK_NS


def classify(stats: WorkloadStats, threshold: float = DEFAULT_MPKI_THRESHOLD) -> str:
    return "memory_intensive" if stats.mpki >= threshold else "non_intensive"


def access_latency(t: TimingParams, kind: Kind, op: Op = "read") -> float:
    """Unloaded latency of one access under an open-page policy.

    A write that conflicts must wait out the prior row's write recovery as
    well as the precharge, so its precharge term is ``max(t_rp, t_wr)``.
    """
    if kind == "hit":
        return t.t_cl
    if kind == "miss":
        return t.t_rcd + t.t_cl
    if kind == "conflict":
        pre = t.t_rp if op == "read" else max(t.t_rp, t.t_wr)
        return pre + t.t_rcd + t.t_cl
    raise WorkloadError(f"unknown access kind {kind!r}")


def amat(stats: WorkloadStats, t: TimingParams) -> float:
    """Average memory access time (ns) for the workload's outcome mix."""
    total = 0.0
    for kind, frac in (("hit", stats.row_hit_frac), ("miss", stats.row_miss_frac),
                       ("conflict", stats.row_conflict_frac)):
        lat = (1.0 - stats.write_frac) * access_latency(t, kind, "read") \
            + stats.write_frac * access_latency(t, kind, "write")
        total += frac * lat
    return total


def cpi(stats: WorkloadStats, t: TimingParams, knobs: PerfKnobs = PerfKnobs()) -> float:
    return stats.base_cpi + (stats.mpki / 1000.0) * amat(stats, t) / knobs.t_ck * knobs.blocking_factor


def estimate_speedup(stats: WorkloadStats, base: TimingParams, reduced: TimingParams,
                     knobs: PerfKnobs = PerfKnobs()) -> float:
    """Percent speedup of ``reduced`` over ``base``; never negative."""
    for name in CRITICAL_FIELDS:
        if getattr(reduced, name) > getattr(base, name):
            raise WorkloadError(f"reduced {name} exceeds base")
    if reduced.t_cl != base.t_cl:
        raise WorkloadError("t_cl is fixed and must match between base and reduced")
    return 100.0 * (cpi(stats, base, knobs) / cpi(stats, reduced, knobs) - 1.0)


# ---------------------------------------------------------------------------
# bank-state trace simulator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Access:
    bank: int
    row: int
    op: str = "read"


@dataclass
class AccessTrace:
    accesses: list[Access]
    t_ck: float = DEFAULT_TCK_NS

    def __post_init__(self):
        for a in self.accesses:
            if a.op not in ("read", "write"):
                raise WorkloadError(f"bad op {a.op!r}")


@dataclass
class TraceResult:
    total_time: float
    latencies: list[float]
    kinds: list[str]
    events: list[tuple[float, int, str]] = field(repr=False, default_factory=list)

    @property
    def amat(self) -> float:
        return float(np.mean(self.latencies)) if self.latencies else 0.0


@dataclass
class _Bank:
    open_row: int | None = None
    act_time: float = -math.inf
    pre_done: float = 0.0
    write_end: float = -math.inf


def trace_simulate(trace: AccessTrace, t: TimingParams) -> TraceResult:
    """Serve ``trace`` in order on one channel; each access issues once the previous completes.

    Every bank starts precharged at time zero and rows are left open after use.
    Write data is taken to finish ``t_cl`` after the column command.
    """
    validate(t)
    banks: dict[int, _Bank] = {}
    now = 0.0
    lat: list[float] = []
    kinds: list[str] = []
    events: list[tuple[float, int, str]] = []
    for a in trace.accesses:
        b = banks.setdefault(a.bank, _Bank())
        if b.open_row == a.row:
            kind = "hit"
            col = max(now, b.act_time + t.t_rcd)
        else:
            if b.open_row is None:
                kind = "miss"
                act = max(now, b.pre_done)
            else:
                kind = "conflict"
                pre = max(now, b.act_time + t.t_ras, b.write_end + t.t_wr)
                events.append((pre, a.bank, "PRE"))
                act = pre + t.t_rp
            events.append((act, a.bank, "ACT"))
            b.open_row, b.act_time = a.row, act
            col = act + t.t_rcd
        events.append((col, a.bank, "WR" if a.op == "write" else "RD"))
        done = col + t.t_cl
        if a.op == "write":
            b.write_end = done
        lat.append(done - now)
        kinds.append(kind)
        now = done
    return TraceResult(total_time=now, latencies=lat, kinds=kinds, events=events)


def check_trace_events(events: Sequence[tuple[float, int, str]], t: TimingParams, tol: float = 1e-9) -> list[str]:
    """Independent constraint checker over simulator events; returns violation messages."""
    problems = []
    last: dict[int, dict[str, float]] = {}
    open_: dict[int, bool] = {}
    for time, bank, cmd in events:
        st = last.setdefault(bank, {})
        if cmd == "ACT":
            if open_.get(bank):
                problems.append(f"ACT to open bank {bank} at {time}")
            if "PRE" in st and time + tol < st["PRE"] + t.t_rp:
                problems.append(f"tRP violated on bank {bank} at {time}")
            open_[bank] = True
        elif cmd == "PRE":
            if time + tol < st.get("ACT", -math.inf) + t.t_ras:
                problems.append(f"tRAS violated on bank {bank} at {time}")
            if time + tol < st.get("WR", -math.inf) + t.t_cl + t.t_wr:
                problems.append(f"tWR violated on bank {bank} at {time}")
            open_[bank] = False
        elif cmd in ("RD", "WR"):
            if not open_.get(bank):
                problems.append(f"{cmd} to closed bank {bank} at {time}")
            if time + tol < st.get("ACT", -math.inf) + t.t_rcd:
                problems.append(f"tRCD violated on bank {bank} at {time}")
        st[cmd] = time
    return problems


def matched_trace(stats: WorkloadStats, n: int, seed: int, rotation: int = 8) -> AccessTrace:
    """Synthetic trace whose outcome and write mix follow ``stats``.

    Hits and conflicts revisit a pool of ``rotation`` open banks in round-robin
    order, so each bank sits idle long enough that tRAS and tWR never gate a
    precharge. Misses go to a fresh (precharged) bank that then replaces the
    oldest pool member.
    """
    rng = np.random.default_rng(seed)
    kinds = rng.choice(3, size=n, p=[stats.row_hit_frac, stats.row_miss_frac, stats.row_conflict_frac])
    writes = rng.random(n) < stats.write_frac
    pool: list[tuple[int, int]] = []
    next_bank = 0
    accesses = []
    # warm the pool so early hits/conflicts have an open row to target
    for _ in range(rotation):
        pool.append((next_bank, 0))
        accesses.append(Access(next_bank, 0, "read"))
        next_bank += 1
    ptr = 0
    for k, w in zip(kinds, writes):
        op = "write" if w else "read"
        if k == 1:
            bank = next_bank
            next_bank += 1
            pool[ptr] = (bank, 0)
            accesses.append(Access(bank, 0, op))
        else:
            bank, row = pool[ptr]
            if k == 2:
                row += 1
                pool[ptr] = (bank, row)
            accesses.append(Access(bank, row, op))
        ptr = (ptr + 1) % rotation
    return AccessTrace(accesses)


# ---------------------------------------------------------------------------
# cohort reports
# ---------------------------------------------------------------------------

def geomean_speedup(speedups_pct: Iterable[float]) -> float:
    s = np.asarray(list(speedups_pct), dtype=float)
    if s.size == 0:
        return float("nan")
    return float(100.0 * (np.exp(np.mean(np.log1p(s / 100.0))) - 1.0))


@dataclass
class CohortReport:
    rows: list[dict]
    means: dict[str, float]
    counts: dict[str, int]

    def to_json(self) -> str:
        return json.dumps({"geomean_speedup_pct": self.means, "counts": self.counts}, indent=2, sort_keys=True)

    def write(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "perf_workloads.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["name", "category", "mpki", "speedup_pct"])
            for r in self.rows:
                w.writerow([r["name"], r["category"], repr(r["mpki"]), f"{r['speedup_pct']:.6f}"])
        (out_dir / "perf_summary.json").write_text(self.to_json() + "\n")


def cohort_report(workloads: Sequence[WorkloadStats], base: TimingParams, reduced: TimingParams,
                  knobs: PerfKnobs = PerfKnobs()) -> CohortReport:
    if not workloads:
        raise WorkloadError("empty workload list")
    rows = []
    for w in workloads:
        rows.append(dict(name=w.name, category=classify(w, knobs.mpki_threshold), mpki=w.mpki,
                         speedup_pct=estimate_speedup(w, base, reduced, knobs)))
    means, counts = {}, {}
    for cat in ("memory_intensive", "non_intensive"):
        vals = [r["speedup_pct"] for r in rows if r["category"] == cat]
        counts[cat] = len(vals)
        if vals:
            means[cat] = geomean_speedup(vals)
    means["overall"] = geomean_speedup(r["speedup_pct"] for r in rows)
    counts["overall"] = len(rows)
    return CohortReport(rows=rows, means=means, counts=counts)


def load_workloads(path: str | Path) -> list[WorkloadStats]:
    """Parse a cohort CSV; errors name the offending 1-based data row."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != COHORT_COLUMNS:
            raise WorkloadError(f"bad header {reader.fieldnames}; expected {','.join(COHORT_COLUMNS)}")
        for i, rec in enumerate(reader, start=1):
            try:
                out.append(WorkloadStats(
                    name=rec["name"],
                    **{k: float(rec[k]) for k in COHORT_COLUMNS[1:]},
                ))
            except (TypeError, ValueError) as exc:
                raise WorkloadError(f"row {i}: {exc}") from exc
    return out


def load_trace(path: str | Path, t_ck: float = DEFAULT_TCK_NS) -> AccessTrace:
    acc = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != ("bank", "row", "op"):
            raise WorkloadError("trace header must be bank,row,op")
        for i, rec in enumerate(reader, start=1):
            try:
                acc.append(Access(int(rec["bank"]), int(rec["row"]), rec["op"].strip()))
            except (TypeError, ValueError) as exc:
                raise WorkloadError(f"row {i}: {exc}") from exc
    if not acc:
        raise WorkloadError("empty trace")
    return AccessTrace(acc, t_ck=t_ck)
