"""DRAM timing-parameter sets.

Only the four reducible parameters (tRCD, tRAS, tWR, tRP) plus the refresh
window and CAS latency are modelled. All latencies are continuous
nanoseconds; the refresh window is in milliseconds.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Iterable, Sequence

CRITICAL_FIELDS: tuple[str, ...] = ("t_rcd", "t_ras", "t_wr", "t_rp")


class TimingError(ValueError):
    """A timing set violates positivity or the tRAS >= tRCD ordering."""


@dataclass(frozen=True)
class TimingParams:
    t_rcd: float
    t_ras: float
    t_wr: float
    t_rp: float
    t_refw: float = 64.0
    t_cl: float = 13.75

    def critical(self) -> tuple[float, float, float, float]:
        return (self.t_rcd, self.t_ras, self.t_wr, self.t_rp)

    def with_field(self, name: str, value: float) -> "TimingParams":
        return replace(self, **{name: value})

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TimingParams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise TimingError(f"unknown timing fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def dominates(self, other: "TimingParams") -> bool:
        """True if every critical field is >= the corresponding field of ``other``."""
        return all(a >= b for a, b in zip(self.critical(), other.critical()))


def validate(t: TimingParams) -> TimingParams:
    for f in fields(t):
        v = getattr(t, f.name)
        if not v > 0:
            raise TimingError(f"{f.name} must be > 0, got {v!r}")
    if t.t_ras < t.t_rcd:
        raise TimingError(f"t_ras ({t.t_ras}) < t_rcd ({t.t_rcd})")
    return t


def standard_ddr3() -> TimingParams:
    """DDR3-1600 (11-11-11) style baseline used as the 0% reduction anchor."""
    return TimingParams(t_rcd=13.75, t_ras=35.0, t_wr=15.0, t_rp=13.75, t_refw=64.0, t_cl=13.75)


def reduce(base: TimingParams, pct: Sequence[float]) -> TimingParams:
    """Scale each critical field of ``base`` by ``1 - pct[i]``.

    ``pct`` is ordered (t_rcd, t_ras, t_wr, t_rp). Raises :class:`TimingError`
    if a fraction is outside [0, 1) or the result breaks the ordering rule.
    """
    pct = tuple(float(p) for p in pct)
    if len(pct) != 4:
        raise TimingError(f"expected 4 reduction fractions, got {len(pct)}")
    for p in pct:
        if not 0.0 <= p < 1.0:
            raise TimingError(f"reduction fraction {p} outside [0, 1)")
    validate(base)
    scaled = {name: getattr(base, name) * (1.0 - p) for name, p in zip(CRITICAL_FIELDS, pct)}
    return validate(replace(base, **scaled))


def reductions(t: TimingParams, base: TimingParams | None = None) -> tuple[float, float, float, float]:
    """Fractional reduction of each critical field relative to ``base``."""
    base = base or standard_ddr3()
    return tuple(1.0 - a / b for a, b in zip(t.critical(), base.critical()))  # type: ignore[return-value]


def latency_sums(t: TimingParams) -> tuple[float, float]:
    """(read_sum, write_sum) = (tRCD+tRAS+tRP, tRCD+tWR+tRP)."""
    return (t.t_rcd + t.t_ras + t.t_rp, t.t_rcd + t.t_wr + t.t_rp)


def elementwise_max(sets: Iterable[TimingParams]) -> TimingParams:
    sets = list(sets)
    out = sets[0]
    for s in sets[1:]:
        out = replace(out, **{n: max(getattr(out, n), getattr(s, n)) for n in CRITICAL_FIELDS})
    return out
