"""Normalized charge dynamics of one DRAM cell and its bitline.

Voltages are dimensionless with the full rail at 1 and the bitline precharge
target at 0.5. Every phase (sensing, restoration, precharge, leakage) is a
first-order exponential, so each one can be inverted in closed form when
profiling searches for the shortest safe timing.

The canonical access sequence checked by :func:`access_outcome` is:

1. write the cell from the opposite value (``q = 0``) for ``t_wr``;
2. leak for ``t_since_refresh``;
3. first read from a fully equalized bitline: charge share, sense-amp latch
   check, read-out level at ``t_rcd``, then restoration for
   ``t_ras - t_overhead_act``;
4. precharge for ``t_rp`` (leaving a residual bitline offset);
5. leak for another full refresh window;
6. second read issued right after that precharge, so its charge share sees
   the residual offset.

A stored '0' is the mirror image (``q -> 1 - q``) and is not simulated
separately.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np

from .timing import TimingParams, validate

if TYPE_CHECKING:
    from .variation import CellSample

PatternStress = float
SOLID_PATTERN: PatternStress = 1.0
WORST_PATTERN: PatternStress = 1.15

PRECHARGE_LEVEL = 0.5


class ParamError(ValueError):
    pass


@dataclass(frozen=True)
class ElectricalParams:
    """Model constants for one cell/bitline pair (times in ns unless noted).

    The defaults are the calibrated values shipped with the package; see
    ``scripts/fit_defaults.py`` for how they were produced.
    """

    c_ratio: float = 1.0306
    tau_sense: float = 139.06495202836797
    tau_restore_nominal: float = 6.700795984621132
    tau_precharge: float = 20.16016796876009
    tau_leak_ref: float = 5951.6  # ms
    t_ref: float = 85.0  # degC
    leak_halving_per: float = 4.8389  # degC
    d_sense: float = 0.02
    v_read: float = 0.092745
    t_overhead_act: float = 10.387
    t_overhead_pre: float = 1.233096053507877

    def __post_init__(self):
        for name in ("tau_sense", "tau_restore_nominal", "tau_precharge", "tau_leak_ref",
                     "leak_halving_per", "t_overhead_act", "t_overhead_pre", "c_ratio"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ParamError(f"{name} must be positive and finite, got {v!r}")
        if not 0.0 < self.d_sense < 0.5:
            raise ParamError(f"d_sense must lie in (0, 0.5), got {self.d_sense}")
        if not self.d_sense < self.v_read < 1.0:
            raise ParamError(f"v_read must lie in (d_sense, 1), got {self.v_read}")

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ElectricalParams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParamError(f"unknown electrical fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class ChargeState:
    q: float
    delta_bl: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ParamError(f"q must lie in [0, 1], got {self.q}")
        if abs(self.delta_bl) > 0.5:
            raise ParamError(f"|delta_bl| must be <= 0.5, got {self.delta_bl}")

    def mirrored(self) -> "ChargeState":
        """The same physical state viewed as a stored '0'."""
        return ChargeState(1.0 - self.q, -self.delta_bl)


class Stage(str, Enum):
    CORRECT = "correct"
    SENSE_OFFSET = "sense_offset"
    READOUT = "readout"
    RESTORE_INSUFFICIENT = "restore_insufficient"
    PRECHARGE_INSUFFICIENT = "precharge_insufficient"


# integer codes used by the vectorized path; index into STAGES
STAGES: tuple[Stage, ...] = (Stage.CORRECT, Stage.SENSE_OFFSET, Stage.READOUT,
                             Stage.RESTORE_INSUFFICIENT, Stage.PRECHARGE_INSUFFICIENT)
_OK, _SENSE, _READOUT, _RESTORE, _PRECHARGE = range(5)


@dataclass(frozen=True)
class Outcome:
    stage: Stage
    access: int = 0  # 1 or 2 for failures, 0 when correct

    @property
    def correct(self) -> bool:
        return self.stage is Stage.CORRECT


# ---------------------------------------------------------------------------
# phase equations (numpy-friendly: scalars or arrays)
# ---------------------------------------------------------------------------

def charge_share(state: ChargeState, params: ElectricalParams) -> float:
    """Signed bitline differential after the cell shares charge with its bitline."""
    return share_differential(state.q, state.delta_bl, params.c_ratio)


def share_differential(q, delta_bl, c_ratio):
    return (q - (PRECHARGE_LEVEL + delta_bl)) / (1.0 + c_ratio)


def sense_level(d, t, params: ElectricalParams):
    """Bitline amplification level ``t`` ns after sensing starts from differential ``d``."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("negative differential: the sense amplifier latched the wrong value")
    out = d - (1.0 - d) * np.expm1(-np.asarray(t, dtype=float) / params.tau_sense)
    return out.item() if out.ndim == 0 else out


def time_to_read(d, params: ElectricalParams):
    """Sensing time (ns) for the bitline to climb from ``d`` to ``v_read``."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = params.tau_sense * np.log((1.0 - d) / (1.0 - params.v_read))
    out = np.where(d < params.v_read, t, 0.0)
    return out.item() if out.ndim == 0 else out


def required_differential(t_sense, params: ElectricalParams):
    """Smallest differential that reaches ``v_read`` within ``t_sense`` ns."""
    return 1.0 - (1.0 - params.v_read) * np.exp(np.asarray(t_sense, dtype=float) / params.tau_sense)


def restore(q_start, t_avail, tau_restore_cell):
    """Cell level after charging toward the rail for ``t_avail`` ns."""
    return 1.0 - (1.0 - q_start) * np.exp(-np.maximum(t_avail, 0.0) / tau_restore_cell)


def precharge_residual(t_avail, params: ElectricalParams):
    """Bitline offset left after ``t_avail`` ns of equalization (already net of overhead)."""
    return 0.5 * np.exp(-np.maximum(t_avail, 0.0) / params.tau_precharge)


def leak_tau(temp, retention_mult, params: ElectricalParams):
    """Leakage time constant (ms): halves every ``leak_halving_per`` degrees above ``t_ref``."""
    return params.tau_leak_ref * retention_mult * 2.0 ** (-(temp - params.t_ref) / params.leak_halving_per)


def leak(q, dt, temp, retention_mult, params: ElectricalParams):
    return q * np.exp(-dt / leak_tau(temp, retention_mult, params))


# ---------------------------------------------------------------------------
# composed access check
# ---------------------------------------------------------------------------

def access_outcome(cell: "CellSample", timings: TimingParams, temp: float, t_since_refresh: float,
                   pattern: PatternStress, params: ElectricalParams) -> Outcome:
    """Run the canonical write/read/read sequence on one cell and report the first failure."""
    validate(timings)
    if t_since_refresh > timings.t_refw or t_since_refresh < 0:
        raise ValueError(f"t_since_refresh {t_since_refresh} outside [0, t_refw={timings.t_refw}]")
    c = params.c_ratio / cell.capacitance_mult
    tau_r = params.tau_restore_nominal * cell.resistance_mult
    thr = params.d_sense * pattern
    t_sense = timings.t_rcd - params.t_overhead_act

    def read_ok(d: float) -> bool:
        return t_sense > 0 and sense_level(d, t_sense, params) >= params.v_read

    q_w = restore(0.0, timings.t_wr, tau_r)
    q1 = leak(q_w, t_since_refresh, temp, cell.retention_mult, params)
    d1 = share_differential(q1, 0.0, c)
    if d1 < thr:
        full = share_differential(leak(1.0, t_since_refresh, temp, cell.retention_mult, params), 0.0, c)
        return Outcome(Stage.RESTORE_INSUFFICIENT if full >= thr else Stage.SENSE_OFFSET, 1)
    if not read_ok(d1):
        return Outcome(Stage.READOUT, 1)

    q2 = restore(PRECHARGE_LEVEL + d1, timings.t_ras - params.t_overhead_act, tau_r)
    delta = precharge_residual(timings.t_rp - params.t_overhead_pre, params)
    q3 = leak(q2, timings.t_refw, temp, cell.retention_mult, params)
    d3 = share_differential(q3, delta, c)
    if d3 < thr:
        clean = share_differential(q3, 0.0, c)
        return Outcome(Stage.PRECHARGE_INSUFFICIENT if clean >= thr else Stage.RESTORE_INSUFFICIENT, 2)
    if not read_ok(d3):
        return Outcome(Stage.READOUT, 2)
    return Outcome(Stage.CORRECT)


def evaluate_cells(resistance, capacitance, retention, timings: TimingParams, temp: float,
                   t_since_refresh: float, pattern: PatternStress, params: ElectricalParams,
                   d_sense=None, test: str = "both") -> np.ndarray:
    """Vectorized :func:`access_outcome` over arrays of cell multipliers.

    Returns an int8 array of indices into :data:`STAGES`. ``d_sense`` may be an
    array to apply a per-cell sense threshold (used for trial noise).
    ``test`` selects ``"write"`` (first access only), ``"read"`` (cell starts
    fully written, both reads checked) or ``"both"``.
    """
    thr = (params.d_sense if d_sense is None else np.asarray(d_sense, dtype=float)) * pattern
    return stage_codes(resistance, capacitance, retention, timings.t_rcd, timings.t_ras, timings.t_wr,
                       timings.t_rp, timings.t_refw, temp, t_since_refresh, thr, params, test)


def stage_codes(resistance, capacitance, retention, t_rcd, t_ras, t_wr, t_rp, t_refw, temp,
                t_since_refresh, thr, params: ElectricalParams, test: str = "both") -> np.ndarray:
    """Core of :func:`evaluate_cells`; every timing argument may be a per-cell array."""
    if test not in ("both", "read", "write"):
        raise ValueError(f"unknown test {test!r}")
    resistance, capacitance, retention, t_rcd, t_ras, t_wr, t_rp = np.broadcast_arrays(
        *(np.atleast_1d(np.asarray(a, dtype=float))
          for a in (resistance, capacitance, retention, t_rcd, t_ras, t_wr, t_rp)))
    c = params.c_ratio / capacitance
    tau_r = params.tau_restore_nominal * resistance
    t_sense = t_rcd - params.t_overhead_act
    with np.errstate(over="ignore"):
        d_read = np.where(t_sense > 0, required_differential(t_sense, params), np.inf)
    tau_l = leak_tau(temp, retention, params)

    l1 = np.exp(-t_since_refresh / tau_l)
    q_w = restore(0.0, t_wr, tau_r) if test != "read" else 1.0
    d1 = share_differential(q_w * l1, 0.0, c)
    code = np.zeros(resistance.shape, dtype=np.int8)
    fail1 = d1 < thr
    full = share_differential(l1, 0.0, c) >= thr
    code[fail1 & full] = _RESTORE
    code[fail1 & ~full] = _SENSE
    code[~fail1 & (d1 < d_read)] = _READOUT
    if test == "write":
        return code

    q2 = restore(PRECHARGE_LEVEL + d1, t_ras - params.t_overhead_act, tau_r)
    delta = precharge_residual(t_rp - params.t_overhead_pre, params)
    q3 = q2 * np.exp(-t_refw / tau_l)
    d3 = share_differential(q3, delta, c)
    clean = share_differential(q3, 0.0, c)
    pending = code == _OK
    fail3 = pending & (d3 < thr)
    code[fail3 & (clean >= thr)] = _PRECHARGE
    code[fail3 & (clean < thr)] = _RESTORE
    code[pending & ~fail3 & (d3 < d_read)] = _READOUT
    return code
