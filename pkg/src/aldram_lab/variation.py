"""Process-variation sampling of simulated DIMMs.

Each cell carries three lognormal multipliers: resistance (scales the
restoration time constant), capacitance (shrinks the effective
bitline/cell ratio and scales retention), and an independent retention
factor. Every multiplier combines a component shared by all cells on a chip
with a per-cell component. Each chip draws from its own child seed, so chips
can be regenerated independently and in any order.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .charge_model import ElectricalParams, WORST_PATTERN, leak, restore, share_differential, precharge_residual
from .timing import TimingParams, standard_ddr3

BANK_FORMAT = "aldram-dimm-bank/1"


class VariationError(ValueError):
    pass


@dataclass(frozen=True)
class CellSample:
    resistance_mult: float = 1.0
    capacitance_mult: float = 1.0
    retention_factor: float = 1.0
    chip_id: int = 0
    cell_id: int = 0

    def __post_init__(self):
        for name in ("resistance_mult", "capacitance_mult", "retention_factor"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise VariationError(f"{name} must be positive and finite, got {v!r}")

    @property
    def retention_mult(self) -> float:
        return self.capacitance_mult * self.retention_factor


@dataclass(frozen=True)
class VariationSpec:
    sigma_resistance: float = 0.18944
    sigma_capacitance: float = 0.00084694
    sigma_retention: float = 0.0024899
    chip_sigma_fraction: float = 0.77964
    cells_per_chip_sampled: int = 32
    chips_per_dimm: int = 8
    worst_corner_quantile: float = 0.9999
    extra_margin_fraction: float = 0.05

    def __post_init__(self):
        for name in ("sigma_resistance", "sigma_capacitance", "sigma_retention"):
            if getattr(self, name) < 0:
                raise VariationError(f"{name} must be >= 0")
        if not 0.0 <= self.chip_sigma_fraction <= 1.0:
            raise VariationError("chip_sigma_fraction must lie in [0, 1]")
        if self.cells_per_chip_sampled < 1 or self.chips_per_dimm < 1:
            raise VariationError("a DIMM needs at least one chip and one cell per chip")
        if not 0.5 < self.worst_corner_quantile < 1.0:
            raise VariationError("worst_corner_quantile must lie in (0.5, 1)")
        if not 0.0 <= self.extra_margin_fraction < 1.0:
            raise VariationError("extra_margin_fraction must lie in [0, 1)")

    @property
    def sigmas(self) -> tuple[float, float, float]:
        return (self.sigma_resistance, self.sigma_capacitance, self.sigma_retention)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VariationSpec":
        names = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(names)
        if unknown:
            raise VariationError(f"unknown variation fields: {sorted(unknown)}")
        ints = {"cells_per_chip_sampled", "chips_per_dimm"}
        return cls(**{k: (int(v) if k in ints else float(v)) for k, v in d.items()})


@dataclass(eq=False)
class Dimm:
    """A simulated module: parallel arrays of per-cell multipliers."""

    dimm_id: int
    seed: int
    resistance: np.ndarray
    capacitance: np.ndarray
    retention_factor: np.ndarray
    chip_id: np.ndarray
    cell_id: np.ndarray

    def __post_init__(self):
        n = len(self.resistance)
        if n == 0:
            raise VariationError("a DIMM must contain at least one cell")
        for arr in (self.capacitance, self.retention_factor, self.chip_id, self.cell_id):
            if len(arr) != n:
                raise VariationError("cell arrays must have equal length")
        for arr in (self.resistance, self.capacitance, self.retention_factor):
            if not np.all(np.isfinite(arr) & (arr > 0)):
                raise VariationError("multipliers must be positive and finite")

    @property
    def retention(self) -> np.ndarray:
        return self.capacitance * self.retention_factor

    def __len__(self) -> int:
        return len(self.resistance)

    @property
    def cells(self) -> list[CellSample]:
        return [self.cell(i) for i in range(len(self))]

    def cell(self, i: int) -> CellSample:
        return CellSample(float(self.resistance[i]), float(self.capacitance[i]),
                          float(self.retention_factor[i]), int(self.chip_id[i]), int(self.cell_id[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dimm):
            return NotImplemented
        return (self.dimm_id == other.dimm_id and self.seed == other.seed
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("resistance", "capacitance", "retention_factor", "chip_id", "cell_id")))

    @classmethod
    def from_cells(cls, cells: Sequence[CellSample], dimm_id: int = 0, seed: int = 0) -> "Dimm":
        return cls(
            dimm_id=dimm_id, seed=seed,
            resistance=np.array([c.resistance_mult for c in cells], dtype=float),
            capacitance=np.array([c.capacitance_mult for c in cells], dtype=float),
            retention_factor=np.array([c.retention_factor for c in cells], dtype=float),
            chip_id=np.array([c.chip_id for c in cells], dtype=np.int64),
            cell_id=np.array([c.cell_id for c in cells], dtype=np.int64),
        )

    def to_dict(self) -> dict:
        return {
            "dimm_id": self.dimm_id,
            "seed": self.seed,
            "resistance_mult": self.resistance.tolist(),
            "capacitance_mult": self.capacitance.tolist(),
            "retention_factor": self.retention_factor.tolist(),
            "chip_id": self.chip_id.tolist(),
            "cell_id": self.cell_id.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dimm":
        return cls(
            dimm_id=int(d["dimm_id"]), seed=int(d["seed"]),
            resistance=np.array(d["resistance_mult"], dtype=float),
            capacitance=np.array(d["capacitance_mult"], dtype=float),
            retention_factor=np.array(d["retention_factor"], dtype=float),
            chip_id=np.array(d["chip_id"], dtype=np.int64),
            cell_id=np.array(d["cell_id"], dtype=np.int64),
        )


def sample_dimm(spec: VariationSpec, seed: int, dimm_id: int = 0) -> Dimm:
    """Draw one DIMM; identical ``(spec, seed)`` always yields identical cells."""
    n = spec.cells_per_chip_sampled
    f = spec.chip_sigma_fraction
    shared, own = math.sqrt(f), math.sqrt(1.0 - f)
    chip_seeds = np.random.SeedSequence(int(seed)).spawn(spec.chips_per_dimm)
    logs = np.empty((3, spec.chips_per_dimm, n))
    for chip, ss in enumerate(chip_seeds):
        rng = np.random.default_rng(ss)
        z_chip = rng.standard_normal(3)
        z_cell = rng.standard_normal((3, n))
        logs[:, chip, :] = shared * z_chip[:, None] + own * z_cell
    sig = np.asarray(spec.sigmas)[:, None, None]
    mult = np.exp(sig * logs).reshape(3, -1)
    chip_id = np.repeat(np.arange(spec.chips_per_dimm), n)
    cell_id = np.tile(np.arange(n), spec.chips_per_dimm)
    return Dimm(dimm_id=dimm_id, seed=int(seed), resistance=mult[0], capacitance=mult[1],
                retention_factor=mult[2], chip_id=chip_id, cell_id=cell_id)


def dimm_seeds(master_seed: int, count: int) -> list[int]:
    """Per-DIMM 64-bit seeds derived from one master seed."""
    root = np.random.SeedSequence(int(master_seed))
    return [int(child.generate_state(1, np.uint64)[0]) for child in root.spawn(count)]


def sample_population(spec: VariationSpec, master_seed: int, count: int) -> list[Dimm]:
    if count < 1:
        raise VariationError("count must be >= 1")
    return [sample_dimm(spec, s, dimm_id=i) for i, s in enumerate(dimm_seeds(master_seed, count))]


def worst_case_corner(spec: VariationSpec) -> CellSample:
    """The design worst-case cell: slow on every axis at ``worst_corner_quantile``."""
    z = NormalDist().inv_cdf(spec.worst_corner_quantile)
    return CellSample(
        resistance_mult=math.exp(spec.sigma_resistance * z),
        capacitance_mult=math.exp(-spec.sigma_capacitance * z),
        retention_factor=math.exp(-spec.sigma_retention * z),
    )


def cell_margins(dimm: Dimm, temp: float, params: ElectricalParams,
                 timings: TimingParams | None = None, pattern: float = WORST_PATTERN) -> np.ndarray:
    """End-of-refresh-window charge-share differential of each cell, minus the sense threshold.

    The differential is the smaller of the two reads in the canonical access
    sequence, evaluated at the given (default: standard) timings.
    """
    t = timings or standard_ddr3()
    c = params.c_ratio / dimm.capacitance
    tau_r = params.tau_restore_nominal * dimm.resistance
    q1 = leak(restore(0.0, t.t_wr, tau_r), t.t_refw, temp, dimm.retention, params)
    d1 = share_differential(q1, 0.0, c)
    q2 = restore(0.5 + d1, t.t_ras - params.t_overhead_act, tau_r)
    delta = precharge_residual(t.t_rp - params.t_overhead_pre, params)
    d3 = share_differential(leak(q2, t.t_refw, temp, dimm.retention, params), delta, c)
    return np.minimum(d1, d3) - params.d_sense * pattern


def slowest_cell(dimm: Dimm, temp: float, params: ElectricalParams,
                 timings: TimingParams | None = None) -> CellSample:
    """Cell with the smallest margin; ties go to the lowest (chip_id, cell_id)."""
    m = cell_margins(dimm, temp, params, timings)
    order = np.lexsort((dimm.cell_id, dimm.chip_id, m))
    return dimm.cell(int(order[0]))


def save_bank(path: str | Path, dimms: Sequence[Dimm], spec: VariationSpec, master_seed: int) -> None:
    doc = {
        "format": BANK_FORMAT,
        "master_seed": int(master_seed),
        "variation": spec.to_dict(),
        "dimms": [d.to_dict() for d in dimms],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_bank(path: str | Path) -> tuple[list[Dimm], VariationSpec, int]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != BANK_FORMAT:
        raise VariationError(f"{path}: not a dimm bank (format={doc.get('format')!r})")
    spec = VariationSpec.from_dict(doc["variation"])
    return [Dimm.from_dict(d) for d in doc["dimms"]], spec, int(doc["master_seed"])
