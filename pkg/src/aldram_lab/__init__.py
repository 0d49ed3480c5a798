"""Temperature-aware DRAM timing simulation lab.

Models per-cell charge dynamics under process variation and temperature,
profiles the shortest safe tRCD/tRAS/tWR/tRP per simulated DIMM, selects
timing sets adaptively as temperature moves, and turns latency reductions
into workload speedup estimates.
"""
from .charge_model import ElectricalParams, Stage, access_outcome
from .timing import TimingParams, reduce, standard_ddr3
from .variation import VariationSpec, sample_dimm, sample_population, worst_case_corner

__all__ = [
    "ElectricalParams", "Stage", "access_outcome",
    "TimingParams", "reduce", "standard_ddr3",
    "VariationSpec", "sample_dimm", "sample_population", "worst_case_corner",
]
__version__ = "0.1.0"
