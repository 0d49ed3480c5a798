"""Offline fit of the frozen electrical and variation defaults (differential evolution).

Searches c_ratio, tau_leak_ref, t_overhead_act, v_read, the three variation
sigmas, the chip fraction and leak_halving_per. The corner is re-pinned by
``solve_corner`` at every point. The objective holds t_rcd/t_ras/t_wr within
``--band`` of target and the 55/85 C read-sum gap above ``--gap``, and
minimizes the t_rp miss. Slow: about 10 minutes on one core.
"""
import argparse
import json
from dataclasses import asdict, replace

import numpy as np
from scipy.optimize import differential_evolution

from aldram_lab.charge_model import ElectricalParams
from aldram_lab.profiler import DEFAULT_TARGETS, continuous_reductions, read_sum_reduction, solve_corner
from aldram_lab.variation import VariationSpec, sample_population

BOUNDS = [(np.log(0.02), np.log(5)), (np.log(300), np.log(1e6)), (0.3, 11), (np.log(0.03), np.log(0.6)),
          (0, 0.8), (0, 0.4), (0, 1.2), (4, 30), (0, 1)]


def build(x, cells):
    lc, ltl, toa, lv, s_r, s_c, s_t, h, f = x
    spec = VariationSpec(sigma_resistance=s_r, sigma_capacitance=s_c, sigma_retention=s_t,
                         chip_sigma_fraction=f, cells_per_chip_sampled=cells)
    try:
        p = ElectricalParams(c_ratio=float(np.exp(lc)), tau_leak_ref=float(np.exp(ltl)),
                             t_overhead_act=float(toa), v_read=float(np.exp(lv)), leak_halving_per=float(h))
    except ValueError:
        return None, spec
    return solve_corner(p, spec), spec


def measure(x, cells, n_dimms):
    p, spec = build(x, cells)
    if p is None:
        return None
    pop = sample_population(spec, 0, n_dimms)
    cool, hot = continuous_reductions(pop, 55.0, p), continuous_reductions(pop, 85.0, p)
    if not (np.isfinite(cool).all() and np.isfinite(hot).all()):
        return None
    cool, hot = cool.mean(0), hot.mean(0)
    return p, spec, cool, read_sum_reduction(cool) - read_sum_reduction(hot)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cells", type=int, default=32, help="cells per chip sampled")
    ap.add_argument("--dimms", type=int, default=16)
    ap.add_argument("--band", type=float, default=0.04)
    ap.add_argument("--gap", type=float, default=0.035)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--maxiter", type=int, default=80)
    ap.add_argument("--x0", type=json.loads, default=None, help="JSON list warm start")
    args = ap.parse_args()
    t = np.array(DEFAULT_TARGETS)

    def objective(x):
        o = measure(x, args.cells, args.dimms)
        if o is None:
            return 1e3
        _, _, r, gap = o
        over = np.maximum(0.0, np.abs(r[:3] - t[:3]) - args.band)
        return float(1e4 * (np.sum(over ** 2) + max(0.0, args.gap - gap) ** 2) + abs(r[3] - t[3]))

    res = differential_evolution(objective, BOUNDS, seed=args.seed, maxiter=args.maxiter, popsize=12,
                                 tol=1e-8, polish=False, disp=True, x0=args.x0, init="sobol")
    p, spec, r, gap = measure(res.x, args.cells, args.dimms)
    spec = replace(spec, cells_per_chip_sampled=args.cells)
    print(json.dumps({"x": res.x.tolist(), "objective": res.fun, "electrical": asdict(p),
                      "variation": asdict(spec), "mean_reductions_55": r.tolist(), "read_gap": gap},
                     indent=2, default=float))


if __name__ == "__main__":
    main()
