"""Regenerate the shipped 35-workload synthetic cohort (deterministic)."""
import argparse
import csv
from pathlib import Path

import numpy as np

from aldram_lab.perf_model import COHORT_COLUMNS

INTENSIVE = ["stream_copy", "stream_triad", "gups", "graph_bfs", "graph_pr", "spmv", "hash_join",
             "lbm_like", "mcf_like", "milc_like", "soplex_like", "libq_like", "omnet_like", "kv_store"]
LIGHT = ["bzip_like", "gcc_like", "gobmk_like", "hmmer_like", "sjeng_like", "h264_like", "astar_like",
         "namd_like", "povray_like", "calculix_like", "tonto_like", "wrf_like", "perl_like", "xalanc_like",
         "dealii_like", "gamess_like", "gromacs_like", "sphinx_like", "bwaves_like", "zeusmp_like", "cactus_like"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=2015)
    ap.add_argument("--out", type=Path,
                    default=Path(__file__).resolve().parents[1] / "src/aldram_lab/data/cohort35.csv")
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    rows = []
    for names, lo, hi in ((INTENSIVE, np.log(12), np.log(90)), (LIGHT, np.log(0.2), np.log(6))):
        for name in names:
            mpki = float(np.exp(rng.uniform(lo, hi)))
            hit, miss, _ = np.round(rng.dirichlet([3.0, 2.0, 2.0]), 4)
            rows.append([name, f"{mpki:.3f}", f"{hit:.4f}", f"{miss:.4f}", f"{1 - hit - miss:.4f}",
                         f"{rng.uniform(0.1, 0.4):.3f}", f"{rng.uniform(0.4, 1.2):.3f}"])
    with args.out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COHORT_COLUMNS)
        w.writerows(rows)


if __name__ == "__main__":
    main()
