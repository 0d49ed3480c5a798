"""``aldram-lab`` command line.

Every subcommand reads one JSON run config (``--config`` or the
``ALDRAM_LAB_CONFIG`` environment variable, otherwise built-in defaults),
writes only under ``--output-dir`` and is deterministic given its inputs.

Exit codes: 0 success, 1 usage or parse error, 2 calibration problem,
3 safety violation.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import controller as ctl
from . import perf_model as perf
from . import profiler as prof
from .config import ConfigError, RunConfig
from .timing import CRITICAL_FIELDS, TimingError, reduce, standard_ddr3, validate
from .variation import VariationError, load_bank, sample_population, save_bank

EXIT_OK, EXIT_USAGE, EXIT_CALIBRATION, EXIT_SAFETY = 0, 1, 2, 3
ENV_CONFIG = "ALDRAM_LAB_CONFIG"

log = logging.getLogger("aldram_lab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _four(text: str) -> list[float]:
    vals = _floats(text)
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("expected four comma-separated values (t_rcd,t_ras,t_wr,t_rp)")
    return vals


def shipped_cohort() -> Path:
    return Path(str(resources.files("aldram_lab") / "data" / "cohort35.csv"))


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def load_config(args) -> RunConfig:
    path = args.config or os.environ.get(ENV_CONFIG)
    cfg = RunConfig.load(path) if path else RunConfig(seed=0)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.output_dir is not None:
        cfg = replace(cfg, output_dir=str(args.output_dir))
    return cfg


def _bank(args, cfg: RunConfig):
    if args.bank:
        dimms, _, _ = load_bank(args.bank)
        return dimms
    return sample_population(cfg.variation, cfg.seed, cfg.profiling.n_dimms)


def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _print_summary(summary: dict) -> None:
    for temp, e in summary.items():
        reds = " ".join(f"{n}={e[f'mean_red_{n[2:]}']:.4f}" for n in CRITICAL_FIELDS)
        print(f"temp {temp} C: n={e['n_dimms']} {reds} read_sum={e['mean_read_sum_ns']:.3f}ns "
              f"write_sum={e['mean_write_sum_ns']:.3f}ns")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_init(args, cfg: RunConfig) -> int:
    path = _out(cfg) / (args.name or "config.json")
    path.write_text(cfg.dumps())
    print(path)
    return EXIT_OK


def cmd_gen_dimms(args, cfg: RunConfig) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    dimms = sample_population(cfg.variation, cfg.seed, args.count)
    path = _out(cfg) / args.name
    save_bank(path, dimms, cfg.variation, cfg.seed)
    print(f"wrote {len(dimms)} DIMMs to {path}")
    return EXIT_OK


def cmd_calibrate(args, cfg: RunConfig) -> int:
    dimms = _bank(args, cfg)
    try:
        res = prof.calibrate(cfg.variation, cfg.electrical, args.targets, args.temp, dimms=dimms,
                             min_read_gap=args.min_read_gap, tol=args.tol)
    except prof.CalibrationInfeasible as exc:
        print(f"calibration infeasible: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    out = _out(cfg)
    (out / "calibration_report.json").write_text(json.dumps(res.report(), indent=2, sort_keys=True) + "\n")
    (out / "config_calibrated.json").write_text(replace(cfg, electrical=res.params).dumps())
    for n, t, a in zip(CRITICAL_FIELDS, res.targets, res.achieved):
        print(f"{n}: target {t:.4f} achieved {a:.4f}")
    return EXIT_OK


def cmd_profile(args, cfg: RunConfig) -> int:
    temps = args.temps if args.temps is not None else list(cfg.profiling.temps)
    dimms = _bank(args, cfg)
    p = cfg.profiling
    report = prof.population_profile(dimms, temps, cfg.electrical, pattern=p.pattern, t_refw=p.t_refw,
                                     mode=args.mode or p.mode, resolution=p.resolution, jobs=args.jobs)
    report.write(_out(cfg))
    _print_summary(report.summary())
    if report.errors:
        for e in report.errors:
            print(f"DIMM {e['dimm_id']} at {e['temp']} C: {e['message']}", file=sys.stderr)
        return EXIT_CALIBRATION
    return EXIT_OK


def cmd_refresh_sweep(args, cfg: RunConfig) -> int:
    intervals = args.intervals or list(cfg.profiling.refresh_intervals)
    dimms = _bank(args, cfg)
    p = cfg.profiling
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t_refw_ms",) + prof.CSV_COLUMNS)
    try:
        for d in dimms:
            for prof_ in prof.refresh_sweep(d, args.temp, intervals, cfg.electrical, pattern=p.pattern,
                                            resolution=p.resolution):
                w.writerow([prof._fmt(prof_.t_refw, 3)] + prof_.csv_row())
    except prof.StandardTimingsUnsafe as exc:
        print(exc, file=sys.stderr)
        return EXIT_CALIBRATION
    (_out(cfg) / "refresh_sweep.csv").write_text(buf.getvalue())
    print(f"swept {len(dimms)} DIMMs over {intervals} ms")
    return EXIT_OK


def cmd_interaction(args, cfg: RunConfig) -> int:
    dimms = _bank(args, cfg)
    p = cfg.profiling
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("dimm_id", "fixed_field", "fix_fraction", "status")
               + tuple(f"solo_red_{n[2:]}" for n in CRITICAL_FIELDS)
               + tuple(f"inter_red_{n[2:]}" for n in CRITICAL_FIELDS))
    for d in dimms:
        solo = prof.min_safe_timings(prof.ProfileRequest(d, args.temp, p.pattern, p.t_refw), cfg.electrical)
        frac = args.fraction if args.fraction is not None else solo.reductions[CRITICAL_FIELDS.index(args.field)]
        try:
            inter = prof.interaction_study(d, args.temp, args.field, frac, cfg.electrical, pattern=p.pattern,
                                           t_refw=p.t_refw, resolution=p.resolution)
            status, reds = "ok", inter.reductions
        except prof.InfeasibleFix:
            status, reds = "infeasible", (float("nan"),) * 4
        w.writerow([d.dimm_id, args.field, f"{frac:.6f}", status]
                   + [f"{r:.6f}" for r in solo.reductions] + [f"{r:.6f}" for r in reds])
    (_out(cfg) / "interaction.csv").write_text(buf.getvalue())
    print(f"interaction study on {len(dimms)} DIMMs with {args.field} fixed")
    return EXIT_OK


def cmd_repeatability(args, cfg: RunConfig) -> int:
    dimms = _bank(args, cfg)
    p = cfg.profiling
    timings = reduce(standard_ddr3(), [r / 100.0 for r in args.reductions])
    sigma = p.trial_noise_sigma if args.noise is None else args.noise
    res = prof.repeatability_test(dimms, timings, args.temp, cfg.electrical, scenarios=args.scenarios,
                                  iterations=args.iterations or p.repeat_iterations, trial_noise_sigma=sigma,
                                  seed=cfg.seed, pattern=p.pattern)
    doc = {k: {"status": v.status, "n_erroneous": v.n_erroneous, "n_repeatable": v.n_repeatable,
               "fraction_repeatable": v.fraction} for k, v in res.items()}
    (_out(cfg) / "repeatability.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    for k, v in res.items():
        frac = "no erroneous cells" if v.fraction is None else f"{v.fraction:.4f}"
        print(f"{k}: {frac} ({v.n_repeatable}/{v.n_erroneous})")
    return EXIT_OK


def cmd_build_table(args, cfg: RunConfig) -> int:
    profiles = [prof.DimmTimingProfile.from_dict(d) for d in json.loads(Path(args.profiles).read_text())]
    c = cfg.controller
    try:
        table = ctl.build_table(profiles, c.guardband_temp, c.guardband_timing_fraction)
    except ctl.TableError as exc:
        raise UsageError(str(exc)) from exc
    path = _out(cfg) / args.name
    table.save(path)
    print(f"wrote table for {len(table.bins)} DIMMs to {path}")
    return EXIT_OK


def cmd_controller(args, cfg: RunConfig) -> int:
    c = cfg.controller
    table = ctl.ProfileTable.load(args.table)
    if args.trace_file:
        trace = ctl.TempTrace.from_csv(args.trace_file, c.slew_cap)
    else:
        kw = {k: getattr(args, k) for k in ("temp", "start", "end", "mean", "amplitude", "period")
              if getattr(args, k) is not None}
        trace = ctl.gen_temp_trace(args.trace, args.duration, c.slew_cap, cfg.seed,
                                   interval=c.sample_interval_s, **kw)
    dimms = _bank(args, cfg)
    out = _out(cfg)
    try:
        report = ctl.simulate_controller(table, trace, dimms, cfg.electrical, cfg.profiling.pattern)
    except ctl.SafetyViolation as exc:
        rec = exc.record()
        (out / "controller_violation.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
        print(f"SAFETY VIOLATION: {json.dumps(rec, sort_keys=True)}", file=sys.stderr)
        return EXIT_SAFETY
    report.write(out)
    s = report.summary()
    print(f"{s['samples']} samples, 0 violations, bins {s['bins_visited']}, "
          f"avg read_sum {s['avg_read_sum_ns']:.3f}ns, avg write_sum {s['avg_write_sum_ns']:.3f}ns")
    return EXIT_OK


def cmd_perf(args, cfg: RunConfig) -> int:
    path = Path(args.workloads) if args.workloads else shipped_cohort()
    if not path.exists():
        raise UsageError(f"workloads file not found: {path}")
    try:
        workloads = perf.load_workloads(path)
    except perf.WorkloadError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    base = standard_ddr3()
    reduced = reduce(base, [r / 100.0 for r in args.reductions])
    rep = perf.cohort_report(workloads, base, reduced, cfg.perf)
    rep.write(_out(cfg))
    for k, v in rep.means.items():
        print(f"{k}: geomean speedup {v:.4f}% (n={rep.counts[k]})")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def shared(top: bool) -> argparse.ArgumentParser:
        # flags accepted before or after the subcommand; the subcommand copy
        # must not clobber a value given before it
        d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
        p = _Parser(add_help=False)
        p.add_argument("--config", default=d(None), help=f"run config JSON (fallback: ${ENV_CONFIG})")
        p.add_argument("--seed", type=int, default=d(None), help="override the config seed")
        p.add_argument("--jobs", type=int, default=d(1), help="worker processes for profiling")
        p.add_argument("--output-dir", default=d(None), help="directory for every output file")
        p.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return p

    common = shared(top=False)
    ap = _Parser(prog="aldram-lab", description="Temperature-aware DRAM timing simulation lab", parents=[shared(top=True)])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=fn)
        return p

    def bank(p):
        p.add_argument("--bank", help="DIMM bank JSON (default: sample from config)")

    p = add("init", cmd_init, "write a config file with every default")
    p.add_argument("--name", default="config.json")

    p = add("gen-dimms", cmd_gen_dimms, "sample a DIMM bank")
    p.add_argument("--count", type=int, default=115)
    p.add_argument("--name", default="dimms.json")

    p = add("calibrate", cmd_calibrate, "fit electrical constants to target reductions")
    bank(p)
    p.add_argument("--targets", type=_four, default=list(prof.DEFAULT_TARGETS))
    p.add_argument("--temp", type=float, default=55.0)
    p.add_argument("--min-read-gap", type=float, default=0.04)
    p.add_argument("--tol", type=float, default=0.05)

    p = add("profile", cmd_profile, "profile minimum safe timings per DIMM and temperature")
    bank(p)
    p.add_argument("--temps", type=_floats)
    p.add_argument("--mode", choices=("per_parameter", "joint"))

    p = add("refresh-sweep", cmd_refresh_sweep, "profile across refresh intervals")
    bank(p)
    p.add_argument("--temp", type=float, default=85.0)
    p.add_argument("--intervals", type=_floats)

    p = add("interaction", cmd_interaction, "profile with one field held reduced")
    bank(p)
    p.add_argument("--temp", type=float, default=55.0)
    p.add_argument("--field", choices=CRITICAL_FIELDS, default="t_rcd")
    p.add_argument("--fraction", type=float, help="fixed reduction (default: the field's solo minimum)")

    p = add("repeatability", cmd_repeatability, "repeat failing tests under trial noise")
    bank(p)
    p.add_argument("--temp", type=float, default=85.0)
    p.add_argument("--reductions", type=_four, default=[20.0, 20.0, 20.0, 20.0], help="percent per field")
    p.add_argument("--scenarios", type=lambda s: s.split(","), default=list(prof.SCENARIOS))
    p.add_argument("--iterations", type=int)
    p.add_argument("--noise", type=float, help="trial noise sigma (default: config)")

    p = add("build-table", cmd_build_table, "build a controller table from profiles")
    p.add_argument("--profiles", required=True, help="profile_profiles.json from `profile`")
    p.add_argument("--name", default="table.json")

    p = add("controller", cmd_controller, "run the adaptive controller over a temperature trace")
    bank(p)
    p.add_argument("--table", required=True)
    p.add_argument("--trace", choices=("constant", "ramp", "diurnal"), default="diurnal")
    p.add_argument("--trace-file", help="CSV time_s,temp_c instead of a generated trace")
    p.add_argument("--duration", type=float, default=86400.0, help="seconds")
    for k in ("temp", "start", "end", "mean", "amplitude", "period"):
        p.add_argument(f"--{k}", type=float)

    p = add("perf", cmd_perf, "estimate workload speedups")
    p.add_argument("--workloads", help="cohort CSV (default: shipped 35-workload cohort)")
    p.add_argument("--reductions", type=_four, default=[27.0, 32.0, 33.0, 18.0], help="percent per field")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = load_config(args)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"aldram-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, VariationError, TimingError, ctl.TraceError, ctl.TableError,
            FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"aldram-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except prof.CalibrationInfeasible as exc:
        print(f"aldram-lab: calibration: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except prof.StandardTimingsUnsafe as exc:
        print(f"aldram-lab: miscalibrated: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION


if __name__ == "__main__":
    sys.exit(main())
