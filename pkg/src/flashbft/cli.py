"""Command line experiment runner.

    flashbft run <scenario> [--seed N] [--out DIR] [--jitter on|off] [--pattern three|seven]
    flashbft compare <baseline> <other> [same flags]

``run`` writes clients.csv, consensus.csv, timeline.csv and meta.csv.  ``compare``
accepts either two scenarios (both are run) or two output directories of
earlier runs, and writes speedup.csv with baseline/other ratios.

Exit codes: 0 ok, 1 validation error (bad scenario, mismatched reports),
2 runtime or IO failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import report
from .netsim.scenario import PATTERN_ALIASES, Scenario, ScenarioError, load_scenario, scenario_path
from .netsim.sim import simulate

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

# scenario fields that must agree for a comparison to be meaningful
WORKLOAD_KEYS = ("matrix", "n", "pattern", "clients", "think_max_ms", "keys", "read_ratio", "duration_ms",
                 "warmup_ms")


class ValidationError(Exception):
    pass


def _meta(sc: Scenario) -> dict:
    return {"name": sc.name, "matrix": sc.matrix, "n": "" if sc.n is None else sc.n, "variant": sc.variant,
            "pattern": sc.pattern, "clients": "all" if sc.clients is None else ",".join(map(str, sc.clients)),
            "think_max_ms": sc.think_max_ms, "keys": sc.keys, "read_ratio": sc.read_ratio,
            "duration_ms": sc.duration_ms, "warmup_ms": sc.warmup_ms, "seed": sc.seed,
            "jitter": "on" if sc.jitter else "off"}


def load_for_cli(name: str, args) -> Scenario:
    try:
        path = scenario_path(name)
    except FileNotFoundError as e:
        raise ValidationError(str(e)) from None
    try:
        sc = load_scenario(path)
    except ScenarioError as e:
        raise ValidationError(f"{path}: {e}") from None
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.jitter is not None:
        kw["jitter"] = args.jitter == "on"
    if args.pattern is not None:
        kw["pattern"] = PATTERN_ALIASES[args.pattern]
    return sc.replace(**kw)


def run_scenario(sc: Scenario, out_dir) -> tuple:
    try:
        trace = simulate(sc)
    except ScenarioError as e:
        raise ValidationError(f"{sc.name}: {e}") from None
    files = report.write_outputs(trace, out_dir)
    with open(Path(out_dir) / "meta.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("key", "value"))
        for k, v in _meta(sc).items():
            w.writerow((k, v))
    return trace, files


def _read_csv(path: Path) -> list:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def read_report(out_dir) -> dict:
    d = Path(out_dir)
    missing = [n for n in ("clients.csv", "consensus.csv", "meta.csv") if not (d / n).exists()]
    if missing:
        raise ValidationError(f"{d} is not a run directory (missing {', '.join(missing)})")
    meta = {r["key"]: r["value"] for r in _read_csv(d / "meta.csv")}
    return {"meta": meta, "clients": _read_csv(d / "clients.csv"), "consensus": _read_csv(d / "consensus.csv")}


def _consensus_latency(rep) -> float:
    warm = float(rep["meta"].get("warmup_ms", 0) or 0)
    rows = [r for r in rep["consensus"] if float(r["start_ms"]) >= warm]
    fast = [float(r["latency_ms"]) for r in rows if r["mode"] == "fast"]
    lat = fast or [float(r["latency_ms"]) for r in rows]
    return float(np.median(lat)) if lat else float("nan")


def _level_means(rep) -> dict:
    """level -> {client: mean_ms}"""
    out = {}
    for r in rep["clients"]:
        if r["mean_ms"]:
            out.setdefault(r["level"], {})[r["client"]] = float(r["mean_ms"])
    return out


def compare_reports(base: dict, other: dict) -> list:
    """Rows (metric, baseline_ms, other_ms, speedup); raises ValidationError on workload mismatch."""
    diff = [k for k in WORKLOAD_KEYS if base["meta"].get(k) != other["meta"].get(k)]
    if diff:
        pairs = ", ".join(f"{k}: {base['meta'].get(k)!r} vs {other['meta'].get(k)!r}" for k in diff)
        raise ValidationError(f"reports use different workloads ({pairs})")
    rows = []
    a, b = _consensus_latency(base), _consensus_latency(other)
    rows.append(("consensus", a, b, a / b if b else float("nan")))
    la, lb = _level_means(base), _level_means(other)
    for level in report.LEVEL_NAMES:
        ca, cb = la.get(level, {}), lb.get(level, {})
        common = sorted(set(ca) & set(cb), key=int)
        if not common:
            rows.append((level, None, None, None))
            continue
        ratios = [ca[c] / cb[c] for c in common if cb[c] > 0]
        rows.append((level, float(np.mean([ca[c] for c in common])), float(np.mean([cb[c] for c in common])),
                     float(np.mean(ratios)) if ratios else float("nan")))
    return rows


def speedup_csv(rows) -> str:
    return report._csv(("metric", "baseline_ms", "other_ms", "speedup"), rows)


def _resolve(name: str, args, out: Path, tag: str) -> dict:
    p = Path(name)
    if p.is_dir():
        return read_report(p)
    sc = load_for_cli(name, args)
    run_scenario(sc, out / tag)
    return read_report(out / tag)


def cmd_run(args) -> int:
    sc = load_for_cli(args.scenario, args)
    trace, files = run_scenario(sc, args.out)
    print(report.summary(trace))
    for f in files.values():
        print(f"wrote {f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    out = Path(args.out)
    base = _resolve(args.baseline, args, out, "baseline")
    other = _resolve(args.other, args, out, "other")
    rows = compare_reports(base, other)
    out.mkdir(parents=True, exist_ok=True)
    (out / "speedup.csv").write_text(speedup_csv(rows))
    print(f"{'metric':<10} {'baseline_ms':>12} {'other_ms':>10} {'speedup':>8}")
    for m, a, b, s in rows:
        if a is None:
            print(f"{m:<10} {'-':>12} {'-':>10} {'-':>8}")
        else:
            print(f"{m:<10} {a:12.1f} {b:10.1f} {s:7.2f}x")
    print(f"wrote {out / 'speedup.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--jitter", choices=("on", "off"), default=None, help="override link jitter")
    common.add_argument("--pattern", choices=("three", "seven"), default=None,
                        help="agreement pattern used for prediction and simulation")
    p = argparse.ArgumentParser(prog="flashbft", description="Run weighted-quorum BFT simulations.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="simulate one scenario and write CSVs")
    r.add_argument("scenario", help="scenario file or bundled scenario name")
    c = sub.add_parser("compare", parents=[common], help="speedups of <other> relative to <baseline>")
    c.add_argument("baseline", help="scenario or run directory")
    c.add_argument("other", help="scenario or run directory")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_VALIDATION
    try:
        return cmd_run(args) if args.command == "run" else cmd_compare(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
