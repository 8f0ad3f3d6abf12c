"""CSV outputs and summary statistics for simulation traces."""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

LEVEL_NAMES = ("first", "weak", "strong", "final")


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.3f}"
    return str(x)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def client_latencies(trace, level: str = "final") -> dict:
    """client id -> latencies (ms) of ops invoked after warmup that reached ``level``."""
    warm = trace.scenario.warmup_ms
    out = {c: [] for c in sorted(trace.client_regions)}
    for o in trace.ops:
        if o.invoked_at < warm or o.client not in out:
            continue
        lat = o.latency(level)
        if lat is not None:
            out[o.client].append(lat)
    return out


def consensus_latencies(trace, mode=None, after: float = None) -> list:
    after = trace.scenario.warmup_ms if after is None else after
    return [c["decide"] - c["start"] for c in trace.consensus
            if (mode is None or c["mode"] == mode) and c["start"] >= after]


def steady_consensus_latency(trace) -> float:
    """Median consensus latency in the mode the run settles in (fast when any fast instance exists)."""
    fast = consensus_latencies(trace, "fast")
    lat = fast or consensus_latencies(trace)
    return float(np.median(lat)) if lat else float("nan")


def clients_csv(trace) -> str:
    rows = []
    for level in LEVEL_NAMES:
        for c, lats in client_latencies(trace, level).items():
            region = trace.client_regions[c]
            if lats:
                a = np.asarray(lats)
                rows.append((c, region, level, float(a.mean()), float(np.median(a)), float(np.percentile(a, 95)),
                             len(lats)))
            else:
                rows.append((c, region, level, None, None, None, 0))
    rows.sort(key=lambda r: (r[0], LEVEL_NAMES.index(r[2])))
    return _csv(("client", "region", "level", "mean_ms", "median_ms", "p95_ms", "count"), rows)


def consensus_csv(trace) -> str:
    rows = [(c["instance"], c["start"], c["decide"], c["decide"] - c["start"], c["mode"], c["leader"], c["regency"])
            for c in trace.consensus]
    return _csv(("instance", "start_ms", "decide_ms", "latency_ms", "mode", "leader", "regency"), rows)


def timeline_csv(trace) -> str:
    rows = sorted(trace.timeline, key=lambda r: (r[0], r[1], r[2], r[3]))
    return _csv(("time_ms", "replica", "event", "detail"), rows)


def write_outputs(trace, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"clients.csv": clients_csv(trace), "consensus.csv": consensus_csv(trace),
             "timeline.csv": timeline_csv(trace)}
    for name, text in files.items():
        (out / name).write_text(text)
    return {name: out / name for name in files}


def mean_client_speedup(base, other, level: str = "final") -> float:
    """Mean over clients of (baseline mean latency / other mean latency)."""
    a = client_latencies(base, level)
    b = client_latencies(other, level)
    ratios = [np.mean(a[c]) / np.mean(b[c]) for c in a if a[c] and b.get(c)]
    return float(np.mean(ratios)) if ratios else float("nan")


def summary(trace) -> str:
    fin = [x for v in client_latencies(trace).values() for x in v]
    lines = [f"scenario {trace.scenario.name}: {len(trace.consensus)} instances, {len(trace.ops)} ops, "
             f"end {trace.end_time:.1f} ms",
             f"consensus latency (steady) {steady_consensus_latency(trace):.1f} ms",
             f"client final latency mean {np.mean(fin):.1f} ms" if fin else "no finalized ops"]
    return "\n".join(lines)
