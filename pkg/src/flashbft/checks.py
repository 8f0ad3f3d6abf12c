"""Post-run safety and liveness checks over a simulation trace."""
from __future__ import annotations

from .history import HistOp, is_linearizable


def final_history(trace):
    """Client operations as a history; only finalized results count as responses."""
    ops = []
    for o in trace.ops:
        ops.append(HistOp(o.client, o.seq, o.op, o.invoked_at, o.times.get("final"), o.results.get("final")))
    return ops


def surviving_correct(trace):
    return sorted(i for i in trace.correct if not trace.replicas[i].removed)


def contradicted_finals(trace):
    """Finalized results that a surviving correct replica now holds differently."""
    bad = []
    replicas = [trace.replicas[i] for i in surviving_correct(trace)]
    for o in trace.ops:
        if not o.final:
            continue
        for r in replicas:
            got = r.svc.replies.get((o.client, o.seq))
            if got is not None and got != o.results["final"]:
                bad.append((o.client, o.seq, r.id, o.results["final"], got))
    return bad


def divergent_logs(trace):
    """Instances where two surviving correct replicas hold different decisions."""
    bad = []
    replicas = [trace.replicas[i] for i in surviving_correct(trace)]
    seen = {}
    for r in replicas:
        for inst, e in r.log.items():
            d = seen.setdefault(inst, e.value_digest)
            if d != e.value_digest:
                bad.append((inst, r.id))
    return bad


def safety_violations(trace) -> list:
    problems = []
    if not is_linearizable(final_history(trace)):
        problems.append("final-level history is not linearizable")
    c = contradicted_finals(trace)
    if c:
        problems.append(f"{len(c)} finalized results contradicted, e.g. {c[0]}")
    d = divergent_logs(trace)
    if d:
        problems.append(f"{len(d)} divergent log entries among correct replicas, e.g. {d[0]}")
    return problems


def unfinished_ops(trace):
    """Operations of correct clients that never reached final."""
    return [(o.client, o.seq) for o in trace.ops if not o.final]


def level_order_ok(op) -> bool:
    times = [op.times.get(name) for name in ("first", "weak", "strong", "final")]
    times = [t for t in times if t is not None]
    return all(a <= b for a, b in zip(times, times[1:]))
