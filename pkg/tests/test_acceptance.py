"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.  Oracles come from
tests/oracles.py, which does not use the package's quorum or prediction code.
"""
import itertools
import time
from functools import lru_cache

import numpy as np
import pytest

from flashbft import report
from flashbft.checks import level_order_ok, safety_violations, unfinished_ops
from flashbft.cli import run_scenario
from flashbft.forensics import verify_poc
from flashbft.netsim.matrix import random_metric_matrix
from flashbft.netsim.scenario import Scenario, load_scenario, parse_directive, scenario_path
from flashbft.netsim.sim import Simulation, simulate
from flashbft.optimizer import anneal, predict
from flashbft.quorum import (compute_weight_config, fast_threshold, is_quorum, max_quorum_cardinality,
                             min_quorum_cardinality, optimal_threshold)

from oracles import brute_force_best, check_laws, quorums


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok
    return emit


def _bundled(name, **kw):
    return load_scenario(scenario_path(name)).replace(**kw)


# 1 -----------------------------------------------------------------------------

def test_quorum_laws(verdict):
    t0 = time.time()
    problems, checked = [], 0
    for n in range(4, 11):
        for t in range(1, optimal_threshold(n) + 1):
            for t_eff in sorted({t, fast_threshold(t)}):
                # the laws are permutation invariant, so the oracle checks one high set
                bad = check_laws(n, t_eff, set(range(2 * t_eff)))
                problems += [(n, t_eff, b[0]) for b in bad]
                # the package must agree with the oracle on every subset for every high set
                for high in itertools.combinations(range(n), 2 * t_eff):
                    ranking = list(high) + [i for i in range(n) if i not in high]
                    cfg = compute_weight_config(n, t_eff, ranking)
                    want = set(quorums(n, t_eff, set(high)))
                    got = {m for m in range(1 << n) if is_quorum(cfg, [i for i in range(n) if m >> i & 1])}
                    if got != want:
                        problems.append((n, t_eff, high, "quorum sets differ"))
                    if min_quorum_cardinality(cfg) != 2 * t_eff + 1 or max_quorum_cardinality(cfg) != n - t_eff:
                        problems.append((n, t_eff, high, "cardinality"))
                    checked += 1
    elapsed = time.time() - t0
    ok = not problems and elapsed < 60
    verdict("quorum laws", ok, f"{checked} weight assignments for n=4..10, {len(problems)} violations, "
                               f"{elapsed:.1f}s (limit 60s)")
    assert ok, problems[:5]


# 2 -----------------------------------------------------------------------------

def test_forensics(verdict):
    t0 = time.time()
    n, t, t_fast = 10, 3, 2
    equivocating = verified = 0
    failures = []
    for seed in range(100):
        size = 3 + seed % (t - 3 + 1)  # sizes 3..t
        after = "silent" if seed % 2 else "correct"
        sc = Scenario(name="forensics", matrix=f"synthetic:{n}:{seed}", variant="flash", theta=10,
                      duration_ms=5000, seed=seed, anneal_iterations=1000,
                      directives=(parse_directive(f"at=1500 kind=equivocate_coalition size={size} after={after}"),))
        tr = simulate(sc)
        coalition = tr.coalition.members
        if tr.coalition.equivocated_at is None:
            continue
        equivocating += 1
        named = [verify_poc(p[3], tr.verifier, t_fast=t_fast) for p in tr.pocs]
        accused = set().union(*[set(p[2]) for p in tr.pocs]) if tr.pocs else set()
        good = (named and all(c is not None for c in named) and any(len(c) >= t_fast + 1 for c in named)
                and all(c <= coalition for c in named) and not (accused & tr.correct))
        if good:
            verified += 1
        else:
            failures.append((seed, sorted(coalition), [sorted(c) if c else c for c in named]))
    elapsed = time.time() - t0
    ok = equivocating >= 90 and verified == equivocating and elapsed < 300
    verdict("forensics", ok, f"{verified}/{equivocating} equivocating runs (of 100) produced verified PoCs "
                             f"naming only coalition members, {elapsed:.1f}s (limit 300s)")
    assert ok, failures[:5]


# 3 -----------------------------------------------------------------------------

SAFETY_KINDS = {
    "equivocation": lambda s: (f"at=1500 kind=equivocate_coalition size={3 if s % 2 else 2}",),
    "equivocation_then_silent": lambda s: ("at=1500 kind=equivocate_coalition size=3 after=silent",),
    "crash": lambda s: (f"at={1000 + s * 37 % 2000} kind=crash targets={s % 10},{(s + 3) % 10}",),
    "silent": lambda s: (f"at=1200 kind=silent targets={s * 7 % 10}",),
    "panic": lambda s: ("at=1600 kind=fake_panic", "at=1500 kind=equivocate_coalition size=3"),
}


def test_safety(verdict):
    t0 = time.time()
    runs, failures = 0, []
    seen = {"abort": 0, "rollback": 0, "client_panic": 0, "fake_panic": 0}
    for seed in range(40):
        for kind, make in SAFETY_KINDS.items():
            sc = Scenario(name=kind, matrix=f"synthetic:10:{seed}", variant="flash", theta=10, duration_ms=6000,
                          seed=seed, anneal_iterations=1000,
                          directives=tuple(parse_directive(d) for d in make(seed)))
            tr = simulate(sc)
            runs += 1
            events = {e[2] for e in tr.timeline}
            for k in seen:
                seen[k] += k in events
            problems = safety_violations(tr)
            if problems:
                failures.append((kind, seed, problems))
    elapsed = time.time() - t0
    covered = all(seen.values())
    ok = runs >= 200 and not failures and covered
    verdict("safety", ok, f"{runs} runs, {len(failures)} with violations; runs with aborts {seen['abort']}, "
                          f"rollbacks {seen['rollback']}, client panics {seen['client_panic']}, "
                          f"fake panics {seen['fake_panic']}; {elapsed:.1f}s")
    assert ok, failures[:5]


# 4 -----------------------------------------------------------------------------

def test_liveness(verdict):
    sc = _bundled("aws21_leader_crash")
    sim = Simulation(sc)
    crashed = {d.targets[0] for d in sc.directives if d.kind == "crash"}
    assert sim.params.fast_leader in crashed  # the scenario crashes the fast leader
    tr = sim.run()
    unfinished = unfinished_ops(tr)
    crash_at = next(d.at for d in sc.directives if d.kind == "crash")
    bad = []
    for rid in sorted(tr.correct):
        ev = [(t, kind, detail) for t, r, kind, detail in tr.timeline if r == rid]
        kinds = [k for _, k, _ in ev if k in ("mode_switch", "abort", "sync_start", "sync_end")]
        if kinds[:5] != ["mode_switch", "abort", "sync_start", "sync_end", "mode_switch"]:
            bad.append((rid, "sequence", kinds[:6]))
            continue
        first_fast = next(t for t, k, _ in ev if k == "mode_switch")
        abort_t = next(t for t, k, _ in ev if k == "abort")
        sync_end = next((t, d) for t, k, d in ev if k == "sync_end")
        switches = [(t, d) for t, k, d in ev if k == "mode_switch"]
        upto = int(dict(x.split("=") for x in sync_end[1].split())["upto"])
        again = int(dict(x.split("=") for x in switches[1][1].split())["instance"])
        if not first_fast < crash_at < abort_t:
            bad.append((rid, "timing"))
        if sync_end[0] - abort_t > sim.params.sync_timeout_ms:
            bad.append((rid, "sync overhead", sync_end[0] - abort_t))
        if again > upto + sc.theta:
            bad.append((rid, "re-entry", upto, again))
    modes = [c["mode"] for c in sorted(tr.consensus, key=lambda c: c["start"])]
    shape = modes[0] == "conservative" and "fast" in modes
    ok = not unfinished and not bad and shape
    verdict("liveness", ok, f"{len(tr.ops)} ops, {len(unfinished)} unfinished; "
                            f"conservative->fast->crash->abort->sync->fast at {len(tr.correct) - len(bad)}/"
                            f"{len(tr.correct)} correct replicas, fast re-entry within theta={sc.theta} "
                            f"decisions of the synchronized history")
    assert ok, (unfinished[:5], bad[:5])


# 5 -----------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _aws(pattern):
    t0 = time.time()
    flash = simulate(_bundled("aws21_flash", pattern=pattern))
    cons = simulate(_bundled("aws21_conservative", pattern=pattern))
    return flash, cons, time.time() - t0


def _speedups(pattern):
    flash, cons, _ = _aws(pattern)
    return (report.steady_consensus_latency(cons) / report.steady_consensus_latency(flash),
            report.mean_client_speedup(cons, flash, "final"))


def test_aws21_latency(verdict):
    flash, cons, elapsed = _aws("three_step")
    consensus, final = _speedups("three_step")
    ordered = [all(level_order_ok(o) for o in tr.ops if o.client == c)
               for tr in (flash, cons) for c in tr.client_regions]
    order_frac = sum(ordered) / len(ordered)
    t0 = time.time()
    w_cons = simulate(Scenario(name="world51_conservative", matrix="world51", variant="conservative_only",
                               theta=10, duration_ms=4000, warmup_ms=2000, clients=tuple(range(0, 51, 5))))
    w_flash = simulate(Scenario(name="world51_flash", matrix="world51", variant="flash", theta=10,
                                duration_ms=4000, warmup_ms=2000, clients=tuple(range(0, 51, 5))))
    large = report.steady_consensus_latency(w_cons) / report.steady_consensus_latency(w_flash)
    elapsed += time.time() - t0
    ok = consensus >= 2.5 and final >= 1.4 and order_frac == 1.0 and large > 2.0 and elapsed < 600
    verdict("aws21 latency", ok, f"consensus {consensus:.2f}x (>=2.5), client final {final:.2f}x (>=1.4), "
                                 f"level order {order_frac:.0%} of clients, 51-node {large:.2f}x (>2), "
                                 f"{elapsed:.1f}s")
    assert ok


# 6 -----------------------------------------------------------------------------

def test_prediction_and_optimizer(verdict):
    t0 = time.time()
    worst = 0.0
    for s in range(20):
        for pattern in ("three_step", "seven_step"):
            for variant, key in (("conservative_only", "conservative"), ("flash", "fast")):
                sc = Scenario(name="predict", matrix=f"synthetic:{7 + s % 4}:{100 + s}", variant=variant,
                              pattern=pattern, theta=3, duration_ms=3000, clients=(0,), think_max_ms=50,
                              anneal_iterations=500, seed=s)
                tr = simulate(sc)
                lats = [c["decide"] - c["start"] for c in tr.consensus if (c["mode"] == "fast") == (key == "fast")]
                assert lats, (s, pattern, variant)
                p = tr.predicted[key]
                worst = max(worst, max(abs(x - p) / p for x in lats))
    mismatches = 0
    for seed in range(100):
        rng = np.random.default_rng(5000 + seed)
        n = 4 + seed % 7
        t = 1 + (seed // 7) % optimal_threshold(n)
        m = random_metric_matrix(n, rng)
        for pattern in ("three_step", "seven_step"):
            cfg, leader = anneal(m, t, pattern, seed=seed)
            best = brute_force_best(m.delays.tolist(), t, pattern)[0]
            mismatches += abs(predict(m, cfg, leader, pattern) - best) > 1e-9
    three = _speedups("three_step")[0]
    seven = _speedups("seven_step")[0]
    elapsed = time.time() - t0
    ok = worst <= 0.01 and mismatches == 0 and seven >= three
    verdict("prediction and optimizer", ok,
            f"worst sim/prediction gap {worst:.2e} over 20 matrices x 2 patterns x 2 modes (<=1%); "
            f"anneal vs exhaustive {200 - mismatches}/200 (100 seeds x 2 patterns); "
            f"aws21 seven-step {seven:.3f}x >= three-step {three:.3f}x; {elapsed:.1f}s")
    assert ok


# 7 -----------------------------------------------------------------------------

def test_determinism(verdict, tmp_path):
    names = ("clients.csv", "consensus.csv", "timeline.csv", "meta.csv")
    differing = []
    for scenario, kw in (("equivocation", {"jitter": True}), ("aws21_flash", {"duration_ms": 8000.0})):
        sc = _bundled(scenario, **kw)
        run_scenario(sc, tmp_path / scenario / "a")
        run_scenario(sc, tmp_path / scenario / "b")
        for f in names:
            if (tmp_path / scenario / "a" / f).read_bytes() != (tmp_path / scenario / "b" / f).read_bytes():
                differing.append(f"{scenario}/{f}")
    ok = not differing
    verdict("determinism", ok, f"2 scenarios run twice with the same seed, {len(differing)} of 8 CSVs differ")
    assert ok, differing
