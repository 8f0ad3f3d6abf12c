import numpy as np
import pytest

from flashbft.checks import level_order_ok, safety_violations, unfinished_ops
from flashbft.netsim.matrix import LatencyMatrix, random_metric_matrix
from flashbft.netsim.scenario import Scenario, ScenarioError, parse_directive, parse_scenario
from flashbft.netsim.sim import Simulation, load_matrix, simulate
from flashbft.report import clients_csv, consensus_csv, timeline_csv


def _small(**kw):
    base = dict(matrix="uniform:4:50", variant="flash", theta=5, duration_ms=2000, anneal_iterations=200,
                think_max_ms=100)
    base.update(kw)
    return Scenario(**base)


def test_parse_scenario_fields_and_directives():
    sc = parse_scenario("""
        # comment
        name = x
        matrix = uniform:4:10
        pattern = seven
        jitter = off
        timer_ms = auto
        clients = 0,2
        directive = at=300 kind=crash targets=1
        directive = at=100 kind=gst until=500 factor=2
    """)
    assert sc.name == "x" and sc.pattern == "seven_step" and sc.jitter is False and sc.timer_ms is None
    assert sc.clients == (0, 2)
    assert [d.kind for d in sc.directives] == ["gst", "crash"]


@pytest.mark.parametrize("text,line,frag", [
    ("name = a\nbogus = 1", 2, "unknown key"),
    ("theta = x", 1, "invalid literal"),
    ("variant = fastest", 1, "unknown variant"),
    ("jitter = maybe", 1, "boolean"),
    ("\n\ndirective = at=1 kind=explode", 3, "unknown directive kind"),
    ("directive = kind=crash targets=1", 1, "at=<ms>"),
    ("directive = at=1 kind=crash", 1, "needs targets"),
    ("directive = at=1 kind=slow_link targets=1,2,3", 1, "exactly two"),
    ("directive = at=1 kind=gst factor=2", 1, "until"),
    ("directive = at=1 kind=crash targets=1 colour=red", 1, "unknown directive parameter"),
    ("just words", 1, "key = value"),
])
def test_parse_errors_carry_line(text, line, frag):
    with pytest.raises(ScenarioError) as e:
        parse_scenario(text)
    assert e.value.line == line and frag in str(e.value)


def test_validate_rejects_bad_targets():
    with pytest.raises(ScenarioError, match="unknown replica"):
        Simulation(_small(directives=(parse_directive("at=1 kind=crash targets=7", 4),)))
    with pytest.raises(ScenarioError, match="exceeds t=1"):
        Simulation(_small(directives=(parse_directive("at=1 kind=equivocate_coalition size=2", 5),)))


def test_matrix_csv_round_trip_and_rtt():
    m = LatencyMatrix(("a", "b"), np.array([[0, 20.5], [30, 0]]))
    assert LatencyMatrix.from_csv(m.to_csv()) == m
    assert LatencyMatrix.from_csv("a,b\n0,40\n40,0\n", rtt=True)[0, 1] == 20.0
    with pytest.raises(ValueError, match="diagonal"):
        LatencyMatrix(("a", "b"), np.array([[1, 2], [2, 0]]))
    with pytest.raises(ValueError, match="line 3"):
        LatencyMatrix.from_csv("a,b\n0,1\n1\n")


def test_load_matrix_specs():
    aws = load_matrix("aws21")
    assert aws.n == 21 and np.allclose(aws.delays, aws.delays.T, atol=15)
    assert load_matrix("uniform:5:7")[1, 3] == 7.0
    syn = load_matrix("synthetic:8:3")
    assert syn == random_metric_matrix(8, np.random.default_rng(3))
    assert load_matrix("aws21", n=10).n == 10
    w = load_matrix("world51")
    assert w.n == 51 and np.array_equal(w.delays, w.delays.T)
    assert w[w.labels.index("london"), w.labels.index("paris")] < 10
    with pytest.raises(ValueError):
        load_matrix("uniform:4:1", n=6)


def test_delay_slow_link_and_drop():
    sim = Simulation(_small(directives=(parse_directive("at=0 kind=slow_link targets=0,1 factor=4"),
                                        parse_directive("at=0 kind=drop targets=3 until=100"))))
    assert sim.delay(0, 1) == 50.0
    for d in sim.sc.directives:
        sim._directive(d)
    assert sim.delay(0, 1) == sim.delay(1, 0) == 200.0
    assert sim.delay(0, 2) == 50.0
    sim.heap.clear()
    sim.send(0, 3, "x")
    assert not sim.heap
    sim.now = 100.0
    sim.send(0, 3, "x")
    assert sim.heap[0][0] == 150.0


def test_links_are_fifo():
    sim = Simulation(_small(jitter=True, jitter_sigma=0.3))
    sim.heap.clear()
    for k in range(50):
        sim.now = k * 0.01
        sim.send(0, 1, k)
    arrivals = sorted((t, s, q, p[1]) for t, s, q, _, p in sim.heap)
    assert [a[3] for a in arrivals] == list(range(50))


def test_zero_latency_run_decides_instantly():
    tr = simulate(_small(matrix="uniform:4:0", duration_ms=500))
    assert tr.consensus and all(c["decide"] == c["start"] for c in tr.consensus)
    assert not safety_violations(tr) and not unfinished_ops(tr)


def test_uniform_run_is_safe_and_ordered():
    tr = simulate(_small())
    assert not safety_violations(tr) and not unfinished_ops(tr)
    assert any(c["mode"] == "fast" for c in tr.consensus)
    assert all(level_order_ok(o) for o in tr.ops)


def test_same_seed_same_outputs():
    sc = _small(matrix="synthetic:7:2", jitter=True)
    a, b = simulate(sc), simulate(sc)
    for f in (clients_csv, consensus_csv, timeline_csv):
        assert f(a) == f(b)
    assert consensus_csv(simulate(sc.replace(seed=9))) != consensus_csv(a)


def test_crash_of_follower_keeps_progress():
    tr = simulate(_small(n=None, matrix="uniform:7:20",
                         directives=(parse_directive("at=500 kind=crash targets=3"),)))
    assert not safety_violations(tr) and not unfinished_ops(tr)
    assert max(c["decide"] for c in tr.consensus) > 500


def test_fake_panic_is_ignored():
    sc = _small(matrix="uniform:7:20", directives=(parse_directive("at=800 kind=fake_panic"),))
    tr = simulate(sc)
    kinds = [e[2] for e in tr.timeline]
    assert "fake_panic" in kinds
    assert "abort" not in kinds and "sync_start" not in kinds
    assert not tr.pocs and not unfinished_ops(tr)
