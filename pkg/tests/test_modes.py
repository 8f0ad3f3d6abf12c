import pytest

from flashbft.messages import Stop
from flashbft.modes import (JOIN, LATENCY, TIMER_EXPIRED, VALID_POC, LatencyWatchdog, ModeState, latency_watchdog,
                            leader_of, merge_history, needs_forensics, reranked, shrink_membership)
from flashbft.quorum import compute_weight_config

from builders import batch, entry, setup, stopdata


def test_switch_after_theta():
    m = ModeState(theta=400)
    assert not any(m.on_decided(i) for i in range(1, 400))
    assert m.on_decided(400) and m.fast


def test_abort_resets_counter():
    m = ModeState(theta=400)
    for i in range(399):
        m.on_decided(i)
    m.enter_regency(1)
    assert not m.on_decided(400) and not m.fast and m.consecutive_ok == 1


def test_theta_one_and_disabled():
    assert ModeState(theta=1).on_decided(1)
    m = ModeState(theta=1, enabled=False)
    assert not m.on_decided(1) and not m.fast


def test_abort_only_in_fast_mode():
    m = ModeState(theta=1)
    assert not m.may_abort(TIMER_EXPIRED)
    m.on_decided(1)
    assert m.may_abort(TIMER_EXPIRED) and m.may_abort(LATENCY)
    assert not m.may_abort(VALID_POC, poc_verified=False)
    assert not m.may_abort("whim")
    assert m.enter_regency(1) is True and not m.fast


def test_stop_votes_counted_once_per_replica():
    m = ModeState(theta=5)
    assert m.record_stop(Stop(1, 1, TIMER_EXPIRED, True)) == 1
    assert m.record_stop(Stop(1, 1, TIMER_EXPIRED, True)) == 1
    assert m.record_stop(Stop(2, 1, JOIN, True)) == 2
    m.enter_regency(2)
    assert 1 not in m.stop_votes


def test_watchdog_strict_median():
    w = LatencyWatchdog(window=3)
    for x in (100, 231, 300):
        w.observe(x)
    assert not w.disappointed(231)  # median equals expectation
    w.observe(400)
    assert w.disappointed(231)
    w.reset()
    assert not w.disappointed(0)
    assert not latency_watchdog(103, 231) and not latency_watchdog(231, 231) and latency_watchdog(232, 231)


def test_needs_forensics():
    stops = [Stop(1, 1, LATENCY, True), Stop(2, 1, JOIN, True)]
    assert not needs_forensics(stops, True)
    assert needs_forensics(stops + [Stop(3, 1, TIMER_EXPIRED, True)], True)
    assert needs_forensics([Stop(3, 1, VALID_POC, True)], True)
    assert not needs_forensics([Stop(3, 1, TIMER_EXPIRED, True)], False)


def test_leader_rotation():
    assert [leader_of(r, (4, 2, 9)) for r in range(4)] == [2, 4, 9, 2]


def test_shrink_membership():
    remaining, t, t_fast = shrink_membership(range(10), {0, 1, 2})
    assert remaining == (3, 4, 5, 6, 7, 8, 9) and (t, t_fast) == (2, 1)
    assert len(remaining) >= 3 * t + 1
    assert reranked([9, 0, 3, 5], remaining) == [9, 3, 5, 4, 6, 7, 8]


def test_merge_picks_plurality_and_skips_culprits():
    ring, ver = setup(7)
    cfg = compute_weight_config(7, 2, range(7))
    b1, b2, b3 = batch(ring, "incr a"), batch(ring, "incr b"), batch(ring, "incr c", seq=2)
    all_ = set(range(7))
    e1 = entry(ring, cfg, 1, 0, b1, all_)
    e1x = entry(ring, cfg, 1, 0, b2, all_)
    e2 = entry(ring, cfg, 2, 0, b3, all_)
    sds = [stopdata(ring, 0, 1, [e1x]), stopdata(ring, 1, 1, [e1x]), stopdata(ring, 2, 1, [e1, e2]),
           stopdata(ring, 3, 1, [e1]), stopdata(ring, 4, 1, [e1])]
    merged = merge_history(sds, {0, 1}, ver, range(7), 2)
    assert merged.upto == 2
    assert [e.batch.digest for e in merged.decisions] == [b1.digest, b3.digest]
    # without discounting culprits, the 3-vs-2 plurality still wins
    assert merge_history(sds, set(), ver, range(7), 2).decisions[0].batch.digest == b1.digest


def test_merge_ignores_invalid_proofs():
    ring, ver = setup(7)
    cfg = compute_weight_config(7, 2, range(7))
    good, bad = batch(ring, "incr a"), batch(ring, "incr b")
    weak = entry(ring, cfg, 1, 0, bad, {0, 1})  # not a quorum
    sds = [stopdata(ring, 0, 1, [weak]), stopdata(ring, 1, 1, [weak]),
           stopdata(ring, 2, 1, [entry(ring, cfg, 1, 0, good, set(range(7)))])]
    merged = merge_history(sds, set(), ver, range(7), 2)
    assert [e.batch.digest for e in merged.decisions] == [good.digest]


def test_merge_empty_logs():
    ring, ver = setup(4)
    merged = merge_history([stopdata(ring, i, 1, []) for i in range(3)], set(), ver, range(4), 1)
    assert merged.upto == 0 and merged.prepared is None


@pytest.mark.parametrize("n", [10, 13, 21])
def test_expulsion_keeps_resilience(n):
    t = (n - 1) // 3
    for k in range(1, t + 1):
        remaining, t2, tf2 = shrink_membership(range(n), set(range(k)))
        assert len(remaining) >= 3 * t2 + 1 and tf2 == -(-t2 // 2)
