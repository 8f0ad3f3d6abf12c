import pytest

from flashbft.history import HistOp, check_key, is_linearizable, partition


def op(client, seq, text, inv, resp, result):
    return HistOp(client, seq, text.encode(), inv, resp, None if result is None else str(result).encode())


def test_sequential_history():
    h = [op(1, 1, "incr a", 0, 1, 1), op(1, 2, "incr a", 2, 3, 2), op(2, 1, "get a", 4, 5, 2)]
    assert is_linearizable(h)


def test_concurrent_increments_any_order():
    h = [op(1, 1, "incr a", 0, 10, 2), op(2, 1, "incr a", 1, 9, 1)]
    assert is_linearizable(h)


def test_stale_read_rejected():
    # the read starts after the increment returned, so it must see it
    h = [op(1, 1, "incr a", 0, 1, 1), op(2, 1, "get a", 2, 3, 0)]
    assert not is_linearizable(h)


def test_duplicate_result_rejected():
    h = [op(1, 1, "incr a", 0, 5, 1), op(2, 1, "incr a", 0, 5, 1)]
    assert not is_linearizable(h)


def test_pending_op_may_take_effect():
    # client 2's increment never finalized, yet a later read can observe it
    h = [op(2, 1, "incr a", 0, None, None), op(1, 1, "get a", 5, 6, 1)]
    assert is_linearizable(h)
    h = [op(2, 1, "incr a", 0, None, None), op(1, 1, "get a", 5, 6, 0)]
    assert is_linearizable(h)


def test_pending_op_cannot_precede_its_invocation():
    h = [op(1, 1, "get a", 0, 1, 1), op(2, 1, "incr a", 5, None, None)]
    assert not is_linearizable(h)


def test_keys_independent():
    h = [op(1, 1, "incr a", 0, 1, 1), op(2, 1, "incr b", 0, 1, 1), op(3, 1, "get b", 2, 3, 1)]
    assert set(partition(h)) == {"a", "b"}
    assert is_linearizable(h)


def test_state_budget():
    h = [op(c, 1, "incr a", 0, 100, c + 1) for c in range(12)]
    assert check_key(h)
    with pytest.raises(RuntimeError):
        # many unfinished ops and an unreachable read force a wide search
        pending = [op(c, 1, "incr a", 0, None, None) for c in range(12)]
        check_key(pending + [op(99, 1, "get a", 1, 2, 50)], max_states=50)
