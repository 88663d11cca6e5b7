import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropstream.audit import (
    AuditState, EventKind, diff_events, loss_upper_limit, reconcile, reference_events,
)
from dropstream.transport import FaultRecord, GroundTruth

U64 = 1 << 64


def _run(ids, **kw):
    a = AuditState(**kw)
    for i in ids:
        a.observe(i)
    return a


def test_in_order_is_silent():
    a = _run(range(1, 101))
    assert a.events == [] and a.packets_ok == 100 and a.check_accounting()


def test_gap_gives_one_missing():
    a = _run([1, 2, 3, 5])
    assert [str(e) for e in a.events] == ["Missing(1)@5"]
    assert a.total_missing == 1


def test_single_swap_gives_the_triple():
    a = _run([1, 2, 4, 3, 5])
    assert [str(e) for e in a.events] == ["Missing(1)@4", "ExtraOrRepeat(-1)@3", "Missing(1)@5"]
    assert a.total_missing == 2 and a.total_extra == 1 and a.check_accounting()


def test_repeat_gives_extra_zero():
    a = _run([1, 2, 2, 3])
    assert [str(e) for e in a.events] == ["ExtraOrRepeat(0)@2"]


def test_wrap_is_in_order():
    assert _run([U64 - 2, U64 - 1, 0, 1]).events == []


def test_expected_first_id_catches_leading_loss():
    a = _run([3, 4], expected_first_id=0)
    assert [str(e) for e in a.events] == ["Missing(3)@3"]


@settings(max_examples=200)
@given(st.integers(0, U64 - 1), st.lists(st.integers(-3, 5), min_size=1, max_size=200))
def test_accounting_identity(start, steps):
    ids = [start]
    for s in steps:
        ids.append((ids[-1] + s) % U64)
    assert _run(ids).check_accounting()


@given(st.integers(4, 300), st.data())
def test_any_adjacent_swap_gives_the_triple(n, data):
    k = data.draw(st.integers(1, n - 3))
    ids = list(range(n))
    ids[k], ids[k + 1] = ids[k + 1], ids[k]
    kinds = [(e.kind, e.value) for e in _run(ids).events]
    assert kinds == [(EventKind.MISSING, 1), (EventKind.EXTRA, -1), (EventKind.MISSING, 1)]


@given(st.permutations(list(range(30))))
def test_permutation_events_match_reference(perm):
    a = _run(perm)
    assert [e.key for e in a.events] == reference_events(perm)
    assert a.check_accounting()


@settings(max_examples=100)
@given(st.lists(st.integers(0, 50), max_size=100), st.integers(1, 17))
def test_batch_matches_scalar(ids, chunk):
    a = _run(ids)
    b = AuditState()
    for k in range(0, len(ids), chunk):
        b.observe_batch(np.array(ids[k:k + chunk], dtype=np.uint64))
    assert [e.key for e in a.events] == [e.key for e in b.events]
    assert a.report() == b.report()


def test_upper_limit():
    assert loss_upper_limit(99, 1) == 0.01
    assert loss_upper_limit(0, 0) is None
    assert loss_upper_limit(9, 0) == 0.1
    assert loss_upper_limit(0, 5) == 1.0
    with pytest.raises(ValueError):
        loss_upper_limit(-1, 0)


def test_event_list_is_bounded():
    a = _run(range(0, 100, 2), max_events=10)
    r = a.report()
    assert len(r.events) == 10 and r.events_overflow == 39 and r.event_count == 49
    assert r.total_missing == 49  # counters keep going past the cap


def test_report_exports(tmp_path):
    r = _run([1, 2, 4]).report()
    d = json.loads(r.to_json())
    assert d["total_missing"] == 1 and d["events"][0]["kind"] == "missing"
    assert d["loss_ratio"] == pytest.approx(1 / 4)
    assert json.loads(_run([]).report().to_json())["loss_ratio"] == "no data"
    p = tmp_path / "ev.csv"
    r.write_events_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0].startswith("stream_id,kind") and lines[1].split(",")[1:4] == ["missing", "1", "4"]


def _truth(ids, **flags):
    n = len(ids)
    rec = FaultRecord(np.full(n, 9000), np.array(ids, np.uint64), flags.get("drop", np.zeros(n, bool)),
                      flags.get("dup", np.zeros(n, bool)), flags.get("shift", np.zeros(n, np.int64)))
    return GroundTruth([rec])


def test_reconcile_agrees_and_flags_differences():
    drop = np.zeros(10, bool)
    drop[4] = True
    truth = _truth(list(range(10)), drop=drop)
    good = _run([0, 1, 2, 3, 5, 6, 7, 8, 9]).report()
    assert reconcile(good, truth, 9000, 0) == []
    bad = _run(list(range(10))).report()
    diffs = reconcile(bad, truth, 9000, 0)
    assert diffs and diffs[0].expected == ("missing", 1, 5, 4)


def test_diff_events_positions():
    assert diff_events([1, 2], [1, 2]) == []
    d = diff_events([1, 2, 3], [1, 9])
    assert [(m.position, m.expected, m.actual) for m in d] == [(1, 2, 9), (2, 3, None)]
