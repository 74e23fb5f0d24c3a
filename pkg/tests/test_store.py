import json
from decimal import Decimal

import pytest

from causalflow import scenarios
from causalflow.errors import CorruptRecord, ForwardRef, IdMismatch
from causalflow.events import Event, History
from causalflow.store import (
    LOG_NAME, Workspace, check, check_records, decode_record, encode_record, load, read_records, save,
)


def fence_ws(tmp_path):
    ws = Workspace.init(tmp_path)
    scenarios.fence_in(ws)
    return ws


def lines(path):
    return path.read_text().splitlines()


def test_record_round_trip_keeps_types():
    e = Event.create("m", "u", "c", {"d": Decimal("0.10"), "n": 3, "b": False, "s": "x\"y"}, role=None, ts_sys=7)
    back = decode_record(encode_record(e))
    assert back == e and back.ts_sys == 7
    assert back.payload["d"] == Decimal("0.10") and isinstance(back.payload["n"], int)
    rec = json.loads(encode_record(e))
    assert set(rec) == {"id", "model", "actor", "role", "context", "payload", "refs", "ts_sys"}


def test_origins_survive(tmp_path):
    ws = fence_ws(tmp_path)
    again = load(ws.log_path)
    for a, b in zip(ws.history, again.history):
        assert dict(a.ref_origins) == dict(b.ref_origins)
        assert a.ts_sys == b.ts_sys


def test_load_rebuilds_registries(tmp_path):
    ws = Workspace.init(tmp_path)
    scenarios.payment_in(ws)
    again = Workspace.open(tmp_path)
    assert sorted(again.guards) == ["CheckLimit", "ExecutePayment"]
    assert "payment" in again.models
    assert again.history.ids() == ws.history.ids()
    assert again.run().step_count == 1


def test_forward_ref_reports_line(tmp_path):
    ws = fence_ws(tmp_path)
    rows = lines(ws.log_path)
    rows[3], rows[4] = rows[4], rows[3]
    ws.log_path.write_text("\n".join(rows) + "\n")
    with pytest.raises(ForwardRef) as info:
        load(ws.log_path)
    assert info.value.line == 4


def test_tampered_payload_is_id_mismatch(tmp_path):
    ws = fence_ws(tmp_path)
    rows = lines(ws.log_path)
    rows[-1] = rows[-1].replace('"green"', '"blue"')
    ws.log_path.write_text("\n".join(rows) + "\n")
    with pytest.raises(IdMismatch) as info:
        load(ws.log_path)
    assert info.value.line == len(rows)


def test_garbage_line_is_corrupt(tmp_path):
    ws = fence_ws(tmp_path)
    with open(ws.log_path, "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(CorruptRecord) as info:
        load(ws.log_path)
    assert "line" in str(info.value)


def test_inadmissible_line_rejected_on_replay(tmp_path):
    ws = fence_ws(tmp_path)
    insp = ws.history[next(e.id for e in ws.history if e.model_id == "M_Inspection")]
    rogue = Event.create("M_Color", "painter", scenarios.FENCE, {"color": "red"}, [insp.id], role="guest")
    with open(ws.log_path, "a") as fh:
        fh.write(encode_record(rogue) + "\n")
    with pytest.raises(CorruptRecord) as info:
        load(ws.log_path)
    assert "Unauthorized" in str(info.value)


def test_check_green_and_i1(tmp_path):
    ws = fence_ws(tmp_path)
    report = check(ws.log_path)
    assert report.ok and all(getattr(report, f"{n}_ok") for n in ("i1", "i2", "i3", "w1", "w2", "w3"))
    rows = lines(ws.log_path)
    ws.log_path.write_text("\n".join(rows[:-1]) + "\n")
    report = check(ws.log_path)
    assert not report.i1_ok


def test_check_detects_cycle():
    a = Event("a" * 64, "m", "u", "c", {}, frozenset({"b" * 64}))
    b = Event("b" * 64, "m", "u", "c", {}, frozenset({"a" * 64}))
    report = check_records([a, b])
    assert not report.i2_ok and not report.w2_ok
    cyc = [ids for name, ids in report.violations if name == "w2"][0]
    assert set(cyc) == {a.id, b.id}


def test_check_detects_fork():
    h = History()
    root = Event.create("m", "u", "c", {"v": 0})
    left = Event.create("m", "u", "c", {"v": 1}, [root.id])
    right = Event.create("m", "u", "c", {"v": 2}, [root.id])
    for e in (root, left, right):
        h.append(e)
    report = check_records(h.events)
    assert not report.w3_ok
    assert report.violations[0][1][0] == "u@m,c"


def test_save_and_read(tmp_path):
    s = scenarios.payment()
    path = tmp_path / "plain.jsonl"
    save(s.history, path)
    events = [decode_record(line, n) for n, line in read_records(path)]
    assert [e.id for e in events] == s.history.ids()
    assert check_records(events).ok


def test_workspace_requires_init(tmp_path):
    with pytest.raises(FileNotFoundError):
        Workspace.open(tmp_path / "nothing")
    Workspace.init(tmp_path)
    assert (tmp_path / LOG_NAME).exists()
