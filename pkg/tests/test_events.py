import random
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalflow.errors import ForwardRef, IdMismatch, InvalidEvent
from causalflow.events import Event, History, Key, Origin, compute_id, events_for
from causalflow.models import ModelRegistry, parse_models

from oracles import ACTORS, CONTEXTS, random_history


def test_compute_id_is_deterministic_and_ref_order_free():
    a = compute_id("m", "u", None, "c", {"x": 1, "y": "z"}, ["r2", "r1"])
    b = compute_id("m", "u", None, "c", {"y": "z", "x": 1}, ["r1", "r2"])
    assert a == b and len(a) == 64


def test_value_types_are_part_of_identity():
    ids = {
        compute_id("m", "u", None, "c", {"x": v}, [])
        for v in (1, "1", Decimal("1.0"), True)
    }
    assert len(ids) == 4


def test_no_collisions_over_ten_thousand_inputs():
    seen = set()
    for i in range(10_000):
        seen.add(compute_id("m", "u", "r", "c", {"amount": i}, []))
    assert len(seen) == 10_000


def test_append_root_payment():
    h = History()
    e1 = Event.create("payment", "bank", "A", {"amount": 950, "client": "A"})
    h.append(e1)
    assert h.ids() == [e1.id]
    assert h[e1.id].ts_sys == 0


def test_forward_ref_rejected():
    h = History()
    e = Event.create("m", "u", "c", {}, ["0" * 64])
    with pytest.raises(ForwardRef):
        h.append(e)
    assert len(h) == 0


def test_append_is_idempotent():
    h = History()
    e = Event.create("m", "u", "c", {"v": 1})
    h.append(e)
    h.append(e)
    assert len(h) == 1


def test_tampered_event_rejected():
    e = Event.create("m", "u", "c", {"v": 1})
    forged = Event(e.id, "m", "u", "c", {"v": 2})
    with pytest.raises(IdMismatch):
        History().append(forged)


def test_self_reference_and_origin_coverage():
    e = Event.create("m", "u", "c")
    with pytest.raises(InvalidEvent):
        Event(e.id, "m", "u", "c", {}, frozenset({e.id}))
    with pytest.raises(InvalidEvent):
        Event("x", "m", "u", "c", {}, frozenset(), None, {"y": {Origin.EXPLICIT}})


def test_ts_sys_not_in_identity():
    a = Event.create("m", "u", "c", {"v": 1}, ts_sys=5)
    b = Event.create("m", "u", "c", {"v": 1}, ts_sys=9)
    assert a.id == b.id


def test_decimal_normalisation():
    e = Event.create("m", "u", "c", {"d": Decimal("3"), "f": 0.5})
    assert str(e.payload["d"]) == "3.0"
    assert e.payload["f"] == Decimal("0.5")


def test_signature_ignores_pure_auto_chain_refs():
    h = History()
    first = Event.create("m", "u", "c", {"v": 0})
    h.append(first)
    plain = Event.create("m", "u", "c", {"v": 1})
    chained = Event.create("m", "u", "c", {"v": 1}, {first.id: {Origin.AUTO_CHAIN}})
    both = Event.create("m", "u", "c", {"v": 1}, {first.id: {Origin.AUTO_CHAIN, Origin.EXPLICIT}})
    assert plain.id != chained.id
    assert plain.signature == chained.signature
    assert both.signature != plain.signature


def test_context_creators_registered_for_concepts_only():
    reg = ModelRegistry(parse_models(
        "model F { type: Concept; permission * } model C { type: Attribute; permission * }"
    ))
    h = reg.bind(History())
    attr = Event.create("C", "u", "f1", {})
    h.append(attr)
    assert "f1" not in h.context_creators
    create = Event.create("F", "u", "f1", {})
    h.append(create)
    h.append(Event.create("F", "u", "f1", {"again": True}))
    assert h.context_creators == {"f1": create.id}


def test_events_for_matches_filter_oracle():
    rng = random.Random(7)
    for _ in range(50):
        h = random_history(rng, 25)
        for actor in ACTORS:
            for model in ("a", "b", "c"):
                for ctx in CONTEXTS:
                    expected = [e for e in h.events if e.actor == actor and e.model_id == model and e.context == ctx]
                    assert events_for(h, actor, Key(model, ctx)) == expected


def test_empty_history_cell():
    assert events_for(History(), "painter", ("M_Color", "fence#123")) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_partitions_and_monotonicity(seed, n):
    rng = random.Random(seed)
    h = History()
    src = random_history(rng, n)
    for e in src:
        before = h.ids()
        h.append(Event.create(e.model_id, e.actor, e.context, e.payload, e.ref_origins, role=e.role))
        assert h.ids()[:len(before)] == before
    cells = [e.id for evs in h.by_key.values() for e in evs]
    assert sorted(cells) == sorted(h.ids())
    ak = [e.id for evs in h.by_actor_key.values() for e in evs]
    assert sorted(ak) == sorted(h.ids())
    for e in h:
        assert e.content_id() == e.id
