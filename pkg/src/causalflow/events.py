"""Events, content-addressed ids and the append-only history."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from decimal import Decimal
from enum import Enum
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, NamedTuple, Union

from .causality import CausalGraph
from .errors import ForwardRef, IdMismatch, InvalidEvent

Scalar = Union[str, int, Decimal, bool]

SYSTEM_ACTOR = "System"


class Origin(str, Enum):
    EXPLICIT = "explicit"
    AUTO_CHAIN = "auto_chain"
    BASE = "base"


class Key(NamedTuple):
    model_id: str
    context: str

    def __str__(self) -> str:
        return f"{self.model_id},{self.context}"


def normalize_value(value) -> Scalar:
    """Coerce a payload value into one of the supported scalar types.

    Decimals always carry a point or an exponent so that their JSON text reads
    back as a decimal rather than an integer.
    """
    if isinstance(value, (bool, str)):
        return value
    if isinstance(value, int):
        return int(value)
    if isinstance(value, float):
        value = Decimal(repr(value))
    if isinstance(value, Decimal):
        if not value.is_finite():
            raise InvalidEvent(f"non-finite decimal {value}")
        text = str(value)
        if "." not in text and "E" not in text:
            value = Decimal(text + ".0")
        return value
    raise InvalidEvent(f"unsupported payload value {value!r} ({type(value).__name__})")


def _tagged(value: Scalar) -> list:
    if isinstance(value, bool):
        return ["b", "true" if value else "false"]
    if isinstance(value, int):
        return ["i", str(value)]
    if isinstance(value, Decimal):
        return ["d", str(value)]
    return ["s", value]


def canonical_bytes(model_id: str, actor: str, role: str | None, context: str,
                    payload: Mapping[str, Scalar], refs: Iterable[str]) -> bytes:
    body = [
        model_id,
        actor,
        role,
        context,
        [[path, *_tagged(payload[path])] for path in sorted(payload)],
        sorted(set(refs)),
    ]
    return json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def compute_id(model_id: str, actor: str, role: str | None, context: str,
               payload: Mapping[str, Scalar], refs: Iterable[str]) -> str:
    payload = {p: normalize_value(v) for p, v in payload.items()}
    return hashlib.sha256(canonical_bytes(model_id, actor, role, context, payload, refs)).hexdigest()


@dataclass(frozen=True, eq=False)
class Event:
    id: str
    model_id: str
    actor: str
    context: str
    payload: Mapping[str, Scalar]
    refs: frozenset[str] = frozenset()
    role: str | None = None
    # id -> origin tags; one id may be reached through several sources
    ref_origins: Mapping[str, frozenset[Origin]] = field(default_factory=dict)
    ts_sys: int | None = None

    @classmethod
    def create(cls, model_id: str, actor: str, context: str, payload: Mapping | None = None,
               refs: Mapping[str, Iterable[Origin]] | Iterable[str] = (), role: str | None = None,
               ts_sys: int | None = None) -> "Event":
        """Build an event and compute its content id.

        ``refs`` is either a mapping id -> origin tags or a plain iterable of
        ids (all tagged explicit).
        """
        if isinstance(refs, Mapping):
            origins = {r: frozenset(Origin(o) for o in tags) for r, tags in refs.items()}
        else:
            origins = {r: frozenset({Origin.EXPLICIT}) for r in refs}
        payload = {str(p): normalize_value(v) for p, v in (payload or {}).items()}
        eid = compute_id(model_id, actor, role, context, payload, origins)
        return cls(eid, model_id, actor, context, payload, frozenset(origins), role, origins, ts_sys)

    def __post_init__(self) -> None:
        payload = {str(p): normalize_value(v) for p, v in self.payload.items()}
        object.__setattr__(self, "payload", MappingProxyType(payload))
        object.__setattr__(self, "refs", frozenset(self.refs))
        origins = {r: frozenset(Origin(o) for o in tags) for r, tags in dict(self.ref_origins).items()}
        for r in self.refs:
            origins.setdefault(r, frozenset({Origin.EXPLICIT}))
        if set(origins) != set(self.refs):
            raise InvalidEvent("ref_origins must cover exactly the refs", self.id)
        if any(not tags for tags in origins.values()):
            raise InvalidEvent("every ref needs at least one origin tag", self.id)
        object.__setattr__(self, "ref_origins", MappingProxyType(origins))
        if self.id in self.refs:
            raise InvalidEvent("an event cannot reference itself", self.id)

    @property
    def key(self) -> Key:
        return Key(self.model_id, self.context)

    @property
    def type(self) -> str:
        return self.model_id

    def content_id(self) -> str:
        return compute_id(self.model_id, self.actor, self.role, self.context, self.payload, self.refs)

    @cached_property
    def signature(self) -> str:
        """Digest of the content with refs that came *only* from auto_chain dropped.

        Two emissions that differ just in their chain predecessor describe the
        same fixation; the executor uses this to recognise saturated guards.
        """
        refs = [r for r, tags in self.ref_origins.items() if tags != {Origin.AUTO_CHAIN}]
        return compute_id(self.model_id, self.actor, self.role, self.context, self.payload, refs)

    def same_content(self, other: "Event") -> bool:
        return (
            self.id == other.id
            and self.model_id == other.model_id
            and self.actor == other.actor
            and self.role == other.role
            and self.context == other.context
            and dict(self.payload) == dict(other.payload)
            and self.refs == other.refs
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Event):
            return NotImplemented
        return self.same_content(other) and dict(self.ref_origins) == dict(other.ref_origins)

    def __hash__(self) -> int:
        return hash(self.id)

    def short(self) -> str:
        return self.id[:12]


# Models whose creation events define a new individual / action context.
CREATING_MODEL_TYPES = frozenset({"Concept", "Action"})


class History:
    """Append-only sequence of events with key and (actor, key) partitions.

    ``model_types`` maps model ids to their model type so that context
    creators can be registered; it is filled in by whoever owns the model
    registry (``models.ModelRegistry.bind``).
    """

    def __init__(self, events: Iterable[Event] = (), *, stamp_ts: bool = True) -> None:
        self.events: list[Event] = []
        self.by_id: dict[str, Event] = {}
        self.by_key: dict[Key, list[Event]] = {}
        self.by_actor_key: dict[tuple[str, Key], list[Event]] = {}
        self.context_creators: dict[str, str] = {}
        self.by_signature: dict[str, str] = {}
        self.graph = CausalGraph()
        self.model_types: dict[str, str] = {}
        self.stamp_ts = stamp_ts
        self._next_ts = 0
        for e in events:
            self.append(e)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __contains__(self, item) -> bool:
        if isinstance(item, Event):
            item = item.id
        return item in self.by_id

    def __getitem__(self, event_id: str) -> Event:
        return self.by_id[event_id]

    def get(self, event_id: str) -> Event | None:
        return self.by_id.get(event_id)

    def ids(self) -> list[str]:
        return [e.id for e in self.events]

    def position(self, event_id: str) -> int:
        return self.events.index(self.by_id[event_id])

    def append(self, e: Event) -> "History":
        """Append ``e`` in place and return self.

        Re-appending an identical event is a no-op.
        """
        if e.content_id() != e.id:
            raise IdMismatch(f"stored id {e.id[:12]} does not match content digest", e.id)
        existing = self.by_id.get(e.id)
        if existing is not None:
            return self
        missing = sorted(r for r in e.refs if r not in self.by_id)
        if missing:
            raise ForwardRef(f"refs name absent events: {', '.join(m[:12] for m in missing)}", e.id)
        if e.ts_sys is None and self.stamp_ts:
            e = replace(e, ts_sys=self._next_ts)
        if e.ts_sys is not None:
            self._next_ts = max(self._next_ts, e.ts_sys + 1)
        self.events.append(e)
        self.by_id[e.id] = e
        self.by_key.setdefault(e.key, []).append(e)
        self.by_actor_key.setdefault((e.actor, e.key), []).append(e)
        self.by_signature.setdefault(e.signature, e.id)
        self.graph.add(e.id, e.refs)
        if (
            self.model_types.get(e.model_id) in CREATING_MODEL_TYPES
            and e.context not in self.context_creators
        ):
            self.context_creators[e.context] = e.id
        return self

    def events_for(self, actor: str, key: Key | tuple[str, str]) -> list[Event]:
        return list(self.by_actor_key.get((actor, Key(*key)), ()))

    def events_for_key(self, key: Key | tuple[str, str]) -> list[Event]:
        return list(self.by_key.get(Key(*key), ()))

    def cells(self) -> list[tuple[str, Key]]:
        return list(self.by_actor_key)

    def copy(self) -> "History":
        h = History(stamp_ts=self.stamp_ts)
        h.model_types = dict(self.model_types)
        for e in self.events:
            h.append(e)
        h._next_ts = self._next_ts
        return h


def events_for(h: History, actor: str, key: Key | tuple[str, str]) -> list[Event]:
    return h.events_for(actor, key)


def append(h: History, e: Event) -> History:
    return h.append(e)
