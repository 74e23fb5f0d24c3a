"""Last-writer-wins readout and the policies for parallel maxima."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .causality import cell_maxima
from .events import SYSTEM_ACTOR, Event, History, Key, Origin

CONFLICT_MODEL = "conflict_detected"


class ConflictMode(str, Enum):
    CONSERVATIVE = "conservative"
    BY_ID = "by-id"
    BY_TS = "by-ts"
    ESCALATE = "escalate"


@dataclass(frozen=True)
class ConflictPolicy:
    mode: ConflictMode = ConflictMode.CONSERVATIVE
    conflict_model: str = CONFLICT_MODEL

    @classmethod
    def parse(cls, text: str) -> "ConflictPolicy":
        return cls(ConflictMode(text))


CONSERVATIVE = ConflictPolicy()


@dataclass(frozen=True)
class ConflictRecord:
    key: Key
    actor: str
    candidates: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", frozenset(self.candidates))
        object.__setattr__(self, "key", Key(*self.key))
        if len(self.candidates) < 2:
            raise ValueError("a conflict needs at least two parallel candidates")


def choose(candidates: Iterable[str], history: History, mode: ConflictMode) -> str | None:
    """Pick one of several causally incomparable events, or None if the mode refuses."""
    candidates = sorted(candidates)
    if mode is ConflictMode.BY_ID:
        return candidates[0]
    if mode is ConflictMode.BY_TS:
        stamps = [history[c].ts_sys for c in candidates]
        if any(s is None for s in stamps):
            return None
        best = max(stamps)
        # ties on ts_sys fall back to the smallest id
        return min(c for c, s in zip(candidates, stamps) if s == best)
    return None


@dataclass(frozen=True)
class LwwReading:
    status: str  # "value" | "absent" | "undefined"
    event_id: str | None = None
    payload: Mapping | None = None
    candidates: tuple[str, ...] = ()

    @property
    def undefined(self) -> bool:
        return self.status == "undefined"


def lww_value(history: History, actor: str, key: Key | tuple[str, str]) -> LwwReading:
    top = cell_maxima(history, actor, Key(*key))
    if not top:
        return LwwReading("absent")
    if len(top) > 1:
        return LwwReading("undefined", candidates=tuple(sorted(top)))
    (eid,) = top
    return LwwReading("value", eid, dict(history[eid].payload))


@dataclass(frozen=True)
class Chosen:
    event_id: str


@dataclass(frozen=True)
class Unresolved:
    reason: str = ""


@dataclass(frozen=True)
class Escalated:
    event: Event


def conflict_event(record: ConflictRecord, history: History, model_id: str = CONFLICT_MODEL,
                   actor: str = SYSTEM_ACTOR) -> Event:
    """Build (but do not append) the event that reports a conflict."""
    refs: dict[str, set[Origin]] = {c: {Origin.EXPLICIT} for c in record.candidates}
    key = Key(model_id, record.key.context)
    for eid in cell_maxima(history, actor, key):
        refs.setdefault(eid, set()).add(Origin.AUTO_CHAIN)
    creator = history.context_creators.get(record.key.context)
    if creator is not None:
        refs.setdefault(creator, set()).add(Origin.BASE)
    payload = {
        "candidates": ",".join(sorted(record.candidates)),
        "model": record.key.model_id,
        "context": record.key.context,
        "actor": record.actor,
    }
    return Event.create(model_id, actor, record.key.context, payload, refs, role="system")


def resolve_conflict(record: ConflictRecord, policy: ConflictPolicy, history: History):
    """Chosen / Unresolved / Escalated. Never touches the history itself."""
    mode = policy.mode
    if mode is ConflictMode.CONSERVATIVE:
        return Unresolved("conservative policy leaves parallel maxima undefined")
    if mode is ConflictMode.ESCALATE:
        return Escalated(conflict_event(record, history, policy.conflict_model))
    picked = choose(record.candidates, history, mode)
    if picked is None:
        return Unresolved("a candidate carries no ts_sys")
    return Chosen(picked)
