"""JSON Lines persistence, workspaces and the invariant checker.

One event per line::

    {"id": "...", "model": "payment", "actor": "bank", "role": null, "context": "A",
     "payload": {"amount": 950}, "refs": [{"id": "...", "origin": "explicit+base"}], "ts_sys": 0}

Decimals are written as bare JSON numbers and read back with
``parse_float=Decimal`` so no precision is lost. Model and guard definitions
live in the same log as ``__model__`` / ``__guard__`` events whose payload is
the definition text; loading replays every line through admission and rebuilds
the registries from those events.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable

from .causality import CausalGraph
from .errors import (
    CorruptRecord, DefinitionError, ForwardRef, HistoryError, IdMismatch,
    InvalidEvent,
)
from .events import Event, History, Key, Origin
from .executor import Guard, RunResult, ingest, parse_guards, prepare, run_to_fixpoint
from .models import GUARD_META, MODEL_META, ModelRegistry, admit_incoming, parse_models
from .policy import CONSERVATIVE, ConflictPolicy

LOG_NAME = "log.jsonl"
CHECK_SNAPSHOT = ".check_snapshot"
ADMIN_ACTOR = "admin"

_FIELDS = ("id", "model", "actor", "role", "context", "payload", "refs", "ts_sys")
_ORIGIN_ORDER = [Origin.EXPLICIT, Origin.AUTO_CHAIN, Origin.BASE]


# -- records ------------------------------------------------------------------------

def _json_value(v) -> str:
    if isinstance(v, Decimal):
        return str(v)
    return json.dumps(v, ensure_ascii=False)


def encode_record(e: Event) -> str:
    payload = "{" + ",".join(
        f"{json.dumps(p, ensure_ascii=False)}:{_json_value(e.payload[p])}" for p in sorted(e.payload)
    ) + "}"
    refs = [
        {"id": r, "origin": "+".join(o.value for o in _ORIGIN_ORDER if o in e.ref_origins[r])}
        for r in sorted(e.refs)
    ]
    head = {"id": e.id, "model": e.model_id, "actor": e.actor, "role": e.role, "context": e.context}
    head_text = json.dumps(head, ensure_ascii=False)[:-1]
    tail = json.dumps({"refs": refs, "ts_sys": e.ts_sys}, ensure_ascii=False)[1:]
    return f'{head_text}, "payload": {payload}, {tail}'


def decode_record(line: str, lineno: int | None = None) -> Event:
    """Parse one log line; the id is taken as stored (``append`` re-verifies it)."""
    try:
        rec = json.loads(line, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise CorruptRecord(f"not valid JSON: {exc.msg}", line=lineno) from None
    if not isinstance(rec, dict):
        raise CorruptRecord("record is not a JSON object", line=lineno)
    missing = [f for f in _FIELDS if f not in rec]
    if missing:
        raise CorruptRecord(f"missing field(s) {', '.join(missing)}", line=lineno)
    try:
        refs = {}
        for item in rec["refs"]:
            refs[item["id"]] = frozenset(Origin(o) for o in item["origin"].split("+"))
        if not isinstance(rec["payload"], dict):
            raise TypeError("payload must be an object")
        return Event(
            rec["id"], rec["model"], rec["actor"], rec["context"], rec["payload"],
            frozenset(refs), rec["role"], refs, rec["ts_sys"],
        )
    except HistoryError as exc:
        raise CorruptRecord(str(exc), exc.event_id, lineno) from None
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise CorruptRecord(f"malformed record: {exc}", line=lineno) from None


def save(history: History | Iterable[Event], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in history:
            fh.write(encode_record(e) + "\n")


def read_records(path: str | Path) -> list[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        return [(i, line) for i, line in enumerate(fh, 1) if line.strip()]


# -- workspace ----------------------------------------------------------------------

@dataclass
class Workspace:
    log_path: Path | None = None
    models: ModelRegistry = field(default_factory=ModelRegistry)
    guards: dict[str, Guard] = field(default_factory=dict)
    policy: ConflictPolicy = CONSERVATIVE
    history: History = field(default_factory=History)
    persisted: int = 0

    def __post_init__(self) -> None:
        if self.log_path is not None:
            self.log_path = Path(self.log_path)
        self.models.bind(self.history)

    @classmethod
    def init(cls, root: str | Path) -> "Workspace":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        log = root / LOG_NAME
        if not log.exists():
            log.touch()
        return cls(log)

    @classmethod
    def open(cls, root: str | Path, policy: ConflictPolicy = CONSERVATIVE) -> "Workspace":
        root = Path(root)
        log = root / LOG_NAME if root.is_dir() else root
        if not log.exists():
            raise FileNotFoundError(f"no workspace log at {log} (run 'init' first)")
        return load(log, policy)

    # registry events ----------------------------------------------------------
    def _register(self, e: Event) -> None:
        if e.model_id == MODEL_META:
            for m in parse_models(e.payload["definition"]):
                self.models.add(m)
        elif e.model_id == GUARD_META:
            for g in parse_guards(e.payload["definition"]):
                if g.id in self.guards:
                    raise DefinitionError(f"guard {g.id!r} is already registered")
                self.guards[g.id] = g

    def _definition_events(self, meta: str, blocks: list, actor: str) -> list[Event]:
        events = []
        for item in blocks:
            prior = self.history.events_for(actor, Key(meta, item.id))
            refs = {prior[-1].id: {Origin.AUTO_CHAIN}} if prior else {}
            events.append(Event.create(meta, actor, item.id, {"definition": item.source}, refs, role="admin"))
        return events

    def add_models(self, text: str, actor: str = ADMIN_ACTOR) -> list:
        parsed = parse_models(text)
        for m in parsed:
            if m.id in self.models:
                raise DefinitionError(f"model {m.id!r} is already registered")
        for e in self._definition_events(MODEL_META, parsed, actor):
            self.append(e)
        return parsed

    def add_guards(self, text: str, actor: str = ADMIN_ACTOR) -> list[Guard]:
        parsed = parse_guards(text)
        for g in parsed:
            if g.id in self.guards:
                raise DefinitionError(f"guard {g.id!r} is already registered")
        for e in self._definition_events(GUARD_META, parsed, actor):
            self.append(e)
        return parsed

    # events -----------------------------------------------------------------------
    def append(self, e: Event) -> Event:
        """Admit, append, register definitions and persist."""
        ingest(self.history, self.models, e, self.policy)
        self._register(e)
        self.flush()
        return self.history[e.id]

    def submit(self, model_id: str, actor: str, context: str, payload=None, role: str | None = None,
               extra_refs: Iterable[str] = ()) -> Event:
        e = prepare(self.history, self.models, model_id, actor, context, payload, role, extra_refs, self.policy)
        return self.append(e)

    def run(self, max_steps: int = 100, **kw) -> RunResult:
        try:
            return run_to_fixpoint(self.history, self.guards.values(), self.models, self.policy, max_steps, **kw)
        finally:
            self.flush()

    def flush(self) -> None:
        new = self.history.events[self.persisted:]
        if not new or self.log_path is None:
            return
        with open(self.log_path, "a", encoding="utf-8") as fh:
            for e in new:
                fh.write(encode_record(e) + "\n")
        self.persisted = len(self.history)


def replay(records: Iterable[tuple[int, str]], log_path: str | Path = LOG_NAME,
           policy: ConflictPolicy = CONSERVATIVE) -> Workspace:
    ws = Workspace(Path(log_path), policy=policy)
    for lineno, line in records:
        e = decode_record(line, lineno)
        try:
            if e.content_id() != e.id:
                raise IdMismatch("stored id does not match content digest", e.id, lineno)
            if e.id in ws.history:
                raise CorruptRecord("duplicate record", e.id, lineno)
            missing = sorted(r for r in e.refs if r not in ws.history)
            if missing:
                raise ForwardRef(f"refs name absent events: {', '.join(m[:12] for m in missing)}", e.id, lineno)
            report = admit_incoming(e, ws.models, ws.history, policy)
            if not report.admitted:
                raise CorruptRecord(f"inadmissible against its prefix: {report.verdict} {report.reason}", e.id, lineno)
            ws.history.append(e)
            ws._register(e)
        except HistoryError as exc:
            if exc.line is None:
                exc.line = lineno
            raise
        except DefinitionError as exc:
            raise CorruptRecord(f"bad definition event: {exc}", e.id, lineno) from None
    ws.persisted = len(ws.history)
    return ws


def load(log_path: str | Path, policy: ConflictPolicy = CONSERVATIVE) -> Workspace:
    """Replay a log through append and admission, rebuilding the registries."""
    return replay(read_records(log_path), log_path, policy)


# -- invariant checker ----------------------------------------------------------------

@dataclass
class CheckReport:
    i1_ok: bool = True
    i2_ok: bool = True
    i3_ok: bool = True
    w1_ok: bool = True
    w2_ok: bool = True
    w3_ok: bool = True
    ids_ok: bool = True
    violations: list[tuple[str, tuple[str, ...]]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def flag(self, name: str, *ids: str) -> None:
        attr = f"{name}_ok"
        if hasattr(self, attr):
            setattr(self, attr, False)
        self.violations.append((name, tuple(ids)))

    def lines(self) -> list[str]:
        out = [
            f"{name.upper()}: {'ok' if getattr(self, name + '_ok') else 'VIOLATED'}"
            for name in ("i1", "i2", "i3", "w1", "w2", "w3", "ids")
        ]
        for name, ids in self.violations:
            out.append(f"violation {name}: {' '.join(ids)}")
        return out


def check_records(events: list[Event], previous_ids: list[str] | None = None) -> CheckReport:
    """Check raw records without trusting that they were appended correctly."""
    report = CheckReport()
    ids = [e.id for e in events]
    if previous_ids is not None and ids[:len(previous_ids)] != list(previous_ids):
        gone = [i for i in previous_ids if i not in set(ids)]
        report.flag("i1", *(gone or previous_ids[:1]))
    seen: set[str] = set()
    for e in events:
        if e.content_id() != e.id:
            report.flag("ids", e.id)
        ahead = sorted(r for r in e.refs if r not in seen)
        if ahead:
            report.flag("w1", e.id, *ahead)
        seen.add(e.id)
    graph = CausalGraph()
    for e in events:
        graph.add(e.id, e.refs)
    cycle = graph.find_cycle()
    if cycle is not None:
        report.i2_ok = False
        report.flag("w2", *dict.fromkeys(cycle))
    known = set(ids)
    for e in events:
        cone = graph.ancestors(e.id)
        if e.id in cone or not cone <= known:
            report.flag("i3", e.id)
    if cycle is None:
        cells: dict[tuple[str, Key], list[str]] = {}
        for e in events:
            cells.setdefault((e.actor, e.key), []).append(e.id)
        for (actor, key), members in cells.items():
            if not graph.is_chain(members):
                top = sorted(graph.maxima(members))
                report.flag("w3", f"{actor}@{key}", *top)
    return report


def check(log_path: str | Path, *, snapshot: bool = True) -> CheckReport:
    """Run the checker over a log file.

    I1 compares the current log against the id list stored by the previous
    check (``.check_snapshot`` next to the log); the snapshot is refreshed
    only when the log passes.
    """
    log_path = Path(log_path)
    events: list[Event] = []
    report = CheckReport()
    for lineno, line in read_records(log_path):
        try:
            events.append(decode_record(line, lineno))
        except (CorruptRecord, InvalidEvent) as exc:
            report.flag("record", f"line {lineno}: {exc}")
    snap = log_path.parent / CHECK_SNAPSHOT
    previous = json.loads(snap.read_text()) if snap.exists() else None
    sub = check_records(events, previous)
    sub.violations = report.violations + sub.violations
    if snapshot and sub.ok:
        snap.write_text(json.dumps([e.id for e in events]))
    return sub

