"""Reactive guards and the snapshot -> batch -> fixpoint loop.

Each step evaluates every guard on a frozen snapshot of the history, builds
the events their emit templates describe, and appends them in a canonical
order (guard id, then sorted witness tuple). Refs of a new event are the union
of three sources: explicit (guard witnesses and the emitted model's condition
witnesses), auto_chain (the causally-last event of the same actor and key)
and base (the creation event of the context).

A guard is saturated for a witness tuple once the history already holds an
event with the same content and the same non-auto_chain refs; re-emitting it
would only differ in its chain predecessor.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .causality import cell_maximum
from .definitions import key_value, parse_blocks, split_top, sub_block
from .errors import (
    AdmissionRejected, BrokenChain, DefinitionError, FormulaError, StepLimitExceeded,
)
from .evaluate import DEFAULT_WITNESS_LIMIT, evaluate, event_attr
from .events import SYSTEM_ACTOR, Event, History, Key, Origin, Scalar
from .formula import WITNESS_ATTRS, binding_names, is_history_formula, to_text
from .models import (
    AdmissionReport, Clause, ModelRegistry, admit_incoming, check_condition,
)
from .parser import parse_history, tokenize
from .policy import CONSERVATIVE, ConflictMode, ConflictPolicy, conflict_event

DEFAULT_MAX_STEPS = 100


@dataclass(frozen=True)
class FromWitness:
    """``$name`` or ``$name.path`` in an emit template."""

    binding: str
    path: str | None = None

    def __str__(self) -> str:
        return f"${self.binding}" + (f".{self.path}" if self.path else "")


TemplateValue = Union[Scalar, FromWitness]


@dataclass(frozen=True)
class EmitTemplate:
    model_id: str
    context: Union[str, FromWitness]
    payload: Mapping[str, TemplateValue] = field(default_factory=dict)
    actor: Union[str, FromWitness] = SYSTEM_ACTOR
    role: str | None = "system"

    def bindings(self) -> set[str]:
        vals = [self.actor, self.context, *self.payload.values()]
        return {v.binding for v in vals if isinstance(v, FromWitness)}

    def instantiate(self, env: Mapping[str, str], history: History) -> tuple[str, str, dict]:
        def resolve(v, default_attr):
            if not isinstance(v, FromWitness):
                return v
            e = history[env[v.binding]]
            return event_attr(e, v.path or default_attr)

        actor = resolve(self.actor, "@actor")
        context = resolve(self.context, "@context")
        payload = {}
        for path, v in self.payload.items():
            value = resolve(v, "@id")
            if value is None:
                raise KeyError(f"{v} is missing on the witness event")
            payload[path] = value
        return actor, context, payload


@dataclass(frozen=True)
class Guard:
    id: str
    formula: object
    emit: EmitTemplate
    source: str | None = None

    def __post_init__(self) -> None:
        if not is_history_formula(self.formula):
            raise DefinitionError(f"guard {self.id}: 'when' must be a history formula")
        unknown = self.emit.bindings() - set(binding_names(self.formula))
        if unknown:
            raise DefinitionError(f"guard {self.id}: emit uses undeclared binding(s) {sorted(unknown)}")


# -- refs formation ---------------------------------------------------------------

def auto_chain_target(history: History, actor: str, key: Key | tuple[str, str]) -> str | None:
    """Causally-last event of the (actor, key) cell; raises BrokenChain on a fork."""
    return cell_maximum(history, actor, Key(*key))


def base_ref(history: History, context: str) -> str | None:
    return history.context_creators.get(context)


def form_refs(witnesses: Mapping[str, str] | Iterable[str], auto: str | None = None,
              base: Iterable[str] | str | None = ()) -> dict[str, set[Origin]]:
    """Union of explicit, auto_chain and base refs with every applicable origin tag."""
    if isinstance(witnesses, Mapping):
        witnesses = witnesses.values()
    if isinstance(base, str):
        base = [base]
    refs: dict[str, set[Origin]] = {}
    for w in witnesses:
        refs.setdefault(w, set()).add(Origin.EXPLICIT)
    if auto is not None:
        refs.setdefault(auto, set()).add(Origin.AUTO_CHAIN)
    for b in base or ():
        refs.setdefault(b, set()).add(Origin.BASE)
    return refs


def _with_auto(refs: Mapping[str, set[Origin]], auto: str | None) -> dict[str, set[Origin]]:
    out = {r: set(t) for r, t in refs.items()}
    if auto is not None:
        out.setdefault(auto, set()).add(Origin.AUTO_CHAIN)
    return out


# -- external submission ------------------------------------------------------------

def prepare(history: History, registry: ModelRegistry, model_id: str, actor: str, context: str,
            payload: Mapping | None = None, role: str | None = None, extra_refs: Iterable[str] = (),
            policy: ConflictPolicy = CONSERVATIVE) -> Event:
    """Build an event with engine-formed refs (condition witnesses, auto_chain, base)."""
    model = registry.get(model_id)
    explicit: dict[str, str] = {}
    auto = None
    if model is not None:
        cond = check_condition(model, history, context, policy)
        explicit = dict(cond.witnesses)
        if model.auto_chain:
            auto = auto_chain_target(history, actor, (model_id, context))
    refs = form_refs(list(explicit.values()) + list(extra_refs), auto, base_ref(history, context))
    return Event.create(model_id, actor, context, payload or {}, refs, role=role)


def ingest(history: History, registry: ModelRegistry, event: Event,
           policy: ConflictPolicy = CONSERVATIVE) -> AdmissionReport:
    """Admit a fully formed event and append it; raises AdmissionRejected."""
    report = admit_incoming(event, registry, history, policy)
    if not report.admitted:
        raise AdmissionRejected(report)
    history.append(event)
    return report


def submit(history: History, registry: ModelRegistry, model_id: str, actor: str, context: str,
           payload: Mapping | None = None, role: str | None = None, extra_refs: Iterable[str] = (),
           policy: ConflictPolicy = CONSERVATIVE) -> Event:
    event = prepare(history, registry, model_id, actor, context, payload, role, extra_refs, policy)
    ingest(history, registry, event, policy)
    return history[event.id]


# -- the step -----------------------------------------------------------------

@dataclass
class Rejection:
    guard: str
    reason: str
    clause: Clause | None = None


@dataclass
class StepResult:
    batch: list[Event] = field(default_factory=list)
    fired: dict[str, list[dict[str, str]]] = field(default_factory=dict)
    rejected: list[Rejection] = field(default_factory=list)
    conflicts: list = field(default_factory=list)

    @property
    def quiescent(self) -> bool:
        return not self.batch


@dataclass
class _Plan:
    guard: str
    env: dict[str, str]
    model_id: str
    actor: str
    role: str | None
    context: str
    payload: dict
    refs: dict[str, set[Origin]]
    auto_chain: bool

    def draft(self) -> Event:
        return Event.create(self.model_id, self.actor, self.context, self.payload, self.refs, role=self.role)


def _env_key(env: Mapping[str, str]) -> tuple:
    return tuple(sorted(env.items()))


def _plan_guard(guard: Guard, snapshot: History, registry: ModelRegistry, policy: ConflictPolicy,
                limit: int, rng: random.Random | None, result: StepResult) -> list[_Plan]:
    res = evaluate(snapshot, guard.formula, policy, limit=limit)
    result.conflicts.extend(res.conflicts)
    if not res.is_true:
        return []
    envs = list({_env_key(env): env for env in res.envs}.values())
    if rng is not None:
        rng.shuffle(envs)
    envs.sort(key=_env_key)
    plans = []
    for env in envs:
        try:
            actor, context, payload = guard.emit.instantiate(env, snapshot)
        except KeyError as exc:
            result.rejected.append(Rejection(guard.id, f"template: {exc}"))
            return []
        model = registry.get(guard.emit.model_id)
        explicit = list(env.values())
        if model is not None:
            cond = check_condition(model, snapshot, context, policy)
            explicit += list(cond.witnesses.values())
        refs = form_refs(explicit, None, base_ref(snapshot, context))
        plan = _Plan(guard.id, env, guard.emit.model_id, actor, guard.emit.role, context, payload,
                     refs, model.auto_chain if model is not None else True)
        draft = plan.draft()
        if draft.signature in snapshot.by_signature:
            continue  # saturated
        report = admit_incoming(draft, registry, snapshot, policy)
        if not report.admitted:
            # admit_Y: one inadmissible emission keeps the whole guard from firing
            result.rejected.append(Rejection(guard.id, report.reason, report.clause))
            return []
        plans.append(plan)
    return plans


def _append_planned(history: History, registry: ModelRegistry, policy: ConflictPolicy,
                    plan: _Plan, result: StepResult) -> Event | None:
    try:
        auto = auto_chain_target(history, plan.actor, (plan.model_id, plan.context)) if plan.auto_chain else None
    except BrokenChain as exc:
        result.rejected.append(Rejection(plan.guard, str(exc)))
        return None
    event = Event.create(plan.model_id, plan.actor, plan.context, plan.payload,
                         _with_auto(plan.refs, auto), role=plan.role)
    if event.signature in history.by_signature:
        return None
    report = admit_incoming(event, registry, history, policy)
    if not report.admitted:
        result.rejected.append(Rejection(plan.guard, report.reason, report.clause))
        return None
    history.append(event)
    appended = history[event.id]
    result.batch.append(appended)
    result.fired.setdefault(plan.guard, []).append(plan.env)
    return appended


def step(history: History, guards: Iterable[Guard], registry: ModelRegistry,
         policy: ConflictPolicy = CONSERVATIVE, *, limit: int = DEFAULT_WITNESS_LIMIT,
         rng: random.Random | None = None) -> StepResult:
    """One application of F: evaluate on the snapshot, append the batch in place."""
    guards = list(guards)
    if rng is not None:
        rng.shuffle(guards)
    ids = [g.id for g in guards]
    if len(set(ids)) != len(ids):
        raise DefinitionError("guard ids must be unique")
    result = StepResult()
    # guards only read the snapshot; the history is not touched until every plan exists
    plans: list[_Plan] = []
    for guard in sorted(guards, key=lambda g: g.id):
        plans += _plan_guard(guard, history, registry, policy, limit, rng, result)
    conflicts = sorted({(c.key, c.actor, tuple(sorted(c.candidates))): c for c in result.conflicts}.items())
    result.conflicts = [c for _, c in conflicts]
    for plan in plans:
        _append_planned(history, registry, policy, plan, result)
    if policy.mode is ConflictMode.ESCALATE:
        for record in result.conflicts:
            try:
                event = conflict_event(record, history, policy.conflict_model)
            except BrokenChain as exc:
                result.rejected.append(Rejection("<escalate>", str(exc)))
                continue
            if event.signature in history.by_signature:
                continue
            report = admit_incoming(event, registry, history, policy)
            if not report.admitted:
                result.rejected.append(Rejection("<escalate>", report.reason, report.clause))
                continue
            history.append(event)
            result.batch.append(history[event.id])
    return result


@dataclass
class RunResult:
    history: History
    steps: list[StepResult]

    @property
    def step_count(self) -> int:
        return len(self.steps)


def run_to_fixpoint(history: History, guards: Iterable[Guard], registry: ModelRegistry,
                    policy: ConflictPolicy = CONSERVATIVE, max_steps: int = DEFAULT_MAX_STEPS, *,
                    limit: int = DEFAULT_WITNESS_LIMIT, rng: random.Random | None = None,
                    on_step=None) -> RunResult:
    """Iterate ``step`` until a step appends nothing.

    The last entry of ``steps`` is the quiescent one, so the
    "fixpoint at step n" count is ``len(steps)``.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be positive")
    guards = list(guards)
    steps: list[StepResult] = []
    for _ in range(max_steps):
        res = step(history, guards, registry, policy, limit=limit, rng=rng)
        steps.append(res)
        if on_step is not None:
            on_step(res, history)
        if res.quiescent:
            return RunResult(history, steps)
    still = tuple(sorted(steps[-1].fired))
    raise StepLimitExceeded(
        f"no fixpoint after {max_steps} steps; still firing: {', '.join(still) or '<escalation>'}", still
    )


# -- guard definition files ----------------------------------------------------------

def _template_value(text: str, *, symbol: bool) -> TemplateValue:
    text = text.strip()
    if text.startswith("$"):
        name, _, path = text[1:].partition(".")
        if not name.isidentifier():
            raise DefinitionError(f"bad binding reference {text!r}")
        if path.startswith("@") and path not in WITNESS_ATTRS:
            raise DefinitionError(f"unknown witness attribute {path!r}")
        return FromWitness(name, path or None)
    try:
        tokens = tokenize(text)
    except FormulaError as exc:
        raise DefinitionError(f"bad value {text!r}: {exc}") from exc
    if len(tokens) != 2:
        raise DefinitionError(f"expected a single value, got {text!r}")
    tok = tokens[0]
    if tok.kind in ("string", "number"):
        return tok.value
    if tok.kind == "kw" and tok.value in ("true", "false") and not symbol:
        return tok.value == "true"
    if symbol:
        return text
    raise DefinitionError(f"payload constants must be quoted strings, numbers or booleans: {text!r}")


def parse_guard_block(name: str, body: str, raw: str | None = None) -> Guard:
    formula = None
    emit = None
    for item in split_top(body):
        emit_body = sub_block(item, "emit")
        if emit_body is not None:
            emit = _parse_emit(name, emit_body)
            continue
        key, value = key_value(item)
        if key == "when":
            try:
                formula = parse_history(value)
            except FormulaError as exc:
                raise DefinitionError(f"guard {name}: {exc}") from exc
        else:
            raise DefinitionError(f"unknown guard item {key!r} in {name}")
    if formula is None or emit is None:
        raise DefinitionError(f"guard {name} needs both 'when' and 'emit'")
    return Guard(name, formula, emit, raw)


def _parse_emit(name: str, body: str) -> EmitTemplate:
    spec: dict = {"payload": {}}
    for item in split_top(body):
        payload_body = sub_block(item, "payload")
        if payload_body is not None:
            for entry in split_top(payload_body, ";,"):
                path, sep, value = entry.partition("=")
                if not sep:
                    raise DefinitionError(f"guard {name}: payload entry {entry!r} needs '='")
                spec["payload"][path.strip()] = _template_value(value, symbol=False)
            continue
        key, value = key_value(item)
        if key in ("model", "actor", "context", "role"):
            val = _template_value(value, symbol=True)
            if key == "model" and not isinstance(val, str):
                raise DefinitionError(f"guard {name}: emit model must be a fixed id")
            if key == "role" and isinstance(val, FromWitness):
                raise DefinitionError(f"guard {name}: emit role must be fixed")
            spec[key] = val
        else:
            raise DefinitionError(f"guard {name}: unknown emit item {key!r}")
    if "model" not in spec or "context" not in spec:
        raise DefinitionError(f"guard {name}: emit needs model and context")
    return EmitTemplate(
        spec["model"], spec["context"], spec["payload"],
        spec.get("actor", SYSTEM_ACTOR), spec.get("role", "system"),
    )


def parse_guards(text: str) -> list[Guard]:
    return [parse_guard_block(name, body, raw) for name, body, raw in parse_blocks(text, "guard")]


def describe_guard(guard: Guard) -> str:
    return f"{guard.id}: when {to_text(guard.formula)} emit {guard.emit.model_id}"
