"""Two worked scenarios with embedded expected traces.

``payment`` is a two-guard reaction chain (payment -> limit_ok -> executed);
``fence`` walks a Concept creation, an inspection and two colour changes by a
painter through admission. Both are used by ``causalflow demo`` and by the
test suite.

In the payment chain the link payment -> executed is a guard witness, so it is
tagged ``explicit``: auto_chain only links events of the same actor and key,
and ``executed`` shares neither with ``payment``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .events import Event, History, Origin
from .executor import RunResult, parse_guards, run_to_fixpoint, submit
from .models import ModelRegistry, parse_models
from .policy import CONSERVATIVE, ConflictPolicy, lww_value
from .store import Workspace

PAYMENT_MODELS = """\
model payment {
  type: Attribute;
  schema { amount: integer required; client: string required };
  permission clerk
}
model limit_ok {
  type: Attribute;
  schema { client: string required };
  permission system
}
model executed {
  type: Attribute;
  schema { client: string required };
  permission system
}
"""

PAYMENT_GUARDS = """\
guard CheckLimit {
  when: exists p: (type = 'payment');
  emit { model: limit_ok; actor: System; context: $p; payload { client = $p.client } }
}
guard ExecutePayment {
  when: exists p: (type = 'payment') and exists l: (type = 'limit_ok') and l.client = p.client;
  emit { model: executed; actor: System; context: $p; payload { client = $p.client } }
}
"""

FENCE_MODELS = """\
model M_Fence {
  type: Concept;
  schema { label: string optional };
  permission owner
}
model M_Inspection {
  type: Attribute;
  schema { result: enum(ok, failed) required };
  permission inspector
}
model M_Color {
  type: Attribute;
  schema { color: enum(red, blue, green) required };
  permission painter;
  condition: exists(type = 'M_Inspection' and context = '$base');
  auto_chain: on
}
"""

FENCE = "fence#123"

EXPECTED_PAYMENT_TRACE = [
    "H0: e1 payment(amount=950, client='A') refs=[]",
    "step 1: e2 limit_ok(client='A') refs=[e1:explicit]",
    "step 2: e3 executed(client='A') refs=[e1:explicit, e2:explicit]",
    "final hb: e1->e2 e1->e3 e2->e3",
    "step 3: fixpoint",
]

EXPECTED_FENCE_TRACE = [
    "fence#123 M_Fence by owner refs=[]",
    "e_inspection M_Inspection(result='ok') by inspector refs=[fence#123:base]",
    "e_red M_Color(color='red') by painter refs=[e_inspection:explicit, fence#123:base]",
    "e_green M_Color(color='green') by painter refs=[e_inspection:explicit, e_red:auto_chain, fence#123:base]",
    "hb: e_inspection->e_green e_inspection->e_red e_red->e_green "
    "fence#123->e_green fence#123->e_inspection fence#123->e_red",
    "lww(painter, M_Color,fence#123) = green",
]


@dataclass
class ScenarioRun:
    history: History
    registry: ModelRegistry
    names: dict[str, str] = field(default_factory=dict)  # label -> event id
    run: RunResult | None = None

    def label(self, event_id: str) -> str:
        for name, eid in self.names.items():
            if eid == event_id:
                return name
        return event_id[:12]

    def id(self, label: str) -> str:
        return self.names[label]


def _payload_text(e: Event) -> str:
    return ", ".join(f"{k}={v!r}" if isinstance(v, str) else f"{k}={v}" for k, v in sorted(e.payload.items()))


def _refs_text(s: ScenarioRun, e: Event) -> str:
    parts = []
    for r in e.refs:
        for tag in sorted(t.value for t in e.ref_origins[r]):
            parts.append(f"{s.label(r)}:{tag}")
    return "[" + ", ".join(sorted(parts)) + "]"


def _hb_text(s: ScenarioRun, ids) -> str:
    g = s.history.graph
    pairs = sorted(f"{s.label(a)}->{s.label(b)}" for a in ids for b in ids if a != b and g.hb(a, b))
    return "hb: " + " ".join(pairs)


def payment(policy: ConflictPolicy = CONSERVATIVE, max_steps: int = 10, **run_kw) -> ScenarioRun:
    registry = ModelRegistry(parse_models(PAYMENT_MODELS))
    guards = parse_guards(PAYMENT_GUARDS)
    history = registry.bind(History())
    e1 = submit(history, registry, "payment", "bank", "A", {"amount": 950, "client": "A"}, role="clerk")
    s = ScenarioRun(history, registry, {"e1": e1.id})
    s.run = run_to_fixpoint(history, guards, registry, policy, max_steps, **run_kw)
    for i, res in enumerate(s.run.steps, 2):
        for e in res.batch:
            s.names[f"e{i}"] = e.id
    return s


def payment_trace(s: ScenarioRun) -> list[str]:
    h = s.history
    e1 = h[s.id("e1")]
    lines = [f"H0: e1 {e1.model_id}({_payload_text(e1)}) refs={_refs_text(s, e1)}"]
    for n, res in enumerate(s.run.steps, 1):
        for e in res.batch:
            lines.append(f"step {n}: {s.label(e.id)} {e.model_id}({_payload_text(e)}) refs={_refs_text(s, e)}")
    lines.append("final " + _hb_text(s, h.ids()))
    lines.append(f"step {len(s.run.steps)}: fixpoint")
    return lines


def fence(policy: ConflictPolicy = CONSERVATIVE) -> ScenarioRun:
    registry = ModelRegistry(parse_models(FENCE_MODELS))
    h = registry.bind(History())
    s = ScenarioRun(h, registry)
    s.names[FENCE] = submit(h, registry, "M_Fence", "owner", FENCE, {}, role="owner", policy=policy).id
    s.names["e_inspection"] = submit(
        h, registry, "M_Inspection", "inspector", FENCE, {"result": "ok"}, role="inspector", policy=policy
    ).id
    for colour in ("red", "green"):
        s.names[f"e_{colour}"] = submit(
            h, registry, "M_Color", "painter", FENCE, {"color": colour}, role="painter", policy=policy
        ).id
    return s


def fence_trace(s: ScenarioRun) -> list[str]:
    lines = []
    for e in s.history:
        body = f"({_payload_text(e)})" if e.payload else ""
        lines.append(f"{s.label(e.id)} {e.model_id}{body} by {e.actor} refs={_refs_text(s, e)}")
    lines.append(_hb_text(s, s.history.ids()))
    reading = lww_value(s.history, "painter", ("M_Color", FENCE))
    value = reading.payload["color"] if reading.status == "value" else reading.status
    lines.append(f"lww(painter, M_Color,{FENCE}) = {value}")
    return lines


def refs_with_origins(e: Event) -> dict[str, set[Origin]]:
    return {r: set(tags) for r, tags in e.ref_origins.items()}


# -- the same scenarios inside a persistent workspace ---------------------------------

def payment_in(ws: Workspace, max_steps: int = 10) -> ScenarioRun:
    """Payment chain with models and guards stored as definition events."""
    ws.add_models(PAYMENT_MODELS)
    ws.add_guards(PAYMENT_GUARDS)
    e1 = ws.submit("payment", "bank", "A", {"amount": 950, "client": "A"}, role="clerk")
    s = ScenarioRun(ws.history, ws.models, {"e1": e1.id})
    s.run = ws.run(max_steps)
    for i, res in enumerate(s.run.steps, 2):
        for e in res.batch:
            s.names[f"e{i}"] = e.id
    return s


def fence_in(ws: Workspace) -> ScenarioRun:
    ws.add_models(FENCE_MODELS)
    s = ScenarioRun(ws.history, ws.models)
    s.names[FENCE] = ws.submit("M_Fence", "owner", FENCE, {}, role="owner").id
    s.names["e_inspection"] = ws.submit("M_Inspection", "inspector", FENCE, {"result": "ok"}, role="inspector").id
    for colour in ("red", "green"):
        s.names[f"e_{colour}"] = ws.submit("M_Color", "painter", FENCE, {"color": colour}, role="painter").id
    return s
