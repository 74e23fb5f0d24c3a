"""Evaluation of formulas: ``matches`` on single events, three-valued
evaluation of history formulas with witness environments."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Iterable, Mapping

from .errors import WitnessLimitExceeded
from .events import Event, History, Key
from .formula import (
    And, CountGE, Exists, ExistsMax, FieldCmp, Has, MetaEq, Not, Or, Order, Ref,
    TypeEq, WitnessCmp, conjuncts, substitute, walk,
)
from .policy import CONSERVATIVE, ConflictPolicy, ConflictRecord, choose

DEFAULT_WITNESS_LIMIT = 10_000


class Truth(str, Enum):
    TRUE = "True"
    FALSE = "False"
    UNDEFINED = "Undefined"


@dataclass
class EvalResult:
    truth: Truth
    envs: list[dict[str, str]] = field(default_factory=list)
    conflicts: list[ConflictRecord] = field(default_factory=list)

    @property
    def is_true(self) -> bool:
        return self.truth is Truth.TRUE

    @property
    def bindings(self) -> dict[str, set[str]]:
        """binding -> every event id it takes across the witness environments."""
        out: dict[str, set[str]] = {}
        for env in self.envs:
            for name, eid in env.items():
                out.setdefault(name, set()).add(eid)
        return out


# -- single events ------------------------------------------------------------

def _numeric(v) -> bool:
    return isinstance(v, (int, Decimal)) and not isinstance(v, bool)


def compare(left, op: str, right) -> bool:
    """Typed comparison; values of different kinds never compare (result False)."""
    if left is None or right is None:
        return False
    if _numeric(left) and _numeric(right):
        pass
    elif type(left) is not type(right):
        return False
    elif isinstance(left, bool) and op not in ("=", "!="):
        return False
    if op == "=":
        return left == right
    if op == "!=":
        return left != right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    raise ValueError(f"unknown operator {op!r}")


def event_attr(e: Event, path: str):
    if path == "@id":
        return e.id
    if path == "@context":
        return e.context
    if path == "@actor":
        return e.actor
    if path == "@role":
        return e.role
    if path == "@model":
        return e.model_id
    return e.payload.get(path)


def matches(e: Event, f) -> bool:
    if isinstance(f, TypeEq):
        return e.type == f.name
    if isinstance(f, MetaEq):
        return getattr(e, f.attr) == f.value
    if isinstance(f, FieldCmp):
        return f.path in e.payload and compare(e.payload[f.path], f.op, f.value)
    if isinstance(f, Has):
        return f.path in e.payload
    if isinstance(f, Not):
        return not matches(e, f.operand)
    if isinstance(f, And):
        return matches(e, f.left) and matches(e, f.right)
    if isinstance(f, Or):
        return matches(e, f.left) or matches(e, f.right)
    raise TypeError(f"{type(f).__name__} is not an event formula")


def matching(history: History | Iterable[Event], f) -> list[Event]:
    return [e for e in history if matches(e, f)]


def pick_witness(history: History, ids: Iterable[str]) -> str:
    """Deterministic single witness: smallest id among the causally-first candidates.

    Preferring hb-minimal events keeps the choice stable while the history
    grows with events that descend from the current candidates.
    """
    return min(history.graph.minima(ids))


# -- history formulas ---------------------------------------------------------

def binding_map(formula) -> dict[int, str]:
    """Binding name for each exists / exists_max node; unnamed ones get ``#<n>``."""
    names: dict[int, str] = {}
    n = 0
    for node in walk(formula):
        if isinstance(node, (Exists, ExistsMax)):
            names[id(node)] = node.name or f"#{n}"
            n += 1
    return names


class _Evaluator:
    def __init__(self, history: History, formula, policy: ConflictPolicy, limit: int):
        self.h = history
        self.policy = policy
        self.limit = limit
        self.names = binding_map(formula)
        self.conflicts: list[ConflictRecord] = []

    def run(self, node) -> tuple[Truth, list[dict[str, str]]]:
        if isinstance(node, Exists):
            return self.exists(node)
        if isinstance(node, ExistsMax):
            return self.exists_max(node)
        if isinstance(node, CountGE):
            ok = sum(1 for e in self.h if matches(e, node.formula)) >= node.k
            return (Truth.TRUE, [{}]) if ok else (Truth.FALSE, [])
        if isinstance(node, Order):
            return (Truth.TRUE, [{}]) if self.order(node.before, node.after) else (Truth.FALSE, [])
        if isinstance(node, And):
            return self.conjunction(conjuncts(node))
        if isinstance(node, Or):
            return self.disjunction(node)
        if isinstance(node, WitnessCmp):
            raise TypeError("witness comparison outside a conjunction")
        raise TypeError(f"{type(node).__name__} is not a history formula")

    def exists(self, node: Exists):
        found = [e.id for e in self.h if matches(e, node.formula)]
        if not found:
            return Truth.FALSE, []
        name = self.names[id(node)]
        if node.name:
            return Truth.TRUE, [{name: eid} for eid in found]
        return Truth.TRUE, [{name: pick_witness(self.h, found)}]

    def exists_max(self, node: ExistsMax):
        cell = [e.id for e in self.h.events_for(node.actor, node.key) if matches(e, node.formula)]
        if not cell:
            return Truth.FALSE, []
        top = self.h.graph.maxima(cell)
        if len(top) > 1:
            picked = choose(top, self.h, self.policy.mode)
            if picked is None:
                self.conflicts.append(ConflictRecord(node.key, node.actor, frozenset(top)))
                return Truth.UNDEFINED, []
            top = {picked}
        return Truth.TRUE, [{self.names[id(node)]: next(iter(top))}]

    def order(self, before, after) -> bool:
        firsts = {e.id for e in self.h if matches(e, before)}
        if not firsts:
            return False
        return any(self.h.graph.ancestors(e.id) & firsts for e in self.h if matches(e, after))

    def conjunction(self, parts):
        filters = [p for p in parts if isinstance(p, WitnessCmp)]
        undefined = False
        env_lists = []
        for p in parts:
            if isinstance(p, WitnessCmp):
                continue
            truth, envs = self.run(p)
            if truth is Truth.FALSE:
                return Truth.FALSE, []
            if truth is Truth.UNDEFINED:
                undefined = True
            else:
                env_lists.append(envs)
        if undefined:
            return Truth.UNDEFINED, []
        size = 1
        for envs in env_lists:
            size *= len(envs)
        if size > self.limit and not filters:
            raise WitnessLimitExceeded(f"{size} witness tuples exceed the limit of {self.limit}")
        out = []
        for combo in itertools.product(*env_lists):
            env: dict[str, str] = {}
            for part in combo:
                env.update(part)
            if all(self.witness_cmp(f, env) for f in filters):
                out.append(env)
                if len(out) > self.limit:
                    raise WitnessLimitExceeded(f"more than {self.limit} witness tuples")
        if not out:
            return Truth.FALSE, []
        return Truth.TRUE, out

    def disjunction(self, node: Or):
        lt, lenvs = self.run(node.left)
        rt, renvs = self.run(node.right)
        if Truth.TRUE in (lt, rt):
            return Truth.TRUE, lenvs + renvs
        if Truth.UNDEFINED in (lt, rt):
            return Truth.UNDEFINED, []
        return Truth.FALSE, []

    def operand(self, ref, env):
        if isinstance(ref, Ref):
            eid = env.get(ref.binding)
            if eid is None:
                return None
            return event_attr(self.h[eid], ref.path)
        return ref

    def witness_cmp(self, node: WitnessCmp, env) -> bool:
        return compare(self.operand(node.left, env), node.op, self.operand(node.right, env))


def evaluate(history: History, formula, policy: ConflictPolicy = CONSERVATIVE,
             substitutions: Mapping[str, str] | None = None,
             limit: int = DEFAULT_WITNESS_LIMIT) -> EvalResult:
    """Three-valued evaluation of a history formula.

    Undefined only comes from exists_max over a cell with parallel maxima
    (under the conservative or escalate policies). And/Or follow Kleene logic:
    False absorbs in a conjunction, True absorbs in a disjunction.
    """
    formula = substitute(formula, dict(substitutions or {}))
    ev = _Evaluator(history, formula, policy, limit)
    truth, envs = ev.run(formula)
    return EvalResult(truth, envs if truth is Truth.TRUE else [], ev.conflicts)


def eval_order(history: History, before, after) -> bool:
    return _Evaluator(history, Order(before, after), CONSERVATIVE, DEFAULT_WITNESS_LIMIT).order(before, after)


def exists_max(history: History, formula, actor: str, key, policy: ConflictPolicy = CONSERVATIVE) -> EvalResult:
    return evaluate(history, ExistsMax(formula, actor, Key(*key), "max"), policy)


def max_per_key(history: History, formula, key, policy: ConflictPolicy = CONSERVATIVE) -> EvalResult:
    """Causally-last matching event for a key across all actors.

    Each actor's exists_max winner is found first (with the same policy); if
    the winners have a single hb-maximum it is returned, otherwise the policy
    decides: conservative -> Undefined, by-id -> smallest id, by-ts -> largest
    ts_sys (Undefined when one is missing).
    """
    key = Key(*key)
    actors = sorted({e.actor for e in history.events_for_key(key)})
    winners: dict[str, str] = {}
    conflicts: list[ConflictRecord] = []
    undefined = False
    for actor in actors:
        res = exists_max(history, formula, actor, key, policy)
        conflicts += res.conflicts
        if res.truth is Truth.UNDEFINED:
            undefined = True
        elif res.is_true:
            winners[actor] = res.envs[0]["max"]
    if undefined:
        return EvalResult(Truth.UNDEFINED, [], conflicts)
    if not winners:
        return EvalResult(Truth.FALSE, [], conflicts)
    top = history.graph.maxima(winners.values())
    if len(top) > 1:
        picked = choose(top, history, policy.mode)
        if picked is None:
            return EvalResult(Truth.UNDEFINED, [], conflicts)
        top = {picked}
    return EvalResult(Truth.TRUE, [{"max": next(iter(top))}], conflicts)
