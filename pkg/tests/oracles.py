"""Independent reference implementations and random generators for tests.

Nothing here calls the engine's evaluator or graph code: closures come from
Floyd-Warshall over a boolean matrix and literals are checked by enumerating
events and pairs directly.
"""

from __future__ import annotations

import random
from decimal import Decimal

from causalflow.events import Event, History
from causalflow.formula import And, FieldCmp, Has, MetaEq, Not, Or, TypeEq
from causalflow.models import ModelRegistry, parse_models
from causalflow.executor import parse_guards

MODELS = ("a", "b", "c")
ACTORS = ("x", "y", "z")
CONTEXTS = ("k1", "k2")


# -- closure -------------------------------------------------------------------------

def floyd_warshall(nodes, edges) -> set[tuple[str, str]]:
    """Pairs (u, v) with a non-empty path u -> ... -> v."""
    nodes = list(nodes)
    idx = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    reach = [[False] * n for _ in range(n)]
    for u, v in edges:
        if u in idx and v in idx:
            reach[idx[u]][idx[v]] = True
    for k in range(n):
        rk = reach[k]
        for i in range(n):
            if reach[i][k]:
                ri = reach[i]
                for j in range(n):
                    if rk[j]:
                        ri[j] = True
    return {(nodes[i], nodes[j]) for i in range(n) for j in range(n) if reach[i][j]}


def ref_edges(events) -> set[tuple[str, str]]:
    return {(r, e.id) for e in events for r in e.refs}


# -- event formulas -----------------------------------------------------------------

def oracle_matches(e: Event, f) -> bool:
    kind = type(f)
    if kind is TypeEq:
        return e.model_id == f.name
    if kind is MetaEq:
        return {"context": e.context, "actor": e.actor, "role": e.role}[f.attr] == f.value
    if kind is Has:
        return f.path in dict(e.payload)
    if kind is FieldCmp:
        payload = dict(e.payload)
        if f.path not in payload:
            return False
        a, b = payload[f.path], f.value
        num = (int, Decimal)
        if isinstance(a, bool) or isinstance(b, bool):
            if type(a) is not type(b):
                return False
            return {"=": a == b, "!=": a != b}.get(f.op, False)
        if not (isinstance(a, num) and isinstance(b, num)) and type(a) is not type(b):
            return False
        return {
            "=": a == b, "!=": a != b, "<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b,
        }[f.op]
    if kind is Not:
        return not oracle_matches(e, f.operand)
    if kind is And:
        return oracle_matches(e, f.left) and oracle_matches(e, f.right)
    if kind is Or:
        return oracle_matches(e, f.left) or oracle_matches(e, f.right)
    raise TypeError(kind)


def random_base(rng: random.Random):
    roll = rng.random()
    if roll < 0.35:
        return TypeEq(rng.choice(MODELS))
    if roll < 0.7:
        return FieldCmp("v", rng.choice(["=", "!=", "<", "<=", ">", ">="]), rng.randint(0, 3))
    if roll < 0.8:
        return FieldCmp("s", rng.choice(["=", "!="]), rng.choice(["p", "q"]))
    if roll < 0.9:
        return Has(rng.choice(["v", "s", "w"]))
    return MetaEq(rng.choice(["actor", "context"]), rng.choice(ACTORS + CONTEXTS))


def random_event_formula(rng: random.Random, depth: int = 2):
    if depth == 0 or rng.random() < 0.4:
        base = random_base(rng)
        return Not(base) if rng.random() < 0.2 else base
    op = And if rng.random() < 0.5 else Or
    return op(random_event_formula(rng, depth - 1), random_event_formula(rng, depth - 1))


# -- histories ----------------------------------------------------------------------

def random_history(rng: random.Random, n: int, max_refs: int = 3) -> History:
    """Random DAG-shaped history; refs point only backwards, so W1' holds,
    but cells may fork (W3 is not enforced here)."""
    h = History()
    for _ in range(n):
        payload = {}
        if rng.random() < 0.85:
            payload["v"] = rng.randint(0, 3)
        if rng.random() < 0.5:
            payload["s"] = rng.choice(["p", "q"])
        ids = h.ids()
        refs = rng.sample(ids, k=min(len(ids), rng.randint(0, max_refs)))
        e = Event.create(rng.choice(MODELS), rng.choice(ACTORS), rng.choice(CONTEXTS), payload, refs)
        h.append(e)
    return h


def brute_maxima(ids, closure) -> set[str]:
    ids = set(ids)
    return {m for m in ids if not any((m, o) in closure for o in ids if o != m)}


# -- guard worlds ----------------------------------------------------------------------

WORLD_MODELS = 4


def world_registry(auto_chain: bool = True) -> ModelRegistry:
    flag = "on" if auto_chain else "off"
    text = "\n".join(
        f"model m{i} {{ type: Attribute; schema {{ v: integer required; src: string optional }}; "
        f"permission *; auto_chain: {flag} }}"
        for i in range(WORLD_MODELS)
    )
    return ModelRegistry(parse_models(text))


def random_guard_text(rng: random.Random, gid: str) -> str:
    """A guard from a lower model to a higher one, so every guard set terminates."""
    i = rng.randrange(WORLD_MODELS - 1)
    j = rng.randrange(i + 1, WORLD_MODELS)
    k = rng.randrange(i + 1)  # read only lower strata, or a guard can feed itself
    shape = rng.randrange(4)
    if shape == 0:
        when = f"exists x: (type = 'm{i}' and v >= {rng.randint(0, 2)})"
    elif shape == 1:
        when = f"exists x: (type = 'm{i}') and exists y: (type = 'm{k}') and x.v = y.v"
    elif shape == 2:
        when = f"exists x: (type = 'm{i}') and count(type = 'm{k}') >= {rng.randint(1, 3)}"
    else:
        actor = rng.choice(ACTORS)
        ctx = rng.choice(CONTEXTS)
        when = f"exists_max x: (type = 'm{i}'; actor = '{actor}'; key = ('m{i}', '{ctx}'))"
    actor = rng.choice(["System", "$x"])
    context = rng.choice(["$x", "k1", "k2"])
    payload = [rng.choice(["v = $x.v", f"v = {rng.randint(0, 3)}"])]
    if rng.random() < 0.6:
        payload.append("src = $x.@id")
    return (
        f"guard {gid} {{ when: {when}; emit {{ model: m{j}; actor: {actor}; context: {context}; "
        f"payload {{ {'; '.join(payload)} }} }} }}"
    )


def random_guards(rng: random.Random, n: int):
    return parse_guards("\n".join(random_guard_text(rng, f"g{n_}") for n_ in range(n)))


def random_submission(rng: random.Random):
    return (
        f"m{rng.randrange(WORLD_MODELS)}", rng.choice(ACTORS), rng.choice(CONTEXTS),
        {"v": rng.randint(0, 3)},
    )
