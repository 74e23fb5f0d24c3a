"""AST of the guard formula language and its canonical printer.

Two strata: event formulas (base predicates under and/or/not) are evaluated
against a single event; history formulas combine literals (exists, count,
exists_max, order) and witness comparisons with and/or. Negation only ever
sits directly on a base predicate.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Iterator, Union

from .events import Key, Scalar

OPS = ("=", "!=", "<", "<=", ">", ">=")
META_ATTRS = ("context", "actor", "role")
# pseudo-paths readable from a witness event in comparisons and emit templates
WITNESS_ATTRS = ("@id", "@context", "@actor", "@role", "@model")


@dataclass(frozen=True)
class TypeEq:
    name: str


@dataclass(frozen=True)
class MetaEq:
    attr: str
    value: str


@dataclass(frozen=True)
class FieldCmp:
    path: str
    op: str
    value: Scalar


@dataclass(frozen=True)
class Has:
    path: str


@dataclass(frozen=True)
class Not:
    operand: "Base"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Exists:
    formula: "Formula"
    name: str | None = None


@dataclass(frozen=True)
class CountGE:
    formula: "Formula"
    k: int


@dataclass(frozen=True)
class ExistsMax:
    formula: "Formula"
    actor: str
    key: Key
    name: str | None = None


@dataclass(frozen=True)
class Order:
    before: "Formula"
    after: "Formula"


@dataclass(frozen=True)
class Ref:
    binding: str
    path: str


@dataclass(frozen=True)
class WitnessCmp:
    left: Ref
    op: str
    right: Union[Ref, Scalar]


Base = Union[TypeEq, MetaEq, FieldCmp, Has]
BASE_TYPES = (TypeEq, MetaEq, FieldCmp, Has)
LITERAL_TYPES = (Exists, CountGE, ExistsMax, Order)
BINDING_LITERALS = (Exists, ExistsMax)
Formula = Union[TypeEq, MetaEq, FieldCmp, Has, Not, And, Or, Exists, CountGE, ExistsMax, Order, WitnessCmp]


def walk(node) -> Iterator:
    """Pre-order traversal, descending into literal bodies."""
    yield node
    if isinstance(node, Not):
        yield from walk(node.operand)
    elif isinstance(node, (And, Or)):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, (Exists, CountGE, ExistsMax)):
        yield from walk(node.formula)
    elif isinstance(node, Order):
        yield from walk(node.before)
        yield from walk(node.after)


def literals(node) -> list:
    return [n for n in walk(node) if isinstance(n, LITERAL_TYPES)]


def is_history_formula(node) -> bool:
    return any(isinstance(n, LITERAL_TYPES + (WitnessCmp,)) for n in walk(node))


def conjuncts(node) -> list:
    if isinstance(node, And):
        return conjuncts(node.left) + conjuncts(node.right)
    return [node]


def disjuncts(node) -> list:
    if isinstance(node, Or):
        return disjuncts(node.left) + disjuncts(node.right)
    return [node]


def and_all(nodes):
    it = iter(nodes)
    out = next(it)
    for n in it:
        out = And(out, n)
    return out


def binding_names(node) -> list[str]:
    return [n.name for n in walk(node) if isinstance(n, BINDING_LITERALS) and n.name]


# -- printing ---------------------------------------------------------------

def quote(text: str) -> str:
    return "'" + text.replace("\\", "\\\\").replace("'", "\\'") + "'"


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, Decimal)):
        return str(value)
    if isinstance(value, Ref):
        return f"{value.binding}.{value.path}"
    return quote(value)


def to_text(node) -> str:
    """Canonical ASCII rendering; ``parse(to_text(f)) == f``."""
    if isinstance(node, TypeEq):
        return f"type = {quote(node.name)}"
    if isinstance(node, MetaEq):
        return f"{node.attr} = {quote(node.value)}"
    if isinstance(node, FieldCmp):
        return f"field({quote(node.path)}) {node.op} {format_value(node.value)}"
    if isinstance(node, Has):
        return f"has({quote(node.path)})"
    if isinstance(node, Not):
        return f"not {to_text(node.operand)}"
    if isinstance(node, And):
        left = to_text(node.left)
        if isinstance(node.left, Or):
            left = f"({left})"
        right = to_text(node.right)
        if isinstance(node.right, (And, Or)):
            right = f"({right})"
        return f"{left} and {right}"
    if isinstance(node, Or):
        right = to_text(node.right)
        if isinstance(node.right, Or):
            right = f"({right})"
        return f"{to_text(node.left)} or {right}"
    if isinstance(node, Exists):
        label = f" {node.name}:" if node.name else ""
        return f"exists{label} ({to_text(node.formula)})"
    if isinstance(node, CountGE):
        return f"count({to_text(node.formula)}) >= {node.k}"
    if isinstance(node, ExistsMax):
        label = f" {node.name}:" if node.name else ""
        return (
            f"exists_max{label} ({to_text(node.formula)}; actor={quote(node.actor)}; "
            f"key=({quote(node.key.model_id)},{quote(node.key.context)}))"
        )
    if isinstance(node, Order):
        return f"order ({to_text(node.before)}) before ({to_text(node.after)})"
    if isinstance(node, WitnessCmp):
        return f"{format_value(node.left)} {node.op} {format_value(node.right)}"
    raise TypeError(f"not a formula node: {node!r}")


def substitute(node, mapping: dict[str, str]):
    """Replace placeholder strings such as ``$base`` wherever a string value appears."""
    if not mapping:
        return node

    def s(v):
        return mapping.get(v, v) if isinstance(v, str) else v

    if isinstance(node, TypeEq):
        return TypeEq(s(node.name))
    if isinstance(node, MetaEq):
        return MetaEq(node.attr, s(node.value))
    if isinstance(node, FieldCmp):
        return FieldCmp(node.path, node.op, s(node.value))
    if isinstance(node, Has):
        return node
    if isinstance(node, Not):
        return Not(substitute(node.operand, mapping))
    if isinstance(node, (And, Or)):
        return type(node)(substitute(node.left, mapping), substitute(node.right, mapping))
    if isinstance(node, Exists):
        return Exists(substitute(node.formula, mapping), node.name)
    if isinstance(node, CountGE):
        return CountGE(substitute(node.formula, mapping), node.k)
    if isinstance(node, ExistsMax):
        return ExistsMax(
            substitute(node.formula, mapping), s(node.actor),
            Key(s(node.key.model_id), s(node.key.context)), node.name,
        )
    if isinstance(node, Order):
        return Order(substitute(node.before, mapping), substitute(node.after, mapping))
    if isinstance(node, WitnessCmp):
        right = node.right if isinstance(node.right, Ref) else s(node.right)
        return WitnessCmp(node.left, node.op, right)
    raise TypeError(f"not a formula node: {node!r}")
