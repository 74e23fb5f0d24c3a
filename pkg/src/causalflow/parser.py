"""Recursive-descent parser for guard and condition formulas.

Accepts the canonical ASCII syntax produced by ``formula.to_text`` as well as
the looser notation used when writing guards by hand: ``AND``/``OR``/``NOT``
in any case, the symbols ``∧ ∨ ¬ ≤ ≥ ≠``, ``Exists(model, ctx)`` shorthand,
positional ``ExistsMax(φ, actor, key)`` arguments and bare payload field names
(``amount <= 1000``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal

from .errors import FormulaSyntaxError, StratificationError
from .events import Key
from .formula import (
    BASE_TYPES, BINDING_LITERALS, LITERAL_TYPES, META_ATTRS, WITNESS_ATTRS,
    And, CountGE, Exists, ExistsMax, FieldCmp, Has, MetaEq, Not, Or, Order, Ref,
    TypeEq, WitnessCmp, and_all, conjuncts, is_history_formula, walk,
)

_SEGMENT = r"[A-Za-z_][A-Za-z0-9_#]*"
_TOKEN_RE = re.compile(
    rf"""
    (?P<ws>\s+)
  | (?P<string>'(?:[^'\\]|\\.)*'|"(?:[^"\\]|\\.)*")
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<var>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<name>{_SEGMENT}(?:\.@?{_SEGMENT})*)
  | (?P<op><=|>=|!=|==|&&|\|\||[=<>!(),;:∧∨¬≤≥≠])
    """,
    re.VERBOSE,
)

_OP_ALIASES = {
    "==": "=", "≤": "<=", "≥": ">=", "≠": "!=",
    "∧": "and", "&&": "and", "∨": "or", "||": "or", "¬": "not", "!": "not",
}
_KEYWORDS = {
    "and", "or", "not", "exists", "exists_max", "existsmax", "existslast", "exists_last",
    "count", "order", "before", "type", "field", "has", "true", "false", *META_ATTRS,
}
_EXISTS_MAX = {"exists_max", "existsmax", "existslast", "exists_last"}
_CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class Token:
    kind: str  # string | number | var | name | kw | op | eof
    value: object
    pos: int


@dataclass(frozen=True)
class _Path:
    """Unresolved dotted name on the right-hand side of a comparison."""

    text: str


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        raw = m.group()
        if kind == "string":
            tokens.append(Token("string", re.sub(r"\\(.)", r"\1", raw[1:-1]), pos))
        elif kind == "number":
            value = Decimal(raw) if any(c in raw for c in ".eE") else int(raw)
            tokens.append(Token("number", value, pos))
        elif kind == "var":
            tokens.append(Token("var", raw, pos))
        elif kind == "name":
            low = raw.lower()
            if low in _KEYWORDS:
                tokens.append(Token("kw", low, pos))
            else:
                tokens.append(Token("name", raw, pos))
        elif kind == "op":
            op = _OP_ALIASES.get(raw, raw)
            tokens.append(Token("kw" if op in ("and", "or", "not") else "op", op, pos))
        pos = m.end()
    tokens.append(Token("eof", None, len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0

    # -- token helpers ------------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def at(self, kind: str, value=None) -> bool:
        t = self.tok
        return t.kind == kind and (value is None or t.value == value)

    def accept(self, kind: str, value=None) -> Token | None:
        if self.at(kind, value):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, kind: str, value=None, what: str | None = None) -> Token:
        t = self.accept(kind, value)
        if t is None:
            raise self.error(f"unexpected {self.describe(self.tok)}", (what or repr(value or kind),))
        return t

    @staticmethod
    def describe(t: Token) -> str:
        return "end of input" if t.kind == "eof" else repr(t.value)

    def error(self, message: str, expected: tuple[str, ...] = ()) -> FormulaSyntaxError:
        return FormulaSyntaxError(message, self.tok.pos, expected)

    # -- grammar ------------------------------------------------------------
    def formula(self):
        node = self.conjunction()
        while self.accept("kw", "or"):
            node = Or(node, self.conjunction())
        return node

    def conjunction(self):
        node = self.unary()
        while self.accept("kw", "and"):
            node = And(node, self.unary())
        return node

    def unary(self):
        if self.at("kw", "not"):
            start = self.tok.pos
            self.i += 1
            operand = self.unary()
            if isinstance(operand, LITERAL_TYPES):
                raise StratificationError(
                    "negation over a history literal is not stratified", start
                )
            if not isinstance(operand, BASE_TYPES):
                raise StratificationError(
                    "negation applies only to base predicates (type, field, has, context, actor, role)",
                    start,
                )
            return Not(operand)
        return self.primary()

    def primary(self):
        t = self.tok
        if self.accept("op", "("):
            node = self.formula()
            self.expect("op", ")")
            return node
        if t.kind == "kw":
            if t.value == "exists":
                return self.exists()
            if t.value in _EXISTS_MAX:
                return self.exists_max()
            if t.value == "count":
                return self.count()
            if t.value == "order":
                return self.order()
            if t.value == "type":
                self.i += 1
                return self.equality(lambda v: TypeEq(v))
            if t.value in META_ATTRS:
                self.i += 1
                return self.equality(lambda v, attr=t.value: MetaEq(attr, v))
            if t.value == "field":
                self.i += 1
                self.expect("op", "(")
                path = self.path()
                self.expect("op", ")")
                return self.comparison(path)
            if t.value == "has":
                self.i += 1
                self.expect("op", "(")
                path = self.path()
                self.expect("op", ")")
                return Has(path)
        if t.kind == "name":
            self.i += 1
            return self.comparison(t.value)
        raise self.error(
            f"unexpected {self.describe(t)}",
            ("'('", "exists", "exists_max", "count", "order", "type", "field", "has", "a field name"),
        )

    def path(self) -> str:
        t = self.accept("name") or self.accept("string")
        if t is None:
            raise self.error(f"unexpected {self.describe(self.tok)}", ("a field path",))
        return t.value

    def symbol(self, what: str) -> str:
        """A model / actor / context name: identifier, quoted string or $variable."""
        t = self.accept("name") or self.accept("string") or self.accept("var")
        if t is None:
            raise self.error(f"unexpected {self.describe(self.tok)}", (what,))
        return t.value

    def equality(self, build):
        start = self.tok.pos
        op = self.expect("op", what="'=' or '!='").value
        if op not in ("=", "!="):
            raise FormulaSyntaxError(f"only = and != apply here, got {op!r}", start)
        node = build(self.symbol("a name or string"))
        return Not(node) if op == "!=" else node

    def comparison(self, path: str):
        t = self.tok
        if t.kind != "op" or t.value not in _CMP_OPS:
            raise self.error(f"unexpected {self.describe(t)}", _CMP_OPS)
        self.i += 1
        v = self.tok
        if v.kind in ("string", "number", "var"):
            value = v.value
        elif v.kind == "kw" and v.value in ("true", "false"):
            value = v.value == "true"
        elif v.kind == "name":
            value = _Path(v.value)
        else:
            raise self.error(f"unexpected {self.describe(v)}", ("a value",))
        self.i += 1
        return FieldCmp(path, t.value, value)

    def binding(self) -> str | None:
        if self.at("name") and self.peek().kind == "op" and self.peek().value == ":":
            name = self.tok.value
            if "." in name:
                raise self.error(f"binding name {name!r} may not contain dots")
            self.i += 2
            return name
        return None

    def exists(self):
        self.i += 1
        name = self.binding()
        self.expect("op", "(")
        # Exists(Model, context) shorthand
        if self.tok.kind in ("name", "string") and self.peek().kind == "op" and self.peek().value == ",":
            model = self.tok.value
            self.i += 2
            ctx = self.symbol("a context")
            self.expect("op", ")")
            return Exists(And(TypeEq(model), MetaEq("context", ctx)), name)
        body = self.formula()
        self.expect("op", ")")
        return Exists(body, name)

    def exists_max(self):
        start = self.tok.pos
        self.i += 1
        name = self.binding()
        self.expect("op", "(")
        body = self.formula()
        self.separator()
        if self.tok.kind in ("name", "kw") and self.tok.value in ("a", "actor") and self.peek().value == "=":
            self.i += 2
        actor = self.symbol("an actor")
        self.separator()
        if self.tok.kind == "name" and self.tok.value in ("k", "key") and self.peek().value == "=":
            self.i += 2
        if self.accept("op", "("):
            model = self.symbol("a model id")
            self.expect("op", ",")
            ctx = self.symbol("a context")
            self.expect("op", ")")
        else:
            ctx = self.symbol("a key")
            types = [c.name for c in conjuncts(body) if isinstance(c, TypeEq)]
            if len(types) != 1:
                raise FormulaSyntaxError(
                    "key given as a bare context needs exactly one type = ... conjunct in the formula",
                    start,
                )
            model = types[0]
        self.expect("op", ")")
        return ExistsMax(body, actor, Key(model, ctx), name)

    def separator(self) -> None:
        if not (self.accept("op", ";") or self.accept("op", ",")):
            raise self.error(f"unexpected {self.describe(self.tok)}", ("';'", "','"))

    def count(self):
        self.i += 1
        self.expect("op", "(")
        body = self.formula()
        self.expect("op", ")")
        self.expect("op", ">=", "'>='")
        t = self.expect("number", what="a positive integer")
        if not isinstance(t.value, int) or isinstance(t.value, bool) or t.value < 1:
            raise FormulaSyntaxError("count threshold must be an integer >= 1", t.pos)
        return CountGE(body, t.value)

    def order(self):
        self.i += 1
        self.expect("op", "(")
        first = self.formula()
        if self.accept("kw", "before"):
            # Order((a) BEFORE (b))
            second = self.formula()
            self.expect("op", ")")
        else:
            # order (a) before (b)
            self.expect("op", ")")
            self.expect("kw", "before")
            self.expect("op", "(")
            second = self.formula()
            self.expect("op", ")")
        return Order(first, second)

    def parse(self):
        node = self.formula()
        if not self.at("eof"):
            raise self.error(f"unexpected {self.describe(self.tok)}", ("and", "or", "end of input"))
        return node


# -- resolution -------------------------------------------------------------

def _check_event_formula(node, where: str) -> None:
    for n in walk(node):
        if isinstance(n, LITERAL_TYPES):
            raise FormulaSyntaxError(f"history literals cannot be nested inside {where}")
        if isinstance(n, FieldCmp) and isinstance(n.value, _Path):
            raise FormulaSyntaxError(
                f"{n.path} {n.op} {n.value.text}: comparing two fields needs witness bindings"
            )


def _split_ref(text: str, bindings: set[str]) -> Ref | None:
    head, dot, rest = text.partition(".")
    if dot and head in bindings:
        if rest.startswith("@") and rest not in WITNESS_ATTRS:
            raise FormulaSyntaxError(f"unknown witness attribute {rest!r}")
        return Ref(head, rest)
    return None


def _mentions_binding(node, bindings: set[str]) -> bool:
    for n in walk(node):
        if isinstance(n, FieldCmp):
            if n.path.partition(".")[0] in bindings and "." in n.path:
                return True
            if isinstance(n.value, _Path):
                return True
    return False


def _as_witness_cmp(node, bindings: set[str]):
    if not isinstance(node, FieldCmp):
        return None
    left = _split_ref(node.path, bindings)
    right = node.value
    if isinstance(right, _Path):
        right_ref = _split_ref(right.text, bindings)
        if right_ref is None:
            raise FormulaSyntaxError(f"{right.text!r} does not name a declared binding")
        if left is None:
            raise FormulaSyntaxError(f"{node.path!r} does not name a declared binding")
        right = right_ref
    if left is None:
        return None
    return WitnessCmp(left, node.op, right)


def _resolve(node, bindings: set[str]):
    if isinstance(node, LITERAL_TYPES):
        if isinstance(node, Order):
            _check_event_formula(node.before, "order")
            _check_event_formula(node.after, "order")
        else:
            _check_event_formula(node.formula, type(node).__name__.lower())
        return node
    if isinstance(node, Or):
        for side in (node.left, node.right):
            if not is_history_formula(side) and _as_witness_cmp(side, bindings) is None:
                raise FormulaSyntaxError(
                    f"event predicate {side!r} cannot stand alone in a disjunction of history literals"
                )
        return Or(_resolve(node.left, bindings), _resolve(node.right, bindings))
    if isinstance(node, And):
        parts = conjuncts(node)
        strays = [
            p for p in parts
            if not is_history_formula(p) and not _mentions_binding(p, bindings)
        ]
        declared = {p.name for p in parts if isinstance(p, BINDING_LITERALS) and p.name}
        resolved = []
        for p in parts:
            wc = _as_witness_cmp(p, bindings)
            if wc is not None:
                used = {wc.left.binding} | ({wc.right.binding} if isinstance(wc.right, Ref) else set())
                missing = used - declared
                if missing:
                    raise FormulaSyntaxError(
                        f"binding(s) {sorted(missing)} must be declared in the same conjunction"
                    )
                resolved.append(wc)
            elif p in strays:
                _check_event_formula(p, "an event predicate")
                for j in range(len(resolved) - 1, -1, -1):
                    if isinstance(resolved[j], BINDING_LITERALS):
                        lit = resolved[j]
                        resolved[j] = type(lit)(**{**lit.__dict__, "formula": And(lit.formula, p)})
                        break
                else:
                    raise FormulaSyntaxError(
                        f"event predicate {p!r} must follow an exists literal it can constrain"
                    )
            else:
                resolved.append(_resolve(p, bindings))
        if not strays:
            # keep the original tree shape so printing round-trips
            return _rebuild(node, bindings)
        return and_all(resolved)
    wc = _as_witness_cmp(node, bindings)
    if wc is not None:
        raise FormulaSyntaxError("a witness comparison must be conjoined with the literals it references")
    raise FormulaSyntaxError(f"event predicate {node!r} cannot stand alone next to history literals")


def _rebuild(node, bindings):
    if isinstance(node, And):
        return And(_rebuild(node.left, bindings), _rebuild(node.right, bindings))
    wc = _as_witness_cmp(node, bindings)
    if wc is not None:
        return wc
    return _resolve(node, bindings)


def parse(text: str):
    """Parse formula text into an event formula or a history formula AST.

    Raises FormulaSyntaxError (with offset and expected tokens) or
    StratificationError.
    """
    node = _Parser(text).parse()
    names = [n.name for n in walk(node) if isinstance(n, BINDING_LITERALS) and n.name]
    dupes = {n for n in names if names.count(n) > 1}
    if dupes:
        raise FormulaSyntaxError(f"binding(s) declared more than once: {sorted(dupes)}")
    if not any(isinstance(n, LITERAL_TYPES) for n in walk(node)):
        _check_event_formula(node, "an event formula")
        return node
    return _resolve(node, set(names))


def parse_history(text: str):
    node = parse(text)
    if not is_history_formula(node):
        raise FormulaSyntaxError("expected a history formula (exists, count, exists_max or order)")
    return node


def parse_event(text: str):
    node = parse(text)
    if is_history_formula(node):
        raise FormulaSyntaxError("expected an event formula without history literals")
    return node
