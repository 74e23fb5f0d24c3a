"""Models as admission gates: schema, permissions, condition.

An event may enter the history only if (i) a model with its model id exists,
(ii) the actor's role is permitted, (iii) the payload fits the schema and
(iv) the model condition holds and every exists literal it relied on is
witnessed by one of the event's refs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Mapping

from .definitions import key_value, parse_blocks, split_top, sub_block
from .errors import DefinitionError, FormulaError
from .evaluate import Truth, binding_map, evaluate, matches
from .events import Event, History
from .formula import And, Exists, Or, substitute, to_text
from .parser import parse_history
from .policy import CONFLICT_MODEL, CONSERVATIVE, ConflictPolicy

MODEL_META = "__model__"
GUARD_META = "__guard__"
RESERVED_PREFIX = "__"
BASE_PLACEHOLDER = "$base"


class ModelType(str, Enum):
    CONCEPT = "Concept"
    ATTRIBUTE = "Attribute"
    RELATION = "Relation"
    ACTION = "Action"


class Kind(str, Enum):
    STRING = "string"
    INTEGER = "integer"
    DECIMAL = "decimal"
    BOOLEAN = "boolean"
    ENUM = "enum"
    CONTEXT = "context"


@dataclass(frozen=True)
class FieldSpec:
    kind: Kind
    required: bool = False
    symbols: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.kind is Kind.ENUM and not self.symbols:
            raise DefinitionError("enum fields need at least one symbol")

    def accepts(self, value) -> bool:
        if self.kind in (Kind.STRING, Kind.CONTEXT):
            return isinstance(value, str)
        if self.kind is Kind.ENUM:
            return isinstance(value, str) and value in self.symbols
        if self.kind is Kind.BOOLEAN:
            return isinstance(value, bool)
        if self.kind is Kind.INTEGER:
            return isinstance(value, int) and not isinstance(value, bool)
        # integers are valid decimals
        return isinstance(value, (int, Decimal)) and not isinstance(value, bool)

    def coerce(self, text: str):
        """Turn command-line text into a value of this kind (best effort)."""
        try:
            if self.kind is Kind.INTEGER:
                return int(text)
            if self.kind is Kind.DECIMAL:
                return Decimal(text)
        except (ValueError, InvalidOperation):
            return text
        if self.kind is Kind.BOOLEAN and text.lower() in ("true", "false"):
            return text.lower() == "true"
        return text

    def describe(self) -> str:
        kind = f"enum({','.join(sorted(self.symbols))})" if self.kind is Kind.ENUM else self.kind.value
        return kind + (" required" if self.required else "")


@dataclass(frozen=True)
class Schema:
    fields: Mapping[str, FieldSpec] = field(default_factory=dict)

    def validate(self, payload: Mapping) -> list[str]:
        problems = []
        for path, spec in sorted(self.fields.items()):
            if path not in payload:
                if spec.required:
                    problems.append(f"missing required field {path!r}")
            elif not spec.accepts(payload[path]):
                problems.append(f"field {path!r}: {payload[path]!r} is not a valid {spec.describe()}")
        for path in sorted(set(payload) - set(self.fields)):
            problems.append(f"unknown field {path!r}")
        return problems


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    diagnostics: tuple[str, ...] = ()


def validate_payload(schema: Schema, payload: Mapping) -> ValidationResult:
    problems = schema.validate(payload)
    return ValidationResult(not problems, tuple(problems))


@dataclass(frozen=True)
class Permission:
    role: str  # "*" admits any role, including none
    condition: object | None = None


@dataclass(frozen=True)
class Model:
    id: str
    model_type: ModelType
    schema: Schema = field(default_factory=Schema)
    permissions: tuple[Permission, ...] = ()
    condition: object | None = None
    auto_chain: bool = True
    source: str | None = None


class ModelRegistry:
    def __init__(self, models=(), *, builtins: bool = True) -> None:
        self.models: dict[str, Model] = {}
        # shared with bound histories so they can register context creators
        self.model_types: dict[str, str] = {}
        if builtins:
            for m in builtin_models():
                self.add(m)
        for m in models:
            self.add(m)

    def add(self, model: Model) -> None:
        if model.id in self.models:
            raise DefinitionError(f"model {model.id!r} is already registered")
        self.models[model.id] = model
        # built-ins describe existing contexts; they never create one
        if not model.id.startswith(RESERVED_PREFIX) and model.id != CONFLICT_MODEL:
            self.model_types[model.id] = model.model_type.value

    def get(self, model_id: str) -> Model | None:
        return self.models.get(model_id)

    def __contains__(self, model_id: str) -> bool:
        return model_id in self.models

    def __getitem__(self, model_id: str) -> Model:
        return self.models[model_id]

    def bind(self, history: History) -> History:
        history.model_types = self.model_types
        return history


def builtin_models() -> list[Model]:
    text = Schema({"definition": FieldSpec(Kind.STRING, True)})
    anyone = (Permission("*"),)
    return [
        Model(MODEL_META, ModelType.CONCEPT, text, anyone),
        Model(GUARD_META, ModelType.CONCEPT, text, anyone),
        Model(
            CONFLICT_MODEL,
            ModelType.ACTION,
            Schema({
                "candidates": FieldSpec(Kind.STRING, True),
                "model": FieldSpec(Kind.STRING, True),
                "context": FieldSpec(Kind.STRING, True),
                "actor": FieldSpec(Kind.STRING, True),
            }),
            anyone,
        ),
    ]


# -- admission clauses ---------------------------------------------------------

def authorized(actor: str, role: str | None, model: Model, history: History,
               context: str | None = None, policy: ConflictPolicy = CONSERVATIVE) -> bool:
    """True iff some permission names the event's role and its condition holds.

    The event's role field is authoritative; ``actor`` is only used for the
    ``$actor`` placeholder in permission conditions.
    """
    subst = {BASE_PLACEHOLDER: context or "", "$actor": actor}
    for perm in model.permissions:
        if perm.role != "*" and perm.role != role:
            continue
        if perm.condition is None:
            return True
        if evaluate(history, perm.condition, policy, subst).is_true:
            return True
    return False


@dataclass(frozen=True)
class ConditionCheck:
    truth: Truth
    witnesses: Mapping[str, str] = field(default_factory=dict)  # literal text -> event id
    required: tuple = ()  # the exists literals that must be witnessed by a ref

    @property
    def passed(self) -> bool:
        return self.truth is Truth.TRUE


def _required_exists(node, history: History, policy) -> list[Exists]:
    # witnesses come from the top-level conjunction; in a disjunction the
    # first satisfied branch (left to right) supplies them
    if isinstance(node, And):
        return _required_exists(node.left, history, policy) + _required_exists(node.right, history, policy)
    if isinstance(node, Or):
        for side in (node.left, node.right):
            if evaluate(history, side, policy).is_true:
                return _required_exists(side, history, policy)
        return []
    if isinstance(node, Exists):
        return [node] if evaluate(history, node, policy).is_true else []
    return []


def check_condition(model: Model, history: History, context: str = "",
                    policy: ConflictPolicy = CONSERVATIVE) -> ConditionCheck:
    if model.condition is None:
        return ConditionCheck(Truth.TRUE)
    cond = substitute(model.condition, {BASE_PLACEHOLDER: context})
    res = evaluate(history, cond, policy)
    if not res.is_true:
        return ConditionCheck(res.truth)
    names = binding_map(cond)
    first = res.envs[0]
    required = _required_exists(cond, history, policy)
    witnesses = {to_text(lit): first[names[id(lit)]] for lit in required}
    return ConditionCheck(Truth.TRUE, witnesses, tuple(required))


class Clause(str, Enum):
    NO_MODEL = "NoModel"
    UNAUTHORIZED = "Unauthorized"
    SCHEMA_VIOLATION = "SchemaViolation"
    CONDITION_FAILED = "ConditionFailed"
    MISSING_WITNESS_REF = "MissingWitnessRef"


@dataclass(frozen=True)
class AdmissionReport:
    admitted: bool
    clause: Clause | None = None
    reason: str = ""
    witnesses: Mapping[str, str] = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "Admitted" if self.admitted else f"Rejected({self.clause.value})"


def admit_incoming(e: Event, registry: ModelRegistry, history: History,
                   policy: ConflictPolicy = CONSERVATIVE) -> AdmissionReport:
    """Check an event against the model gate. Clauses are checked in order and
    the first failure is reported."""
    model = registry.get(e.model_id)
    if model is None:
        return AdmissionReport(False, Clause.NO_MODEL, f"no model {e.model_id!r}")
    if not authorized(e.actor, e.role, model, history, e.context, policy):
        return AdmissionReport(
            False, Clause.UNAUTHORIZED,
            f"role {e.role!r} of actor {e.actor!r} is not permitted by {model.id}",
        )
    problems = model.schema.validate(e.payload)
    if problems:
        return AdmissionReport(False, Clause.SCHEMA_VIOLATION, "; ".join(problems))
    cond = check_condition(model, history, e.context, policy)
    if not cond.passed:
        return AdmissionReport(
            False, Clause.CONDITION_FAILED,
            f"condition of {model.id} is {cond.truth.value}",
        )
    refs = [history[r] for r in sorted(e.refs) if r in history]
    for lit in cond.required:
        if not any(matches(r, lit.formula) for r in refs):
            return AdmissionReport(
                False, Clause.MISSING_WITNESS_REF,
                f"refs contain no witness for satisfied literal {to_text(lit)}",
                cond.witnesses,
            )
    return AdmissionReport(True, witnesses=cond.witnesses)


# -- definition files -----------------------------------------------------------

_FIELD_RE = re.compile(r"^([\w.#@-]+)\s*:\s*(\w+)\s*(\(([^)]*)\))?\s*(required|optional)?$")


def _parse_field(item: str) -> tuple[str, FieldSpec]:
    m = _FIELD_RE.match(item.strip())
    if m is None:
        raise DefinitionError(f"bad schema field {item!r}; expected 'name: kind [required]'")
    name, kind_text, _, args, req = m.groups()
    try:
        kind = Kind(kind_text.lower())
    except ValueError:
        raise DefinitionError(f"unknown field kind {kind_text!r}") from None
    symbols = frozenset(s.strip().strip("'\"") for s in (args or "").split(",") if s.strip())
    if kind is not Kind.ENUM and args is not None:
        raise DefinitionError(f"only enum fields take arguments: {item!r}")
    return name, FieldSpec(kind, req == "required", symbols)


def _formula(text: str, where: str):
    try:
        return parse_history(text)
    except FormulaError as exc:
        raise DefinitionError(f"{where}: {exc}") from exc


def parse_model_block(name: str, body: str, raw: str | None = None) -> Model:
    model_type = None
    fields: dict[str, FieldSpec] = {}
    permissions: list[Permission] = []
    condition = None
    auto_chain = True
    for item in split_top(body):
        schema_body = sub_block(item, "schema")
        if schema_body is not None:
            for f in split_top(schema_body, ";,"):
                fname, spec = _parse_field(f)
                if fname in fields:
                    raise DefinitionError(f"field {fname!r} declared twice in {name}")
                fields[fname] = spec
            continue
        if item.startswith("permission") and not item.startswith("permissions"):
            rest = item[len("permission"):].strip()
            role, _, cond_text = rest.partition(" when ")
            if not role.strip():
                raise DefinitionError(f"permission without a role in {name}")
            cond = _formula(cond_text, f"permission condition of {name}") if cond_text.strip() else None
            permissions.append(Permission(role.strip(), cond))
            continue
        key, value = key_value(item)
        if key == "type":
            try:
                model_type = ModelType(value)
            except ValueError:
                raise DefinitionError(f"unknown model type {value!r}") from None
        elif key == "condition":
            condition = _formula(value, f"condition of {name}")
        elif key == "auto_chain":
            if value not in ("on", "off"):
                raise DefinitionError(f"auto_chain must be on or off, got {value!r}")
            auto_chain = value == "on"
        else:
            raise DefinitionError(f"unknown model item {key!r} in {name}")
    if model_type is None:
        raise DefinitionError(f"model {name} has no type")
    if name.startswith(RESERVED_PREFIX):
        raise DefinitionError(f"model ids starting with {RESERVED_PREFIX!r} are reserved")
    return Model(name, model_type, Schema(fields), tuple(permissions), condition, auto_chain, raw)


def parse_models(text: str) -> list[Model]:
    return [parse_model_block(name, body, raw) for name, body, raw in parse_blocks(text, "model")]
