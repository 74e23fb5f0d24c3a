"""causalflow: an append-only causal event store with a guard language,
model-gated admission and a deterministic fixpoint executor."""

from .causality import CausalGraph, cell_maxima, cell_maximum
from .errors import (
    AdmissionRejected, BrokenChain, CausalFlowError, CorruptRecord, CyclicInput,
    DefinitionError, ForwardRef, FormulaError, FormulaSyntaxError, IdMismatch,
    StepLimitExceeded, StratificationError, UnknownEvent, WitnessLimitExceeded,
)
from .evaluate import EvalResult, Truth, eval_order, evaluate, exists_max, matches, max_per_key
from .events import SYSTEM_ACTOR, Event, History, Key, Origin, append, compute_id, events_for
from .executor import (
    EmitTemplate, FromWitness, Guard, StepResult, auto_chain_target, form_refs, ingest,
    parse_guards, run_to_fixpoint, step, submit,
)
from .formula import to_text
from .models import (
    AdmissionReport, Clause, FieldSpec, Kind, Model, ModelRegistry, ModelType, Permission,
    Schema, admit_incoming, authorized, check_condition, parse_models, validate_payload,
)
from .parser import parse, parse_event, parse_history
from .policy import (
    Chosen, ConflictMode, ConflictPolicy, ConflictRecord, Escalated, Unresolved, lww_value,
    resolve_conflict,
)

__version__ = "0.1.0"
