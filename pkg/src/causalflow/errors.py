"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class CausalFlowError(Exception):
    """Base class for every error raised by this package."""


class HistoryError(CausalFlowError):
    """An event could not be appended to a history."""

    def __init__(self, message: str, event_id: str | None = None, line: int | None = None):
        super().__init__(message)
        self.event_id = event_id
        self.line = line

    def __str__(self) -> str:
        msg = super().__str__()
        if self.line is not None:
            return f"line {self.line}: {msg}"
        return msg


class ForwardRef(HistoryError):
    """An event references an id that is not (yet) in the history."""


class IdMismatch(HistoryError):
    """The stored id differs from the digest of the event content."""


class InvalidEvent(HistoryError):
    """The event is structurally malformed (self reference, bad payload value...)."""


class UnknownEvent(CausalFlowError, KeyError):
    def __str__(self) -> str:
        return f"unknown event {self.args[0]!r}"


class CyclicInput(CausalFlowError):
    """A graph operation that needs a DAG received a cyclic graph."""


class FormulaError(CausalFlowError):
    """Raised for malformed guard / condition formulas."""

    def __init__(self, message: str, position: int | None = None, expected: tuple[str, ...] = ()):
        super().__init__(message)
        self.position = position
        self.expected = expected

    def __str__(self) -> str:
        msg = super().__str__()
        if self.position is not None:
            msg = f"at offset {self.position}: {msg}"
        if self.expected:
            msg += f" (expected {', '.join(self.expected)})"
        return msg


class FormulaSyntaxError(FormulaError):
    pass


class StratificationError(FormulaError):
    """Negation was applied to something other than a base predicate."""


class DefinitionError(CausalFlowError):
    """A model or guard definition file could not be understood."""


class AdmissionRejected(CausalFlowError):
    def __init__(self, report):
        super().__init__(f"{getattr(report.clause, 'value', report.clause)}: {report.reason}")
        self.report = report


class BrokenChain(CausalFlowError):
    """An (actor, key) cell has several causally-last events."""

    def __init__(self, actor: str, key, maxima):
        super().__init__(
            f"cell ({actor}, {key[0]}/{key[1]}) has {len(maxima)} parallel maxima"
        )
        self.actor = actor
        self.key = key
        self.maxima = tuple(sorted(maxima))


class ExecutionError(CausalFlowError):
    pass


class StepLimitExceeded(ExecutionError):
    def __init__(self, message: str, guards: tuple[str, ...] = ()):
        super().__init__(message)
        self.guards = guards


class WitnessLimitExceeded(StepLimitExceeded):
    pass


class CorruptRecord(HistoryError):
    """A log line could not be decoded or replayed."""
