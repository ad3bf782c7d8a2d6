"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class DaprocError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(DaprocError):
    """Raised when a spec text cannot be parsed; carries all diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        first = self.diagnostics[0] if self.diagnostics else None
        super().__init__(str(first) if first else "parse error")


class SpecValidationError(DaprocError):
    """Raised when a spec with validation errors is handed to the runtime."""

    def __init__(self, report):
        self.report = report
        super().__init__("; ".join(i.message for i in report.errors))


class MergeArityMismatch(DaprocError):
    """Two CA rules for the same action bind incompatible parameter shapes."""


class UnknownRelation(DaprocError):
    pass


class UnknownState(DaprocError):
    pass


class UnknownAction(DaprocError):
    pass


class NoSuchBinding(DaprocError):
    """A ground action does not match any enumerated binding."""


class StaleBinding(DaprocError):
    """A commit was attempted against a state that is no longer current."""


class ConstraintViolation(DaprocError):
    """A candidate successor snapshot breaks schema constraints.

    Nothing is committed when this is raised; `violations` lists one
    human-readable line per broken constraint.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class InvalidDelta(DaprocError):
    """A delta tuple does not type-check against its relation."""


class TypeMismatch(DaprocError):
    """A service result (or argument) has the wrong type."""


class UnregisteredService(DaprocError):
    pass


class UnconfiguredService(DaprocError):
    """A mock run references a service absent from the mock config."""


class AwaitingInteractiveResult(DaprocError):
    """An interactive service was invoked without a supplied result."""

    def __init__(self, pending):
        self.pending = pending
        super().__init__(f"awaiting result for {pending.signature}")


class MockConfigError(DaprocError):
    """A mock service configuration is malformed or ill-typed."""


class MissingInvocationResult(DaprocError):
    """Commit was attempted without a result for some invocation."""


class ScriptError(DaprocError):
    """A script step failed; `index` is 1-based, `cause` the underlying error."""

    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"step {index}: {cause}")


class Inconclusive(DaprocError):
    """A verification question cannot be settled on an incomplete space."""


class ReplayError(DaprocError):
    """A persistence file is malformed or inconsistent."""
