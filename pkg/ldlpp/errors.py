"""
Exception hierarchy for the LDL++ engine.

Library code raises these; only the command-line front end turns them into
messages and exit codes.
"""

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class SourcePos:
    """Line/column of a construct in the source text (1-based)."""
    line: int
    column: int

    def __str__(self):
        return f"{self.line}:{self.column}"


@dataclass(frozen=True)
class Diagnostic:
    """One analysis finding, attached to a rule when there is one."""
    rule: str
    message: str
    pos: Optional[SourcePos] = None

    def __str__(self):
        where = f" (line {self.pos})" if self.pos else ""
        return f"{self.rule}{where}: {self.message}"


class LdlError(Exception):
    """Base class of every error raised by the engine."""


class ParseError(LdlError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"syntax error{where}: {message}")


class ArityError(LdlError):
    pass


class DiagnosticError(LdlError):
    """An error carrying one or more analysis diagnostics."""

    def __init__(self, diagnostics, headline):
        self.diagnostics = list(diagnostics)
        lines = [headline] + [f"  {d}" for d in self.diagnostics]
        super().__init__("\n".join(lines))


class SafetyError(DiagnosticError):
    def __init__(self, diagnostics):
        super().__init__(diagnostics, "unsafe rules")


class NotXYError(DiagnosticError):
    def __init__(self, diagnostics):
        super().__init__(diagnostics, "not an XY-stratified program")


class StratificationError(LdlError):
    """`kind` is "negation" or "aggregate": the polarity of the offending edge."""

    def __init__(self, cycle, reason="not stratified", kind="negation"):
        self.cycle = list(cycle)
        self.kind = kind
        super().__init__(f"{reason}: cycle through {' -> '.join(self.cycle)}")


class UdaError(LdlError):
    pass


class StoreError(LdlError):
    pass


class StepLimitReached(LdlError):
    def __init__(self, steps):
        self.steps = steps
        super().__init__(f"step limit reached after {steps} steps")


class UnknownPredicate(LdlError):
    def __init__(self, pred):
        self.pred = pred
        super().__init__(f"unknown predicate: {pred}")


class AdapterError(LdlError):
    def __init__(self, message, sql=None):
        self.sql = sql
        text = message if sql is None else f"{message}\n  while running: {sql}"
        super().__init__(text)


class ConfigError(LdlError):
    pass


class UsageError(LdlError):
    """A malformed or unknown interpreter command."""
