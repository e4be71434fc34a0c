"""Diagnostic records shared by every validation layer.

Validators never raise for problems found in user input; they accumulate
Diagnostics so a single run reports everything that is wrong. Runtime
failures in non-validation operations (code generation, training) raise
:class:`MilaError` with a namespaced code instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


class Stage(str, Enum):
    """Validation layer that produced a diagnostic."""

    STRUCTURE = "structure"
    SEMANTICS = "semantics"
    AVAILABILITY = "availability"
    FEDERATION = "federation"


# Code prefix expected for each validation stage.
STAGE_PREFIXES = {
    Stage.STRUCTURE: ("MM_",),
    Stage.SEMANTICS: ("SEM_", "ONT_"),
    Stage.AVAILABILITY: ("AVAIL_", "VDL_"),
    Stage.FEDERATION: ("FED_",),
}


@dataclass(frozen=True)
class Diagnostic:
    """One finding from a validation layer.

    ``element_path`` is an RFC-6901-style pointer into the source document
    ("" addresses the document root, used for syntax-level failures).
    """

    code: str
    severity: Severity
    message: str
    element_path: str
    stage: Stage

    def __post_init__(self) -> None:
        prefixes = STAGE_PREFIXES[self.stage]
        if not self.code.startswith(prefixes):
            raise ValueError(
                f"diagnostic code {self.code!r} does not match stage {self.stage.value!r}"
            )

    def to_json_dict(self) -> dict:
        return {
            "code": self.code,
            "severity": self.severity.value,
            "message": self.message,
            "element_path": self.element_path,
            "stage": self.stage.value,
        }


def error(code: str, message: str, path: str, stage: Stage) -> Diagnostic:
    return Diagnostic(code, Severity.ERROR, message, path, stage)


def warning(code: str, message: str, path: str, stage: Stage) -> Diagnostic:
    return Diagnostic(code, Severity.WARNING, message, path, stage)


@dataclass(frozen=True)
class ValidationReport:
    """Accumulated diagnostics plus the pass verdict.

    ``passed`` is true exactly when no error-severity diagnostic is present;
    warnings never fail a report.
    """

    diagnostics: tuple[Diagnostic, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return not any(d.severity is Severity.ERROR for d in self.diagnostics)

    @property
    def errors(self) -> tuple[Diagnostic, ...]:
        return tuple(d for d in self.diagnostics if d.severity is Severity.ERROR)

    def codes(self) -> tuple[str, ...]:
        return tuple(d.code for d in self.diagnostics)

    def to_json_dict(self) -> dict:
        return {
            "passed": self.passed,
            "diagnostics": [d.to_json_dict() for d in self.diagnostics],
        }

    @staticmethod
    def combine(*reports: "ValidationReport") -> "ValidationReport":
        merged: list[Diagnostic] = []
        for report in reports:
            merged.extend(report.diagnostics)
        return ValidationReport(tuple(merged))


class MilaError(Exception):
    """Abort-style failure with a namespaced code (CG_*, FS_*, VDL_*, TA_*, CLI_*)."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
