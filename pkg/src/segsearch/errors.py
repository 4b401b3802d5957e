"""Exception hierarchy shared by the solvers and the command-line front end."""

from __future__ import annotations


class SegSearchError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for this failure."""

    exit_code = 3
    code = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "context": self.context}


class ValidationError(SegSearchError, ValueError):
    """Malformed input: bad scenario fields, misaligned arrays, out-of-range arguments."""

    exit_code = 2
    code = "validation"


class DomainError(ValidationError):
    """Argument outside the domain of a function (e.g. negative tightness)."""

    code = "domain"


class SizeError(ValidationError):
    code = "size"


class AssumptionError(SegSearchError, ValueError):
    """A modelling assumption fails, e.g. buyers capture no surplus anywhere."""

    exit_code = 4
    code = "assumption"


class SolverError(SegSearchError, RuntimeError):
    exit_code = 3
    code = "solver"


class InfeasibleError(SolverError):
    code = "infeasible"


class UnsupportedError(SolverError):
    code = "unsupported"


class CertificateError(SolverError):
    """Price-function certificate failed; carries the certificate and worst violation."""

    code = "certificate"

    def __init__(self, message: str, certificate=None, violation: float = float("nan"), **context):
        super().__init__(message, violation=violation, **context)
        self.certificate = certificate
        self.violation = violation
