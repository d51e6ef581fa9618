"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CoreEvalError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(CoreEvalError):
    """A dataset, sample, or schema constraint was violated.

    ``details`` carries per-record context (offending ids, line numbers).
    """

    def __init__(self, message: str, details: list[str] | None = None):
        self.details = details or []
        if self.details:
            message = message + "\n  " + "\n  ".join(self.details)
        super().__init__(message)


class RenderError(CoreEvalError):
    """A prompt template could not be rendered for a sample."""


class TransportError(CoreEvalError):
    """A remote call failed after exhausting the retry policy."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class CredentialError(TransportError):
    """Authentication was rejected; never retried."""


class TransportTimeout(TransportError):
    """All attempts timed out."""


class RetrievalError(CoreEvalError):
    """Knowledge retrieval failed after retries."""


class ExtractionError(CoreEvalError):
    """A generator response could not be parsed into entities or triples.

    ``raw`` preserves the unparseable response text.
    """

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class UpdateError(CoreEvalError):
    """Triple replacements could not be aligned with their originals."""


class SynthesisError(CoreEvalError):
    """A synthesized text failed the replacement-containment check."""


class VerdictError(CoreEvalError):
    """A reflection verdict could not be parsed, even by fallback."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class InputError(CoreEvalError):
    """Metric inputs were malformed (missing/duplicate predictions,
    inconsistent template coverage)."""

    def __init__(self, message: str, ids: list[str] | None = None):
        self.ids = ids or []
        if self.ids:
            message = f"{message}: {', '.join(self.ids)}"
        super().__init__(message)


class ReportError(CoreEvalError):
    """A delta report could not be assembled (e.g. a role pair is
    missing its counterpart)."""


class MatrixError(CoreEvalError):
    """An agreement matrix is malformed (ragged rows, too few raters)."""


class UndefinedKappaError(MatrixError):
    """Expected agreement is 1 (all mass in one category); kappa undefined."""


class ConfigError(CoreEvalError):
    """A run configuration is invalid or incomplete."""
