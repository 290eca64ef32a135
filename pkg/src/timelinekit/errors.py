"""Exception types and the diagnostic record shared across the toolkit."""

from __future__ import annotations

from dataclasses import dataclass, field


class TimelineKitError(Exception):
    """Base class for all toolkit errors."""


class NoValidNodesError(TimelineKitError):
    """No line of a timeline text parsed into a node."""


class UnreadableDatasetError(TimelineKitError):
    """The dataset file could not be opened or read."""


class EmptyArticlePoolError(TimelineKitError):
    """Support-article selection was asked to pick from an empty pool."""


class UndecomposedNodeError(TimelineKitError):
    """An operation required event atoms on a node that has none."""


class BackendUnavailableError(TimelineKitError):
    """A remote backend could not be reached or refused the request."""


class UnparseableResponseError(TimelineKitError):
    """A backend response did not contain the expected structure."""


class ModelError(TimelineKitError):
    """A model client failed after exhausting its retry policy."""


class EmptyMatrixError(TimelineKitError):
    """Assignment was requested on a cost matrix with no rows or columns."""


class TooLargeError(TimelineKitError):
    """Brute-force assignment was requested beyond its exhaustive bound."""


class EmptyEdgeSetError(TimelineKitError):
    """Edge mounting was requested for a prediction with no edges."""


class MissingReferenceError(TimelineKitError):
    """A gold-timestamp job was built without a reference timeline."""


class BudgetTooSmallError(TimelineKitError):
    """Article truncation cannot fit even the titles into the budget."""


class PadFailureError(TimelineKitError):
    """A role selection stayed short of the requested size after re-prompts."""


class InsufficientGroupsError(TimelineKitError):
    """The atom-group universe is smaller than the requested selection size."""


class EmptyInputError(TimelineKitError):
    """Aggregation was requested over zero reports."""


@dataclass(frozen=True)
class Diagnostic:
    """A non-fatal finding reported by an operation.

    Codes are stable strings (for example ``skipped_line`` or
    ``empty_claim_set``) so callers can filter without string-matching
    messages.
    """

    code: str
    message: str
    context: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out: dict = {"code": self.code, "message": self.message}
        if self.context:
            out["context"] = self.context
        return out
