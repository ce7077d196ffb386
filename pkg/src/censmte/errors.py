"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the CLI can emit it
as JSON on stderr.
"""

from __future__ import annotations


class CensMteError(ValueError):
    code = "error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), **self.details}


# dataset
class MissingColumn(CensMteError):
    code = "missing_column"


class ParseError(CensMteError):
    code = "parse_error"

    def __init__(self, row: int, column: str, value=None):
        super().__init__(f"cannot parse column {column!r} at row {row}: {value!r}",
                         row=row, column=column, value=str(value))
        self.row = row
        self.column = column


class InvariantViolation(CensMteError):
    code = "invariant_violation"


class SingletonDecider(CensMteError):
    code = "singleton_decider"


class EmptyResult(CensMteError):
    code = "empty_result"


# propensity
class RankDeficient(CensMteError):
    code = "rank_deficient"


class DegenerateTreatment(CensMteError):
    code = "degenerate_treatment"


class TooFewClusters(CensMteError):
    code = "too_few_clusters"


# distribution regression
class AllSameOutcome(CensMteError):
    code = "all_same_outcome"


class Nonconvergence(CensMteError):
    code = "nonconvergence"


class UnusableCell(CensMteError):
    code = "unusable_cell"


# mte
class InvalidHorizon(CensMteError):
    code = "invalid_horizon"


# bootstrap
class ReplicateFailure(CensMteError):
    code = "replicate_failure"


# bounds
class EmptyDeltaGrid(CensMteError):
    code = "empty_delta_grid"


# oracle
class InvalidSpec(CensMteError):
    code = "invalid_spec"


class NoClosedForm(CensMteError):
    code = "no_closed_form"
