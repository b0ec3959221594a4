"""Exception hierarchy shared by the pipeline stages."""

from __future__ import annotations


class MadrsError(Exception):
    """Base class for every error raised by this package."""


# -- corpus ---------------------------------------------------------------

class CorpusError(MadrsError):
    pass


class MalformedRecord(CorpusError):
    def __init__(self, line: int, reason: str, source: str | None = None):
        self.line = line
        self.reason = reason
        self.source = source
        where = f"{source}:{line}" if source else f"line {line}"
        super().__init__(f"{where}: {reason}")


class DuplicateInterviewId(CorpusError):
    def __init__(self, interview_id: str):
        self.interview_id = interview_id
        super().__init__(f"duplicate interview_id {interview_id!r}")


class MissingGroundTruthItem(CorpusError):
    def __init__(self, interview_id: str, missing: list[str]):
        self.interview_id = interview_id
        self.missing = missing
        super().__init__(
            f"interview {interview_id!r}: scores block is missing {', '.join(missing)}"
        )


class MissingGroundTruth(CorpusError):
    """Raised when metrics are requested for transcripts without clinician scores."""


# -- catalog / prompts ----------------------------------------------------

class CatalogError(MadrsError):
    pass


class EmptyContext(MadrsError):
    pass


class EmptyQuestion(MadrsError):
    pass


# -- segmentation ---------------------------------------------------------

class NoClinicianSpeech(MadrsError):
    def __init__(self, interview_id: str):
        self.interview_id = interview_id
        super().__init__(f"interview {interview_id!r} has no clinician utterances")


# -- assessment parsing ---------------------------------------------------

class AssessmentParseError(MadrsError):
    """A model response could not be turned into an item assessment."""


class MissingRating(AssessmentParseError):
    def __init__(self, detail: str = "no 'Rating' field with an integer value"):
        super().__init__(detail)


class RatingOutOfRange(AssessmentParseError):
    def __init__(self, value: int):
        self.value = value
        super().__init__(f"rating {value} outside 0-6")


# -- metrics --------------------------------------------------------------

class MetricError(MadrsError):
    pass


class LengthMismatch(MetricError):
    pass


class ConstantTruth(MetricError):
    pass


class ZeroBetweenTargetVariance(MetricError):
    pass


class MissingCell(MetricError):
    pass


# -- mixed model ----------------------------------------------------------

class ModelFitError(MadrsError):
    pass


class EmptyPatientGroup(ModelFitError):
    pass


class SingularDesign(ModelFitError):
    def __init__(self, columns: list[str]):
        self.columns = columns
        super().__init__(f"design matrix is rank deficient; collinear columns: {', '.join(columns)}")


class NonConvergence(ModelFitError):
    pass


# -- configuration --------------------------------------------------------

class ConfigError(MadrsError):
    pass
