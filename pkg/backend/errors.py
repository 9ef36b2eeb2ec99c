from typing import List, Optional


class AnnotatorError(Exception):
    """Base class for every error the annotator raises on purpose"""

    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.path = path

    def to_record(self) -> dict:
        """Machine-readable form written to stderr by the CLI"""
        record = {"error": type(self).__name__, "message": self.message}
        if self.path:
            record["path"] = self.path
        return record


class ConfigError(AnnotatorError):
    """Invalid configuration; carries every violation found"""

    exit_code = 1

    def __init__(self, violations: List[str], path: Optional[str] = None):
        super().__init__("; ".join(violations), path)
        self.violations = list(violations)

    def to_record(self) -> dict:
        record = super().to_record()
        record["violations"] = self.violations
        return record


class DataError(AnnotatorError):
    exit_code = 2


class PoiFormatError(DataError):
    """Unreadable POI file or unparseable header"""


class DatasetQualityError(DataError):
    """Too many rows of a POI file violated record invariants"""


class TrajectoryError(DataError):
    pass


class ProfileError(DataError):
    pass


class ProfileMissingCode(ProfileError):
    def __init__(self, code: int):
        super().__init__(f"Temporal profile has no bins for activity code {code}")
        self.code = code


class AlignmentError(DataError):
    """Predictions and ground truth do not line up"""


class MissingPredictionError(AlignmentError):
    pass


class ResponseParseError(DataError):
    """A backend reply could not be turned into a valid classification"""

    def __init__(self, message: str, poi_id: Optional[str] = None):
        super().__init__(message)
        self.poi_id = poi_id

    def with_poi(self, poi_id: str) -> "ResponseParseError":
        self.poi_id = poi_id
        self.message = f"[{poi_id}] {self.message}"
        self.args = (self.message,)
        return self


class NoPairsFound(ResponseParseError):
    pass


class InvalidCode(ResponseParseError):
    pass


class InvalidProbability(ResponseParseError):
    pass


class BackendError(AnnotatorError):
    exit_code = 3


class TransientBackendError(BackendError):
    """Failure worth retrying (timeouts, rate limits, 5xx)"""


class BackendUnavailable(BackendError):
    pass


class BatchAbortedError(BackendError):
    def __init__(self, message: str, failures: Optional[list] = None):
        super().__init__(message)
        self.failures = failures or []
