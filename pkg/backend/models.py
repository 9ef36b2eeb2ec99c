from enum import Enum, IntEnum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

PROBABILITY_TOLERANCE = 1e-9


class Activity(IntEnum):
    """Visit-purpose taxonomy shared by classification and inference"""
    HOME = 1
    WORK = 2
    SCHOOL = 3
    CAREGIVING = 4
    BUY_GOODS = 5
    BUY_SERVICES = 6
    BUY_MEALS = 7
    GENERAL_ERRANDS = 8
    RECREATIONAL = 9
    EXERCISE = 10
    VISIT_FRIENDS = 11
    HEALTH_CARE = 12
    RELIGIOUS = 13
    SOMETHING_ELSE = 14
    DROP_OFF_PICK_UP = 15

    @property
    def label(self) -> str:
        return ACTIVITY_LABELS[self]

    @property
    def is_mandatory(self) -> bool:
        return self in MANDATORY_ACTIVITIES


ACTIVITY_LABELS: Dict[Activity, str] = {
    Activity.HOME: "Home",
    Activity.WORK: "Work",
    Activity.SCHOOL: "School",
    Activity.CAREGIVING: "Caregiving",
    Activity.BUY_GOODS: "Buy goods",
    Activity.BUY_SERVICES: "Buy services",
    Activity.BUY_MEALS: "Buy meals",
    Activity.GENERAL_ERRANDS: "General errands",
    Activity.RECREATIONAL: "Recreational",
    Activity.EXERCISE: "Exercise",
    Activity.VISIT_FRIENDS: "Visit friends",
    Activity.HEALTH_CARE: "Health care",
    Activity.RELIGIOUS: "Religious",
    Activity.SOMETHING_ELSE: "Something else",
    Activity.DROP_OFF_PICK_UP: "Drop off/Pick up",
}

MANDATORY_ACTIVITIES = frozenset({Activity.HOME, Activity.WORK, Activity.SCHOOL})
NON_MANDATORY_ACTIVITIES = [a for a in Activity if a not in MANDATORY_ACTIVITIES]


def check_lon(value: float) -> float:
    if not -180.0 <= value <= 180.0:
        raise ValueError(f"longitude {value} outside [-180, 180]")
    return value


def check_lat(value: float) -> float:
    if not -90.0 <= value <= 90.0:
        raise ValueError(f"latitude {value} outside [-90, 90]")
    return value


class PoiRecord(BaseModel):
    """One point of interest with sparse descriptive tags"""
    model_config = ConfigDict(frozen=True)

    id: str
    name: Optional[str] = None
    lon: float
    lat: float
    features: Dict[str, Optional[str]] = {}  # tag name -> value, e.g. {"amenity": "restaurant"}

    @field_validator("lon")
    @classmethod
    def validate_lon(cls, value: float) -> float:
        return check_lon(value)

    @field_validator("lat")
    @classmethod
    def validate_lat(cls, value: float) -> float:
        return check_lat(value)

    @model_validator(mode="after")
    def check_name_or_features(self) -> "PoiRecord":
        has_features = any(v not in (None, "") for v in self.features.values())
        if not self.name and not has_features:
            raise ValueError("record has neither a name nor any feature value")
        return self

    def present_features(self) -> Dict[str, str]:
        """Feature tags that actually carry a value, in insertion order"""
        return {k: v for k, v in self.features.items() if v not in (None, "")}


class Rejection(BaseModel):
    model_config = ConfigDict(frozen=True)

    row: int      # 1-based data row (header excluded)
    reason: str


class PoiDataset(BaseModel):
    """An ordered, validated POI collection; immutable once built"""
    model_config = ConfigDict(frozen=True)

    records: List[PoiRecord] = []
    source: str = ""
    feature_tags: List[str] = []           # declared feature columns, file order
    rejections: List[Rejection] = []

    @model_validator(mode="after")
    def check_unique_ids(self) -> "PoiDataset":
        seen = set()
        for record in self.records:
            if record.id in seen:
                raise ValueError(f"duplicate POI id {record.id!r}")
            seen.add(record.id)
        return self

    def __len__(self) -> int:
        return len(self.records)

    def by_id(self) -> Dict[str, PoiRecord]:
        return {r.id: r for r in self.records}


class RankedActivity(BaseModel):
    """An activity code with the probability a classifier assigned it"""
    model_config = ConfigDict(frozen=True)

    code: Activity
    probability: float


class PoiClassification(BaseModel):
    """Top-3 activity classification of one POI, best first"""
    model_config = ConfigDict(frozen=True)

    poi_id: str = ""
    top3: List[RankedActivity]
    raw_response: str = ""
    reordered: bool = False   # reply listed probabilities out of order
    retries: int = 0          # transient backend failures absorbed

    @model_validator(mode="after")
    def check_invariants(self) -> "PoiClassification":
        if not 1 <= len(self.top3) <= 3:
            raise ValueError(f"top3 must hold 1-3 entries, got {len(self.top3)}")
        probs = [entry.probability for entry in self.top3]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"probabilities must lie in [0, 1]: {probs}")
        if any(a < b for a, b in zip(probs, probs[1:])):
            raise ValueError(f"probabilities must be non-increasing: {probs}")
        if sum(probs) > 1.0 + PROBABILITY_TOLERANCE:
            raise ValueError(f"probabilities sum to {sum(probs)} > 1")
        codes = [entry.code for entry in self.top3]
        if len(set(codes)) != len(codes):
            raise ValueError(f"activity codes must be distinct: {codes}")
        return self

    @property
    def top1(self) -> Activity:
        return self.top3[0].code

    def to_record(self) -> dict:
        """Output-file form: {poi_id, top3: [{code, prob}, ...]}"""
        return {
            "poi_id": self.poi_id,
            "top3": [{"code": int(e.code), "prob": e.probability} for e in self.top3],
        }

    @classmethod
    def from_record(cls, record: dict) -> "PoiClassification":
        return cls(
            poi_id=str(record["poi_id"]),
            top3=[RankedActivity(code=e["code"], probability=e["prob"]) for e in record["top3"]],
        )


class CategoryDescription(BaseModel):
    model_config = ConfigDict(frozen=True)

    code: Activity
    definition: str
    example: str


class PromptSpec(BaseModel):
    """The three prompt components: task, categories, dataset hints"""
    model_config = ConfigDict(frozen=True)

    task_description: str
    category_descriptions: List[CategoryDescription]
    dataset_hints: List[str] = []

    @model_validator(mode="after")
    def check_all_codes_once(self) -> "PromptSpec":
        codes = [c.code for c in self.category_descriptions]
        if sorted(codes) != sorted(Activity):
            missing = sorted(set(Activity) - set(codes))
            duplicated = sorted({c for c in codes if codes.count(c) > 1})
            raise ValueError(
                f"category descriptions must cover all 15 codes exactly once "
                f"(missing={[int(c) for c in missing]}, duplicated={[int(c) for c in duplicated]})"
            )
        return self


class GpsPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    t: float     # UTC seconds
    lon: float
    lat: float

    @field_validator("lon")
    @classmethod
    def validate_lon(cls, value: float) -> float:
        return check_lon(value)

    @field_validator("lat")
    @classmethod
    def validate_lat(cls, value: float) -> float:
        return check_lat(value)


class Trajectory(BaseModel):
    model_config = ConfigDict(frozen=True)

    person_id: str
    points: List[GpsPoint]

    @model_validator(mode="after")
    def check_strictly_increasing(self) -> "Trajectory":
        for prev, cur in zip(self.points, self.points[1:]):
            if cur.t <= prev.t:
                raise ValueError(
                    f"timestamps of person {self.person_id!r} not strictly increasing at t={cur.t}"
                )
        return self


class StayPoint(BaseModel):
    """A dwell episode: start, end and centroid"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    person_id: str = ""
    t_start: float = Field(alias="t_S")
    t_end: float = Field(alias="t_E")
    lon: float
    lat: float

    @field_validator("lon")
    @classmethod
    def validate_lon(cls, value: float) -> float:
        return check_lon(value)

    @field_validator("lat")
    @classmethod
    def validate_lat(cls, value: float) -> float:
        return check_lat(value)

    @model_validator(mode="after")
    def check_ordered(self) -> "StayPoint":
        if not self.t_start < self.t_end:
            raise ValueError(f"stay point must satisfy t_S < t_E, got {self.t_start} >= {self.t_end}")
        return self

    @property
    def duration_s(self) -> float:
        return self.t_end - self.t_start

    def to_record(self) -> dict:
        return self.model_dump(by_alias=True)


class Provenance(str, Enum):
    MANDATORY_RULE = "mandatory_rule"
    BAYESIAN = "bayesian"


class ScoredActivity(BaseModel):
    model_config = ConfigDict(frozen=True)

    code: Activity
    score: float = Field(ge=0.0)


class AnnotatedStayPoint(BaseModel):
    """A stay point with its inferred activity and the evidence behind it"""
    model_config = ConfigDict(frozen=True)

    stay: StayPoint
    activity: Activity
    matched_poi: Optional[str] = None
    score: float
    ranked_alternatives: List[ScoredActivity]
    provenance: Provenance
    no_candidate: bool = False

    @model_validator(mode="after")
    def check_consistent(self) -> "AnnotatedStayPoint":
        scores = [alt.score for alt in self.ranked_alternatives]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError(f"ranked alternatives must be non-increasing: {scores}")
        if self.provenance is Provenance.BAYESIAN:
            if not self.ranked_alternatives or self.ranked_alternatives[0].code != self.activity:
                raise ValueError("bayesian activity must equal the first ranked alternative")
        return self

    def to_record(self) -> dict:
        """Annotation-file form, one JSON object per stay point"""
        return {
            "person_id": self.stay.person_id,
            "t_S": self.stay.t_start,
            "t_E": self.stay.t_end,
            "lon": self.stay.lon,
            "lat": self.stay.lat,
            "activity": int(self.activity),
            "label": self.activity.label,
            "matched_poi": self.matched_poi,
            "score": self.score,
            "alternatives": [{"code": int(a.code), "score": a.score} for a in self.ranked_alternatives],
            "provenance": self.provenance.value,
            "no_candidate": self.no_candidate,
        }

    @classmethod
    def from_record(cls, record: dict) -> "AnnotatedStayPoint":
        return cls(
            stay=StayPoint(
                person_id=str(record["person_id"]),
                t_S=record["t_S"],
                t_E=record["t_E"],
                lon=record["lon"],
                lat=record["lat"],
            ),
            activity=record["activity"],
            matched_poi=record.get("matched_poi"),
            score=record["score"],
            ranked_alternatives=[ScoredActivity(code=a["code"], score=a["score"])
                                 for a in record.get("alternatives", [])],
            provenance=record["provenance"],
            no_candidate=record.get("no_candidate", False),
        )
