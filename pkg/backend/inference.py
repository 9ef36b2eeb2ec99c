import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import geojson
import numpy as np
from pydantic import ValidationError
from tqdm import tqdm

from config import InferConfig
from errors import DataError
from mandatory import education_index, infer_mandatory
from models import (Activity, AnnotatedStayPoint, PoiClassification, PoiRecord, Provenance,
                    ScoredActivity, StayPoint)
from spatial_index import SpatialIndex
from temporal_profile import TemporalProfile, local_hour

logger = logging.getLogger(__name__)

NO_CANDIDATE_ACTIVITY = Activity.SOMETHING_ELSE
GEOJSON_PRECISION = 7      # decimal places, about 1 cm


@dataclass(frozen=True)
class CandidatePoi:
    poi_id: str
    distance_m: float
    prior: float


@dataclass(frozen=True)
class MatrixRow:
    candidate: CandidatePoi
    entries: Tuple[Tuple[Activity, float], ...]   # (code, score) in the classification's rank order


@dataclass(frozen=True)
class ActivityScoreMatrix:
    """Candidate POIs x their ranked activities, scored P(hour|A)·P(A|p)·P(p)"""
    rows: Tuple[MatrixRow, ...]
    hour: int

    def cells(self) -> Iterable[Tuple[MatrixRow, Activity, float]]:
        for row in self.rows:
            for code, score in row.entries:
                yield row, code, score

    def __len__(self) -> int:
        return sum(len(row.entries) for row in self.rows)


@dataclass(frozen=True)
class Selection:
    activity: Activity
    matched_poi: str
    score: float
    ranked_alternatives: List[ScoredActivity]


def poi_prior(distances_m: Sequence[float], kernel_sd_m: float) -> np.ndarray:
    """
    Prior over candidate POIs from their distances to the stay point.

    prior_k ∝ exp(-d_k² / (2·kernel_sd_m²)), normalized to sum to 1. The
    smallest squared distance is subtracted first so far candidates do not
    underflow to an all-zero vector.
    """
    d2 = np.square(np.asarray(distances_m, dtype=float))
    if d2.size == 0:
        raise ValueError("poi_prior needs at least one candidate")
    weights = np.exp(-(d2 - d2.min()) / (2.0 * kernel_sd_m ** 2))
    return weights / weights.sum()


def score_activities(hour: int, candidates: Sequence[Tuple[CandidatePoi, PoiClassification]],
                     profile: TemporalProfile) -> ActivityScoreMatrix:
    """
    Score every (candidate POI, ranked activity) pair.

    score = P(hour | A) · P(A | p) · P(p); no renormalization across the
    matrix.

    Raises:
        ProfileMissingCode: an activity in the classifications has no profile bins
    """
    rows = []
    for candidate, classification in candidates:
        entries = tuple(
            (ranked.code,
             profile.prob(ranked.code, hour) * ranked.probability * candidate.prior)
            for ranked in classification.top3
        )
        rows.append(MatrixRow(candidate, entries))
    return ActivityScoreMatrix(rows=tuple(rows), hour=hour)


def _rank_key(row: MatrixRow, code: Activity, score: float):
    return (-score, row.candidate.distance_m, int(code))


def select_activity(matrix: ActivityScoreMatrix) -> Selection:
    """
    Pick the highest-scoring (POI, activity) pair.

    Ties go to the nearer POI, then the lower activity code. The ranked
    alternatives are the three best distinct activities, each scored by its
    best cell.
    """
    cells = sorted(matrix.cells(), key=lambda cell: _rank_key(*cell))
    if not cells:
        raise ValueError("cannot select from an empty score matrix")

    best_row, best_code, best_score = cells[0]
    alternatives: List[ScoredActivity] = []
    seen = set()
    for _, code, score in cells:
        if code in seen:
            continue
        seen.add(code)
        alternatives.append(ScoredActivity(code=code, score=score))
        if len(alternatives) == 3:
            break

    return Selection(
        activity=best_code,
        matched_poi=best_row.candidate.poi_id,
        score=best_score,
        ranked_alternatives=alternatives,
    )


class ActivityInferencer:
    """
    Annotates stay points with activities.

    Holds the immutable lookup state (spatial index over classified POIs,
    education index, temporal profile) and can be shared across workers.
    """

    def __init__(self, records: Sequence[PoiRecord],
                 classifications: Dict[str, PoiClassification],
                 profile: TemporalProfile, infer_config: Optional[InferConfig] = None):
        self.config = infer_config or InferConfig()
        self.profile = profile
        self.classifications = classifications
        classified = [r for r in records if r.id in classifications]
        unclassified = len(records) - len(classified)
        if unclassified:
            logger.warning("%d POIs have no classification and are not indexed", unclassified)
        self.index = SpatialIndex.from_pois(classified)
        self.education = education_index(classified, classifications)

    def _no_candidate(self, sp: StayPoint) -> AnnotatedStayPoint:
        return AnnotatedStayPoint(
            stay=sp,
            activity=NO_CANDIDATE_ACTIVITY,
            score=0.0,
            ranked_alternatives=[ScoredActivity(code=NO_CANDIDATE_ACTIVITY, score=0.0)],
            provenance=Provenance.BAYESIAN,
            no_candidate=True,
        )

    def annotate_person(self, history: Sequence[StayPoint]) -> List[AnnotatedStayPoint]:
        """Mandatory pass over the whole history, then Bayesian scoring for the rest"""
        cfg = self.config
        mandatory = infer_mandatory(history, self.education, cfg)

        annotated: List[Optional[AnnotatedStayPoint]] = [None] * len(history)
        remaining = []
        for i, sp in enumerate(history):
            label = mandatory.label_for_stay(i)
            if label is None:
                remaining.append(i)
                continue
            annotated[i] = AnnotatedStayPoint(
                stay=sp,
                activity=label,
                matched_poi=mandatory.matched_poi_for_stay(i),
                score=1.0,
                ranked_alternatives=[ScoredActivity(code=label, score=1.0)],
                provenance=Provenance.MANDATORY_RULE,
            )

        nearby = self.index.query_many([history[i].lon for i in remaining],
                                       [history[i].lat for i in remaining],
                                       cfg.radius_m, cfg.k)
        for i, found in zip(remaining, nearby):
            sp = history[i]
            if not len(found):
                annotated[i] = self._no_candidate(sp)
                continue
            priors = poi_prior(found.distances_m, cfg.kernel_sd_m)
            candidates = [
                (CandidatePoi(poi_id, dist, float(prior)), self.classifications[poi_id])
                for poi_id, dist, prior in zip(found.poi_ids, found.distances_m, priors)
            ]
            hour = local_hour(sp.t_start, cfg.utc_offset_hours)
            selection = select_activity(score_activities(hour, candidates, self.profile))
            annotated[i] = AnnotatedStayPoint(
                stay=sp,
                activity=selection.activity,
                matched_poi=selection.matched_poi,
                score=selection.score,
                ranked_alternatives=selection.ranked_alternatives,
                provenance=Provenance.BAYESIAN,
            )
        return annotated

    def annotate(self, stays: Sequence[StayPoint], workers: int = 1,
                 show_progress: Optional[bool] = None) -> List[AnnotatedStayPoint]:
        """
        Annotate stay points of any number of people.

        People are processed independently; the output keeps input order.
        The progress bar defaults to on when stderr is a terminal.
        """
        if show_progress is None:
            show_progress = sys.stderr.isatty()
        by_person: Dict[str, List[int]] = {}
        for i, sp in enumerate(stays):
            by_person.setdefault(sp.person_id, []).append(i)
        groups = list(by_person.values())

        def run(indices: List[int]) -> List[AnnotatedStayPoint]:
            return self.annotate_person([stays[i] for i in indices])

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                per_person = list(tqdm(executor.map(run, groups), total=len(groups),
                                       desc="Annotating", disable=not show_progress))
        else:
            per_person = [run(g) for g in tqdm(groups, desc="Annotating",
                                                disable=not show_progress)]

        result: List[Optional[AnnotatedStayPoint]] = [None] * len(stays)
        for indices, annotations in zip(groups, per_person):
            for i, annotation in zip(indices, annotations):
                result[i] = annotation

        no_candidate = sum(a.no_candidate for a in result)
        mandatory = sum(a.provenance is Provenance.MANDATORY_RULE for a in result)
        if no_candidate:
            logger.warning("%d of %d stay points had no POI within %.0f m",
                           no_candidate, len(stays), self.config.radius_m)
        logger.info("Annotated %d stay points of %d people (%d by mandatory rules)",
                    len(stays), len(groups), mandatory)
        return result


def annotate(stays: Sequence[StayPoint], records: Sequence[PoiRecord],
             classifications: Dict[str, PoiClassification], profile: TemporalProfile,
             infer_config: Optional[InferConfig] = None, workers: int = 1) -> List[AnnotatedStayPoint]:
    inferencer = ActivityInferencer(records, classifications, profile, infer_config)
    return inferencer.annotate(stays, workers=workers)


def write_annotations(annotations: Iterable[AnnotatedStayPoint], path: str) -> int:
    count = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for annotation in annotations:
            fh.write(json.dumps(annotation.to_record(), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_annotations(path: str) -> List[AnnotatedStayPoint]:
    annotations = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for number, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    annotations.append(AnnotatedStayPoint.from_record(json.loads(line)))
                except (ValueError, KeyError, TypeError, ValidationError) as e:
                    raise DataError(f"bad annotation on line {number}: {e}", path=str(path))
    except FileNotFoundError:
        raise DataError(f"annotation file not found: {path}", path=str(path))
    return annotations


def annotations_to_geojson(annotations: Iterable[AnnotatedStayPoint]) -> geojson.FeatureCollection:
    """FeatureCollection of Points carrying the annotation record as properties"""
    features = []
    for annotation in annotations:
        properties = annotation.to_record()
        lon, lat = properties.pop("lon"), properties.pop("lat")
        features.append(geojson.Feature(geometry=geojson.Point((lon, lat), precision=GEOJSON_PRECISION),
                                        properties=properties))
    return geojson.FeatureCollection(features)


def write_annotations_geojson(annotations: Iterable[AnnotatedStayPoint], path: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        geojson.dump(annotations_to_geojson(annotations), fh, ensure_ascii=False)
