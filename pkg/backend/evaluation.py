import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from sklearn.metrics import f1_score

from config import NoiseConfig
from errors import AlignmentError, DataError, MissingPredictionError
from geo import meters_to_degrees
from models import (ACTIVITY_LABELS, MANDATORY_ACTIVITIES, Activity, AnnotatedStayPoint,
                    PoiClassification, PoiDataset, StayPoint)

logger = logging.getLogger(__name__)

METRIC_TOLERANCE = 1e-9


# --- noise -----------------------------------------------------------------

def add_noise(lons: Sequence[float], lats: Sequence[float], cfg: NoiseConfig,
              seed: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Shift coordinates by independent Gaussian offsets of SD cfg.sd_m meters
    per axis.

    Meters become degrees with dlat = m / 111,320 and
    dlon = m / (111,320 * cos lat). The generator is seeded with cfg.seed,
    falling back to `seed`, so equal seeds give equal perturbations.
    """
    lons = np.asarray(lons, dtype=float)
    lats = np.asarray(lats, dtype=float)
    if cfg.sd_m == 0:
        return lons.copy(), lats.copy()

    rng = np.random.default_rng(cfg.seed if cfg.seed is not None else seed)
    dx = rng.normal(0.0, cfg.sd_m, size=lons.shape)
    dy = rng.normal(0.0, cfg.sd_m, size=lats.shape)
    dlon, dlat = meters_to_degrees(dx, dy, lats)
    noisy_lats = np.clip(lats + dlat, -90.0, 90.0)
    noisy_lons = (lons + dlon + 180.0) % 360.0 - 180.0
    return noisy_lons, noisy_lats


def perturb_pois(ds: PoiDataset, cfg: NoiseConfig, seed: Optional[int] = None) -> PoiDataset:
    lons, lats = add_noise([r.lon for r in ds.records], [r.lat for r in ds.records], cfg, seed)
    records = [r.model_copy(update={"lon": float(lon), "lat": float(lat)})
               for r, lon, lat in zip(ds.records, lons, lats)]
    return ds.model_copy(update={"records": records})


def perturb_staypoints(stays: Sequence[StayPoint], cfg: NoiseConfig,
                       seed: Optional[int] = None) -> List[StayPoint]:
    lons, lats = add_noise([s.lon for s in stays], [s.lat for s in stays], cfg, seed)
    return [s.model_copy(update={"lon": float(lon), "lat": float(lat)})
            for s, lon, lat in zip(stays, lons, lats)]


# --- report model ----------------------------------------------------------

class PerTypeMetrics(BaseModel):
    acc1: float = Field(ge=0.0, le=1.0)
    f1: float = Field(ge=0.0, le=1.0)
    support: int = Field(ge=0)


class SliceMetrics(BaseModel):
    acc_at: List[float]
    count: int = Field(ge=0)


class EvalReport(BaseModel):
    """
    Classification and/or inference metrics of one evaluation run.

    Either half may be absent. All rates are fractions in [0, 1].
    """
    model_config = ConfigDict(frozen=True)

    # POI classification
    accuracy: Optional[float] = None
    hit_at: Optional[List[float]] = None
    macro_f1: Optional[float] = None
    classified: int = 0

    # stay-point inference
    acc_at: Optional[List[float]] = None
    per_type: Dict[int, PerTypeMetrics] = {}
    slices: Dict[str, SliceMetrics] = {}
    annotated: int = 0
    noise_sd_m: float = 0.0

    @model_validator(mode="after")
    def check_metrics(self) -> "EvalReport":
        rates = []
        if self.hit_at is not None:
            if len(self.hit_at) != 3:
                raise ValueError("hit_at must hold three rates")
            if self.accuracy is None or abs(self.accuracy - sum(self.hit_at)) > METRIC_TOLERANCE:
                raise ValueError(f"accuracy {self.accuracy} != sum of hit_at {sum(self.hit_at)}")
            rates += [*self.hit_at, self.accuracy]
        if self.macro_f1 is not None:
            rates.append(self.macro_f1)
        for acc in [self.acc_at] + [s.acc_at for s in self.slices.values()]:
            if acc is None:
                continue
            if len(acc) != 3:
                raise ValueError("acc_at must hold three rates")
            if not acc[0] <= acc[1] <= acc[2]:
                raise ValueError(f"acc_at must be non-decreasing: {acc}")
            rates += acc
        if any(not -METRIC_TOLERANCE <= r <= 1.0 + METRIC_TOLERANCE for r in rates):
            raise ValueError(f"metrics must lie in [0, 1]: {rates}")
        return self

    def save(self, path: str):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.model_dump_json(indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str) -> "EvalReport":
        try:
            return cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"report file not found: {path}", path=str(path))
        except ValidationError as e:
            raise DataError(f"invalid report {path}: {e}", path=str(path))


# --- metrics ---------------------------------------------------------------

def _macro_f1(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    labels = sorted(set(y_true) | set(y_pred))
    if not labels:
        return 0.0
    return float(f1_score(y_true, y_pred, labels=labels, average="macro", zero_division=0))


def classification_metrics(preds: Dict[str, PoiClassification],
                           truth: Dict[str, Activity]) -> EvalReport:
    """
    Hit@n, Accuracy and macro-F1 of POI classifications.

    Hit@n counts POIs whose rank-n prediction is the truth; Accuracy is
    their sum. For F1 a POI's predicted label is the matched code on a hit,
    otherwise the rank-1 code.

    Raises:
        MissingPredictionError: a truth POI has no prediction
    """
    missing = [poi_id for poi_id in truth if poi_id not in preds]
    if missing:
        raise MissingPredictionError(
            f"{len(missing)} truth POIs have no prediction, e.g. {missing[:5]}"
        )

    hits = [0, 0, 0]
    y_true, y_pred = [], []
    for poi_id, code in truth.items():
        ranked = [entry.code for entry in preds[poi_id].top3]
        code = Activity(code)
        if code in ranked:
            hits[ranked.index(code)] += 1
            y_pred.append(int(code))
        else:
            y_pred.append(int(ranked[0]))
        y_true.append(int(code))

    n = len(truth)
    hit_at = [h / n for h in hits] if n else [0.0, 0.0, 0.0]
    return EvalReport(
        accuracy=sum(hits) / n if n else 0.0,
        hit_at=hit_at,
        macro_f1=_macro_f1(y_true, y_pred),
        classified=n,
    )


class TruthStay(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    person_id: str
    t_start: float = Field(alias="t_S")
    code: Activity

    @property
    def key(self) -> Tuple[str, int]:
        return self.person_id, round(self.t_start)


def _acc_at(ranks: Sequence[Optional[int]]) -> List[float]:
    """ranks hold the 0-based position of the truth in the alternatives, or None"""
    if not ranks:
        return [0.0, 0.0, 0.0]
    return [sum(r is not None and r < k for r in ranks) / len(ranks) for k in (1, 2, 3)]


def inference_metrics(annotations: Sequence[AnnotatedStayPoint], truth: Sequence[TruthStay],
                      noise_sd_m: float = 0.0) -> EvalReport:
    """
    Acc@1/2/3 overall and per slice, plus per-type Acc@1 and F1.

    Annotations and truth are aligned on (person_id, rounded t_S). Acc@k
    counts truth codes found among the first k ranked alternatives; per-type
    scores use the rank-1 activity.

    Raises:
        AlignmentError: duplicate truth keys
        MissingPredictionError: a truth stay has no annotation
    """
    by_key: Dict[Tuple[str, int], AnnotatedStayPoint] = {}
    for annotation in annotations:
        by_key[(annotation.stay.person_id, round(annotation.stay.t_start))] = annotation

    seen = set()
    for item in truth:
        if item.key in seen:
            raise AlignmentError(f"duplicate truth stay {item.key}")
        seen.add(item.key)
    missing = [item.key for item in truth if item.key not in by_key]
    if missing:
        raise MissingPredictionError(
            f"{len(missing)} truth stays have no annotation, e.g. {missing[:5]}"
        )
    extra = len(by_key.keys() - seen)
    if extra:
        logger.warning("%d annotations have no truth record and are not scored", extra)

    ranks: List[Optional[int]] = []
    y_true, y_pred = [], []
    for item in truth:
        annotation = by_key[item.key]
        codes = [alt.code for alt in annotation.ranked_alternatives]
        ranks.append(codes.index(item.code) if item.code in codes else None)
        y_true.append(int(item.code))
        y_pred.append(int(annotation.activity))

    slices = {}
    for name, keep in (("all", lambda c: True),
                       ("mandatory", lambda c: c in MANDATORY_ACTIVITIES),
                       ("non_mandatory", lambda c: c not in MANDATORY_ACTIVITIES)):
        picked = [r for r, item in zip(ranks, truth) if keep(item.code)]
        slices[name] = SliceMetrics(acc_at=_acc_at(picked), count=len(picked))

    per_type = {}
    labels = sorted(set(y_true) | set(y_pred))
    if labels:
        f1s = f1_score(y_true, y_pred, labels=labels, average=None, zero_division=0)
        for code, f1 in zip(labels, f1s):
            support = sum(t == code for t in y_true)
            correct = sum(t == code and p == code for t, p in zip(y_true, y_pred))
            per_type[code] = PerTypeMetrics(
                acc1=correct / support if support else 0.0, f1=float(f1), support=support
            )

    return EvalReport(
        acc_at=_acc_at(ranks),
        per_type=per_type,
        slices=slices,
        annotated=len(truth),
        noise_sd_m=noise_sd_m,
    )


def merge_reports(classification: Optional[EvalReport],
                  inference: Optional[EvalReport]) -> EvalReport:
    fields = {}
    for part in (classification, inference):
        if part is not None:
            fields.update(part.model_dump(exclude_unset=True))
    return EvalReport.model_validate(fields)


# --- tables ----------------------------------------------------------------

def classification_table(report: EvalReport) -> str:
    """Hit@1..3, Accuracy and macro-F1 in percent"""
    rows = [(f"Hit@{n}", rate) for n, rate in enumerate(report.hit_at or [], start=1)]
    if report.accuracy is not None:
        rows.append(("Accuracy", report.accuracy))
    if report.macro_f1 is not None:
        rows.append(("Macro-F1", report.macro_f1))
    return "\n".join(f"{name:<10} {100 * value:6.1f}" for name, value in rows)


def noise_table(reports: Sequence[EvalReport], slice_name: str = "non_mandatory") -> str:
    """One column per report (noise level), rows Acc@1..3 of a slice"""
    reports = sorted(reports, key=lambda r: r.noise_sd_m)
    header = f"{'noise SD':<10}" + "".join(f"{f'{r.noise_sd_m:g} m':>10}" for r in reports)
    lines = [header]
    for k in range(3):
        values = []
        for r in reports:
            acc = r.slices[slice_name].acc_at if slice_name in r.slices else r.acc_at
            values.append(f"{100 * acc[k]:10.1f}" if acc else f"{'-':>10}")
        lines.append(f"{f'Acc@{k + 1}':<10}" + "".join(values))
    return "\n".join(lines)


def per_type_frame(report: EvalReport) -> pd.DataFrame:
    rows = [
        {"code": code, "activity": ACTIVITY_LABELS[Activity(code)],
         "acc1": m.acc1, "f1": m.f1, "support": m.support}
        for code, m in sorted(report.per_type.items())
    ]
    return pd.DataFrame(rows, columns=["code", "activity", "acc1", "f1", "support"])


def per_type_table(report: EvalReport) -> str:
    frame = per_type_frame(report)
    if frame.empty:
        return "(no annotated stays)"
    lines = [f"{'activity':<18} {'Acc@1':>7} {'F1':>7} {'n':>6}"]
    for row in frame.itertuples(index=False):
        lines.append(f"{row.activity:<18} {100 * row.acc1:7.1f} {100 * row.f1:7.1f} {row.support:6d}")
    support = frame["support"].sum()
    if support:
        average = (frame["acc1"] * frame["support"]).sum() / support
        lines.append(f"{'Average':<18} {100 * average:7.1f}")
    return "\n".join(lines)


def write_per_type_csv(report: EvalReport, path: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    per_type_frame(report).to_csv(path, index=False)


def render_report(report: EvalReport) -> str:
    sections = []
    if report.hit_at is not None:
        sections.append(f"POI classification ({report.classified} POIs)\n"
                        + classification_table(report))
    if report.acc_at is not None:
        lines = [f"Activity inference ({report.annotated} stays, noise SD {report.noise_sd_m:g} m)"]
        for name, s in report.slices.items():
            lines.append(f"{name:<14} n={s.count:<6} "
                         + " ".join(f"Acc@{k + 1} {100 * a:5.1f}" for k, a in enumerate(s.acc_at)))
        sections.append("\n".join(lines))
        sections.append(per_type_table(report))
    return "\n\n".join(sections)


# --- truth files -----------------------------------------------------------

def _read_jsonl(path: str) -> Iterable[Tuple[int, dict]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for number, line in enumerate(fh, start=1):
                if line.strip():
                    try:
                        yield number, json.loads(line)
                    except ValueError as e:
                        raise DataError(f"line {number} is not JSON: {e}", path=str(path))
    except FileNotFoundError:
        raise DataError(f"truth file not found: {path}", path=str(path))


def _write_jsonl(records: Iterable[dict], path: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_truth_pois(path: str) -> Dict[str, Activity]:
    """JSON-lines {poi_id, code}"""
    truth = {}
    for number, record in _read_jsonl(path):
        try:
            truth[str(record["poi_id"])] = Activity(int(record["code"]))
        except (KeyError, ValueError, TypeError) as e:
            raise DataError(f"bad truth POI on line {number}: {e}", path=str(path))
    return truth


def write_truth_pois(truth: Dict[str, Activity], path: str):
    _write_jsonl(({"poi_id": poi_id, "code": int(code)} for poi_id, code in truth.items()), path)


def read_truth_stays(path: str) -> List[TruthStay]:
    """JSON-lines {person_id, t_S, code}"""
    truth = []
    for number, record in _read_jsonl(path):
        try:
            truth.append(TruthStay.model_validate(record))
        except ValidationError as e:
            raise DataError(f"bad truth stay on line {number}: {e}", path=str(path))
    return truth


def write_truth_stays(truth: Iterable[TruthStay], path: str):
    _write_jsonl(({"person_id": t.person_id, "t_S": t.t_start, "code": int(t.code)}
                  for t in truth), path)
