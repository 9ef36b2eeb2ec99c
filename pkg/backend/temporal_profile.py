import json
import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from errors import ProfileError, ProfileMissingCode
from models import Activity

logger = logging.getLogger(__name__)

HOURS = 24
PROFILE_TOLERANCE = 1e-9

# (peak hour, spread in hours, relative weight) per activity; mixed over a floor
_DEFAULT_BUMPS: Dict[Activity, List[Tuple[float, float, float]]] = {
    Activity.HOME: [(17.5, 2.5, 1.0), (12.0, 2.0, 0.3)],
    Activity.WORK: [(8.0, 1.5, 1.0), (13.0, 1.0, 0.3)],
    Activity.SCHOOL: [(8.0, 1.0, 1.0), (13.0, 1.0, 0.2)],
    Activity.CAREGIVING: [(8.0, 1.5, 0.8), (16.0, 1.5, 1.0)],
    Activity.BUY_GOODS: [(11.0, 2.5, 0.8), (17.0, 2.5, 1.0)],
    Activity.BUY_SERVICES: [(10.0, 2.0, 1.0), (15.0, 2.0, 0.8)],
    Activity.BUY_MEALS: [(12.0, 1.2, 1.0), (18.5, 1.5, 0.9)],
    Activity.GENERAL_ERRANDS: [(10.0, 2.0, 0.8), (16.0, 2.0, 1.0)],
    Activity.RECREATIONAL: [(14.0, 3.0, 0.8), (19.5, 2.0, 1.0)],
    Activity.EXERCISE: [(7.0, 1.5, 0.8), (18.0, 1.5, 1.0)],
    Activity.VISIT_FRIENDS: [(14.0, 2.5, 0.6), (19.0, 2.0, 1.0)],
    Activity.HEALTH_CARE: [(10.0, 2.0, 1.0), (14.5, 1.5, 0.7)],
    Activity.RELIGIOUS: [(10.0, 1.5, 1.0), (19.0, 1.5, 0.6)],
    Activity.SOMETHING_ELSE: [(12.0, 5.0, 1.0)],
    Activity.DROP_OFF_PICK_UP: [(7.5, 1.0, 1.0), (15.5, 1.2, 0.9)],
}
_DEFAULT_FLOOR = 0.01


def local_hour(t: float, utc_offset_hours: float = 0.0) -> int:
    """Hour of day (0-23) of a UTC timestamp on the local clock"""
    return int(math.floor((t + utc_offset_hours * 3600.0) / 3600.0)) % HOURS


def _checked_sample(code, t, row: int, source: Optional[str]) -> Tuple[Activity, float]:
    where = f"sample row {row}" + (f" of {source}" if source else "")
    try:
        number = float(code)
        activity = Activity(int(number))
        if number != int(number):
            raise ValueError
    except (TypeError, ValueError, OverflowError):
        raise ProfileError(f"{where}: activity code {code!r} is not one of 1..{len(Activity)}",
                           path=source)
    try:
        start = float(t)
    except (TypeError, ValueError):
        start = math.nan
    if not math.isfinite(start):
        raise ProfileError(f"{where}: start time {t!r} is not a finite number", path=source)
    return activity, start


class TemporalProfile(BaseModel):
    """
    Start-hour distribution per activity: P(hour | activity) in 24 bins.

    Each activity's bins are non-negative and sum to 1. Activities absent
    from `bins` are simply not covered; asking for them raises
    ProfileMissingCode.
    """
    model_config = ConfigDict(frozen=True)

    bins: Dict[Activity, List[float]]

    @model_validator(mode="after")
    def check_bins(self) -> "TemporalProfile":
        errors = []
        for code, values in self.bins.items():
            if len(values) != HOURS:
                errors.append(f"code {int(code)}: expected {HOURS} bins, got {len(values)}")
            elif any(v < 0 or not math.isfinite(v) for v in values):
                errors.append(f"code {int(code)}: bins must be finite and non-negative")
            elif abs(sum(values) - 1.0) > PROFILE_TOLERANCE:
                errors.append(f"code {int(code)}: bins sum to {sum(values)!r}, not 1")
        if errors:
            raise ValueError("; ".join(errors))
        return self

    def covers(self, code: Activity) -> bool:
        return code in self.bins

    def prob(self, code: Activity, hour: int) -> float:
        """P(hour | code)"""
        values = self.bins.get(code)
        if values is None:
            raise ProfileMissingCode(int(code))
        return values[hour]

    @classmethod
    def default(cls) -> "TemporalProfile":
        """
        Synthetic stand-in for a survey-derived profile.

        Every activity is a mixture of one or two circular Gaussian bumps
        around plausible start hours (morning commute for Work, lunch and
        dinner for Buy meals, ...) over a small floor, so no hour has zero
        probability.
        """
        hours = np.arange(HOURS, dtype=float)
        bins = {}
        for code, bumps in _DEFAULT_BUMPS.items():
            density = np.full(HOURS, _DEFAULT_FLOOR)
            for peak, spread, weight in bumps:
                offset = np.abs(hours - peak)
                offset = np.minimum(offset, HOURS - offset)
                density += weight * np.exp(-0.5 * (offset / spread) ** 2)
            bins[code] = (density / density.sum()).tolist()
        return cls(bins=bins)

    @classmethod
    def uniform(cls, codes: Optional[Iterable[Activity]] = None) -> "TemporalProfile":
        codes = list(Activity) if codes is None else list(codes)
        return cls(bins={Activity(c): [1.0 / HOURS] * HOURS for c in codes})

    @classmethod
    def fit(cls, samples: Iterable[Tuple[int, float]], smoothing: float = 1.0,
            utc_offset_hours: float = 0.0, source: Optional[str] = None) -> "TemporalProfile":
        """
        Estimate P(hour | activity) from (activity code, start time) records.

        Counts per hour get `smoothing` added before normalizing. With
        smoothing > 0 every activity is covered (unseen ones come out
        uniform); with smoothing == 0 only observed activities are.

        Raises:
            ProfileError: negative smoothing, or a sample whose code is not
                1..15 or whose time is not a finite number (names the
                1-based sample row and `source`)
        """
        if smoothing < 0:
            raise ProfileError(f"smoothing must be >= 0, got {smoothing}", path=source)
        counts: Dict[Activity, np.ndarray] = defaultdict(lambda: np.zeros(HOURS))
        total = 0
        for row, (code, t) in enumerate(samples, start=1):
            activity, start = _checked_sample(code, t, row, source)
            counts[activity][local_hour(start, utc_offset_hours)] += 1
            total += 1

        codes = list(Activity) if smoothing > 0 else sorted(counts)
        bins = {}
        for code in codes:
            smoothed = counts[code] + smoothing
            bins[code] = (smoothed / smoothed.sum()).tolist()
        logger.info("Fitted temporal profile from %d samples over %d activities",
                    total, len(bins))
        return cls(bins=bins)

    def to_json(self) -> dict:
        return {str(int(code)): values for code, values in sorted(self.bins.items())}

    def save(self, path: str):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path: str) -> "TemporalProfile":
        """
        Read a profile file: JSON {code: [24 floats]}.

        Raises:
            ProfileError: missing file, bad JSON, or invalid bins (message names the path)
        """
        path = str(path)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except FileNotFoundError:
            raise ProfileError(f"profile file not found: {path}", path=path)
        except ValueError as e:
            raise ProfileError(f"profile file {path} is not valid JSON: {e}", path=path)

        if not isinstance(payload, dict):
            raise ProfileError(f"profile file {path} must hold a JSON object", path=path)
        try:
            bins = {Activity(int(code)): [float(v) for v in values]
                    for code, values in payload.items()}
            return cls(bins=bins)
        except ValidationError as e:
            message = e.errors()[0]["msg"].removeprefix("Value error, ")
            raise ProfileError(f"invalid profile {path}: {message}", path=path)
        except (ValueError, TypeError) as e:
            raise ProfileError(f"invalid profile {path}: {e}", path=path)
