import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config import StayPointConfig
from errors import TrajectoryError
from geo import haversine_m
from models import GpsPoint, StayPoint, Trajectory

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["person_id", "timestamp", "lon", "lat"]


def extract_staypoints(traj: Trajectory, dist_threshold_m: float = 200.0,
                       min_duration_s: float = 600.0) -> List[StayPoint]:
    """
    Detect dwell episodes in one trajectory.

    A run starts at an anchor point and extends while each following point
    stays within dist_threshold_m of the anchor. A run spanning at least
    min_duration_s becomes a StayPoint at the mean lon/lat of its points and
    the scan resumes after it; otherwise the anchor advances by one point.

    Args:
        traj: time-ordered GPS points of one person
        dist_threshold_m: maximum distance from the anchor, meters
        min_duration_s: minimum run span, seconds

    Returns:
        Stay points in time order; empty for fewer than two points
    """
    if dist_threshold_m <= 0 or min_duration_s <= 0:
        raise ValueError("dist_threshold_m and min_duration_s must be positive")

    n = len(traj.points)
    if n < 2:
        return []
    t = np.array([p.t for p in traj.points])
    lons = np.array([p.lon for p in traj.points])
    lats = np.array([p.lat for p in traj.points])

    stays: List[StayPoint] = []
    i = 0
    while i < n - 1:
        anchor = (lons[i], lats[i])
        j = i + 1
        while j < n and haversine_m(anchor, (lons[j], lats[j])) <= dist_threshold_m:
            j += 1
        if t[j - 1] - t[i] >= min_duration_s:
            stays.append(StayPoint(
                person_id=traj.person_id,
                t_S=float(t[i]),
                t_E=float(t[j - 1]),
                lon=float(lons[i:j].mean()),
                lat=float(lats[i:j].mean()),
            ))
            i = j
        else:
            i += 1
    return stays


def extract_all(trajectories: Iterable[Trajectory],
                staypoint_config: Optional[StayPointConfig] = None,
                workers: int = 1) -> List[StayPoint]:
    """Stay points of every trajectory, concatenated in input order"""
    cfg = staypoint_config or StayPointConfig()
    trajectories = list(trajectories)

    def run(traj: Trajectory) -> List[StayPoint]:
        return extract_staypoints(traj, cfg.dist_threshold_m, cfg.min_duration_s)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            per_person = list(executor.map(run, trajectories))
    else:
        per_person = [run(traj) for traj in trajectories]

    stays = [sp for person_stays in per_person for sp in person_stays]
    logger.info("Extracted %d stay points from %d trajectories", len(stays), len(trajectories))
    return stays


def _to_seconds(column: pd.Series, path: str) -> pd.Series:
    """Numeric UTC seconds as-is; ISO-8601 strings converted to UTC seconds"""
    numeric = pd.to_numeric(column, errors="coerce")
    if not numeric.isna().any():
        return numeric.astype(float)
    try:
        stamps = pd.to_datetime(column, utc=True, format="ISO8601")
    except (ValueError, TypeError) as e:
        raise TrajectoryError(f"unparseable timestamps: {e}", path=path)
    if stamps.isna().any():
        raise TrajectoryError("missing timestamps", path=path)
    return (stamps - pd.Timestamp(0, tz="UTC")) / pd.Timedelta(seconds=1)


def read_trajectories_csv(path: str) -> List[Trajectory]:
    """
    Load `person_id,timestamp,lon,lat` rows, grouped by person in order of
    first appearance.

    Raises:
        TrajectoryError: missing columns, bad values, or timestamps of a
            person that are not strictly increasing
    """
    path = str(path)
    try:
        frame = pd.read_csv(path, dtype={"person_id": str}, keep_default_na=False)
    except FileNotFoundError:
        raise TrajectoryError(f"trajectory file not found: {path}", path=path)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise TrajectoryError(f"unreadable trajectory file: {e}", path=path)
    except pd.errors.EmptyDataError:
        return []

    missing = [c for c in TRAJECTORY_COLUMNS if c not in frame.columns]
    if missing:
        raise TrajectoryError(f"trajectory file lacks columns {missing}", path=path)
    if frame.empty:
        return []

    frame["timestamp"] = _to_seconds(frame["timestamp"].astype(str), path)
    for column in ("lon", "lat"):
        frame[column] = pd.to_numeric(frame[column], errors="coerce")
    if frame[["lon", "lat"]].isna().any().any():
        raise TrajectoryError("trajectory file has missing or non-numeric coordinates", path=path)

    trajectories = []
    for person_id, group in frame.groupby("person_id", sort=False):
        try:
            points = [GpsPoint(t=t, lon=lon, lat=lat) for t, lon, lat in
                      zip(group["timestamp"], group["lon"], group["lat"])]
            trajectories.append(Trajectory(person_id=str(person_id), points=points))
        except ValidationError as e:
            message = e.errors()[0]["msg"].removeprefix("Value error, ")
            raise TrajectoryError(f"person {person_id!r}: {message}", path=path)
    logger.info("Loaded %d trajectories (%d points) from %s",
                len(trajectories), len(frame), path)
    return trajectories


def write_trajectories_csv(trajectories: Iterable[Trajectory], path: str):
    rows = [(traj.person_id, p.t, p.lon, p.lat) for traj in trajectories for p in traj.points]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS).to_csv(path, index=False)


def write_staypoints(stays: Iterable[StayPoint], path: str) -> int:
    """JSON-lines {person_id, t_S, t_E, lon, lat}"""
    count = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sp in stays:
            fh.write(json.dumps(sp.to_record(), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_staypoints(path: str) -> List[StayPoint]:
    stays = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for number, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    stays.append(StayPoint.model_validate(json.loads(line)))
                except (ValueError, ValidationError) as e:
                    raise TrajectoryError(f"bad stay point on line {number}: {e}", path=str(path))
    except FileNotFoundError:
        raise TrajectoryError(f"stay-point file not found: {path}", path=str(path))
    return stays
