"""
Periodicity rules for the mandatory activities (Home, Work, School).

A person's stay points are first merged into places. Each rule then counts
how often a place is visited inside a clock window:

    Home    most visits overlapping the off-hours window (19:00-08:00)
    Work    most weekday visits overlapping work hours (08:00-19:00) among
            non-Home places at least min_work_dist_m from Home; ties go to
            the place farther from Home
    School  most weekday work-hour visits among places within
            school_radius_m of a POI whose top-ranked activity is School

A place holds at most one label, assigned in the order Home, Work, School.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from config import InferConfig
from geo import haversine_m, haversine_m_vec
from models import Activity, PoiClassification, PoiRecord, StayPoint
from spatial_index import SpatialIndex

logger = logging.getLogger(__name__)

DAY_S = 86_400.0
HOUR_S = 3_600.0


@dataclass
class Place:
    """Stay points of one person merged within place_merge_m of an anchor"""
    index: int
    lon: float
    lat: float
    members: List[int] = field(default_factory=list)   # indices into the history


@dataclass
class MandatoryLabels:
    places: List[Place]
    labels: Dict[int, Activity]         # place index -> Home/Work/School
    assignment: List[int]               # stay index -> place index
    school_poi: Dict[int, str] = field(default_factory=dict)   # place index -> education POI id

    def label_for_stay(self, stay_index: int) -> Optional[Activity]:
        return self.labels.get(self.assignment[stay_index])

    def matched_poi_for_stay(self, stay_index: int) -> Optional[str]:
        return self.school_poi.get(self.assignment[stay_index])


def cluster_places(history: Sequence[StayPoint], place_merge_m: float = 50.0) -> List[Place]:
    """
    Merge stay points into places, scanning in input order.

    A stay joins the nearest existing place whose anchor (the coordinate of
    its first stay) lies within place_merge_m; otherwise it opens a new place.
    """
    places: List[Place] = []
    anchor_lons = np.empty(len(history))
    anchor_lats = np.empty(len(history))
    for i, sp in enumerate(history):
        if places:
            n = len(places)
            dists = haversine_m_vec(anchor_lons[:n], anchor_lats[:n], sp.lon, sp.lat)
            nearest = int(np.argmin(dists))
            if dists[nearest] <= place_merge_m:
                places[nearest].members.append(i)
                continue
        anchor_lons[len(places)] = sp.lon
        anchor_lats[len(places)] = sp.lat
        places.append(Place(index=len(places), lon=sp.lon, lat=sp.lat, members=[i]))
    return places


def _weekday(day: int) -> int:
    """Monday = 0; day 0 of the epoch was a Thursday"""
    return (day + 3) % 7


def overlaps_window(t_start: float, t_end: float, start_hour: float, end_hour: float,
                    utc_offset_hours: float = 0.0, weekdays_only: bool = False) -> bool:
    """
    True if [t_start, t_end] overlaps the daily clock window [start_hour, end_hour)
    by a positive amount on the local clock.

    A window with start_hour > end_hour wraps past midnight (19 -> 8 covers
    the night). With weekdays_only, only windows opening Monday-Friday count.
    """
    offset = utc_offset_hours * HOUR_S
    local_start, local_end = t_start + offset, t_end + offset
    wraps = start_hour > end_hour
    first_day = int(math.floor(local_start / DAY_S)) - 1
    last_day = int(math.floor(local_end / DAY_S))
    for day in range(first_day, last_day + 1):
        if weekdays_only and _weekday(day) >= 5:
            continue
        window_start = day * DAY_S + start_hour * HOUR_S
        window_end = (day + 1 if wraps else day) * DAY_S + end_hour * HOUR_S
        if max(local_start, window_start) < min(local_end, window_end):
            return True
    return False


def education_index(records: Sequence[PoiRecord],
                    classifications: Dict[str, PoiClassification]) -> SpatialIndex:
    """Index of POIs whose top-ranked activity is School"""
    schools = [r for r in records
               if r.id in classifications and classifications[r.id].top1 == Activity.SCHOOL]
    return SpatialIndex.from_pois(schools)


def _argmax_place(counts: Dict[int, int], tie_key) -> Optional[int]:
    if not counts:
        return None
    return max(counts, key=lambda idx: (counts[idx], tie_key(idx), -idx))


def infer_mandatory(history: Sequence[StayPoint], education: Optional[SpatialIndex] = None,
                    infer_config: Optional[InferConfig] = None) -> MandatoryLabels:
    """
    Label a person's places Home, Work or School.

    Args:
        history: every stay point of one person
        education: index of POIs whose top-1 classification is School
        infer_config: clock windows, radii and distances

    Returns:
        Places, the labels assigned to some of them, and the stay-to-place map.
        An empty history yields no places and no labels.
    """
    cfg = infer_config or InferConfig()
    places = cluster_places(history, cfg.place_merge_m)
    assignment = [0] * len(history)
    for place in places:
        for member in place.members:
            assignment[member] = place.index

    def count(place: Place, start_hour, end_hour, weekdays_only) -> int:
        return sum(
            overlaps_window(history[i].t_start, history[i].t_end, start_hour, end_hour,
                            cfg.utc_offset_hours, weekdays_only)
            for i in place.members
        )

    labels: Dict[int, Activity] = {}

    off_hours = {p.index: c for p in places
                 if (c := count(p, cfg.off_hours_start, cfg.off_hours_end, False)) > 0}
    home = _argmax_place(off_hours, tie_key=lambda idx: 0)
    if home is not None:
        labels[home] = Activity.HOME

    def home_distance(idx: int) -> float:
        if home is None:
            return 0.0
        return haversine_m((places[home].lon, places[home].lat),
                           (places[idx].lon, places[idx].lat))

    # Nearest education POI per place, if within school_radius_m
    school_poi: Dict[int, str] = {}
    school_dist: Dict[int, float] = {}
    if education is not None and len(education) and places:
        nearby = education.query_many([p.lon for p in places], [p.lat for p in places],
                                      cfg.school_radius_m, 1)
        for place, candidates in zip(places, nearby):
            if len(candidates):
                school_poi[place.index] = candidates.poi_ids[0]
                school_dist[place.index] = candidates.distances_m[0]

    work_hours = {p.index: count(p, cfg.work_hours_start, cfg.work_hours_end, True)
                  for p in places if p.index not in labels}
    work_hours = {idx: c for idx, c in work_hours.items() if c > 0}

    work_candidates = {
        idx: c for idx, c in work_hours.items()
        if idx not in school_poi and (home is None or home_distance(idx) >= cfg.min_work_dist_m)
    }
    work = _argmax_place(work_candidates, tie_key=home_distance)
    if work is not None:
        labels[work] = Activity.WORK

    school_candidates = {idx: c for idx, c in work_hours.items()
                         if idx in school_poi and idx not in labels}
    school = _argmax_place(school_candidates, tie_key=lambda idx: -school_dist[idx])
    if school is not None:
        labels[school] = Activity.SCHOOL

    logger.debug("Mandatory labels for %d stays over %d places: %s",
                 len(history), len(places), {i: a.label for i, a in labels.items()})
    return MandatoryLabels(
        places=places,
        labels=labels,
        assignment=assignment,
        school_poi={school: school_poi[school]} if school is not None else {},
    )
