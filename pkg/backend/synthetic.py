"""
Synthetic ground-truth worlds for desk-scale evaluation.

POIs sit on a square grid. Every agent owns a home and either a workplace
or a school, and makes scripted non-mandatory visits to POIs of the
visited activity. Weekdays run home -> work/school -> home -> evening
visits (starting 19:00 or later) -> home; weekends are home plus daytime
visits. Each dwell becomes a ground-truth stay, and optionally a GPS trace
that dwells exactly on the POI.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import SynthConfig
from evaluation import TruthStay
from geo import haversine_m, meters_to_degrees
from models import (Activity, GpsPoint, PoiClassification, PoiDataset, PoiRecord,
                    RankedActivity, StayPoint, Trajectory)
from temporal_profile import TemporalProfile

logger = logging.getLogger(__name__)

EPOCH_MONDAY = 1_704_067_200        # 2024-01-01 00:00 UTC, a Monday
DAY_S = 86_400
HOUR_S = 3_600
TRAVEL_SPEED_MPS = 8.33             # ~30 km/h
TRANSIT_INTERVAL_S = 60
TRANSIT_CLEARANCE_M = 250.0         # no transit fixes this close to either end of a leg
POIS_PER_ACTIVITY = 3
MAX_VISIT_DRAWS = 20

VISIT_ACTIVITIES = [a for a in Activity
                    if a not in (Activity.HOME, Activity.WORK, Activity.SCHOOL)]

# (feature tag, tag value, name stem); chosen so the mock backend ranks the true code first
POI_TEMPLATES: Dict[Activity, Tuple[str, str, str]] = {
    Activity.HOME: ("building", "residential", "Residence"),
    Activity.WORK: ("building", "office", "Office"),
    Activity.SCHOOL: ("amenity", "school", "School"),
    Activity.CAREGIVING: ("amenity", "childcare", "Childcare"),
    Activity.BUY_GOODS: ("amenity", "marketplace", "Market"),
    Activity.BUY_SERVICES: ("amenity", "bank", "Bank"),
    Activity.BUY_MEALS: ("amenity", "restaurant", "Restaurant"),
    Activity.GENERAL_ERRANDS: ("amenity", "post_office", "Post office"),
    Activity.RECREATIONAL: ("amenity", "cinema", "Cinema"),
    Activity.EXERCISE: ("amenity", "gym", "Gym"),
    Activity.VISIT_FRIENDS: ("amenity", "social_centre", "Visitor lounge"),
    Activity.HEALTH_CARE: ("amenity", "clinic", "Clinic"),
    Activity.RELIGIOUS: ("amenity", "place_of_worship", "Chapel"),
    Activity.SOMETHING_ELSE: ("amenity", "toilets", "Toilets"),
    Activity.DROP_OFF_PICK_UP: ("amenity", "parking", "Drop-off point"),
}
FEATURE_TAGS = ["amenity", "building"]

WEEKDAY_VISIT_HOURS = range(19, 24)
WEEKEND_VISIT_HOURS = range(10, 20)


@dataclass
class Agent:
    person_id: str
    home: str
    anchor: str                    # workplace or school POI id
    anchor_activity: Activity


@dataclass
class Dwell:
    poi_id: str
    activity: Activity
    start: float
    end: float


@dataclass
class SyntheticWorld:
    pois: PoiDataset
    classifications: Dict[str, PoiClassification]
    truth_pois: Dict[str, Activity]
    agents: List[Agent]
    stays: List[StayPoint]                     # one per ground-truth dwell
    truth_stays: List[TruthStay]
    trajectories: List[Trajectory] = field(default_factory=list)


def _classify(code: Activity, rng: np.random.Generator) -> List[RankedActivity]:
    """True code ranked first with p in [0.6, 0.85), then two distractors"""
    p1 = rng.uniform(0.6, 0.85)
    rest = 1.0 - p1
    p2 = rest * rng.uniform(0.3, 0.6)
    p3 = min(p2, (rest - p2) * rng.uniform(0.2, 0.9))
    others = [a for a in Activity if a != code]
    d1, d2 = rng.choice(len(others), size=2, replace=False)
    return [
        RankedActivity(code=code, probability=float(p1)),
        RankedActivity(code=others[d1], probability=float(p2)),
        RankedActivity(code=others[d2], probability=float(p3)),
    ]


def _dominant_hours(classification: PoiClassification, profile: TemporalProfile,
                    hours: Sequence[int]) -> List[int]:
    """Hours at which the true (rank-1) code outscores the POI's other codes"""
    true = classification.top3[0]
    result = []
    for hour in hours:
        best = profile.prob(true.code, hour) * true.probability
        if all(profile.prob(o.code, hour) * o.probability < best
               for o in classification.top3[1:]):
            result.append(hour)
    return result


class WorldBuilder:
    def __init__(self, cfg: SynthConfig, seed: int, profile: TemporalProfile,
                 visit_activities: Sequence[Activity]):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.profile = profile
        self.visit_activities = list(visit_activities)
        self.records: Dict[str, PoiRecord] = {}
        self.classifications: Dict[str, PoiClassification] = {}
        self.by_activity: Dict[Activity, List[str]] = {}

    def build_pois(self) -> List[Agent]:
        cfg = self.cfg
        n_students = int(round(cfg.agents * cfg.student_share))
        n_workers = cfg.agents - n_students

        # Offices first and schools last keep workplaces far from education POIs
        layout: List[Activity] = (
            [Activity.WORK] * n_workers
            + [Activity.HOME] * cfg.agents
            + [a for a in self.visit_activities for _ in range(POIS_PER_ACTIVITY)]
            + [Activity.SCHOOL] * n_students
        )
        columns = math.ceil(math.sqrt(len(layout)))
        counters: Dict[Activity, int] = {}
        for cell, code in enumerate(layout):
            row, col = divmod(cell, columns)
            dlon, dlat = meters_to_degrees(col * cfg.spacing_m, row * cfg.spacing_m, cfg.origin_lat)
            counters[code] = counters.get(code, 0) + 1
            tag, value, stem = POI_TEMPLATES[code]
            poi_id = f"{code.name.lower()}_{counters[code]}"
            self.records[poi_id] = PoiRecord(
                id=poi_id,
                name=f"{stem} {counters[code]}",
                lon=cfg.origin_lon + float(dlon),
                lat=cfg.origin_lat + float(dlat),
                features={t: (value if t == tag else None) for t in FEATURE_TAGS},
            )
            self.classifications[poi_id] = PoiClassification(
                poi_id=poi_id, top3=_classify(code, self.rng)
            )
            self.by_activity.setdefault(code, []).append(poi_id)

        agents = []
        for i in range(cfg.agents):
            student = i >= n_workers
            anchor_activity = Activity.SCHOOL if student else Activity.WORK
            anchor = self.by_activity[anchor_activity][i - n_workers if student else i]
            agents.append(Agent(f"agent_{i + 1}", self.by_activity[Activity.HOME][i],
                                anchor, anchor_activity))
        return agents

    def travel_s(self, a: str, b: str) -> float:
        ra, rb = self.records[a], self.records[b]
        return max(1.0, haversine_m((ra.lon, ra.lat), (rb.lon, rb.lat)) / TRAVEL_SPEED_MPS)

    def pick_visit(self, hours: Sequence[int], here: str, ready: float, day_start: float
                   ) -> Optional[Tuple[str, Activity, float]]:
        """
        Choose a visit (POI, activity, arrival) reachable when leaving `here` at `ready`.

        In unambiguous mode the visit hour must be one where the POI's true
        code outscores its distractors; POIs without such an open hour are
        redrawn, up to MAX_VISIT_DRAWS times.
        """
        for _ in range(MAX_VISIT_DRAWS):
            code = self.visit_activities[self.rng.integers(len(self.visit_activities))]
            pois = self.by_activity[code]
            poi_id = pois[self.rng.integers(len(pois))]
            earliest = ready + self.travel_s(here, poi_id)

            open_hours = [h for h in hours if day_start + h * HOUR_S + 3000 > earliest]
            if self.cfg.unambiguous:
                open_hours = _dominant_hours(self.classifications[poi_id], self.profile, open_hours)
            if open_hours:
                break
        else:
            logger.debug("No visit slot after %d draws", MAX_VISIT_DRAWS)
            return None

        weights = np.array([self.profile.prob(code, h) for h in open_hours])
        hour = open_hours[self.rng.choice(len(open_hours), p=weights / weights.sum())]
        slot_start = max(day_start + hour * HOUR_S + 60, earliest)
        slot_end = day_start + hour * HOUR_S + 3000
        start = float(self.rng.uniform(slot_start, min(slot_end, slot_start + 600)))
        return poi_id, code, round(start)

    def schedule(self, agent: Agent) -> List[Dwell]:
        cfg = self.cfg
        dwells: List[Dwell] = []
        here, since = agent.home, float(EPOCH_MONDAY)

        def go(poi_id: str, depart: float):
            nonlocal here, since
            dwells.append(Dwell(here, self._activity_of(agent, here), since, depart))
            here, since = poi_id, float(round(depart + self.travel_s(here, poi_id)))

        for day in range(cfg.days):
            day_start = EPOCH_MONDAY + day * DAY_S
            if day % 7 < 5:
                student = agent.anchor_activity is Activity.SCHOOL
                leave_hour, end_hour = (7.5, 15.0) if student else (8.0, 17.0)
                go(agent.anchor, round(day_start + leave_hour * HOUR_S + self.rng.uniform(0, 1800)))
                go(agent.home, round(day_start + end_hour * HOUR_S + self.rng.uniform(0, 1800)))
                hours = WEEKDAY_VISIT_HOURS
            else:
                hours = WEEKEND_VISIT_HOURS

            for _ in range(cfg.visits_per_day):
                # at least 30 minutes at home before leaving again
                ready = since + 1800
                visit = self.pick_visit(hours, here, ready, day_start)
                if visit is None:
                    break
                poi_id, _, arrival = visit
                go(poi_id, max(ready, arrival - round(self.travel_s(here, poi_id))))
                go(agent.home, round(since + self.rng.uniform(1800, 3600)))

        end = max(float(EPOCH_MONDAY + cfg.days * DAY_S), since + HOUR_S)
        dwells.append(Dwell(here, self._activity_of(agent, here), since, end))
        return dwells

    def _activity_of(self, agent: Agent, poi_id: str) -> Activity:
        if poi_id == agent.home:
            return Activity.HOME
        if poi_id == agent.anchor:
            return agent.anchor_activity
        return self.classifications[poi_id].top1

    def trace(self, agent: Agent, dwells: List[Dwell]) -> Trajectory:
        """GPS fixes: every sample_interval_s while dwelling, every minute in transit"""
        interval = self.cfg.sample_interval_s
        points: List[GpsPoint] = []
        for i, dwell in enumerate(dwells):
            rec = self.records[dwell.poi_id]
            times = list(np.arange(dwell.start, dwell.end, interval)) + [dwell.end]
            points.extend(GpsPoint(t=float(t), lon=rec.lon, lat=rec.lat) for t in times)
            if i + 1 == len(dwells):
                break
            nxt = dwells[i + 1]
            dest = self.records[nxt.poi_id]
            leg = nxt.start - dwell.end
            for t in np.arange(dwell.end + TRANSIT_INTERVAL_S, nxt.start, TRANSIT_INTERVAL_S):
                frac = (t - dwell.end) / leg
                lon = rec.lon + frac * (dest.lon - rec.lon)
                lat = rec.lat + frac * (dest.lat - rec.lat)
                if (haversine_m((lon, lat), (rec.lon, rec.lat)) > TRANSIT_CLEARANCE_M
                        and haversine_m((lon, lat), (dest.lon, dest.lat)) > TRANSIT_CLEARANCE_M):
                    points.append(GpsPoint(t=float(t), lon=float(lon), lat=float(lat)))
        return Trajectory(person_id=agent.person_id, points=points)


def generate_synthetic_world(cfg: Optional[SynthConfig] = None, seed: int = 0,
                             profile: Optional[TemporalProfile] = None,
                             visit_activities: Optional[Sequence[Activity]] = None,
                             emit_traces: bool = True) -> SyntheticWorld:
    """
    Build a reproducible world: classified POIs, agents, ground truth, traces.

    Args:
        cfg: world size, grid spacing and visit script
        seed: equal seeds give identical worlds
        profile: start-hour distribution the visit hours are drawn from
        visit_activities: restrict scripted visits to these activities
        emit_traces: also synthesize GPS trajectories
    """
    cfg = cfg or SynthConfig()
    profile = profile or TemporalProfile.default()
    builder = WorldBuilder(cfg, seed, profile, visit_activities or VISIT_ACTIVITIES)
    agents = builder.build_pois()

    stays, truth, trajectories = [], [], []
    for agent in agents:
        dwells = builder.schedule(agent)
        for dwell in dwells:
            rec = builder.records[dwell.poi_id]
            stays.append(StayPoint(person_id=agent.person_id, t_S=dwell.start, t_E=dwell.end,
                                   lon=rec.lon, lat=rec.lat))
            truth.append(TruthStay(person_id=agent.person_id, t_S=dwell.start, code=dwell.activity))
        if emit_traces:
            trajectories.append(builder.trace(agent, dwells))

    records = list(builder.records.values())
    world = SyntheticWorld(
        pois=PoiDataset(records=records, source="synthetic", feature_tags=FEATURE_TAGS),
        classifications=builder.classifications,
        truth_pois={r.id: builder.classifications[r.id].top1 for r in records},
        agents=agents,
        stays=stays,
        truth_stays=truth,
        trajectories=trajectories,
    )
    logger.info("Synthetic world: %d POIs, %d agents, %d stays over %d days",
                len(records), len(agents), len(stays), cfg.days)
    return world
