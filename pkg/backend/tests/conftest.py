"""
Shared pytest fixtures and path setup for backend tests.
All tests run from backend/ directory context.
"""
import sys
import os

# Add the backend directory to sys.path so imports work
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import pytest
from config import PathsConfig, PipelineConfig
from models import Activity, PoiClassification, PoiDataset, PoiRecord, RankedActivity, StayPoint


MONDAY = 1_704_067_200      # 2024-01-01 00:00 UTC
DAY = 86_400
HOUR = 3_600

SAMPLE_POIS = [
    PoiRecord(id="p1", name="KFC", lon=31.2357, lat=30.0444,
              features={"amenity": "restaurant", "building": None, "landuse": None}),
    PoiRecord(id="p2", name="Carrefour", lon=31.2360, lat=30.0450,
              features={"amenity": "marketplace", "building": None, "landuse": None}),
    PoiRecord(id="p3", name="مطعم الشرق", lon=31.2400, lat=30.0500,
              features={"amenity": None, "building": None, "landuse": None}),
    PoiRecord(id="p4", name=None, lon=31.2500, lat=30.0600,
              features={"amenity": "toilets", "building": None, "landuse": None}),
    PoiRecord(id="p5", name="Cairo University", lon=31.2100, lat=30.0270,
              features={"amenity": "university", "building": None, "landuse": None}),
]


def classification(poi_id, *pairs):
    """PoiClassification from (code, probability) pairs"""
    return PoiClassification(
        poi_id=poi_id,
        top3=[RankedActivity(code=code, probability=p) for code, p in pairs],
    )


def stay(day, start_hour, end_hour, lon, lat, person_id="u1"):
    """Stay point on day `day` (0 = Monday 2024-01-01) between two clock hours"""
    return StayPoint(
        person_id=person_id,
        t_S=MONDAY + day * DAY + start_hour * HOUR,
        t_E=MONDAY + day * DAY + end_hour * HOUR,
        lon=lon,
        lat=lat,
    )


@pytest.fixture
def sample_dataset():
    return PoiDataset(records=SAMPLE_POIS, source="sample.csv",
                      feature_tags=["amenity", "building", "landuse"])


@pytest.fixture
def poi_csv(tmp_path):
    """Small POI CSV with one bad row (latitude out of range)"""
    path = tmp_path / "pois.csv"
    path.write_text(
        "id,name,lon,lat,amenity,building,landuse\n"
        "p1,KFC,31.2357,30.0444,restaurant,,\n"
        "p2,Carrefour,31.2360,30.0450,marketplace,,\n"
        "p3,Bad Row,31.2400,95.0,cafe,,\n"
        "p4,,31.2500,30.0600,toilets,,\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture
def pipeline_config(tmp_path):
    """PipelineConfig writing every artifact under tmp_path"""
    return PipelineConfig(output_dir=str(tmp_path / "out"), paths=PathsConfig())


@pytest.fixture
def restaurant_classification():
    return classification("p1", (Activity.BUY_MEALS, 0.7), (Activity.BUY_GOODS, 0.2),
                          (Activity.SOMETHING_ELSE, 0.1))
