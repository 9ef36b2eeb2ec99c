"""
Great-circle distance and small-offset conversions.

Coordinates are (lon, lat) in WGS84 degrees throughout the package.
"""
from math import asin, cos, radians, sin, sqrt
from typing import Tuple

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
# Meters per degree of latitude used for small offsets (equirectangular)
METERS_PER_DEGREE = 111_320.0

LonLat = Tuple[float, float]


def haversine_m(a: LonLat, b: LonLat) -> float:
    """Great-circle distance in meters between two (lon, lat) pairs"""
    lon1, lat1 = map(radians, a)
    lon2, lat2 = map(radians, b)
    h = sin((lat2 - lat1) / 2) ** 2 + cos(lat1) * cos(lat2) * sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * asin(min(1.0, sqrt(h)))


def haversine_m_vec(lons1, lats1, lons2, lats2) -> np.ndarray:
    """Vectorized haversine; inputs broadcast like numpy arrays"""
    lons1, lats1, lons2, lats2 = map(np.radians, (lons1, lats1, lons2, lats2))
    h = (np.sin((lats2 - lats1) / 2) ** 2
         + np.cos(lats1) * np.cos(lats2) * np.sin((lons2 - lons1) / 2) ** 2)
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def meters_to_degrees(dx_m, dy_m, lat):
    """
    Convert east/north offsets in meters to (dlon, dlat) degrees.

    Equirectangular approximation: dlat = m / 111,320 and
    dlon = m / (111,320 * cos(lat)). Adequate for offsets of tens of meters.
    """
    dlat = np.asarray(dy_m) / METERS_PER_DEGREE
    dlon = np.asarray(dx_m) / (METERS_PER_DEGREE * np.cos(np.radians(lat)))
    return dlon, dlat
