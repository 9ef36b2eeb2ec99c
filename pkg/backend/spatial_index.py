import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import numpy as np
from sklearn.neighbors import BallTree

from geo import EARTH_RADIUS_M
from models import PoiRecord

logger = logging.getLogger(__name__)


@dataclass
class Candidates:
    """POIs within the query radius, nearest first"""
    poi_ids: List[str]
    distances_m: List[float]

    def __len__(self) -> int:
        return len(self.poi_ids)


class SpatialIndex:
    """
    Radius/K-nearest lookup over POI coordinates.

    Backed by a BallTree with the haversine metric, so distances are
    great-circle meters on the same sphere as geo.haversine_m. Immutable
    after construction and safe to share between threads.
    """

    def __init__(self, ids: Sequence[str], lons: Sequence[float], lats: Sequence[float]):
        self.ids = list(ids)
        coords = np.radians(np.column_stack([np.asarray(lats, dtype=float),
                                             np.asarray(lons, dtype=float)]))
        self._tree = BallTree(coords, metric="haversine") if len(self.ids) else None

    @classmethod
    def from_pois(cls, records: Iterable[PoiRecord]) -> "SpatialIndex":
        records = list(records)
        index = cls([r.id for r in records], [r.lon for r in records], [r.lat for r in records])
        logger.info("Indexed %d POIs", len(index))
        return index

    def __len__(self) -> int:
        return len(self.ids)

    def query(self, lon: float, lat: float, radius_m: float, k: int) -> Candidates:
        return self.query_many([lon], [lat], radius_m, k)[0]

    def query_many(self, lons: Sequence[float], lats: Sequence[float],
                   radius_m: float, k: int) -> List[Candidates]:
        """
        Batched radius query.

        For every probe returns exactly the POIs within radius_m, ordered by
        distance (ties by index order) and truncated to k.
        """
        if self._tree is None or len(lons) == 0:
            return [Candidates([], []) for _ in range(len(lons))]

        probes = np.radians(np.column_stack([np.asarray(lats, dtype=float),
                                             np.asarray(lons, dtype=float)]))
        indices, distances = self._tree.query_radius(
            probes, r=radius_m / EARTH_RADIUS_M, return_distance=True, sort_results=True
        )

        results = []
        for idx, dist in zip(indices, distances):
            dist_m = dist * EARTH_RADIUS_M
            order = np.lexsort((idx, dist_m))[:k]
            results.append(Candidates([self.ids[i] for i in idx[order]], dist_m[order].tolist()))
        return results
