import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import pandas as pd
from pydantic import ValidationError

from config import PoiConfig
from errors import DatasetQualityError, PoiFormatError
from models import PoiDataset, PoiRecord, Rejection

logger = logging.getLogger(__name__)

# (row number, id, name, lon text, lat text, features) before validation
_RawRow = Tuple[int, str, Optional[str], Any, Any, Dict[str, str]]

# first cell of a row the CSV reader could not split into the header's columns
_BAD_LINE = "\x00bad-line:"


def _flag_bad_line(fields: List[str]) -> List[str]:
    """Replace a row with too many fields by a marker carrying its field count"""
    return [f"{_BAD_LINE}{len(fields)}"]


@dataclass
class CompletenessReport:
    """Missing-value rates of a POI dataset's feature tags"""
    records: int
    per_feature: Dict[str, float] = field(default_factory=dict)
    overall: float = 0.0

    def to_table(self) -> str:
        lines = [f"{'feature':<20} {'missing':>8}"]
        for tag, rate in self.per_feature.items():
            lines.append(f"{tag:<20} {rate:>8.1%}")
        lines.append(f"{'overall':<20} {self.overall:>8.1%}")
        lines.append(f"({self.records} records)")
        return "\n".join(lines)


class PoiProcessor:
    """Parses POI extracts (CSV or GeoJSON) into validated datasets"""

    def __init__(self, poi_config: Optional[PoiConfig] = None):
        self.poi_config = poi_config or PoiConfig()

    def parse_poi_file(self, path: str, format: str = "auto",
                       source: Optional[str] = None) -> PoiDataset:
        """
        Parse a POI file into a PoiDataset.

        Rows that violate record invariants are kept out of the dataset and
        reported in `dataset.rejections`.

        Args:
            path: CSV or GeoJSON file
            format: "csv", "geojson" or "auto" (by file suffix)
            source: dataset label; defaults to the file name

        Raises:
            PoiFormatError: unreadable file or unparseable header
            DatasetQualityError: more than max_reject_fraction of rows rejected
        """
        path = str(path)
        if format == "auto":
            format = "geojson" if Path(path).suffix.lower() in (".geojson", ".json") else "csv"
        if format == "csv":
            feature_tags, rows = self._read_csv(path)
        elif format == "geojson":
            feature_tags, rows = self._read_geojson(path)
        else:
            raise PoiFormatError(f"unsupported POI format {format!r}", path=path)

        dataset = self._build_dataset(rows, feature_tags, source or Path(path).name)
        total = len(dataset.records) + len(dataset.rejections)
        if total and len(dataset.rejections) / total > self.poi_config.max_reject_fraction:
            raise DatasetQualityError(
                f"{len(dataset.rejections)} of {total} POI rows rejected "
                f"(limit {self.poi_config.max_reject_fraction:.0%}); first reason: "
                f"{dataset.rejections[0].reason}",
                path=path,
            )
        if dataset.rejections:
            logger.warning("Rejected %d of %d POI rows from %s",
                           len(dataset.rejections), total, path)
        logger.info("Parsed %d POIs from %s", len(dataset.records), path)
        return dataset

    def _read_csv(self, path: str) -> Tuple[List[str], List[_RawRow]]:
        cfg = self.poi_config
        try:
            # blank and over-long lines stay in place so row numbers match the file
            df = pd.read_csv(path, dtype=object, keep_default_na=False, na_filter=False,
                             encoding="utf-8", engine="python", skip_blank_lines=False,
                             on_bad_lines=_flag_bad_line)
        except pd.errors.EmptyDataError:
            return [], []
        except FileNotFoundError:
            raise PoiFormatError(f"POI file not found: {path}", path=path)
        except (pd.errors.ParserError, UnicodeDecodeError) as e:
            raise PoiFormatError(f"cannot parse POI file {path}: {e}", path=path)
        except OSError as e:
            raise PoiFormatError(f"cannot read POI file {path}: {e}", path=path)

        header = list(df.columns)
        missing = [c for c in (cfg.lon_column, cfg.lat_column) if c not in header]
        if missing:
            raise PoiFormatError(
                f"POI header {header} lacks coordinate column(s) {missing}", path=path
            )

        core = {cfg.id_column, cfg.name_column, cfg.lon_column, cfg.lat_column}
        if cfg.feature_columns:
            feature_tags = [c for c in header if c in cfg.feature_columns]
        else:
            feature_tags = [c for c in header if c not in core]

        def cell(row: Dict[str, Any], column: str) -> str:
            value = row.get(column, "")
            return value if isinstance(value, str) else ""

        rows: List[_RawRow] = []
        for number, row in enumerate(df.to_dict(orient="records"), start=1):
            first = cell(row, header[0])
            if first.startswith(_BAD_LINE):
                fields = first.removeprefix(_BAD_LINE)
                rows.append((number, "", None, None,
                             f"row has {fields} fields, header has {len(header)}", {}))
                continue
            if not any(cell(row, column).strip() for column in header):
                rows.append((number, "", None, None, "blank row", {}))
                continue
            poi_id = cell(row, cfg.id_column) if cfg.id_column in header else f"row{number}"
            name = cell(row, cfg.name_column) or None
            features = {tag: cell(row, tag) for tag in feature_tags if cell(row, tag)}
            rows.append((number, poi_id, name, cell(row, cfg.lon_column),
                         cell(row, cfg.lat_column), features))
        return feature_tags, rows

    def _read_geojson(self, path: str) -> Tuple[List[str], List[_RawRow]]:
        cfg = self.poi_config
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except FileNotFoundError:
            raise PoiFormatError(f"POI file not found: {path}", path=path)
        except (OSError, UnicodeDecodeError) as e:
            raise PoiFormatError(f"cannot read POI file {path}: {e}", path=path)
        if not text.strip():
            return [], []
        try:
            collection = json.loads(text)
        except json.JSONDecodeError as e:
            raise PoiFormatError(f"POI file {path} is not valid JSON: {e}", path=path)
        if not isinstance(collection, dict) or collection.get("type") != "FeatureCollection":
            raise PoiFormatError(f"POI file {path} is not a GeoJSON FeatureCollection", path=path)

        feature_tags: List[str] = []
        rows: List[_RawRow] = []
        for number, feature in enumerate(collection.get("features") or [], start=1):
            feature = feature if isinstance(feature, dict) else {}
            props = feature.get("properties") or {}
            geometry = feature.get("geometry") or {}
            poi_id = feature.get("id")
            if poi_id is None:
                poi_id = props.get(cfg.id_column, f"f{number}")
            name = props.get(cfg.name_column)

            features: Dict[str, str] = {}
            for key, value in props.items():
                if key in (cfg.id_column, cfg.name_column):
                    continue
                if key not in feature_tags:
                    feature_tags.append(key)
                text_value = _property_text(value)
                if text_value:
                    features[key] = text_value

            if geometry.get("type") != "Point":
                rows.append((number, str(poi_id), None, None,
                             f"unsupported geometry {geometry.get('type')!r}", {}))
                continue
            coords = geometry.get("coordinates") or []
            lon, lat = (coords[0], coords[1]) if len(coords) >= 2 else ("", "")
            rows.append((number, str(poi_id), _property_text(name) or None, lon, lat, features))
        return feature_tags, rows

    def _build_dataset(self, rows: Iterable[_RawRow], feature_tags: List[str],
                       source: str) -> PoiDataset:
        records: List[PoiRecord] = []
        rejections: List[Rejection] = []
        seen_ids = set()

        for number, poi_id, name, lon_text, lat_text, features in rows:
            if lon_text is None:
                # row-level problem already described in lat_text
                rejections.append(Rejection(row=number, reason=lat_text))
                continue
            reason = None
            if not poi_id:
                reason = "missing id"
            elif poi_id in seen_ids:
                reason = f"duplicate id {poi_id!r}"
            if reason is None:
                lon, reason = _parse_coordinate(lon_text, "longitude")
            if reason is None:
                lat, reason = _parse_coordinate(lat_text, "latitude")
            if reason is None:
                try:
                    records.append(PoiRecord(id=poi_id, name=name, lon=lon, lat=lat,
                                             features=features))
                    seen_ids.add(poi_id)
                except ValidationError as e:
                    reason = _first_reason(e)
            if reason is not None:
                rejections.append(Rejection(row=number, reason=reason))

        return PoiDataset(records=records, source=source, feature_tags=feature_tags,
                          rejections=rejections)


def _property_text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (dict, list)):
        return json.dumps(value, ensure_ascii=False, sort_keys=True)
    return str(value)


def _parse_coordinate(value: Any, axis: str) -> Tuple[Optional[float], Optional[str]]:
    if value is None or (isinstance(value, str) and not value.strip()):
        return None, f"missing {axis}"
    if isinstance(value, bool):
        return None, f"unparseable {axis} {value!r}"
    try:
        number = float(value)
    except (TypeError, ValueError):
        return None, f"unparseable {axis} {value!r}"
    if number != number or number in (float("inf"), float("-inf")):
        return None, f"non-finite {axis} {value!r}"
    return number, None


def _first_reason(exc: ValidationError) -> str:
    return exc.errors()[0]["msg"].removeprefix("Value error, ")


def parse_poi_file(path: str, format: str = "auto", poi_config: Optional[PoiConfig] = None,
                   source: Optional[str] = None) -> PoiDataset:
    return PoiProcessor(poi_config).parse_poi_file(path, format=format, source=source)


def write_poi_csv(ds: PoiDataset, path: str, poi_config: Optional[PoiConfig] = None) -> None:
    """Serialize a dataset so that parse_poi_file reads it back unchanged"""
    cfg = poi_config or PoiConfig()
    columns = [cfg.id_column, cfg.name_column, cfg.lon_column, cfg.lat_column, *ds.feature_tags]
    rows = []
    for record in ds.records:
        row = {
            cfg.id_column: record.id,
            cfg.name_column: record.name or "",
            cfg.lon_column: repr(record.lon),
            cfg.lat_column: repr(record.lat),
        }
        for tag in ds.feature_tags:
            row[tag] = record.features.get(tag) or ""
        rows.append(row)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=columns, dtype=str).to_csv(path, index=False, encoding="utf-8")


def write_rejects(rejections: Iterable[Rejection], path: str) -> int:
    """Write the `<row-number>\\t<reason>` sidecar; returns lines written"""
    count = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rejection in rejections:
            reason = rejection.reason.replace("\t", " ").replace("\n", " ")
            fh.write(f"{rejection.row}\t{reason}\n")
            count += 1
    return count


def completeness_report(ds: PoiDataset) -> CompletenessReport:
    """Fraction of records lacking each declared feature tag, plus the overall rate"""
    n = len(ds.records)
    tags = list(ds.feature_tags)
    for record in ds.records:
        for tag in record.features:
            if tag not in tags:
                tags.append(tag)
    if n == 0 or not tags:
        return CompletenessReport(records=n, per_feature={t: 0.0 for t in tags}, overall=0.0)

    missing_total = 0
    per_feature: Dict[str, float] = {}
    for tag in tags:
        missing = sum(1 for r in ds.records if r.features.get(tag) in (None, ""))
        per_feature[tag] = missing / n
        missing_total += missing
    return CompletenessReport(records=n, per_feature=per_feature,
                              overall=missing_total / (n * len(tags)))
