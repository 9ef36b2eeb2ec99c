import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from backends import CompletionBackend, create_backend
from classification_cache import ClassificationCache
from config import Config, PipelineConfig
from config import config as env_config
from errors import DataError, ProfileError
from evaluation import (EvalReport, classification_metrics, classification_table,
                        inference_metrics, merge_reports, noise_table, per_type_table,
                        perturb_pois, perturb_staypoints, read_truth_pois, read_truth_stays,
                        render_report, write_per_type_csv, write_truth_pois, write_truth_stays)
from inference import (ActivityInferencer, read_annotations, write_annotations,
                       write_annotations_geojson)
from models import Provenance, StayPoint
from poi_classifier import BatchResult, PoiClassifier, read_classifications, write_classifications
from poi_processor import completeness_report, parse_poi_file, write_poi_csv, write_rejects
from prompt_builder import default_prompt_spec
from staypoints import (extract_all, read_staypoints, read_trajectories_csv,
                        write_staypoints, write_trajectories_csv)
from synthetic import generate_synthetic_world
from temporal_profile import TemporalProfile

logger = logging.getLogger(__name__)


class AnnotationPipeline:
    """Main orchestrator: POI classification, stay points, inference, evaluation"""

    def __init__(self, pipeline_config: PipelineConfig, env: Config = env_config,
                 backend: Optional[CompletionBackend] = None):
        self.config = pipeline_config
        self.env = env
        self._backend = backend

    def path(self, name: str) -> Path:
        return self.config.path_for(name)

    @property
    def output_dir(self) -> Path:
        return Path(self.config.output_dir)

    @property
    def backend(self) -> CompletionBackend:
        if self._backend is None:
            mock_rules = self.config.paths.mock_rules
            self._backend = create_backend(self.config.classify.backend, self.env, mock_rules)
        return self._backend

    def load_pois(self):
        ds = parse_poi_file(str(self.path("pois")), self.config.poi.format, self.config.poi)
        if ds.rejections:
            rejects = self.output_dir / "poi_rejects.tsv"
            write_rejects(ds.rejections, str(rejects))
            logger.warning("Wrote %d rejected POI rows to %s", len(ds.rejections), rejects)
        return ds

    def classify(self) -> Dict:
        """Classify every POI; the cache makes an interrupted run resumable"""
        ds = self.load_pois()
        cfg = self.config.classify
        spec = default_prompt_spec(cfg.hints, cfg.hint_presets)
        cache = ClassificationCache(str(self.path("cache")))
        classifier = PoiClassifier(spec, self.backend, cache, cfg)
        result: BatchResult = classifier.classify_batch(ds)

        out = self.path("classifications")
        write_classifications(result.classifications, str(out))
        if result.failures:
            failures = self.output_dir / "classify_failures.jsonl"
            failures.parent.mkdir(parents=True, exist_ok=True)
            with open(failures, "w", encoding="utf-8") as fh:
                for failure in result.failures:
                    fh.write(json.dumps(asdict(failure), ensure_ascii=False) + "\n")

        completeness = completeness_report(ds)
        return {
            "pois": len(ds),
            "rejected": len(ds.rejections),
            "classified": len(result.classifications),
            "failed": len(result.failures),
            "backend_calls": result.backend_calls,
            "cache_hits": result.cache_hits,
            "missing_feature_rate": round(completeness.overall, 4),
            "output": str(out),
        }

    def staypoints(self) -> Dict:
        trajectories = read_trajectories_csv(str(self.path("trajectories")))
        stays = extract_all(trajectories, self.config.staypoints, self.config.workers)
        out = self.path("staypoints")
        write_staypoints(stays, str(out))
        return {"trajectories": len(trajectories), "staypoints": len(stays), "output": str(out)}

    def load_stays(self) -> List[StayPoint]:
        """Stay-point file if present, else extracted from the trajectory file"""
        path = self.path("staypoints")
        if path.exists():
            return read_staypoints(str(path))
        logger.info("No stay-point file at %s; extracting from trajectories", path)
        trajectories = read_trajectories_csv(str(self.path("trajectories")))
        return extract_all(trajectories, self.config.staypoints, self.config.workers)

    @staticmethod
    def _annotation_meta(annotations_path: Path) -> Path:
        return annotations_path.with_suffix(".meta.json")

    def _annotation_noise(self) -> float:
        """Noise SD the current annotation file was produced under"""
        meta = self._annotation_meta(self.path("annotations"))
        if meta.exists():
            return float(json.loads(meta.read_text()).get("noise_sd_m", 0.0))
        return self.config.noise.sd_m

    def load_profile(self) -> TemporalProfile:
        return TemporalProfile.load(str(self.path("profile")))

    def infer(self) -> Dict:
        cfg = self.config
        profile = self.load_profile()
        ds = self.load_pois()
        classifications = read_classifications(str(self.path("classifications")))
        stays = self.load_stays()

        noise = cfg.noise
        if noise.sd_m > 0:
            seed = cfg.stage_seed("noise")
            if noise.target == "pois":
                ds = perturb_pois(ds, noise, seed)
            else:
                stays = perturb_staypoints(stays, noise, seed)
            logger.info("Perturbed %s with %.1f m Gaussian noise", noise.target, noise.sd_m)

        inferencer = ActivityInferencer(ds.records, classifications, profile, cfg.infer)
        annotations = inferencer.annotate(stays, workers=cfg.workers)

        out = self.path("annotations")
        write_annotations(annotations, str(out))
        self._annotation_meta(out).write_text(json.dumps({"noise_sd_m": noise.sd_m,
                                                          "noise_target": noise.target}))
        summary = {
            "staypoints": len(stays),
            "mandatory": sum(a.provenance is Provenance.MANDATORY_RULE for a in annotations),
            "no_candidate": sum(a.no_candidate for a in annotations),
            "noise_sd_m": noise.sd_m,
            "output": str(out),
        }
        if cfg.infer.geojson:
            geojson_path = out.with_suffix(".geojson")
            write_annotations_geojson(annotations, str(geojson_path))
            summary["geojson"] = str(geojson_path)
        return summary

    def evaluate(self) -> EvalReport:
        """Score whatever has ground truth: classifications, annotations, or both"""
        classification = inference = None
        truth_pois, truth_stays = self.path("truth_pois"), self.path("truth_stays")
        if truth_pois.exists():
            preds = read_classifications(str(self.path("classifications")))
            classification = classification_metrics(preds, read_truth_pois(str(truth_pois)))
        if truth_stays.exists():
            annotations = read_annotations(str(self.path("annotations")))
            inference = inference_metrics(annotations, read_truth_stays(str(truth_stays)),
                                          noise_sd_m=self._annotation_noise())
        if classification is None and inference is None:
            raise DataError(f"no ground truth found at {truth_pois} or {truth_stays}",
                            path=str(truth_pois))

        report = merge_reports(classification, inference)
        out = self.path("eval_report")
        report.save(str(out))
        if self.config.evaluate.per_type_csv and report.per_type:
            write_per_type_csv(report, str(out.with_suffix(".per_type.csv")))
        logger.info("Evaluation report written to %s", out)
        return report

    def synth(self) -> Dict:
        """Write a synthetic world: POIs, classifications, trajectories, stays, truth"""
        cfg = self.config
        profile_path = self.path("profile")
        profile = self.load_profile() if profile_path.exists() else TemporalProfile.default()
        world = generate_synthetic_world(cfg.synth, cfg.stage_seed("synth"), profile)

        write_poi_csv(world.pois, str(self.path("pois")), cfg.poi)
        write_classifications(world.classifications.values(), str(self.path("classifications")))
        write_trajectories_csv(world.trajectories, str(self.path("trajectories")))
        write_staypoints(world.stays, str(self.path("staypoints")))
        write_truth_pois(world.truth_pois, str(self.path("truth_pois")))
        write_truth_stays(world.truth_stays, str(self.path("truth_stays")))
        if not profile_path.exists():
            profile.save(str(profile_path))
        return {
            "pois": len(world.pois),
            "agents": len(world.agents),
            "staypoints": len(world.stays),
            "gps_points": sum(len(t.points) for t in world.trajectories),
            "output_dir": str(self.output_dir),
        }

    def fit_profile(self, samples_path: Optional[str] = None, smoothing: float = 1.0) -> Dict:
        """
        Fit a temporal profile from start-time samples.

        Accepts a truth-stay JSON-lines file ({person_id, t_S, code}) or a
        CSV with `code` and `t_S` (or `timestamp`) columns.
        """
        path = Path(samples_path) if samples_path else self.path("truth_stays")
        if path.suffix.lower() == ".csv":
            try:
                frame = pd.read_csv(path)
            except FileNotFoundError:
                raise ProfileError(f"sample file not found: {path}", path=str(path))
            except pd.errors.EmptyDataError:
                raise ProfileError(f"sample file {path} is empty", path=str(path))
            except (pd.errors.ParserError, UnicodeDecodeError) as e:
                raise ProfileError(f"unreadable sample file {path}: {e}", path=str(path))
            time_column = "t_S" if "t_S" in frame.columns else "timestamp"
            if "code" not in frame.columns or time_column not in frame.columns:
                raise ProfileError("sample CSV needs `code` and `t_S` columns", path=str(path))
            samples = list(zip(frame["code"], frame[time_column]))
        else:
            samples = [(t.code, t.t_start) for t in read_truth_stays(str(path))]

        profile = TemporalProfile.fit(samples, smoothing, self.config.infer.utc_offset_hours,
                                      source=str(path))
        out = self.path("profile")
        profile.save(str(out))
        return {"samples": len(samples), "activities": len(profile.bins), "output": str(out)}

    def report(self, report_paths: Sequence[str] = ()) -> str:
        """
        Human-readable summary tables.

        One report gives its classification, slice and per-type tables;
        several are laid out side by side as a noise table. A GeoJSON of the
        annotated stays is written next to the annotation file.
        """
        paths = list(report_paths) or [str(self.path("eval_report"))]
        reports = [EvalReport.load(p) for p in paths]

        sections = []
        if len(reports) == 1:
            sections.append(render_report(reports[0]))
        else:
            with_classification = [r for r in reports if r.hit_at is not None]
            if with_classification:
                sections.append(classification_table(with_classification[0]))
            inference = [r for r in reports if r.acc_at is not None]
            if inference:
                sections.append("Non-mandatory Acc@k by noise level\n" + noise_table(inference))
                sections.append(per_type_table(inference[0]))

        annotations_path = self.path("annotations")
        if annotations_path.exists():
            geojson_path = annotations_path.with_suffix(".geojson")
            write_annotations_geojson(read_annotations(str(annotations_path)), str(geojson_path))
            sections.append(f"Annotated stay points written to {geojson_path}")
        return "\n\n".join(s for s in sections if s)
