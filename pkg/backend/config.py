import hashlib
import os
import tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import ConfigError

# Load environment variables from .env file
load_dotenv()

# Name of the environment variable holding the chat-completion API key
API_KEY_ENV = "OPENAI_API_KEY"


@dataclass
class Config:
    """Environment-level settings for the language-model backends"""
    # OpenAI-compatible chat-completion settings
    OPENAI_API_KEY: str = os.getenv(API_KEY_ENV, "")
    LLM_MODEL: str = os.getenv("ANNOTATOR_LLM_MODEL", "gpt-4")
    LLM_BASE_URL: Optional[str] = os.getenv("ANNOTATOR_LLM_BASE_URL") or None

    # Generic {"prompt"} -> {"text"} endpoint
    BACKEND_URL: str = os.getenv("ANNOTATOR_BACKEND_URL", "http://localhost:8000/complete")
    BACKEND_TIMEOUT_S: float = 60.0

config = Config()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class PathsConfig(_Section):
    """Input/output files; unset paths resolve to defaults under output_dir"""
    pois: Optional[str] = None
    classifications: Optional[str] = None
    trajectories: Optional[str] = None
    staypoints: Optional[str] = None
    profile: Optional[str] = None
    cache: Optional[str] = None
    annotations: Optional[str] = None
    truth_pois: Optional[str] = None
    truth_stays: Optional[str] = None
    eval_report: Optional[str] = None
    mock_rules: Optional[str] = None


DEFAULT_FILENAMES = {
    "pois": "pois.csv",
    "classifications": "classifications.jsonl",
    "trajectories": "trajectories.csv",
    "staypoints": "staypoints.jsonl",
    "profile": "profile.json",
    "cache": "classification_cache.jsonl",
    "annotations": "annotations.jsonl",
    "truth_pois": "truth_pois.jsonl",
    "truth_stays": "truth_stays.jsonl",
    "eval_report": "eval_report.json",
}


class PoiConfig(_Section):
    format: Literal["csv", "geojson", "auto"] = "auto"
    id_column: str = "id"
    name_column: str = "name"
    lon_column: str = "lon"
    lat_column: str = "lat"
    feature_columns: List[str] = ["amenity", "building", "landuse"]
    max_reject_fraction: float = Field(0.5, ge=0.0, le=1.0)


class ClassifyConfig(_Section):
    backend: Literal["mock", "http", "openai"] = "mock"
    concurrency: int = Field(4, gt=0)
    max_retries: int = Field(3, ge=0)
    backoff_s: float = Field(1.0, ge=0.0)
    requests_per_second: float = Field(0.0, ge=0.0)   # 0 = unlimited
    max_failure_fraction: float = Field(0.5, ge=0.0, le=1.0)
    renormalize: bool = False
    hints: List[str] = []              # free-text dataset hints
    hint_presets: List[Literal["arabic_names", "public_spaces"]] = []


class StayPointConfig(_Section):
    dist_threshold_m: float = Field(200.0, gt=0.0)
    min_duration_s: float = Field(600.0, gt=0.0)


class InferConfig(_Section):
    radius_m: float = Field(100.0, gt=0.0)
    k: int = Field(10, gt=0)
    kernel_sd_m: float = Field(5.0, gt=0.0)
    off_hours_start: int = Field(19, ge=0, le=23)   # 7 pm
    off_hours_end: int = Field(8, ge=0, le=23)      # 8 am
    work_hours_start: int = Field(8, ge=0, le=23)
    work_hours_end: int = Field(19, ge=0, le=24)
    place_merge_m: float = Field(50.0, gt=0.0)
    min_work_dist_m: float = Field(100.0, ge=0.0)
    school_radius_m: float = Field(100.0, gt=0.0)
    utc_offset_hours: float = Field(0.0, ge=-14.0, le=14.0)
    geojson: bool = False

    @model_validator(mode="after")
    def check_hour_windows(self) -> "InferConfig":
        errors = []
        if not self.work_hours_start < self.work_hours_end:
            errors.append(
                f"work hours must satisfy start < end, got {self.work_hours_start}-{self.work_hours_end}"
            )
        if self.off_hours_start == self.off_hours_end:
            errors.append("off-hours window is empty (start == end)")
        if errors:
            raise ValueError("; ".join(errors))
        return self


class NoiseConfig(_Section):
    sd_m: float = Field(0.0, ge=0.0)
    seed: Optional[int] = None       # None = derived from the top-level seed
    target: Literal["pois", "staypoints"] = "pois"


class SynthConfig(_Section):
    agents: int = Field(10, gt=0)
    days: int = Field(7, gt=0)
    spacing_m: float = Field(300.0, gt=0.0)
    visits_per_day: int = Field(1, ge=0)
    student_share: float = Field(0.2, ge=0.0, le=1.0)
    unambiguous: bool = True
    sample_interval_s: int = Field(300, gt=0)
    origin_lon: float = Field(-118.25, ge=-180.0, le=180.0)
    origin_lat: float = Field(34.05, ge=-80.0, le=80.0)


class EvaluateConfig(_Section):
    per_type_csv: bool = False


class PipelineConfig(_Section):
    """Every tunable of the pipeline; TOML sections mirror the nested models"""
    seed: int = 0
    workers: int = Field(1, gt=0)
    output_dir: str = "out"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    paths: PathsConfig = PathsConfig()
    poi: PoiConfig = PoiConfig()
    classify: ClassifyConfig = ClassifyConfig()
    staypoints: StayPointConfig = StayPointConfig()
    infer: InferConfig = InferConfig()
    noise: NoiseConfig = NoiseConfig()
    synth: SynthConfig = SynthConfig()
    evaluate: EvaluateConfig = EvaluateConfig()

    def path_for(self, name: str) -> Path:
        """Configured path of an artifact, else its default under output_dir"""
        explicit = getattr(self.paths, name)
        if explicit:
            return Path(explicit)
        return Path(self.output_dir) / DEFAULT_FILENAMES[name]

    def stage_seed(self, stage: str) -> int:
        return stage_seed(self.seed, stage)


def stage_seed(seed: int, stage: str) -> int:
    """Deterministic per-stage seed fanned out from the top-level seed"""
    digest = hashlib.sha256(f"{seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _format_violations(exc: ValidationError) -> List[str]:
    violations = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "config"
        message = error["msg"].removeprefix("Value error, ")
        violations.append(f"{location}: {message}")
    return violations


def load_config(path: Optional[str] = None,
                overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """
    Build the pipeline configuration.

    Precedence is flag > file > default: values from the TOML file at
    `path` replace model defaults, and `overrides` (nested dict, usually
    from CLI flags) replace both.

    Raises:
        ConfigError: listing every violation found, not just the first
    """
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError([f"config file not found: {path}"], path=path)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError([f"config file is not valid TOML: {e}"], path=path)

    if overrides:
        data = _deep_merge(data, overrides)

    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_violations(e), path=path)
