"""
Command-line entry point.

    classify    POIs -> top-3 activity classifications
    staypoints  GPS trajectories -> stay points
    infer       stay points + classified POIs -> annotated stay points
    evaluate    predictions + ground truth -> evaluation report
    synth       synthetic world with ground truth
    profile     fit a start-hour profile from (activity, start time) samples
    report      summary tables and a GeoJSON of annotated stays

Exit status: 0 success, 1 usage/config error, 2 data error, 3 backend failure.
Errors, expected or not, are written to stderr as one JSON object.
"""
import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

from annotation_pipeline import AnnotationPipeline
from config import API_KEY_ENV, PipelineConfig, load_config
from errors import AnnotatorError, ConfigError
from evaluation import render_report

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

# (subcommands, flag, config path, argparse kwargs, help)
FlagSpec = Tuple[Tuple[str, ...], str, Tuple[str, ...], Dict[str, Any], str]

ALL = ("classify", "staypoints", "infer", "evaluate", "synth", "profile", "report")

FLAGS: List[FlagSpec] = [
    (ALL, "--seed", ("seed",), {"type": int}, "top-level random seed"),
    (ALL, "--workers", ("workers",), {"type": int}, "worker threads for per-person stages"),
    (ALL, "--output-dir", ("output_dir",), {}, "directory for default artifact paths"),
    (ALL, "--log-level", ("log_level",), {"choices": ["DEBUG", "INFO", "WARNING", "ERROR"]},
     "logging level"),

    # paths
    (("classify", "infer", "synth"), "--pois", ("paths", "pois"), {}, "POI file (CSV or GeoJSON)"),
    (("classify", "infer", "evaluate", "synth"), "--classifications", ("paths", "classifications"),
     {}, "classification JSON-lines file"),
    (("classify",), "--cache", ("paths", "cache"), {}, "classification cache file"),
    (("classify",), "--mock-rules", ("paths", "mock_rules"), {}, "JSON rule table for the mock backend"),
    (("staypoints", "infer", "synth"), "--trajectories", ("paths", "trajectories"), {},
     "trajectory CSV (person_id,timestamp,lon,lat)"),
    (("staypoints", "infer", "synth"), "--staypoints", ("paths", "staypoints"), {},
     "stay-point JSON-lines file"),
    (("infer", "synth", "profile"), "--profile", ("paths", "profile"), {}, "temporal profile JSON"),
    (("infer", "evaluate", "report"), "--annotations", ("paths", "annotations"), {},
     "annotation JSON-lines file"),
    (("evaluate", "synth", "profile"), "--truth-stays", ("paths", "truth_stays"), {},
     "ground-truth stays JSON-lines"),
    (("evaluate", "synth"), "--truth-pois", ("paths", "truth_pois"), {},
     "ground-truth POI codes JSON-lines"),
    (("evaluate",), "--report", ("paths", "eval_report"), {}, "evaluation report output"),

    # POI parsing
    (("classify", "infer"), "--format", ("poi", "format"), {"choices": ["auto", "csv", "geojson"]},
     "POI file format"),
    (("classify", "infer"), "--max-reject-fraction", ("poi", "max_reject_fraction"),
     {"type": float}, "abort when more POI rows than this are rejected"),

    # classification
    (("classify",), "--backend", ("classify", "backend"), {"choices": ["mock", "http", "openai"]},
     f"completion backend (openai reads {API_KEY_ENV})"),
    (("classify",), "--concurrency", ("classify", "concurrency"), {"type": int},
     "concurrent backend requests"),
    (("classify",), "--max-retries", ("classify", "max_retries"), {"type": int},
     "retries per POI on transient backend failures"),
    (("classify",), "--backoff", ("classify", "backoff_s"), {"type": float},
     "initial retry backoff in seconds (doubles per retry)"),
    (("classify",), "--requests-per-second", ("classify", "requests_per_second"), {"type": float},
     "shared rate limit, 0 = unlimited"),
    (("classify",), "--max-failure-fraction", ("classify", "max_failure_fraction"), {"type": float},
     "abort the batch above this fraction of failed POIs"),
    (("classify",), "--renormalize", ("classify", "renormalize"), {"action": "store_true"},
     "rescale reply probabilities to sum to 1"),
    (("classify",), "--hint", ("classify", "hints"), {"action": "append"},
     "dataset hint added to the prompt (repeatable)"),
    (("classify",), "--hint-preset", ("classify", "hint_presets"),
     {"action": "append", "choices": ["arabic_names", "public_spaces"]},
     "built-in dataset hint (repeatable)"),

    # stay points
    (("staypoints", "infer"), "--dist-threshold", ("staypoints", "dist_threshold_m"),
     {"type": float}, "stay-point radius in meters"),
    (("staypoints", "infer"), "--min-duration", ("staypoints", "min_duration_s"),
     {"type": float}, "minimum stay duration in seconds"),

    # inference
    (("infer",), "--radius", ("infer", "radius_m"), {"type": float}, "candidate POI radius in meters"),
    (("infer",), "--k", ("infer", "k"), {"type": int}, "maximum candidate POIs per stay"),
    (("infer",), "--kernel-sd", ("infer", "kernel_sd_m"), {"type": float},
     "SD of the distance prior in meters"),
    (("infer",), "--place-merge", ("infer", "place_merge_m"), {"type": float},
     "stays closer than this form one place (meters)"),
    (("infer",), "--min-work-dist", ("infer", "min_work_dist_m"), {"type": float},
     "minimum Home-Work distance in meters"),
    (("infer",), "--school-radius", ("infer", "school_radius_m"), {"type": float},
     "maximum distance to an education POI in meters"),
    (("infer", "profile"), "--utc-offset", ("infer", "utc_offset_hours"), {"type": float},
     "local clock offset from UTC in hours"),
    (("infer",), "--geojson", ("infer", "geojson"), {"action": "store_true"},
     "also write annotations as GeoJSON"),
    (("infer",), "--noise-sd", ("noise", "sd_m"), {"type": float},
     "Gaussian noise SD in meters applied before inference"),
    (("infer",), "--noise-seed", ("noise", "seed"), {"type": int},
     "noise seed (derived from --seed when unset)"),
    (("infer",), "--noise-target", ("noise", "target"), {"choices": ["pois", "staypoints"]},
     "coordinates the noise is applied to"),

    # evaluation
    (("evaluate",), "--per-type-csv", ("evaluate", "per_type_csv"), {"action": "store_true"},
     "also write per-activity rows as CSV"),

    # synthetic world
    (("synth",), "--agents", ("synth", "agents"), {"type": int}, "number of agents"),
    (("synth",), "--days", ("synth", "days"), {"type": int}, "simulated days, starting on a Monday"),
    (("synth",), "--spacing", ("synth", "spacing_m"), {"type": float}, "POI grid spacing in meters"),
    (("synth",), "--visits-per-day", ("synth", "visits_per_day"), {"type": int},
     "non-mandatory visits per agent and day"),
    (("synth",), "--student-share", ("synth", "student_share"), {"type": float},
     "fraction of agents attending school instead of work"),
    (("synth",), "--ambiguous", ("synth", "unambiguous"), {"action": "store_false"},
     "allow visit hours at which another ranked activity outscores the true one"),
    (("synth",), "--sample-interval", ("synth", "sample_interval_s"), {"type": int},
     "GPS sampling interval while dwelling, seconds"),
]


def _config_default(path: Tuple[str, ...]) -> Any:
    value: Any = PipelineConfig()
    for part in path:
        value = getattr(value, part)
    return value


class _Parser(argparse.ArgumentParser):
    """Usage errors become ConfigError (exit status 1) instead of SystemExit(2)"""

    def error(self, message: str):
        raise ConfigError([message])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="annotate", description="Activity annotation of GPS stay points")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    commands = {
        "classify": "classify POIs into top-3 activities",
        "staypoints": "extract stay points from trajectories",
        "infer": "annotate stay points with activities",
        "evaluate": "score predictions against ground truth",
        "synth": "generate a synthetic world with ground truth",
        "profile": "fit a start-hour profile from samples",
        "report": "print summary tables and export annotated stays as GeoJSON",
    }
    sub = {}
    for name, help_text in commands.items():
        sub[name] = subparsers.add_parser(name, help=help_text, description=help_text)
        sub[name].add_argument("--config", default=None, help="TOML config file (default: none)")

    for commands_for, flag, path, kwargs, help_text in FLAGS:
        default = _config_default(path)
        if kwargs.get("action") == "store_false":
            default = not default
        dest = "__".join(path)
        for name in commands_for:
            sub[name].add_argument(flag, dest=dest, default=argparse.SUPPRESS,
                                   help=f"{help_text} (default: {default})", **kwargs)

    sub["profile"].add_argument("--samples", default=None,
                                help="truth-stay JSON-lines or CSV with code,t_S (default: truth stays path)")
    sub["profile"].add_argument("--smoothing", type=float, default=1.0,
                                help="additive smoothing per hourly bin (default: 1.0)")
    sub["report"].add_argument("reports", nargs="*",
                               help="evaluation reports; several are laid out as a noise table "
                                    "(default: the configured report path)")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Nested config overrides from the flags actually given"""
    overrides: Dict[str, Any] = {}
    for _, _, path, _, _ in FLAGS:
        dest = "__".join(path)
        if not hasattr(args, dest):
            continue
        node = overrides
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = getattr(args, dest)
    return overrides


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config, overrides_from_args(args))
    logging.basicConfig(level=cfg.log_level, format=LOG_FORMAT, force=True)
    pipeline = AnnotationPipeline(cfg)

    if args.command == "evaluate":
        print(render_report(pipeline.evaluate()))
    elif args.command == "report":
        print(pipeline.report(args.reports))
    elif args.command == "profile":
        print(json.dumps(pipeline.fit_profile(args.samples, args.smoothing)))
    else:
        stage = getattr(pipeline, args.command)
        print(json.dumps(stage()))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return run(args)
    except AnnotatorError as e:
        print(json.dumps(e.to_record(), ensure_ascii=False), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        # unexpected failures still leave one JSON record and a nonzero status
        logger.debug("Unhandled error", exc_info=True)
        record = {"error": type(e).__name__, "message": str(e)}
        print(json.dumps(record, ensure_ascii=False), file=sys.stderr)
        return AnnotatorError.exit_code


if __name__ == "__main__":
    sys.exit(main())
