import json
import logging
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from tqdm import tqdm

from backends import CompletionBackend
from classification_cache import ClassificationCache, prompt_hash
from config import ClassifyConfig
from errors import (AnnotatorError, BackendUnavailable, BatchAbortedError, DataError,
                    ResponseParseError, TransientBackendError)
from models import PoiClassification, PoiDataset, PoiRecord, PromptSpec
from prompt_builder import build_prompt
from response_parser import parse_response

logger = logging.getLogger(__name__)


class RateLimiter:
    """Spaces submissions at least 1/rate seconds apart across threads"""

    def __init__(self, requests_per_second: float = 0.0,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 1.0 / requests_per_second if requests_per_second > 0 else 0.0
        self._next = 0.0
        self._lock = threading.Lock()
        self._sleep = sleep

    def acquire(self):
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            wait = self._next - now
            self._next = max(now, self._next) + self.interval
        if wait > 0:
            self._sleep(wait)


@dataclass
class BatchFailure:
    index: int
    poi_id: str
    error: str
    message: str


@dataclass
class BatchResult:
    """Successful classifications in input order, plus what failed"""
    classifications: List[PoiClassification] = field(default_factory=list)
    failures: List[BatchFailure] = field(default_factory=list)
    backend_calls: int = 0
    cache_hits: int = 0

    @property
    def failure_fraction(self) -> float:
        total = len(self.classifications) + len(self.failures)
        return len(self.failures) / total if total else 0.0


class PoiClassifier:
    """Classifies POIs through a completion backend with caching and retries"""

    def __init__(self, spec: PromptSpec, backend: CompletionBackend,
                 cache: Optional[ClassificationCache] = None,
                 classify_config: Optional[ClassifyConfig] = None,
                 sleep: Callable[[float], None] = time.sleep,
                 show_progress: Optional[bool] = None):
        self.spec = spec
        self.backend = backend
        self.cache = cache if cache is not None else ClassificationCache()
        self.config = classify_config or ClassifyConfig()
        self.rate_limiter = RateLimiter(self.config.requests_per_second, sleep)
        self._sleep = sleep
        self.show_progress = sys.stderr.isatty() if show_progress is None else show_progress
        self._counts_lock = threading.Lock()
        self.backend_calls = 0
        self.cache_hits = 0

    def _count(self, hit: bool):
        with self._counts_lock:
            if hit:
                self.cache_hits += 1
            else:
                self.backend_calls += 1

    def _submit_with_retries(self, prompt: str, poi_id: str) -> Tuple[str, int]:
        """Submit, retrying transient failures with exponential backoff"""
        attempts = self.config.max_retries + 1
        last_error: Optional[TransientBackendError] = None
        for attempt in range(1, attempts + 1):
            self.rate_limiter.acquire()
            self._count(hit=False)
            try:
                return self.backend.submit(prompt), attempt - 1
            except TransientBackendError as e:
                last_error = e
                if attempt < attempts:
                    wait = self.config.backoff_s * (2 ** (attempt - 1))
                    logger.warning("Backend failure for POI %s (attempt %d/%d): %s; "
                                   "retrying in %.1fs", poi_id, attempt, attempts, e, wait)
                    self._sleep(wait)
        raise BackendUnavailable(
            f"backend unavailable for POI {poi_id} after {attempts} attempts: {last_error}"
        )

    def classify_poi(self, poi: PoiRecord) -> PoiClassification:
        """
        Classify one POI.

        A cached reply for the same prompt short-circuits the backend.
        Otherwise the reply is parsed, and only a valid reply is cached.

        Raises:
            BackendUnavailable: transient failures outlasted the retry limit
            ResponseParseError: reply unusable; carries the POI id
        """
        prompt = build_prompt(self.spec, poi)
        key = prompt_hash(prompt)

        cached = self.cache.get(key)
        if cached is not None:
            self._count(hit=True)
            classification = parse_response(cached, renormalize=self.config.renormalize)
            return classification.model_copy(update={"poi_id": poi.id})

        reply, retries = self._submit_with_retries(prompt, poi.id)
        try:
            classification = parse_response(reply, renormalize=self.config.renormalize)
        except ResponseParseError as e:
            raise e.with_poi(poi.id)
        self.cache.put(key, reply)
        return classification.model_copy(update={"poi_id": poi.id, "retries": retries})

    def classify_batch(self, ds: PoiDataset) -> BatchResult:
        """
        Classify a whole dataset, preserving input order.

        Resumable: POIs classified by an earlier, interrupted run are served
        from the cache. Per-POI failures are collected; the batch aborts once
        the failure fraction exceeds max_failure_fraction.

        Raises:
            BatchAbortedError: too many POIs failed
        """
        records = ds.records
        total = len(records)
        calls_before, hits_before = self.backend_calls, self.cache_hits
        outcomes: List[Optional[PoiClassification]] = [None] * total
        failures: List[BatchFailure] = []
        failure_limit = self.config.max_failure_fraction * total

        def record_failure(index: int, error: AnnotatorError):
            failures.append(BatchFailure(index, records[index].id, type(error).__name__,
                                         error.message))
            logger.warning("POI %s failed: %s", records[index].id, error.message)
            if len(failures) > failure_limit:
                raise BatchAbortedError(
                    f"{len(failures)} of {total} POIs failed "
                    f"(limit {self.config.max_failure_fraction:.0%})", failures=failures)

        with tqdm(total=total, desc="Classifying POIs", disable=not self.show_progress) as bar:
            if self.config.concurrency == 1:
                for index, poi in enumerate(records):
                    try:
                        outcomes[index] = self.classify_poi(poi)
                    except AnnotatorError as e:
                        record_failure(index, e)
                    bar.update(1)
            else:
                with ThreadPoolExecutor(max_workers=self.config.concurrency) as executor:
                    futures = [executor.submit(self.classify_poi, poi) for poi in records]
                    try:
                        for index, future in enumerate(futures):
                            try:
                                outcomes[index] = future.result()
                            except AnnotatorError as e:
                                record_failure(index, e)
                            bar.update(1)
                    except BaseException:
                        for future in futures:
                            future.cancel()
                        raise

        result = BatchResult(
            classifications=[c for c in outcomes if c is not None],
            failures=sorted(failures, key=lambda f: f.index),
            backend_calls=self.backend_calls - calls_before,
            cache_hits=self.cache_hits - hits_before,
        )
        logger.info("Classified %d of %d POIs (%d backend calls, %d cache hits, %d failures)",
                    len(result.classifications), total, result.backend_calls,
                    result.cache_hits, len(result.failures))
        return result


def classify_poi(poi: PoiRecord, spec: PromptSpec, backend: CompletionBackend,
                 cache: Optional[ClassificationCache] = None, **kwargs) -> PoiClassification:
    return PoiClassifier(spec, backend, cache, **kwargs).classify_poi(poi)


def write_classifications(classifications: Iterable[PoiClassification], path: str) -> int:
    """One JSON record per line: {poi_id, top3: [{code, prob}, ...]}"""
    count = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for classification in classifications:
            fh.write(json.dumps(classification.to_record(), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_classifications(path: str) -> Dict[str, PoiClassification]:
    """Classifications keyed by POI id"""
    result: Dict[str, PoiClassification] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for number, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    classification = PoiClassification.from_record(json.loads(line))
                except (ValueError, KeyError, TypeError) as e:
                    raise DataError(f"bad classification record on line {number}: {e}", path=path)
                result[classification.poi_id] = classification
    except FileNotFoundError:
        raise DataError(f"classification file not found: {path}", path=path)
    return result
