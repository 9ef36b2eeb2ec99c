"""
Tests for POI classification: caching, retries, batches and the output file.

Backends here are small scripted CompletionBackend subclasses or the
deterministic MockBackend; sleeping is replaced by a recorder.

Test classes
============
TestClassifyPoi         - cache short-circuit, retries with backoff, error attachment
TestClassifyBatch       - order, failures, abort threshold, concurrency parity
TestResumability        - an interrupted batch resumes from the cache
TestCache               - JSON-lines cache file, last entry wins, truncated lines
TestRateLimiter         - submissions are spaced by the configured rate
TestClassificationFile  - write/read of the classification JSON-lines file
"""

import json

import pytest

from backends import CompletionBackend, MockBackend
from classification_cache import ClassificationCache, prompt_hash
from config import ClassifyConfig
from errors import (BackendError, BackendUnavailable, BatchAbortedError, DataError,
                    ResponseParseError, TransientBackendError)
from models import Activity, PoiDataset, PoiRecord
from poi_classifier import (PoiClassifier, RateLimiter, classify_poi, read_classifications,
                            write_classifications)
from prompt_builder import build_prompt, default_prompt_spec


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

class ScriptedBackend(CompletionBackend):
    """Replies (or raises) from a script, one entry per call; then repeats the last"""

    name = "scripted"

    def __init__(self, *script):
        super().__init__()
        self.script = list(script)

    def submit(self, prompt):
        self._count_call()
        step = self.script[min(self.calls, len(self.script)) - 1]
        if isinstance(step, BaseException):
            raise step
        return step


class Interrupt(BaseException):
    """Stands in for a kill signal in the middle of a batch"""


class InterruptingBackend(MockBackend):
    def __init__(self, after):
        super().__init__()
        self.after = after

    def submit(self, prompt):
        if self.calls >= self.after:
            raise Interrupt()
        return super().submit(prompt)


class SleepRecorder:
    def __init__(self):
        self.waits = []

    def __call__(self, seconds):
        self.waits.append(seconds)


SPEC = default_prompt_spec()


def _poi(i, amenity="restaurant"):
    return PoiRecord(id=f"poi{i}", name=f"Place {i}", lon=0.0, lat=0.0,
                     features={"amenity": amenity})


def _dataset(n, amenities=("restaurant", "supermarket", "hospital", "toilets", "gym")):
    return PoiDataset(records=[_poi(i, amenities[i % len(amenities)]) for i in range(n)],
                      feature_tags=["amenity"])


def _classifier(backend, cache=None, sleep=None, **config):
    cache = cache if cache is not None else ClassificationCache()
    return PoiClassifier(SPEC, backend, cache,
                         ClassifyConfig(**config), sleep=sleep or SleepRecorder(),
                         show_progress=False)


# ---------------------------------------------------------------------------
# Single POI
# ---------------------------------------------------------------------------

class TestClassifyPoi:

    def test_restaurant_rule_gives_buy_meals(self):
        result = classify_poi(_poi(1), SPEC, MockBackend(), ClassificationCache())
        assert result.top1 is Activity.BUY_MEALS
        assert result.poi_id == "poi1"

    def test_second_call_hits_cache(self):
        backend = MockBackend()
        classifier = _classifier(backend)
        first = classifier.classify_poi(_poi(1))
        second = classifier.classify_poi(_poi(1))
        assert second == first
        assert backend.calls == 1
        assert classifier.cache_hits == 1

    def test_cache_key_is_prompt_hash(self):
        cache = ClassificationCache()
        _classifier(MockBackend(), cache).classify_poi(_poi(1))
        assert prompt_hash(build_prompt(SPEC, _poi(1))) in cache

    def test_changed_prompt_spec_misses_cache(self):
        backend, cache = MockBackend(), ClassificationCache()
        _classifier(backend, cache).classify_poi(_poi(1))
        hinted = default_prompt_spec(presets=["arabic_names"])
        PoiClassifier(hinted, backend, cache, show_progress=False).classify_poi(_poi(1))
        assert backend.calls == 2

    def test_two_transient_failures_then_success(self):
        backend = ScriptedBackend(TransientBackendError("503"), TransientBackendError("503"),
                                  "7: 0.7, 5: 0.2")
        sleep = SleepRecorder()
        result = _classifier(backend, sleep=sleep, backoff_s=1.0).classify_poi(_poi(1))
        assert result.retries == 2
        assert result.top1 is Activity.BUY_MEALS
        assert sleep.waits == [1.0, 2.0]

    def test_retries_exhausted(self):
        backend = ScriptedBackend(TransientBackendError("timeout"))
        sleep = SleepRecorder()
        with pytest.raises(BackendUnavailable) as exc_info:
            _classifier(backend, sleep=sleep, max_retries=2, backoff_s=0.5).classify_poi(_poi(3))
        assert backend.calls == 3
        assert sleep.waits == [0.5, 1.0]
        assert "poi3" in str(exc_info.value)

    def test_permanent_error_not_retried(self):
        backend = ScriptedBackend(BackendError("401"))
        with pytest.raises(BackendError):
            _classifier(backend).classify_poi(_poi(1))
        assert backend.calls == 1

    def test_parse_error_carries_poi_id(self):
        with pytest.raises(ResponseParseError) as exc_info:
            _classifier(ScriptedBackend("I am not sure")).classify_poi(_poi(9))
        assert exc_info.value.poi_id == "poi9"
        assert "poi9" in str(exc_info.value)

    def test_invalid_reply_is_not_cached(self):
        cache = ClassificationCache()
        with pytest.raises(ResponseParseError):
            _classifier(ScriptedBackend("16: 0.9"), cache).classify_poi(_poi(1))
        assert len(cache) == 0

    def test_renormalize_flag(self):
        result = _classifier(ScriptedBackend("7: 0.6, 5: 0.2"),
                             renormalize=True).classify_poi(_poi(1))
        assert sum(e.probability for e in result.top3) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Batches
# ---------------------------------------------------------------------------

class TestClassifyBatch:

    def test_empty_dataset(self):
        result = _classifier(MockBackend()).classify_batch(PoiDataset())
        assert result.classifications == []
        assert result.failures == []

    def test_order_matches_input_and_single_calls(self):
        ds = _dataset(100)
        batch = _classifier(MockBackend(), concurrency=4).classify_batch(ds)
        singles = [classify_poi(p, SPEC, MockBackend()) for p in ds.records]
        assert [c.poi_id for c in batch.classifications] == [p.id for p in ds.records]
        assert [c.top3 for c in batch.classifications] == [c.top3 for c in singles]

    def test_sequential_and_concurrent_agree(self):
        ds = _dataset(1000)
        sequential = _classifier(MockBackend(), concurrency=1).classify_batch(ds)
        concurrent = _classifier(MockBackend(), concurrency=8).classify_batch(ds)
        assert sequential.classifications == concurrent.classifications
        assert sequential.backend_calls == concurrent.backend_calls == 1000

    def test_failures_are_collected_not_fatal(self):
        class FlakyForToilets(MockBackend):
            def submit(self, prompt):
                if "toilets" in prompt.rsplit("POI observation:", 1)[-1]:
                    raise BackendError("refused")
                return super().submit(prompt)

        ds = _dataset(10)
        result = _classifier(FlakyForToilets(), concurrency=1).classify_batch(ds)
        assert [f.poi_id for f in result.failures] == ["poi3", "poi8"]
        assert result.failures[0].error == "BackendError"
        assert len(result.classifications) == 8
        assert result.failure_fraction == pytest.approx(0.2)

    @pytest.mark.parametrize("concurrency", [1, 4])
    def test_abort_above_failure_fraction(self, concurrency):
        backend = ScriptedBackend(BackendError("down"))
        with pytest.raises(BatchAbortedError) as exc_info:
            _classifier(backend, concurrency=concurrency,
                        max_failure_fraction=0.5).classify_batch(_dataset(10))
        assert len(exc_info.value.failures) == 6

    def test_counts_split_calls_and_hits(self):
        classifier = _classifier(MockBackend())
        ds = _dataset(5)
        classifier.classify_batch(ds)
        again = classifier.classify_batch(ds)
        assert again.backend_calls == 0
        assert again.cache_hits == 5


class TestResumability:

    def test_kill_after_four_then_rerun(self, tmp_path):
        cache_path = str(tmp_path / "cache.jsonl")
        ds = _dataset(10, amenities=tuple(f"kind{i}" for i in range(10)))

        with pytest.raises(Interrupt):
            _classifier(InterruptingBackend(after=4), ClassificationCache(cache_path),
                        concurrency=1).classify_batch(ds)

        backend = MockBackend()
        result = _classifier(backend, ClassificationCache(cache_path),
                             concurrency=1).classify_batch(ds)
        assert backend.calls == 6
        assert result.cache_hits == 4
        assert [c.poi_id for c in result.classifications] == [p.id for p in ds.records]


# ---------------------------------------------------------------------------
# Cache file
# ---------------------------------------------------------------------------

class TestCache:

    def test_entries_persist(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        ClassificationCache(str(path)).put("abc", "7: 0.7")
        record = json.loads(path.read_text().strip())
        assert record["prompt_hash"] == "abc"
        assert record["response_text"] == "7: 0.7"
        assert "timestamp" in record
        assert ClassificationCache(str(path)).get("abc") == "7: 0.7"

    def test_last_entry_wins(self, tmp_path):
        path = str(tmp_path / "cache.jsonl")
        cache = ClassificationCache(path)
        cache.put("abc", "7: 0.7")
        cache.put("abc", "5: 0.6")
        assert ClassificationCache(path).get("abc") == "5: 0.6"

    def test_truncated_line_skipped(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        path.write_text('{"prompt_hash": "a", "response_text": "7: 0.7", "timestamp": 1}\n'
                        '{"prompt_hash": "b", "respo')
        cache = ClassificationCache(str(path))
        assert len(cache) == 1
        assert "a" in cache

    def test_put_after_truncated_tail_survives_reload(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        path.write_text('{"prompt_hash": "a", "response_text": "7: 0.7", "timestamp": 1}\n'
                        '{"prompt_ha')
        ClassificationCache(str(path)).put("b", "5: 0.6")
        reloaded = ClassificationCache(str(path))
        assert "a" in reloaded and "b" in reloaded
        assert len(path.read_text().splitlines()) == 2

    def test_complete_tail_without_newline_is_kept(self, tmp_path):
        path = tmp_path / "cache.jsonl"
        path.write_text('{"prompt_hash": "a", "response_text": "7: 0.7", "timestamp": 1}')
        ClassificationCache(str(path)).put("b", "5: 0.6")
        reloaded = ClassificationCache(str(path))
        assert reloaded.get("a") == "7: 0.7"
        assert reloaded.get("b") == "5: 0.6"


class TestRateLimiter:

    def test_unlimited_never_sleeps(self):
        sleep = SleepRecorder()
        limiter = RateLimiter(0.0, sleep)
        for _ in range(5):
            limiter.acquire()
        assert sleep.waits == []

    def test_back_to_back_requests_wait(self):
        sleep = SleepRecorder()
        limiter = RateLimiter(2.0, sleep)
        limiter.acquire()
        limiter.acquire()
        assert len(sleep.waits) == 1
        assert 0.0 < sleep.waits[0] <= 0.5


class TestClassificationFile:

    def test_write_then_read(self, tmp_path, restaurant_classification):
        path = tmp_path / "out" / "classifications.jsonl"
        assert write_classifications([restaurant_classification], str(path)) == 1
        line = json.loads(path.read_text(encoding="utf-8"))
        assert line == {"poi_id": "p1", "top3": [{"code": 7, "prob": 0.7},
                                                 {"code": 5, "prob": 0.2},
                                                 {"code": 14, "prob": 0.1}]}
        assert read_classifications(str(path))["p1"].top3 == restaurant_classification.top3

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_classifications(str(tmp_path / "none.jsonl"))

    def test_bad_record_names_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"poi_id": "a", "top3": [{"code": 7, "prob": 0.7}]}\n'
                        '{"poi_id": "b", "top3": [{"code": 99, "prob": 0.7}]}\n')
        with pytest.raises(DataError) as exc_info:
            read_classifications(str(path))
        assert "line 2" in str(exc_info.value)
