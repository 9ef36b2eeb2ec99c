import json
import logging
import re
import threading
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Sequence, Tuple

import openai
import requests
from openai import OpenAI

from config import API_KEY_ENV, Config
from errors import BackendError, BackendUnavailable, ConfigError, TransientBackendError
from models import Activity
from prompt_builder import observation_section

logger = logging.getLogger(__name__)

# Status codes worth another attempt
_RETRYABLE_STATUS = (429, 500, 502, 503, 504)


class CompletionBackend(ABC):
    """Abstract text-completion backend: prompt text in, reply text out"""

    name = "abstract"

    def __init__(self):
        self.calls = 0
        self._calls_lock = threading.Lock()

    def _count_call(self):
        with self._calls_lock:
            self.calls += 1

    @abstractmethod
    def submit(self, prompt: str) -> str:
        """
        Send one prompt and return the reply text.

        Raises:
            TransientBackendError: failure worth retrying
            BackendError: permanent failure
        """
        pass


Rule = Tuple[str, Activity, float]


class MockBackend(CompletionBackend):
    """
    Deterministic offline backend driven by an ordered keyword rule table.

    Keywords are matched as whole words against the POI observation section
    of the prompt. Matching rules contribute (code, probability) pairs in
    table order; the first pair per code wins, pairs are sorted descending,
    cut to three and scaled down if their mass exceeds 1. No match answers
    "14: 0.5" (Something else).
    """

    name = "mock"

    DEFAULT_REPLY: List[Tuple[Activity, float]] = [(Activity.SOMETHING_ELSE, 0.5)]

    DEFAULT_RULES: List[Rule] = [
        ("restaurant", Activity.BUY_MEALS, 0.7),
        ("fast_food", Activity.BUY_MEALS, 0.7),
        ("fast food", Activity.BUY_MEALS, 0.7),
        ("food_court", Activity.BUY_MEALS, 0.7),
        ("cafe", Activity.BUY_MEALS, 0.6),
        ("kfc", Activity.BUY_MEALS, 0.7),
        ("مطعم", Activity.BUY_MEALS, 0.7),
        ("supermarket", Activity.BUY_GOODS, 0.7),
        ("mall", Activity.BUY_GOODS, 0.6),
        ("marketplace", Activity.BUY_GOODS, 0.6),
        ("shop", Activity.BUY_GOODS, 0.5),
        ("store", Activity.BUY_GOODS, 0.5),
        ("bank", Activity.BUY_SERVICES, 0.6),
        ("hairdresser", Activity.BUY_SERVICES, 0.6),
        ("salon", Activity.BUY_SERVICES, 0.6),
        ("laundry", Activity.BUY_SERVICES, 0.6),
        ("car_repair", Activity.BUY_SERVICES, 0.6),
        ("post_office", Activity.GENERAL_ERRANDS, 0.6),
        ("fuel", Activity.GENERAL_ERRANDS, 0.6),
        ("townhall", Activity.GENERAL_ERRANDS, 0.5),
        ("park", Activity.RECREATIONAL, 0.5),
        ("cinema", Activity.RECREATIONAL, 0.6),
        ("museum", Activity.RECREATIONAL, 0.6),
        ("theatre", Activity.RECREATIONAL, 0.6),
        ("attraction", Activity.RECREATIONAL, 0.5),
        ("gym", Activity.EXERCISE, 0.6),
        ("fitness_centre", Activity.EXERCISE, 0.6),
        ("sports_centre", Activity.EXERCISE, 0.6),
        ("swimming_pool", Activity.EXERCISE, 0.6),
        ("stadium", Activity.EXERCISE, 0.5),
        ("hospital", Activity.HEALTH_CARE, 0.7),
        ("clinic", Activity.HEALTH_CARE, 0.7),
        ("doctors", Activity.HEALTH_CARE, 0.7),
        ("dentist", Activity.HEALTH_CARE, 0.7),
        ("pharmacy", Activity.HEALTH_CARE, 0.6),
        ("place_of_worship", Activity.RELIGIOUS, 0.7),
        ("church", Activity.RELIGIOUS, 0.6),
        ("mosque", Activity.RELIGIOUS, 0.7),
        ("مسجد", Activity.RELIGIOUS, 0.7),
        ("temple", Activity.RELIGIOUS, 0.6),
        ("school", Activity.SCHOOL, 0.7),
        ("university", Activity.SCHOOL, 0.7),
        ("college", Activity.SCHOOL, 0.7),
        ("kindergarten", Activity.SCHOOL, 0.5),
        ("childcare", Activity.CAREGIVING, 0.6),
        ("nursing_home", Activity.CAREGIVING, 0.6),
        ("social_facility", Activity.CAREGIVING, 0.5),
        ("office", Activity.WORK, 0.6),
        ("industrial", Activity.WORK, 0.5),
        ("commercial", Activity.WORK, 0.3),
        ("residential", Activity.HOME, 0.6),
        ("apartments", Activity.HOME, 0.6),
        ("house", Activity.HOME, 0.5),
        # "visitor parking" is split between picking someone up and visiting friends
        ("parking", Activity.DROP_OFF_PICK_UP, 0.4),
        ("visitor", Activity.VISIT_FRIENDS, 0.35),
        ("toilets", Activity.SOMETHING_ELSE, 0.6),
    ]

    def __init__(self, rules: Optional[Sequence[Rule]] = None):
        super().__init__()
        self.rules = [(kw, Activity(code), float(prob))
                      for kw, code, prob in (rules if rules is not None else self.DEFAULT_RULES)]
        self._patterns = [
            re.compile(rf"(?<!\w){re.escape(kw.lower())}(?!\w)") for kw, _, _ in self.rules
        ]

    @classmethod
    def from_rules_file(cls, path: str) -> "MockBackend":
        """Load rules from JSON: [{"keyword": ..., "code": ..., "prob": ...}, ...]"""
        try:
            with open(path, "r", encoding="utf-8") as fh:
                entries = json.load(fh)
            rules = [(e["keyword"], Activity(int(e["code"])), float(e["prob"])) for e in entries]
        except FileNotFoundError:
            raise ConfigError([f"mock rules file not found: {path}"], path=path)
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError([f"invalid mock rules file {path}: {e}"], path=path)
        return cls(rules)

    def classify_text(self, observation: str) -> List[Tuple[Activity, float]]:
        text = observation.lower()
        pairs: Dict[Activity, float] = {}
        for (_, code, prob), pattern in zip(self.rules, self._patterns):
            if code not in pairs and pattern.search(text):
                pairs[code] = prob
        if not pairs:
            return list(self.DEFAULT_REPLY)

        ranked = sorted(pairs.items(), key=lambda item: item[1], reverse=True)[:3]
        total = sum(p for _, p in ranked)
        if total > 1.0:
            ranked = [(code, p / total) for code, p in ranked]
        return ranked

    def submit(self, prompt: str) -> str:
        self._count_call()
        pairs = self.classify_text(observation_section(prompt))
        return "\n".join(f"{int(code)}: {prob!r}" for code, prob in pairs)


class HttpBackend(CompletionBackend):
    """Generic endpoint: POST {"prompt": text} -> {"text": reply}"""

    name = "http"

    def __init__(self, url: str, timeout_s: float = 60.0):
        super().__init__()
        self.url = url
        self.timeout_s = timeout_s

    def submit(self, prompt: str) -> str:
        self._count_call()
        try:
            resp = requests.post(self.url, json={"prompt": prompt}, timeout=self.timeout_s)
        except (requests.ConnectionError, requests.Timeout) as e:
            raise TransientBackendError(f"HTTP backend unreachable: {e}")
        except requests.RequestException as e:
            raise BackendError(f"HTTP backend request failed: {e}")

        if resp.status_code in _RETRYABLE_STATUS:
            raise TransientBackendError(f"HTTP backend returned {resp.status_code}")
        if resp.status_code != 200:
            raise BackendError(f"HTTP backend returned {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
        except ValueError:
            raise BackendError("HTTP backend reply is not JSON")
        if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
            raise BackendError("HTTP backend reply lacks a 'text' field")
        return payload["text"]


class OpenAIBackend(CompletionBackend):
    """Chat-completion adapter; the whole prompt travels as one user message"""

    name = "openai"

    def __init__(self, api_key: str, model: str, base_url: Optional[str] = None):
        super().__init__()
        if not api_key:
            raise BackendUnavailable(f"{API_KEY_ENV} is not set")
        self.client = OpenAI(api_key=api_key, base_url=base_url)
        self.model = model

        # Pre-build base API parameters
        self.base_params = {
            "model": self.model,
            "temperature": 0,
            "max_tokens": 100
        }

    def submit(self, prompt: str) -> str:
        self._count_call()
        api_params = {**self.base_params, "messages": [{"role": "user", "content": prompt}]}
        try:
            response = self.client.chat.completions.create(**api_params)
        except (openai.APIConnectionError, openai.APITimeoutError,
                openai.RateLimitError, openai.InternalServerError) as e:
            raise TransientBackendError(f"chat-completion call failed: {e}")
        except openai.APIError as e:
            raise BackendError(f"chat-completion call rejected: {e}")
        return response.choices[0].message.content or ""


def create_backend(kind: str, env: Optional[Config] = None,
                   mock_rules: Optional[str] = None) -> CompletionBackend:
    """Build the backend named by `kind` ("mock", "http" or "openai")"""
    env = env or Config()
    if kind == "mock":
        return MockBackend.from_rules_file(mock_rules) if mock_rules else MockBackend()
    if kind == "http":
        return HttpBackend(env.BACKEND_URL, env.BACKEND_TIMEOUT_S)
    if kind == "openai":
        return OpenAIBackend(env.OPENAI_API_KEY, env.LLM_MODEL, env.LLM_BASE_URL)
    raise ConfigError([f"unknown backend {kind!r}"])
