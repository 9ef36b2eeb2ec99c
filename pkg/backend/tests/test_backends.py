"""
Tests for the completion backends.

The HTTP and chat-completion adapters are exercised against mocked
`requests.post` / `OpenAI` clients; no network access is required.

Test classes
============
TestMockBackend         - keyword rules, default reply, determinism, rules file
TestHttpBackend         - {"prompt"} -> {"text"} wire format and error mapping
TestOpenAIBackend       - chat-completion adapter and error mapping
TestCreateBackend       - factory by backend name
"""

import json
from unittest.mock import MagicMock, patch

import httpx
import openai
import pytest
import requests

from backends import HttpBackend, MockBackend, OpenAIBackend, create_backend
from config import Config
from errors import BackendError, BackendUnavailable, ConfigError, TransientBackendError
from models import Activity, PoiRecord
from prompt_builder import build_prompt, default_prompt_spec
from response_parser import parse_response


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _prompt(name=None, **features):
    poi = PoiRecord(id="x", name=name, lon=0.0, lat=0.0, features=features)
    return build_prompt(default_prompt_spec(), poi)


def _http_response(status=200, payload=None, text=""):
    resp = MagicMock()
    resp.status_code = status
    resp.text = text
    if payload is None:
        resp.json.side_effect = ValueError("no json")
    else:
        resp.json.return_value = payload
    return resp


def _chat_response(content):
    message = MagicMock()
    message.content = content
    choice = MagicMock()
    choice.message = message
    resp = MagicMock()
    resp.choices = [choice]
    return resp


# ---------------------------------------------------------------------------
# Mock backend
# ---------------------------------------------------------------------------

class TestMockBackend:

    def test_restaurant_rule(self):
        reply = MockBackend().submit(_prompt("Golden Dragon", amenity="restaurant"))
        assert parse_response(reply).top1 is Activity.BUY_MEALS

    def test_no_match_answers_something_else(self):
        reply = MockBackend().submit(_prompt("Zzyzx"))
        assert reply == "14: 0.5"

    def test_visitor_parking_splits_between_pickup_and_visit(self):
        reply = MockBackend().submit(_prompt("Visitor parking", amenity="parking"))
        result = parse_response(reply)
        assert [int(e.code) for e in result.top3] == [15, 11]
        assert [e.probability for e in result.top3] == [0.4, 0.35]

    def test_only_observation_section_is_matched(self):
        # category examples mention "restaurant"; an unrelated POI must not pick it up
        reply = MockBackend().submit(_prompt("Zzyzx"))
        assert "7:" not in reply

    def test_keywords_match_whole_words(self):
        backend = MockBackend()
        assert backend.classify_text("the name is parkside.") == [(Activity.SOMETHING_ELSE, 0.5)]

    def test_arabic_name(self):
        reply = MockBackend().submit(_prompt("مطعم الشرق"))
        assert parse_response(reply).top1 is Activity.BUY_MEALS

    def test_mass_above_one_is_scaled(self):
        backend = MockBackend([("a", 7, 0.7), ("b", 5, 0.6)])
        pairs = backend.classify_text("a b")
        assert sum(p for _, p in pairs) == pytest.approx(1.0)
        assert [code for code, _ in pairs] == [Activity.BUY_MEALS, Activity.BUY_GOODS]

    def test_deterministic_and_counted(self):
        backend = MockBackend()
        prompt = _prompt("KFC", amenity="fast_food")
        assert backend.submit(prompt) == backend.submit(prompt)
        assert backend.calls == 2

    def test_rules_file(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(json.dumps([{"keyword": "kiosk", "code": 5, "prob": 0.8}]))
        backend = MockBackend.from_rules_file(str(path))
        assert backend.classify_text("kiosk") == [(Activity.BUY_GOODS, 0.8)]

    def test_bad_rules_file(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(json.dumps([{"keyword": "kiosk", "code": 99, "prob": 0.8}]))
        with pytest.raises(ConfigError):
            MockBackend.from_rules_file(str(path))


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------

class TestHttpBackend:

    def test_posts_prompt_and_reads_text(self):
        with patch("backends.requests.post") as post:
            post.return_value = _http_response(payload={"text": "7: 0.7"})
            reply = HttpBackend("http://llm.local/complete", timeout_s=5).submit("hello")
        assert reply == "7: 0.7"
        post.assert_called_once_with("http://llm.local/complete", json={"prompt": "hello"},
                                     timeout=5)

    @pytest.mark.parametrize("status", [429, 500, 503])
    def test_retryable_status_is_transient(self, status):
        with patch("backends.requests.post", return_value=_http_response(status)):
            with pytest.raises(TransientBackendError):
                HttpBackend("http://llm.local").submit("p")

    def test_client_error_is_permanent(self):
        with patch("backends.requests.post", return_value=_http_response(400, text="bad")):
            with pytest.raises(BackendError) as exc_info:
                HttpBackend("http://llm.local").submit("p")
        assert not isinstance(exc_info.value, TransientBackendError)

    def test_connection_error_is_transient(self):
        with patch("backends.requests.post", side_effect=requests.ConnectionError("down")):
            with pytest.raises(TransientBackendError):
                HttpBackend("http://llm.local").submit("p")

    def test_reply_without_text_field(self):
        with patch("backends.requests.post", return_value=_http_response(payload={"x": 1})):
            with pytest.raises(BackendError):
                HttpBackend("http://llm.local").submit("p")

    def test_non_json_reply(self):
        with patch("backends.requests.post", return_value=_http_response(payload=None)):
            with pytest.raises(BackendError):
                HttpBackend("http://llm.local").submit("p")


# ---------------------------------------------------------------------------
# Chat-completion backend
# ---------------------------------------------------------------------------

@pytest.fixture
def chat():
    """OpenAIBackend whose underlying OpenAI client is fully mocked."""
    with patch("backends.OpenAI") as mock_cls:
        mock_client = MagicMock()
        mock_cls.return_value = mock_client
        backend = OpenAIBackend(api_key="fake-key", model="gpt-4")
        backend._mock_client = mock_client
        yield backend


class TestOpenAIBackend:

    def test_prompt_sent_as_single_user_message(self, chat):
        chat._mock_client.chat.completions.create.return_value = _chat_response("7: 0.7")
        assert chat.submit("classify this") == "7: 0.7"
        kwargs = chat._mock_client.chat.completions.create.call_args.kwargs
        assert kwargs["model"] == "gpt-4"
        assert kwargs["temperature"] == 0
        assert kwargs["messages"] == [{"role": "user", "content": "classify this"}]

    def test_empty_content_is_empty_reply(self, chat):
        chat._mock_client.chat.completions.create.return_value = _chat_response(None)
        assert chat.submit("p") == ""

    def test_connection_error_is_transient(self, chat):
        request = httpx.Request("POST", "https://api.openai.com/v1/chat/completions")
        chat._mock_client.chat.completions.create.side_effect = \
            openai.APIConnectionError(request=request)
        with pytest.raises(TransientBackendError):
            chat.submit("p")

    def test_missing_api_key(self):
        with pytest.raises(BackendUnavailable) as exc_info:
            OpenAIBackend(api_key="", model="gpt-4")
        assert "OPENAI_API_KEY" in str(exc_info.value)


class TestCreateBackend:

    def test_mock(self):
        assert isinstance(create_backend("mock"), MockBackend)

    def test_http_uses_configured_url(self):
        env = Config(BACKEND_URL="http://example.test/complete", BACKEND_TIMEOUT_S=3.0)
        backend = create_backend("http", env)
        assert isinstance(backend, HttpBackend)
        assert backend.url == "http://example.test/complete"
        assert backend.timeout_s == 3.0

    def test_openai_reads_key_from_env_config(self):
        env = Config(OPENAI_API_KEY="k", LLM_MODEL="gpt-3.5-turbo")
        with patch("backends.OpenAI") as mock_cls:
            backend = create_backend("openai", env)
        assert backend.model == "gpt-3.5-turbo"
        mock_cls.assert_called_once_with(api_key="k", base_url=None)

    def test_unknown(self):
        with pytest.raises(ConfigError):
            create_backend("carrier-pigeon")
