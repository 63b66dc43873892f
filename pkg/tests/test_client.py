"""Backend client: wire protocol, retry policy, scripted mock."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chatner import ChatMessage
from chatner.client import (
    BackendConfig,
    HttpBackend,
    MockBackend,
    backoff_delay_ms,
    build_request_body,
    chat_complete,
    validate_conversation,
)
from chatner.errors import (
    AuthenticationError,
    BackendConnectionError,
    BackendError,
    BackendTimeoutError,
    ConfigError,
    ConversationError,
    MalformedResponseError,
    MockScriptError,
    RateLimitError,
    RetriesExhaustedError,
    ServerError,
)

CONVO = (ChatMessage("system", "sys"), ChatMessage("user", "hi"))


def no_sleep(_seconds: float) -> None:
    pass


class TestBackendConfig:
    def test_defaults(self):
        config = BackendConfig()
        assert config.temperature == 0.0
        assert config.max_retries == 3

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"temperature": -1.0},
            {"max_retries": -1},
            {"timeout": 0},
            {"max_tokens": 0},
            {"initial_backoff_ms": -1},
        ],
    )
    def test_invalid_settings_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            BackendConfig(**kwargs)

    def test_api_key_falls_back_to_environment(self, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "from-env")
        assert BackendConfig().resolve_api_key() == "from-env"
        assert BackendConfig(api_key="explicit").resolve_api_key() == "explicit"

    def test_no_key_anywhere_is_none(self, monkeypatch):
        monkeypatch.delenv("OPENAI_API_KEY", raising=False)
        assert BackendConfig().resolve_api_key() is None


class TestValidateConversation:
    def test_valid_shapes_pass(self):
        validate_conversation(CONVO)
        validate_conversation(
            CONVO
            + (ChatMessage("assistant", "a"), ChatMessage("user", "next"))
        )

    def test_empty_rejected(self):
        with pytest.raises(ConversationError):
            validate_conversation(())

    def test_must_start_with_system(self):
        with pytest.raises(ConversationError):
            validate_conversation((ChatMessage("user", "hi"),))

    def test_must_alternate(self):
        with pytest.raises(ConversationError):
            validate_conversation(
                (ChatMessage("system", "s"), ChatMessage("assistant", "a"))
            )

    def test_must_end_with_user(self):
        with pytest.raises(ConversationError):
            validate_conversation(CONVO + (ChatMessage("assistant", "a"),))


class TestRequestBody:
    def test_exact_wire_shape(self):
        config = BackendConfig(model="m", temperature=0.5, max_tokens=7)
        body = build_request_body(CONVO, config)
        assert body == {
            "model": "m",
            "messages": [
                {"role": "system", "content": "sys"},
                {"role": "user", "content": "hi"},
            ],
            "temperature": 0.5,
            "max_tokens": 7,
        }

    def test_byte_stable(self):
        config = BackendConfig()
        first = json.dumps(build_request_body(CONVO, config), sort_keys=True)
        second = json.dumps(build_request_body(CONVO, config), sort_keys=True)
        assert first == second


class TestHttpBackend:
    def config(self, server, **kwargs):
        kwargs.setdefault("api_key", "k")
        kwargs.setdefault("base_url", server.base_url)
        return BackendConfig(**kwargs)

    def test_success_and_wire_format(self, http_server):
        http_server.script = [http_server.reply("hello back")]
        out = HttpBackend().complete(CONVO, self.config(http_server, model="m1"))
        assert out == "hello back"
        request = http_server.requests[0]
        assert request["path"] == "/v1/chat/completions"
        assert request["authorization"] == "Bearer k"
        assert set(request["body"]) == {"model", "messages", "temperature", "max_tokens"}
        assert request["body"]["model"] == "m1"

    def test_api_key_from_environment(self, http_server, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "env-key")
        config = BackendConfig(base_url=http_server.base_url)
        HttpBackend().complete(CONVO, config)
        assert http_server.requests[-1]["authorization"] == "Bearer env-key"

    @pytest.mark.parametrize(
        "status, exception",
        [
            (401, AuthenticationError),
            (403, AuthenticationError),
            (429, RateLimitError),
            (500, ServerError),
            (503, ServerError),
            (404, BackendError),
        ],
    )
    def test_status_mapping(self, http_server, status, exception):
        http_server.script = [(status, {"error": "scripted"})]
        with pytest.raises(exception):
            HttpBackend().complete(CONVO, self.config(http_server))

    def test_non_json_body_is_malformed(self, http_server):
        http_server.script = [(200, "this is not json")]
        with pytest.raises(MalformedResponseError):
            HttpBackend().complete(CONVO, self.config(http_server))

    def test_missing_choices_is_malformed(self, http_server):
        http_server.script = [(200, {"choices": []})]
        with pytest.raises(MalformedResponseError):
            HttpBackend().complete(CONVO, self.config(http_server))

    def test_timeout(self, http_server):
        http_server.script = [("sleep", 0.5)]
        with pytest.raises(BackendTimeoutError):
            HttpBackend().complete(CONVO, self.config(http_server, timeout=0.1))

    def test_connection_refused(self):
        config = BackendConfig(base_url="http://127.0.0.1:9/v1", timeout=2)
        with pytest.raises(BackendConnectionError):
            HttpBackend().complete(CONVO, config)


class TestMockBackend:
    def test_sequence_replay(self):
        backend = MockBackend(replies=["a", "b"])
        assert backend.complete(CONVO, BackendConfig()) == "a"
        assert backend.complete(CONVO, BackendConfig()) == "b"

    def test_sequence_exhaustion_raises(self):
        backend = MockBackend(replies=["only"])
        backend.complete(CONVO, BackendConfig())
        with pytest.raises(MockScriptError):
            backend.complete(CONVO, BackendConfig())

    def test_scripted_exception_is_raised(self):
        backend = MockBackend(replies=[RateLimitError("scripted"), "later"])
        with pytest.raises(RateLimitError):
            backend.complete(CONVO, BackendConfig())
        assert backend.complete(CONVO, BackendConfig()) == "later"

    def test_substring_matcher_ignores_call_order(self):
        backend = MockBackend(
            matchers=[("entity location", "LOC"), ("entity person", "PER")]
        )
        person_convo = CONVO[:1] + (ChatMessage("user", "the entity person here"),)
        assert backend.complete(person_convo, BackendConfig()) == "PER"
        location_convo = CONVO[:1] + (ChatMessage("user", "the entity location here"),)
        assert backend.complete(location_convo, BackendConfig()) == "LOC"

    def test_matcher_looks_at_last_user_message(self):
        backend = MockBackend(matchers=[("needle", "found")])
        convo = (
            ChatMessage("system", "needle in the system prompt does not count"),
            ChatMessage("user", "nothing here"),
        )
        with pytest.raises(MockScriptError):
            backend.complete(convo, BackendConfig())

    def test_callable_matcher_sees_conversation(self):
        backend = MockBackend(
            matchers=[(lambda convo: len(convo) > 2, "long"), ("", "short")]
        )
        assert backend.complete(CONVO, BackendConfig()) == "short"
        longer = CONVO + (ChatMessage("assistant", "a"), ChatMessage("user", "u"))
        assert backend.complete(longer, BackendConfig()) == "long"

    def test_first_matching_rule_wins(self):
        backend = MockBackend(matchers=[("hi", "first"), ("hi", "second")])
        assert backend.complete(CONVO, BackendConfig()) == "first"

    def test_calls_recorded(self):
        backend = MockBackend(replies=["a"])
        backend.complete(CONVO, BackendConfig())
        assert len(backend.calls) == 1
        assert backend.calls[0][-1].content == "hi"

    def test_exactly_one_mode_required(self):
        with pytest.raises(ConfigError):
            MockBackend()
        with pytest.raises(ConfigError):
            MockBackend(replies=["a"], matchers=[("x", "y")])
        with pytest.raises(ConfigError):
            MockBackend(replies=[])

    def test_from_file_replies(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps({"replies": ["one", "two"]}))
        backend = MockBackend.from_file(path)
        assert backend.complete(CONVO, BackendConfig()) == "one"

    def test_from_file_matchers(self, tmp_path):
        path = tmp_path / "script.json"
        path.write_text(json.dumps({"matchers": [["hi", "reply"]]}))
        backend = MockBackend.from_file(path)
        assert backend.complete(CONVO, BackendConfig()) == "reply"

    @pytest.mark.parametrize(
        "payload",
        ["[]", '{"replies": "x"}', '{"matchers": [["just-one"]]}', '{"other": 1}'],
    )
    def test_from_file_rejects_bad_shapes(self, tmp_path, payload):
        path = tmp_path / "script.json"
        path.write_text(payload)
        with pytest.raises(ConfigError):
            MockBackend.from_file(path)


class TestBackoff:
    @given(st.integers(0, 20), st.integers())
    @settings(max_examples=200, deadline=None)
    def test_jitter_bounds_and_cap(self, attempt, seed):
        delay = backoff_delay_ms(attempt, 500.0, random.Random(seed))
        assert delay <= 30_000
        assert delay <= 500.0 * (2**attempt) * 1.2
        assert delay >= min(500.0 * (2**attempt) * 0.8, 30_000)

    @given(st.integers())
    @settings(max_examples=200, deadline=None)
    def test_non_decreasing_across_attempts(self, seed):
        rng = random.Random(seed)
        delays = [backoff_delay_ms(attempt, 500.0, rng) for attempt in range(12)]
        assert delays == sorted(delays)


class TestChatComplete:
    def test_mock_passthrough(self):
        out = chat_complete(CONVO, BackendConfig(), MockBackend(replies=["OK"]))
        assert out == "OK"

    def test_retries_on_rate_limit_then_succeeds(self):
        backend = MockBackend(
            replies=[RateLimitError("1"), RateLimitError("2"), "made it"]
        )
        sleeps: list[float] = []
        out = chat_complete(
            CONVO,
            BackendConfig(max_retries=3),
            backend,
            sleep=sleeps.append,
            rng=random.Random(0),
        )
        assert out == "made it"
        assert len(backend.calls) == 3
        assert len(sleeps) == 2
        assert sleeps == sorted(sleeps)

    def test_retries_on_server_error(self):
        backend = MockBackend(replies=[ServerError("boom"), "fine"])
        out = chat_complete(CONVO, BackendConfig(), backend, sleep=no_sleep)
        assert out == "fine"

    def test_zero_retries_exhausts_immediately(self):
        backend = MockBackend(replies=[RateLimitError("nope")])
        with pytest.raises(RetriesExhaustedError, match="after 1 attempt"):
            chat_complete(CONVO, BackendConfig(max_retries=0), backend, sleep=no_sleep)

    def test_exhaustion_counts_attempts(self):
        backend = MockBackend(replies=[RateLimitError(str(i)) for i in range(3)])
        with pytest.raises(RetriesExhaustedError, match="after 3 attempts"):
            chat_complete(CONVO, BackendConfig(max_retries=2), backend, sleep=no_sleep)
        assert len(backend.calls) == 3

    def test_authentication_errors_not_retried(self):
        backend = MockBackend(replies=[AuthenticationError("denied"), "never"])
        with pytest.raises(AuthenticationError):
            chat_complete(CONVO, BackendConfig(), backend, sleep=no_sleep)
        assert len(backend.calls) == 1

    def test_timeout_errors_not_retried(self):
        backend = MockBackend(replies=[BackendTimeoutError("slow"), "never"])
        with pytest.raises(BackendTimeoutError):
            chat_complete(CONVO, BackendConfig(), backend, sleep=no_sleep)
        assert len(backend.calls) == 1

    def test_conversation_validated_before_sending(self):
        backend = MockBackend(replies=["never"])
        with pytest.raises(ConversationError):
            chat_complete((ChatMessage("system", "s"),), BackendConfig(), backend)
        assert backend.calls == []
