import httpx
import pytest

from kgpilot.llm import BackendError, ChatClient, ChatConfig, extract_json

from conftest import chat_client


def test_config_from_env(monkeypatch):
    monkeypatch.setenv("OPENAI_BASE_URL", "http://local:8000/v1")
    monkeypatch.setenv("OPENAI_API_KEY", "secret")
    monkeypatch.setenv("OPENAI_MODEL", "tiny")
    cfg = ChatConfig.from_env(max_retries=1)
    assert (cfg.base_url, cfg.api_key, cfg.model, cfg.max_retries) == ("http://local:8000/v1", "secret", "tiny", 1)
    monkeypatch.delenv("OPENAI_MODEL")
    assert ChatConfig.from_env().model == "gpt-4"


def test_extract_json_variants():
    assert extract_json('{"a": 1}') == {"a": 1}
    assert extract_json('Sure!\n```json\n{"a": [1, 2]}\n```\nDone.') == {"a": [1, 2]}
    assert extract_json('prefix [1, 2] suffix') == [1, 2]
    with pytest.raises(ValueError):
        extract_json("nothing here")


def test_request_shape_and_usage():
    seen = []
    reply = chat_client(["hi"], seen).complete([{"role": "user", "content": "hello"}])
    assert reply.text == "hi" and (reply.prompt_tokens, reply.completion_tokens) == (11, 7)
    assert seen[0]["model"] == "m" and seen[0]["temperature"] == 0.0


def test_usage_estimated_when_missing():
    def handler(request):
        return httpx.Response(200, json={"choices": [{"message": {"content": "two words"}}]})

    client = ChatClient(ChatConfig(base_url="http://x/v1"), transport=httpx.MockTransport(handler))
    reply = client.complete([{"role": "user", "content": "one two three"}])
    assert (reply.prompt_tokens, reply.completion_tokens) == (3, 2)


def test_client_error_not_retried():
    seen = []
    with pytest.raises(BackendError):
        chat_client([401, "never"], seen).complete([{"role": "user", "content": "x"}])
    assert len(seen) == 1


def test_transport_errors_retried_with_backoff():
    calls, sleeps = [], []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            raise httpx.ConnectError("refused")
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    client = ChatClient(ChatConfig(base_url="http://x/v1", backoff=0.5), transport=httpx.MockTransport(handler), sleep=sleeps.append)
    assert client.complete([{"role": "user", "content": "x"}]).text == "ok"
    assert sleeps == [0.5, 1.0]


def test_malformed_body():
    def handler(request):
        return httpx.Response(200, json={"unexpected": True})

    client = ChatClient(ChatConfig(base_url="http://x/v1"), transport=httpx.MockTransport(handler))
    with pytest.raises(BackendError):
        client.complete([{"role": "user", "content": "x"}])
