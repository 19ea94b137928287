"""Minimal chat-completions client shared by the remote planner and matcher."""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass
from typing import Any, Callable

import httpx

from kgpilot.metrics import estimate_tokens

logger = logging.getLogger(__name__)

ENV_BASE_URL = "OPENAI_BASE_URL"
ENV_API_KEY = "OPENAI_API_KEY"
ENV_MODEL = "OPENAI_MODEL"
DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-4"

RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class BackendError(RuntimeError):
    """A backend call failed for good (retries exhausted or non-retryable error)."""


@dataclass(frozen=True)
class ChatConfig:
    base_url: str = DEFAULT_BASE_URL
    api_key: str = ""
    model: str = DEFAULT_MODEL
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 1.0

    @classmethod
    def from_env(cls, **overrides: Any) -> "ChatConfig":
        values = {
            "base_url": os.environ.get(ENV_BASE_URL, "").strip() or DEFAULT_BASE_URL,
            "api_key": os.environ.get(ENV_API_KEY, "").strip(),
            "model": os.environ.get(ENV_MODEL, "").strip() or DEFAULT_MODEL,
        }
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class ChatReply:
    text: str
    prompt_tokens: int
    completion_tokens: int


class ChatClient:
    def __init__(
        self,
        config: ChatConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._http = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )

    def close(self) -> None:
        self._http.close()

    def complete(self, messages: list[dict[str, str]], *, temperature: float = 0.0) -> ChatReply:
        body = {"model": self.config.model, "messages": messages, "temperature": temperature}
        last: Exception | None = None
        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            try:
                resp = self._http.post("/chat/completions", json=body)
            except httpx.TransportError as exc:
                last = exc
            else:
                if resp.status_code == 200:
                    return self._parse(resp, messages)
                if resp.status_code not in RETRYABLE_STATUS:
                    raise BackendError(f"chat backend returned HTTP {resp.status_code}: {resp.text[:200]}")
                last = BackendError(f"HTTP {resp.status_code}")
            logger.warning("chat attempt %d/%d failed: %s", attempt + 1, attempts, last)
            if attempt + 1 < attempts:
                self._sleep(self.config.backoff * (2**attempt))
        raise BackendError(f"chat backend failed after {attempts} attempts: {last}")

    @staticmethod
    def _parse(resp: httpx.Response, messages: list[dict[str, str]]) -> ChatReply:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {exc}") from exc
        usage = data.get("usage") or {}
        prompt_tokens = usage.get("prompt_tokens")
        if prompt_tokens is None:
            prompt_tokens = sum(estimate_tokens(m["content"]) for m in messages)
        completion_tokens = usage.get("completion_tokens")
        if completion_tokens is None:
            completion_tokens = estimate_tokens(text)
        return ChatReply(text, int(prompt_tokens), int(completion_tokens))


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json(text: str) -> Any:
    """Pull the first JSON document out of a model reply (fenced or bare)."""
    m = _FENCE.search(text)
    candidate = m.group(1) if m else text
    start = min((i for i in (candidate.find("{"), candidate.find("[")) if i >= 0), default=-1)
    if start < 0:
        raise ValueError("no JSON document in reply")
    obj, _ = json.JSONDecoder().raw_decode(candidate[start:])
    return obj
