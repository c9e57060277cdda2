"""Remote policy and GRM judge over an OpenAI-compatible chat-completions API.

Every request and raw response is appended to a JSONL audit log.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import httpx

from .actors import JudgeRequest, RolloutAborted
from .config import GatewaySettings
from .core import Action, State
from .toolcalls import parse_action

logger = logging.getLogger(__name__)

_RETRYABLE = {408, 409, 429, 500, 502, 503, 504}


class AuditLog:
    def __init__(self, path: str | Path | None) -> None:
        self.path = Path(path) if path else None
        self._lock = threading.Lock()

    def write(self, purpose: str, prompt: str, response: str | None, error: str | None = None) -> None:
        if self.path is None:
            return
        entry = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "purpose": purpose,
            "prompt_sha256": hashlib.sha256(prompt.encode()).hexdigest(),
            "response": response,
        }
        if error:
            entry["error"] = error
        with self._lock, self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


class GatewayClient:
    """Chat-completions client with bounded retries and exponential backoff."""

    def __init__(
        self,
        settings: GatewaySettings,
        audit: AuditLog | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep=time.sleep,
    ) -> None:
        self.settings = settings
        self.audit = audit or AuditLog(None)
        self._sleep = sleep
        headers = {}
        key = os.environ.get(settings.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._http = httpx.Client(
            base_url=settings.base_url, timeout=settings.timeout, headers=headers, transport=transport
        )

    def close(self) -> None:
        self._http.close()

    def complete(
        self,
        messages: list[dict[str, str]],
        model: str,
        purpose: str,
        temperature: float,
        seed: int | None = None,
    ) -> str:
        payload: dict[str, Any] = {
            "model": model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": self.settings.max_tokens,
        }
        if seed is not None:
            payload["seed"] = seed
        prompt = json.dumps(messages, ensure_ascii=False)
        last_error = ""
        for attempt in range(self.settings.max_retries + 1):
            if attempt:
                self._sleep(self.settings.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post("/chat/completions", json=payload)
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.warning("%s request failed (attempt %d): %s", purpose, attempt + 1, last_error)
                continue
            if resp.status_code in _RETRYABLE:
                last_error = f"HTTP {resp.status_code}"
                logger.warning("%s request got %s (attempt %d)", purpose, last_error, attempt + 1)
                continue
            if resp.status_code >= 400:
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                break
            try:
                content = resp.json()["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                last_error = f"malformed response: {exc}"
                continue
            self.audit.write(purpose, prompt, content)
            return content
        self.audit.write(purpose, prompt, None, last_error)
        raise RolloutAborted(f"{purpose} gateway failed after retries: {last_error}")


def state_messages(state: State) -> list[dict[str, str]]:
    """Chat transcript for a state: the prompt, then one assistant/user pair per step."""
    messages = [{"role": "user", "content": state.initial_prompt}]
    for step in state.history:
        messages.append({"role": "assistant", "content": step.action.raw_text})
        messages.append({"role": "user", "content": step.observation.raw_text})
    return messages


class GatewayPolicy:
    def __init__(self, client: GatewayClient) -> None:
        self.client = client

    def sample(self, state: State, seeds: Sequence[int]) -> list[Action]:
        messages = state_messages(state)
        s = self.client.settings
        # one independent request per candidate
        return [
            parse_action(self.client.complete(messages, s.policy_model, "policy", s.temperature, seed))
            for seed in seeds
        ]


class GatewayJudge:
    def __init__(self, client: GatewayClient) -> None:
        self.client = client

    def __call__(self, request: JudgeRequest) -> str:
        s = self.client.settings
        return self.client.complete(
            [{"role": "user", "content": request.prompt}], s.judge_model, "grm", s.judge_temperature
        )
