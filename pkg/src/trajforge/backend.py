"""Chat-completion backends: live HTTP, record, replay.

All agent roles speak through one interface. The live backend talks the
common chat-completions JSON shape with a tools array; the replay
backend serves recorded responses keyed on a content fingerprint of the
canonicalized request, which makes full pipeline runs reproducible and
offline-testable.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol

import httpx

from .errors import BackendError, CassetteError, ReplayMissError
from .jsonutil import canonical_dumps, fingerprint

FINISH_STOP = "stop"
FINISH_TOOL_CALL = "tool_call"
FINISH_LENGTH = "length"
FINISH_ERROR = "error"

ROLES = ("blueprint", "user", "assistant", "observation", "quality")


@dataclass
class ChatRequest:
    messages: list[dict]
    tool_schemas: list[dict] = field(default_factory=list)
    temperature: float = 0.0
    seed: Optional[int] = None
    max_tokens: int = 2048
    role: str = "assistant"  # pipeline role, used for routing and cassette keys
    model: Optional[str] = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0].get("role") != "system":
            raise ValueError("first message must be system-role")

    def canonical(self) -> dict:
        return {
            "messages": self.messages,
            "tool_schemas": self.tool_schemas,
            "temperature": self.temperature,
            "seed": self.seed,
            "max_tokens": self.max_tokens,
            "role": self.role,
            "model": self.model,
        }

    def fingerprint(self) -> str:
        return fingerprint(self.canonical())


@dataclass
class ChatResponse:
    text: Optional[str] = None
    tool_calls: list[dict] = field(default_factory=list)
    finish_reason: str = FINISH_STOP

    def __post_init__(self):
        if self.finish_reason == FINISH_TOOL_CALL and not self.tool_calls:
            raise ValueError("finish_reason tool_call requires tool_calls")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "tool_calls": self.tool_calls,
            "finish_reason": self.finish_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChatResponse":
        return cls(
            text=d.get("text"),
            tool_calls=d.get("tool_calls", []),
            finish_reason=d.get("finish_reason", FINISH_STOP),
        )


class ChatBackend(Protocol):
    def complete(self, req: ChatRequest) -> ChatResponse: ...


class TokenBucket:
    """Simple shared rate limiter; acquire blocks until a token is free."""

    def __init__(self, rate_per_s: float, capacity: Optional[float] = None):
        self.rate = rate_per_s
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_s)
        self.tokens = self.capacity
        self.updated = time.monotonic()
        self.lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self.lock:
                now = time.monotonic()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            time.sleep(wait)


class LiveBackend:
    """HTTP chat-completions client with bounded exponential backoff."""

    RETRYABLE_STATUS = {429, 500, 502, 503, 504}

    def __init__(
        self,
        endpoint: str,
        api_key_env: Optional[str] = None,
        model: str = "",
        timeout_s: float = 60.0,
        retry_cap: int = 3,
        backoff_base_s: float = 0.5,
        rate_limiter: Optional[TokenBucket] = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = os.environ.get(api_key_env, "") if api_key_env else ""
        self.model = model
        self.retry_cap = retry_cap
        self.backoff_base_s = backoff_base_s
        self.rate_limiter = rate_limiter
        self.client = httpx.Client(timeout=timeout_s)

    def _payload(self, req: ChatRequest) -> dict:
        payload: dict = {
            "model": req.model or self.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            payload["seed"] = req.seed
        if req.tool_schemas:
            payload["tools"] = [
                {"type": "function", "function": schema} for schema in req.tool_schemas
            ]
        return payload

    def complete(self, req: ChatRequest) -> ChatResponse:
        url = f"{self.endpoint}/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = "no attempt made"
        for attempt in range(self.retry_cap + 1):
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                resp = self.client.post(url, json=self._payload(req), headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    return self._parse(resp.json())
                last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code not in self.RETRYABLE_STATUS:
                    raise BackendError(f"chat endpoint rejected request: {last_error}")
            if attempt < self.retry_cap:
                time.sleep(self.backoff_base_s * (2**attempt))
        raise BackendError(f"retries exhausted ({self.retry_cap + 1} attempts): {last_error}")

    @staticmethod
    def _parse(body: dict) -> ChatResponse:
        try:
            choice = body["choices"][0]
            message = choice.get("message", {})
        except (KeyError, IndexError) as exc:
            raise BackendError(f"malformed completion body: {exc}") from exc
        calls = []
        for tc in message.get("tool_calls") or []:
            fn = tc.get("function", {})
            args = fn.get("arguments", "{}")
            if isinstance(args, str):
                try:
                    args = json.loads(args) if args.strip() else {}
                except json.JSONDecodeError:
                    args = {"_raw": args}
            calls.append({"tool": fn.get("name", ""), "arguments": args})
        raw_finish = choice.get("finish_reason", "stop")
        if calls:
            finish = FINISH_TOOL_CALL
        elif raw_finish == "length":
            finish = FINISH_LENGTH
        elif raw_finish == "stop":
            finish = FINISH_STOP
        else:
            finish = FINISH_ERROR
        return ChatResponse(text=message.get("content"), tool_calls=calls, finish_reason=finish)


class ReplayBackend:
    """Serves recorded responses; by fingerprint, in recorded order."""

    def __init__(self, cassette_path):
        self.path = cassette_path
        self.entries: dict[str, list[dict]] = {}
        self.lock = threading.Lock()
        self._load()

    def _load(self) -> None:
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        entry = json.loads(line)
                        fp = entry["fingerprint"]
                        resp = entry["response"]
                    except (json.JSONDecodeError, KeyError) as exc:
                        raise CassetteError(
                            f"corrupt cassette {self.path} at line {lineno}: {exc}"
                        ) from exc
                    self.entries.setdefault(fp, []).append(resp)
        except OSError as exc:
            raise CassetteError(f"cannot read cassette {self.path}: {exc}") from exc

    def complete(self, req: ChatRequest) -> ChatResponse:
        fp = req.fingerprint()
        with self.lock:
            bucket = self.entries.get(fp)
            if not bucket:
                raise ReplayMissError(fp)
            # identical repeated requests replay in recorded order; the
            # final recorded response answers any further repeats
            raw = bucket.pop(0) if len(bucket) > 1 else bucket[0]
        return ChatResponse.from_dict(raw)


class RecordingBackend:
    """Wraps a backend and appends every exchange to a cassette file."""

    def __init__(self, inner: ChatBackend, cassette_path):
        self.inner = inner
        self.path = cassette_path
        self.lock = threading.Lock()

    def complete(self, req: ChatRequest) -> ChatResponse:
        resp = self.inner.complete(req)
        record(req, resp, self.path, self.lock)
        return resp


def record(req: ChatRequest, resp: ChatResponse, cassette_path, lock: Optional[threading.Lock] = None) -> str:
    """Append one exchange; returns the fingerprint used as the key."""
    fp = req.fingerprint()
    line = canonical_dumps(
        {"fingerprint": fp, "request": req.canonical(), "response": resp.to_dict()}
    )
    if lock is not None:
        lock.acquire()
    try:
        with open(cassette_path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.write("\n")
    finally:
        if lock is not None:
            lock.release()
    return fp


class RoleRouter:
    """Maps pipeline roles to backends; one backend may serve many roles."""

    def __init__(self, default: ChatBackend, per_role: Optional[dict[str, ChatBackend]] = None):
        self.default = default
        self.per_role = per_role or {}

    def complete(self, req: ChatRequest) -> ChatResponse:
        backend = self.per_role.get(req.role, self.default)
        return backend.complete(req)
