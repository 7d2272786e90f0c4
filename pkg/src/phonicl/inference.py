"""Chat-completion client with a deterministic replay cache.

Requests go to POST <base_url>/v1/chat/completions with a bearer token
read from the environment (PHONICL_API_KEY by default) and a JSON body
{model, messages, temperature, max_tokens}. The prompt is sent as a
single user message, preceded by an optional system message.

The replay cache keys responses by a fingerprint of (model, prompt
bytes, system message, temperature, max_tokens). Modes:

- record:      cache hits are returned without network; misses hit the
               endpoint and are persisted
- replay:      never touches the network; a miss raises CacheMissError
- passthrough: always hits the endpoint, never persists

Transient transport failures (connection errors, timeouts, HTTP
408/429/5xx) are retried with exponential backoff up to max_retries
extra attempts.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import CacheMissError, EndpointError, RequestTimeoutError

MODE_RECORD = "record"
MODE_REPLAY = "replay"
MODE_PASSTHROUGH = "passthrough"

_RETRYABLE_STATUS = frozenset({408, 429})
_BACKOFF_BASE_S = 0.25
_BACKOFF_CAP_S = 8.0


@dataclass
class EndpointConfig:
    base_url: str = "http://localhost:8000"
    model: str = ""
    api_key_env: str = "PHONICL_API_KEY"
    temperature: float = 0.0
    max_tokens: int = 256
    timeout_s: float = 60.0
    max_retries: int = 3
    parallelism: int = 1
    system_message: str | None = None

    def __post_init__(self):
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/v1/chat/completions"


def fingerprint(cfg: EndpointConfig, prompt: str) -> str:
    """Stable key over the request content and decode parameters."""
    payload = json.dumps(
        {
            "model": cfg.model,
            "prompt": prompt,
            "system": cfg.system_message,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ReplayCache:
    """JSONL-backed fingerprint -> response store, single-writer safe."""

    def __init__(self, path: str | Path | None = None, mode: str = MODE_PASSTHROUGH):
        if mode not in (MODE_RECORD, MODE_REPLAY, MODE_PASSTHROUGH):
            raise ValueError(f"unknown cache mode: {mode!r}")
        self.path = Path(path) if path is not None else None
        self.mode = mode
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    self._entries[record["fingerprint"]] = record["response"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: str) -> str | None:
        return self._entries.get(key)

    def put(self, key: str, response: str) -> None:
        with self._lock:
            if self._entries.get(key) == response:
                return
            self._entries[key] = response
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"fingerprint": key, "response": response}, ensure_ascii=False) + "\n")


def _post_once(cfg: EndpointConfig, prompt: str) -> str:
    messages = []
    if cfg.system_message is not None:
        messages.append({"role": "system", "content": cfg.system_message})
    messages.append({"role": "user", "content": prompt})
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get(cfg.api_key_env, "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    response = requests.post(
        cfg.url,
        json={
            "model": cfg.model,
            "messages": messages,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        },
        headers=headers,
        timeout=cfg.timeout_s,
    )
    if response.status_code != 200:
        raise EndpointError(response.status_code, f"HTTP {response.status_code}: {response.text[:200]}")
    try:
        return response.json()["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise EndpointError(None, f"malformed completion response: {exc}") from exc


def _call_endpoint(cfg: EndpointConfig, prompt: str) -> str:
    last_exc: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        try:
            return _post_once(cfg, prompt)
        except requests.Timeout as exc:
            last_exc = RequestTimeoutError(f"request timed out after {cfg.timeout_s}s")
            last_exc.__cause__ = exc
        except requests.ConnectionError as exc:
            last_exc = EndpointError(None, f"connection failed: {exc}")
        except EndpointError as exc:
            if exc.status is not None and (exc.status in _RETRYABLE_STATUS or exc.status >= 500):
                last_exc = exc
            else:
                raise
        if attempt < cfg.max_retries:
            time.sleep(min(_BACKOFF_BASE_S * (2**attempt), _BACKOFF_CAP_S))
    assert last_exc is not None
    raise last_exc


def complete(cfg: EndpointConfig, prompt: str, cache: ReplayCache | None = None) -> str:
    """One completion, honoring the cache mode."""
    if cache is not None and cache.mode != MODE_PASSTHROUGH:
        key = fingerprint(cfg, prompt)
        hit = cache.get(key)
        if hit is not None:
            return hit
        if cache.mode == MODE_REPLAY:
            raise CacheMissError(key)
        text = _call_endpoint(cfg, prompt)
        cache.put(key, text)
        return text
    return _call_endpoint(cfg, prompt)


@dataclass
class CompletionOutcome:
    text: str | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def complete_batch(
    cfg: EndpointConfig,
    prompts: list[str],
    cache: ReplayCache | None = None,
) -> list[CompletionOutcome]:
    """Order-preserving batch with at most cfg.parallelism in flight;
    per-item failures become error slots instead of aborting."""

    def one(prompt: str) -> CompletionOutcome:
        try:
            return CompletionOutcome(text=complete(cfg, prompt, cache))
        except (EndpointError, RequestTimeoutError, CacheMissError) as exc:
            return CompletionOutcome(text=None, error=f"{type(exc).__name__}: {exc}")

    if cfg.parallelism == 1 or len(prompts) <= 1:
        return [one(prompt) for prompt in prompts]
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        return list(pool.map(one, prompts))
