"""LLM gateway: one entry point over three backends.

* ``http``         - POST to a chat-completions endpoint.  The prompt's system
  preamble goes into the system message, everything else into one user
  message.  Transport failures, 5xx and 429 retry with exponential backoff
  (base 1s, factor 2, small jitter); other 4xx never retry; 401/403 raise
  AuthFailure immediately.
* ``echo_nearest`` - returns the highest-similarity block's action lines
  verbatim; the retrieval-only baseline.
* ``scripted``     - returns fixture text, or (given episode context) replays
  a task's scripted policy; used for oracles and failure floors.

Completions cache to ``<cache_dir>/<digest>.json`` keyed by
(prompt, model, temperature); only the http backend consults the cache.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import AuthFailure, ExhaustedRetries, GatewayError, GatewayTimeout
from .prompting import PromptBundle, textualize_action

ENV_ENDPOINT = "XICM_LLM_ENDPOINT"
ENV_MODEL = "XICM_LLM_MODEL"
ENV_API_KEY = "XICM_LLM_API_KEY"


@dataclass
class GatewayConfig:
    endpoint_url: str = ""
    model_name: str = ""
    api_key: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 512
    request_timeout: float = 30.0
    max_retries: int = 3
    max_concurrent_requests: int = 4

    @classmethod
    def from_env(cls, **overrides: Any) -> "GatewayConfig":
        cfg = cls(
            endpoint_url=os.environ.get(ENV_ENDPOINT, ""),
            model_name=os.environ.get(ENV_MODEL, ""),
            api_key=os.environ.get(ENV_API_KEY, ""),
        )
        for key, value in overrides.items():
            setattr(cfg, key, value)
        return cfg


@dataclass
class CompletionRecord:
    prompt_digest: str
    response_text: str
    latency_s: float
    attempt_count: int
    backend: str
    from_cache: bool = False


@dataclass
class EpisodeContext:
    """What a backend may know about the episode being answered."""

    task_name: str = ""
    episode_seed: int = 0
    scene: Any = None


def prompt_digest(bundle: PromptBundle) -> str:
    return hashlib.sha256(bundle.rendered.encode("utf-8")).hexdigest()


def _cache_key(bundle: PromptBundle, model: str, temperature: float) -> str:
    h = hashlib.sha256()
    h.update(model.encode("utf-8"))
    h.update(b"\x00")
    h.update(repr(float(temperature)).encode("ascii"))
    h.update(b"\x00")
    h.update(bundle.rendered.encode("utf-8"))
    return h.hexdigest()


# ---------------------------------------------------------------------------
# backends


class TransportFailure(Exception):
    """Connection-level failure (includes timeouts); retryable."""

    def __init__(self, message: str, *, timed_out: bool = False):
        self.timed_out = timed_out
        super().__init__(message)


class HttpStatusFailure(Exception):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body
        super().__init__(f"HTTP {status}")


class HttpBackend:
    """Chat-completions wire format over requests.

    ``transport`` is injectable for tests: (payload, headers, url, timeout)
    -> (status_code, body_text), raising TransportFailure on connection
    problems.
    """

    name = "http"

    def __init__(self, cfg: GatewayConfig, transport: Callable[..., tuple[int, str]] | None = None):
        self.cfg = cfg
        self.transport = transport or self._requests_transport

    @staticmethod
    def _requests_transport(payload: dict, headers: dict, url: str, timeout: float) -> tuple[int, str]:
        import requests

        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
        except requests.Timeout as exc:
            raise TransportFailure(str(exc), timed_out=True) from exc
        except requests.RequestException as exc:
            raise TransportFailure(str(exc)) from exc
        return resp.status_code, resp.text

    def payload(self, bundle: PromptBundle) -> dict:
        return {
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": bundle.system},
                {"role": "user", "content": bundle.user_text},
            ],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
        }

    def send(self, bundle: PromptBundle, context: EpisodeContext | None = None) -> str:
        if not self.cfg.endpoint_url:
            raise GatewayError(f"no endpoint configured (set {ENV_ENDPOINT})")
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        status, body = self.transport(
            self.payload(bundle), headers, self.cfg.endpoint_url, self.cfg.request_timeout
        )
        if status in (401, 403):
            raise AuthFailure(f"endpoint rejected credentials (HTTP {status})")
        if status != 200:
            raise HttpStatusFailure(status, body)
        try:
            obj = json.loads(body)
            return obj["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from exc


class EchoNearestBackend:
    """Answers with the top block's action lines; needs no model at all."""

    name = "echo_nearest"

    def send(self, bundle: PromptBundle, context: EpisodeContext | None = None) -> str:
        if not bundle.blocks:
            raise GatewayError("echo_nearest needs at least one demo block")
        top = bundle.blocks[0]  # blocks are already sorted by similarity
        return "\n".join(textualize_action(a) for a in top.actions)


class ScriptedBackend:
    """Returns fixed text, or delegates to a callable(bundle, context)."""

    name = "scripted"

    def __init__(self, script: str | Callable[[PromptBundle, EpisodeContext | None], str]):
        self.script = script

    def send(self, bundle: PromptBundle, context: EpisodeContext | None = None) -> str:
        if callable(self.script):
            return self.script(bundle, context)
        return self.script


# ---------------------------------------------------------------------------
# gateway


_RETRYABLE_STATUSES = frozenset({429})


def _is_retryable(exc: Exception) -> bool:
    if isinstance(exc, TransportFailure):
        return True
    if isinstance(exc, HttpStatusFailure):
        return exc.status in _RETRYABLE_STATUSES or 500 <= exc.status <= 599
    return False


@dataclass
class Gateway:
    """Runs completions against a backend with retry, caching, concurrency."""

    cfg: GatewayConfig
    backend: Any
    cache_dir: str | Path | None = None
    sleep: Callable[[float], None] = time.sleep
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    jitter: float = 0.1
    _rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(), repr=False)
    _cache_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def _cache_path(self, bundle: PromptBundle) -> Path | None:
        if self.cache_dir is None or self.backend.name != "http":
            return None
        return Path(self.cache_dir) / f"{_cache_key(bundle, self.cfg.model_name, self.cfg.temperature)}.json"

    def complete(self, bundle: PromptBundle, context: EpisodeContext | None = None) -> CompletionRecord:
        digest = prompt_digest(bundle)
        cache_path = self._cache_path(bundle)
        if cache_path is not None:
            with self._cache_lock:
                if cache_path.is_file():
                    obj = json.loads(cache_path.read_text())
                    return CompletionRecord(**{**obj, "from_cache": True})

        attempts = 0
        last_exc: Exception | None = None
        start = time.monotonic()
        while attempts <= self.cfg.max_retries:
            attempts += 1
            try:
                text = self.backend.send(bundle, context)
                record = CompletionRecord(
                    prompt_digest=digest,
                    response_text=text,
                    latency_s=time.monotonic() - start,
                    attempt_count=attempts,
                    backend=self.backend.name,
                )
                if cache_path is not None:
                    with self._cache_lock:
                        cache_path.parent.mkdir(parents=True, exist_ok=True)
                        payload = {k: v for k, v in record.__dict__.items() if k != "from_cache"}
                        cache_path.write_text(json.dumps(payload, sort_keys=True))
                return record
            except Exception as exc:  # noqa: BLE001 - classified right below
                if isinstance(exc, GatewayError):
                    raise
                if not _is_retryable(exc):
                    raise GatewayError(str(exc)) from exc
                last_exc = exc
                if attempts <= self.cfg.max_retries:
                    delay = self.backoff_base * (self.backoff_factor ** (attempts - 1))
                    delay *= 1.0 + self.jitter * float(self._rng.random())
                    self.sleep(delay)

        assert last_exc is not None
        if isinstance(last_exc, TransportFailure) and last_exc.timed_out:
            raise GatewayTimeout(f"request timed out after {attempts} attempts") from last_exc
        status = last_exc.status if isinstance(last_exc, HttpStatusFailure) else None
        raise ExhaustedRetries(
            f"gave up after {attempts} attempts ({last_exc})", last_status=status
        ) from last_exc

    def complete_many(
        self, bundles: list[PromptBundle], contexts: list[EpisodeContext | None] | None = None
    ) -> list[CompletionRecord]:
        """Completes in parallel (bounded pool); results keep input order."""
        ctxs = contexts or [None] * len(bundles)
        workers = max(1, self.cfg.max_concurrent_requests)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(self.complete, b, c) for b, c in zip(bundles, ctxs)]
            return [f.result() for f in futures]
