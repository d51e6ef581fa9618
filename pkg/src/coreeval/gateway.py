"""Uniform generator interface over LLM backends.

Two backends ship with the package: a deterministic scripted mock for
offline runs and tests, and an HTTP backend for remote providers
(credentials from ``CORE_EVAL_API_KEY``). Responses can be cached in a
content-addressed directory; cache writes are atomic.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field

import requests

from .errors import ConfigError, CredentialError, TransportError, TransportTimeout

API_KEY_ENV = "CORE_EVAL_API_KEY"

# Inference defaults: temperature 1.0 / top-p 1.0 everywhere; max tokens
# differ between proprietary-style (1024) and local-style (512) backends.
PROPRIETARY_MAX_TOKENS = 1024
LOCAL_MAX_TOKENS = 512

BACKEND_STYLES = {"proprietary": PROPRIETARY_MAX_TOKENS, "local": LOCAL_MAX_TOKENS}


@dataclass(frozen=True)
class GeneratorRequest:
    template_id: str
    rendered_prompt: str
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = PROPRIETARY_MAX_TOKENS
    seed: int | None = None

    def __post_init__(self):
        if not self.rendered_prompt:
            raise ValueError("rendered_prompt is empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def payload(self) -> dict:
        return {
            "template_id": self.template_id,
            "rendered_prompt": self.rendered_prompt,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class GeneratorResponse:
    text: str
    backend_id: str
    cached: bool = False
    latency_ms: int = 0


def prompt_digest(prompt: str) -> str:
    """Content digest used to key scripted mock responses."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def request_digest(backend_id: str, request: GeneratorRequest) -> str:
    """Cache key: digest over backend id plus every request field."""
    blob = json.dumps(
        {"backend_id": backend_id, "request": request.payload()},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class MockRule:
    """Scripted response rule: matches on template id and/or a prompt
    substring; ``None`` means \"any\"."""

    response: str
    template_id: str | None = None
    contains: str | None = None

    def matches(self, request: GeneratorRequest) -> bool:
        if self.template_id is not None and self.template_id != request.template_id:
            return False
        if self.contains is not None and self.contains not in request.rendered_prompt:
            return False
        return True


class MockBackend:
    """Deterministic scripted backend.

    Resolution order per request: exact prompt digest in ``script`` ->
    first matching rule -> seeded label draw (when ``label_space`` is set)
    -> ``default``. ``script`` keys may be sha256 digests or literal
    prompt text. The response is a pure function of the script and the
    request, so identical requests always produce identical text.
    """

    def __init__(
        self,
        script: dict[str, str] | None = None,
        rules: list[MockRule] | None = None,
        label_space: tuple[str, ...] | None = None,
        seed: int = 0,
        default: str | None = None,
        backend_id: str = "mock",
    ):
        self.backend_id = backend_id
        self.script = dict(script or {})
        self.rules = list(rules or [])
        self.label_space = label_space
        self.seed = seed
        self.default = default
        self.default_max_tokens = PROPRIETARY_MAX_TOKENS
        self.calls = 0
        self.calls_by_template: dict[str, int] = {}
        self._lock = threading.Lock()

    def _resolve(self, request: GeneratorRequest) -> str:
        digest = prompt_digest(request.rendered_prompt)
        if digest in self.script:
            return self.script[digest]
        if request.rendered_prompt in self.script:
            return self.script[request.rendered_prompt]
        for rule in self.rules:
            if rule.matches(request):
                return rule.response
        if self.label_space:
            draw = hashlib.sha256(
                f"{self.seed}:{request.rendered_prompt}".encode("utf-8")
            ).hexdigest()
            return self.label_space[int(draw, 16) % len(self.label_space)]
        if self.default is not None:
            return self.default
        raise ConfigError(
            f"mock backend has no scripted response for template "
            f"{request.template_id!r}"
        )

    def complete(self, request: GeneratorRequest) -> str:
        text = self._resolve(request)
        with self._lock:
            self.calls += 1
            self.calls_by_template[request.template_id] = (
                self.calls_by_template.get(request.template_id, 0) + 1
            )
        return text


class TokenBucket:
    """Thread-safe token bucket; acquire() blocks until a token is free."""

    def __init__(self, rate: float, capacity: float | None = None, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else rate
        self._tokens = self.capacity
        self._stamp = time.monotonic()
        self._sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            self._sleep(wait)


@dataclass
class RetryPolicy:
    """Up to ``attempts`` tries with exponential backoff and +/-20% jitter,
    retrying only timeouts, connection failures, 429, and 5xx."""

    attempts: int = 4
    base_delay: float = 1.0
    jitter: float = 0.2
    retry_statuses: frozenset[int] = frozenset({429, 500, 502, 503, 504})
    sleep: object = time.sleep
    rng: random.Random = field(default_factory=random.Random)

    def delay(self, attempt: int) -> float:
        base = self.base_delay * (2**attempt)
        return base * self.rng.uniform(1 - self.jitter, 1 + self.jitter)

    def pause(self, attempt: int) -> None:
        self.sleep(self.delay(attempt))


class HTTPBackend:
    """Remote provider backend: JSON POST, bearer credentials from the
    environment, bounded concurrency, and a shared rate limiter.

    Wire format: the request body is ``{"model", "prompt", "temperature",
    "top_p", "max_tokens", "seed"}``; the response body must carry the
    generated text under ``"text"``.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        style: str = "proprietary",
        api_key_env: str = API_KEY_ENV,
        timeout: float = 30.0,
        retry: RetryPolicy | None = None,
        rate_limiter: TokenBucket | None = None,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
        backend_id: str | None = None,
    ):
        if not base_url:
            raise ConfigError("http backend needs a base_url")
        if not model:
            raise ConfigError("http backend needs a model name")
        if style not in BACKEND_STYLES:
            raise ConfigError(f"backend style must be one of {sorted(BACKEND_STYLES)}")
        self.base_url = base_url
        self.model = model
        self.style = style
        self.default_max_tokens = BACKEND_STYLES[style]
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retry = retry or RetryPolicy()
        # remote etiquette: 4 in-flight calls, 4 requests/second
        self.rate_limiter = rate_limiter if rate_limiter is not None else TokenBucket(rate=4.0)
        self.backend_id = backend_id or f"http:{model}"
        self._session = session or requests.Session()
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise CredentialError(f"environment variable {self.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}"}

    def complete(self, request: GeneratorRequest) -> str:
        headers = self._headers()
        body = {
            "model": self.model,
            "prompt": request.rendered_prompt,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        }
        last_status: int | None = None
        timed_out = False
        for attempt in range(self.retry.attempts):
            if attempt:
                self.retry.pause(attempt - 1)
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                with self._slots:
                    resp = self._session.post(
                        self.base_url, json=body, headers=headers, timeout=self.timeout
                    )
            except requests.Timeout:
                timed_out = True
                continue
            except requests.ConnectionError:
                last_status = None
                timed_out = False
                continue
            if resp.status_code in (401, 403):
                raise CredentialError(
                    f"authentication rejected ({resp.status_code})", status=resp.status_code
                )
            if resp.status_code in self.retry.retry_statuses:
                last_status = resp.status_code
                timed_out = False
                continue
            if resp.status_code != 200:
                raise TransportError(
                    f"backend returned HTTP {resp.status_code}", status=resp.status_code
                )
            try:
                return str(resp.json()["text"])
            except (ValueError, KeyError) as exc:
                raise TransportError(f"malformed backend response: {exc}", status=200)
        if timed_out:
            raise TransportTimeout(f"timed out after {self.retry.attempts} attempts")
        raise TransportError(
            f"exhausted {self.retry.attempts} attempts (last status {last_status})",
            status=last_status,
        )


def build_request(gateway, template_id: str, rendered_prompt: str) -> GeneratorRequest:
    """Build a step request, honoring the gateway's style defaults when
    it exposes them (plain callables get the proprietary defaults)."""
    if hasattr(gateway, "request"):
        return gateway.request(template_id, rendered_prompt)
    return GeneratorRequest(template_id=template_id, rendered_prompt=rendered_prompt)


def generate(backend, request: GeneratorRequest) -> GeneratorResponse:
    """Run one generation call and wrap the result."""
    start = time.perf_counter()
    text = backend.complete(request)
    latency_ms = max(0, int((time.perf_counter() - start) * 1000))
    return GeneratorResponse(text=text, backend_id=backend.backend_id, latency_ms=latency_ms)


class ResponseCache:
    """Directory of response files named by request digest.

    Each entry stores the request and response JSON. Writes go through a
    temp file and an atomic rename, so a crash can never leave a torn
    entry; corrupt entries read as misses and get rewritten.
    """

    def __init__(self, directory):
        self.directory = str(directory)
        os.makedirs(self.directory, exist_ok=True)

    def _path(self, key: str) -> str:
        return os.path.join(self.directory, f"{key}.json")

    def get(self, key: str) -> str | None:
        try:
            with open(self._path(key), "r", encoding="utf-8") as fh:
                entry = json.load(fh)
            return str(entry["response"]["text"])
        except FileNotFoundError:
            return None
        except (ValueError, KeyError, TypeError):
            return None

    def put(self, key: str, backend_id: str, request: GeneratorRequest, text: str) -> None:
        entry = {
            "backend_id": backend_id,
            "request": request.payload(),
            "response": {"text": text},
        }
        tmp = self._path(key) + f".tmp.{os.getpid()}.{threading.get_ident()}"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(entry, fh, ensure_ascii=False, sort_keys=True)
        os.replace(tmp, self._path(key))


def cached_generate(
    backend, request: GeneratorRequest, cache: ResponseCache
) -> GeneratorResponse:
    """Generate through a content-addressed cache; hits skip the backend."""
    key = request_digest(backend.backend_id, request)
    hit = cache.get(key)
    if hit is not None:
        return GeneratorResponse(text=hit, backend_id=backend.backend_id, cached=True)
    response = generate(backend, request)
    cache.put(key, backend.backend_id, request, response.text)
    return response


class Gateway:
    """Backend plus optional cache, used by the pipeline as one callable."""

    def __init__(self, backend, cache: ResponseCache | None = None):
        self.backend = backend
        self.cache = cache

    @property
    def backend_id(self) -> str:
        return self.backend.backend_id

    def request(self, template_id: str, rendered_prompt: str, **overrides) -> GeneratorRequest:
        """Build a request with the backend's style defaults applied."""
        overrides.setdefault(
            "max_tokens", getattr(self.backend, "default_max_tokens", PROPRIETARY_MAX_TOKENS)
        )
        return GeneratorRequest(
            template_id=template_id, rendered_prompt=rendered_prompt, **overrides
        )

    def __call__(self, request: GeneratorRequest) -> GeneratorResponse:
        if self.cache is not None:
            return cached_generate(self.backend, request, self.cache)
        return generate(self.backend, request)
