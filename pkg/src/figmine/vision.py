"""Vision-model requests: one page image plus one prompt per call.

Two interchangeable backends sit behind ``Backend.complete``: ``HttpBackend``
speaks the chat-completions wire shape, ``ReplayBackend`` serves canned
responses keyed by the image's sha256. ``run_batch`` drives either one with
bounded concurrency, a sliding-window rate limit, retries with exponential
backoff and a bad-output screen, committing results through a single writer.
"""
from __future__ import annotations

import base64
import hashlib
import io
import logging
import math
import os
import threading
import time
from collections import deque
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from decimal import ROUND_FLOOR, Decimal
from pathlib import Path
from typing import Callable, Literal, Protocol, Sequence
from urllib.parse import urlparse

import requests
from PIL import Image

from .errors import BackendError, ValidationError
from .prompts import PromptText

log = logging.getLogger(__name__)

Status = Literal["ok", "transport_error", "bad_output", "exhausted"]
PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
SECONDS_PER_DAY = Decimal(86400)


@dataclass(frozen=True)
class ModelConfig:
    base_url: str = "https://api.openai.com/v1"
    model_id: str = "gpt-4-vision-preview"
    # 300 often truncates full extraction answers; the extract command uses 1024
    max_tokens: int = 300
    timeout_s: float = 60.0
    api_key_env: str = "FIGMINE_API_KEY"
    max_image_bytes: int = 20 * 1024 * 1024

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValidationError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.timeout_s <= 0 or self.max_image_bytes <= 0:
            raise ValidationError("timeout_s and max_image_bytes must be positive")
        url = urlparse(self.base_url)
        if url.scheme not in ("http", "https") or not url.netloc:
            raise ValidationError(f"base_url is not an http(s) URL: {self.base_url!r}")

    @property
    def endpoint(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"


@dataclass(frozen=True)
class CostModel:
    usd_per_image: Decimal = Decimal("0.02")
    seconds_per_request: Decimal = Decimal("5.2")
    pages_per_paper: Decimal = Decimal("18")
    # used instead of the flat rate when the backend reports token usage
    usd_per_token: Decimal | None = None

    def __post_init__(self):
        for name in ("usd_per_image", "seconds_per_request", "pages_per_paper"):
            value = Decimal(str(getattr(self, name)))
            if value <= 0:
                raise ValidationError(f"{name} must be positive, got {value}")
            object.__setattr__(self, name, value)
        if self.usd_per_token is not None:
            object.__setattr__(self, "usd_per_token", Decimal(str(self.usd_per_token)))

    def request_cost(self, request_tokens: int = 0, response_tokens: int = 0) -> Decimal:
        tokens = request_tokens + response_tokens
        if self.usd_per_token is not None and tokens > 0:
            return self.usd_per_token * tokens
        return self.usd_per_image


@dataclass(frozen=True)
class CostEstimate:
    usd: Decimal
    serial_days: Decimal
    wall_days: Decimal
    papers_equivalent: Decimal

    @property
    def whole_papers(self) -> int:
        return int(self.papers_equivalent.to_integral_value(ROUND_FLOOR))

    def to_dict(self) -> dict:
        return {
            "usd": f"{self.usd:.2f}",
            "serial_days": f"{self.serial_days:.4f}",
            "wall_days": f"{self.wall_days:.4f}",
            "papers_equivalent": f"{self.papers_equivalent:.2f}",
            "whole_papers": self.whole_papers,
        }


def estimate_cost(n_images: int, m: CostModel | None = None, concurrency: int = 1) -> CostEstimate:
    m = m or CostModel()
    if n_images < 0:
        raise ValidationError(f"n_images must be >= 0, got {n_images}")
    if concurrency < 1:
        raise ValidationError(f"concurrency must be >= 1, got {concurrency}")
    n = Decimal(n_images)
    serial = n * m.seconds_per_request / SECONDS_PER_DAY
    return CostEstimate(n * m.usd_per_image, serial, serial / concurrency, n / m.pages_per_paper)


def images_for_budget(usd: Decimal | str | float, m: CostModel | None = None) -> int:
    m = m or CostModel()
    budget = Decimal(str(usd))
    if budget < 0:
        raise ValidationError("budget must be >= 0")
    return int((budget / m.usd_per_image).to_integral_value(ROUND_FLOOR))


@dataclass(frozen=True)
class BatchPolicy:
    concurrency: int = 4
    requests_per_minute: float = 60.0
    max_attempts: int = 3
    backoff_initial_s: float = 2.0
    backoff_multiplier: float = 2.0
    backoff_cap_s: float = 60.0
    requeue_keywords: tuple[str, ...] = ("Error:", "upload the image", "analyze", "Sorry", "sorry")
    required_markers: tuple[str, ...] = ("Figures", "Nitrogen Isotherm")

    def __post_init__(self):
        if self.concurrency < 1:
            raise ValidationError(f"concurrency must be >= 1, got {self.concurrency}")
        if self.max_attempts < 1:
            raise ValidationError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if not self.requests_per_minute > 0:
            raise ValidationError("requests_per_minute must be positive")

    def backoff(self, attempt: int) -> float:
        """Delay before retrying after the ``attempt``-th failure (0-based)."""
        return min(self.backoff_cap_s, self.backoff_initial_s * self.backoff_multiplier ** attempt)


def needs_requeue(text: str | None, policy: BatchPolicy) -> bool:
    """True for text that is absent, empty, apologetic, or off-template."""
    if not text or not text.strip():
        return True
    if any(k in text for k in policy.requeue_keywords):
        return True
    if policy.required_markers and not any(m in text for m in policy.required_markers):
        return True
    return False


@dataclass(frozen=True)
class BackendReply:
    text: str
    request_tokens: int = 0
    response_tokens: int = 0


class TransportError(Exception):
    def __init__(self, message: str, status_code: int | None = None):
        super().__init__(message)
        self.status_code = status_code


class Backend(Protocol):
    name: str

    def complete(self, image: bytes, image_key: str, prompt: PromptText,
                 cfg: ModelConfig, attempt: int) -> BackendReply: ...


class HttpBackend:
    name = "api"

    def __init__(self, session: requests.Session | None = None, api_key: str | None = None):
        self.session = session or requests.Session()
        self._api_key = api_key

    def _key(self, cfg: ModelConfig) -> str:
        key = self._api_key or os.environ.get(cfg.api_key_env)
        if not key:
            raise BackendError(f"API key not set: export {cfg.api_key_env}")
        return key

    @staticmethod
    def payload(image: bytes, prompt: PromptText, cfg: ModelConfig) -> dict:
        data_url = "data:image/png;base64," + base64.b64encode(image).decode("ascii")
        return {
            "model": cfg.model_id,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt.body},
                    {"type": "image_url", "image_url": {"url": data_url}},
                ],
            }],
            "max_tokens": cfg.max_tokens,
        }

    def complete(self, image, image_key, prompt, cfg, attempt):
        headers = {"Authorization": f"Bearer {self._key(cfg)}", "Content-Type": "application/json"}
        try:
            resp = self.session.post(cfg.endpoint, json=self.payload(image, prompt, cfg),
                                     headers=headers, timeout=cfg.timeout_s)
        except requests.RequestException as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if not 200 <= resp.status_code < 300:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}", resp.status_code)
        if not resp.content:
            return BackendReply("")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed response body: {exc}", resp.status_code) from exc
        usage = body.get("usage") or {}
        return BackendReply(text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))


@dataclass(frozen=True)
class ReplayCall:
    image_key: str
    attempt: int
    issued_at: float
    in_flight: int


class ReplayBackend:
    """Canned responses from ``<dir>/<sha256>.txt``.

    ``<sha256>.<attempt>.txt`` takes precedence for a given attempt, which
    lets fixtures script a bad first answer followed by a good one. Every
    call is logged with the injected clock's time so tests can audit rate
    and concurrency after the fact.
    """

    name = "replay"

    def __init__(self, fixtures: str | Path, clock: Callable[[], float] = time.monotonic,
                 latency_s: float = 0.0, sleep: Callable[[float], None] = time.sleep):
        self.fixtures = Path(fixtures)
        if not self.fixtures.is_dir():
            raise BackendError(f"replay fixture directory not found: {self.fixtures}")
        self.clock = clock
        self.latency_s = latency_s
        self._sleep = sleep
        self._lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight = 0
        self.calls: list[ReplayCall] = []

    def complete(self, image, image_key, prompt, cfg, attempt):
        with self._lock:
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
            self.calls.append(ReplayCall(image_key, attempt, self.clock(), self._in_flight))
        try:
            if self.latency_s:
                self._sleep(self.latency_s)
            for name in (f"{image_key}.{attempt}.txt", f"{image_key}.txt"):
                path = self.fixtures / name
                if path.is_file():
                    return BackendReply(path.read_bytes().decode("utf-8"))
            raise TransportError(f"no replay fixture for {image_key}", 404)
        finally:
            with self._lock:
                self._in_flight -= 1


class RateLimiter:
    """Sliding-window limiter: at most ``max_calls`` issues per ``period`` seconds."""

    def __init__(self, max_calls: int, period: float = 60.0,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if max_calls < 1 or period <= 0:
            raise ValidationError("rate limiter needs max_calls >= 1 and period > 0")
        self.max_calls = max_calls
        self.period = period
        self.clock = clock
        self.sleep = sleep
        self._issued: deque[float] = deque()
        self._lock = threading.Lock()

    @classmethod
    def per_minute(cls, rate: float, **kw) -> "RateLimiter":
        # whole calls per window; a fractional rate stretches the window instead
        calls = max(1, math.floor(rate))
        return cls(calls, 60.0 * calls / rate, **kw)

    def acquire(self) -> float:
        """Block until a slot is free; return the issue time."""
        with self._lock:
            while True:
                now = self.clock()
                while self._issued and now - self._issued[0] >= self.period:
                    self._issued.popleft()
                if len(self._issued) < self.max_calls:
                    self._issued.append(now)
                    return now
                self.sleep(self._issued[0] + self.period - now)


@dataclass
class VisionExchange:
    image_ref: str
    prompt_version: str
    raw_text: str
    status: Status
    attempt_count: int = 1
    request_tokens: int = 0
    response_tokens: int = 0
    latency_s: float = 0.0
    cost_usd: Decimal = Decimal(0)
    history: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.attempt_count < 1:
            raise ValueError("attempt_count must be >= 1")
        if self.status == "ok" and not self.raw_text:
            raise ValueError("an ok exchange must carry response text")


def to_png_bytes(image: bytes) -> bytes:
    if image.startswith(PNG_MAGIC):
        return image
    try:
        with Image.open(io.BytesIO(image)) as im:
            buf = io.BytesIO()
            im.save(buf, format="PNG")
            return buf.getvalue()
    except Exception as exc:
        raise BackendError(f"image does not decode: {exc}") from exc


def image_key(image: bytes) -> str:
    return hashlib.sha256(image).hexdigest()


def submit(image_path: str | Path, prompt: PromptText, cfg: ModelConfig, backend: Backend,
           costs: CostModel | None = None, attempt: int = 1, key: str | None = None) -> VisionExchange:
    """One request. Transport problems come back as a status, not an exception."""
    costs = costs or CostModel()
    data = to_png_bytes(Path(image_path).read_bytes())
    if len(data) > cfg.max_image_bytes:
        raise BackendError(f"{image_path}: {len(data)} bytes exceeds max_image_bytes={cfg.max_image_bytes}")
    key = key or image_key(Path(image_path).read_bytes())
    start = time.perf_counter()
    try:
        reply = backend.complete(data, key, prompt, cfg, attempt)
    except TransportError as exc:
        return VisionExchange(key, prompt.version, "", "transport_error", attempt,
                              latency_s=time.perf_counter() - start,
                              history=[{"attempt": attempt, "status": "transport_error",
                                        "code": exc.status_code, "error": str(exc)}])
    latency = time.perf_counter() - start
    status: Status = "ok" if reply.text.strip() else "bad_output"
    cost = costs.request_cost(reply.request_tokens, reply.response_tokens)
    return VisionExchange(key, prompt.version, reply.text, status, attempt,
                          reply.request_tokens, reply.response_tokens, latency, cost,
                          [{"attempt": attempt, "status": status}])


@dataclass
class RunSummary:
    pages: int
    submitted: int
    skipped: int
    ok: int
    exhausted: int
    cost_usd: Decimal
    tokens: int

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["cost_usd"] = str(self.cost_usd)
        return d


def _work(path: Path, key: str, prompt: PromptText, cfg: ModelConfig, backend: Backend,
          policy: BatchPolicy, costs: CostModel, limiter: RateLimiter,
          sleep: Callable[[float], None]) -> VisionExchange:
    history: list[dict] = []
    total_cost, req_tok, resp_tok, latency = Decimal(0), 0, 0, 0.0
    ex = None
    for attempt in range(1, policy.max_attempts + 1):
        limiter.acquire()
        ex = submit(path, prompt, cfg, backend, costs, attempt, key)
        if ex.status == "ok" and needs_requeue(ex.raw_text, policy):
            ex.status = "bad_output"
            ex.history[-1]["status"] = "bad_output"
        history += ex.history
        total_cost += ex.cost_usd
        req_tok += ex.request_tokens
        resp_tok += ex.response_tokens
        latency += ex.latency_s
        if ex.status == "ok":
            break
        if attempt < policy.max_attempts:
            sleep(policy.backoff(attempt - 1))
    assert ex is not None
    status: Status = "ok" if ex.status == "ok" else "exhausted"
    return replace(ex, status=status, attempt_count=len(history), request_tokens=req_tok,
                   response_tokens=resp_tok, latency_s=latency, cost_usd=total_cost, history=history)


def run_batch(pages: Sequence, prompt: PromptText, policy: BatchPolicy, store, run_id: str,
              backend: Backend, cfg: ModelConfig | None = None, costs: CostModel | None = None,
              limiter: RateLimiter | None = None,
              sleep: Callable[[float], None] = time.sleep) -> RunSummary:
    """Process every manifest page not already done in ``run_id``.

    ``pages`` are ``PageRecord``s with readable ``image_path``. Pages whose
    images hash identically share one request. Workers only talk to the
    backend; this thread is the sole writer to ``store``.
    """
    cfg = cfg or ModelConfig()
    costs = costs or CostModel()
    limiter = limiter or RateLimiter.per_minute(policy.requests_per_minute)
    keyed = store.register_pages(run_id, pages)
    todo = store.pending(run_id, list(keyed), policy)
    log.info("run %s: %d unique images, %d pending", run_id, len(keyed), len(todo))

    with ThreadPoolExecutor(max_workers=policy.concurrency) as pool:
        queue = iter(todo)
        running = {}
        try:
            # submit lazily so a crash leaves at most `concurrency` requests unrecorded
            for key in queue:
                running[pool.submit(_work, keyed[key], key, prompt, cfg, backend,
                                    policy, costs, limiter, sleep)] = key
                if len(running) >= policy.concurrency:
                    break
            while running:
                done, _ = wait(running, return_when=FIRST_COMPLETED)
                for fut in done:
                    running.pop(fut)
                    store.upsert_exchange(run_id, fut.result())
                    nxt = next(queue, None)
                    if nxt is not None:
                        running[pool.submit(_work, keyed[nxt], nxt, prompt, cfg, backend,
                                            policy, costs, limiter, sleep)] = nxt
        except BaseException:
            for fut in running:
                fut.cancel()
            raise
    totals = store.totals(run_id)
    return RunSummary(pages=len(pages), submitted=len(todo), skipped=len(keyed) - len(todo),
                      ok=totals["ok"], exhausted=totals["exhausted"],
                      cost_usd=totals["cost_usd"], tokens=totals["tokens"])
