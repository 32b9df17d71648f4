import json
import threading
from decimal import Decimal
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from figmine.errors import BackendError, ValidationError
from figmine.prompts import build_classification_prompt, build_extraction_prompt
from figmine.store import Store, StoredRow, hash_file
from figmine.vision import (
    BatchPolicy,
    CostModel,
    HttpBackend,
    ModelConfig,
    RateLimiter,
    ReplayBackend,
    estimate_cost,
    images_for_budget,
    needs_requeue,
    run_batch,
    submit,
)

from pagegen import VirtualClock, make_pages, max_in_window, write_replay

GOOD = "Figures: (2)\n\nNitrogen Isotherm: No"
PROMPT = build_extraction_prompt()


def no_sleep(_):
    pass


# -- cost ---------------------------------------------------------------------


def test_cost_table_values():
    est = estimate_cost(6240)
    assert est.usd == Decimal("124.80")
    assert round(est.serial_days, 4) == Decimal("0.3756")
    assert round(est.usd) == 125 and round(est.serial_days, 1) == Decimal("0.4")


def test_budget_to_papers():
    n = images_for_budget(100)
    assert n == 5000
    assert estimate_cost(n).whole_papers == 277


def test_zero_images():
    est = estimate_cost(0, concurrency=8)
    assert est.usd == est.serial_days == est.wall_days == est.papers_equivalent == 0


def test_wall_days_divides_by_concurrency():
    assert estimate_cost(6240, concurrency=4).wall_days * 4 == estimate_cost(6240).serial_days


@given(st.integers(0, 10**6), st.integers(0, 10**6))
@settings(max_examples=100)
def test_cost_linear(a, b):
    ea, eb, eab = estimate_cost(a), estimate_cost(b), estimate_cost(a + b)
    assert eab.usd == ea.usd + eb.usd
    assert eab.serial_days == pytest.approx(ea.serial_days + eb.serial_days, rel=Decimal("1e-20"))


def test_cost_model_rejects_nonpositive():
    with pytest.raises(ValidationError):
        CostModel(usd_per_image=Decimal(0))
    with pytest.raises(ValidationError):
        estimate_cost(-1)


def test_token_pricing_falls_back_to_flat():
    m = CostModel(usd_per_token=Decimal("0.00001"))
    assert m.request_cost(1500, 500) == Decimal("0.02")
    assert m.request_cost(0, 0) == Decimal("0.02")
    assert CostModel().request_cost(1500, 500) == Decimal("0.02")


# -- policy -------------------------------------------------------------------


def test_backoff_schedule():
    p = BatchPolicy()
    assert [p.backoff(i) for i in range(7)] == [2, 4, 8, 16, 32, 60, 60]


@pytest.mark.parametrize("text,expected", [
    ("Error: Upload failed.", True),
    ("Sorry, I cannot help with that.", True),
    ("Please upload the image again", True),
    ("The page shows a table.", True),
    ("", True),
    (None, True),
    (GOOD, False),
    ("Figures: (1)\nNitrogen Isotherm: Figure 2", False),
])
def test_needs_requeue(text, expected):
    assert needs_requeue(text, BatchPolicy()) is expected


def test_policy_validation():
    with pytest.raises(ValidationError):
        BatchPolicy(concurrency=0)
    with pytest.raises(ValidationError):
        BatchPolicy(max_attempts=0)


def test_model_config_validation():
    assert ModelConfig().max_tokens == 300
    assert ModelConfig().model_id == "gpt-4-vision-preview"
    with pytest.raises(ValidationError):
        ModelConfig(max_tokens=0)
    with pytest.raises(ValidationError):
        ModelConfig(base_url="not a url")


# -- replay -------------------------------------------------------------------


def test_replay_submit(tmp_path):
    pages = make_pages(tmp_path / "img", 1)
    fx = write_replay(tmp_path / "fx", pages, {1: GOOD})
    ex = submit(pages[0].image_path, build_classification_prompt(), ModelConfig(), ReplayBackend(fx))
    assert ex.status == "ok"
    assert ex.raw_text == GOOD
    assert ex.cost_usd == Decimal("0.02")
    assert ex.attempt_count == 1
    assert ex.image_ref == hash_file(pages[0].image_path)


def test_replay_missing_fixture_is_transport_error(tmp_path):
    pages = make_pages(tmp_path / "img", 1)
    (tmp_path / "fx").mkdir()
    ex = submit(pages[0].image_path, PROMPT, ModelConfig(), ReplayBackend(tmp_path / "fx"))
    assert ex.status == "transport_error"
    assert ex.cost_usd == 0


def test_replay_empty_text_is_bad_output(tmp_path):
    pages = make_pages(tmp_path / "img", 1)
    fx = write_replay(tmp_path / "fx", pages, {1: ""})
    assert submit(pages[0].image_path, PROMPT, ModelConfig(), ReplayBackend(fx)).status == "bad_output"


def test_oversize_image_rejected_before_request(tmp_path):
    pages = make_pages(tmp_path / "img", 1)
    fx = write_replay(tmp_path / "fx", pages, {1: GOOD})
    backend = ReplayBackend(fx)
    with pytest.raises(BackendError, match="max_image_bytes"):
        submit(pages[0].image_path, PROMPT, ModelConfig(max_image_bytes=10), backend)
    assert backend.calls == []


def test_non_png_is_reencoded(tmp_path):
    from PIL import Image

    jpg = tmp_path / "p.jpg"
    Image.new("RGB", (8, 8), "red").save(jpg)
    seen = []

    class Capture:
        name = "capture"

        def complete(self, image, key, prompt, cfg, attempt):
            seen.append(image)
            from figmine.vision import BackendReply
            return BackendReply(GOOD)

    submit(jpg, PROMPT, ModelConfig(), Capture())
    assert seen[0].startswith(b"\x89PNG")


# -- http ---------------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    replies: list = []
    requests: list = []

    def do_POST(self):
        body = self.rfile.read(int(self.headers["Content-Length"]))
        type(self).requests.append((self.path, dict(self.headers), json.loads(body)))
        code, payload = type(self).replies.pop(0)
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(code)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *a):
        pass


@pytest.fixture
def server():
    _Handler.replies, _Handler.requests = [], []
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=srv.serve_forever, daemon=True)
    t.start()
    yield srv, _Handler
    srv.shutdown()


def _cfg(srv, **kw):
    return ModelConfig(base_url=f"http://127.0.0.1:{srv.server_port}/v1", timeout_s=5, **kw)


def test_http_wire_shape(server, tmp_path, monkeypatch):
    srv, handler = server
    monkeypatch.setenv("FIGMINE_API_KEY", "sk-test")
    handler.replies.append((200, {"choices": [{"message": {"content": GOOD}}],
                                  "usage": {"prompt_tokens": 1800, "completion_tokens": 40}}))
    pages = make_pages(tmp_path, 1)
    ex = submit(pages[0].image_path, PROMPT, _cfg(srv), HttpBackend())
    assert ex.status == "ok" and ex.raw_text == GOOD
    assert (ex.request_tokens, ex.response_tokens) == (1800, 40)
    path, headers, body = handler.requests[0]
    assert path == "/v1/chat/completions"
    assert headers["Authorization"] == "Bearer sk-test"
    assert body["model"] == "gpt-4-vision-preview" and body["max_tokens"] == 300
    (msg,) = body["messages"]
    assert msg["role"] == "user"
    text, image = msg["content"]
    assert text == {"type": "text", "text": PROMPT.body}
    assert image["type"] == "image_url"
    assert image["image_url"]["url"].startswith("data:image/png;base64,iVBOR")


def test_http_non_2xx(server, tmp_path, monkeypatch):
    srv, handler = server
    monkeypatch.setenv("FIGMINE_API_KEY", "k")
    handler.replies.append((429, {"error": "rate limited"}))
    ex = submit(make_pages(tmp_path, 1)[0].image_path, PROMPT, _cfg(srv), HttpBackend())
    assert ex.status == "transport_error"
    assert ex.history[0]["code"] == 429


def test_http_empty_body_is_bad_output(server, tmp_path, monkeypatch):
    srv, handler = server
    monkeypatch.setenv("FIGMINE_API_KEY", "k")
    handler.replies.append((200, b""))
    ex = submit(make_pages(tmp_path, 1)[0].image_path, PROMPT, _cfg(srv), HttpBackend())
    assert ex.status == "bad_output"


def test_http_unreachable(tmp_path, monkeypatch):
    monkeypatch.setenv("FIGMINE_API_KEY", "k")
    cfg = ModelConfig(base_url="http://127.0.0.1:9/v1", timeout_s=2)
    ex = submit(make_pages(tmp_path, 1)[0].image_path, PROMPT, cfg, HttpBackend())
    assert ex.status == "transport_error" and ex.attempt_count == 1


def test_http_missing_key(tmp_path, monkeypatch):
    monkeypatch.delenv("FIGMINE_API_KEY", raising=False)
    with pytest.raises(BackendError, match="FIGMINE_API_KEY"):
        submit(make_pages(tmp_path, 1)[0].image_path, PROMPT, ModelConfig(), HttpBackend())


# -- rate limiter -------------------------------------------------------------


@given(st.integers(1, 120), st.integers(1, 400))
@settings(max_examples=50, deadline=None)
def test_rate_limiter_window(rate, n):
    clock = VirtualClock()
    lim = RateLimiter.per_minute(rate, clock=clock, sleep=clock.sleep)
    times = [lim.acquire() for _ in range(n)]
    assert max_in_window(times) <= rate
    assert times == sorted(times)


def test_fractional_rate_stretches_window():
    clock = VirtualClock()
    lim = RateLimiter.per_minute(0.5, clock=clock, sleep=clock.sleep)
    assert [lim.acquire() for _ in range(3)] == [0, 120, 240]


# -- batch --------------------------------------------------------------------


def _batch(tmp_path, n, texts, policy=None, run_id="r1", backend=None, store=None, **kw):
    pages = make_pages(tmp_path / "img", n)
    fx = write_replay(tmp_path / "fx", pages, texts)
    backend = backend or ReplayBackend(fx)
    store = store or Store(tmp_path / "store.db")
    policy = policy or BatchPolicy(concurrency=4)
    summary = run_batch(pages, PROMPT, policy, store, run_id, backend, sleep=no_sleep, **kw)
    return pages, store, backend, summary


def test_ten_pages_concurrency_four(tmp_path):
    _, store, backend, summary = _batch(tmp_path, 10, {i: GOOD for i in range(1, 11)})
    assert summary.ok == 10 and summary.exhausted == 0
    assert summary.cost_usd == Decimal("0.20")
    assert backend.max_in_flight <= 4
    assert len(backend.calls) == 10


def test_stored_error_row_is_resubmitted(tmp_path):
    pages = make_pages(tmp_path / "img", 2)
    store = Store(tmp_path / "store.db")
    store.register_pages("r1", pages)
    keys = [hash_file(p.image_path) for p in pages]
    store.upsert("r1", StoredRow(keys[0], "Error: Upload failed.", "ok"))
    store.upsert("r1", StoredRow(keys[1], GOOD, "ok"))
    fx = write_replay(tmp_path / "fx", pages, {1: GOOD, 2: GOOD})
    backend = ReplayBackend(fx)
    summary = run_batch(pages, PROMPT, BatchPolicy(), store, "r1", backend, sleep=no_sleep)
    assert [c.image_key for c in backend.calls] == [keys[0]]
    assert summary.submitted == 1 and summary.skipped == 1
    assert store.get("r1", keys[0]).raw_text == GOOD


def test_retry_then_ok(tmp_path):
    _, store, backend, summary = _batch(tmp_path, 1, {(1, 1): "Sorry, I can't.", 1: GOOD})
    (row,) = [store.get("r1", c.image_key) for c in backend.calls[:1]]
    assert row.status == "ok" and row.attempts == 2
    assert [h["status"] for h in json.loads(row.history)] == ["bad_output", "ok"]
    assert summary.cost_usd == Decimal("0.04")


def test_exhausted_after_max_attempts(tmp_path):
    sleeps = []
    pages = make_pages(tmp_path / "img", 1)
    fx = write_replay(tmp_path / "fx", pages, {1: "Error: Upload failed."})
    store = Store(tmp_path / "s.db")
    run_batch(pages, PROMPT, BatchPolicy(max_attempts=3), store, "r", ReplayBackend(fx), sleep=sleeps.append)
    row = store.get("r", hash_file(pages[0].image_path))
    assert row.status == "exhausted" and row.attempts == 3
    assert row.raw_text == "Error: Upload failed."
    assert sleeps == [2, 4]
    assert store.totals("r")["exhausted"] == 1


def test_duplicate_images_share_one_request(tmp_path):
    pages = make_pages(tmp_path / "img", 2)
    import shutil

    shutil.copy(pages[0].image_path, pages[1].image_path)
    fx = write_replay(tmp_path / "fx", pages[:1], {1: GOOD})
    store = Store(tmp_path / "s.db")
    backend = ReplayBackend(fx)
    run_batch(pages, PROMPT, BatchPolicy(), store, "r", backend, sleep=no_sleep)
    assert len(backend.calls) == 1
    assert [r[1] for r in store.export_rows("r")] == [GOOD, GOOD]


class Killed(BaseException):
    pass


class KillAfter(ReplayBackend):
    def __init__(self, fixtures, n):
        super().__init__(fixtures)
        self.left = n

    def complete(self, *a, **kw):
        with self._lock:
            self.left -= 1
            if self.left < 0:
                raise Killed()
        return super().complete(*a, **kw)


def test_kill_and_resume_matches_clean_run(tmp_path):
    texts = {i: GOOD if i % 2 else "Figures: (1)\nNitrogen Isotherm: Figure 2" for i in range(1, 11)}
    pages = make_pages(tmp_path / "img", 10)
    fx = write_replay(tmp_path / "fx", pages, texts)
    policy = BatchPolicy(concurrency=1)

    clean = Store(tmp_path / "clean.db")
    run_batch(pages, PROMPT, policy, clean, "r", ReplayBackend(fx), sleep=no_sleep)

    store = Store(tmp_path / "s.db")
    with pytest.raises(Killed):
        run_batch(pages, PROMPT, policy, store, "r", KillAfter(fx, 5), sleep=no_sleep)
    assert store.totals("r")["ok"] == 5
    store.close()
    store = Store(tmp_path / "s.db")
    resumed = ReplayBackend(fx)
    summary = run_batch(pages, PROMPT, policy, store, "r", resumed, sleep=no_sleep)
    assert summary.submitted == 5 and len(resumed.calls) == 5
    assert store.dump("r") == clean.dump("r")


def test_rerun_is_noop_and_store_identical(tmp_path):
    pages, store, _, _ = _batch(tmp_path, 6, {i: GOOD for i in range(1, 7)})
    before = store.dump("r1")
    backend = ReplayBackend(tmp_path / "fx")
    summary = run_batch(pages, PROMPT, BatchPolicy(), store, "r1", backend, sleep=no_sleep)
    assert summary.submitted == 0 and backend.calls == []
    assert store.dump("r1") == before


def test_rate_and_concurrency_bounds_virtual_clock(tmp_path):
    clock = VirtualClock()
    pages = make_pages(tmp_path / "img", 150)
    fx = write_replay(tmp_path / "fx", pages, {i: GOOD for i in range(1, 151)})
    backend = ReplayBackend(fx, clock=clock, latency_s=0.002)
    policy = BatchPolicy(concurrency=4, requests_per_minute=60)
    limiter = RateLimiter.per_minute(60, clock=clock, sleep=clock.sleep)
    store = Store(tmp_path / "s.db")
    summary = run_batch(pages, PROMPT, policy, store, "r", backend, limiter=limiter, sleep=no_sleep)
    assert summary.ok == 150
    times = [c.issued_at for c in backend.calls]
    assert max_in_window(times) <= 60
    assert max(c.in_flight for c in backend.calls) <= 4
    assert backend.max_in_flight <= 4
