"""External-system boundaries: the foundation-model client, replay and HTTP.

The wire protocol is plain JSON over HTTP — request fields ``mode``, ``image``,
``task``, ``plan``, ``specs_text``, ``preamble_id``; response fields ``plan``
or ``yes_confidence`` — the minimal shape any chat-completions-style gateway
can adapt to with a thin shim.  The serving side owns prompt assembly (the
client only sends a preamble id) and must itself compute ``yes_confidence``.

The replay client answers from a line-JSON fixture file keyed by
``(image, task, mode)`` and is pure: identical queries give identical replies,
across processes.  A stub HTTP server wrapping the same fixtures backs the
transport-equivalence tests.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Iterable

import requests

PLAN_MODE = "plan"
SATISFACTION_MODE = "satisfaction"
DEFAULT_PREAMBLE = "driving-v1"
DEFAULT_TIMEOUT = 30.0
DEFAULT_RETRIES = 2


class ClientError(Exception):
    """Base class for model-client failures."""


class TransportError(ClientError):
    """HTTP failure after exhausting retries."""


class MalformedReplyError(ClientError):
    """Reply is missing or mistypes the expected field."""


class FixtureMissError(ClientError):
    """Replay client has no fixture for the query key."""


class ConfidenceOutOfRangeError(ClientError):
    """Endpoint returned a confidence outside [0, 1]."""


@dataclass(frozen=True)
class ModelQuery:
    image: str
    task: str
    mode: str
    plan: str | None = None
    specs_text: str | None = None
    preamble_id: str = DEFAULT_PREAMBLE

    def payload(self) -> dict[str, Any]:
        body: dict[str, Any] = {
            "mode": self.mode,
            "image": self.image,
            "task": self.task,
            "preamble_id": self.preamble_id,
        }
        if self.plan is not None:
            body["plan"] = self.plan
        if self.specs_text is not None:
            body["specs_text"] = self.specs_text
        return body


@dataclass(frozen=True)
class ModelReply:
    plan: str | None
    yes_confidence: float | None
    raw: dict[str, Any] = field(default_factory=dict)


class _AuditLog:
    """Line-JSON audit trail; appends are serialized."""

    def __init__(self, path: str | Path | None):
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()

    def record(self, query: ModelQuery, outcome: str, latency_s: float, attempt: int) -> None:
        if self._path is None:
            return
        entry = {
            "ts": datetime.now(timezone.utc).isoformat(),
            "image": query.image,
            "task": query.task,
            "mode": query.mode,
            "outcome": outcome,
            "latency_ms": round(latency_s * 1000.0, 3),
            "attempt": attempt,
        }
        with self._lock:
            with self._path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(entry) + "\n")


def fixture_key(image: str, task: str, mode: str) -> tuple[str, str, str]:
    return (image, task, mode)


def load_replay_fixtures(path: str | Path) -> list[dict[str, Any]]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records


def _fixture_table(records: Iterable[dict[str, Any]]) -> dict[tuple[str, str, str], dict[str, Any]]:
    table = {}
    for record in records:
        key = fixture_key(record["image"], record["task"], record["mode"])
        table[key] = record
    return table


class ReplayModelClient:
    """Deterministic client answering from a fixture table."""

    def __init__(self, fixtures: str | Path | Iterable[dict[str, Any]], audit_path: str | Path | None = None):
        if isinstance(fixtures, (str, Path)):
            records = load_replay_fixtures(fixtures)
        else:
            records = list(fixtures)
        self._table = _fixture_table(records)
        self._audit = _AuditLog(audit_path)

    def request(self, query: ModelQuery) -> dict[str, Any]:
        start = time.monotonic()
        key = fixture_key(query.image, query.task, query.mode)
        record = self._table.get(key)
        if record is None:
            self._audit.record(query, "fixture-miss", time.monotonic() - start, attempt=1)
            raise FixtureMissError(f"no fixture for key {key!r}")
        reply = {k: v for k, v in record.items() if k in ("plan", "yes_confidence")}
        self._audit.record(query, "ok", time.monotonic() - start, attempt=1)
        return reply


class HttpModelClient:
    """JSON-over-HTTP client with retries, backoff, and bounded in-flight requests."""

    def __init__(
        self,
        base_url: str,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        backoff: float = 0.5,
        max_in_flight: int = 4,
        audit_path: str | Path | None = None,
        session: requests.Session | None = None,
    ):
        self.base_url = base_url
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._audit = _AuditLog(audit_path)
        self._session = session or requests.Session()

    def request(self, query: ModelQuery) -> dict[str, Any]:
        last_error: Exception | None = None
        for attempt in range(1, self.retries + 2):
            start = time.monotonic()
            try:
                with self._slots:
                    response = self._session.post(
                        self.base_url, json=query.payload(), timeout=self.timeout
                    )
                response.raise_for_status()
                reply = response.json()
                self._audit.record(query, "ok", time.monotonic() - start, attempt)
                return reply
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
                self._audit.record(query, f"error: {exc}", time.monotonic() - start, attempt)
                if attempt <= self.retries:
                    time.sleep(self.backoff * (2 ** (attempt - 1)))
        raise TransportError(f"request failed after {self.retries + 1} attempts: {last_error}")


def query(client, model_query: ModelQuery) -> ModelReply:
    """Send a query through any client and validate the reply for its mode."""
    raw = client.request(model_query)
    if model_query.mode == PLAN_MODE:
        plan = raw.get("plan")
        if not isinstance(plan, str) or not plan.strip():
            raise MalformedReplyError(f"reply is missing the plan field: {raw!r}")
        return ModelReply(plan=plan, yes_confidence=None, raw=raw)
    confidence = raw.get("yes_confidence")
    if not isinstance(confidence, (int, float)) or isinstance(confidence, bool):
        raise MalformedReplyError(f"reply is missing the yes_confidence field: {raw!r}")
    if not 0.0 <= float(confidence) <= 1.0:
        raise ConfidenceOutOfRangeError(f"yes_confidence {confidence} outside [0, 1]")
    return ModelReply(plan=None, yes_confidence=float(confidence), raw=raw)


def query_plan(
    client, image: str, task: str, preamble_id: str = DEFAULT_PREAMBLE
) -> tuple[str, dict[str, Any]]:
    """Ask the model for an instruction; returns the text verbatim plus the raw reply."""
    if not task.strip():
        raise ValueError("task description must be nonempty")
    reply = query(
        client, ModelQuery(image=image, task=task, mode=PLAN_MODE, preamble_id=preamble_id)
    )
    return reply.plan, reply.raw


def query_satisfaction(
    client,
    plan: str,
    specs_text: str,
    image: str = "",
    task: str = "",
    preamble_id: str = DEFAULT_PREAMBLE,
) -> float:
    """Ask whether the plan satisfies the rules; returns the yes-confidence."""
    if not plan.strip():
        raise ValueError("plan must be nonempty")
    reply = query(
        client,
        ModelQuery(
            image=image,
            task=task,
            mode=SATISFACTION_MODE,
            plan=plan,
            specs_text=specs_text,
            preamble_id=preamble_id,
        ),
    )
    return reply.yes_confidence


class StubModelServer:
    """Tiny HTTP server answering from replay fixtures; for tests and demos.

    Use as a context manager; ``url`` is the endpoint to point an
    HttpModelClient at.  ``fail_first`` makes the server return one 500 per
    distinct key before succeeding, to exercise retry paths.
    """

    def __init__(self, fixtures: str | Path | Iterable[dict[str, Any]], fail_first: int = 0):
        if isinstance(fixtures, (str, Path)):
            records = load_replay_fixtures(fixtures)
        else:
            records = list(fixtures)
        table = _fixture_table(records)
        failures: dict[tuple[str, str, str], int] = {}
        fails_budget = fail_first

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length) or b"{}")
                key = fixture_key(
                    payload.get("image", ""), payload.get("task", ""), payload.get("mode", "")
                )
                if failures.get(key, 0) < fails_budget:
                    failures[key] = failures.get(key, 0) + 1
                    self.send_response(500)
                    self.end_headers()
                    return
                record = table.get(key)
                if record is None:
                    body = json.dumps({"error": f"no fixture for {key!r}"}).encode()
                    self.send_response(404)
                else:
                    reply = {k: v for k, v in record.items() if k in ("plan", "yes_confidence")}
                    body = json.dumps(reply).encode()
                    self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):  # keep test output quiet
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/"

    def __enter__(self) -> "StubModelServer":
        self._thread.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join()
