"""Client for delegating scoring, domain classification and generation to an
external model server.

Wire format: UTF-8, one JSON object per line, no pretty-printing.

Request::

    {"task": "score", "id": "7", "payload": {"text": "..."}}
    {"task": "classify_domain", "id": "8", "payload": {"context": [{"speaker": "U", "text": "..."}]}}
    {"task": "generate", "id": "9", "payload": {"context": [...], "answer": "..."}}

Response, exactly one of ``result`` / ``error``::

    {"id": "7", "result": 0.73}
    {"id": "8", "result": [0.1, 0.2, 0.7]}
    {"id": "9", "result": "Yes, there is a gym. Anything else?"}
    {"id": "9", "error": {"code": "overloaded", "message": "..."}}

Responses may arrive in any order; ids are unique per connection.
"""

from __future__ import annotations

import itertools
import json
import logging
import queue
import shlex
import socket
import subprocess
import threading
import time
from concurrent.futures import FIRST_COMPLETED, Future, wait
from concurrent.futures import TimeoutError as FutureTimeout
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GeneratorUnavailable, ProtocolError, ScorerUnavailable

log = logging.getLogger(__name__)

TASKS = ("score", "classify_domain", "generate")


@dataclass(frozen=True)
class GatewayRequest:
    task: str
    id: str
    payload: dict

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")

    def to_line(self) -> bytes:
        msg = {"task": self.task, "id": self.id, "payload": self.payload}
        return json.dumps(msg, ensure_ascii=False, separators=(",", ":")).encode("utf-8") + b"\n"


@dataclass(frozen=True)
class GatewayResponse:
    id: str
    result: object = None
    error: dict | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_line(self) -> bytes:
        msg = {"id": self.id}
        if self.error is not None:
            msg["error"] = self.error
        else:
            msg["result"] = self.result
        return json.dumps(msg, ensure_ascii=False, separators=(",", ":")).encode("utf-8") + b"\n"


def parse_response(line: bytes | str) -> GatewayResponse:
    """Decode one response line; raises ProtocolError on grammar violations."""
    try:
        msg = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError("malformed response line", cause=exc) from None
    if not isinstance(msg, dict) or not isinstance(msg.get("id"), str):
        raise ProtocolError("response lacks a string id")
    has_result, has_error = "result" in msg, "error" in msg
    if has_result == has_error:
        raise ProtocolError(f"response {msg['id']} must carry exactly one of result/error")
    err = msg.get("error")
    if has_error and not (isinstance(err, dict) and "code" in err and "message" in err):
        raise ProtocolError(f"response {msg['id']} has a malformed error object")
    return GatewayResponse(msg["id"], msg.get("result"), err)


def parse_request(line: bytes | str) -> GatewayRequest:
    msg = json.loads(line)
    return GatewayRequest(msg["task"], str(msg["id"]), msg.get("payload") or {})


class Connection:
    """One duplex line stream with a background reader matching replies by id."""

    def __init__(self, reader, writer, close=None, name="gateway"):
        self._reader = reader
        self._writer = writer
        self._close_cb = close
        self.name = name
        self._pending: dict[str, Future] = {}
        self._abandoned: set[str] = set()
        self._used_ids: set[str] = set()
        self._lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._ids = itertools.count(1)
        self._closed = None
        self._thread = threading.Thread(target=self._read_loop, name=f"{name}-reader", daemon=True)
        self._thread.start()

    def next_id(self) -> str:
        with self._lock:
            while True:
                cand = str(next(self._ids))
                if cand not in self._used_ids:
                    return cand

    @property
    def closed(self) -> bool:
        return self._closed is not None

    def _fail_all(self, exc_factory):
        with self._lock:
            pending, self._pending = self._pending, {}
        for fut in pending.values():
            if not fut.done():
                fut.set_exception(exc_factory())

    def _read_loop(self):
        try:
            while True:
                line = self._reader.readline()
                if not line:
                    break
                if not line.strip():
                    continue
                self._dispatch(line)
        except (OSError, ValueError) as exc:
            log.debug("%s reader stopped: %s", self.name, exc)
        self._closed = "transport closed"
        self._fail_all(lambda: ScorerUnavailable("transport: connection closed by peer", cause="transport"))

    def _dispatch(self, line):
        try:
            resp = parse_response(line)
        except ProtocolError as exc:
            err = exc  # the except target is unbound after the block; the lambda below runs later
            try:
                rid = json.loads(line).get("id")
            except Exception:
                rid = None
            with self._lock:
                fut = self._pending.pop(rid, None) if isinstance(rid, str) else None
            if fut is not None:
                fut.set_exception(ScorerUnavailable(f"malformed response: {err}", cause=err))
            else:
                self._fail_all(lambda: ProtocolError(f"unparseable response: {err}", cause=err))
            return
        with self._lock:
            fut = self._pending.pop(resp.id, None)
            late = fut is None and resp.id in self._abandoned
            if late:
                self._abandoned.discard(resp.id)
        if fut is not None:
            fut.set_result(resp)
        elif not late:
            self._fail_all(lambda: ProtocolError(f"response id {resp.id!r} matches no outstanding request"))

    def submit(self, req: GatewayRequest) -> Future:
        fut: Future = Future()
        with self._lock:
            if self._closed:
                fut.set_exception(ScorerUnavailable(f"transport: {self._closed}", cause="transport"))
                return fut
            if req.id in self._used_ids:
                raise ValueError(f"request id {req.id!r} already used on this connection")
            self._used_ids.add(req.id)
            self._pending[req.id] = fut
        try:
            with self._write_lock:
                self._writer.write(req.to_line())
                self._writer.flush()
        except (OSError, ValueError) as exc:
            with self._lock:
                self._pending.pop(req.id, None)
            if not fut.done():
                fut.set_exception(ScorerUnavailable(f"transport: write failed ({exc})", cause=exc))
        return fut

    def abandon(self, req_id: str) -> None:
        """Forget a timed-out request; its late reply will be dropped once."""
        with self._lock:
            if self._pending.pop(req_id, None) is not None:
                self._abandoned.add(req_id)

    def close(self) -> None:
        if self._closed is None:
            self._closed = "closed locally"
        try:
            if self._close_cb:
                self._close_cb()
        finally:
            self._fail_all(lambda: ScorerUnavailable("transport: connection closed", cause="transport"))

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def request(conn: Connection, req: GatewayRequest, timeout: float = 5.0) -> GatewayResponse:
    fut = conn.submit(req)
    try:
        return fut.result(timeout=timeout)
    except FutureTimeout:
        conn.abandon(req.id)
        raise ScorerUnavailable(f"timeout after {timeout}s waiting for {req.id}", cause="timeout") from None


def batch_request(conn: Connection, reqs: Sequence[GatewayRequest], max_in_flight: int = 8,
                  timeout: float = 5.0) -> list:
    """Pipeline ``reqs`` with at most ``max_in_flight`` outstanding.

    Returns one entry per request, in request order: a GatewayResponse, or
    the ScorerUnavailable that request hit. One failure never sinks the batch.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")
    out: list = [None] * len(reqs)
    todo = iter(enumerate(reqs))
    in_flight: dict[Future, tuple[int, str, float]] = {}
    exhausted = False
    while True:
        while not exhausted and len(in_flight) < max_in_flight:
            nxt = next(todo, None)
            if nxt is None:
                exhausted = True
                break
            i, req = nxt
            in_flight[conn.submit(req)] = (i, req.id, time.monotonic() + timeout)
        if not in_flight:
            break
        soonest = min(dl for _, _, dl in in_flight.values())
        done, _ = wait(list(in_flight), timeout=max(0.0, soonest - time.monotonic()), return_when=FIRST_COMPLETED)
        now = time.monotonic()
        for fut in list(in_flight):
            i, rid, deadline = in_flight[fut]
            if fut.done():
                exc = fut.exception()
                out[i] = exc if exc is not None else fut.result()
                del in_flight[fut]
            elif now >= deadline:
                conn.abandon(rid)
                out[i] = ScorerUnavailable(f"timeout after {timeout}s waiting for {rid}", cause="timeout")
                del in_flight[fut]
    return out


def connect_tcp(host: str, port: int, connect_timeout: float = 5.0) -> Connection:
    try:
        sock = socket.create_connection((host, port), timeout=connect_timeout)
    except OSError as exc:
        raise ScorerUnavailable(f"transport: cannot connect to {host}:{port} ({exc})", cause=exc) from None
    sock.settimeout(None)
    rfile = sock.makefile("rb")
    wfile = sock.makefile("wb")

    def close():
        # shut down first so a reader blocked in readline wakes up and drops the buffer lock
        try:
            sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        for f in (wfile, rfile):
            try:
                f.close()
            except OSError:
                pass
        sock.close()

    return Connection(rfile, wfile, close, name=f"tcp:{host}:{port}")


def spawn_stdio(command: Sequence[str] | str) -> Connection:
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    try:
        proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
    except OSError as exc:
        raise ScorerUnavailable(f"transport: cannot start {argv[0]} ({exc})", cause=exc) from None

    def close():
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        proc.stdout.close()

    conn = Connection(proc.stdout, proc.stdin, close, name=f"stdio:{argv[0]}")
    conn.process = proc
    return conn


def connect(endpoint: str) -> Connection:
    """``stdio:<command line>``, ``tcp://host:port`` or ``host:port``."""
    if endpoint.startswith("stdio:"):
        return spawn_stdio(endpoint[len("stdio:"):])
    target = endpoint[len("tcp://"):] if endpoint.startswith("tcp://") else endpoint
    host, sep, port = target.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"cannot parse gateway endpoint {endpoint!r}")
    return connect_tcp(host or "127.0.0.1", int(port))


class GatewayClient:
    """Connection pool plus request helpers; each connection serves one caller at a time."""

    def __init__(self, endpoint: str | None = None, pool_size: int = 1, timeout: float = 5.0,
                 max_in_flight: int = 8, factory=None):
        if factory is None:
            if endpoint is None:
                raise ValueError("need an endpoint or a connection factory")
            factory = lambda: connect(endpoint)  # noqa: E731
        self._factory = factory
        self.timeout = timeout
        self.max_in_flight = max_in_flight
        self._idle: queue.LifoQueue = queue.LifoQueue()
        self._all: list[Connection] = []
        self._sem = threading.Semaphore(pool_size)
        self._lock = threading.Lock()

    @contextmanager
    def connection(self):
        self._sem.acquire()
        try:
            try:
                conn = self._idle.get_nowait()
            except queue.Empty:
                conn = None
            if conn is None or conn.closed:
                conn = self._factory()
                with self._lock:
                    self._all.append(conn)
            try:
                yield conn
            finally:
                if not conn.closed:
                    self._idle.put(conn)
        finally:
            self._sem.release()

    def call(self, task: str, payloads: Sequence[dict]) -> list:
        with self.connection() as conn:
            reqs = [GatewayRequest(task, conn.next_id(), p) for p in payloads]
            return batch_request(conn, reqs, self.max_in_flight, self.timeout)

    def results(self, task: str, payloads: Sequence[dict]) -> list:
        """Like ``call`` but raises on the first failed item."""
        out = []
        for item in self.call(task, payloads):
            if isinstance(item, Exception):
                raise item
            if not item.ok:
                raise ScorerUnavailable(f"server error {item.error['code']}: {item.error['message']}",
                                        cause=item.error)
            out.append(item.result)
        return out

    def close(self) -> None:
        with self._lock:
            conns, self._all = self._all, []
        for c in conns:
            c.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _as_real(value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScorerUnavailable(f"expected a real score, got {value!r}", cause="malformed")
    return float(value)


class GatewayDetector:
    """Knowledge-seeking detector whose scores come from the server."""

    def __init__(self, client: GatewayClient, threshold: float = 0.5):
        self.client = client
        self.threshold_ = float(threshold)

    def score_texts(self, texts: Sequence[str]) -> np.ndarray:
        res = self.client.results("score", [{"text": t} for t in texts])
        return np.array([_as_real(r) for r in res])

    def predict(self, texts):
        return self.score_texts(texts) > self.threshold_


class GatewayDomainModel:
    def __init__(self, client: GatewayClient):
        self.client = client

    def predict_proba(self, dialogues) -> np.ndarray:
        res = self.client.results("classify_domain", [{"context": [t.to_json() for t in d]} for d in dialogues])
        rows = []
        for r in res:
            if not isinstance(r, list) or len(r) != 3:
                raise ScorerUnavailable(f"classify_domain must return 3 reals, got {r!r}", cause="malformed")
            v = np.array([_as_real(x) for x in r])
            if abs(v.sum() - 1.0) > 1e-9:
                if (v < 0).any() or v.sum() <= 0:
                    v = np.exp(v - v.max())
                v = v / v.sum()
            rows.append(v)
        return np.array(rows).reshape(len(rows), 3)


class GatewayRanker:
    def __init__(self, client: GatewayClient):
        self.client = client

    def score_inputs(self, inputs) -> np.ndarray:
        res = self.client.results("score", [{"text": i.flatten()} for i in inputs])
        return np.array([_as_real(r) for r in res])


class GatewayGenerator:
    def __init__(self, client: GatewayClient):
        self.client = client

    def generate(self, d, answer: str) -> str:
        try:
            (text,) = self.client.results("generate", [{"context": [t.to_json() for t in d], "answer": answer}])
        except ScorerUnavailable as exc:
            raise GeneratorUnavailable(str(exc), cause=exc) from exc
        if not isinstance(text, str):
            raise GeneratorUnavailable(f"generate must return text, got {text!r}")
        return text
