"""Fitness evaluation over a line-JSON subprocess protocol.

The evaluator process is spawned once and spoken to over stdin/stdout, one
JSON object per line:

    -> {"type": "hello", "protocol": 1}
    <- {"type": "ready", "protocol": 1}
    -> {"type": "eval", "id": 7, "structure": [13, 26], "seed": 42, "epochs": 2}
    <- {"type": "result", "id": 7, "fitness": 0.81, "metrics": {...}}
    <- {"type": "error", "id": 7, "message": "..."}           (instead of result)
    -> {"type": "shutdown"}

The process's stderr passes through untouched (it is the evaluator's log).
Every failure mode maps to a distinct exception so callers can tell a
protocol bug from a crashed process from an evaluation the backend itself
rejected. All exceptions derive from :class:`EvaluationError`, so the search
treats them as per-candidate failures.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
from typing import Optional, Sequence

from . import EvaluationError, EvaluationRequest, EvaluationResult

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

_EOF = object()


class ExternalEvaluatorError(EvaluationError):
    """Base class for failures of an external evaluator."""


class ProtocolError(ExternalEvaluatorError):
    """The process sent something that is not part of the protocol."""


class EvaluatorTimeoutError(ExternalEvaluatorError):
    """No reply arrived within the configured timeout."""


class EvaluatorExitedError(ExternalEvaluatorError):
    """The process exited (or closed stdout) while a reply was pending."""


class FitnessRangeError(ExternalEvaluatorError):
    """The process reported a fitness outside [0, 1]."""


class RemoteEvaluationError(ExternalEvaluatorError):
    """The process answered with an error message for this request."""


class _Connection:
    """One evaluator process plus a reader thread feeding a line queue."""

    def __init__(self, cmd: Sequence[str], timeout: float) -> None:
        self.cmd = list(cmd)
        self.timeout = timeout
        self.alive = False
        try:
            self.proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=None,  # inherit: evaluator logs stay visible
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise EvaluatorExitedError(
                f"could not start evaluator {self.cmd!r}: {exc}"
            ) from exc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self.alive = True
        self._handshake()

    def _read_loop(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _next_message(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self.kill()
            raise EvaluatorTimeoutError(
                f"no reply from evaluator within {self.timeout:.0f}s"
            ) from None
        if line is _EOF:
            self.alive = False
            code = self.proc.poll()
            raise EvaluatorExitedError(
                f"evaluator closed its output (exit code {code})"
            )
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            self.kill()
            raise ProtocolError(f"evaluator sent invalid JSON: {line!r}") from exc
        if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
            self.kill()
            raise ProtocolError(f"evaluator sent a non-message: {line!r}")
        return msg

    def _send(self, msg: dict) -> None:
        assert self.proc.stdin is not None
        try:
            self.proc.stdin.write(json.dumps(msg) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self.alive = False
            raise EvaluatorExitedError(
                f"evaluator stdin closed (exit code {self.proc.poll()})"
            ) from exc

    def _handshake(self) -> None:
        self._send({"type": "hello", "protocol": PROTOCOL_VERSION})
        msg = self._next_message()
        if msg.get("type") != "ready" or msg.get("protocol") != PROTOCOL_VERSION:
            self.kill()
            raise ProtocolError(f"bad handshake reply: {msg!r}")

    def request(self, req_id: int, request: EvaluationRequest) -> EvaluationResult:
        self._send(
            {
                "type": "eval",
                "id": req_id,
                "structure": [int(v) for v in request.structure],
                "seed": int(request.seed),
                "epochs": int(request.epochs),
            }
        )
        msg = self._next_message()
        kind = msg.get("type")
        if msg.get("id") != req_id:
            self.kill()
            raise ProtocolError(
                f"reply id {msg.get('id')!r} does not match request id {req_id}"
            )
        if kind == "error":
            raise RemoteEvaluationError(str(msg.get("message", "unspecified error")))
        if kind != "result":
            self.kill()
            raise ProtocolError(f"unexpected reply type {kind!r}")
        fitness = msg.get("fitness")
        if not isinstance(fitness, (int, float)) or isinstance(fitness, bool):
            self.kill()
            raise ProtocolError(f"result carries no numeric fitness: {msg!r}")
        if not 0.0 <= fitness <= 1.0:
            raise FitnessRangeError(f"fitness {fitness!r} outside [0, 1]")
        metrics = msg.get("metrics")
        if metrics is not None and not isinstance(metrics, dict):
            raise ProtocolError(f"metrics must be an object: {msg!r}")
        return EvaluationResult(fitness=float(fitness), metrics=metrics)

    def shutdown(self) -> None:
        if self.proc.poll() is None and self.alive:
            try:
                self._send({"type": "shutdown"})
            except ExternalEvaluatorError:
                pass
        try:
            self.proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            logger.warning("evaluator ignored shutdown; killing it")
            self.kill()
        self.alive = False

    def kill(self) -> None:
        self.alive = False
        if self.proc.poll() is None:
            self.proc.kill()
            self.proc.wait()


class ExternalEvaluator:
    """Evaluator backed by one or more protocol subprocesses.

    ``workers`` processes are spawned up front; concurrent `evaluate` calls
    each borrow a free process, so the evaluator is safe to share across
    threads. A process that times out, crashes, or breaks protocol is
    dropped; when none are left every call fails with
    :class:`EvaluatorExitedError` (failures are never silent retries).
    """

    def __init__(
        self, cmd: Sequence[str], *, timeout: float = 3600.0, workers: int = 1
    ) -> None:
        if workers < 1:
            raise ValueError("workers must be >= 1")
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        self.cmd = list(cmd)
        self._idle: queue.Queue = queue.Queue()
        self._all: list[_Connection] = []
        self._ids = iter(range(1, 1 << 62))
        self._lock = threading.Lock()
        self._live = 0
        for _ in range(workers):
            conn = _Connection(self.cmd, timeout)
            self._all.append(conn)
            self._idle.put(conn)
            self._live += 1

    def _next_id(self) -> int:
        with self._lock:
            return next(self._ids)

    def _borrow(self) -> _Connection:
        while True:
            with self._lock:
                if self._live == 0:
                    raise EvaluatorExitedError(
                        "all evaluator processes have exited"
                    )
            try:
                return self._idle.get(timeout=0.25)
            except queue.Empty:
                continue  # workers busy; re-check liveness and wait again

    def evaluate(self, request: EvaluationRequest) -> EvaluationResult:
        conn = self._borrow()
        try:
            result = conn.request(self._next_id(), request)
        except ExternalEvaluatorError:
            if conn.alive:
                self._idle.put(conn)
            else:
                with self._lock:
                    self._live -= 1
            raise
        self._idle.put(conn)
        return result

    def close(self) -> None:
        with self._lock:
            self._live = 0
        for conn in self._all:
            conn.shutdown()

    def __enter__(self) -> "ExternalEvaluator":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
