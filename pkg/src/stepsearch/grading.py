"""Client for the external answer-equivalence grader.

The grader is a separate executable speaking a line protocol over
stdin/stdout: it announces itself with one JSON handshake line
(``{"protocol": "grade-v1", ...}``), then answers each request line
``{"gold", "predicted", "kind"}`` with one response line
``{"equivalent", "method", "detail"}``. A dead or misbehaving grader makes
the client raise GraderUnavailable, after which callers fall back to the
built-in normalizer; the engine never crashes because of the grader.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
from dataclasses import dataclass

log = logging.getLogger(__name__)

PROTOCOL = "grade-v1"


class GraderUnavailable(Exception):
    """The grader subprocess is dead or spoke garbage."""


@dataclass(frozen=True)
class GradeResponse:
    equivalent: bool
    method: str | None
    detail: str


class GraderClient:
    """Serializes grade requests to one worker subprocess."""

    def __init__(self, command: list[str], *, timeout: float = 10.0) -> None:
        if not command:
            raise ValueError("grader command must be non-empty")
        self.command = list(command)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lines: "queue.Queue[str | None]" = queue.Queue()
        self._lock = threading.Lock()
        self._dead = False

    def _reader(self, proc: subprocess.Popen) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _ensure_started(self) -> None:
        if self._dead:
            raise GraderUnavailable("grader already failed")
        if self._proc is not None:
            if self._proc.poll() is None:
                return
            # A grader that died once stays unavailable; no silent restarts.
            self._fail("grader process died")
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            self._fail(f"cannot start grader: {exc}")
        threading.Thread(target=self._reader, args=(self._proc,), daemon=True).start()
        handshake = self._read_line()
        try:
            banner = json.loads(handshake)
        except json.JSONDecodeError:
            self._fail(f"bad grader handshake: {handshake!r:.120}")
        if banner.get("protocol") != PROTOCOL:
            self._fail(f"unsupported grader protocol: {banner.get('protocol')!r}")
        log.debug("grader up: %s", banner)

    def _read_line(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            self._fail("grader timed out")
        if line is None:
            self._fail("grader closed its output")
        return line

    def _fail(self, reason: str) -> None:
        self._dead = True
        self.close()
        raise GraderUnavailable(reason)

    def grade(self, gold: str, predicted: str, kind: str) -> GradeResponse:
        if not gold or not predicted:
            raise ValueError("gold and predicted must be non-empty")
        with self._lock:
            self._ensure_started()
            assert self._proc is not None and self._proc.stdin is not None
            request = json.dumps({"gold": gold, "predicted": predicted, "kind": kind})
            try:
                self._proc.stdin.write(request + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                self._fail(f"grader pipe broken: {exc}")
            reply = self._read_line()
            try:
                data = json.loads(reply)
                return GradeResponse(
                    equivalent=bool(data["equivalent"]),
                    method=data.get("method"),
                    detail=str(data.get("detail", "")),
                )
            except (json.JSONDecodeError, KeyError, TypeError):
                self._fail(f"bad grader reply: {reply!r:.120}")
            raise AssertionError("unreachable")

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is not None and proc.poll() is None:
            try:
                proc.terminate()
                proc.wait(timeout=2)
            except Exception:
                proc.kill()

    def __enter__(self) -> "GraderClient":
        return self

    def __exit__(self, *_exc) -> None:
        self.close()
