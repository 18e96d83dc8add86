"""Clients for the two remote services and their deterministic scripted mocks.

The engine talks to two services: a policy model behind an HTTP JSON
completion endpoint (model/prompt/stop/max_tokens/temperature/logprobs) and
a step verifier behind ``POST /score`` with ``{"question", "steps"}`` in and
``{"scores"}`` out. Both get a scripted in-process mock so every engine
behaviour can be exercised without a GPU or network.

Usage events (wasted tokens from failed attempts, prompt-side token counts,
verifier input sizes) are reported through an optional ``usage_hook``
callback instead of widening the Generation contract; role-level token
accounting stays with the caller.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import requests

from .errors import ProtocolError, ScriptingError, TransportError

log = logging.getLogger(__name__)

# Generation roles.
ROLE_STEP = "step"
ROLE_CRITIQUE = "critique"
ROLE_REWRITE = "rewrite"
ROLE_SOLUTION = "solution"
ROLES = (ROLE_STEP, ROLE_CRITIQUE, ROLE_REWRITE, ROLE_SOLUTION)

# Finish reasons.
FINISH_STOP = "stop_sequence"
FINISH_EOS = "end_of_sequence"
FINISH_LENGTH = "length"

# usage_hook(event, amount); events below.
EVENT_WASTED = "wasted_tokens"
EVENT_PROMPT = "prompt_tokens"
EVENT_VERIFIER = "verifier_tokens"
UsageHook = Callable[[str, int], None]


def count_tokens(text: str) -> int:
    """Whitespace token estimate used by the mocks and for verifier inputs."""
    return len(text.split())


@dataclass
class GenerationRequest:
    context_text: str
    stop_sequences: list[str]
    max_new_tokens: int
    role: str
    temperature: float | None = None  # None = backend default
    want_logprobs: bool = False

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if self.role == ROLE_STEP and not self.stop_sequences:
            raise ValueError("step requests must carry the step delimiter as a stop sequence")


@dataclass
class Generation:
    text: str
    token_count: int
    finish: str
    mean_token_logprob: float | None = None

    def __post_init__(self) -> None:
        if self.token_count < 0:
            raise ValueError("token_count must be >= 0")
        if self.token_count == 0 and self.text:
            raise ValueError("non-empty text cannot report zero tokens")


class PolicyBackend(Protocol):
    def generate(self, request: GenerationRequest, usage_hook: UsageHook | None = None) -> Generation: ...


class VerifierBackend(Protocol):
    def score_steps(
        self, question: str, steps: Sequence[str], usage_hook: UsageHook | None = None
    ) -> list[float]: ...


def _check_score_steps_args(steps: Sequence[str]) -> None:
    if not steps:
        raise ValueError("score_steps requires at least one step")
    for s in steps:
        if not s.strip():
            raise ValueError("score_steps got an empty step")


def _validate_score(value: object, origin: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ProtocolError(f"{origin}: score {value!r} is not a number")
    v = float(value)
    if not 0.0 <= v <= 1.0:
        raise ProtocolError(f"{origin}: score {v} outside [0, 1]")
    return v


def _first_stop_hit(text: str, stop_sequences: Sequence[str]) -> tuple[str, bool]:
    """Truncate at the earliest stop-sequence occurrence; the stop is excluded."""
    best = -1
    for stop in stop_sequences:
        idx = text.find(stop)
        if idx >= 0 and (best < 0 or idx < best):
            best = idx
    if best < 0:
        return text, False
    return text[:best], True


# ---------------------------------------------------------------------------
# HTTP clients
# ---------------------------------------------------------------------------


class _RetryingHttp:
    """Shared retry/backoff/in-flight plumbing for both HTTP clients."""

    def __init__(
        self,
        base_url: str,
        *,
        auth_token: str | None = None,
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff: float = 0.25,
        max_in_flight: int = 8,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._auth_token = auth_token
        self._gate = threading.Semaphore(max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self._auth_token:
            headers["Authorization"] = f"Bearer {self._auth_token}"
        return headers

    def post_json(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                with self._gate:
                    resp = requests.post(url, json=payload, headers=self._headers(), timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                log.warning("request to %s failed (attempt %d/%d): %s", url, attempt + 1, self.max_attempts, exc)
                continue
            if resp.status_code >= 500:
                last_error = TransportError(f"HTTP {resp.status_code} from {url}")
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"HTTP {resp.status_code} from {url}: {resp.text[:300]}")
            try:
                data = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"non-JSON response from {url}") from exc
            if not isinstance(data, dict):
                raise ProtocolError(f"unexpected response shape from {url}")
            return data
        raise TransportError(f"{url} unreachable after {self.max_attempts} attempts: {last_error}")


class HttpPolicyClient(_RetryingHttp):
    """Completion client for an OpenAI-style ``/v1/completions`` server."""

    def __init__(self, base_url: str, model: str, *, seed: int | None = None, **kwargs) -> None:
        super().__init__(base_url, **kwargs)
        self.model = model
        self.seed = seed

    def generate(self, request: GenerationRequest, usage_hook: UsageHook | None = None) -> Generation:
        payload: dict = {
            "model": self.model,
            "prompt": request.context_text,
            "max_tokens": request.max_new_tokens,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        if request.temperature is not None:
            payload["temperature"] = request.temperature
        if request.want_logprobs:
            payload["logprobs"] = 1
        if self.seed is not None:
            payload["seed"] = self.seed

        data = self.post_json("/v1/completions", payload)
        try:
            choice = data["choices"][0]
            text = choice.get("text") or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"completion response missing choices: {data!r:.200}") from exc

        # Servers are expected to truncate at stop sequences; enforce it anyway.
        text, stopped_here = _first_stop_hit(text, request.stop_sequences)

        finish_reason = choice.get("finish_reason")
        if stopped_here or choice.get("stop_reason") is not None:
            finish = FINISH_STOP
        elif finish_reason == "length":
            finish = FINISH_LENGTH
        else:
            finish = FINISH_EOS

        usage = data.get("usage") or {}
        token_logprobs = None
        logprobs = choice.get("logprobs")
        if isinstance(logprobs, dict):
            token_logprobs = [lp for lp in (logprobs.get("token_logprobs") or []) if lp is not None]

        token_count = usage.get("completion_tokens")
        if not isinstance(token_count, int):
            token_count = len(token_logprobs) if token_logprobs else count_tokens(text)
        if not text:
            token_count = 0

        mean_logprob = None
        if request.want_logprobs and token_logprobs:
            mean_logprob = sum(token_logprobs) / len(token_logprobs)

        if usage_hook and isinstance(usage.get("prompt_tokens"), int):
            usage_hook(EVENT_PROMPT, usage["prompt_tokens"])
        return Generation(text=text, token_count=max(token_count, 1 if text else 0), finish=finish,
                          mean_token_logprob=mean_logprob)


class HttpVerifierClient(_RetryingHttp):
    """Client for the step verifier's ``POST /score`` endpoint."""

    def __init__(self, base_url: str, model: str | None = None, **kwargs) -> None:
        super().__init__(base_url, **kwargs)
        self.model = model

    def score_steps(
        self, question: str, steps: Sequence[str], usage_hook: UsageHook | None = None
    ) -> list[float]:
        _check_score_steps_args(steps)
        payload: dict = {"question": question, "steps": list(steps)}
        if self.model:
            payload["model"] = self.model
        data = self.post_json("/score", payload)
        scores = data.get("scores")
        if not isinstance(scores, list) or len(scores) != len(steps):
            raise ProtocolError(f"verifier returned {len(scores) if isinstance(scores, list) else 'no'} "
                                f"scores for {len(steps)} steps")
        out = [_validate_score(s, self.base_url) for s in scores]
        if usage_hook:
            usage_hook(EVENT_VERIFIER, count_tokens(question) + sum(count_tokens(s) for s in steps))
        return out


# ---------------------------------------------------------------------------
# Scripted mocks
# ---------------------------------------------------------------------------


@dataclass
class ScriptedResponse:
    """One scripted policy reply.

    ``fail_times`` transport failures are simulated before the reply is
    served, each wasting ``fail_tokens`` tokens; if the failures exhaust the
    retry budget the call raises like a real dead backend.
    """

    text: str
    mean_logprob: float | None = None
    token_count: int | None = None
    fail_times: int = 0
    fail_tokens: int = 0


@dataclass
class _QueueItem:
    key: tuple
    response: ScriptedResponse
    fails_left: int = field(init=False)

    def __post_init__(self) -> None:
        self.fails_left = self.response.fail_times


class MockPolicy:
    """Deterministic scripted policy backend.

    The script is an ordered table keyed by (role, step_index, sample_index);
    replies are served per role in table order, which equals key order for
    the engine's deterministic call sequence. Unknown keys (an exhausted
    queue) raise in strict mode or fall back to the configured per-role
    default response.
    """

    def __init__(
        self,
        script: dict[tuple[str, int, int], ScriptedResponse | str],
        *,
        defaults: dict[str, ScriptedResponse] | None = None,
        strict: bool = True,
        terminator: str = "<eos>",
        max_attempts: int = 3,
    ) -> None:
        self._queues: dict[str, deque[_QueueItem]] = {role: deque() for role in ROLES}
        for key, resp in script.items():
            role = key[0]
            if role not in ROLES:
                raise ValueError(f"scripted response for unknown role {role!r}")
            if isinstance(resp, str):
                resp = ScriptedResponse(text=resp)
            self._queues[role].append(_QueueItem(key=tuple(key), response=resp))
        self._defaults = dict(defaults or {})
        self._strict = strict
        self._terminator = terminator
        self._max_attempts = max_attempts
        self._lock = threading.Lock()
        self.calls_by_role: dict[str, int] = {role: 0 for role in ROLES}

    def _next_response(self, role: str) -> ScriptedResponse | int:
        """Next scripted reply, or the wasted-token count of a simulated failure."""
        queue = self._queues[role]
        if queue:
            item = queue[0]
            if item.fails_left > 0:
                item.fails_left -= 1
                return item.response.fail_tokens
            queue.popleft()
            return item.response
        if role in self._defaults:
            return self._defaults[role]
        if self._strict:
            raise ScriptingError(f"mock policy has no scripted response left for role {role!r}")
        raise ScriptingError(f"mock policy is non-strict but has no default for role {role!r}")

    def generate(self, request: GenerationRequest, usage_hook: UsageHook | None = None) -> Generation:
        with self._lock:
            self.calls_by_role[request.role] += 1
            if usage_hook:
                usage_hook(EVENT_PROMPT, count_tokens(request.context_text))

            failures = 0
            while True:
                entry = self._next_response(request.role)
                if isinstance(entry, int):
                    failures += 1
                    if usage_hook and entry:
                        usage_hook(EVENT_WASTED, entry)
                    if failures >= self._max_attempts:
                        raise TransportError("scripted transport failure (retries exhausted)")
                    continue
                break

            text, stopped = _first_stop_hit(entry.text, request.stop_sequences)
            finish = FINISH_STOP if stopped else FINISH_EOS
            if not stopped and self._terminator and self._terminator in text:
                text = text[: text.index(self._terminator)]
                finish = FINISH_EOS

            token_count = entry.token_count if entry.token_count is not None else count_tokens(text)
            if token_count > request.max_new_tokens:
                words = text.split()
                text = " ".join(words[: request.max_new_tokens])
                token_count = request.max_new_tokens
                finish = FINISH_LENGTH
            if not text:
                token_count = 0

            mean_logprob = entry.mean_logprob if request.want_logprobs else None
            return Generation(text=text, token_count=token_count, finish=finish,
                              mean_token_logprob=mean_logprob)


class MockVerifier:
    """Deterministic scripted verifier keyed by exact step text."""

    def __init__(self, table: dict[str, float], *, default: float | None = None, strict: bool = True) -> None:
        self._table = dict(table)
        self._default = default
        self._strict = strict
        self._lock = threading.Lock()
        self.call_count = 0

    def score_steps(
        self, question: str, steps: Sequence[str], usage_hook: UsageHook | None = None
    ) -> list[float]:
        _check_score_steps_args(steps)
        with self._lock:
            self.call_count += 1
            scores: list[float] = []
            for step in steps:
                if step in self._table:
                    scores.append(_validate_score(self._table[step], "mock verifier script"))
                elif not self._strict and self._default is not None:
                    scores.append(_validate_score(self._default, "mock verifier default"))
                else:
                    raise ScriptingError(f"mock verifier has no score for step {step!r:.80}")
            if usage_hook:
                usage_hook(EVENT_VERIFIER, count_tokens(question) + sum(count_tokens(s) for s in steps))
            return scores


def make_mock_policy(
    script: dict[tuple[str, int, int], ScriptedResponse | str],
    *,
    defaults: dict[str, ScriptedResponse] | None = None,
    strict: bool = True,
    terminator: str = "<eos>",
) -> MockPolicy:
    return MockPolicy(script, defaults=defaults, strict=strict, terminator=terminator)


def make_mock_verifier(
    script: dict[str, float], *, default: float | None = None, strict: bool = True
) -> MockVerifier:
    if not strict and default is None:
        default = 0.5
    return MockVerifier(script, default=default, strict=strict)


def load_mock_fixture(path: str) -> tuple[MockPolicy, MockVerifier]:
    """Build both mocks from a JSONL fixture file.

    Line kinds: ``options`` (strict/terminator/defaults), ``policy`` (one
    scripted reply, ordered), ``policy_default`` (per-role fallback reply),
    ``verifier`` (step text -> score), ``verifier_default``.
    """
    script: dict[tuple[str, int, int], ScriptedResponse] = {}
    policy_defaults: dict[str, ScriptedResponse] = {}
    verifier_table: dict[str, float] = {}
    verifier_default: float | None = None
    strict = False
    terminator = "<eos>"

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScriptingError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            kind = record.get("backend")
            if kind == "options":
                strict = bool(record.get("strict", strict))
                terminator = record.get("terminator", terminator)
            elif kind == "policy":
                key = (record["role"], int(record.get("step_index", 0)), int(record.get("sample_index", 0)))
                if key in script:
                    raise ScriptingError(f"{path}:{lineno}: duplicate policy key {key}")
                script[key] = ScriptedResponse(
                    text=record["text"],
                    mean_logprob=record.get("mean_logprob"),
                    token_count=record.get("token_count"),
                    fail_times=int(record.get("fail_times", 0)),
                    fail_tokens=int(record.get("fail_tokens", 0)),
                )
            elif kind == "policy_default":
                policy_defaults[record["role"]] = ScriptedResponse(
                    text=record["text"], mean_logprob=record.get("mean_logprob")
                )
            elif kind == "verifier":
                verifier_table[record["step"]] = float(record["score"])
            elif kind == "verifier_default":
                verifier_default = float(record["score"])
            else:
                raise ScriptingError(f"{path}:{lineno}: unknown backend kind {kind!r}")

    policy = MockPolicy(script, defaults=policy_defaults, strict=strict, terminator=terminator)
    if not strict and verifier_default is None:
        verifier_default = 0.5
    verifier = MockVerifier(verifier_table, default=verifier_default, strict=strict)
    return policy, verifier
