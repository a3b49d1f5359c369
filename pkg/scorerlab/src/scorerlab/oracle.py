"""Policy oracles: where counterfactual next actions come from.

An oracle samples the agent backbone's next action for a given context.
The live client talks to an HTTP endpoint with retry, exponential
backoff, and a hard cap on concurrent requests. The mock is a
deterministic rule table for tests and offline fixtures; it never
fabricates randomness beyond what the seed dictates.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, Union

import httpx


class OracleError(Exception):
    """The oracle could not produce an action (after retries, if any)."""


class PolicyOracle(Protocol):
    def sample_next_action(self, context_text: str, temperature: float, seed: int) -> str: ...


RuleValue = Union[str, Sequence[str]]


@dataclass(frozen=True)
class MockOracle:
    """Rule-table oracle keyed on context substrings.

    The first rule whose needle occurs in the context wins. A rule value
    may be a single action or a sequence of variants; sequences are
    indexed by seed modulo length, which is how tests script per-sample
    variation while staying fully deterministic.
    """

    rules: tuple[tuple[str, RuleValue], ...] = ()
    default: str = "look around"
    fail_on: Optional[str] = None

    def sample_next_action(self, context_text: str, temperature: float, seed: int) -> str:
        if self.fail_on is not None and self.fail_on in context_text:
            raise OracleError(f"mock oracle configured to fail on {self.fail_on!r}")
        for needle, value in self.rules:
            if needle in context_text:
                return self._pick(value, seed)
        return self._pick(self.default, seed)

    @staticmethod
    def _pick(value: RuleValue, seed: int) -> str:
        if isinstance(value, str):
            return value
        return value[seed % len(value)]


_RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass
class LiveOracle:
    """HTTP sampling client with bounded retries and parallelism.

    POSTs ``{"context", "temperature", "seed"}`` and expects
    ``{"action": "..."}`` back. Transport errors and retryable statuses
    are retried at most ``max_retries`` times with exponential backoff;
    anything else fails immediately. ``max_parallel`` bounds in-flight
    requests across threads.
    """

    endpoint: str
    client: Optional[httpx.Client] = None
    max_retries: int = 3
    backoff_s: float = 0.5
    max_parallel: int = 4
    timeout_s: float = 30.0
    sleep: Callable[[float], None] = time.sleep  # injectable for tests
    _semaphore: threading.BoundedSemaphore = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be nonnegative, got {self.max_retries}")
        if self.max_parallel < 1:
            raise ValueError(f"max_parallel must be at least 1, got {self.max_parallel}")
        if self.backoff_s < 0:
            raise ValueError(f"backoff_s must be nonnegative, got {self.backoff_s}")
        if self.client is None:
            self.client = httpx.Client(timeout=self.timeout_s)
        self._semaphore = threading.BoundedSemaphore(self.max_parallel)

    def sample_next_action(self, context_text: str, temperature: float, seed: int) -> str:
        payload = {"context": context_text, "temperature": temperature, "seed": seed}
        delay = self.backoff_s
        last_error: Optional[str] = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.sleep(delay)
                delay *= 2
            try:
                with self._semaphore:
                    response = self.client.post(self.endpoint, json=payload)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code in _RETRY_STATUSES:
                last_error = f"status {response.status_code}"
                continue
            if response.status_code != 200:
                raise OracleError(f"oracle returned status {response.status_code}")
            return self._extract_action(response)
        raise OracleError(
            f"oracle gave up after {self.max_retries} retries; last error: {last_error}"
        )

    @staticmethod
    def _extract_action(response: httpx.Response) -> str:
        try:
            body = response.json()
        except ValueError as exc:
            raise OracleError(f"oracle response is not JSON: {exc}") from exc
        action = body.get("action") if isinstance(body, dict) else None
        if not isinstance(action, str):
            raise OracleError("oracle response has no string 'action' field")
        return action
