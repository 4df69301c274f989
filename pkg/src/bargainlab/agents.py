"""Built-in agents and the line-delimited subprocess transport for external agents."""

from __future__ import annotations

import json
import logging
import random
import selectors
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from typing import Sequence

from .oracle import OracleAgent, OracleConfig
from .protocol import AgentAction, AgentContext, AgentTransportError

log = logging.getLogger(__name__)


class FixedConcessionAgent:
    """Closes a fixed fraction of the remaining gap to its reservation with every offer.

    The opening treats the favorable price bound as the previous offer, so the
    first offer is one step in from that bound.

    Accepts any pending counterpart offer inside its reservation; ignores messages and side information.
    """

    def __init__(self, rate: float) -> None:
        if not 0.0 < rate <= 1.0:
            raise ValueError("rate must lie in (0, 1]")
        self.rate = rate
        self.name = f"fixed-{round(rate * 100):g}"

    def next_offer(self, payload: dict) -> float:
        r = payload["private_context"]["reservation_price"]
        buyer = payload["private_context"]["role"] == "buyer"
        last = payload["protocol_state"]["last_own_offer"]
        if last is None:
            c = payload["constraints"]
            last = c["price_min"] if buyer else c["price_max"]
        return last + self.rate * (r - last)

    def act(self, payload: dict) -> AgentAction:
        obs = payload["observation"]
        if obs is not None and obs["accept_utility"] >= 0.0:
            return AgentAction.accept()
        return AgentAction.offer(self.next_offer(payload))


def fixed_concession_agent(rate: float) -> FixedConcessionAgent:
    return FixedConcessionAgent(rate)


def oracle_agent(information: str = "posterior", config: OracleConfig = OracleConfig()) -> OracleAgent:
    return OracleAgent(information, config)


@dataclass(frozen=True)
class RetryPolicy:
    retries: int = 3
    base: float = 0.5
    factor: float = 2.0
    jitter: float = 0.25

    def __post_init__(self) -> None:
        if self.retries < 0 or self.retries > 20:
            raise ValueError("retries must lie in [0, 20]")
        if self.base < 0 or self.factor < 1 or self.jitter < 0:
            raise ValueError("backoff parameters must be non-negative with factor >= 1")

    def delay(self, attempt: int, rng: random.Random) -> float:
        return self.base * self.factor**attempt + rng.uniform(0.0, self.jitter)


@dataclass(frozen=True)
class AgentEndpoint:
    """Where an external agent lives. Only the line-delimited subprocess transport is built in."""

    command: Sequence[str] | str
    identity: str = ""
    timeout: float = 60.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")

    @property
    def argv(self) -> list[str]:
        return shlex.split(self.command) if isinstance(self.command, str) else list(self.command)


class ExternalAgent:
    """Speaks one JSON request line per round to a child process and reads one reply line.

    Requests are ``{"type": "start", ...}`` once per episode and ``{"type": "act", "payload": ...}``
    per round. The reply text is handed to the engine unparsed, so malformed replies go through
    the engine's balanced-brace extraction and deterministic fallback. Transport failures are
    retried with exponential backoff and jitter, restarting the process; exhaustion raises
    ``AgentTransportError``, which aborts the episode.
    """

    def __init__(self, endpoint: AgentEndpoint, seed: int = 0, sleep=time.sleep) -> None:
        self.endpoint = endpoint
        self.name = endpoint.identity or " ".join(endpoint.argv)
        self._rng = random.Random(seed)
        self._sleep = sleep
        self._proc: subprocess.Popen | None = None
        self._ctx: dict | None = None

    def _spawn(self) -> subprocess.Popen:
        self.close()
        self._proc = subprocess.Popen(
            self.endpoint.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )
        return self._proc

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                pass
            for stream in (self._proc.stdin, self._proc.stdout):
                if stream is not None:
                    stream.close()
            self._proc = None

    def __enter__(self) -> ExternalAgent:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _exchange(self, message: dict) -> str:
        proc = self._proc
        if proc is None or proc.poll() is not None:
            proc = self._spawn()
            if self._ctx is not None and message.get("type") != "start":
                self._send_recv(proc, {"type": "start", **self._ctx})
        return self._send_recv(proc, message)

    def _send_recv(self, proc: subprocess.Popen, message: dict) -> str:
        try:
            proc.stdin.write(json.dumps(message) + "\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ConnectionError(f"write failed: {exc}") from exc
        sel = selectors.DefaultSelector()
        sel.register(proc.stdout, selectors.EVENT_READ)
        try:
            if not sel.select(self.endpoint.timeout):
                raise TimeoutError(f"no reply within {self.endpoint.timeout}s")
        finally:
            sel.close()
        line = proc.stdout.readline()
        if not line:
            raise ConnectionError("agent process closed its output")
        return line.rstrip("\n")

    def _call(self, message: dict) -> str:
        policy = self.endpoint.retry
        last: Exception | None = None
        for attempt in range(policy.retries + 1):
            try:
                return self._exchange(message)
            except (ConnectionError, TimeoutError, OSError) as exc:
                last = exc
                self.close()
                if attempt < policy.retries:
                    wait = policy.delay(attempt, self._rng)
                    log.warning("agent transport failed (%s); retry %d in %.2fs", exc, attempt + 1, wait)
                    self._sleep(wait)
        raise AgentTransportError(f"agent unreachable after {policy.retries} retries: {last}")

    def start(self, ctx: AgentContext) -> None:
        self._ctx = {
            "role": ctx.role.value.lower(),
            "reservation_price": ctx.r_agent,
            "price_min": ctx.bounds[0],
            "price_max": ctx.bounds[1],
            "max_rounds": ctx.horizon,
            "opener": ctx.opener.value,
        }
        self._call({"type": "start", **self._ctx})

    def act(self, payload: dict) -> str:
        return self._call({"type": "act", "payload": payload})


def external_agent(endpoint: AgentEndpoint, seed: int = 0) -> ExternalAgent:
    return ExternalAgent(endpoint, seed)
