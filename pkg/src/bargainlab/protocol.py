"""Episode engine: alternating moves, action validation, termination and traces."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Mapping

from .core import REGIMES, Decision, Opener, Role, Stance, Termination, profile, utility
from .cues import render_message
from .kernel import Counterpart, CounterpartAction, HistoryFeatures, LatentType
from .rng import stream
from .scenarios import ScenarioSpec

TRACE_SCHEMA = 1
HISTORY_WINDOW = 6


class UsageError(RuntimeError):
    """Raised when the engine is driven out of order."""


class SchemaError(ValueError):
    """Raised when an agent response cannot be turned into an action."""


class AgentTransportError(RuntimeError):
    """Raised by an agent whose transport failed after its retry budget."""


@dataclass(frozen=True)
class BeliefReport:
    r_hat: float | None = None
    kappa_hat: float | None = None
    stance_probs: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        if self.stance_probs is not None:
            if len(self.stance_probs) != 3 or any(p < 0 for p in self.stance_probs):
                raise SchemaError("stance_probs must be three non-negative numbers")
            if abs(sum(self.stance_probs) - 1.0) > 1e-6:
                raise SchemaError("stance_probs must sum to 1")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> BeliefReport:
        if not isinstance(d, Mapping):
            raise SchemaError("type_estimate must be an object")
        probs = d.get("stance_probs")
        if isinstance(probs, Mapping):
            probs = [probs.get(s.value, 0.0) for s in Stance]
        return cls(
            r_hat=_opt_float(d.get("r_hat")),
            kappa_hat=_opt_float(d.get("kappa_hat")),
            stance_probs=tuple(float(p) for p in probs) if probs is not None else None,
        )


def _opt_float(x) -> float | None:
    if x is None:
        return None
    try:
        v = float(x)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"not a number: {x!r}") from exc
    if not math.isfinite(v):
        raise SchemaError(f"not a finite number: {x!r}")
    return v


@dataclass(frozen=True)
class AgentAction:
    decision: Decision
    price: float | None = None
    message: str = ""
    belief: BeliefReport | None = None

    def __post_init__(self) -> None:
        if (self.price is not None) != (self.decision is Decision.OFFER):
            raise SchemaError("price is required for Offer and must be absent otherwise")

    @classmethod
    def offer(cls, price: float, message: str = "") -> AgentAction:
        return cls(Decision.OFFER, float(price), message)

    @classmethod
    def accept(cls, message: str = "") -> AgentAction:
        return cls(Decision.ACCEPT, None, message)

    @classmethod
    def reject(cls, message: str = "") -> AgentAction:
        return cls(Decision.REJECT, None, message)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> AgentAction:
        if not isinstance(d, Mapping):
            raise SchemaError("response must be a JSON object")
        try:
            decision = Decision(str(d.get("decision", "")).strip().capitalize())
        except ValueError as exc:
            raise SchemaError(f"unknown decision {d.get('decision')!r}") from exc
        price = _opt_float(d.get("price")) if decision is Decision.OFFER else None
        if decision is Decision.OFFER and price is None:
            raise SchemaError("Offer requires a numeric price")
        belief = BeliefReport.from_dict(d["type_estimate"]) if d.get("type_estimate") is not None else None
        return cls(decision, price, str(d.get("message", "")), belief)

    def to_dict(self) -> dict:
        out = {"decision": self.decision.value, "price": self.price, "message": self.message}
        if self.belief is not None:
            out["type_estimate"] = asdict(self.belief)
        return out


def extract_json_object(text: str) -> dict:
    """First brace-balanced JSON object embedded in free text."""
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            return obj
        start = text.find("{", start + 1)
    raise SchemaError("no JSON object found in response")


def parse_response(raw: AgentAction | Mapping | str) -> AgentAction:
    if isinstance(raw, AgentAction):
        return raw
    if isinstance(raw, str):
        raw = extract_json_object(raw)
    return AgentAction.from_dict(raw)


@dataclass
class ViolationSet:
    price_bound: int = 0
    reservation_ir: int = 0
    invalid_action: int = 0
    monotonicity: int = 0
    turn_budget: int = 0
    schema_parse: int = 0

    CRITICAL = ("price_bound", "reservation_ir", "invalid_action")

    def __add__(self, other: ViolationSet) -> ViolationSet:
        return ViolationSet(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    @property
    def critical(self) -> int:
        return sum(getattr(self, n) for n in self.CRITICAL)

    @property
    def total(self) -> int:
        return sum(getattr(self, f.name) for f in fields(self))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ValidationState:
    role: Role
    bounds: tuple[float, float]
    r_agent: float
    last_own_offer: float | None
    pending: float | None
    rounds_left: int


def fallback_action(state: ValidationState) -> AgentAction:
    """Accept a standing offer weakly better than walking away, else offer at reservation."""
    if state.pending is not None and utility(state.pending, state.r_agent, state.role) >= 0:
        return AgentAction.accept()
    lo, hi = state.bounds
    return AgentAction.offer(min(max(state.r_agent, lo), hi))


def validate_action(action: AgentAction | None, state: ValidationState) -> tuple[AgentAction, ViolationSet]:
    """Sanitize an agent action; ``None`` stands for an unparseable response."""
    v = ViolationSet()
    if state.rounds_left <= 0:
        v.turn_budget += 1
    if action is None:
        v.schema_parse += 1
        v.invalid_action += 1
        action = fallback_action(state)
    elif action.decision is Decision.ACCEPT and state.pending is None:
        v.invalid_action += 1
        fb = fallback_action(state)
        action = AgentAction(fb.decision, fb.price, action.message, action.belief)
    if action.decision is Decision.OFFER:
        lo, hi = state.bounds
        price = action.price
        if price < lo or price > hi:
            v.price_bound += 1
            price = min(max(price, lo), hi)
            action = AgentAction(Decision.OFFER, price, action.message, action.belief)
        if utility(price, state.r_agent, state.role) < 0:
            v.reservation_ir += 1
        if state.last_own_offer is not None and state.role.sign * (price - state.last_own_offer) < 0:
            v.monotonicity += 1
    elif action.decision is Decision.ACCEPT:
        if utility(state.pending, state.r_agent, state.role) < 0:
            v.reservation_ir += 1
    return action, v


@dataclass
class EpisodeOptions:
    voice: bool = True
    side_info: Callable[[Episode], dict | None] | None = None
    delta_max: float | None = None
    record_payloads: bool = True


@dataclass
class EpisodeTrace:
    spec: ScenarioSpec
    rounds: list[dict] = field(default_factory=list)
    termination: Termination | None = None
    price: float | None = None
    utility: float = 0.0
    violations: ViolationSet = field(default_factory=ViolationSet)
    aborted: bool = False
    abort_reason: str | None = None
    agent_id: str = ""
    condition: str = "base"

    @property
    def agreement(self) -> bool:
        return self.termination in (Termination.AGENT_ACCEPT, Termination.COUNTERPART_ACCEPT)

    @property
    def n_rounds(self) -> int:
        return max((r["round"] for r in self.rounds if r["actor"] == "agent"), default=0)

    def summary(self) -> dict:
        return {
            "type": "summary",
            "schema": TRACE_SCHEMA,
            "agent": self.agent_id,
            "condition": self.condition,
            "cell": self.spec.cell,
            "regime": self.spec.regime.value,
            "termination": self.termination.value if self.termination else None,
            "agreement": self.agreement,
            "price": self.price,
            "utility": self.utility,
            "rounds": self.n_rounds,
            "violations": self.violations.to_dict(),
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
        }

    def to_records(self) -> list[dict]:
        head = {"type": "spec", "schema": TRACE_SCHEMA, "agent": self.agent_id, "condition": self.condition, "spec": self.spec.to_dict()}
        body = [{"type": "round", **r} for r in self.rounds]
        return [head, *body, self.summary()]


@dataclass(frozen=True)
class AgentContext:
    """What an agent may know when an episode starts. ``spec`` is set only for privileged agents."""

    role: Role
    r_agent: float
    bounds: tuple[float, float]
    horizon: int
    opener: Opener
    spec: ScenarioSpec | None = None


def _features_dict(f: HistoryFeatures | None) -> dict | None:
    return None if f is None else {"magnitude": f.magnitude, "speed": f.speed, "rigidity": f.rigidity}


class Episode:
    """One negotiation between an agent and the kernel counterpart.

    Round k is the agent's k-th decision slot. Randomness for each counterpart
    move is drawn from its own stream keyed by (runtime seed, regime, round),
    so agents that reach the same state see identical counterpart draws.
    """

    def __init__(self, spec: ScenarioSpec, options: EpisodeOptions | None = None) -> None:
        self.spec = spec
        self.options = options or EpisodeOptions()
        self.role = spec.agent_role
        self.K = spec.horizon
        self.bounds = spec.bounds
        self.counterpart = Counterpart(
            t=LatentType(spec.r_counterpart, spec.kappa_counterpart, spec.stance),
            prof=profile(spec.family),
            role=spec.counterpart_role,
            bounds=spec.bounds,
            K=spec.horizon,
            d0=spec.d0,
        )
        self.trace = EpisodeTrace(spec)
        self.k = 1
        self.pending: float | None = None
        self.pending_message: str | None = None
        self.last_own_offer: float | None = None
        self.events: list[dict] = []
        self.cp_actions: list[tuple[int, CounterpartAction]] = []
        self.agent_actions: list[tuple[int, AgentAction]] = []
        self._regime_idx = REGIMES.index(spec.regime)
        if spec.opener is Opener.COUNTERPART:
            act = self.counterpart.open(self._rng(0))
            self._record_counterpart(0, act, None)

    @property
    def done(self) -> bool:
        return self.trace.termination is not None or self.trace.aborted

    def _rng(self, rnd: int):
        return stream(self.spec.cell + 6, self._regime_idx * 100 + rnd)

    def context(self, privileged: bool = False) -> AgentContext:
        return AgentContext(self.role, self.spec.r_agent, self.bounds, self.K, self.spec.opener, self.spec if privileged else None)

    def validation_state(self) -> ValidationState:
        return ValidationState(self.role, self.bounds, self.spec.r_agent, self.last_own_offer, self.pending, self.K - self.k + 1)

    def legal_decisions(self) -> list[str]:
        legal = [Decision.OFFER, Decision.REJECT] if self.pending is None else [Decision.OFFER, Decision.ACCEPT, Decision.REJECT]
        return [d.value for d in legal]

    def payload(self) -> dict:
        """The agent-visible request for the current round."""
        lo, hi = self.bounds
        r = self.spec.r_agent
        obs = None
        if self.pending is not None:
            obs = {"price": self.pending, "message": self.pending_message or "", "accept_utility": utility(self.pending, r, self.role)}
        window = [e for e in self.events if e["round"] > self.k - 1 - HISTORY_WINDOW]
        out = {
            "private_context": {"role": self.role.value.lower(), "reservation_price": r},
            "protocol_state": {
                "round": self.k,
                "max_rounds": self.K,
                "rounds_remaining": self.K - self.k + 1,
                "offer_on_table": self.pending is not None,
                "legal_decisions": self.legal_decisions(),
                "last_own_offer": self.last_own_offer,
            },
            "constraints": {"price_min": lo, "price_max": hi, "monotone_concession": True, "delta_max": self.options.delta_max},
            "observation": obs,
            "history": window,
        }
        if self.options.side_info is not None:
            side = self.options.side_info(self)
            if side is not None:
                out["side_information"] = side
        return out

    def _record_counterpart(self, rnd: int, act: CounterpartAction, feats: HistoryFeatures | None) -> None:
        message = ""
        if act.decision is not None and self.options.voice:
            message = render_message(act.decision, act.price, act.sentiment, act.posture, self.counterpart.role)
        self.cp_actions.append((rnd, act))
        self.trace.rounds.append(
            {
                "round": rnd,
                "actor": "counterpart",
                "decision": act.decision.value if act.decision else None,
                "price": act.price,
                "message": message,
                "sentiment": act.sentiment.value if act.sentiment else None,
                "posture": act.posture.value if act.posture else None,
                "concession": float(act.concession),
                "features": _features_dict(feats),
            }
        )
        if act.decision is Decision.OFFER:
            self.pending, self.pending_message = act.price, message
            self.events.append({"round": rnd, "actor": "counterpart", "decision": "Offer", "price": act.price, "message": message})

    def _close(self, source: Termination, price: float | None) -> None:
        self.trace.termination = source
        self.trace.price = price
        self.trace.utility = utility(price, self.spec.r_agent, self.role) if price is not None else 0.0

    def step(self, raw: AgentAction | None, payload: dict | None = None) -> dict | None:
        """Apply one agent action. Returns the next payload, or None once terminal."""
        if self.done:
            raise UsageError("episode already terminated")
        action, v = validate_action(raw, self.validation_state())
        self.trace.violations = self.trace.violations + v
        k = self.k
        rec = {
            "round": k,
            "actor": "agent",
            "decision": action.decision.value,
            "price": action.price,
            "message": action.message,
            "belief": asdict(action.belief) if action.belief else None,
            "violations": v.to_dict(),
        }
        if self.options.record_payloads and payload is not None:
            rec["payload"] = payload
        self.trace.rounds.append(rec)
        self.agent_actions.append((k, action))
        self.events.append({"round": k, "actor": "agent", "decision": action.decision.value, "price": action.price, "message": action.message})

        if action.decision is Decision.ACCEPT:
            self._close(Termination.AGENT_ACCEPT, self.pending)
            return None
        if action.decision is Decision.REJECT:
            self._close(Termination.AGENT_REJECT, None)
            return None

        self.last_own_offer = action.price
        self.pending = self.pending_message = None
        feats = self.counterpart.probabilities(action.price, k)[2]
        reply = self.counterpart.respond(action.price, k, self._rng(k))
        if reply.decision is None:
            self._close(Termination.TIMEOUT, None)
            return None
        self._record_counterpart(k, reply, feats)
        if reply.decision is Decision.ACCEPT:
            self._close(Termination.COUNTERPART_ACCEPT, action.price)
            return None
        if reply.decision is Decision.REJECT:
            self._close(Termination.COUNTERPART_WALKAWAY, None)
            return None
        self.k += 1
        return self.payload()

    def abort(self, reason: str) -> None:
        self.trace.aborted = True
        self.trace.abort_reason = reason


def run_episode(spec: ScenarioSpec, agent, options: EpisodeOptions | None = None) -> EpisodeTrace:
    """Drive ``agent`` through one episode and return the full trace.

    ``agent`` needs ``act(payload)`` returning an AgentAction, a mapping or raw
    text. Optional hooks: ``start(context)`` at episode start and, for agents
    with ``privileged = True``, ``observe(round, counterpart_action)`` after each
    counterpart move (evaluator-side planners only).
    """
    ep = Episode(spec, options)
    privileged = bool(getattr(agent, "privileged", False))
    ep.trace.agent_id = str(getattr(agent, "name", type(agent).__name__))
    if hasattr(agent, "start"):
        agent.start(ep.context(privileged))
    seen = 0

    def feed() -> None:
        nonlocal seen
        if privileged and hasattr(agent, "observe"):
            for rnd, act in ep.cp_actions[seen:]:
                agent.observe(rnd, act)
        seen = len(ep.cp_actions)

    payload = ep.payload()
    while payload is not None:
        feed()
        try:
            raw = agent.act(payload)
        except AgentTransportError as exc:
            ep.abort(str(exc))
            break
        try:
            action = parse_response(raw)
        except SchemaError:
            action = None
        payload = ep.step(action, payload)
    feed()
    return ep.trace
