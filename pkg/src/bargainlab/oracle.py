"""Model-based reference agent and per-episode optimal values."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .belief import BeliefFilter, DegenerateEvidence, GridView, Observation, TypeGrid
from .core import Decision, Opener, profile
from .planner import Planner, PlannerConfig, PlannerState, PointPlanner, zopa_grid
from .protocol import AgentAction, AgentContext, Episode, EpisodeTrace, run_episode
from .scenarios import ScenarioSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleConfig:
    """``posterior`` plans on the Bayesian belief; ``revealed`` plans on the true type."""

    planner: PlannerConfig = PlannerConfig(depth=1)
    full_info: PlannerConfig = PlannerConfig(M=3, n_bins=8)
    full_info_offers: int = 4
    reservation_levels: int = 20
    use_cues: bool = True


def full_info_planner(spec: ScenarioSpec, cfg: OracleConfig = OracleConfig()) -> PointPlanner:
    return PointPlanner(
        spec.r_counterpart,
        spec.kappa_counterpart,
        spec.stance.index,
        profile(spec.family),
        spec.agent_role,
        spec.r_agent,
        spec.bounds,
        spec.horizon,
        cfg.full_info,
        own_grid=zopa_grid(spec.r_counterpart, spec.r_agent, cfg.full_info_offers),
    )


def optimal_value(spec: ScenarioSpec, cfg: OracleConfig = OracleConfig()) -> float:
    """Expected utility of the full-information optimal policy from the round-1 state; 0 without a ZOPA."""
    if not spec.feasible:
        return 0.0
    prev = Episode(spec).pending if spec.opener is Opener.COUNTERPART else None
    return full_info_planner(spec, cfg).value(1, (), prev)


class OracleAgent:
    """Plays the planner's optimal action each round (evaluator-side only)."""

    privileged = True

    def __init__(self, information: str = "posterior", config: OracleConfig = OracleConfig()) -> None:
        if information not in ("posterior", "revealed"):
            raise ValueError("information must be 'posterior' or 'revealed'")
        self.information = information
        self.cfg = config
        self.name = f"oracle-{information}"

    def start(self, ctx: AgentContext) -> None:
        spec = ctx.spec
        if spec is None:
            raise ValueError("the oracle agent needs privileged episode access")
        self.spec = spec
        self.own: list[float] = []
        self.offers_by_round: dict[int, float] = {}
        self.degenerate = 0
        if self.information == "revealed":
            self.point = full_info_planner(spec, self.cfg)
            return
        grid = TypeGrid.over(spec.bounds, self.cfg.reservation_levels)
        self.filter = BeliefFilter.for_episode(spec, grid, use_cues=self.cfg.use_cues)
        self.types = GridView(grid.r, grid.kappa, grid.stance_idx)

    def observe(self, rnd: int, act) -> None:
        if self.information == "revealed" or act.decision is not Decision.OFFER:
            return
        obs = Observation.from_action(rnd, act)
        offer = self.offers_by_round.get(rnd)
        try:
            self.filter.update(obs, offer)
        except DegenerateEvidence as exc:
            # grid cannot explain the move; keep the belief and extend the history
            self.degenerate += 1
            log.debug("oracle belief kept after degenerate evidence: %s", exc)
            self.filter.advance(obs, offer)

    def act(self, payload: dict) -> AgentAction:
        k = payload["protocol_state"]["round"]
        obs = payload["observation"]
        prev = None if obs is None else float(obs["price"])
        own = tuple(self.own[-3:])
        if self.information == "revealed":
            choice = self.point.optimal_action(k, own, prev)
        else:
            planner = Planner(
                self.types,
                profile(self.spec.family),
                self.spec.agent_role,
                self.spec.r_agent,
                self.spec.bounds,
                self.spec.horizon,
                self.cfg.planner,
            )
            choice = planner.optimal_action(PlannerState(k, self.filter.belief, own, prev))
        if choice.decision is Decision.OFFER:
            self.own.append(choice.price)
            self.offers_by_round[k] = choice.price
            return AgentAction.offer(choice.price)
        if choice.decision is Decision.ACCEPT:
            return AgentAction.accept()
        return AgentAction.reject()


@dataclass
class EpisodeSolution:
    u_star: float
    trace: EpisodeTrace | None = None


def solve_episode(spec: ScenarioSpec, cfg: OracleConfig = OracleConfig(), play: bool = True) -> EpisodeSolution:
    """Full-information optimal value, plus the realized trace of the revealed-type oracle."""
    u = optimal_value(spec, cfg)
    trace = run_episode(spec, OracleAgent("revealed", cfg)) if play else None
    return EpisodeSolution(u, trace)
