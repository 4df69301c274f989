"""Seeded bilateral price negotiation: simulator, Bayesian reference policy, metrics and harness."""

from .agents import AgentEndpoint, ExternalAgent, FixedConcessionAgent, RetryPolicy, external_agent, fixed_concession_agent, oracle_agent
from .belief import BeliefFilter, DegenerateEvidence, Observation, TypeGrid, posterior_summary
from .commerce import (
    BankrollConfig,
    CommerceConfig,
    Ledger,
    UnitEconomics,
    bankroll_step,
    build_commerce_scenario,
    commerce_suite,
    memory_premium,
    profit,
    regret,
    run_session,
)
from .core import ConfigError, Decision, Family, Opener, Regime, Role, Stance, Termination
from .harness import RunConfig, run_intervention_suite, run_sweep
from .metrics import EpisodeRecord, MetricReport, aggregate, bootstrap_ci, episode_metrics, gap_decomposition, summarize, wilson_ci
from .oracle import OracleAgent, OracleConfig, optimal_value
from .planner import Planner, PlannerConfig, PlannerState
from .protocol import AgentAction, AgentTransportError, BeliefReport, EpisodeOptions, EpisodeTrace, SchemaError, UsageError, run_episode
from .scenarios import GeneratorConfig, ScenarioSpec, generate_suite, sample_scenario

__version__ = "0.1.0"

__all__ = [
    "AgentAction",
    "AgentEndpoint",
    "AgentTransportError",
    "BankrollConfig",
    "BeliefFilter",
    "BeliefReport",
    "CommerceConfig",
    "ConfigError",
    "Decision",
    "DegenerateEvidence",
    "EpisodeOptions",
    "EpisodeRecord",
    "EpisodeTrace",
    "ExternalAgent",
    "Family",
    "FixedConcessionAgent",
    "GeneratorConfig",
    "Ledger",
    "MetricReport",
    "Observation",
    "Opener",
    "OracleAgent",
    "OracleConfig",
    "Planner",
    "PlannerConfig",
    "PlannerState",
    "Regime",
    "RetryPolicy",
    "Role",
    "RunConfig",
    "ScenarioSpec",
    "SchemaError",
    "Stance",
    "Termination",
    "TypeGrid",
    "UnitEconomics",
    "UsageError",
    "aggregate",
    "bankroll_step",
    "bootstrap_ci",
    "build_commerce_scenario",
    "commerce_suite",
    "episode_metrics",
    "external_agent",
    "fixed_concession_agent",
    "gap_decomposition",
    "generate_suite",
    "memory_premium",
    "optimal_value",
    "oracle_agent",
    "posterior_summary",
    "profit",
    "regret",
    "run_episode",
    "run_intervention_suite",
    "run_session",
    "run_sweep",
    "sample_scenario",
    "summarize",
    "wilson_ci",
]
