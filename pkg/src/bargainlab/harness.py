"""Sweep runner, intervention replays and reproducible JSON-lines output."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

from .agents import AgentEndpoint, ExternalAgent, FixedConcessionAgent, RetryPolicy, oracle_agent
from .belief import BeliefFilter, DegenerateEvidence, Observation, TypeGrid
from .core import FAMILIES, OPENERS, REGIMES, ROLES, ConfigError, Decision, Family, Opener, Regime, Role
from .metrics import EpisodeRecord, MetricReport, aggregate, episode_metrics, gap_decomposition, GapDecomposition
from .oracle import OracleConfig, optimal_value
from .protocol import TRACE_SCHEMA, Episode, EpisodeOptions, EpisodeTrace, UsageError, run_episode
from .scenarios import GeneratorConfig, ScenarioSpec, generate_suite

log = logging.getLogger(__name__)

CONFIG_ENV = "BARGAINLAB_CONFIG"
INTERVENTIONS = ("base", "oracle-posterior", "revealed-type")
BASELINES = ("fixed-30", "fixed-10", "fixed-1")


# ---------- canonical JSON lines ----------


def canonical_line(record: dict) -> str:
    """Sorted keys, compact separators, shortest round-trip floats, LF terminated."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def write_jsonl(path: str | Path, records: Iterable[dict]) -> str:
    """Write records canonically; returns the SHA-256 of the written bytes."""
    h = hashlib.sha256()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            line = canonical_line(rec)
            h.update(line.encode())
            fh.write(line)
    return h.hexdigest()


def versioned(kind: str, record: dict) -> dict:
    return {"type": kind, "schema": TRACE_SCHEMA, **record}


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def trace_digest(traces: Iterable[EpisodeTrace]) -> str:
    h = hashlib.sha256()
    for tr in traces:
        for rec in tr.to_records():
            h.update(canonical_line(rec).encode())
    return h.hexdigest()


# ---------- configuration ----------


def _enum_tuple(kind, values) -> tuple:
    return tuple(kind(v) for v in values)


@dataclass(frozen=True)
class RunConfig:
    base_seed: int = 0
    regimes: tuple[Regime, ...] = REGIMES
    families: tuple[Family, ...] = FAMILIES
    roles: tuple[Role, ...] = ROLES
    openers: tuple[Opener, ...] = OPENERS
    episodes_per_cell: int = 25
    agents: tuple[str, ...] = BASELINES
    intervention: str = "base"
    voice: bool = True
    output_dir: str | None = None
    workers: int = 1
    attach_oracle: bool = False
    record_payloads: bool = False
    agent_command: str | None = None  # for the "external" agent
    agent_timeout: float = 60.0
    agent_retries: int = 3
    generator: GeneratorConfig = GeneratorConfig()

    def __post_init__(self) -> None:
        object.__setattr__(self, "regimes", _enum_tuple(Regime, self.regimes))
        object.__setattr__(self, "families", _enum_tuple(Family, self.families))
        object.__setattr__(self, "roles", _enum_tuple(Role, self.roles))
        object.__setattr__(self, "openers", _enum_tuple(Opener, self.openers))
        object.__setattr__(self, "agents", tuple(self.agents))
        if not (self.regimes and self.families and self.roles and self.openers and self.agents):
            raise ConfigError("every grid axis and the agent list must be non-empty")
        if not 1 <= self.episodes_per_cell <= 100:
            raise ConfigError("episodes_per_cell must lie in [1, 100]")
        if self.intervention not in INTERVENTIONS:
            raise ConfigError(f"intervention must be one of {INTERVENTIONS}")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be non-negative")
        if "external" in self.agents and not self.agent_command:
            raise ConfigError("the external agent needs agent_command")
        for name in self.agents:
            make_agent(name, self, probe=True)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("regimes", "families", "roles", "openers"):
            d[k] = [v.value for v in getattr(self, k)]
        d["agents"] = list(self.agents)
        d["generator"] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.generator).items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "generator" in d and isinstance(d["generator"], dict):
            d["generator"] = GeneratorConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["generator"].items()})
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> RunConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def default(cls) -> RunConfig:
        """Defaults, overlaid by the JSON file named in the config environment variable if set."""
        path = os.environ.get(CONFIG_ENV)
        return cls.from_file(path) if path else cls()

    @property
    def digest(self) -> str:
        """Hash of everything that determines trace content (output location and parallelism excluded)."""
        d = self.to_dict()
        for k in ("output_dir", "workers"):
            d.pop(k)
        return hashlib.sha256(canonical_line(d).encode()).hexdigest()

    def specs(self) -> list[ScenarioSpec]:
        gen = replace(self.generator, episodes_per_cell=self.episodes_per_cell)
        return generate_suite(gen, self.base_seed, self.regimes, self.families, self.roles, self.openers)


def make_agent(name: str, cfg: RunConfig | None = None, probe: bool = False):
    """Build an agent from its sweep name: fixed-<pct>, oracle-posterior, oracle-revealed or external."""
    if name.startswith("fixed-"):
        try:
            pct = float(name[len("fixed-"):])
        except ValueError as exc:
            raise ConfigError(f"bad fixed-concession name {name!r}") from exc
        return FixedConcessionAgent(pct / 100.0)
    if name in ("oracle-posterior", "oracle-revealed"):
        return oracle_agent(name.split("-", 1)[1])
    if name == "external":
        if probe:
            return None
        endpoint = AgentEndpoint(cfg.agent_command, "external", cfg.agent_timeout, RetryPolicy(retries=cfg.agent_retries))
        return ExternalAgent(endpoint, seed=cfg.base_seed)
    raise ConfigError(f"unknown agent {name!r}")


# ---------- side information ----------


class PosteriorFeed:
    """Tracks the exact grid posterior alongside a live episode and serves its summary as side information."""

    def __init__(self, spec: ScenarioSpec, grid: TypeGrid | None = None) -> None:
        self.filter = BeliefFilter.for_episode(spec, grid or TypeGrid.over(spec.bounds))
        self.seen = 0

    def __call__(self, ep: Episode) -> dict:
        offers = {k: a.price for k, a in ep.agent_actions if a.decision is Decision.OFFER}
        for rnd, act in ep.cp_actions[self.seen:]:
            if act.decision is not Decision.OFFER:
                continue
            obs = Observation.from_action(rnd, act)
            try:
                self.filter.update(obs, offers.get(rnd))
            except DegenerateEvidence:
                self.filter.advance(obs, offers.get(rnd))
        self.seen = len(ep.cp_actions)
        return {"posterior_summary": self.filter.summary()}


def revealed_type(spec: ScenarioSpec) -> dict:
    return {"revealed_type": {"r_B": spec.r_counterpart, "kappa_B": spec.kappa_counterpart, "eta_B": spec.stance.value}}


def episode_options(spec: ScenarioSpec, condition: str, voice: bool = True, record_payloads: bool = False) -> EpisodeOptions:
    if condition == "base":
        side = None
    elif condition == "oracle-posterior":
        side = PosteriorFeed(spec)
    elif condition == "revealed-type":
        info = revealed_type(spec)
        side = lambda ep: info
    else:
        raise UsageError(f"unknown condition {condition!r}")
    return EpisodeOptions(voice=voice, side_info=side, record_payloads=record_payloads)


# ---------- sweeps ----------


def _play(agent, spec: ScenarioSpec, condition: str, cfg: RunConfig) -> EpisodeTrace:
    trace = run_episode(spec, agent, episode_options(spec, condition, cfg.voice, cfg.record_payloads))
    trace.condition = condition
    return trace


def _play_chunk(args) -> list[EpisodeTrace]:
    name, specs, condition, cfg = args
    agent = make_agent(name, cfg)
    try:
        return [_play(agent, s, condition, cfg) for s in specs]
    finally:
        if hasattr(agent, "close"):
            agent.close()


def play_all(name: str, specs: Sequence[ScenarioSpec], condition: str, cfg: RunConfig) -> list[EpisodeTrace]:
    """Run one agent over ``specs``; results come back in spec order whatever the worker count."""
    if cfg.workers == 1 or len(specs) < 2:
        return _play_chunk((name, list(specs), condition, cfg))
    n = math.ceil(len(specs) / cfg.workers)
    chunks = [(name, list(specs[i : i + n]), condition, cfg) for i in range(0, len(specs), n)]
    with ProcessPoolExecutor(cfg.workers) as pool:
        return [t for part in pool.map(_play_chunk, chunks) for t in part]


def oracle_values(specs: Sequence[ScenarioSpec], cfg: OracleConfig = OracleConfig()) -> dict[tuple, float]:
    return {s.key: optimal_value(s, cfg) for s in specs}


@dataclass
class RunHealth:
    agent: str
    total: int
    completed: int
    aborted: int
    abort_reasons: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"type": "health", **asdict(self)}


@dataclass
class SweepResult:
    config: RunConfig
    traces: dict[str, list[EpisodeTrace]]
    records: list[EpisodeRecord]
    health: list[RunHealth]
    digest: str

    def report(self, by: Sequence[str] = ("agent",)) -> dict[tuple, MetricReport]:
        return aggregate(self.records, by)


def score_traces(traces: Sequence[EpisodeTrace], u_star: dict[tuple, float] | None = None) -> tuple[list[EpisodeRecord], RunHealth]:
    """Per-episode records for completed episodes; aborted ones only count toward health."""
    done = [t for t in traces if not t.aborted]
    reasons = Counter(t.abort_reason or "unknown" for t in traces if t.aborted)
    records = [episode_metrics(t, None if u_star is None else u_star.get(t.spec.key)) for t in done]
    agent = traces[0].agent_id if traces else ""
    return records, RunHealth(agent, len(traces), len(done), len(traces) - len(done), dict(reasons))


def run_sweep(cfg: RunConfig) -> SweepResult:
    specs = cfg.specs()
    u_star = oracle_values(specs) if cfg.attach_oracle else None
    traces, records, health = {}, [], []
    for name in cfg.agents:
        tr = play_all(name, specs, cfg.intervention, cfg)
        traces[name] = tr
        recs, h = score_traces(tr, u_star)
        records += recs
        health.append(h)
        if h.aborted:
            log.warning("%s: %d of %d episodes aborted", name, h.aborted, h.total)
    digest = trace_digest(t for name in cfg.agents for t in traces[name])
    result = SweepResult(cfg, traces, records, health, digest)
    if cfg.output_dir:
        write_outputs(result, Path(cfg.output_dir))
    return result


def write_outputs(result: SweepResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    write_jsonl(out / "traces.jsonl", (rec for name in cfg.agents for t in result.traces[name] for rec in t.to_records()))
    write_jsonl(out / "records.jsonl", (versioned("record", r.to_dict()) for r in result.records))
    write_jsonl(out / "health.jsonl", (versioned("health", h.to_dict()) for h in result.health))
    report = {"config": cfg.to_dict(), "config_digest": cfg.digest, "trace_sha256": result.digest, "by_agent": report_rows(result.report())}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def report_rows(reports: dict[tuple, MetricReport]) -> list[dict]:
    return [{"stratum": list(k), **asdict(v)} for k, v in reports.items()]


# ---------- intervention replays ----------


@dataclass
class InterventionResult:
    agent: str
    traces: dict[str, list[EpisodeTrace]]
    records: list[EpisodeRecord]
    u_star: dict[tuple, float]
    unsupported: list[str]
    decomposition: GapDecomposition | None

    def utilities(self, condition: str) -> dict[tuple, float]:
        return {t.spec.key: t.utility for t in self.traces.get(condition, []) if not t.aborted}


def run_intervention_suite(cfg: RunConfig, agent_name: str, oracle_cfg: OracleConfig = OracleConfig()) -> InterventionResult:
    """Replay identical specs under the three information conditions and pair them with oracle values.

    An agent with ``accepts_side_info = False`` gets its injected conditions marked unsupported.
    """
    specs = cfg.specs()
    u_star = oracle_values(specs, oracle_cfg)
    probe = make_agent(agent_name, cfg)
    accepts = getattr(probe, "accepts_side_info", True)
    if hasattr(probe, "close"):
        probe.close()
    traces, records, unsupported = {}, [], []
    for cond in INTERVENTIONS:
        if cond != "base" and not accepts:
            unsupported.append(cond)
            continue
        traces[cond] = play_all(agent_name, specs, cond, cfg)
        records += score_traces(traces[cond], u_star)[0]
    res = InterventionResult(agent_name, traces, records, u_star, unsupported, None)
    if not unsupported:
        utils = [res.utilities(c) for c in INTERVENTIONS]
        common = set.intersection(*(set(u) for u in utils))
        if common:
            pick = lambda d: {k: d[k] for k in common}
            res.decomposition = gap_decomposition(*(pick(u) for u in utils), pick(u_star))
    return res
