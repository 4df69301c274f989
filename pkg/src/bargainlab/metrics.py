"""Per-episode scoring, stratified aggregation, oracle-gap decomposition, difficulty scores and intervals."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .core import Opener, Termination, profile
from .protocol import EpisodeTrace, UsageError
from .scenarios import ScenarioSpec

EPS_KAPPA = 1e-3
OVERLAP_WEIGHTS = (0.45, 0.25, 0.20, 0.10)  # zopa, pressure, stance, deadline
NODEAL_WEIGHTS = (0.60, 0.25, 0.15)  # gap, cue channel, surface behavior
ANCHOR_WEIGHT = 0.20
STANCE_HARDNESS = (0.0, 0.5, 1.0)  # conciliatory, neutral, aggressive
SURFACE_HARDNESS = (1.0, 0.5, 0.0)
CUE_HARDNESS = {"base": 0.0, "collapsed": 0.5, "noisy": 0.75, "pressure": 1.0}
STRATIFIERS = ("agent", "condition", "regime", "family", "role", "opener")
BELIEF_AVERAGING = "components pooled over episode-round pairs; BE_type averaged within episode first, then across episodes"


@dataclass(frozen=True)
class EpisodeRecord:
    agent: str
    condition: str
    cell: int
    regime: str
    family: str
    role: str
    opener: str
    feasible: bool
    zopa: float
    utility: float
    agreement: bool
    termination: str | None
    rounds: int
    se: float | None  # u / zopa on feasible episodes
    agent_exit: bool
    violations: dict
    u_star: float | None = None
    # belief-error sums and counts over rounds with a valid report
    r_err: float = 0.0
    r_n: int = 0
    kappa_err: float = 0.0
    kappa_n: int = 0
    brier: float = 0.0
    brier_n: int = 0
    stance_hits: int = 0
    stance_n: int = 0

    @property
    def critical(self) -> bool:
        v = self.violations
        return v["price_bound"] + v["reservation_ir"] + v["invalid_action"] > 0

    @property
    def any_violation(self) -> bool:
        return sum(self.violations.values()) > 0

    @property
    def be_type(self) -> float | None:
        if self.r_n and self.kappa_n and self.brier_n:
            return (self.r_err / self.r_n + self.kappa_err / self.kappa_n + self.brier / self.brier_n) / 3.0
        return None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> EpisodeRecord:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def brier_stance(probs: Sequence[float], truth_idx: int) -> float:
    """Half the squared distance between a stance distribution and the one-hot truth."""
    return 0.5 * sum((p - (i == truth_idx)) ** 2 for i, p in enumerate(probs))


def episode_metrics(trace: EpisodeTrace, u_star: float | None = None) -> EpisodeRecord:
    if trace.termination is None:
        raise UsageError("episode is not terminal")
    spec = trace.spec
    feasible = spec.feasible
    acc = dict(r_err=0.0, r_n=0, kappa_err=0.0, kappa_n=0, brier=0.0, brier_n=0, stance_hits=0, stance_n=0)
    truth = spec.stance.index
    for r in trace.rounds:
        b = r.get("belief") if r["actor"] == "agent" else None
        if not b:
            continue
        if b.get("r_hat") is not None:
            acc["r_err"] += abs(b["r_hat"] - spec.r_counterpart) / spec.R
            acc["r_n"] += 1
        if b.get("kappa_hat") is not None:
            acc["kappa_err"] += abs(b["kappa_hat"] - spec.kappa_counterpart)
            acc["kappa_n"] += 1
        if b.get("stance_probs") is not None:
            p = b["stance_probs"]
            acc["brier"] += brier_stance(p, truth)
            acc["brier_n"] += 1
            acc["stance_hits"] += int(int(np.argmax(p)) == truth)
            acc["stance_n"] += 1
    return EpisodeRecord(
        agent=trace.agent_id,
        condition=trace.condition,
        cell=spec.cell,
        regime=spec.regime.value,
        family=spec.family.value,
        role=spec.agent_role.value,
        opener=spec.opener.value,
        feasible=feasible,
        zopa=spec.zopa,
        utility=trace.utility,
        agreement=trace.agreement,
        termination=trace.termination.value,
        rounds=trace.n_rounds,
        se=trace.utility / spec.zopa if feasible else None,
        agent_exit=(not feasible) and trace.termination is Termination.AGENT_REJECT,
        violations=trace.violations.to_dict(),
        u_star=u_star,
        **acc,
    )


@dataclass(frozen=True)
class MetricReport:
    """Undefined entries are None; every conditional metric carries its denominator."""

    n: int
    n_feasible: int = 0
    n_agreed_feasible: int = 0
    n_infeasible: int = 0
    SE: float | None = None
    AGR: float | None = None
    CSE: float | None = None
    FAGR: float | None = None
    SafeTerm: float | None = None
    AgentExit: float | None = None
    BE_r: float | None = None
    BE_kappa: float | None = None
    Brier: float | None = None
    BE_type: float | None = None
    StanceAcc: float | None = None
    n_BE_r: int = 0
    n_BE_kappa: int = 0
    n_Brier: int = 0
    n_BE_type: int = 0
    n_StanceAcc: int = 0
    CritViol: float | None = None
    BoundViol: float | None = None
    ResViol: float | None = None
    InvalidAct: float | None = None
    MonoViol: float | None = None
    BudgetViol: float | None = None
    SchemaViol: float | None = None
    AnyViol: float | None = None
    mean_utility: float | None = None
    n_oracle: int = 0
    mean_u_star: float | None = None
    mean_utility_matched: float | None = None
    oracle_gap: float | None = None
    pct_oracle: float | None = None
    terminations: dict = field(default_factory=dict)
    belief_averaging: str = BELIEF_AVERAGING

    def to_dict(self) -> dict:
        return asdict(self)


def _mean(xs: list[float]) -> float | None:
    return math.fsum(xs) / len(xs) if xs else None


def _rate(flags: Iterable[bool]) -> float | None:
    flags = list(flags)
    return sum(flags) / len(flags) if flags else None


def _ratio(num: float, den: int) -> float | None:
    return num / den if den else None


def summarize(records: Sequence[EpisodeRecord]) -> MetricReport:
    """Metrics over one stratum. An empty stratum gives a report with n = 0 and everything undefined."""
    recs = list(records)
    if not recs:
        return MetricReport(n=0)
    feas = [r for r in recs if r.feasible]
    agreed = [r for r in feas if r.agreement]
    infeas = [r for r in recs if not r.feasible]
    n = len(recs)
    # non-agreed feasible episodes contribute zero surplus, so the mean over feasible
    # episodes equals AGR * CSE; computing it as that product keeps the identity bit-exact
    cse_sum = math.fsum(r.se for r in agreed)
    agr = _ratio(len(agreed), len(feas))
    cse = _ratio(cse_sum, len(agreed))
    se = None if agr is None else (agr * cse if agreed else 0.0)
    r_n = sum(r.r_n for r in recs)
    k_n = sum(r.kappa_n for r in recs)
    b_n = sum(r.brier_n for r in recs)
    s_n = sum(r.stance_n for r in recs)
    types = [r.be_type for r in recs if r.be_type is not None]
    matched = [r for r in recs if r.u_star is not None]
    u_m = _mean([r.utility for r in matched])
    u_s = _mean([r.u_star for r in matched])
    terms = Counter(r.termination for r in recs)

    def viol(name: str) -> float:
        return sum(r.violations[name] > 0 for r in recs) / n

    fagr = _rate(r.agreement for r in infeas)
    return MetricReport(
        n=n,
        n_feasible=len(feas),
        n_agreed_feasible=len(agreed),
        n_infeasible=len(infeas),
        SE=se,
        AGR=agr,
        CSE=cse,
        FAGR=fagr,
        SafeTerm=None if fagr is None else 1.0 - fagr,
        AgentExit=_rate(r.agent_exit for r in infeas),
        BE_r=_ratio(math.fsum(r.r_err for r in recs), r_n),
        BE_kappa=_ratio(math.fsum(r.kappa_err for r in recs), k_n),
        Brier=_ratio(math.fsum(r.brier for r in recs), b_n),
        BE_type=_mean(types),
        StanceAcc=_ratio(sum(r.stance_hits for r in recs), s_n),
        n_BE_r=r_n,
        n_BE_kappa=k_n,
        n_Brier=b_n,
        n_BE_type=len(types),
        n_StanceAcc=s_n,
        CritViol=sum(r.critical for r in recs) / n,
        BoundViol=viol("price_bound"),
        ResViol=viol("reservation_ir"),
        InvalidAct=viol("invalid_action"),
        MonoViol=viol("monotonicity"),
        BudgetViol=viol("turn_budget"),
        SchemaViol=viol("schema_parse"),
        AnyViol=sum(r.any_violation for r in recs) / n,
        mean_utility=_mean([r.utility for r in recs]),
        n_oracle=len(matched),
        mean_u_star=u_s,
        mean_utility_matched=u_m,
        oracle_gap=None if u_s is None else u_s - u_m,
        pct_oracle=None if not u_s else 100.0 * u_m / u_s,
        terminations={k: v / n for k, v in sorted(terms.items(), key=lambda kv: str(kv[0]))},
    )


def aggregate(records: Sequence[EpisodeRecord], by: Sequence[str] = ()) -> dict[tuple, MetricReport]:
    """Reports keyed by the values of the ``by`` stratifiers; ``()`` gives one pooled report under key ``()``."""
    for key in by:
        if key not in STRATIFIERS:
            raise UsageError(f"unknown stratifier {key!r}; expected one of {STRATIFIERS}")
    groups: dict[tuple, list[EpisodeRecord]] = defaultdict(list)
    for r in records:
        groups[tuple(getattr(r, k) for k in by)].append(r)
    if not groups:
        return {(): MetricReport(n=0)} if not by else {}
    return {k: summarize(v) for k, v in sorted(groups.items())}


# ---------- oracle-gap decomposition ----------


@dataclass(frozen=True)
class GapDecomposition:
    inference: float
    uncertainty: float
    control: float

    @property
    def total(self) -> float:
        return self.inference + self.uncertainty + self.control


def gap_decomposition(base, posterior, revealed, oracle) -> GapDecomposition:
    """Split the base-to-oracle gap via the posterior-injected and revealed-type replays.

    Each argument is either a mean utility or a mapping from episode key to utility;
    mappings must cover the same episodes.
    """
    args = (base, posterior, revealed, oracle)
    if any(isinstance(a, Mapping) for a in args):
        if not all(isinstance(a, Mapping) for a in args):
            raise UsageError("pass four means or four per-episode mappings")
        keys = set(base)
        if any(set(a) != keys for a in args[1:]):
            raise UsageError("the four conditions were scored on different episode sets")
        if not keys:
            raise UsageError("empty episode set")
        order = sorted(keys)
        base, posterior, revealed, oracle = (math.fsum(a[k] for k in order) / len(order) for a in args)
    return GapDecomposition(posterior - base, revealed - posterior, oracle - revealed)


# ---------- difficulty ----------


@dataclass(frozen=True)
class DifficultyScore:
    score: float
    components: dict
    opener: str
    anchor: float | None = None  # counterpart opening harshness
    anchored_score: float | None = None
    agent_open: float | None = None  # policy diagnostic only


def _open_distance(price: float, reservation: float, width: float, eps_d: float) -> float:
    return min(1.0, 2.0 * abs(price - reservation) / (width + eps_d))


def difficulty_overlap(
    spec: ScenarioSpec,
    realized_anchor: float | None = None,
    agent_opening: float | None = None,
    horizon_range: tuple[int, int] | None = None,
) -> DifficultyScore:
    """Environment difficulty of a feasible episode; the deadline term enters only when horizons vary."""
    if not spec.feasible:
        raise UsageError("overlap difficulty needs a feasible episode")
    R = spec.R
    wz, wp, ws, wk = OVERLAP_WEIGHTS
    comps = {
        "zopa": 1.0 - spec.zopa / R,
        "press": max(0.0, (spec.kappa_agent - spec.kappa_counterpart) / (spec.kappa_agent + spec.kappa_counterpart + EPS_KAPPA)),
        "stance": STANCE_HARDNESS[spec.stance.index],
    }
    num = wz * comps["zopa"] + wp * comps["press"] + ws * comps["stance"]
    den = wz + wp + ws
    if horizon_range is not None and horizon_range[1] > horizon_range[0]:
        lo, hi = horizon_range
        comps["deadline"] = 1.0 - (spec.horizon - lo) / (hi - lo)
        num += wk * comps["deadline"]
        den += wk
    score = num / den
    eps_d = 1e-6 * R
    anchor = anchored = agent_open = None
    if spec.opener is Opener.COUNTERPART and realized_anchor is not None:
        anchor = _open_distance(realized_anchor, spec.r_counterpart, spec.zopa, eps_d)
        anchored = (1.0 - ANCHOR_WEIGHT) * score + ANCHOR_WEIGHT * anchor
    if spec.opener is Opener.AGENT and agent_opening is not None:
        agent_open = _open_distance(agent_opening, spec.r_agent, spec.zopa, eps_d)
    return DifficultyScore(score, comps, spec.opener.value, anchor, anchored, agent_open)


def difficulty_nodeal(spec: ScenarioSpec, sigma_scale: float | None = None) -> DifficultyScore:
    """Infeasibility-detection difficulty; ``sigma_scale`` defaults to the price range."""
    if spec.feasible:
        raise UsageError("no-deal difficulty needs an infeasible episode")
    sigma = spec.R if sigma_scale is None else sigma_scale
    vg, vc, vs = NODEAL_WEIGHTS
    comps = {
        "gap": math.exp(spec.zopa / (sigma + 1e-6 * sigma)),
        "cue": CUE_HARDNESS[profile(spec.family).cue_channel],
        "surface": SURFACE_HARDNESS[spec.stance.index],
    }
    return DifficultyScore(vg * comps["gap"] + vc * comps["cue"] + vs * comps["surface"], comps, spec.opener.value)


def opening_prices(trace: EpisodeTrace) -> tuple[float | None, float | None]:
    """(counterpart's first offer, agent's first offer) from a trace."""
    cp = next((r["price"] for r in trace.rounds if r["actor"] == "counterpart" and r["decision"] == "Offer"), None)
    ag = next((r["price"] for r in trace.rounds if r["actor"] == "agent" and r["decision"] == "Offer"), None)
    return cp, ag


def difficulty(trace: EpisodeTrace, horizon_range: tuple[int, int] | None = None) -> DifficultyScore:
    spec = trace.spec
    if not spec.feasible:
        return difficulty_nodeal(spec)
    cp, ag = opening_prices(trace)
    return difficulty_overlap(spec, cp, ag, horizon_range)


# ---------- intervals ----------


def bootstrap_ci(values: Sequence[float], B: int = 2000, level: float = 0.95, seed: int = 0) -> tuple[float, float] | None:
    """Percentile bootstrap interval for the mean; None for empty input."""
    if B < 100:
        raise ValueError("B must be at least 100")
    x = np.asarray(values, float)
    if x.size == 0:
        return None
    if np.all(x == x[0]):
        return float(x[0]), float(x[0])
    res = stats.bootstrap((x,), np.mean, n_resamples=B, confidence_level=level, method="percentile", random_state=np.random.default_rng(seed))
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


def wilson_ci(successes: int, n: int, level: float = 0.95) -> tuple[float, float] | None:
    if n == 0:
        return None
    ci = stats.binomtest(successes, n).proportion_ci(level, method="wilson")
    return float(ci.low), float(ci.high)
