"""Exact Bayesian filtering over a discretized counterpart-type grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr, logsumexp
from scipy.stats import norm

from .core import CueParams, Decision, Family, FamilyProfile, KernelParams, Opener, Posture, Role, Sentiment, Stance, POSTURES, SENTIMENTS, STANCES, profile
from .cues import sentiment_probs_by_index, strategic_probs
from .kernel import (
    DEFAULT_KERNEL,
    HistoryFeatures,
    accept_probability,
    concession_rate,
    counter_interval,
    history_features,
    opening_interval,
    opening_phi,
    walkaway_probability,
)

KAPPA_LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9)


class DegenerateEvidence(RuntimeError):
    """Every grid type assigns zero likelihood to an observation."""


@dataclass(frozen=True, eq=False)
class TypeGrid:
    """Reservation x urgency x stance grid, reservation-major, stance fastest."""

    r_levels: np.ndarray
    kappa_levels: np.ndarray = field(default_factory=lambda: np.array(KAPPA_LEVELS))

    def __post_init__(self) -> None:
        if len(self.r_levels) < 2:
            raise ValueError("need at least two reservation levels")
        nr, nk = len(self.r_levels), len(self.kappa_levels)
        ri, ki, si = np.meshgrid(np.arange(nr), np.arange(nk), np.arange(3), indexing="ij")
        object.__setattr__(self, "r", np.asarray(self.r_levels, float)[ri.ravel()])
        object.__setattr__(self, "kappa", np.asarray(self.kappa_levels, float)[ki.ravel()])
        object.__setattr__(self, "stance_idx", si.ravel())
        object.__setattr__(self, "r_index", ri.ravel())
        object.__setattr__(self, "kappa_index", ki.ravel())

    @classmethod
    def over(cls, bounds: tuple[float, float], n_r: int = 20) -> TypeGrid:
        return cls(np.linspace(bounds[0], bounds[1], n_r))

    @property
    def N(self) -> int:
        return len(self.r)

    def subset(self, mask: np.ndarray) -> "GridView":
        return GridView(self.r[mask], self.kappa[mask], self.stance_idx[mask])


@dataclass(frozen=True, eq=False)
class GridView:
    """Array-valued type record accepted by the kernel's vectorized functions."""

    r: np.ndarray
    kappa: np.ndarray
    stance_idx: np.ndarray


def init_belief(family: Family | str, grid: TypeGrid, prof: FamilyProfile | None = None) -> np.ndarray:
    """Uniform over reservation x urgency; stance marginal from the family profile."""
    prof = prof or profile(family)
    prior = np.asarray(prof.stance_prior, float)[grid.stance_idx]
    return prior / prior.sum()


def _log_projected(p: float, mean, sigma: float, a, b, tol: float) -> np.ndarray:
    """Log density/mass of clip(mean + N(0, sigma^2), a, b) at p: endpoint atoms, Gaussian interior."""
    mean, a, b = np.broadcast_arrays(np.asarray(mean, float), np.asarray(a, float), np.asarray(b, float))
    out = np.full(mean.shape, -np.inf)
    degenerate = (b - a) <= tol
    at_a = np.abs(p - a) <= tol
    at_b = np.abs(p - b) <= tol
    interior = (p > a + tol) & (p < b - tol) & ~degenerate
    out[interior] = norm.logpdf(p, mean[interior], sigma)
    left = at_a & ~degenerate
    out[left] = log_ndtr((a[left] - mean[left]) / sigma)
    right = at_b & ~at_a & ~degenerate
    out[right] = log_ndtr((mean[right] - b[right]) / sigma)
    out[degenerate & (at_a | at_b)] = 0.0
    return out


def log_price_likelihood(price: float, t, prev: float, features: HistoryFeatures, prof: FamilyProfile, cp_role: Role, R: float, params: KernelParams = DEFAULT_KERNEL, tol_frac: float = 1e-6) -> np.ndarray:
    mean = prev - concession_rate(t, features, prof, params) * (prev - t.r)
    a, b = counter_interval(prev, t, cp_role)
    return _log_projected(price, mean, prof.price_noise * R, a, b, tol_frac * R)


def price_likelihood(price: float, t, prev: float, features: HistoryFeatures, prof: FamilyProfile, cp_role: Role, R: float, params: KernelParams = DEFAULT_KERNEL, tol_frac: float = 1e-6):
    """Counter-offer likelihood: endpoint masses at the interval ends, Gaussian density inside."""
    out = np.exp(log_price_likelihood(price, t, prev, features, prof, cp_role, R, params, tol_frac))
    return float(out) if np.ndim(out) == 0 else out


def simpson_nodes(lo: float, hi: float, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Simpson nodes and averaging weights (weights sum to 1)."""
    if L < 3 or L % 2 == 0:
        raise ValueError("Simpson rule needs an odd node count >= 3")
    x = np.linspace(lo, hi, L)
    w = np.ones(L)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    return x, w / w.sum()


def log_opening_likelihood(price: float, t, cp_role: Role, bounds: tuple[float, float], params: KernelParams = DEFAULT_KERNEL, nodes: int = 9, tol_frac: float = 1e-6) -> np.ndarray:
    """Opening-price likelihood averaged over the unobserved ambition draw."""
    R = bounds[1] - bounds[0]
    a, b = opening_interval(t, cp_role, bounds)
    slack = np.asarray(b, float) - np.asarray(a, float)
    sign = 1.0 if cp_role is Role.SELLER else -1.0
    phi = opening_phi(t, params)
    d, w = simpson_nodes(params.d0_min, params.d0_max, nodes)
    shape = np.shape(np.asarray(t.r) + 0.0 * np.asarray(phi))
    terms = np.empty((len(d),) + shape)
    for i, di in enumerate(d):
        mean = t.r + sign * di * phi * slack
        terms[i] = _log_projected(price, mean, params.open_noise * R, a, b, tol_frac * R)
    with np.errstate(divide="ignore"):
        out = logsumexp(terms, axis=0, b=w.reshape((-1,) + (1,) * len(shape)))
    return out


def opening_likelihood(price: float, t, cp_role: Role, bounds: tuple[float, float], params: KernelParams = DEFAULT_KERNEL, nodes: int = 9, tol_frac: float = 1e-6):
    out = np.exp(log_opening_likelihood(price, t, cp_role, bounds, params, nodes, tol_frac))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Observation:
    """One counterpart move as seen by the filter. ``decision is None`` marks a timeout."""

    k: int
    decision: Decision | None
    price: float | None = None
    sentiment: Sentiment | None = None
    posture: Posture | None = None

    @classmethod
    def from_action(cls, k: int, act) -> Observation:
        return cls(max(k, 1), act.decision, act.price, act.sentiment, act.posture)


@dataclass
class AugmentedState:
    """Public history the likelihood depends on."""

    agent_role: Role
    opener: Opener
    agent_offers: list[float] = field(default_factory=list)
    cp_offers: list[float] = field(default_factory=list)

    @property
    def last_own(self) -> tuple[float, ...]:
        return tuple(self.agent_offers[-3:])

    @property
    def last_cp(self) -> tuple[float, ...]:
        return tuple(self.cp_offers[-2:])


def _log(x) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, float))


def log_cue_likelihood(decision: Decision, sentiment: Sentiment | None, posture: Posture | None, t, c_b, k: int, K: int, prof: FamilyProfile, cue_params: CueParams = CueParams()) -> np.ndarray:
    s = np.asarray(t.stance_idx)
    out = np.zeros(s.shape)
    if sentiment is not None:
        out = out + _log(sentiment_probs_by_index(s, prof, cue_params)[..., SENTIMENTS.index(sentiment)])
    if posture is not None:
        out = out + _log(strategic_probs(decision, s, c_b, k, K, prof, cue_params)[..., POSTURES.index(posture)])
    return out


@dataclass(frozen=True)
class ModelConfig:
    """Everything fixed about the counterpart model for one episode."""

    prof: FamilyProfile
    cp_role: Role
    bounds: tuple[float, float]
    K: int
    params: KernelParams = DEFAULT_KERNEL
    cue_params: CueParams = CueParams()
    use_cues: bool = True
    opening_nodes: int = 9
    tol_frac: float = 1e-6

    @property
    def R(self) -> float:
        return self.bounds[1] - self.bounds[0]


def log_observation_likelihood(obs: Observation, t, aug: AugmentedState, agent_offer: float | None, model: ModelConfig) -> np.ndarray:
    """Log-likelihood of a counterpart move for every type in ``t``.

    ``agent_offer`` is the offer the counterpart is answering; ``None`` only for
    the counterpart's unprompted opening.
    """
    R, K = model.R, model.K
    agent_role = model.cp_role.other
    shape = np.shape(np.asarray(t.r) * np.asarray(t.kappa))
    if agent_offer is None:
        if obs.decision is not Decision.OFFER:
            raise ValueError("an unprompted counterpart move must be an Offer")
        ll = log_opening_likelihood(obs.price, t, model.cp_role, model.bounds, model.params, model.opening_nodes, model.tol_frac)
        if model.use_cues:
            ll = ll + log_cue_likelihood(obs.decision, obs.sentiment, obs.posture, t, 0.0, 1, K, model.prof, model.cue_params)
        return ll
    k = obs.k
    feats = history_features(aug.agent_offers + [agent_offer], agent_role, R, model.params.tau_rigid)
    a = np.broadcast_to(accept_probability(agent_offer, t, k, K, feats, model.prof, model.cp_role, R, model.params), shape)
    w = np.broadcast_to(walkaway_probability(agent_offer, t, k, K, model.cp_role, R, model.params), shape)
    if obs.decision is Decision.ACCEPT:
        ll = _log(a)
    elif obs.decision is Decision.REJECT:
        ll = _log((1.0 - a) * w)
    else:
        ll = _log((1.0 - a) * (1.0 - w))
    if obs.decision is None:
        return ll
    c_b = 0.0
    if obs.decision is Decision.OFFER:
        if aug.cp_offers:
            prev = aug.cp_offers[-1]
            ll = ll + log_price_likelihood(obs.price, t, prev, feats, model.prof, model.cp_role, R, model.params, model.tol_frac)
            c_b = np.minimum(1.0, abs(obs.price - prev) / (np.abs(prev - np.asarray(t.r)) + model.cue_params.eps_c))
        else:
            ll = ll + log_opening_likelihood(obs.price, t, model.cp_role, model.bounds, model.params, model.opening_nodes, model.tol_frac)
    if model.use_cues:
        ll = ll + log_cue_likelihood(obs.decision, obs.sentiment, obs.posture, t, c_b, k, K, model.prof, model.cue_params)
    return ll


def observation_likelihood(obs: Observation, t, aug: AugmentedState, agent_offer: float | None, model: ModelConfig):
    out = np.exp(log_observation_likelihood(obs, t, aug, agent_offer, model))
    return float(out) if np.ndim(out) == 0 else out


class BeliefFilter:
    """Sequential posterior over the grid; probabilities stay normalized after each update."""

    def __init__(self, grid: TypeGrid, model: ModelConfig, agent_role: Role, opener: Opener, prior: np.ndarray | None = None) -> None:
        self.grid = grid
        self.model = model
        self.aug = AugmentedState(agent_role, opener)
        self.belief = init_belief(model.prof.family, grid, model.prof) if prior is None else np.asarray(prior, float) / np.sum(prior)
        self._log_b = _log(self.belief)
        self.history: list[tuple[Observation, float | None]] = []

    @classmethod
    def for_episode(cls, spec, grid: TypeGrid | None = None, use_cues: bool = True, **model_kw) -> BeliefFilter:
        grid = grid or TypeGrid.over(spec.bounds)
        model = ModelConfig(profile(spec.family), spec.counterpart_role, spec.bounds, spec.horizon, use_cues=use_cues, **model_kw)
        return cls(grid, model, spec.agent_role, spec.opener)

    @property
    def log_belief(self) -> np.ndarray:
        return self._log_b

    @property
    def support(self) -> np.ndarray:
        """Types not excluded by a zero-likelihood observation (underflow does not exclude)."""
        return np.isfinite(self._log_b)

    def log_likelihood(self, obs: Observation, agent_offer: float | None) -> np.ndarray:
        return log_observation_likelihood(obs, self.grid, self.aug, agent_offer, self.model)

    def update(self, obs: Observation, agent_offer: float | None) -> np.ndarray:
        """Condition on a counterpart move answering ``agent_offer`` (None for its opening)."""
        ll = self.log_likelihood(obs, agent_offer)
        post = self._log_b + ll
        total = logsumexp(post)
        if not np.isfinite(total):
            raise DegenerateEvidence(
                f"zero evidence for {obs} after agent offer {agent_offer}; "
                f"agent offers {self.aug.agent_offers}, counterpart offers {self.aug.cp_offers}, "
                f"support size {int(np.isfinite(self._log_b).sum())}"
            )
        self._log_b = post - total
        self.belief = np.exp(self._log_b)
        self.advance(obs, agent_offer)
        return self.belief

    def advance(self, obs: Observation, agent_offer: float | None) -> None:
        """Extend the public history without conditioning."""
        if agent_offer is not None:
            self.aug.agent_offers.append(agent_offer)
        if obs.decision is Decision.OFFER:
            self.aug.cp_offers.append(obs.price)
        self.history.append((obs, agent_offer))

    def summary(self) -> dict:
        return posterior_summary(self.belief, self.grid)


def posterior_summary(belief: np.ndarray, grid: TypeGrid, mass: float = 0.90) -> dict:
    """Moments, marginals and a central reservation interval of a grid posterior."""
    b = np.asarray(belief, float)
    r_marg = np.bincount(grid.r_index, weights=b, minlength=len(grid.r_levels))
    k_marg = np.bincount(grid.kappa_index, weights=b, minlength=len(grid.kappa_levels))
    s_marg = np.bincount(grid.stance_idx, weights=b, minlength=3)
    cdf = np.cumsum(r_marg)
    tail = (1.0 - mass) / 2.0
    lo = grid.r_levels[min(int(np.searchsorted(cdf, tail - 1e-12, side="left")), len(cdf) - 1)]
    hi = grid.r_levels[min(int(np.searchsorted(cdf, 1.0 - tail - 1e-12, side="left")), len(cdf) - 1)]
    nz = b[b > 0]
    return {
        "r_mean": float(b @ grid.r),
        "r_interval": [float(lo), float(hi)],
        "kappa_mean": float(b @ grid.kappa),
        "kappa_marginal": {f"{k:g}": float(m) for k, m in zip(grid.kappa_levels, k_marg)},
        "stance_marginal": {s.value: float(m) for s, m in zip(STANCES, s_marg)},
        "entropy": float(-(nz * np.log(nz)).sum()) + 0.0,
    }
