"""The fixed stochastic counterpart policy.

Every probability function broadcasts over numpy arrays, so the belief filter
evaluates whole type grids with the same code the simulator uses per episode.
A type argument only needs ``r``, ``kappa`` and ``stance_idx`` attributes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core import CueParams, Decision, FamilyProfile, KernelParams, Posture, Role, Sentiment, Stance, STANCES

DEFAULT_KERNEL = KernelParams()

ACCEPT, WALK, CONTINUE = 0, 1, 2


@dataclass(frozen=True)
class LatentType:
    r: float
    kappa: float
    stance: Stance

    @property
    def stance_idx(self) -> int:
        return self.stance.index


@dataclass(frozen=True)
class HistoryFeatures:
    magnitude: float
    speed: float
    rigidity: int


ZERO_FEATURES = HistoryFeatures(0.0, 0.0, 0)


def history_features(agent_offers: Sequence[float], role: Role, R: float, tau_rigid: float = 0.10) -> HistoryFeatures:
    """Concession summaries over the last three consecutive pairs of agent offers."""
    if len(agent_offers) < 2:
        return ZERO_FEATURES
    window = np.asarray(agent_offers[-4:], dtype=float)
    moves = role.sign * np.diff(window)
    pos = np.maximum(moves, 0.0)
    return HistoryFeatures(
        magnitude=float(pos.mean() / R),
        speed=float(moves.mean() / R),
        rigidity=int(pos[-1] / R < tau_rigid),
    )


def favorability(offer, t, cp_role: Role, R: float):
    """Role-normalized offer favorability for the counterpart; >= 0 iff IR for it."""
    if cp_role is Role.SELLER:
        return (offer - t.r) / R
    return (t.r - offer) / R


def acceptance_score(offer, t, k: int, K: int, features: HistoryFeatures, prof: FamilyProfile, cp_role: Role, R: float, params: KernelParams = DEFAULT_KERNEL):
    s = t.stance_idx
    return (
        params.alpha * favorability(offer, t, cp_role, R)
        + params.beta * t.kappa
        - params.gamma * (1.0 - np.sqrt(k / K))
        + prof.rho[s] * features.speed
        + prof.xi[s] * features.rigidity
    )


def accept_probability(offer, t, k: int, K: int, features: HistoryFeatures, prof: FamilyProfile, cp_role: Role, R: float, params: KernelParams = DEFAULT_KERNEL):
    fav = favorability(offer, t, cp_role, R)
    p = np.where(fav >= 0, expit(acceptance_score(offer, t, k, K, features, prof, cp_role, R, params)), 0.0)
    return float(p) if np.ndim(p) == 0 else p


def walkaway_probability(offer, t, k: int, K: int, cp_role: Role, R: float, params: KernelParams = DEFAULT_KERNEL):
    kw = params.k_walk(K)
    fav = favorability(offer, t, cp_role, R)
    if k < kw:
        return 0.0 if np.ndim(fav) == 0 else np.zeros_like(fav, dtype=float)
    clock = 1.0 if K <= kw else min(max((k - kw) / (K - kw), 0.0), 1.0)
    hazard = expit(params.phi0 + params.phi_delta * np.maximum(-fav, 0.0) + params.phi_t * clock)
    p = np.where(fav < 0, hazard, 0.0)
    return float(p) if np.ndim(p) == 0 else p


def sample_decision(a, omega, rng: np.random.Generator, size=None):
    """ACCEPT with prob a, else WALK with prob omega, else CONTINUE."""
    u1 = rng.random(size)
    u2 = rng.random(size)
    return np.where(u1 < a, ACCEPT, np.where(u2 < omega, WALK, CONTINUE))


def concession_rate(t, features: HistoryFeatures, prof: FamilyProfile, params: KernelParams = DEFAULT_KERNEL):
    s = np.asarray(t.stance_idx)
    raw = (
        params.lambda0
        + params.lambda1 * t.kappa
        - prof.lambda2[s] * features.magnitude
        - params.lambda3 * (s == 2)
        + params.lambda4 * (s == 0)
    )
    lam = np.clip(raw, 0.0, 1.0)
    return float(lam) if np.ndim(lam) == 0 else lam


def counter_interval(prev, t, cp_role: Role):
    """Monotone feasible interval for the next counterpart offer."""
    return (t.r, prev) if cp_role is Role.SELLER else (prev, t.r)


def counter_mean(prev, t, features: HistoryFeatures, prof: FamilyProfile, params: KernelParams = DEFAULT_KERNEL):
    return prev - concession_rate(t, features, prof, params) * (prev - t.r)


def project_counter(prev: float, t, features: HistoryFeatures, prof: FamilyProfile, cp_role: Role, eps: float, params: KernelParams = DEFAULT_KERNEL) -> float:
    lo, hi = counter_interval(prev, t, cp_role)
    return float(min(max(counter_mean(prev, t, features, prof, params) + eps, lo), hi))


def counter_offer(prev: float, t, features: HistoryFeatures, prof: FamilyProfile, cp_role: Role, R: float, rng: np.random.Generator, params: KernelParams = DEFAULT_KERNEL) -> float:
    eps = rng.normal(0.0, prof.price_noise * R)
    return project_counter(prev, t, features, prof, cp_role, eps, params)


def opening_phi(t, params: KernelParams = DEFAULT_KERNEL):
    s = np.asarray(t.stance_idx)
    raw = 1.0 - params.open_urgency * t.kappa + params.open_aggressive * (s == 2) - params.open_conciliatory * (s == 0)
    phi = np.clip(raw, params.open_phi_min, params.open_phi_max)
    return float(phi) if np.ndim(phi) == 0 else phi


def opening_interval(t, cp_role: Role, bounds: tuple[float, float]):
    return (t.r, bounds[1]) if cp_role is Role.SELLER else (bounds[0], t.r)


def opening_mean(t, d0, cp_role: Role, bounds: tuple[float, float], params: KernelParams = DEFAULT_KERNEL):
    slack = bounds[1] - t.r if cp_role is Role.SELLER else t.r - bounds[0]
    s_b = 1.0 if cp_role is Role.SELLER else -1.0
    return t.r + s_b * d0 * opening_phi(t, params) * slack


def project_opening(t, d0: float, cp_role: Role, bounds: tuple[float, float], eps: float, params: KernelParams = DEFAULT_KERNEL) -> float:
    lo, hi = opening_interval(t, cp_role, bounds)
    return float(min(max(opening_mean(t, d0, cp_role, bounds, params) + eps, lo), hi))


def opening_offer(t, d0: float, cp_role: Role, bounds: tuple[float, float], rng: np.random.Generator, params: KernelParams = DEFAULT_KERNEL) -> float:
    eps = rng.normal(0.0, params.open_noise * (bounds[1] - bounds[0]))
    return project_opening(t, d0, cp_role, bounds, eps, params)


@dataclass(frozen=True)
class CounterpartAction:
    """One counterpart emission. ``decision is None`` marks the round limit."""

    decision: Decision | None
    price: float | None = None
    sentiment: Sentiment | None = None
    posture: Posture | None = None
    concession: float = 0.0


@dataclass
class Counterpart:
    """Per-episode counterpart state: type, preset and both offer histories."""

    t: LatentType
    prof: FamilyProfile
    role: Role
    bounds: tuple[float, float]
    K: int
    d0: float
    params: KernelParams = DEFAULT_KERNEL
    cue_params: CueParams = field(default_factory=CueParams)
    agent_offers: list[float] = field(default_factory=list)
    offers: list[float] = field(default_factory=list)

    @property
    def R(self) -> float:
        return self.bounds[1] - self.bounds[0]

    def _emit(self, decision: Decision, price: float | None, k: int, rng: np.random.Generator) -> CounterpartAction:
        from . import cues

        c_b = 0.0
        if decision is Decision.OFFER and self.offers:
            prev = self.offers[-1]
            c_b = cues.concession_magnitude(price, prev, self.t.r, self.cue_params)
        sent = cues.sample_sentiment(self.t.stance, self.prof, rng, self.cue_params)
        post = cues.sample_strategic_cue(decision, self.t.stance, c_b, k, self.K, self.prof, rng, self.cue_params)
        if decision is Decision.OFFER:
            self.offers.append(price)
        return CounterpartAction(decision, price, sent, post, c_b)

    def open(self, rng: np.random.Generator) -> CounterpartAction:
        """First price proposal when the counterpart moves first."""
        price = opening_offer(self.t, self.d0, self.role, self.bounds, rng, self.params)
        return self._emit(Decision.OFFER, price, 1, rng)

    def probabilities(self, offer: float, k: int) -> tuple[float, float, HistoryFeatures]:
        feats = history_features(self.agent_offers + [offer], self.role.other, self.R, self.params.tau_rigid)
        a = accept_probability(offer, self.t, k, self.K, feats, self.prof, self.role, self.R, self.params)
        w = walkaway_probability(offer, self.t, k, self.K, self.role, self.R, self.params)
        return a, w, feats

    def respond(self, offer: float, k: int, rng: np.random.Generator) -> CounterpartAction:
        """Respond to the agent's round-k offer: accept, walk away, counter, or run out of rounds."""
        a, w, feats = self.probabilities(offer, k)
        self.agent_offers.append(offer)
        code = int(sample_decision(a, w, rng))
        if code == ACCEPT:
            return self._emit(Decision.ACCEPT, None, k, rng)
        if code == WALK:
            return self._emit(Decision.REJECT, None, k, rng)
        if k >= self.K:
            return CounterpartAction(None)
        if self.offers:
            price = counter_offer(self.offers[-1], self.t, feats, self.prof, self.role, self.R, rng, self.params)
        else:
            price = opening_offer(self.t, self.d0, self.role, self.bounds, rng, self.params)
        return self._emit(Decision.OFFER, price, k, rng)


def stance_from_index(i: int) -> Stance:
    return STANCES[i]
