"""Shared enumerations, parameter records and preset loading."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration or index falls outside its declared domain."""


class Regime(str, Enum):
    OVERLAP = "Overlap"
    URGENCY_SHIFT = "UrgencyShift"
    NO_DEAL = "NoDeal"


class Family(str, Enum):
    CANDID = "Candid"
    TACITURN = "Taciturn"
    EXPRESSIVE = "Expressive"
    STRATEGIC = "Strategic"
    STOCHASTIC = "Stochastic"
    ADVERSARIAL = "Adversarial"


class Role(str, Enum):
    BUYER = "Buyer"
    SELLER = "Seller"

    @property
    def other(self) -> Role:
        return Role.SELLER if self is Role.BUYER else Role.BUYER

    @property
    def sign(self) -> int:
        """+1 for a buyer (concedes upward), -1 for a seller."""
        return 1 if self is Role.BUYER else -1


class Opener(str, Enum):
    AGENT = "AgentOpens"
    COUNTERPART = "CounterpartOpens"


class Stance(str, Enum):
    CONCILIATORY = "Conciliatory"
    NEUTRAL = "Neutral"
    AGGRESSIVE = "Aggressive"

    @property
    def index(self) -> int:
        return STANCES.index(self)


class Decision(str, Enum):
    OFFER = "Offer"
    ACCEPT = "Accept"
    REJECT = "Reject"


class Sentiment(str, Enum):
    POSITIVE = "Positive"
    NEUTRAL = "Neutral"
    NEGATIVE = "Negative"


class Posture(str, Enum):
    CONCEDE = "Concede"
    HOLD = "Hold"
    PRESSURE = "Pressure"


class Termination(str, Enum):
    AGENT_ACCEPT = "AgentAccept"
    COUNTERPART_ACCEPT = "CounterpartAccept"
    AGENT_REJECT = "AgentReject"
    COUNTERPART_WALKAWAY = "CounterpartWalkAway"
    TIMEOUT = "Timeout"


REGIMES = tuple(Regime)
FAMILIES = tuple(Family)
ROLES = (Role.BUYER, Role.SELLER)
OPENERS = (Opener.AGENT, Opener.COUNTERPART)
STANCES = (Stance.CONCILIATORY, Stance.NEUTRAL, Stance.AGGRESSIVE)
SENTIMENTS = (Sentiment.POSITIVE, Sentiment.NEUTRAL, Sentiment.NEGATIVE)
POSTURES = (Posture.CONCEDE, Posture.HOLD, Posture.PRESSURE)


@dataclass(frozen=True)
class KernelParams:
    """Economic-response constants of the counterpart."""

    alpha: float = 6.0
    beta: float = 1.0
    gamma: float = 2.0
    phi0: float = -4.5
    phi_delta: float = 30.0
    phi_t: float = 1.5
    lambda0: float = 0.12
    lambda1: float = 0.28
    lambda3: float = 0.10
    lambda4: float = 0.10
    tau_rigid: float = 0.10
    open_urgency: float = 0.30
    open_aggressive: float = 0.15
    open_conciliatory: float = 0.15
    open_phi_min: float = 0.5
    open_phi_max: float = 1.5
    open_noise: float = 0.02
    d0_min: float = 0.2
    d0_max: float = 0.8

    def k_walk(self, K: int) -> int:
        return math.ceil(K / 2)


@dataclass(frozen=True)
class CueParams:
    tau_conc: float = 0.10
    tau_dead: float = 0.80
    mu_s: float = 1.0
    tau_s: float = 0.5
    sigma_s: float = 0.75
    b_c: float = 1.0
    b_h: float = 0.5
    b_p: float = 1.0
    alpha_c: float = 2.0
    alpha_p: float = 2.0
    beta_c: float = 1.0
    eps_c: float = 1e-6
    sigma_s_stochastic: float = 2.0
    temperature_stochastic: float = 2.5


@dataclass(frozen=True)
class EconomicPreset:
    """Stance-indexed coefficients, ordered (Conciliatory, Neutral, Aggressive)."""

    name: str
    rho: tuple[float, float, float]
    xi: tuple[float, float, float]
    lambda2: tuple[float, float, float]


@dataclass(frozen=True)
class FamilyProfile:
    family: Family
    preset: EconomicPreset
    price_noise: float
    cue_channel: str  # base | collapsed | noisy | pressure
    stance_prior: tuple[float, float, float]
    rho: np.ndarray = field(init=False, repr=False, compare=False)
    xi: np.ndarray = field(init=False, repr=False, compare=False)
    lambda2: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if abs(sum(self.stance_prior) - 1.0) > 1e-9:
            raise ConfigError(f"stance prior for {self.family.value} does not sum to 1")
        for name in ("rho", "xi", "lambda2"):
            object.__setattr__(self, name, np.asarray(getattr(self.preset, name), dtype=float))


def _default_preset_path():
    return resources.files("bargainlab").joinpath("data/presets.json")


@lru_cache(maxsize=8)
def _load_profiles(path: str | None) -> dict[Family, FamilyProfile]:
    text = Path(path).read_text() if path else _default_preset_path().read_text()
    raw = json.loads(text)
    presets = {
        name: EconomicPreset(name, tuple(p["rho"]), tuple(p["xi"]), tuple(p["lambda2"]))
        for name, p in raw["presets"].items()
    }
    for p in presets.values():
        if not (p.lambda2[0] <= p.lambda2[1] <= p.lambda2[2]):
            raise ConfigError(f"preset {p.name}: lambda2 must be non-decreasing in stance")
    noise = raw["price_noise"]
    out = {}
    for fam_name, f in raw["families"].items():
        fam = Family(fam_name)
        out[fam] = FamilyProfile(
            family=fam,
            preset=presets[f["preset"]],
            price_noise=float(noise[f["price_noise"]]),
            cue_channel=f["cue_channel"],
            stance_prior=tuple(float(x) for x in f["stance_prior"]),
        )
    missing = set(FAMILIES) - set(out)
    if missing:
        raise ConfigError(f"preset file lacks families: {sorted(m.value for m in missing)}")
    return out


def family_profiles(path: str | Path | None = None) -> dict[Family, FamilyProfile]:
    """Family profiles from the shipped preset table, or from ``path``."""
    return _load_profiles(str(path) if path else None)


def profile(family: Family | str, path: str | Path | None = None) -> FamilyProfile:
    return family_profiles(path)[Family(family)]


def utility(price: float, r_agent: float, role: Role) -> float:
    """Agent utility of agreeing at ``price``."""
    return r_agent - price if role is Role.BUYER else price - r_agent
