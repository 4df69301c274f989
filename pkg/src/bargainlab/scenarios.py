"""Seeded episode specifications for the synthetic and catalog-grounded regimes."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .core import (
    FAMILIES,
    OPENERS,
    REGIMES,
    ROLES,
    ConfigError,
    Family,
    Opener,
    Regime,
    Role,
    Stance,
    STANCES,
    profile,
)
from .rng import stream

SIGMA_FLOOR = 1e-3
RESERVATION_MARGIN = 2.0


@dataclass(frozen=True)
class GeneratorConfig:
    price_min: float = 0.0
    price_max: float = 100.0
    horizon_K: int = 10
    zopa_range: tuple[float, float] = (5.0, 40.0)
    gap_range: tuple[float, float] = (5.0, 40.0)
    urgency_base: tuple[float, float] = (2.0, 2.0)
    urgency_shifted: tuple[float, float] = (3.0, 2.0)
    episodes_per_cell: int = 25
    d0_range: tuple[float, float] = (0.2, 0.8)
    wedge_alpha: tuple[float, float] = (0.5, 0.5)  # (seller, buyer)
    wedge_beta: tuple[float, float] = (1.0, 1.0)
    nodeal_gap_sigmas: tuple[float, float] = (0.5, 2.0)
    min_surplus: float = 0.0

    def __post_init__(self) -> None:
        if not self.price_min < self.price_max:
            raise ConfigError("price_min must be below price_max")
        if self.horizon_K < 2:
            raise ConfigError("horizon_K must be at least 2")
        if not 0 < self.zopa_range[0] <= self.zopa_range[1]:
            raise ConfigError("zopa_range must satisfy 0 < min <= max")
        if not 0 < self.gap_range[0] <= self.gap_range[1]:
            raise ConfigError("gap_range must satisfy 0 < min <= max")
        if not 1 <= self.episodes_per_cell <= 100:
            raise ConfigError("episodes_per_cell must lie in [1, 100]")
        widest = max(self.zopa_range[1], self.gap_range[1]) + 2 * RESERVATION_MARGIN
        if widest >= self.price_max - self.price_min:
            raise ConfigError("price range too narrow for the configured gaps")

    @property
    def R(self) -> float:
        return self.price_max - self.price_min

    @classmethod
    def from_file(cls, path: str | Path) -> GeneratorConfig:
        raw = json.loads(Path(path).read_text())
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})


@dataclass(frozen=True)
class SeedStreams:
    cell: int
    latent: tuple[int, int, int, int, int]  # stance, kappa_A, kappa_B base, kappa_B shifted, d0

    @property
    def geometry(self) -> int:
        return self.cell

    @property
    def runtime(self) -> int:
        return self.cell + 6


def cell_seed(base: int, family_idx: int, role_idx: int, opener_idx: int, episode_idx: int) -> int:
    """Decimal-field cell index; each field must fit its digit slot."""
    if base < 0:
        raise ConfigError("base seed must be non-negative")
    for name, v, hi in (("family_idx", family_idx, 100), ("role_idx", role_idx, 10), ("opener_idx", opener_idx, 10), ("episode_idx", episode_idx, 100)):
        if not 0 <= v < hi:
            raise ConfigError(f"{name}={v} outside [0, {hi})")
    return base * 10**7 + family_idx * 10**5 + role_idx * 10**4 + opener_idx * 10**3 + episode_idx * 10


def seed_streams(base: int, family_idx: int, role_idx: int, opener_idx: int, episode_idx: int, cfg: GeneratorConfig | None = None) -> SeedStreams:
    if cfg is not None and episode_idx >= cfg.episodes_per_cell:
        raise ConfigError(f"episode_idx={episode_idx} >= episodes_per_cell={cfg.episodes_per_cell}")
    cell = cell_seed(base, family_idx, role_idx, opener_idx, episode_idx)
    return SeedStreams(cell, tuple(cell + i for i in range(1, 6)))


@dataclass(frozen=True)
class ScenarioSpec:
    regime: Regime
    family: Family
    agent_role: Role
    opener: Opener
    r_agent: float
    r_counterpart: float
    kappa_agent: float
    kappa_counterpart: float
    stance: Stance
    d0: float
    price_min: float
    price_max: float
    horizon: int
    cell: int
    u_e: float
    urgency_shift: float = 0.0
    episode: int = 0
    product_id: str | None = None

    @property
    def counterpart_role(self) -> Role:
        return self.agent_role.other

    @property
    def r_buyer(self) -> float:
        return self.r_agent if self.agent_role is Role.BUYER else self.r_counterpart

    @property
    def r_seller(self) -> float:
        return self.r_counterpart if self.agent_role is Role.BUYER else self.r_agent

    @property
    def zopa(self) -> float:
        """Signed gap r_buyer - r_seller; positive iff a deal is feasible."""
        return self.r_buyer - self.r_seller

    @property
    def feasible(self) -> bool:
        return self.zopa > 0

    @property
    def R(self) -> float:
        return self.price_max - self.price_min

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.price_min, self.price_max)

    @property
    def key(self) -> tuple:
        return (self.cell, self.regime.value)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("regime", "family", "agent_role", "opener", "stance"):
            d[k] = d[k].value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioSpec:
        d = dict(d)
        d["regime"] = Regime(d["regime"])
        d["family"] = Family(d["family"])
        d["agent_role"] = Role(d["agent_role"])
        d["opener"] = Opener(d["opener"])
        d["stance"] = Stance(d["stance"])
        return cls(**d)


def zopa_width(u_e: float, rng_range: tuple[float, float]) -> float:
    lo, hi = rng_range
    return lo + u_e * (hi - lo)


@dataclass(frozen=True)
class _Latents:
    stance: Stance
    kappa_agent: float
    kappa_base: float
    kappa_shifted: float
    d0: float
    u_e: float
    u_m: float


def _draw_latents(cfg: GeneratorConfig, streams: SeedStreams, family: Family) -> _Latents:
    prior = np.asarray(profile(family).stance_prior)
    u = stream(streams.latent[0]).random()
    stance = STANCES[min(int(np.searchsorted(np.cumsum(prior), u, side="right")), 2)]
    kappa_a = stream(streams.latent[1]).beta(*cfg.urgency_base)
    kappa_b = stream(streams.latent[2]).beta(*cfg.urgency_base)
    kappa_s = stream(streams.latent[3]).beta(*cfg.urgency_shifted)
    d0 = stream(streams.latent[4]).uniform(*cfg.d0_range)
    u_e, u_m = stream(streams.geometry).random(2)
    return _Latents(stance, float(kappa_a), float(kappa_b), float(kappa_s), float(d0), float(u_e), float(u_m))


def _midpoint(cfg: GeneratorConfig, half: float, u_m: float) -> float:
    lo = cfg.price_min + half + RESERVATION_MARGIN
    hi = cfg.price_max - half - RESERVATION_MARGIN
    return lo + u_m * (hi - lo)


def _build(cfg, streams, lat, regime, family, role, opener, r_buyer, r_seller, kappa_b, shift=0.0, bounds=None, product_id=None) -> ScenarioSpec:
    r_agent, r_cp = (r_buyer, r_seller) if role is Role.BUYER else (r_seller, r_buyer)
    pmin, pmax = bounds or (cfg.price_min, cfg.price_max)
    return ScenarioSpec(
        regime=regime,
        family=family,
        agent_role=role,
        opener=opener,
        r_agent=float(r_agent),
        r_counterpart=float(r_cp),
        kappa_agent=lat.kappa_agent,
        kappa_counterpart=float(kappa_b),
        stance=lat.stance,
        d0=lat.d0,
        price_min=float(pmin),
        price_max=float(pmax),
        horizon=cfg.horizon_K,
        cell=streams.cell,
        u_e=lat.u_e,
        urgency_shift=float(shift),
        episode=(streams.cell // 10) % 100,
        product_id=product_id,
    )


def sample_overlap(cfg: GeneratorConfig, streams: SeedStreams, family: Family, role: Role, opener: Opener) -> ScenarioSpec:
    lat = _draw_latents(cfg, streams, family)
    z = zopa_width(lat.u_e, cfg.zopa_range)
    m = _midpoint(cfg, z / 2, lat.u_m)
    return _build(cfg, streams, lat, Regime.OVERLAP, family, role, opener, m + z / 2, m - z / 2, lat.kappa_base)


def sample_urgency_shift(cfg: GeneratorConfig, streams: SeedStreams, family: Family, role: Role, opener: Opener) -> ScenarioSpec:
    lat = _draw_latents(cfg, streams, family)
    z = zopa_width(lat.u_e, cfg.zopa_range)
    m = _midpoint(cfg, z / 2, lat.u_m)
    shift = lat.kappa_shifted - lat.kappa_base
    return _build(cfg, streams, lat, Regime.URGENCY_SHIFT, family, role, opener, m + z / 2, m - z / 2, lat.kappa_shifted, shift)


def sample_nodeal(cfg: GeneratorConfig, streams: SeedStreams, family: Family, role: Role, opener: Opener) -> ScenarioSpec:
    lat = _draw_latents(cfg, streams, family)
    q = zopa_width(lat.u_e, cfg.gap_range)
    m = _midpoint(cfg, q / 2, lat.u_m)
    return _build(cfg, streams, lat, Regime.NO_DEAL, family, role, opener, m - q / 2, m + q / 2, lat.kappa_base)


_SAMPLERS = {
    Regime.OVERLAP: sample_overlap,
    Regime.URGENCY_SHIFT: sample_urgency_shift,
    Regime.NO_DEAL: sample_nodeal,
}


def sample_scenario(cfg: GeneratorConfig, base_seed: int, regime: Regime, family: Family, role: Role, opener: Opener, episode: int) -> ScenarioSpec:
    streams = seed_streams(base_seed, FAMILIES.index(family), ROLES.index(role), OPENERS.index(opener), episode, cfg)
    return _SAMPLERS[Regime(regime)](cfg, streams, Family(family), Role(role), Opener(opener))


def generate_suite(
    cfg: GeneratorConfig,
    base_seed: int,
    regimes: Sequence[Regime] = REGIMES,
    families: Sequence[Family] = FAMILIES,
    roles: Sequence[Role] = ROLES,
    openers: Sequence[Opener] = OPENERS,
    episodes: int | None = None,
) -> list[ScenarioSpec]:
    """Balanced grid in a fixed canonical order (family, role, opener, episode, regime)."""
    n = cfg.episodes_per_cell if episodes is None else episodes
    return [
        sample_scenario(cfg, base_seed, reg, fam, role, op, e)
        for fam in families
        for role in roles
        for op in openers
        for e in range(n)
        for reg in regimes
    ]


# catalog-grounded variant


@dataclass(frozen=True)
class CatalogEntry:
    product_id: str
    category: str
    title: str
    description: str
    p_ref: float
    p_lo: float
    p_hi: float
    p_min: float
    p_max: float


def market_sigma(entry: CatalogEntry) -> float:
    return max((entry.p_hi - entry.p_lo) / 4.0, SIGMA_FLOOR)


def wedge_reservations(p_ref: float, delta_s: float, delta_b: float) -> tuple[float, float]:
    """(r_seller, r_buyer) for a feasible catalog scenario."""
    return (p_ref - delta_s, p_ref + delta_b)


def gap_reservations(p_ref: float, delta: float) -> tuple[float, float]:
    """(r_seller, r_buyer) for an infeasible catalog scenario."""
    return (p_ref + delta / 2, p_ref - delta / 2)


def truncated_normal(mu: float, sigma: float, lo: float, hi: float, rng: np.random.Generator, size=None):
    a, b = (lo - mu) / sigma, (hi - mu) / sigma
    return stats.truncnorm.rvs(a, b, loc=mu, scale=sigma, size=size, random_state=rng)


def sample_data_grounded(
    catalog: Sequence[CatalogEntry],
    cfg: GeneratorConfig,
    streams: SeedStreams,
    regime: Regime,
    family: Family,
    role: Role,
    opener: Opener,
    max_tries: int = 1000,
) -> ScenarioSpec:
    if not catalog:
        raise ValueError("catalog is empty after filtering")
    lat = _draw_latents(cfg, streams, family)
    rng = stream(streams.geometry, 1)
    for _ in range(max_tries):
        entry = catalog[int(rng.integers(len(catalog)))]
        sig = market_sigma(entry)
        if regime is Regime.NO_DEAL:
            cap = 2 * min(entry.p_max - entry.p_ref, entry.p_ref - entry.p_min)
            lo, hi = cfg.nodeal_gap_sigmas[0] * sig, min(cfg.nodeal_gap_sigmas[1] * sig, cap)
            if hi <= 0 or lo >= hi:
                continue
            r_s, r_b = gap_reservations(entry.p_ref, float(rng.uniform(lo, hi)))
        else:
            ds = truncated_normal(cfg.wedge_alpha[0] * (entry.p_ref - entry.p_lo), cfg.wedge_beta[0] * sig, 0.0, entry.p_ref - entry.p_min, rng)
            db = truncated_normal(cfg.wedge_alpha[1] * (entry.p_hi - entry.p_ref), cfg.wedge_beta[1] * sig, 0.0, entry.p_max - entry.p_ref, rng)
            r_s, r_b = wedge_reservations(entry.p_ref, float(ds), float(db))
            if r_b - r_s < max(cfg.min_surplus, 0.0) or r_b - r_s <= 0:
                continue
        kappa_b = lat.kappa_shifted if regime is Regime.URGENCY_SHIFT else lat.kappa_base
        shift = lat.kappa_shifted - lat.kappa_base if regime is Regime.URGENCY_SHIFT else 0.0
        return _build(cfg, streams, lat, regime, family, role, opener, r_b, r_s, kappa_b, shift, (entry.p_min, entry.p_max), entry.product_id)
    raise ValueError("no catalog product admits the requested geometry")


_CATALOG_FIELDS = ("product_id", "category", "title", "p_ref", "p_lo", "p_hi", "p_min", "p_max")


def _parse_row(row: dict, lineno: int) -> CatalogEntry:
    try:
        return CatalogEntry(
            product_id=str(row["product_id"]),
            category=str(row["category"]),
            title=str(row["title"]),
            description=str(row.get("description") or ""),
            **{k: float(row[k]) for k in ("p_ref", "p_lo", "p_hi", "p_min", "p_max")},
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed catalog row {lineno}: {exc}") from exc


def load_catalog(path: str | Path) -> list[CatalogEntry]:
    """Read a CSV or JSON-lines catalog, dropping rows whose price ordering is invalid."""
    path = Path(path)
    text = path.read_text()
    rows: list[tuple[int, dict]] = []
    if path.suffix in (".jsonl", ".json"):
        for i, line in enumerate(text.splitlines(), start=1):
            if line.strip():
                try:
                    rows.append((i, json.loads(line)))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"malformed catalog row {i}: {exc}") from exc
    elif text.strip():
        reader = csv.DictReader(text.splitlines())
        rows = [(i, r) for i, r in enumerate(reader, start=2)]
    if not rows:
        warnings.warn(f"catalog {path} is empty", UserWarning, stacklevel=2)
        return []
    entries, rejected = [], 0
    for lineno, row in rows:
        e = _parse_row(row, lineno)
        if e.p_lo <= e.p_ref <= e.p_hi and e.p_min < e.p_ref < e.p_max:
            entries.append(e)
        else:
            rejected += 1
    if rejected:
        warnings.warn(f"rejected {rejected} row(s) with invalid price ordering", UserWarning, stacklevel=2)
    return entries
