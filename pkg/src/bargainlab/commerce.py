"""Unit-economics wrapper around episodes (commerce mode) and chained cash-ledger sessions (bankroll mode)."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

from .core import FAMILIES, OPENERS, REGIMES, Family, Opener, Regime, Role, profile
from .protocol import EpisodeOptions, EpisodeTrace, UsageError, run_episode
from .rng import stream
from .scenarios import RESERVATION_MARGIN, GeneratorConfig, ScenarioSpec, sample_scenario

log = logging.getLogger(__name__)

MERCHANT, VENDOR = Role.BUYER, Role.SELLER


@dataclass(frozen=True)
class UnitEconomics:
    v: float  # unit resale value
    c: float  # unit fulfillment cost
    m: float  # unit margin floor
    h: float  # fixed overhead per deal
    o: float  # outside option
    n: int  # lot size

    def __post_init__(self) -> None:
        if not 1 <= self.n <= 50:
            raise ValueError("lot size must lie in 1..50")
        if min(self.v, self.c, self.m, self.h) < 0:
            raise ValueError("value, costs and margin must be non-negative")


def derive_reservation(econ: UnitEconomics, role: Role) -> float:
    """The unit price at which a deal stops clearing the margin floor."""
    return econ.v - econ.c - econ.m if role is MERCHANT else econ.v + econ.c + econ.m


def profit(price: float | None, econ: UnitEconomics, role: Role) -> float:
    """Deal profit at ``price``; ``None`` means walk-away and earns the outside option."""
    if price is None:
        return econ.o
    unit = econ.v - price - econ.c if role is MERCHANT else price - econ.v - econ.c
    return econ.n * unit - econ.h


def volume_shift(r_b: float, n: int, beta: float, n_ref: float, direction: int) -> float:
    """Log-volume coupling of the counterpart reservation; ``direction`` is +1 or -1."""
    if n < 1 or n_ref <= 1:
        raise ValueError("need n >= 1 and n_ref > 1")
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    return r_b * (1.0 + direction * beta * math.log(n) / math.log(n_ref))


# ---------- commerce mode ----------


@dataclass(frozen=True)
class CommerceConfig:
    """Unit-economics sampling. Fractions are of the resale value v."""

    lot_range: tuple[int, int] = (1, 50)
    cost_frac: tuple[float, float] = (0.05, 0.15)
    margin_frac: tuple[float, float] = (0.02, 0.10)
    beta: float = 0.05
    n_ref: float = 50.0
    outside_frac: tuple[tuple[str, float], ...] = (("Overlap", -0.05), ("UrgencyShift", -0.10), ("NoDeal", 0.05))
    max_attempts: int = 50

    def outside(self, regime: Regime) -> float:
        return dict(self.outside_frac)[Regime(regime).value]


@dataclass(frozen=True)
class CommerceScenario:
    spec: ScenarioSpec  # effective episode: derived agent reservation, shifted counterpart reservation
    base: ScenarioSpec
    econ: UnitEconomics
    supplier_id: str | None = None

    @property
    def role(self) -> Role:
        return self.spec.agent_role

    @property
    def feasible(self) -> bool:
        return self.spec.feasible

    @property
    def best_profit(self) -> float | None:
        """Profit of closing at the counterpart's reservation, or the outside option if better; None if infeasible."""
        if not self.feasible:
            return None
        return max(profit(self.spec.r_counterpart, self.econ, self.role), self.econ.o)

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "base": self.base.to_dict(), "econ": asdict(self.econ), "supplier_id": self.supplier_id}


def build_commerce_scenario(base: ScenarioSpec, cfg: CommerceConfig = CommerceConfig(), key: int | None = None) -> CommerceScenario:
    """Wrap ``base`` in sampled unit economics.

    Draws whose derived agent reservation leaves the bounds are resampled; the
    volume-shifted counterpart reservation is clipped into them.
    """
    key = base.cell + 7 if key is None else key
    lo, hi = base.price_min + RESERVATION_MARGIN, base.price_max - RESERVATION_MARGIN
    v = 0.5 * (base.r_buyer + base.r_seller)
    role = base.agent_role
    direction = -1 if role is MERCHANT else 1  # suppliers go lower, customers higher, on bigger lots
    for attempt in range(cfg.max_attempts):
        g = stream(key, REGIMES.index(base.regime) * 100 + attempt)
        n = int(g.integers(cfg.lot_range[0], cfg.lot_range[1] + 1))
        c = v * g.uniform(*cfg.cost_frac)
        m = v * g.uniform(*cfg.margin_frac)
        h = g.uniform(0.0, n * m)
        econ = UnitEconomics(v, c, m, h, 0.0, n)
        r_a = derive_reservation(econ, role)
        if lo <= r_a <= hi:
            break
    else:
        raise UsageError(f"no in-bounds unit economics for cell {base.cell} after {cfg.max_attempts} draws")
    r_b = min(max(volume_shift(base.r_counterpart, n, cfg.beta, cfg.n_ref, direction), lo), hi)
    spec = replace(base, r_agent=float(r_a), r_counterpart=float(r_b))
    econ = replace(econ, o=cfg.outside(base.regime) * n * abs(spec.zopa) / 2.0)
    return CommerceScenario(spec, base, econ)


def commerce_suite(
    gen: GeneratorConfig = GeneratorConfig(),
    base_seed: int = 0,
    n: int = 192,
    role: Role = MERCHANT,
    cfg: CommerceConfig = CommerceConfig(),
    regimes: Sequence[Regime] = REGIMES,
) -> list[CommerceScenario]:
    """``n`` scenarios cycling through regime x family x opener cells for one business role."""
    cells = [(reg, fam, op) for fam in FAMILIES for op in OPENERS for reg in regimes]
    per_cell = -(-n // len(cells))
    if per_cell > gen.episodes_per_cell:
        gen = replace(gen, episodes_per_cell=min(100, per_cell))
    out = []
    for i in range(n):
        reg, fam, op = cells[i % len(cells)]
        out.append(build_commerce_scenario(sample_scenario(gen, base_seed, reg, fam, role, op, i // len(cells)), cfg))
    return out


@dataclass(frozen=True)
class CommerceResult:
    scenario: CommerceScenario
    trace: EpisodeTrace
    profit: float

    @property
    def agreement(self) -> bool:
        return self.trace.agreement and not self.trace.aborted

    def to_dict(self) -> dict:
        return {
            "cell": self.scenario.spec.cell,
            "regime": self.scenario.spec.regime.value,
            "feasible": self.scenario.feasible,
            "agreement": self.agreement,
            "price": self.trace.price,
            "profit": self.profit,
            "best_profit": self.scenario.best_profit,
            "units": self.scenario.econ.n,
        }


def play_commerce(scenario: CommerceScenario, agent, options: EpisodeOptions | None = None) -> CommerceResult:
    trace = run_episode(scenario.spec, agent, options or EpisodeOptions(record_payloads=False))
    price = trace.price if trace.agreement and not trace.aborted else None
    if trace.aborted:
        log.warning("episode %s aborted (%s); scored as walk-away", scenario.spec.cell, trace.abort_reason)
    return CommerceResult(scenario, trace, profit(price, scenario.econ, scenario.role))


def regret(results: Sequence[CommerceResult]) -> float | None:
    """1 - realized / best profit, summed over feasible scenarios; None when the best total is zero."""
    feas = [r for r in results if r.scenario.feasible]
    best = math.fsum(r.scenario.best_profit for r in feas)
    if best == 0:
        return None
    return 1.0 - math.fsum(r.profit for r in feas) / best


def commerce_summary(results: Sequence[CommerceResult]) -> dict:
    deals = [r for r in results if r.agreement]
    margins = []
    for r in deals:
        e = r.scenario.econ
        revenue = e.n * (e.v if r.scenario.role is MERCHANT else r.trace.price)
        margins.append(r.profit / revenue if revenue > 0 else 0.0)
    return {
        "n": len(results),
        "total_profit": math.fsum(r.profit for r in results),
        "mean_margin": math.fsum(margins) / len(margins) if margins else None,
        "walk_rate": 1.0 - len(deals) / len(results) if results else None,
        "neg_profit_rate": sum(r.profit < 0 for r in deals) / len(deals) if deals else None,
        "regret": regret(results),
        "n_feasible": sum(r.scenario.feasible for r in results),
    }


# ---------- bankroll mode ----------


@dataclass(frozen=True)
class Inventory:
    level: float = 0.0
    decay: float = 0.0
    holding_cost: float = 0.0
    demand: float = 0.0  # 0 means unlimited

    def step(self, units_in: float) -> tuple[Inventory, float]:
        """Roll stock forward; returns the new state and this period's holding charge."""
        stock = self.level + units_in
        sold = stock if self.demand == 0 else min(stock, self.demand)
        level = (stock - sold) * (1.0 - self.decay)
        return replace(self, level=level), self.holding_cost * level


@dataclass(frozen=True)
class Ledger:
    cash: float
    b: float = 8.0  # per-period cost
    r: float = 1.0  # per-round cost
    tau: float = 0.0  # ruin threshold
    period: int = 0
    ruined: bool = False
    ruin_period: int | None = None
    inventory: Inventory = Inventory()


def bankroll_step(ledger: Ledger, period_profit: float, rounds: int, units: float = 0.0) -> Ledger:
    if ledger.ruined:
        raise UsageError("ledger is ruined; later periods are placeholders")
    inv, holding = ledger.inventory.step(units)
    cash = ledger.cash + period_profit - (ledger.b + ledger.r * rounds) - holding
    t = ledger.period + 1
    ruined = cash < ledger.tau
    return replace(ledger, cash=cash, period=t, ruined=ruined, ruin_period=t if ruined else None, inventory=inv)


@dataclass(frozen=True)
class Supplier:
    id: str
    family: Family
    r_shift: float  # sticky offset on the counterpart reservation


SUPPLIER_MODES = ("iid", "pool", "persistent")


@dataclass(frozen=True)
class BankrollConfig:
    T: int = 50
    C0: float = 100.0
    b: float = 8.0
    r: float = 1.0
    tau: float = 0.0
    mode: str = "pool"
    K: int = 5
    carryover: bool | None = None  # default: off for iid, on otherwise
    shift_sd: float = 5.0
    summaries_shown: int = 5
    seed: int = 0
    inventory: Inventory = Inventory()
    commerce: CommerceConfig = CommerceConfig()
    generator: GeneratorConfig = GeneratorConfig(episodes_per_cell=100)
    regimes: tuple[Regime, ...] = REGIMES

    def __post_init__(self) -> None:
        if self.mode not in SUPPLIER_MODES:
            raise ValueError(f"mode must be one of {SUPPLIER_MODES}")
        if not 1 <= self.T <= self.generator.episodes_per_cell:
            raise ValueError("T must lie in 1..episodes_per_cell")
        if self.K < 1:
            raise ValueError("K must be positive")

    @property
    def carry(self) -> bool:
        return self.mode != "iid" if self.carryover is None else self.carryover


class SupplierPool:
    """Draws the counterpart identity for each period; identities and draws depend only on the session key."""

    def __init__(self, cfg: BankrollConfig, key: int) -> None:
        self.mode = cfg.mode
        self._g = stream(key, 1)
        self._cfg = cfg
        size = {"iid": 0, "pool": cfg.K, "persistent": 1}[cfg.mode]
        self.identities = [self._new(f"s{i}") for i in range(size)]

    def _new(self, sid: str) -> Supplier:
        fam = FAMILIES[int(self._g.integers(len(FAMILIES)))]
        return Supplier(sid, fam, float(self._g.normal(0.0, self._cfg.shift_sd)))

    def draw(self, t: int) -> Supplier:
        if self.mode == "iid":
            return self._new(f"iid-{t}")
        if self.mode == "persistent":
            return self.identities[0]
        return self.identities[int(self._g.integers(len(self.identities)))]


def session_key(cfg: BankrollConfig, session: int) -> int:
    return cfg.seed * 10_000 + session


def session_plan(cfg: BankrollConfig, session: int) -> list[tuple[Supplier, CommerceScenario]]:
    """The agent-independent sequence of suppliers and scenarios for one session."""
    base_seed = session_key(cfg, session)
    pool = SupplierPool(cfg, base_seed * 10**7 + 9)
    g = stream(base_seed * 10**7 + 9, 2)
    lo = cfg.generator.price_min + RESERVATION_MARGIN
    hi = cfg.generator.price_max - RESERVATION_MARGIN
    plan = []
    for t in range(cfg.T):
        sup = pool.draw(t)
        regime = cfg.regimes[int(g.integers(len(cfg.regimes)))]
        opener = OPENERS[int(g.integers(len(OPENERS)))]
        base = sample_scenario(cfg.generator, base_seed, regime, sup.family, MERCHANT, opener, t)
        base = replace(base, r_counterpart=min(max(base.r_counterpart + sup.r_shift, lo), hi))
        sc = build_commerce_scenario(base, cfg.commerce)
        plan.append((sup, replace(sc, supplier_id=sup.id)))
    return plan


def _terminal_estimate(trace: EpisodeTrace) -> dict | None:
    for r in reversed(trace.rounds):
        if r["actor"] == "agent" and r.get("belief"):
            return r["belief"]
    return None


@dataclass
class SessionRecord:
    session: int
    key: int
    mode: str
    memory: bool
    C0: float
    periods: list[dict] = field(default_factory=list)
    ledger: Ledger | None = None

    @property
    def terminal(self) -> float:
        return self.ledger.cash

    @property
    def survived(self) -> bool:
        return not self.ledger.ruined

    @property
    def ruin_period(self) -> int | None:
        return self.ledger.ruin_period

    @property
    def curve(self) -> list[float]:
        return [p["cash"] for p in self.periods]

    @property
    def max_drawdown(self) -> float:
        peak, worst = self.C0, 0.0
        for c in self.curve:
            peak = max(peak, c)
            worst = max(worst, peak - c)
        return worst

    def summary(self) -> dict:
        return {
            "type": "session",
            "session": self.session,
            "key": self.key,
            "mode": self.mode,
            "memory": self.memory,
            "terminal": self.terminal,
            "survived": self.survived,
            "ruin_period": self.ruin_period,
            "max_drawdown": self.max_drawdown,
        }

    def to_records(self) -> list[dict]:
        return [{"type": "period", "session": self.session, **p} for p in self.periods] + [self.summary()]


def run_session(cfg: BankrollConfig, agent, session: int = 0, memory: bool = True) -> SessionRecord:
    """Chain ``cfg.T`` commerce episodes through one cash ledger.

    With ``memory`` and carryover on, each episode's side information holds the agent's
    last type estimate and recent episode summaries for the current supplier.
    """
    ledger = Ledger(cfg.C0, cfg.b, cfg.r, cfg.tau, inventory=cfg.inventory)
    rec = SessionRecord(session, session_key(cfg, session), cfg.mode, memory, cfg.C0)
    carried: dict[str, dict | None] = {}
    summaries: dict[str, list[dict]] = {}
    for t, (sup, sc) in enumerate(session_plan(cfg, session), start=1):
        key = "iid" if cfg.mode == "iid" else sup.id
        row = {"period": t, "supplier_id": sup.id, "regime": sc.spec.regime.value, "units": sc.econ.n, "feasible": sc.feasible}
        if ledger.ruined:
            rec.periods.append({**row, "price": None, "profit": 0.0, "rounds": 0, "cash": ledger.cash, "placeholder": True})
            continue
        side = None
        if memory and cfg.carry:
            side = {"supplier_id": key, "type_estimate": carried.get(key), "prior_episodes": summaries.get(key, [])[-cfg.summaries_shown:]}
        opts = EpisodeOptions(side_info=(lambda ep, s=side: s) if side is not None else None, record_payloads=False)
        res = play_commerce(sc, agent, opts)
        price = res.trace.price if res.agreement else None
        rounds = res.trace.n_rounds
        ledger = bankroll_step(ledger, res.profit, rounds, sc.econ.n if price is not None else 0)
        carried[key] = _terminal_estimate(res.trace)
        summary = {"period": t, "supplier_id": key, "regime": sc.spec.regime.value, "units": sc.econ.n, "price": price, "walked": price is None, "profit": res.profit}
        summaries.setdefault(key, []).append(summary)
        rec.periods.append({**row, "price": price, "profit": res.profit, "rounds": rounds, "cash": ledger.cash, "placeholder": False})
    rec.ledger = ledger
    return rec


def memory_premium_of(stateful: Sequence[SessionRecord], memoryless: Sequence[SessionRecord]) -> float:
    """Mean terminal-cash difference between matched stateful and memory-suppressed sessions."""
    if len(stateful) != len(memoryless) or not stateful:
        raise UsageError("need equally many sessions in both arms")
    for a, b in zip(stateful, memoryless):
        if a.key != b.key or a.mode != b.mode:
            raise UsageError(f"session keys differ between arms: {a.key} vs {b.key}")
        if not a.memory or b.memory:
            raise UsageError("first arm must be stateful and second memory-suppressed")
    return math.fsum(a.terminal - b.terminal for a, b in zip(stateful, memoryless)) / len(stateful)


def memory_premium(cfg: BankrollConfig, agent, sessions: int = 10) -> float:
    on = [run_session(cfg, agent, s, memory=True) for s in range(sessions)]
    off = [run_session(cfg, agent, s, memory=False) for s in range(sessions)]
    return memory_premium_of(on, off)
