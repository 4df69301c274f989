"""Backward-induction planner over beliefs on a finite type set.

A planner state is (round, belief, last three own offers, pending counterpart
offer). Offering ``x`` at round ``k`` ends in acceptance, walk-away, or a
counterpart counter-offer. Counter-offers are discretized into price outcomes:
exact atoms at each type's interval ends, plus interior bins whose masses are
exact normal-CDF differences, each represented by its midpoint. Every
(price, sentiment, posture) outcome leads to the Bayes-updated next state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .belief import GridView, simpson_nodes
from .core import CueParams, Decision, FamilyProfile, KernelParams, Role, utility
from .cues import sentiment_probs_by_index, strategic_probs
from .kernel import (
    DEFAULT_KERNEL,
    HistoryFeatures,
    accept_probability,
    concession_rate,
    counter_interval,
    opening_interval,
    opening_phi,
    walkaway_probability,
)


@dataclass(frozen=True)
class PlannerConfig:
    M: int = 50
    n_bins: int = 20
    nodes: int = 9
    prune: float = 1e-9
    depth: int | None = None
    use_cues: bool = True
    tie_tol: float = 1e-12
    memo_decimals: int = 12

    def __post_init__(self) -> None:
        if self.M < 3:
            raise ValueError("M must be at least 3")
        if self.nodes < 3 or self.nodes % 2 == 0:
            raise ValueError("nodes must be odd and at least 3")
        if not 0.0 <= self.prune <= 1e-6:
            raise ValueError("prune threshold must lie in [0, 1e-6]")
        if self.depth is not None and self.depth < 1:
            raise ValueError("depth must be positive or None")


@dataclass(frozen=True)
class PlannerState:
    k: int
    belief: np.ndarray
    own: tuple[float, ...] = ()
    prev: float | None = None

    @property
    def pending(self) -> bool:
        return self.prev is not None


@dataclass(frozen=True)
class Choice:
    decision: Decision
    price: float | None
    value: float
    q_accept: float | None
    q_reject: float
    q_offer: dict[float, float] = field(default_factory=dict)


class IllegalAction(ValueError):
    pass


def _features(offers: np.ndarray, sign: int, R: float, tau: float) -> HistoryFeatures:
    """History features for a batch of offer sequences, shape (..., L)."""
    if offers.shape[-1] < 2:
        z = np.zeros(offers.shape[:-1])
        return HistoryFeatures(z, z, z.astype(int))
    w = offers[..., -4:]
    moves = sign * np.diff(w, axis=-1)
    pos = np.maximum(moves, 0.0)
    return HistoryFeatures(pos.mean(axis=-1) / R, moves.mean(axis=-1) / R, (pos[..., -1] / R < tau).astype(int))


def _scalar_features(feats: HistoryFeatures) -> HistoryFeatures:
    return HistoryFeatures(float(feats.magnitude), float(feats.speed), int(feats.rigidity))


class Planner:
    """Bayes-optimal offers against the kernel for a belief over ``types``."""

    def __init__(
        self,
        types: GridView,
        prof: FamilyProfile,
        agent_role: Role,
        r_agent: float,
        bounds: tuple[float, float],
        K: int,
        config: PlannerConfig = PlannerConfig(),
        own_grid: np.ndarray | None = None,
        params: KernelParams = DEFAULT_KERNEL,
        cue_params: CueParams = CueParams(),
    ) -> None:
        self.types = types
        self.prof = prof
        self.role = agent_role
        self.cp_role = agent_role.other
        self.r_agent = r_agent
        self.bounds = bounds
        self.R = bounds[1] - bounds[0]
        self.K = K
        self.cfg = config
        self.params = params
        self.cue_params = cue_params
        grid = np.linspace(bounds[0], bounds[1], config.M) if own_grid is None else np.asarray(own_grid, float)
        grid = grid[utility(grid, r_agent, agent_role) >= 0]
        # role-favorable extreme first: buyers low to high, sellers high to low
        self.own_grid = np.sort(grid) if agent_role is Role.BUYER else np.sort(grid)[::-1]
        self.edges = np.linspace(bounds[0], bounds[1], config.n_bins + 1)
        self.tol = 1e-9 * self.R
        self.memo: dict = {}
        self._interval_cache: dict = {}
        self._cues_informative = config.use_cues and prof.cue_channel not in ("collapsed", "pressure")
        self._d_nodes, self._d_weights = simpson_nodes(params.d0_min, params.d0_max, config.nodes)

    # ----- primitives -----

    def _sub(self, idx: np.ndarray) -> GridView:
        t = self.types
        return GridView(np.asarray(t.r)[idx], np.asarray(t.kappa)[idx], np.asarray(t.stance_idx)[idx])

    def allowed_offers(self, own: tuple[float, ...]) -> np.ndarray:
        if not own:
            return self.own_grid
        last = own[-1]
        keep = self.role.sign * (self.own_grid - last) >= -self.tol
        return self.own_grid[keep]

    def q_accept(self, state: PlannerState) -> float:
        if state.prev is None:
            raise IllegalAction("no counterpart offer is pending")
        return float(utility(state.prev, self.r_agent, self.role))

    def _respond_probs(self, k: int, own: tuple[float, ...], x: float, t: GridView):
        feats = _scalar_features(_features(np.array(own + (x,)), self.role.sign, self.R, self.params.tau_rigid))
        a = np.broadcast_to(accept_probability(x, t, k, self.K, feats, self.prof, self.cp_role, self.R, self.params), t.r.shape)
        w = np.broadcast_to(walkaway_probability(x, t, k, self.K, self.cp_role, self.R, self.params), t.r.shape)
        return a, w, feats

    def outcomes(self, k: int, feats: HistoryFeatures, prev: float | None, t: GridView):
        """Discretized next counterpart price: representative prices (J,) and per-type masses (J, n)."""
        n = len(t.r)
        if prev is None:
            lo, hi = opening_interval(t, self.cp_role, self.bounds)
            lo, hi = np.broadcast_to(np.asarray(lo, float), (n,)), np.broadcast_to(np.asarray(hi, float), (n,))
            sign = 1.0 if self.cp_role is Role.SELLER else -1.0
            phi = np.asarray(opening_phi(t, self.params))
            means = t.r[None, :] + sign * self._d_nodes[:, None] * phi[None, :] * (hi - lo)[None, :]
            weights = self._d_weights
            sigma = self.params.open_noise * self.R
        else:
            lo, hi = counter_interval(prev, t, self.cp_role)
            lo, hi = np.broadcast_to(np.asarray(lo, float), (n,)), np.broadcast_to(np.asarray(hi, float), (n,))
            lam = np.asarray(concession_rate(t, feats, self.prof, self.params))
            means = (prev - lam * (prev - t.r))[None, :]
            weights = np.ones(1)
            sigma = self.prof.price_noise * self.R
        degen = hi - lo <= self.tol
        nd = ~degen
        lo_all, hi_all = self._all_intervals(prev)

        def cdf(x):
            """Mixture CDF at points x, shape (E, n)."""
            z = (np.asarray(x, float)[None, :, None] - means[:, None, :]) / sigma
            return np.einsum("l,len->en", weights, ndtr(z))

        def cdf_own(x):
            """Each type's CDF at its own point x[i], shape (n,)."""
            return weights @ ndtr((x[None, :] - means) / sigma)

        eye = np.eye(n)
        c_lo, c_hi = cdf_own(lo), cdf_own(hi)
        prices = [hi[degen], lo[nd], hi[nd]]
        rows = [eye[degen], (eye * c_lo)[nd], (eye * (1.0 - c_hi))[nd]]
        if nd.any():
            edges = np.unique(np.concatenate([self.edges, lo_all, hi_all]))
            edges = edges[(edges >= lo[nd].min() - self.tol) & (edges <= hi[nd].max() + self.tol)]
            e0, e1 = edges[:-1], edges[1:]
            wide = e1 - e0 > self.tol
            e0, e1 = e0[wide], e1[wide]
            if e0.size:
                C = cdf(edges)
                C0, C1 = C[:-1][wide], C[1:][wide]
                inside = nd[None, :] & (lo[None, :] <= e0[:, None] + self.tol) & (e1[:, None] <= hi[None, :] + self.tol)
                prices.append(0.5 * (e0 + e1))
                rows.append(np.where(inside, C1 - C0, 0.0))
        prices = np.concatenate(prices)
        rows = np.concatenate(rows, axis=0)
        keys, inverse = np.unique(np.round(prices, 9), return_inverse=True)
        P = np.zeros((len(keys), n))
        np.add.at(P, inverse.ravel(), rows)
        keep = P.sum(axis=1) > 0
        return keys[keep], P[keep]

    def _all_intervals(self, prev: float | None):
        """Interval ends of every non-degenerate type, so bin edges do not depend on the belief."""
        key = None if prev is None else round(prev, 9)
        hit = self._interval_cache.get(key)
        if hit is None:
            t = self.types
            if prev is None:
                lo, hi = opening_interval(t, self.cp_role, self.bounds)
            else:
                lo, hi = counter_interval(prev, t, self.cp_role)
            n = len(t.r)
            lo, hi = np.broadcast_to(np.asarray(lo, float), (n,)), np.broadcast_to(np.asarray(hi, float), (n,))
            wide = hi - lo > self.tol
            hit = self._interval_cache[key] = (np.unique(lo[wide]), np.unique(hi[wide]))
        return hit

    def _cue_factors(self, k: int, prev: float | None, reps: np.ndarray, t: GridView) -> np.ndarray:
        """P(sentiment, posture | type, price outcome), shape (J, 9, n)."""
        ps = sentiment_probs_by_index(t.stance_idx, self.prof, self.cue_params)  # (n, 3)
        if prev is None:
            c_b = np.zeros((len(reps), len(t.r)))
            k_cue = 1
        else:
            c_b = np.minimum(1.0, np.abs(reps[:, None] - prev) / (np.abs(prev - t.r)[None, :] + self.cue_params.eps_c))
            k_cue = k
        pc = strategic_probs(Decision.OFFER, np.broadcast_to(t.stance_idx, c_b.shape), c_b, k_cue, self.K, self.prof, self.cue_params)  # (J, n, 3)
        joint = ps[None, :, :, None] * pc[:, :, None, :]  # (J, n, 3, 3)
        return joint.reshape(len(reps), len(t.r), 9).transpose(0, 2, 1)

    # ----- recursion -----

    def _normalize(self, b: np.ndarray) -> np.ndarray:
        if self.cfg.prune > 0:
            b = np.where(b < self.cfg.prune, 0.0, b)
        return b / b.sum()

    def _key(self, state: PlannerState, depth):
        d = self.cfg.memo_decimals
        return (
            state.k,
            tuple(round(x, 9) for x in state.own[-3:]),
            None if state.prev is None else round(state.prev, 9),
            np.round(state.belief, d).tobytes(),
            depth,
        )

    def value(self, state: PlannerState) -> float:
        return self.optimal_action(state).value

    def _solve(self, state: PlannerState, depth) -> Choice:
        key = self._key(state, depth)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        qa = self.q_accept(state) if state.pending else None
        qo = {float(x): self.q_offer(state, float(x), depth) for x in self.allowed_offers(state.own)}
        choice = self._choose(qa, qo)
        self.memo[key] = choice
        return choice

    def _choose(self, qa: float | None, qo: dict[float, float]) -> Choice:
        tol = self.cfg.tie_tol
        best_offer = max(qo.values()) if qo else -math.inf
        best = max(0.0, best_offer, qa if qa is not None else -math.inf)
        if qa is not None and qa >= best - tol and qa >= -tol:
            return Choice(Decision.ACCEPT, None, qa, qa, 0.0, qo)
        if best_offer > tol and best_offer >= best - tol:
            for x, v in qo.items():
                if v >= best_offer - tol:
                    return Choice(Decision.OFFER, x, v, qa, 0.0, qo)
        return Choice(Decision.REJECT, None, 0.0, qa, 0.0, qo)

    def q_offer(self, state: PlannerState, x: float, depth=None) -> float:
        idx = np.flatnonzero(state.belief > 0)
        b = state.belief[idx]
        t = self._sub(idx)
        a, w, feats = self._respond_probs(state.k, state.own, x, t)
        ux = float(utility(x, self.r_agent, self.role))
        value = float(b @ a) * ux
        if state.k >= self.K:
            return value
        cont = b * (1.0 - a) * (1.0 - w)
        if cont.sum() <= 0.0:
            return value
        reps, P = self.outcomes(state.k, feats, state.prev, t)
        W = P * cont[None, :]  # (J, n)
        if self._cues_informative and len(idx) > 1:
            W = (W[:, None, :] * self._cue_factors(state.k, state.prev, reps, t)).reshape(-1, len(idx))
            reps = np.repeat(reps, 9)
        mass = W.sum(axis=1)
        live = mass > 0
        W, reps, mass = W[live], reps[live], mass[live]
        own = (state.own + (x,))[-3:]
        next_depth = None if depth is None else depth - 1
        if next_depth == 0:
            return value + self._leaf_batch(state.k + 1, own, idx, W, reps)
        for wj, pj, mj in zip(W, reps, mass):
            b_next = np.zeros_like(state.belief)
            b_next[idx] = wj / mj
            b_next = self._normalize(b_next)
            value += mj * self._solve(PlannerState(state.k + 1, b_next, own, float(pj)), next_depth).value
        return value

    # ----- depth-limited leaf -----

    def hold_values(self, k: int, own: tuple[float, ...], t: GridView, xs: np.ndarray) -> np.ndarray:
        """Per-type value of repeating offer x from round k to K and never accepting, shape (len(xs), n)."""
        xs = np.asarray(xs, float)
        n = len(t.r)
        hist = np.tile(np.array(own, float), (len(xs), 1))
        alive = np.ones((len(xs), n))
        total = np.zeros((len(xs), n))
        u = utility(xs, self.r_agent, self.role)[:, None]
        for j in range(k, self.K + 1):
            hist = np.concatenate([hist, xs[:, None]], axis=1)[:, -4:]
            f = _features(hist, self.role.sign, self.R, self.params.tau_rigid)
            f = HistoryFeatures(f.magnitude[:, None], f.speed[:, None], f.rigidity[:, None])
            a = accept_probability(xs[:, None], t, j, self.K, f, self.prof, self.cp_role, self.R, self.params)
            om = walkaway_probability(xs[:, None], t, j, self.K, self.cp_role, self.R, self.params)
            a = np.broadcast_to(a, alive.shape)
            total += alive * a * u
            alive = alive * (1.0 - a) * (1.0 - np.broadcast_to(om, alive.shape))
        return total

    def _leaf_batch(self, k: int, own: tuple[float, ...], idx: np.ndarray, W: np.ndarray, reps: np.ndarray) -> float:
        """Sum over outcomes of mass x leaf value, where leaf = max(accept pending, reject, best hold)."""
        if k > self.K:
            return 0.0
        xs = self.allowed_offers(own)
        acc = utility(reps, self.r_agent, self.role)
        best = np.maximum(acc, 0.0) * W.sum(axis=1)
        if len(xs):
            H = self.hold_values(k, own, self._sub(idx), xs)  # (M', n)
            hold = (W @ H.T).max(axis=1)
            best = np.maximum(best, hold)
        return float(best.sum())

    # ----- public -----

    def optimal_action(self, state: PlannerState) -> Choice:
        """Argmax action with ties broken Accept, then the role-favorable Offer, then Reject."""
        b = self._normalize(np.asarray(state.belief, float))
        state = PlannerState(state.k, b, tuple(state.own[-3:]), state.prev)
        return self._solve(state, self.cfg.depth)


def zopa_grid(r_counterpart: float, r_agent: float, m: int) -> np.ndarray:
    """``m`` offers from the counterpart's reservation toward the agent's, excluding the latter."""
    return r_counterpart + (r_agent - r_counterpart) * np.arange(m) / m


def point_types(r: float, kappa: float, stance_idx: int) -> GridView:
    return GridView(np.array([float(r)]), np.array([float(kappa)]), np.array([int(stance_idx)]))


_SQRT2 = math.sqrt(2.0)


def _Phi(x: float) -> float:
    return 0.5 * math.erfc(-x / _SQRT2)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class PointPlanner:
    """Scalar planner for a known counterpart type.

    Same discretization and tie-breaking as ``Planner`` restricted to one type,
    written with plain floats because the full-information value is needed for
    every episode of a sweep.
    """

    def __init__(
        self,
        r: float,
        kappa: float,
        stance_idx: int,
        prof: FamilyProfile,
        agent_role: Role,
        r_agent: float,
        bounds: tuple[float, float],
        K: int,
        config: PlannerConfig = PlannerConfig(),
        own_grid: np.ndarray | None = None,
        params: KernelParams = DEFAULT_KERNEL,
    ) -> None:
        self.r, self.kappa, self.s = float(r), float(kappa), int(stance_idx)
        self.prof, self.role, self.cp_role = prof, agent_role, agent_role.other
        self.r_agent, self.bounds, self.K = float(r_agent), bounds, K
        self.R = bounds[1] - bounds[0]
        self.cfg, self.p = config, params
        grid = np.linspace(bounds[0], bounds[1], config.M) if own_grid is None else np.asarray(own_grid, float)
        grid = [float(x) for x in grid if utility(float(x), r_agent, agent_role) >= 0]
        self.own_grid = sorted(grid) if agent_role is Role.BUYER else sorted(grid, reverse=True)
        self.edges = [float(e) for e in np.linspace(bounds[0], bounds[1], config.n_bins + 1)]
        self.tol = 1e-9 * self.R
        self.memo: dict = {}
        d, w = simpson_nodes(params.d0_min, params.d0_max, config.nodes)
        self.d_nodes, self.d_weights = [float(x) for x in d], [float(x) for x in w]
        self.rho, self.xi, self.lam2 = float(prof.rho[self.s]), float(prof.xi[self.s]), float(prof.lambda2[self.s])
        self.k_walk = params.k_walk(K)
        self.cp_seller = self.cp_role is Role.SELLER
        self._outcome_cache: dict = {}

    def _u(self, price: float) -> float:
        return self.r_agent - price if self.role is Role.BUYER else price - self.r_agent

    def _features(self, offers: tuple[float, ...]):
        if len(offers) < 2:
            return 0.0, 0.0, 0
        w = offers[-4:]
        sign = self.role.sign
        moves = [sign * (w[i + 1] - w[i]) for i in range(len(w) - 1)]
        pos = [m if m > 0 else 0.0 for m in moves]
        return sum(pos) / len(pos) / self.R, sum(moves) / len(moves) / self.R, int(pos[-1] / self.R < self.p.tau_rigid)

    def _respond(self, k: int, own: tuple[float, ...], x: float):
        mag, speed, rig = self._features(own + (x,))
        fav = ((x - self.r) if self.cp_seller else (self.r - x)) / self.R
        p = self.p
        a = 0.0
        if fav >= 0:
            a = _sigmoid(p.alpha * fav + p.beta * self.kappa - p.gamma * (1.0 - math.sqrt(k / self.K)) + self.rho * speed + self.xi * rig)
        w = 0.0
        if k >= self.k_walk and fav < 0:
            clock = 1.0 if self.K <= self.k_walk else min(max((k - self.k_walk) / (self.K - self.k_walk), 0.0), 1.0)
            w = _sigmoid(p.phi0 + p.phi_delta * (-fav) + p.phi_t * clock)
        return a, w, mag

    def _outcomes(self, mag: float, prev: float | None) -> list[tuple[float, float]]:
        key = (mag, prev)
        hit = self._outcome_cache.get(key)
        if hit is None:
            hit = self._outcome_cache[key] = self._build_outcomes(mag, prev)
        return hit

    def _build_outcomes(self, mag: float, prev: float | None) -> list[tuple[float, float]]:
        p = self.p
        if prev is None:
            lo, hi = (self.r, self.bounds[1]) if self.cp_seller else (self.bounds[0], self.r)
            phi = min(max(1.0 - p.open_urgency * self.kappa + p.open_aggressive * (self.s == 2) - p.open_conciliatory * (self.s == 0), p.open_phi_min), p.open_phi_max)
            sign = 1.0 if self.cp_seller else -1.0
            means = [self.r + sign * d * phi * (hi - lo) for d in self.d_nodes]
            weights = self.d_weights
            sigma = p.open_noise * self.R
        else:
            lo, hi = (self.r, prev) if self.cp_seller else (prev, self.r)
            lam = p.lambda0 + p.lambda1 * self.kappa - self.lam2 * mag - p.lambda3 * (self.s == 2) + p.lambda4 * (self.s == 0)
            lam = min(max(lam, 0.0), 1.0)
            means = [prev - lam * (prev - self.r)]
            weights = [1.0]
            sigma = self.prof.price_noise * self.R
        if hi - lo <= self.tol:
            return [(round(hi, 9), 1.0)]

        def cdf(x: float) -> float:
            return sum(w * _Phi((x - m) / sigma) for w, m in zip(weights, means))

        out: dict[float, float] = {}
        c_lo, c_hi = cdf(lo), cdf(hi)
        out[round(lo, 9)] = out.get(round(lo, 9), 0.0) + c_lo
        out[round(hi, 9)] = out.get(round(hi, 9), 0.0) + 1.0 - c_hi
        edges = sorted({e for e in self.edges if lo - self.tol <= e <= hi + self.tol} | {lo, hi})
        prev_e, prev_c = edges[0], cdf(edges[0])
        for e in edges[1:]:
            if e - prev_e <= self.tol:
                continue
            c = cdf(e)
            key = round(0.5 * (prev_e + e), 9)
            out[key] = out.get(key, 0.0) + (c - prev_c)
            prev_e, prev_c = e, c
        return [(price, m) for price, m in sorted(out.items()) if m > 0]

    def q_offer(self, k: int, own: tuple[float, ...], prev: float | None, x: float) -> float:
        a, w, mag = self._respond(k, own, x)
        value = a * self._u(x)
        if k >= self.K:
            return value
        cont = (1.0 - a) * (1.0 - w)
        if cont <= 0.0:
            return value
        nxt = (own + (x,))[-3:]
        for price, m in self._outcomes(mag, prev):
            if cont * m >= self.cfg.prune:
                value += cont * m * self._solve(k + 1, nxt, price).value
        return value

    def allowed_offers(self, own: tuple[float, ...]) -> list[float]:
        if not own:
            return self.own_grid
        last, sign = own[-1], self.role.sign
        return [x for x in self.own_grid if sign * (x - last) >= -self.tol]

    def _solve(self, k: int, own: tuple[float, ...], prev: float | None) -> Choice:
        key = (k, tuple(round(x, 9) for x in own), None if prev is None else round(prev, 9))
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        qa = self._u(prev) if prev is not None else None
        qo = {x: self.q_offer(k, own, prev, x) for x in self.allowed_offers(own)}
        choice = Planner._choose(self, qa, qo)
        self.memo[key] = choice
        return choice

    def optimal_action(self, k: int, own: tuple[float, ...] = (), prev: float | None = None) -> Choice:
        return self._solve(k, tuple(own[-3:]), prev)

    def value(self, k: int, own: tuple[float, ...] = (), prev: float | None = None) -> float:
        return self.optimal_action(k, own, prev).value
