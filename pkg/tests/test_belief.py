import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import quad

from bargainlab.belief import (
    AugmentedState,
    BeliefFilter,
    DegenerateEvidence,
    ModelConfig,
    Observation,
    TypeGrid,
    init_belief,
    log_observation_likelihood,
    observation_likelihood,
    opening_likelihood,
    posterior_summary,
    price_likelihood,
)
from bargainlab.core import Decision, Family, Opener, Posture, Regime, Role, Sentiment, Stance, STANCES, profile
from bargainlab.kernel import HistoryFeatures, LatentType, ZERO_FEATURES, accept_probability
from bargainlab.protocol import AgentAction, Episode
from bargainlab.scenarios import GeneratorConfig, sample_scenario

GRID = TypeGrid.over((0.0, 100.0))
CFG = GeneratorConfig(episodes_per_cell=100)


from oracles import _Phi, _pdf, oracle_joint


def simulated_history(family, role, opener, episode, rounds=3, rate=0.15, regime=Regime.OVERLAP):
    s = sample_scenario(CFG, 5, regime, family, role, opener, episode)
    ep = Episode(s)
    x = 0.0 if role is Role.BUYER else 100.0
    while not ep.done and ep.k <= rounds:
        x = x + rate * (s.r_agent - x)
        ep.step(AgentAction.offer(x))
    events = []
    offers = {k: a.price for k, a in ep.agent_actions}
    for rnd, act in ep.cp_actions:
        k = max(rnd, 1)
        events.append((k, offers.get(rnd), act.decision.value if act.decision else None, act.price,
                       act.sentiment.value if act.sentiment else None, act.posture.value if act.posture else None))
    return s, ep, events


def filter_on(spec, ep, **kw):
    f = BeliefFilter.for_episode(spec, GRID, **kw)
    offers = {k: a.price for k, a in ep.agent_actions}
    for rnd, act in ep.cp_actions:
        f.update(Observation.from_action(rnd, act), offers.get(rnd))
    return f


# ---------- tests ----------

class TestInit:
    def test_candid_uniform(self):
        b = init_belief(Family.CANDID, GRID)
        assert GRID.N == 300
        assert np.allclose(b, 1 / 300, atol=1e-15)

    def test_adversarial_stance(self):
        b = init_belief(Family.ADVERSARIAL, GRID)
        s = posterior_summary(b, GRID)["stance_marginal"]
        assert [s[x.value] for x in STANCES] == pytest.approx([0.05, 0.15, 0.80], abs=1e-12)

    def test_reservation_marginal_uniform(self):
        for fam in Family:
            b = init_belief(fam, GRID)
            r = np.bincount(GRID.r_index, weights=b)
            assert np.allclose(r, 1 / 20, atol=1e-12)


class TestPriceLikelihood:
    T = LatentType(40.0, 0.5, Stance.NEUTRAL)

    def test_interior_is_gaussian_density(self):
        p = price_likelihood(47.0, self.T, 50.0, ZERO_FEATURES, profile("Candid"), Role.SELLER, 100.0)
        assert p == pytest.approx(_pdf(47.0, 50 - 0.26 * 10, 1.0), rel=1e-12)

    def test_reservation_endpoint_mass(self):
        p = price_likelihood(40.0, self.T, 50.0, ZERO_FEATURES, profile("Candid"), Role.SELLER, 100.0)
        assert p == pytest.approx(_Phi((40.0 - 47.4) / 1.0), rel=1e-9) and p > 0

    def test_outside_interval_is_zero(self):
        assert price_likelihood(39.0, self.T, 50.0, ZERO_FEATURES, profile("Candid"), Role.SELLER, 100.0) == 0.0
        assert price_likelihood(50.5, self.T, 50.0, ZERO_FEATURES, profile("Candid"), Role.SELLER, 100.0) == 0.0

    @pytest.mark.parametrize("fam", ["Candid", "Stochastic", "Expressive"])
    @pytest.mark.parametrize("role", [Role.SELLER, Role.BUYER])
    def test_total_mass_is_one(self, fam, role):
        t = LatentType(40.0 if role is Role.SELLER else 60.0, 0.3, Stance.AGGRESSIVE)
        prev = 48.0 if role is Role.SELLER else 52.0
        f = HistoryFeatures(0.02, 0.01, 1)
        a, b = sorted((t.r, prev))
        args = (t, prev, f, profile(fam), role, 100.0)
        inner, _ = quad(lambda p: price_likelihood(p, *args), a, b, epsabs=1e-12, limit=200)
        total = price_likelihood(a, *args) + inner + price_likelihood(b, *args)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_vectorized_matches_scalar(self):
        for i in (0, 77, 150, 299):
            t = LatentType(GRID.r[i], GRID.kappa[i], STANCES[GRID.stance_idx[i]])
            vec = price_likelihood(47.0, GRID, 50.0, ZERO_FEATURES, profile("Candid"), Role.SELLER, 100.0)[i]
            assert vec == price_likelihood(47.0, t, 50.0, ZERO_FEATURES, profile("Candid"), Role.SELLER, 100.0)


class TestOpening:
    def test_below_reservation_zero(self):
        t = LatentType(40.0, 0.5, Stance.NEUTRAL)
        assert opening_likelihood(35.0, t, Role.SELLER, (0.0, 100.0)) == 0.0

    def test_endpoint_mass_averaged(self):
        t = LatentType(40.0, 0.5, Stance.NEUTRAL)
        v = opening_likelihood(40.0, t, Role.SELLER, (0.0, 100.0))
        d = np.linspace(0.2, 0.8, 9)
        w = np.array([1, 4, 2, 4, 2, 4, 2, 4, 1]) / 24
        ref = sum(wi * _Phi((40 - (40 + di * 0.85 * 60)) / 2.0) for di, wi in zip(d, w))
        assert v == pytest.approx(ref, rel=1e-9)

    def test_opening_density_integrates_to_one(self):
        t = LatentType(40.0, 0.5, Stance.AGGRESSIVE)
        inner, _ = quad(lambda p: opening_likelihood(p, t, Role.SELLER, (0.0, 100.0)), 40, 100, limit=400, epsabs=1e-12)
        total = inner + opening_likelihood(40.0, t, Role.SELLER, (0, 100)) + opening_likelihood(100.0, t, Role.SELLER, (0, 100))
        assert total == pytest.approx(1.0, abs=1e-6)


class TestObservationLikelihood:
    def model(self, fam="Candid", role=Role.SELLER):
        return ModelConfig(profile(fam), role, (0.0, 100.0), 10)

    def test_reject_zeroes_ir_types(self):
        aug = AugmentedState(Role.BUYER, Opener.AGENT, [20.0, 30.0, 35.0, 38.0, 40.0], [80.0, 75.0, 70.0, 65.0, 60.0])
        obs = Observation(6, Decision.REJECT, None, Sentiment.NEGATIVE, Posture.PRESSURE)
        lik = observation_likelihood(obs, GRID, aug, 42.0, self.model())
        assert np.all(lik[GRID.r <= 42.0] == 0.0)
        assert np.all(lik[GRID.r > 42.0] > 0.0)

    def test_taciturn_cues_uninformative(self):
        aug = AugmentedState(Role.BUYER, Opener.AGENT, [20.0], [])
        m_cue = self.model("Taciturn")
        m_none = replace(m_cue, use_cues=False)
        obs = Observation(1, Decision.OFFER, 70.0, Sentiment.NEUTRAL, Posture.HOLD)
        a = observation_likelihood(obs, GRID, aug, 25.0, m_cue)
        b = observation_likelihood(obs, GRID, aug, 25.0, m_none)
        assert np.array_equal(a, b)

    def test_accept_proportional_to_accept_probability(self):
        aug = AugmentedState(Role.BUYER, Opener.AGENT, [20.0, 30.0], [80.0, 72.0])
        obs = Observation(3, Decision.ACCEPT, None, Sentiment.NEUTRAL, Posture.CONCEDE)
        lik = observation_likelihood(obs, GRID, aug, 45.0, replace(self.model(), use_cues=False))
        feats = HistoryFeatures(0.125, 0.125, 0)
        ref = accept_probability(45.0, GRID, 3, 10, feats, profile("Candid"), Role.SELLER, 100.0)
        assert np.allclose(lik, ref, rtol=1e-12, atol=0)

    def test_stance_coefficients_routed(self):
        # hardball preset differs across stances, so same (r, kappa) rows must differ
        aug = AugmentedState(Role.BUYER, Opener.AGENT, [20.0, 30.0, 31.0], [80.0, 72.0, 70.0])
        obs = Observation(4, Decision.ACCEPT, None, Sentiment.NEGATIVE, Posture.PRESSURE)
        lik = observation_likelihood(obs, GRID, aug, 31.5, self.model("Adversarial"))
        rows = lik.reshape(20, 5, 3)
        live = rows[:, :, 0] > 0
        assert np.all(rows[:, :, 0][live] != rows[:, :, 2][live])

    @pytest.mark.parametrize("fam", list(Family))
    def test_matches_scalar_oracle(self, fam):
        for role in Role:
            for opener in Opener:
                s, ep, events = simulated_history(fam, role, opener, 3)
                model = ModelConfig(profile(fam), s.counterpart_role, s.bounds, s.horizon)
                aug = AugmentedState(role, opener)
                for j, ((k, x, dec, p, _, _), (rnd, act)) in enumerate(zip(events, ep.cp_actions)):
                    ll = log_observation_likelihood(Observation.from_action(rnd, act), GRID, aug, x, model)
                    for i in range(0, GRID.N, 13):
                        args = (GRID.r[i], GRID.kappa[i], GRID.stance_idx[i], fam, role)
                        before = oracle_joint(*args, events[:j])
                        if before == -math.inf:
                            continue
                        step = oracle_joint(*args, events[: j + 1]) - before
                        if step == -math.inf:
                            assert ll[i] == -math.inf
                        else:
                            assert ll[i] == pytest.approx(step, abs=1e-9)
                    if x is not None:
                        aug.agent_offers.append(x)
                    if dec == "Offer":
                        aug.cp_offers.append(p)


class TestUpdate:
    def test_flat_likelihood_identity(self):
        class Flat(BeliefFilter):
            def log_likelihood(self, obs, agent_offer):
                return np.full(self.grid.N, -3.0)

        f = Flat(GRID, ModelConfig(profile("Adversarial"), Role.SELLER, (0, 100), 10), Role.BUYER, Opener.AGENT)
        before = f.belief.copy()
        f.update(Observation(1, None), 20.0)
        assert np.allclose(f.belief, before, rtol=1e-14, atol=0)

    def test_agent_opens_keeps_prior(self):
        s = sample_scenario(CFG, 5, Regime.OVERLAP, Family.CANDID, Role.BUYER, Opener.AGENT, 0)
        f = BeliefFilter.for_episode(s, GRID)
        assert np.array_equal(f.belief, init_belief(Family.CANDID, GRID))

    def test_reject_support(self):
        for e in range(40):
            s, ep, _ = simulated_history(Family.CANDID, Role.BUYER, Opener.COUNTERPART, e, rounds=10, rate=0.02, regime=Regime.NO_DEAL)
            last = ep.cp_actions[-1][1]
            if last.decision is not Decision.REJECT:
                continue
            try:
                f = filter_on(s, ep)
            except DegenerateEvidence:
                continue
            x = ep.agent_actions[-1][1].price
            assert np.all(f.belief[GRID.r <= x] == 0.0)
            return
        pytest.skip("no reject observed")

    @pytest.mark.parametrize("fam", [Family.CANDID, Family.STOCHASTIC, Family.ADVERSARIAL, Family.STRATEGIC])
    def test_sequential_equals_joint(self, fam):
        n = 0
        for e in range(25):
            for role in Role:
                for opener in Opener:
                    s, ep, events = simulated_history(fam, role, opener, e, rounds=3)
                    try:
                        f = filter_on(s, ep)
                    except DegenerateEvidence:
                        continue
                    prior = init_belief(fam, GRID)
                    logj = np.array([math.log(prior[i]) + oracle_joint(GRID.r[i], GRID.kappa[i], GRID.stance_idx[i], fam, role, events)
                                     for i in range(GRID.N)])
                    joint = np.exp(logj - logj.max())
                    joint /= joint.sum()
                    assert np.max(np.abs(f.belief - joint)) < 1e-10
                    n += 1
        assert n >= 50

    def test_normalized_and_pruning_monotone(self):
        for e in range(30):
            for fam in Family:
                s, ep, _ = simulated_history(fam, Role.SELLER, Opener.COUNTERPART, e, rounds=10, rate=0.1)
                f = BeliefFilter.for_episode(s, GRID)
                offers = {k: a.price for k, a in ep.agent_actions}
                dead = np.zeros(GRID.N, bool)
                for rnd, act in ep.cp_actions:
                    try:
                        f.update(Observation.from_action(rnd, act), offers.get(rnd))
                    except DegenerateEvidence:
                        break
                    assert abs(f.belief.sum() - 1.0) < 1e-12
                    assert not np.any(f.support[dead])
                    dead |= ~f.support

    def test_degenerate_evidence_raises(self):
        f = BeliefFilter(GRID, ModelConfig(profile("Candid"), Role.SELLER, (0, 100), 10), Role.BUYER, Opener.COUNTERPART)
        f.update(Observation(1, Decision.OFFER, 80.0, Sentiment.NEUTRAL, Posture.HOLD), None)
        with pytest.raises(DegenerateEvidence):
            f.update(Observation(1, Decision.OFFER, 95.0, Sentiment.NEUTRAL, Posture.HOLD), 30.0)


class TestSummary:
    def test_uniform_midpoint(self):
        s = posterior_summary(init_belief(Family.CANDID, GRID), GRID)
        assert s["r_mean"] == pytest.approx(50.0, abs=1e-12)
        assert sum(s["stance_marginal"].values()) == pytest.approx(1.0, abs=1e-12)
        assert s["r_interval"][0] < 50 < s["r_interval"][1]

    def test_point_mass(self):
        b = np.zeros(GRID.N)
        b[123] = 1.0
        s = posterior_summary(b, GRID)
        assert s["entropy"] == 0.0
        assert s["r_interval"][0] == s["r_interval"][1] == GRID.r[123]
        assert s["kappa_mean"] == GRID.kappa[123]


@pytest.mark.slow
class TestConsistency:
    @pytest.mark.parametrize("fam", [Family.CANDID, Family.EXPRESSIVE])
    def test_learning_curves(self, fam):
        K = 10
        stance_p = [[] for _ in range(K + 1)]
        r_err = [[] for _ in range(K + 1)]
        for e in range(500):
            role = Role.BUYER if e % 2 else Role.SELLER
            s = sample_scenario(CFG, 9, Regime.OVERLAP, fam, role, Opener.COUNTERPART, e % 25)
            s = replace(s, cell=s.cell + 7919 * e)
            ep = Episode(s)
            f = BeliefFilter.for_episode(s, GRID)
            f.update(Observation.from_action(0, ep.cp_actions[0][1]), None)
            x = 0.0 if role is Role.BUYER else 100.0
            while not ep.done:
                k = ep.k
                summ = f.summary()
                stance_p[k].append(summ["stance_marginal"][s.stance.value])
                r_err[k].append(abs(summ["r_mean"] - s.r_counterpart))
                x = x + 0.1 * (s.r_agent - x)
                ep.step(AgentAction.offer(x))
                if ep.done:
                    break
                try:
                    f.update(Observation.from_action(k, ep.cp_actions[-1][1]), x)
                except DegenerateEvidence:
                    break
        sp = [np.mean(v) for v in stance_p[1:] if len(v) >= 100]
        re = [np.mean(v) for v in r_err[1:] if len(v) >= 100]
        assert all(b >= a - 0.01 for a, b in zip(sp, sp[1:]))
        assert all(b <= a + 0.25 for a, b in zip(re, re[1:]))
