"""Suite-level acceptance checks. Each test prints one PASS/FAIL line with the measured values."""

import itertools
import math
import random
import time
from dataclasses import replace

import numpy as np
import pytest

from bargainlab.agents import FixedConcessionAgent
from bargainlab.belief import (
    AugmentedState,
    BeliefFilter,
    DegenerateEvidence,
    ModelConfig,
    Observation,
    TypeGrid,
    init_belief,
    observation_likelihood,
    opening_likelihood,
)
from bargainlab.commerce import BankrollConfig, commerce_suite, memory_premium, play_commerce, regret, run_session
from bargainlab.core import Decision, Family, Opener, Posture, Role, Sentiment, Stance, family_profiles, profile
from bargainlab.cues import sample_sentiment, sentiment_probs
from bargainlab.harness import RunConfig, oracle_values, run_sweep
from bargainlab.kernel import accept_probability, sample_decision, walkaway_probability
from bargainlab.metrics import STRATIFIERS, aggregate, difficulty_overlap, gap_decomposition, summarize
from bargainlab.planner import PlannerState
from bargainlab.protocol import EpisodeOptions, run_episode

from oracles import BruteForceTree, oracle_joint
from test_belief import GRID, simulated_history
import test_kernel
from test_kernel import _random_states
from test_metrics import spec as metrics_spec
from test_planner import planner_for, toy

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    def emit(name, checks):
        ok = all(passed for _, passed in checks)
        detail = "; ".join(f"{'ok' if passed else 'FAILED'} {label}" for label, passed in checks)
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def baseline():
    t0 = time.perf_counter()
    res = run_sweep(RunConfig())
    return res, time.perf_counter() - t0


@pytest.fixture(scope="module")
def suite_oracle():
    return oracle_values(RunConfig().specs())


def test_baseline_reproduction(baseline, verdict):
    res, secs = baseline
    rep = {k[0]: v for k, v in res.report().items()}
    se = {a: rep[a].SE for a in ("fixed-30", "fixed-10", "fixed-1")}
    verdict(
        "baseline reproduction",
        [
            (f"n=1800 per agent ({[rep[a].n for a in se]})", all(rep[a].n == 1800 for a in se)),
            (f"SE+ order {se['fixed-30']:.3f} > {se['fixed-10']:.3f} > {se['fixed-1']:.3f}", se["fixed-30"] > se["fixed-10"] > se["fixed-1"]),
            (f"SE+(FC-30)={se['fixed-30']:.3f} within 0.387+-0.06", abs(se["fixed-30"] - 0.387) <= 0.06),
            (f"AGR+(FC-30)={rep['fixed-30'].AGR:.4f} >= 0.99", rep["fixed-30"].AGR >= 0.99),
            (f"FAGR-={[rep[a].FAGR for a in se]}", all(rep[a].FAGR == 0.0 for a in se)),
            (f"runtime {secs:.1f}s < 120s", secs < 120),
        ],
    )


def test_oracle_aggregate(baseline, suite_oracle, verdict):
    res, _ = baseline
    mean_u = sum(suite_oracle.values()) / len(suite_oracle)
    fc = [replace(r, u_star=suite_oracle[(r.cell, r.regime)]) for r in res.records if r.agent == "fixed-30"]
    pct = summarize(fc).pct_oracle
    verdict(
        "oracle aggregate",
        [
            (f"mean u*={mean_u:.2f} in [14, 16] over {len(suite_oracle)} episodes", 14.0 <= mean_u <= 16.0),
            (f"%Oracle(FC-30)={pct:.1f} within 42.7+-8", abs(pct - 42.7) <= 8.0),
        ],
    )


def test_dp_equals_brute_force(verdict):
    rng = random.Random(5)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        inst = toy(rng)
        b = inst["belief"] / inst["belief"].sum()
        v = planner_for(inst).value(PlannerState(1, b, (), inst["prev"]))
        bf = BruteForceTree(inst["types"], inst["fam"], inst["role"], inst["r_agent"], inst["K"], inst["M"], 2, inst["nodes"])
        worst = max(worst, abs(v - bf.value(1, dict(zip(inst["types"], b)), (), inst["prev"])))
    secs = time.perf_counter() - t0
    verdict("DP equals brute force", [(f"max |diff|={worst:.1e} <= 1e-9 on 50 toys", worst <= 1e-9), (f"runtime {secs:.1f}s < 10s", secs < 10)])


class NormalizationProbe:
    """Side-info hook that updates a filter each round and records the worst normalization error."""

    def __init__(self, spec):
        self.filter = BeliefFilter.for_episode(spec, GRID)
        self.seen = 0
        self.worst = 0.0
        self.updates = 0
        self.degenerate = 0

    def __call__(self, ep):
        offers = {k: a.price for k, a in ep.agent_actions if a.decision is Decision.OFFER}
        for rnd, act in ep.cp_actions[self.seen:]:
            if act.decision is not Decision.OFFER:
                continue
            try:
                self.filter.update(Observation.from_action(rnd, act), offers.get(rnd))
            except DegenerateEvidence:
                self.degenerate += 1
                self.filter.advance(Observation.from_action(rnd, act), offers.get(rnd))
                continue
            self.updates += 1
            self.worst = max(self.worst, abs(self.filter.belief.sum() - 1.0))
        self.seen = len(ep.cp_actions)
        return None


def test_belief_filter_correctness(verdict):
    # normalization over a 1000-episode sweep
    specs = RunConfig(episodes_per_cell=14).specs()[:1000]
    worst, updates, degenerate = 0.0, 0, 0
    for s in specs:
        probe = NormalizationProbe(s)
        run_episode(s, FixedConcessionAgent(0.1), EpisodeOptions(side_info=probe, record_payloads=False))
        worst, updates, degenerate = max(worst, probe.worst), updates + probe.updates, degenerate + probe.degenerate

    # sequential vs joint on 100 three-round histories
    seq_worst, n = 0.0, 0
    for e, fam, role, opener in itertools.product(range(20), Family, Role, Opener):
        if n == 100:
            break
        s, ep, events = simulated_history(fam, role, opener, e, rounds=3)
        f = BeliefFilter.for_episode(s, GRID)
        offers = {k: a.price for k, a in ep.agent_actions}
        try:
            for rnd, act in ep.cp_actions:
                f.update(Observation.from_action(rnd, act), offers.get(rnd))
        except DegenerateEvidence:
            continue
        prior = init_belief(fam, GRID)
        logj = np.array([math.log(prior[i]) + oracle_joint(GRID.r[i], GRID.kappa[i], GRID.stance_idx[i], fam, role, events) for i in range(GRID.N)])
        joint = np.exp(logj - logj.max())
        seq_worst = max(seq_worst, float(np.max(np.abs(f.belief - joint / joint.sum()))))
        n += 1

    # reject evidence removes every type that would have found the offer acceptable
    reject_ok = True
    for fam, offer in itertools.product(Family, (35.0, 42.0, 60.0)):
        aug = AugmentedState(Role.BUYER, Opener.AGENT, [20.0, 30.0, 33.0, 34.0, offer - 0.5], [80.0, 75.0, 70.0, 65.0, 62.0])
        lik = observation_likelihood(Observation(6, Decision.REJECT, None, Sentiment.NEGATIVE, Posture.PRESSURE), GRID, aug, offer, ModelConfig(profile(fam), Role.SELLER, (0.0, 100.0), 10))
        reject_ok &= bool(np.all(lik[GRID.r <= offer] == 0.0))

    # opening quadrature: L = 9 against an L = 129 reference
    quad_worst = 0.0
    for role, p in itertools.product(Role, np.linspace(1, 99, 197)):
        ref = opening_likelihood(p, GRID, role, (0.0, 100.0), nodes=129)
        mask = ref > 1e-6 * ref.max() if ref.max() > 0 else ref > 0
        if mask.any():
            got = opening_likelihood(p, GRID, role, (0.0, 100.0), nodes=9)
            quad_worst = max(quad_worst, float(np.max(np.abs(got[mask] - ref[mask]) / ref[mask])))

    verdict(
        "belief-filter correctness",
        [
            (f"max |sum b - 1|={worst:.1e} < 1e-12 over {updates} updates in {len(specs)} episodes ({degenerate} degenerate)", worst < 1e-12 and len(specs) == 1000),
            (f"sequential vs joint max diff={seq_worst:.1e} < 1e-10 on {n} histories", seq_worst < 1e-10 and n == 100),
            ("reject zeroes every acceptable type", reject_ok),
            (f"L=9 vs L=129 max rel err={quad_worst:.3g} < 1e-4", quad_worst < 1e-4),
        ],
    )


def test_kernel_distributions(verdict):
    prof = profile("Expressive")
    rng = np.random.default_rng(42)
    n = 100_000
    worst_z = 0.0
    for t, offer, k, f in _random_states(20):
        a = accept_probability(offer, t, k, 10, f, prof, Role.SELLER, 100)
        w = walkaway_probability(offer, t, k, 10, Role.SELLER, 100)
        d = sample_decision(a, w, rng, size=n)
        for code, p in ((0, a), (1, (1 - a) * w)):
            se = math.sqrt(max(p * (1 - p), 1e-12) / n)
            worst_z = max(worst_z, abs(np.mean(d == code) - p) / se)

    target = (0.2525, 0.4950, 0.2525)
    closed = sentiment_probs(Stance.NEUTRAL, profile("Candid"))
    g = np.random.default_rng(7)
    draws = [sample_sentiment(Stance.NEUTRAL, profile("Candid"), g) for _ in range(n)]
    sent_z = max(abs(sum(d is s for d in draws) / n - p) / math.sqrt(p * (1 - p) / n) for s, p in zip(Sentiment, target))

    presets_ok = True
    profiles = family_profiles()
    for name, (rho, xi, lam2, users) in test_kernel.TestPresetTable.TABLE.items():
        for fam in users:
            p = profiles[Family(fam)].preset
            presets_ok &= p.name == name and p.rho == tuple(map(float, rho)) and p.xi == tuple(map(float, xi)) and p.lambda2 == tuple(map(float, lam2))

    verdict(
        "kernel distributions",
        [
            (f"accept/walk max |z|={worst_z:.2f} <= 3 on 20 states x 1e5 draws", worst_z <= 3.0),
            (f"neutral sentiment closed form {np.round(closed, 4).tolist()} ~ {list(target)}", bool(np.allclose(closed, target, atol=5e-5))),
            (f"neutral sentiment sampled max |z|={sent_z:.2f} <= 3", sent_z <= 3.0),
            ("preset tables match cell for cell", presets_ok),
        ],
    )


def test_metric_identities(baseline, verdict):
    res, _ = baseline
    strata, exact, close = 0, True, True
    for k in range(len(STRATIFIERS) + 1):
        for by in itertools.combinations(STRATIFIERS, k):
            for key, rep in aggregate(res.records, by).items():
                if rep.AGR is None or rep.CSE is None:
                    continue
                strata += 1
                exact &= rep.SE == rep.AGR * rep.CSE
                recs = [r for r in res.records if tuple(getattr(r, f) for f in by) == key and r.feasible]
                direct = math.fsum(r.se for r in recs) / len(recs)
                close &= math.isclose(rep.SE, direct, rel_tol=1e-12)

    rng = random.Random(3)
    tele = 0.0
    for _ in range(200):
        keys = range(rng.randint(1, 30))
        b, p, r, o = ({i: rng.uniform(0, 40) for i in keys} for _ in range(4))
        d = gap_decomposition(b, p, r, o)
        mean = lambda m: math.fsum(m.values()) / len(m)
        tele = max(tele, abs(d.total - (mean(o) - mean(b))))

    s = metrics_spec(stance=Stance.NEUTRAL, kappa_agent=0.5, kappa_counterpart=0.5)
    score = difficulty_overlap(replace(s, r_agent=s.r_counterpart + 25.0)).score

    verdict(
        "metric identities",
        [
            (f"SE+ == AGR+ * CSE+ bit-exact on {strata} strata", exact and strata > 100),
            ("SE+ matches the direct mean (rel 1e-12)", close),
            (f"gap decomposition telescopes (max residual {tele:.1e})", tele <= 1e-12),
            (f"fixed-horizon difficulty={score:.4f} == 0.4861", round(score, 4) == 0.4861),
        ],
    )


def test_determinism(baseline, verdict):
    res, _ = baseline
    again = run_sweep(RunConfig())
    verdict("determinism", [(f"trace SHA-256 {res.digest[:16]}... == {again.digest[:16]}...", res.digest == again.digest)])


def test_commerce_bankroll(verdict):
    cfg = BankrollConfig()
    worst, ruined, post_ok = 0.0, 0, True
    for s in range(100):
        rec = run_session(cfg, FixedConcessionAgent(0.3), s)
        live = [p for p in rec.periods if not p["placeholder"]]
        # exact identity, evaluated in the same order as the ledger steps
        cash = cfg.C0
        for p in live:
            cash = cash + p["profit"] - (cfg.b + cfg.r * p["rounds"])
        worst = max(worst, abs(cash - rec.terminal))
        if not rec.survived:
            ruined += 1
            post = rec.periods[rec.ruin_period:]
            post_ok &= all(p["placeholder"] and p["profit"] == 0.0 and p["cash"] == rec.terminal for p in post)

    premium = memory_premium(cfg, FixedConcessionAgent(0.3), 20)

    suite = commerce_suite(n=192)
    reg = {rate: regret([play_commerce(s, FixedConcessionAgent(rate)) for s in suite]) for rate in (0.3, 0.1, 0.01)}

    verdict(
        "commerce and bankroll",
        [
            (f"ledger conservation residual {worst} over 100 sessions", worst == 0.0),
            (f"post-ruin periods zero-profit ({ruined} ruined sessions)", post_ok and ruined > 0),
            (f"memory premium of side-info-ignoring agent = {premium}", premium == 0.0),
            (f"regret order {reg[0.3]:.3f} < {reg[0.1]:.3f} < {reg[0.01]:.3f}", reg[0.3] < reg[0.1] < reg[0.01]),
        ],
    )
