import json
from dataclasses import replace

import pytest

from bargainlab.core import Decision, Family, Opener, Regime, Role, Stance, Termination
from bargainlab.protocol import (
    AgentAction,
    Episode,
    EpisodeOptions,
    UsageError,
    ValidationState,
    ViolationSet,
    extract_json_object,
    parse_response,
    run_episode,
    validate_action,
    SchemaError,
)
from bargainlab.scenarios import GeneratorConfig, sample_scenario

CFG = GeneratorConfig()


def spec(regime=Regime.OVERLAP, family=Family.CANDID, role=Role.BUYER, opener=Opener.COUNTERPART, episode=0, **kw):
    s = sample_scenario(CFG, 11, regime, family, role, opener, episode)
    return replace(s, **kw) if kw else s


def state(role=Role.BUYER, r=60.0, last=None, pending=None, left=5):
    return ValidationState(role, (0.0, 100.0), r, last, pending, left)


class ScriptAgent:
    """Linear-step agent used only to drive the engine."""

    def __init__(self, rate=0.3):
        self.rate = rate

    def act(self, p):
        r = p["private_context"]["reservation_price"]
        buyer = p["private_context"]["role"] == "buyer"
        last = p["protocol_state"]["last_own_offer"]
        if last is None:
            last = 0.0 if buyer else 100.0
        nxt = last + self.rate * (r - last)
        obs = p["observation"]
        if obs is not None and obs["accept_utility"] >= abs(r - nxt):
            return AgentAction.accept()
        return {"decision": "Offer", "price": nxt, "message": "ok"}


class TestValidate:
    def test_accept_inside_reservation(self):
        a, v = validate_action(AgentAction.accept(), state(pending=55.0))
        assert a.decision is Decision.ACCEPT and v.total == 0

    def test_accept_outside_reservation_executes(self):
        a, v = validate_action(AgentAction.accept(), state(pending=65.0))
        assert a.decision is Decision.ACCEPT and v.reservation_ir == 1

    def test_offer_clamped(self):
        a, v = validate_action(AgentAction.offer(120.0), state(role=Role.SELLER, r=30.0))
        assert a.price == 100.0 and v.price_bound == 1 and v.reservation_ir == 0

    def test_accept_without_pending_falls_back(self):
        a, v = validate_action(AgentAction.accept(), state())
        assert a == AgentAction.offer(60.0) and v.invalid_action == 1

    def test_unparseable_fallback(self):
        a, v = validate_action(None, state(pending=50.0))
        assert a.decision is Decision.ACCEPT and v.schema_parse == 1 and v.invalid_action == 1
        a, v = validate_action(None, state(pending=70.0))
        assert a == AgentAction.offer(60.0)

    def test_monotonicity_flagged_not_blocked(self):
        a, v = validate_action(AgentAction.offer(30.0), state(last=40.0))
        assert a.price == 30.0 and v.monotonicity == 1
        _, v = validate_action(AgentAction.offer(70.0), state(role=Role.SELLER, r=50.0, last=60.0))
        assert v.monotonicity == 1

    def test_offer_beyond_reservation(self):
        _, v = validate_action(AgentAction.offer(65.0), state())
        assert v.reservation_ir == 1

    def test_violation_sum(self):
        s = ViolationSet(price_bound=1) + ViolationSet(schema_parse=2, invalid_action=1)
        assert s.critical == 2 and s.total == 4


class TestParsing:
    def test_well_formed(self):
        a = parse_response('{"decision": "Offer", "price": 42.5, "message": "hi"}')
        assert a == AgentAction(Decision.OFFER, 42.5, "hi")

    def test_prose_wrapped(self):
        text = 'Sure! Here is my move: {"decision": "Accept", "price": null, "message": "deal {ok}"} thanks'
        assert parse_response(text).decision is Decision.ACCEPT

    def test_skips_broken_brace(self):
        assert extract_json_object('a {broken {"decision": "Reject"}')["decision"] == "Reject"

    def test_unparseable(self):
        for bad in ("no json here", '{"decision": "Dance"}', '{"decision": "Offer"}', '{"decision": "Offer", "price": "NaN"}'):
            with pytest.raises(SchemaError):
                parse_response(bad)

    def test_belief_report(self):
        a = parse_response({"decision": "Reject", "type_estimate": {"r_hat": 50, "stance_probs": [0.2, 0.3, 0.5]}})
        assert a.belief.stance_probs == (0.2, 0.3, 0.5)
        with pytest.raises(SchemaError):
            parse_response({"decision": "Reject", "type_estimate": {"stance_probs": [0.2, 0.3, 0.6]}})


class TestStep:
    def test_agent_accept(self):
        ep = Episode(spec())
        pending = ep.pending
        assert pending is not None
        assert ep.step(AgentAction.accept()) is None
        assert ep.trace.termination is Termination.AGENT_ACCEPT and ep.trace.price == pending

    def test_agent_reject(self):
        ep = Episode(spec())
        ep.step(AgentAction.reject())
        assert ep.trace.termination is Termination.AGENT_REJECT and ep.trace.utility == 0.0 and ep.trace.price is None

    def test_step_after_terminal(self):
        ep = Episode(spec())
        ep.step(AgentAction.reject())
        with pytest.raises(UsageError):
            ep.step(AgentAction.reject())

    def test_agent_opens_accept_illegal(self):
        ep = Episode(spec(opener=Opener.AGENT))
        p = ep.payload()
        assert p["observation"] is None and "Accept" not in p["protocol_state"]["legal_decisions"]
        ep.step(AgentAction.accept())
        assert ep.trace.violations.invalid_action == 1
        assert ep.trace.rounds[0]["decision"] == "Offer"

    def test_walkaway_utility_zero(self):
        # far-off offer late in a no-deal game walks with high probability
        s = spec(regime=Regime.NO_DEAL, family=Family.ADVERSARIAL)
        found = False
        for e in range(25):
            tr = run_episode(replace(s, cell=s.cell + 1000 * e), _Stubborn())
            if tr.termination is Termination.COUNTERPART_WALKAWAY:
                assert tr.utility == 0.0 and tr.price is None
                found = True
        assert found


class _Stubborn:
    def act(self, p):
        return AgentAction.offer(1.0 if p["private_context"]["role"] == "buyer" else 99.0)


class TestRunEpisode:
    @pytest.mark.parametrize("regime", list(Regime))
    @pytest.mark.parametrize("opener", list(Opener))
    @pytest.mark.parametrize("role", list(Role))
    def test_totality_and_utility(self, regime, opener, role):
        for fam in Family:
            for e in range(3):
                s = spec(regime, fam, role, opener, e)
                tr = run_episode(s, ScriptAgent())
                assert isinstance(tr.termination, Termination)
                assert 1 <= tr.n_rounds <= s.horizon
                if tr.agreement:
                    u = s.r_agent - tr.price if role is Role.BUYER else tr.price - s.r_agent
                    assert tr.utility == pytest.approx(u)
                    assert s.price_min <= tr.price <= s.price_max
                else:
                    assert tr.utility == 0.0

    def test_determinism(self):
        s = spec(family=Family.STOCHASTIC)
        a = json.dumps(run_episode(s, ScriptAgent()).to_records(), sort_keys=True)
        b = json.dumps(run_episode(s, ScriptAgent()).to_records(), sort_keys=True)
        assert a == b

    def test_common_random_numbers(self):
        # different agents facing the same opening see the same first counterpart price
        s = spec()
        t1 = run_episode(s, ScriptAgent(0.1))
        t2 = run_episode(s, ScriptAgent(0.3))
        assert t1.rounds[0]["price"] == t2.rounds[0]["price"]

    def test_cues_hidden_from_payload(self):
        seen = []

        class Spy(ScriptAgent):
            def act(self, p):
                seen.append(json.dumps(p))
                return super().act(p)

        for fam in Family:
            run_episode(spec(family=fam), Spy())
        blob = "\n".join(seen)
        for key in ("sentiment", "posture", "stance", "kappa", "r_counterpart", "d0", "family", "Candid"):
            assert key not in blob

    def test_history_window(self):
        pays = []

        class Spy(_Stubborn):
            def act(self, p):
                pays.append(p)
                return super().act(p)

        run_episode(spec(regime=Regime.NO_DEAL, family=Family.TACITURN, stance=Stance.CONCILIATORY), Spy())
        for p in pays:
            k = p["protocol_state"]["round"]
            assert all(e["round"] >= k - 6 for e in p["history"])

    def test_side_info_injection(self):
        pays = []

        class Spy(ScriptAgent):
            def act(self, p):
                pays.append(p)
                return super().act(p)

        s = spec()
        run_episode(s, Spy(), EpisodeOptions(side_info=lambda ep: {"r_B": ep.spec.r_counterpart}))
        assert all(p["side_information"]["r_B"] == s.r_counterpart for p in pays)
        base = []

        class Spy2(ScriptAgent):
            def act(self, p):
                base.append(p)
                return super().act(p)

        run_episode(s, Spy2())
        assert all("side_information" not in p for p in base)

    def test_privileged_observe(self):
        class Priv(ScriptAgent):
            privileged = True

            def __init__(self):
                super().__init__()
                self.ctx, self.obs = None, []

            def start(self, ctx):
                self.ctx = ctx

            def observe(self, rnd, act):
                self.obs.append((rnd, act))

        a = Priv()
        tr = run_episode(spec(), a)
        assert a.ctx.spec is not None
        assert len(a.obs) == sum(r["actor"] == "counterpart" for r in tr.rounds)
        assert all(o[1].sentiment is not None for o in a.obs)

    def test_trace_records_roundtrip(self):
        tr = run_episode(spec(), ScriptAgent())
        recs = tr.to_records()
        assert recs[0]["type"] == "spec" and recs[-1]["type"] == "summary"
        assert recs[-1]["termination"] == tr.termination.value
        json.dumps(recs)
