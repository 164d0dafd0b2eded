from __future__ import annotations

import math

import numpy as np
import pytest

from wealthgame import (AgentState, ClearingMode, Market, ModelParams, PayoffScheme,
                        SimulationFault, SpreadPolicy, clamp_action, price_update,
                        settle_agent, simulate, transaction_price)
from wealthgame import _kernels as K

from oracle import RefMarket


def small(seed=1, **kw):
    base = dict(n_agents=9, memory=2, strategies_per_agent=3, max_position=2,
                price_sensitivity=0.7, market_impact=0.3, seed=seed)
    base.update(kw)
    return ModelParams(**base)


class TestPrimitives:
    def test_price_update_examples(self):
        assert price_update(10.0, 4, 0.5) == pytest.approx(12.0)
        assert price_update(10.0, -9, 0.5) == pytest.approx(7.0)
        assert price_update(3.0, 0, 0.8) == 3.0
        assert price_update(0.0, 8, 1 / 3) == pytest.approx(2.0)

    def test_transaction_price(self):
        assert transaction_price(10.0, 12.0, 0.0) == 10.0
        assert transaction_price(10.0, 12.0, 1.0) == 12.0
        assert transaction_price(10.0, 12.0, 0.25) == pytest.approx(10.5)

    @pytest.mark.parametrize("k,a,bound,out", [
        (1, 1, 1, 0), (1, -1, 1, -1), (0, 1, 1, 1), (-1, -1, 1, 0),
        (5, 1, 3, 0), (5, -1, 3, -1), (2, 1, 3, 1), (0, 0, 1, 0),
    ])
    def test_clamp(self, k, a, bound, out):
        assert clamp_action(k, a, bound) == out

    def test_settle_agent_spread(self):
        ag = AgentState((0, 1), (), position=1, cash=-4.0, wealth=0.0)
        buy = settle_agent(ag, 1, 5.0, 0.5)
        assert buy.cash == pytest.approx(-9.5)
        assert buy.position == 2
        assert buy.wealth == pytest.approx(0.5)
        sell = settle_agent(ag, -1, 5.0, 0.5)
        assert sell.cash == pytest.approx(0.5)
        assert sell.wealth == pytest.approx(0.5)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            ModelParams(price_sensitivity=1.5)
        with pytest.raises(ValueError):
            ModelParams(max_position=0)
        with pytest.raises(ValueError):
            ModelParams(seed=-1)
        assert ModelParams(scheme="minority").scheme is PayoffScheme.MINORITY


def _compare(params, spread=None, clearing=ClearingMode.MARKET_MAKER, steps=300, ref_kw=None):
    mk = Market.create(params, spread, clearing)
    ref = RefMarket(mk.tables, int(mk.istate[K.I_MU]), mk.key, params.gamma, params.beta,
                    params.max_position, int(params.scheme), p0=params.initial_price,
                    zero=params.zero_strategy, eps=params.interest_rate,
                    matched=clearing is ClearingMode.MATCHED, **(ref_kw or {}))
    rec = mk.run(steps, record_agents=steps)
    for t in range(steps):
        r = ref.step()
        assert rec.price_after[t] == pytest.approx(r["price_after"], rel=1e-12, abs=1e-9)
        assert rec.excess_demand[t] == r["A"]
        assert rec.states[t] == r["state"]
        assert rec.transaction_price[t] == pytest.approx(r["pt"], rel=1e-12, abs=1e-9)
        assert rec.spread[t] == pytest.approx(r["spread"], rel=1e-12, abs=1e-12)
        np.testing.assert_allclose(rec.agent_wealth[t], r["wealth"], rtol=1e-9, atol=1e-7)
        assert rec.market_maker_wealth[t] == pytest.approx(r["mm_wealth"], rel=1e-9, abs=1e-7)
    return rec


class TestAgainstReference:
    @pytest.mark.parametrize("scheme", list(PayoffScheme))
    def test_schemes(self, scheme):
        _compare(small(seed=11, scheme=scheme))

    def test_fixed_spread(self):
        _compare(small(seed=3), SpreadPolicy.fixed(0.2), ref_kw={"spread": 0.2})

    def test_fixed_rate(self):
        _compare(small(seed=4, initial_price=50.0), SpreadPolicy.fixed_rate(0.01),
                 ref_kw={"rate": 0.01})

    def test_adaptive(self):
        _compare(small(seed=5, initial_price=20.0), SpreadPolicy.adaptive(0.002, 1e-3, 1.0),
                 ref_kw={"adaptive": {"R": 0.002, "eta": 1e-3, "target": 1.0}})

    def test_matched_clearing(self):
        rec = _compare(small(seed=6), clearing=ClearingMode.MATCHED)
        assert rec.n_frustrated.sum() > 0

    def test_zero_strategy(self):
        _compare(small(seed=8, zero_strategy=True, interest_rate=0.01))

    def test_unit_memory_and_k1(self):
        _compare(small(seed=9, memory=1, max_position=1, strategies_per_agent=2))


class TestMarket:
    def test_accounting_identities(self):
        rec = simulate(small(seed=2), 2000, SpreadPolicy.fixed(0.1), record_agents=2000)
        np.testing.assert_allclose(
            rec.agent_wealth, rec.agent_cash + rec.agent_position * rec.transaction_price[:, None],
            rtol=1e-9, atol=1e-9)
        gap = rec.total_agent_wealth + rec.market_maker_wealth
        assert np.max(np.abs(gap)) < 1e-9 * max(1.0, np.abs(rec.total_agent_wealth).max())
        assert np.abs(rec.agent_position).max() <= 2

    def test_incremental_wealth(self):
        # w(t) = w(t-1) + k(t-1) [P_T(t) - P_T(t-1)] - |a| S
        rec = simulate(small(seed=7), 500, SpreadPolicy.fixed(0.3), record_agents=500)
        pt = rec.transaction_price
        w, k, a = rec.agent_wealth, rec.agent_position, rec.agent_action.astype(int)
        inc = w[:-1] + (k[1:] - a[1:]) * (pt[1:] - pt[:-1])[:, None] - np.abs(a[1:]) * 0.3
        np.testing.assert_allclose(w[1:], inc, rtol=1e-9, atol=1e-9)

    def test_run_is_chunk_invariant(self):
        a = Market.create(small(seed=4))
        b = Market.create(small(seed=4))
        ra = a.run(300)
        parts = [b.run(100), b.run(50), b.run(150)]
        for _ in range(3):
            parts.append(b.run(1))
        rb = type(ra).concat(parts)
        np.testing.assert_array_equal(ra.rec_f, rb.rec_f[:300])
        np.testing.assert_array_equal(ra.rec_i, rb.rec_i[:300])

    def test_advance_matches_run(self):
        a, b = Market.create(small(seed=12)), Market.create(small(seed=12))
        rec = a.run(20)
        for t in range(20):
            assert b.advance() == rec.step(t)

    def test_determinism_and_seed_sensitivity(self):
        r1, r2 = simulate(small(seed=5), 1000), simulate(small(seed=5), 1000)
        np.testing.assert_array_equal(r1.rec_f, r2.rec_f)
        r3 = simulate(small(seed=6), 1000)
        assert not np.array_equal(r1.rec_f, r3.rec_f)

    def test_history_bits_follow_price(self):
        rec = simulate(small(seed=13), 500)
        dp = rec.price_changes
        nxt = rec.states[1:] & 1
        moved = dp[:-1] != 0
        np.testing.assert_array_equal(nxt[moved], (dp[:-1][moved] > 0).astype(int))

    def test_initial_price_shift_invariance(self):
        a = simulate(small(seed=3), 400)
        b = simulate(small(seed=3, initial_price=100.0), 400)
        np.testing.assert_allclose(b.prices - 100.0, a.prices, atol=1e-8)
        np.testing.assert_allclose(b.total_agent_wealth, a.total_agent_wealth, atol=1e-7)

    def test_matched_with_spread_rejected(self):
        with pytest.raises(ValueError):
            Market.create(small(), SpreadPolicy.fixed(0.1), "matched")

    def test_matched_has_no_net_inventory(self):
        rec = simulate(small(seed=3), 500, clearing="matched", record_agents=500)
        assert np.all(rec.agent_action.sum(axis=1) == 0)
        assert np.all(rec.market_maker_wealth == 0)

    def test_accounting_fault_detected(self):
        mk = Market.create(small(seed=1))
        mk.run(10)
        mk.wealth[0] += 1.0  # corrupt the books
        with pytest.raises(SimulationFault) as info:
            mk.run(5)
        assert info.value.code == K.ERR_ACCOUNTING

    def test_csv_lf_and_columns(self, tmp_path):
        rec = simulate(small(seed=1), 50)
        path = tmp_path / "steps.csv"
        rec.to_csv(path)
        raw = path.read_bytes()
        assert b"\r\n" not in raw
        lines = raw.decode().strip().split("\n")
        assert len(lines) == 51
        assert lines[0].startswith("time,price_before,price_after,transaction_price")

    def test_state_views(self):
        mk = Market.create(small(seed=1))
        mk.run(30)
        st = mk.state
        assert st.time == 30 and len(st.history) == 2
        assert len(mk.agents) == 9
        assert mk.market_maker.wealth == pytest.approx(-mk.wealth.sum(), abs=1e-9)
        assert math.isfinite(mk.price)
