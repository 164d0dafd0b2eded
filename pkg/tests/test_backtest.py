from __future__ import annotations

import json

import numpy as np
import pytest

from wealthgame.backtest import (BacktestConfig, PriceSeries, SeriesColumnMissing,
                                 SeriesFileMissing, SeriesNonNumeric, SeriesNonPositive,
                                 SeriesTooShort, history_states, load_series, rugged_series,
                                 run_backtest, trending_series, wealth_based_K)


def write(tmp_path, text, name="p.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoad:
    def test_three_rows(self, tmp_path):
        s = load_series(write(tmp_path, "date,close\n2001-01-02,10\n2001-01-03,11\n2001-01-04,9.5\n"))
        assert len(s) == 3 and s.dates[0] == "2001-01-02"

    def test_sorted_by_date(self, tmp_path):
        s = load_series(write(tmp_path, "date,close\n2001-01-04,3\n2001-01-02,1\n2001-01-03,2\n"))
        np.testing.assert_array_equal(s.closes, [1, 2, 3])

    def test_file_order_without_dates(self, tmp_path):
        s = load_series(write(tmp_path, "close\n3\n1\n2\n"))
        np.testing.assert_array_equal(s.closes, [3, 1, 2])

    def test_errors_are_distinct(self, tmp_path):
        with pytest.raises(SeriesFileMissing):
            load_series(tmp_path / "nope.csv")
        with pytest.raises(SeriesColumnMissing):
            load_series(write(tmp_path, "date,price\n2001-01-01,3\n"))
        with pytest.raises(SeriesNonNumeric, match="row 3"):
            load_series(write(tmp_path, "date,close\n2001-01-01,3\n2001-01-02,abc\n"))
        with pytest.raises(SeriesNonPositive, match="row 2"):
            load_series(write(tmp_path, "date,close\n2001-01-01,0\n2001-01-02,4\n"))
        with pytest.raises(SeriesNonNumeric):
            load_series(write(tmp_path, "date,close\n2001-01-01,\n2001-01-02,4\n"))
        with pytest.raises(SeriesTooShort):
            load_series(write(tmp_path, "date,close\n2001-01-01,3\n"), min_length=5)

    def test_custom_columns_and_range(self, tmp_path):
        s = load_series(write(tmp_path, "d,px\n2001-01-01,1\n2001-02-01,2\n2001-03-01,3\n"),
                        close_column="px", date_column="d")
        sub = s.between("2001-01-15", "2001-03-01")
        np.testing.assert_array_equal(sub.closes, [2, 3])

    def test_series_invariant(self):
        with pytest.raises(SeriesNonPositive):
            PriceSeries(np.array([1.0, -2.0]))


@pytest.mark.parametrize("w,p,k", [(500.0, 100.0, 5), (90.0, 100.0, 0), (-300.0, 100.0, 0),
                                   (1e-9, 1.0, 0), (7.0, 1.0, 7)])
def test_wealth_based_K(w, p, k):
    assert wealth_based_K(w, p) == k


def test_history_states():
    closes = np.array([1.0, 2.0, 1.5, 3.0, 4.0])
    st = history_states(closes, 2, np.random.default_rng(0))
    # changes: up, down, up, up
    assert list(st[2:]) == [0b10, 0b01, 0b11]


def cfg(**kw):
    base = dict(n_agents=200, m=3, s=2, K=3, seed=1)
    base.update(kw)
    return BacktestConfig(**base)


def test_rising_series_wealth_scheme_gains():
    s = PriceSeries(100.0 * 1.01 ** np.arange(300))
    res = run_backtest(s, cfg())
    assert res.summary.average_wealth > 0
    long = res.final_position > 0
    assert long.any() and np.all(res.final_wealth[long] > 0)
    # agents whose strategies both sell in the single observed state end short and lose
    assert np.all(res.final_wealth[res.final_position < 0] < 0)


@pytest.mark.parametrize("scheme", ["wealth", "minority", "dollar", "majority"])
def test_constant_series_no_change(scheme):
    res = run_backtest(PriceSeries(np.full(200, 50.0)), cfg(scheme=scheme))
    np.testing.assert_allclose(res.final_wealth, 0.0, atol=1e-9)
    res = run_backtest(PriceSeries(np.full(200, 50.0)),
                       cfg(scheme=scheme, position_mode="wealth"))
    np.testing.assert_allclose(res.final_wealth, 250.0)


def test_agents_are_independent():
    s = trending_series(800, seed=3)
    big = run_backtest(s, cfg(n_agents=300))
    small = run_backtest(s, cfg(n_agents=40))
    np.testing.assert_array_equal(big.final_wealth[:40], small.final_wealth)


def test_position_bound_fixed():
    s = trending_series(600, seed=1)
    res = run_backtest(s, cfg(K=2, require_buy_sell=False))
    assert np.abs(res.final_position).max() <= 2


def test_wealth_based_bound_in_trajectory():
    s = rugged_series(600, seed=2)
    res = run_backtest(s, cfg(position_mode="wealth", require_buy_sell=False), keep_trajectories=True)
    assert res.initial_wealth == pytest.approx(5 * s.closes[0])
    assert res.trajectories.shape == (200, 600 - 1 - 3)


def test_random_control_runs():
    s = trending_series(500, seed=4)
    res = run_backtest(s, cfg(random_control=True))
    assert np.isfinite(res.final_wealth).all()
    assert not np.allclose(res.final_wealth, res.final_wealth[0])


def test_summary_normalisation_and_gaining():
    s = trending_series(700, seed=5)
    res = run_backtest(s, cfg(position_mode="wealth"))
    pT, p0 = s.closes[-1], s.closes[0]
    sm = res.summary
    assert sm.average_wealth == pytest.approx(res.final_wealth.mean() / pT)
    expect = 100 * np.mean(res.final_wealth - res.initial_wealth > (pT / p0 - 1) * res.initial_wealth)
    assert sm.percent_gaining == pytest.approx(expect)
    assert 0 <= sm.percent_bankrupt <= 100
    assert sum(sm.histogram_counts) == 200
    assert run_backtest(s, cfg()).summary.percent_gaining is None


def test_too_short_and_bad_config():
    with pytest.raises(SeriesTooShort):
        run_backtest(PriceSeries(np.ones(4)), cfg(m=3))
    with pytest.raises(ValueError):
        BacktestConfig(position_mode="wealth", initial_wealth=-1.0)
    with pytest.raises(ValueError):
        BacktestConfig(K=0)


def test_outputs(tmp_path):
    s = trending_series(100, seed=0)
    res = run_backtest(s, cfg(n_agents=3), keep_trajectories=True)
    res.summary.to_json(tmp_path / "s.json")
    assert set(json.loads((tmp_path / "s.json").read_text())) >= {
        "average_wealth", "best_wealth", "worst_wealth", "percent_gaining", "percent_bankrupt"}
    res.trajectories_to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_bytes().split(b"\n")
    assert lines[0] == b"day,agent0,agent1,agent2"


def test_relaxing_constraint_raises_bankruptcy():
    s = trending_series(3000, seed=7)
    on = run_backtest(s, cfg(scheme="minority", position_mode="wealth", n_agents=500))
    off = run_backtest(s, cfg(scheme="minority", position_mode="wealth", n_agents=500,
                              require_buy_sell=False))
    assert off.summary.percent_bankrupt >= on.summary.percent_bankrupt
