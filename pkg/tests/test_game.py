import numpy as np
import pytest

from tradeopt.economy import PolicyWedges, generate_synthetic
from tradeopt.equilibrium import SolverOptions, solve_fixed_point
from tradeopt.game import (
    BestResponseOptions,
    NashOptions,
    PolicyPointError,
    ascend,
    average_tariff,
    best_response,
    cooperative_solve,
    deviation_check,
    grid_argmax,
    nash_solve,
    subsidy_perturbation_experiment,
    welfare_grid,
)
from tradeopt.instruments import Instruments, build_mask
from tradeopt.optimizer import AdamHyper

from conftest import TIGHT

BR = BestResponseOptions(hyper=AdamHyper(lr=0.02), iters=1000, tol=1e-7, anneal=True, solver=TIGHT)
NASH = NashOptions(br=BR, epochs=20, tol=1e-5, seed=0)


@pytest.fixture(scope="module")
def sym21():
    return generate_synthetic(5, 2, 1, symmetric=True, psi=[0.0], theta=[4.0], tariff_range=(0.0, 0.0))


@pytest.fixture(scope="module")
def cal22d():
    return generate_synthetic(11, 2, 2, tariff_range=(0.0, 0.05))


def test_single_player_nash_is_best_response(cal22d):
    mask = build_mask(cal22d, "dual", players=[1])
    base = PolicyWedges.baseline(cal22d)
    br = best_response(1, base, cal22d, mask, BR)
    res = nash_solve(cal22d, mask, NashOptions(br=BR, epochs=1))
    assert np.array_equal(res.policy(mask, 1), br.values)
    assert np.array_equal(res.wedges.tariff, br.wedges.tariff)
    assert res.welfare[1] == pytest.approx(br.objective, abs=1e-10)


def test_symmetric_trade_war_gives_equal_tariffs_and_losses(sym21):
    mask = build_mask(sym21, "trade-war")
    res = nash_solve(sym21, mask, NASH)
    assert res.converged
    t = [res.policy(mask, p)[0] for p in (0, 1)]
    assert abs(t[0] - t[1]) < 1e-4 and min(t) > 0
    assert np.all(res.welfare < 1)


def test_eta_blend_lies_on_segment(cal22d):
    mask = build_mask(cal22d, "dual")
    opts = NashOptions(br=BR, eta=0.5, epochs=1, seed=3)
    res = nash_solve(cal22d, mask, opts)
    wedges = PolicyWedges.baseline(cal22d)
    for p in res.sequence[0]:
        inst = mask.instruments[p]
        old = inst.extract(wedges)
        br = best_response(p, wedges, cal22d, mask, BR)
        new = 0.5 * br.values + 0.5 * old
        assert np.all(new >= np.minimum(old, br.values)) and np.all(new <= np.maximum(old, br.values))
        wedges = inst.apply(wedges, new)
    assert np.allclose(wedges.tariff, res.wedges.tariff, atol=1e-9)
    assert np.allclose(wedges.export_wedge, res.wedges.export_wedge, atol=1e-9)


def test_each_player_moves_once_per_epoch(cal33):
    mask = build_mask(cal33, "trade-war")
    fast = NashOptions(br=BestResponseOptions(iters=2, solver=TIGHT), epochs=4, tol=1e-12, seed=7)
    res = nash_solve(cal33, mask, fast)
    assert len(res.sequence) == res.epochs == 4
    for order in res.sequence:
        assert sorted(order) == [0, 1, 2]
    again = nash_solve(cal33, mask, fast)
    assert again.sequence == res.sequence
    assert np.array_equal(again.wedges.tariff, res.wedges.tariff)
    expect = [list(np.random.default_rng(7).permutation(3))]
    assert res.sequence[0] == [int(p) for p in expect[0]]
    assert not res.converged


def test_game_result_is_self_consistent(cal22d):
    mask = build_mask(cal22d, "dual")
    res = nash_solve(cal22d, mask, NashOptions(br=BR, epochs=2))
    eq = solve_fixed_point(res.wedges, cal22d, TIGHT)
    assert np.max(np.abs(eq.W - res.welfare)) < 1e-10
    assert np.allclose(res.welfare_pct, 100 * (res.welfare - 1))
    assert len(res.round_changes) == res.epochs and res.seed == 0


def test_zero_instruments_returns_empty_policy(cal22d):
    base = PolicyWedges.baseline(cal22d)
    br = ascend(cal22d, base, 0, Instruments(), BR)
    eq = solve_fixed_point(base, cal22d, TIGHT)
    assert br.values.size == 0 and br.converged
    assert br.objective == eq.W[0]


def test_large_country_sets_positive_tariff():
    cal = generate_synthetic(3, 2, 1, psi=[0.0], tariff_range=(0.0, 0.0))
    big = int(np.argmax(cal.income_weights))
    assert cal.income_weights[big] > 0.6
    mask = build_mask(cal, "trade-war", players=[big])
    br = best_response(big, PolicyWedges.baseline(cal), cal, mask, BR)
    assert br.values[0] > 0.05
    pts = welfare_grid(cal, PolicyWedges.baseline(cal), big, mask.instruments[big], [(0, 0.0, 0.6, 61)], TIGHT)
    assert abs(grid_argmax(pts).values[0] - br.values[0]) <= 0.01


def test_cooperation_lowers_tariffs(sym21):
    nash = nash_solve(sym21, build_mask(sym21, "trade-war"), NASH)
    cmask = build_mask(sym21, "cooperative-tariff")
    coop = cooperative_solve(sym21, cmask, NASH)
    assert average_tariff(coop.wedges, cmask) < average_tariff(nash.wedges, build_mask(sym21, "trade-war"))
    assert coop.objective >= np.dot(sym21.income_weights, nash.welfare)
    with pytest.raises(ValueError):
        cooperative_solve(sym21, build_mask(sym21, "dual"), NASH)
    with pytest.raises(ValueError):
        nash_solve(sym21, cmask, NASH)


def test_best_response_passes_deviation_check(cal22d):
    mask = build_mask(cal22d, "dual", players=[0])
    br = best_response(0, PolicyWedges.baseline(cal22d), cal22d, mask, BR)
    gains = deviation_check(cal22d, br.wedges, mask, solver=TIGHT)
    assert gains[0] <= 1e-5
    assert br.stationarity < 1e-3


def test_perturbation_is_seeded_and_centered(cal22d):
    mask = build_mask(cal22d, "dual", players=[0])
    br = best_response(0, PolicyWedges.baseline(cal22d), cal22d, mask, BR)
    a = subsidy_perturbation_experiment(cal22d, br.wedges, 0, mask, draws=20, seed=4, solver=TIGHT)
    b = subsidy_perturbation_experiment(cal22d, br.wedges, 0, mask, draws=20, seed=4, solver=TIGHT, jobs=2)
    assert a.draws.tobytes() == b.draws.tobytes() and a.welfare.tobytes() == b.welfare.tobytes()
    assert np.all(a.draws >= 0.1 * a.s_star) and np.all(a.draws <= 1.9 * a.s_star)
    assert a.max_gain <= 1e-4 and not a.failed.any()
    inst = Instruments(subsidies=mask.instruments[0].subsidies)
    eq = solve_fixed_point(inst.apply(br.wedges, a.s_star), cal22d, TIGHT)
    assert eq.W[0] == pytest.approx(a.baseline, abs=1e-12)
    with pytest.raises(ValueError):
        subsidy_perturbation_experiment(cal22d, br.wedges, 0, build_mask(cal22d, "trade-war"), draws=5)
    with pytest.raises(ValueError):
        subsidy_perturbation_experiment(cal22d, br.wedges, 0, mask, draws=0)


def test_grid_single_step_and_rejection(cal22d):
    inst = build_mask(cal22d, "subsidy-only").instruments[0]
    base = PolicyWedges.baseline(cal22d)
    one = welfare_grid(cal22d, base, 0, inst, [(0, 0.1, 0.9, 1)], TIGHT)
    assert len(one) == 1 and one[0].values == (0.1,) and one[0].status == "ok"
    sweep = welfare_grid(cal22d, base, 0, inst, [(0, 0.0, 1.2, 5)], TIGHT)
    status = [p.status for p in sweep]
    assert status[:2] == ["ok", "ok"]
    assert status[-1] == "rejected: instrument 0 value 1.2 outside [0.0, 0.99]"
    assert np.isnan(sweep[-1].welfare)
    two = welfare_grid(cal22d, base, 0, inst, [(0, 0.0, 0.2, 3), (1, 0.0, 0.2, 4)], TIGHT)
    assert len(two) == 12
    with pytest.raises(ValueError):
        welfare_grid(cal22d, base, 0, inst, [], TIGHT)
    with pytest.raises(ValueError):
        welfare_grid(cal22d, base, 0, inst, [(9, 0.0, 1.0, 2)], TIGHT)


def test_equilibrium_failure_names_policy_point(cal22d):
    mask = build_mask(cal22d, "trade-war", players=[0])
    bad = BestResponseOptions(iters=3, solver=SolverOptions(tol=1e-12, max_iter=1, newton=False))
    wedges = mask.instruments[0].apply(PolicyWedges.baseline(cal22d), [0.3, 0.3])
    with pytest.raises(PolicyPointError) as info:
        best_response(0, wedges, cal22d, mask, bad)
    assert np.allclose(info.value.values, [0.3, 0.3])
    with pytest.raises(ValueError):
        best_response(1, wedges, cal22d, mask, BR)


def test_option_validation():
    with pytest.raises(ValueError):
        NashOptions(eta=0.0)
    with pytest.raises(ValueError):
        NashOptions(epochs=0)
    with pytest.raises(ValueError):
        BestResponseOptions(iters=0)
