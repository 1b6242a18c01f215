import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tradeopt.economy import (
    MANUFACTURING_SECTORS,
    Calibration,
    CalibrationError,
    PolicyWedges,
    calibration_from_dict,
    calibration_to_dict,
    generate_synthetic,
    load_calibration,
    nontradable_elasticities,
    save_calibration,
    table_a1_elasticities,
)


def test_table_values():
    theta, psi, labels = table_a1_elasticities()
    assert len(theta) == len(psi) == len(labels) == 22
    k = labels.index("Computer")
    assert (theta[k], psi[k]) == (1.24, 0.55)
    k = labels.index("Petroleum")
    assert (theta[k], psi[k]) == (0.64, 0.35)
    assert nontradable_elasticities() == (10.0, 0.0)


def test_table_elasticities_negatively_correlated():
    theta, psi, _ = table_a1_elasticities()
    assert np.corrcoef(theta, psi)[0, 1] < 0


def test_table_pairs_in_stable_region():
    theta, psi, _ = table_a1_elasticities()
    assert np.all(theta * psi < 1)


def test_manufacturing_block_is_last_seventeen_rows():
    _, _, labels = table_a1_elasticities()
    assert [labels[k] for k in MANUFACTURING_SECTORS][0] == "Food"
    assert len(MANUFACTURING_SECTORS) == 17


def test_round_trip_2x2(tmp_path, cal22):
    path = tmp_path / "cal.json"
    save_calibration(cal22, path)
    back = load_calibration(path)
    assert back == cal22 and (back.N, back.J) == (2, 2)


@given(seed=st.integers(0, 10_000), N=st.integers(2, 4), J=st.integers(1, 4))
def test_generator_invariants_and_round_trip(seed, N, J):
    cal = generate_synthetic(seed, N, J)
    assert max(cal.identity_residuals().values()) < 1e-10
    assert np.allclose(cal.alpha.sum(1), 1, atol=1e-10)
    assert np.allclose(cal.gamma.sum(1), 1, atol=1e-10)
    assert np.all(cal.trade_flow >= 0)
    idx = np.arange(N)
    assert np.all(cal.baseline_tariff[idx, idx, :] == 0)
    again = calibration_from_dict(json.loads(json.dumps(calibration_to_dict(cal))))
    assert again == cal
    for name in ("alpha", "beta", "gamma", "trade_flow", "theta", "psi", "baseline_tariff"):
        assert getattr(again, name).tobytes() == getattr(cal, name).tobytes()


def test_generator_is_deterministic():
    a, b = generate_synthetic(5, 3, 2), generate_synthetic(5, 3, 2)
    assert a == b
    assert a.trade_flow.tobytes() == b.trade_flow.tobytes()
    assert generate_synthetic(6, 3, 2) != a


def test_symmetric_option():
    cal = generate_synthetic(1, 2, 1, symmetric=True)
    assert cal.trade_flow[0, 1, 0] == cal.trade_flow[1, 0, 0]
    assert cal.trade_flow[0, 0, 0] == cal.trade_flow[1, 1, 0]


def test_seed7_3x3_passes_validation(tmp_path):
    cal = generate_synthetic(7, 3, 3)
    save_calibration(cal, tmp_path / "c.json")
    assert load_calibration(tmp_path / "c.json").N == 3


def test_nontradables_get_table_note_values():
    cal = generate_synthetic(2, 3, 3, tradable=[True, True, False])
    assert cal.theta[2] == 10.0 and cal.psi[2] == 0.0
    assert np.all(cal.trade_flow[0, 1:, 2] == 0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(N=1, J=2), dict(N=2, J=0), dict(N=2, J=1, psi_range=(-0.1, 0.2)), dict(N=2, J=1, theta_range=(0.0, 1.0)),
     dict(N=2, J=1, trade_openness=0.0), dict(N=2, J=1, theta=[4.0], psi=[0.3])],
)
def test_generator_rejects_infeasible_options(kwargs):
    with pytest.raises(ValueError):
        generate_synthetic(0, **kwargs)


def _doc(cal):
    return calibration_to_dict(cal)


def test_alpha_row_sum_error(cal22):
    doc = _doc(cal22)
    doc["alpha"][0] = [0.45, 0.45]
    with pytest.raises(CalibrationError, match="alpha row sum"):
        calibration_from_dict(doc)


def test_domestic_tariff_error(cal22):
    doc = _doc(cal22)
    doc["baseline_tariff"][1][1][0] = 0.1
    with pytest.raises(CalibrationError, match="domestic"):
        calibration_from_dict(doc)


def test_identity_violation_reports_size(cal22):
    doc = _doc(cal22)
    doc["trade_flow"][0][1][0] *= 1.5
    with pytest.raises(CalibrationError, match="identity violated: relative residual"):
        calibration_from_dict(doc)


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda d: d.update(extra=1), "unknown keys"),
        (lambda d: d.pop("theta"), "missing keys"),
        (lambda d: d.update(beta=[[0.5, 1.5], [0.5, 0.5]]), "beta"),
        (lambda d: d.update(theta=[-1.0, 2.0]), "theta"),
        (lambda d: d.update(psi=[-0.1, 0.1]), "psi"),
        (lambda d: d.update(alpha="abc"), "numeric"),
        (lambda d: d.update(dimensions={"N": "x"}), "dimensions"),
    ],
)
def test_schema_errors(cal22, mutate, match):
    doc = _doc(cal22)
    mutate(doc)
    with pytest.raises(CalibrationError, match=match):
        calibration_from_dict(doc)


def test_invalid_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(CalibrationError, match="not valid JSON"):
        load_calibration(p)


def test_missing_export_wedge_defaults_to_zero(cal22):
    doc = _doc(cal22)
    doc.pop("baseline_export_wedge")
    assert np.all(calibration_from_dict(doc).baseline_export_wedge == 0)


def test_calibration_arrays_are_read_only(cal22):
    with pytest.raises(ValueError):
        cal22.alpha[0, 0] = 0.3


def test_derived_baseline_quantities(cal33):
    assert np.allclose(cal33.shares.sum(0), 1)
    assert np.isclose(cal33.income_weights.sum(), 1)
    assert np.allclose(cal33.wage_bill, cal33.sector_wage_bill.sum(1))


def autarky_pair(scale=2.0):
    """Two closed economies, the first ``scale`` times the second."""
    flow = np.zeros((2, 2, 1))
    flow[0, 0, 0], flow[1, 1, 0] = scale, 1.0
    return Calibration(
        tradable_mask=[True], alpha=[[1.0], [1.0]], beta=[[1.0], [1.0]], gamma=np.ones((2, 1, 1)),
        trade_flow=flow, theta=[4.0], psi=[0.0], baseline_tariff=np.zeros((2, 2, 1)),
        baseline_export_wedge=np.zeros((2, 2, 1)),
    )


def test_income_weights_two_to_one():
    cal = autarky_pair(2.0)
    assert np.allclose(cal.income, [2.0, 1.0])
    assert np.allclose(cal.income_weights, [2 / 3, 1 / 3])


class TestPolicyWedges:
    def test_baseline_and_subsidies(self, cal22):
        w = PolicyWedges.baseline(cal22)
        assert w == PolicyWedges(cal22.baseline_tariff, cal22.baseline_export_wedge)
        e = np.zeros((2, 2, 2))
        e[1, :, 0] = -0.3
        assert PolicyWedges(np.zeros((2, 2, 2)), e).subsidies()[1, 0] == pytest.approx(0.3)

    @pytest.mark.parametrize(
        "t, e",
        [
            (np.full((2, 2, 1), -0.1), np.zeros((2, 2, 1))),
            (np.ones((2, 2, 1)), np.zeros((2, 2, 1))),
            (np.zeros((2, 2, 1)), np.full((2, 2, 1), -1.0)),
            (np.zeros((2, 2, 1)), np.zeros((2, 2, 2))),
            (np.full((2, 2, 1), np.nan), np.zeros((2, 2, 1))),
        ],
    )
    def test_invalid(self, t, e):
        with pytest.raises(ValueError):
            PolicyWedges(t, e)

    def test_immutable(self, cal22):
        w = PolicyWedges.baseline(cal22)
        with pytest.raises(ValueError):
            w.tariff[0, 1, 0] = 1.0
