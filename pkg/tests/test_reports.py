import json

import numpy as np
import pytest

from tradeopt import reports
from tradeopt.economy import PolicyWedges
from tradeopt.equilibrium import solve_fixed_point
from tradeopt.game import GridPoint, PerturbationResult
from tradeopt.instruments import build_mask

from conftest import TIGHT, random_wedges


def test_policies_round_trip(cal33, tmp_path):
    mask = build_mask(cal33, "dual")
    w = random_wedges(cal33, np.random.default_rng(1))
    # subsidies are uniform over destinations by construction of the mask
    w = PolicyWedges(w.tariff, np.repeat(w.export_wedge[:, :1, :], cal33.N, axis=1))
    reports.write_policies(tmp_path / "p.csv", "dual", w, mask, cal33)
    rows = reports.read_policies(tmp_path / "p.csv")
    assert len(rows) == cal33.N * cal33.N * int(cal33.tradable_mask.sum())
    back = reports.wedges_from_policies(rows, PolicyWedges.baseline(cal33), True)
    assert np.array_equal(back.tariff, w.tariff)
    for i in range(cal33.N):
        assert np.array_equal(back.export_wedge[i, :, :], np.repeat(w.export_wedge[i, i][None], cal33.N, axis=0))


def test_welfare_and_hats_round_trip(cal22, tmp_path):
    eq = solve_fixed_point(random_wedges(cal22, np.random.default_rng(2)), cal22, TIGHT)
    reports.write_welfare(tmp_path / "w.csv", "solve", eq.W)
    rows = reports.read_welfare(tmp_path / "w.csv")
    assert [r["welfare_change_pct"] for r in rows] == list(100 * (eq.W - 1))
    reports.write_hats(tmp_path / "h.csv", eq)
    hats = reports.read_hats(tmp_path / "h.csv")
    assert np.array_equal([r["price_hat"] for r in hats], eq.P.ravel())
    assert np.array_equal([r["wage_hat"] for r in hats], np.repeat(eq.w, cal22.J))


def test_grid_perturbation_gradient_round_trip(tmp_path):
    pts = [GridPoint((0.1, 0.2), 1.01), GridPoint((0.3, 9.0), float("nan"), "rejected: instrument 1")]
    reports.write_grid(tmp_path / "g.csv", pts)
    rows = reports.read_grid(tmp_path / "g.csv", 2)
    assert rows[0]["value_1"] == 0.2 and rows[1]["status"] == "rejected: instrument 1"
    assert np.isnan(rows[1]["welfare_change_pct"])

    pr = PerturbationResult(0, 1, np.array([0.1, 0.2]), 1.02, np.array([[0.05, 0.3]]), np.array([1.01]), np.array([False]))
    reports.write_perturbation(tmp_path / "q.csv", pr)
    rows = reports.read_perturbation(tmp_path / "q.csv", 2)
    assert [r["draw"] for r in rows] == ["baseline", "0"]
    assert rows[1]["subsidy_1"] == 0.3

    labels = [("tariff", 1, 0, 0), ("uniform", 0, 0, (1, 2))]
    reports.write_gradient_check(tmp_path / "c.csv", labels, [0.5, 0.0], [0.5, 0.0], [0.0, 0.0])
    rows = reports.read_gradient_check(tmp_path / "c.csv")
    assert rows[1]["sector"] == "1 2" and rows[0]["adjoint"] == 0.5


def test_wedge_file_round_trip_and_errors(cal22, tmp_path):
    w = random_wedges(cal22, np.random.default_rng(3))
    reports.save_wedges(tmp_path / "w.json", w)
    back = reports.load_wedges(tmp_path / "w.json", cal22)
    assert np.array_equal(back.tariff, w.tariff) and np.array_equal(back.export_wedge, w.export_wedge)

    only_t = tmp_path / "t.json"
    only_t.write_text(json.dumps({"tariff": w.tariff.tolist()}))
    assert np.array_equal(reports.load_wedges(only_t, cal22).export_wedge, cal22.baseline_export_wedge)

    bad = {
        "a.json": "not json",
        "b.json": json.dumps([1, 2]),
        "c.json": json.dumps({"tariff": w.tariff.tolist(), "extra": 1}),
        "d.json": json.dumps({"export_wedge": w.export_wedge.tolist()}),
        "e.json": json.dumps({"tariff": [[0.1]]}),
        "f.json": json.dumps({"tariff": (-w.tariff - 0.1).tolist()}),
        "g.json": json.dumps({"tariff": "high"}),
    }
    for name, text in bad.items():
        (tmp_path / name).write_text(text)
        with pytest.raises(reports.SchemaError):
            reports.load_wedges(tmp_path / name, cal22)


def test_csv_schema_errors(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("")
    with pytest.raises(reports.SchemaError, match="empty"):
        reports.read_welfare(p)
    p.write_text("scenario,country\n")
    with pytest.raises(reports.SchemaError, match="expected columns"):
        reports.read_welfare(p)
    p.write_text("scenario,country,welfare_change_pct\ndual,0\n")
    with pytest.raises(reports.SchemaError, match="fields"):
        reports.read_welfare(p)
    p.write_text("scenario,country,welfare_change_pct\ndual,zero,1.0\n")
    with pytest.raises(reports.SchemaError, match="non-integer"):
        reports.read_welfare(p)


def test_sidecar_is_sorted_json(tmp_path):
    reports.write_sidecar(tmp_path / "r.json", {"b": np.float64(1.5), "a": np.arange(2), "c": np.bool_(True)})
    text = (tmp_path / "r.json").read_text()
    assert text.index('"a"') < text.index('"b"')
    assert reports.read_sidecar(tmp_path / "r.json") == {"a": [0, 1], "b": 1.5, "c": True}
