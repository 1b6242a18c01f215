"""Result files: writers and the matching parsers.

Floats are written with ``repr`` so a file round-trips bit-for-bit and
repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .economy import Calibration, PolicyWedges
from .equilibrium import HatEquilibrium
from .instruments import ScenarioMask

POLICY_COLUMNS = ["scenario", "player", "origin", "destination", "sector", "tariff", "subsidy"]
WELFARE_COLUMNS = ["scenario", "country", "welfare_change_pct"]
HAT_COLUMNS = ["country", "sector", "wage_hat", "labor_hat", "price_hat", "expenditure_hat"]
GRADIENT_COLUMNS = ["index", "kind", "origin", "destination", "sector", "adjoint", "finite_difference", "rel_error"]


class SchemaError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path, columns) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header != list(columns):
            raise SchemaError(f"{path}: expected columns {columns}, found {header}")
        out = []
        for lineno, row in enumerate(rd, start=2):
            if len(row) != len(columns):
                raise SchemaError(f"{path}:{lineno}: expected {len(columns)} fields, found {len(row)}")
            out.append(dict(zip(columns, row)))
    return out


def _float(row, key, path):
    try:
        return float(row[key])
    except ValueError:
        raise SchemaError(f"{path}: column {key!r} holds non-numeric value {row[key]!r}") from None


def _int(row, key, path):
    try:
        return int(row[key])
    except ValueError:
        raise SchemaError(f"{path}: column {key!r} holds non-integer value {row[key]!r}") from None


# -- policies ---------------------------------------------------------------


def policy_rows(scenario: str, wedges: PolicyWedges, mask: ScenarioMask, cal: Calibration):
    """One row per (player, origin, tradable sector); the subsidy is on the
    player's own row."""
    rows = []
    for p in mask.players:
        for j in np.flatnonzero(cal.tradable_mask):
            for k in range(cal.N):
                sub = -wedges.export_wedge[p, p, j] if k == p else 0.0
                rows.append((scenario, p, k, p, int(j), float(wedges.tariff[k, p, j]), float(sub)))
    return rows


def write_policies(path, scenario, wedges, mask, cal) -> None:
    write_csv(path, POLICY_COLUMNS, policy_rows(scenario, wedges, mask, cal))


def read_policies(path) -> list[dict]:
    rows = read_csv(path, POLICY_COLUMNS)
    for r in rows:
        for key in ("player", "origin", "destination", "sector"):
            r[key] = _int(r, key, path)
        for key in ("tariff", "subsidy"):
            r[key] = _float(r, key, path)
    return rows


def wedges_from_policies(rows, base: PolicyWedges, with_subsidies: bool) -> PolicyWedges:
    """Rebuild a profile from policy rows on top of ``base``."""
    t = np.array(base.tariff)
    e = np.array(base.export_wedge)
    try:
        for r in rows:
            t[r["origin"], r["destination"], r["sector"]] = r["tariff"]
            if with_subsidies and r["origin"] == r["player"]:
                e[r["player"], :, r["sector"]] = -r["subsidy"]
    except IndexError as exc:
        raise SchemaError(f"policy row index out of range: {exc}") from exc
    return PolicyWedges(t, e)


# -- welfare ----------------------------------------------------------------


def welfare_rows(scenario: str, welfare: np.ndarray):
    return [(scenario, n, 100.0 * (float(w) - 1.0)) for n, w in enumerate(welfare)]


def write_welfare(path, scenario, welfare) -> None:
    write_csv(path, WELFARE_COLUMNS, welfare_rows(scenario, welfare))


def read_welfare(path) -> list[dict]:
    rows = read_csv(path, WELFARE_COLUMNS)
    for r in rows:
        r["country"] = _int(r, "country", path)
        r["welfare_change_pct"] = _float(r, "welfare_change_pct", path)
    return rows


# -- equilibrium hats -------------------------------------------------------


def write_hats(path, eq: HatEquilibrium) -> None:
    N, J = eq.L.shape
    rows = [(n, j, eq.w[n], eq.L[n, j], eq.P[n, j], eq.X[n, j]) for n in range(N) for j in range(J)]
    write_csv(path, HAT_COLUMNS, rows)


def read_hats(path) -> list[dict]:
    rows = read_csv(path, HAT_COLUMNS)
    for r in rows:
        for key in ("country", "sector"):
            r[key] = _int(r, key, path)
        for key in HAT_COLUMNS[2:]:
            r[key] = _float(r, key, path)
    return rows


# -- gradient comparison ----------------------------------------------------


def write_gradient_check(path, labels, adjoint, fd, rel) -> None:
    rows = [(k, lab[0], lab[1], lab[2], lab[3] if not isinstance(lab[3], tuple) else " ".join(map(str, lab[3])), a, f, r)
            for k, (lab, a, f, r) in enumerate(zip(labels, adjoint, fd, rel))]
    write_csv(path, GRADIENT_COLUMNS, rows)


def read_gradient_check(path) -> list[dict]:
    rows = read_csv(path, GRADIENT_COLUMNS)
    for r in rows:
        for key in ("index", "origin", "destination"):
            r[key] = _int(r, key, path)
        for key in ("adjoint", "finite_difference", "rel_error"):
            r[key] = _float(r, key, path)
    return rows


# -- grid and perturbation --------------------------------------------------


def grid_columns(n_axes: int) -> list[str]:
    return [f"value_{k}" for k in range(n_axes)] + ["welfare_change_pct", "status"]


def write_grid(path, points) -> None:
    n = len(points[0].values) if points else 1
    write_csv(path, grid_columns(n), [(*p.values, 100.0 * (p.welfare - 1.0), p.status) for p in points])


def read_grid(path, n_axes: int) -> list[dict]:
    cols = grid_columns(n_axes)
    rows = read_csv(path, cols)
    for r in rows:
        for key in cols[:-1]:
            r[key] = _float(r, key, path)
    return rows


def perturbation_columns(n: int) -> list[str]:
    return ["draw", "welfare_change_pct", "status"] + [f"subsidy_{k}" for k in range(n)]


def write_perturbation(path, res) -> None:
    n = len(res.s_star)
    rows = [("baseline", 100.0 * (res.baseline - 1.0), "ok", *res.s_star)]
    for k in range(len(res.welfare)):
        status = "failed" if res.failed[k] else "ok"
        rows.append((k, 100.0 * (res.welfare[k] - 1.0), status, *res.draws[k]))
    write_csv(path, perturbation_columns(n), rows)


def read_perturbation(path, n: int) -> list[dict]:
    cols = perturbation_columns(n)
    rows = read_csv(path, cols)
    for r in rows:
        for key in cols[3:] + ["welfare_change_pct"]:
            r[key] = _float(r, key, path)
    return rows


# -- wedge files and sidecars -----------------------------------------------


def load_wedges(path, cal: Calibration) -> PolicyWedges:
    """Read a JSON wedge file ``{"tariff": [...], "export_wedge": [...]}``.

    ``export_wedge`` defaults to the calibration's baseline.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a mapping with key 'tariff'")
    unknown = set(doc) - {"tariff", "export_wedge"}
    if unknown:
        raise SchemaError(f"{path}: unknown keys {sorted(unknown)}")
    if "tariff" not in doc:
        raise SchemaError(f"{path}: missing key 'tariff'")
    shape = (cal.N, cal.N, cal.J)
    try:
        t = np.array(doc["tariff"], dtype=float)
        e = np.array(doc["export_wedge"], dtype=float) if "export_wedge" in doc else np.array(cal.baseline_export_wedge)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: wedges must be numeric arrays") from exc
    for name, a in (("tariff", t), ("export_wedge", e)):
        if a.shape != shape:
            raise SchemaError(f"{path}: {name} has shape {a.shape}, expected {shape}")
    try:
        return PolicyWedges(t, e)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def save_wedges(path, wedges: PolicyWedges) -> None:
    doc = {"tariff": wedges.tariff.tolist(), "export_wedge": wedges.export_wedge.tolist()}
    Path(path).write_text(json.dumps(doc) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_sidecar(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(doc), indent=1, sort_keys=True) + "\n")


def read_sidecar(path) -> dict:
    return json.loads(Path(path).read_text())
