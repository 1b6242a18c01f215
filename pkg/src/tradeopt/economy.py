"""Baseline world economy: calibration data, validation, file I/O and a
synthetic generator that builds internally consistent baselines.

Array conventions (0-based):

* ``alpha[i, j]``, ``beta[i, j]``: final-consumption and value-added shares.
* ``gamma[i, s, j]``: share of input ``s`` in the intermediate bundle of
  sector ``j`` in country ``i``; columns sum to one over ``s``.
* ``trade_flow[i, n, j]``: spending of destination ``n`` on origin ``i`` in
  sector ``j``, valued at destination prices (inclusive of the import tariff
  and of the producer wedge).
* ``baseline_tariff[i, n, j]``: tariff charged by ``n`` on imports from ``i``.
* ``baseline_export_wedge[i, n, j]``: producer wedge on route ``i -> n``;
  a production subsidy ``s`` is encoded as ``-s`` on every route of origin
  ``i``, so ``1 + e = 1 - s``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

SHARE_TOL = 1e-10
IDENTITY_TOL = 1e-6
NONTRADABLE_THETA = 10.0
NONTRADABLE_PSI = 0.0
MAX_THETA_PSI = 0.9

_ARRAY_KEYS = (
    "tradable_mask",
    "alpha",
    "beta",
    "gamma",
    "trade_flow",
    "theta",
    "psi",
    "baseline_tariff",
    "baseline_export_wedge",
)
_FILE_KEYS = ("dimensions", "labels") + _ARRAY_KEYS


class CalibrationError(ValueError):
    """A calibration violates its schema or an accounting identity."""


# Tradable sectors with (ICIO code, description, theta, psi).
SECTOR_ELASTICITIES = (
    ("D01T02", "Agriculture", 6.23, 0.14),
    ("D03", "Fishing", 6.23, 0.14),
    ("D05T06", "Mining, energy", 5.28, 0.17),
    ("D07T08", "Mining, non-energy", 5.28, 0.17),
    ("D09", "Mining support", 5.28, 0.17),
    ("D10T12", "Food", 2.30, 0.35),
    ("D13T15", "Textiles", 3.36, 0.22),
    ("D16", "Wood", 3.90, 0.23),
    ("D17T18", "Paper", 2.65, 0.32),
    ("D19", "Petroleum", 0.64, 0.35),
    ("D20", "Chemical", 3.97, 0.23),
    ("D21", "Pharmaceutical", 3.97, 0.23),
    ("D22", "Rubber", 5.16, 0.14),
    ("D23", "Non-metallic", 5.28, 0.17),
    ("D24", "Basic metals", 3.00, 0.21),
    ("D25", "Fabricated metal", 3.00, 0.21),
    ("D26", "Computer", 1.24, 0.55),
    ("D27", "Electrical equipment", 1.24, 0.55),
    ("D28", "Machinery nec", 7.75, 0.12),
    ("D29", "Motor vehicles", 2.81, 0.13),
    ("D30", "Other transport equipment", 2.81, 0.13),
    ("D31T33", "Manufacturing nec", 6.17, 0.15),
)

# 0-based positions of the manufacturing block (rows 6-22 of the table)
MANUFACTURING_SECTORS = tuple(range(5, 22))


def table_a1_elasticities() -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Trade elasticities, scale elasticities and labels of the 22 tradables."""
    theta = np.array([row[2] for row in SECTOR_ELASTICITIES])
    psi = np.array([row[3] for row in SECTOR_ELASTICITIES])
    labels = [row[1] for row in SECTOR_ELASTICITIES]
    return theta, psi, labels


def nontradable_elasticities() -> tuple[float, float]:
    return NONTRADABLE_THETA, NONTRADABLE_PSI


@dataclass(frozen=True, eq=False)
class Calibration:
    """Immutable baseline economy."""

    tradable_mask: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    trade_flow: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    baseline_tariff: np.ndarray
    baseline_export_wedge: np.ndarray
    country_labels: tuple[str, ...] = ()
    sector_labels: tuple[str, ...] = ()
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        for name in _ARRAY_KEYS:
            arr = np.array(getattr(self, name), dtype=bool if name == "tradable_mask" else float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        N, J = self.alpha.shape if self.alpha.ndim == 2 else (0, 0)
        if not self.country_labels:
            object.__setattr__(self, "country_labels", tuple(f"C{i + 1}" for i in range(N)))
        if not self.sector_labels:
            object.__setattr__(self, "sector_labels", tuple(f"S{j + 1}" for j in range(J)))
        object.__setattr__(self, "country_labels", tuple(self.country_labels))
        object.__setattr__(self, "sector_labels", tuple(self.sector_labels))
        if self.validate:
            self.check()

    @property
    def N(self) -> int:
        return self.alpha.shape[0]

    @property
    def J(self) -> int:
        return self.alpha.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Calibration):
            return NotImplemented
        return (
            all(np.array_equal(getattr(self, k), getattr(other, k)) for k in _ARRAY_KEYS)
            and self.country_labels == other.country_labels
            and self.sector_labels == other.sector_labels
        )

    __hash__ = None  # type: ignore[assignment]

    # -- derived baseline quantities ---------------------------------------

    @cached_property
    def expenditure(self) -> np.ndarray:
        """Sectoral absorption ``X_n^j`` (N, J): sum of flows into ``n``."""
        return self.trade_flow.sum(axis=0)

    @cached_property
    def shares(self) -> np.ndarray:
        """Trade shares ``pi[i, n, j]``; zero where the market is empty."""
        X = self.expenditure
        return np.divide(self.trade_flow, X[None], out=np.zeros_like(self.trade_flow), where=X[None] > 0)

    @cached_property
    def wedge_factor(self) -> np.ndarray:
        return (1.0 + self.baseline_tariff) * (1.0 + self.baseline_export_wedge)

    @cached_property
    def producer_revenue(self) -> np.ndarray:
        return self.trade_flow / self.wedge_factor

    @cached_property
    def sector_wage_bill(self) -> np.ndarray:
        """``w_i L_i^j`` (N, J)."""
        return self.beta * self.producer_revenue.sum(axis=1)

    @cached_property
    def wage_bill(self) -> np.ndarray:
        """``w_i L_i`` (N,)."""
        return self.sector_wage_bill.sum(axis=1)

    @cached_property
    def income(self) -> np.ndarray:
        """Final income ``Y_i`` including wedge revenue (N,)."""
        return income_from_flows(
            self.wage_bill, self.trade_flow, self.baseline_tariff, self.baseline_export_wedge
        )

    @cached_property
    def income_weights(self) -> np.ndarray:
        Y = self.income
        return Y / Y.sum()

    # -- validation --------------------------------------------------------

    def check(self) -> None:
        """Raise :class:`CalibrationError` on the first violated invariant."""
        N, J = self.alpha.shape
        shapes = {
            "tradable_mask": (J,),
            "beta": (N, J),
            "gamma": (N, J, J),
            "trade_flow": (N, N, J),
            "theta": (J,),
            "psi": (J,),
            "baseline_tariff": (N, N, J),
            "baseline_export_wedge": (N, N, J),
        }
        for name, shape in shapes.items():
            got = getattr(self, name).shape
            if got != shape:
                raise CalibrationError(f"{name} has shape {got}, expected {shape}")
        if len(self.country_labels) != N or len(self.sector_labels) != J:
            raise CalibrationError("label counts do not match dimensions")
        for name in _ARRAY_KEYS[1:]:
            if not np.all(np.isfinite(getattr(self, name))):
                raise CalibrationError(f"{name} contains non-finite values")

        dev = np.abs(self.alpha.sum(axis=1) - 1.0).max()
        if dev > SHARE_TOL:
            raise CalibrationError(f"alpha row sum deviates from 1 by {dev:.3e}")
        if np.any(self.alpha < 0):
            raise CalibrationError("alpha has negative entries")
        if np.any(self.beta <= 0) or np.any(self.beta > 1):
            raise CalibrationError("beta must lie in (0, 1]")
        dev = np.abs(self.gamma.sum(axis=1) - 1.0).max()
        if dev > SHARE_TOL:
            raise CalibrationError(f"gamma column sum (over inputs) deviates from 1 by {dev:.3e}")
        if np.any(self.gamma < 0):
            raise CalibrationError("gamma has negative entries")
        if np.any(self.trade_flow < 0):
            raise CalibrationError("trade_flow has negative entries")
        if np.any(self.baseline_tariff < 0):
            raise CalibrationError("baseline_tariff has negative entries")
        diag = self.baseline_tariff[np.arange(N), np.arange(N), :]
        if np.any(diag != 0):
            raise CalibrationError(
                f"baseline_tariff on domestic routes must be 0 (max {np.abs(diag).max():.3e})"
            )
        if np.any(self.baseline_export_wedge <= -1):
            raise CalibrationError("baseline_export_wedge must exceed -1")
        if np.any(self.theta <= 0):
            raise CalibrationError("theta must be positive")
        if np.any(self.psi < 0):
            raise CalibrationError("psi must be non-negative")
        nt = ~self.tradable_mask
        if np.any(self.theta[nt] != NONTRADABLE_THETA) or np.any(self.psi[nt] != NONTRADABLE_PSI):
            raise CalibrationError("non-tradable sectors need theta = 10 and psi = 0")
        if np.any(self.income <= 0):
            raise CalibrationError("baseline income must be positive")

        res = self.identity_residuals()
        for name, value in res.items():
            if value > IDENTITY_TOL:
                raise CalibrationError(f"{name} identity violated: relative residual {value:.3e}")

    def identity_residuals(self) -> dict[str, float]:
        """Relative residuals of the baseline accounting identities."""
        X = self.expenditure
        implied = self.alpha * self.income[:, None] + np.einsum(
            "is,ijs,is->ij", 1.0 - self.beta, self.gamma, self.producer_revenue.sum(axis=1)
        )
        scale = max(X.max(), 1e-300)
        expenditure = float(np.abs(implied - X).max() / scale)
        labor = float(np.abs(self.sector_wage_bill.sum(axis=1) - self.wage_bill).max() / max(self.wage_bill.max(), 1e-300))
        return {"sectoral expenditure": expenditure, "labor clearing": labor}


def income_from_flows(wage_bill, flow, tariff, export_wedge):
    """Final income: wages plus producer-wedge and tariff revenue.

    Works on numpy arrays and autodiff variables alike.
    """
    from . import autodiff as ad

    producer = ad.sum(ad.sum(export_wedge / (1.0 + export_wedge) * flow, axis=2), axis=1)
    tariff_rev = ad.sum(ad.sum(tariff / ((1.0 + tariff) * (1.0 + export_wedge)) * flow, axis=2), axis=0)
    return wage_bill + producer + tariff_rev


@dataclass(frozen=True, eq=False)
class PolicyWedges:
    """Counterfactual tariff and producer-wedge tensors, both (N, N, J)."""

    tariff: np.ndarray
    export_wedge: np.ndarray

    def __post_init__(self):
        t = np.array(self.tariff, dtype=float)
        e = np.array(self.export_wedge, dtype=float)
        if t.shape != e.shape or t.ndim != 3 or t.shape[0] != t.shape[1]:
            raise ValueError(f"wedge shapes {t.shape} / {e.shape} are not (N, N, J)")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(e))):
            raise ValueError("wedges must be finite")
        if np.any(t < 0):
            raise ValueError("tariffs must be non-negative")
        n = np.arange(t.shape[0])
        if np.any(t[n, n, :] != 0):
            raise ValueError("domestic tariffs must be zero")
        if np.any(e <= -1):
            raise ValueError("export wedges must exceed -1")
        t.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "tariff", t)
        object.__setattr__(self, "export_wedge", e)

    @classmethod
    def baseline(cls, cal: Calibration) -> "PolicyWedges":
        return cls(cal.baseline_tariff.copy(), cal.baseline_export_wedge.copy())

    def replace(self, tariff=None, export_wedge=None) -> "PolicyWedges":
        return PolicyWedges(
            self.tariff if tariff is None else tariff,
            self.export_wedge if export_wedge is None else export_wedge,
        )

    def subsidies(self) -> np.ndarray:
        """Production subsidies read off the domestic routes (N, J)."""
        n = np.arange(self.tariff.shape[0])
        return -self.export_wedge[n, n, :]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyWedges):
            return NotImplemented
        return np.array_equal(self.tariff, other.tariff) and np.array_equal(
            self.export_wedge, other.export_wedge
        )

    __hash__ = None  # type: ignore[assignment]


# ---------------------------------------------------------------------------
# file format


def calibration_to_dict(cal: Calibration) -> dict:
    return {
        "dimensions": {"N": cal.N, "J": cal.J},
        "labels": {"countries": list(cal.country_labels), "sectors": list(cal.sector_labels)},
        "tradable_mask": cal.tradable_mask.tolist(),
        "alpha": cal.alpha.tolist(),
        "beta": cal.beta.tolist(),
        "gamma": cal.gamma.tolist(),
        "trade_flow": cal.trade_flow.tolist(),
        "theta": cal.theta.tolist(),
        "psi": cal.psi.tolist(),
        "baseline_tariff": cal.baseline_tariff.tolist(),
        "baseline_export_wedge": cal.baseline_export_wedge.tolist(),
    }


def calibration_from_dict(doc: dict) -> Calibration:
    if not isinstance(doc, dict):
        raise CalibrationError("calibration document must be a mapping")
    unknown = set(doc) - set(_FILE_KEYS)
    if unknown:
        raise CalibrationError(f"unknown keys: {sorted(unknown)}")
    missing = [k for k in _FILE_KEYS if k not in doc and k not in ("labels", "baseline_export_wedge")]
    if missing:
        raise CalibrationError(f"missing keys: {missing}")
    try:
        N = int(doc["dimensions"]["N"])
        J = int(doc["dimensions"]["J"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CalibrationError("dimensions must hold integer N and J") from exc
    labels = doc.get("labels", {}) or {}
    kwargs = {}
    for key in _ARRAY_KEYS:
        if key == "baseline_export_wedge" and key not in doc:
            kwargs[key] = np.zeros((N, N, J))
            continue
        try:
            kwargs[key] = np.array(doc[key], dtype=bool if key == "tradable_mask" else float)
        except (TypeError, ValueError) as exc:
            raise CalibrationError(f"{key} is not a numeric array") from exc
    if kwargs["alpha"].shape != (N, J):
        raise CalibrationError(f"alpha has shape {kwargs['alpha'].shape}, expected {(N, J)}")
    return Calibration(
        **kwargs,
        country_labels=tuple(labels.get("countries", ())),
        sector_labels=tuple(labels.get("sectors", ())),
    )


def save_calibration(cal: Calibration, path) -> None:
    Path(path).write_text(json.dumps(calibration_to_dict(cal), indent=1) + "\n")


def load_calibration(path) -> Calibration:
    """Read and validate a calibration file."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"{path}: not valid JSON ({exc})") from exc
    return calibration_from_dict(doc)


# ---------------------------------------------------------------------------
# level-form economy (used to manufacture consistent baselines)


@dataclass(frozen=True, eq=False)
class LevelEconomy:
    """Level parameters behind a synthetic calibration.

    ``reach[i, n, j]`` is 0 where a route carries no trade (non-tradables
    across borders) and 1 otherwise.
    """

    T: np.ndarray
    tau: np.ndarray
    reach: np.ndarray
    labor: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    psi: np.ndarray


@dataclass
class LevelSolution:
    w: np.ndarray
    L: np.ndarray
    P: np.ndarray
    X: np.ndarray
    flow: np.ndarray
    iterations: int
    residual: float


def solve_levels(
    lev: LevelEconomy,
    tariff,
    export_wedge,
    tol=1e-14,
    max_iter=200_000,
    damping=0.5,
    init: "LevelSolution | None" = None,
) -> LevelSolution:
    """Solve the level equilibrium by damped fixed-point iteration.

    Numeraire: world wage bill equals world labor endowment.
    """
    N, J = lev.alpha.shape
    wedge = (1.0 + tariff) * (1.0 + export_wedge)
    if init is None:
        w = np.ones(N)
        L = np.repeat(lev.labor[:, None] / J, J, axis=1)
        P = np.ones((N, J))
        X = np.ones((N, J)) * lev.labor.sum() / N
    else:
        w, L, P, X = (np.array(a, dtype=float) for a in (init.w, init.L, init.P, init.X))
    res = np.inf
    for it in range(1, max_iter + 1):
        logP = np.log(P)
        c = L ** (-lev.psi) * w[:, None] ** lev.beta * np.exp(
            (1.0 - lev.beta) * np.einsum("isj,is->ij", lev.gamma, logP)
        )
        k = c[:, None, :] * lev.tau * wedge
        term = lev.reach * lev.T[:, None, :] * k ** (-lev.theta)
        P_new = term.sum(axis=0) ** (-1.0 / lev.theta)
        pi = term / term.sum(axis=0)[None]
        flow = pi * X[None]
        R = flow / wedge
        wL = lev.beta * R.sum(axis=1)
        w_new = wL.sum(axis=1) / lev.labor
        L_new = wL / w_new[:, None]
        Y = income_from_flows(w_new * lev.labor, flow, tariff, export_wedge)
        X_new = lev.alpha * Y[:, None] + np.einsum("is,ijs,is->ij", 1.0 - lev.beta, lev.gamma, R.sum(axis=1))
        scale = lev.labor.sum() / (w_new * lev.labor).sum()
        w_new, P_new, X_new = w_new * scale, P_new * scale, X_new * scale
        res = max(
            np.abs(w_new / w - 1).max(),
            np.abs(L_new / L - 1).max(),
            np.abs(P_new / P - 1).max(),
            np.abs(X_new / X - 1).max(),
        )
        w = (1 - damping) * w + damping * w_new
        L = np.maximum((1 - damping) * L + damping * L_new, 1e-12)
        P, X = P_new, X_new
        if not np.isfinite(res):
            raise RuntimeError("level equilibrium iteration produced non-finite values")
        if res < tol:
            break
    else:
        raise RuntimeError(f"level equilibrium did not converge (residual {res:.3e})")
    # flows consistent with the final state
    logP = np.log(P)
    c = L ** (-lev.psi) * w[:, None] ** lev.beta * np.exp(
        (1.0 - lev.beta) * np.einsum("isj,is->ij", lev.gamma, logP)
    )
    term = lev.reach * lev.T[:, None, :] * (c[:, None, :] * lev.tau * wedge) ** (-lev.theta)
    flow = term / term.sum(axis=0)[None] * X[None]
    return LevelSolution(w, L, P, X, flow, it, float(res))


def _dirichlet(rng, k, size=None):
    return rng.dirichlet(np.ones(k), size=size)


def generate_synthetic(
    seed: int,
    N: int,
    J: int,
    *,
    trade_openness: float = 0.5,
    io_intensity: float = 0.5,
    psi_range: tuple[float, float] = (0.05, 0.3),
    theta_range: tuple[float, float] = (2.0, 8.0),
    tariff_range: tuple[float, float] = (0.0, 0.1),
    theta=None,
    psi=None,
    tradable=None,
    symmetric: bool = False,
    return_levels: bool = False,
):
    """Random baseline economy that satisfies every calibration identity.

    Shares are drawn from a seeded flat Dirichlet; trade flows come from the
    level equilibrium of a random technology / trade-cost draw, so the
    baseline accounting identities hold to solver precision.  ``theta`` and
    ``psi`` override the random elasticities for tradable sectors.
    ``symmetric`` makes every country identical (ties broken exactly).
    """
    if N < 2 or J < 1:
        raise ValueError("need N >= 2 and J >= 1")
    if not 0 < trade_openness <= 1:
        raise ValueError("trade_openness must lie in (0, 1]")
    if not 0 <= io_intensity < 1:
        raise ValueError("io_intensity must lie in [0, 1)")
    for name, (lo, hi) in (("psi_range", psi_range), ("theta_range", theta_range), ("tariff_range", tariff_range)):
        if lo < 0 or hi < lo:
            raise ValueError(f"{name} must satisfy 0 <= low <= high")
    if theta_range[0] <= 0:
        raise ValueError("theta_range must be positive")

    rng = np.random.default_rng(seed)
    tradable = np.ones(J, bool) if tradable is None else np.asarray(tradable, bool)
    if tradable.shape != (J,):
        raise ValueError("tradable must have length J")

    th = rng.uniform(*theta_range, size=J)
    ps = rng.uniform(*psi_range, size=J)
    if theta is not None:
        th = np.where(tradable, np.asarray(theta, float), th)
    # random scale elasticities stay in the stable region theta * psi < 1
    ps = np.minimum(ps, MAX_THETA_PSI / th)
    if psi is not None:
        ps = np.where(tradable, np.asarray(psi, float), ps)
    if np.any(th * ps >= 1.0):
        raise ValueError("theta * psi must stay below 1 for a stable baseline")
    th = np.where(tradable, th, NONTRADABLE_THETA)
    ps = np.where(tradable, ps, NONTRADABLE_PSI)

    rows = 1 if symmetric else N
    alpha = _dirichlet(rng, J, rows)
    lo_b = max(0.05, 1 - io_intensity - 0.15)
    hi_b = min(1.0, 1 - io_intensity + 0.15)
    beta = rng.uniform(lo_b, hi_b, size=(rows, J))
    gamma = np.transpose(_dirichlet(rng, J, (rows, J)), (0, 2, 1))  # [i, s, j]
    T = rng.lognormal(0.0, 0.3, size=(rows, J))
    labor = rng.uniform(0.5, 2.0, size=rows)
    base_tau = 2.0 - trade_openness
    if symmetric:
        tau_off = base_tau * rng.uniform(0.9, 1.1, size=J)
        tau = np.broadcast_to(tau_off, (N, N, J)).copy()
        t_off = rng.uniform(*tariff_range, size=J)
        tariff = np.broadcast_to(t_off, (N, N, J)).copy()
        alpha, beta, T, labor = (np.repeat(a, N, axis=0) for a in (alpha, beta, T, labor))
        gamma = np.repeat(gamma, N, axis=0)
    else:
        tau = base_tau * rng.uniform(0.8, 1.2, size=(N, N, J))
        tariff = rng.uniform(*tariff_range, size=(N, N, J))
    idx = np.arange(N)
    tau[idx, idx, :] = 1.0
    tariff[idx, idx, :] = 0.0
    tariff[:, :, ~tradable] = 0.0
    reach = np.ones((N, N, J))
    reach[:, :, ~tradable] = 0.0
    reach[idx, idx, :] = 1.0
    export_wedge = np.zeros((N, N, J))

    lev = LevelEconomy(T, tau, reach, labor, alpha, beta, gamma, th, ps)
    sol = solve_levels(lev, tariff, export_wedge)
    flow = sol.flow
    if symmetric:
        diag = np.mean([flow[i, i] for i in range(N)], axis=0)
        off = np.mean([flow[i, n] for i in range(N) for n in range(N) if i != n], axis=0) if N > 1 else diag
        flow = np.broadcast_to(off, (N, N, J)).copy()
        flow[idx, idx, :] = diag
    flow = np.where(reach > 0, flow, 0.0)

    cal = Calibration(
        tradable_mask=tradable,
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        trade_flow=flow,
        theta=th,
        psi=ps,
        baseline_tariff=tariff,
        baseline_export_wedge=export_wedge,
    )
    if return_levels:
        return cal, lev, sol
    return cal
