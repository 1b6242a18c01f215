"""Counterfactual equilibrium in proportional changes.

The unknowns are the wage change ``w`` (N,), and the sectoral changes in
employment ``L``, price index ``P`` and expenditure ``X`` (all N x J).  They
are packed in that order, row-major within each block, into a flat state of
length ``3NJ + N``.  :func:`hat_map` applies the equilibrium system once;
:func:`solve_fixed_point` iterates it to a fixed point.

Numeraire: the baseline-weighted world wage change is one,
``sum_i w_hat_i * wL_i = sum_i wL_i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .economy import Calibration, PolicyWedges, income_from_flows

log = logging.getLogger(__name__)

L_FLOOR = 1e-8


class EquilibriumError(RuntimeError):
    pass


class NonConvergenceError(EquilibriumError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularSystemError(EquilibriumError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-9
    max_iter: int = 5000
    damping: float = 0.5  # applied to the (w, L) block
    damping_px: float = 1.0  # applied to the (P, X) block
    newton: bool = True
    newton_switch: float = 1e-4
    max_newton: int = 20
    divergence_window: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not (0 < self.damping <= 1 and 0 < self.damping_px <= 1):
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


# ---------------------------------------------------------------------------
# state packing


def state_size(N: int, J: int) -> int:
    return 3 * N * J + N


def pack(w, L, P, X):
    return ad.concat([w, L, P, X])


def unpack(x, N: int, J: int):
    """Split a flat state (array or Var) into ``(w, L, P, X)``."""
    nj = N * J
    w = ad.take(x, slice(0, N))
    L = ad.reshape(ad.take(x, slice(N, N + nj)), (N, J))
    P = ad.reshape(ad.take(x, slice(N + nj, N + 2 * nj)), (N, J))
    X = ad.reshape(ad.take(x, slice(N + 2 * nj, N + 3 * nj)), (N, J))
    return w, L, P, X


def ones_state(N: int, J: int) -> np.ndarray:
    return np.ones(state_size(N, J))


# ---------------------------------------------------------------------------
# the equilibrium system


def _inverse_or_zero(a):
    return np.divide(1.0, a, out=np.zeros_like(a), where=a > 0)


def evaluate(w, L, P, X, tariff, export_wedge, cal: Calibration) -> dict:
    """One pass through the equilibrium equations.

    Inputs may be arrays or autodiff variables.  Returns the updated
    ``w``, ``L``, ``P``, ``X`` (before the numeraire rescaling, under the keys
    ``w_raw`` ...) together with the intermediates: unit-cost change ``c``,
    trade-share change ``pi``, counterfactual flows ``flow``, income change
    ``Y``, aggregate price change ``P_agg`` and welfare change ``W``.
    """
    N, J = cal.N, cal.J
    beta, theta, psi = cal.beta, cal.theta, cal.psi

    # unit costs
    inputs = ad.sum(cal.gamma * ad.reshape(ad.log(P), (N, J, 1)), axis=1)
    c = L ** (-psi) * ad.reshape(w, (N, 1)) ** beta * ad.exp((1.0 - beta) * inputs)

    # route cost changes, price indices and trade shares
    wedge_new = (1.0 + tariff) * (1.0 + export_wedge)
    k = ad.reshape(c, (N, 1, J)) * (wedge_new / cal.wedge_factor)
    kt = k ** (-theta)
    denom = ad.sum(cal.shares * kt, axis=0)
    P_new = denom ** (-1.0 / theta)
    pi = kt / ad.reshape(denom, (1, N, J))

    # sectoral wage income and labor reallocation
    flow = pi * cal.trade_flow * ad.reshape(X, (1, N, J))
    revenue = ad.sum(flow / wedge_new, axis=1)
    wage_income = beta * revenue
    empty_sector = (cal.sector_wage_bill <= 0).astype(float)
    wl_hat = wage_income * _inverse_or_zero(cal.sector_wage_bill) + empty_sector
    w_new = ad.sum(wage_income, axis=1) / cal.wage_bill
    L_new = wl_hat / ad.reshape(w_new, (N, 1))

    # income and sectoral expenditure
    Y_level = income_from_flows(w_new * cal.wage_bill, flow, tariff, export_wedge)
    Y_hat = Y_level / cal.income
    intermediate = ad.sum(cal.gamma * ad.reshape((1.0 - beta) * revenue, (N, 1, J)), axis=2)
    X_level = cal.alpha * ad.reshape(Y_level, (N, 1)) + intermediate
    empty_market = (cal.expenditure <= 0).astype(float)
    X_new = X_level * _inverse_or_zero(cal.expenditure) + empty_market

    P_agg = ad.exp(ad.sum(cal.alpha * ad.log(P_new), axis=1))
    return {
        "c": c,
        "pi": pi,
        "flow": flow,
        "w_raw": w_new,
        "L": L_new,
        "P_raw": P_new,
        "X_raw": X_new,
        "Y": Y_hat,
        "P_agg": P_agg,
        "W": Y_hat / P_agg,
    }


def _numeraire(parts: dict, cal: Calibration):
    scale = cal.wage_bill.sum() / ad.sum(parts["w_raw"] * cal.wage_bill)
    return parts["w_raw"] * scale, parts["L"], parts["P_raw"] * scale, parts["X_raw"] * scale


def apply_map(x, tariff, export_wedge, cal: Calibration):
    """``G(x, a)`` on a flat state; works on arrays and on tape variables."""
    w, L, P, X = unpack(x, cal.N, cal.J)
    parts = evaluate(w, L, P, X, tariff, export_wedge, cal)
    return pack(*_numeraire(parts, cal))


def hat_map(state: np.ndarray, wedges: PolicyWedges, cal: Calibration) -> np.ndarray:
    """Apply the equilibrium system once to a flat, strictly positive state."""
    state = np.asarray(state, dtype=float)
    if np.any(state <= 0):
        raise ValueError("state must be strictly positive")
    with np.errstate(all="raise"):
        try:
            out = apply_map(state, wedges.tariff, wedges.export_wedge, cal)
        except FloatingPointError as exc:
            raise EquilibriumError(f"floating point failure in equilibrium map: {exc}") from exc
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0][0]
        raise EquilibriumError(f"non-finite entry in equilibrium map at {_describe(bad, cal.N, cal.J)}")
    return out


def _describe(k: int, N: int, J: int) -> str:
    nj = N * J
    if k < N:
        return f"w[{k}]"
    block, r = divmod(k - N, nj)
    i, j = divmod(r, J)
    return f"{'LPX'[block]}[{i},{j}]"


def jacobian_state(x: np.ndarray, wedges: PolicyWedges, cal: Calibration):
    """``G(x)`` and ``dG/dx`` from one recorded evaluation."""
    tape = ad.Tape()
    xv = tape.var(x, "state")
    G = apply_map(xv, wedges.tariff, wedges.export_wedge, cal)
    (Jx,) = ad.jacobian(G, [xv])
    return G.value, Jx


# ---------------------------------------------------------------------------
# solution


@dataclass
class HatEquilibrium:
    w: np.ndarray
    L: np.ndarray
    P: np.ndarray
    X: np.ndarray
    pi: np.ndarray
    Y: np.ndarray
    P_agg: np.ndarray
    W: np.ndarray
    iterations: int = 0
    newton_steps: int = 0
    residual: float = 0.0
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.w, self.L.ravel(), self.P.ravel(), self.X.ravel()])


def _finish(x, wedges, cal, iterations, newton_steps, residual, history) -> HatEquilibrium:
    N, J = cal.N, cal.J
    w, L, P, X = unpack(x, N, J)
    parts = evaluate(w, L, P, X, wedges.tariff, wedges.export_wedge, cal)
    return HatEquilibrium(
        w=w.copy(),
        L=L.copy(),
        P=P.copy(),
        X=X.copy(),
        pi=parts["pi"],
        Y=parts["Y"],
        P_agg=parts["P_agg"],
        W=parts["W"],
        iterations=iterations,
        newton_steps=newton_steps,
        residual=float(residual),
        history=history,
    )


def _residual(x, gx) -> float:
    return float(np.abs(x - gx).max())


def _newton_step(x, wedges, cal):
    gx, Jx = jacobian_state(x, wedges, cal)
    M = np.eye(x.size) - Jx
    try:
        delta = np.linalg.solve(M, x - gx)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "I - dG/dX is singular; fall back to damped contraction"
        ) from exc
    if not np.all(np.isfinite(delta)):
        raise SingularSystemError("I - dG/dX is singular; fall back to damped contraction")
    return x - delta


def newton_kantorovich_refine(
    state: np.ndarray,
    wedges: PolicyWedges,
    cal: Calibration,
    opts: SolverOptions = SolverOptions(),
) -> HatEquilibrium:
    """Polish a near-fixed-point with Newton-Kantorovich steps.

    Each step solves ``[I - dG/dX] d = X - G(X)`` with the Jacobian from a
    single batched reverse sweep.
    """
    x = np.array(state, dtype=float)
    gx = hat_map(x, wedges, cal)
    res = _residual(x, gx)
    history = [res]
    steps = 0
    while res >= opts.tol:
        if steps >= opts.max_newton:
            raise NonConvergenceError(f"Newton refinement stalled at residual {res:.3e}", res, steps)
        x_new = _newton_step(x, wedges, cal)
        steps += 1
        if np.any(x_new <= 0):
            raise NonConvergenceError("Newton step left the positive orthant", res, steps)
        x = x_new
        gx = hat_map(x, wedges, cal)
        res = _residual(x, gx)
        history.append(res)
    return _finish(x, wedges, cal, 0, steps, res, history)


def solve_fixed_point(
    wedges: PolicyWedges,
    cal: Calibration,
    opts: SolverOptions = SolverOptions(),
    warm_start: np.ndarray | HatEquilibrium | None = None,
) -> HatEquilibrium:
    """Solve ``X = G(X, a)`` by damped contraction, then Newton polishing.

    The contraction runs until the sup-norm residual drops below
    ``opts.newton_switch`` (or ``opts.tol`` when Newton is disabled); Newton
    steps that fail to reduce the residual hand control back to the
    contraction.
    """
    N, J = cal.N, cal.J
    if isinstance(warm_start, HatEquilibrium):
        warm_start = warm_start.state
    x = ones_state(N, J) if warm_start is None else np.array(warm_start, dtype=float)
    if x.shape != (state_size(N, J),):
        raise ValueError("warm start has the wrong size")
    damp = np.concatenate([
        np.full(N + N * J, opts.damping),
        np.full(2 * N * J, opts.damping_px),
    ])
    L_slice = slice(N, N + N * J)

    history: list[float] = []
    rising = 0
    newton_steps = 0
    newton_ok = opts.newton
    it = 0
    gx = hat_map(x, wedges, cal)
    res = _residual(x, gx)
    history.append(res)
    while res >= opts.tol:
        if newton_ok and res < opts.newton_switch:
            try:
                x_new = _newton_step(x, wedges, cal)
                if np.all(x_new > 0):
                    g_new = hat_map(x_new, wedges, cal)
                    r_new = _residual(x_new, g_new)
                else:
                    r_new = np.inf
            except (SingularSystemError, EquilibriumError):
                r_new = np.inf
            newton_steps += 1
            if r_new < res:
                x, gx, res = x_new, g_new, r_new
                history.append(res)
                if newton_steps >= opts.max_newton:
                    newton_ok = False
                continue
            newton_ok = False  # contraction only from here on
        it += 1
        if it > opts.max_iter:
            raise NonConvergenceError(
                f"equilibrium did not converge in {opts.max_iter} iterations (residual {res:.3e})",
                res,
                it - 1,
            )
        x = x + damp * (gx - x)
        x[L_slice] = np.maximum(x[L_slice], L_FLOOR)
        gx = hat_map(x, wedges, cal)
        new_res = _residual(x, gx)
        rising = rising + 1 if new_res > res else 0
        res = new_res
        history.append(res)
        if rising >= opts.divergence_window:
            raise NonConvergenceError(
                f"equilibrium iteration diverging (residual {res:.3e} after {it} iterations)", res, it
            )
    return _finish(x, wedges, cal, it, newton_steps, res, history)


def welfare_change(eq: HatEquilibrium, country: int) -> float:
    """Real-income change ``Y_hat / P_hat`` of ``country``."""
    return float(eq.Y[country] / eq.P_agg[country])
