"""Gradients of welfare objectives through the equilibrium fixed point.

The production path differentiates one recorded application of the
equilibrium map at the solution and solves a single adjoint system
``(I - dG/dX)^T lam = dW/dX``; the policy gradient is then
``dW/da + lam^T dG/da``, obtained as one vector-Jacobian product.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .economy import Calibration, PolicyWedges
from .equilibrium import (
    EquilibriumError,
    HatEquilibrium,
    SingularSystemError,
    SolverOptions,
    _numeraire,
    evaluate,
    pack,
    solve_fixed_point,
    unpack,
)
from .instruments import Instruments


class GradientError(RuntimeError):
    pass


# number of dense linear solves performed by the adjoint path
linear_solves = 0


@dataclass
class GradientVector:
    values: np.ndarray
    method: str = "adjoint"
    objective: float = float("nan")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __len__(self) -> int:
        return len(self.values)


def objective_weights(cal: Calibration, objective) -> np.ndarray:
    """Country weights of a welfare objective.

    An integer selects one country's welfare change; ``"world"`` uses
    baseline income shares; an array is taken as given.
    """
    if isinstance(objective, str):
        if objective != "world":
            raise ValueError(f"unknown objective {objective!r}")
        return cal.income_weights
    if np.ndim(objective) == 0:
        w = np.zeros(cal.N)
        w[int(objective)] = 1.0
        return w
    w = np.asarray(objective, dtype=float)
    if w.shape != (cal.N,):
        raise ValueError("objective weights must have length N")
    return w


def weighted_welfare(eq: HatEquilibrium, weights) -> float:
    return float(np.dot(weights, eq.W))


def _record(eq: HatEquilibrium, wedges: PolicyWedges, cal: Calibration, weights):
    tape = ad.Tape()
    x = tape.var(eq.state, "state")
    t = tape.var(wedges.tariff, "tariff")
    e = tape.var(wedges.export_wedge, "export_wedge")
    w, L, P, X = unpack(x, cal.N, cal.J)
    parts = evaluate(w, L, P, X, t, e, cal)
    G = pack(*_numeraire(parts, cal))
    obj = ad.sum(parts["W"] * weights)
    return tape, x, t, e, G, obj


def _check_converged(G, x, tol):
    res = float(np.abs(G.value - x.value).max())
    if res > tol:
        raise GradientError(f"equilibrium not converged (residual {res:.3e} > {tol:.1e}); refusing to differentiate")


def policy_gradient(
    cal: Calibration,
    wedges: PolicyWedges,
    objective,
    instruments: Instruments,
    eq: HatEquilibrium,
    *,
    converged_tol: float = 1e-7,
) -> GradientVector:
    """Adjoint gradient of the welfare objective over ``instruments``."""
    global linear_solves
    weights = objective_weights(cal, objective)
    tape, x, t, e, G, obj = _record(eq, wedges, cal, weights)
    _check_converged(G, x, converged_tol)
    K = x.value.size

    # one batched sweep: rows 0..K-1 give dG/dX, row K gives dW/dX
    (jac,) = ad.vjp([G, obj], np.eye(K + 1), [x])
    Jx, dWdx = jac[:K], jac[K]
    M = np.eye(K) - Jx
    try:
        linear_solves += 1
        lam = np.linalg.solve(M.T, dWdx)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("I - dG/dX is singular at this equilibrium") from exc
    if not np.all(np.isfinite(lam)):
        raise SingularSystemError("I - dG/dX is singular at this equilibrium")

    g_t, g_e = ad.vjp([G, obj], np.concatenate([lam, [1.0]]), [t, e])
    g = instruments.pullback(g_t, g_e)
    if not np.all(np.isfinite(g)):
        raise GradientError("non-finite policy gradient")
    return GradientVector(g, "adjoint", float(obj.value))


def policy_gradient_direct(cal, wedges, objective, instruments, eq) -> GradientVector:
    """Same gradient via the explicit sensitivity matrix ``dX/da``.

    ``dX/da = -[dG/dX - I]^{-1} dG/da``; costs one solve per wedge entry and
    exists to cross-check :func:`policy_gradient` on small problems.
    """
    weights = objective_weights(cal, objective)
    tape, x, t, e, G, obj = _record(eq, wedges, cal, weights)
    K = x.value.size
    Jx, Jt, Je = ad.jacobian(G, [x, t, e])
    dWdx, dWdt, dWde = ad.gradient(obj, [x, t, e])
    Ga = np.concatenate([Jt.reshape(K, -1), Je.reshape(K, -1)], axis=1)
    dXda = -np.linalg.solve(Jx - np.eye(K), Ga)
    total = np.concatenate([dWdt.ravel(), dWde.ravel()]) + dWdx @ dXda
    n = wedges.tariff.size
    g = instruments.pullback(total[:n].reshape(wedges.tariff.shape), total[n:].reshape(wedges.tariff.shape))
    return GradientVector(g, "direct", float(obj.value))


def finite_difference_gradient(
    cal: Calibration,
    wedges: PolicyWedges,
    objective,
    instruments: Instruments,
    step: float = 1e-6,
    opts: SolverOptions = SolverOptions(),
    warm_start: HatEquilibrium | None = None,
    jobs: int = 1,
) -> GradientVector:
    """Central-difference gradient, re-solving the equilibrium per probe.

    Probes are solved to ``opts.tol / 10``.  Where the backward probe would
    leave the admissible wedge set (a tariff at zero) a second-order forward
    difference is used instead.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    weights = objective_weights(cal, objective)
    probe_opts = replace(opts, tol=opts.tol / 10)
    base = instruments.extract(wedges)
    if warm_start is None:
        warm_start = solve_fixed_point(wedges, cal, probe_opts)

    def value(k, delta):
        a = base.copy()
        a[k] += delta
        try:
            wd = instruments.apply(wedges, a)
        except ValueError:
            return None
        try:
            eq = solve_fixed_point(wd, cal, probe_opts, warm_start=warm_start)
        except EquilibriumError as exc:
            label = instruments.labels()[k]
            raise GradientError(f"probe for instrument {k} {label} failed: {exc}") from exc
        return weighted_welfare(eq, weights)

    def partial(k):
        fm = value(k, -step)
        fp = value(k, step)
        if fm is not None:
            return (fp - fm) / (2 * step)
        f0 = value(k, 0.0)
        f2 = value(k, 2 * step)
        # differences first so equal probes give exactly zero
        return (4 * (fp - f0) - (f2 - f0)) / (2 * step)

    idx = range(len(instruments))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            g = np.array(list(pool.map(partial, idx)))
    else:
        g = np.array([partial(k) for k in idx])
    return GradientVector(g, "finite-difference", weighted_welfare(warm_start, weights))


def relative_errors(a, b, floor: float = 1e-6) -> np.ndarray:
    """Entrywise ``|a - b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
