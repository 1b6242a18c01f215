"""Best responses, Nash equilibria by best-response dynamics, the cooperative
planner, and Monte Carlo / grid checks around a policy profile."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .economy import Calibration, PolicyWedges
from .equilibrium import EquilibriumError, HatEquilibrium, SolverOptions, solve_fixed_point
from .instruments import Instruments, Scenario, ScenarioMask
from .optimizer import AdamHyper, AdamState, adam_step, clip_gradient, project
from .sensitivity import objective_weights, policy_gradient, weighted_welfare

log = logging.getLogger(__name__)


class GameError(RuntimeError):
    pass


class PolicyPointError(GameError):
    """Equilibrium failure at a specific policy point."""

    def __init__(self, message, values):
        super().__init__(message)
        self.values = values


@dataclass(frozen=True)
class BestResponseOptions:
    hyper: AdamHyper = field(default_factory=AdamHyper)
    iters: int = 50
    tol: float = 1e-6
    # halve the learning rate and restart the moments whenever the objective
    # falls (off by default)
    anneal: bool = False
    min_lr: float = 1e-12
    # decreases smaller than this are treated as solver noise
    anneal_tol: float = 0.0
    # objective drop tolerated over `window` iterations before a warning
    decrease_tol: float = 1e-8
    window: int = 10
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class BestResponse:
    values: np.ndarray
    wedges: PolicyWedges
    eq: HatEquilibrium
    objective: float
    iterations: int
    converged: bool
    stationarity: float
    lr: float
    history: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def _stationarity(a, g, lo, hi) -> float:
    """Norm of the projected gradient step ``P(a + g) - a``."""
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(np.clip(a + g, lo, hi) - a))


def _solve(wedges, cal, opts, warm, values):
    try:
        return solve_fixed_point(wedges, cal, opts, warm_start=warm)
    except EquilibriumError as exc:
        raise PolicyPointError(f"equilibrium failed at policy point {np.array2string(values, precision=6)}: {exc}", values) from exc


def ascend(
    cal: Calibration,
    wedges: PolicyWedges,
    objective,
    instruments: Instruments,
    opts: BestResponseOptions = BestResponseOptions(),
    eq: HatEquilibrium | None = None,
) -> BestResponse:
    """Projected-ADAM ascent of a welfare objective over ``instruments``.

    Each iterate solves the equilibrium (warm-started from the previous one)
    and takes an adjoint gradient.  Stops once a full step moves no
    instrument by more than ``opts.tol``.
    """
    weights = objective_weights(cal, objective)
    a = instruments.extract(wedges)
    lo, hi = instruments.bounds()
    a = project(a, lo, hi)
    wedges = instruments.apply(wedges, a) if len(instruments) else wedges
    eq = _solve(wedges, cal, opts.solver, eq, a)
    obj = weighted_welfare(eq, weights)
    if len(instruments) == 0:
        return BestResponse(a, wedges, eq, obj, 0, True, 0.0, opts.hyper.lr, [obj])

    state = AdamState.zeros(len(instruments), opts.hyper)
    lr = opts.hyper.lr
    history = [obj]
    warnings = []
    converged = False
    g = policy_gradient(cal, wedges, weights, instruments, eq).values
    it = 0
    for it in range(1, opts.iters + 1):
        gc = clip_gradient(g, opts.hyper.max_grad_norm) if opts.hyper.clip else g
        a_new, state = adam_step(state, gc, a, lr=lr)
        a_new = project(a_new, lo, hi)
        step = float(np.abs(a_new - a).max())
        a = a_new
        wedges = instruments.apply(wedges, a)
        eq = _solve(wedges, cal, opts.solver, eq, a)
        new_obj = weighted_welfare(eq, weights)
        if opts.anneal and new_obj < obj - opts.anneal_tol:
            # overshoot: halve the step and restart the moments
            lr = max(lr * 0.5, opts.min_lr)
            state = AdamState.zeros(len(instruments), opts.hyper)
        obj = new_obj
        history.append(obj)
        if len(history) > opts.window and history[-1] < history[-1 - opts.window] - opts.decrease_tol:
            msg = f"objective fell by {history[-1 - opts.window] - history[-1]:.3e} over {opts.window} iterations at iteration {it}"
            if not warnings or warnings[-1] != msg:
                warnings.append(msg)
                log.debug(msg)
        g = policy_gradient(cal, wedges, weights, instruments, eq).values
        if step < opts.tol:
            converged = True
            break
    return BestResponse(a, wedges, eq, obj, it, converged, _stationarity(a, g, lo, hi), lr, history, warnings)


def best_response(
    player: int,
    wedges_others: PolicyWedges,
    cal: Calibration,
    mask: ScenarioMask,
    opts: BestResponseOptions = BestResponseOptions(),
    eq: HatEquilibrium | None = None,
) -> BestResponse:
    """Player's welfare-maximizing instruments with everyone else held fixed.

    Starts from the player's current instruments in ``wedges_others``.
    """
    if player not in mask.instruments:
        raise ValueError(f"country {player} is not a player in this scenario")
    return ascend(cal, wedges_others, player, mask.instruments[player], opts, eq)


@dataclass(frozen=True)
class NashOptions:
    br: BestResponseOptions = field(default_factory=BestResponseOptions)
    eta: float = 1.0
    epochs: int = 20
    tol: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class GameResult:
    scenario: Scenario
    players: tuple[int, ...]
    wedges: PolicyWedges
    eq: HatEquilibrium
    welfare: np.ndarray
    round_changes: list[float]
    sequence: list[list[int]]
    seed: int
    epochs: int
    converged: bool
    objective: float = float("nan")
    diagnostics: list = field(default_factory=list)

    @property
    def welfare_pct(self) -> np.ndarray:
        return 100.0 * (self.welfare - 1.0)

    def policy(self, mask: ScenarioMask, player: int) -> np.ndarray:
        return mask.instruments[player].extract(self.wedges)


def _final_equilibrium(wedges, cal, opts):
    # cold solve, so the reported welfare depends only on the stored profile
    return solve_fixed_point(wedges, cal, opts)


def nash_solve(
    cal: Calibration,
    mask: ScenarioMask,
    opts: NashOptions = NashOptions(),
    wedges: PolicyWedges | None = None,
) -> GameResult:
    """Best-response dynamics with a freshly shuffled playing order each epoch.

    Players not in ``mask.players`` keep their wedges from ``wedges``
    (baseline by default).
    """
    if mask.kind.cooperative:
        raise ValueError("nash_solve needs a non-cooperative scenario")
    rng = np.random.default_rng(opts.seed)
    wedges = PolicyWedges.baseline(cal) if wedges is None else wedges
    solver = opts.br.solver
    eq = solve_fixed_point(wedges, cal, solver)
    changes, sequence, diagnostics = [], [], []
    converged = False
    epoch = 0
    for epoch in range(1, opts.epochs + 1):
        order = [int(p) for p in rng.permutation(np.array(mask.players))]
        sequence.append(order)
        max_change = 0.0
        for p in order:
            inst = mask.instruments[p]
            old = inst.extract(wedges)
            br = best_response(p, wedges, cal, mask, opts.br, eq)
            new = opts.eta * br.values + (1 - opts.eta) * old
            if opts.eta == 1.0:
                wedges, eq = br.wedges, br.eq
            else:
                wedges = inst.apply(wedges, new)
                eq = _solve(wedges, cal, solver, eq, new)
            if new.size:
                max_change = max(max_change, float(np.abs(new - old).max()))
            diagnostics.append(
                {"epoch": epoch, "player": p, "iterations": br.iterations, "converged": br.converged,
                 "stationarity": br.stationarity, "welfare": br.objective, "warnings": list(br.warnings)}
            )
        changes.append(max_change)
        log.info("epoch %d order %s max policy change %.3e", epoch, order, max_change)
        if max_change < opts.tol:
            converged = True
            break
    eq = _final_equilibrium(wedges, cal, solver)
    return GameResult(mask.kind, mask.players, wedges, eq, eq.W.copy(), changes, sequence, opts.seed, epoch, converged, diagnostics=diagnostics)


def cooperative_solve(
    cal: Calibration,
    mask: ScenarioMask,
    opts: NashOptions = NashOptions(),
    wedges: PolicyWedges | None = None,
) -> GameResult:
    """Planner ascent on the income-weighted average welfare change over the
    union of all players' instruments."""
    if not mask.kind.cooperative:
        raise ValueError("cooperative_solve needs a cooperative scenario")
    wedges = PolicyWedges.baseline(cal) if wedges is None else wedges
    res = ascend(cal, wedges, "world", mask.planner(), opts.br)
    eq = _final_equilibrium(res.wedges, cal, opts.br.solver)
    obj = weighted_welfare(eq, cal.income_weights)
    diag = [{"iterations": res.iterations, "converged": res.converged, "stationarity": res.stationarity,
             "welfare": obj, "warnings": list(res.warnings)}]
    return GameResult(mask.kind, mask.players, res.wedges, eq, eq.W.copy(), [], [], opts.seed, 1, res.converged, obj, diag)


def _parallel_map(fn, items, jobs):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def subsidy_instruments(inst: Instruments) -> Instruments:
    """The subsidy part of an instrument set."""
    return Instruments(subsidies=inst.subsidies, uniform=inst.uniform, t_max=inst.t_max, s_max=inst.s_max)


@dataclass
class PerturbationResult:
    player: int
    seed: int
    s_star: np.ndarray
    baseline: float
    draws: np.ndarray
    welfare: np.ndarray
    failed: np.ndarray

    @property
    def max_gain(self) -> float:
        ok = ~self.failed
        return float(self.welfare[ok].max() - self.baseline) if ok.any() else float("nan")


def subsidy_perturbation_experiment(
    cal: Calibration,
    profile: PolicyWedges,
    player: int,
    mask: ScenarioMask,
    draws: int = 1000,
    seed: int = 0,
    solver: SolverOptions = SolverOptions(),
    jobs: int = 1,
) -> PerturbationResult:
    """Welfare of ``player`` when its subsidies are redrawn uniformly from
    ``[0.1 s*, 1.9 s*]``, everything else held at ``profile``."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    inst = subsidy_instruments(mask.instruments[player])
    if len(inst) == 0:
        raise ValueError(f"player {player} has no subsidy instruments in this scenario")
    s_star = inst.extract(profile)
    rng = np.random.default_rng(seed)
    sample = rng.uniform(0.1 * s_star, 1.9 * s_star, size=(draws, len(inst)))
    base_eq = solve_fixed_point(profile, cal, solver)
    baseline = float(base_eq.W[player])

    def run(k):
        try:
            eq = solve_fixed_point(inst.apply(profile, sample[k]), cal, solver, warm_start=base_eq)
        except (EquilibriumError, ValueError) as exc:
            log.warning("draw %d failed: %s", k, exc)
            return np.nan
        return float(eq.W[player])

    welfare = np.array(_parallel_map(run, range(draws), jobs))
    return PerturbationResult(player, seed, s_star, baseline, sample, welfare, ~np.isfinite(welfare))


@dataclass
class GridPoint:
    values: tuple[float, ...]
    welfare: float
    status: str = "ok"


def welfare_grid(
    cal: Calibration,
    wedges: PolicyWedges,
    objective,
    instruments: Instruments,
    axes: list[tuple[int, float, float, int]],
    solver: SolverOptions = SolverOptions(),
    jobs: int = 1,
) -> list[GridPoint]:
    """Objective over a grid of one or two instruments.

    ``axes`` holds ``(instrument index, start, stop, steps)`` per axis; the
    remaining instruments stay at their values in ``wedges``.  Points outside
    the instrument bounds are reported, not solved.
    """
    if not 1 <= len(axes) <= 2:
        raise ValueError("select one or two instruments")
    weights = objective_weights(cal, objective)
    base = instruments.extract(wedges)
    lo, hi = instruments.bounds()
    grids = []
    for k, start, stop, steps in axes:
        if not 0 <= k < len(instruments):
            raise ValueError(f"instrument index {k} out of range")
        if steps < 1:
            raise ValueError("steps must be >= 1")
        grids.append(np.array([start]) if steps == 1 else np.linspace(start, stop, steps))
    points = [tuple(p) for p in np.array(np.meshgrid(*grids, indexing="ij")).reshape(len(axes), -1).T]
    warm = solve_fixed_point(wedges, cal, solver)

    def run(p):
        a = base.copy()
        for (k, *_), v in zip(axes, p):
            if not lo[k] <= v <= hi[k]:
                return GridPoint(p, float("nan"), f"rejected: instrument {k} value {float(v)!r} outside [{float(lo[k])}, {float(hi[k])}]")
            a[k] = v
        try:
            eq = solve_fixed_point(instruments.apply(wedges, a), cal, solver, warm_start=warm)
        except (EquilibriumError, ValueError) as exc:
            return GridPoint(p, float("nan"), f"failed: {exc}")
        return GridPoint(p, weighted_welfare(eq, weights))

    return _parallel_map(run, points, jobs)


def grid_argmax(points: list[GridPoint]) -> GridPoint:
    ok = [p for p in points if p.status == "ok"]
    if not ok:
        raise GameError("no grid point solved")
    return max(ok, key=lambda p: p.welfare)


def deviation_check(
    cal: Calibration,
    profile: PolicyWedges,
    mask: ScenarioMask,
    deltas=(0.01, 0.05, 0.10),
    solver: SolverOptions = SolverOptions(),
    jobs: int = 1,
) -> dict[int, float]:
    """Largest welfare gain each player gets from moving one of its own
    instruments by ``+-delta`` (absolute, clamped to bounds)."""
    base_eq = solve_fixed_point(profile, cal, solver)
    out = {}
    for p in mask.players:
        inst = mask.instruments[p]
        a0 = inst.extract(profile)
        lo, hi = inst.bounds()
        trials = []
        for k in range(len(inst)):
            for d in deltas:
                for sgn in (-1.0, 1.0):
                    v = float(np.clip(a0[k] + sgn * d, lo[k], hi[k]))
                    if v != a0[k]:
                        trials.append((k, v))

        def run(kv, inst=inst, a0=a0, p=p):
            a = a0.copy()
            a[kv[0]] = kv[1]
            eq = solve_fixed_point(inst.apply(profile, a), cal, solver, warm_start=base_eq)
            return float(eq.W[p])

        gains = np.array(_parallel_map(run, trials, jobs)) - base_eq.W[p]
        out[p] = float(gains.max()) if gains.size else float("-inf")
    return out


def average_tariff(wedges: PolicyWedges, mask: ScenarioMask) -> float:
    """Mean of all players' strategic tariffs."""
    vals = [wedges.tariff[r[:, 0], r[:, 1], r[:, 2]] for r in (mask.instruments[p].tariffs for p in mask.players)]
    vals = np.concatenate(vals) if vals else np.array([])
    return float(vals.mean()) if vals.size else 0.0
