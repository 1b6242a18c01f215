"""Command-line front end.

Every command reads a JSON run config (``--config``), lets flags override
single fields, writes CSV tables plus a ``run.json`` sidecar into the output
directory, and exits with 0 (success), 2 (validation), 3 (non-convergence)
or 4 (I/O).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import game, reports
from .economy import SECTOR_ELASTICITIES, Calibration, CalibrationError, PolicyWedges, generate_synthetic, load_calibration, save_calibration
from .equilibrium import EquilibriumError, SolverOptions, solve_fixed_point
from .instruments import Scenario, build_mask
from .optimizer import AdamHyper
from .sensitivity import GradientError, finite_difference_gradient, policy_gradient, relative_errors

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3
EXIT_IO = 4

log = logging.getLogger("tradeopt")


class ConfigError(ValueError):
    pass


class NotConverged(RuntimeError):
    pass


SYNTHETIC_KEYS = {"seed", "N", "J", "trade_openness", "io_intensity", "psi_range", "theta_range", "tariff_range",
                  "theta", "psi", "tradable", "symmetric", "table_sectors"}


@dataclass
class RunConfig:
    calibration: str | None = None
    synthetic: dict | None = None
    scenario: str = "dual"
    players: list[int] | None = None
    optimizer: str = "adam"
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_grad_norm: float = 10.0
    clip: bool = True
    anneal: bool = False
    anneal_tol: float = 0.0
    eta: float = 1.0
    epochs: int = 20
    iters: int = 50
    tol_inner: float = 1e-9
    tol_outer: float = 1e-5
    tol_br: float | None = None
    damping: float = 0.5
    seed: int | None = None
    output_dir: str = "out"
    jobs: int = 1
    export_taxes: bool = False
    uniform_sectors: list[int] | None = None
    t_max: float = 5.0
    s_max: float = 0.99
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=Path(".")) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc, base_dir=Path(base_dir))

    def to_dict(self) -> dict:
        # output location is not a model setting; leaving it out keeps
        # sidecars identical across output directories
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        d.pop("output_dir")
        return d

    def validate(self) -> None:
        if self.seed is None:
            raise ConfigError("a seed is required (config key 'seed' or --seed)")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if (self.calibration is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of 'calibration' (path) or 'synthetic' (generator settings)")
        if self.synthetic is not None:
            unknown = set(self.synthetic) - SYNTHETIC_KEYS
            if unknown:
                raise ConfigError(f"unknown synthetic keys: {sorted(unknown)}")
            for key in ("seed", "N", "J"):
                if key not in self.synthetic and not (key == "J" and "table_sectors" in self.synthetic):
                    raise ConfigError(f"synthetic settings need {key!r}")
        try:
            Scenario(self.scenario)
        except ValueError:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {[s.value for s in Scenario]}") from None
        if self.optimizer != "adam":
            raise ConfigError(f"optimizer {self.optimizer!r} is not available (only 'adam')")
        for name in ("tol_inner", "tol_outer", "lr", "max_grad_norm", "damping", "t_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.tol_br is not None and not self.tol_br > 0:
            raise ConfigError("tol_br must be positive")
        if not 0 < self.damping <= 1:
            raise ConfigError("damping must lie in (0, 1]")
        if not 0 < self.eta <= 1:
            raise ConfigError("eta must lie in (0, 1]")
        if self.epochs < 1 or self.iters < 1 or self.jobs < 1:
            raise ConfigError("epochs, iters and jobs must be >= 1")
        if not 0 < self.s_max < 1:
            raise ConfigError("s_max must lie in (0, 1)")

    # -- derived objects ------------------------------------------------------

    def load_calibration(self) -> Calibration:
        if self.calibration is not None:
            return load_calibration(self.base_dir / self.calibration)
        syn = dict(self.synthetic)
        sectors = syn.pop("table_sectors", None)
        if sectors is not None:
            rows = [SECTOR_ELASTICITIES[k] for k in sectors]
            syn.setdefault("J", len(rows))
            syn["theta"] = [r[2] for r in rows]
            syn["psi"] = [r[3] for r in rows]
        for key in ("psi_range", "theta_range", "tariff_range"):
            if key in syn:
                syn[key] = tuple(syn[key])
        seed, N, J = syn.pop("seed"), syn.pop("N"), syn.pop("J")
        cal = generate_synthetic(seed, N, J, **syn)
        if sectors is not None:
            cal = dataclasses.replace(cal, sector_labels=tuple(SECTOR_ELASTICITIES[k][1] for k in sectors))
        return cal

    def solver(self) -> SolverOptions:
        return SolverOptions(tol=self.tol_inner, damping=self.damping)

    def br_options(self) -> game.BestResponseOptions:
        hyper = AdamHyper(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                          max_grad_norm=self.max_grad_norm, clip=self.clip)
        tol = self.tol_br if self.tol_br is not None else self.tol_outer / 100
        return game.BestResponseOptions(hyper=hyper, iters=self.iters, tol=tol, anneal=self.anneal,
                                        anneal_tol=self.anneal_tol, solver=self.solver())

    def nash_options(self) -> game.NashOptions:
        return game.NashOptions(br=self.br_options(), eta=self.eta, epochs=self.epochs, tol=self.tol_outer, seed=self.seed)

    def mask(self, cal: Calibration):
        return build_mask(cal, self.scenario, self.players, uniform_sectors=self.uniform_sectors,
                          export_taxes=self.export_taxes, t_max=self.t_max, s_max=self.s_max)


# -- argument parsing -------------------------------------------------------

OVERRIDES = [
    ("--seed", "seed", int),
    ("--scenario", "scenario", str),
    ("--lr", "lr", float),
    ("--epochs", "epochs", int),
    ("--iters", "iters", int),
    ("--eta", "eta", float),
    ("--max-grad-norm", "max_grad_norm", float),
    ("--tol-inner", "tol_inner", float),
    ("--tol-outer", "tol_outer", float),
    ("--damping", "damping", float),
    ("--output-dir", "output_dir", str),
    ("--jobs", "jobs", int),
]


def _players(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"players must be a comma-separated list of integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run config")
    for flag, dest, typ in OVERRIDES:
        common.add_argument(flag, dest=dest, type=typ, default=None)
    common.add_argument("--players", type=_players, default=None, help="comma-separated player indices")
    common.add_argument("--no-clip", dest="no_clip", action="store_true", help="disable gradient clipping")
    common.add_argument("--anneal", action="store_true", default=None, help="halve lr when the objective falls")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="tradeopt", description="Optimal trade and industrial policy games on a multi-sector trade model.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic calibration file")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--countries", type=int, required=True)
    g.add_argument("--sectors", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("-v", "--verbose", action="count", default=0)

    s = sub.add_parser("solve", parents=[common], help="solve the equilibrium at given wedges")
    s.add_argument("--wedges", help="JSON wedge file (baseline when omitted)")

    b = sub.add_parser("best-response", parents=[common], help="unilateral best response of one player")
    b.add_argument("--player", type=int, required=True)
    b.add_argument("--wedges", help="JSON wedge file for everyone else (baseline when omitted)")

    sub.add_parser("nash", parents=[common], help="Nash equilibrium by best-response dynamics")
    sub.add_parser("cooperative", parents=[common], help="cooperative planner")

    q = sub.add_parser("perturb", parents=[common], help="random subsidy draws around a Nash profile")
    q.add_argument("--player", type=int, required=True)
    q.add_argument("--draws", type=int, default=1000)
    q.add_argument("--profile", help="policies.csv of a Nash run (solved here when omitted)")

    c = sub.add_parser("check-gradient", parents=[common], help="adjoint vs finite-difference gradient")
    c.add_argument("--player", type=int, required=True)
    c.add_argument("--wedges", help="JSON wedge file (baseline when omitted)")
    c.add_argument("--threshold", type=float, default=1e-3)
    c.add_argument("--step", type=float, default=1e-6)

    r = sub.add_parser("grid", parents=[common], help="welfare over a grid of one or two instruments")
    r.add_argument("--player", type=int, required=True)
    r.add_argument("--instrument", type=int, action="append", required=True, help="instrument index (repeat for 2-D)")
    r.add_argument("--range", type=float, nargs=2, action="append", required=True, metavar=("START", "STOP"))
    r.add_argument("--steps", type=int, action="append", required=True)
    r.add_argument("--wedges", help="JSON wedge file (baseline when omitted)")
    return p


def load_config(args) -> RunConfig:
    path = Path(args.config)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    try:
        cfg = RunConfig.from_dict(doc, base_dir=path.parent)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    for _, dest, _ in OVERRIDES:
        v = getattr(args, dest, None)
        if v is not None:
            setattr(cfg, dest, v)
    if args.players is not None:
        cfg.players = args.players
    if args.no_clip:
        cfg.clip = False
    if args.anneal:
        cfg.anneal = True
    cfg.validate()
    return cfg


# -- commands ---------------------------------------------------------------


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _wedges(path, cal):
    return PolicyWedges.baseline(cal) if path is None else reports.load_wedges(path, cal)


def _sidecar(out, command, cfg, **extra):
    doc = {"command": command, "config": cfg.to_dict(), "seed": cfg.seed}
    doc.update(extra)
    reports.write_sidecar(out / "run.json", doc)


def _eq_summary(eq):
    return {"iterations": eq.iterations, "newton_steps": eq.newton_steps, "residual": eq.residual}


def cmd_solve_equilibrium(cfg: RunConfig, wedge_path=None) -> int:
    cal = cfg.load_calibration()
    wedges = _wedges(wedge_path, cal)
    eq = solve_fixed_point(wedges, cal, cfg.solver())
    out = _outdir(cfg)
    reports.write_hats(out / "hats.csv", eq)
    reports.write_welfare(out / "welfare.csv", "solve", eq.W)
    _sidecar(out, "solve", cfg, equilibrium=_eq_summary(eq), wedges=wedge_path)
    return EXIT_OK


def _game_outputs(out, cfg, command, res, mask, cal, extra=None):
    reports.write_policies(out / "policies.csv", cfg.scenario, res.wedges, mask, cal)
    reports.write_welfare(out / "welfare.csv", cfg.scenario, res.welfare)
    doc = {"epochs": res.epochs, "converged": res.converged, "round_changes": res.round_changes,
           "sequence": res.sequence, "equilibrium": _eq_summary(res.eq), "diagnostics": res.diagnostics,
           "players": list(res.players)}
    doc.update(extra or {})
    _sidecar(out, command, cfg, **doc)


def cmd_best_response(cfg: RunConfig, player: int, wedge_path=None) -> int:
    cal = cfg.load_calibration()
    mask = cfg.mask(cal)
    if mask.kind.cooperative:
        raise ConfigError("best-response needs a non-cooperative scenario")
    wedges = _wedges(wedge_path, cal)
    br = game.best_response(player, wedges, cal, mask, cfg.br_options())
    eq = solve_fixed_point(br.wedges, cal, cfg.solver())
    res = game.GameResult(mask.kind, (player,), br.wedges, eq, eq.W.copy(), [], [], cfg.seed, 1, br.converged,
                          br.objective, [{"iterations": br.iterations, "stationarity": br.stationarity, "warnings": br.warnings}])
    single = dataclasses.replace(mask, players=(player,))
    _game_outputs(_outdir(cfg), cfg, "best-response", res, single, cal)
    if not br.converged:
        raise NotConverged(f"best response did not converge in {cfg.iters} iterations")
    return EXIT_OK


def cmd_nash(cfg: RunConfig) -> int:
    cal = cfg.load_calibration()
    mask = cfg.mask(cal)
    res = game.nash_solve(cal, mask, cfg.nash_options())
    _game_outputs(_outdir(cfg), cfg, "nash", res, mask, cal)
    if not res.converged:
        raise NotConverged(f"best-response dynamics did not converge in {cfg.epochs} epochs (last round change {res.round_changes[-1]:.3e})")
    return EXIT_OK


def cmd_cooperative(cfg: RunConfig) -> int:
    cal = cfg.load_calibration()
    mask = cfg.mask(cal)
    res = game.cooperative_solve(cal, mask, cfg.nash_options())
    _game_outputs(_outdir(cfg), cfg, "cooperative", res, mask, cal, {"objective": res.objective})
    if not res.converged:
        raise NotConverged(f"planner ascent did not converge in {cfg.iters} iterations")
    return EXIT_OK


def cmd_perturb(cfg: RunConfig, player: int, draws: int, profile_path=None) -> int:
    cal = cfg.load_calibration()
    mask = cfg.mask(cal)
    if profile_path is None:
        res = game.nash_solve(cal, mask, cfg.nash_options())
        if not res.converged:
            raise NotConverged("Nash profile did not converge; cannot run the perturbation experiment")
        profile = res.wedges
    else:
        rows = reports.read_policies(profile_path)
        with_sub = any(len(i.subsidies) or len(i.uniform) for i in mask.instruments.values())
        profile = reports.wedges_from_policies(rows, PolicyWedges.baseline(cal), with_sub)
    pr = game.subsidy_perturbation_experiment(cal, profile, player, mask, draws, cfg.seed, cfg.solver(), cfg.jobs)
    out = _outdir(cfg)
    reports.write_perturbation(out / "perturbation.csv", pr)
    _sidecar(out, "perturb", cfg, player=player, draws=draws, failed=int(pr.failed.sum()),
             baseline_welfare=pr.baseline, max_gain=pr.max_gain)
    return EXIT_OK


def cmd_check_gradient(cfg: RunConfig, player: int, wedge_path=None, threshold=1e-3, step=1e-6) -> int:
    cal = cfg.load_calibration()
    mask = cfg.mask(cal)
    inst = mask.planner() if mask.kind.cooperative else mask.instruments[player]
    objective = "world" if mask.kind.cooperative else player
    wedges = _wedges(wedge_path, cal)
    eq = solve_fixed_point(wedges, cal, cfg.solver())
    adj = policy_gradient(cal, wedges, objective, inst, eq)
    fd = finite_difference_gradient(cal, wedges, objective, inst, step, cfg.solver(), eq, cfg.jobs)
    rel = relative_errors(adj.values, fd.values)
    worst = float(rel.max()) if rel.size else 0.0
    out = _outdir(cfg)
    reports.write_gradient_check(out / "gradient.csv", inst.labels(), adj.values, fd.values, rel)
    passed = worst <= threshold
    _sidecar(out, "check-gradient", cfg, player=player, max_rel_error=worst, threshold=threshold, step=step, passed=passed)
    print(f"max relative error {worst:.3e} (threshold {threshold:.1e}): {'ok' if passed else 'FAILED'}")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def cmd_grid_oracle(cfg: RunConfig, player: int, instruments, ranges, steps, wedge_path=None) -> int:
    if not (len(instruments) == len(ranges) == len(steps)):
        raise ConfigError("give one --range and --steps per --instrument")
    cal = cfg.load_calibration()
    mask = cfg.mask(cal)
    inst = mask.planner() if mask.kind.cooperative else mask.instruments[player]
    objective = "world" if mask.kind.cooperative else player
    wedges = _wedges(wedge_path, cal)
    axes = [(k, lo, hi, n) for k, (lo, hi), n in zip(instruments, ranges, steps)]
    points = game.welfare_grid(cal, wedges, objective, inst, axes, cfg.solver(), cfg.jobs)
    out = _outdir(cfg)
    reports.write_grid(out / "grid.csv", points)
    ok = [p for p in points if p.status == "ok"]
    best = game.grid_argmax(points) if ok else None
    _sidecar(out, "grid", cfg, player=player, axes=axes, points=len(points), solved=len(ok),
             argmax=None if best is None else list(best.values))
    return EXIT_OK


def cmd_generate(seed, N, J, path) -> int:
    save_calibration(generate_synthetic(seed, N, J), path)
    return EXIT_OK


def dispatch(args) -> int:
    if args.command == "generate":
        return cmd_generate(args.seed, args.countries, args.sectors, args.out)
    cfg = load_config(args)
    if args.command == "solve":
        return cmd_solve_equilibrium(cfg, args.wedges)
    if args.command == "best-response":
        return cmd_best_response(cfg, args.player, args.wedges)
    if args.command == "nash":
        return cmd_nash(cfg)
    if args.command == "cooperative":
        return cmd_cooperative(cfg)
    if args.command == "perturb":
        return cmd_perturb(cfg, args.player, args.draws, args.profile)
    if args.command == "check-gradient":
        return cmd_check_gradient(cfg, args.player, args.wedges, args.threshold, args.step)
    if args.command == "grid":
        return cmd_grid_oracle(cfg, args.player, args.instrument, args.range, args.steps, args.wedges)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except (ConfigError, CalibrationError, reports.SchemaError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NotConverged, EquilibriumError, game.GameError, GradientError) as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
