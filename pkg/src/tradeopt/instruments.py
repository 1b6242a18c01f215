"""Policy instruments: which wedge entries a player controls and how a flat
instrument vector maps onto (and pulls back from) the wedge tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .economy import MANUFACTURING_SECTORS, SECTOR_ELASTICITIES, Calibration, PolicyWedges

DEFAULT_S_MAX = 0.99
DEFAULT_T_MAX = 5.0


class Scenario(str, Enum):
    TRADE_WAR = "trade-war"
    DUAL = "dual"
    SUBSIDY_ONLY = "subsidy-only"
    UNIFORM_SUBSIDY = "uniform-subsidy"
    COOPERATIVE_TARIFF = "cooperative-tariff"
    COOPERATIVE_DUAL = "cooperative-dual"

    @property
    def cooperative(self) -> bool:
        return self in (Scenario.COOPERATIVE_TARIFF, Scenario.COOPERATIVE_DUAL)


def _routes(a) -> np.ndarray:
    return np.asarray(a, dtype=int).reshape(-1, 3)


def _cells(a) -> np.ndarray:
    return np.asarray(a, dtype=int).reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class Instruments:
    """Instrument set of one decision maker.

    Vector layout: tariffs ``(origin, destination, sector)``, then sector
    subsidies ``(country, sector)``, then uniform subsidies (one scalar per
    ``(country, sectors)`` group), then explicit producer wedges
    ``(origin, destination, sector)``.
    """

    tariffs: np.ndarray = field(default_factory=lambda: _routes([]))
    subsidies: np.ndarray = field(default_factory=lambda: _cells([]))
    uniform: tuple[tuple[int, tuple[int, ...]], ...] = ()
    exports: np.ndarray = field(default_factory=lambda: _routes([]))
    t_max: float = DEFAULT_T_MAX
    s_max: float = DEFAULT_S_MAX

    def __post_init__(self):
        object.__setattr__(self, "tariffs", _routes(self.tariffs))
        object.__setattr__(self, "subsidies", _cells(self.subsidies))
        object.__setattr__(self, "exports", _routes(self.exports))
        if np.any(self.tariffs[:, 0] == self.tariffs[:, 1]):
            raise ValueError("domestic routes cannot carry tariffs")
        subsidized = {int(i) for i in self.subsidies[:, 0]} | {i for i, _ in self.uniform}
        if subsidized & {int(i) for i in self.exports[:, 0]}:
            raise ValueError("explicit producer wedges cannot be combined with subsidies of the same origin")

    def __len__(self) -> int:
        return len(self.tariffs) + len(self.subsidies) + len(self.uniform) + len(self.exports)

    @property
    def size(self) -> int:
        return len(self)

    def labels(self) -> list[tuple]:
        out = [("tariff", int(k), int(i), int(j)) for k, i, j in self.tariffs]
        out += [("subsidy", int(i), int(i), int(j)) for i, j in self.subsidies]
        out += [("uniform", int(i), int(i), sec) for i, sec in self.uniform]
        out += [("export", int(i), int(n), int(j)) for i, n, j in self.exports]
        return out

    def _split(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self),):
            raise ValueError(f"expected {len(self)} instrument values, got shape {values.shape}")
        a = len(self.tariffs)
        b = a + len(self.subsidies)
        c = b + len(self.uniform)
        return values[:a], values[a:b], values[b:c], values[c:]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.concatenate([
            np.zeros(len(self.tariffs)),
            np.zeros(len(self.subsidies) + len(self.uniform)),
            np.full(len(self.exports), -self.s_max),
        ])
        hi = np.concatenate([
            np.full(len(self.tariffs), self.t_max),
            np.full(len(self.subsidies) + len(self.uniform), self.s_max),
            np.full(len(self.exports), self.t_max),
        ])
        return lo, hi

    def extract(self, wedges: PolicyWedges) -> np.ndarray:
        """Current instrument values read from ``wedges``."""
        t, e = wedges.tariff, wedges.export_wedge
        parts = [t[self.tariffs[:, 0], self.tariffs[:, 1], self.tariffs[:, 2]]]
        parts.append(-e[self.subsidies[:, 0], self.subsidies[:, 0], self.subsidies[:, 1]])
        parts.append(np.array([-e[i, i, list(sec)].mean() for i, sec in self.uniform]))
        parts.append(e[self.exports[:, 0], self.exports[:, 1], self.exports[:, 2]])
        return np.concatenate(parts)

    def apply(self, wedges: PolicyWedges, values) -> PolicyWedges:
        """Return ``wedges`` with this player's entries set to ``values``."""
        tv, sv, uv, ev = self._split(values)
        t = np.array(wedges.tariff)
        e = np.array(wedges.export_wedge)
        t[self.tariffs[:, 0], self.tariffs[:, 1], self.tariffs[:, 2]] = tv
        for (i, j), s in zip(self.subsidies, sv):
            e[i, :, j] = -s
        for (i, sec), s in zip(self.uniform, uv):
            e[i, :, list(sec)] = -s
        e[self.exports[:, 0], self.exports[:, 1], self.exports[:, 2]] = ev
        return PolicyWedges(t, e)

    def pullback(self, grad_tariff: np.ndarray, grad_export: np.ndarray) -> np.ndarray:
        """Chain rule from wedge-tensor gradients to the instrument vector."""
        parts = [grad_tariff[self.tariffs[:, 0], self.tariffs[:, 1], self.tariffs[:, 2]]]
        parts.append(-grad_export[self.subsidies[:, 0], :, self.subsidies[:, 1]].sum(axis=1))
        parts.append(np.array([-grad_export[i, :, list(sec)].sum() for i, sec in self.uniform]))
        parts.append(grad_export[self.exports[:, 0], self.exports[:, 1], self.exports[:, 2]])
        return np.concatenate(parts)

    def union(self, other: "Instruments") -> "Instruments":
        return Instruments(
            np.concatenate([self.tariffs, other.tariffs]),
            np.concatenate([self.subsidies, other.subsidies]),
            self.uniform + other.uniform,
            np.concatenate([self.exports, other.exports]),
            self.t_max,
            self.s_max,
        )


def default_uniform_sectors(cal: Calibration) -> tuple[int, ...]:
    """Manufacturing block used by the uniform-subsidy scenario.

    Sectors whose labels match the manufacturing rows of the elasticity table;
    every tradable sector when no label matches.
    """
    names = {SECTOR_ELASTICITIES[k][1] for k in MANUFACTURING_SECTORS}
    picked = tuple(j for j, lab in enumerate(cal.sector_labels) if lab in names and cal.tradable_mask[j])
    return picked or tuple(int(j) for j in np.flatnonzero(cal.tradable_mask))


@dataclass(frozen=True, eq=False)
class ScenarioMask:
    kind: Scenario
    players: tuple[int, ...]
    instruments: dict[int, Instruments]

    def planner(self) -> Instruments:
        """Union of every player's instruments (cooperative scenarios)."""
        out = Instruments(t_max=self.instruments[self.players[0]].t_max, s_max=self.instruments[self.players[0]].s_max)
        for p in self.players:
            out = out.union(self.instruments[p])
        return out


def build_mask(
    cal: Calibration,
    kind: Scenario | str,
    players=None,
    *,
    uniform_sectors=None,
    export_taxes: bool = False,
    t_max: float = DEFAULT_T_MAX,
    s_max: float = DEFAULT_S_MAX,
) -> ScenarioMask:
    """Per-player instrument sets for a scenario.

    Tariffs are import tariffs of the player on tradable sectors from every
    partner; subsidies are the player's own tradable-sector production
    subsidies.  ``export_taxes`` adds the player's producer wedges on export
    routes (tariff-only scenarios).
    """
    kind = Scenario(kind)
    N = cal.N
    players = tuple(range(N)) if players is None else tuple(int(p) for p in players)
    if not players or len(set(players)) != len(players) or any(not 0 <= p < N for p in players):
        raise ValueError(f"invalid player list {players}")
    if not 0 < s_max < 1:
        raise ValueError("s_max must lie in (0, 1)")
    tradable = [int(j) for j in np.flatnonzero(cal.tradable_mask)]
    uniform_sectors = default_uniform_sectors(cal) if uniform_sectors is None else tuple(uniform_sectors)

    with_tariffs = kind in (Scenario.TRADE_WAR, Scenario.DUAL, Scenario.COOPERATIVE_TARIFF, Scenario.COOPERATIVE_DUAL)
    with_subsidies = kind in (Scenario.DUAL, Scenario.SUBSIDY_ONLY, Scenario.COOPERATIVE_DUAL)
    if export_taxes and (with_subsidies or kind is Scenario.UNIFORM_SUBSIDY):
        raise ValueError("export taxes are only available in tariff-only scenarios")

    inst = {}
    for p in players:
        tariffs = [(k, p, j) for k in range(N) if k != p for j in tradable] if with_tariffs else []
        subsidies = [(p, j) for j in tradable] if with_subsidies else []
        uniform = ((p, uniform_sectors),) if kind is Scenario.UNIFORM_SUBSIDY else ()
        exports = [(p, n, j) for n in range(N) if n != p for j in tradable] if export_taxes else []
        inst[p] = Instruments(tariffs, subsidies, uniform, exports, t_max, s_max)
    return ScenarioMask(kind, players, inst)
