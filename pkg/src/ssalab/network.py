"""Static per-unit network: buses, branches, loads and the nodal admittance matrix."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np


class TopologyError(ValueError):
    pass


class SingularElementError(ValueError):
    pass


BUS_KINDS = ("slack", "pv", "pq")


@dataclass(frozen=True)
class Bus:
    id: int
    base_kv: float
    kind: str = "pq"
    voltage: complex = 1.0 + 0.0j
    area: int = 0

    def __post_init__(self):
        if self.base_kv <= 0:
            raise ValueError(f"bus {self.id}: base_kv must be positive")
        if self.kind not in BUS_KINDS:
            raise ValueError(f"bus {self.id}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    series_impedance: complex
    shunt_susceptance: float = 0.0
    tap: float = 1.0

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise TopologyError(f"branch {self.from_bus}-{self.to_bus} is a self loop")


@dataclass(frozen=True)
class Load:
    """Load dispatched as PQ, then frozen as a constant impedance."""

    bus: int
    p: float
    q: float
    name: str = ""
    model: str = "constant-impedance"

    def as_shunt(self, voltage: complex) -> complex:
        """Shunt admittance drawing (p + jq) at the given bus voltage."""
        return (self.p - 1j * self.q) / abs(voltage) ** 2


@dataclass(frozen=True)
class FaultOverlay:
    t_on: float
    t_off: float
    bus: int
    admittance: complex

    def active(self, t: float) -> bool:
        return self.t_on <= t < self.t_off


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Dense complex Ybus plus time-windowed shunt patches.

    ``entries`` is never modified; ``at(t)`` returns a fresh array with every
    overlay active at ``t`` merged in.
    """

    bus_ids: tuple
    entries: np.ndarray
    overlays: tuple = ()

    @property
    def order(self) -> int:
        return len(self.bus_ids)

    def index(self, bus_id) -> int:
        try:
            return self.bus_ids.index(bus_id)
        except ValueError:
            raise KeyError(f"bus {bus_id} not in network") from None

    def at(self, t: float | None = None) -> np.ndarray:
        y = self.entries.copy()
        if t is None:
            return y
        for ov in self.overlays:
            if ov.active(t):
                k = self.index(ov.bus)
                y[k, k] += ov.admittance
        return y

    def active_overlays(self, t: float) -> tuple:
        return tuple(ov for ov in self.overlays if ov.active(t))

    def with_shunts(self, shunts: Mapping) -> "AdmittanceMatrix":
        y = self.entries.copy()
        for bus_id, adm in shunts.items():
            k = self.index(bus_id)
            y[k, k] += adm
        return replace(self, entries=y)


def _check_connected(ids: Sequence, branches: Iterable[Branch]) -> None:
    adjacency = {b: set() for b in ids}
    for br in branches:
        adjacency[br.from_bus].add(br.to_bus)
        adjacency[br.to_bus].add(br.from_bus)
    seen = {ids[0]}
    stack = [ids[0]]
    while stack:
        for nb in adjacency[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != len(ids):
        missing = sorted(set(ids) - seen)
        raise TopologyError(f"network is disconnected; unreachable buses {missing}")


def build_ybus(buses: Sequence[Bus], branches: Sequence[Branch],
               loads_as_shunts: Mapping | None = None) -> AdmittanceMatrix:
    """Assemble the nodal admittance matrix in bus input order.

    ``loads_as_shunts`` maps bus id to a complex shunt admittance (loads frozen
    as impedances, capacitor banks, ...). Values for the same bus add up.
    """
    ids = tuple(b.id for b in buses)
    if len(set(ids)) != len(ids):
        raise TopologyError("duplicate bus ids")
    pos = {b: k for k, b in enumerate(ids)}
    for br in branches:
        for end in (br.from_bus, br.to_bus):
            if end not in pos:
                raise TopologyError(f"branch endpoint {end} is not a bus")
    if ids:
        _check_connected(ids, branches)

    n = len(ids)
    y = np.zeros((n, n), dtype=complex)
    for br in branches:
        if abs(br.series_impedance) == 0.0:
            raise SingularElementError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
        ys = 1.0 / br.series_impedance
        ysh = 0.5j * br.shunt_susceptance
        i, j = pos[br.from_bus], pos[br.to_bus]
        t = br.tap
        y[i, i] += (ys + ysh) / t**2
        y[j, j] += ys + ysh
        y[i, j] -= ys / t
        y[j, i] -= ys / t
    for bus_id, adm in (loads_as_shunts or {}).items():
        y[pos[bus_id], pos[bus_id]] += adm
    return AdmittanceMatrix(ids, y)


def apply_fault(ybus: AdmittanceMatrix, bus, admittance: complex,
                window: tuple[float, float]) -> AdmittanceMatrix:
    """Return a copy of ``ybus`` with a shunt fault patch active on ``window``."""
    t_on, t_off = window
    if not t_on < t_off:
        raise ValueError(f"fault window must satisfy start < end, got {window}")
    ybus.index(bus)
    overlay = FaultOverlay(float(t_on), float(t_off), bus, complex(admittance))
    return replace(ybus, overlays=ybus.overlays + (overlay,))


@dataclass
class Network:
    """Topology and static injections, per-unit on ``base_mva``."""

    buses: list
    branches: list
    loads: list = field(default_factory=list)
    shunts: dict = field(default_factory=dict)   # bus id -> complex admittance
    base_mva: float = 100.0

    @property
    def bus_ids(self) -> tuple:
        return tuple(b.id for b in self.buses)

    def bus(self, bus_id) -> Bus:
        for b in self.buses:
            if b.id == bus_id:
                return b
        raise KeyError(f"bus {bus_id} not in network")

    def ybus(self, include_loads: dict | None = None) -> AdmittanceMatrix:
        """Ybus with fixed shunts, plus optional frozen load admittances."""
        sh = dict(self.shunts)
        for bus_id, adm in (include_loads or {}).items():
            sh[bus_id] = sh.get(bus_id, 0.0) + adm
        return build_ybus(self.buses, self.branches, sh)

    def load_shunts(self, voltages: Mapping) -> dict:
        out: dict = {}
        for ld in self.loads:
            out[ld.bus] = out.get(ld.bus, 0.0) + ld.as_shunt(voltages[ld.bus])
        return out

    def with_bus(self, bus: Bus, branch: Branch) -> "Network":
        return Network(self.buses + [bus], self.branches + [branch], list(self.loads),
                       dict(self.shunts), self.base_mva)


def network_from_config(cfg: Mapping) -> Network:
    """Build the static network from the ``buses/branches/shunts/loads`` keys."""
    base = float(cfg.get("system", {}).get("base_mva", 100.0))
    buses = [Bus(id=b["id"], base_kv=float(b["base_kv"]), kind=b.get("kind", "pq"),
                 area=int(b.get("area", 0)))
             for b in cfg["buses"]]
    branches = []
    for br in cfg["branches"]:
        scale = base / float(br.get("base_mva", base))
        z = complex(br.get("r", 0.0), br["x"]) * scale
        branches.append(Branch(br["from"], br["to"], z, float(br.get("b", 0.0)) / scale,
                               float(br.get("tap", 1.0))))
    shunts: dict = {}
    for sh in cfg.get("shunts", []):
        shunts[sh["bus"]] = shunts.get(sh["bus"], 0.0) + 1j * sh["q_mvar"] / base
    loads = [Load(ld["bus"], ld["p_mw"] / base, ld["q_mvar"] / base, ld.get("name", ""))
             for ld in cfg.get("loads", [])]
    return Network(buses, branches, loads, shunts, base)
