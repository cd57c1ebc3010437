"""Assembled DAE: device states plus a linear network solve per evaluation.

Every device presents itself to the network as a Norton equivalent that is
affine in its states (synchronous machines through their rotor angle, the wind
farm through rotor flux and converter current), so the algebraic equations
0 = g(x, y) reduce to one real linear solve for the bus voltages given x.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import AdmittanceMatrix, Branch


class NetworkSolveError(RuntimeError):
    pass


def _real_block(y: np.ndarray) -> np.ndarray:
    g, b = y.real, y.imag
    return np.block([[g, -b], [b, g]])


@dataclass(frozen=True)
class TieLine:
    from_bus: int
    to_bus: int
    branches: tuple


class PowerSystem:
    def __init__(self, ybus: AdmittanceMatrix, devices: list, tie: TieLine | None = None,
                 areas: dict | None = None):
        self.ybus = ybus
        self.devices = list(devices)
        self.tie = tie
        self.areas = areas or {}
        self.n_bus = ybus.order
        self._pos = {b: k for k, b in enumerate(ybus.bus_ids)}
        self.offsets = []
        names = []
        for dev in self.devices:
            self.offsets.append(len(names))
            names.extend(dev.state_names)
        self.state_names = names
        self.n = len(names)
        self.input_names = [nm for dev in self.devices for nm in dev.input_names]
        self.output_names = [nm for dev in self.devices for nm in dev.output_names]
        if tie is not None:
            self.output_names.append("tie.p")
        self._cache: dict = {}

    def slices(self):
        for dev, off in zip(self.devices, self.offsets):
            yield dev, slice(off, off + dev.n_states)

    def device(self, name: str):
        for dev in self.devices:
            if dev.name == name:
                return dev
        raise KeyError(name)

    def state_index(self, name: str) -> int:
        return self.state_names.index(name)

    def _base(self, t):
        key = None if t is None else self.ybus.active_overlays(t)
        if key not in self._cache:
            self._cache[key] = _real_block(self.ybus.at(t))
        return self._cache[key]

    def solve_network(self, x, t: float | None = None) -> np.ndarray:
        n = self.n_bus
        m = self._base(t).copy()
        rhs = np.zeros(2 * n)
        for dev, sl in self.slices():
            y, src = dev.norton(x[sl])
            k = self._pos[dev.bus]
            idx = [k, n + k]
            m[np.ix_(idx, idx)] += y
            rhs[idx] += src
        try:
            sol = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError as exc:
            raise NetworkSolveError("network matrix is singular") from exc
        if not np.all(np.isfinite(sol)):
            raise NetworkSolveError("network solve produced non-finite voltages")
        return sol[:n] + 1j * sol[n:]

    def voltages(self, x, t=None) -> dict:
        v = self.solve_network(x, t)
        return dict(zip(self.ybus.bus_ids, v))

    def _udict(self, u) -> dict:
        if u is None:
            return {}
        if isinstance(u, dict):
            return u
        return dict(zip(self.input_names, u))

    def f(self, x, u=None, t: float | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        vb = self.voltages(x, t)
        ud = self._udict(u)
        out = np.empty(self.n)
        for dev, sl in self.slices():
            out[sl] = dev.derivatives(x[sl], vb, ud)
        return out

    def tie_power(self, vb: dict) -> float:
        p = 0.0
        vi, vj = vb[self.tie.from_bus], vb[self.tie.to_bus]
        for br in self.tie.branches:
            ys = 1.0 / br.series_impedance
            i = (vi - vj) * ys + vi * 0.5j * br.shunt_susceptance
            p += (vi * i.conjugate()).real
        return p

    def outputs(self, x, u=None, t: float | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        vb = self.voltages(x, t)
        vals = {}
        for dev, sl in self.slices():
            vals.update(dev.outputs(x[sl], vb))
        if self.tie is not None:
            vals["tie.p"] = self.tie_power(vb)
        return np.array([vals[nm] for nm in self.output_names])

    def machines(self):
        return [d for d in self.devices if d.__class__.__name__ == "SyncMachine"]


def tie_line(branches, from_bus, to_bus) -> TieLine:
    sel = tuple(b for b in branches
                if {b.from_bus, b.to_bus} == {from_bus, to_bus})
    oriented = tuple(b if b.from_bus == from_bus else
                     Branch(from_bus, to_bus, b.series_impedance, b.shunt_susceptance, b.tap)
                     for b in sel)
    return TieLine(from_bus, to_bus, oriented)
