"""Power flow and device initialization to an equilibrium operating point."""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .devices.synchronous import InitializationError
from .network import Network
from .system import PowerSystem, TieLine


class PowerFlowError(RuntimeError):
    def __init__(self, message: str, mismatch: float = math.nan, iterations: int = 0):
        super().__init__(f"{message} (mismatch {mismatch:.3e} after {iterations} iterations)")
        self.mismatch = mismatch
        self.iterations = iterations


@dataclass
class PowerFlowResult:
    voltages: dict
    injections: dict       # bus id -> complex net injection (generation minus PQ load)
    iterations: int
    mismatch: float


def solve_power_flow(network: Network, injections: dict, v_set: dict | None = None,
                     slack_angle: float = 0.0, tol: float = 1e-8, max_iter: int = 50
                     ) -> PowerFlowResult:
    """Newton-Raphson in polar form on a flat start.

    ``injections`` maps bus id to scheduled complex injection (the Q part is
    ignored at PV buses); ``v_set`` maps PV/slack buses to voltage magnitude.
    """
    v_set = v_set or {}
    ids = network.bus_ids
    n = len(ids)
    y = network.ybus().entries
    kinds = [network.bus(b).kind for b in ids]
    slack = [k for k, kd in enumerate(kinds) if kd == "slack"]
    if len(slack) != 1:
        raise PowerFlowError(f"need exactly one slack bus, found {len(slack)}")
    pv = [k for k, kd in enumerate(kinds) if kd == "pv"]
    pq = [k for k, kd in enumerate(kinds) if kd == "pq"]
    for k in pv + slack:
        if ids[k] not in v_set:
            raise PowerFlowError(f"bus {ids[k]} needs a voltage set point")
    s_sched = np.array([complex(injections.get(b, 0.0)) for b in ids])

    vm = np.ones(n)
    va = np.zeros(n)
    for k in pv + slack:
        vm[k] = v_set[ids[k]]
    va[slack[0]] = slack_angle
    pvpq = pv + pq

    def mismatch(v):
        s = v * np.conj(y @ v)
        ds = s - s_sched
        return np.concatenate([ds.real[pvpq], ds.imag[pq]])

    it = 0
    v = vm * np.exp(1j * va)
    f = mismatch(v)
    norm = np.max(np.abs(f)) if f.size else 0.0
    while norm >= tol:
        if it >= max_iter:
            raise PowerFlowError("power flow did not converge", norm, it)
        i = y @ v
        dv = np.diag(v)
        ds_dva = 1j * dv @ np.conj(np.diag(i) - y @ dv)
        ds_dvm = dv @ np.conj(y @ np.diag(v / np.abs(v))) + np.conj(np.diag(i)) @ np.diag(v / np.abs(v))
        jac = np.block([[ds_dva.real[np.ix_(pvpq, pvpq)], ds_dvm.real[np.ix_(pvpq, pq)]],
                        [ds_dva.imag[np.ix_(pq, pvpq)], ds_dvm.imag[np.ix_(pq, pq)]]])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError("power flow Jacobian is singular", norm, it) from exc
        npv = len(pvpq)
        va[pvpq] += dx[:npv]
        vm[pq] += dx[npv:]
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        norm = np.max(np.abs(f))
        it += 1
    s_calc = v * np.conj(y @ v)
    return PowerFlowResult(dict(zip(ids, v)), dict(zip(ids, s_calc)), it, float(norm))


@dataclass
class OperatingPoint:
    voltages: dict
    x0: np.ndarray
    state_names: list
    y0: np.ndarray
    algebraic_names: list
    mismatch: float
    f_norm: float
    injections: dict = field(default_factory=dict)

    def state(self, name: str) -> float:
        return float(self.x0[self.state_names.index(name)])

    def report(self) -> str:
        """Plain-text audit listing, one ``name = value`` per line."""
        lines = [f"# power-flow mismatch = {self.mismatch:.3e} pu",
                 f"# max |f(x0, y0)| = {self.f_norm:.3e}"]
        lines += [f"{nm} = {val:.12g}" for nm, val in zip(self.state_names, self.x0)]
        lines += [f"{nm} = {val:.12g}" for nm, val in zip(self.algebraic_names, self.y0)]
        return "\n".join(lines) + "\n"


def initialize_devices(network: Network, pf: PowerFlowResult, devices: list,
                       tie: TieLine | None = None, pcc_voltages: bool = True
                       ) -> tuple[PowerSystem, OperatingPoint]:
    """Freeze loads as impedances and back-solve each device at its bus.

    Devices are initialized in list order (machines first, then the wind farm),
    each from its own terminal conditions.
    """
    if not math.isfinite(pf.mismatch) or pf.mismatch >= 1e-6:
        raise InitializationError("power flow not converged")
    v = pf.voltages
    load_s = {}
    for ld in network.loads:
        load_s[ld.bus] = load_s.get(ld.bus, 0.0) + complex(ld.p, ld.q)
    seen = set()
    x_parts = []
    for dev in devices:
        if dev.bus in seen:
            raise InitializationError(f"more than one device at bus {dev.bus}")
        seen.add(dev.bus)
        s_dev = pf.injections[dev.bus] + load_s.get(dev.bus, 0.0)
        try:
            if hasattr(dev, "pcc_bus"):
                x_parts.append(dev.initialize(v[dev.bus], s_dev, v[dev.pcc_bus]))
            else:
                x_parts.append(dev.initialize(v[dev.bus], s_dev))
        except InitializationError:
            raise
        except (ValueError, ArithmeticError) as exc:
            raise InitializationError(f"{dev.name}: {exc}") from exc
    ybus = network.ybus(network.load_shunts(v))
    system = PowerSystem(ybus, devices, tie,
                         areas={d.name: d.area for d in devices})
    x0 = np.concatenate(x_parts) if x_parts else np.zeros(0)
    fx = system.f(x0)
    f_norm = float(np.max(np.abs(fx))) if fx.size else 0.0
    ids = network.bus_ids
    y0 = np.array([abs(v[b]) for b in ids] + [cmath.phase(v[b]) for b in ids])
    alg = [f"V{b}.mag" for b in ids] + [f"V{b}.ang" for b in ids]
    op = OperatingPoint(dict(v), x0, list(system.state_names), y0, alg, pf.mismatch, f_norm,
                        dict(pf.injections))
    return system, op
