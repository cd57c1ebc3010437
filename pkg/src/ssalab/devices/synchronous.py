"""Two-axis synchronous machine with static exciter and optional speed-input PSS."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controllers import LeadLagStack


class InitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MachineParams:
    xd: float
    xq: float
    xd_p: float
    xq_p: float
    ra: float
    td0_p: float
    tq0_p: float
    h: float
    d: float = 0.0
    mva: float = 900.0

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("inertia constant H must be positive")
        if not (self.xd >= self.xd_p > 0 and self.xq >= self.xq_p > 0):
            raise ValueError("reactances must satisfy x >= x' > 0")


@dataclass(frozen=True)
class ExciterParams:
    ka: float
    ta: float
    efd_max: float = math.inf
    efd_min: float = -math.inf

    def __post_init__(self):
        if not self.ta > 0:
            raise ValueError("exciter time constant must be positive")


def _rot(delta: float) -> np.ndarray:
    """Network (x, y) -> machine (d, q) rotation."""
    s, c = math.sin(delta), math.cos(delta)
    return np.array([[s, -c], [c, s]])


def _d(x: float) -> float:
    # 1/T with T = inf meaning a frozen state
    return 0.0 if math.isinf(x) else 1.0 / x


class SyncMachine:
    """Synchronous generator unit on its own MVA base.

    States: rotor angle (rad), speed deviation (pu), e'_q, e'_d, then E_fd if an
    exciter is present, then three stabilizer states if a PSS is present.
    """

    def __init__(self, name: str, bus, params: MachineParams, exciter: ExciterParams | None = None,
                 pss: LeadLagStack | None = None, area: int = 0, base_mva: float = 100.0,
                 f_nom: float = 60.0):
        self.name = name
        self.bus = bus
        self.area = area
        self.p = params
        self.exciter = exciter
        self.pss = pss
        self.scale = params.mva / base_mva
        self.omega_s = 2 * math.pi * f_nom
        self.pm = None
        self.vref = None
        zi = np.array([[-params.ra, params.xq_p], [-params.xd_p, -params.ra]])
        self._zinv = np.linalg.inv(zi)

        names = ["delta", "dw", "eq_p", "ed_p"]
        if exciter is not None:
            names.append("efd")
        if pss is not None:
            if exciter is None:
                raise ValueError("a PSS needs an exciter to act on")
            names += ["pss_w", "pss_l1", "pss_l2"]
        self.state_names = [f"{name}.{s}" for s in names]
        self.n_states = len(names)
        self.input_names = [f"{name}.vref", f"{name}.pm"]
        self.output_names = [f"{name}.speed", f"{name}.delta", f"{name}.pe", f"{name}.vt"]
        self.efd0 = None

    @property
    def rotor_states(self) -> tuple[int, int]:
        return 0, 1

    def initialize(self, v: complex, s_gen: complex) -> np.ndarray:
        """Back-solve states and references from terminal voltage and output (system pu)."""
        p = self.p
        i = (s_gen / v).conjugate() / self.scale
        e = v + complex(p.ra, p.xq) * i
        delta = math.atan2(e.imag, e.real)
        t = _rot(delta)
        vd, vq = t @ [v.real, v.imag]
        id_, iq = t @ [i.real, i.imag]
        ed_p = vd + p.ra * id_ - p.xq_p * iq
        eq_p = vq + p.ra * iq + p.xd_p * id_
        efd = eq_p + (p.xd - p.xd_p) * id_
        self.pm = ed_p * id_ + eq_p * iq + (p.xq_p - p.xd_p) * id_ * iq
        self.efd0 = efd
        x = [delta, 0.0, eq_p, ed_p]
        if self.exciter is not None:
            if not self.exciter.efd_min <= efd <= self.exciter.efd_max:
                raise InitializationError(f"{self.name}: field voltage {efd:.3f} outside limits")
            self.vref = abs(v) + efd / self.exciter.ka
            x.append(efd)
        if self.pss is not None:
            x += [0.0, 0.0, 0.0]
        return np.array(x, dtype=float)

    def norton(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(admittance block, source current) in real (x, y) form, system base."""
        t = _rot(x[0])
        zt = self._zinv @ t
        y = -self.scale * t.T @ zt
        src = -self.scale * t.T @ (self._zinv @ np.array([x[3], x[2]]))
        return y, src

    def stator(self, x, v: complex):
        """Machine-frame (vd, vq, id, iq) for terminal voltage ``v``."""
        t = _rot(x[0])
        vd, vq = t @ [v.real, v.imag]
        id_, iq = self._zinv @ np.array([vd - x[3], vq - x[2]])
        return vd, vq, id_, iq

    def electrical_power(self, x, v: complex) -> float:
        _, _, id_, iq = self.stator(x, v)
        return x[3] * id_ + x[2] * iq + (self.p.xq_p - self.p.xd_p) * id_ * iq

    def derivatives(self, x, vbus: dict, u: dict | None = None) -> np.ndarray:
        if self.pm is None:
            raise InitializationError(f"{self.name} has not been initialized")
        u = u or {}
        p = self.p
        v = vbus[self.bus]
        _, _, id_, iq = self.stator(x, v)
        dw = x[1]
        pe = x[3] * id_ + x[2] * iq + (p.xq_p - p.xd_p) * id_ * iq
        pm = self.pm + u.get(self.input_names[1], 0.0)
        out = np.empty(self.n_states)
        out[0] = self.omega_s * dw
        out[1] = (pm - pe - p.d * dw) / (2 * p.h)
        if self.exciter is None:
            efd = self.efd0
        else:
            ex = self.exciter
            efd = min(max(x[4], ex.efd_min), ex.efd_max)
        out[2] = (efd - x[2] - (p.xd - p.xd_p) * id_) * _d(p.td0_p)
        out[3] = (-x[3] + (p.xq - p.xq_p) * iq) * _d(p.tq0_p)
        if self.exciter is not None:
            vpss = 0.0
            if self.pss is not None:
                z = x[5:8]
                out[5:8] = self.pss.derivatives(z, dw)
                vpss = self.pss.output(z, dw)
            vref = self.vref + u.get(self.input_names[0], 0.0)
            # limited-input lag: the field voltage settles inside its ceiling
            target = min(max(ex.ka * (vref - abs(v) + vpss), ex.efd_min), ex.efd_max)
            out[4] = (target - x[4]) / ex.ta
        return out

    def outputs(self, x, vbus: dict) -> dict:
        v = vbus[self.bus]
        return {self.output_names[0]: x[1], self.output_names[1]: x[0],
                self.output_names[2]: self.electrical_power(x, v) * self.scale,
                self.output_names[3]: abs(v)}


def sync_machine_derivatives(machine: SyncMachine, state, network_voltage: complex,
                             controls: dict | None = None) -> np.ndarray:
    return machine.derivatives(np.asarray(state, dtype=float), {machine.bus: network_voltage},
                               controls)


class InfiniteBus:
    """Constant EMF behind an impedance; a stiff grid for test rigs."""

    n_states = 0
    state_names: list = []
    input_names: list = []
    output_names: list = []
    area = 0

    def __init__(self, name: str, bus, z: complex = 1e-4j):
        self.name = name
        self.bus = bus
        self.z = z
        self.e = None

    def initialize(self, v: complex, s_gen: complex) -> np.ndarray:
        self.e = v + self.z * (s_gen / v).conjugate()
        return np.zeros(0)

    def norton(self, x):
        y = 1.0 / self.z
        src = self.e / self.z
        return np.array([[y.real, -y.imag], [y.imag, y.real]]), np.array([src.real, src.imag])

    def derivatives(self, x, vbus, u=None):
        return np.zeros(0)

    def outputs(self, x, vbus):
        return {}
