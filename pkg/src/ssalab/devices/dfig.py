"""Aggregated DFIG wind farm: reduced-order machine, back-to-back converter, dc-link.

All quantities are per-unit on the wind farm MVA rating and expressed as complex
phasors in the synchronous network frame; control loops rotate them into the
stator-flux frame (rotor side) or the stator-voltage frame (grid side). The
machine uses motor convention internally, so the stator current drawn from the
grid is ``i_s`` and the grid-side converter current ``i_a`` is an injection.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .controllers import LeadLagStack, PIController, dc_link_derivative
from .synchronous import InitializationError


@dataclass(frozen=True)
class DfigParams:
    rs: float = 0.01
    rr: float = 0.01
    lls: float = 0.1
    llr: float = 0.08
    lm: float = 3.0
    h: float = 3.5
    speed: float = 1.15
    dt: float = 1.0
    mva: float = 100.0

    @property
    def ls(self) -> float:
        return self.lls + self.lm

    @property
    def lr(self) -> float:
        return self.llr + self.lm

    @property
    def x_p(self) -> float:
        return self.ls - self.lm**2 / self.lr


@dataclass(frozen=True)
class RscParams:
    kp_power: float = 0.5
    ki_power: float = 5.0
    kp_current: float = 0.1
    ki_current: float = 5.0
    i_max: float = 2.0
    v_max: float = 0.6


@dataclass(frozen=True)
class GscParams:
    xf: float = 0.15
    rf: float = 0.003
    kp_dc: float = 2.0
    ki_dc: float = 40.0
    kp_current: float = 0.3
    ki_current: float = 8.0
    i_max: float = 1.0


@dataclass(frozen=True)
class DcLinkParams:
    c: float = 0.05
    v_ref: float = 1.0

    def __post_init__(self):
        if not (self.c > 0 and self.v_ref > 0):
            raise ValueError("dc-link capacitance and reference must be positive")


@dataclass(frozen=True)
class PllParams:
    kp: float = 0.1167
    ki: float = 2.618


@dataclass
class PccVoltageController:
    """PI on the PCC voltage error; output adjusts the rotor excitation current."""

    kp: float
    ki: float
    out_min: float = -1.0
    out_max: float = 1.0
    v_ref: float | None = None

    @property
    def pi(self) -> PIController:
        return PIController(self.kp, self.ki, self.out_min, self.out_max)


def pcc_voltage_control_step(ctrl: PccVoltageController, integ: float, v_pcc: float,
                             dt: float) -> tuple[float, float]:
    """One explicit step; returns (integrator, excitation-current adjustment)."""
    if v_pcc < 0:
        raise ValueError("measured voltage magnitude must be non-negative")
    err = ctrl.v_ref - v_pcc
    integ, out, _ = ctrl.pi.step(integ, err, dt)
    return integ, out


@dataclass
class _Layout:
    names: list = field(default_factory=list)

    def add(self, *names) -> int:
        start = len(self.names)
        self.names.extend(names)
        return start


def _clip(z: complex, lim: float) -> complex:
    return complex(min(max(z.real, -lim), lim), min(max(z.imag, -lim), lim))


class Dfig:
    """Wind farm as one equivalent DFIG connected at ``bus`` and measuring at ``pcc_bus``.

    Base states: rotor flux (2), rotor speed, dc voltage, power PI, rotor current
    PI (2), dc-voltage PI, grid-side filter current (2), grid-side current PI (2).
    The PCC voltage controller adds one integrator; the damping controller adds a
    PLL (2) for the PCC speed deviation and its three filter states.
    """

    def __init__(self, name: str, bus, pcc_bus, machine: DfigParams, rsc: RscParams,
                 gsc: GscParams, dclink: DcLinkParams, pll: PllParams | None = None,
                 base_mva: float = 100.0, f_nom: float = 60.0):
        self.name = name
        self.bus = bus
        self.pcc_bus = pcc_bus
        self.area = 0
        self.m = machine
        self.rsc = rsc
        self.gsc = gsc
        self.dc = dclink
        self.pll = pll or PllParams()
        self.scale = machine.mva / base_mva
        self.omega_b = 2 * math.pi * f_nom
        self.voltage_controller: PccVoltageController | None = None
        self.sdc: LeadLagStack | None = None
        self.p_loss = 0.0
        self.ref: dict | None = None
        self.zs = complex(machine.rs, machine.x_p)
        self._pi_power = PIController(rsc.kp_power, rsc.ki_power, -rsc.i_max, rsc.i_max)
        self._pi_dc = PIController(gsc.kp_dc, gsc.ki_dc, -gsc.i_max, gsc.i_max)
        self._build_layout()

    def _build_layout(self):
        lay = _Layout()
        lay.add("psi_r_re", "psi_r_im", "omega_r", "v_dc", "x_power", "x_ir_d", "x_ir_q",
                "x_dc", "i_a_re", "i_a_im", "x_ia_d", "x_ia_q")
        self._iv = lay.add("x_vpcc") if self.voltage_controller is not None else None
        self._isdc = (lay.add("pll_theta", "pll_x", "sdc_w", "sdc_l1", "sdc_l2")
                      if self.sdc is not None else None)
        self.state_names = [f"{self.name}.{s}" for s in lay.names]
        self.n_states = len(lay.names)
        self.input_names = [f"{self.name}.idr", f"{self.name}.iqa", f"{self.name}.pref"]
        self.output_names = [f"{self.name}.p_out", f"{self.name}.q_out", f"{self.name}.v_pcc",
                             f"{self.name}.v_dc", f"{self.name}.omega_r", f"{self.name}.dw_pcc"]

    def attach_voltage_controller(self, ctrl: PccVoltageController) -> None:
        if self.ref is not None:
            raise RuntimeError("attach controllers before initialization")
        self.voltage_controller = ctrl
        self._build_layout()

    def attach_sdc(self, stack: LeadLagStack) -> None:
        if self.sdc is not None:
            raise ValueError(f"{self.name} already carries a damping controller")
        if self.ref is not None:
            raise RuntimeError("attach controllers before initialization")
        self.sdc = stack
        self._build_layout()

    # -- algebraic relations -------------------------------------------------
    def _emf(self, psi_r: complex) -> complex:
        return 1j * self.m.lm / self.m.lr * psi_r

    def electrical(self, x, v: complex) -> dict:
        m = self.m
        psi_r = complex(x[0], x[1])
        i_s = (v - self._emf(psi_r)) / self.zs
        i_r = (psi_r - m.lm * i_s) / m.lr
        psi_s = m.ls * i_s + m.lm * i_r
        i_a = complex(x[8], x[9])
        s_out = v * (i_a - i_s).conjugate()
        return {"i_s": i_s, "i_r": i_r, "psi_s": psi_s, "psi_r": psi_r, "i_a": i_a,
                "s_out": s_out}

    # -- initialization ------------------------------------------------------
    def initialize(self, v: complex, s_gen: complex, v_pcc: complex | None = None) -> np.ndarray:
        """Back-solve the operating point for output ``s_gen`` (system pu) at terminal ``v``.

        The stator runs at unity power factor and the grid-side converter carries
        only the slip power, so the farm exchanges no reactive power.
        """
        m, g = self.m, self.gsc
        p_tot = (s_gen / self.scale).real
        if p_tot <= 0:
            raise InitializationError(f"{self.name}: wind farm dispatch must be positive")
        slip = 1.0 - m.speed
        eps = cmath.phase(v)
        vm = abs(v)

        def stack(p_s):
            i_s = -p_s / v.conjugate()
            psi_s = (v - m.rs * i_s) / 1j
            i_r = (psi_s - m.ls * i_s) / m.lm
            psi_r = m.lr * i_r + m.lm * i_s
            v_r = m.rr * i_r + 1j * slip * psi_r
            p_c = -(v_r * i_r.conjugate()).real
            # converter terminal power p_c = vm*i_da + rf*i_da^2
            disc = vm**2 + 4 * g.rf * p_c
            i_da = (-vm + math.sqrt(disc)) / (2 * g.rf) if g.rf > 0 else p_c / vm
            return i_s, psi_s, i_r, psi_r, v_r, i_da

        def mismatch(p_s):
            *_, i_da = stack(p_s)
            return p_s + vm * i_da - p_tot

        p_s = brentq(mismatch, 0.2 * p_tot, 3.0 * p_tot, xtol=1e-15, rtol=1e-15)
        i_s, psi_s, i_r, psi_r, v_r, i_da = stack(p_s)
        phi = cmath.phase(psi_s)
        rot_f = cmath.exp(-1j * phi)
        i_rf = i_r * rot_f
        v_rf = v_r * rot_f
        if max(abs(i_rf.real), abs(i_rf.imag)) > self.rsc.i_max or abs(i_da) > g.i_max:
            raise InitializationError(f"{self.name}: converter current limit exceeded at dispatch")
        i_a = i_da * cmath.exp(1j * eps)
        x_ia = complex(g.rf, g.xf) * i_da   # steady inner-PI output in the voltage frame
        t_gen = -(psi_s.conjugate() * i_s).imag
        p_out = (v * (i_a - i_s).conjugate()).real
        self.ref = {"p_ref": p_out + self.p_loss, "p_mech": t_gen * m.speed,
                    "omega_r": m.speed, "idr": i_rf.real, "v_dc": self.dc.v_ref}
        x = [psi_r.real, psi_r.imag, m.speed, self.dc.v_ref, i_rf.imag, v_rf.real, v_rf.imag,
             i_da, i_a.real, i_a.imag, x_ia.real, x_ia.imag]
        if self.voltage_controller is not None:
            vp = v if v_pcc is None else v_pcc
            if self.voltage_controller.v_ref is None:
                self.voltage_controller.v_ref = abs(vp)
            x.append(0.0)
        if self.sdc is not None:
            vp = v if v_pcc is None else v_pcc
            x += [cmath.phase(vp), 0.0, 0.0, 0.0, 0.0]
        return np.array(x, dtype=float)

    # -- network interface ---------------------------------------------------
    def norton(self, x):
        y = self.scale / self.zs
        src = self.scale * (self._emf(complex(x[0], x[1])) / self.zs + complex(x[8], x[9]))
        return np.array([[y.real, -y.imag], [y.imag, y.real]]), np.array([src.real, src.imag])

    def pcc_speed(self, x, v_pcc: complex) -> float:
        if self.sdc is None:
            return 0.0
        th, xi = x[self._isdc], x[self._isdc + 1]
        err = (v_pcc * cmath.exp(-1j * th)).imag / max(abs(v_pcc), 1e-6)
        return self.pll.kp * err + xi

    def derivatives(self, x, vbus: dict, u: dict | None = None) -> np.ndarray:
        if self.ref is None:
            raise InitializationError(f"{self.name} has not been initialized")
        u = u or {}
        m, r, g = self.m, self.rsc, self.gsc
        v = vbus[self.bus]
        v_pcc = vbus[self.pcc_bus]
        el = self.electrical(x, v)
        i_s, i_r, psi_s, psi_r, i_a = el["i_s"], el["i_r"], el["psi_s"], el["psi_r"], el["i_a"]
        out = np.zeros(self.n_states)

        # rotor side: outer power loop -> torque current, excitation channel summed
        p_out = el["s_out"].real
        err_p = self.ref["p_ref"] + u.get(self.input_names[2], 0.0) - (p_out + self.p_loss)
        iqr_ref = self._pi_power.output(x[4], err_p)
        out[4] = self._pi_power.derivative(x[4], err_p)
        idr_ref = self.ref["idr"] + u.get(self.input_names[0], 0.0)
        if self.voltage_controller is not None:
            vc = self.voltage_controller
            k = self._iv
            err_v = vc.v_ref - abs(v_pcc)
            pi = vc.pi
            idr_ref += pi.output(x[k], err_v)
            out[k] = pi.derivative(x[k], err_v)
        if self.sdc is not None:
            k = self._isdc
            dw = self.pcc_speed(x, v_pcc)
            err = (v_pcc * cmath.exp(-1j * x[k])).imag / max(abs(v_pcc), 1e-6)
            out[k] = self.omega_b * dw
            out[k + 1] = self.pll.ki * err
            z = x[k + 2:k + 5]
            out[k + 2:k + 5] = self.sdc.derivatives(z, dw)
            idr_ref += self.sdc.output(z, dw)
        i_ref = _clip(complex(idr_ref, iqr_ref), r.i_max)

        phi = cmath.phase(psi_s)
        rot = cmath.exp(-1j * phi)
        e_i = i_ref - i_r * rot
        x_i = complex(x[5], x[6])
        raw = r.kp_current * e_i + x_i
        v_rf = _clip(raw, r.v_max)
        # back-calculation anti-windup on the clipped rotor voltage
        dx_i = r.ki_current * e_i + (r.ki_current / r.kp_current) * (v_rf - raw)
        out[5], out[6] = dx_i.real, dx_i.imag
        v_r = v_rf / rot
        slip = 1.0 - x[2]
        dpsi = self.omega_b * (v_r - m.rr * i_r - 1j * slip * psi_r)
        out[0], out[1] = dpsi.real, dpsi.imag

        # shaft
        t_gen = -(psi_s.conjugate() * i_s).imag
        t_m = self.ref["p_mech"] / x[2] - m.dt * (x[2] - self.ref["omega_r"])
        out[2] = (t_m - t_gen) / (2 * m.h)

        # grid side: dc voltage loop -> active current, reactive current from input
        eps = cmath.phase(v)
        rot_e = cmath.exp(-1j * eps)
        err_dc = x[3] - self.dc.v_ref
        ida_ref = self._pi_dc.output(x[7], err_dc)
        out[7] = self._pi_dc.derivative(x[7], err_dc)
        ia_ref = complex(ida_ref, u.get(self.input_names[1], 0.0))
        e_a = ia_ref - i_a * rot_e
        x_a = complex(x[10], x[11])
        v_c = (g.kp_current * e_a + x_a + abs(v)) / rot_e
        out[10], out[11] = g.ki_current * e_a.real, g.ki_current * e_a.imag
        di = (self.omega_b / g.xf) * (v_c - v - complex(g.rf, g.xf) * i_a)
        out[8], out[9] = di.real, di.imag

        # dc link
        p_in = -(v_r * i_r.conjugate()).real
        p_c = (v_c * i_a.conjugate()).real
        out[3] = dc_link_derivative(p_in, p_c, self.dc.c, x[3])
        return out

    def outputs(self, x, vbus: dict) -> dict:
        v = vbus[self.bus]
        v_pcc = vbus[self.pcc_bus]
        s = self.electrical(x, v)["s_out"] * self.scale
        names = self.output_names
        return {names[0]: s.real, names[1]: s.imag, names[2]: abs(v_pcc), names[3]: x[3],
                names[4]: x[2], names[5]: self.pcc_speed(x, v_pcc)}


def rsc_control_step(dfig: Dfig, state: dict, measurements: dict, dt: float) -> dict:
    """Discrete rotor-side control update.

    ``state`` holds the integrators ``x_power`` and ``x_ir`` (complex, flux frame);
    ``measurements`` carries ``p_out``, ``i_r`` (complex, network frame), ``phi``
    (stator flux angle) and optionally ``idr_extra``. Returns the updated state,
    the rotor voltage command (network frame) and a saturation flag.
    """
    r = dfig.rsc
    pi_p = dfig._pi_power
    err_p = dfig.ref["p_ref"] - (measurements["p_out"] + dfig.p_loss)
    x_p, iqr_ref, sat_p = pi_p.step(state["x_power"], err_p, dt)
    idr_ref = dfig.ref["idr"] + measurements.get("idr_extra", 0.0)
    i_ref = _clip(complex(idr_ref, iqr_ref), r.i_max)
    sat = sat_p or i_ref != complex(idr_ref, iqr_ref)
    rot = cmath.exp(-1j * measurements["phi"])
    e_i = i_ref - measurements["i_r"] * rot
    raw = r.kp_current * e_i + state["x_ir"]
    cmd = _clip(raw, r.v_max)
    x_ir = state["x_ir"] + dt * (r.ki_current * e_i + (r.ki_current / r.kp_current) * (cmd - raw))
    sat = sat or cmd != raw
    return {"x_power": x_p, "x_ir": x_ir, "v_r": cmd / rot, "iqr_ref": iqr_ref,
            "saturated": sat}


def gsc_control_step(dfig: Dfig, state: dict, v_dc: float, measurements: dict, dt: float) -> dict:
    """Discrete grid-side control update.

    ``state`` holds ``x_dc`` and ``x_ia`` (complex, voltage frame); ``measurements``
    carries the terminal voltage ``v`` and converter current ``i_a`` (network frame)
    and optionally ``iqa_ref``. Returns the updated state and converter voltage.
    """
    g = dfig.gsc
    pi = dfig._pi_dc
    x_dc, ida_ref, sat = pi.step(state["x_dc"], v_dc - dfig.dc.v_ref, dt)
    v = measurements["v"]
    rot = cmath.exp(-1j * cmath.phase(v))
    e_a = complex(ida_ref, measurements.get("iqa_ref", 0.0)) - measurements["i_a"] * rot
    x_ia = state["x_ia"] + dt * g.ki_current * e_a
    v_c = (g.kp_current * e_a + state["x_ia"] + abs(v)) / rot
    return {"x_dc": x_dc, "x_ia": x_ia, "v_c": v_c, "ida_ref": ida_ref, "saturated": sat}


def sdc_attach(dfig: Dfig, stack: LeadLagStack) -> Dfig:
    dfig.attach_sdc(stack)
    return dfig
