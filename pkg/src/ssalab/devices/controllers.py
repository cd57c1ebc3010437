"""Controller building blocks shared by machines and the wind farm."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    pass


@dataclass
class PIController:
    """PI regulator with output clamp and back-calculation anti-windup.

    While clipped, the integrator is bled by ``tracking * (output - raw)``; the
    default tracking rate ki/kp parks the integral exactly at the limit.
    """

    kp: float
    ki: float
    out_min: float = -math.inf
    out_max: float = math.inf
    tracking: float | None = None

    @property
    def tracking_rate(self) -> float:
        if self.tracking is not None:
            return self.tracking
        return self.ki / self.kp if self.kp > 0 else 10.0

    def raw(self, integ: float, err: float) -> float:
        return self.kp * err + integ

    def output(self, integ: float, err: float) -> float:
        return min(max(self.raw(integ, err), self.out_min), self.out_max)

    def saturated(self, integ: float, err: float) -> bool:
        r = self.raw(integ, err)
        return r > self.out_max or r < self.out_min

    def derivative(self, integ: float, err: float) -> float:
        r = self.raw(integ, err)
        excess = min(max(r, self.out_min), self.out_max) - r
        # skip the bleed when unclipped: a tiny kp makes the default rate overflow
        return self.ki * err + (self.tracking_rate * excess if excess else 0.0)

    def step(self, integ: float, err: float, dt: float) -> tuple[float, float, bool]:
        """Advance the integrator by ``dt``; returns (integ, output, saturated)."""
        integ = integ + dt * self.derivative(integ, err)
        return integ, self.output(integ, err), self.saturated(integ, err)


@dataclass
class LeadLagStack:
    """Gain, washout and two lead-lag stages in series.

    V(s) = K * sTw/(1+sTw) * (1+sT1n)/(1+sT1d) * (1+sT2n)/(1+sT2d)

    Used both as the machine PSS and as the wind farm damping controller. The
    continuous form (``derivatives``/``output``) drives the DAE model; ``step``
    advances the stack's own ``state`` with the trapezoidal rule.
    """

    k: float
    tw: float
    t1n: float
    t1d: float
    t2n: float
    t2d: float
    v_max: float = math.inf
    v_min: float = -math.inf
    state: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_input: float = 0.0

    n_states = 3

    def __post_init__(self):
        for name in ("tw", "t1n", "t1d", "t2n", "t2d"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        self.state = np.asarray(self.state, dtype=float).copy()

    def _stages(self, z, u):
        w, l1, l2 = z
        a = self.k * u
        y1 = a - w
        y2 = l1 + self.t1n / self.t1d * (y1 - l1)
        y3 = l2 + self.t2n / self.t2d * (y2 - l2)
        return a, y1, y2, y3

    def derivatives(self, z, u: float) -> np.ndarray:
        a, y1, y2, _ = self._stages(z, u)
        w, l1, l2 = z
        return np.array([(a - w) / self.tw, (y1 - l1) / self.t1d, (y2 - l2) / self.t2d])

    def output(self, z, u: float) -> float:
        y = self._stages(z, u)[3]
        return min(max(y, self.v_min), self.v_max)

    def transfer(self, s: complex) -> complex:
        return (self.k * s * self.tw / (s * self.tw + 1)
                * (s * self.t1n + 1) / (s * self.t1d + 1)
                * (s * self.t2n + 1) / (s * self.t2d + 1))

    def _linear(self):
        a = np.array([[-1 / self.tw, 0, 0],
                      [-1 / self.t1d, -1 / self.t1d, 0],
                      [-self.t1n / (self.t1d * self.t2d), (1 - self.t1n / self.t1d) / self.t2d,
                       -1 / self.t2d]])
        b = self.k * np.array([1 / self.tw, 1 / self.t1d, self.t1n / (self.t1d * self.t2d)])
        return a, b

    def step(self, u: float, dt: float) -> float:
        if not (math.isfinite(u) and math.isfinite(dt)):
            raise ValueError("lead-lag input must be finite")
        if dt <= 0:
            raise ValueError("dt must be positive")
        a, b = self._linear()
        eye = np.eye(3)
        rhs = (eye + 0.5 * dt * a) @ self.state + 0.5 * dt * b * (self.last_input + u)
        self.state = np.linalg.solve(eye - 0.5 * dt * a, rhs)
        self.last_input = u
        return self.output(self.state, u)

    def reset(self) -> None:
        self.state = np.zeros(3)
        self.last_input = 0.0


def lead_lag_output(stack: LeadLagStack, dw: float, dt: float) -> float:
    return stack.step(dw, dt)


def dc_link_derivative(p_in: float, p_c: float, c: float, v_dc: float) -> float:
    """dV_dc/dt = (P_in - P_c) / (C V_dc)."""
    if not v_dc > 0:
        raise DomainError(f"dc-link voltage must be positive, got {v_dc}")
    return (p_in - p_c) / (c * v_dc)


def dc_link_energy(c: float, v_dc: float) -> float:
    return 0.5 * c * v_dc**2


_K = math.sqrt(2.0 / 3.0)


def abc_to_dq(abc, angle: float) -> np.ndarray:
    """Power-invariant Park transform; returns (d, q, 0)."""
    a, b, c = abc
    th = (angle, angle - 2 * math.pi / 3, angle + 2 * math.pi / 3)
    d = _K * (a * math.cos(th[0]) + b * math.cos(th[1]) + c * math.cos(th[2]))
    q = -_K * (a * math.sin(th[0]) + b * math.sin(th[1]) + c * math.sin(th[2]))
    z = (a + b + c) / math.sqrt(3.0)
    return np.array([d, q, z])


def dq_to_abc(dqz, angle: float) -> np.ndarray:
    d, q, z = dqz
    z0 = z / math.sqrt(3.0)
    out = []
    for th in (angle, angle - 2 * math.pi / 3, angle + 2 * math.pi / 3):
        out.append(_K * (d * math.cos(th) - q * math.sin(th)) + z0)
    return np.array(out)


def to_frame(phasor: complex, angle: float) -> complex:
    """Express a network-frame phasor in a frame whose d axis sits at ``angle``."""
    return phasor * complex(math.cos(angle), -math.sin(angle))


def from_frame(phasor: complex, angle: float) -> complex:
    return phasor * complex(math.cos(angle), math.sin(angle))
