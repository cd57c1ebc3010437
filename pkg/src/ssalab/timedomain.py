"""Nonlinear simulation with scripted faults, and ringdown mode identification."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .network import FaultOverlay, apply_fault
from .system import NetworkSolveError, PowerSystem


class SimulationError(RuntimeError):
    pass


class RingdownError(ValueError):
    pass


@dataclass
class SimulationRun:
    t: np.ndarray
    channels: dict
    events: list = field(default_factory=list)     # (time, description)
    unstable: bool = False
    unstable_time: float | None = None
    truncated: bool = False
    diagnostic: str = ""
    final_state: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        for name, series in self.channels.items():
            if len(series) != len(self.t):
                raise ValueError(f"channel {name} length does not match the time grid")

    def channel(self, name: str) -> np.ndarray:
        return self.channels[name]

    def window(self, t0: float, t1: float = math.inf) -> np.ndarray:
        return (self.t >= t0 - 1e-12) & (self.t <= t1 + 1e-12)

    def to_csv(self, path, header: dict | None = None) -> None:
        names = sorted(self.channels)
        with open(path, "w", newline="") as fh:
            for k, v in (header or {}).items():
                fh.write(f"# {k}: {v}\n")
            for when, what in self.events:
                fh.write(f"# event t={when:.6f} {what}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + names)
            for i, ti in enumerate(self.t):
                w.writerow([f"{ti:.6f}"] + [f"{self.channels[n][i]:.10e}" for n in names])

    def event_log(self) -> str:
        lines = [f"t={when:.6f} {what}" for when, what in self.events]
        if self.unstable:
            lines.append(f"t={self.unstable_time:.6f} rotor angle separation exceeded pi")
        if self.truncated:
            lines.append(f"truncated: {self.diagnostic}")
        return "\n".join(lines)


def time_grid(t_end: float, dt: float, breakpoints=()) -> np.ndarray:
    """Uniform-ish grid with every breakpoint landing exactly on a step boundary."""
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    marks = sorted({0.0, t_end, *(b for b in breakpoints if 0.0 < b < t_end)})
    pieces = []
    for a, b in zip(marks[:-1], marks[1:]):
        n = max(1, math.ceil((b - a) / dt - 1e-9))
        pieces.append(np.linspace(a, b, n + 1)[:-1])
    pieces.append(np.array([t_end]))
    return np.concatenate(pieces)


def _jacobian(f, x, fx):
    n = x.size
    jac = np.empty((n, n))
    for j in range(n):
        h = 1e-7 * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += h
        jac[:, j] = (f(xp) - fx) / h
    return jac


def _angle_spread(system: PowerSystem, x) -> float:
    idx = [system.state_index(f"{m.name}.delta") for m in system.machines()]
    if len(idx) < 2:
        return 0.0
    d = x[idx]
    return float(d.max() - d.min())


class _Stepper:
    """One implicit theta-method step, Jacobian reused while the network and step are unchanged."""

    def __init__(self, system: PowerSystem, tol: float, max_newton: int):
        self.system = system
        self.tol = tol
        self.max_newton = max_newton
        self._lu = None
        self._key = None

    def advance(self, x, t0: float, h: float, theta: float):
        tm = t0 + 0.5 * h

        def f(z):
            return self.system.f(z, None, tm)

        f0 = f(x)
        rhs0 = x + (1 - theta) * h * f0
        key = (self.system.ybus.active_overlays(tm), theta, round(h, 12))
        for attempt in range(2):
            z = x + h * f0 if attempt == 0 else x.copy()
            if self._lu is None or self._key != key or attempt == 1:
                self._lu = scipy.linalg.lu_factor(np.eye(x.size) - theta * h * _jacobian(f, z, f(z)))
                self._key = key
            for _ in range(self.max_newton):
                dz = scipy.linalg.lu_solve(self._lu, -(z - rhs0 - theta * h * f(z)))
                z = z + dz
                if not np.all(np.isfinite(z)):
                    break
                if np.max(np.abs(dz)) <= self.tol * (1.0 + np.max(np.abs(z))):
                    return z
        return None

    def span(self, x, t0: float, h: float, theta: float, depth: int):
        """Cover [t0, t0+h], halving the step on Newton failure."""
        try:
            z = self.advance(x, t0, h, theta)
        except (NetworkSolveError, np.linalg.LinAlgError, ValueError):
            z = None
        if z is not None:
            return z
        if depth == 0:
            raise SimulationError(f"Newton iteration failed at t={t0 + h:.4f}s")
        mid = self.span(x, t0, 0.5 * h, theta, depth - 1)
        return self.span(mid, t0 + 0.5 * h, 0.5 * h, 0.5, depth - 1)


def simulate(system: PowerSystem, x0, events=(), t_end: float = 20.0, dt: float = 0.005,
             newton_tol: float = 1e-9, max_newton: int = 12, max_halvings: int = 8
             ) -> SimulationRun:
    """Implicit trapezoidal integration with the network re-solved inside every residual.

    ``events`` are fault overlays; their switching instants become step
    boundaries. Within a step the network configuration is the one active at
    the step midpoint, so a fault on [t_on, t_off) covers exactly those steps.
    The first step after each discontinuity is taken with backward Euler to
    keep stiff converter modes from ringing. A step whose Newton iteration
    fails is split in halves, up to ``max_halvings`` levels, before the run is
    truncated; output stays on the dt grid.
    """
    events = list(events)
    if any(e1.t_on > e2.t_on for e1, e2 in zip(events, events[1:])):
        raise ValueError("events must be sorted by start time")
    ybus = system.ybus
    for ev in events:
        if not isinstance(ev, FaultOverlay):
            raise TypeError("events must be FaultOverlay instances")
        ybus = apply_fault(ybus, ev.bus, ev.admittance, (ev.t_on, ev.t_off))
    sim = PowerSystem(ybus, system.devices, system.tie, system.areas)
    switch = sorted({t for ev in events for t in (ev.t_on, ev.t_off)})
    grid = time_grid(t_end, dt, switch)

    x = np.asarray(x0, dtype=float).copy()
    names = list(sim.output_names)
    rec = np.full((grid.size, len(names)), np.nan)
    rec[0] = sim.outputs(x, None, 0.0)
    log = []
    for ev in events:
        if ev.t_on < t_end:
            log.append((ev.t_on, f"fault applied at bus {ev.bus} (y={ev.admittance:g})"))
        if ev.t_off < t_end:
            log.append((ev.t_off, f"fault cleared at bus {ev.bus}"))
    log.sort()
    stepper = _Stepper(sim, newton_tol, max_newton)
    unstable_at = None
    diagnostic = ""
    truncated = False
    last = 0
    for k in range(grid.size - 1):
        t0, t1 = grid[k], grid[k + 1]
        theta = 1.0 if any(abs(t0 - s) < 1e-12 for s in switch) else 0.5
        try:
            x = stepper.span(x, t0, t1 - t0, theta, max_halvings)
            rec[k + 1] = sim.outputs(x, None, t1)
        except (SimulationError, NetworkSolveError, np.linalg.LinAlgError, ValueError) as exc:
            truncated = True
            diagnostic = str(exc)
            break
        last = k + 1
        if unstable_at is None and _angle_spread(sim, x) > math.pi:
            unstable_at = t1

    n = last + 1
    channels = {nm: rec[:n, i].copy() for i, nm in enumerate(names)}
    return SimulationRun(grid[:n].copy(), channels, log, unstable_at is not None, unstable_at,
                         truncated, diagnostic, x.copy())


@dataclass
class RingdownResult:
    modes: list            # (eigenvalue, amplitude) with Im >= 0, largest amplitude first
    residual: float        # relative fit residual
    low_confidence: bool

    def oscillatory(self, band=(0.0, math.inf)) -> list:
        lo, hi = band
        return [(lam, a) for lam, a in self.modes
                if lam.imag > 1e-6 and lo <= lam.imag / (2 * math.pi) <= hi]

    def dominant(self, band=(0.1, 3.0)) -> complex:
        osc = self.oscillatory(band)
        if not osc:
            raise LookupError("no oscillatory mode identified")
        return osc[0][0]


def identify_ringdown_modes(t, y, window=None, slowest_hz: float = 0.5, order: int | None = None,
                            rtol: float = 1e-5, noise_floor: float = 1e-2,
                            max_samples: int = 600) -> RingdownResult:
    """Matrix-pencil fit of a sum of damped exponentials to a uniformly sampled record.

    The window must span at least four cycles of ``slowest_hz``. Model order is
    the number of singular values above ``rtol`` times the largest, unless given.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is not None:
        sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
        t, y = t[sel], y[sel]
    if t.size < 8:
        raise RingdownError("window holds too few samples")
    span = t[-1] - t[0]
    if span * slowest_hz < 4.0:
        raise RingdownError(f"window of {span:.3f}s is shorter than four cycles at {slowest_hz} Hz")
    step = max(1, int(math.ceil(t.size / max_samples)))
    t, y = t[::step], y[::step]
    ts = np.diff(t)
    if np.ptp(ts) > 1e-6 * ts.mean():
        raise RingdownError("samples must be uniformly spaced")
    ts = float(ts.mean())
    n = y.size
    scale = np.max(np.abs(y))
    if scale == 0.0:
        return RingdownResult([], 0.0, False)

    pencil = n // 3
    hank = np.array([y[i:i + pencil + 1] for i in range(n - pencil)])
    _, sv, vt = np.linalg.svd(hank, full_matrices=False)
    m = order if order is not None else int(np.sum(sv > rtol * sv[0]))
    m = max(1, min(m, pencil))
    v = vt[:m].conj().T
    v1, v2 = v[:-1], v[1:]
    z = np.linalg.eigvals(np.linalg.pinv(v1) @ v2)
    z = z[np.abs(z) > 1e-12]
    lam = np.log(z.astype(complex)) / ts
    vander = np.exp(np.outer(t - t[0], lam))
    amp, *_ = np.linalg.lstsq(vander, y.astype(complex), rcond=None)
    fit = (vander @ amp).real
    resid = float(np.linalg.norm(fit - y) / max(np.linalg.norm(y), 1e-300))

    modes = []
    for li, ai in zip(lam, amp):
        if li.imag < -1e-9:
            continue
        a = abs(ai) * (2.0 if li.imag > 1e-9 else 1.0)
        modes.append((complex(li), float(a)))
    modes.sort(key=lambda p: -p[1])
    return RingdownResult(modes, resid, resid > noise_floor)


def write_series(run: SimulationRun, path: str | Path, header: dict | None = None) -> None:
    run.to_csv(path, header)
