"""Linearization, eigen-analysis and modal metrics."""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .system import NetworkSolveError

CLASSES = ("inter-area", "intra-area", "control", "non-oscillatory")
ZERO_MODE_TOL = 1e-4


class LinearizationError(RuntimeError):
    pass


class EigenError(RuntimeError):
    pass


class NearSingularError(ValueError):
    pass


@dataclass
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    state_names: list
    input_names: list = field(default_factory=list)
    output_names: list = field(default_factory=list)

    def __post_init__(self):
        n = self.A.shape[0]
        m = len(self.input_names)
        p = len(self.output_names)
        if self.A.shape != (n, n) or len(self.state_names) != n:
            raise ValueError("A must be square and match the state labels")
        if self.B.shape != (n, m) or self.C.shape != (p, n) or self.D.shape != (p, m):
            raise ValueError("B, C, D dimensions do not match the channel labels")
        for labels in (self.state_names, self.input_names, self.output_names):
            if len(set(labels)) != len(labels):
                raise ValueError("channel labels must be unique")

    def select(self, inputs: Sequence[str] | None = None,
               outputs: Sequence[str] | None = None) -> "StateSpaceModel":
        ii = [self.input_names.index(s) for s in (inputs or self.input_names)]
        oo = [self.output_names.index(s) for s in (outputs or self.output_names)]
        return StateSpaceModel(self.A, self.B[:, ii], self.C[oo, :], self.D[np.ix_(oo, ii)],
                               self.state_names, [self.input_names[i] for i in ii],
                               [self.output_names[i] for i in oo])


def _step(x: float, rel: float = 1e-6) -> float:
    return max(rel, rel * abs(x))


def linearize(f: Callable, x0, state_names: Sequence[str], u0=None,
              input_names: Sequence[str] = (), g: Callable | None = None,
              output_names: Sequence[str] = (), step: float = 1e-6) -> StateSpaceModel:
    """Central-difference Jacobians of ``f(x, u)`` and ``g(x, u)`` about (x0, u0).

    ``f`` must already eliminate the algebraic variables (each call re-solves
    the network), so A is the reduced state matrix. Each coordinate is moved by
    max(step, step*|x_j|).
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    m = len(input_names)
    u0 = np.zeros(m) if u0 is None else np.asarray(u0, dtype=float)
    p = len(output_names)

    def call(fn, x, u, label):
        try:
            return np.asarray(fn(x, u), dtype=float)
        except (NetworkSolveError, np.linalg.LinAlgError, ArithmeticError) as exc:
            raise LinearizationError(f"algebraic re-solve failed perturbing {label}") from exc

    a = np.zeros((n, n))
    c = np.zeros((p, n))
    for j in range(n):
        h = _step(x0[j], step)
        e = np.zeros(n)
        e[j] = h
        a[:, j] = (call(f, x0 + e, u0, state_names[j]) - call(f, x0 - e, u0, state_names[j])) / (2 * h)
        if p:
            c[:, j] = (call(g, x0 + e, u0, state_names[j]) - call(g, x0 - e, u0, state_names[j])) / (2 * h)
    b = np.zeros((n, m))
    d = np.zeros((p, m))
    for j in range(m):
        h = _step(u0[j], step)
        e = np.zeros(m)
        e[j] = h
        b[:, j] = (call(f, x0, u0 + e, input_names[j]) - call(f, x0, u0 - e, input_names[j])) / (2 * h)
        if p:
            d[:, j] = (call(g, x0, u0 + e, input_names[j]) - call(g, x0, u0 - e, input_names[j])) / (2 * h)
    return StateSpaceModel(a, b, c, d, list(state_names), list(input_names), list(output_names))


def linearize_system(system, op, inputs: Sequence[str] | None = None,
                     outputs: Sequence[str] | None = None) -> StateSpaceModel:
    """State-space model of an assembled power system about its operating point."""
    inputs = list(system.input_names if inputs is None else inputs)
    outputs = list(system.output_names if outputs is None else outputs)
    for s in inputs:
        if s not in system.input_names:
            raise KeyError(f"unknown input {s!r}")
    sel = [system.output_names.index(s) for s in outputs]

    def f(x, u):
        return system.f(x, dict(zip(inputs, u)))

    def g(x, u):
        return system.outputs(x, dict(zip(inputs, u)))[sel]

    return linearize(f, op.x0, system.state_names, None, inputs, g, outputs)


@dataclass
class EigenResult:
    values: np.ndarray
    right: np.ndarray          # columns are right eigenvectors
    left: np.ndarray           # rows are left eigenvectors, left @ right = I where defined
    residuals: np.ndarray
    defective: np.ndarray      # True where no independent left vector exists


def eigensolve(a, tol: float = 1e-8) -> EigenResult:
    """All eigenvalues with right and bi-orthonormalized left eigenvectors.

    LAPACK's Hessenberg reduction and shifted QR do the work; the residual
    contract ||A v - lambda v|| / ||v|| < tol * max(1, ||A||) is enforced here.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("eigensolve needs a square matrix")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    n = a.shape[0]
    if n == 0:
        return EigenResult(np.zeros(0, complex), np.zeros((0, 0), complex),
                           np.zeros((0, 0), complex), np.zeros(0), np.zeros(0, bool))
    scale = max(1.0, np.linalg.norm(a, 2))

    def solve(m):
        try:
            lam, vl, vr = scipy.linalg.eig(m, left=True, right=True)
        except np.linalg.LinAlgError as exc:
            raise EigenError(f"QR iteration failed to converge: {exc}") from exc
        vr = vr / np.linalg.norm(vr, axis=0)
        return lam, vl, vr, np.linalg.norm(a @ vr - vr * lam, axis=0)

    lam, vl, vr, res = solve(a)
    if np.any(res > tol * scale):
        # balancing can break down on entries many decades below the rest;
        # such entries are far below working accuracy, so drop them and retry
        tiny = np.abs(a) < 1e-20 * np.abs(a).max()
        if tiny.any():
            lam, vl, vr, res = solve(np.where(tiny, 0.0, a))
    if np.any(res > tol * scale):
        raise EigenError(f"eigen residual {res.max():.2e} exceeds contract")
    if np.linalg.cond(vr) < 1e10:
        # a full independent set: the inverse is the bi-orthonormal left basis,
        # repeated eigenvalues included
        return EigenResult(lam, vr, np.linalg.inv(vr), res, np.zeros(n, bool))
    left = vl.conj().T
    dots = np.einsum("ij,ji->i", left, vr)
    defective = np.abs(dots) < 1e-10 * np.linalg.norm(left, axis=1)
    safe = np.where(defective, 1.0, dots)
    left = left / safe[:, None]
    return EigenResult(lam, vr, left, res, defective)


def participation_factors(right_vec, left_vec) -> np.ndarray:
    """Complex participation p_k = phi_k * psi_k; sums to 1 for a matched pair."""
    p = np.asarray(right_vec) * np.asarray(left_vec)
    total = p.sum()
    if abs(total) < 1e-10:
        raise EigenError("defective eigenvalue: left and right vectors are orthogonal")
    return p / total


def damping_ratio(sigma: float, omega: float) -> float:
    mag = math.hypot(sigma, omega)
    if mag == 0.0:
        return 1.0
    return -sigma / mag


def damping_improvement(zeta_before: float, zeta_after: float) -> float:
    if zeta_before == 0:
        raise ValueError("baseline damping ratio must be nonzero")
    return 100.0 * (zeta_after - zeta_before) / abs(zeta_before)


@dataclass
class Mode:
    eigenvalue: complex
    damping: float
    freq_hz: float
    shape: np.ndarray | None = None
    participation: np.ndarray | None = None
    classification: str = "non-oscillatory"
    area: int | None = None
    speed_shape: dict = field(default_factory=dict)
    rotor_share: float = 0.0

    @property
    def sigma(self) -> float:
        return self.eigenvalue.real

    @property
    def omega(self) -> float:
        return self.eigenvalue.imag


def modal_metrics(eigenvalue: complex, right=None, left=None) -> Mode:
    lam = complex(eigenvalue)
    if lam.imag < 0:
        lam = lam.conjugate()
        right = None if right is None else np.conj(right)
        left = None if left is None else np.conj(left)
    part = None
    if right is not None and left is not None:
        try:
            part = participation_factors(right, left)
        except EigenError:
            part = None
    return Mode(lam, damping_ratio(lam.real, lam.imag), lam.imag / (2 * math.pi),
                None if right is None else np.asarray(right), part)


def _angle_between(a: complex, b: complex) -> float:
    return abs(math.degrees(cmath.phase(a / b)))


def classify_mode(mode_shape: dict, machine_map: dict, freq_hz: float | None = None,
                  band=(0.1, 3.0), separation_deg: float = 90.0) -> tuple[str, int | None]:
    """Classify from machine speed components.

    ``mode_shape`` maps machine name to its complex speed component and
    ``machine_map`` maps machine name to area. Returns (class, area) where area
    is set for intra-area modes.
    """
    if freq_hz is not None and freq_hz <= 0:
        return "non-oscillatory", None
    if freq_hz is not None and not band[0] <= freq_hz <= band[1]:
        return "control", None
    comps = {m: complex(c) for m, c in mode_shape.items() if m in machine_map}
    if not comps:
        return "control", None
    peak = max(abs(c) for c in comps.values())
    if peak == 0:
        return "control", None
    comps = {m: c / peak for m, c in comps.items()}
    areas = sorted({machine_map[m] for m in comps})
    centroid = {a: sum(c for m, c in comps.items() if machine_map[m] == a) for a in areas}
    spread = {a: sum(abs(c) for m, c in comps.items() if machine_map[m] == a) for a in areas}

    # inter-area: each area swings coherently and the area centroids oppose
    if len(areas) >= 2:
        big = [a for a in areas if abs(centroid[a]) > 0.1]
        coherent = all(abs(centroid[a]) >= 0.5 * spread[a] for a in big)
        if len(big) >= 2 and coherent:
            for i, a in enumerate(big):
                for b in big[i + 1:]:
                    if _angle_between(centroid[a], centroid[b]) > separation_deg:
                        return "inter-area", None

    # intra-area: opposition between significant machines of one area
    best = None
    for a in areas:
        members = [c for m, c in comps.items() if machine_map[m] == a and abs(c) > 0.3]
        for i, c1 in enumerate(members):
            for c2 in members[i + 1:]:
                if _angle_between(c1, c2) > separation_deg:
                    energy = sum(abs(c) ** 2 for m, c in comps.items() if machine_map[m] == a)
                    if best is None or energy > best[1]:
                        best = (a, energy)
    if best is not None:
        return "intra-area", best[0]
    return "control", None


def transfer_function(model: StateSpaceModel, s: complex, eigenvalues=None) -> np.ndarray:
    """C (sI - A)^-1 B + D by a linear solve."""
    lam = np.linalg.eigvals(model.A) if eigenvalues is None else np.asarray(eigenvalues)
    if lam.size and np.min(np.abs(lam - s)) < 1e-9:
        raise NearSingularError(f"s = {s} is within 1e-9 of an eigenvalue")
    n = model.A.shape[0]
    x = np.linalg.solve(s * np.eye(n) - model.A, model.B.astype(complex))
    return model.C @ x + model.D


def residue(model: StateSpaceModel, eig: EigenResult, k: int, output: int = 0,
            input: int = 0) -> complex:
    """Residue of the (output, input) channel at eigenvalue ``k``."""
    return complex((model.C[output] @ eig.right[:, k]) * (eig.left[k] @ model.B[:, input]))


def is_small_signal_stable(values, zero_tol: float = ZERO_MODE_TOL) -> bool:
    """Every eigenvalue in the open left half plane, ignoring the angle-reference modes."""
    vals = np.asarray(values)
    return bool(np.all((vals.real < 0) | (np.abs(vals) < zero_tol)))


def analyze_modes(model: StateSpaceModel, machine_map: dict, band=(0.1, 3.0),
                  separation_deg: float = 90.0, rotor_share_min: float = 0.2,
                  eig: EigenResult | None = None) -> list[Mode]:
    """One Mode per real eigenvalue or conjugate pair, classified.

    A mode counts as electromechanical only if rotor angle and speed states
    carry at least ``rotor_share_min`` of its participation magnitude.
    """
    eig = eig or eigensolve(model.A)
    names = model.state_names
    speed_idx = {m: names.index(f"{m}.dw") for m in machine_map}
    rotor_idx = [i for i, nm in enumerate(names)
                 if nm.rsplit(".", 1)[0] in machine_map and nm.rsplit(".", 1)[1] in ("delta", "dw")]
    modes = []
    for k, lam in enumerate(eig.values):
        if lam.imag < -1e-12 * max(1.0, abs(lam)):
            continue
        left = None if eig.defective[k] else eig.left[k]
        mode = modal_metrics(lam, eig.right[:, k], left)
        shape = eig.right[:, k]
        sp = {m: shape[i] for m, i in speed_idx.items()}
        if sp:
            ref = max(sp.values(), key=abs)
            if abs(ref) > 0:
                rot = abs(ref) / ref
                shape = shape * rot
                sp = {m: c * rot for m, c in sp.items()}
        mode.shape = shape
        mode.speed_shape = sp
        if mode.participation is not None:
            mag = np.abs(mode.participation)
            mode.rotor_share = float(mag[rotor_idx].sum() / mag.sum()) if mag.sum() > 0 else 0.0
        if abs(lam) < ZERO_MODE_TOL or abs(lam.imag) <= 1e-9 * max(1.0, abs(lam)):
            mode.classification = "non-oscillatory"
        elif mode.participation is None or mode.rotor_share < rotor_share_min:
            mode.classification = "control"
        else:
            mode.classification, mode.area = classify_mode(sp, machine_map, mode.freq_hz, band,
                                                           separation_deg)
        modes.append(mode)
    modes.sort(key=lambda m: (m.freq_hz, m.sigma))
    return modes


def electromechanical(modes: list[Mode]) -> list[Mode]:
    return [m for m in modes if m.classification in ("inter-area", "intra-area")]


def inter_area(modes: list[Mode]) -> Mode:
    cand = [m for m in modes if m.classification == "inter-area"]
    if not cand:
        raise LookupError("no inter-area mode found")
    return max(cand, key=lambda m: m.rotor_share)


def _wrap_deg(a: float) -> float:
    return (a + 180.0) % 360.0 - 180.0


def lead_lag_for_phase(phase_deg: float, omega: float, stages: int = 2) -> list[tuple[float, float]]:
    """Equal lead (or lag) stages giving ``phase_deg`` in total at ``omega`` rad/s.

    Each stage (1 + s Tn) / (1 + s Td) has its peak phase at omega.
    """
    per = math.radians(phase_deg / stages)
    if abs(per) >= math.radians(75):
        raise ValueError(f"{phase_deg:.1f} deg is too much for {stages} stages")
    alpha = (1 + math.sin(per)) / (1 - math.sin(per))
    td = 1.0 / (omega * math.sqrt(alpha))
    return [(alpha * td, td)] * stages


@dataclass
class DampingDesign:
    k: float
    tw: float
    t1n: float
    t1d: float
    t2n: float
    t2d: float
    residue: complex
    omega: float
    loop_phase_deg: float     # angle of residue * controller at j*omega
    predicted_shift: complex

    def stack_params(self) -> dict:
        return {"k": self.k, "tw": self.tw, "t1n": self.t1n, "t1d": self.t1d,
                "t2n": self.t2n, "t2d": self.t2d}


def design_damping_controller(model: StateSpaceModel, mode_index: int, eig: EigenResult,
                              shift: float, tw: float = 10.0, input: str | None = None,
                              output: str | None = None) -> DampingDesign:
    """Phase-compensate the loop ``output -> controller -> input`` at one mode.

    The open-loop residue R gives the first-order eigenvalue shift
    R * H(lambda) for a feedback controller H. The lead-lag pair is chosen so
    R * H(j*omega) points along the negative real axis, and the gain so its
    magnitude equals ``shift`` (a positive number, 1/s).
    """
    i = 0 if input is None else model.input_names.index(input)
    o = 0 if output is None else model.output_names.index(output)
    lam = eig.values[mode_index]
    if lam.imag < 0:
        lam = lam.conjugate()
        mode_index = int(np.argmin(np.abs(eig.values - lam)))
    omega = lam.imag
    r = residue(model, eig, mode_index, o, i)
    if abs(r) == 0:
        raise ValueError("mode is uncontrollable or unobservable through this loop")
    s = 1j * omega
    wash = s * tw / (1 + s * tw)
    need = _wrap_deg(180.0 - math.degrees(cmath.phase(r * wash)))
    sign = 1.0
    if abs(need) > 120.0:
        sign = -1.0
        need = _wrap_deg(need - 180.0)
    (t1n, t1d), (t2n, t2d) = lead_lag_for_phase(need, omega)
    h_unit = wash * (1 + s * t1n) / (1 + s * t1d) * (1 + s * t2n) / (1 + s * t2d)
    k = sign * shift / abs(r * h_unit)
    loop = r * k * h_unit
    return DampingDesign(k, tw, t1n, t1d, t2n, t2d, r, omega,
                         math.degrees(cmath.phase(loop)), loop)
