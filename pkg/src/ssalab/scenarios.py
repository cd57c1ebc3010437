"""Study cases: assembling the four configurations and running the scenario matrix."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import config_hash, load_config
from .devices.controllers import LeadLagStack
from .devices.dfig import (DcLinkParams, Dfig, DfigParams, GscParams, PccVoltageController,
                           PllParams, RscParams)
from .devices.synchronous import ExciterParams, InitializationError, MachineParams, SyncMachine
from .network import Branch, Bus, FaultOverlay, Network, network_from_config
from .smallsignal import (CLASSES, EigenResult, Mode, StateSpaceModel, analyze_modes,
                          damping_improvement, eigensolve, inter_area, is_small_signal_stable,
                          linearize_system)
from .steadystate import OperatingPoint, initialize_devices, solve_power_flow
from .system import PowerSystem, tie_line
from .timedomain import RingdownError, SimulationRun, identify_ringdown_modes, simulate

SITINGS = ("none", "g4", "l1")
STUDY_PENETRATIONS = (0.10, 0.25, 0.35)


class ScenarioError(RuntimeError):
    pass


@dataclass(frozen=True)
class FaultSpec:
    bus: int = 8
    t_on: float = 1.0
    t_off: float = 1.2
    admittance: float = 1.0e6


@dataclass(frozen=True)
class ScenarioConfig:
    case: int
    penetration: float = 0.0
    siting: str = "none"
    pss: bool = False
    voltage_controller: bool = False
    sdc: bool = False
    fault: FaultSpec | None = None      # None: take the config's fault block
    timedomain: bool = False

    def __post_init__(self):
        if self.case not in (1, 2, 3, 4):
            raise ValueError(f"case must be 1..4, got {self.case}")
        if self.siting not in SITINGS:
            raise ValueError(f"unknown siting {self.siting!r}")
        if not 0.0 <= self.penetration <= 0.35 + 1e-12:
            raise ValueError("penetration must lie in [0, 0.35]")
        if self.case == 1 and (self.siting != "none" or self.penetration != 0.0):
            raise ValueError("case 1 has no wind farm")
        if self.case in (2, 3) and (self.voltage_controller or self.sdc):
            raise ValueError("cases 2 and 3 apply no controls to the wind farm")
        if self.case == 2 and self.siting != "g4":
            raise ValueError("case 2 places the wind farm next to G4")
        if self.case in (3, 4) and self.siting != "l1":
            raise ValueError(f"case {self.case} places the wind farm next to L1")
        if self.case == 4 and not (self.voltage_controller and self.sdc):
            raise ValueError("case 4 runs with both wind farm controllers on")
        if self.case > 1 and self.penetration <= 0.0:
            raise ValueError(f"case {self.case} needs a positive penetration")

    @classmethod
    def for_case(cls, case: int, penetration: float | None = None, pss: bool = False,
                 **kw) -> "ScenarioConfig":
        """Fill in the case-mandated siting and controller switches."""
        if case == 1:
            return cls(1, 0.0, "none", pss, **kw)
        pen = 0.25 if penetration is None else penetration
        if case == 2:
            return cls(2, pen, "g4", pss, **kw)
        if case == 3:
            return cls(3, pen, "l1", pss, **kw)
        return cls(4, pen, "l1", pss, True, True, **kw)

    @property
    def label(self) -> str:
        ctrl = "vc+sdc" if self.sdc and self.voltage_controller else \
            "vc" if self.voltage_controller else "sdc" if self.sdc else "none"
        return (f"case{self.case}_pen{round(self.penetration * 100):02d}_"
                f"pss{'on' if self.pss else 'off'}_{ctrl}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Case:
    config: ScenarioConfig
    network: Network
    system: PowerSystem
    op: OperatingPoint
    machine_areas: dict
    wind_bus: int | None = None


def fault_from_config(cfg: dict) -> FaultSpec:
    f = cfg.get("fault", {})
    d = FaultSpec()
    return FaultSpec(int(f.get("bus", d.bus)), float(f.get("t_on", d.t_on)),
                     float(f.get("t_off", d.t_off)), float(f.get("admittance", d.admittance)))


def _stack(d: dict) -> LeadLagStack:
    return LeadLagStack(d["k"], d["tw"], d["t1n"], d["t1d"], d["t2n"], d["t2d"],
                        d.get("v_max", math.inf), d.get("v_min", -math.inf))


def build_case(sc: ScenarioConfig, cfg: dict | None = None) -> Case:
    """Assemble topology per siting, size and place the wind farm, initialize."""
    cfg = cfg if cfg is not None else load_config()
    net = network_from_config(cfg)
    base = net.base_mva
    f_nom = float(cfg.get("system", {}).get("frequency_hz", 60.0))
    gens = [dict(g) for g in cfg["generators"]]
    wf_cfg = cfg.get("wind_farm", {})
    wind_bus = None
    s_wf = p_wf = 0.0
    site = None
    if sc.siting != "none":
        site = wf_cfg["sites"][sc.siting]
        s_wf = sc.penetration * float(wf_cfg["reference_mva"])
        p_wf = float(wf_cfg.get("loading", 1.0)) * s_wf
        names = [g["name"] for g in gens]
        if site["displaces"] not in names:
            raise ScenarioError(f"unknown displaced machine {site['displaces']}")
        g = gens[names.index(site["displaces"])]
        g["p_mw"] -= p_wf
        if wf_cfg.get("scale_displaced_rating", False):
            g["mva"] -= s_wf
        wind_bus = max(net.bus_ids) + 1
        tr = wf_cfg["transformer"]
        pcc = site["bus"]
        z = complex(tr.get("r", 0.0), tr["x"]) * base / s_wf
        net = net.with_bus(Bus(wind_bus, float(tr.get("base_kv", 0.69)), "pq",
                               area=net.bus(pcc).area),
                           Branch(wind_bus, pcc, z))

    bus_kind = {b.id: b.kind for b in net.buses}
    inj = {}
    v_set = {}
    slack_angle = 0.0
    for g in gens:
        inj[g["bus"]] = inj.get(g["bus"], 0.0) + g["p_mw"] / base
        v_set[g["bus"]] = float(g["v_set"])
        if bus_kind[g["bus"]] == "slack":
            slack_angle = math.radians(float(g.get("angle_deg", 0.0)))
    for ld in net.loads:
        inj[ld.bus] = inj.get(ld.bus, 0.0) - complex(ld.p, ld.q)
    if wind_bus is not None:
        inj[wind_bus] = p_wf / base
    pf = solve_power_flow(net, inj, v_set, slack_angle)

    mc, ec, pc = cfg["machine"], cfg["exciter"], cfg["pss"]
    devices = []
    areas = {}
    for g in gens:
        params = MachineParams(mc["xd"], mc["xq"], mc["xd_p"], mc["xq_p"], mc["ra"],
                               mc["td0_p"], mc["tq0_p"], float(g.get("h", mc.get("h", 6.5))),
                               float(g.get("d", mc.get("d", 0.0))), float(g["mva"]))
        exc = ExciterParams(ec["ka"], ec["ta"], ec.get("efd_max", math.inf),
                            ec.get("efd_min", -math.inf))
        pss = _stack(pc) if sc.pss else None
        devices.append(SyncMachine(g["name"], g["bus"], params, exc, pss, int(g.get("area", 0)),
                                   base, f_nom))
        areas[g["name"]] = int(g.get("area", 0))
    if wind_bus is not None:
        m = wf_cfg["machine"]
        dfig = Dfig("WF", wind_bus, site["bus"],
                    DfigParams(m["rs"], m["rr"], m["lls"], m["llr"], m["lm"], m["h"],
                               m["speed"], m.get("dt", 0.0), s_wf),
                    RscParams(**wf_cfg["rsc"]), GscParams(**wf_cfg["gsc"]),
                    DcLinkParams(**wf_cfg["dclink"]), PllParams(**wf_cfg.get("pll", {})),
                    base, f_nom)
        if sc.voltage_controller:
            vc = wf_cfg["voltage_controller"]
            dfig.attach_voltage_controller(PccVoltageController(
                vc["kp"], vc["ki"], vc.get("out_min", -1.0), vc.get("out_max", 1.0)))
        if sc.sdc:
            dfig.attach_sdc(_stack(wf_cfg["sdc"]))
        devices.append(dfig)
    tie_cfg = cfg.get("tie_line", {"from": 7, "to": 8})
    tie = tie_line(net.branches, tie_cfg["from"], tie_cfg["to"])
    try:
        system, op = initialize_devices(net, pf, devices, tie)
    except InitializationError as exc:
        raise InitializationError(f"{sc.label}: {exc}") from exc
    return Case(sc, net, system, op, areas, wind_bus)


def study_matrix() -> list[ScenarioConfig]:
    """Case 1 with and without PSS, cases 2-3 at each penetration, case 4 at 25%."""
    out = [ScenarioConfig.for_case(1, pss=p) for p in (False, True)]
    for case in (2, 3):
        for pss in (False, True):
            out += [ScenarioConfig.for_case(case, pen, pss) for pen in STUDY_PENETRATIONS]
    out += [ScenarioConfig.for_case(4, 0.25, pss) for pss in (False, True)]
    return out


# (name, comparison, baseline) pairs reported in addition to the per-scenario "base"
HEADLINE_COMPARISONS = (
    ("case2_pen35_pss_vs_case1_pss", ScenarioConfig.for_case(2, 0.35, True),
     ScenarioConfig.for_case(1, pss=True)),
    ("case4_pss_vs_case3_pen25_pss", ScenarioConfig.for_case(4, 0.25, True),
     ScenarioConfig.for_case(3, 0.25, True)),
    ("case4_pss_vs_case1_pss", ScenarioConfig.for_case(4, 0.25, True),
     ScenarioConfig.for_case(1, pss=True)),
    ("case4_pss_vs_case1_nopss", ScenarioConfig.for_case(4, 0.25, True),
     ScenarioConfig.for_case(1, pss=False)),
)

MODE_COLUMNS = ("case", "pss", "controllers", "penetration", "sigma", "omega", "damping",
                "freq_hz", "classification")
_CLASS_ORDER = {c: i for i, c in enumerate(CLASSES)}


def baseline_for(sc: ScenarioConfig) -> ScenarioConfig:
    """The registry's "base": case 1 with the same PSS setting."""
    return ScenarioConfig.for_case(1, pss=sc.pss)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    modes: list = field(default_factory=list)
    inter_area: Mode | None = None
    stable: bool | None = None
    n_states: int = 0
    eigen_residual: float = math.nan
    f_norm: float = math.nan
    run: SimulationRun | None = None
    ringdown: complex | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def summary(self) -> dict:
        d = {"label": self.config.label, "config": self.config.as_dict(), "error": self.error}
        if self.ok:
            ia = self.inter_area
            d.update({
                "n_states": self.n_states,
                "small_signal_stable": self.stable,
                "eigen_residual_max": self.eigen_residual,
                "equilibrium_residual": self.f_norm,
                "inter_area": None if ia is None else {
                    "sigma": ia.sigma, "omega": ia.omega, "damping": ia.damping,
                    "freq_hz": ia.freq_hz},
            })
            if self.run is not None:
                d["timedomain"] = {"truncated": self.run.truncated, "unstable": self.run.unstable,
                                   "diagnostic": self.run.diagnostic,
                                   "events": [list(e) for e in self.run.events]}
            if self.ringdown is not None:
                d["ringdown_mode"] = {"sigma": self.ringdown.real, "omega": self.ringdown.imag}
        return d


@dataclass
class StudyReport:
    results: list = field(default_factory=list)
    improvements: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def failed(self) -> list:
        return [r for r in self.results if not r.ok]

    def result(self, sc: ScenarioConfig) -> ScenarioResult:
        for r in self.results:
            if r.config == sc:
                return r
        raise KeyError(sc.label)

    def mode_rows(self) -> list[dict]:
        rows = []
        for r in self.results:
            if not r.ok:
                continue
            sc = r.config
            ctrl = "+".join(n for n, on in (("vctrl", sc.voltage_controller), ("sdc", sc.sdc)) if on)
            for m in sorted(r.modes, key=lambda m: (_CLASS_ORDER[m.classification], m.freq_hz,
                                                   m.sigma)):
                rows.append({"case": sc.case, "pss": "on" if sc.pss else "off",
                             "controllers": ctrl or "none", "penetration": sc.penetration,
                             "sigma": m.sigma, "omega": m.omega, "damping": m.damping,
                             "freq_hz": m.freq_hz, "classification": m.classification})
        return rows

    def write_modes_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# config_hash: {self.metadata.get('config_hash', '')}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MODE_COLUMNS)
            for row in self.mode_rows():
                w.writerow([row["case"], row["pss"], row["controllers"], f"{row['penetration']:.2f}",
                            f"{row['sigma']:.6f}", f"{row['omega']:.6f}", f"{row['damping']:.6f}",
                            f"{row['freq_hz']:.6f}", row["classification"]])

    def to_json(self) -> dict:
        return {"metadata": self.metadata,
                "scenarios": [r.summary() for r in self.results],
                "improvements": self.improvements}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.write_modes_csv(out / "modes.csv")
        runs = [r for r in self.results if r.ok and r.run is not None]
        header = {"config_hash": self.metadata.get("config_hash", "")}
        for r in runs:
            name = "series.csv" if len(runs) == 1 else f"series_{r.config.label}.csv"
            r.run.to_csv(out / name, dict(header, scenario=r.config.label))
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=2, default=str) + "\n")


def analyze_case(case: Case, cfg: dict) -> tuple[StateSpaceModel, list, EigenResult]:
    modal = cfg.get("modal", {})
    model = linearize_system(case.system, case.op, inputs=[], outputs=[])
    eig = eigensolve(model.A)
    modes = analyze_modes(model, case.machine_areas, tuple(modal.get("em_band_hz", (0.1, 3.0))),
                          float(modal.get("cluster_separation_deg", 90.0)),
                          float(modal.get("rotor_participation_min", 0.2)), eig=eig)
    return model, modes, eig


def run_scenario(sc: ScenarioConfig, cfg: dict | None = None) -> ScenarioResult:
    cfg = cfg if cfg is not None else load_config()
    res = ScenarioResult(sc)
    try:
        case = build_case(sc, cfg)
        model, modes, eig = analyze_case(case, cfg)
        res.modes = modes
        res.n_states = model.A.shape[0]
        res.eigen_residual = float(eig.residuals.max()) if eig.residuals.size else 0.0
        res.f_norm = case.op.f_norm
        res.stable = is_small_signal_stable(eig.values)
        try:
            res.inter_area = inter_area(modes)
        except LookupError:
            res.inter_area = None
        if sc.timedomain:
            sim = cfg.get("simulation", {})
            f = sc.fault or fault_from_config(cfg)
            run = simulate(case.system, case.op.x0,
                           [FaultOverlay(f.t_on, f.t_off, f.bus, complex(f.admittance))],
                           float(sim.get("t_end", 20.0)), float(sim.get("dt", 0.005)))
            res.run = run
            if not run.truncated and run.t[-1] - f.t_off > 8.0:
                try:
                    fit = identify_ringdown_modes(run.t, run.channel("tie.p"),
                                                  (f.t_off + 1.0, run.t[-1]))
                    res.ringdown = fit.dominant()
                except (RingdownError, LookupError):
                    res.ringdown = None
    except Exception as exc:  # recorded per scenario; the study carries on
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def run_study(configs, cfg: dict | None = None) -> StudyReport:
    """Eigen-analysis (and optional fault simulation) for each scenario, plus improvement metrics."""
    cfg = cfg if cfg is not None else load_config()
    started = datetime.now(timezone.utc).isoformat()
    results = [run_scenario(sc, cfg) for sc in configs]
    cache = {r.config: r for r in results}

    def zeta(sc: ScenarioConfig):
        if sc not in cache:
            cache[sc] = run_scenario(sc, cfg)
        r = cache[sc]
        return None if not r.ok or r.inter_area is None else r.inter_area.damping

    improvements = []
    for r in results:
        if not r.ok or r.inter_area is None:
            continue
        base = baseline_for(r.config)
        zb = zeta(base)
        if zb is None or zb == 0 or base == r.config:
            continue
        improvements.append({"scenario": r.config.label, "baseline": "base",
                             "baseline_scenario": base.label, "zeta_before": zb,
                             "zeta_after": r.inter_area.damping,
                             "improvement_pct": damping_improvement(zb, r.inter_area.damping)})
    present = set(cache)
    for name, after, before in HEADLINE_COMPARISONS:
        if after in present and before in present:
            za, zb = zeta(after), zeta(before)
            if za is not None and zb:
                improvements.append({"scenario": after.label, "baseline": name,
                                     "baseline_scenario": before.label, "zeta_before": zb,
                                     "zeta_after": za,
                                     "improvement_pct": damping_improvement(zb, za)})
    meta = {"config_hash": config_hash(cfg), "started": started,
            "finished": datetime.now(timezone.utc).isoformat(), "version": __version__,
            "n_scenarios": len(results), "n_failed": sum(not r.ok for r in results)}
    return StudyReport(results, improvements, meta)
