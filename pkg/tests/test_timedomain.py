import math

import numpy as np
import pytest

from ssalab.devices.synchronous import InfiniteBus
from ssalab.network import Bus, FaultOverlay, Network
from ssalab.scenarios import fault_from_config
from ssalab.system import PowerSystem
from ssalab.timedomain import (RingdownError, SimulationRun, identify_ringdown_modes, simulate,
                               time_grid)


def _fault(cfg):
    f = fault_from_config(cfg)
    return [FaultOverlay(f.t_on, f.t_off, f.bus, complex(f.admittance))], f


def test_time_grid_hits_breakpoints_exactly():
    g = time_grid(3.0, 0.007, (1.0, 1.2))
    assert g[0] == 0.0 and g[-1] == 3.0
    assert 1.0 in g and 1.2 in g
    assert np.all(np.diff(g) > 0) and np.diff(g).max() <= 0.007 + 1e-12
    assert np.array_equal(time_grid(1.0, 0.25), [0.0, 0.25, 0.5, 0.75, 1.0])
    # breakpoints outside the run are ignored
    assert np.array_equal(time_grid(1.0, 0.5, (-1.0, 2.0)), [0.0, 0.5, 1.0])
    with pytest.raises(ValueError):
        time_grid(1.0, 0.0)
    with pytest.raises(ValueError):
        time_grid(-1.0, 0.1)


def test_run_record_validation():
    with pytest.raises(ValueError, match="increasing"):
        SimulationRun(np.array([0.0, 0.0]), {})
    with pytest.raises(ValueError, match="length"):
        SimulationRun(np.array([0.0, 1.0]), {"a": np.zeros(3)})


def test_simulate_rejects_bad_events(case1_pss):
    with pytest.raises(TypeError):
        simulate(case1_pss.system, case1_pss.op.x0, [(1.0, 1.2)], 1.0)
    late = FaultOverlay(2.0, 2.1, 8, 1e6)
    early = FaultOverlay(1.0, 1.1, 8, 1e6)
    with pytest.raises(ValueError, match="sorted"):
        simulate(case1_pss.system, case1_pss.op.x0, [late, early], 3.0)


def test_undisturbed_run_stays_at_equilibrium(case1_pss):
    run = simulate(case1_pss.system, case1_pss.op.x0, (), 20.0, 0.005)
    assert not run.truncated and not run.unstable
    for name, y in run.channels.items():
        assert np.ptp(y) < 1e-6, name
    assert np.abs(run.final_state - case1_pss.op.x0).max() < 1e-6


def test_fault_switching_is_exact(case1, cfg):
    ev, f = _fault(cfg)
    run = simulate(case1.system, case1.op.x0, ev, 2.0, 0.005)
    assert f.t_on in run.t and f.t_off in run.t
    v = run.channel("G1.vt")
    during = (run.t >= f.t_on) & (run.t < f.t_off)
    pre = v[run.t < f.t_on].min()
    assert v[during].max() < pre - 0.05
    # recorded at t_off the network is already restored: the voltage steps back up
    k = np.searchsorted(run.t, f.t_off)
    assert v[k] - v[k - 1] > 0.05
    assert [e[0] for e in run.events] == [f.t_on, f.t_off]
    log = run.event_log()
    assert "fault applied at bus 8" in log and "fault cleared at bus 8" in log


def _decay_rate(run, t0):
    """Log-slope of successive peak-to-trough swings; immune to slow offsets."""
    sel = run.window(t0)
    tt, yy = run.t[sel], run.channel("tie.p")[sel]
    d = np.diff(yy)
    k = np.flatnonzero(np.sign(d[1:]) != np.sign(d[:-1])) + 1
    swing = np.abs(np.diff(yy[k]))
    mid = 0.5 * (tt[k][1:] + tt[k][:-1])
    ok = swing > 1e-2 * swing.max()
    return np.polyfit(mid[ok], np.log(swing[ok]), 1)[0]


def test_unstabilized_system_swings_up_after_fault(case1, cfg):
    ev, f = _fault(cfg)
    run = simulate(case1.system, case1.op.x0, ev, 20.0, 0.005)
    assert not run.truncated
    y = run.channel("tie.p")
    early = np.ptp(y[run.window(f.t_off + 2, f.t_off + 7)])
    late = np.ptp(y[run.window(14.0, 19.0)])
    assert late > early


def test_stabilized_envelope_decays_at_modal_rate(case1_pss, cfg):
    from ssalab.smallsignal import analyze_modes, inter_area, linearize_system

    ev, f = _fault(cfg)
    run = simulate(case1_pss.system, case1_pss.op.x0, ev, 20.0, 0.005)
    model = linearize_system(case1_pss.system, case1_pss.op, inputs=[], outputs=[])
    sigma = inter_area(analyze_modes(model, case1_pss.machine_areas)).sigma
    rate = _decay_rate(run, f.t_off + 1.0)
    assert rate == pytest.approx(sigma, rel=0.10)


def test_step_halving_converges_at_second_order(case1_pss):
    x0 = case1_pss.op.x0.copy()
    x0[case1_pss.system.state_index("G1.dw")] += 1e-3
    finals = [simulate(case1_pss.system, x0, (), 2.0, dt, newton_tol=1e-13).final_state
              for dt in (0.02, 0.01, 0.005)]
    ratio = np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2])
    assert ratio == pytest.approx(4.0, rel=0.15)


class _Ramp:
    """One state rising at unit rate whose model breaks down past 0.5."""

    n_states = 1
    state_names = ["ramp.x"]
    input_names: list = []
    output_names = ["ramp.x"]
    area = 0

    def __init__(self, bus):
        self.name = "ramp"
        self.bus = bus

    def norton(self, x):
        return np.zeros((2, 2)), np.zeros(2)

    def derivatives(self, x, vbus, u=None):
        if x[0] > 0.5:
            raise ValueError("outside the model's range")
        return np.ones(1)

    def outputs(self, x, vbus):
        return {"ramp.x": float(x[0])}


def _ramp_system():
    net = Network([Bus(1, 230.0, "slack")], [])
    grid = InfiniteBus("inf", 1)
    grid.initialize(1.0 + 0j, 0j)
    return PowerSystem(net.ybus(), [grid, _Ramp(1)])


def test_failed_step_truncates_with_diagnostic():
    run = simulate(_ramp_system(), np.zeros(1), (), 2.0, 0.01, max_halvings=3)
    assert run.truncated
    assert "Newton" in run.diagnostic
    assert 0.4 < run.t[-1] <= 0.5 + 1e-9
    assert np.allclose(run.channel("ramp.x"), run.t)
    assert "truncated" in run.event_log()


def test_separating_rotors_are_flagged(case1, cfg):
    x0 = case1.op.x0.copy()
    x0[case1.system.state_index("G1.dw")] += 0.05
    run = simulate(case1.system, x0, (), 3.0, 0.005)
    assert run.unstable
    assert run.unstable_time is not None and run.unstable_time < 3.0
    assert "separation" in run.event_log()


def test_series_csv_layout(tmp_path, case1_pss):
    run = simulate(case1_pss.system, case1_pss.op.x0, [FaultOverlay(0.1, 0.15, 8, 1e6)], 0.2, 0.05)
    path = tmp_path / "series.csv"
    run.to_csv(path, {"config_hash": "abc"})
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash: abc"
    assert lines[1].startswith("# event t=0.100000 fault applied")
    header = lines[3].split(",")
    assert header[0] == "t" and header[1:] == sorted(run.channels)
    body = lines[4:]
    assert len(body) == run.t.size
    assert [float(r.split(",")[0]) for r in body] == pytest.approx(run.t)


# ringdown identification

def _signal(lam, t, amp=1.0):
    return amp * np.exp(lam.real * t) * np.cos(lam.imag * t)


def test_ringdown_recovers_a_single_damped_mode():
    t = np.arange(0.0, 12.0, 0.01)
    fit = identify_ringdown_modes(t, _signal(-0.5 + 4j, t))
    lam = fit.dominant()
    assert abs(lam - (-0.5 + 4j)) < 1e-3
    assert not fit.low_confidence and fit.residual < 1e-6


def test_ringdown_separates_two_modes():
    t = np.arange(0.0, 15.0, 0.01)
    y = _signal(-0.3 + 3.8j, t) + 0.4 * _signal(-1.0 + 7.5j, t)
    fit = identify_ringdown_modes(t, y)
    got = sorted((lam for lam, _ in fit.oscillatory()), key=lambda z: z.imag)
    assert len(got) == 2
    assert abs(got[0] - (-0.3 + 3.8j)) < 1e-3 and abs(got[1] - (-1.0 + 7.5j)) < 1e-3
    assert fit.oscillatory()[0][1] == pytest.approx(1.0, rel=1e-3)


def test_ringdown_of_a_constant_has_no_oscillation():
    t = np.arange(0.0, 10.0, 0.01)
    assert identify_ringdown_modes(t, np.zeros_like(t)).modes == []
    fit = identify_ringdown_modes(t, np.full_like(t, 2.0))
    assert fit.oscillatory() == []
    with pytest.raises(LookupError):
        fit.dominant()


def test_ringdown_input_checks():
    t = np.arange(0.0, 4.0, 0.01)
    with pytest.raises(RingdownError, match="four cycles"):
        identify_ringdown_modes(t, np.cos(4 * t))
    with pytest.raises(RingdownError, match="few samples"):
        identify_ringdown_modes(t[:5], t[:5])
    tt = np.sort(np.random.default_rng(0).uniform(0, 12, 800))
    with pytest.raises(RingdownError, match="uniform"):
        identify_ringdown_modes(tt, np.cos(4 * tt))


def test_noisy_ringdown_is_flagged():
    t = np.arange(0.0, 12.0, 0.01)
    rng = np.random.default_rng(5)
    y = _signal(-0.5 + 4j, t) + rng.normal(scale=0.3, size=t.size)
    fit = identify_ringdown_modes(t, y, order=2)
    assert fit.low_confidence


def test_ringdown_window_selects_samples():
    t = np.arange(0.0, 20.0, 0.01)
    y = np.where(t < 5.0, 3.0, _signal(-0.2 + 5j, t - 5.0))
    lam = identify_ringdown_modes(t, y, window=(5.0, 20.0)).dominant()
    assert abs(lam - (-0.2 + 5j)) < 1e-3
    assert math.isclose(lam.imag / (2 * math.pi), 5 / (2 * math.pi), rel_tol=1e-4)
