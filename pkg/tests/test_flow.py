import numpy as np
import pytest
from hypothesis import given, strategies as st

from glmcf.angle import GraphState
from glmcf.errors import MaximumPrincipleViolation
from glmcf.flow import (CompanionState, FlowConfig, companion_step, flow_rhs, plan_steps, recenter, run_flow,
                        stable_dt, step_rk4)
from glmcf.geometry import MetricSpec, PeriodicGrid, build_metric
from glmcf.monitors import MonitorSuite

from conftest import conformal, flat


def sin_state(m, amp=0.05, c=None):
    q = m.grid.coords()[0]
    n = m.dim
    return GraphState.initial(np.zeros(n) if c is None else np.asarray(c, float), np.zeros(m.grid.shape),
                              amp * np.sin(q))


@pytest.mark.parametrize("kw", [dict(cfl=0.0), dict(cfl=0.6), dict(t_max=0.0), dict(sample_every=-1)])
def test_flow_config_rejects(kw):
    with pytest.raises(ValueError):
        FlowConfig(**kw)


def test_companion_state_must_be_positive():
    with pytest.raises(MaximumPrincipleViolation):
        CompanionState(np.array([1.0, 0.0]))


def test_rhs_examples():
    m = flat(N=16)
    s = GraphState.initial(np.array([0.3, 0.2]), np.zeros(m.grid.shape), np.zeros(m.grid.shape))
    assert not np.any(flow_rhs(s, m))
    m1 = flat(n=1, N=128)
    q = m1.grid.coords()[0]
    s1 = sin_state(m1, 0.1)
    assert np.max(np.abs(flow_rhs(s1, m1) - np.arctan(-0.1 * np.sin(q)))) < 1e-7
    # a constant shift only perturbs the stencil by rounding
    assert np.max(np.abs(flow_rhs(s1, m1) - flow_rhs(s1.with_u(s1.u + 3.0, 0.0), m1))) <= 1e-12


def test_stable_dt_examples():
    m = flat(N=64)
    h = 2 * np.pi / 64
    assert stable_dt(m, 0.2) == pytest.approx(0.2 * h * h / 4, rel=1e-15)
    c = conformal(N=64)
    # sup g^{-1} = exp(-2 min f) = exp(0.2) over the grid
    fmin = np.min(0.1 * np.sin(c.grid.coords()[0]))
    assert stable_dt(c, 0.2) == pytest.approx(0.2 * h * h / 4 * np.exp(2 * fmin), rel=1e-12)
    assert stable_dt(c, 0.2) / stable_dt(m, 0.2) == pytest.approx(np.exp(-0.2), rel=1e-12)
    with pytest.raises(ValueError):
        stable_dt(m, 0.0)


def test_rk4_exact_on_constant_rhs():
    m = conformal(N=16)
    s = GraphState.initial(np.array([0.3, 0.0]), np.zeros(m.grid.shape), np.zeros(m.grid.shape))
    dt = stable_dt(m, 0.2)
    theta = flow_rhs(s, m)
    out = step_rk4(s, m, dt)
    assert np.max(np.abs(out.u - (s.u + theta * dt))) <= 1e-13
    assert out.t == dt
    np.testing.assert_array_equal(out.harmonic, s.harmonic)
    np.testing.assert_array_equal(out.base_potential, s.base_potential)


def test_rk4_matches_substepped_euler():
    m = flat(n=1, N=32)
    s = sin_state(m)
    dt = stable_dt(m, 0.2)
    r = step_rk4(s, m, dt).u

    def euler(nsub):
        u, h = s.u.copy(), dt / nsub
        for _ in range(nsub):
            u = u + h * flow_rhs(s.with_u(u, 0.0), m)
        return u

    e100, e200 = euler(100), euler(200)
    # the gap to the Euler oracle is its own first-order error, which halves with the substep
    d100, d200 = np.max(np.abs(r - e100)), np.max(np.abs(r - e200))
    assert d100 / d200 == pytest.approx(2.0, rel=0.01)
    assert np.max(np.abs(r - (2 * e200 - e100))) <= 1e-12


def test_rk4_step_doubling_local_order():
    m = flat(n=1, N=32)
    s = sin_state(m)
    gaps = []
    for dt in (stable_dt(m, 0.2), 2 * stable_dt(m, 0.2)):
        full = step_rk4(s, m, dt).u
        half = step_rk4(step_rk4(s, m, dt / 2), m, dt / 2).u
        gaps.append(np.max(np.abs(full - half)))
    assert gaps[1] / gaps[0] >= 24  # 2^5 for a fifth-order local error


def test_temporal_convergence_richardson():
    m = flat(n=1, N=32)
    s = sin_state(m)
    dt = stable_dt(m, 0.5)
    T = 64 * dt

    def run(h):
        x = s
        for _ in range(int(round(T / h))):
            x = step_rk4(x, m, h)
        return x.u

    a, b, c = run(dt), run(dt / 2), run(dt / 4)
    assert np.max(np.abs(a - b)) / np.max(np.abs(b - c)) >= 12


def test_run_flow_special_lagrangian_converges_at_first_sample():
    m = flat(N=16)
    s = GraphState.initial(np.array([0.3, 0.2]), np.zeros(m.grid.shape), np.zeros(m.grid.shape))
    tr = run_flow(s, m, FlowConfig(t_max=1.0))
    assert tr.termination == "converged" and len(tr.samples) == 1 and tr.steps == 0


def test_run_flow_1d_converges_to_constant():
    m = flat(n=1, N=32)
    tr = run_flow(sin_state(m), m, FlowConfig(t_max=60.0, osc_tol=1e-10))
    assert tr.termination == "converged"
    assert tr.samples[-1].osc_theta <= 1e-10
    u = tr.final_state.u
    assert np.max(u) - np.min(u) <= 1e-9


def test_run_flow_huge_data_never_silent():
    m = flat(N=16)
    q1, q2 = m.grid.coords()
    s = GraphState.initial(np.zeros(2), np.zeros(m.grid.shape), 10.0 * np.sin(q1) * np.sin(q2))
    tr = run_flow(s, m, FlowConfig(t_max=0.5), dt=50 * stable_dt(m, 0.2), sample_every=1)
    assert tr.termination in ("diverged", "t_max")
    if tr.termination == "t_max":
        assert np.all(np.isfinite(tr.final_state.u))
    else:
        assert tr.message


def test_run_flow_time_grid_and_samples():
    m = flat(N=16)
    cfg = FlowConfig(t_max=2.0, osc_tol=0.0, samples_per_unit=4)
    dt, every = plan_steps(m, cfg)
    assert abs(round(1 / (dt * every)) - 4) == 0
    tr = run_flow(sin_state(m), m, cfg)
    assert tr.termination == "t_max"
    np.testing.assert_allclose(tr.times, np.arange(9) / 4, atol=1e-13)


def test_run_flow_osc_nonincreasing():
    m = conformal(N=16)
    s = sin_state(m, 0.1, c=(0.3, 0.0))
    tr = run_flow(s, m, FlowConfig(t_max=3.0), MonitorSuite.light())
    osc = tr.series("osc_theta")
    t = tr.times
    assert np.all(np.diff(osc) <= 1e-8 * np.diff(t))
    assert np.all(np.diff(tr.series("theta_dot_sup")) <= 1e-15)
    assert np.all(np.diff(tr.series("theta_dot_inf")) >= -1e-15)


def test_companion_constant_unchanged():
    m = conformal(N=16)
    v = CompanionState(np.ones(m.grid.shape))
    out = companion_step(v, m.g_inv, m, stable_dt(m, 0.2))
    assert np.max(np.abs(out.v - 1.0)) <= 1e-14


def test_companion_heat_mode_decay():
    m = flat(N=32)
    q1 = m.grid.coords()[0]
    v = CompanionState(1.0 + 0.5 * np.cos(q1))
    dt = 1.0 / np.ceil(1.0 / stable_dt(m, 0.2))
    for _ in range(int(round(1.0 / dt))):
        v = companion_step(v, m.g_inv, m, dt)
    assert v.t == pytest.approx(1.0)
    # exact decay rate of the mode under the composed first-derivative stencil
    h = m.grid.spacing
    sigma = ((8 * np.sin(h) - np.sin(2 * h)) / (6 * h)) ** 2
    assert np.max(np.abs(v.v - (1.0 + 0.5 * np.exp(-sigma) * np.cos(q1)))) <= 1e-9
    assert np.max(np.abs(v.v - (1.0 + 0.5 * np.exp(-1.0) * np.cos(q1)))) <= 5e-5


@given(st.integers(0, 2 ** 32 - 1))
def test_companion_discrete_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    m = conformal(N=16)
    q1, q2 = m.grid.coords()
    a = rng.uniform(-0.4, 0.4, size=3)
    v = CompanionState(1.0 + a[0] * np.cos(q1) + a[1] * np.sin(q2) + a[2] * np.cos(q1 + q2))
    dt = stable_dt(m, 0.2)
    for _ in range(5):
        w = companion_step(v, m.g_inv, m, dt)
        assert np.max(w.v) <= np.max(v.v) * (1 + 1e-15)
        assert np.min(w.v) >= np.min(v.v) * (1 - 1e-15)
        v = w


def test_companion_positivity_error():
    m = flat(N=16)
    q1 = m.grid.coords()[0]
    v = CompanionState(1.0 + 0.99 * np.cos(3 * q1))
    with pytest.raises(MaximumPrincipleViolation):
        companion_step(v, m.g_inv, m, 100 * stable_dt(m, 0.2))


def test_recenter_examples():
    m = flat(N=16)
    u, mean = recenter(np.full(m.grid.shape, 2.5), m)
    assert mean == pytest.approx(2.5, abs=1e-15) and np.max(np.abs(u)) <= 1e-15
    s = np.sin(m.grid.coords()[0])
    u, mean = recenter(s, m)
    assert abs(mean) <= 1e-15 and np.max(np.abs(u - s)) <= 1e-15


def test_recenter_conformal_double_resolution():
    f = "0.1*sin(q1)"
    c = conformal(N=32, f=f)
    fine = conformal(N=64, f=f)

    def u_of(m):
        q1, q2 = m.grid.coords()
        return np.cos(q1) + 0.3 * np.sin(q1) * np.cos(q2)

    ut, mean = recenter(u_of(c), c)
    w = np.exp(2 * 0.1 * np.sin(fine.grid.coords()[0]))
    ref = np.sum(u_of(fine) * w) / np.sum(w)
    assert abs(mean - ref) <= 1e-10
    w32 = np.sqrt(np.linalg.det(np.moveaxis(c.g, (0, 1), (-2, -1))))
    assert abs(np.sum(ut * w32) / np.sum(w32)) <= 1e-13


def test_diagonal_metric_flow_runs():
    m = build_metric(MetricSpec.from_strings("diagonal", 2, d=("1+0.2*sin(q2)", "1+0.1*cos(q1)")),
                     PeriodicGrid(2, 16))
    tr = run_flow(sin_state(m, 0.05, c=(0.3, 0.2)), m, FlowConfig(t_max=0.5))
    assert tr.termination in ("t_max", "converged")
    assert np.all(np.diff(tr.series("osc_theta")) <= 1e-8)
