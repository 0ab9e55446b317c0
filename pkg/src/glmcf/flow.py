"""Explicit method-of-lines integration of u_t = theta(chi_hat + du).

Also carries the linear companion equation v_t = eta^{ij} v_{ij} (with eta
taken from the flow) and the mean-free recentring of u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .angle import GraphState, angle_bundle, angle_eigenvalues, chi_prime, induced_metric
from .errors import DivergenceError, MaximumPrincipleViolation
from .geometry import MetricField, covariant_hessian, to_points, weighted_mean

LAMBDA_DIVERGENCE = 10.0


@dataclass
class FlowConfig:
    cfl: float = 0.2
    t_max: float = 10.0
    osc_tol: float = 1e-10
    sample_every: int = 0  # steps; 0 picks it from samples_per_unit
    checkpoint_every: int = 0  # steps; 0 disables
    samples_per_unit: int = 10

    def __post_init__(self):
        if not 0.0 < self.cfl <= 0.5:
            raise ValueError(f"cfl must lie in (0, 0.5], got {self.cfl}")
        if not self.t_max > 0.0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if self.sample_every < 0 or self.checkpoint_every < 0 or self.samples_per_unit < 1:
            raise ValueError("sample_every, checkpoint_every must be >= 0 and samples_per_unit >= 1")


@dataclass(frozen=True, eq=False)
class CompanionState:
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not np.min(self.v) > 0.0:
            raise MaximumPrincipleViolation(f"companion solution not positive (min v = {np.min(self.v):.3e})")


# ---------------------------------------------------------------------------


def _rhs(state: GraphState, m: MetricField) -> tuple[np.ndarray, float, np.ndarray]:
    cp = chi_prime(state, m)
    lam = angle_eigenvalues(cp, m)
    theta = np.sum(np.arctan(lam), axis=0)
    return theta, float(np.max(np.abs(lam))), cp


def flow_rhs(state: GraphState, m: MetricField) -> np.ndarray:
    """du/dt = theta(chi_hat + du)."""
    return _rhs(state, m)[0]


def stable_dt(m: MetricField, cfl: float) -> float:
    """cfl h^2 / (2 n sup lambda_max(g^{-1})); eta >= g bounds eta^{-1} by g^{-1}."""
    if not 0.0 < cfl <= 0.5:
        raise ValueError(f"cfl must lie in (0, 0.5], got {cfl}")
    n = m.dim
    if m.is_flat:
        gmax = 1.0
    else:
        gmax = float(np.max(np.linalg.eigvalsh(to_points(m.g_inv, n, 2))[:, -1]))
    return cfl * m.grid.spacing ** 2 / (2.0 * n * gmax)


def step_rk4(state: GraphState, m: MetricField, dt: float, step: int | None = None,
             k1: np.ndarray | None = None) -> GraphState:
    """Classical four-stage update of u; c and phi_hat are untouched."""
    u = state.u
    if k1 is None:
        k1 = flow_rhs(state, m)
    k2 = flow_rhs(state.with_u(u + 0.5 * dt * k1, state.t), m)
    k3 = flow_rhs(state.with_u(u + 0.5 * dt * k2, state.t), m)
    k4 = flow_rhs(state.with_u(u + dt * k3, state.t), m)
    new = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise DivergenceError(f"non-finite potential at step {step}", step)
    return state.with_u(new, state.t + dt)


def _companion_rhs(v: np.ndarray, eta_inv: np.ndarray, m: MetricField) -> np.ndarray:
    return np.einsum("ij...,ij...->...", eta_inv, covariant_hessian(v, m))


def companion_step(v: CompanionState, eta_inv: np.ndarray, m: MetricField, dt: float) -> CompanionState:
    """RK4 for v_t = eta^{ij} v_{ij} with eta frozen over the step."""
    x = v.v
    k1 = _companion_rhs(x, eta_inv, m)
    k2 = _companion_rhs(x + 0.5 * dt * k1, eta_inv, m)
    k3 = _companion_rhs(x + 0.5 * dt * k2, eta_inv, m)
    k4 = _companion_rhs(x + dt * k3, eta_inv, m)
    new = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.min(new) > 0.0:
        raise MaximumPrincipleViolation(
            f"companion lost positivity at t={v.t + dt:.6g} (min v = {np.min(new):.3e}); dt too large?")
    return CompanionState(new, v.t + dt)


def recenter(u: np.ndarray, m: MetricField) -> tuple[np.ndarray, float]:
    """u - (integral u dV_g) / (integral dV_g)."""
    mean = weighted_mean(u, m)
    return u - mean, mean


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    samples: list = field(default_factory=list)
    termination: str = ""
    final_state: GraphState | None = None
    dt: float = 0.0
    steps: int = 0
    states: list = field(default_factory=list)  # (GraphState, AngleBundle) kept on request
    companion: list = field(default_factory=list)  # (t, v, eta_inv)
    companion_violations: int = 0
    final_companion: CompanionState | None = None
    checkpoint_path: str | None = None
    message: str = ""

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.samples])


def plan_steps(m: MetricField, cfg: FlowConfig) -> tuple[float, int]:
    """Time step and sample stride.

    With ``sample_every == 0`` the step is shrunk so that every integer time
    is a sample time (needed for per-unit contraction ratios).
    """
    dt0 = stable_dt(m, cfg.cfl)
    if cfg.sample_every:
        return dt0, cfg.sample_every
    per_sample = math.ceil(1.0 / (cfg.samples_per_unit * dt0))
    return 1.0 / (cfg.samples_per_unit * per_sample), per_sample


def run_flow(state0: GraphState, m: MetricField, cfg: FlowConfig, monitors=None, *,
             dt: float | None = None, sample_every: int | None = None, start_step: int = 0,
             companion: CompanionState | None = None, keep_states: bool = False,
             on_checkpoint: Callable[[GraphState, int, CompanionState | None], None] | None = None,
             on_sample: Callable | None = None) -> Trajectory:
    """Integrate until osc(theta) <= osc_tol, t >= t_max, or divergence.

    ``monitors`` maps (state, m, bundle) to a sample with ``osc_theta``.
    Sampling and checkpointing are keyed to the absolute step index, so a
    run resumed at ``start_step`` continues on the same schedule.
    Divergence is recorded on the trajectory, never raised.
    """
    from .monitors import MonitorSuite

    if monitors is None:
        monitors = MonitorSuite.light()
    if dt is None or sample_every is None:
        pdt, pevery = plan_steps(m, cfg)
        dt = pdt if dt is None else dt
        sample_every = pevery if sample_every is None else sample_every
    traj = Trajectory(dt=dt)
    state = state0
    t_origin = state0.t - start_step * dt
    step = start_step
    comp = companion

    def record(state, bundle):
        sample = monitors(state, m, bundle)
        traj.samples.append(sample)
        if keep_states:
            traj.states.append((state, bundle))
        if comp is not None:
            traj.companion.append((comp.t, comp.v, bundle.eta_inv))
        if on_sample is not None:
            on_sample(sample, state, bundle)
        return sample

    try:
        while True:
            theta, lam_max, cp = _rhs(state, m)
            if not (np.all(np.isfinite(theta)) and lam_max <= LAMBDA_DIVERGENCE):
                traj.termination = "diverged"
                traj.message = f"lambda_max={lam_max:.3g} at step {step}"
                break
            on_sample_step = step % sample_every == 0
            t_done = state.t >= cfg.t_max - 1e-12 * max(1.0, cfg.t_max)
            if on_sample_step or t_done:
                bundle = angle_bundle(state, m)
                sample = record(state, bundle)
                if sample.osc_theta <= cfg.osc_tol:
                    traj.termination = "converged"
                    break
                if t_done:
                    traj.termination = "t_max"
                    break
            if on_checkpoint is not None and cfg.checkpoint_every and step > start_step \
                    and step % cfg.checkpoint_every == 0:
                on_checkpoint(state, step, comp)
            # time from the step count, not by accumulation
            t_next = t_origin + (step + 1) * dt
            if t_next > cfg.t_max:
                t_next = cfg.t_max
            h = t_next - state.t
            if comp is not None:
                _, eta_inv = induced_metric(cp, m)
                prev_sup, prev_inf = float(np.max(comp.v)), float(np.min(comp.v))
                comp = CompanionState(companion_step(comp, eta_inv, m, h).v, t_next)
                sup, inf = float(np.max(comp.v)), float(np.min(comp.v))
                if sup > prev_sup + _ulps(prev_sup) or inf < prev_inf - _ulps(prev_inf):
                    traj.companion_violations += 1
            state = step_rk4(state, m, h, step, k1=theta)
            state = state.with_u(state.u, t_next)
            step += 1
    except DivergenceError as exc:
        traj.termination = "diverged"
        traj.message = str(exc)
    traj.final_state = state
    traj.final_companion = comp
    traj.steps = step
    return traj


def _ulps(x: float, k: int = 4) -> float:
    return k * math.ulp(abs(x))
