"""Scenario orchestration: bootstrap, stability ladder, uniqueness, lemma
residual refinement, Harnack/companion and convergence runs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .angle import GraphState, angle_bundle, assemble_chi
from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .errors import NumericalError
from .flow import CompanionState, FlowConfig, Trajectory, plan_steps, recenter, run_flow, stable_dt, step_rk4
from .geometry import MetricField, build_metric, weighted_mean
from .monitors import (MonitorSuite, decay_fit, harnack_functional, lemma_residuals, make_window,
                       oscillation_series, residual_bigTheta, residual_rho)

log = logging.getLogger(__name__)


@dataclass
class Report:
    scenario: str
    trajectories: dict = field(default_factory=dict)  # label -> Trajectory; first is primary
    headline: dict = field(default_factory=dict)
    lines: list = field(default_factory=list)  # free-form summary lines
    tables: dict = field(default_factory=dict)  # name -> (header, rows)
    ok: bool = True

    @property
    def primary(self) -> Trajectory | None:
        return next(iter(self.trajectories.values()), None)


@dataclass
class Bootstrap:
    state: GraphState  # chi_hat: harmonic c and phi_hat, u = 0
    theta_hat: float
    trajectory: Trajectory
    metric: MetricField


# ---------------------------------------------------------------------------
# shared plumbing


class Checkpointer:
    """Callback for run_flow writing ``<dir>/<label>-<step>.glmcf`` plus sidecar."""

    def __init__(self, out_dir: str | Path | None, label: str, cfg: ExperimentConfig, extra: dict):
        self.dir = None if out_dir is None else Path(out_dir) / "checkpoints"
        self.label = label
        self.cfg = cfg
        self.extra = extra
        self.last: Path | None = None

    def meta(self, step: int, comp: CompanionState | None) -> dict:
        meta = {"config": self.cfg.to_dict(), "label": self.label, "step": step, **self.extra}
        if comp is not None:
            meta["companion"] = comp.v.ravel().tolist()
        return meta

    def __call__(self, state: GraphState, step: int, comp: CompanionState | None = None) -> None:
        if self.dir is None:
            return
        path = self.dir / f"{self.label}-{step:09d}.glmcf"
        self.last = save_checkpoint(path, state, self.meta(step, comp))

    def final(self, traj: Trajectory) -> None:
        if self.dir is None or traj.final_state is None:
            return
        path = self.dir / f"{self.label}-final.glmcf"
        meta = self.meta(traj.steps, traj.final_companion)
        meta["termination"] = traj.termination
        save_checkpoint(path, traj.final_state, meta)
        traj.checkpoint_path = str(path)


def _flow(cfg: ExperimentConfig, state0: GraphState, m: MetricField, fc: FlowConfig, suite: MonitorSuite,
          label: str, out_dir, theta_hat: float, companion=None, on_sample=None, keep_states=False) -> Trajectory:
    dt, every = plan_steps(m, fc)
    ck = Checkpointer(out_dir, label, cfg, {"theta_hat": theta_hat, "dt": dt, "sample_every": every})
    traj = run_flow(state0, m, fc, suite, dt=dt, sample_every=every, companion=companion,
                    on_checkpoint=ck, on_sample=on_sample, keep_states=keep_states)
    ck.final(traj)
    log.info("%s: %s at t=%.4g after %d steps", label, traj.termination, traj.final_state.t, traj.steps)
    return traj


def _suite(cfg: ExperimentConfig, theta_hat: float) -> MonitorSuite:
    return MonitorSuite(theta_hat=theta_hat, k1=cfg.monitors.K1, k2=cfg.monitors.K2, full=cfg.monitors.full)


def _fit(traj: Trajectory, cfg: ExperimentConfig, series: np.ndarray | None = None):
    """decay_fit on osc(theta_dot) over the configured window, clipped to the run."""
    t = traj.times
    y = traj.series("osc_theta") if series is None else series
    ta, tb = cfg.fit.t_a, min(cfg.fit.t_b, float(t[-1])) if len(t) else cfg.fit.t_b
    try:
        return decay_fit(t, y, (ta, tb))
    except ValueError:
        return math.nan, math.nan, math.nan


def _max_ratio(series: np.ndarray) -> float:
    return float(np.max(series) / series[0]) if series[0] > 0 else (0.0 if np.max(series) == 0 else math.inf)


def monotonicity(traj: Trajectory, slack_per_unit: float = 1e-8) -> dict:
    """Maximum-principle bookkeeping over samples.

    osc(theta) may rise by at most ``slack_per_unit`` per unit time; sup and
    inf of theta_dot get a few ulps of rounding slack only.
    """
    t = traj.times
    osc = traj.series("osc_theta")
    sup = traj.series("theta_dot_sup")
    inf = traj.series("theta_dot_inf")
    if len(t) < 2:
        return {"osc_violations": 0, "sup_violations": 0, "inf_violations": 0}
    dt = np.diff(t)
    ulp_sup = 4 * np.spacing(np.abs(sup[:-1]))
    ulp_inf = 4 * np.spacing(np.abs(inf[:-1]))
    return {
        "osc_violations": int(np.sum(np.diff(osc) > slack_per_unit * dt)),
        "sup_violations": int(np.sum(np.diff(sup) > ulp_sup)),
        "inf_violations": int(np.sum(np.diff(inf) < -ulp_inf)),
    }


# ---------------------------------------------------------------------------
# bootstrap


def run_bootstrap(cfg: ExperimentConfig, m: MetricField | None = None, harmonic=None,
                  out_dir=None) -> Bootstrap:
    """Flow the harmonic representative c.dq to a special Lagrangian chi_hat.

    The limit potential (recentred) becomes phi_hat; theta_hat is the
    dV_g-mean of the limit angle.
    """
    m = build_metric(cfg.metric_spec(), cfg.grid_obj()) if m is None else m
    c = np.array(cfg.harmonic() if harmonic is None else harmonic, dtype=float)
    zero = np.zeros(m.grid.shape)
    state0 = GraphState.initial(c, zero, zero)
    fc = cfg.flow_config(osc_tol=cfg.bootstrap.osc_tol, t_max=cfg.bootstrap.t_max)
    traj = _flow(cfg, state0, m, fc, MonitorSuite.light(), "bootstrap", out_dir, 0.0)
    if traj.termination != "converged":
        raise NumericalError(
            f"bootstrap did not converge ({traj.termination}; osc theta = {traj.samples[-1].osc_theta:.3e})")
    final = traj.final_state
    phi_hat, _ = recenter(final.u, m)
    ref = GraphState(c, phi_hat, zero.copy(), 0.0, 0.0)
    theta_hat = weighted_mean(angle_bundle(ref, m).theta, m)
    return Bootstrap(ref, theta_hat, traj, m)


def perturbed(boot: Bootstrap, u0: np.ndarray) -> GraphState:
    return GraphState.initial(boot.state.harmonic, boot.state.base_potential, u0)


def scenario_bootstrap(cfg: ExperimentConfig, out_dir=None) -> Report:
    boot = run_bootstrap(cfg, out_dir=out_dir)
    from .angle import special_lagrangian_residual
    slr = special_lagrangian_residual(boot.state, boot.metric)
    rep = Report("bootstrap", {"bootstrap": boot.trajectory})
    rep.headline = {"theta_hat": boot.theta_hat, "special_lagrangian_residual": slr,
                    "phi_hat_sup": float(np.max(np.abs(boot.state.base_potential)))}
    rep.lines.append(f"reference angle theta_hat = {boot.theta_hat!r}")
    rep.lines.append(f"special Lagrangian residual osc(theta) = {slr:.3e}")
    rep.ok = slr <= 1e-8
    return rep


# ---------------------------------------------------------------------------
# stability ladder


def ladder(cfg: ExperimentConfig) -> list[float]:
    s = cfg.stability
    amps = [s.amplitude_start * s.factor ** k for k in range(s.rungs)]
    return ([0.0] if s.include_zero else []) + amps


def run_stability(cfg: ExperimentConfig, out_dir=None, boot: Bootstrap | None = None) -> Report:
    boot = run_bootstrap(cfg) if boot is None else boot
    m = boot.metric
    shape = m.grid.sample(cfg.poly(cfg.stability.shape))
    rep = Report("stability")
    header = ["amplitude", "rho0", "sup_rho", "sup_rho_over_rho0", "sup_q_over_q0", "termination",
              "final_osc_theta", "C2", "r_squared", "osc_violations", "sup_violations", "inf_violations"]
    rows = []
    fc = cfg.flow_config()
    for k, a in enumerate(ladder(cfg)):
        label = f"rung{k:02d}"
        traj = _flow(cfg, perturbed(boot, a * shape), m, fc, _suite(cfg, boot.theta_hat), label, out_dir,
                     boot.theta_hat)
        rep.trajectories[label] = traj
        rho = traj.series("rho_max")
        q = traj.series("q_max")
        c1, c2, r2 = _fit(traj, cfg) if traj.termination != "diverged" and a > 0 else (math.nan,) * 3
        mono = monotonicity(traj)
        rows.append([a, float(rho[0]), float(np.max(rho)), _max_ratio(rho), _max_ratio(q), traj.termination,
                     traj.samples[-1].osc_theta, c2, r2, mono["osc_violations"], mono["sup_violations"],
                     mono["inf_violations"]])
    rep.tables["ladder"] = (header, rows)
    stable = [r[0] for r in rows if r[5] == "converged" and r[0] > 0]
    diverged = [r[0] for r in rows if r[5] == "diverged"]
    slow = [r[0] for r in rows if r[5] == "t_max"]
    rep.lines.append("empirical stability threshold (not a proven constant):")
    rep.lines.append(f"  largest converged amplitude: {max(stable) if stable else 'none'}")
    rep.lines.append(f"  smallest diverged amplitude: {min(diverged) if diverged else 'none in ladder'}")
    if slow:
        # still decaying when t_max was reached; not evidence of instability
        rep.lines.append(f"  reached t_max before osc_tol: {', '.join(repr(a) for a in slow)}")
    nonzero = [r for r in rows if r[0] > 0]
    main = nonzero[0] if nonzero else rows[0]
    rep.headline = {"sup_rho_over_rho0": main[3], "C2": main[7]}
    # rung with the smallest positive amplitude is the primary trajectory
    labels = list(rep.trajectories)
    first = labels[1] if len(labels) > 1 and rows[0][0] == 0 else labels[0]
    rep.trajectories = {first: rep.trajectories[first], **{k: v for k, v in rep.trajectories.items() if k != first}}
    return rep


# ---------------------------------------------------------------------------
# uniqueness


def limit_form(traj: Trajectory, m: MetricField) -> np.ndarray:
    return assemble_chi(traj.final_state, m)


def run_uniqueness(cfg: ExperimentConfig, out_dir=None) -> Report:
    m = build_metric(cfg.metric_spec(), cfg.grid_obj())
    boot_a = run_bootstrap(cfg, m)
    same_class = not cfg.initial.harmonic_b or list(cfg.harmonic(True)) == list(cfg.harmonic())
    boot_b = boot_a if same_class else run_bootstrap(cfg, m, harmonic=cfg.harmonic(True))
    fc = cfg.flow_config()
    ua = m.grid.sample(cfg.poly(cfg.initial.potential))
    ub = m.grid.sample(cfg.poly(cfg.initial.potential_b or cfg.initial.potential))
    ta = _flow(cfg, perturbed(boot_a, ua), m, fc, _suite(cfg, boot_a.theta_hat), "run_a", out_dir, boot_a.theta_hat)
    tb = _flow(cfg, perturbed(boot_b, ub), m, fc, _suite(cfg, boot_b.theta_hat), "run_b", out_dir, boot_b.theta_hat)
    rep = Report("uniqueness", {"run_a": ta, "run_b": tb})
    ca, cb = limit_form(ta, m), limit_form(tb, m)
    dist = float(np.max(np.abs(ca - cb)))
    if same_class:
        rep.headline = {"limit_distance": dist}
        rep.lines.append(f"sup distance between limit 1-forms: {dist:.3e}")
        rep.ok = dist <= 1e-6 and ta.termination == tb.termination == "converged"
    else:
        dc = np.array(cfg.harmonic()) - np.array(cfg.harmonic(True))
        mean_diff = np.array([weighted_mean(ca[i] - cb[i], m) for i in range(m.dim)])
        rep.headline = {"limit_distance": dist, "harmonic_part_error": float(np.max(np.abs(mean_diff - dc)))}
        rep.lines.append(f"harmonic part of chi_a - chi_b: {mean_diff.tolist()} (c - c' = {dc.tolist()})")
    for label, tr in rep.trajectories.items():
        rep.lines.append(f"{label}: {tr.termination} at t = {tr.final_state.t:.4g}")
    return rep


# ---------------------------------------------------------------------------
# lemma residuals on a refinement pair


@dataclass
class LemmaResult:
    N: int
    dt: float
    residuals: dict
    tripwire: dict
    window: list


def lemma_window(cfg: ExperimentConfig, N: int, dt: float, steps: int) -> tuple[list, MetricField]:
    """Three states at t* - dt, t*, t* + dt from ``steps`` RK4 steps of size dt."""
    m = build_metric(cfg.metric_spec(), cfg.grid_obj(N))
    c = np.array(cfg.harmonic())
    phi = m.grid.sample(cfg.poly(cfg.lemma.base_potential))
    state = GraphState.initial(c, phi, m.grid.sample(cfg.poly(cfg.initial.potential)))
    out = []
    for k in range(steps + 2):
        if k >= steps - 1:
            out.append(state)
        if k == steps + 1:
            break
        state = step_rk4(state, m, dt, k)
        state = state.with_u(state.u, (k + 1) * dt)
    return out, m


def lemma_at(cfg: ExperimentConfig, N: int, dt: float, steps: int, theta_hat: float = 0.0) -> LemmaResult:
    states, m = lemma_window(cfg, N, dt, steps)
    w = make_window(states, m)
    res = lemma_residuals(w, theta_hat)
    trip = {}
    if not m.is_flat:
        trip = {"rho_without_xi1": residual_rho(w, include_curvature=False),
                "bigTheta_without_xi2": residual_bigTheta(w, include_curvature=False)}
    return LemmaResult(N, dt, res, trip, states)


def run_lemma_check(cfg: ExperimentConfig, out_dir=None) -> Report:
    """Residuals at N and 2N with dt -> dt / 4 (window centred at t*)."""
    N = cfg.grid.N
    m = build_metric(cfg.metric_spec(), cfg.grid_obj(N))
    t_star = cfg.lemma.t_star
    steps = max(2, math.ceil(t_star / stable_dt(m, cfg.flow.cfl)))
    dt = t_star / steps
    results = [lemma_at(cfg, N, dt, steps)]
    if cfg.lemma.refine:
        results.append(lemma_at(cfg, 2 * N, dt / 4.0, 4 * steps))
    rep = Report("lemma_check")
    header = ["N", "dt"] + list(results[0].residuals) + list(results[0].tripwire)
    rows = [[r.N, r.dt] + list(r.residuals.values()) + list(r.tripwire.values()) for r in results]
    if len(results) == 2:
        a, b = results
        ratios = {k: a.residuals[k] / b.residuals[k] if b.residuals[k] > 0 else math.inf for k in a.residuals}
        trip_ratios = {k: a.tripwire[k] / b.tripwire[k] for k in a.tripwire}
        rows.append(["ratio", ""] + list(ratios.values()) + list(trip_ratios.values()))
        rep.headline = {f"ratio_{k}": v for k, v in ratios.items()}
        rep.ok = all(v >= 11.0 for k, v in ratios.items() if k != "theta") and ratios["theta"] >= 4.0
        for k, v in trip_ratios.items():
            rep.lines.append(f"tripwire {k}: ratio {v:.3g} (plateau expected)")
    rep.tables["residuals"] = (header, rows)
    # monitor samples of the coarse window as the trajectory
    suite = _suite(cfg, 0.0)
    for r in results:
        mm = build_metric(cfg.metric_spec(), cfg.grid_obj(r.N))
        tr = Trajectory(samples=[suite(s, mm) for s in r.window], termination="window", dt=r.dt,
                        final_state=r.window[-1], steps=len(r.window))
        rep.trajectories[f"N{r.N}"] = tr
    return rep


# ---------------------------------------------------------------------------
# Harnack / companion


def run_harnack(cfg: ExperimentConfig, out_dir=None) -> Report:
    boot = run_bootstrap(cfg)
    m = boot.metric
    v0 = m.grid.sample(cfg.poly(cfg.harnack.v0))
    if not np.min(v0) > 0:
        raise NumericalError("harnack.v0 must be strictly positive on the grid")
    u0 = m.grid.sample(cfg.poly(cfg.initial.potential))
    fc = cfg.flow_config()
    traj = _flow(cfg, perturbed(boot, u0), m, fc, _suite(cfg, boot.theta_hat), "harnack", out_dir,
                 boot.theta_hat, companion=CompanionState(v0))
    hr = harnack_functional(traj.companion, cfg.harnack_config(), m)
    osc = oscillation_series(traj.samples)
    mono = monotonicity(traj)
    rep = Report("harnack", {"harnack": traj})
    rep.headline = {
        "companion_step_violations": traj.companion_violations,
        "companion_sample_violations": hr.monotone_violations,
        "harnack_bound_proxy": hr.bound_proxy,
        "two_time_ratio": hr.two_time_ratio,
        **mono,
    }
    tail = osc.ratios[-5:]
    if len(tail):
        rep.headline["contraction_ratio"] = float(np.mean(tail))
        rep.headline["contraction_spread"] = float(np.max(tail) - np.min(tail))
    rep.lines.append(f"sup v(t1) / inf v(t2) at t1={cfg.harnack.t1}, t2={cfg.harnack.t2}: {hr.two_time_ratio:.6g}")
    rep.lines.append("per-unit contraction ratios chi(m+1)/chi(m): "
                     + ", ".join(f"{r:.5f}" for r in osc.ratios))
    rep.tables["harnack"] = (["t", "sup_F", "sup_v", "inf_v"],
                             [[float(a), float(b), float(c), float(d)]
                              for a, b, c, d in zip(hr.times, hr.sup_F, hr.sup_v, hr.inf_v)])
    rep.ok = traj.companion_violations == 0 and hr.monotone_violations == 0
    return rep


# ---------------------------------------------------------------------------
# convergence


def run_convergence(cfg: ExperimentConfig, out_dir=None) -> Report:
    boot = run_bootstrap(cfg)
    m = boot.metric
    u0 = m.grid.sample(cfg.poly(cfg.initial.potential))
    utilde = []

    def track(sample, state, bundle):
        ut, _ = recenter(state.u, m)
        utilde.append(float(np.max(np.abs(ut))))

    traj = _flow(cfg, perturbed(boot, u0), m, cfg.flow_config(), _suite(cfg, boot.theta_hat), "convergence",
                 out_dir, boot.theta_hat, on_sample=track)
    utilde = np.array(utilde)
    c1, c2, r2 = _fit(traj, cfg)
    u1, u2, ur2 = _fit(traj, cfg, utilde)
    rep = Report("convergence", {"convergence": traj})
    rep.headline = {"C1": c1, "C2": c2, "r_squared": r2, "C2_utilde": u2, "r_squared_utilde": ur2,
                    "rate_agreement": abs(u2 - c2) / c2 if c2 else math.nan,
                    "theta_hat": boot.theta_hat}
    rep.tables["utilde"] = (["t", "utilde_sup"], [[float(t), float(v)] for t, v in zip(traj.times, utilde)])
    rep.lines.append(f"osc(theta_dot) fit: C1={c1:.4g} C2={c2:.4g} R^2={r2:.6f}")
    rep.lines.append(f"sup|u_tilde| fit:   C2={u2:.4g} R^2={ur2:.6f}")
    rep.ok = traj.termination != "diverged"
    return rep


SCENARIO_FUNCS: dict[str, Callable] = {
    "bootstrap": scenario_bootstrap,
    "stability": run_stability,
    "uniqueness": run_uniqueness,
    "lemma_check": run_lemma_check,
    "harnack": run_harnack,
    "convergence": run_convergence,
}


def run_scenario(cfg: ExperimentConfig, out_dir=None) -> Report:
    return SCENARIO_FUNCS[cfg.run.scenario](cfg, out_dir=out_dir)
