"""Per-slice monitored quantities, evolution-identity residuals, Harnack
functional and decay fits.

Index conventions follow :mod:`glmcf.geometry`: covariant derivatives append
their index last, so ``u4[i, j, k, m] = u_{ijkm}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import cached_property

import numpy as np

from .angle import AngleBundle, GraphState, angle_bundle, assemble_chi
from .errors import WindowError
from .geometry import MetricField, covariant_hessian, covd, gradient, symmetrize

RESIDUAL_NAMES = ("theta", "tau", "vartheta", "rho", "bigTheta")


@dataclass
class MonitorSample:
    t: float
    osc_theta: float
    theta_dot_sup: float
    theta_dot_inf: float
    tau_max: float
    vartheta_max: float
    rho_max: float
    bigTheta_max: float
    upsilon_max: float
    q_max: float
    branch_residual: float
    lambda_max: float
    eig_product_max: float  # sup prod(1 + lambda_i^2), diagnostic only
    residual_norms: dict = field(default_factory=dict)

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "residual_norms"]

    def row(self) -> list[float]:
        return [getattr(self, c) for c in self.columns()]


# ---------------------------------------------------------------------------
# derivative cache for one slice


class SliceDerivatives:
    """Lazily computed covariant derivatives of u, chi_hat, eta and Rm on one slice."""

    def __init__(self, state: GraphState, m: MetricField, bundle: AngleBundle | None = None):
        self.state = state
        self.m = m
        self.bundle = bundle if bundle is not None else angle_bundle(state, m)

    # u and its derivatives
    @cached_property
    def u1(self):
        return gradient(self.state.u, self.m.grid)

    @cached_property
    def u2(self):
        return symmetrize(covd(self.u1, self.m))

    @cached_property
    def u3(self):
        return covd(self.u2, self.m)

    @cached_property
    def u4(self):
        return covd(self.u3, self.m)

    # chi_hat = c + d(phi_hat): chi_hat_{p,q...}
    @cached_property
    def chat1(self):
        return covd(assemble_chi(self.state.reference(), self.m), self.m)

    @cached_property
    def chat2(self):
        return covd(self.chat1, self.m)

    @cached_property
    def chat3(self):
        return covd(self.chat2, self.m)

    @cached_property
    def chat4(self):
        return covd(self.chat3, self.m)

    # full chi = chi_hat + du
    @cached_property
    def chi2(self):
        """chi_{p,qi}."""
        return self.chat2 + self.u3

    # induced metric
    @property
    def eta(self):
        return self.bundle.eta

    @property
    def eta_inv(self):
        return self.bundle.eta_inv

    @cached_property
    def d_eta(self):
        """eta_{ab,l}."""
        return covd(self.eta, self.m)

    @cached_property
    def d_eta_inv(self):
        """eta^{ms}_{,j}."""
        return covd(self.eta_inv, self.m, up=(True, True))

    @cached_property
    def dd_eta_inv(self):
        """eta^{ms}_{,jk}."""
        return covd(self.d_eta_inv, self.m, up=(True, True, False))

    @cached_property
    def g_inv(self):
        return self.m.g_inv

    def laplace_eta(self, f: np.ndarray) -> np.ndarray:
        """Delta_eta f = eta^{ij} f_{;ij} for a scalar field."""
        return np.einsum("ij...,ij...->...", self.eta_inv, covariant_hessian(f, self.m))


# ---------------------------------------------------------------------------
# monitored quantities


def tau_field(state: GraphState, theta_hat: float, u0_at_p: float) -> np.ndarray:
    return (state.u - u0_at_p - theta_hat * state.t) ** 2


def vartheta_field(d: SliceDerivatives) -> np.ndarray:
    return np.einsum("ij...,i...,j...->...", d.g_inv, d.u1, d.u1)


def rho_field(d: SliceDerivatives) -> np.ndarray:
    gi = d.g_inv
    return np.einsum("ij...,pq...,ip...,jq...->...", gi, gi, d.u2, d.u2)


def bigtheta_field(d: SliceDerivatives) -> np.ndarray:
    gi = d.g_inv
    return np.einsum("ip...,jq...,kr...,ijk...,pqr...->...", gi, gi, gi, d.u3, d.u3)


def upsilon_field(d: SliceDerivatives) -> np.ndarray:
    """eta^{ms} g^{ip} g^{jq} g^{kr} u_{ijkm} u_{pqrs}; O(h^2)-accurate at worst."""
    gi = d.g_inv
    return np.einsum("ms...,ip...,jq...,kr...,ijkm...,pqrs...->...",
                     d.eta_inv, gi, gi, gi, d.u4, d.u4)


def q_field(rho, vartheta, tau, k1: float = 1.0, k2: float = 1.0):
    """Q = rho + K1 vartheta + K2 tau (elementwise)."""
    return rho + k1 * vartheta + k2 * tau


@dataclass
class MonitorSuite:
    """Callable producing a :class:`MonitorSample` from a slice."""

    theta_hat: float = 0.0
    k1: float = 1.0
    k2: float = 1.0
    u0_at_p: float | None = None  # defaults to the state's recorded anchor
    full: bool = True

    @classmethod
    def light(cls) -> "MonitorSuite":
        return cls(full=False)

    def __call__(self, state: GraphState, m: MetricField, bundle: AngleBundle | None = None) -> MonitorSample:
        return scalar_monitors(state, m, bundle, self.theta_hat,
                               state.u0_anchor if self.u0_at_p is None else self.u0_at_p,
                               self.k1, self.k2, full=self.full)


def scalar_monitors(state: GraphState, m: MetricField, bundle: AngleBundle | None,
                    theta_hat: float, u0_at_p: float, k1: float = 1.0, k2: float = 1.0,
                    full: bool = True) -> MonitorSample:
    d = SliceDerivatives(state, m, bundle)
    b = d.bundle
    theta = b.theta
    tau = tau_field(state, theta_hat, u0_at_p)
    vt = vartheta_field(d)
    rho = rho_field(d)
    if full:
        big = float(np.max(bigtheta_field(d)))
        ups = float(np.max(upsilon_field(d)))
    else:
        big = ups = 0.0
    q = q_field(rho, vt, tau, k1, k2)
    eig_prod = np.prod(1.0 + b.eigenvalues ** 2, axis=0)
    return MonitorSample(
        t=float(state.t),
        osc_theta=b.osc_theta,
        theta_dot_sup=float(np.max(theta)),
        theta_dot_inf=float(np.min(theta)),
        tau_max=float(np.max(tau)),
        vartheta_max=float(np.max(vt)),
        rho_max=float(np.max(rho)),
        bigTheta_max=big,
        upsilon_max=ups,
        q_max=float(np.max(q)),
        branch_residual=b.branch_residual,
        lambda_max=b.lambda_max,
        eig_product_max=float(np.max(eig_prod)),
    )


# ---------------------------------------------------------------------------
# evolution-identity residuals
#
# Each residual is sup_x |d_t Q - Delta_eta Q - RHS| at the middle slice of a
# three-slice window, with d_t Q by the centred difference.


@dataclass
class Window:
    slices: list  # three SliceDerivatives, equally spaced in time
    m: MetricField

    @property
    def dt(self) -> float:
        return self.slices[2].state.t - self.slices[1].state.t

    @property
    def mid(self) -> SliceDerivatives:
        return self.slices[1]

    def time_derivative(self, fn) -> np.ndarray:
        a, _, c = self.slices
        return (fn(c) - fn(a)) / (c.state.t - a.state.t)


def make_window(states, m: MetricField, bundles=None) -> Window:
    """Wrap three consecutive equally spaced states (or (state, bundle) pairs)."""
    states = list(states)
    if len(states) < 3:
        raise WindowError(f"window too short: need 3 slices, got {len(states)}")
    if len(states) > 3:
        k = len(states) // 2
        states = states[k - 1:k + 2]
        bundles = None if bundles is None else list(bundles)[k - 1:k + 2]
    pairs = []
    for i, s in enumerate(states):
        if isinstance(s, tuple):
            pairs.append(s)
        else:
            pairs.append((s, None if bundles is None else bundles[i]))
    t = [p[0].t for p in pairs]
    d1, d2 = t[1] - t[0], t[2] - t[1]
    if not (d1 > 0 and d2 > 0 and abs(d1 - d2) <= 1e-9 * max(d1, d2)):
        raise WindowError(f"window slices must be equally spaced and increasing, got times {t}")
    return Window([SliceDerivatives(s, m, b) for s, b in pairs], m)


def residual_theta_evolution(w: Window) -> float:
    """d_t theta - eta^{ij} theta_{ij}."""
    d = w.mid
    lhs = w.time_derivative(lambda s: s.bundle.theta)
    return float(np.max(np.abs(lhs - d.laplace_eta(d.bundle.theta))))


def residual_tau(w: Window, theta_hat: float = 0.0, u0_at_p: float | None = None) -> float:
    d = w.mid
    st = d.state
    u0 = st.u0_anchor if u0_at_p is None else u0_at_p
    tau = lambda s: tau_field(s.state, theta_hat, u0)
    lhs = w.time_derivative(tau) - d.laplace_eta(tau(d))
    drift = st.u - u0 - theta_hat * st.t
    rhs = (2.0 * drift * (d.bundle.theta - theta_hat - d.laplace_eta(st.u))
           - 2.0 * np.einsum("ij...,i...,j...->...", d.eta_inv, d.u1, d.u1))
    return float(np.max(np.abs(lhs - rhs)))


def residual_vartheta(w: Window) -> float:
    d = w.mid
    lhs = w.time_derivative(vartheta_field) - d.laplace_eta(vartheta_field(d))
    gi, ei = d.g_inv, d.eta_inv
    rhs = -2.0 * np.einsum("pq...,ij...,ip...,jq...->...", ei, gi, d.u2, d.u2)
    if not d.m.is_flat:
        rhs = rhs + 2.0 * np.einsum("ij...,pq...,lpqi...,l...,j...->...", gi, ei, d.m.riemann, d.u1, d.u1)
    rhs = rhs + 2.0 * np.einsum("ij...,pq...,pqi...,j...->...", gi, ei, d.chat2, d.u1)
    return float(np.max(np.abs(lhs - rhs)))


def xi1(d: SliceDerivatives) -> np.ndarray:
    """(Xi_1)_{pqil} = u_{pqil} - u_{ilpq} through curvature terms."""
    R = d.m.riemann
    dR = covd(R, d.m, up=(True, False, False, False))
    u1, u2 = d.u1, d.u2
    return (np.einsum("kl...,kpqi...->pqil...", u2, R)
            + np.einsum("k...,kpqil...->pqil...", u1, dR)
            + np.einsum("kp...,kiql...->pqil...", u2, R)
            + np.einsum("ik...,kpql...->pqil...", u2, R)
            + np.einsum("kq...,kipl...->pqil...", u2, R)
            + np.einsum("k...,kiplq...->pqil...", u1, dR))


def residual_rho(w: Window, include_curvature: bool = True) -> float:
    """``include_curvature=False`` drops Xi_1 (sign-convention tripwire)."""
    d = w.mid
    lhs = w.time_derivative(rho_field) - d.laplace_eta(rho_field(d))
    gi, ei = d.g_inv, d.eta_inv
    rhs = (-2.0 * np.einsum("ij...,kl...,pb...,aq...,abl...,pqi...,kj...->...",
                            gi, gi, ei, ei, d.d_eta, d.chi2, d.u2)
           + 2.0 * np.einsum("ij...,kl...,pq...,pqil...,kj...->...", gi, gi, ei, d.chat3, d.u2)
           - 2.0 * np.einsum("ij...,kl...,pq...,ilp...,kjq...->...", gi, gi, ei, d.u3, d.u3))
    if include_curvature and not d.m.is_flat:
        rhs = rhs + 2.0 * np.einsum("ij...,kl...,pq...,pqil...,kj...->...", gi, gi, ei, xi1(d), d.u2)
    return float(np.max(np.abs(lhs - rhs)))


def xi2(d: SliceDerivatives) -> np.ndarray:
    """(Xi_2)_{msijk} = u_{msijk} - u_{ijkms} through curvature terms."""
    m = d.m
    R = m.riemann
    u1, u2, u3 = d.u1, d.u2, d.u3
    # (u_l R^l_{msi})_{,jk}
    a = np.einsum("l...,lmsi...->msi...", u1, R)
    t1 = covd(covd(a, m), m)
    # (u_{lm} R^l_{isj} + u_{il} R^l_{msj})_{,k}
    b = np.einsum("lm...,lisj...->msij...", u2, R) + np.einsum("il...,lmsj...->msij...", u2, R)
    t2 = covd(b, m)
    # (u_l R^l_{imj})_{,sk}, stored [i,m,j,s,k]
    c = covd(covd(np.einsum("l...,limj...->imj...", u1, R), m), m)
    t3 = np.einsum("imjsk...->msijk...", c)
    # u_{ljm} R^l_{isk} + u_{ilm} R^l_{jsk} + u_{ijl} R^l_{msk}
    t4 = (np.einsum("ljm...,lisk...->msijk...", u3, R)
          + np.einsum("ilm...,ljsk...->msijk...", u3, R)
          + np.einsum("ijl...,lmsk...->msijk...", u3, R))
    # (u_{lj} R^l_{imk} + u_{il} R^l_{jmk})_{,s}, stored [i,j,m,k,s]
    e = np.einsum("lj...,limk...->ijmk...", u2, R) + np.einsum("il...,ljmk...->ijmk...", u2, R)
    t5 = np.einsum("ijmks...->msijk...", covd(e, m))
    return t1 + t2 + t3 + t4 + t5


def residual_bigTheta(w: Window, include_curvature: bool = True) -> float:
    d = w.mid
    lhs = w.time_derivative(bigtheta_field) - d.laplace_eta(bigtheta_field(d))
    gi, ei = d.g_inv, d.eta_inv
    de, dde = d.d_eta_inv, d.dd_eta_inv
    u3, u4 = d.u3, d.u4
    contract = lambda X: np.einsum("ip...,jq...,kr...,ijk...,pqr...->...", gi, gi, gi, X, u3)
    # d_t u_{ijk} pieces: eta^{ms}_{,jk} chi_{m,si} + eta^{ms}_{,j} chi_{m,sik} + eta^{ms}_{,k} chi_{m,sij}
    d_u = (np.einsum("msjk...,msi...->ijk...", dde, u3)
           + np.einsum("msj...,msik...->ijk...", de, u4)
           + np.einsum("msk...,msij...->ijk...", de, u4))
    d_chat = (np.einsum("msjk...,msi...->ijk...", dde, d.chat2)
              + np.einsum("msj...,msik...->ijk...", de, d.chat3)
              + np.einsum("msk...,msij...->ijk...", de, d.chat3)
              + np.einsum("ms...,msijk...->ijk...", ei, d.chat4))
    rhs = -2.0 * upsilon_field(d) + 2.0 * contract(d_u) + 2.0 * contract(d_chat)
    if include_curvature and not d.m.is_flat:
        rhs = rhs + 2.0 * contract(np.einsum("ms...,msijk...->ijk...", ei, xi2(d)))
    return float(np.max(np.abs(lhs - rhs)))


def lemma_residuals(w: Window, theta_hat: float = 0.0, u0_at_p: float | None = None) -> dict:
    return {
        "theta": residual_theta_evolution(w),
        "tau": residual_tau(w, theta_hat, u0_at_p),
        "vartheta": residual_vartheta(w),
        "rho": residual_rho(w),
        "bigTheta": residual_bigTheta(w),
    }


# ---------------------------------------------------------------------------
# Harnack functional


@dataclass
class HarnackConfig:
    alpha: float = 1.5
    t1: float = 0.5
    t2: float = 1.0

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (1, 2), got {self.alpha}")
        if not 0.0 < self.t1 < self.t2:
            raise ValueError(f"need 0 < t1 < t2, got t1={self.t1}, t2={self.t2}")


def harnack_field(v: np.ndarray, eta_inv: np.ndarray, t: float, m: MetricField, alpha: float) -> np.ndarray:
    """F = t (eta^{ij} f_i f_j - alpha f_t) with f = log v and f_t = eta^{ij} v_{ij} / v."""
    if not np.min(v) > 0.0:
        raise ValueError("Harnack functional needs v > 0")
    f1 = gradient(np.log(v), m.grid)
    ft = np.einsum("ij...,ij...->...", eta_inv, covariant_hessian(v, m)) / v
    return t * (np.einsum("ij...,i...,j...->...", eta_inv, f1, f1) - alpha * ft)


@dataclass
class HarnackReport:
    times: np.ndarray
    sup_F: np.ndarray
    bound_proxy: float  # sup_t sup_x F / (1 + t)
    sup_v: np.ndarray
    inf_v: np.ndarray
    monotone_violations: int
    two_time_ratio: float  # sup v(t1) / inf v(t2)


def harnack_functional(v_traj, cfg: HarnackConfig, m: MetricField) -> HarnackReport:
    """``v_traj`` is a sequence of (t, v, eta_inv)."""
    times, supF, supv, infv = [], [], [], []
    for t, v, eta_inv in v_traj:
        F = harnack_field(v, eta_inv, t, m, cfg.alpha)
        times.append(t)
        supF.append(float(np.max(F)))
        supv.append(float(np.max(v)))
        infv.append(float(np.min(v)))
    times = np.array(times)
    supF = np.array(supF)
    supv, infv = np.array(supv), np.array(infv)
    viol = int(np.sum(np.diff(supv) > _ulp_slack(supv[:-1])) + np.sum(np.diff(infv) < -_ulp_slack(infv[:-1])))
    i1 = int(np.argmin(np.abs(times - cfg.t1)))
    i2 = int(np.argmin(np.abs(times - cfg.t2)))
    return HarnackReport(times, supF, float(np.max(supF / (1.0 + times))), supv, infv, viol,
                         float(supv[i1] / infv[i2]))


def _ulp_slack(x: np.ndarray, k: int = 4) -> np.ndarray:
    return k * np.spacing(np.abs(x))


# ---------------------------------------------------------------------------
# oscillation and decay


@dataclass
class OscillationSeries:
    times: np.ndarray
    chi: np.ndarray
    monotone_ok: bool
    unit_times: np.ndarray
    ratios: np.ndarray  # chi(m + 1) / chi(m)


def oscillation_series(samples, slack: float = 1e-10) -> OscillationSeries:
    """chi(t) = sup theta_dot - inf theta_dot per sample plus per-unit contraction ratios."""
    times = np.array([s.t for s in samples], dtype=float)
    chi = np.array([s.theta_dot_sup - s.theta_dot_inf for s in samples], dtype=float)
    monotone = bool(np.all(np.diff(chi) <= slack))
    units, vals = [], []
    for k in range(int(math.floor(times[-1] + 1e-9)) + 1 if len(times) else 0):
        j = int(np.argmin(np.abs(times - k)))
        if abs(times[j] - k) <= 1e-9 * max(1.0, k):
            units.append(k)
            vals.append(chi[j])
    units = np.array(units)
    vals = np.array(vals)
    ratios = []
    for a in range(len(units) - 1):
        if units[a + 1] == units[a] + 1:
            ratios.append(vals[a + 1] / vals[a] if vals[a] > 0 else 0.0)
    return OscillationSeries(times, chi, monotone, units, np.array(ratios))


def decay_fit(times, series, window: tuple[float, float]) -> tuple[float, float, float]:
    """Fit series ~ C1 exp(-C2 t) on the window by least squares in log space.

    Returns (C1, C2, R^2).
    """
    times = np.asarray(times, dtype=float)
    series = np.asarray(series, dtype=float)
    ta, tb = window
    sel = (times >= ta - 1e-12) & (times <= tb + 1e-12)
    if np.count_nonzero(sel) < 2:
        raise ValueError(f"fewer than two samples in window [{ta}, {tb}]")
    y = series[sel]
    if not np.all(y > 0.0):
        raise ValueError("decay_fit needs positive entries in the window")
    x = times[sel]
    ly = np.log(y)
    A = np.stack([np.ones_like(x), x], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = a + b * x
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(math.exp(a)), float(-b), r2
