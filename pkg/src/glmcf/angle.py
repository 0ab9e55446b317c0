"""Per-slice graph geometry: the closed 1-form, induced metric and Lagrangian angle."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import JacobiConvergenceError
from .geometry import MetricField, batched_inverse, covariant_hessian, covd, gradient, to_points


@dataclass(frozen=True, eq=False)
class GraphState:
    """chi = c.dq + d(phi_hat) + du at flow time t.

    ``u0_anchor`` is the initial potential's value at the origin grid point.
    """

    harmonic: np.ndarray
    base_potential: np.ndarray
    u: np.ndarray
    t: float = 0.0
    u0_anchor: float = 0.0

    @classmethod
    def initial(cls, harmonic, base_potential, u, t: float = 0.0) -> "GraphState":
        u = np.array(u, dtype=float)
        return cls(np.array(harmonic, dtype=float), np.array(base_potential, dtype=float),
                   u, float(t), float(u.flat[0]))

    def with_u(self, u: np.ndarray, t: float) -> "GraphState":
        return replace(self, u=u, t=float(t))

    @property
    def potential(self) -> np.ndarray:
        return self.base_potential + self.u

    def reference(self) -> "GraphState":
        """The unperturbed form chi_hat (u = 0)."""
        return replace(self, u=np.zeros_like(self.u), t=0.0, u0_anchor=0.0)


@dataclass(frozen=True, eq=False)
class AngleBundle:
    chi_prime: np.ndarray
    eta: np.ndarray
    eta_inv: np.ndarray
    theta: np.ndarray
    branch_residual: float
    lambda_max: float
    eigenvalues: np.ndarray  # (n,) + grid

    @property
    def osc_theta(self) -> float:
        return float(np.max(self.theta) - np.min(self.theta))


# ---------------------------------------------------------------------------
# symmetric eigenvalues by cyclic Jacobi, vectorised over grid points


def jacobi_eigvalsh(A: np.ndarray, tol: float = 1e-14, max_sweeps: int = 50) -> np.ndarray:
    """Eigenvalues of a stack of small symmetric matrices, shape (P, n, n) -> (P, n).

    Classic cyclic Jacobi: every off-diagonal pair is annihilated once per
    sweep; a point is done when its off-diagonal Frobenius norm drops below
    ``tol`` times its full norm.
    """
    A = np.array(A, dtype=float, copy=True)
    P, n, _ = A.shape
    if n == 1:
        return A[:, :, 0].copy()
    scale = np.sqrt(np.einsum("pij,pij->p", A, A))
    iu = np.triu_indices(n, 1)
    for _ in range(max_sweeps):
        active = _off_norm(A, iu) > tol * scale
        if not active.any():
            return np.diagonal(A, axis1=1, axis2=2).copy()
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                rot = active & (apq != 0.0)
                if not rot.any():
                    continue
                safe = np.where(rot, apq, 1.0)
                tau = (A[:, q, q] - A[:, p, p]) / (2.0 * safe)
                t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
                t = np.where(tau == 0.0, 1.0, t)
                t = np.where(rot, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                A[:, p, p] -= t * apq
                A[:, q, q] += t * apq
                A[:, p, q] = np.where(rot, 0.0, apq)
                A[:, q, p] = A[:, p, q]
                for r in range(n):
                    if r in (p, q):
                        continue
                    arp, arq = A[:, r, p].copy(), A[:, r, q].copy()
                    A[:, r, p] = c * arp - s * arq
                    A[:, r, q] = s * arp + c * arq
                    A[:, p, r] = A[:, r, p]
                    A[:, q, r] = A[:, r, q]
    bad = np.flatnonzero(_off_norm(A, iu) > tol * scale)
    raise JacobiConvergenceError(
        f"Jacobi did not converge in {max_sweeps} sweeps at point index {int(bad[0])}")


def _off_norm(A: np.ndarray, iu) -> np.ndarray:
    return np.sqrt(2.0 * np.sum(A[:, iu[0], iu[1]] ** 2, axis=1))


# ---------------------------------------------------------------------------


def assemble_chi(state: GraphState, m: MetricField) -> np.ndarray:
    """Coordinate components chi_i = c_i + d_i phi_hat + d_i u."""
    grid = m.grid
    chi = gradient(state.base_potential, grid) + gradient(state.u, grid)
    for i, ci in enumerate(state.harmonic):
        chi[i] += ci
    return chi


def chi_prime(state: GraphState, m: MetricField) -> np.ndarray:
    """chi_{j,i} for chi = c.dq + d(phi_hat + u): Hessian of the potential minus Gamma.c.

    Exactly symmetric; agrees with ``oneform_covariant_derivative(assemble_chi)``
    to rounding.
    """
    out = covariant_hessian(state.potential, m)
    if not m.is_flat and np.any(state.harmonic):
        out = out - np.einsum("kij...,k->ij...", m.christoffel, state.harmonic)
    return out


def induced_metric(chi_p: np.ndarray, m: MetricField) -> tuple[np.ndarray, np.ndarray]:
    """eta_ij = g_ij + chi_{k,i} g^{kl} chi_{l,j} and its inverse."""
    eta = m.g + np.einsum("ki...,kl...,lj...->ij...", chi_p, m.g_inv, chi_p)
    return eta, batched_inverse(eta, m.dim)


def _inverse_cholesky_points(m: MetricField) -> np.ndarray | None:
    """L^{-1} per point with g = L L^T, cached on the (immutable) metric."""
    if m.is_flat:
        return None
    cache = m.__dict__.get("_chol_inv")
    if cache is None:
        L = np.linalg.cholesky(to_points(m.g, m.dim, 2))
        cache = np.linalg.inv(L)
        object.__setattr__(m, "_chol_inv", cache)
    return cache


def angle_eigenvalues(chi_p: np.ndarray, m: MetricField) -> np.ndarray:
    """Eigenvalues of g^{-1/2} chi' g^{-1/2} per point, shape (n,) + grid.

    Uses the Cholesky congruence L^{-1} chi' L^{-T}, which is symmetric and
    similar to g^{-1} chi'.
    """
    n = m.dim
    pts = to_points(chi_p, n, 2)
    Li = _inverse_cholesky_points(m)
    if Li is not None:
        if n == 1:
            pts = pts * (Li * Li)
        else:
            pts = Li @ pts @ np.swapaxes(Li, 1, 2)
            pts = 0.5 * (pts + np.swapaxes(pts, 1, 2))
    lam = jacobi_eigvalsh(pts)
    return np.moveaxis(lam.reshape(m.grid.shape + (n,)), -1, 0)


def branch_residual(theta: np.ndarray, chi_p: np.ndarray, eta: np.ndarray, m: MetricField) -> float:
    """sup |e^{i theta} - det(g + i chi') / (sqrt det g sqrt det eta)|."""
    n = m.dim
    G = to_points(m.g, n, 2)
    C = to_points(chi_p, n, 2)
    num = np.linalg.det(G + 1j * C)
    den = m.sqrt_det_g.ravel() * np.sqrt(np.linalg.det(to_points(eta, n, 2)))
    return float(np.max(np.abs(np.exp(1j * theta.ravel()) - num / den)))


def lagrangian_angle(chi_p: np.ndarray, m: MetricField) -> tuple[np.ndarray, float]:
    """theta = sum_i arctan(lambda_i), with the determinant formula as cross-check."""
    lam = angle_eigenvalues(chi_p, m)
    theta = np.sum(np.arctan(lam), axis=0)
    eta, _ = induced_metric(chi_p, m)
    return theta, branch_residual(theta, chi_p, eta, m)


def angle_bundle(state: GraphState, m: MetricField) -> AngleBundle:
    cp = chi_prime(state, m)
    eta, eta_inv = induced_metric(cp, m)
    lam = angle_eigenvalues(cp, m)
    theta = np.sum(np.arctan(lam), axis=0)
    return AngleBundle(cp, eta, eta_inv, theta, branch_residual(theta, cp, eta, m),
                       float(np.max(np.abs(lam))), lam)


def angle_gradient_residual(theta: np.ndarray, chi: np.ndarray, m: MetricField,
                            eta_inv: np.ndarray | None = None) -> float:
    """sup_{x,k} |d_k theta - eta^{pq} chi_{p,qk}|."""
    c1 = covd(chi, m)
    if eta_inv is None:
        _, eta_inv = induced_metric(0.5 * (c1 + np.swapaxes(c1, 0, 1)), m)
    c2 = covd(c1, m)
    rhs = np.einsum("pq...,pqk...->k...", eta_inv, c2)
    return float(np.max(np.abs(gradient(theta, m.grid) - rhs)))


def special_lagrangian_residual(state: GraphState, m: MetricField) -> float:
    """osc(theta) = sup theta - inf theta."""
    theta, _ = lagrangian_angle(chi_prime(state, m), m)
    return float(np.max(theta) - np.min(theta))
