"""Tensor calculus on a periodic grid over the torus (R/2piZ)^n.

Array layout: tensor slots first, grid axes last.  A scalar field has shape
``grid.shape``, a covector ``(n,) + grid.shape``, a 2-tensor
``(n, n) + grid.shape`` and so on.  Every covariant derivative appends its
new (lower) index as the last tensor slot, so ``u_{ijk}`` is stored as
``T[i, j, k]`` with ``k`` the outermost derivative.

Curvature follows R(d_k, d_l) d_j = R^i_{jkl} d_i, i.e.

    R^i_{jkl} = d_k G^i_{jl} - d_l G^i_{jk} + G^i_{pk} G^p_{jl} - G^i_{pl} G^p_{jk}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NonClosedFormError, NonPositiveMetricError
from .trig import TrigPoly

_LETTERS = "abcdefghijkl"


@dataclass(frozen=True)
class PeriodicGrid:
    dim: int
    points_per_axis: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.points_per_axis < 16:
            raise ValueError(f"points_per_axis must be >= 16, got {self.points_per_axis}")

    @property
    def spacing(self) -> float:
        return 2.0 * math.pi / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis ** self.dim

    def coords(self) -> tuple[np.ndarray, ...]:
        q = np.arange(self.points_per_axis) * self.spacing
        return tuple(np.meshgrid(*([q] * self.dim), indexing="ij"))

    def sample(self, poly: TrigPoly) -> np.ndarray:
        if poly.dim != self.dim:
            raise ValueError(f"polynomial dim {poly.dim} != grid dim {self.dim}")
        return np.broadcast_to(np.asarray(poly(*self.coords()), dtype=float), self.shape).copy()

    def index_of(self, flat: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))


@dataclass(frozen=True)
class MetricSpec:
    """Metric family on the torus.

    ``flat``: g = identity.  ``conformal``: g = exp(2 f) identity.
    ``diagonal``: g = diag(d_1, ..., d_n).
    """

    family: str = "flat"
    f: TrigPoly | None = None
    d: tuple[TrigPoly, ...] = ()

    def __post_init__(self):
        if self.family not in ("flat", "conformal", "diagonal"):
            raise ValueError(f"unknown metric family {self.family!r}")
        if self.family == "conformal" and self.f is None:
            raise ValueError("conformal metric needs f")
        if self.family == "diagonal" and not self.d:
            raise ValueError("diagonal metric needs d")

    @classmethod
    def from_strings(cls, family: str, dim: int, f: str = "", d: Sequence[str] = ()) -> "MetricSpec":
        if family == "conformal":
            if not f.strip():
                raise ValueError("conformal metric needs a non-empty f")
            return cls(family, f=TrigPoly.parse(f, dim))
        if family == "diagonal":
            if len(d) != dim:
                raise ValueError(f"diagonal metric needs {dim} entries, got {len(d)}")
            return cls(family, d=tuple(TrigPoly.parse(s, dim) for s in d))
        return cls(family)


@dataclass(frozen=True, eq=False)
class MetricField:
    grid: PeriodicGrid
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det_g: np.ndarray
    christoffel: np.ndarray  # [k, i, j] = Gamma^k_{ij}
    riemann: np.ndarray  # [i, j, k, l] = R^i_{jkl}
    is_flat: bool = False
    spec: MetricSpec | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def riemann_lower(self) -> np.ndarray:
        """R_{ijkl} = g_{im} R^m_{jkl}."""
        return np.einsum("im...,mjkl...->ijkl...", self.g, self.riemann)

    def sectional_curvature(self) -> np.ndarray:
        """Gauss curvature for n = 2: <R(e1,e2)e2, e1> / det g."""
        if self.dim != 2:
            raise ValueError("sectional_curvature is defined here for n = 2 only")
        r1212 = np.einsum("i...,i...->...", self.g[0], self.riemann[:, 1, 0, 1])
        return r1212 / self.sqrt_det_g ** 2


# ---------------------------------------------------------------------------
# stencils


def fd_partial(field: np.ndarray, axis: int, order: int, grid: PeriodicGrid) -> np.ndarray:
    """Fourth-order centred derivative along grid ``axis`` (0-based).

    Works on any array whose trailing ``grid.dim`` axes are the grid.
    """
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for a {grid.dim}-d grid")
    field = np.asarray(field, dtype=float)
    ax = field.ndim - grid.dim + axis
    h = grid.spacing
    # periodic pad by two cells, then shifted views
    N = field.shape[ax]
    ext = np.concatenate([_take(field, ax, N - 2, N), field, _take(field, ax, 0, 2)], axis=ax)
    m2, m1 = _take(ext, ax, 0, N), _take(ext, ax, 1, N + 1)
    p1, p2 = _take(ext, ax, 3, N + 3), _take(ext, ax, 4, N + 4)
    if order == 1:
        return (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
    if order == 2:
        return (16.0 * (p1 + m1) - (p2 + m2) - 30.0 * field) / (12.0 * h * h)
    raise ValueError(f"order must be 1 or 2, got {order}")


def _take(a: np.ndarray, ax: int, start: int, stop: int) -> np.ndarray:
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, stop)
    return a[tuple(idx)]


def gradient(field: np.ndarray, grid: PeriodicGrid) -> np.ndarray:
    """Coordinate partials stacked as a new last tensor slot."""
    parts = [fd_partial(field, a, 1, grid) for a in range(grid.dim)]
    nt = np.ndim(field) - grid.dim
    return np.stack(parts, axis=nt)


def covd(T: np.ndarray, m: MetricField, up: Sequence[bool] | None = None) -> np.ndarray:
    """Covariant derivative of a tensor field; the new lower index goes last.

    ``up[s]`` marks slot ``s`` as contravariant.  Default: all lower.
    """
    grid = m.grid
    k = np.ndim(T) - grid.dim
    dT = gradient(T, grid)
    if m.is_flat or k == 0:
        return dT
    up = tuple(up) if up is not None else (False,) * k
    if len(up) != k:
        raise ValueError("len(up) must match the tensor rank")
    slots = _LETTERS[:k]
    out = dT
    for s, is_up in enumerate(up):
        x = slots[s]
        swapped = slots[:s] + "y" + slots[s + 1:]
        if is_up:
            # + Gamma^x_{z y} T^{..y..}
            out = out + np.einsum(f"{x}zy...,{swapped}...->{slots}z...", m.christoffel, T)
        else:
            # - Gamma^y_{x z} T_{..y..}
            out = out - np.einsum(f"y{x}z...,{swapped}...->{slots}z...", m.christoffel, T)
    return out


def covariant_gradient(u: np.ndarray, m: MetricField) -> np.ndarray:
    return gradient(u, m.grid)


def covariant_hessian(u: np.ndarray, m: MetricField) -> np.ndarray:
    """u_{ij} = d_i d_j u - Gamma^k_{ij} u_k, symmetrised so u_{ij} == u_{ji} exactly."""
    return symmetrize(covd(gradient(u, m.grid), m))


def covariant_third(u: np.ndarray, m: MetricField, hess: np.ndarray | None = None) -> np.ndarray:
    """u_{ijk} = nabla_k u_{ij}; symmetric in (i, j) only."""
    return covd(covariant_hessian(u, m) if hess is None else hess, m)


def symmetrize(T: np.ndarray) -> np.ndarray:
    """Mirror the upper triangle of the first two slots onto the lower one."""
    out = T.copy()
    n = T.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            out[j, i] = out[i, j]
    return out


def stencil_tolerance(grid: PeriodicGrid, scale: float) -> float:
    return grid.spacing ** 4 * scale + 1e-13 * max(scale, 1.0)


def oneform_covariant_derivative(chi: np.ndarray, m: MetricField,
                                 check_closed: bool = True) -> tuple[np.ndarray, float]:
    """chi_{j,i} = d_i chi_j - Gamma^k_{ij} chi_k, stored as ``out[j, i]``.

    Returns the tensor and the symmetry defect sup|chi_{j,i} - chi_{i,j}|.
    """
    out = covd(chi, m)
    defect = float(np.max(np.abs(out - np.swapaxes(out, 0, 1)))) if m.dim > 1 else 0.0
    if check_closed:
        tol = stencil_tolerance(m.grid, float(np.max(np.abs(chi))) if chi.size else 0.0)
        if defect > 10.0 * tol:
            raise NonClosedFormError(
                f"non-closed input: symmetry defect {defect:.3e} exceeds 10x stencil tolerance {tol:.3e}")
    return out, defect


def raise_index(T: np.ndarray, m: MetricField, slot: int) -> np.ndarray:
    k = np.ndim(T) - m.dim
    slots = _LETTERS[:k]
    src = slots[:slot] + "y" + slots[slot + 1:]
    return np.einsum(f"{slots[slot]}y...,{src}...->{slots}...", m.g_inv, T)


def lower_index(T: np.ndarray, m: MetricField, slot: int) -> np.ndarray:
    k = np.ndim(T) - m.dim
    slots = _LETTERS[:k]
    src = slots[:slot] + "y" + slots[slot + 1:]
    return np.einsum(f"{slots[slot]}y...,{src}...->{slots}...", m.g, T)


def full_norm_sq(T: np.ndarray, m: MetricField, S: np.ndarray | None = None) -> np.ndarray:
    """g-contraction <T, S> over all slots (S defaults to T)."""
    S = T if S is None else S
    k = np.ndim(T) - m.dim
    R = S
    for s in range(k):
        R = raise_index(R, m, s)
    return np.einsum(f"{_LETTERS[:k]}...,{_LETTERS[:k]}...->...", T, R)


# ---------------------------------------------------------------------------
# metric construction


def build_metric(spec: MetricSpec, grid: PeriodicGrid) -> MetricField:
    """Sample the metric family and derive Christoffel symbols and curvature.

    Derivatives of g come from the family's closed forms, so the flat case
    is bit-exactly zero and the curvature is free of stencil error.
    """
    n = grid.dim
    shape = grid.shape
    eye = np.zeros((n, n) + shape)
    for i in range(n):
        eye[i, i] = 1.0
    if spec.family == "flat":
        zeros3 = np.zeros((n, n, n) + shape)
        return MetricField(grid, eye, eye.copy(), np.ones(shape), zeros3,
                           np.zeros((n,) * 4 + shape), is_flat=True, spec=spec)

    g = np.zeros((n, n) + shape)
    dg = np.zeros((n, n, n) + shape)  # [i, j, k] = d_k g_ij
    ddg = np.zeros((n, n, n, n) + shape)  # [i, j, k, l] = d_l d_k g_ij
    if spec.family == "conformal":
        f = spec.f
        if f.dim != n:
            raise ValueError("conformal factor dimension mismatch")
        e2f = np.exp(2.0 * grid.sample(f))
        df = [grid.sample(f.derivative(k)) for k in range(n)]
        ddf = [[grid.sample(f.derivative(k).derivative(l)) for l in range(n)] for k in range(n)]
        for i in range(n):
            g[i, i] = e2f
            for k in range(n):
                dg[i, i, k] = 2.0 * df[k] * e2f
                for l in range(n):
                    ddg[i, i, k, l] = (4.0 * df[k] * df[l] + 2.0 * ddf[k][l]) * e2f
    else:
        for i, di in enumerate(spec.d):
            if di.dim != n:
                raise ValueError("diagonal entry dimension mismatch")
            g[i, i] = grid.sample(di)
            for k in range(n):
                dk = di.derivative(k)
                dg[i, i, k] = grid.sample(dk)
                for l in range(n):
                    ddg[i, i, k, l] = grid.sample(dk.derivative(l))
    return _derive(grid, g, dg, ddg, spec)


def build_metric_from_samples(g: np.ndarray, grid: PeriodicGrid) -> MetricField:
    """Fallback when only samples of g are known: derivatives by stencils."""
    g = np.asarray(g, dtype=float)
    n = grid.dim
    dg = gradient(g, grid)
    ddg = np.stack([fd_partial(dg, l, 1, grid) for l in range(n)], axis=3)
    for k in range(n):
        ddg[:, :, k, k] = fd_partial(g, k, 2, grid)
    return _derive(grid, g, dg, ddg, None)


def _derive(grid, g, dg, ddg, spec) -> MetricField:
    n = grid.dim
    pts = to_points(g, n, 2)
    evals = np.linalg.eigvalsh(pts)
    bad = np.flatnonzero(evals[:, 0] <= 0.0)
    if bad.size:
        idx = grid.index_of(int(bad[0]))
        raise NonPositiveMetricError(
            f"metric not positive definite at grid point {idx} (min eigenvalue {evals[bad[0], 0]:.3e})")
    g_inv = batched_inverse(g, n)
    sqrt_det = np.sqrt(np.prod(evals, axis=1)).reshape(grid.shape)

    # Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)
    lower = 0.5 * (np.einsum("jli...->ijl...", dg) + np.einsum("ilj...->ijl...", dg)
                   - np.einsum("ijl...->ijl...", dg))
    gamma = np.einsum("kl...,ijl...->kij...", g_inv, lower)
    # d_m Gamma^k_ij
    dginv = -np.einsum("ka...,abm...,bl...->klm...", g_inv, dg, g_inv)
    dlower = 0.5 * (np.einsum("jlim...->ijlm...", ddg) + np.einsum("iljm...->ijlm...", ddg)
                    - ddg)
    dgamma = (np.einsum("klm...,ijl...->kijm...", dginv, lower)
              + np.einsum("kl...,ijlm...->kijm...", g_inv, dlower))
    riemann = (np.einsum("ijlk...->ijkl...", dgamma) - dgamma
               + np.einsum("ipk...,pjl...->ijkl...", gamma, gamma)
               - np.einsum("ipl...,pjk...->ijkl...", gamma, gamma))
    return MetricField(grid, g, g_inv, sqrt_det, gamma, riemann, is_flat=False, spec=spec)


# ---------------------------------------------------------------------------
# batched small-matrix helpers


def to_points(T: np.ndarray, n: int, rank: int) -> np.ndarray:
    """(n,)*rank + grid  ->  (P,) + (n,)*rank."""
    moved = np.moveaxis(T, list(range(rank)), list(range(-rank, 0)))
    return moved.reshape((-1,) + (n,) * rank)


def from_points(P: np.ndarray, shape: tuple[int, ...], rank: int) -> np.ndarray:
    n = P.shape[-1]
    T = P.reshape(shape + (n,) * rank)
    return np.moveaxis(T, list(range(-rank, 0)), list(range(rank)))


def batched_inverse(A: np.ndarray, n: int) -> np.ndarray:
    shape = A.shape[2:]
    if n == 1:
        return 1.0 / A
    inv = np.linalg.inv(to_points(A, n, 2))
    return np.ascontiguousarray(from_points(inv, shape, 2))


def weighted_mean(field: np.ndarray, m: MetricField) -> float:
    """Mean with respect to dV_g; the h^n cell volume cancels."""
    w = m.sqrt_det_g.ravel()
    return float(np.sum(field.ravel() * w) / np.sum(w))
