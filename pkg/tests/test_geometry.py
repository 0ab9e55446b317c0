import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from glmcf.errors import NonClosedFormError, NonPositiveMetricError
from glmcf.geometry import (MetricSpec, PeriodicGrid, build_metric, build_metric_from_samples, covariant_hessian,
                            covariant_third, covd, fd_partial, gradient, oneform_covariant_derivative)
from glmcf.trig import random_trig

from conftest import conformal, diagonal, flat


# -- grid -------------------------------------------------------------------

def test_grid_spacing_and_validation():
    g = PeriodicGrid(2, 64)
    assert abs(g.spacing * 64 - 2 * math.pi) <= math.ulp(2 * math.pi)
    with pytest.raises(ValueError):
        PeriodicGrid(4, 32)
    with pytest.raises(ValueError):
        PeriodicGrid(1, 8)


# -- sympy oracle for Christoffel symbols and curvature ---------------------

def _sympy_conformal(n, fexpr, qs):
    g = sp.exp(2 * fexpr) * sp.eye(n)
    gi = g.inv()
    gam = [[[sp.simplify(sum(gi[k, l] * (sp.diff(g[j, l], qs[i]) + sp.diff(g[i, l], qs[j])
                                          - sp.diff(g[i, j], qs[l])) for l in range(n)) / 2)
             for j in range(n)] for i in range(n)] for k in range(n)]
    return g, gam


def test_christoffel_1d_conformal_against_sympy():
    q = sp.symbols("q")
    _, gam = _sympy_conformal(1, sp.Rational(1, 10) * sp.sin(q), [q])
    oracle = sp.lambdify(q, gam[0][0][0])
    m = conformal(n=1, N=64)
    x = m.grid.coords()[0]
    np.testing.assert_allclose(m.christoffel[0, 0, 0], oracle(x), atol=1e-15)
    assert m.christoffel[0, 0, 0][0] == pytest.approx(0.1, abs=1e-15)


def test_sectional_curvature_2d_conformal_against_sympy():
    q1, q2 = sp.symbols("q1 q2")
    f = sp.Rational(1, 10) * sp.sin(q1)
    # K = -e^{-2f} Laplacian f for g = e^{2f} delta
    K = sp.lambdify((q1, q2), -sp.exp(-2 * f) * (sp.diff(f, q1, 2) + sp.diff(f, q2, 2)))
    m = conformal(N=64)
    x, y = m.grid.coords()
    np.testing.assert_allclose(m.sectional_curvature(), K(x, y), atol=1e-14)
    assert m.sectional_curvature()[16, 0] == pytest.approx(0.0818730753, abs=1e-9)


def test_riemann_from_sympy_eq_convention():
    q1, q2 = sp.symbols("q1 q2")
    qs = [q1, q2]
    f = sp.Rational(1, 10) * sp.sin(q1) + sp.Rational(1, 20) * sp.cos(q2)
    _, gam = _sympy_conformal(2, f, qs)
    R = {}
    for i in range(2):
        for j in range(2):
            for k in range(2):
                for l in range(2):
                    expr = (sp.diff(gam[i][j][l], qs[k]) - sp.diff(gam[i][j][k], qs[l])
                            + sum(gam[i][p][k] * gam[p][j][l] - gam[i][p][l] * gam[p][j][k] for p in range(2)))
                    R[i, j, k, l] = sp.lambdify((q1, q2), expr)
    m = conformal(N=32, f="0.1*sin(q1) + 0.05*cos(q2)")
    x, y = m.grid.coords()
    for idx, fn in R.items():
        np.testing.assert_allclose(m.riemann[idx], np.broadcast_to(fn(x, y), x.shape), atol=1e-14)


def test_flat_metric_exact_zeros():
    m = flat(N=64)
    assert not np.any(m.christoffel) and not np.any(m.riemann)
    assert np.all(m.sqrt_det_g == 1.0)


@pytest.mark.parametrize("make", [conformal, diagonal])
def test_metric_invariants(make):
    m = make()
    n = m.dim
    eye = np.einsum("ij...,jk...->ik...", m.g, m.g_inv)
    np.testing.assert_allclose(eye, np.broadcast_to(np.eye(n)[:, :, None, None], eye.shape), atol=1e-12)
    np.testing.assert_array_equal(m.christoffel, np.swapaxes(m.christoffel, 1, 2))
    np.testing.assert_allclose(m.riemann, -np.swapaxes(m.riemann, 2, 3), atol=1e-16)
    R = m.riemann
    bianchi = R + np.einsum("ijkl...->iklj...", R) + np.einsum("ijkl...->iljk...", R)
    assert np.max(np.abs(bianchi)) <= 1e-10


def test_non_positive_metric_names_point():
    spec = MetricSpec.from_strings("diagonal", 2, d=["1 + 2*sin(q1)", "1"])
    with pytest.raises(NonPositiveMetricError, match=r"grid point \("):
        build_metric(spec, PeriodicGrid(2, 32))


def test_stencil_fallback_agrees_with_analytic():
    a = conformal(N=64)
    b = build_metric_from_samples(a.g, a.grid)
    assert np.max(np.abs(a.christoffel - b.christoffel)) < 1e-6
    assert np.max(np.abs(a.riemann - b.riemann)) < 1e-5


def test_metric_compatibility_converges():
    errs = []
    for N in (64, 128):
        m = conformal(N=N)
        errs.append(np.max(np.abs(covd(m.g, m))))
    assert errs[0] / errs[1] >= 12


# -- stencils -----------------------------------------------------------------

def test_fd_partial_accuracy_and_refinement():
    errs = []
    for N in (64, 128):
        g = PeriodicGrid(1, N)
        q = g.coords()[0]
        err = np.max(np.abs(fd_partial(np.sin(q), 0, 1, g) - np.cos(q)))
        errs.append(err)
        if N == 64:
            assert err <= 5 * g.spacing ** 4
    assert errs[0] / errs[1] >= 12
    g = PeriodicGrid(1, 64)
    q = g.coords()[0]
    assert np.max(np.abs(fd_partial(np.sin(q), 0, 2, g) + np.sin(q))) <= 5 * g.spacing ** 4


def test_fd_partial_constant_and_axis_check():
    g = PeriodicGrid(2, 16)
    c = np.full(g.shape, 3.7)
    assert not np.any(fd_partial(c, 1, 1, g))
    assert not np.any(fd_partial(c, 0, 2, g))
    with pytest.raises(ValueError):
        fd_partial(c, 2, 1, g)


@given(st.integers(0, 2 ** 32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_operators_are_linear(seed, a, b):
    m = conformal(N=16)
    rng = np.random.default_rng(seed)
    F, G = rng.normal(size=(2,) + m.grid.shape)
    for op in (lambda x: fd_partial(x, 1, 1, m.grid), lambda x: fd_partial(x, 0, 2, m.grid),
               lambda x: covariant_hessian(x, m), lambda x: covariant_third(x, m)):
        lhs = op(a * F + b * G)
        rhs = a * op(F) + b * op(G)
        scale = max(1.0, float(np.max(np.abs(op(F)))) * (abs(a) + abs(b)))
        assert np.max(np.abs(lhs - rhs)) <= 1e-13 * scale * 100


# -- covariant derivatives ------------------------------------------------------

def test_covariant_hessian_flat_example():
    m = flat(n=1, N=64)
    q = m.grid.coords()[0]
    H = covariant_hessian(0.1 * np.sin(q), m)
    assert H[0, 0][16] == pytest.approx(-0.1, abs=1e-6)
    assert not np.any(covariant_hessian(np.full(m.grid.shape, 2.0), m))


def _slow_hessian(u, m):
    """Per-component loops: d_i(d_j u) - sum_k Gamma^k_ij d_k u."""
    n, grid = m.dim, m.grid
    out = np.zeros((n, n) + grid.shape)
    du = [fd_partial(u, k, 1, grid) for k in range(n)]
    for i in range(n):
        for j in range(n):
            acc = fd_partial(du[i], j, 1, grid)
            for k in range(n):
                acc = acc - m.christoffel[k, i, j] * du[k]
            out[i, j] = acc
    return out


def test_covariant_hessian_matches_slow_path(rng):
    m = conformal(N=32)
    u = m.grid.sample(random_trig(rng, 2, 3, 0.1))
    H = covariant_hessian(u, m)
    S = _slow_hessian(u, m)
    assert np.max(np.abs(H - S)) <= 1e-13
    np.testing.assert_array_equal(H, np.swapaxes(H, 0, 1))


def test_covariant_third_flat_example():
    m = flat(n=1, N=64)
    q = m.grid.coords()[0]
    T = covariant_third(0.1 * np.sin(q), m)
    assert np.max(np.abs(T[0, 0, 0] + 0.1 * np.cos(q))) <= 1e-6
    assert not np.any(covariant_third(np.ones(m.grid.shape), m))


def test_ricci_identity_commutator_converges():
    # u_{ijk} - u_{ikj} = u_l R^l_{ijk}
    errs = []
    for N in (32, 64):
        m = conformal(N=N)
        x, y = m.grid.coords()
        u = 0.1 * np.sin(x) * np.cos(2 * y) + 0.05 * np.cos(y)
        T = covariant_third(u, m)
        du = gradient(u, m.grid)
        rhs = np.einsum("l...,lijk...->ijk...", du, m.riemann)
        errs.append(np.max(np.abs(T - np.swapaxes(T, 1, 2) - rhs)))
    assert errs[1] < 1e-5
    assert errs[0] / errs[1] >= 12


def test_oneform_derivative_examples():
    m = flat(N=32)
    chi = np.zeros((2,) + m.grid.shape)
    chi[0] = 0.3
    out, defect = oneform_covariant_derivative(chi, m)
    assert not np.any(out) and defect == 0.0

    m1 = flat(n=1, N=64)
    q = m1.grid.coords()[0]
    u = 0.1 * np.sin(q)
    out, _ = oneform_covariant_derivative(gradient(u, m1.grid), m1)
    assert np.max(np.abs(out - covariant_hessian(u, m1))) <= 1e-13

    mc = conformal(N=32)
    chi = np.zeros((2,) + mc.grid.shape)
    chi[0] = 0.3
    out, _ = oneform_covariant_derivative(chi, mc)
    slow = np.zeros_like(out)
    for j in range(2):
        for i in range(2):
            slow[j, i] = -mc.christoffel[0, i, j] * 0.3
    assert np.max(np.abs(out - slow)) <= 1e-13


def test_oneform_rejects_non_closed():
    m = flat(N=32)
    x, y = m.grid.coords()
    chi = np.stack([np.sin(y), np.zeros_like(y)])  # d chi != 0
    with pytest.raises(NonClosedFormError, match="non-closed"):
        oneform_covariant_derivative(chi, m)
