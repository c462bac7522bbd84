"""Work term, kernel factors, leading-order density, McKean kernel, VVM."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from lsvsmile import (
    bellaiche_density,
    distance_point,
    jacobi_u0,
    kernel_factors,
    mckean_kernel,
    sabr_reference,
    solve_line_geodesic,
    vvm_determinant,
)
from lsvsmile.heatkernel import work_term_A, work_term_along_path
from lsvsmile.model import AlphaPower, ModelSpec, MuZero, SigmaConstant

from conftest import make_model


# ---------------------------------------------------------------------------
# Work term A
# ---------------------------------------------------------------------------

def test_work_term_sabr(sabr):
    geo = solve_line_geodesic(sabr, 0.2)
    assert work_term_A(sabr, geo) == pytest.approx(-0.1, abs=1e-12)


def test_work_term_sabr_negative_strike(sabr):
    geo = solve_line_geodesic(sabr, -0.12)
    assert work_term_A(sabr, geo) == pytest.approx(0.06, abs=1e-12)


def test_work_term_vanishes_on_vertical_path(sabr):
    # x constant and alpha = y, mu = 0 kill both pieces of the integrand
    res = distance_point(sabr, (0.0, 0.2), (0.0, 0.5), want_path=True)
    assert abs(work_term_along_path(sabr, res.path)) < 1e-12


def test_work_term_dual_route_agreement(drift_model):
    geo = solve_line_geodesic(drift_model, 0.2)
    fast = work_term_A(drift_model, geo)
    general = work_term_along_path(drift_model, geo.path)
    assert abs(fast - general) < 1e-8
    # and the fast path equals its two one-dimensional integrals
    drift_part, _ = quad(
        lambda y: float(drift_model.mu(y)) / y**2, 0.2, geo.y1_star, epsabs=1e-14)
    assert fast == pytest.approx(-0.5 * (geo.x1 - 0.0) + drift_part, abs=1e-10)


def test_work_term_dual_route_with_local_vol(skewed_model):
    geo = solve_line_geodesic(skewed_model, 0.2)
    fast = work_term_A(skewed_model, geo)
    general = work_term_along_path(skewed_model, geo.path)
    assert abs(fast - general) < 1e-8


# ---------------------------------------------------------------------------
# Kernel factors
# ---------------------------------------------------------------------------

def test_kernel_factors_sabr(sabr):
    geo = solve_line_geodesic(sabr, 0.2)
    kf = kernel_factors(sabr, geo)
    # psi = e^{-x/2} (d / sinh d)^{1/2}: sqrt|g| cancels y1*^2 for alpha = y
    expect_psi = math.exp(-0.1) * math.sqrt(geo.d / math.sinh(geo.d))
    assert kf.psi == pytest.approx(expect_psi, rel=1e-9)
    assert kf.phi == pytest.approx(0.5 * geo.d**2, rel=1e-14)
    assert kf.P == pytest.approx(math.exp(kf.A), rel=1e-14)
    assert kf.u0 > 0.0 and kf.psi > 0.0 and kf.phi > 0.0


# ---------------------------------------------------------------------------
# Leading-order density
# ---------------------------------------------------------------------------

def _sabr_density_closed_form(x, y, t, y0=0.2):
    c = 1.0 + (x * x + (y - y0) ** 2) / (2.0 * y0 * y)
    d = math.acosh(c)
    u0 = (math.sinh(d) / d) ** -0.5
    return u0 / (2.0 * math.pi * t) * math.exp(-d * d / (2.0 * t) - 0.5 * x) / y**2


@pytest.mark.parametrize("q", [(0.03, 0.21), (-0.05, 0.17), (0.08, 0.25)])
def test_bellaiche_density_matches_closed_form(sabr, q):
    t = 0.01
    val = bellaiche_density(sabr, (0.0, 0.2), q, t)
    assert val == pytest.approx(_sabr_density_closed_form(q[0], q[1], t), rel=1e-10)


def test_bellaiche_log_limit(sabr):
    # -t log p_hat -> d^2/2, extrapolating out the t log(1/t) prefactor drift
    p, q = (0.0, 0.2), (0.15, 0.26)
    dd = distance_point(sabr, p, q, want_path=False).d
    t1, t2 = 1e-2, 1e-3
    f1 = -t1 * math.log(bellaiche_density(sabr, p, q, t1))
    f2 = -t2 * math.log(bellaiche_density(sabr, p, q, t2))
    w1, w2 = t1 * math.log(1.0 / t1), t2 * math.log(1.0 / t2)
    c = (f1 - f2) / (w1 - w2)
    extrapolated = f2 - c * w2
    assert abs(extrapolated / (0.5 * dd * dd) - 1.0) < 0.01


def test_bellaiche_guards(sabr):
    with pytest.raises(ValueError):
        bellaiche_density(sabr, (0.1, 0.2), (0.1, 0.2), 0.01)
    with pytest.raises(ValueError):
        bellaiche_density(sabr, (0.0, 0.2), (0.1, 0.2), -1.0)


@pytest.mark.slow
def test_bellaiche_mass_near_one(sabr):
    # normalization check at t = 0.01 on a wide grid; the closed-form SABR
    # assembly is used (already tied pointwise to bellaiche_density above)
    t, y0 = 0.01, 0.2
    xs = np.linspace(-0.15, 0.15, 401)
    ys = np.exp(np.linspace(math.log(y0) - 0.8, math.log(y0) + 0.8, 401))
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    c = 1.0 + (X**2 + (Y - y0) ** 2) / (2.0 * y0 * Y)
    d = np.arccosh(c)
    with np.errstate(divide="ignore", invalid="ignore"):
        u0 = np.where(d > 1e-12, (np.sinh(d) / d) ** -0.5, 1.0)
    dens = u0 / (2.0 * math.pi * t) * np.exp(-d * d / (2.0 * t) - 0.5 * X) / Y**2
    mass = np.trapezoid(np.trapezoid(dens, ys, axis=1), xs)
    assert mass <= 1.02
    assert mass > 0.98


# ---------------------------------------------------------------------------
# McKean kernel on the hyperbolic plane
# ---------------------------------------------------------------------------

def _bellaiche_h2(d, t):
    return (math.sinh(d) / d) ** -0.5 / (2.0 * math.pi * t) * math.exp(-d * d / (2.0 * t))


def test_mckean_close_to_leading_order():
    assert mckean_kernel(0.5, 0.01) == pytest.approx(_bellaiche_h2(0.5, 0.01), rel=0.02)


def test_mckean_ratio_tends_to_one():
    devs = [abs(mckean_kernel(0.5, t) / _bellaiche_h2(0.5, t) - 1.0)
            for t in (0.04, 0.02, 0.01)]
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 2e-3


def test_mckean_decreasing_in_distance():
    vals = [mckean_kernel(d, 0.05) for d in np.linspace(0.0, 2.0, 9)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_mckean_vanishes_at_large_distance():
    assert mckean_kernel(8.0, 0.05) < 1e-100
    with pytest.raises(ValueError):
        mckean_kernel(-0.1, 0.05)


# ---------------------------------------------------------------------------
# van Vleck-Morette diagnostic
# ---------------------------------------------------------------------------

def test_vvm_matches_u0_sabr(sabr):
    val = vvm_determinant(sabr, (0.0, 0.2), (0.2, 0.25))
    d = distance_point(sabr, (0.0, 0.2), (0.2, 0.25), want_path=False).d
    expect = (math.sinh(d) / d) ** -0.5
    assert val == pytest.approx(expect, rel=1e-3)


@pytest.mark.slow
def test_vvm_agrees_with_jacobi_on_random_pairs(sabr):
    rng = np.random.default_rng(12)
    for _ in range(5):
        p = (float(rng.uniform(-0.2, 0.2)), float(rng.uniform(0.15, 0.4)))
        q = (p[0] + float(rng.uniform(0.08, 0.3)), float(rng.uniform(0.15, 0.4)))
        res = distance_point(sabr, p, q, want_path=True)
        u0 = jacobi_u0(sabr, res.path)
        assert vvm_determinant(sabr, p, q) == pytest.approx(u0, rel=1e-3)


def test_vvm_flat_metric():
    flat = ModelSpec(sigma=SigmaConstant(1.0), alpha=AlphaPower(nu=1.0, p=2.0),
                     mu=MuZero(), y0=0.5)
    assert vvm_determinant(flat, (0.0, 0.5), (0.08, 0.55)) == pytest.approx(1.0, abs=1e-3)


def test_vvm_guards(sabr):
    with pytest.raises(ValueError):
        vvm_determinant(sabr, (0.1, 0.2), (0.1, 0.2))
