"""Coefficient families, model construction, gauge quantities, audits."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from lsvsmile import (
    AuditGrid,
    ModelConfigError,
    audit_assumptions,
    build_model,
    gauge_chi,
    gauge_potential,
    parse_model_config,
)
from lsvsmile.model import (
    AlphaPower,
    ModelSpec,
    MuGaugeDrift,
    MuRational,
    MuZero,
    SigmaConstant,
    SigmaLogistic,
)

from conftest import SABR_CONFIG_TEXT, make_model


# ---------------------------------------------------------------------------
# Families: analytic derivatives vs central finite differences
# ---------------------------------------------------------------------------

_FAMILIES_X = [
    SigmaConstant(1.3),
    SigmaLogistic(lo=0.7, hi=1.4, slope=2.0, center=-0.3),
]
_FAMILIES_Y = [
    AlphaPower(nu=1.0, p=1.0),
    AlphaPower(nu=0.8, p=0.6),
    MuRational(mu0=0.3, kappa=0.7),
    MuGaugeDrift(c=0.4, alpha=AlphaPower(nu=1.2, p=0.9)),
]


@pytest.mark.parametrize("fam", _FAMILIES_X, ids=lambda f: f.kind)
def test_sigma_derivatives_match_finite_differences(fam):
    h = 1e-5
    xs = np.linspace(-2.0, 2.0, 9)
    fd1 = (fam(xs + h) - fam(xs - h)) / (2 * h)
    assert np.allclose(fam.deriv(xs), fd1, rtol=1e-6, atol=1e-9)
    # second differences need a wider step: roundoff scales like eps/h^2
    h2 = 1e-4
    fd2 = (fam(xs + h2) - 2 * fam(xs) + fam(xs - h2)) / h2**2
    assert np.allclose(fam.deriv2(xs), fd2, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("fam", _FAMILIES_Y, ids=lambda f: f"{type(f).__name__}")
def test_y_family_derivatives_match_finite_differences(fam):
    h = 1e-5
    ys = np.linspace(0.05, 3.0, 9)
    fd1 = (fam(ys + h) - fam(ys - h)) / (2 * h)
    assert np.allclose(fam.deriv(ys), fd1, rtol=1e-6, atol=1e-9)
    if hasattr(fam, "deriv2"):
        h2 = 1e-4
        fd2 = (fam(ys + h2) - 2 * fam(ys) + fam(ys - h2)) / h2**2
        assert np.allclose(fam.deriv2(ys), fd2, rtol=1e-5, atol=1e-5)


def test_gauge_drift_reduces_to_sabr():
    mu = MuGaugeDrift(c=0.0, alpha=AlphaPower(nu=1.0, p=1.0))
    ys = np.linspace(0.1, 5.0, 7)
    assert np.allclose(mu(ys), 0.0, atol=1e-14)
    # and with c != 0, alpha = nu*y: mu = -c*nu*y^2
    mu2 = MuGaugeDrift(c=0.3, alpha=AlphaPower(nu=2.0, p=1.0))
    assert np.allclose(mu2(ys), -0.3 * 2.0 * ys**2, rtol=1e-13)


# ---------------------------------------------------------------------------
# build_model validation
# ---------------------------------------------------------------------------

def test_build_model_sabr_roundtrip():
    m = build_model(parse_model_config(SABR_CONFIG_TEXT))
    assert isinstance(m.sigma, SigmaConstant) and m.sigma.value == 1.0
    assert isinstance(m.alpha, AlphaPower) and m.alpha.nu == 1.0 and m.alpha.p == 1.0
    assert isinstance(m.mu, MuZero)
    assert m.rho == 0.0 and m.lam == 0.0 and m.x0 == 0.0 and m.y0 == 0.2
    assert m.sigma_is_unit()


@pytest.mark.parametrize("breakage,msg", [
    (dict(alpha={"kind": "power", "nu": 1.0, "p": 1.5}), "p in (0, 1]"),
    (dict(alpha={"kind": "power", "nu": -1.0, "p": 1.0}), "nu > 0"),
    (dict(sigma={"kind": "exotic"}), "unknown sigma family"),
    (dict(mu={"kind": "mean-reverting"}), "unknown mu family"),
    (dict(sigma={"kind": "constant", "value": -2.0}), "value > 0"),
    (dict(sigma={"kind": "constant"}), "missing parameter"),
    (dict(model={"rho": -1.5}), "rho"),
    (dict(model={"y0": -0.1}), "y0"),
])
def test_build_model_rejects(breakage, msg):
    cfg = {"sigma": {"kind": "constant", "value": 1.0},
           "alpha": {"kind": "power", "nu": 1.0, "p": 1.0},
           "mu": {"kind": "zero"},
           "model": {}}
    cfg.update(breakage)
    with pytest.raises(ModelConfigError, match=None) as err:
        build_model(cfg)
    assert msg.split()[0] in str(err.value)


def test_rho_requires_constant_sigma_and_gauge_drift():
    with pytest.raises(ModelConfigError):
        make_model(sigma={"kind": "logistic", "lo": 0.8, "hi": 1.2, "slope": 1.0},
                   rho=-0.3)
    with pytest.raises(ModelConfigError):
        make_model(mu={"kind": "zero"}, rho=-0.3)
    # the admissible correlated family builds fine
    m = make_model(mu={"kind": "gauge", "c": 0.1}, rho=-0.3)
    assert isinstance(m.mu, MuGaugeDrift)


def test_lambda_requires_unit_sigma_and_zero_rho():
    with pytest.raises(ModelConfigError):
        make_model(sigma={"kind": "constant", "value": 2.0}, **{"lambda": 0.1})
    m = make_model(**{"lambda": 0.1})
    assert m.lam == 0.1


# ---------------------------------------------------------------------------
# Gauge factor chi
# ---------------------------------------------------------------------------

def test_gauge_chi_sabr_unit_point(sabr):
    assert gauge_chi(sabr, 0.0, 1.0) == pytest.approx(1.0, abs=1e-14)


def test_gauge_chi_sabr_off_unit(sabr):
    # sqrt(sigma) e^{x/2} sqrt(alpha(y)/y) e^{-int}: for alpha = y every
    # y-factor is unity, so chi = e^{0.1} at (0.2, 0.5)
    assert gauge_chi(sabr, 0.2, 0.5) == pytest.approx(math.exp(0.1), rel=1e-12)


def test_gauge_chi_small_y_asymptote():
    # mu0 > 0 bends chi to ~ sqrt(A1) sqrt(sigma) e^{x/2} y^{-mu0/A1^2} near 0
    mu0 = 0.05
    m = make_model(mu={"kind": "rational", "mu0": mu0, "kappa": 0.0})
    y = 1e-4
    ratio = gauge_chi(m, 0.0, y) / y**(-mu0)
    assert abs(ratio - 1.0) < 0.02


def test_gauge_chi_guards(sabr, rho_model):
    with pytest.raises(ValueError):
        gauge_chi(sabr, 0.0, -1.0)
    with pytest.raises(ValueError):
        gauge_chi(rho_model, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Gauge potential V
# ---------------------------------------------------------------------------

def test_gauge_potential_sabr_closed_form(sabr):
    # sigma == 1, alpha = y, mu = 0: g = 0 so V = -y^2/8
    ys = np.array([0.1, 0.5, 0.7, 2.0, 10.0])
    assert np.allclose(gauge_potential(sabr, 0.3, ys), -(ys**2) / 8.0, rtol=1e-12)


def test_gauge_potential_x_independent_for_constant_sigma(drift_model):
    ys = np.array([0.3, 1.0, 4.0])
    v0 = gauge_potential(drift_model, 0.0, ys)
    for x in (-1.0, 0.7, 3.0):
        assert np.allclose(gauge_potential(drift_model, x, ys), v0, rtol=0, atol=1e-14)


def test_gauge_potential_rho_tail(rho_model):
    # alpha = y, c = 0: V(y) = -y^2 sigma0^2 / (8 (1-rho^2)) exactly, which is
    # also the stated large-y asymptote
    rho = rho_model.rho
    y = 1e3
    v = gauge_potential(rho_model, 0.0, y)
    asym = -y**2 / (8.0 * (1.0 - rho**2)) * ((0.0 - rho) ** 2 + (1.0 - rho**2))
    assert abs(v / asym - 1.0) < 1e-2
    assert abs(v / asym - 1.0) < 1e-12   # exact for the linear family


def test_gauge_potential_bounded_above(drift_model):
    grid = AuditGrid()
    v = gauge_potential(drift_model, grid.x_values()[:, None], grid.y_values()[None, :])
    assert np.isfinite(v.max())
    assert v.max() < 1.0


def test_gauge_potential_rho_requires_structure():
    m = ModelSpec(sigma=SigmaConstant(1.0), alpha=AlphaPower(1.0, 1.0),
                  mu=MuZero(), rho=-0.4, y0=0.2)
    with pytest.raises(ValueError):
        gauge_potential(m, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Assumption audit
# ---------------------------------------------------------------------------

def test_audit_sabr_all_pass(sabr):
    rep = audit_assumptions(sabr)
    assert rep.passed
    assert not rep.warnings
    # kappa == -1 on the grid
    w = rep.check("negative-curvature").witness
    assert w["max_kappa"] == pytest.approx(-1.0, rel=1e-12)
    # V is bounded; the small-y limit of the x-independent bound is 0 here
    w = rep.check("potential-bound").witness
    assert w["Vbar_origin_limit"] == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(w["V_max"])


def test_audit_p_half_curvature_tail():
    m = make_model(alpha={"kind": "power", "nu": 1.0, "p": 0.5})
    rep = audit_assumptions(m)
    # kappa(y) ~ -B1^2 (2-p) y^{2(p-1)} at the far end, within 1%
    w = rep.check("curvature-tail").witness
    assert abs(w["ratio"] - 1.0) < 0.01
    # pure power with p < 1 violates the linear origin growth; recorded, not raised
    assert not rep.check("growth-exponents").passed
    assert rep.check("negative-curvature").passed


def test_audit_skew_violation_has_witness():
    m = make_model(sigma={"kind": "logistic", "lo": 0.2, "hi": 0.3,
                          "slope": 10.0, "center": 0.0})
    rep = audit_assumptions(m)
    chk = rep.check("skew-condition")
    assert not chk.passed
    assert chk.witness["min_value"] < 0.0
    assert -1.0 <= chk.witness["at_x"] <= 1.0


def test_audit_growth_failure_for_p_above_one():
    # constructed directly: build_model would reject p = 1.2
    m = ModelSpec(sigma=SigmaConstant(1.0), alpha=AlphaPower(nu=1.0, p=1.2),
                  mu=MuZero(), y0=0.2)
    rep = audit_assumptions(m)
    assert not rep.check("growth-exponents").passed


def test_audit_mu0_positive_warns():
    m = make_model(mu={"kind": "rational", "mu0": 0.05, "kappa": 0.0})
    rep = audit_assumptions(m)
    assert rep.passed
    assert any("mu0" in w for w in rep.warnings)


def test_audit_reproducible(sabr):
    grid = AuditGrid(n_y=101, n_x=11)
    r1 = audit_assumptions(sabr, grid)
    r2 = audit_assumptions(sabr, grid)
    assert r1 == r2


# chi normalization sanity: the integral in chi matches direct quadrature
def test_gauge_chi_integral_against_quad(drift_model):
    y = 2.5
    inner, _ = quad(lambda u: float(drift_model.mu(u)) / float(drift_model.alpha(u))**2,
                    1.0, y, epsabs=1e-13)
    expect = math.sqrt(float(drift_model.alpha(y)) / y) * math.exp(-inner)
    assert gauge_chi(drift_model, 0.0, y) == pytest.approx(expect, rel=1e-10)
