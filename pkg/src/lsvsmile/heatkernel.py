"""Leading-order heat-kernel ingredients.

The transition density of the model at small maturity behaves like

    p_t ~ (2 pi t)^{-1} u0 exp(-d^2/(2t) + A)

with respect to the Riemannian volume measure, where d is the geodesic
distance, u0 the Jacobi prefactor and A the work done by the drift vector
field along the minimizing geodesic.  This module assembles the drift work
term, the saddle weight psi used by the call-price asymptote, the density
with respect to Lebesgue measure, the exact McKean kernel on the hyperbolic
plane (used as an oracle), and the van Vleck-Morette determinant diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .exceptions import NumericalError
from .geometry import (
    GeodesicPath,
    LineGeodesic,
    _components,
    _distance_batch,
    distance_point,
    jacobi_u0,
    phi_second,
)
from .model import ModelSpec

__all__ = [
    "KernelFactors",
    "work_term_A",
    "work_term_along_path",
    "kernel_factors",
    "bellaiche_density",
    "mckean_kernel",
    "vvm_determinant",
]


@dataclass(frozen=True)
class KernelFactors:
    """Saddle-point ingredients for one strike.

    psi = y1*^2 * P * u0 * sqrt|g|(x1, y1*),  P = e^A,  phi = d^2/2.
    """

    u0: float
    A: float
    P: float
    psi: float
    phi: float
    phi_second: float


# ---------------------------------------------------------------------------
# Drift work term A
# ---------------------------------------------------------------------------

def _drift_field(model: ModelSpec, x, y):
    """Components of the first-order part A of L = Delta/2 + A.

    A^1 = -sigma^2 y^2/2 - sigma sigma' y^2/2,
    A^2 = mu - (alpha' alpha - alpha^2/y)/2;  identical for rho = 0 and
    rho != 0 (the cross terms of the divergence correction cancel).
    """
    sig = model.sigma(x)
    ds = model.sigma.deriv(x)
    a = model.alpha(y)
    da = model.alpha.deriv(y)
    a1 = -0.5 * sig * y**2 * (sig + ds)
    a2 = model.mu(y) - 0.5 * (da * a - a * a / y)
    return a1, a2


def work_term_along_path(model: ModelSpec, path: GeodesicPath) -> float:
    """General route: line integral of g(A, gamma') over arclength.

    Trapezoid on the uniform path samples with one Richardson refinement
    (requires an odd sample count, which both geodesic solvers produce).
    """
    a1, a2 = _drift_field(model, path.x, path.y)
    g11, g12, g22 = _components(model, path.x, path.y)
    f = (g11 * a1 * path.xdot + g12 * (a1 * path.ydot + a2 * path.xdot)
         + g22 * a2 * path.ydot)
    t_h = np.trapezoid(f, path.s)
    t_2h = np.trapezoid(f[::2], path.s[::2])
    return float((4.0 * t_h - t_2h) / 3.0)


def work_term_A(model: ModelSpec, geo: LineGeodesic) -> float:
    """Drift work A along the line geodesic.

    For rho = 0 the path is monotone in both coordinates, so the line
    integral splits into one-dimensional integrals::

        A = -1/2 int_{x0}^{x1} [1 + sigma'/sigma] dx
            + int_{y0}^{y1*} [mu - (alpha' alpha - alpha^2/y)/2] / alpha^2 dy

    (the x part has the closed form -(x1-x0)/2 - log(sigma(x1)/sigma(x0))/2).
    A non-monotone path, and any rho != 0 geodesic, falls back to the
    general line integral.  The jump compensator is *not* folded in here;
    the asymptotics layer applies the e^{lam d / y1*} factor.
    """
    if model.rho != 0.0 or np.any(geo.path.ydot < -1e-12):
        return work_term_along_path(model, geo.path)
    x0, x1 = model.x0, geo.x1
    ax = -0.5 * (x1 - x0) - 0.5 * math.log(float(model.sigma(x1)) / float(model.sigma(x0)))

    def fy(y):
        a = float(model.alpha(y))
        da = float(model.alpha.deriv(y))
        return (float(model.mu(y)) - 0.5 * (da * a - a * a / y)) / a**2

    ay, _ = quad(fy, model.y0, geo.y1_star, epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(ax + ay)


# ---------------------------------------------------------------------------
# Kernel factor bundle
# ---------------------------------------------------------------------------

def kernel_factors(model: ModelSpec, geo: LineGeodesic) -> KernelFactors:
    """Compose u0, A, sqrt|g| and phi'' into the saddle weight psi."""
    u0 = jacobi_u0(model, geo.path)
    a_work = work_term_A(model, geo)
    p_fac = math.exp(a_work)
    g11, g12, g22 = _components(model, geo.x1, geo.y1_star)
    sqrt_g = math.sqrt(float(g11 * g22 - g12 * g12))
    psi = geo.y1_star**2 * p_fac * u0 * sqrt_g
    return KernelFactors(u0=u0, A=a_work, P=p_fac, psi=psi,
                         phi=0.5 * geo.d**2, phi_second=phi_second(model, geo))


# ---------------------------------------------------------------------------
# Leading-order density
# ---------------------------------------------------------------------------

def bellaiche_density(model: ModelSpec, p, q, t: float) -> float:
    """Leading-order transition density w.r.t. Lebesgue measure at maturity t.

    (2 pi t)^{-1} u0 exp(-d^2/(2t) + A) sqrt|g|(q), with d, u0 and A from the
    point-to-point geodesic.  Valid as an approximation for small t.
    """
    if t <= 0.0:
        raise ValueError(f"bellaiche_density requires t > 0, got {t}")
    if tuple(map(float, p)) == tuple(map(float, q)):
        raise ValueError("bellaiche_density requires p != q")
    res = distance_point(model, p, q, want_path=True)
    u0 = jacobi_u0(model, res.path)
    a_work = work_term_along_path(model, res.path)
    g11, g12, g22 = _components(model, float(q[0]), float(q[1]))
    sqrt_g = math.sqrt(float(g11 * g22 - g12 * g12))
    return (u0 / (2.0 * math.pi * t)
            * math.exp(-res.d**2 / (2.0 * t) + a_work) * sqrt_g)


# ---------------------------------------------------------------------------
# McKean kernel on the hyperbolic plane
# ---------------------------------------------------------------------------

def _log_sinh(w: float) -> float:
    if w > 1e-8:
        return w + math.log1p(-math.exp(-2.0 * w)) - math.log(2.0)
    return math.log(w) + math.log1p(w * w / 6.0)


def mckean_kernel(d: float, t: float) -> float:
    """Exact hyperbolic-plane heat kernel (Laplace-Beltrami/2, kappa = -1).

    p0_t(d) = sqrt(2) e^{-t/8} (2 pi t)^{-3/2} int_d^inf r e^{-r^2/2t}
              / sqrt(cosh r - cosh d) dr

    The substitution r = d + u^2 removes the inverse-square-root endpoint
    singularity, cosh r - cosh d is evaluated as 2 sinh((r+d)/2) sinh((r-d)/2)
    to avoid cancellation, and the integrand is truncated once it falls below
    1e-16 of its peak.
    """
    if d < 0.0 or t <= 0.0:
        raise ValueError("mckean_kernel requires d >= 0 and t > 0")

    def f(u):
        if u == 0.0:
            return 2.0 * d / math.sqrt(math.sinh(d)) if d > 0.0 else 0.0
        r = d + u * u
        ls = 0.5 * (math.log(2.0) + _log_sinh(0.5 * (r + d)) + _log_sinh(0.5 * u * u))
        return 2.0 * u * r * math.exp(-(2.0 * d * u * u + u**4) / (2.0 * t) - ls)

    # exponent drops by 45 (~e-20 of peak) at this cut
    u_cut = math.sqrt(max(math.sqrt(d * d + 90.0 * t) - d, 90.0 * t))
    integral, err = quad(f, 0.0, u_cut, epsabs=1e-14, epsrel=1e-10, limit=300)
    if not math.isfinite(integral):
        raise NumericalError(f"McKean quadrature failed: integral={integral}, err={err}")
    return (math.sqrt(2.0) * math.exp(-t / 8.0) / (2.0 * math.pi * t) ** 1.5
            * math.exp(-d * d / (2.0 * t)) * integral)


# ---------------------------------------------------------------------------
# van Vleck-Morette determinant (diagnostic)
# ---------------------------------------------------------------------------

_VVM_STEP = 1e-4


def vvm_determinant(model: ModelSpec, p, q) -> float:
    """van Vleck-Morette diagnostic for phi = d^2/2 between p and q.

    Builds det(-d^2 phi / dp_i dq_j) by central mixed finite differences in
    the (x, log y) chart (step 1e-4 per coordinate), normalizes by the chart
    metric determinants, and returns the square root: in the McAvity-Osborn
    convention the heat-kernel prefactor is the *square root* of the
    normalized Hessian determinant (on the hyperbolic plane the determinant
    itself is d/sinh d, whose root is u0).  Off the cut locus the returned
    value equals u0.  Diagnostic accuracy target ~1e-3; not in the pricing
    path.
    """
    p = (float(p[0]), float(p[1]))
    q = (float(q[0]), float(q[1]))
    if p == q:
        raise ValueError("vvm_determinant requires p != q")
    h = _VVM_STEP

    def bump(pt, axis, sgn):
        if axis == 0:
            return (pt[0] + sgn * h, pt[1])
        return (pt[0], pt[1] * math.exp(sgn * h))

    starts, targets, tags = [], [], []
    for i in (0, 1):
        for j in (0, 1):
            for s1 in (1.0, -1.0):
                for s2 in (1.0, -1.0):
                    starts.append(bump(p, i, s1))
                    targets.append(bump(q, j, s2))
                    tags.append((i, j, s1 * s2))
    dists = _distance_batch(model, np.array(starts), np.array(targets))
    phis = 0.5 * dists**2
    m = np.zeros((2, 2))
    for val, (i, j, sign) in zip(phis, tags):
        m[i, j] -= sign * val / (4.0 * h * h)
    if not np.all(np.isfinite(m)):
        raise NumericalError(f"non-finite finite-difference entries in VVM: {m}")

    def chart_det(pt):
        g11, g12, g22 = _components(model, pt[0], pt[1])
        return float((g11 * g22 - g12 * g12) * pt[1] ** 2)

    det_norm = float(np.linalg.det(m) / math.sqrt(chart_det(p) * chart_det(q)))
    if det_norm <= 0.0:
        raise NumericalError(f"normalized VVM determinant must be positive, got {det_norm}")
    return math.sqrt(det_norm)
