"""Riemannian geometry of the model metric.

The diffusion matrix of the model induces the metric ``g = a^{-1}`` on the
upper half-plane.  For ``rho = 0`` it is diagonal::

    ds^2 = dx^2 / (sigma(x)^2 y^2) + dy^2 / alpha(y)^2

and the change of variable ``z(x) = int dx/sigma`` reduces it to the
``sigma == 1`` form, which makes the geodesic conserved quantities exact for
every admissible sigma.  This module computes:

* metric tensor, Gaussian curvature (closed form and Brioschi),
* the shortest geodesic from the spot to a vertical strike line (the
  variable-endpoint problem), solved by one-dimensional root finding on the
  conserved-quantity integral equations,
* point-to-point distances by shooting on the geodesic ODE,
* the saddle second derivative phi''(y1*) by finite differences of the
  squared distance,
* the leading heat-kernel prefactor u0 via the scalar Jacobi equation, and
* the closed-form reference bundle for the log-normal SABR special case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, quad, solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq

from .exceptions import GeodesicError, NumericalError
from .model import AlphaPower, ModelSpec, SigmaConstant, SigmaLogistic

__all__ = [
    "MetricPoint",
    "GeodesicPath",
    "LineGeodesic",
    "PointGeodesic",
    "SabrReference",
    "metric_tensor",
    "gauss_curvature",
    "brioschi_curvature",
    "solve_line_geodesic",
    "distance_point",
    "phi_second",
    "jacobi_u0",
    "sabr_reference",
    "tail_distance_estimate",
    "z_of_x",
    "x_of_z",
    "path_energy",
    "path_momentum",
]


# ---------------------------------------------------------------------------
# Metric and curvature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricPoint:
    g: np.ndarray        # 2x2 metric matrix
    det_g: float


def _components(model: ModelSpec, x, y):
    """Metric components (g11, g12, g22); valid for rho = 0 and rho != 0."""
    rb2 = 1.0 - model.rho**2
    sig = model.sigma(x)
    a = model.alpha(y)
    g11 = 1.0 / (sig**2 * y**2 * rb2)
    g12 = -model.rho / (sig * y * a * rb2)
    g22 = 1.0 / (a**2 * rb2)
    return g11, g12, g22


def _component_partials(model: ModelSpec, x, y):
    """Analytic first partials of the metric components w.r.t. x and y."""
    rb2 = 1.0 - model.rho**2
    rho = model.rho
    sig = model.sigma(x)
    ds = model.sigma.deriv(x)
    a = model.alpha(y)
    da = model.alpha.deriv(y)
    d11x = -2.0 * ds / (sig**3 * y**2 * rb2)
    d11y = -2.0 / (sig**2 * y**3 * rb2)
    d12x = rho * ds / (sig**2 * y * a * rb2)
    d12y = rho * (a + y * da) / (sig * y**2 * a**2 * rb2)
    d22x = np.zeros_like(d11x)
    d22y = -2.0 * da / (a**3 * rb2)
    return d11x, d11y, d12x, d12y, d22x, d22y


def metric_tensor(model: ModelSpec, x: float, y: float) -> MetricPoint:
    """Metric g = a^{-1} at (x, y); det a = sigma^2 y^2 alpha^2 (1 - rho^2)."""
    if y <= 0.0:
        raise ValueError(f"metric_tensor requires y > 0, got {y}")
    if abs(model.rho) >= 1.0:
        raise ValueError(f"|rho| must be < 1, got {model.rho}")
    g11, g12, g22 = _components(model, float(x), float(y))
    g = np.array([[float(g11), float(g12)], [float(g12), float(g22)]])
    return MetricPoint(g=g, det_g=float(g11 * g22 - g12 * g12))


def gauss_curvature(model: ModelSpec, x, y):
    """Gaussian curvature of the model metric.

    rho = 0 admits the closed form alpha(y)(-2 alpha(y) + y alpha'(y)) / y^2,
    independent of x and sigma; for rho != 0 the Brioschi formula is used
    with analytic metric partials.  Accepts scalar or array y.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0):
        raise ValueError("gauss_curvature requires y > 0")
    if model.rho == 0.0:
        a = model.alpha(y)
        out = a * (-2.0 * a + y * model.alpha.deriv(y)) / y**2
        return out if out.ndim else float(out)
    return brioschi_curvature(model, x, y)


def brioschi_curvature(model: ModelSpec, x, y):
    """Gaussian curvature from the Brioschi determinant formula.

    Uses analytic first and second partials of the components E = g11,
    F = g12, G = g22 (G_xx = 0 and F_x, F_xy vanish unless sigma varies).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    rb2 = 1.0 - model.rho**2
    rho = model.rho
    sig, ds, d2s = model.sigma(x), model.sigma.deriv(x), model.sigma.deriv2(x)
    a, da, d2a = model.alpha(y), model.alpha.deriv(y), model.alpha.deriv2(y)

    E = 1.0 / (sig**2 * y**2 * rb2)
    F = -rho / (sig * y * a * rb2)
    G = 1.0 / (a**2 * rb2)
    E_x = -2.0 * ds / (sig**3 * y**2 * rb2)
    E_y = -2.0 / (sig**2 * y**3 * rb2)
    E_yy = 6.0 / (sig**2 * y**4 * rb2)
    F_x = rho * ds / (sig**2 * y * a * rb2)
    F_y = rho * (a + y * da) / (sig * y**2 * a**2 * rb2)
    F_xy = -rho * ds * (a + y * da) / (sig**2 * y**2 * a**2 * rb2)
    G_y = -2.0 * da / (a**3 * rb2)
    G_x = np.zeros_like(G)
    G_xx = np.zeros_like(G)

    def det3(m):
        return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))

    m1 = [[-0.5 * E_yy + F_xy - 0.5 * G_xx, 0.5 * E_x, F_x - 0.5 * E_y],
          [F_y - 0.5 * G_x, E, F],
          [0.5 * G_y, F, G]]
    m2 = [[np.zeros_like(E), 0.5 * E_y, 0.5 * G_x],
          [0.5 * E_y, E, F],
          [0.5 * G_x, F, G]]
    out = (det3(m1) - det3(m2)) / (E * G - F * F) ** 2
    return out if out.ndim else float(out)


def _christoffels(model: ModelSpec, x, y):
    """All six Christoffel symbols, vectorized.

    The inverse metric equals the diffusion matrix, so no matrix inversion
    is needed.
    """
    sig = model.sigma(x)
    a = model.alpha(y)
    iu11 = sig**2 * y**2          # inverse metric = diffusion matrix
    iu12 = model.rho * sig * y * a
    iu22 = a**2
    d11x, d11y, d12x, d12y, d22x, d22y = _component_partials(model, x, y)
    t1 = 2.0 * d12x - d11y
    t2 = 2.0 * d12y - d22x
    g111 = 0.5 * (iu11 * d11x + iu12 * t1)
    g112 = 0.5 * (iu11 * d11y + iu12 * d22x)
    g122 = 0.5 * (iu11 * t2 + iu12 * d22y)
    g211 = 0.5 * (iu12 * d11x + iu22 * t1)
    g212 = 0.5 * (iu12 * d11y + iu22 * d22x)
    g222 = 0.5 * (iu12 * t2 + iu22 * d22y)
    return g111, g112, g122, g211, g212, g222


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeodesicPath:
    """A unit-speed geodesic sampled uniformly in arclength."""

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    xdot: np.ndarray
    ydot: np.ndarray

    def __len__(self) -> int:
        return self.s.size

    @property
    def length(self) -> float:
        return float(self.s[-1])


def path_energy(model: ModelSpec, path: GeodesicPath) -> np.ndarray:
    """g(gamma', gamma') along the path; identically 1 for unit-speed."""
    g11, g12, g22 = _components(model, path.x, path.y)
    return g11 * path.xdot**2 + 2.0 * g12 * path.xdot * path.ydot + g22 * path.ydot**2


def path_momentum(model: ModelSpec, path: GeodesicPath) -> np.ndarray:
    """Conserved x-momentum zdot / y^2 (sigma-constant gauge), per unit speed."""
    return path.xdot / (model.sigma(path.x) * path.y**2)


# ---------------------------------------------------------------------------
# z-change of variables
# ---------------------------------------------------------------------------

def _z_antideriv(model: ModelSpec, x):
    sig = model.sigma
    if isinstance(sig, SigmaConstant):
        return np.asarray(x, dtype=float) / sig.value
    if isinstance(sig, SigmaLogistic):
        # closed-form antiderivative of 1/sigma for the logistic family
        u = sig.slope * (np.asarray(x, dtype=float) - sig.center)
        return ((np.asarray(x, dtype=float) - sig.center) / sig.hi
                - (sig.hi - sig.lo) / (sig.slope * sig.hi * sig.lo)
                * np.log(sig.hi + sig.lo * np.exp(-u)))
    raise TypeError(f"no z antiderivative for sigma family {type(sig).__name__}")


def z_of_x(model: ModelSpec, x):
    """z(x) = int_{x0}^{x} du / sigma(u), exact via family antiderivatives."""
    return _z_antideriv(model, x) - _z_antideriv(model, model.x0)


def x_of_z(model: ModelSpec, z):
    """Invert z(x) by Newton; z is strictly increasing since sigma > 0."""
    z = np.asarray(z, dtype=float)
    if isinstance(model.sigma, SigmaConstant):
        out = model.x0 + model.sigma.value * z
        return out if out.ndim else float(out)
    x = model.x0 + z * float(model.sigma(model.x0))   # initial guess
    for _ in range(60):
        step = (z_of_x(model, x) - z) * model.sigma(x)
        x = x - step
        if np.max(np.abs(step)) < 1e-14:
            break
    return x if x.ndim else float(x)


# ---------------------------------------------------------------------------
# Line geodesic (variable endpoint) for rho = 0 via conserved quantities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LineGeodesic:
    """Shortest geodesic from (x0, y0) to the vertical line {x = x1}.

    ``x1`` is the achieved strike abscissa (equal to the request up to the
    root-finding residual); downstream quantities use the achieved pair so
    that (x1, d, y1_star) stay mutually consistent even very close to the
    money.  E = d^2 and K1 = d / y1_star (sigma-constant gauge).
    """

    x1: float
    y1_star: float
    d: float
    E: float
    K1: float
    path: GeodesicPath


_N_PATH = 2049           # uniform arclength samples (odd, for Richardson halving)
_N_FINE = 8193           # fine angular grid for cumulative integrals
_QUAD_OPTS = dict(epsabs=1e-15, epsrel=5e-13, limit=200)


def _apex_angle(y0: float, y1: float) -> float:
    # angle of the start point measured from the apex; arcsin form avoids the
    # catastrophic cancellation of arccos(y0/y1) for y1 - y0 << y0
    s0 = math.sqrt((y1 - y0) * (y1 + y0)) / y1
    return math.asin(min(1.0, s0))


def _line_integrals(model: ModelSpec, y0: float, y1: float):
    """(I_z, I_d): z-advance and arclength of the transversal geodesic with
    apex y1, computed with the endpoint singularity removed by y = y1 sin."""
    phi0 = _apex_angle(y0, y1)

    def fz(phi):
        return y1 * y1 * math.cos(phi) ** 2 / float(model.alpha(y1 * math.cos(phi)))

    def fd(phi):
        return y1 / float(model.alpha(y1 * math.cos(phi)))

    iz, _ = quad(fz, 0.0, phi0, **_QUAD_OPTS)
    idist, _ = quad(fd, 0.0, phi0, **_QUAD_OPTS)
    return iz, idist


def _bracket_y1(model: ModelSpec, target: float):
    """Bracket the apex y1* of the line geodesic: f(y1) = I_z(y1) - target."""
    y0 = model.y0
    history = []

    def f(y1):
        val = _line_integrals(model, y0, y1)[0] - target
        history.append((y1, val))
        return val

    lo = y0 * (1.0 + 1e-9)
    flo = f(lo)
    if flo > 0.0:
        # root sits between y0 and lo: shrink toward y0
        for k in range(10, 16):
            lo2 = y0 * (1.0 + 10.0 ** -k)
            if f(lo2) <= 0.0:
                return lo2, lo, history
            lo = lo2
        raise GeodesicError(
            f"line-geodesic root collapsed onto y0 (target {target:.3e}); "
            f"bracket history: {history[-4:]}")
    hi = 2.0 * y0
    while hi <= y0 * 2.0**20:
        if f(hi) >= 0.0:
            return lo, hi, history
        lo, hi = hi, 2.0 * hi
    raise GeodesicError(
        f"no sign change for line-geodesic root up to y1 = y0 * 2^20; "
        f"bracket history: {history[-4:]}")


def solve_line_geodesic(model: ModelSpec, x1: float, n_path: int = _N_PATH) -> LineGeodesic:
    """Solve the point-to-line geodesic problem for the strike line {x = x1}.

    For rho = 0, reduce to the sigma == 1 metric with z(x) = int dx/sigma and
    solve the scalar equation  z(x1) = int_{y0}^{y1*} y^2 dy / (alpha sqrt(y1*^2 - y^2))
    for the apex y1* by bracketed root finding; the distance is the companion
    integral with numerator y1*.  For rho != 0, minimize the point distance
    over the line by bracketed parabolic search plus a Newton polish.
    """
    if x1 == model.x0:
        raise ValueError("solve_line_geodesic requires x1 != x0")
    if model.rho != 0.0:
        return _solve_line_rho(model, x1, n_path)

    dz = float(z_of_x(model, x1))
    sgn = 1.0 if dz > 0.0 else -1.0
    target = abs(dz)
    lo, hi, _ = _bracket_y1(model, target)
    y1s = brentq(lambda y1: _line_integrals(model, model.y0, y1)[0] - target,
                 lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)
    iz, d = _line_integrals(model, model.y0, y1s)
    x1_ach = float(x_of_z(model, sgn * iz))
    path = _line_path(model, y1s, d, sgn, x1_ach, n_path)
    return LineGeodesic(x1=x1_ach, y1_star=float(y1s), d=float(d),
                        E=float(d * d), K1=float(d / y1s), path=path)


def _line_path(model: ModelSpec, y1s: float, d: float, sgn: float,
               x1_ach: float, n_path: int) -> GeodesicPath:
    """Sample the line geodesic uniformly in arclength.

    psi runs from 0 at the start point to phi0 at the apex; cumulative
    arclength and z-advance come from composite Simpson on a fine grid,
    inverted per sample with two Newton corrections against a Hermite
    interpolant.
    """
    y0 = model.y0
    phi0 = _apex_angle(y0, y1s)
    psi = np.linspace(0.0, phi0, _N_FINE)
    ycurve = y1s * np.cos(phi0 - psi)
    alph = model.alpha(ycurve)
    ds_dpsi = y1s / alph
    dz_dpsi = (ycurve**2) / alph
    s_cum = cumulative_simpson(ds_dpsi, x=psi, initial=0.0)
    z_cum = cumulative_simpson(dz_dpsi, x=psi, initial=0.0)
    s_spline = CubicHermiteSpline(psi, s_cum, ds_dpsi)
    z_spline = CubicHermiteSpline(psi, z_cum, dz_dpsi)

    s_targets = np.linspace(0.0, s_cum[-1], n_path)
    pk = np.interp(s_targets, s_cum, psi)
    for _ in range(2):
        ycur = y1s * np.cos(phi0 - pk)
        pk = pk - (s_spline(pk) - s_targets) * model.alpha(ycur) / y1s
        pk = np.clip(pk, 0.0, phi0)

    yk = y1s * np.cos(phi0 - pk)
    xk = np.asarray(x_of_z(model, sgn * z_spline(pk)), dtype=float)
    # exact endpoints; interior from the inversion
    xk[0], yk[0] = model.x0, y0
    xk[-1], yk[-1] = x1_ach, y1s
    sk = s_targets * (d / s_cum[-1])   # rescale to the quadrature-accurate length
    xdot = sgn * model.sigma(xk) * yk**2 / y1s
    ydot = model.alpha(yk) * np.sqrt(np.maximum((y1s - yk) * (y1s + yk), 0.0)) / y1s
    return GeodesicPath(s=sk, x=xk, y=yk, xdot=xdot, ydot=ydot)


def _solve_line_rho(model: ModelSpec, x1: float, n_path: int) -> LineGeodesic:
    """rho != 0 branch: minimize y1 -> d((x0,y0), (x1,y1)) over the line.

    Batched golden-style bracketing scan, then parabolic refinement on
    batched three-point stencils (all distance evaluations share one
    shooting batch per stage), then a Newton polish on phi = d^2/2.
    """
    p = np.array([model.x0, model.y0])

    def batch(ys):
        ys = np.asarray(ys, dtype=float)
        starts = np.tile(p, (ys.size, 1))
        targets = np.column_stack([np.full(ys.size, x1), ys])
        return _distance_batch(model, starts, targets)

    cand = model.y0 * np.geomspace(0.6, 4.0, 11)
    vals = batch(cand)
    i = int(np.argmin(vals))
    if i in (0, len(cand) - 1):
        raise GeodesicError("line-geodesic minimum not bracketed by the y-scan")
    lo, hi = cand[i - 1], cand[i + 1]
    y1s = cand[i]

    # successive parabolic refinement: each step minimizes the parabola
    # through a batched three-point stencil of phi = d^2/2
    h = 0.25 * (hi - lo)
    for _ in range(10):
        fm, f0, fp = 0.5 * batch([y1s - h, y1s, y1s + h]) ** 2
        d1 = (fp - fm) / (2.0 * h)
        d2 = (fp - 2.0 * f0 + fm) / (h * h)
        if d2 <= 0.0:
            h *= 0.5
            continue
        step = -d1 / d2
        y1s = float(np.clip(y1s + step, lo, hi))
        h = max(1e-5 * y1s, min(abs(step), 0.25 * h + 1e-5 * y1s))
        if abs(step) < 1e-9 * y1s:
            break
    final = distance_point(model, tuple(p), (x1, y1s), want_path=True, n_path=n_path)
    d = final.d
    return LineGeodesic(x1=x1, y1_star=float(y1s), d=d, E=d * d,
                        K1=d / float(y1s), path=final.path)


# ---------------------------------------------------------------------------
# Point-to-point distance by shooting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PointGeodesic:
    d: float
    path: GeodesicPath | None


# Dormand-Prince 5(4) tableau (solution weights only; fixed step)
_DP_A = (
    (0.2,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
)
_DP_B = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0)


def _make_rhs(model: ModelSpec):
    """Specialized geodesic right-hand side for the hot shooting loop.

    For the diagonal (rho = 0) metric only four Christoffel symbols survive:

        G^x_xx = -sigma'/sigma,  G^x_xy = -1/y,
        G^y_xx = alpha^2/(sigma^2 y^3),  G^y_yy = -alpha'/alpha

    and constant sigma / power alpha collapse further to scalar arithmetic.
    """
    if model.rho == 0.0 and isinstance(model.sigma, SigmaConstant) \
            and isinstance(model.alpha, AlphaPower):
        nu2_over_s2 = (model.alpha.nu / model.sigma.value) ** 2
        p = model.alpha.p

        def rhs(state):
            y, vx, vy = state[..., 1], state[..., 2], state[..., 3]
            out = np.empty_like(state)
            out[..., 0] = vx
            out[..., 1] = vy
            out[..., 2] = 2.0 * vx * vy / y
            out[..., 3] = (-nu2_over_s2 * y ** (2.0 * p - 3.0) * vx * vx
                           + p * vy * vy / y)
            return out
        return rhs

    if model.rho == 0.0:
        sigma, alpha = model.sigma, model.alpha

        def rhs(state):
            x, y, vx, vy = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
            s, ds = sigma(x), sigma.deriv(x)
            a, da = alpha(y), alpha.deriv(y)
            out = np.empty_like(state)
            out[..., 0] = vx
            out[..., 1] = vy
            out[..., 2] = (ds / s) * vx * vx + 2.0 * vx * vy / y
            out[..., 3] = -(a / (s * y)) ** 2 / y * vx * vx + (da / a) * vy * vy
            return out
        return rhs

    if isinstance(model.sigma, SigmaConstant) and isinstance(model.alpha, AlphaPower):
        # rho != 0 with constant sigma: Christoffels collapse to power laws
        rho, s0 = model.rho, model.sigma.value
        nu, p = model.alpha.nu, model.alpha.p
        rb2 = 1.0 - rho * rho
        c1 = rho * nu / (s0 * rb2)
        c2 = 1.0 / rb2
        c3 = rho * s0 / (nu * rb2)
        c4 = nu * nu / (s0 * s0 * rb2)
        c5 = (rho * rho * (p + 1.0) - p) / rb2

        def rhs(state):
            y, vx, vy = state[..., 1], state[..., 2], state[..., 3]
            ypm2 = y ** (p - 2.0)
            out = np.empty_like(state)
            out[..., 0] = vx
            out[..., 1] = vy
            out[..., 2] = -(c1 * ypm2 * vx * vx - 2.0 * c2 * vx * vy / y
                            + c3 * y ** -p * vy * vy)
            out[..., 3] = -(c4 * ypm2 * y ** (p - 1.0) * vx * vx
                            - 2.0 * c1 * ypm2 * vx * vy + c5 * vy * vy / y)
            return out
        return rhs

    def rhs(state):
        x, y, vx, vy = state[..., 0], state[..., 1], state[..., 2], state[..., 3]
        g111, g112, g122, g211, g212, g222 = _christoffels(model, x, y)
        out = np.empty_like(state)
        out[..., 0] = vx
        out[..., 1] = vy
        out[..., 2] = -(g111 * vx * vx + 2.0 * g112 * vx * vy + g122 * vy * vy)
        out[..., 3] = -(g211 * vx * vx + 2.0 * g212 * vx * vy + g222 * vy * vy)
        return out
    return rhs


def _integrate_batch(model: ModelSpec, state0: np.ndarray, lengths: np.ndarray,
                     n_steps: int, record: bool = False):
    """Fixed-step Dormand-Prince integration of a batch of geodesics.

    state0: (B, 4), lengths: (B,).  Returns final states (B, 4) and, when
    ``record`` is set, the full trajectory (n_steps+1, B, 4).
    """
    rhs = _make_rhs(model)
    state = state0.copy()
    h = (lengths / n_steps)[:, None]
    traj = np.empty((n_steps + 1,) + state.shape) if record else None
    if record:
        traj[0] = state
    a21, = _DP_A[0]
    a31, a32 = _DP_A[1]
    a41, a42, a43 = _DP_A[2]
    a51, a52, a53, a54 = _DP_A[3]
    a61, a62, a63, a64, a65 = _DP_A[4]
    b1, _, b3, b4, b5, b6 = _DP_B
    with np.errstate(all="ignore"):
        for i in range(n_steps):
            k1 = rhs(state)
            k2 = rhs(state + h * (a21 * k1))
            k3 = rhs(state + h * (a31 * k1 + a32 * k2))
            k4 = rhs(state + h * (a41 * k1 + a42 * k2 + a43 * k3))
            k5 = rhs(state + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4))
            k6 = rhs(state + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5))
            state = state + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6)
            if record:
                traj[i + 1] = state
    return state, traj


def _unit_tangent(model: ModelSpec, x, y, theta):
    """Coordinate components of the unit tangent at angle theta in a
    g-orthonormal frame (e1 along the x axis)."""
    g11, g12, g22 = _components(model, x, y)
    det = g11 * g22 - g12 * g12
    e1x, e1y = 1.0 / np.sqrt(g11), np.zeros_like(np.asarray(g11, dtype=float))
    scale = np.sqrt(g11 / det)
    e2x, e2y = -g12 / g11 * scale, scale
    vx = np.cos(theta) * e1x + np.sin(theta) * e2x
    vy = np.cos(theta) * e1y + np.sin(theta) * e2y
    return vx, vy


_STEPS_PER_UNIT = 700
_MIN_STEPS = 160
_MAX_STEPS = 4000
_NEWTON_TOL = 1e-12
_NEWTON_MAXIT = 60


def _steps_for(length: float) -> int:
    return int(min(_MAX_STEPS, max(_MIN_STEPS, round(_STEPS_PER_UNIT * length))))


def _initial_guess(model: ModelSpec, p, q):
    """Rough (theta, L) from the straight chord measured at the midpoint."""
    wx, wy = q[0] - p[0], q[1] - p[1]
    xm, ym = 0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])
    g11, g12, g22 = _components(model, xm, ym)
    L0 = math.sqrt(max(g11 * wx * wx + 2.0 * g12 * wx * wy + g22 * wy * wy, 1e-30))
    g11p, g12p, g22p = _components(model, p[0], p[1])
    det = g11p * g22p - g12p * g12p
    # components of w in the orthonormal frame at p
    c1 = (g11p * wx + g12p * wy) / math.sqrt(g11p)
    c2 = wy * math.sqrt(det / g11p)
    return math.atan2(c2, c1), L0


def _shoot_batch(model: ModelSpec, starts: np.ndarray, targets: np.ndarray,
                 theta0: np.ndarray, length0: np.ndarray, n_steps: int):
    """Batched Newton on (theta, L); residual measured in (x, log y).

    Returns (theta, L, residual_norm).  Non-finite trajectories yield large
    residuals so the caller can restart individual problems.
    """
    nb = starts.shape[0]
    theta = theta0.copy()
    length = np.maximum(length0.copy(), 1e-12)
    rnorm = np.full(nb, np.inf)
    active = np.arange(nb)
    d_th, d_l = 1e-7, 1e-7

    for _ in range(_NEWTON_MAXIT):
        th_a, ln_a = theta[active], length[active]
        st = starts[active]
        tg = targets[active]
        thetas = np.concatenate([th_a, th_a + d_th, th_a])
        lens = np.concatenate([ln_a, ln_a, ln_a * (1.0 + d_l)])
        st3 = np.tile(st, (3, 1))
        vx, vy = _unit_tangent(model, st3[:, 0], st3[:, 1], thetas)
        state0 = np.column_stack([st3[:, 0], st3[:, 1], vx, vy])
        final, _ = _integrate_batch(model, state0, lens, n_steps)
        na = active.size
        with np.errstate(all="ignore"):
            rx = final[:, 0] - np.tile(tg[:, 0], 3)
            ry = np.log(final[:, 1]) - np.tile(np.log(tg[:, 1]), 3)
        res = np.column_stack([rx, ry])
        res[~np.isfinite(res)] = 1e6
        r0, r_th, r_l = res[:na], res[na:2 * na], res[2 * na:]
        rnorm[active] = np.max(np.abs(r0), axis=1)
        j00 = (r_th[:, 0] - r0[:, 0]) / d_th
        j10 = (r_th[:, 1] - r0[:, 1]) / d_th
        j01 = (r_l[:, 0] - r0[:, 0]) / (ln_a * d_l)
        j11 = (r_l[:, 1] - r0[:, 1]) / (ln_a * d_l)
        det = j00 * j11 - j01 * j10
        det = np.where(np.abs(det) < 1e-300, np.nan, det)
        dth = (-r0[:, 0] * j11 + r0[:, 1] * j01) / det
        dl = (-r0[:, 1] * j00 + r0[:, 0] * j10) / det
        dth = np.clip(np.nan_to_num(dth, nan=0.3), -0.6, 0.6)
        dl = np.clip(np.nan_to_num(dl, nan=0.0), -0.5 * ln_a, 1.0 * ln_a)
        theta[active] = th_a + dth
        length[active] = np.maximum(ln_a + dl, 1e-12)
        # freeze problems that have converged (their last accepted iterate is
        # re-evaluated below only through the returned residual)
        still = rnorm[active] >= _NEWTON_TOL
        if not np.any(still):
            # undo the extra step on converged problems
            theta[active] = th_a
            length[active] = ln_a
            break
        done = active[~still]
        theta[done] -= dth[~still]
        length[done] -= dl[~still]
        active = active[still]
        if active.size == 0:
            break
    return theta, length, rnorm


def _distance_batch(model: ModelSpec, starts: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Distances for a batch of (start, target) pairs sharing one step count."""
    nb = starts.shape[0]
    th0 = np.empty(nb)
    l0 = np.empty(nb)
    for i in range(nb):
        th0[i], l0[i] = _initial_guess(model, starts[i], targets[i])
    n_steps = _steps_for(float(np.max(l0)) * 1.5)
    theta, length, rnorm = _shoot_batch(model, starts, targets, th0, l0, n_steps)
    bad = rnorm >= 1e-9
    for i in np.nonzero(bad)[0]:
        length[i] = _distance_single_restart(model, starts[i], targets[i])
    return length


def _distance_single_restart(model: ModelSpec, p, q) -> float:
    th0, l0 = _initial_guess(model, p, q)
    n_steps = _steps_for(l0 * 2.0)
    for k in range(8):
        th = th0 + k * (math.pi / 4.0)
        for lscale in (1.0, 0.5, 2.0):
            _, length, rnorm = _shoot_batch(
                model, np.array([p], dtype=float), np.array([q], dtype=float),
                np.array([th]), np.array([l0 * lscale]), n_steps)
            if rnorm[0] < 1e-9:
                return float(length[0])
    raise GeodesicError(f"shooting failed from {tuple(p)} to {tuple(q)} "
                        "after restarts from 8 spread initial angles")


def distance_point(model: ModelSpec, p, q, want_path: bool = True,
                   n_path: int = 513) -> PointGeodesic:
    """Riemannian distance between two points by shooting.

    Integrates the geodesic ODE (analytic Christoffel symbols) with a
    fixed-step Dormand-Prince scheme and Newton-iterates the initial angle
    and arclength until the endpoint matches q to better than 1e-9 in
    (x, log y); in practice the iteration is run to ~1e-12.

    Returns the distance and (optionally) the sampled path with unit-speed
    tangents.
    """
    p = (float(p[0]), float(p[1]))
    q = (float(q[0]), float(q[1]))
    if p[1] <= 0.0 or q[1] <= 0.0:
        raise ValueError("both points must lie in the upper half-plane")
    if p == q:
        return PointGeodesic(d=0.0, path=None)

    th0, l0 = _initial_guess(model, p, q)
    starts = np.array([p], dtype=float)
    targets = np.array([q], dtype=float)
    n_steps = _steps_for(l0 * 1.5)
    theta, length, rnorm = _shoot_batch(model, starts, targets,
                                        np.array([th0]), np.array([l0]), n_steps)
    if rnorm[0] >= 1e-9:
        d = _distance_single_restart(model, p, q)
        theta, length, rnorm = _shoot_batch(model, starts, targets,
                                            theta, np.array([d]), n_steps)
        if rnorm[0] >= 1e-9:
            raise GeodesicError(f"shooting endpoint error {rnorm[0]:.2e} from {p} to {q}")
    d = float(length[0])
    if not want_path:
        return PointGeodesic(d=d, path=None)

    vx, vy = _unit_tangent(model, p[0], p[1], float(theta[0]))
    state0 = np.array([[p[0], p[1], float(vx), float(vy)]])
    n_rec = max(n_path - 1, 256)
    _, traj = _integrate_batch(model, state0, np.array([d]), n_rec, record=True)
    traj = traj[:, 0, :]
    s = np.linspace(0.0, d, n_rec + 1)
    path = GeodesicPath(s=s, x=traj[:, 0], y=traj[:, 1],
                        xdot=traj[:, 2], ydot=traj[:, 3])
    return PointGeodesic(d=d, path=path)


# ---------------------------------------------------------------------------
# Saddle second derivative phi''(y1*)
# ---------------------------------------------------------------------------

_PHI2_REL_STEP = 4e-3    # relative FD step in y1; Richardson removes the h^2 term


def phi_second(model: ModelSpec, geo: LineGeodesic) -> float:
    """Second derivative of phi(y1) = d((x0,y0),(x1,y1))^2 / 2 at y1 = y1*.

    Central second differences at steps h and h/2 with one Richardson
    extrapolation; all five distance evaluations run as a single shooting
    batch so their systematic integration errors cancel in the differences.
    The Richardson-extrapolated first derivative must vanish to 1e-6
    (transversality of the line geodesic).
    """
    x1, y1s = geo.x1, geo.y1_star
    if abs(x1 - model.x0) < 1e-6:
        raise ValueError("phi_second rejects |x1 - x0| < 1e-6 (degenerate saddle)")
    h = _PHI2_REL_STEP * y1s
    offsets = np.array([-h, -0.5 * h, 0.0, 0.5 * h, h])
    starts = np.tile([model.x0, model.y0], (5, 1))
    targets = np.column_stack([np.full(5, x1), y1s + offsets])
    dists = _distance_batch(model, starts, targets)
    f = 0.5 * dists**2
    d2_h = (f[4] - 2.0 * f[2] + f[0]) / (h * h)
    d2_h2 = (f[3] - 2.0 * f[2] + f[1]) / (0.25 * h * h)
    val = (4.0 * d2_h2 - d2_h) / 3.0
    d1_h = (f[4] - f[0]) / (2.0 * h)
    d1_h2 = (f[3] - f[1]) / h
    d1 = (4.0 * d1_h2 - d1_h) / 3.0
    if abs(d1) > 1e-6:
        raise GeodesicError(
            f"transversality violated at y1* = {y1s:.6g}: phi'(y1*) = {d1:.3e}")
    if not math.isfinite(val) or val <= 0.0:
        raise NumericalError(f"phi'' must be positive and finite, got {val}")
    return float(val)


# ---------------------------------------------------------------------------
# Jacobi prefactor u0
# ---------------------------------------------------------------------------

def jacobi_u0(model: ModelSpec, path: GeodesicPath) -> float:
    """Leading heat-kernel prefactor u0 = (J(d)/d)^{-1/2}.

    J solves the scalar Jacobi equation J'' = -kappa(s) J with J(0) = 0,
    J'(0) = 1 along the geodesic, with kappa evaluated through a Hermite
    interpolant of the path (the path must resolve kappa: >= 200 samples).
    """
    if len(path) < 200:
        raise ValueError(f"path too coarse for jacobi_u0: {len(path)} < 200 samples")
    d = path.length
    y_of_s = CubicHermiteSpline(path.s, path.y, path.ydot)
    x_of_s = CubicHermiteSpline(path.s, path.x, path.xdot)

    if model.rho == 0.0:
        def kappa(s):
            return float(gauss_curvature(model, 0.0, float(y_of_s(s))))
    else:
        def kappa(s):
            return float(brioschi_curvature(model, float(x_of_s(s)), float(y_of_s(s))))

    sol = solve_ivp(lambda s, ju: [ju[1], -kappa(s) * ju[0]],
                    (0.0, d), [0.0, 1.0], method="DOP853",
                    rtol=1e-12, atol=1e-14)
    if not sol.success:
        raise NumericalError(f"Jacobi integration failed: {sol.message}")
    jd = float(sol.y[0, -1])
    if jd <= 0.0:
        raise NumericalError(
            f"Jacobi field J(d) = {jd} <= 0 under kappa <= 0; integration bug")
    return float((jd / d) ** -0.5)


# ---------------------------------------------------------------------------
# SABR closed forms (sigma == 1, alpha = nu*y): hyperbolic plane reference
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SabrReference:
    y1_star: float
    d: float
    u0: float
    phi_second: float
    A: float
    A_SV: float


def sabr_reference(x1: float, y0: float, nu: float) -> SabrReference:
    """Closed-form bundle for log-normal SABR with vol-of-vol nu (x0 = 0).

    Scaling x -> nu*x maps the metric to hyperbolic/nu^2, so everything
    reduces to upper-half-plane formulas:

        y1*   = sqrt(nu^2 x1^2 + y0^2)
        nu d  = asinh(nu |x1| / y0)
        u0    = (sinh(nu d)/(nu d))^{-1/2}
        phi'' = d / (nu y0 y1* sinh(nu d))
        A     = -x1/2,   A_SV = K e^{-x1/2} sqrt(y0 y1*) / d^2
    """
    if x1 == 0.0:
        raise ValueError("sabr_reference requires x1 != 0")
    if y0 <= 0.0 or nu <= 0.0:
        raise ValueError("sabr_reference requires y0 > 0 and nu > 0")
    q = nu * x1
    y1s = math.hypot(q, y0)
    dh = math.asinh(abs(q) / y0)
    d = dh / nu
    u0 = (math.sinh(dh) / dh) ** -0.5
    phi2 = d / (nu * y0 * y1s * math.sinh(dh))
    a_work = -0.5 * x1
    a_sv = math.exp(x1) * math.exp(-0.5 * x1) * math.sqrt(y0 * y1s) / d**2
    return SabrReference(y1_star=y1s, d=d, u0=u0, phi_second=phi2, A=a_work, A_SV=a_sv)


def sabr_distance(p, q, nu: float = 1.0) -> float:
    """Closed-form point-to-point distance for SABR (scaled hyperbolic)."""
    x0, y0 = p
    x1, y1 = q
    c = 1.0 + ((nu * (x1 - x0)) ** 2 + (y1 - y0) ** 2) / (2.0 * y0 * y1)
    return math.acosh(c) / nu


# ---------------------------------------------------------------------------
# Tail distance estimates
# ---------------------------------------------------------------------------

def tail_distance_estimate(model: ModelSpec, y1: float, end: str) -> float:
    """Leading-order distance to (x1, y1) as y1 -> 0 or y1 -> infinity.

    d0(y1) = |log y1| / (rhobar A1);  dinf(y1) = log(y1)/(rhobar B1) for p = 1
    or y1^{1-p} / (rhobar B1 (1-p)) for p < 1, with rhobar = sqrt(1 - rho^2).
    """
    rhobar = math.sqrt(1.0 - model.rho**2)
    if end == "zero":
        a1 = model.alpha.origin_coefficient()
        if a1 is None:
            raise ValueError("origin coefficient A1 undefined for this alpha family "
                             "(tail exponent p != 1 at the origin)")
        return abs(math.log(y1)) / (rhobar * a1)
    if end == "infinity":
        p = model.alpha.tail_exponent()
        b1 = model.alpha.tail_coefficient()
        if p == 1.0:
            return math.log(y1) / (rhobar * b1)
        return y1 ** (1.0 - p) / (rhobar * b1 * (1.0 - p))
    raise ValueError(f"end must be 'zero' or 'infinity', got {end!r}")
