"""Model coefficient families, validation, gauge quantities and assumption audits.

A model is a pair of SDEs for the log-forward ``X`` and the volatility state
``Y``::

    dX = -1/2 sigma(X)^2 Y^2 dt + sigma(X) Y dW1
    dY = mu(Y) dt + alpha(Y) dW2,        d<W1, W2> = rho dt

with ``rho in (-1, 0]`` and an optional jump-to-default intensity ``lam``.
Coefficients are drawn from closed parametric families with analytic first and
second derivatives, so that metric partials, Christoffel symbols and the gauge
potential downstream are exact.  User-defined coefficient expressions are
deliberately not supported; adding a family means adding a dataclass here with
``__call__``/``deriv``/``deriv2`` and registering it in ``build_model``.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.integrate import quad
from scipy.special import expit

from .exceptions import ModelConfigError

__all__ = [
    "SigmaConstant",
    "SigmaLogistic",
    "AlphaPower",
    "MuZero",
    "MuRational",
    "MuGaugeDrift",
    "ModelSpec",
    "AuditGrid",
    "AuditCheck",
    "AuditReport",
    "build_model",
    "parse_model_config",
    "load_model",
    "gauge_chi",
    "gauge_potential",
    "audit_assumptions",
]


# ---------------------------------------------------------------------------
# Coefficient families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SigmaConstant:
    """Constant local volatility sigma(x) = value."""

    value: float
    kind: str = field(default="constant", init=False)

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.value)

    def deriv(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def deriv2(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def bounds(self):
        return self.value, self.value


@dataclass(frozen=True)
class SigmaLogistic:
    """Bounded monotone local volatility.

    sigma(x) = lo + (hi - lo) * expit(slope * (x - center))

    stays inside [lo, hi] for all x.  Large ``slope`` produces enough convexity
    to violate the skew condition sigma^2 + sigma'^2 - 2 sigma sigma'' > 0,
    which the audit is expected to catch.
    """

    lo: float
    hi: float
    slope: float
    center: float = 0.0
    kind: str = field(default="logistic", init=False)

    def __call__(self, x):
        s = expit(self.slope * (np.asarray(x, dtype=float) - self.center))
        return self.lo + (self.hi - self.lo) * s

    def deriv(self, x):
        s = expit(self.slope * (np.asarray(x, dtype=float) - self.center))
        return (self.hi - self.lo) * self.slope * s * (1.0 - s)

    def deriv2(self, x):
        s = expit(self.slope * (np.asarray(x, dtype=float) - self.center))
        return (self.hi - self.lo) * self.slope**2 * s * (1.0 - s) * (1.0 - 2.0 * s)

    def bounds(self):
        return self.lo, self.hi


@dataclass(frozen=True)
class AlphaPower:
    """Power-law vol-of-vol alpha(y) = nu * y**p.

    Strictly increasing and positive on y > 0 for nu > 0, p > 0.  The small-y
    linear-growth assumption holds only for p = 1; the audit reports a growth
    failure for p < 1 rather than refusing the family.
    """

    nu: float
    p: float
    kind: str = field(default="power", init=False)

    def __call__(self, y):
        return self.nu * np.asarray(y, dtype=float) ** self.p

    def deriv(self, y):
        return self.nu * self.p * np.asarray(y, dtype=float) ** (self.p - 1.0)

    def deriv2(self, y):
        return self.nu * self.p * (self.p - 1.0) * np.asarray(y, dtype=float) ** (self.p - 2.0)

    # declared asymptotic data used by audits and tail estimates
    def tail_exponent(self):
        return self.p

    def tail_coefficient(self):
        return self.nu

    def origin_coefficient(self):
        # alpha ~ A1 * y near 0 only when p = 1
        return self.nu if self.p == 1.0 else None


@dataclass(frozen=True)
class MuZero:
    """Driftless volatility, mu(y) = 0 (SABR)."""

    kind: str = field(default="zero", init=False)

    def __call__(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))

    def deriv(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class MuRational:
    """Rational drift mu(y) = mu0*y/(1+y^2) - kappa*y^3/(1+y^2).

    Behaves like mu0*y near 0 and like -kappa*y at infinity, matching the
    linear growth conditions at both ends.  Standard mean reversion
    kappa*(theta - y) is intentionally not representable.
    """

    mu0: float
    kappa: float
    kind: str = field(default="rational", init=False)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return (self.mu0 * y - self.kappa * y**3) / (1.0 + y * y)

    def deriv(self, y):
        y = np.asarray(y, dtype=float)
        den = (1.0 + y * y) ** 2
        return (self.mu0 * (1.0 - y * y) - self.kappa * y * y * (3.0 + y * y)) / den


@dataclass(frozen=True)
class MuGaugeDrift:
    """Structural drift required by the correlated case.

    mu(y) = alpha(y)/(2y) * [y*alpha'(y) - alpha(y)] - c*y*alpha(y)

    The shape is the unique one for which a gauge transformation removing the
    drift exists when rho != 0 (with constant sigma).  For alpha(y) = nu*y and
    c = 0 this reduces to mu = 0, i.e. SABR.
    """

    c: float
    alpha: AlphaPower
    kind: str = field(default="gauge", init=False)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        a, da = self.alpha(y), self.alpha.deriv(y)
        return 0.5 * (a * da - a * a / y) - self.c * y * a

    def deriv(self, y):
        y = np.asarray(y, dtype=float)
        a, da, d2a = self.alpha(y), self.alpha.deriv(y), self.alpha.deriv2(y)
        return 0.5 * (da * da + a * d2a - 2.0 * a * da / y + (a / y) ** 2) - self.c * (a + y * da)


# ---------------------------------------------------------------------------
# Model spec and construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """A validated model: coefficient families plus scalar parameters.

    Instances are immutable and all coefficient evaluations are pure, so a
    ModelSpec may be shared freely across threads.  Direct construction skips
    validation (used by tests for deliberately inadmissible models); use
    :func:`build_model` for checked construction.
    """

    sigma: SigmaConstant | SigmaLogistic
    alpha: AlphaPower
    mu: MuZero | MuRational | MuGaugeDrift
    rho: float = 0.0
    lam: float = 0.0
    x0: float = 0.0
    y0: float = 0.2

    @property
    def s0(self) -> float:
        return math.exp(self.x0)

    def sigma_is_unit(self) -> bool:
        return isinstance(self.sigma, SigmaConstant) and self.sigma.value == 1.0


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ModelConfigError(msg)


def _as_float(section: Mapping, key: str, where: str) -> float:
    try:
        return float(section[key])
    except KeyError:
        raise ModelConfigError(f"missing parameter '{key}' in [{where}]") from None
    except (TypeError, ValueError):
        raise ModelConfigError(f"parameter '{key}' in [{where}] is not a number") from None


def build_model(config: Mapping) -> ModelSpec:
    """Build and validate a :class:`ModelSpec` from a nested mapping.

    Expected layout (same shape the config-file parser produces)::

        {"sigma": {"kind": "constant", "value": 1.0},
         "alpha": {"kind": "power", "nu": 1.0, "p": 1.0},
         "mu":    {"kind": "zero"},
         "model": {"rho": 0.0, "lambda": 0.0, "x0": 0.0, "y0": 0.2}}

    Raises
    ------
    ModelConfigError
        Unknown family kind, parameter out of range, or a structural
        violation (rho != 0 with non-constant sigma or a mu family other
        than "gauge"; lambda > 0 outside the rho = 0, sigma = 1 setting).
    """
    for key in ("sigma", "alpha", "mu"):
        _require(key in config, f"config is missing the [{key}] section")

    acfg = config["alpha"]
    _require(acfg.get("kind", "power") == "power", f"unknown alpha family '{acfg.get('kind')}'")
    nu = _as_float(acfg, "nu", "alpha")
    p = _as_float(acfg, "p", "alpha")
    _require(nu > 0.0, f"alpha power requires nu > 0, got {nu}")
    _require(0.0 < p <= 1.0, f"alpha power requires p in (0, 1], got {p}")
    alpha = AlphaPower(nu=nu, p=p)

    scfg = config["sigma"]
    skind = scfg.get("kind", "constant")
    if skind == "constant":
        value = _as_float(scfg, "value", "sigma")
        _require(value > 0.0, f"sigma constant requires value > 0, got {value}")
        sigma = SigmaConstant(value=value)
    elif skind == "logistic":
        lo = _as_float(scfg, "lo", "sigma")
        hi = _as_float(scfg, "hi", "sigma")
        slope = _as_float(scfg, "slope", "sigma")
        center = float(scfg.get("center", 0.0))
        _require(lo > 0.0, f"sigma logistic requires lo > 0, got {lo}")
        _require(hi >= lo, f"sigma logistic requires hi >= lo, got lo={lo}, hi={hi}")
        sigma = SigmaLogistic(lo=lo, hi=hi, slope=slope, center=center)
    else:
        raise ModelConfigError(f"unknown sigma family '{skind}'")

    mcfg = config["mu"]
    mkind = mcfg.get("kind", "zero")
    if mkind == "zero":
        mu = MuZero()
    elif mkind == "rational":
        mu0 = _as_float(mcfg, "mu0", "mu")
        kappa = _as_float(mcfg, "kappa", "mu")
        _require(mu0 >= 0.0, f"mu rational requires mu0 >= 0, got {mu0}")
        _require(kappa >= 0.0, f"mu rational requires kappa >= 0, got {kappa}")
        mu = MuRational(mu0=mu0, kappa=kappa)
    elif mkind == "gauge":
        mu = MuGaugeDrift(c=_as_float(mcfg, "c", "mu"), alpha=alpha)
    else:
        raise ModelConfigError(f"unknown mu family '{mkind}'")

    mdl = config.get("model", {})
    rho = float(mdl.get("rho", 0.0))
    lam = float(mdl.get("lambda", mdl.get("lam", 0.0)))
    x0 = float(mdl.get("x0", 0.0))
    y0 = float(mdl.get("y0", 0.2))

    _require(-1.0 < rho <= 0.0, f"rho must lie in (-1, 0], got {rho}")
    _require(lam >= 0.0, f"lambda must be >= 0, got {lam}")
    _require(y0 > 0.0, f"y0 must be > 0, got {y0}")
    if rho != 0.0:
        _require(isinstance(sigma, SigmaConstant),
                 "rho != 0 requires a constant sigma family")
        _require(isinstance(mu, MuGaugeDrift),
                 "rho != 0 requires the 'gauge' mu family")
    if lam > 0.0:
        _require(rho == 0.0 and isinstance(sigma, SigmaConstant) and sigma.value == 1.0,
                 "lambda > 0 requires rho = 0 and sigma constant equal to 1")

    return ModelSpec(sigma=sigma, alpha=alpha, mu=mu, rho=rho, lam=lam, x0=x0, y0=y0)


def parse_model_config(text: str) -> dict:
    """Parse the key = value config format into the mapping build_model expects.

    Sections: [sigma], [alpha], [mu], [model].  Values are kept as strings;
    build_model does the numeric conversion and validation.
    """
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ModelConfigError(f"cannot parse model config: {exc}") from exc
    return {name: dict(cp[name]) for name in cp.sections()}


def load_model(path) -> ModelSpec:
    """Read a config file from ``path`` and build the model."""
    with io.open(path, "r", encoding="utf-8") as fh:
        return build_model(parse_model_config(fh.read()))


# ---------------------------------------------------------------------------
# Gauge quantities
# ---------------------------------------------------------------------------

def gauge_chi(model: ModelSpec, x: float, y: float) -> float:
    """Gauge factor chi(x, y) for the uncorrelated case.

    chi(x,y) = sqrt(sigma(x)) e^{x/2} sqrt(alpha(y)/y) exp(-int_1^y mu/alpha^2 du)

    The inner integral is evaluated by adaptive quadrature to 1e-10.
    """
    if y <= 0.0:
        raise ValueError(f"gauge_chi requires y > 0, got {y}")
    if model.rho != 0.0:
        raise ValueError("gauge_chi is defined for rho = 0 models")
    if isinstance(model.mu, MuZero):
        integral = 0.0
    else:
        integral, _ = quad(lambda u: float(model.mu(u)) / float(model.alpha(u)) ** 2,
                           1.0, y, epsabs=1e-12, epsrel=1e-12, limit=400)
    sig = float(model.sigma(x))
    alph = float(model.alpha(y))
    return math.sqrt(sig) * math.exp(0.5 * x) * math.sqrt(alph / y) * math.exp(-integral)


def _g_and_gprime(model: ModelSpec, y):
    """Log-derivative g(y) of the chi y-factor, and g'(y)."""
    a = model.alpha(y)
    da = model.alpha.deriv(y)
    d2a = model.alpha.deriv2(y)
    m = model.mu(y)
    dm = model.mu.deriv(y)
    g = -m / a**2 + 0.5 * (da / a - 1.0 / y)
    gp = -dm / a**2 + 2.0 * m * da / a**3 + 0.5 * (d2a / a - (da / a) ** 2 + 1.0 / y**2)
    return g, gp


def gauge_potential(model: ModelSpec, x, y):
    """Potential V(x, y) created by the gauge transformation.

    For rho = 0::

        V = -y^2/8 [sigma^2 + sigma'^2 - 2 sigma sigma''] + mu g + alpha^2 (g^2 + g')/2

    with g(y) = -mu/alpha^2 + (alpha'/alpha - 1/y)/2.  For rho != 0 the model
    must carry the gauge drift structure and V depends on y only.

    Accepts scalars or arrays; broadcast like numpy.
    """
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0.0):
        raise ValueError("gauge_potential requires y > 0")
    if model.rho == 0.0:
        x = np.asarray(x, dtype=float)
        sig = model.sigma(x)
        ds = model.sigma.deriv(x)
        d2s = model.sigma.deriv2(x)
        g, gp = _g_and_gprime(model, y)
        a = model.alpha(y)
        m = model.mu(y)
        skew = sig**2 + ds**2 - 2.0 * sig * d2s
        out = -0.125 * y**2 * skew + m * g + 0.5 * a**2 * (g * g + gp)
        return out if out.ndim else float(out)

    if not (isinstance(model.mu, MuGaugeDrift) and isinstance(model.sigma, SigmaConstant)):
        raise ValueError("gauge_potential with rho != 0 requires constant sigma "
                         "and the 'gauge' mu family")
    sigma0 = model.sigma.value
    c = model.mu.c
    rho = model.rho
    rb2 = 1.0 - rho * rho
    a = model.alpha(y)
    da = model.alpha.deriv(y)
    m = model.mu(y)
    gbar = (2.0 * c - rho * sigma0) / (2.0 * rb2) * y / a
    gbarp = (2.0 * c - rho * sigma0) / (2.0 * rb2) * (a - y * da) / a**2
    cc = (sigma0 - 2.0 * rho * c) / (2.0 * sigma0 * rb2)
    out = (0.5 * sigma0**2 * y**2 * cc * (cc - 1.0)
           + rho * sigma0 * y * a * cc * gbar
           + 0.5 * a**2 * (gbar * gbar + gbarp)
           + m * gbar)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Assumption audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditGrid:
    """Evaluation grid for the assumption audit.

    y is sampled log-uniformly on [y_lo, y_hi] (y_lo << 1 << y_hi), x
    uniformly on [x_lo, x_hi].
    """

    y_lo: float = 1e-5
    y_hi: float = 1e4
    n_y: int = 241
    x_lo: float = -1.0
    x_hi: float = 1.0
    n_x: int = 41

    def y_values(self):
        return np.geomspace(self.y_lo, self.y_hi, self.n_y)

    def x_values(self):
        return np.linspace(self.x_lo, self.x_hi, self.n_x)

    def describe(self) -> str:
        return (f"y: {self.n_y} log-spaced in [{self.y_lo:g}, {self.y_hi:g}]; "
                f"x: {self.n_x} uniform in [{self.x_lo:g}, {self.x_hi:g}]")


@dataclass(frozen=True)
class AuditCheck:
    name: str
    passed: bool
    witness: dict
    grid: str


@dataclass(frozen=True)
class AuditReport:
    checks: tuple
    warnings: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> AuditCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


# slope probes for the growth audit; assumptions are asymptotic, a two-point
# log-log slope at fixed anchors is the cheapest faithful check
_Y_ORIGIN = (1e-5, 2e-5)
_Y_TAIL = (1e4, 2e4)
_EXPONENT_TOL = 1e-3


def audit_assumptions(model: ModelSpec, grid: AuditGrid | None = None) -> AuditReport:
    """Numerically audit the standing assumptions on a grid.

    Checks (failures are recorded, never raised):

    * ``negative-curvature``: kappa(x, y) <= 0 everywhere on the grid.
    * ``alpha-concavity``: -2 alpha + y alpha' <= 0 (the curvature-sign condition).
    * ``sigma-bounds``: 0 < inf sigma <= sup sigma < infinity on the x grid.
    * ``skew-condition``: sigma^2 + sigma'^2 - 2 sigma sigma'' > 0 on the x grid.
    * ``growth-exponents``: empirical log-log slopes of alpha at both ends;
      the origin slope must be 1 and the tail slope must lie in (0, 1]
      (and match the declared p), both to 1e-3.
    * ``curvature-tail``: kappa(y_hi) tracks -B1^2 (2-p) y^{2(p-1)} to 1%.
    * ``potential-bound``: V(x, y) bounded above on the grid; fails only if V
      increases monotonically into either y end.  The grid supremum and the
      two analytic end limits of the x-independent bound are reported.
    """
    from .geometry import gauss_curvature  # local import to avoid a cycle

    grid = grid or AuditGrid()
    if not (grid.y_lo < 1.0 < grid.y_hi and grid.x_lo < grid.x_hi):
        raise ValueError("audit grid must satisfy y_lo < 1 < y_hi and x_lo < x_hi")
    ys = grid.y_values()
    xs = grid.x_values()
    gdesc = grid.describe()
    checks = []
    warnings = []

    # (i) curvature sign
    kappa = gauss_curvature(model, 0.0, ys)
    worst = int(np.argmax(kappa))
    checks.append(AuditCheck(
        "negative-curvature", bool(np.all(kappa <= 1e-12)),
        {"max_kappa": float(kappa[worst]), "at_y": float(ys[worst])}, gdesc))

    # alpha shape condition equivalent to kappa <= 0
    shape = -2.0 * model.alpha(ys) + ys * model.alpha.deriv(ys)
    worst = int(np.argmax(shape))
    checks.append(AuditCheck(
        "alpha-concavity", bool(np.all(shape <= 1e-12)),
        {"max_value": float(shape[worst]), "at_y": float(ys[worst])}, gdesc))

    # (ii) sigma bounds and skew condition
    sig = model.sigma(xs)
    checks.append(AuditCheck(
        "sigma-bounds", bool(np.all(sig > 0.0) and np.all(np.isfinite(sig))),
        {"inf_sigma": float(sig.min()), "sup_sigma": float(sig.max())}, gdesc))

    skew = sig**2 + model.sigma.deriv(xs) ** 2 - 2.0 * sig * model.sigma.deriv2(xs)
    worst = int(np.argmin(skew))
    checks.append(AuditCheck(
        "skew-condition", bool(np.all(skew > 0.0)),
        {"min_value": float(skew[worst]), "at_x": float(xs[worst])}, gdesc))

    # (iv) growth exponents at both ends
    a_lo = [float(model.alpha(v)) for v in _Y_ORIGIN]
    a_hi = [float(model.alpha(v)) for v in _Y_TAIL]
    slope0 = math.log(a_lo[1] / a_lo[0]) / math.log(_Y_ORIGIN[1] / _Y_ORIGIN[0])
    slope_inf = math.log(a_hi[1] / a_hi[0]) / math.log(_Y_TAIL[1] / _Y_TAIL[0])
    a1 = a_lo[0] / _Y_ORIGIN[0]
    b1 = a_hi[0] / _Y_TAIL[0] ** slope_inf
    origin_ok = abs(slope0 - 1.0) <= _EXPONENT_TOL
    tail_ok = -_EXPONENT_TOL < slope_inf <= 1.0 + _EXPONENT_TOL
    declared_p = model.alpha.tail_exponent()
    if declared_p is not None:
        tail_ok = tail_ok and abs(slope_inf - declared_p) <= _EXPONENT_TOL
    checks.append(AuditCheck(
        "growth-exponents", bool(origin_ok and tail_ok),
        {"origin_slope": slope0, "tail_slope": slope_inf, "A1": a1, "B1": b1},
        f"slope probes at y = {_Y_ORIGIN} and {_Y_TAIL}"))

    # curvature tail asymptote kappa ~ -B1^2 (2-p) y^{2(p-1)}
    y_top = ys[-1]
    kappa_top = float(gauss_curvature(model, 0.0, y_top))
    kappa_asym = -b1**2 * (2.0 - slope_inf) * y_top ** (2.0 * (slope_inf - 1.0))
    ratio = kappa_top / kappa_asym if kappa_asym != 0.0 else math.inf
    checks.append(AuditCheck(
        "curvature-tail", bool(abs(ratio - 1.0) <= 0.01),
        {"kappa": kappa_top, "asymptote": kappa_asym, "ratio": ratio, "at_y": float(y_top)},
        gdesc))

    # (v) potential bound; report grid sup and analytic end limits
    vmat = gauge_potential(model, xs[:, None], ys[None, :]) if model.rho == 0.0 \
        else np.broadcast_to(gauge_potential(model, 0.0, ys), (len(xs), len(ys)))
    v_of_y = vmat.max(axis=0)
    v_max = float(v_of_y.max())
    mu0_hat = float(model.mu(_Y_ORIGIN[0])) / _Y_ORIGIN[0]
    kap_hat = -float(model.mu(_Y_TAIL[1])) / _Y_TAIL[1]
    vbar_origin = 0.5 * mu0_hat * (1.0 - mu0_hat / a1**2)
    p_hat = min(slope_inf, 1.0)
    vbar_tail = (0.5 * (1.0 - 2.0 * p_hat) * kap_hat
                 + 0.125 * (3.0 - p_hat) * (1.0 - p_hat) * b1**2 * ys[-1] ** (2.0 * (p_hat - 1.0))
                 - 0.5 * kap_hat**2 / b1**2 * ys[-1] ** (2.0 * (1.0 - p_hat)))
    diverges = _diverges_upward(ys, v_of_y)
    checks.append(AuditCheck(
        "potential-bound", not diverges,
        {"V_max": v_max, "Vbar_origin_limit": vbar_origin, "Vbar_tail_limit": vbar_tail},
        gdesc))

    if mu0_hat > 1e-12:
        warnings.append(
            f"mu0 = {mu0_hat:.6g} > 0: the small-y tail bound in the call-price proof "
            "is stated for mu0 = 0; results for mu0 > 0 are unproven.")

    return AuditReport(checks=tuple(checks), warnings=tuple(warnings))


def _diverges_upward(ys, v, n_end: int = 6) -> bool:
    """True if v increases monotonically into either grid end and escapes the
    interior range by a wide margin."""
    interior = v[n_end:-n_end]
    lid = interior.max() + 10.0 * (1.0 + abs(float(interior.max())))
    for end in (v[:n_end][::-1], v[-n_end:]):
        if np.all(np.diff(end) > 0.0) and end[-1] > lid:
            return True
    return False
