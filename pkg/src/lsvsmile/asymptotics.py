"""Small-maturity call-price and implied-volatility expansions.

Headline outputs:

* the out-of-the-money call asymptote
  ``E(S_t - K)^+ - (S_0 - K)^+ ~ A_SV(x1)/sqrt(2 pi) * e^{-phi*/t} t^{3/2}``,
* the Black-Scholes expansion with a t-dependent volatility parameter
  (the matching counterpart, with t^{3/2} coefficient ``A_BS = K e^{-x/2}
  sigma^3/x^2``),
* the two-term implied-variance expansion
  ``sigma_t^2(x) = sigma0(x)^2 + a(x) t + o(t)`` with
  ``sigma0 = |x|/d`` and ``a = (2 sigma0^4/x^2) log(A_SV/A_BS)``,
* jump-to-default adjustments: the OTM-call correction
  ``a^J = a + 2 lam sigma0^4 d / (x^2 y1*)`` and the OTM-put small-time
  smile, both for the rho = 0, sigma == 1 setting.

At-the-money (|x - x0| < 1e-6) is rejected, not extrapolated.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

from .geometry import LineGeodesic, sabr_reference, solve_line_geodesic
from .heatkernel import KernelFactors, kernel_factors
from .model import ModelSpec

__all__ = [
    "CallAsymptote",
    "SmilePoint",
    "call_asymptote",
    "bs_timedep_asymptote",
    "smile_point",
    "smile_curve",
    "otm_put_leading",
    "put_smile_smalltime",
    "sabr_smile_reference",
    "a_bs_coefficient",
]

_ATM_GUARD = 1e-6
_SERIES_SWITCH = 1e-3     # below this |x| the log-ratio is evaluated by series
_SERIES_ANCHORS = (0.02, 0.04)


@dataclass(frozen=True)
class CallAsymptote:
    strike: float
    t: float
    intrinsic: float
    leading_term: float
    A_SV: float
    phi_star: float

    @property
    def price(self) -> float:
        return self.intrinsic + self.leading_term


@dataclass(frozen=True)
class SmilePoint:
    """Implied-volatility expansion data at one log-moneyness.

    sigma_t^2 = sigma0^2 + a t holds exactly by construction; sigma_t is NaN
    when sigma0^2 + a t <= 0 (point flagged invalid).
    """

    x: float
    t: float
    sigma0: float
    a: float
    a_jump: float
    sigma_t: float
    sigma_t_jump: float
    delta_sigma_jump: float
    A_SV: float
    d: float
    y1_star: float

    @property
    def valid(self) -> bool:
        return math.isfinite(self.sigma_t)


def a_bs_coefficient(x: float, sigma: float, s0: float = 1.0) -> float:
    """Black-Scholes t^{3/2} coefficient A_BS(x, sigma) = K e^{-x/2} sigma^3 / x^2."""
    k = s0 * math.exp(x)
    return k * math.exp(-0.5 * x) * sigma**3 / (x * x)


# ---------------------------------------------------------------------------
# Pipeline composition
# ---------------------------------------------------------------------------

def _pipeline(model: ModelSpec, x1: float) -> tuple[LineGeodesic, KernelFactors, float]:
    """Solve the geodesic, assemble kernel factors and the call prefactor.

    A_SV = K sigma(x1)^2 psi(y1*) / sqrt(phi''(y1*)) / (2 phi(y1*)), K = e^{x1}.
    """
    geo = solve_line_geodesic(model, x1)
    kf = kernel_factors(model, geo)
    k = math.exp(geo.x1)
    a_sv = k * float(model.sigma(geo.x1)) ** 2 * kf.psi / math.sqrt(kf.phi_second) / (2.0 * kf.phi)
    return geo, kf, a_sv


def _check_otm(model: ModelSpec, x1: float) -> None:
    if abs(x1 - model.x0) < _ATM_GUARD:
        raise ValueError(
            f"|log K - x0| = {abs(x1 - model.x0):.2e} < {_ATM_GUARD}: "
            "at-the-money asymptotics are out of scope")


def call_asymptote(model: ModelSpec, K: float, t: float) -> CallAsymptote:
    """Leading small-t call price term at strike K.

    leading = A_SV/sqrt(2 pi) * exp(-phi*/t) * t^{3/2}; a positive jump
    intensity multiplies the kernel weight by e^{lam d / y1*} (the
    compensator work along the geodesic, lam K1 with K1 = d/y1*).
    """
    if K <= 0.0 or t <= 0.0:
        raise ValueError("call_asymptote requires K > 0 and t > 0")
    x1 = math.log(K)
    _check_otm(model, x1)
    geo, kf, a_sv = _pipeline(model, x1)
    if model.lam > 0.0:
        a_sv *= math.exp(model.lam * geo.d / geo.y1_star)
    leading = a_sv / math.sqrt(2.0 * math.pi) * math.exp(-kf.phi / t) * t**1.5
    intrinsic = max(model.s0 - K, 0.0)
    return CallAsymptote(strike=K, t=t, intrinsic=intrinsic,
                         leading_term=leading, A_SV=a_sv, phi_star=kf.phi)


def bs_timedep_asymptote(s0: float, K: float, t: float, sigma: float, a: float) -> float:
    """Two-term Black-Scholes value with volatility parameter sqrt(sigma^2 + a t).

        (S0-K)^+ + K e^{-x^2/(2 sigma^2 t)}/sqrt(2 pi) e^{-x/2}
                   e^{a x^2/(2 sigma^4)} sigma^3/x^2 t^{3/2}

    Valid for x = log(K/S0) != 0 and, when a < 0, for t < sigma^2/|a|.
    """
    if s0 <= 0.0 or K <= 0.0 or t <= 0.0 or sigma <= 0.0:
        raise ValueError("bs_timedep_asymptote requires positive S0, K, t, sigma")
    x = math.log(K / s0)
    if x == 0.0:
        raise ValueError("bs_timedep_asymptote requires x = log(K/S0) != 0")
    if a < 0.0 and t >= sigma**2 / abs(a):
        raise ValueError(
            f"t = {t} outside validity range t < sigma^2/|a| = {sigma**2 / abs(a):.6g}")
    intrinsic = max(s0 - K, 0.0)
    coeff = s0 * a_bs_coefficient(x, sigma) * math.exp(0.5 * a * x * x / sigma**4)
    return intrinsic + coeff * math.exp(-x * x / (2.0 * sigma**2 * t)) \
        / math.sqrt(2.0 * math.pi) * t**1.5


# ---------------------------------------------------------------------------
# Implied-volatility expansion
# ---------------------------------------------------------------------------

def _log_ratio(model: ModelSpec, x1: float) -> tuple[float, LineGeodesic]:
    """log(A_SV / A_BS(x, sigma0)) via the full pipeline, plus the geodesic."""
    geo, _, a_sv = _pipeline(model, x1)
    x = geo.x1 - model.x0
    sigma0 = abs(x) / geo.d
    lr = math.log(a_sv) - math.log(model.s0 * a_bs_coefficient(x, sigma0))
    return lr, geo


@lru_cache(maxsize=32)
def _series_coefficients(model: ModelSpec, sign: float) -> tuple[float, float]:
    """Fit log-ratio(x) = c2 x^2 + c4 x^4 at two same-sign anchor strikes.

    The log-ratio is 0/0-balanced as x -> 0; evaluating it directly below
    |x| ~ 1e-3 amplifies pipeline noise by 1/x^2.  The even-order fit at
    moderate anchors is stable and smooth across the switch.
    """
    xa, xb = (sign * v for v in _SERIES_ANCHORS)
    la, _ = _log_ratio(model, model.x0 + xa)
    lb, _ = _log_ratio(model, model.x0 + xb)
    det = xa**2 * xb**4 - xb**2 * xa**4
    c2 = (la * xb**4 - lb * xa**4) / det
    c4 = (lb * xa**2 - la * xb**2) / det
    return c2, c4


def smile_point(model: ModelSpec, x1: float, t: float) -> SmilePoint:
    """Two-term implied-volatility expansion at log-strike x1.

    sigma0 = |x1 - x0| / d;  a = (2 sigma0^4 / x^2) log(A_SV / A_BS);
    with jumps (lam > 0):  a^J = a + 2 lam sigma0^4 d / (x^2 y1*) and the
    implied-vol lift Delta sigma^J = lam sigma0^2 t / (|x| y1*).
    """
    if t < 0.0:
        raise ValueError(f"smile_point requires t >= 0, got {t}")
    _check_otm(model, x1)
    if abs(x1 - model.x0) < _SERIES_SWITCH:
        geo = solve_line_geodesic(model, x1)
        x = geo.x1 - model.x0
        sigma0 = abs(x) / geo.d
        c2, c4 = _series_coefficients(model, math.copysign(1.0, x))
        lr = c2 * x * x + c4 * x**4
        a_sv = model.s0 * a_bs_coefficient(x, sigma0) * math.exp(lr)
    else:
        lr, geo = _log_ratio(model, x1)
        x = geo.x1 - model.x0
        sigma0 = abs(x) / geo.d
        a_sv = model.s0 * a_bs_coefficient(x, sigma0) * math.exp(lr)
    a = 2.0 * sigma0**4 / (x * x) * lr
    jump_gap = 2.0 * model.lam * sigma0**4 * geo.d / (x * x * geo.y1_star)
    a_jump = a + jump_gap
    dsig_jump = model.lam * sigma0**2 * t / (abs(x) * geo.y1_star)
    var_t = sigma0**2 + a * t
    var_t_jump = sigma0**2 + a_jump * t
    return SmilePoint(
        x=x, t=t, sigma0=sigma0, a=a, a_jump=a_jump,
        sigma_t=math.sqrt(var_t) if var_t > 0.0 else math.nan,
        sigma_t_jump=math.sqrt(var_t_jump) if var_t_jump > 0.0 else math.nan,
        delta_sigma_jump=dsig_jump, A_SV=a_sv, d=geo.d, y1_star=geo.y1_star)


def _thread_budget() -> int:
    env = os.environ.get("LSV_SMILE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


def smile_curve(model: ModelSpec, xs, t: float, max_workers: int | None = None) -> list[SmilePoint]:
    """Evaluate the smile at a strike grid, in parallel, preserving order."""
    workers = max_workers or _thread_budget()
    if workers <= 1 or len(xs) <= 1:
        return [smile_point(model, float(x), t) for x in xs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda x: smile_point(model, float(x), t), xs))


# ---------------------------------------------------------------------------
# Jump-to-default put side
# ---------------------------------------------------------------------------

def otm_put_leading(lam: float, K: float, t: float, s0: float = 1.0) -> float:
    """Leading OTM put price under jump-to-default: lam * K * t."""
    if K >= s0:
        raise ValueError(f"otm_put_leading requires K < S0, got K={K} >= S0={s0}")
    if lam < 0.0 or t <= 0.0:
        raise ValueError("otm_put_leading requires lam >= 0 and t > 0")
    return lam * K * t


def put_smile_smalltime(lam: float, K: float, x: float, t: float) -> float:
    """OTM-put implied variance under jump-to-default, two-term form.

        sigma_t^2(x) = (x^2/2) / (t log(1/t)) * [1 + V1(t, x)],
        V1 = log(4 sqrt(pi) a0 e^{-x/2} (log 1/t)^{3/2} / |x|) / log(1/t)

    with a0 = lam K.  The put sits at x < 0; |x| is used where positivity is
    required (the denominator inside the V1 logarithm), since the source
    formula leaves the sign convention open.
    """
    if lam <= 0.0:
        raise ValueError("put_smile_smalltime requires lam > 0 (a0 = lam K must be positive)")
    if K <= 0.0 or x == 0.0:
        raise ValueError("put_smile_smalltime requires K > 0 and x != 0")
    if not 0.0 < t < math.exp(-1.0):
        raise ValueError(f"t must lie in (0, 1/e) for the log expansion, got {t}")
    big_l = math.log(1.0 / t)
    a0 = lam * K
    v1 = math.log(4.0 * math.sqrt(math.pi) * a0 * math.exp(-0.5 * x)
                  * big_l**1.5 / abs(x)) / big_l
    return 0.5 * x * x / (t * big_l) * (1.0 + v1)


# ---------------------------------------------------------------------------
# Closed-form SABR smile (reference path)
# ---------------------------------------------------------------------------

def sabr_smile_reference(x1: float, y0: float, nu: float = 1.0,
                         t: float = 0.0, lam: float = 0.0) -> SmilePoint:
    """SmilePoint from the SABR closed forms alone (no numerics).

    The log-ratio collapses to log(y0 y1* d^2 / x^2)/2, giving
    a = (sigma0^4/x^2) log(y0 y1* d^2 / x^2); well conditioned down to
    x ~ 1e-8 and the independent check on the generic pipeline.
    """
    ref = sabr_reference(x1, y0, nu)
    sigma0 = abs(x1) / ref.d
    lr = 0.5 * math.log(y0 * ref.y1_star * ref.d**2 / (x1 * x1))
    a = 2.0 * sigma0**4 / (x1 * x1) * lr
    jump_gap = 2.0 * lam * sigma0**4 * ref.d / (x1 * x1 * ref.y1_star)
    a_jump = a + jump_gap
    var_t = sigma0**2 + a * t
    var_t_jump = sigma0**2 + a_jump * t
    return SmilePoint(
        x=x1, t=t, sigma0=sigma0, a=a, a_jump=a_jump,
        sigma_t=math.sqrt(var_t) if var_t > 0.0 else math.nan,
        sigma_t_jump=math.sqrt(var_t_jump) if var_t_jump > 0.0 else math.nan,
        delta_sigma_jump=lam * sigma0**2 * t / (abs(x1) * ref.y1_star),
        A_SV=ref.A_SV * (math.exp(lam * ref.d / ref.y1_star) if lam > 0.0 else 1.0),
        d=ref.d, y1_star=ref.y1_star)
