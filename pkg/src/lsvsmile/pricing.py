"""Independent pricing oracle: Black-Scholes and Monte Carlo.

The Monte Carlo engine simulates the model SDEs with an Euler scheme that
steps the volatility in log space (positivity is preserved exactly, matching
the unattainable boundaries at 0 and infinity) and the log-forward with its
exact drift/diffusion coefficients frozen per step.  A jump-to-default is
handled analytically: the compensator adds +lam to the X drift and European
payoffs are discounted by e^{-lam t} (the default branch contributes K to a
put and nothing to a call), which has the same law as path-wise Bernoulli
defaults but much lower variance.

Paths are generated in fixed-size blocks with a counter-based Philox stream
keyed on (seed, block index), so results are bit-for-bit identical whatever
the thread count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .exceptions import NumericalError
from .model import ModelSpec

__all__ = [
    "MCConfig",
    "MCEstimate",
    "bs_price",
    "bs_vega",
    "implied_vol",
    "mc_price",
    "mc_smile",
]


# ---------------------------------------------------------------------------
# Black-Scholes
# ---------------------------------------------------------------------------

def bs_price(s0: float, K: float, t: float, sigma: float) -> float:
    """Black-Scholes call value with zero rates and dividends."""
    if s0 <= 0.0 or K <= 0.0 or t <= 0.0:
        raise ValueError("bs_price requires positive S0, K, t")
    if sigma <= 0.0:
        return max(s0 - K, 0.0)
    srt = sigma * math.sqrt(t)
    d1 = (math.log(s0 / K) + 0.5 * srt * srt) / srt
    return s0 * float(ndtr(d1)) - K * float(ndtr(d1 - srt))


def bs_vega(s0: float, K: float, t: float, sigma: float) -> float:
    srt = sigma * math.sqrt(t)
    d1 = (math.log(s0 / K) + 0.5 * srt * srt) / srt
    return s0 * math.sqrt(t) * math.exp(-0.5 * d1 * d1) / math.sqrt(2.0 * math.pi)


_IV_TOL = 1e-12


def implied_vol(price: float, s0: float, K: float, t: float) -> float:
    """Invert the Black-Scholes call formula for the volatility.

    Bracketed bisection narrows the root, a Newton polish finishes to
    |bs_price(result) - price| < 1e-12 * S0.  The price must lie strictly
    inside the no-arbitrage interval ((S0-K)^+, S0).
    """
    intrinsic = max(s0 - K, 0.0)
    if not intrinsic < price < s0:
        raise ValueError(
            f"price {price} outside the no-arbitrage interval ({intrinsic}, {s0})")
    lo, hi = 1e-10, 1.0
    while bs_price(s0, K, t, hi) < price:
        hi *= 2.0
        if hi > 1e6:
            raise ValueError("implied volatility bracket expansion failed")
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if bs_price(s0, K, t, mid) < price:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-4 * hi:
            break
    sigma = 0.5 * (lo + hi)
    for _ in range(40):
        diff = bs_price(s0, K, t, sigma) - price
        vega = bs_vega(s0, K, t, sigma)
        if vega <= 0.0:
            break
        step = diff / vega
        sigma = min(max(sigma - step, lo), hi)
        if abs(step) < 1e-12:       # converge in vol, not just in price
            break
    diff = bs_price(s0, K, t, sigma) - price
    if abs(diff) >= _IV_TOL * s0:
        raise NumericalError(f"implied_vol did not converge: residual {diff:.3e}")
    return sigma


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MCConfig:
    """Simulation settings.  Output is a pure function of (config, model, K, t)."""

    paths: int = 100_000
    steps: int = 200
    seed: int = 0
    antithetic: bool = True
    block_size: int = 65_536
    threads: int | None = None

    def __post_init__(self):
        if self.paths < 10_000:
            raise ValueError(f"paths must be >= 10000, got {self.paths}")
        if self.steps < 16:
            raise ValueError(f"steps must be >= 16, got {self.steps}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.block_size < 1024:
            raise ValueError("block_size must be >= 1024")


@dataclass(frozen=True)
class MCEstimate:
    price: float
    stderr: float
    implied_vol: float | None


def _mc_threads(config: MCConfig) -> int:
    if config.threads is not None:
        return max(1, config.threads)
    env = os.environ.get("LSV_SMILE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    # Philox key = seed || block index: a counter-based stream per block,
    # independent of how blocks are scheduled across threads
    return np.random.Generator(np.random.Philox(key=(int(seed) << 64) + block))


def _simulate_block(model: ModelSpec, t: float, steps: int, n: int,
                    rng: np.random.Generator, antithetic: bool) -> np.ndarray:
    """Terminal X for n paths (2n when antithetic: mirrored pairs stacked)."""
    dt = t / steps
    sq = math.sqrt(dt)
    rho, rb = model.rho, math.sqrt(1.0 - model.rho**2)
    reps = 2 if antithetic else 1
    x = np.full(reps * n, model.x0)
    logy = np.full(reps * n, math.log(model.y0))
    for _ in range(steps):
        z = rng.standard_normal((n, 2))
        if antithetic:
            z = np.concatenate([z, -z], axis=0)
        w1 = z[:, 0]
        w2 = rho * z[:, 0] + rb * z[:, 1]
        y = np.exp(logy)
        sig = model.sigma(x)
        x = x + (model.lam - 0.5 * sig**2 * y**2) * dt + sig * y * sq * w1
        a = model.alpha(y)
        logy = logy + (model.mu(y) / y - 0.5 * (a / y) ** 2) * dt + (a / y) * sq * w2
    if np.isnan(x).any():
        raise NumericalError(
            f"{int(np.isnan(x).sum())} NaN paths in Monte Carlo block "
            f"(steps={steps}, t={t}); reduce dt or check coefficients")
    return x


def _payoff(x_term: np.ndarray, K: float, option: str) -> np.ndarray:
    s = np.exp(x_term)
    if option == "call":
        return np.maximum(s - K, 0.0)
    if option == "put":
        return np.maximum(K - s, 0.0)
    raise ValueError(f"option must be 'call' or 'put', got {option!r}")


def mc_smile(model: ModelSpec, Ks, t: float, config: MCConfig,
             option: str = "call") -> list[MCEstimate]:
    """Monte Carlo prices for several strikes from one path ensemble.

    Returns one MCEstimate per strike; the implied volatility is attached
    when the call price lies strictly inside its no-arbitrage interval.
    """
    if t <= 0.0:
        raise ValueError(f"mc_smile requires t > 0, got {t}")
    Ks = [float(k) for k in Ks]
    if not Ks:
        raise ValueError("strike list is empty")
    units = config.paths // 2 if config.antithetic else config.paths
    bounds = list(range(0, units, config.block_size)) + [units]
    nblocks = len(bounds) - 1
    sums = np.zeros((nblocks, len(Ks)))
    sumsq = np.zeros((nblocks, len(Ks)))
    counts = np.zeros(nblocks)

    def run_block(b: int) -> None:
        n = bounds[b + 1] - bounds[b]
        rng = _block_rng(config.seed, b)
        x_term = _simulate_block(model, t, config.steps, n, rng, config.antithetic)
        for j, k in enumerate(Ks):
            pay = _payoff(x_term, k, option)
            if config.antithetic:
                pay = 0.5 * (pay[:n] + pay[n:])
            sums[b, j] = pay.sum()
            sumsq[b, j] = (pay * pay).sum()
        counts[b] = n

    threads = _mc_threads(config)
    if threads > 1 and nblocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, range(nblocks)))
    else:
        for b in range(nblocks):
            run_block(b)

    n_obs = counts.sum()
    disc = math.exp(-model.lam * t)
    out = []
    for j, k in enumerate(Ks):
        mean = sums[:, j].sum() / n_obs
        var = max(sumsq[:, j].sum() / n_obs - mean * mean, 0.0)
        se = disc * math.sqrt(var / n_obs)
        price = disc * mean
        if option == "put" and model.lam > 0.0:
            price += (1.0 - disc) * k        # default sends the stock to zero
        ivol = None
        if option == "call" and max(model.s0 - k, 0.0) < price < model.s0:
            try:
                ivol = implied_vol(price, model.s0, k, t)
            except (ValueError, NumericalError):
                ivol = None
        out.append(MCEstimate(price=float(price), stderr=float(se), implied_vol=ivol))
    return out


def mc_price(model: ModelSpec, K: float, t: float, config: MCConfig,
             option: str = "call") -> MCEstimate:
    """Monte Carlo price of a single European option."""
    return mc_smile(model, [K], t, config, option=option)[0]
