"""Command line front end.

Subcommands wire a model config file to the library and emit CSV.  Every
output embeds a run manifest as '#'-prefixed header lines (command, resolved
config, library version, seed, output path, wall time); numeric fields are
written with 17 significant digits so files parse back to the exact library
values.

Exit codes: 0 success, 1 numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import replace

from . import __version__
from .asymptotics import call_asymptote, smile_curve
from .exceptions import LsvError
from .geometry import gauss_curvature, solve_line_geodesic
from .heatkernel import kernel_factors
from .model import AuditGrid, ModelSpec, audit_assumptions, build_model, parse_model_config
from .pricing import MCConfig, mc_smile

_OTM_GUARD = 1e-6


class UsageError(Exception):
    pass


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


def _load(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = parse_model_config(fh.read())
        return build_model(raw), raw
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def _with_lambda(model: ModelSpec, lam: float | None) -> ModelSpec:
    if lam is None:
        return model
    if lam < 0.0:
        raise UsageError("--lambda-override must be >= 0")
    if lam > 0.0 and not (model.rho == 0.0 and model.sigma_is_unit()):
        raise UsageError("--lambda-override > 0 requires rho = 0 and sigma constant 1")
    return replace(model, lam=lam)


def _strike_grid(args) -> list[float]:
    if getattr(args, "strikes", None) is not None:
        xs = list(args.strikes)
    else:
        if args.x_steps < 1:
            raise UsageError("--x-steps must be >= 1")
        if args.x_steps == 1:
            xs = [args.x_min]
        else:
            step = (args.x_max - args.x_min) / (args.x_steps - 1)
            xs = [args.x_min + i * step for i in range(args.x_steps)]
    if not xs:
        raise UsageError("empty strike grid")
    return xs


def _require_otm(xs, x0: float) -> None:
    bad = [x for x in xs if abs(x - x0) < _OTM_GUARD]
    if bad:
        raise UsageError(f"strike grid contains at-the-money points (|x - x0| < 1e-6): {bad}")


def _write(args, manifest: list[tuple[str, str]], header: list[str], rows) -> None:
    lines = [f"# lsv-smile {manifest[0][1]}"]
    lines += [f"# {k}: {v}" for k, v in manifest[1:]]
    lines.append(",".join(header))
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _manifest(command: str, args, raw_config: dict, seed=None) -> list[tuple[str, str]]:
    man = [("command", command),
           ("version", __version__),
           ("config", args.config)]
    for section, kv in sorted(raw_config.items()):
        for key, val in sorted(kv.items()):
            man.append((f"config.{section}.{key}", val))
    man.append(("seed", str(seed) if seed is not None else "-"))
    man.append(("output", args.out or "stdout"))
    return man


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------

def _cmd_audit(args) -> int:
    model, raw = _load(args.config)
    grid = AuditGrid(y_lo=args.y_lo, y_hi=args.y_hi, n_y=args.ny,
                     x_lo=args.x_lo, x_hi=args.x_hi, n_x=args.nx)
    t0 = time.perf_counter()
    report = audit_assumptions(model, grid)
    man = _manifest("audit", args, raw)
    for w in report.warnings:
        man.append(("warning", w))
    man.append(("wall_time_s", _fmt(time.perf_counter() - t0)))
    rows = [(c.name, "pass" if c.passed else "FAIL",
             "|".join(f"{k}={_fmt(v)}" for k, v in c.witness.items()), c.grid)
            for c in report.checks]
    _write(args, man, ["check", "status", "witness", "grid"], rows)
    return 0      # the audit reports failures, it does not fail


def _cmd_smile(args) -> int:
    model, raw = _load(args.config)
    model = _with_lambda(model, args.lambda_override)
    xs = _strike_grid(args)
    _require_otm(xs, model.x0)
    t0 = time.perf_counter()
    points = smile_curve(model, xs, args.t)
    man = _manifest("smile", args, raw)
    man.append(("t", _fmt(args.t)))
    man.append(("wall_time_s", _fmt(time.perf_counter() - t0)))
    rows = [(p.x, p.sigma0, p.a, p.a_jump, p.sigma_t, p.sigma_t_jump, p.d, p.y1_star, p.A_SV)
            for p in points]
    _write(args, man,
           ["x", "sigma0", "a", "a_jump", "sigma_t", "sigma_t_jump", "d", "y1_star", "A_SV"],
           rows)
    return 0


def _cmd_price(args) -> int:
    model, raw = _load(args.config)
    xs = _strike_grid(args)
    _require_otm(xs, model.x0)
    t0 = time.perf_counter()
    rows = []
    for x in xs:
        k = math.exp(model.x0 + x)
        ca = call_asymptote(model, k, args.t)
        rows.append((x, k, ca.intrinsic, ca.leading_term, ca.price, ca.A_SV, ca.phi_star))
    man = _manifest("price", args, raw)
    man.append(("t", _fmt(args.t)))
    man.append(("wall_time_s", _fmt(time.perf_counter() - t0)))
    _write(args, man,
           ["x", "strike", "intrinsic", "leading_term", "price", "A_SV", "phi_star"], rows)
    return 0


def _cmd_mc(args) -> int:
    model, raw = _load(args.config)
    xs = _strike_grid(args)
    cfg = MCConfig(paths=args.paths, steps=args.steps, seed=args.seed,
                   antithetic=args.antithetic)
    t0 = time.perf_counter()
    Ks = [math.exp(model.x0 + x) for x in xs]
    ests = mc_smile(model, Ks, args.t, cfg)
    man = _manifest("mc", args, raw, seed=args.seed)
    man.append(("t", _fmt(args.t)))
    man.append(("paths", str(args.paths)))
    man.append(("steps", str(args.steps)))
    man.append(("antithetic", str(args.antithetic)))
    man.append(("wall_time_s", _fmt(time.perf_counter() - t0)))
    rows = [(x, e.price, e.stderr, e.implied_vol) for x, e in zip(xs, ests)]
    _write(args, man, ["x", "mc_price", "stderr", "mc_ivol"], rows)
    return 0


def _cmd_geodesic(args) -> int:
    model, raw = _load(args.config)
    if abs(args.x1 - model.x0) < 1e-12:
        raise UsageError("--x1 must differ from x0")
    t0 = time.perf_counter()
    geo = solve_line_geodesic(model, args.x1)
    kap = gauss_curvature(model, geo.path.x, geo.path.y)
    man = _manifest("geodesic", args, raw)
    man.append(("x1", _fmt(args.x1)))
    man.append(("y1_star", _fmt(geo.y1_star)))
    man.append(("d", _fmt(geo.d)))
    man.append(("wall_time_s", _fmt(time.perf_counter() - t0)))
    rows = list(zip(geo.path.s, geo.path.x, geo.path.y, kap))
    _write(args, man, ["s", "x", "y", "kappa"], rows)
    return 0


def _cmd_kernel(args) -> int:
    model, raw = _load(args.config)
    if abs(args.x1 - model.x0) < _OTM_GUARD:
        raise UsageError("--x1 must be away from the money (|x1 - x0| >= 1e-6)")
    t0 = time.perf_counter()
    geo = solve_line_geodesic(model, args.x1)
    kf = kernel_factors(model, geo)
    man = _manifest("kernel", args, raw)
    man.append(("x1", _fmt(args.x1)))
    man.append(("wall_time_s", _fmt(time.perf_counter() - t0)))
    rows = [("x1", geo.x1), ("y1_star", geo.y1_star), ("d", geo.d),
            ("E", geo.E), ("K1", geo.K1), ("u0", kf.u0), ("A", kf.A),
            ("P", kf.P), ("psi", kf.psi), ("phi", kf.phi),
            ("phi_second", kf.phi_second)]
    _write(args, man, ["quantity", "value"], rows)
    return 0


def _cmd_compare(args) -> int:
    model, raw = _load(args.config)
    xs = _strike_grid(args)
    _require_otm(xs, model.x0)
    cfg = MCConfig(paths=args.paths, steps=args.steps, seed=args.seed,
                   antithetic=args.antithetic)
    t0 = time.perf_counter()
    points = smile_curve(model, xs, args.t)
    Ks = [math.exp(model.x0 + x) for x in xs]
    ests = mc_smile(model, Ks, args.t, cfg)
    rows = []
    for p, e in zip(points, ests):
        ivol = e.implied_vol
        rel = (p.sigma_t - ivol) / ivol if ivol else math.nan
        a_mc = (ivol**2 - p.sigma0**2) / args.t if ivol else math.nan
        rows.append((p.x, p.sigma0, p.sigma_t, ivol, e.stderr, rel, p.a, a_mc))
    man = _manifest("compare", args, raw, seed=args.seed)
    man.append(("t", _fmt(args.t)))
    man.append(("wall_time_s", _fmt(time.perf_counter() - t0)))
    _write(args, man,
           ["x", "sigma0", "sigma_corrected", "mc_ivol", "mc_stderr",
            "rel_err_corrected_vs_mc", "a", "a_mc_implied"], rows)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_strike_args(sp, grid_default=False):
    if grid_default:
        sp.add_argument("--x-min", type=float, default=0.04)
        sp.add_argument("--x-max", type=float, default=0.2)
        sp.add_argument("--x-steps", type=int, default=5)
        sp.add_argument("--strikes", type=float, nargs="+", default=None,
                        help="explicit log-moneyness grid (overrides --x-*)")
    else:
        sp.add_argument("--strikes", type=float, nargs="+", required=True,
                        help="strike grid in log-moneyness")


def _add_mc_args(sp):
    sp.add_argument("--paths", type=int, default=100_000)
    sp.add_argument("--steps", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--antithetic", action="store_true", default=False)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lsv-smile",
                                 description="Small-maturity LSV smile asymptotics")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="model config file")
        sp.add_argument("--out", default=None, help="output CSV path (default stdout)")

    sp = sub.add_parser("audit", help="numerically audit the model assumptions")
    common(sp)
    sp.add_argument("--y-lo", type=float, default=1e-5)
    sp.add_argument("--y-hi", type=float, default=1e4)
    sp.add_argument("--ny", type=int, default=241)
    sp.add_argument("--x-lo", type=float, default=-1.0)
    sp.add_argument("--x-hi", type=float, default=1.0)
    sp.add_argument("--nx", type=int, default=41)
    sp.set_defaults(func=_cmd_audit)

    sp = sub.add_parser("smile", help="two-term implied-volatility smile")
    common(sp)
    sp.add_argument("--t", type=float, required=True)
    _add_strike_args(sp, grid_default=True)
    sp.add_argument("--lambda-override", type=float, default=None)
    sp.set_defaults(func=_cmd_smile)

    sp = sub.add_parser("price", help="leading-order call price asymptote")
    common(sp)
    sp.add_argument("--t", type=float, required=True)
    _add_strike_args(sp)
    sp.set_defaults(func=_cmd_price)

    sp = sub.add_parser("mc", help="Monte Carlo prices and implied vols")
    common(sp)
    sp.add_argument("--t", type=float, required=True)
    _add_strike_args(sp)
    _add_mc_args(sp)
    sp.set_defaults(func=_cmd_mc)

    sp = sub.add_parser("geodesic", help="sampled point-to-line geodesic path")
    common(sp)
    sp.add_argument("--x1", type=float, required=True)
    sp.set_defaults(func=_cmd_geodesic)

    sp = sub.add_parser("kernel", help="heat-kernel factors for one strike")
    common(sp)
    sp.add_argument("--x1", type=float, required=True)
    sp.set_defaults(func=_cmd_kernel)

    sp = sub.add_parser("compare", help="corrected smile vs Monte Carlo")
    common(sp)
    sp.add_argument("--t", type=float, required=True)
    _add_strike_args(sp)
    _add_mc_args(sp)
    sp.set_defaults(func=_cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (LsvError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
