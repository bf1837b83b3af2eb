"""Command-line interface.

Every subcommand accepts ``--config FILE`` holding a JSON object whose keys
are option names (``max_iters`` or ``max-iters``); flags given on the
command line take precedence. Exit codes: 0 ok, 1 error (JSON on stderr),
2 fit did not converge (result still written).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bench
from .diagnostics import scc_report
from .grid import GridSpec, Modulation, hanning_modulation
from .inference import FitOptions, attach_standard_errors, fit, initial_guess
from .io import load_observations, write_grid
from .likelihood import VARIANTS, ObjectiveSpec
from .models import MODELS, get_model, parameters_from_mapping
from .simulate import bernoulli_mask, circle_mask, iter_fields, mask_from_file
from .spectral import expected_periodogram, lag_covariance, periodogram

log = logging.getLogger("dswhittle")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


# ---------------------------------------------------------------- parsing helpers

def parse_dims(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    parts = str(text).replace("x", ",").split(",")
    try:
        return tuple(int(p) for p in parts if p.strip())
    except ValueError:
        raise CliError(f"bad dims {text!r}; expected e.g. 64,64") from None


def parse_json_arg(text):
    """A JSON object given inline or as ``@path``."""
    if text is None:
        return {}
    if isinstance(text, dict):
        return text
    if text.startswith("@"):
        text = Path(text[1:]).read_text()
    try:
        out = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"invalid JSON: {exc}") from None
    if not isinstance(out, dict):
        raise CliError("parameters must be a JSON object")
    return out


def parse_mask(text, grid: GridSpec) -> Modulation:
    """``circle:D``, ``bernoulli:p:seed`` or ``file:path``."""
    kind, _, rest = str(text).partition(":")
    try:
        if kind == "circle":
            return circle_mask(grid, float(rest))
        if kind == "bernoulli":
            p, seed = rest.split(":")
            return bernoulli_mask(grid, float(p), int(seed))
        if kind == "file":
            return mask_from_file(rest, grid)
    except ValueError as exc:
        raise CliError(f"bad mask {text!r}: {exc}") from None
    raise CliError(f"bad mask {text!r}; use circle:D, bernoulli:p:seed or file:path")


def _dump(obj, output):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def _centered(a: np.ndarray) -> np.ndarray:
    """Reorder a frequency array from ``[0, 2pi)`` to ``(-pi, pi]`` per axis."""
    for ax, n in enumerate(a.shape):
        a = np.roll(a, -(n // 2 + 1), axis=ax)
    return a


def _observations(args):
    """Data and modulation from ``--data`` and ``--mask``; optional demeaning."""
    if args.data is None:
        raise CliError("--data is required")
    data, mod = load_observations(args.data)
    if args.mask:
        mod = mod * parse_mask(args.mask, mod.grid)
        data = np.where(mod.values > 0, data, 0.0)
    mod.require_nonempty()
    if getattr(args, "demean", False):
        mean = np.sum(mod.values * data) / mod.sum_g
        data = np.where(mod.values > 0, data - mean, 0.0)
    return data, mod


def _pattern(args) -> Modulation:
    """Sampling pattern from ``--data``/``--mask`` or ``--dims``/``--mask``."""
    if args.data is not None:
        return _observations(args)[1]
    if args.dims is None:
        raise CliError("either --data or --dims is required")
    grid = GridSpec(parse_dims(args.dims), args.spacing and [float(s) for s in args.spacing.split(",")])
    mod = Modulation.full(grid) if not args.mask else parse_mask(args.mask, grid)
    mod.require_nonempty()
    return mod


def _model(args, ndim):
    return get_model(args.model, ndim)


def _full_params(model, args):
    raw = parse_json_arg(args.params)
    return parameters_from_mapping(model, raw)


# ---------------------------------------------------------------- commands

def _fit_from_args(args):
    data, mod = _observations(args)
    model = _model(args, mod.grid.ndim)
    raw = parse_json_arg(args.params)
    need_guess = any(
        not isinstance(raw.get(n), (int, float)) and "value" not in (raw.get(n) or {}) for n in model.param_names
    )
    fill = initial_guess(data, mod, model) if need_guess else None
    theta0 = parameters_from_mapping(model, raw, fill)
    spec = ObjectiveSpec(
        args.variant, model, mod,
        exclude_zero_frequency=bool(args.demean),
        alias_truncation=args.alias_truncation,
    )
    options = FitOptions(
        optimizer=args.optimizer, max_iters=args.max_iters, rel_tol=args.rel_tol,
        restarts=args.restarts, seed=args.seed if args.seed is not None else 0,
    )
    return fit(data, spec, theta0, options), spec


def cmd_fit(args) -> int:
    result, spec = _fit_from_args(args)
    if args.stderr_m:
        attach_standard_errors(result, spec, args.stderr_m, args.seed or 0, args.level)
    out = result.to_json()
    out.update(model=args.model, variant=args.variant)
    _dump(out, args.output)
    return 0 if result.converged else 2


def cmd_stderr(args) -> int:
    _require_seed(args)
    result, spec = _fit_from_args(args)
    attach_standard_errors(result, spec, args.M, args.seed, args.level)
    out = result.to_json()
    out.update(model=args.model, variant=args.variant, M=args.M)
    _dump(out, args.output)
    return 0 if result.converged else 2


def _require_seed(args):
    if args.seed is None:
        raise CliError(f"--seed is required for {args.command}")


def cmd_simulate(args) -> int:
    _require_seed(args)
    if args.dims is None:
        raise CliError("--dims is required")
    grid = GridSpec(parse_dims(args.dims), args.spacing and [float(s) for s in args.spacing.split(",")])
    model = _model(args, grid.ndim)
    params = _full_params(model, args)
    mod = parse_mask(args.mask, grid) if args.mask else None
    if not args.output:
        raise CliError("--output is required")
    out = Path(args.output)
    count = args.replicates
    paths = []
    fields = iter_fields(model, params.values, grid, args.seed, count, allow_approx=args.allow_approx)
    for r, x in enumerate(fields):
        path = out if count == 1 else out.with_name(f"{out.stem}_{r:04d}{out.suffix}")
        if mod is not None:
            x = np.where(mod.values > 0, x, np.nan)
        write_grid(path, x, grid.spacing, extra={"model": args.model, "theta": params.to_dict(), "seed": args.seed, "replicate": r})
        paths.append(str(path))
    if not args.quiet:
        _dump({"files": paths}, None)
    return 0


def _self_check_periodogram(I, data, mod) -> dict:
    n = mod.grid.size
    lhs = float(np.sum(I))
    rhs = n * float(np.sum((mod.values * data) ** 2)) / ((2 * np.pi) ** mod.grid.ndim * mod.sum_g2)
    return {
        "parseval": math.isclose(lhs, rhs, rel_tol=1e-10, abs_tol=1e-300),
        "parseval_lhs": lhs,
        "parseval_rhs": rhs,
        "nonnegative": bool(np.all(I >= 0)),
    }


def _self_check_expected(Ibar, model, theta, mod) -> dict:
    n = mod.grid.size
    d = mod.grid.ndim
    lhs = float(np.sum(Ibar)) * (2 * np.pi) ** d / n
    rhs = float(lag_covariance(model, theta, (1,) * d).flat[0])
    return {
        "parseval": math.isclose(lhs, rhs, rel_tol=1e-10),
        "parseval_lhs": lhs,
        "parseval_rhs": rhs,
        "positive": bool(np.all(Ibar > 0)),
    }


def _write_spectrum(args, arr, grid, extra):
    if not args.output or args.output == "-":
        raise CliError("--output is required for grid outputs")
    if args.centered:
        arr = _centered(arr)
        extra["frequency_origin"] = "centered"
    else:
        extra["frequency_origin"] = "zero"
    write_grid(args.output, arr, extra=extra)


def cmd_periodogram(args) -> int:
    data, mod = _observations(args)
    if args.taper:
        mod = hanning_modulation(mod)
    I = periodogram(data, mod)
    extra = {"kind": "periodogram", "tapered": bool(args.taper)}
    status = 0
    if args.self_check:
        check = _self_check_periodogram(I, data, mod)
        extra["self_check"] = check
        _dump({"self_check": check}, None)
        status = 0 if check["parseval"] and check["nonnegative"] else 1
    _write_spectrum(args, I, mod.grid, extra)
    return status


def cmd_expected_periodogram(args) -> int:
    mod = _pattern(args)
    if args.taper:
        mod = hanning_modulation(mod)
    model = _model(args, mod.grid.ndim)
    params = _full_params(model, args)
    Ibar = expected_periodogram(model, params.values, mod)
    extra = {"kind": "expected_periodogram", "model": args.model, "theta": params.to_dict(), "tapered": bool(args.taper)}
    status = 0
    if args.self_check:
        check = _self_check_expected(Ibar, model, params.values, mod)
        extra["self_check"] = check
        _dump({"self_check": check}, None)
        status = 0 if check["parseval"] and check["positive"] else 1
    _write_spectrum(args, Ibar, mod.grid, extra)
    return status


def cmd_diagnose(args) -> int:
    mod = _pattern(args)
    model = _model(args, mod.grid.ndim)
    params = _full_params(model, args)
    report = scc_report(mod, model, params.values, params.free, names=params.free_names)
    _dump(report.to_json(), args.output)
    return 0


def cmd_benchmark(args) -> int:
    _require_seed(args)
    overrides = {}
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.sides:
        overrides["sides"] = parse_dims(args.sides)
    if args.methods:
        overrides["methods"] = [m.strip() for m in args.methods.split(",")]
        bad = set(overrides["methods"]) - set(VARIANTS)
        if bad:
            raise CliError(f"unknown methods {sorted(bad)}")
    scenario = bench.get_scenario(args.scenario, **overrides)
    rows, summary = bench.run_benchmark(scenario, seed=args.seed, threads=args.threads)
    if args.output in (None, "-"):
        bench.write_csv(sys.stdout, rows, summary)
    else:
        bench.write_csv(args.output, rows, summary)
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "periodogram": cmd_periodogram,
    "expected-periodogram": cmd_expected_periodogram,
    "stderr": cmd_stderr,
    "diagnose": cmd_diagnose,
    "benchmark": cmd_benchmark,
}


# ---------------------------------------------------------------- parser

def _add_common(p, data=True, grid=False, model=False):
    p.add_argument("--config", help="JSON file of option defaults; flags win")
    p.add_argument("--output", "-o", help="output path ('-' or omitted: stdout where applicable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--mask", help="circle:D | bernoulli:p:seed | file:path")
    p.add_argument("--verbose", "-v", action="store_true")
    if data:
        p.add_argument("--data", help="grid file with observations (NaN = missing)")
    if grid:
        p.add_argument("--dims", help="grid dimensions, e.g. 64,64")
        p.add_argument("--spacing", help="grid spacing per axis, e.g. 1,1")
    if model:
        p.add_argument("--model", default="matern", choices=sorted(MODELS))
        p.add_argument("--params", help="parameter JSON (inline or @file)")


def _add_fit_options(p):
    p.add_argument("--variant", default="debiased", choices=VARIANTS)
    p.add_argument("--optimizer", default="nelder_mead", choices=["nelder_mead", "gradient_descent"])
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--alias-truncation", type=int, default=0)
    p.add_argument("--demean", action="store_true", help="subtract the weighted mean and drop the zero frequency")
    p.add_argument("--level", type=float, default=0.95)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dswhittle", description="Debiased spatial Whittle estimation on grids.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="estimate parameters")
    _add_common(p, model=True)
    _add_fit_options(p)
    p.add_argument("--stderr-m", type=int, default=0, help="also attach sandwich errors with this many MC pairs")

    p = sub.add_parser("stderr", help="fit and attach Monte-Carlo sandwich standard errors")
    _add_common(p, model=True)
    _add_fit_options(p)
    p.add_argument("--M", type=int, default=1000)

    p = sub.add_parser("simulate", help="simulate fields by circulant embedding")
    _add_common(p, data=False, grid=True, model=True)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--allow-approx", action="store_true")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("periodogram", help="periodogram of observed data")
    _add_common(p)
    p.add_argument("--taper", action="store_true")
    p.add_argument("--demean", action="store_true")
    p.add_argument("--centered", action="store_true", help="order frequencies over (-pi, pi]")
    p.add_argument("--self-check", action="store_true")

    p = sub.add_parser("expected-periodogram", help="expected periodogram of a model")
    _add_common(p, grid=True, model=True)
    p.add_argument("--taper", action="store_true")
    p.add_argument("--centered", action="store_true", help="order frequencies over (-pi, pi]")
    p.add_argument("--self-check", action="store_true")

    p = sub.add_parser("diagnose", help="sampling-pattern identifiability diagnostics")
    _add_common(p, grid=True, model=True)

    p = sub.add_parser("benchmark", help="Monte-Carlo estimator comparison")
    _add_common(p, data=False)
    p.add_argument("--scenario", default="fig1-desk", choices=sorted(bench.SCENARIOS))
    p.add_argument("--reps", type=int)
    p.add_argument("--sides", help="comma-separated grid sides")
    p.add_argument("--methods", help="comma-separated objective variants")
    p.add_argument("--threads", type=int)
    return parser


def _apply_config(parser, argv):
    """Reparse with the config file's values as defaults so flags win."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {args.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError("config must be a JSON object")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items() if k != "command"}
    if "params" in cfg and isinstance(cfg["params"], dict):
        cfg["params"] = json.dumps(cfg["params"])
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    unknown = set(cfg) - known
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    subparser.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
