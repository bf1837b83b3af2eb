"""Monte-Carlo comparison of estimators over grid sizes and sampling schemes."""
from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .grid import GridSpec, Modulation
from .inference import FitOptions, fit, initial_guess
from .likelihood import ObjectiveSpec
from .models import get_model, parameters_from_mapping
from .simulate import circle_mask, iter_fields

COLUMNS = [
    "kind", "method", "side", "replicate", "param", "estimate", "truth",
    "runtime", "status", "n", "bias", "sd", "rmse",
]


@dataclass
class Scenario:
    name: str
    model: str
    truth: dict
    free: tuple[str, ...]
    sides: tuple[int, ...]
    reps: int
    methods: tuple[str, ...]
    mask: str = "full"
    ndim: int = 2
    options: dict = field(default_factory=dict)

    def modulation(self, side: int) -> Modulation:
        grid = GridSpec((side,) * self.ndim)
        if self.mask == "full":
            return Modulation.full(grid)
        if self.mask == "circle":
            return circle_mask(grid, side)
        raise ValueError(f"unknown mask scheme {self.mask!r}")


SCENARIOS = {
    "fig1-desk": Scenario(
        name="fig1-desk",
        model="matern",
        truth={"sigma": 1.0, "nu": 0.5, "rho": 10.0},
        free=("rho",),
        sides=(16, 32, 64),
        reps=200,
        methods=("debiased", "debiased_tapered", "standard", "standard_tapered"),
    ),
    "circle-desk": Scenario(
        name="circle-desk",
        model="exponential",
        truth={"sigma": 1.0, "rho": 3.0},
        free=("rho",),
        sides=(24, 48),
        reps=200,
        methods=("debiased",),
        mask="circle",
    ),
}


def get_scenario(name: str, **overrides) -> Scenario:
    try:
        sc = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    overrides = {k: v for k, v in overrides.items() if v is not None}
    for key in ("sides", "methods", "free"):
        if key in overrides:
            overrides[key] = tuple(overrides[key])
    return replace(sc, **overrides)


def _fit_replicate(scenario: Scenario, mod: Modulation, data, replicate: int) -> list[dict]:
    model = get_model(scenario.model, scenario.ndim)
    guess = initial_guess(data, mod, model)
    spec_params = {
        name: ({"value": guess.get(name, scenario.truth[name])} if name in scenario.free
               else {"value": scenario.truth[name], "fixed": True})
        for name in model.param_names
    }
    theta0 = parameters_from_mapping(model, spec_params)
    rows = []
    side = mod.grid.dims[0]
    for method in scenario.methods:
        opts = FitOptions(seed=replicate, **scenario.options)
        t0 = time.perf_counter()
        try:
            res = fit(data, ObjectiveSpec(method, model, mod), theta0, opts)
            runtime = time.perf_counter() - t0
            status = "ok" if res.converged else "nonconverged"
            est = res.theta
        except Exception as exc:  # recorded per row; the run continues
            runtime = time.perf_counter() - t0
            status = f"error: {type(exc).__name__}: {exc}"
            est = {}
        for name in scenario.free:
            rows.append({
                "kind": "replicate", "method": method, "side": side, "replicate": replicate,
                "param": name, "estimate": est.get(name, math.nan), "truth": scenario.truth[name],
                "runtime": runtime, "status": status,
            })
    return rows


def _run_chunk(args):
    scenario, side, seed, start, count = args
    mod = scenario.modulation(side)
    model = get_model(scenario.model, scenario.ndim)
    theta = [scenario.truth[n] for n in model.param_names]
    rows = []
    fields = iter_fields(model, theta, mod.grid, (seed, side), count, start=start)
    for r, x in enumerate(fields, start=start):
        rows.extend(_fit_replicate(scenario, mod, x, r))
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Bias, standard deviation (ddof=1) and RMSE per (method, side, param).

    Failed rows (non-finite estimate) are left out; ``n`` counts the rest.
    Sums are formed exactly in rational arithmetic and rounded once, so the
    figures do not depend on summation order.
    """
    cells: dict = {}
    for row in rows:
        if row["kind"] != "replicate":
            continue
        key = (row["method"], int(row["side"]), row["param"])
        cells.setdefault(key, []).append(row)
    out = []
    for (method, side, param), group in cells.items():
        truth = float(group[0]["truth"])
        est = [Fraction(e) for e in (float(r["estimate"]) for r in group) if math.isfinite(e)]
        n = len(est)
        if n:
            t = Fraction(truth)
            mean = sum(est) / n
            bias = float(mean - t)
            sd = math.sqrt(float(sum((e - mean) ** 2 for e in est) / (n - 1))) if n > 1 else math.nan
            rmse = math.sqrt(float(sum((e - t) ** 2 for e in est) / n))
        else:
            bias = sd = rmse = math.nan
        out.append({
            "kind": "summary", "method": method, "side": side, "param": param, "truth": truth,
            "n": n, "bias": bias, "sd": sd, "rmse": rmse,
        })
    return out


def run_benchmark(scenario: Scenario, seed: int = 0, threads: int | None = None) -> tuple[list[dict], list[dict]]:
    """Simulate ``scenario.reps`` fields per grid side and fit every method.

    Replicate ``r`` at side ``s`` always uses the stream keyed by
    ``(seed, s, r)``, so results do not depend on ``threads``.
    """
    threads = threads or os.cpu_count() or 1
    tasks = []
    for side in scenario.sides:
        chunk = max(1, math.ceil(scenario.reps / (4 * threads)) if threads > 1 else scenario.reps)
        for start in range(0, scenario.reps, chunk):
            tasks.append((scenario, side, seed, start, min(chunk, scenario.reps - start)))
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_run_chunk, tasks))
    else:
        chunks = [_run_chunk(t) for t in tasks]
    rows = [r for c in chunks for r in c]
    order = {m: i for i, m in enumerate(scenario.methods)}
    rows.sort(key=lambda r: (r["side"], order[r["method"]], r["replicate"], r["param"]))
    summary = summarize(rows)
    summary.sort(key=lambda r: (r["side"], order[r["method"]], r["param"]))
    return rows, summary


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path_or_file, rows: list[dict], summary: list[dict]):
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="", encoding="utf-8") if own else path_or_file
    try:
        w = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\r\n")
        w.writeheader()
        for r in list(rows) + list(summary):
            w.writerow({k: _fmt(r.get(k)) for k in COLUMNS})
    finally:
        if own:
            fh.close()


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])
