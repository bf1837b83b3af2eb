"""Minimisation of the objectives, sandwich standard errors and intervals."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .diagnostics import hscc_matrix, identifiability_warning, scc_info_ratio
from .grid import LagField, Modulation, mask_autocorrelation
from .likelihood import Objective, ObjectiveSpec
from .models import CovarianceModel, ParameterVector
from .simulate import rng_stream
from .spectral import (
    dirichlet_on_embedding,
    expected_periodogram,
    expected_periodogram_gradient,
    truncated_spectrum_on_embedding,
)

log = logging.getLogger(__name__)

OPTIMIZERS = ("nelder_mead", "gradient_descent")


class FitError(RuntimeError):
    pass


class SingularHessianError(np.linalg.LinAlgError):
    pass


@dataclass
class FitOptions:
    optimizer: str = "nelder_mead"
    max_iters: int = 1000
    rel_tol: float = 1e-8
    log_transform: bool = True
    restarts: int = 2
    seed: int = 0
    jitter: float = 0.1

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if not self.rel_tol > 0 or self.max_iters < 1 or self.restarts < 0:
            raise ValueError("rel_tol must be > 0, max_iters >= 1 and restarts >= 0")


@dataclass
class FitResult:
    theta_hat: ParameterVector
    nll: float
    iterations: int
    converged: bool
    sandwich_cov: np.ndarray | None = None
    ci: dict | None = None
    ci_level: float | None = None
    rate_rk: float | None = None
    warnings: list = field(default_factory=list)

    @property
    def theta(self) -> dict:
        return dict(zip(self.theta_hat.names, map(float, self.theta_hat.values)))

    def standard_errors(self) -> dict | None:
        if self.sandwich_cov is None:
            return None
        se = np.sqrt(np.clip(np.diag(self.sandwich_cov), 0, None))
        return dict(zip(self.theta_hat.free_names, map(float, se)))

    def to_json(self) -> dict:
        out = {
            "theta": self.theta,
            "free": self.theta_hat.free_names,
            "nll": self.nll,
            "converged": self.converged,
            "iterations": self.iterations,
            "cov": None if self.sandwich_cov is None else self.sandwich_cov.tolist(),
            "se": self.standard_errors(),
            "ci": self.ci,
            "ci_level": self.ci_level,
            "rate_rk": self.rate_rk,
            "warnings": list(self.warnings),
        }
        return out


class _Transform:
    """Map free parameters to the unconstrained search space (log for positive ones)."""

    def __init__(self, params: ParameterVector, use_log: bool):
        self.params = params
        lo = params.lower[params.free]
        hi = params.upper[params.free]
        self.log = (lo >= 0) if use_log else np.zeros(len(lo), bool)
        with np.errstate(divide="ignore"):
            zlo = np.where(self.log, np.log(np.where(lo > 0, lo, 1.0)), lo)
            zlo = np.where(self.log & (lo <= 0), -np.inf, zlo)
            zhi = np.where(self.log, np.log(hi), hi)
        self.bounds = [(None if np.isinf(a) else a, None if np.isinf(b) else b) for a, b in zip(zlo, zhi)]

    def to_z(self, free_values):
        v = np.asarray(free_values, dtype=float)
        return np.where(self.log, np.log(np.where(self.log, v, 1.0)), v)

    def to_theta(self, z):
        z = np.asarray(z, dtype=float)
        return np.where(self.log, np.exp(z), z)

    def dtheta_dz(self, z):
        return np.where(self.log, np.exp(z), 1.0)

    def clip(self, z):
        lo = np.array([-np.inf if b[0] is None else b[0] for b in self.bounds])
        hi = np.array([np.inf if b[1] is None else b[1] for b in self.bounds])
        return np.clip(z, lo, hi)


def fit(data, spec: ObjectiveSpec, theta0: ParameterVector, options: FitOptions | None = None) -> FitResult:
    """Minimise the objective of ``spec`` over the free parameters of ``theta0``.

    The search runs in log coordinates for nonnegative-bounded parameters,
    followed by ``options.restarts`` jittered restarts from the incumbent.
    """
    options = options or FitOptions()
    if not np.any(theta0.free):
        raise FitError("no free parameter to estimate")
    objective = Objective(data, spec)
    tr = _Transform(theta0, options.log_transform)

    def f(z):
        try:
            val = objective(theta0.expand(tr.to_theta(z)))
        except (ValueError, FloatingPointError, OverflowError):
            return np.inf
        return val if np.isfinite(val) else np.inf

    z0 = tr.to_z(theta0.free_values)
    f0 = f(z0)
    if not np.isfinite(f0):
        try:
            objective(theta0.values)
        except Exception as exc:
            raise FitError(f"objective cannot be evaluated at the initial point: {exc}") from exc
        raise FitError("objective is not finite at the initial point")

    rng = rng_stream(options.seed, 0)
    starts = [z0] + [None] * options.restarts
    best = None
    total_iters = 0
    for k, start in enumerate(starts):
        if start is None:
            start = tr.clip(best.x + options.jitter * rng.standard_normal(len(z0)))
        if options.optimizer == "nelder_mead":
            res = _nelder_mead(f, start, tr, options, f0)
        else:
            res = _gradient_descent(objective, f, start, tr, theta0, options)
        total_iters += int(res.nit)
        if best is None or (np.isfinite(res.fun) and res.fun < best.fun):
            best = res
    if best is None or not np.isfinite(best.fun):
        raise FitError("all optimisation runs failed")
    theta_hat = theta0.with_free(tr.to_theta(best.x))
    result = FitResult(theta_hat=theta_hat, nll=float(best.fun), iterations=total_iters, converged=bool(best.success))
    _annotate(result, objective)
    return result


def _annotate(result: FitResult, objective: Objective):
    mod = objective.mod
    theta = result.theta_hat.values
    cg = objective.cg if objective.cg is not None else mask_autocorrelation(mod)
    try:
        result.rate_rk = float(np.sqrt(scc_info_ratio(mod, objective.model, theta, cg)))
        msg = identifiability_warning(hscc_matrix(mod, objective.model, theta, result.theta_hat.free, cg))
    except (ValueError, np.linalg.LinAlgError) as exc:
        msg = f"diagnostics unavailable: {exc}"
    if msg:
        result.warnings.append(msg)


def _nelder_mead(f, z0, tr, options, f0):
    p = len(z0)
    simplex = np.vstack([z0] + [z0 + 0.1 * np.eye(p)[i] for i in range(p)])
    simplex = np.array([tr.clip(s) for s in simplex])
    fatol = options.rel_tol * max(1.0, abs(f0))
    res = optimize.minimize(
        f,
        z0,
        method="Nelder-Mead",
        bounds=tr.bounds if any(b != (None, None) for b in tr.bounds) else None,
        options={
            "maxiter": options.max_iters,
            "maxfev": 4 * options.max_iters,
            "xatol": 1e-7,
            "fatol": fatol,
            "initial_simplex": simplex,
        },
    )
    return res


def _gradient_descent(objective, f, z0, tr, theta0, options):
    z = np.array(z0, dtype=float)
    fz = f(z)
    success = False
    it = 0
    for it in range(1, options.max_iters + 1):
        theta = theta0.expand(tr.to_theta(z))
        g = objective.score(theta, theta0.free) * tr.dtheta_dz(z)
        step = 1.0
        while True:
            z_new = tr.clip(z - step * g)
            f_new = f(z_new)
            if f_new <= fz - 1e-4 * step * g @ g or step < 1e-12:
                break
            step *= 0.5
        if not f_new <= fz:
            success = True
            break
        done = abs(fz - f_new) <= options.rel_tol * max(1.0, abs(fz))
        z, fz = z_new, f_new
        if done:
            success = True
            break
    return optimize.OptimizeResult(x=z, fun=fz, nit=it, success=success)


def initial_guess(data, mod: Modulation, model: CovarianceModel) -> dict:
    """Method-of-moments starting values.

    ``sigma`` from the observed variance, ranges from the first axis lag at
    which the empirical correlation drops below ``1/e``, ``nu = 1``.
    """
    data = np.asarray(data, dtype=float)
    g = mod.values
    obs = g > 0
    x = np.where(obs, data, 0.0)
    mean = x[obs].mean() if obs.any() else 0.0
    xc = np.where(obs, x - mean, 0.0)
    var = float(np.sum(g * xc**2) / max(mod.sum_g, 1e-300))
    sigma = np.sqrt(var) if var > 0 else 1.0

    def crossing(axis):
        n = mod.grid.dims[axis]
        for k in range(1, n):
            a = np.take(xc, range(0, n - k), axis=axis)
            b = np.take(xc, range(k, n), axis=axis)
            wa = np.take(obs, range(0, n - k), axis=axis)
            wb = np.take(obs, range(k, n), axis=axis)
            w = wa & wb
            if w.sum() < 2:
                break
            if np.sum(a * b * w) / w.sum() < np.exp(-1) * var:
                return float(k)
        return max(n / 2, 1.0)

    guess = {"sigma": float(sigma), "nu": 1.0}
    if model.name == "separable_exponential":
        guess["rho1"] = crossing(0)
        guess["rho2"] = crossing(1)
    else:
        guess["rho"] = float(np.mean([crossing(i) for i in range(mod.grid.ndim)]))
    return {k: v for k, v in guess.items() if k in model.param_names}


def expected_hessian(
    model: CovarianceModel, theta, mod: Modulation, free=None, cg: LagField | None = None, weights=None
) -> np.ndarray:
    """Expected Hessian ``|n|^-1 sum Ibar^-2 grad Ibar grad Ibar^T`` of the debiased objective."""
    if cg is None:
        cg = mask_autocorrelation(mod)
    Ibar = expected_periodogram(model, theta, mod, cg)
    dI = expected_periodogram_gradient(model, theta, mod, free, cg)
    p = dI.shape[0]
    a = dI.reshape(p, -1) / Ibar.reshape(1, -1)
    if weights is not None:
        a = a * np.sqrt(weights).reshape(1, -1)
    H = a @ a.T / Ibar.size
    return 0.5 * (H + H.T)


@dataclass
class ScoreCovariance:
    matrix: np.ndarray
    mc_se: np.ndarray
    n_sampled: int
    n_offdiagonal: int
    exhaustive: bool


class PeriodogramCovariance:
    """Covariances of the periodogram between Fourier frequencies.

    Uses the Riemann sum on the Fourier grid of the ``2n`` embedding of the
    truncated spectrum times two modulation Dirichlet kernels; on that grid
    the sum reproduces the double sum over sites exactly.
    """

    def __init__(self, model: CovarianceModel, theta, mod: Modulation):
        mod.require_nonempty()
        self.dims = mod.grid.dims
        self.d = len(self.dims)
        self.D = dirichlet_on_embedding(mod)
        self.ft = truncated_spectrum_on_embedding(model, theta, self.dims)
        self.norm = 1.0 / ((2 * np.pi) ** self.d * mod.sum_g2 * self.D.size)
        self.axes = tuple(range(self.d))

    def _shift(self, j, sign):
        return tuple(int(sign * 2 * ji) for ji in j)

    def cross(self, j1, j2) -> tuple[complex, complex]:
        """``(E[J1 conj J2], E[J1 J2])`` for Fourier multi-indices ``j1``, ``j2``."""
        a = self.ft * np.roll(self.D, self._shift(j1, 1), self.axes)
        t1 = np.sum(a * np.conj(np.roll(self.D, self._shift(j2, 1), self.axes)))
        t2 = np.sum(a * np.conj(np.roll(self.D, self._shift(j2, -1), self.axes)))
        return t1 * self.norm, t2 * self.norm

    def cov(self, j1, j2) -> float:
        t1, t2 = self.cross(j1, j2)
        return float(abs(t1) ** 2 + abs(t2) ** 2)

    def pseudo_diagonal(self) -> np.ndarray:
        """``|E[J(w) J(w)]|^2`` at every Fourier frequency (O(|n|^2) total)."""
        out = np.full(self.dims, np.nan)
        for j in np.ndindex(*self.dims):
            if not np.isnan(out[j]):
                continue
            a = self.ft * np.roll(self.D, self._shift(j, 1), self.axes)
            out[j] = abs(np.sum(a * np.conj(np.roll(self.D, self._shift(j, -1), self.axes))) * self.norm) ** 2
            # real data: the value at -w equals the value at w
            out[tuple(-ji % n for ji, n in zip(j, self.dims))] = out[j]
        return out

    def offset_band(self, m) -> np.ndarray:
        """``cov(I(w_j), I(w_{j+m}))`` for every ``j`` and a fixed index offset ``m``."""
        h = self.D * np.conj(np.roll(self.D, self._shift(m, 1), self.axes))
        corr = np.fft.ifftn(np.fft.fftn(self.ft) * np.conj(np.fft.fftn(np.conj(h))))
        t1 = corr[tuple(slice(None, None, 2) for _ in self.dims)] * self.norm
        t2 = np.empty(self.dims, dtype=complex)
        for j in np.ndindex(*self.dims):
            jm = tuple((ji + mi) % n for ji, mi, n in zip(j, m, self.dims))
            a = self.ft * np.roll(self.D, self._shift(j, 1), self.axes)
            t2[j] = np.sum(a * np.conj(np.roll(self.D, self._shift(jm, -1), self.axes))) * self.norm
        return np.abs(t1) ** 2 + np.abs(t2) ** 2


def _band_offsets(dims) -> list[tuple[int, ...]]:
    seen = set()
    out = []
    for m in itertools.product((-1, 0, 1), repeat=len(dims)):
        key = tuple(mi % n for mi, n in zip(m, dims))
        if all(k == 0 for k in key) or key in seen:
            continue
        seen.add(key)
        out.append(key)
    return out


def score_covariance_mc(
    model: CovarianceModel,
    theta,
    mod: Modulation,
    M: int = 1000,
    seed: int = 0,
    free=None,
    near_diagonal: bool | None = None,
    weights=None,
) -> ScoreCovariance:
    """Covariance of the debiased score with Monte-Carlo off-diagonal terms.

    Pairs ``(w, w)`` and ``(w, -w)`` are summed exactly; for a real field
    the periodogram is even, so the second kind duplicates the first. For a
    non-flat modulation (taper) pairs within one Fourier bin per axis of
    either are summed exactly too. The remaining ordered pairs are sampled
    uniformly (``M`` of them) and rescaled by their number; when ``M``
    reaches that number they are all summed instead.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    dims = mod.grid.dims
    n = int(np.prod(dims))
    cg = mask_autocorrelation(mod)
    Ibar = expected_periodogram(model, theta, mod, cg)
    dI = expected_periodogram_gradient(model, theta, mod, free, cg)
    p = dI.shape[0]
    a = dI / Ibar**2
    if weights is not None:
        a = a * weights
    af = a.reshape(p, -1)
    pc = PeriodogramCovariance(model, theta, mod)

    if near_diagonal is None:
        near_diagonal = not mod.is_flat
    zero = (0,) * len(dims)
    band_keys = [zero] + (_band_offsets(dims) if near_diagonal else [])
    bands = {zero: Ibar**2 + pc.pseudo_diagonal()}
    for m in band_keys[1:]:
        bands[m] = pc.offset_band(m)
    axes = tuple(range(1, len(dims) + 1))
    J = np.indices(dims)
    dvec = np.array(dims).reshape((-1,) + (1,) * len(dims))

    # pairs (j, j + m): the diagonal and, for tapers, its neighbours
    V = np.zeros((p, p))
    for m in band_keys:
        shifted = np.roll(a, tuple(-mi for mi in m), axis=axes).reshape(p, -1)
        V += (af * bands[m].reshape(1, -1)) @ shifted.T
    n_exact = n * len(band_keys)

    # pairs (j, m - j): I(m - j) = I(j - m) for a real field, so these are
    # copies of the band above and are summed exactly as well
    for m in band_keys:
        partner = (np.array(m).reshape(dvec.shape) - J) % dvec
        keep = np.ones(dims, dtype=bool)
        for m2 in band_keys:
            hit = (2 * J + np.array(m2).reshape(dvec.shape) - np.array(m).reshape(dvec.shape)) % dvec == 0
            keep &= ~np.all(hit, axis=0)
        neg = tuple(-mi % ni for mi, ni in zip(m, dims))
        w = np.where(keep, bands[neg], 0.0)
        V += (af * w.reshape(1, -1)) @ a[(slice(None),) + tuple(partner)].reshape(p, -1).T
        n_exact += int(keep.sum())

    n_rest = n * n - n_exact
    key_set = set(band_keys)

    def excluded(j1, j2):
        diff = tuple((b - a_) % s for a_, b, s in zip(j1, j2, dims))
        tot = tuple((b + a_) % s for a_, b, s in zip(j1, j2, dims))
        return diff in key_set or tot in key_set

    mc_se = np.zeros((p, p))
    exhaustive = M >= n_rest
    if n_rest > 0:
        if exhaustive:
            pairs = [
                (j1, j2)
                for j1 in np.ndindex(*dims)
                for j2 in np.ndindex(*dims)
                if not excluded(j1, j2)
            ]
        else:
            rng = rng_stream(seed, 0)
            pairs = []
            while len(pairs) < M:
                f1 = np.unravel_index(rng.integers(0, n, size=M), dims)
                f2 = np.unravel_index(rng.integers(0, n, size=M), dims)
                for i in range(M):
                    j1 = tuple(int(f[i]) for f in f1)
                    j2 = tuple(int(f[i]) for f in f2)
                    if not excluded(j1, j2):
                        pairs.append((j1, j2))
                        if len(pairs) == M:
                            break
        terms = np.empty((len(pairs), p, p))
        for i, (j1, j2) in enumerate(pairs):
            terms[i] = np.outer(a[(slice(None),) + j1], a[(slice(None),) + j2]) * pc.cov(j1, j2)
        if exhaustive:
            V += terms.sum(axis=0)
        else:
            V += n_rest / len(pairs) * terms.sum(axis=0)
            if len(pairs) > 1:
                mc_se = n_rest * terms.std(axis=0, ddof=1) / np.sqrt(len(pairs)) / n**2
        n_sampled = len(pairs)
    else:
        n_sampled = 0
    V = V / n**2
    V = 0.5 * (V + V.T)
    return ScoreCovariance(V, mc_se, n_sampled, n_rest, exhaustive)


def sandwich_variance(H, V, cond_max: float = 1e12) -> np.ndarray:
    """``H^-1 V H^-1``, symmetrised."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if not np.all(np.isfinite(H)) or np.linalg.cond(H) > cond_max:
        raise SingularHessianError(
            "expected Hessian is (near) singular; run the HSCC diagnostic to check identifiability"
        )
    Hi = np.linalg.inv(H)
    S = Hi @ V @ Hi
    return 0.5 * (S + S.T)


def confidence_intervals(params: ParameterVector, cov: np.ndarray, level: float = 0.95) -> dict:
    z = stats.norm.ppf(0.5 + level / 2)
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    est = params.free_values
    return {
        name: [float(v - z * s), float(v + z * s)] for name, v, s in zip(params.free_names, est, se)
    }


def attach_standard_errors(
    result: FitResult, spec: ObjectiveSpec, M: int = 1000, seed: int = 0, level: float = 0.95
) -> FitResult:
    """Fill ``sandwich_cov`` and ``ci`` of a debiased fit, evaluated at the estimate."""
    if not spec.debiased:
        raise ValueError("sandwich standard errors are implemented for the debiased objectives only")
    mod = spec.effective_modulation
    theta = result.theta_hat.values
    free = result.theta_hat.free
    weights = None
    if spec.exclude_zero_frequency:
        weights = np.ones(mod.grid.dims)
        weights[(0,) * mod.grid.ndim] = 0.0
    H = expected_hessian(spec.model, theta, mod, free, weights=weights)
    sc = score_covariance_mc(spec.model, theta, mod, M, seed, free, weights=weights)
    result.sandwich_cov = sandwich_variance(H, sc.matrix)
    result.ci = confidence_intervals(result.theta_hat, result.sandwich_cov, level)
    result.ci_level = level
    return result
