"""Covariance families, their parameter gradients and spectral densities.

All models take lags as a tuple of ``d`` broadcastable arrays (one per axis)
and a full parameter vector ``theta`` ordered as ``model.param_names``.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import special

TWO_PI = 2 * np.pi


class BesselDomainError(ValueError):
    pass


class BesselOverflowError(OverflowError):
    pass


class BesselUnderflowError(ArithmeticError):
    pass


class BoundaryGradientWarning(UserWarning):
    """A finite-difference gradient was taken one-sided at a parameter bound."""


class NoSpectralDensityError(NotImplementedError):
    def __init__(self, msg="baseline requires closed-form density"):
        super().__init__(msg)


def bessel_k(nu, x):
    """Modified Bessel function of the second kind ``K_nu(x)``.

    Raises :class:`BesselDomainError` for ``nu <= 0`` or ``x <= 0`` and
    distinct overflow/underflow errors when the result leaves the double range.
    """
    nu = np.asarray(nu, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(~(nu > 0)) or np.any(~(x > 0)):
        raise BesselDomainError("bessel_k requires nu > 0 and x > 0")
    with np.errstate(over="ignore", under="ignore"):
        out = special.kv(nu, x)
    if np.any(np.isinf(out)):
        raise BesselOverflowError("K_nu(x) overflows double precision")
    if np.any(out < np.finfo(float).tiny):
        raise BesselUnderflowError("K_nu(x) underflows double precision")
    return out[()] if out.ndim == 0 else out


@dataclass
class ParameterVector:
    """Named parameter values with bounds and a free/fixed flag."""

    names: list[str]
    values: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None
    free: np.ndarray = None

    def __post_init__(self):
        p = len(self.names)
        self.names = list(self.names)
        self.values = np.asarray(self.values, dtype=float).copy()
        self.lower = np.full(p, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).copy()
        self.upper = np.full(p, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).copy()
        self.free = np.ones(p, bool) if self.free is None else np.asarray(self.free, dtype=bool).copy()
        for a in (self.values, self.lower, self.upper, self.free):
            if a.shape != (p,):
                raise ValueError("parameter arrays must have one entry per name")
        bad = (self.values < self.lower) | (self.values > self.upper)
        if np.any(bad):
            names = [n for n, b in zip(self.names, bad) if b]
            raise ValueError(f"parameters outside bounds: {names}")

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    @property
    def free_names(self) -> list[str]:
        return [n for n, f in zip(self.names, self.free) if f]

    @property
    def free_values(self) -> np.ndarray:
        return self.values[self.free].copy()

    def with_values(self, values) -> "ParameterVector":
        return ParameterVector(self.names, values, self.lower, self.upper, self.free)

    def with_free(self, free_values) -> "ParameterVector":
        v = self.values.copy()
        v[self.free] = free_values
        return self.with_values(v)

    def expand(self, free_values) -> np.ndarray:
        v = self.values.copy()
        v[self.free] = free_values
        return v

    def to_dict(self) -> dict:
        return {
            n: {
                "value": float(v),
                "lower": _json_float(lo),
                "upper": _json_float(hi),
                "fixed": not bool(f),
            }
            for n, v, lo, hi, f in zip(self.names, self.values, self.lower, self.upper, self.free)
        }


def _json_float(x):
    x = float(x)
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


class CovarianceModel:
    """Base class for stationary covariance families.

    Subclasses set ``name``, ``param_names``, default bounds and implement
    :meth:`cov`. Analytic partial derivatives go in ``_analytic_grad``; the
    remaining ones fall back to central finite differences.
    """

    name = "base"
    param_names: tuple[str, ...] = ()
    default_lower: tuple[float, ...] = ()
    default_upper: tuple[float, ...] = ()

    def __init__(self, ndim: int = 2):
        if ndim < 1:
            raise ValueError("ndim must be positive")
        self.ndim = int(ndim)

    def __repr__(self):
        return f"{type(self).__name__}(ndim={self.ndim})"

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"{self.name} expects {self.n_params} parameters")
        lo = np.asarray(self.default_lower)
        hi = np.asarray(self.default_upper)
        if np.any(theta <= lo) or np.any(theta > hi) or not np.all(np.isfinite(theta)):
            raise ValueError(f"invalid parameters for {self.name}: {theta}")
        return theta

    def _check_lags(self, lags):
        if len(lags) != self.ndim:
            raise ValueError(f"{self.name} model is {self.ndim}-dimensional, got {len(lags)} lag axes")
        return [np.asarray(u, dtype=float) for u in lags]

    def cov(self, lags, theta) -> np.ndarray:
        raise NotImplementedError

    def _analytic_grad(self, lags, theta) -> dict[int, np.ndarray]:
        return {}

    def cov_grad(self, lags, theta, lower=None, upper=None) -> np.ndarray:
        """Gradient of ``cov`` w.r.t. every parameter, shape ``(p, *lags_shape)``."""
        theta = self.check(theta)
        lags = self._check_lags(lags)
        analytic = self._analytic_grad(lags, theta)
        shape = np.broadcast_shapes(*(u.shape for u in lags))
        out = np.empty((self.n_params,) + shape)
        lower = np.asarray(self.default_lower if lower is None else lower, dtype=float)
        upper = np.asarray(self.default_upper if upper is None else upper, dtype=float)
        for j in range(self.n_params):
            if j in analytic:
                out[j] = analytic[j]
                continue
            out[j] = _fd_partial(lambda t: self.cov(lags, t), theta, j, lower[j], upper[j])
        return out

    def spectral_density(self, omega, theta) -> np.ndarray:
        raise NoSpectralDensityError()

    def aliased_spectral_density(self, omega, theta, K: int | None = None) -> np.ndarray:
        return _aliased_sum(self, omega, theta, K)


def _fd_partial(f, theta, j, lo, hi):
    h = 1e-6 * (1 + abs(theta[j]))
    up = theta.copy()
    dn = theta.copy()
    up[j] += h
    dn[j] -= h
    if dn[j] <= lo:
        warnings.warn("one-sided difference at lower bound", BoundaryGradientWarning, stacklevel=3)
        up2 = theta.copy()
        up2[j] += 2 * h
        return (-3 * f(theta) + 4 * f(up) - f(up2)) / (2 * h)
    if up[j] > hi:
        warnings.warn("one-sided difference at upper bound", BoundaryGradientWarning, stacklevel=3)
        dn2 = theta.copy()
        dn2[j] -= 2 * h
        return (3 * f(theta) - 4 * f(dn) + f(dn2)) / (2 * h)
    return (f(up) - f(dn)) / (2 * h)


def cov_gradient(model: CovarianceModel, lags, theta, free=None, lower=None, upper=None) -> np.ndarray:
    """Parameter gradient of the covariance, restricted to ``free`` parameters."""
    g = model.cov_grad(lags, theta, lower, upper)
    if free is not None:
        g = g[np.asarray(free, dtype=bool)]
    return g


def _norm(lags):
    return np.sqrt(sum(u * u for u in lags))


def _matern_corr(r, nu, rho):
    r = np.asarray(r, dtype=float)
    x = np.sqrt(2 * nu) * r / rho
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    with np.errstate(under="ignore"):
        log_c = (1 - nu) * np.log(2) - special.gammaln(nu) + nu * np.log(xp) + np.log(special.kve(nu, xp)) - xp
        out[pos] = np.exp(log_c)
    return out


class Matern(CovarianceModel):
    """Isotropic Matérn with parameters ``(sigma, nu, rho)``."""

    name = "matern"
    param_names = ("sigma", "nu", "rho")
    default_lower = (0.0, 0.0, 0.0)
    default_upper = (np.inf, 50.0, np.inf)

    def cov(self, lags, theta):
        sigma, nu, rho = self.check(theta)
        r = _norm(self._check_lags(lags))
        return sigma**2 * _matern_corr(r, nu, rho)

    def cov_radial(self, r, theta):
        sigma, nu, rho = self.check(theta)
        return sigma**2 * _matern_corr(r, nu, rho)

    def _analytic_grad(self, lags, theta):
        sigma, nu, rho = theta
        r = _norm(lags)
        c = sigma**2 * _matern_corr(r, nu, rho)
        # d/drho of x^nu K_nu(x) with x = sqrt(2 nu) r / rho
        x = np.sqrt(2 * nu) * r / rho
        drho = np.zeros_like(x)
        pos = x > 0
        xp = x[pos]
        with np.errstate(under="ignore"):
            log_d = (
                (1 - nu) * np.log(2) - special.gammaln(nu) + (nu + 1) * np.log(xp)
                + np.log(special.kve(abs(nu - 1), xp)) - xp
            )
            drho[pos] = sigma**2 * np.exp(log_d) / rho
        return {0: 2 * c / sigma, 2: drho}

    def spectral_density(self, omega, theta):
        sigma, nu, rho = self.check(theta)
        return matern_spectral_density(omega, (sigma, nu, rho), self.ndim)


class Exponential(CovarianceModel):
    """Isotropic exponential ``sigma^2 exp(-|u| / rho)``."""

    name = "exponential"
    param_names = ("sigma", "rho")
    default_lower = (0.0, 0.0)
    default_upper = (np.inf, np.inf)

    def cov(self, lags, theta):
        sigma, rho = self.check(theta)
        r = _norm(self._check_lags(lags))
        return sigma**2 * np.exp(-r / rho)

    def cov_radial(self, r, theta):
        sigma, rho = self.check(theta)
        return sigma**2 * np.exp(-np.asarray(r) / rho)

    def _analytic_grad(self, lags, theta):
        sigma, rho = theta
        r = _norm(lags)
        e = np.exp(-r / rho)
        return {0: 2 * sigma * e, 1: sigma**2 * r / rho**2 * e}

    def spectral_density(self, omega, theta):
        sigma, rho = self.check(theta)
        return matern_spectral_density(omega, (sigma, 0.5, rho), self.ndim)


class SeparableExponential(CovarianceModel):
    """Two-dimensional ``sigma^2 exp(-|u_1|/rho1) exp(-|u_2|/rho2)``."""

    name = "separable_exponential"
    param_names = ("sigma", "rho1", "rho2")
    default_lower = (0.0, 0.0, 0.0)
    default_upper = (np.inf, np.inf, np.inf)

    def __init__(self, ndim: int = 2):
        if ndim != 2:
            raise ValueError("separable exponential model is defined for d = 2 only")
        super().__init__(2)

    def cov(self, lags, theta):
        sigma, r1, r2 = self.check(theta)
        u1, u2 = self._check_lags(lags)
        return sigma**2 * np.exp(-np.abs(u1) / r1) * np.exp(-np.abs(u2) / r2)

    def _analytic_grad(self, lags, theta):
        sigma, r1, r2 = theta
        a1, a2 = np.abs(lags[0]), np.abs(lags[1])
        c = sigma**2 * np.exp(-a1 / r1) * np.exp(-a2 / r2)
        c = np.broadcast_to(c, np.broadcast_shapes(a1.shape, a2.shape))
        return {0: 2 * c / sigma, 1: c * a1 / r1**2, 2: c * a2 / r2**2}

    def spectral_density(self, omega, theta):
        sigma, r1, r2 = self.check(theta)
        w1, w2 = (np.asarray(w, dtype=float) for w in omega)
        return sigma**2 * (1 / (np.pi * r1)) / (r1**-2 + w1**2) * (1 / (np.pi * r2)) / (r2**-2 + w2**2)


class WhiteNoise(CovarianceModel):
    """Uncorrelated field, ``sigma^2`` at lag zero and zero elsewhere."""

    name = "white_noise"
    param_names = ("sigma",)
    default_lower = (0.0,)
    default_upper = (np.inf,)

    def cov(self, lags, theta):
        (sigma,) = self.check(theta)
        lags = self._check_lags(lags)
        zero = np.ones(np.broadcast_shapes(*(u.shape for u in lags)), bool)
        for u in lags:
            zero = zero & (u == 0)
        return sigma**2 * zero.astype(float)

    def _analytic_grad(self, lags, theta):
        (sigma,) = theta
        return {0: 2 * self.cov(lags, theta) / sigma}

    def aliased_spectral_density(self, omega, theta, K=None):
        (sigma,) = self.check(theta)
        shape = np.broadcast_shapes(*(np.shape(w) for w in omega))
        return np.full(shape, sigma**2 / TWO_PI**self.ndim)


MODELS = {m.name: m for m in (Matern, Exponential, SeparableExponential, WhiteNoise)}


def get_model(name: str, ndim: int = 2) -> CovarianceModel:
    try:
        return MODELS[name](ndim)
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


def parameters_from_mapping(model: CovarianceModel, spec: Mapping, fill: Mapping | None = None) -> ParameterVector:
    """Build a :class:`ParameterVector` from ``{name: {value, lower, upper, fixed}}``.

    Plain numbers are accepted as fixed-free values. Missing values come from
    ``fill`` (typically an initial guess).
    """
    fill = fill or {}
    unknown = set(spec) - set(model.param_names)
    if unknown:
        raise ValueError(f"unknown parameters for {model.name}: {sorted(unknown)}")
    values, lower, upper, free = [], [], [], []
    for j, name in enumerate(model.param_names):
        entry = spec.get(name, {})
        if not isinstance(entry, Mapping):
            entry = {"value": entry}
        value = entry.get("value", fill.get(name))
        if value is None:
            raise ValueError(f"no value given for parameter {name!r}")
        values.append(float(value))
        lower.append(float(entry.get("lower", model.default_lower[j])))
        upper.append(float(entry.get("upper", model.default_upper[j])))
        free.append(not bool(entry.get("fixed", False)))
    return ParameterVector(list(model.param_names), values, lower, upper, free)


def exponential_cov(u, theta):
    """``sigma^2 exp(-|u| / rho)`` for a single lag vector."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(Exponential(len(u)).cov(tuple(u), theta))


def matern_cov(u, theta):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(Matern(len(u)).cov(tuple(u), theta))


def separable_exponential_cov(u, theta):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if len(u) != 2:
        raise ValueError("separable exponential model is defined for d = 2 only")
    return float(SeparableExponential().cov(tuple(u), theta))


def matern_spectral_density(omega, theta, ndim: int | None = None) -> np.ndarray:
    """Matérn spectral density with ``c(u) = int f(w) exp(i w.u) dw``.

    ``omega`` is a tuple of per-axis frequency arrays; ``ndim`` defaults to
    its length.
    """
    sigma, nu, rho = (float(t) for t in theta)
    d = len(omega) if ndim is None else ndim
    w2 = sum(np.asarray(w, dtype=float) ** 2 for w in omega)
    kappa2 = 2 * nu / rho**2
    log_const = (
        2 * np.log(sigma) + special.gammaln(nu + d / 2) - special.gammaln(nu)
        - (d / 2) * np.log(np.pi) + nu * np.log(kappa2)
    )
    return np.exp(log_const - (nu + d / 2) * np.log(kappa2 + w2))


def _reduce_angle(w):
    # map to (-pi, pi]
    w = np.asarray(w, dtype=float)
    r = np.mod(w + np.pi, TWO_PI) - np.pi
    return np.where(r == -np.pi, np.pi, r)


def _aliased_sum(model, omega, theta, K):
    omega = tuple(_reduce_angle(w) for w in omega)
    d = len(omega)
    if K is not None and K < 0:
        raise ValueError("alias truncation must be nonnegative")
    total = model.spectral_density(omega, theta).astype(float)
    kmax = 20 if K is None else int(K)
    for k in range(1, kmax + 1):
        shell = np.zeros_like(total)
        for u in itertools.product(range(-k, k + 1), repeat=d):
            if max(abs(ui) for ui in u) != k:
                continue
            shell = shell + model.spectral_density(tuple(w + TWO_PI * ui for w, ui in zip(omega, u)), theta)
        total = total + shell
        if K is None and np.max(shell / total) < 1e-8:
            break
    return total


def aliased_spectral_density(model: CovarianceModel, omega, theta, K: int | None = None) -> np.ndarray:
    """Spectral density wrapped onto the torus by ``2 pi`` shifts.

    ``K`` truncates the shift lattice to ``max|u_i| <= K``. With ``K=None``
    shells are added until the last contributes less than ``1e-8`` relative,
    up to ``K = 20``.
    """
    return model.aliased_spectral_density(tuple(omega), theta, K)
