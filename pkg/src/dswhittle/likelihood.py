"""Whittle-type objectives: debiased, standard, tapered and the Fuentes baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import LagField, Modulation, fourier_grid, hanning_modulation, mask_autocorrelation
from .models import CovarianceModel, NoSpectralDensityError
from .spectral import (
    NonPositiveSpectrumError,
    expected_periodogram,
    expected_periodogram_gradient,
    periodogram,
)

VARIANTS = ("debiased", "debiased_tapered", "standard", "standard_tapered", "fuentes")


def _frequency_weights(dims, exclude_zero: bool) -> np.ndarray | None:
    if not exclude_zero:
        return None
    w = np.ones(dims)
    w[(0,) * len(dims)] = 0.0
    return w


def _check_positive(Ibar, dims):
    if not np.all(Ibar > 0):
        k = np.unravel_index(np.argmin(Ibar), Ibar.shape)
        w = tuple(round(2 * np.pi * ki / n, 6) for ki, n in zip(k, dims))
        raise NonPositiveSpectrumError(
            f"model spectrum is not positive at frequency {w} (value {Ibar[k]:.3e}); check the model configuration"
        )


def whittle_sum(I, S, weights=None) -> float:
    """``|n|^-1 sum (log S + I / S)`` over the Fourier grid."""
    terms = np.log(S) + I / S
    if weights is not None:
        terms = terms * weights
    return float(np.sum(terms) / I.size)


def debiased_nll(I, model: CovarianceModel, theta, mod: Modulation, cg: LagField | None = None, weights=None) -> float:
    Ibar = expected_periodogram(model, theta, mod, cg)
    _check_positive(Ibar, mod.grid.dims)
    return whittle_sum(np.asarray(I), Ibar, weights)


def standard_nll(I, model: CovarianceModel, theta, alias_truncation: int | None = 0, weights=None) -> float:
    """Whittle objective with the (possibly aliased) spectral density in place of the expected periodogram."""
    I = np.asarray(I)
    f = model.aliased_spectral_density(_centered_grid(I.shape), theta, alias_truncation)
    f = np.broadcast_to(f, I.shape)
    _check_positive(f, I.shape)
    return whittle_sum(I, f, weights)


def _centered_grid(dims):
    return fourier_grid(tuple(dims), True)


def score(I, model: CovarianceModel, theta, mod: Modulation, free=None, cg: LagField | None = None, weights=None) -> np.ndarray:
    """Gradient of :func:`debiased_nll` w.r.t. the free parameters."""
    if cg is None:
        cg = mask_autocorrelation(mod)
    Ibar = expected_periodogram(model, theta, mod, cg)
    _check_positive(Ibar, mod.grid.dims)
    dI = expected_periodogram_gradient(model, theta, mod, free, cg)
    r = (Ibar - np.asarray(I)) / Ibar**2
    if weights is not None:
        r = r * weights
    return np.tensordot(dI, r, axes=r.ndim) / r.size


@dataclass
class ObjectiveSpec:
    """Which objective to minimise and on what sampling pattern.

    Tapered variants multiply ``mod`` by a Hann window; ``fuentes`` is the
    standard objective on the missing-data periodogram.
    """

    variant: str
    model: CovarianceModel
    mod: Modulation
    exclude_zero_frequency: bool = False
    alias_truncation: int | None = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")

    @property
    def tapered(self) -> bool:
        return self.variant.endswith("_tapered")

    @property
    def debiased(self) -> bool:
        return self.variant.startswith("debiased")

    @property
    def effective_modulation(self) -> Modulation:
        return hanning_modulation(self.mod) if self.tapered else self.mod


class Objective:
    """Objective bound to one data set; the periodogram is computed once."""

    def __init__(self, data, spec: ObjectiveSpec):
        self.spec = spec
        self.model = spec.model
        self.mod = spec.effective_modulation
        self.mod.require_nonempty()
        if self.mod.grid.ndim != self.model.ndim:
            raise ValueError(f"model is {self.model.ndim}-D but grid is {self.mod.grid.ndim}-D")
        self.I = periodogram(data, self.mod)
        self.weights = _frequency_weights(self.mod.grid.dims, spec.exclude_zero_frequency)
        self.cg = mask_autocorrelation(self.mod) if spec.debiased else None
        if not spec.debiased and not has_spectral_density(self.model):
            raise NoSpectralDensityError()

    def __call__(self, theta) -> float:
        if self.spec.debiased:
            return debiased_nll(self.I, self.model, theta, self.mod, self.cg, self.weights)
        return standard_nll(self.I, self.model, theta, self.spec.alias_truncation, self.weights)

    def expected(self, theta) -> np.ndarray:
        if self.spec.debiased:
            return expected_periodogram(self.model, theta, self.mod, self.cg)
        return np.broadcast_to(
            self.model.aliased_spectral_density(_centered_grid(self.I.shape), theta, self.spec.alias_truncation),
            self.I.shape,
        )

    def score(self, theta, free=None) -> np.ndarray:
        if self.spec.debiased:
            return score(self.I, self.model, theta, self.mod, free, self.cg, self.weights)
        return _fd_objective_gradient(self, np.asarray(theta, dtype=float), free)


def has_spectral_density(model: CovarianceModel) -> bool:
    cls = type(model)
    return (
        cls.spectral_density is not CovarianceModel.spectral_density
        or cls.aliased_spectral_density is not CovarianceModel.aliased_spectral_density
    )


def _fd_objective_gradient(f, theta, free=None):
    idx = np.arange(len(theta)) if free is None else np.flatnonzero(free)
    out = np.empty(len(idx))
    for k, j in enumerate(idx):
        h = 1e-6 * (1 + abs(theta[j]))
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        out[k] = (f(up) - f(dn)) / (2 * h)
    return out
