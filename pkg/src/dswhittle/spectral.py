"""Periodogram of modulated data and its exact expectation under a model.

Spectral arrays have shape ``grid.dims`` and are indexed by the Fourier grid
``2 pi k / n_i``, ``k = 0..n_i-1``, in ``[0, 2 pi)``.
"""
from __future__ import annotations

import numpy as np

from .grid import (
    LagField,
    Modulation,
    _site_coords,
    embedding_lag_norm,
    embedding_lags,
    fold_embedding,
    mask_autocorrelation,
)
from .models import CovarianceModel

TWO_PI = 2 * np.pi


class NonPositiveSpectrumError(ValueError):
    pass


def periodogram(data, mod: Modulation) -> np.ndarray:
    """Periodogram of ``g * X`` normalised by ``(2 pi)^d sum g^2``."""
    data = np.asarray(data, dtype=float)
    if data.shape != mod.grid.dims:
        raise ValueError(f"data shape {data.shape} does not match grid {mod.grid.dims}")
    mod.require_nonempty()
    J = np.fft.fftn(mod.values * data)
    return (J.real**2 + J.imag**2) / (TWO_PI**mod.grid.ndim * mod.sum_g2)


def lag_covariance(model: CovarianceModel, theta, dims) -> np.ndarray:
    """Model covariance on the ``2n`` lag embedding of a grid."""
    dims = tuple(dims)
    if hasattr(model, "cov_radial"):
        return model.cov_radial(embedding_lag_norm(dims), theta)
    c = model.cov(embedding_lags(dims), theta)
    return np.broadcast_to(c, tuple(2 * n for n in dims))


def lag_covariance_grad(model: CovarianceModel, theta, dims, free=None, lower=None, upper=None) -> np.ndarray:
    g = model.cov_grad(embedding_lags(tuple(dims)), theta, lower, upper)
    g = np.broadcast_to(g, (g.shape[0],) + tuple(2 * n for n in dims))
    if free is not None:
        g = g[np.asarray(free, dtype=bool)]
    return g


def _series_to_spectrum(cbar: np.ndarray, dims) -> np.ndarray:
    folded = fold_embedding(cbar, dims)
    return np.fft.fftn(folded).real / TWO_PI ** len(dims)


def expected_periodogram(model: CovarianceModel, theta, mod: Modulation, cg: LagField | None = None) -> np.ndarray:
    """Exact expectation of :func:`periodogram` under ``model(theta)``.

    The covariance sequence tapered by the mask autocorrelation is folded
    onto the grid (the ``2^d`` shifted copies summed) and sent through one
    FFT of size ``n``.
    """
    if cg is None:
        cg = mask_autocorrelation(mod)
    dims = mod.grid.dims
    cbar = cg.values * lag_covariance(model, theta, dims)
    return _series_to_spectrum(cbar, dims)


def expected_periodogram_gradient(
    model: CovarianceModel, theta, mod: Modulation, free=None, cg: LagField | None = None
) -> np.ndarray:
    """Gradient of :func:`expected_periodogram`, shape ``(p_free, *dims)``."""
    if cg is None:
        cg = mask_autocorrelation(mod)
    dims = mod.grid.dims
    grads = lag_covariance_grad(model, theta, dims, free)
    return np.stack([_series_to_spectrum(cg.values * g, dims) for g in grads])


def dirichlet_kernel(mod: Modulation, lam) -> complex | np.ndarray:
    """``sum_s g_s exp(i lam . s)`` at one (``(d,)``) or several (``(m, d)``) points."""
    lam = np.asarray(lam, dtype=float)
    single = lam.ndim == 1
    lam = np.atleast_2d(lam)
    s = _site_coords(mod.grid)
    g = mod.values.ravel(order="F")
    keep = g != 0
    D = np.exp(1j * (lam @ s[keep].T)) @ g[keep]
    return complex(D[0]) if single else D


def dirichlet_on_embedding(mod: Modulation) -> np.ndarray:
    """Dirichlet kernel on the Fourier grid of the ``2n`` embedding.

    Entry ``k`` is the kernel at ``pi k_i / n_i`` per axis.
    """
    return np.conj(np.fft.fftn(mod.values, s=mod.grid.embed_shape, axes=tuple(range(mod.grid.ndim))))


def truncated_spectrum_on_embedding(model: CovarianceModel, theta, dims) -> np.ndarray:
    """DFT of the covariance restricted to the lag box, on the ``2n`` Fourier grid."""
    c = np.array(lag_covariance(model, theta, dims), dtype=float)
    for i, n in enumerate(dims):
        idx = [slice(None)] * len(dims)
        idx[i] = n
        c[tuple(idx)] = 0.0
    return np.fft.fftn(c).real
