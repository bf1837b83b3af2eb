"""Grid geometry, modulations (masks and tapers) and the mask autocorrelation.

Arrays living on the bounding grid are plain ``numpy`` arrays of shape
``grid.dims``. Their flattened/on-disk layout is colexicographic: the first
axis varies fastest (``order="F"``), which is the ordering used to build the
covariance matrix of the vectorised field in the brute-force oracles.

Lag-indexed quantities are stored on the ``2n`` embedding: index ``k`` along
axis ``i`` holds lag ``k`` for ``k < n_i`` and lag ``k - 2 n_i`` otherwise, the
slot ``k = n_i`` (lag ``-n_i``) being always zero for anything supported on
the lag box ``|u_i| <= n_i - 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

CLAMP_EPS = 1e-14


class EmptyObservationError(ValueError):
    """Raised when a modulation carries no observed site."""

    def __init__(self, msg: str = "empty observation set"):
        super().__init__(msg)


@dataclass(frozen=True)
class GridSpec:
    """Dimensions and spacing of the rectangular bounding grid."""

    dims: tuple[int, ...]
    spacing: tuple[float, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(n) for n in np.atleast_1d(self.dims))
        if len(dims) < 1:
            raise ValueError("grid needs at least one dimension")
        if any(n < 1 for n in dims):
            raise ValueError(f"grid dimensions must be positive, got {dims}")
        spacing = self.spacing
        if spacing is None:
            spacing = (1.0,) * len(dims)
        spacing = tuple(float(s) for s in np.atleast_1d(spacing))
        if len(spacing) != len(dims):
            raise ValueError("spacing must have one entry per dimension")
        if any(not s > 0 for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        size = int(np.prod(dims, dtype=np.int64))
        if size >= np.iinfo(np.intp).max // 16:
            raise ValueError("grid too large for this platform")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def embed_shape(self) -> tuple[int, ...]:
        return tuple(2 * n for n in self.dims)

    def lags(self) -> tuple[np.ndarray, ...]:
        """Signed lags of the ``2n`` embedding, broadcastable per axis."""
        return embedding_lags(self.dims)

    def frequencies(self, centered: bool = False) -> tuple[np.ndarray, ...]:
        """Fourier grid ``2 pi k / n_i`` per axis (in ``[0, 2pi)``).

        With ``centered`` the same frequencies are mapped to ``(-pi, pi]``;
        array order is unchanged.
        """
        return fourier_grid(self.dims, centered)


@lru_cache(maxsize=16)
def embedding_lags(dims: tuple[int, ...]) -> tuple[np.ndarray, ...]:
    out = []
    d = len(dims)
    for i, n in enumerate(dims):
        k = np.arange(2 * n)
        u = np.where(k < n, k, k - 2 * n).astype(float)
        shape = [1] * d
        shape[i] = 2 * n
        u = u.reshape(shape)
        u.setflags(write=False)
        out.append(u)
    return tuple(out)


@lru_cache(maxsize=16)
def embedding_lag_norm(dims: tuple[int, ...]) -> np.ndarray:
    lags = embedding_lags(dims)
    r = np.sqrt(sum(u**2 for u in lags))
    r.setflags(write=False)
    return r


@lru_cache(maxsize=16)
def fourier_grid(dims: tuple[int, ...], centered: bool = False) -> tuple[np.ndarray, ...]:
    out = []
    d = len(dims)
    for i, n in enumerate(dims):
        w = 2 * np.pi * np.arange(n) / n
        if centered:
            w = np.where(w > np.pi, w - 2 * np.pi, w)
        shape = [1] * d
        shape[i] = n
        w = w.reshape(shape)
        w.setflags(write=False)
        out.append(w)
    return tuple(out)


def fold_embedding(a: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Fold a ``2n`` lag array onto ``n`` by adding the copies shifted by ``q n``."""
    shape = []
    for n in dims:
        shape += [2, n]
    b = a.reshape(shape)
    return b.sum(axis=tuple(range(0, 2 * len(dims), 2)))


@dataclass(frozen=True, eq=False)
class Modulation:
    """Per-site weights ``g_s`` in ``[0, 1]`` on a grid.

    Zero marks a missing site, one a fully weighted observation, and values
    in between a tapered observation.
    """

    grid: GridSpec
    values: np.ndarray
    sum_g: float = field(init=False)
    sum_g2: float = field(init=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.dims:
            if v.size == self.grid.size:
                v = v.reshape(self.grid.dims, order="F")
            else:
                raise ValueError(f"modulation shape {v.shape} does not match grid {self.grid.dims}")
        if not np.all(np.isfinite(v)):
            raise ValueError("modulation values must be finite")
        if v.min(initial=0.0) < 0 or v.max(initial=0.0) > 1:
            raise ValueError("modulation values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "sum_g", float(v.sum()))
        object.__setattr__(self, "sum_g2", float(np.sum(v * v)))

    @classmethod
    def full(cls, grid: GridSpec) -> "Modulation":
        return cls(grid, np.ones(grid.dims))

    @classmethod
    def from_array(cls, values, spacing=None) -> "Modulation":
        values = np.asarray(values, dtype=float)
        return cls(GridSpec(values.shape, spacing), values)

    @property
    def is_binary(self) -> bool:
        v = self.values
        return bool(np.all((v == 0) | (v == 1)))

    @property
    def is_flat(self) -> bool:
        """True when every observed site carries the same weight."""
        v = self.values[self.values > 0]
        return v.size == 0 or bool(np.all(v == v[0]))

    def require_nonempty(self):
        if not self.sum_g2 > 0:
            raise EmptyObservationError()

    def __mul__(self, other) -> "Modulation":
        if isinstance(other, Modulation):
            if other.grid.dims != self.grid.dims:
                raise ValueError("modulations live on different grids")
            other = other.values
        return Modulation(self.grid, self.values * np.asarray(other))


@dataclass(frozen=True, eq=False)
class LagField:
    """A real function of the lag, stored on the ``2n`` embedding."""

    grid: GridSpec
    values: np.ndarray

    def at(self, u) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=int))
        if len(u) != self.grid.ndim:
            raise ValueError("lag has wrong dimension")
        if any(abs(ui) > n - 1 for ui, n in zip(u, self.grid.dims)):
            return 0.0
        idx = tuple(int(ui) % (2 * n) for ui, n in zip(u, self.grid.dims))
        return float(self.values[idx])

    def box(self) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
        """Values over the lag box as a centred array with matching lags."""
        a = np.fft.fftshift(self.values)
        sl = tuple(slice(1, None) for _ in self.grid.dims)
        lags = tuple(np.arange(-(n - 1), n) for n in self.grid.dims)
        return a[sl], lags


def mask_autocorrelation(mod: Modulation) -> LagField:
    """Normalised weighted pair count ``sum_s g_s g_{s+u} / sum_s g_s^2``.

    One zero-padded FFT of ``g``, squared modulus, inverse FFT. Round-off
    below ``1e-14`` is set to exactly zero.
    """
    mod.require_nonempty()
    shape = mod.grid.embed_shape
    axes = tuple(range(len(shape)))
    G = np.fft.rfftn(mod.values, s=shape, axes=axes)
    c = np.fft.irfftn(G.real**2 + G.imag**2, s=shape, axes=axes) / mod.sum_g2
    c[np.abs(c) < CLAMP_EPS] = 0.0
    c.setflags(write=False)
    return LagField(mod.grid, c)


def full_grid_autocorrelation(grid: GridSpec, u) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if len(u) != grid.ndim:
        raise ValueError("lag has wrong dimension")
    out = 1.0
    for ui, n in zip(np.abs(u), grid.dims):
        if ui > n - 1:
            return 0.0
        out *= 1.0 - ui / n
    return out


def hanning_modulation(mod: Modulation) -> Modulation:
    """Multiply a modulation by the separable Hann window."""
    if any(n < 2 for n in mod.grid.dims):
        raise ValueError("Hann taper needs at least two points per axis")
    w = np.ones(mod.grid.dims)
    d = mod.grid.ndim
    for i, n in enumerate(mod.grid.dims):
        h = 0.5 * (1 - np.cos(2 * np.pi * np.arange(n) / (n - 1)))
        shape = [1] * d
        shape[i] = n
        w = w * h.reshape(shape)
    return Modulation(mod.grid, np.clip(mod.values * w, 0.0, 1.0))


def _site_coords(grid: GridSpec) -> np.ndarray:
    idx = np.indices(grid.dims).reshape(grid.ndim, -1, order="F")
    return idx.T.astype(float)


def fejer_kernel(mod: Modulation, omega) -> np.ndarray | float:
    """Modified Fejer kernel at one or several frequencies.

    ``omega`` has shape ``(d,)`` or ``(m, d)``. Direct O(|n|) sum per
    frequency; meant for checks, not for the estimation loop.
    """
    mod.require_nonempty()
    omega = np.asarray(omega, dtype=float)
    single = omega.ndim == 1
    omega = np.atleast_2d(omega)
    s = _site_coords(mod.grid)
    g = mod.values.ravel(order="F")
    keep = g != 0
    phase = omega @ s[keep].T
    D = np.exp(1j * phase) @ g[keep]
    val = np.abs(D) ** 2 / ((2 * np.pi) ** mod.grid.ndim * mod.sum_g2)
    return float(val[0]) if single else val
