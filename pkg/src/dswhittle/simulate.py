"""Exact Gaussian field simulation by circulant embedding, and mask generators."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft

from .grid import GridSpec, Modulation
from .models import CovarianceModel

log = logging.getLogger(__name__)


class EmbeddingError(RuntimeError):
    pass


def rng_stream(seed, replicate: int = 0) -> np.random.Generator:
    """Philox stream keyed by ``(seed, replicate)``; independent of call order.

    ``seed`` may be an int or a sequence of ints (e.g. ``(seed, grid_side)``).
    """
    key = [int(s) for s in np.atleast_1d(seed)] + [int(replicate)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


@dataclass
class EmbeddingPlan:
    dims: tuple[int, ...]
    embed_dims: tuple[int, ...]
    eigenvalues: np.ndarray
    clamp_report: dict = field(default_factory=dict)

    @property
    def sqrt_eig(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues / np.prod(self.embed_dims))


def _torus_lags(m: tuple[int, ...]):
    d = len(m)
    out = []
    for i, mi in enumerate(m):
        k = np.arange(mi)
        u = np.where(k <= mi // 2, k, k - mi).astype(float)
        shape = [1] * d
        shape[i] = mi
        out.append(u.reshape(shape))
    return tuple(out)


def plan_embedding(
    model: CovarianceModel, theta, grid: GridSpec, allow_approx: bool = False, max_doublings: int = 2
) -> EmbeddingPlan:
    """Circulant embedding of the covariance on a torus of size ``>= 2n``.

    The torus is doubled up to ``max_doublings`` times while it has a
    negative eigenvalue below ``-1e-6`` times the largest one.
    """
    m = tuple(sp_fft.next_fast_len(2 * n) for n in grid.dims)
    for attempt in range(max_doublings + 1):
        c = np.broadcast_to(model.cov(_torus_lags(m), theta), m)
        lam = sp_fft.fftn(c).real
        lam_max = lam.max()
        neg = lam < 0
        if not neg.any() or lam.min() >= -1e-6 * lam_max:
            break
        if attempt < max_doublings:
            m = tuple(sp_fft.next_fast_len(2 * mi) for mi in m)
    report = {}
    if neg.any():
        report = {"count": int(neg.sum()), "min": float(lam.min()), "relative": float(-lam.min() / lam_max)}
        if lam.min() < -1e-6 * lam_max and not allow_approx:
            raise EmbeddingError(
                f"circulant embedding not positive definite (min eigenvalue {lam.min():.3e}); use allow_approx"
            )
        if lam.min() < -1e-6 * lam_max:
            log.warning("clamping %d negative embedding eigenvalues (min %.3e)", report["count"], lam.min())
        lam = np.where(neg, 0.0, lam)
    return EmbeddingPlan(tuple(grid.dims), m, lam, report)


def _complex_draw(plan: EmbeddingPlan, rng: np.random.Generator) -> np.ndarray:
    m = plan.embed_dims
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    y = sp_fft.fftn(plan.sqrt_eig * z)
    return y[tuple(slice(0, n) for n in plan.dims)]


def simulate_field(
    model: CovarianceModel,
    theta,
    grid: GridSpec,
    seed: int,
    replicate: int = 0,
    allow_approx: bool = False,
    plan: EmbeddingPlan | None = None,
) -> np.ndarray:
    """Mean-zero Gaussian field with covariance ``model(theta)`` on ``grid``.

    Each complex draw gives two independent real fields; replicate ``r`` is
    the real (even ``r``) or imaginary (odd ``r``) part of draw ``r // 2``.
    """
    if plan is None:
        plan = plan_embedding(model, theta, grid, allow_approx)
    y = _complex_draw(plan, rng_stream(seed, replicate // 2))
    return np.ascontiguousarray(y.real if replicate % 2 == 0 else y.imag)


def iter_fields(model, theta, grid: GridSpec, seed: int, count: int, start: int = 0, allow_approx: bool = False):
    """Yield replicates ``start .. start+count-1``, equal to :func:`simulate_field` output."""
    plan = plan_embedding(model, theta, grid, allow_approx)
    r = start
    stop = start + count
    while r < stop:
        y = _complex_draw(plan, rng_stream(seed, r // 2))
        if r % 2 == 0:
            yield np.ascontiguousarray(y.real)
            r += 1
            if r >= stop:
                break
        yield np.ascontiguousarray(y.imag)
        r += 1


def circle_mask(grid: GridSpec, diameter: float) -> Modulation:
    """Ones inside the disc (ball) of the given diameter centred on the grid."""
    center = [(n - 1) / 2 for n in grid.dims]
    idx = np.indices(grid.dims, dtype=float)
    r2 = sum((idx[i] - center[i]) ** 2 for i in range(grid.ndim))
    return Modulation(grid, (r2 <= (diameter / 2) ** 2).astype(float))


def bernoulli_mask(grid: GridSpec, p: float, seed: int) -> Modulation:
    """Independent sites observed with probability ``p``."""
    if not 0 < p <= 1:
        raise ValueError("observation probability must lie in (0, 1]")
    u = rng_stream(seed, 0).random(grid.dims)
    return Modulation(grid, (u < p).astype(float))


def mask_from_file(path, grid: GridSpec | None = None) -> Modulation:
    """Read a mask in the grid file format; NaN becomes 0, values are clipped to [0, 1]."""
    from .io import read_grid

    values, g, _ = read_grid(path)
    if grid is not None and g.dims != grid.dims:
        raise ValueError(f"mask dims {g.dims} do not match grid {grid.dims}")
    values = np.clip(np.nan_to_num(values, nan=0.0), 0.0, 1.0)
    return Modulation(g, values)
