"""Sampling-pattern diagnostics: significant correlation contribution and the rate functional.

These are finite-sample proxies of asymptotic conditions. They annotate fits
and never stop one from running.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import LagField, Modulation, mask_autocorrelation
from .models import CovarianceModel
from .spectral import lag_covariance, lag_covariance_grad


@dataclass
class SccReport:
    info_ratio: float
    rate_rk: float
    hscc_min_eig: float
    hscc_trace: float
    identifiable: bool
    separation: dict = field(default_factory=dict)
    free: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def _cg(mod, cg):
    return mask_autocorrelation(mod) if cg is None else cg


def scc_info_ratio(mod: Modulation, model: CovarianceModel, theta, cg: LagField | None = None) -> float:
    """``sum_u c_g(u) c_X(u)^2 / sum g^2``; the squared convergence rate."""
    cg = _cg(mod, cg)
    c = lag_covariance(model, theta, mod.grid.dims)
    return float(np.sum(cg.values * c**2) / mod.sum_g2)


def scc_separation(mod: Modulation, model: CovarianceModel, theta1, theta2, cg: LagField | None = None) -> float:
    """``sum_u c_g(u)^2 (c_X(u; theta1) - c_X(u; theta2))^2``."""
    cg = _cg(mod, cg)
    dims = mod.grid.dims
    diff = lag_covariance(model, theta1, dims) - lag_covariance(model, theta2, dims)
    return float(np.sum(cg.values**2 * diff**2))


def hscc_matrix(mod: Modulation, model: CovarianceModel, theta, free=None, cg: LagField | None = None) -> np.ndarray:
    """``A = sum_u c_g(u)^2 grad c_X(u) grad c_X(u)^T`` over the free parameters."""
    cg = _cg(mod, cg)
    grads = lag_covariance_grad(model, theta, mod.grid.dims, free)
    p = grads.shape[0]
    w = cg.values.reshape(1, -1)
    G = grads.reshape(p, -1)
    A = (G * w**2) @ G.T
    return 0.5 * (A + A.T)


def hscc_min_eigen(mod: Modulation, model: CovarianceModel, theta, free=None, cg: LagField | None = None) -> float:
    return float(np.linalg.eigvalsh(hscc_matrix(mod, model, theta, free, cg))[0])


def identifiability_warning(A: np.ndarray) -> str | None:
    p = A.shape[0]
    lam = np.linalg.eigvalsh(A)[0]
    if lam < 1e-8 * np.trace(A) / p:
        return (
            f"expected information is near singular (min eigenvalue {lam:.3e}); "
            "some parameters may not be identifiable from this sampling pattern"
        )
    return None


def scc_report(mod: Modulation, model: CovarianceModel, theta, free=None, pairs=None, names=None) -> SccReport:
    """Collect the diagnostics for one sampling pattern and parameter value.

    ``pairs`` maps a label to ``(theta1, theta2)`` for which the separation
    is reported.
    """
    cg = mask_autocorrelation(mod)
    ratio = scc_info_ratio(mod, model, theta, cg)
    A = hscc_matrix(mod, model, theta, free, cg)
    lam = float(np.linalg.eigvalsh(A)[0])
    sep = {k: scc_separation(mod, model, t1, t2, cg) for k, (t1, t2) in (pairs or {}).items()}
    if names is None:
        names = list(model.param_names)
        if free is not None:
            names = [n for n, f in zip(names, free) if f]
    return SccReport(
        info_ratio=ratio,
        rate_rk=float(np.sqrt(ratio)),
        hscc_min_eig=lam,
        hscc_trace=float(np.trace(A)),
        identifiable=identifiability_warning(A) is None,
        separation=sep,
        free=names,
    )
