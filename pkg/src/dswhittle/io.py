"""Grid file format: raw little-endian float64 plus a JSON sidecar.

The raw file holds the values in colexicographic order (first axis fastest).
The sidecar sits next to it as ``<path>.json``::

    {"dims": [...], "spacing": [...], "missing": "nan" | "mask", "mask_path": optional}

``missing="nan"`` marks unobserved sites with NaN in the data itself;
``missing="mask"`` points to a mask file (same format, values in [0, 1]).
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .grid import GridSpec, Modulation

DTYPE = np.dtype("<f8")


class GridFormatError(ValueError):
    pass


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_grid(path, values, spacing=None, missing: str = "nan", mask_path=None, extra: dict | None = None):
    values = np.asarray(values, dtype=float)
    grid = GridSpec(values.shape, spacing)
    meta = {"dims": list(grid.dims), "spacing": list(grid.spacing), "missing": missing}
    if mask_path is not None:
        meta["mask_path"] = os.fspath(mask_path)
    if extra:
        meta.update(extra)
    path = Path(path)
    path.write_bytes(values.astype(DTYPE).tobytes(order="F"))
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_grid(path):
    """Return ``(values, grid, metadata)``; ``values`` has shape ``grid.dims``."""
    path = Path(path)
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
    except FileNotFoundError:
        raise GridFormatError(f"missing sidecar {side}") from None
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"malformed sidecar {side}: {exc}") from None
    if not isinstance(meta, dict) or "dims" not in meta:
        raise GridFormatError(f"sidecar {side} lacks 'dims'")
    try:
        grid = GridSpec(tuple(meta["dims"]), meta.get("spacing"))
    except (TypeError, ValueError) as exc:
        raise GridFormatError(f"bad grid header in {side}: {exc}") from None
    raw = np.frombuffer(path.read_bytes(), dtype=DTYPE)
    if raw.size != grid.size:
        raise GridFormatError(f"{path} holds {raw.size} values, header declares {grid.size}")
    values = raw.reshape(grid.dims, order="F").astype(float)
    return values, grid, meta


def load_observations(path, mask_path=None):
    """Read data and its modulation; NaN sites get weight 0 and value 0."""
    values, grid, meta = read_grid(path)
    if mask_path is None and meta.get("missing") == "mask":
        mask_path = meta.get("mask_path")
        if mask_path is not None and not os.path.isabs(mask_path):
            mask_path = Path(path).parent / mask_path
    g = np.isfinite(values).astype(float)
    if mask_path is not None:
        from .simulate import mask_from_file

        g = g * mask_from_file(mask_path, grid).values
    data = np.where(g > 0, np.nan_to_num(values, nan=0.0), 0.0)
    return data, Modulation(grid, g)
