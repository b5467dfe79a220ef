"""CSV/JSON writers with fixed formatting, so reruns are byte-identical."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FMT = "%.17g"


def write_csv(path, header: list[str], columns) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, data, fmt=FMT, delimiter=",", header=",".join(header), comments="")
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, k] for k, name in enumerate(header)}


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def write_surface(path, surface) -> Path:
    """Long format ``t,pi,V,stop``."""
    nt, nx = surface.V.shape
    t = np.repeat(surface.times, nx)
    pi = np.tile(surface.pi, nt)
    return write_csv(path, ["t", "pi", "V", "stop"],
                     [t, pi, surface.V.ravel(), surface.stop.ravel().astype(float)])


def write_boundaries(path, bounds) -> Path:
    return write_csv(path, ["t", "b", "B"], [bounds.times, bounds.b, bounds.B])


def write_cdfs(path, measure) -> Path:
    return write_csv(path, ["t", "F0", "F1"], [measure.time_grid, measure.F0, measure.F1])
