"""Level-curve extraction for the distance and similarity measures.

Evaluates a measure from a fixed anchor point over a regular grid and traces
constant-value polylines (marching squares), producing plot-ready text data.
"""

from __future__ import annotations

import numpy as np

from .gmm import MixtureModel
from .kernel import KernelSpec, continuous_distance_matrix

MEASURES = ("euclidean", "gmm", "rwm")


def measure_grid(model: MixtureModel | None, measure: str, anchor, bbox,
                 resolution: int = 400):
    """Values of the measure from ``anchor`` on a resolution^2 grid.

    Returns (xs, ys, values) with ``values[i, j]`` the distance from the
    anchor to the point (xs[j], ys[i]).
    """
    if measure not in MEASURES:
        raise ValueError(f"unknown measure {measure!r}; expected one of {MEASURES}")
    anchor = np.asarray(anchor, dtype=float)
    if measure != "euclidean" and model is None:
        raise ValueError(f"measure {measure!r} needs a mixture model")
    if model is not None and anchor.size != model.dim:
        raise ValueError(f"anchor has dimension {anchor.size}, model expects {model.dim}")
    if anchor.size != 2:
        raise ValueError("level curves are defined for two-dimensional inputs")
    xmin, xmax, ymin, ymax = bbox
    xs = np.linspace(xmin, xmax, resolution)
    ys = np.linspace(ymin, ymax, resolution)
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    family = "rbf" if measure == "euclidean" else measure
    spec = KernelSpec(family, 1.0, model if measure != "euclidean" else None)
    dist = continuous_distance_matrix(spec, points, anchor.reshape(1, -1))
    return xs, ys, dist.reshape(resolution, resolution)


def contour_polylines(xs, ys, values, level: float) -> list[np.ndarray]:
    """Marching-squares polylines of one level, in data coordinates."""
    from skimage import measure as sk_measure

    polys = []
    for contour in sk_measure.find_contours(values, level):
        rows, cols = contour[:, 0], contour[:, 1]
        x = np.interp(cols, np.arange(xs.size), xs)
        y = np.interp(rows, np.arange(ys.size), ys)
        polys.append(np.column_stack([x, y]))
    return polys


def write_levelcurves(path, model, measure, anchor, levels, bbox,
                      resolution: int = 400) -> None:
    """Grid + polyline export: header, then ``level polyline_id x y`` rows."""
    xs, ys, values = measure_grid(model, measure, anchor, bbox, resolution)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# measure={measure} anchor={anchor[0]:g},{anchor[1]:g} "
                 f"bbox={bbox[0]:g},{bbox[1]:g},{bbox[2]:g},{bbox[3]:g} "
                 f"resolution={resolution}\n")
        fh.write("# level polyline x y\n")
        for level in levels:
            for pid, poly in enumerate(contour_polylines(xs, ys, values, level)):
                for x, y in poly:
                    fh.write(f"{level:g} {pid} {x:.8g} {y:.8g}\n")
