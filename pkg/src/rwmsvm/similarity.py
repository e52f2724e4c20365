"""(Dis-)similarity measures over continuous and categorical sample parts.

The mixture-weighted distance is a metric; the responsibility weighted variant
trades the triangle inequality for locality (it is a semi-metric: non-negative,
symmetric, and zero exactly on identical inputs).
"""

from __future__ import annotations

import numpy as np

from .gmm import MixtureModel, responsibilities


def mahalanobis(precision: np.ndarray, x, y) -> float:
    """sqrt((x-y)^T P (x-y)) for a precision matrix P (an inverse covariance)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or precision.shape != (x.size, x.size):
        raise ValueError("dimension mismatch")
    d = x - y
    quad = d @ precision @ d
    return float(np.sqrt(max(quad, 0.0)))  # clamp fp negatives of order -1e-15


def _component_distances(model: MixtureModel, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != model.dim or y.size != model.dim:
        raise ValueError(f"inputs must have dimension {model.dim}")
    d = x - y
    quads = np.array([d @ c.precision @ d for c in model.components])
    return np.sqrt(np.maximum(quads, 0.0))


def gmm_distance(model: MixtureModel, x, y) -> float:
    """Mixing-coefficient weighted sum of per-component Mahalanobis distances."""
    return float(model.weights @ _component_distances(model, x, y))


def rwm_similarity(model: MixtureModel, x, y) -> float:
    """Responsibility weighted sum of per-component Mahalanobis distances.

    Weights are the average of the two samples' component memberships, so the
    components likely to have generated the pair dominate the comparison.
    """
    w = 0.5 * (responsibilities(model, x) + responsibilities(model, y))
    return float(w @ _component_distances(model, x, y))


def rwm_similarity_cached(model: MixtureModel, x, y, resp_x, resp_y) -> float:
    """Same as :func:`rwm_similarity` with precomputed responsibilities."""
    w = 0.5 * (np.asarray(resp_x) + np.asarray(resp_y))
    return float(w @ _component_distances(model, x, y))


def categorical_delta(xc, yc, blocks) -> int:
    """Number of categorical dimensions whose one-of-K blocks differ.

    ``blocks`` is the (start, stop) list from ``Dataset.categorical_blocks``.
    """
    xc = np.asarray(xc)
    yc = np.asarray(yc)
    if xc.shape != yc.shape:
        raise ValueError("categorical parts differ in length")
    if blocks and blocks[-1][1] != xc.size:
        raise ValueError("block structure does not cover the categorical part")
    return sum(1 for a, b in blocks if not np.array_equal(xc[a:b], yc[a:b]))
