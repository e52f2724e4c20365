"""Bundled synthetic benchmark datasets (continuous, two-dimensional)."""

from __future__ import annotations

import numpy as np

from .data import Dataset, from_arrays
from .gmm import mixture_from_parameters, sample_from


def mixture_classes(means, covariances, weights, component_class, n: int,
                    seed: int) -> Dataset:
    """Draw n samples from a Gaussian mixture; class = generating component's class."""
    weights = np.asarray(weights, dtype=float)
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n, weights / weights.sum())
    xs, ys = [], []
    for mean, cov, cls, m in zip(means, covariances, component_class, counts):
        comp = mixture_from_parameters([1.0], [mean], [cov])
        if m:
            xs.append(sample_from(comp, m, rng))
            ys.append(np.full(m, cls, dtype=int))
    X = np.vstack(xs)
    y = np.concatenate(ys)
    order = rng.permutation(n)
    return from_arrays(X[order], y[order])


def concentric_gaussians(n: int = 800, var_inner: float = 0.07,
                         var_outer: float = 1.93, seed: int = 0) -> Dataset:
    """Two overlapping isotropic Gaussians at the origin, one per class."""
    eye = np.eye(2)
    return mixture_classes(
        means=[np.zeros(2), np.zeros(2)],
        covariances=[var_inner * eye, var_outer * eye],
        weights=[0.5, 0.5],
        component_class=[0, 1],
        n=n, seed=seed)


def two_moons(n: int = 800, noise: float = 0.08, gap: float = 0.5,
              seed: int = 0) -> Dataset:
    """Two interleaving half circles with Gaussian jitter.

    ``gap`` is the closest arc-to-arc clearance before jitter; 0.5 is the
    common textbook layout.
    """
    rng = np.random.default_rng(seed)
    n_upper = n // 2
    n_lower = n - n_upper
    t_u = rng.uniform(0.0, np.pi, n_upper)
    t_l = rng.uniform(0.0, np.pi, n_lower)
    upper = np.column_stack([np.cos(t_u), np.sin(t_u)])
    lower = np.column_stack([1.0 - np.cos(t_l), (1.0 - gap) - np.sin(t_l)])
    X = np.vstack([upper, lower]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n_upper, dtype=int), np.ones(n_lower, dtype=int)])
    order = rng.permutation(n)
    return from_arrays(X[order], y[order])


def five_cluster_set(n: int = 1000, seed: int = 0) -> Dataset:
    """Five Gaussian processes assigned to three classes; used for robustness demos."""
    eye = np.eye(2)
    means = [(-4.0, 0.0), (0.0, 3.5), (4.0, 0.0), (2.0, -3.5), (-2.0, -3.5)]
    covs = [np.array([[1.0, 0.3], [0.3, 0.6]]),
            np.array([[0.8, -0.2], [-0.2, 0.8]]),
            np.array([[1.2, 0.0], [0.0, 0.5]]),
            0.7 * eye,
            0.7 * eye]
    return mixture_classes(means, covs, [0.2] * 5, [0, 1, 2, 0, 1], n, seed)


SYNTHETIC = {
    "concentric": concentric_gaussians,
    "two_moons": two_moons,
    "five_clusters": five_cluster_set,
}


def make_synthetic(name: str, n: int = 800, seed: int = 0) -> Dataset:
    """Look up a bundled generator by name."""
    try:
        gen = SYNTHETIC[name]
    except KeyError:
        raise ValueError(f"unknown synthetic dataset {name!r}; "
                         f"available: {sorted(SYNTHETIC)}") from None
    return gen(n=n, seed=seed)
