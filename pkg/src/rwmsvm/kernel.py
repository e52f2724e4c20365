"""Kernel families (RBF / mixture-distance / responsibility-weighted) and Grams.

All three families share one shape: exp(-gamma * (alpha * d_cont^2 +
beta * d_cat^2)) where d_cont is the Euclidean, mixture, or responsibility
weighted Mahalanobis distance of the continuous parts and d_cat counts
differing categorical dimensions.  With no categorical part and alpha=beta=1
this reduces to the plain kernel of each family.

``kernel_eval`` is the simple per-pair reference path; ``build_gram`` and
``cross_gram`` produce the same values vectorized, with responsibilities
computed once per sample rather than once per pair.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .data import Sample
from .gmm import MixtureModel, responsibilities_batch
from . import similarity

FAMILIES = ("rbf", "gmm", "rwm")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, width, optional mixture model, and part weights.

    ``alpha`` weighs the continuous squared distance and ``beta`` the
    categorical one; both must be 1 for datasets without categorical
    dimensions.
    """

    family: str
    gamma: float
    model: MixtureModel | None = None
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if (self.model is not None) != (self.family in ("gmm", "rwm")):
            raise ValueError(f"family {self.family!r} and model presence do not match")
        for name, v in (("alpha", self.alpha), ("beta", self.beta)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def fingerprint(self) -> str:
        digest = model_digest(self.model) if self.model is not None else "-"
        return (f"family={self.family} gamma={self.gamma:.17g} "
                f"alpha={self.alpha:.17g} beta={self.beta:.17g} model={digest}")


def model_digest(model: MixtureModel) -> str:
    """Short content hash of a mixture's parameters."""
    h = hashlib.sha256()
    for c in model.components:
        h.update(f"{c.weight:.17g}".encode())
        h.update(b" ".join(f"{v:.17g}".encode() for v in c.mean))
        h.update(b" ".join(f"{v:.17g}".encode() for v in c.covariance.ravel()))
    return h.hexdigest()[:12]


@dataclass
class GramMatrix:
    """Symmetric precomputed kernel matrix keyed to sample indices."""

    values: np.ndarray
    sample_ids: np.ndarray
    spec_fingerprint: str

    @property
    def n(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# pairwise distance machinery

def _whitened(model: MixtureModel, X: np.ndarray) -> list[np.ndarray]:
    """Per component: samples transformed so Euclidean = Mahalanobis."""
    return [solve_triangular(c.chol_lower, X.T, lower=True).T for c in model.components]


def _euclidean_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :]
          - 2.0 * (A @ B.T))
    return np.sqrt(np.clip(sq, 0.0, None))


def continuous_distance_matrix(spec: KernelSpec, A: np.ndarray, B: np.ndarray,
                               resp_a: np.ndarray | None = None,
                               resp_b: np.ndarray | None = None) -> np.ndarray:
    """(nA, nB) matrix of the spec family's continuous distance."""
    if spec.family == "rbf":
        return _euclidean_matrix(A, B)
    model = spec.model
    za = _whitened(model, A)
    zb = _whitened(model, B) if B is not A else za
    if spec.family == "gmm":
        out = np.zeros((A.shape[0], B.shape[0]))
        for w, Zak, Zbk in zip(model.weights, za, zb):
            out += w * _euclidean_matrix(Zak, Zbk)
        return out
    if resp_a is None:
        resp_a = responsibilities_batch(model, A)
    if resp_b is None:
        resp_b = resp_a if B is A else responsibilities_batch(model, B)
    out = np.zeros((A.shape[0], B.shape[0]))
    for k, (Zak, Zbk) in enumerate(zip(za, zb)):
        weight = 0.5 * (resp_a[:, k][:, None] + resp_b[:, k][None, :])
        out += weight * _euclidean_matrix(Zak, Zbk)
    return out


def categorical_delta_matrix(cat_a: np.ndarray, cat_b: np.ndarray,
                             blocks) -> np.ndarray:
    """(nA, nB) counts of categorical dimensions that differ."""
    out = np.zeros((cat_a.shape[0], cat_b.shape[0]))
    for start, stop in blocks:
        # one-of-K blocks agree exactly when their dot product is 1
        out += 1.0 - cat_a[:, start:stop] @ cat_b[:, start:stop].T
    return out


def combined_sq_distance(spec: KernelSpec, cont_a, cat_a, cont_b, cat_b, blocks,
                         resp_a=None, resp_b=None) -> np.ndarray:
    """alpha * d_cont^2 + beta * d_cat^2 for all cross pairs."""
    d = continuous_distance_matrix(spec, cont_a, cont_b, resp_a, resp_b)
    sq = spec.alpha * d * d
    if blocks:
        delta = categorical_delta_matrix(cat_a, cat_b, blocks)
        sq = sq + spec.beta * delta * delta
    return sq


# ---------------------------------------------------------------------------
# kernel evaluation

def kernel_eval(spec: KernelSpec, a: Sample, b: Sample, blocks=()) -> float:
    """Kernel value for one pair; reference path used by tests and prediction."""
    if a.continuous.size != b.continuous.size:
        raise ValueError("continuous parts differ in dimension")
    if spec.family == "rbf":
        d = float(np.linalg.norm(a.continuous - b.continuous))
    elif spec.family == "gmm":
        d = similarity.gmm_distance(spec.model, a.continuous, b.continuous)
    else:
        d = similarity.rwm_similarity(spec.model, a.continuous, b.continuous)
    sq = spec.alpha * d * d
    if blocks:
        delta = similarity.categorical_delta(a.categorical, b.categorical, blocks)
        sq += spec.beta * delta * delta
    return float(np.exp(-spec.gamma * sq))


def gram_values(spec: KernelSpec, cont: np.ndarray, cat: np.ndarray | None,
                blocks=(), n_threads: int = 1) -> np.ndarray:
    """Symmetric kernel matrix over one sample set (unit diagonal, mirrored)."""
    n = cont.shape[0]
    resp = None
    if spec.family == "rwm":
        resp = responsibilities_batch(spec.model, cont)
    if n_threads > 1 and n >= 4 * n_threads:
        sq = np.empty((n, n))
        chunks = np.array_split(np.arange(n), n_threads)
        def fill(rows):
            ra = resp[rows] if resp is not None else None
            sq[rows] = combined_sq_distance(
                spec, cont[rows], None if cat is None else cat[rows],
                cont, cat, blocks, ra, resp)
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(fill, chunks))
    else:
        sq = combined_sq_distance(spec, cont, cat, cont, cat, blocks, resp, resp)
    values = np.exp(-spec.gamma * sq)
    values = np.triu(values) + np.triu(values, 1).T  # exact symmetry
    np.fill_diagonal(values, 1.0)
    return values


def _stack(samples):
    cont = np.vstack([np.atleast_1d(s.continuous) for s in samples])
    cat = np.vstack([np.atleast_1d(s.categorical) for s in samples])
    return cont, cat


def build_gram(spec: KernelSpec, samples, blocks=(), sample_ids=None,
               n_threads: int = 1) -> GramMatrix:
    """Precompute the kernel matrix for a list of samples."""
    if len(samples) == 0:
        raise ValueError("empty sample list")
    cont, cat = _stack(samples)
    values = gram_values(spec, cont, cat, blocks, n_threads)
    if sample_ids is None:
        sample_ids = np.arange(len(samples))
    return GramMatrix(values, np.asarray(sample_ids), spec.fingerprint())


def cross_gram(spec: KernelSpec, samples_a, samples_b, blocks=()) -> np.ndarray:
    """Kernel values between two sample lists, (len(a), len(b))."""
    cont_a, cat_a = _stack(samples_a)
    cont_b, cat_b = _stack(samples_b)
    return cross_gram_values(spec, cont_a, cat_a, cont_b, cat_b, blocks)


def cross_gram_values(spec: KernelSpec, cont_a, cat_a, cont_b, cat_b,
                      blocks=()) -> np.ndarray:
    sq = combined_sq_distance(spec, cont_a, cat_a, cont_b, cat_b, blocks)
    return np.exp(-spec.gamma * sq)


# ---------------------------------------------------------------------------
# diagnostics and export

def psd_check(gram: GramMatrix | np.ndarray, tol: float = 1e-8):
    """(is_psd, min_eigenvalue) with ``tol`` relative to the largest eigenvalue."""
    values = gram.values if isinstance(gram, GramMatrix) else np.asarray(gram)
    if not np.allclose(values, values.T, atol=1e-10):
        raise ValueError("matrix is not symmetric")
    eigs = np.linalg.eigvalsh(values)
    min_eig = float(eigs[0])
    scale = max(float(eigs[-1]), 1.0)
    return min_eig >= -tol * scale, min_eig


def export_gram(gram: GramMatrix, path) -> None:
    """Text export: N, the matrix rows at 17 significant digits, fingerprint."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{gram.n}\n")
        for row in gram.values:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        fh.write(gram.spec_fingerprint + "\n")


def load_gram(path) -> GramMatrix:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    n = int(lines[0])
    values = np.array([[float(v) for v in lines[1 + i].split()] for i in range(n)])
    return GramMatrix(values, np.arange(n), lines[1 + n])
