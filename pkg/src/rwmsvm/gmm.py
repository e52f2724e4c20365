"""Gaussian mixture estimation (EM and variational Bayes) and model queries.

The variational fit starts from ``k_init`` components and removes the ones
whose posterior weight collapses, so the returned component count is chosen by
the data.  Fitted models are immutable carriers of weights, means, covariances
and cached precisions; everything downstream (similarity measures, kernels,
density-biased sampling) reads from them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import digamma, gammaln, logsumexp, xlogy

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianComponent:
    """One weighted Gaussian: parameters plus cached precision and log-det."""

    weight: float
    mean: np.ndarray
    covariance: np.ndarray
    precision: np.ndarray
    log_det: float
    chol_lower: np.ndarray

    @classmethod
    def create(cls, weight: float, mean, covariance) -> "GaussianComponent":
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(covariance, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match mean dimension")
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise ValueError("covariance is not symmetric")
        L = np.linalg.cholesky(cov)  # raises LinAlgError if not SPD
        identity = np.eye(mean.size)
        l_inv = solve_triangular(L, identity, lower=True)
        precision = l_inv.T @ l_inv
        log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
        return cls(float(weight), mean, cov, precision, log_det, L)

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_pdf(self, X: np.ndarray) -> np.ndarray:
        """log N(x | mean, covariance) for rows of X."""
        diff = np.atleast_2d(X) - self.mean
        z = solve_triangular(self.chol_lower, diff.T, lower=True)
        quad = np.sum(z * z, axis=0)
        return -0.5 * (self.dim * LOG_2PI + self.log_det + quad)


@dataclass
class MixtureModel:
    """Weighted Gaussian mixture with fit diagnostics.

    ``objective_trace`` holds the per-iteration training objective
    (log-likelihood for EM, variational lower bound for VI) and is empty for
    hand-constructed models.
    """

    components: list[GaussianComponent]
    dim: int
    converged: bool = True
    variance_floor_hits: int = 0
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if not self.components:
            raise ValueError("mixture needs at least one component")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mixing coefficients sum to {total}, expected 1")

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.vstack([c.mean for c in self.components])


def mixture_from_parameters(weights, means, covariances, **diag) -> MixtureModel:
    """Convenience constructor from plain arrays."""
    weights = np.asarray(weights, dtype=float)
    comps = [GaussianComponent.create(w, m, c)
             for w, m, c in zip(weights, means, covariances)]
    return MixtureModel(comps, comps[0].dim, **diag)


# ---------------------------------------------------------------------------
# density queries

def component_log_joint(model: MixtureModel, X: np.ndarray) -> np.ndarray:
    """(N, K) matrix of log(pi_k N(x_n | mu_k, Sigma_k))."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cols = [np.log(c.weight) + c.log_pdf(X) for c in model.components]
    return np.column_stack(cols)


def log_density_batch(model: MixtureModel, X: np.ndarray) -> np.ndarray:
    return logsumexp(component_log_joint(model, X), axis=1)


def log_density(model: MixtureModel, x: np.ndarray) -> float:
    """Log of the mixture density at a single point."""
    return float(log_density_batch(model, np.atleast_2d(x))[0])


def responsibilities_batch(model: MixtureModel, X: np.ndarray) -> np.ndarray:
    """(N, K) posterior component memberships, rows summing to 1."""
    log_joint = component_log_joint(model, X)
    return np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))


def responsibilities(model: MixtureModel, x: np.ndarray) -> np.ndarray:
    """Posterior component memberships of one sample (log-space, stable)."""
    x = np.asarray(x, dtype=float)
    if x.size != model.dim:
        raise ValueError(f"sample has dimension {x.size}, model expects {model.dim}")
    return responsibilities_batch(model, x.reshape(1, -1))[0]


def sample_from(model: MixtureModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n points from the mixture."""
    counts = rng.multinomial(n, model.weights)
    parts = []
    for comp, m in zip(model.components, counts):
        if m:
            noise = rng.standard_normal((m, comp.dim))
            parts.append(comp.mean + noise @ comp.chol_lower.T)
    X = np.vstack(parts)
    return X[rng.permutation(n)]


# ---------------------------------------------------------------------------
# shared fitting helpers

def _kmeanspp_centers(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centers over the data."""
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a center
            centers.append(X[rng.integers(n)])
            continue
        centers.append(X[rng.choice(n, p=d2 / total)])
        d2 = np.minimum(d2, np.sum((X - centers[-1]) ** 2, axis=1))
    return np.vstack(centers)


def _one_hot_resp(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    resp = np.zeros((X.shape[0], centers.shape[0]))
    resp[np.arange(X.shape[0]), d2.argmin(axis=1)] = 1.0
    return resp


def _moment_stats(X: np.ndarray, resp: np.ndarray):
    """Soft counts N_k, weighted means, weighted scatter matrices S_k."""
    nk = resp.sum(axis=0)
    safe = np.maximum(nk, 1e-300)
    xbar = (resp.T @ X) / safe[:, None]
    S = np.empty((resp.shape[1], X.shape[1], X.shape[1]))
    for k in range(resp.shape[1]):
        diff = X - xbar[k]
        S[k] = (resp[:, k][:, None] * diff).T @ diff / safe[k]
    return nk, xbar, S


def _spd_with_floor(cov: np.ndarray, floor: float):
    """Symmetrize and jitter until Cholesky succeeds; returns (cov, escalations)."""
    cov = 0.5 * (cov + cov.T) + floor * np.eye(cov.shape[0])
    jitter, bumps = floor, 0
    while True:
        try:
            np.linalg.cholesky(cov)
            return cov, bumps
        except np.linalg.LinAlgError:
            jitter *= 10.0
            cov = cov + jitter * np.eye(cov.shape[0])
            bumps += 1


# ---------------------------------------------------------------------------
# expectation maximization (baseline / oracle for the variational fit)

def fit_em(X, K: int, seed: int, max_iter: int = 500, tol: float = 1e-6) -> MixtureModel:
    """Fit a K-component Gaussian mixture by expectation maximization.

    The log-likelihood trace is non-decreasing (up to 1e-8 slack).  Every
    M-step covariance receives a variance floor of 1e-6 times the average
    feature variance; components needing more jitter than that to stay SPD
    are counted in ``variance_floor_hits``.

    Parameters
    ----------
    X : (N, D) array
        Training samples.
    K : int
        Number of components (fixed; EM does not prune).
    seed : int
        Controls the k-means++ initialization.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n < K:
        raise ValueError(f"need at least K={K} samples, got {n}")
    rng = np.random.default_rng(seed)
    floor = 1e-6 * float(np.mean(np.var(X, axis=0))) or 1e-12

    resp = _one_hot_resp(X, _kmeanspp_centers(X, K, rng))
    model = _em_mstep(X, resp, floor, hits=0)
    trace = []
    converged = False
    prev = -np.inf
    for _ in range(max_iter):
        log_joint = component_log_joint(model, X)
        ll = float(np.sum(logsumexp(log_joint, axis=1)))
        trace.append(ll)
        if np.isfinite(prev) and abs(ll - prev) <= tol * abs(prev):
            converged = True
            break
        prev = ll
        resp = np.exp(log_joint - logsumexp(log_joint, axis=1, keepdims=True))
        model = _em_mstep(X, resp, floor, model.variance_floor_hits)
    model.converged = converged
    model.objective_trace = np.array(trace)
    return model


def _em_mstep(X, resp, floor, hits):
    nk, xbar, S = _moment_stats(X, resp)
    n = X.shape[0]
    weights = nk / n
    weights = weights / weights.sum()
    comps = []
    for k in range(resp.shape[1]):
        cov, bumps = _spd_with_floor(S[k], floor)
        hits += bumps
        comps.append(GaussianComponent.create(weights[k], xbar[k], cov))
    return MixtureModel(comps, X.shape[1], variance_floor_hits=hits)


# ---------------------------------------------------------------------------
# variational Bayesian inference

@dataclass(frozen=True)
class VIHyperParams:
    """Priors and controls of the variational mixture fit.

    ``alpha0`` is the Dirichlet concentration (small values starve redundant
    components), ``beta0`` the mean-precision prior, and ``w0`` the scale of
    the Wishart precision prior: larger ``w0`` favors tighter components and
    therefore more of them.
    """

    alpha0: float = 1e-3
    beta0: float = 1.0
    w0: float = 1.0
    k_init: int = 10
    max_iter: int = 500
    tol: float = 1e-6
    prune_weight: float = 1e-3
    seed: int = 0
    n_init: int = 1  # restarts; the run with the best final bound wins

    def __post_init__(self):
        for name in ("alpha0", "beta0", "w0", "tol", "prune_weight"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.k_init < 1:
            raise ValueError("k_init must be at least 1")
        if self.n_init < 1:
            raise ValueError("n_init must be at least 1")


def fit_vi(X, hp: VIHyperParams) -> MixtureModel:
    """Fit a Gaussian mixture with variational Bayes and automatic pruning.

    Runs coordinate ascent on the usual Gaussian-Wishart/Dirichlet variational
    family, then extracts a point-estimate mixture keeping the components with
    enough posterior mass (at least one effective sample and expected weight
    above ``hp.prune_weight``).  The lower-bound trace is non-decreasing; a
    fit that exhausts ``max_iter`` is returned with ``converged=False``.
    With ``n_init > 1`` the restart reaching the highest bound is kept.
    """
    best = None
    for restart in range(hp.n_init):
        model = _fit_vi_once(X, hp, hp.seed + 7919 * restart)
        bound = model.objective_trace[-1]
        if best is None or bound > best.objective_trace[-1]:
            best = model
    return best


def _fit_vi_once(X, hp: VIHyperParams, seed: int) -> MixtureModel:
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n <= d:
        raise ValueError(f"need more samples ({n}) than dimensions ({d})")
    k = int(hp.k_init)
    if k > n:
        raise ValueError(f"k_init={k} exceeds sample count {n}")
    rng = np.random.default_rng(seed)

    m0 = X.mean(axis=0)
    nu0 = float(d)
    w0_inv = (1.0 / hp.w0) * np.eye(d)
    log_det_w0 = d * np.log(hp.w0)

    resp = _one_hot_resp(X, _kmeanspp_centers(X, k, rng))
    state = _vi_mstep(X, resp, hp, m0, nu0, w0_inv)

    trace = []
    converged = False
    prev = -np.inf
    for _ in range(hp.max_iter):
        resp = _vi_estep(X, state)
        stats = _moment_stats(X, resp)
        bound = _vi_elbo(X, resp, stats, state, hp, m0, nu0, w0_inv, log_det_w0)
        trace.append(bound)
        if np.isfinite(prev) and abs(bound - prev) <= hp.tol * max(abs(prev), 1.0):
            converged = True
            break
        prev = bound
        state = _vi_mstep(X, resp, hp, m0, nu0, w0_inv, stats)

    return _vi_extract(state, n, hp, d, converged, np.array(trace))


class _VIState:
    """Posterior parameters of the variational family (one entry per component)."""

    def __init__(self, alpha, beta, m, w_inv, nu):
        self.alpha = alpha          # Dirichlet
        self.beta = beta            # mean precision scale
        self.m = m                  # mean locations
        self.w_inv = w_inv          # inverse Wishart scale matrices (K, D, D)
        self.nu = nu                # Wishart degrees of freedom
        self.chol_w_inv = np.array([np.linalg.cholesky(w) for w in w_inv])
        d = m.shape[1]
        ks = np.arange(1, d + 1)
        # E[ln |Lambda_k|] and E[ln pi_k]
        self.log_det_w = -2.0 * np.log(
            np.diagonal(self.chol_w_inv, axis1=1, axis2=2)).sum(axis=1)
        self.ln_lam = (digamma(0.5 * (self.nu[:, None] + 1 - ks)).sum(axis=1)
                       + d * np.log(2.0) + self.log_det_w)
        self.ln_pi = digamma(alpha) - digamma(alpha.sum())

    def mahalanobis_sq(self, k: int, diff: np.ndarray) -> np.ndarray:
        """Rows d -> d^T W_k d via the Cholesky of W_k^{-1}."""
        z = solve_triangular(self.chol_w_inv[k], diff.T, lower=True)
        return np.sum(z * z, axis=0)


def _vi_mstep(X, resp, hp, m0, nu0, w0_inv, stats=None) -> _VIState:
    n, d = X.shape
    nk, xbar, S = stats if stats is not None else _moment_stats(X, resp)
    alpha = hp.alpha0 + nk
    beta = hp.beta0 + nk
    nu = nu0 + nk
    m = (hp.beta0 * m0 + nk[:, None] * xbar) / beta[:, None]
    w_inv = np.empty((len(nk), d, d))
    for k in range(len(nk)):
        dm = (xbar[k] - m0)[:, None]
        w_inv[k] = (w0_inv + nk[k] * S[k]
                    + (hp.beta0 * nk[k] / (hp.beta0 + nk[k])) * (dm @ dm.T))
        w_inv[k] = 0.5 * (w_inv[k] + w_inv[k].T)
    return _VIState(alpha, beta, m, w_inv, nu)


def _vi_estep(X, state: _VIState) -> np.ndarray:
    n, d = X.shape
    k = state.m.shape[0]
    log_rho = np.empty((n, k))
    for j in range(k):
        quad = state.nu[j] * state.mahalanobis_sq(j, X - state.m[j])
        log_rho[:, j] = (state.ln_pi[j] + 0.5 * state.ln_lam[j]
                         - 0.5 * (d / state.beta[j] + quad + d * LOG_2PI))
    return np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))


def _log_wishart_b(log_det_w: float, nu: float, d: int) -> float:
    ks = np.arange(1, d + 1)
    return (-0.5 * nu * log_det_w - 0.5 * nu * d * np.log(2.0)
            - 0.25 * d * (d - 1) * np.log(np.pi)
            - gammaln(0.5 * (nu + 1 - ks)).sum())


def _vi_elbo(X, resp, stats, state, hp, m0, nu0, w0_inv, log_det_w0) -> float:
    """Variational lower bound (the standard seven-term decomposition)."""
    n, d = X.shape
    k = state.m.shape[0]
    nk, xbar, S = stats

    lp_x = 0.0
    for j in range(k):
        quad = state.mahalanobis_sq(j, (xbar[j] - state.m[j]).reshape(1, -1))[0]
        tr_sw = float(np.trace(cho_solve((state.chol_w_inv[j], True), S[j])))
        lp_x += 0.5 * nk[j] * (state.ln_lam[j] - d / state.beta[j]
                               - state.nu[j] * tr_sw - state.nu[j] * quad - d * LOG_2PI)

    lp_z = float(nk @ state.ln_pi)
    lp_pi = (gammaln(k * hp.alpha0) - k * gammaln(hp.alpha0)
             + (hp.alpha0 - 1.0) * state.ln_pi.sum())

    lp_mu_lam = k * _log_wishart_b(log_det_w0, nu0, d)
    for j in range(k):
        quad0 = state.mahalanobis_sq(j, (state.m[j] - m0).reshape(1, -1))[0]
        tr_w0w = float(np.trace(cho_solve((state.chol_w_inv[j], True), w0_inv)))
        lp_mu_lam += (0.5 * (d * np.log(hp.beta0 / (2.0 * np.pi)) + state.ln_lam[j]
                             - d * hp.beta0 / state.beta[j]
                             - hp.beta0 * state.nu[j] * quad0)
                      + 0.5 * (nu0 - d - 1.0) * state.ln_lam[j]
                      - 0.5 * state.nu[j] * tr_w0w)

    lq_z = float(xlogy(resp, resp).sum())
    lq_pi = (float((state.alpha - 1.0) @ state.ln_pi)
             + gammaln(state.alpha.sum()) - gammaln(state.alpha).sum())
    lq_mu_lam = 0.0
    for j in range(k):
        entropy = (-_log_wishart_b(state.log_det_w[j], state.nu[j], d)
                   - 0.5 * (state.nu[j] - d - 1.0) * state.ln_lam[j]
                   + 0.5 * state.nu[j] * d)
        lq_mu_lam += (0.5 * state.ln_lam[j]
                      + 0.5 * d * np.log(state.beta[j] / (2.0 * np.pi))
                      - 0.5 * d - entropy)

    return float(lp_x + lp_z + lp_pi + lp_mu_lam - lq_z - lq_pi - lq_mu_lam)


def _vi_extract(state, n, hp, d, converged, trace) -> MixtureModel:
    weights = state.alpha / state.alpha.sum()
    keep = (weights >= hp.prune_weight) & (n * weights >= 1.0)
    if not keep.any():
        keep[int(np.argmax(weights))] = True
    kept = np.flatnonzero(keep)
    w = weights[kept] / weights[kept].sum()
    comps = []
    for wj, j in zip(w, kept):
        cov = state.w_inv[j] / state.nu[j]  # inverse of the expected precision
        cov, _ = _spd_with_floor(cov, 0.0)
        comps.append(GaussianComponent.create(wj, state.m[j], cov))
    return MixtureModel(comps, d, converged=converged, objective_trace=trace)


# ---------------------------------------------------------------------------
# model quality: divergence from a Parzen-window estimate

def representativity(model: MixtureModel, X, bandwidth: float, mc_samples: int,
                     seed: int) -> float:
    """Monte-Carlo symmetric KL divergence between the model and a Parzen estimate.

    The Parzen density places an isotropic Gaussian of the given bandwidth on
    every row of X.  Low values mean the parametric model represents the data
    about as well as the non-parametric estimate; used to score fits.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if mc_samples <= 0:
        raise ValueError("mc_samples must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    rng = np.random.default_rng(seed)

    def parzen_logpdf(P):
        diff = P[:, None, :] - X[None, :, :]
        quad = np.sum(diff * diff, axis=2) / bandwidth**2
        comp = -0.5 * (d * LOG_2PI + 2 * d * np.log(bandwidth) + quad)
        return logsumexp(comp, axis=1) - np.log(n)

    from_model = sample_from(model, mc_samples, rng)
    kl_pq = float(np.mean(log_density_batch(model, from_model)
                          - parzen_logpdf(from_model)))
    rows = rng.integers(n, size=mc_samples)
    from_parzen = X[rows] + bandwidth * rng.standard_normal((mc_samples, d))
    kl_qp = float(np.mean(parzen_logpdf(from_parzen)
                          - log_density_batch(model, from_parzen)))
    return kl_pq + kl_qp


# ---------------------------------------------------------------------------
# persistence (text, 17 significant digits, bit-faithful round trip)

def save_model(model: MixtureModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"mixture {model.k} {model.dim}\n")
        for c in model.components:
            fh.write(f"weight {c.weight:.17g}\n")
            fh.write("mean " + " ".join(f"{v:.17g}" for v in c.mean) + "\n")
            fh.write("covariance\n")
            for row in c.covariance:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_model(path) -> MixtureModel:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    tag, k, d = lines[0].split()
    if tag != "mixture":
        raise ValueError(f"{path}: not a mixture model file")
    k, d = int(k), int(d)
    comps = []
    pos = 1
    for _ in range(k):
        weight = float(lines[pos].split()[1])
        mean = np.array([float(v) for v in lines[pos + 1].split()[1:]])
        rows = [[float(v) for v in lines[pos + 3 + r].split()] for r in range(d)]
        comps.append(GaussianComponent.create(weight, mean, np.array(rows)))
        pos += 3 + d
    return MixtureModel(comps, d)
