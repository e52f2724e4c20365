"""C-SVM training via SMO on precomputed Gram matrices, one-vs-one multiclass.

The two-variable solver uses maximal-violating-pair working set selection with
lowest-index tie breaking, so training is deterministic for a given Gram and
label vector.  Pairs whose curvature K_ii + K_jj - 2 K_ij is not positive
(possible with non-PSD kernel matrices) are handled by substituting a small
positive constant, which keeps every update a descent step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Sample
from .kernel import GramMatrix, KernelSpec, cross_gram_values

TAU = 1e-12  # curvature substitute for non-positive-definite pairs


@dataclass
class BinarySvm:
    """One binary SMO solution: support vectors, duals, and bias."""

    sv_indices: np.ndarray     # positions in the training set the Gram covers
    dual_coef: np.ndarray      # alpha_i * y_i per support vector
    bias: float
    c: float
    class_pair: tuple[int, int]
    converged: bool = True
    iterations: int = 0


def _as_values(gram) -> np.ndarray:
    return gram.values if isinstance(gram, GramMatrix) else np.asarray(gram, dtype=float)


def smo_train_binary(gram, labels, c: float, tol: float = 1e-3,
                     max_passes: int = 100_000,
                     class_pair: tuple[int, int] = (1, -1)) -> BinarySvm:
    """Solve the soft-margin dual on a precomputed Gram matrix.

    Parameters
    ----------
    gram : GramMatrix or (N, N) array
        Kernel values of the training samples.
    labels : (N,) array of +1/-1
    c : float
        Box constraint on the dual variables.
    tol : float
        KKT tolerance; optimization stops when the maximal violating pair
        disagrees by at most ``tol``.
    max_passes : int
        Budget of pair updates; exceeding it returns the current iterate
        with ``converged=False``.
    """
    K = _as_values(gram)
    y = np.asarray(labels, dtype=float)
    n = y.size
    if K.shape != (n, n):
        raise ValueError("gram and labels disagree in size")
    if not np.all(np.abs(y) == 1.0):
        raise ValueError("labels must be +1/-1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("need at least one sample of each sign")
    if c <= 0:
        raise ValueError("c must be positive")

    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a^T Q a - sum(a)
    converged = False
    it = 0
    while it < max_passes:
        fsel = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.where(up, fsel, -np.inf).argmax())
        j = int(np.where(low, fsel, np.inf).argmin())
        m, mm = fsel[i], fsel[j]
        if m - mm <= tol:
            converged = True
            break
        eta = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if eta <= 0.0:
            eta = TAU
        cap_i = (c - alpha[i]) if y[i] > 0 else alpha[i]
        cap_j = alpha[j] if y[j] > 0 else (c - alpha[j])
        t = min((m - mm) / eta, cap_i, cap_j)
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        grad += y * t * (K[:, i] - K[:, j])
        it += 1

    bias = _compute_bias(alpha, grad, y, c)
    sv = np.flatnonzero(alpha > 0)
    return BinarySvm(sv, alpha[sv] * y[sv], bias, c, class_pair,
                     converged=converged, iterations=it)


def _compute_bias(alpha, grad, y, c) -> float:
    """Average y_i - f(x_i) over free vectors, else midpoint of the KKT interval."""
    fsel = -y * grad  # equals y_i - sum_j alpha_j y_j K_ij
    free = (alpha > 0) & (alpha < c)
    if free.any():
        return float(fsel[free].mean())
    up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
    hi = fsel[up].max() if up.any() else 0.0
    lo = fsel[low].min() if low.any() else 0.0
    return float(0.5 * (hi + lo))


def dual_objective(gram, labels, alpha) -> float:
    """sum(alpha) - 1/2 alpha^T Q alpha (the value SMO maximizes)."""
    K = _as_values(gram)
    y = np.asarray(labels, dtype=float)
    v = alpha * y
    return float(alpha.sum() - 0.5 * v @ K @ v)


def expand_duals(svm: BinarySvm, n: int) -> np.ndarray:
    """Dense alpha vector (not signed) from a binary machine."""
    alpha = np.zeros(n)
    alpha[svm.sv_indices] = np.abs(svm.dual_coef)
    return alpha


def kkt_residual(gram, labels, svm: BinarySvm) -> float:
    """Largest violation of the KKT conditions given the stored bias."""
    K = _as_values(gram)
    y = np.asarray(labels, dtype=float)
    n = y.size
    coef = np.zeros(n)
    coef[svm.sv_indices] = svm.dual_coef
    margins = y * (K @ coef + svm.bias)
    alpha = expand_duals(svm, n)
    resid = np.where(alpha <= 0, np.maximum(0.0, 1.0 - margins),
                     np.where(alpha >= svm.c, np.maximum(0.0, margins - 1.0),
                              np.abs(margins - 1.0)))
    return float(resid.max())


# ---------------------------------------------------------------------------
# one-vs-one multiclass

@dataclass
class SvmModel:
    """One-vs-one ensemble over a retained training sample set."""

    binaries: list[BinarySvm]
    classes: np.ndarray
    kernel: KernelSpec
    train_cont: np.ndarray
    train_cat: np.ndarray
    blocks: list = field(default_factory=list)
    skipped_pairs: list = field(default_factory=list)
    class_names: list | None = None


def train_multiclass(gram, labels, c: float, spec: KernelSpec,
                     train_cont, train_cat=None, blocks=(),
                     tol: float = 1e-3, max_passes: int = 100_000,
                     class_names=None) -> SvmModel:
    """Train one binary machine per unordered class pair.

    ``labels`` are class indices over the Gram's samples; each binary machine
    is trained on the sub-Gram of its two classes with +1 assigned to the
    lower class id.  A pair missing one of its classes is skipped and recorded
    in ``skipped_pairs``.
    """
    K = _as_values(gram)
    labels = np.asarray(labels, dtype=int)
    classes = np.unique(labels[labels >= 0])
    if classes.size < 2:
        raise ValueError("need at least two classes among labeled samples")
    train_cont = np.asarray(train_cont, dtype=float)
    if train_cat is None:
        train_cat = np.zeros((train_cont.shape[0], 0))

    binaries, skipped = [], []
    for ai in range(classes.size):
        for bi in range(ai + 1, classes.size):
            a, b = int(classes[ai]), int(classes[bi])
            mask = (labels == a) | (labels == b)
            idx = np.flatnonzero(mask)
            y = np.where(labels[idx] == a, 1.0, -1.0)
            if not (np.any(y > 0) and np.any(y < 0)):
                skipped.append((a, b))
                continue
            sub = K[np.ix_(idx, idx)]
            machine = smo_train_binary(sub, y, c, tol, max_passes, class_pair=(a, b))
            machine.sv_indices = idx[machine.sv_indices]
            binaries.append(machine)
    return SvmModel(binaries, classes, spec, train_cont, train_cat,
                    list(blocks), skipped, class_names)


def decision_values(model: SvmModel, cross: np.ndarray) -> np.ndarray:
    """(n_eval, n_binaries) decision values from precomputed cross-kernel rows."""
    out = np.empty((cross.shape[0], len(model.binaries)))
    for col, b in enumerate(model.binaries):
        out[:, col] = cross[:, b.sv_indices] @ b.dual_coef + b.bias
    return out


def vote_counts(model: SvmModel, cross: np.ndarray) -> np.ndarray:
    """(n_eval, n_classes) one-vs-one votes; decision 0 votes the lower class id."""
    votes = np.zeros((cross.shape[0], model.classes.size))
    pos = {int(cls): k for k, cls in enumerate(model.classes)}
    dec = decision_values(model, cross)
    for col, b in enumerate(model.binaries):
        a_idx, b_idx = pos[b.class_pair[0]], pos[b.class_pair[1]]
        win_a = dec[:, col] >= 0.0
        votes[win_a, a_idx] += 1.0
        votes[~win_a, b_idx] += 1.0
    return votes


def _cross_for(model: SvmModel, cont, cat) -> np.ndarray:
    if cat is None:
        cat = np.zeros((cont.shape[0], 0))
    return cross_gram_values(model.kernel, cont, cat,
                             model.train_cont, model.train_cat, model.blocks)


def predict_batch(model: SvmModel, cont, cat=None) -> np.ndarray:
    """Majority-vote class ids; vote ties go to the lowest class id."""
    votes = vote_counts(model, _cross_for(model, np.atleast_2d(cont), cat))
    return model.classes[votes.argmax(axis=1)]


def predict(model: SvmModel, x: Sample) -> int:
    return int(predict_batch(model, x.continuous.reshape(1, -1),
                             x.categorical.reshape(1, -1))[0])


def vote_margins(model: SvmModel, cont, cat=None) -> np.ndarray:
    """Winner-minus-runner-up vote counts per evaluated sample."""
    votes = vote_counts(model, _cross_for(model, np.atleast_2d(cont), cat))
    return _margins(votes)


def _margins(votes: np.ndarray) -> np.ndarray:
    if votes.shape[1] == 1:
        return votes[:, 0]
    part = np.partition(votes, -2, axis=1)
    return part[:, -1] - part[:, -2]


def confident_vote_margins(model: SvmModel, cross: np.ndarray,
                           tube: float = 1.0) -> np.ndarray:
    """Vote margins where machines abstain inside their margin tube.

    A binary machine only casts a vote when |decision| >= tube, so a sample
    with no strict winner among confident votes has margin < 1; used as the
    uncertainty signal when scoring hyperparameters against unlabeled data.
    """
    votes = np.zeros((cross.shape[0], model.classes.size))
    pos = {int(cls): k for k, cls in enumerate(model.classes)}
    dec = decision_values(model, cross)
    for col, b in enumerate(model.binaries):
        a_idx, b_idx = pos[b.class_pair[0]], pos[b.class_pair[1]]
        confident = np.abs(dec[:, col]) >= tube
        win_a = confident & (dec[:, col] >= 0.0)
        win_b = confident & (dec[:, col] < 0.0)
        votes[win_a, a_idx] += 1.0
        votes[win_b, b_idx] += 1.0
    return _margins(votes)


def count_support_vectors(model: SvmModel) -> int:
    """Size of the union of support vector indices over all binary machines."""
    seen: set[int] = set()
    for b in model.binaries:
        seen.update(int(i) for i in b.sv_indices)
    return len(seen)


# ---------------------------------------------------------------------------
# persistence

def save_svm(model: SvmModel, path) -> None:
    n, d = model.train_cont.shape
    e = model.train_cat.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"svm {model.classes.size} {len(model.binaries)}\n")
        fh.write("classes " + " ".join(str(int(c)) for c in model.classes) + "\n")
        names = model.class_names or [str(int(c)) for c in model.classes]
        fh.write("names " + " ".join(names) + "\n")
        fh.write("kernel " + model.kernel.fingerprint() + "\n")
        fh.write("blocks " + " ".join(f"{a}:{b}" for a, b in model.blocks) + "\n")
        fh.write(f"samples {n} {d} {e}\n")
        for i in range(n):
            row = list(model.train_cont[i]) + list(model.train_cat[i])
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
        for b in model.binaries:
            fh.write(f"binary {b.class_pair[0]} {b.class_pair[1]} "
                     f"{b.sv_indices.size} {b.bias:.17g} {b.c:.17g} "
                     f"{int(b.converged)}\n")
            for idx, coef in zip(b.sv_indices, b.dual_coef):
                fh.write(f"sv {idx} {coef:.17g}\n")


def load_svm(path, spec: KernelSpec) -> SvmModel:
    """Reload a saved ensemble; the kernel spec must match the stored fingerprint."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    classes = np.array([int(v) for v in lines[1].split()[1:]])
    class_names = lines[2].split()[1:]
    stored_fp = lines[3][len("kernel "):]
    if spec.fingerprint() != stored_fp:
        raise ValueError("kernel spec does not match the stored fingerprint")
    blocks = [tuple(int(v) for v in tok.split(":"))
              for tok in lines[4].split()[1:]]
    n, d, e = (int(v) for v in lines[5].split()[1:])
    rows = np.array([[float(v) for v in lines[6 + i].split()] for i in range(n)])
    rows = rows.reshape(n, d + e)
    cont, cat = rows[:, :d], rows[:, d:]
    binaries = []
    pos = 6 + n
    while pos < len(lines) and lines[pos].startswith("binary"):
        parts = lines[pos].split()
        a, b, nsv = int(parts[1]), int(parts[2]), int(parts[3])
        bias, c_val, conv = float(parts[4]), float(parts[5]), bool(int(parts[6]))
        sv_idx = np.empty(nsv, dtype=int)
        coefs = np.empty(nsv)
        for k in range(nsv):
            _, idx, coef = lines[pos + 1 + k].split()
            sv_idx[k], coefs[k] = int(idx), float(coef)
        binaries.append(BinarySvm(sv_idx, coefs, bias, c_val, (a, b), conv))
        pos += 1 + nsv
    return SvmModel(binaries, classes, spec, cont, cat, blocks,
                    class_names=class_names)
