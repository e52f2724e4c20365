"""Hyperparameter selection: exhaustive grid search and the two-stage
line-search heuristic of Keerthi and Lin.

Both searches score a candidate (C, gamma, alpha, beta) by an inner 4-fold
cross-validation over the labeled subset of one outer fold.  The score couples
the validation error with an expected-error proxy over the unlabeled training
samples U.  Two proxies are provided, selected by the ``expected_error``
argument:

``impurity`` (default when a mixture model is available): under the cluster
assumption a component's samples share one label, so each component is
anchored to the label its training samples give it (responsibility weighted)
and the proxy is the responsibility mass of U predictions that disagree with
their component's anchor; components without labeled mass fall back to
disagreement with their own predicted majority.  ``uncertainty``: the
fraction of U without a strict one-vs-one vote winner once machines abstain
inside their margin tube (a plain vote margin is constant for two or three
classes and carries no signal).  Both the functional and its weight are
exposed because there is no canonical definition of the expected error.

The heuristic first line-searches the penalty parameter with a linear kernel,
then walks the slope -1 diagonal log10(gamma) = log10(C~) - log10(C)
restricted to grid
points, so it trains O(|C row| + line length) cells instead of the full grid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset, FoldPlan
from .gmm import responsibilities_batch
from .kernel import KernelSpec, categorical_delta_matrix, continuous_distance_matrix
from .svm import confident_vote_margins, train_multiclass, vote_counts


@dataclass(frozen=True)
class Grid:
    """Search space: powers of ten for C and gamma, step lists for alpha/beta."""

    c_exponents: tuple = (-3, -2, -1, 0, 1, 2)
    gamma_exponents: tuple = (-3, -2, -1, 0, 1, 2)
    alpha_steps: tuple = (1.0,)
    beta_steps: tuple = (1.0,)

    def __post_init__(self):
        if not (self.c_exponents and self.gamma_exponents
                and self.alpha_steps and self.beta_steps):
            raise ValueError("grid axes must be non-empty")
        for v in list(self.alpha_steps) + list(self.beta_steps):
            if not 0.0 <= v <= 1.0:
                raise ValueError("alpha/beta steps must lie in [0, 1]")


@dataclass(frozen=True)
class TuneScore:
    val_error: float
    expected_error: float
    combined: float


@dataclass(frozen=True)
class CellRecord:
    c: float
    gamma: float
    alpha: float
    beta: float
    fold_errors: tuple
    score: TuneScore


@dataclass(frozen=True)
class TuneResult:
    c: float
    gamma: float
    alpha: float
    beta: float
    score: TuneScore
    trace: tuple  # CellRecord per evaluated cell, in evaluation order


class FoldSearchContext:
    """Precomputed distances for tuning within one outer fold.

    Continuous distance and categorical mismatch matrices over the labeled
    subset (and from U to it) are built once; every grid cell then only
    exponentiates, so cell cost does not include responsibility evaluation.
    """

    def __init__(self, ds: Dataset, plan: FoldPlan, fold: int, family: str,
                 model=None, score_model=None, max_unlabeled: int = 2000,
                 seed: int = 0):
        labeled = plan.labeled_idx[fold]
        if labeled is None:
            raise ValueError(f"fold {fold} has no labeled subset selected")
        self.labels = ds.labels[labeled]
        self.inner_folds = [np.searchsorted(labeled, f) for f in plan.inner_folds[fold]]
        self.family = family
        self.model = model
        self.score_model = score_model if score_model is not None else model
        self.resp_u = None
        self.blocks = ds.categorical_blocks()

        unlabeled = plan.unlabeled_idx[fold]
        if unlabeled is not None and len(unlabeled) > max_unlabeled:
            rng = np.random.default_rng(seed)
            unlabeled = np.sort(rng.choice(unlabeled, max_unlabeled, replace=False))
        self.has_u = unlabeled is not None and len(unlabeled) > 0

        spec = KernelSpec(family, 1.0, model if family in ("gmm", "rwm") else None)
        self.cont_l = ds.continuous[labeled]
        self.cat_l = ds.categorical[labeled]
        resp_l = resp_u = None
        if family == "rwm":
            resp_l = responsibilities_batch(model, self.cont_l)
        self.dist_ll = continuous_distance_matrix(spec, self.cont_l, self.cont_l,
                                                  resp_l, resp_l)
        self.delta_ll = (categorical_delta_matrix(self.cat_l, self.cat_l, self.blocks)
                         if self.blocks else None)
        if self.has_u:
            self.cont_u = ds.continuous[unlabeled]
            self.cat_u = ds.categorical[unlabeled]
            if family == "rwm":
                resp_u = responsibilities_batch(model, self.cont_u)
            self.dist_ul = continuous_distance_matrix(spec, self.cont_u, self.cont_l,
                                                      resp_u, resp_l)
            self.delta_ul = (categorical_delta_matrix(self.cat_u, self.cat_l,
                                                      self.blocks)
                             if self.blocks else None)
            if self.score_model is not None:
                self.resp_u = responsibilities_batch(self.score_model, self.cont_u)
                self.resp_l_score = responsibilities_batch(self.score_model,
                                                           self.cont_l)

    def kernel_matrix(self, gamma, alpha, beta) -> np.ndarray:
        sq = alpha * self.dist_ll**2
        if self.delta_ll is not None:
            sq = sq + beta * self.delta_ll**2
        values = np.exp(-gamma * sq)
        values = np.triu(values) + np.triu(values, 1).T
        np.fill_diagonal(values, 1.0)
        return values

    def cross_matrix(self, gamma, alpha, beta) -> np.ndarray:
        sq = alpha * self.dist_ul**2
        if self.delta_ul is not None:
            sq = sq + beta * self.delta_ul**2
        return np.exp(-gamma * sq)

    def linear_matrices(self, beta):
        """Inner-product Grams for the heuristic's first stage (L and U-to-L)."""
        def lin(cont_a, cat_a, delta_ab):
            values = cont_a @ self.cont_l.T
            if delta_ab is not None:
                values = values + beta * (len(self.blocks) - delta_ab)
            return values

        gram = lin(self.cont_l, self.cat_l, self.delta_ll)
        gram = np.triu(gram) + np.triu(gram, 1).T
        cross = (lin(self.cont_u, self.cat_u, self.delta_ul)
                 if self.has_u else None)
        return gram, cross


def _component_impurity(resp_u: np.ndarray, pred: np.ndarray,
                        classes: np.ndarray, resp_l: np.ndarray,
                        y_train: np.ndarray) -> float:
    """Anchored pseudo-label error of U predictions.

    Each mixture component is labeled by the responsibility-weighted majority
    of the training samples assigned to it; the returned value is the fraction
    of U responsibility mass predicted against its component's anchor label.
    Unanchored components contribute their disagreement with the locally
    predicted majority instead.
    """
    onehot_pred = (pred[:, None] == classes[None, :]).astype(float)
    pred_mass = resp_u.T @ onehot_pred            # (K, n_classes)
    mass = pred_mass.sum(axis=1)
    onehot_train = (y_train[:, None] == classes[None, :]).astype(float)
    anchor_mass = resp_l.T @ onehot_train         # (K, n_classes)
    anchored = anchor_mass.sum(axis=1) > 1e-6
    agree = np.where(anchored,
                     pred_mass[np.arange(len(mass)), anchor_mass.argmax(axis=1)],
                     pred_mass.max(axis=1))
    return float((mass - agree).sum() / max(resp_u.shape[0], 1))


def _evaluate_cell(ctx: FoldSearchContext, spec_cell, c: float,
                   kernel_ll: np.ndarray, cross_ul, lam: float,
                   margin_threshold: float, tol: float, max_passes: int,
                   expected_error: str = "auto") -> tuple:
    """Inner-CV mean (val_error, expected_error) for one parameter cell."""
    if expected_error == "auto":
        expected_error = "impurity" if ctx.resp_u is not None else "uncertainty"
    val_errors, exp_errors = [], []
    n = ctx.labels.size
    for val_pos in ctx.inner_folds:
        train_pos = np.setdiff1d(np.arange(n), val_pos)
        y_train = ctx.labels[train_pos]
        if np.unique(y_train).size < 2:
            warnings.warn("inner fold skipped: training part has a single class")
            continue
        sub = kernel_ll[np.ix_(train_pos, train_pos)]
        machine = train_multiclass(sub, y_train, c, spec_cell,
                                   ctx.cont_l[train_pos], ctx.cat_l[train_pos],
                                   ctx.blocks, tol=tol, max_passes=max_passes)
        # validation predictions straight from precomputed kernel rows
        cross_vl = kernel_ll[np.ix_(val_pos, train_pos)]
        votes = vote_counts(machine, cross_vl)
        pred = machine.classes[votes.argmax(axis=1)]
        val_errors.append(float(np.mean(pred != ctx.labels[val_pos])))
        if cross_ul is not None:
            cross = cross_ul[:, train_pos]
            if expected_error == "impurity" and ctx.resp_u is not None:
                votes_u = vote_counts(machine, cross)
                pred_u = machine.classes[votes_u.argmax(axis=1)]
                exp_errors.append(_component_impurity(
                    ctx.resp_u, pred_u, machine.classes,
                    ctx.resp_l_score[train_pos], y_train))
            else:
                margins = confident_vote_margins(machine, cross)
                exp_errors.append(float(np.mean(margins < margin_threshold)))
    if not val_errors:
        raise ValueError("all inner folds degenerate; cannot score cell")
    val = float(np.mean(val_errors))
    exp = float(np.mean(exp_errors)) if exp_errors else 0.0
    return val, exp, TuneScore(val, exp, val + lam * exp)


def _cell_key(record: CellRecord):
    # deterministic argmin: best score, then smallest C, gamma, alpha, beta
    return (record.score.combined, record.c, record.gamma, record.alpha,
            record.beta)


def _search_cells(ctx, spec_template, cells, lam, margin_threshold, tol,
                  max_passes, expected_error):
    trace = []
    for c, gamma, alpha, beta in cells:
        spec_cell = KernelSpec(spec_template.family, gamma, spec_template.model,
                               alpha, beta)
        kernel_ll = ctx.kernel_matrix(gamma, alpha, beta)
        cross_ul = ctx.cross_matrix(gamma, alpha, beta) if ctx.has_u else None
        val, exp, score = _evaluate_cell(ctx, spec_cell, c, kernel_ll, cross_ul,
                                         lam, margin_threshold, tol, max_passes,
                                         expected_error)
        trace.append(CellRecord(c, gamma, alpha, beta, (val,), score))
    return trace


def grid_search(ds: Dataset, plan: FoldPlan, fold: int, spec_template: KernelSpec,
                grid: Grid, *, lam: float = 0.5, margin_threshold: float = 1.0,
                tol: float = 1e-3, max_passes: int = 50_000,
                expected_error: str = "auto",
                context: FoldSearchContext | None = None) -> TuneResult:
    """Evaluate every grid cell; ties break toward smaller C, then gamma."""
    ctx = context or FoldSearchContext(ds, plan, fold, spec_template.family,
                                       spec_template.model)
    cells = [(10.0 ** ci, 10.0 ** gi, a, b)
             for a in grid.alpha_steps for b in grid.beta_steps
             if not (a == 0.0 and b == 0.0)
             for ci in grid.c_exponents for gi in grid.gamma_exponents]
    trace = _search_cells(ctx, spec_template, cells, lam, margin_threshold,
                          tol, max_passes, expected_error)
    best = min(trace, key=_cell_key)
    return TuneResult(best.c, best.gamma, best.alpha, best.beta, best.score,
                      tuple(trace))


def keerthi_lin_search(ds: Dataset, plan: FoldPlan, fold: int,
                       spec_template: KernelSpec, grid: Grid, *,
                       lam: float = 0.5, margin_threshold: float = 1.0,
                       tol: float = 1e-3, max_passes: int = 50_000,
                       expected_error: str = "auto",
                       context: FoldSearchContext | None = None) -> TuneResult:
    """Two-stage heuristic: linear-kernel C line search, then the diagonal.

    Stage one scores each C with a linear-kernel SVM; the best C~ fixes the
    line log10(gamma) = log10(C~) - log10(C).  Stage two scores the grid
    points on that line with the actual kernel family.  At most
    len(c_exponents) + line length cells are trained per (alpha, beta).
    """
    ctx = context or FoldSearchContext(ds, plan, fold, spec_template.family,
                                       spec_template.model)
    trace: list[CellRecord] = []
    best_overall: CellRecord | None = None

    for a in grid.alpha_steps:
        for b in grid.beta_steps:
            if a == 0.0 and b == 0.0:
                continue
            # stage 1: linear kernel, C only
            lin, lin_cross = ctx.linear_matrices(b)
            stage1 = []
            for ci in grid.c_exponents:
                c = 10.0 ** ci
                lin_spec = KernelSpec("rbf", 1.0)  # family unused on a fixed Gram
                val, exp, score = _evaluate_cell(ctx, lin_spec, c, lin, lin_cross,
                                                 lam, margin_threshold, tol,
                                                 max_passes, expected_error)
                rec = CellRecord(c, 0.0, a, b, (val,), score)
                stage1.append((ci, rec))
                trace.append(rec)
            best_ci = min(stage1, key=lambda t: (t[1].score.combined, t[0]))[0]
            # stage 2: slope -1 diagonal gamma * C = C~ (the RBF kernel at small
            # gamma behaves like a linear kernel with penalty gamma * C),
            # restricted to grid points
            line = [(ci, best_ci - ci) for ci in grid.c_exponents
                    if (best_ci - ci) in grid.gamma_exponents]
            if not line:
                # closest representable gamma exponent for each C keeps the
                # heuristic usable on degenerate (single-column) grids
                line = [(ci, min(grid.gamma_exponents,
                                 key=lambda gi: (abs(gi - (best_ci - ci)), gi)))
                        for ci in grid.c_exponents]
            cells = [(10.0 ** ci, 10.0 ** gi, a, b) for ci, gi in line]
            stage2 = _search_cells(ctx, spec_template, cells, lam,
                                   margin_threshold, tol, max_passes,
                                   expected_error)
            trace.extend(stage2)
            cand = min(stage2, key=_cell_key)
            if best_overall is None or _cell_key(cand) < _cell_key(best_overall):
                best_overall = cand

    assert best_overall is not None
    return TuneResult(best_overall.c, best_overall.gamma, best_overall.alpha,
                      best_overall.beta, best_overall.score, tuple(trace))


def write_tuning_trace(result: TuneResult, path) -> None:
    """One line per evaluated cell: C, gamma, alpha, beta, errors, score."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("c gamma alpha beta val_error expected_error combined\n")
        for r in result.trace:
            fh.write(f"{r.c:g} {r.gamma:g} {r.alpha:g} {r.beta:g} "
                     f"{r.score.val_error:.6f} {r.score.expected_error:.6f} "
                     f"{r.score.combined:.6f}\n")
