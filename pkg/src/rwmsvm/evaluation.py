"""End-to-end benchmark protocol and classifier comparison statistics.

One experiment runs, per dataset and outer fold: unsupervised mixture fitting
on the fold's training samples, label-budget subset selection, per-kernel
hyperparameter tuning on an inner 4-fold split, final training on the labeled
subset, and accuracy measurement on the held-out test fold.  Test indices
never reach model fitting, tuning, or subset selection.  Accuracy tables are
compared across kernels with average ranks, shared wins, the Friedman
statistic, and Nemenyi critical differences.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import data as data_mod
from .critical_values import Q_ALPHA
from .data import Dataset, load_dataset, select_labeled_subset, stratified_kfold, zscore_normalize
from .datasets import make_synthetic
from .gmm import VIHyperParams, fit_vi
from .kernel import KernelSpec, gram_values, cross_gram_values, psd_check
from .svm import count_support_vectors, predict_batch, train_multiclass
from .tuning import FoldSearchContext, Grid, grid_search, keerthi_lin_search

STAGES = ("model_estimation", "building", "training", "testing")


@dataclass
class ExperimentConfig:
    """Declarative description of one benchmark run.

    ``datasets`` entries are (name, Dataset), (name, "synthetic:<gen>") or
    (name, csv_path, schema_path).  ``kernels`` lists kernel family names.
    """

    datasets: list
    kernels: list
    budget: str = "four_times_classes"
    grid: Grid = field(default_factory=Grid)
    seed: int = 0
    vi: VIHyperParams = field(default_factory=VIHyperParams)
    tuner: str = "grid"
    outer_k: int = 5
    normalize: bool = True
    synthetic_n: int = 800
    psd_audit: bool = False
    smo_tol: float = 1e-3
    smo_max_passes: int = 50_000
    n_threads: int = 1

    def __post_init__(self):
        if not self.datasets:
            raise ValueError("at least one dataset required")
        if not self.kernels:
            raise ValueError("at least one kernel required")
        if self.tuner not in ("grid", "keerthi_lin"):
            raise ValueError(f"unknown tuner {self.tuner!r}")
        if self.budget not in data_mod.BUDGETS:
            raise ValueError(f"unknown budget {self.budget!r}")


@dataclass
class CellResult:
    """Per (dataset, kernel): fold accuracies, support vectors, timings."""

    dataset: str
    kernel: str
    fold_accuracies: list = field(default_factory=list)
    fold_sv_counts: list = field(default_factory=list)
    times: dict = field(default_factory=lambda: {s: 0.0 for s in STAGES})
    fold_wall_time: float = 0.0
    chosen_params: list = field(default_factory=list)
    psd_results: list = field(default_factory=list)  # (fold, is_psd, min_eig)
    error: str | None = None

    @property
    def valid(self) -> bool:
        return self.error is None and bool(self.fold_accuracies)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.fold_accuracies, ddof=1)) if len(self.fold_accuracies) > 1 else 0.0

    @property
    def mean_sv(self) -> float:
        return float(np.mean(self.fold_sv_counts))


@dataclass
class EvalReport:
    """Aggregated experiment outcome plus comparison statistics."""

    config_summary: str
    dataset_names: list
    kernel_names: list
    cells: dict                      # (dataset, kernel) -> CellResult
    avg_ranks: np.ndarray | None = None
    wins_row: np.ndarray | None = None
    friedman_chi2: float | None = None
    cd: dict = field(default_factory=dict)   # alpha -> critical difference

    def accuracy_table(self) -> np.ndarray:
        rows = []
        for ds in self.dataset_names:
            rows.append([self.cells[(ds, k)].mean_accuracy for k in self.kernel_names])
        return np.array(rows)

    def invalid_cells(self) -> list:
        return [key for key, cell in self.cells.items() if not cell.valid]


# ---------------------------------------------------------------------------
# comparison statistics

def friedman_ranks(acc_table) -> tuple[np.ndarray, float]:
    """Average ranks (1 = best accuracy, ties averaged) and the Friedman chi^2."""
    table = np.asarray(acc_table, dtype=float)
    if np.isnan(table).any():
        raise ValueError("accuracy table contains NaN")
    n, s = table.shape
    if n < 1 or s < 2:
        raise ValueError("need at least 1 dataset and 2 classifiers")
    ranks = np.vstack([rankdata(-row) for row in table])
    avg = ranks.mean(axis=0)
    chi2 = 12.0 * n / (s * (s + 1)) * (np.sum(avg**2) - s * (s + 1) ** 2 / 4.0)
    return avg, float(chi2)


def nemenyi_cd(s: int, n: int, alpha: float) -> float:
    """Critical rank difference q_alpha * sqrt(S(S+1) / 6N)."""
    levels = {round(a, 2): a for a in Q_ALPHA}
    key = round(alpha, 2)
    if key not in levels:
        raise ValueError(f"unsupported significance level {alpha}")
    table = Q_ALPHA[levels[key]]
    if s not in table:
        raise ValueError(f"classifier count {s} outside tabulated range 2..10")
    return table[s] * np.sqrt(s * (s + 1) / (6.0 * n))


def wins(acc_table) -> np.ndarray:
    """Per-classifier win counts; a tied dataset splits its win equally."""
    table = np.asarray(acc_table, dtype=float)
    out = np.zeros(table.shape[1])
    for row in table:
        best = row.max()
        tied = row == best
        out[tied] += 1.0 / tied.sum()
    return out


# ---------------------------------------------------------------------------
# protocol

def _resolve_dataset(entry, cfg: ExperimentConfig) -> tuple[str, Dataset]:
    if len(entry) == 3:
        name, csv_path, schema_path = entry
        return name, load_dataset(csv_path, schema_path)
    name, source = entry
    if isinstance(source, Dataset):
        return name, source
    if isinstance(source, str) and source.startswith("synthetic:"):
        gen = source.split(":", 1)[1]
        return name, make_synthetic(gen, n=cfg.synthetic_n, seed=cfg.seed)
    raise ValueError(f"cannot resolve dataset entry {entry!r}")


def _tune(cfg, ds, plan, fold, spec_template, ctx):
    search = grid_search if cfg.tuner == "grid" else keerthi_lin_search
    return search(ds, plan, fold, spec_template, cfg.grid, context=ctx,
                  tol=cfg.smo_tol, max_passes=cfg.smo_max_passes)


def run_experiment(cfg: ExperimentConfig) -> EvalReport:
    """Run the full protocol and aggregate an evaluation report.

    A failing (dataset, kernel) cell is recorded with its error message and
    excluded from the rank statistics instead of aborting the run.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.datasets))
    dataset_names, cells = [], {}

    for d_idx, entry in enumerate(cfg.datasets):
        name, ds = _resolve_dataset(entry, cfg)
        dataset_names.append(name)
        if cfg.normalize:
            ds = zscore_normalize(ds)
        ds_seed = int(seeds[d_idx].generate_state(1)[0] % (2**31))
        for kern in cfg.kernels:
            cells[(name, kern)] = CellResult(name, kern)
        try:
            plan = stratified_kfold(ds, cfg.outer_k, ds_seed)
        except ValueError as exc:
            for kern in cfg.kernels:
                cells[(name, kern)].error = str(exc)
            continue

        for fold in range(cfg.outer_k):
            try:
                fold_data = _prepare_fold(cfg, ds, plan, fold, ds_seed)
            except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
                for kern in cfg.kernels:
                    cells[(name, kern)].error = f"fold {fold}: {exc}"
                continue
            for kern in cfg.kernels:
                cell = cells[(name, kern)]
                if cell.error is not None:
                    continue
                try:
                    _run_cell(cfg, ds, fold_data, kern, fold, cell)
                except Exception as exc:  # noqa: BLE001
                    cell.error = f"fold {fold}: {exc}"

    report = EvalReport(_config_summary(cfg), dataset_names, list(cfg.kernels), cells)
    _attach_statistics(report)
    return report


@dataclass
class _FoldData:
    plan: object
    model: object
    model_time: float
    test_idx: np.ndarray
    contexts: dict = field(default_factory=dict)


def _prepare_fold(cfg, ds, plan, fold, ds_seed) -> _FoldData:
    test_idx = plan.outer_folds[fold]
    train_idx = plan.train_indices(fold)
    t0 = time.perf_counter()
    hp = VIHyperParams(alpha0=cfg.vi.alpha0, beta0=cfg.vi.beta0, w0=cfg.vi.w0,
                       k_init=min(cfg.vi.k_init, max(1, len(train_idx) // 2)),
                       max_iter=cfg.vi.max_iter, tol=cfg.vi.tol,
                       prune_weight=cfg.vi.prune_weight,
                       seed=ds_seed + 1000 + fold)
    model = fit_vi(ds.continuous[train_idx], hp)
    model_time = time.perf_counter() - t0

    plan = select_labeled_subset(ds, plan, fold, cfg.budget, model,
                                 seed=ds_seed + 2000 + fold)
    # leakage guard: the test fold must stay out of every selection set
    assert np.intersect1d(test_idx, plan.labeled_idx[fold]).size == 0
    assert np.intersect1d(test_idx, plan.unlabeled_idx[fold]).size == 0
    return _FoldData(plan, model, model_time, test_idx)


def _run_cell(cfg, ds, fold_data, kern, fold, cell: CellResult):
    t_fold = time.perf_counter()
    plan, model = fold_data.plan, fold_data.model
    needs_model = kern in ("gmm", "rwm")
    spec_template = KernelSpec(kern, 1.0, model if needs_model else None)
    blocks = ds.categorical_blocks()
    if ds.has_categorical and len(cfg.grid.alpha_steps) == 1 == len(cfg.grid.beta_steps):
        warnings.warn("categorical dataset tuned with fixed alpha/beta")

    if kern not in fold_data.contexts:
        # the fold's mixture also scores U consistency for model-free kernels
        fold_data.contexts[kern] = FoldSearchContext(ds, plan, fold, kern,
                                                     model if needs_model else None,
                                                     score_model=model)
    result = _tune(cfg, ds, plan, fold, spec_template, fold_data.contexts[kern])
    spec = KernelSpec(kern, result.gamma, model if needs_model else None,
                      result.alpha, result.beta)
    labeled = plan.labeled_idx[fold]

    t0 = time.perf_counter()
    train_gram = gram_values(spec, ds.continuous[labeled], ds.categorical[labeled],
                             blocks, n_threads=cfg.n_threads)
    build_time = time.perf_counter() - t0
    if cfg.psd_audit and kern == "rwm":
        ok, min_eig = psd_check(train_gram)
        cell.psd_results.append((fold, ok, min_eig))

    t0 = time.perf_counter()
    machine = train_multiclass(train_gram, ds.labels[labeled], result.c, spec,
                               ds.continuous[labeled], ds.categorical[labeled],
                               blocks, tol=cfg.smo_tol,
                               max_passes=cfg.smo_max_passes)
    train_time = time.perf_counter() - t0

    test_idx = fold_data.test_idx
    t0 = time.perf_counter()
    pred = predict_batch(machine, ds.continuous[test_idx], ds.categorical[test_idx])
    test_time = time.perf_counter() - t0

    accuracy = float(np.mean(pred == ds.labels[test_idx]))
    cell.fold_accuracies.append(100.0 * accuracy)
    cell.fold_sv_counts.append(count_support_vectors(machine))
    cell.chosen_params.append((result.c, result.gamma, result.alpha, result.beta))
    cell.times["model_estimation"] += fold_data.model_time if needs_model else 0.0
    cell.times["building"] += build_time
    cell.times["training"] += train_time
    cell.times["testing"] += test_time
    cell.fold_wall_time += time.perf_counter() - t_fold + (
        fold_data.model_time if needs_model else 0.0)


def _attach_statistics(report: EvalReport) -> None:
    if len(report.kernel_names) < 2:
        warnings.warn("rank statistics need at least two kernels; omitted")
        return
    if report.invalid_cells():
        warnings.warn("invalid cells present; rank statistics omitted")
        return
    table = report.accuracy_table()
    report.avg_ranks, report.friedman_chi2 = friedman_ranks(table)
    report.wins_row = wins(table)
    s, n = len(report.kernel_names), len(report.dataset_names)
    if 2 <= s <= 10:
        report.cd = {a: float(nemenyi_cd(s, n, a)) for a in (0.01, 0.05, 0.1)}


def _config_summary(cfg: ExperimentConfig) -> str:
    return (f"budget={cfg.budget} tuner={cfg.tuner} seed={cfg.seed} "
            f"outer_k={cfg.outer_k} kernels={','.join(cfg.kernels)}")


# ---------------------------------------------------------------------------
# report rendering

def runtime_ledger(report: EvalReport) -> list[tuple]:
    """(dataset, kernel, stage, seconds-per-fold) rows, fold-averaged."""
    rows = []
    for ds in report.dataset_names:
        for kern in report.kernel_names:
            cell = report.cells[(ds, kern)]
            folds = max(len(cell.fold_accuracies), 1)
            for stage in STAGES:
                rows.append((ds, kern, stage, cell.times[stage] / folds))
    return rows


def report_text(report: EvalReport, include_timing: bool = True) -> str:
    """Machine-parseable key-value rendering of an evaluation report."""
    lines = [f"experiment {report.config_summary}"]
    for ds in report.dataset_names:
        for kern in report.kernel_names:
            cell = report.cells[(ds, kern)]
            if not cell.valid:
                lines.append(f"cell {ds} {kern} invalid {cell.error}")
                continue
            accs = " ".join(f"{a:.4f}" for a in cell.fold_accuracies)
            lines.append(f"cell {ds} {kern} mean_accuracy {cell.mean_accuracy:.4f} "
                         f"std {cell.std_accuracy:.4f} mean_sv {cell.mean_sv:.1f} "
                         f"folds {accs}")
            for fold, ok, eig in cell.psd_results:
                lines.append(f"psd {ds} {kern} fold {fold} "
                             f"{'pass' if ok else 'FAIL'} min_eig {eig:.3e}")
    if report.avg_ranks is not None:
        ranks = " ".join(f"{k}={r:.4f}" for k, r in
                         zip(report.kernel_names, report.avg_ranks))
        lines.append(f"rank {ranks}")
        wins_s = " ".join(f"{k}={w:g}" for k, w in
                          zip(report.kernel_names, report.wins_row))
        lines.append(f"win {wins_s}")
        lines.append(f"friedman_chi2 {report.friedman_chi2:.4f}")
        for a, cd in sorted(report.cd.items()):
            lines.append(f"cd alpha={a:g} {cd:.4f}")
    if include_timing:
        for dsn, kern, stage, secs in runtime_ledger(report):
            lines.append(f"time {dsn} {kern} {stage} {secs:.3f}")
    return "\n".join(lines) + "\n"


def cd_plot_data(report: EvalReport, alpha: float) -> list[tuple]:
    """Rows (alpha, cd, classifier, avg_rank, group_id) for a CD plot.

    Classifiers are grouped by transitive closure of "rank difference below
    the critical difference".
    """
    if report.avg_ranks is None:
        raise ValueError("report carries no rank statistics")
    cd = report.cd.get(alpha)
    if cd is None:
        cd = float(nemenyi_cd(len(report.kernel_names),
                              len(report.dataset_names), alpha))
    ranks = report.avg_ranks
    s = len(ranks)
    group = list(range(s))

    def find(i):
        while group[i] != i:
            group[i] = group[group[i]]
            i = group[i]
        return i

    for i in range(s):
        for j in range(i + 1, s):
            if abs(ranks[i] - ranks[j]) < cd:
                group[find(i)] = find(j)
    roots = {find(i) for i in range(s)}
    renumber = {r: gid for gid, r in enumerate(sorted(roots, key=lambda r: ranks[r]))}
    return [(alpha, cd, report.kernel_names[i], float(ranks[i]), renumber[find(i)])
            for i in range(s)]


def write_cd_data(report: EvalReport, path, alphas=(0.01, 0.05, 0.1)) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("alpha,cd,classifier,avg_rank,group_id\n")
        for a in alphas:
            for row in cd_plot_data(report, a):
                fh.write(f"{row[0]:g},{row[1]:.4f},{row[2]},{row[3]:.4f},{row[4]}\n")
