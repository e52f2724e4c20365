"""Dataset ingestion, normalization, encoding, and cross-validation fold plans.

Datasets carry a continuous part (z-scored units), a binary one-of-K encoded
categorical part, and optional class labels.  Fold plans describe a stratified
outer k-fold split plus, per outer fold, the labeled/unlabeled partition of the
training samples and the inner folds used for hyperparameter selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

UNLABELED = -1

BUDGETS = ("four_times_classes", "ten_percent", "all")


@dataclass(frozen=True)
class ColumnSchema:
    """Schema of a single dataset column."""

    name: str
    kind: str  # "continuous" | "categorical" | "label"
    categories: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical", "label"):
            raise ValueError(f"unknown column kind {self.kind!r} for column {self.name!r}")
        if self.kind == "categorical":
            if not self.categories:
                raise ValueError(f"categorical column {self.name!r} has no categories")
            if len(set(self.categories)) != len(self.categories):
                raise ValueError(f"duplicate categories in column {self.name!r}")
        elif self.categories:
            raise ValueError(f"categories given for non-categorical column {self.name!r}")


@dataclass(frozen=True)
class Sample:
    """One sample: continuous vector, one-of-K categorical bits, optional label."""

    continuous: np.ndarray
    categorical: np.ndarray
    label: int = UNLABELED


@dataclass
class Dataset:
    """Samples plus schema, class set, and normalization metadata.

    ``continuous`` is (N, D); ``categorical`` is a binary (N, E') matrix built
    from one-of-K blocks; ``labels`` holds indices into ``class_ids`` with
    ``UNLABELED`` (-1) marking samples without a class.  ``norm_stats`` records
    the per-continuous-column (mean, stddev) used for z-scoring, present iff
    normalization was applied.
    """

    schema: list[ColumnSchema]
    continuous: np.ndarray
    categorical: np.ndarray
    labels: np.ndarray
    class_ids: list[str]
    norm_stats: list[tuple[float, float]] | None = None

    @property
    def n_samples(self) -> int:
        return self.continuous.shape[0]

    @property
    def n_continuous(self) -> int:
        return self.continuous.shape[1]

    @property
    def n_categorical(self) -> int:
        return sum(1 for c in self.schema if c.kind == "categorical")

    @property
    def n_encoded(self) -> int:
        return self.categorical.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    @property
    def has_categorical(self) -> bool:
        return self.n_encoded > 0

    def sample(self, i: int) -> Sample:
        return Sample(self.continuous[i], self.categorical[i], int(self.labels[i]))

    def categorical_blocks(self) -> list[tuple[int, int]]:
        """(start, stop) column ranges of the one-of-K blocks, in schema order."""
        blocks = []
        start = 0
        for col in self.schema:
            if col.kind == "categorical":
                stop = start + len(col.categories)
                blocks.append((start, stop))
                start = stop
        return blocks


def from_arrays(continuous, labels, class_ids=None, feature_names=None) -> Dataset:
    """Build a continuous-only Dataset from plain arrays (synthetic data path)."""
    X = np.asarray(continuous, dtype=float)
    y = np.asarray(labels, dtype=int)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("continuous must be (N, D) and labels (N,)")
    if class_ids is None:
        present = sorted(int(c) for c in np.unique(y) if c != UNLABELED)
        class_ids = [str(c) for c in present]
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(X.shape[1])]
    schema = [ColumnSchema(n, "continuous") for n in feature_names]
    schema.append(ColumnSchema("class", "label"))
    return Dataset(schema, X, np.zeros((X.shape[0], 0)), y, list(class_ids))


# ---------------------------------------------------------------------------
# schema + CSV loading

def read_schema(schema_path) -> list[ColumnSchema]:
    """Parse a schema file: one line per column, ``name,kind[,cat1|cat2|...]``."""
    columns = []
    with open(schema_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) < 2:
                raise ValueError(f"{schema_path}:{lineno}: expected 'name,kind[,categories]'")
            name, kind = parts[0], parts[1]
            cats: tuple[str, ...] = ()
            if len(parts) >= 3 and parts[2]:
                cats = tuple(c.strip() for c in parts[2].split("|"))
            columns.append(ColumnSchema(name, kind, cats))
    n_label = sum(1 for c in columns if c.kind == "label")
    if n_label != 1:
        raise ValueError(f"{schema_path}: exactly one label column required, found {n_label}")
    return columns


def encode_categorical(value: str, column: ColumnSchema) -> np.ndarray:
    """One-of-K block for a categorical value."""
    block = np.zeros(len(column.categories))
    try:
        block[column.categories.index(value)] = 1.0
    except ValueError:
        raise ValueError(f"unknown category {value!r} for column {column.name!r}") from None
    return block


def decode_categorical(block: np.ndarray, column: ColumnSchema) -> str:
    """Inverse of :func:`encode_categorical`."""
    hot = np.flatnonzero(np.asarray(block) == 1.0)
    if len(hot) != 1:
        raise ValueError(f"block for column {column.name!r} is not one-of-K")
    return column.categories[hot[0]]


def load_dataset(csv_path, schema_path) -> Dataset:
    """Load a header-ed CSV against its schema file.

    The label cell may contain ``?`` to mark an unlabeled sample.  Class ids
    are the sorted distinct label values seen in the file.
    """
    schema = read_schema(schema_path)
    with open(csv_path, encoding="utf-8") as fh:
        rows = [line.rstrip("\n") for line in fh]
    if not rows:
        raise ValueError(f"{csv_path}: empty file")
    header = [h.strip() for h in rows[0].split(",")]
    if len(header) != len(schema):
        raise ValueError(
            f"{csv_path}: header has {len(header)} columns, schema has {len(schema)}")

    cont_cols = [i for i, c in enumerate(schema) if c.kind == "continuous"]
    cat_cols = [i for i, c in enumerate(schema) if c.kind == "categorical"]
    label_col = next(i for i, c in enumerate(schema) if c.kind == "label")

    cont_rows, cat_rows, raw_labels = [], [], []
    for rowno, raw in enumerate(rows[1:], start=2):
        if not raw.strip():
            continue
        cells = [c.strip() for c in raw.split(",")]
        if len(cells) != len(schema):
            raise ValueError(f"{csv_path}: row {rowno}: expected {len(schema)} cells, got {len(cells)}")
        try:
            cont_rows.append([float(cells[i]) for i in cont_cols])
        except ValueError as exc:
            raise ValueError(f"{csv_path}: row {rowno}: {exc}") from None
        blocks = [encode_categorical(cells[i], schema[i]) for i in cat_cols]
        cat_rows.append(np.concatenate(blocks) if blocks else np.zeros(0))
        raw_labels.append(cells[label_col])

    class_ids = sorted({v for v in raw_labels if v != "?"})
    index = {v: k for k, v in enumerate(class_ids)}
    labels = np.array([index.get(v, UNLABELED) for v in raw_labels], dtype=int)
    return Dataset(
        schema,
        np.asarray(cont_rows, dtype=float).reshape(len(raw_labels), len(cont_cols)),
        np.vstack(cat_rows) if cat_rows else np.zeros((0, 0)),
        labels,
        class_ids,
    )


# ---------------------------------------------------------------------------
# normalization

def zscore_normalize(ds: Dataset) -> Dataset:
    """Z-score every continuous column; categorical bits are untouched.

    Uses the sample (N-1) standard deviation.  Constant columns get stddev 1
    so they normalize to zero instead of erroring (small CV folds can produce
    them).  Already-applied stats compose: the returned dataset records the
    stats of this application.
    """
    X = ds.continuous
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.ones(X.shape[1])
    std = np.where(std < 1e-12, 1.0, std)
    stats = [(float(m), float(s)) for m, s in zip(mean, std)]
    return replace(ds, continuous=(X - mean) / std, norm_stats=stats)


# ---------------------------------------------------------------------------
# fold plans

@dataclass
class FoldPlan:
    """Stratified outer folds plus per-fold semi-supervised structure.

    ``outer_folds[f]`` are the test indices of outer fold ``f``.  After
    :func:`select_labeled_subset` has run for a fold, ``labeled_idx[f]`` and
    ``unlabeled_idx[f]`` partition its training indices and ``inner_folds[f]``
    holds 4 disjoint stratified index sets over the labeled subset.
    """

    n_samples: int
    outer_folds: list[np.ndarray]
    seed: int
    labeled_idx: list = field(default_factory=list)
    unlabeled_idx: list = field(default_factory=list)
    inner_folds: list = field(default_factory=list)

    def __post_init__(self):
        k = len(self.outer_folds)
        for name in ("labeled_idx", "unlabeled_idx", "inner_folds"):
            if not getattr(self, name):
                setattr(self, name, [None] * k)

    @property
    def k(self) -> int:
        return len(self.outer_folds)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_samples), self.outer_folds[fold])


def _stratified_partition(labels: np.ndarray, indices: np.ndarray, k: int,
                          rng: np.random.Generator) -> list[np.ndarray]:
    """Split ``indices`` into k folds with per-class counts differing by <= 1."""
    folds: list[list[int]] = [[] for _ in range(k)]
    strata = sorted(set(int(v) for v in labels[indices]))
    for si, cls in enumerate(strata):
        members = indices[labels[indices] == cls]
        members = rng.permutation(members)
        for j, idx in enumerate(members):
            # rotate the starting fold per stratum so remainders spread out
            folds[(j + si) % k].append(int(idx))
    return [np.array(sorted(f), dtype=int) for f in folds]


def stratified_kfold(ds: Dataset, k: int, seed: int) -> FoldPlan:
    """Stratified k-fold split of the whole dataset, deterministic under seed."""
    labeled_mask = ds.labels != UNLABELED
    for cls in range(ds.n_classes):
        count = int(np.sum(ds.labels == cls))
        if count < k:
            raise ValueError(
                f"class {ds.class_ids[cls]!r} has {count} samples, fewer than k={k}")
    rng = np.random.default_rng(seed)
    folds = _stratified_partition(ds.labels, np.arange(ds.n_samples), k, rng)
    del labeled_mask
    return FoldPlan(ds.n_samples, folds, seed)


def select_labeled_subset(ds: Dataset, plan: FoldPlan, fold: int, budget: str,
                          model, seed: int) -> FoldPlan:
    """Choose the labeled subset of one outer fold's training samples.

    ``four_times_classes`` draws 4 samples per class, with probability
    proportional to the mixture density within each class stratum (without
    replacement).  ``ten_percent`` extends that set with uniformly drawn
    samples until ceil(0.1 * |train|) is reached.  ``all`` labels everything.
    The remaining training samples form the unlabeled set U.  Inner 4-fold
    stratified splits over the labeled subset are filled in as well.
    """
    if budget not in BUDGETS:
        raise ValueError(f"unknown budget {budget!r}; expected one of {BUDGETS}")
    rng = np.random.default_rng(seed)
    train_idx = plan.train_indices(fold)
    train_labeled = train_idx[ds.labels[train_idx] != UNLABELED]

    if budget == "all":
        chosen = np.array(sorted(train_labeled), dtype=int)
    else:
        chosen_list: list[int] = []
        for cls in range(ds.n_classes):
            stratum = train_labeled[ds.labels[train_labeled] == cls]
            if len(stratum) < 4:
                raise ValueError(
                    f"class {ds.class_ids[cls]!r} has {len(stratum)} training samples; "
                    "budget needs at least 4 per class")
            chosen_list.extend(density_stratified_choice(ds, stratum, model, 4, rng))
        if budget == "ten_percent":
            target = max(len(chosen_list), math.ceil(0.1 * len(train_idx)))
            remaining = np.setdiff1d(train_labeled, np.array(chosen_list, dtype=int))
            extra = rng.choice(remaining, size=target - len(chosen_list), replace=False)
            chosen_list.extend(int(i) for i in extra)
        chosen = np.array(sorted(chosen_list), dtype=int)

    unlabeled = np.setdiff1d(train_idx, chosen)
    inner = _stratified_partition(ds.labels, chosen, 4, rng)

    new = FoldPlan(plan.n_samples, plan.outer_folds, plan.seed,
                   list(plan.labeled_idx), list(plan.unlabeled_idx), list(plan.inner_folds))
    new.labeled_idx[fold] = chosen
    new.unlabeled_idx[fold] = unlabeled
    new.inner_folds[fold] = inner
    return new


def density_stratified_choice(ds: Dataset, stratum: np.ndarray, model, count: int,
                              rng: np.random.Generator,
                              weighting: str = "components") -> list[int]:
    """Draw ``count`` indices from a stratum, biased toward high model density.

    ``weighting="components"`` (default) spreads the picks round-robin over
    the mixture components the stratum occupies, drawing density-weighted
    within each; this covers every dense region the class lives in instead of
    letting all picks clump in one.  ``"raw"`` draws proportional to p(x)
    over the whole stratum; ``"rank"`` uses 1/rank weights.
    """
    from .gmm import log_density_batch, responsibilities_batch

    logp = log_density_batch(model, ds.continuous[stratum])
    if weighting == "components":
        resp = responsibilities_batch(model, ds.continuous[stratum])
        comp_of = resp.argmax(axis=1)
        densest_first = np.argsort(-resp.sum(axis=0), kind="stable")
        buckets = [np.flatnonzero(comp_of == k) for k in densest_first]
        chosen: list[int] = []
        taken = np.zeros(len(stratum), dtype=bool)
        while len(chosen) < count:
            progressed = False
            for bucket in buckets:
                if len(chosen) >= count:
                    break
                avail = bucket[~taken[bucket]]
                if avail.size == 0:
                    continue
                w = np.exp(logp[avail] - logp[avail].max())
                pick = int(rng.choice(avail, p=w / w.sum()))
                taken[pick] = True
                chosen.append(int(stratum[pick]))
                progressed = True
            if not progressed:
                raise ValueError("stratum smaller than requested label count")
        return chosen
    if weighting == "raw":
        w = np.exp(logp - logp.max())
    elif weighting == "rank":
        order = np.argsort(np.argsort(-logp))
        w = 1.0 / (order + 1.0)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    w = w / w.sum()
    picked = rng.choice(stratum, size=count, replace=False, p=w)
    return [int(i) for i in picked]


def write_fold_manifest(plan: FoldPlan, path) -> None:
    """Serialize a fold plan to a reproducibility manifest (text)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"seed {plan.seed}\n")
        fh.write(f"n_samples {plan.n_samples}\n")
        for f, idx in enumerate(plan.outer_folds):
            fh.write(f"outer {f} " + " ".join(map(str, idx)) + "\n")
        for f in range(plan.k):
            if plan.labeled_idx[f] is not None:
                fh.write(f"labeled {f} " + " ".join(map(str, plan.labeled_idx[f])) + "\n")
                fh.write(f"unlabeled {f} " + " ".join(map(str, plan.unlabeled_idx[f])) + "\n")
                for g, idx in enumerate(plan.inner_folds[f]):
                    fh.write(f"inner {f}.{g} " + " ".join(map(str, idx)) + "\n")
