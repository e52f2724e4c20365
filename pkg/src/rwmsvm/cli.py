"""Command-line surface for the toolkit.

Verbs: fit-gmm, gram, train, predict, tune, bench, levelcurves.  Every verb
accepts --seed; identical invocations produce identical output files (timing
lines aside).  Exit codes: 0 success, 1 usage or configuration error,
2 partial failure (some benchmark cells invalid).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .contours import MEASURES, write_levelcurves
from .data import (UNLABELED, load_dataset, select_labeled_subset,
                   stratified_kfold, write_fold_manifest, zscore_normalize)
from .datasets import SYNTHETIC
from .evaluation import ExperimentConfig, report_text, run_experiment, write_cd_data
from .gmm import (VIHyperParams, fit_em, fit_vi, load_model, representativity,
                  save_model)
from .kernel import FAMILIES, KernelSpec, build_gram, export_gram, psd_check
from .svm import load_svm, predict_batch, save_svm, train_multiclass
from .tuning import Grid, grid_search, keerthi_lin_search, write_tuning_trace


class CliError(Exception):
    """Usage or configuration problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise CliError(message)


def _add_data_flags(p):
    p.add_argument("--data", required=True, help="CSV file (header row, comma separated)")
    p.add_argument("--schema", required=True, help="schema file: name,kind[,cat1|cat2|...]")
    p.add_argument("--no-normalize", action="store_true",
                   help="skip z-score normalization of continuous columns")


def _add_kernel_flags(p, require_gamma=True):
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--gamma", type=float, required=require_gamma, default=None)
    p.add_argument("--model", help="mixture model file (gmm/rwm families)")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)


def build_parser() -> _Parser:
    parser = _Parser(prog="rwmsvm", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("fit-gmm", help="fit a mixture model and persist it")
    _add_data_flags(p)
    p.add_argument("--algo", choices=("vi", "em"), default="vi")
    p.add_argument("--k", type=int, default=1, help="component count (em)")
    p.add_argument("--k-init", type=int, default=10, help="initial components (vi)")
    p.add_argument("--alpha0", type=float, default=1e-3)
    p.add_argument("--beta0", type=float, default=1.0)
    p.add_argument("--w0", type=float, default=1.0)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--prune-weight", type=float, default=1e-3)
    p.add_argument("--representativity-bandwidth", type=float, default=None,
                   help="report symmetric-KL representativity at this bandwidth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gram", help="build and export a kernel matrix")
    _add_data_flags(p)
    _add_kernel_flags(p)
    p.add_argument("--psd-check", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a one-vs-one SVM on labeled rows")
    _add_data_flags(p)
    _add_kernel_flags(p)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--smo-tol", type=float, default=1e-3)
    p.add_argument("--max-passes", type=int, default=100_000)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="classify rows with a saved SVM")
    _add_data_flags(p)
    _add_kernel_flags(p)
    p.add_argument("--svm", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("tune", help="hyperparameter search on outer fold 0")
    _add_data_flags(p)
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--tuner", choices=("grid", "keerthi_lin"), default="grid")
    p.add_argument("--budget", choices=("four_times_classes", "ten_percent", "all"),
                   default="all")
    p.add_argument("--c-exponents", default="-3,-2,-1,0,1,2")
    p.add_argument("--gamma-exponents", default="-3,-2,-1,0,1,2")
    p.add_argument("--alpha-steps", default="1")
    p.add_argument("--beta-steps", default="1")
    p.add_argument("--k-init", type=int, default=10)
    p.add_argument("--w0", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace-out", default=None)

    p = sub.add_parser("bench", help="run a benchmark experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None,
                   help="overrides the seed in the config file")

    p = sub.add_parser("levelcurves", help="emit level-curve data for a measure")
    p.add_argument("--model", required=True)
    p.add_argument("--measure", choices=MEASURES, required=True)
    p.add_argument("--anchor", required=True, help="x,y")
    p.add_argument("--levels", default="0.5,1,1.5,2,2.5,3,3.5")
    p.add_argument("--bbox", required=True, help="xmin,xmax,ymin,ymax")
    p.add_argument("--resolution", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    return parser


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v != "")


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v != "")


def _load(args):
    ds = load_dataset(args.data, args.schema)
    if not args.no_normalize:
        ds = zscore_normalize(ds)
    return ds


def _spec(args, need_model: bool):
    model = None
    if args.family in ("gmm", "rwm"):
        if not args.model:
            raise CliError(f"family {args.family} requires --model")
        model = load_model(args.model)
    elif args.model:
        raise CliError("--model is only valid for gmm/rwm families")
    gamma = args.gamma if args.gamma is not None else 1.0
    return KernelSpec(args.family, gamma, model, args.alpha, args.beta)


def cmd_fit_gmm(args) -> int:
    ds = _load(args)
    X = ds.continuous
    if args.algo == "em":
        model = fit_em(X, args.k, args.seed, args.max_iter, args.tol)
    else:
        hp = VIHyperParams(args.alpha0, args.beta0, args.w0, args.k_init,
                           args.max_iter, args.tol, args.prune_weight, args.seed)
        model = fit_vi(X, hp)
    save_model(model, args.out)
    objective = model.objective_trace[-1] if model.objective_trace.size else float("nan")
    print(f"components {model.k}")
    print(f"objective {objective:.6f}")
    print(f"converged {int(model.converged)}")
    if args.representativity_bandwidth is not None:
        r = representativity(model, X, args.representativity_bandwidth,
                             mc_samples=2000, seed=args.seed)
        print(f"representativity {r:.6f}")
    return 0


def cmd_gram(args) -> int:
    ds = _load(args)
    spec = _spec(args, need_model=True)
    samples = [ds.sample(i) for i in range(ds.n_samples)]
    gram = build_gram(spec, samples, ds.categorical_blocks(),
                      n_threads=max(1, args.threads))
    export_gram(gram, args.out)
    if args.psd_check:
        ok, min_eig = psd_check(gram)
        print(f"psd {'pass' if ok else 'FAIL'} min_eig {min_eig:.6e}")
    return 0


def cmd_train(args) -> int:
    ds = _load(args)
    spec = _spec(args, need_model=True)
    labeled = np.flatnonzero(ds.labels != UNLABELED)
    if labeled.size == 0:
        raise CliError("no labeled rows to train on")
    blocks = ds.categorical_blocks()
    samples = [ds.sample(int(i)) for i in labeled]
    gram = build_gram(spec, samples, blocks, n_threads=max(1, args.threads))
    machine = train_multiclass(gram, ds.labels[labeled], args.c, spec,
                               ds.continuous[labeled], ds.categorical[labeled],
                               blocks, tol=args.smo_tol,
                               max_passes=args.max_passes,
                               class_names=ds.class_ids)
    save_svm(machine, args.out)
    from .svm import count_support_vectors
    print(f"binaries {len(machine.binaries)}")
    print(f"support_vectors {count_support_vectors(machine)}")
    return 0


def cmd_predict(args) -> int:
    ds = _load(args)
    spec = _spec(args, need_model=True)
    machine = load_svm(args.svm, spec)
    pred = predict_batch(machine, ds.continuous, ds.categorical)
    names = machine.class_names
    with open(args.out, "w", encoding="utf-8") as fh:
        for p in pred:
            fh.write((names[int(p)] if names else str(int(p))) + "\n")
    labeled = ds.labels != UNLABELED
    if labeled.any():
        acc = float(np.mean(pred[labeled] == ds.labels[labeled]))
        print(f"accuracy {100.0 * acc:.2f}")
    return 0


def cmd_tune(args) -> int:
    ds = _load(args)
    grid = Grid(_ints(args.c_exponents), _ints(args.gamma_exponents),
                _floats(args.alpha_steps), _floats(args.beta_steps))
    plan = stratified_kfold(ds, 5, args.seed)
    train_idx = plan.train_indices(0)
    model = None
    if args.family in ("gmm", "rwm") or args.budget != "all":
        hp = VIHyperParams(k_init=args.k_init, w0=args.w0, seed=args.seed)
        model = fit_vi(ds.continuous[train_idx], hp)
    plan = select_labeled_subset(ds, plan, 0, args.budget, model, args.seed)
    template = KernelSpec(args.family, 1.0,
                          model if args.family in ("gmm", "rwm") else None)
    search = grid_search if args.tuner == "grid" else keerthi_lin_search
    result = search(ds, plan, 0, template, grid)
    print(f"c {result.c:g}")
    print(f"gamma {result.gamma:g}")
    print(f"alpha {result.alpha:g}")
    print(f"beta {result.beta:g}")
    print(f"val_error {result.score.val_error:.4f}")
    print(f"cells {len(result.trace)}")
    if args.trace_out:
        write_tuning_trace(result, args.trace_out)
    return 0


def parse_bench_config(path) -> ExperimentConfig:
    """key = value lines; ``dataset =`` may repeat.  See README for keys."""
    datasets, kv = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (t.strip() for t in line.split("=", 1))
            if key == "dataset":
                parts = [t.strip() for t in value.split(",")]
                if len(parts) == 2 and parts[1].startswith("synthetic:"):
                    gen = parts[1].split(":", 1)[1]
                    if gen not in SYNTHETIC:
                        raise CliError(f"{path}:{lineno}: unknown synthetic set {gen!r}")
                    datasets.append((parts[0], parts[1]))
                elif len(parts) == 3:
                    datasets.append(tuple(parts))
                else:
                    raise CliError(f"{path}:{lineno}: dataset needs "
                                   "'name,synthetic:<gen>' or 'name,csv,schema'")
            else:
                kv[key] = value
    if not datasets:
        raise CliError(f"{path}: no dataset lines")

    def get(key, cast, default):
        return cast(kv.pop(key)) if key in kv else default

    try:
        grid = Grid(get("c_exponents", _ints, (-3, -2, -1, 0, 1, 2)),
                    get("gamma_exponents", _ints, (-3, -2, -1, 0, 1, 2)),
                    get("alpha_steps", _floats, (1.0,)),
                    get("beta_steps", _floats, (1.0,)))
        vi = VIHyperParams(alpha0=get("vi_alpha0", float, 1e-3),
                           beta0=get("vi_beta0", float, 1.0),
                           w0=get("vi_w0", float, 1.0),
                           k_init=get("vi_k_init", int, 10),
                           max_iter=get("vi_max_iter", int, 500),
                           tol=get("vi_tol", float, 1e-6),
                           prune_weight=get("vi_prune_weight", float, 1e-3))
        cfg = ExperimentConfig(
            datasets=datasets,
            kernels=[k.strip() for k in kv.pop("kernels", "rwm,rbf").split(",")],
            budget=kv.pop("budget", "four_times_classes"),
            grid=grid, vi=vi,
            seed=get("seed", int, 0),
            tuner=kv.pop("tuner", "grid"),
            outer_k=get("outer_k", int, 5),
            normalize=get("normalize", lambda v: v.lower() != "false", True),
            synthetic_n=get("synthetic_n", int, 800),
            psd_audit=get("psd_audit", lambda v: v.lower() == "true", False),
            smo_tol=get("smo_tol", float, 1e-3),
            smo_max_passes=get("smo_max_passes", int, 50_000))
    except (ValueError, KeyError) as exc:
        raise CliError(f"{path}: {exc}") from None
    if kv:
        raise CliError(f"{path}: unknown keys {sorted(kv)}")
    for kern in cfg.kernels:
        if kern not in FAMILIES:
            raise CliError(f"{path}: unknown kernel family {kern!r}")
    return cfg


def cmd_bench(args) -> int:
    import pathlib

    cfg = parse_bench_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.n_threads = max(1, args.threads)
    if args.dry_run:
        for entry in cfg.datasets:
            for kern in cfg.kernels:
                print(f"plan {entry[0]} {kern} budget={cfg.budget} tuner={cfg.tuner}")
        return 0
    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_experiment(cfg)
    (out_dir / "report.txt").write_text(report_text(report), encoding="utf-8")
    if report.avg_ranks is not None:
        write_cd_data(report, out_dir / "cd_data.csv")
    print(report_text(report, include_timing=False), end="")
    return 2 if report.invalid_cells() else 0


def cmd_levelcurves(args) -> int:
    model = load_model(args.model)
    anchor = _floats(args.anchor)
    bbox = _floats(args.bbox)
    if len(anchor) != 2 or len(bbox) != 4:
        raise CliError("--anchor needs x,y and --bbox needs xmin,xmax,ymin,ymax")
    write_levelcurves(args.out, model, args.measure, np.array(anchor),
                      _floats(args.levels), bbox, args.resolution)
    return 0


_COMMANDS = {
    "fit-gmm": cmd_fit_gmm,
    "gram": cmd_gram,
    "train": cmd_train,
    "predict": cmd_predict,
    "tune": cmd_tune,
    "bench": cmd_bench,
    "levelcurves": cmd_levelcurves,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.verb](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
