"""Reproducible experiment runner.

Subcommands: generate, train, compare, highdim, analyze, grid-search.
Exit codes: 0 success, 2 usage error, 3 data error, 4 divergence abort.

Option values resolve in three layers: command-line flags override a plain
``key = value`` config file (``--config``), which overrides the built-in
defaults.  Boolean switches are flag-only.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from dualcl.analysis import duality_checks, fit_decay_rates, subspace_residuals
from dualcl.datasets import (
    KINDS,
    DataError,
    Dataset,
    GeneratorSpec,
    load_csv,
    make,
    normalize,
    save_csv,
)
from dualcl.layers import load_model
from dualcl.linalg import svd
from dualcl.loss import assign, chl_edges
from dualcl.trainer import (
    DEFAULT_EPOCHS,
    DEFAULT_K,
    DEFAULT_LAMBDA,
    MODEL_KINDS,
    ExperimentSpec,
    TrainConfig,
    TrainingDiverged,
    accuracy,
    forward,
    grid_search,
    load_trace,
    run_experiment,
    spec_hash,
    train,
    write_csv,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

# number of prototypes per sample in the high-dimensional sweep
HIGHDIM_CENTROID_FRACTION = 10
HIGHDIM_SAMPLES = 100
HIGHDIM_FEATURES = (1000, 2000)
HIGHDIM_RECORD_EVERY = 10
# stability margin for the dual step size against the top data variance
DCL_STEP_SAFETY = 0.25
DEEP_HIGHDIM_LR = 0.002

CONFIG_KEYS = {
    "kind",
    "n",
    "features",
    "noise",
    "clusters",
    "model",
    "models",
    "k",
    "epochs",
    "lr",
    "lambda",
    "seed",
    "reps",
    "jobs",
    "record_every",
    "out",
}


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise DataError(f"{path}: line {lineno}: unknown option {key!r}")
        out[key] = value
    return out


class Options:
    """Layered option lookup: flags, then config file, then defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file = read_config_file(args.config) if getattr(args, "config", None) else {}

    def get(self, key: str, default=None, cast=str):
        flag = getattr(self.args, key.replace("-", "_"), None)
        if flag is not None:
            return flag
        if key in self.file:
            raw = self.file[key]
            if cast is bool:
                return raw.lower() in ("1", "true", "yes")
            return cast(raw)
        return default

    def get_list(self, key: str, default, cast):
        flag = getattr(self.args, key.replace("-", "_"), None)
        if flag is not None:
            return list(flag)
        if key in self.file:
            return [cast(tok) for tok in self.file[key].replace(",", " ").split()]
        return list(default)


def _model_list(opts: Options, default: str) -> list[str]:
    raw = opts.get("models", default)
    models = [m.strip() for m in raw.split(",") if m.strip()]
    for m in models:
        if m not in MODEL_KINDS:
            raise DataError(f"unknown model kind {m!r}, expected one of {MODEL_KINDS}")
    if not models:
        raise DataError("at least one model kind is required")
    return models


def _generator_spec(opts: Options, kind: str) -> GeneratorSpec:
    default_features = 1000 if kind == "madelon" else 2
    return GeneratorSpec(
        kind=kind,
        n_samples=opts.get("n", 500, int),
        n_features=opts.get("features", default_features, int),
        noise=opts.get("noise", 0.05, float),
        n_clusters=opts.get("clusters", 2, int),
        seed=opts.get("seed", 0, int),
    )


def _load_dataset(opts: Options) -> tuple[Dataset, dict]:
    """Dataset plus the JSON description recorded in bundle configs."""
    data_path = getattr(opts.args, "data", None)
    if data_path:
        ds = normalize(load_csv(data_path))
        return ds, {"kind": "csv", "path": str(data_path)}
    kind = opts.get("kind", None)
    if kind is None:
        raise DataError("either --kind or --data is required")
    spec = _generator_spec(opts, kind)
    return normalize(make(spec)), spec.to_dict()


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args: argparse.Namespace) -> int:
    opts = Options(args)
    spec = _generator_spec(opts, args.kind)
    ds = make(spec)
    if not args.raw:
        ds = normalize(ds)
    out = Path(opts.get("out", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{spec.kind}.csv"
    save_csv(ds, csv_path)
    s = svd(ds.X).singular_values
    sidecar = {
        "spec": spec.to_dict(),
        "normalized": not args.raw,
        "max_singular_value": float(s[0]),
        "min_singular_value": float(s[-1]),
    }
    sidecar["spec_hash"] = spec_hash(sidecar["spec"])
    (out / f"{spec.kind}.json").write_text(json.dumps(sidecar, sort_keys=True, indent=1))
    print(f"wrote {csv_path} ({ds.d} features x {ds.n} samples)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _train_config(opts: Options, model: str, **overrides) -> TrainConfig:
    fields = dict(
        model_kind=model,
        k=opts.get("k", DEFAULT_K, int),
        epochs=opts.get("epochs", DEFAULT_EPOCHS, int),
        learning_rate=opts.get("lr", None, float),
        lam=opts.get("lambda", DEFAULT_LAMBDA, float),
        seed=opts.get("seed", 0, int),
        record_every=opts.get("record_every", 1, int),
        freeze_assignment=bool(getattr(opts.args, "freeze_assignment", False)),
        dcl_bias=bool(getattr(opts.args, "dcl_bias", False)),
    )
    fields.update(overrides)
    return TrainConfig(**fields)


def cmd_train(args: argparse.Namespace) -> int:
    opts = Options(args)
    ds, ds_doc = _load_dataset(opts)
    cfg = _train_config(opts, args.model)
    spec = ExperimentSpec(
        dataset=None,
        models=(cfg,),
        repetitions=opts.get("reps", 1, int),
        jobs=opts.get("jobs", 1, int),
    )
    out = Path(opts.get("out", "runs"))
    run_experiment(spec, out, dataset=ds, dataset_doc=ds_doc)
    print(f"bundle written to {out / cfg.model_kind}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args: argparse.Namespace) -> int:
    from dualcl import plots

    opts = Options(args)
    kind = opts.get("kind", "moons")
    spec = _generator_spec(opts, kind)
    models = _model_list(opts, "vcl,dcl")
    configs = tuple(_train_config(opts, m) for m in models)
    reps = opts.get("reps", 10, int)
    out = Path(opts.get("out", "runs"))
    experiment = ExperimentSpec(
        dataset=spec, models=configs, repetitions=reps, jobs=opts.get("jobs", 1, int)
    )
    aggregates = run_experiment(experiment, out)

    rows = []
    for model in models:
        agg = aggregates[model]
        for t in range(agg["epoch"].shape[0]):
            rows.append(
                (
                    model,
                    int(agg["epoch"][t]),
                    float(agg["quantization_mean"][t]),
                    float(agg["quantization_sem"][t]),
                    float(agg["edge_norm_mean"][t]),
                    float(agg["edge_norm_sem"][t]),
                    float(agg["valid_count_mean"][t]),
                    float(agg["valid_count_sem"][t]),
                )
            )
    write_csv(
        out / "comparison.csv",
        [
            "model",
            "epoch",
            "quantization_mean",
            "quantization_sem",
            "edge_norm_mean",
            "edge_norm_sem",
            "valid_count_mean",
            "valid_count_sem",
        ],
        rows,
    )

    plot_dir = out / "plots"
    plots.metric_curves(aggregates, "quantization", "quantization error", plot_dir / "quantization.svg")
    plots.metric_curves(aggregates, "edge_norm", "edge matrix norm", plot_dir / "edge_norm.svg")
    plots.metric_curves(aggregates, "valid_count", "valid prototypes", plot_dir / "valid_count.svg")

    ds = normalize(make(spec))
    for model in models:
        run_dir = out / model / "seed_000"
        final_model = load_model(run_dir / "model.json")
        features, protos = forward(final_model, ds.X)
        edges = chl_edges(assign(features, protos), protos)
        plots.topology_plot(
            features,
            ds.labels,
            protos,
            edges.occupancy,
            plot_dir / f"topology_{model}.svg",
            title=f"{model} on {spec.kind}",
        )
        trace = load_trace(run_dir)
        plots.trajectory_plot(
            features,
            ds.labels,
            trace.prototypes,
            plot_dir / f"trajectories_{model}.svg",
            title=f"{model} prototype paths",
        )
    print(f"comparison written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# highdim


def _highdim_cell(task: tuple) -> tuple:
    spec_doc, cfg, rep, model = task
    ds = normalize(make(GeneratorSpec(**spec_doc)))
    trained, _ = train(ds, replace(cfg, seed=cfg.seed + rep))
    return model, spec_doc["n_features"], rep, accuracy(trained, ds)


def cmd_highdim(args: argparse.Namespace) -> int:
    from dualcl import plots

    opts = Options(args)
    feature_list = [int(v) for v in opts.get_list("features", HIGHDIM_FEATURES, int)]
    n = opts.get("n", HIGHDIM_SAMPLES, int)
    reps = opts.get("reps", 10, int)
    seed = opts.get("seed", 0, int)
    epochs = opts.get("epochs", DEFAULT_EPOCHS, int)
    jobs = opts.get("jobs", 1, int)
    models = _model_list(opts, "vcl,dcl,deep_dcl")
    k = max(2, n // HIGHDIM_CENTROID_FRACTION)
    out = Path(opts.get("out", "runs"))
    lam = opts.get("lambda", DEFAULT_LAMBDA, float)
    lr_flag = opts.get("lr", None, float)

    tasks = []
    for n_f in feature_list:
        spec = GeneratorSpec(
            kind="madelon",
            n_samples=n,
            n_features=n_f,
            n_clusters=opts.get("clusters", 2, int),
            seed=seed,
        )
        ds = normalize(make(spec))
        sigma_sq = float(svd(ds.X).singular_values[0] ** 2)
        for model in models:
            if lr_flag is not None:
                lr = lr_flag
            elif model == "dcl":
                lr = DCL_STEP_SAFETY / sigma_sq
            elif model == "deep_dcl":
                lr = DEEP_HIGHDIM_LR
            else:
                lr = TrainConfig(model_kind="vcl").lr
            cfg = TrainConfig(
                model_kind=model,
                k=k,
                epochs=epochs,
                learning_rate=lr,
                lam=lam,
                seed=seed,
                record_every=HIGHDIM_RECORD_EVERY,
            )
            for rep in range(reps):
                tasks.append((spec.to_dict(), cfg, rep, model))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_highdim_cell, tasks))
    else:
        results = [_highdim_cell(t) for t in tasks]
    results.sort(key=lambda r: (r[1], models.index(r[0]), r[2]))

    write_csv(
        out / "accuracy_runs.csv",
        ["model", "n_features", "rep", "accuracy"],
        [(m, int(nf), int(rep), acc) for m, nf, rep, acc in results],
    )

    summary_rows = []
    for n_f in feature_list:
        for model in models:
            accs = np.array([r[3] for r in results if r[0] == model and r[1] == n_f])
            sem = accs.std(ddof=1) / np.sqrt(len(accs)) if len(accs) > 1 else 0.0
            summary_rows.append((model, int(n_f), float(accs.mean()), float(sem)))
    write_csv(
        out / "accuracy_vs_features.csv",
        ["model", "n_features", "accuracy_mean", "accuracy_sem"],
        summary_rows,
    )
    plots.accuracy_plot(summary_rows, out / "accuracy_vs_features.svg")
    print(f"high-dimensional sweep written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(str(path))
    return path


def cmd_analyze(args: argparse.Namespace) -> int:
    from dualcl import plots

    opts = Options(args)
    bundle = Path(args.bundle)
    config = json.loads(_require(bundle / "config.json").read_text())
    run_dir = bundle / f"seed_{args.run:03d}"
    _require(run_dir / "trace.csv")
    _require(run_dir / "trajectories.csv")
    _require(run_dir / "model.json")

    ds_doc = config["dataset"]
    if ds_doc.get("kind") == "csv":
        ds = normalize(load_csv(ds_doc["path"]))
    else:
        ds = normalize(make(GeneratorSpec(**ds_doc)))
    trace = load_trace(run_dir)
    factors = svd(ds.X)
    kind = config["train"]["model_kind"]
    eps = float(config["train"]["learning_rate"])

    # decay-rate fits per prototype; dual prototypes live in the data range,
    # so their deviations are projected on the left singular basis
    if kind == "vcl":
        directions = np.eye(ds.d)
        predicted = [-1.0] * ds.d
    else:
        directions = factors.u
        predicted = [
            -float(factors.singular_values[i] ** 2) if i < factors.rank else 0.0
            for i in range(ds.d)
        ]
    # fixed point per prototype: the centroid of its Voronoi cell (the final
    # snapshot is used for empty cells); frozen runs keep their first
    # assignment for the whole training, so reproduce that one
    model = load_model(run_dir / "model.json")
    features, protos = forward(model, ds.X)
    if config["train"].get("freeze_assignment"):
        final_assign = assign(features, trace.prototypes[0])
    else:
        final_assign = assign(features, protos)
    k = trace.prototypes.shape[2]
    fitted_by_mode: list[list[float]] = [[] for _ in range(ds.d)]
    for j in range(k):
        members = final_assign.winner1 == j
        center = (
            features[:, members].mean(axis=1) if members.any() else trace.prototypes[-1, :, j]
        )
        fit = fit_decay_rates(
            trace.prototypes[:, :, j], factors, eps, center=center, directions=directions
        )
        for i in range(min(ds.d, fit.n_modes)):
            if fit.observable[i]:
                fitted_by_mode[i].append(float(fit.rates[i]))
    modes = []
    for i in range(ds.d):
        vals = fitted_by_mode[i]
        modes.append(
            {
                "mode": i,
                "predicted_rate": predicted[i],
                "fitted_rate": float(np.median(vals)) if vals else None,
                "observable_prototypes": len(vals),
            }
        )

    residuals = np.stack(
        [
            subspace_residuals(trace.prototypes[t], ds.X, "range_X").residual_norms
            for t in range(trace.prototypes.shape[0])
        ]
    )
    report = {
        "bundle": str(bundle),
        "run": args.run,
        "model_kind": kind,
        # the mapping below treats each Voronoi cell as holding one sample;
        # multiply fitted rates by 1/cell_size to compare cells of size > 1
        "time_mapping": "t = 2 * eps * epoch / n_samples",
        "eps": eps,
        "cell_sizes": final_assign.counts.tolist(),
        "duality": duality_checks(ds.X).to_dict(),
        "modes": modes,
        "subspace": {
            "basis_rank": subspace_residuals(trace.prototypes[0], ds.X).basis_rank,
            "epochs": trace.epochs.tolist(),
            "max_residual": residuals.max(axis=1).tolist(),
            "mean_residual": residuals.mean(axis=1).tolist(),
        },
    }
    out = Path(opts.get("out", None) or (bundle / "analysis"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "analysis.json").write_text(json.dumps(report, sort_keys=True, indent=1))
    plots.rates_plot(
        [m for m in modes if m["fitted_rate"] is not None] or modes,
        out / "rates.svg",
    )
    plots.residual_curves(trace.epochs, residuals, out / "residuals.svg")
    print(f"analysis written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# grid-search


def cmd_grid_search(args: argparse.Namespace) -> int:
    opts = Options(args)
    ds, _ = _load_dataset(opts)
    lrs = [float(v) for v in opts.get_list("lr", [0.0008, 0.008], float)]
    lams = [float(v) for v in opts.get_list("lambda", [DEFAULT_LAMBDA], float)]
    ks = [int(v) for v in opts.get_list("k", [DEFAULT_K], int)]
    model = opts.get("model", None) or "dcl"
    grid = [
        _train_config(opts, model, learning_rate=lr, lam=lam, k=kk)
        for lr in lrs
        for lam in lams
        for kk in ks
    ]
    results = grid_search(ds, grid, repetitions=opts.get("reps", 1, int))
    out = Path(opts.get("out", "runs"))
    rows = []
    for rank, res in enumerate(results):
        cfg = res.config
        rows.append(
            (
                rank,
                cfg.model_kind,
                cfg.k,
                cfg.epochs,
                cfg.lr,
                cfg.lam,
                cfg.seed,
                res.mean_quantization,
                res.mean_edge_norm,
            )
        )
    write_csv(
        out / "grid.csv",
        ["rank", "model", "k", "epochs", "lr", "lambda", "seed", "mean_quantization", "mean_edge_norm"],
        rows,
    )
    best = results[0].config
    print(f"best: lr={best.lr} lambda={best.lam} k={best.k} -> {results[0].mean_quantization:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualcl",
        description="Competitive-learning experiments with vanilla and dual layers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value option file")
        p.add_argument("--seed", type=int, help="base random seed")
        p.add_argument("--out", help="output directory")

    gen = sub.add_parser("generate", help="write a dataset CSV plus JSON sidecar")
    add_common(gen)
    gen.add_argument("--kind", required=True, choices=KINDS)
    gen.add_argument("--n", type=int, help="number of samples")
    gen.add_argument("--features", type=int, help="feature count (madelon)")
    gen.add_argument("--noise", type=float, help="gaussian noise std")
    gen.add_argument("--clusters", type=int, help="cluster count (madelon)")
    gen.add_argument("--raw", action="store_true", help="skip normalization")
    gen.set_defaults(func=cmd_generate)

    def add_train_flags(p, with_model=True):
        if with_model:
            p.add_argument("--model", choices=MODEL_KINDS, default="dcl")
        p.add_argument("--kind", choices=KINDS, help="generator kind")
        p.add_argument("--data", help="dataset CSV (alternative to --kind)")
        p.add_argument("--n", type=int, help="number of samples")
        p.add_argument("--features", type=int, help="feature count (madelon)")
        p.add_argument("--noise", type=float, help="gaussian noise std")
        p.add_argument("--clusters", type=int, help="cluster count (madelon)")
        p.add_argument("--k", type=int, help="number of prototypes")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float, help="learning rate")
        p.add_argument("--lambda", dest="lambda", type=float, help="edge-norm weight")
        p.add_argument("--reps", type=int, help="repetitions (seeds)")
        p.add_argument("--jobs", type=int, help="parallel workers")
        p.add_argument("--record-every", type=int, dest="record_every")
        p.add_argument("--freeze-assignment", action="store_true")
        p.add_argument("--dcl-bias", action="store_true")

    tr = sub.add_parser("train", help="train one model and persist a run bundle")
    add_common(tr)
    add_train_flags(tr)
    tr.set_defaults(func=cmd_train)

    cm = sub.add_parser("compare", help="train several model kinds and plot metrics")
    add_common(cm)
    add_train_flags(cm, with_model=False)
    cm.add_argument("--models", help="comma-separated model kinds (default vcl,dcl)")
    cm.set_defaults(func=cmd_compare)

    hd = sub.add_parser("highdim", help="accuracy sweep over feature counts")
    add_common(hd)
    hd.add_argument("--features", type=int, nargs="+", help="feature counts")
    hd.add_argument("--n", type=int, help="number of samples")
    hd.add_argument("--clusters", type=int)
    hd.add_argument("--epochs", type=int)
    hd.add_argument("--lr", type=float, help="override all model learning rates")
    hd.add_argument("--lambda", dest="lambda", type=float)
    hd.add_argument("--reps", type=int)
    hd.add_argument("--jobs", type=int)
    hd.add_argument("--models", help="comma-separated model kinds")
    hd.set_defaults(func=cmd_highdim)

    an = sub.add_parser("analyze", help="fit flow rates and residuals from a bundle")
    add_common(an)
    an.add_argument("--bundle", required=True, help="run bundle directory")
    an.add_argument("--run", type=int, default=0, help="seed run index")
    an.set_defaults(func=cmd_analyze)

    gs = sub.add_parser("grid-search", help="rank hyperparameter combinations")
    add_common(gs)
    gs.add_argument("--model", choices=MODEL_KINDS)
    gs.add_argument("--kind", choices=KINDS)
    gs.add_argument("--data", help="dataset CSV (alternative to --kind)")
    gs.add_argument("--n", type=int)
    gs.add_argument("--features", type=int)
    gs.add_argument("--noise", type=float)
    gs.add_argument("--clusters", type=int)
    gs.add_argument("--epochs", type=int)
    gs.add_argument("--lr", type=float, nargs="+")
    gs.add_argument("--lambda", dest="lambda", type=float, nargs="+")
    gs.add_argument("--k", type=int, nargs="+")
    gs.add_argument("--reps", type=int)
    gs.add_argument("--record-every", type=int, dest="record_every")
    gs.set_defaults(func=cmd_grid_search)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
