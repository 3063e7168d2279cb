"""Full-batch gradient-descent training with metric tracing and run bundles.

Every epoch runs the same pipeline on the whole batch: forward, winner
assignment, CHL edges, loss, gradient, parameter update.  Metrics recorded
at epoch ``e`` describe the state after ``e`` updates, so a run of ``eta``
epochs recorded every ``r`` epochs yields exactly ``eta / r`` rows.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from dualcl.datasets import Dataset, GeneratorSpec, is_normalized, make, normalize
from dualcl.layers import (
    DclLayer,
    DeepDcl,
    VclLayer,
    dcl_forward,
    deep_forward,
    model_to_dict,
    new_dcl,
    new_deep_dcl,
    new_vcl,
    vcl_prototypes,
)
from dualcl.loss import (
    VoronoiAssignment,
    assign,
    chl_edges,
    edge_norm,
    grad_dcl,
    grad_dcl_bias,
    grad_deep,
    grad_vcl,
    quantization,
    valid_prototypes,
)

MODEL_KINDS = ("vcl", "dcl", "deep_dcl")

# Learning rates tuned per layer kind for the planar benchmarks.
DEFAULT_LEARNING_RATES = {"vcl": 0.008, "dcl": 0.0008, "deep_dcl": 0.001}
DEFAULT_EPOCHS = 400
DEFAULT_LAMBDA = 0.01
DEFAULT_K = 30

DIVERGENCE_FACTOR = 1e6


class TrainingDiverged(RuntimeError):
    """Raised when the quantization error explodes past the guard."""

    def __init__(self, epoch: int, value: float, initial: float):
        self.epoch = epoch
        super().__init__(
            f"quantization error diverged at epoch {epoch}: {value:.6e} exceeds "
            f"{DIVERGENCE_FACTOR:.0e} x initial value {initial:.6e}"
        )


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str = "dcl"
    k: int = DEFAULT_K
    epochs: int = DEFAULT_EPOCHS
    learning_rate: float | None = None  # None picks the per-kind default
    lam: float = DEFAULT_LAMBDA
    seed: int = 0
    record_every: int = 1
    freeze_assignment: bool = False
    dcl_bias: bool = False
    hidden: tuple[int, ...] = (10, 10)
    encoded_dim: int = 10
    record_weights: bool = False

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LEARNING_RATES[self.model_kind]

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "k": self.k,
            "epochs": self.epochs,
            "learning_rate": self.lr,
            "lam": self.lam,
            "seed": self.seed,
            "record_every": self.record_every,
            "freeze_assignment": self.freeze_assignment,
            "dcl_bias": self.dcl_bias,
            "hidden": list(self.hidden),
            "encoded_dim": self.encoded_dim,
        }


@dataclass
class MetricsTrace:
    """Per-recorded-epoch metrics and prototype snapshots."""

    epochs: np.ndarray  # (T,) int
    quantization: np.ndarray  # (T,)
    edge_norm: np.ndarray  # (T,)
    valid_count: np.ndarray  # (T,) int
    prototypes: np.ndarray  # (T, d, k) snapshots in the loss space
    weights: np.ndarray | None = None  # (T, ...) main weight snapshots


def build_model(config: TrainConfig, d: int, n: int):
    if config.model_kind == "vcl":
        return new_vcl(d=d, k=config.k, seed=config.seed)
    if config.model_kind == "dcl":
        return new_dcl(n=n, k=config.k, seed=config.seed, bias=config.dcl_bias)
    return new_deep_dcl(
        d=d,
        n=n,
        k=config.k,
        hidden=config.hidden,
        encoded_dim=config.encoded_dim,
        seed=config.seed,
        bias=config.dcl_bias,
    )


def forward(model, X) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(features, prototypes)`` for any model kind."""
    if isinstance(model, VclLayer):
        return X, vcl_prototypes(model)
    if isinstance(model, DclLayer):
        return X, dcl_forward(model, X)
    return deep_forward(model, X)


def _main_weights(model) -> np.ndarray:
    if isinstance(model, DeepDcl):
        return model.head.weights
    return model.weights


def _step(model, X, assignment: VoronoiAssignment, lam: float, lr: float) -> None:
    if isinstance(model, VclLayer):
        model.weights -= lr * grad_vcl(X, model, assignment, lam)
    elif isinstance(model, DclLayer):
        model.weights -= lr * grad_dcl(X, model, assignment, lam)
        if model.bias is not None:
            model.bias -= lr * grad_dcl_bias(X, model, assignment, lam)
    else:
        grads = grad_deep(model, X, assignment, lam)
        for layer, (gw, gb) in zip(model.encoder, grads.encoder):
            layer.weights -= lr * gw
            layer.bias -= lr * gb
        model.head.weights -= lr * grads.head
        if model.head.bias is not None:
            model.head.bias -= lr * grads.head_bias


def train(dataset: Dataset, config: TrainConfig):
    """Run ``config.epochs`` full-batch gradient steps; deterministic per seed.

    Returns ``(model, MetricsTrace)``.  Aborts with :class:`TrainingDiverged`
    when the quantization error exceeds a million times its initial value.
    """
    X = dataset.X
    if not is_normalized(dataset):
        warnings.warn(
            "dataset features are not centered; normalize() before training",
            RuntimeWarning,
            stacklevel=2,
        )
    model = build_model(config, d=X.shape[0], n=X.shape[1])
    lam, lr = config.lam, config.lr

    epochs_rec: list[int] = []
    q_rec: list[float] = []
    e_rec: list[float] = []
    v_rec: list[int] = []
    p_rec: list[np.ndarray] = []
    w_rec: list[np.ndarray] = []

    frozen: VoronoiAssignment | None = None
    q_initial = None
    for epoch in range(config.epochs):
        features, prototypes = forward(model, X)
        if config.freeze_assignment:
            if frozen is None:
                frozen = assign(features, prototypes)
            assignment = frozen
        else:
            assignment = assign(features, prototypes)
        q = quantization(features, prototypes, assignment)
        if q_initial is None:
            q_initial = q
        elif q_initial > 0 and q > DIVERGENCE_FACTOR * q_initial:
            raise TrainingDiverged(epoch=epoch, value=q, initial=q_initial)
        if epoch % config.record_every == 0:
            epochs_rec.append(epoch)
            q_rec.append(q)
            e_rec.append(edge_norm(chl_edges(assignment, prototypes)))
            v_rec.append(valid_prototypes(assignment))
            p_rec.append(prototypes.copy())
            if config.record_weights:
                w_rec.append(_main_weights(model).copy())
        # gradients take the raw input; the deep path re-encodes internally
        _step(model, X, assignment, lam, lr)

    trace = MetricsTrace(
        epochs=np.array(epochs_rec, dtype=np.int64),
        quantization=np.array(q_rec),
        edge_norm=np.array(e_rec),
        valid_count=np.array(v_rec, dtype=np.int64),
        prototypes=np.stack(p_rec),
        weights=np.stack(w_rec) if w_rec else None,
    )
    return model, trace


def accuracy(model, dataset: Dataset) -> float:
    """Majority-class fraction per winner cluster, sample-weighted.

    Each sample joins the cluster of its nearest prototype; a cluster counts
    its most represented class as correct.  Empty clusters are ignored.
    """
    if dataset.labels is None:
        raise ValueError("accuracy needs a labeled dataset")
    features, prototypes = forward(model, dataset.X)
    a = assign(features, prototypes)
    correct = 0
    for j in range(a.k):
        members = a.winner1 == j
        if not members.any():
            continue
        correct += int(np.bincount(dataset.labels[members]).max())
    return correct / dataset.n


@dataclass(frozen=True)
class GridResult:
    config: TrainConfig
    mean_quantization: float
    mean_edge_norm: float
    quantization_per_rep: tuple[float, ...]


def grid_search(dataset: Dataset, grid, repetitions: int = 1) -> list[GridResult]:
    """Train every config x repetition; rank by mean final quantization.

    Repetition r of a config reuses it with seed ``config.seed + r``.  Ties
    in quantization break on the mean final edge norm.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    results = []
    for cfg in grid:
        finals_q = []
        finals_e = []
        for r in range(repetitions):
            _, trace = train(dataset, replace(cfg, seed=cfg.seed + r))
            finals_q.append(float(trace.quantization[-1]))
            finals_e.append(float(trace.edge_norm[-1]))
        results.append(
            GridResult(
                config=cfg,
                mean_quantization=float(np.mean(finals_q)),
                mean_edge_norm=float(np.mean(finals_e)),
                quantization_per_rep=tuple(finals_q),
            )
        )
    results.sort(key=lambda r: (r.mean_quantization, r.mean_edge_norm))
    return results


# ---------------------------------------------------------------------------
# Run bundles: persisted multi-seed experiments


@dataclass(frozen=True)
class ExperimentSpec:
    dataset: GeneratorSpec | None
    models: tuple[TrainConfig, ...]
    repetitions: int = 10
    jobs: int = 1

    def to_dict(self) -> dict:
        return {
            "dataset": None if self.dataset is None else self.dataset.to_dict(),
            "models": [m.to_dict() for m in self.models],
            "repetitions": self.repetitions,
        }


def spec_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, (int, str)) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def save_trace(trace: MetricsTrace, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    write_csv(
        run_dir / "trace.csv",
        ["epoch", "quantization", "edge_norm", "valid_count"],
        [
            (int(e), q, en, int(v))
            for e, q, en, v in zip(
                trace.epochs, trace.quantization, trace.edge_norm, trace.valid_count
            )
        ],
    )
    d = trace.prototypes.shape[1]
    rows = []
    for t, e in enumerate(trace.epochs):
        for j in range(trace.prototypes.shape[2]):
            rows.append((int(e), j, *trace.prototypes[t, :, j]))
    write_csv(
        run_dir / "trajectories.csv",
        ["epoch", "prototype"] + [f"x{i}" for i in range(d)],
        rows,
    )


def load_trace(run_dir: Path) -> MetricsTrace:
    header, rows = read_csv(Path(run_dir) / "trace.csv")
    epochs = np.array([int(r[0]) for r in rows], dtype=np.int64)
    q = np.array([float(r[1]) for r in rows])
    en = np.array([float(r[2]) for r in rows])
    valid = np.array([int(r[3]) for r in rows], dtype=np.int64)

    theader, trows = read_csv(Path(run_dir) / "trajectories.csv")
    d = len(theader) - 2
    k = max(int(r[1]) for r in trows) + 1
    protos = np.zeros((len(epochs), d, k))
    index = {int(e): t for t, e in enumerate(epochs)}
    for r in trows:
        t = index[int(r[0])]
        j = int(r[1])
        protos[t, :, j] = [float(v) for v in r[2:]]
    return MetricsTrace(
        epochs=epochs, quantization=q, edge_norm=en, valid_count=valid, prototypes=protos
    )


def aggregate_traces(traces: list[MetricsTrace]) -> dict[str, np.ndarray]:
    """Mean and standard error of the mean, per recorded epoch."""
    reps = len(traces)
    stacked = {
        "quantization": np.stack([t.quantization for t in traces]),
        "edge_norm": np.stack([t.edge_norm for t in traces]),
        "valid_count": np.stack([t.valid_count.astype(np.float64) for t in traces]),
    }
    out: dict[str, np.ndarray] = {"epoch": traces[0].epochs}
    for name, arr in stacked.items():
        out[f"{name}_mean"] = arr.mean(axis=0)
        if reps > 1:
            out[f"{name}_sem"] = arr.std(axis=0, ddof=1) / np.sqrt(reps)
        else:
            out[f"{name}_sem"] = np.zeros(arr.shape[1])
    return out


AGGREGATE_COLUMNS = [
    "epoch",
    "quantization_mean",
    "quantization_sem",
    "edge_norm_mean",
    "edge_norm_sem",
    "valid_count_mean",
    "valid_count_sem",
]


def save_aggregate(agg: dict[str, np.ndarray], path) -> None:
    rows = []
    for t in range(agg["epoch"].shape[0]):
        rows.append(
            (int(agg["epoch"][t]), *[float(agg[c][t]) for c in AGGREGATE_COLUMNS[1:]])
        )
    write_csv(path, AGGREGATE_COLUMNS, rows)


def load_aggregate(path) -> dict[str, np.ndarray]:
    header, rows = read_csv(path)
    agg = {}
    for i, col in enumerate(header):
        vals = [r[i] for r in rows]
        agg[col] = (
            np.array([int(v) for v in vals], dtype=np.int64)
            if col == "epoch"
            else np.array([float(v) for v in vals])
        )
    return agg


def _run_cell(args: tuple) -> tuple[int, dict, MetricsTrace]:
    payload, cfg, rep = args
    ds = payload if isinstance(payload, Dataset) else normalize(make(GeneratorSpec(**payload)))
    model, trace = train(ds, replace(cfg, seed=cfg.seed + rep))
    return rep, model_to_dict(model), trace


def run_experiment(
    spec: ExperimentSpec, out_dir, dataset: Dataset | None = None, dataset_doc: dict | None = None
) -> dict[str, dict[str, np.ndarray]]:
    """Train every model over ``repetitions`` seeds and persist run bundles.

    Each model kind gets its own bundle directory::

        <out>/<kind>/config.json
        <out>/<kind>/aggregate.csv
        <out>/<kind>/seed_000/{trace.csv, trajectories.csv, model.json}

    The dataset is regenerated from ``spec.dataset`` unless a preloaded
    ``dataset`` (e.g. from CSV) is supplied, in which case ``dataset_doc``
    describes it in ``config.json``.  Returns the per-model aggregates.
    Worker results are written in (model, repetition) order regardless of
    completion order, so bundles are deterministic for any job count.
    """
    out_dir = Path(out_dir)
    if dataset_doc is None:
        dataset_doc = spec.dataset.to_dict()
    payload = dataset if dataset is not None else spec.dataset.to_dict()
    aggregates: dict[str, dict[str, np.ndarray]] = {}
    for cfg in spec.models:
        bundle = out_dir / cfg.model_kind
        bundle.mkdir(parents=True, exist_ok=True)
        doc = {
            "dataset": dataset_doc,
            "train": cfg.to_dict(),
            "repetitions": spec.repetitions,
        }
        doc["spec_hash"] = spec_hash(doc)
        (bundle / "config.json").write_text(json.dumps(doc, sort_keys=True, indent=1))

        tasks = [(payload, cfg, r) for r in range(spec.repetitions)]
        if spec.jobs > 1:
            with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
                results = sorted(pool.map(_run_cell, tasks), key=lambda item: item[0])
        else:
            results = [_run_cell(t) for t in tasks]

        traces = []
        for rep, model_doc, trace in results:
            run_dir = bundle / f"seed_{rep:03d}"
            save_trace(trace, run_dir)
            (run_dir / "model.json").write_text(json.dumps(model_doc, sort_keys=True))
            traces.append(trace)
        agg = aggregate_traces(traces)
        save_aggregate(agg, bundle / "aggregate.csv")
        aggregates[cfg.model_kind] = agg
    return aggregates


@dataclass
class RunBundle:
    config: dict
    traces: list[MetricsTrace]
    aggregate: dict[str, np.ndarray]
    path: Path = field(default_factory=Path)


def load_bundle(bundle_dir) -> RunBundle:
    bundle_dir = Path(bundle_dir)
    cfg_path = bundle_dir / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(f"missing {cfg_path}")
    config = json.loads(cfg_path.read_text())
    traces = []
    for run_dir in sorted(bundle_dir.glob("seed_*")):
        trace_path = run_dir / "trace.csv"
        if not trace_path.exists():
            raise FileNotFoundError(f"missing {trace_path}")
        traces.append(load_trace(run_dir))
    if not traces:
        raise FileNotFoundError(f"no seed_* runs under {bundle_dir}")
    aggregate = load_aggregate(bundle_dir / "aggregate.csv")
    return RunBundle(config=config, traces=traces, aggregate=aggregate, path=bundle_dir)
