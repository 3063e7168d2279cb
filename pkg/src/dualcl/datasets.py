"""Seeded synthetic dataset generators, normalization, and CSV round-trip.

All generators are deterministic given a seed and return feature-major
matrices.  The planar generators (spiral, moons, circles) are fixed to two
features; the high-dimensional generator places Gaussian blobs on hypercube
vertices with clusters assigned alternately to two classes.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dualcl.linalg import as_matrix

PLANAR_KINDS = ("spiral", "moons", "circles")
KINDS = PLANAR_KINDS + ("madelon",)

# Spiral arc and pitch: roughly one and a half turns before normalization.
SPIRAL_ARC = (0.5 * np.pi, 3.5 * np.pi)
SPIRAL_PITCH = 1.0

# Moons: unit-radius semicircles, second one offset by (1, -0.5).
MOONS_OFFSET = (1.0, -0.5)

# Circles: concentric radii.  The gap must be wide enough that a converged
# 30-prototype quantizer never picks a cross-ring second winner; at ratio
# 0.5 even exact Lloyd solutions produce bridging edges.
CIRCLE_RADII = (1.0, 0.3)

# Hypercube vertex coordinate scale for the high-dimensional generator.
MADELON_VERTEX_SCALE = 1.0

DEFAULT_NOISE = 0.05


class DataError(ValueError):
    """Raised when an on-disk dataset cannot be parsed."""


@dataclass
class Dataset:
    """A feature-major data matrix with optional per-sample class labels."""

    X: np.ndarray
    labels: np.ndarray | None
    name: str
    seed: int | None = None

    def __post_init__(self):
        self.X = as_matrix(self.X, "X")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n,):
                raise ValueError(
                    f"labels must have length {self.n}, got shape {self.labels.shape}"
                )
            if self.labels.size and self.labels.min() < 0:
                raise ValueError("labels must be nonnegative class indices")

    @property
    def d(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class GeneratorSpec:
    """Everything needed to regenerate a dataset bit-for-bit."""

    kind: str
    n_samples: int = 500
    n_features: int = 2
    noise: float = DEFAULT_NOISE
    n_clusters: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}, expected one of {KINDS}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if self.kind in PLANAR_KINDS and self.n_features != 2:
            raise ValueError(f"{self.kind} datasets are two-dimensional")
        if self.n_features < 1:
            raise ValueError("n_features must be positive")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_samples": self.n_samples,
            "n_features": self.n_features,
            "noise": self.noise,
            "n_clusters": self.n_clusters,
            "seed": self.seed,
        }


def make(spec: GeneratorSpec) -> Dataset:
    """Generate the dataset described by ``spec``."""
    if spec.kind == "spiral":
        return gen_spiral(spec.n_samples, spec.noise, spec.seed)
    if spec.kind == "moons":
        return gen_moons(spec.n_samples, spec.noise, spec.seed)
    if spec.kind == "circles":
        return gen_circles(spec.n_samples, spec.noise, spec.seed)
    return gen_madelon(spec.n_samples, spec.n_features, spec.n_clusters, spec.seed)


def _check_n(n: int):
    if n < 1:
        raise ValueError("number of samples must be positive")


def gen_spiral(n: int, noise: float = DEFAULT_NOISE, seed: int = 0) -> Dataset:
    """Planar spiral with radius proportional to angle; a single cluster.

    Angles cover the arc uniformly; the seed only drives the additive
    Gaussian noise, so the noiseless curve is identical across seeds.
    """
    _check_n(n)
    rng = np.random.default_rng(seed)
    theta = np.linspace(SPIRAL_ARC[0], SPIRAL_ARC[1], n)
    r = SPIRAL_PITCH * theta
    X = np.vstack([r * np.cos(theta), r * np.sin(theta)])
    X = X + noise * rng.standard_normal((2, n))
    return Dataset(X=X, labels=np.zeros(n, dtype=np.int64), name="spiral", seed=seed)


def gen_moons(n: int, noise: float = DEFAULT_NOISE, seed: int = 0) -> Dataset:
    """Two interlocking unit-radius semicircles, one per class."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    n1 = n // 2
    n0 = n - n1
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    upper = np.vstack([np.cos(t0), np.sin(t0)])
    # mirrored semicircle whose valley sits at MOONS_OFFSET, interlocking
    # with the first arch
    lower = np.vstack(
        [MOONS_OFFSET[0] - np.cos(t1), MOONS_OFFSET[1] + 1.0 - np.sin(t1)]
    )
    X = np.concatenate([upper, lower], axis=1)
    X = X + noise * rng.standard_normal((2, n))
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    return Dataset(X=X, labels=labels, name="moons", seed=seed)


def gen_circles(n: int, noise: float = DEFAULT_NOISE, seed: int = 0) -> Dataset:
    """Two concentric circles; the outer one is class 0."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    n1 = n // 2
    n0 = n - n1
    t0 = np.linspace(0.0, 2 * np.pi, n0, endpoint=False)
    t1 = np.linspace(0.0, 2 * np.pi, n1, endpoint=False)
    outer = CIRCLE_RADII[0] * np.vstack([np.cos(t0), np.sin(t0)])
    inner = CIRCLE_RADII[1] * np.vstack([np.cos(t1), np.sin(t1)])
    X = np.concatenate([outer, inner], axis=1)
    X = X + noise * rng.standard_normal((2, n))
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    return Dataset(X=X, labels=labels, name="circles", seed=seed)


def gen_madelon(
    n_samples: int, n_features: int, n_clusters: int = 2, seed: int = 0
) -> Dataset:
    """Gaussian blobs (unit std) centered on distinct hypercube vertices.

    Vertices are drawn in antipodal pairs in ``{-s, +s}^d``, so the two
    clusters of the default configuration sit at opposite corners.  Clusters
    are assigned alternately to two classes and blob sizes differ by at most
    one sample, keeping the classes balanced.
    """
    _check_n(n_samples)
    if n_clusters < 2 or n_clusters % 2 != 0:
        raise ValueError("n_clusters must be a positive even number")
    if n_clusters > 2 ** min(n_features, 20):
        raise ValueError(
            f"cannot place {n_clusters} distinct vertices in a "
            f"{n_features}-dimensional hypercube"
        )
    rng = np.random.default_rng(seed)
    vertices: list[np.ndarray] = []
    seen: set[bytes] = set()
    while len(vertices) < n_clusters:
        v = np.where(rng.random(n_features) < 0.5, -1.0, 1.0) * MADELON_VERTEX_SCALE
        if v.tobytes() in seen or (-v).tobytes() in seen:
            continue
        vertices.extend([v, -v])
        seen.update({v.tobytes(), (-v).tobytes()})

    base, extra = divmod(n_samples, n_clusters)
    sizes = [base + (1 if c < extra else 0) for c in range(n_clusters)]
    blocks = []
    labels = []
    for c, (vertex, size) in enumerate(zip(vertices, sizes)):
        blocks.append(vertex[:, None] + rng.standard_normal((n_features, size)))
        labels.append(np.full(size, c % 2, dtype=np.int64))
    X = np.concatenate(blocks, axis=1)
    return Dataset(
        X=X, labels=np.concatenate(labels), name="madelon", seed=seed
    )


def normalize(ds: Dataset) -> Dataset:
    """Center each feature and scale to unit population variance.

    Zero-variance features cannot be scaled; they are set to all zeros and a
    ``RuntimeWarning`` is recorded so degenerate configurations still run.
    """
    mean = ds.X.mean(axis=1, keepdims=True)
    var = ds.X.var(axis=1, keepdims=True)
    flat = var[:, 0] == 0.0
    if np.any(flat):
        warnings.warn(
            f"{int(flat.sum())} zero-variance feature(s) set to zero during "
            "normalization",
            RuntimeWarning,
            stacklevel=2,
        )
    scale = np.where(var > 0.0, np.sqrt(var), 1.0)
    X = (ds.X - mean) / scale
    X[flat, :] = 0.0
    labels = None if ds.labels is None else ds.labels.copy()
    return Dataset(X=X, labels=labels, name=ds.name, seed=ds.seed)


def is_normalized(ds: Dataset, tol: float = 1e-6) -> bool:
    return bool(np.max(np.abs(ds.X.mean(axis=1))) <= tol)


def save_csv(ds: Dataset, path) -> None:
    """Write samples as rows with 17-significant-digit decimal text.

    The header names features ``f0..f{d-1}``; when labels are present a
    final ``label`` column is appended.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"f{i}" for i in range(ds.d)]
    if ds.labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [f"{v:.17g}" for v in ds.X[:, i]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[i])))
            writer.writerow(row)


def load_csv(path) -> Dataset:
    """Load a dataset written by :func:`save_csv` (rows are samples)."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: no rows")
    header = rows[0]
    has_labels = bool(header) and header[-1].strip().lower() == "label"
    n_cols = len(header)
    d = n_cols - 1 if has_labels else n_cols
    if d < 1:
        raise DataError(f"{path}: no feature columns in header {header!r}")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no rows")
    values = np.empty((d, len(body)))
    labels = np.empty(len(body), dtype=np.int64) if has_labels else None
    for i, row in enumerate(body):
        if len(row) != n_cols:
            raise DataError(
                f"{path}: row {i + 2} has {len(row)} cells, expected {n_cols}"
            )
        for j in range(d):
            try:
                values[j, i] = float(row[j])
            except ValueError:
                raise DataError(
                    f"{path}: row {i + 2}, column {j + 1}: "
                    f"could not parse {row[j]!r} as a number"
                ) from None
        if has_labels:
            try:
                labels[i] = int(float(row[-1]))
            except ValueError:
                raise DataError(
                    f"{path}: row {i + 2}, column {n_cols}: "
                    f"could not parse label {row[-1]!r}"
                ) from None
    return Dataset(X=values, labels=labels, name=path.stem, seed=None)
