"""Competitive layers: parameter storage, forward maps, initialization.

The vanilla layer stores prototypes directly as its weight rows and has no
forward pass.  The dual layer is trained on the transposed data matrix: its
weight rows mix data columns, and the prototypes are the layer *outputs*.
The deep variant prepends a dense encoder and feeds the encoded features,
transposed, to a dual head.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dualcl.linalg import as_matrix

ACTIVATIONS = ("tanh", "identity")


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / (rows + cols)), size=(rows, cols))


def glorot_init(rows: int, cols: int, seed: int) -> np.ndarray:
    """Zero-mean normal draw with std sqrt(2 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    return _glorot(np.random.default_rng(seed), rows, cols)


@dataclass
class VclLayer:
    """Vanilla competitive layer: weight row j *is* prototype j."""

    weights: np.ndarray  # (k, d)
    seed: int | None = None

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]


@dataclass
class DclLayer:
    """Dual competitive layer: output row j is prototype j, mixed from samples.

    ``weights`` is ``(k, n)``; the layer is bound to the n training samples
    it was built for.  ``bias`` (one scalar per output neuron, optional)
    absorbs constant offsets.
    """

    weights: np.ndarray  # (k, n)
    bias: np.ndarray | None = None  # (k,)
    seed: int | None = None

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def n(self) -> int:
        return self.weights.shape[1]


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class DeepDcl:
    """Dense encoder followed by a dual head on the encoded features."""

    encoder: list[DenseLayer] = field(default_factory=list)
    head: DclLayer = None  # type: ignore[assignment]
    seed: int | None = None

    @property
    def k(self) -> int:
        return self.head.k

    @property
    def n(self) -> int:
        return self.head.n


def new_vcl(d: int, k: int, seed: int) -> VclLayer:
    return VclLayer(weights=glorot_init(k, d, seed), seed=seed)


def new_dcl(n: int, k: int, seed: int, bias: bool = False) -> DclLayer:
    b = np.zeros(k) if bias else None
    return DclLayer(weights=glorot_init(k, n, seed), bias=b, seed=seed)


def new_deep_dcl(
    d: int,
    n: int,
    k: int,
    hidden: tuple[int, ...] = (10, 10),
    encoded_dim: int = 10,
    seed: int = 0,
    bias: bool = False,
) -> DeepDcl:
    """Build an encoder (tanh hidden layers, identity output) plus dual head."""
    rng = np.random.default_rng(seed)
    layers = []
    width = d
    for h in hidden:
        layers.append(
            DenseLayer(weights=_glorot(rng, h, width), bias=np.zeros(h), activation="tanh")
        )
        width = h
    layers.append(
        DenseLayer(
            weights=_glorot(rng, encoded_dim, width),
            bias=np.zeros(encoded_dim),
            activation="identity",
        )
    )
    head = DclLayer(
        weights=_glorot(rng, k, n), bias=np.zeros(k) if bias else None, seed=seed
    )
    return DeepDcl(encoder=layers, head=head, seed=seed)


def vcl_prototypes(layer: VclLayer) -> np.ndarray:
    """Prototype matrix ``(d, k)``.

    Returns a transposed view of the weights, not a copy: parameter updates
    are visible in the prototypes immediately, since the vanilla layer
    computes nothing in a forward pass.
    """
    return layer.weights.T


def dcl_forward(layer: DclLayer, X) -> np.ndarray:
    """Prototypes ``(d, k)`` as the layer output on the transposed input.

    Prototype j is the weighted sample mix ``X @ weights[j]``; each feature
    row of the output depends on the matching feature row of X only.
    """
    X = as_matrix(X, "X")
    if X.shape[1] != layer.n:
        raise ValueError(
            f"dual layer is bound to {layer.n} training samples, "
            f"got a matrix with {X.shape[1]} columns"
        )
    P = X @ layer.weights.T
    if layer.bias is not None:
        P = P + layer.bias[None, :]
    return P


def apply_dense(layer: DenseLayer, Z: np.ndarray) -> np.ndarray:
    A = layer.weights @ Z + layer.bias[:, None]
    return np.tanh(A) if layer.activation == "tanh" else A


def encode(model: DeepDcl, X) -> np.ndarray:
    """Run the encoder column-wise; an empty encoder is the identity."""
    Z = as_matrix(X, "X")
    for layer in model.encoder:
        if layer.weights.shape[1] != Z.shape[0]:
            raise ValueError(
                f"encoder layer expects {layer.weights.shape[1]} inputs, "
                f"got {Z.shape[0]}"
            )
        Z = apply_dense(layer, Z)
    return Z


def deep_forward(model: DeepDcl, X) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(features, prototypes)`` in the encoded space."""
    F = encode(model, X)
    return F, dcl_forward(model.head, F)


def param_count(model) -> int:
    if isinstance(model, VclLayer):
        return model.weights.size
    if isinstance(model, DclLayer):
        return model.weights.size + (0 if model.bias is None else model.bias.size)
    total = param_count(model.head)
    for layer in model.encoder:
        total += layer.weights.size + layer.bias.size
    return total


def model_to_dict(model) -> dict:
    """JSON-ready description: kind, dimensions, seed and nested weights."""
    if isinstance(model, VclLayer):
        return {
            "kind": "vcl",
            "k": model.k,
            "d": model.d,
            "seed": model.seed,
            "param_count": param_count(model),
            "weights": model.weights.tolist(),
        }
    if isinstance(model, DclLayer):
        return {
            "kind": "dcl",
            "k": model.k,
            "n": model.n,
            "seed": model.seed,
            "param_count": param_count(model),
            "weights": model.weights.tolist(),
            "bias": None if model.bias is None else model.bias.tolist(),
        }
    if isinstance(model, DeepDcl):
        return {
            "kind": "deep_dcl",
            "k": model.k,
            "n": model.n,
            "seed": model.seed,
            "param_count": param_count(model),
            "encoder": [
                {
                    "weights": layer.weights.tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation,
                }
                for layer in model.encoder
            ],
            "head": {
                "weights": model.head.weights.tolist(),
                "bias": None if model.head.bias is None else model.head.bias.tolist(),
            },
        }
    raise TypeError(f"not a model: {type(model).__name__}")


def model_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "vcl":
        return VclLayer(weights=np.asarray(doc["weights"], dtype=np.float64), seed=doc.get("seed"))
    if kind == "dcl":
        bias = doc.get("bias")
        return DclLayer(
            weights=np.asarray(doc["weights"], dtype=np.float64),
            bias=None if bias is None else np.asarray(bias, dtype=np.float64),
            seed=doc.get("seed"),
        )
    if kind == "deep_dcl":
        encoder = [
            DenseLayer(
                weights=np.asarray(item["weights"], dtype=np.float64),
                bias=np.asarray(item["bias"], dtype=np.float64),
                activation=item["activation"],
            )
            for item in doc["encoder"]
        ]
        head_doc = doc["head"]
        head_bias = head_doc.get("bias")
        head = DclLayer(
            weights=np.asarray(head_doc["weights"], dtype=np.float64),
            bias=None if head_bias is None else np.asarray(head_bias, dtype=np.float64),
            seed=doc.get("seed"),
        )
        return DeepDcl(encoder=encoder, head=head, seed=doc.get("seed"))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), sort_keys=True))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
