"""Voronoi assignment, CHL topology edges, the prototype loss and gradients.

The loss is ``quantization + lam * ||E||_F``.  Quantization is the *mean*
squared distance from each sample to its first winner, so learning rates
stay comparable across dataset sizes.  ``E`` accumulates, for every sample,
the squared distance between its first and second winner prototypes on that
pair's edge; a plain 0/1 adjacency would contribute no gradient, whereas
this weighting penalizes long edges and drives the topology toward the
minimal structure.  Note the accumulated edge weights grow with the sample
count while the quantization term does not, so the balance a given ``lam``
strikes depends on ``n``.  Raw co-winner counts are kept separately
(``occupancy``) for pruning and connected-component analysis.

Winner indices are treated as constants during differentiation: the
assignment is piecewise constant in the parameters, and all gradients below
are the exact gradients of the loss with the assignment frozen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dualcl.layers import DclLayer, DeepDcl, VclLayer, apply_dense, dcl_forward, vcl_prototypes
from dualcl.linalg import as_matrix, edm


@dataclass(frozen=True)
class VoronoiAssignment:
    """First/second winner per sample and per-prototype cardinalities."""

    winner1: np.ndarray  # (n,) int64
    winner2: np.ndarray  # (n,) int64
    counts: np.ndarray  # (k,) int64

    @property
    def n(self) -> int:
        return self.winner1.shape[0]

    @property
    def k(self) -> int:
        return self.counts.shape[0]


@dataclass(frozen=True)
class EdgeMatrix:
    """Symmetric CHL adjacency: distance-weighted values plus raw counts."""

    values: np.ndarray  # (k, k) nonnegative, zero diagonal
    occupancy: np.ndarray  # (k, k) int64 co-winner counts


@dataclass(frozen=True)
class LossBreakdown:
    quantization: float
    edge_norm: float
    lam: float
    total: float


@dataclass
class DeepGradients:
    """Gradients for every encoder layer (weights, bias) and the dual head."""

    encoder: list[tuple[np.ndarray, np.ndarray]]
    head: np.ndarray
    head_bias: np.ndarray | None = None


def assign(X, prototypes) -> VoronoiAssignment:
    """Argmin and second-argmin of the squared distance matrix rows.

    Ties break toward the lower prototype index on both winners, so results
    are platform independent.
    """
    P = as_matrix(prototypes, "prototypes")
    k = P.shape[1]
    if k < 2:
        raise ValueError("competitive assignment needs at least 2 prototypes")
    D = edm(X, P)
    w1 = np.argmin(D, axis=1)
    rows = np.arange(D.shape[0])
    masked = D.copy()
    masked[rows, w1] = np.inf
    w2 = np.argmin(masked, axis=1)
    counts = np.bincount(w1, minlength=k).astype(np.int64)
    return VoronoiAssignment(winner1=w1.astype(np.int64), winner2=w2.astype(np.int64), counts=counts)


def _prototype_sq_dists(P: np.ndarray) -> np.ndarray:
    """Exact pairwise squared distances between prototype columns."""
    diff = P[:, :, None] - P[:, None, :]
    return np.einsum("dij,dij->ij", diff, diff)


def chl_edges(assignment: VoronoiAssignment, prototypes) -> EdgeMatrix:
    """Connect each sample's two winners; weight = squared edge length.

    Edge weights add into both triangles, so ``values`` and ``occupancy``
    are symmetric with a zero diagonal.
    """
    P = as_matrix(prototypes, "prototypes")
    k = P.shape[1]
    directed = np.zeros((k, k), dtype=np.int64)
    np.add.at(directed, (assignment.winner1, assignment.winner2), 1)
    occupancy = directed + directed.T
    values = occupancy * _prototype_sq_dists(P)
    return EdgeMatrix(values=values, occupancy=occupancy)


def quantization(X, prototypes, assignment: VoronoiAssignment) -> float:
    """Mean squared distance from each sample to its first winner."""
    X = as_matrix(X, "X")
    P = as_matrix(prototypes, "prototypes")
    diff = X - P[:, assignment.winner1]
    return float(np.einsum("ij,ij->", diff, diff) / X.shape[1])


def edge_norm(edges: EdgeMatrix) -> float:
    """Frobenius norm of the weighted adjacency."""
    return float(np.linalg.norm(edges.values))


def loss_given_assignment(X, prototypes, assignment: VoronoiAssignment, lam: float) -> LossBreakdown:
    """Loss with the winner assignment held fixed (the differentiable view)."""
    q = quantization(X, prototypes, assignment)
    en = edge_norm(chl_edges(assignment, prototypes))
    return LossBreakdown(quantization=q, edge_norm=en, lam=lam, total=q + lam * en)


def total_loss(X, prototypes, lam: float) -> LossBreakdown:
    """Assign winners, build edges, and assemble the full loss."""
    return loss_given_assignment(X, prototypes, assign(X, prototypes), lam)


def grad_prototypes(X, prototypes, assignment: VoronoiAssignment, lam: float) -> np.ndarray:
    """Gradient of the frozen-assignment loss w.r.t. the prototype matrix.

    Quantization part, column j: ``(2/n) * sum_{i in V_j} (p_j - x_i)``;
    prototypes with empty Voronoi sets receive a zero column and simply stop
    moving.  Edge part: gradient of the Frobenius norm of the
    distance-weighted adjacency with co-winner counts frozen.
    """
    X = as_matrix(X, "X")
    P = as_matrix(prototypes, "prototypes")
    n = X.shape[1]
    k = P.shape[1]
    member = np.zeros((n, k))
    member[np.arange(n), assignment.winner1] = 1.0
    grad = (2.0 / n) * (P * assignment.counts[None, :] - X @ member)
    if lam != 0.0:
        edges = chl_edges(assignment, P)
        norm = np.linalg.norm(edges.values)
        if norm > 0.0:
            m = edges.occupancy.astype(np.float64)
            weight = m * m * _prototype_sq_dists(P)
            pull = (4.0 / norm) * (P * weight.sum(axis=1)[None, :] - P @ weight)
            grad = grad + lam * pull
    return grad


def grad_vcl(X, layer: VclLayer, assignment: VoronoiAssignment, lam: float) -> np.ndarray:
    """Gradient w.r.t. the vanilla layer's weight rows, shape ``(k, d)``."""
    return grad_prototypes(X, vcl_prototypes(layer), assignment, lam).T


def grad_dcl(X, layer: DclLayer, assignment: VoronoiAssignment, lam: float) -> np.ndarray:
    """Gradient w.r.t. the dual layer's weight rows, shape ``(k, n)``.

    Chain rule through the linear forward map: row j equals
    ``X^T (dL/dp_j)``, i.e. ``(2/n) (n_j X^T X w_j - X^T sum_{i in V_j} x_i)``
    for the quantization part.
    """
    X = as_matrix(X, "X")
    gp = grad_prototypes(X, dcl_forward(layer, X), assignment, lam)
    return gp.T @ X


def grad_dcl_bias(X, layer: DclLayer, assignment: VoronoiAssignment, lam: float) -> np.ndarray:
    """Per-neuron bias gradient: the prototype gradient summed over features."""
    gp = grad_prototypes(X, dcl_forward(layer, X), assignment, lam)
    return gp.sum(axis=0)


def grad_deep(model: DeepDcl, X, assignment: VoronoiAssignment, lam: float) -> DeepGradients:
    """Reverse-mode gradients through the encoder stack and dual head.

    The encoded features enter the loss twice: as the data being quantized
    and, transposed, as the input of the dual head; both paths are
    accumulated.  With an empty encoder this reduces to :func:`grad_dcl`.
    """
    X = as_matrix(X, "X")
    outputs = [X]
    Z = X
    for layer in model.encoder:
        Z = apply_dense(layer, Z)
        outputs.append(Z)
    F = outputs[-1]
    P = dcl_forward(model.head, F)
    n = F.shape[1]

    gp = grad_prototypes(F, P, assignment, lam)
    head_grad = gp.T @ F
    head_bias_grad = None if model.head.bias is None else gp.sum(axis=0)

    # direct quantization term in the encoded space ...
    delta = (2.0 / n) * (F - P[:, assignment.winner1])
    # ... plus the path through the prototypes
    delta = delta + gp @ model.head.weights

    encoder_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.encoder)
    for idx in range(len(model.encoder) - 1, -1, -1):
        layer = model.encoder[idx]
        if layer.activation == "tanh":
            delta = delta * (1.0 - outputs[idx + 1] ** 2)
        encoder_grads[idx] = (delta @ outputs[idx].T, delta.sum(axis=1))
        delta = layer.weights.T @ delta
    return DeepGradients(encoder=encoder_grads, head=head_grad, head_bias=head_bias_grad)


def valid_prototypes(assignment: VoronoiAssignment) -> int:
    """Count of prototypes with a non-empty Voronoi set."""
    return int(np.sum(assignment.counts > 0))


def connected_components(occupancy) -> int:
    """Connected components of the co-winner graph, ignoring lonely nodes.

    Prototypes without any connection are outlier markers, not clusters, so
    they do not count as components; each remaining component is one
    detected cluster.
    """
    occ = np.asarray(occupancy)
    k = occ.shape[0]
    active = occ.sum(axis=1) > 0
    seen = np.zeros(k, dtype=bool)
    count = 0
    for start in range(k):
        if seen[start] or not active[start]:
            continue
        count += 1
        stack = [start]
        while stack:
            node = stack.pop()
            if seen[node]:
                continue
            seen[node] = True
            stack.extend(np.flatnonzero((occ[node] > 0) & ~seen).tolist())
    return count


def prune_lonely(prototypes, edges: EdgeMatrix) -> np.ndarray:
    """Drop prototypes with no CHL connections (possible outlier markers)."""
    P = as_matrix(prototypes, "prototypes")
    keep = edges.occupancy.sum(axis=1) > 0
    return P[:, keep]
