"""Dense matrix foundations: SVD, pseudoinverse, Gram and distance matrices.

Conventions used throughout the package:

* data matrices are feature-major, shape ``(d, n)``, one observation per
  column;
* prototype sets are ``(d, k)``, one prototype per column;
* distance matrices hold *squared* Euclidean distances, shape ``(n, k)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Singular values below RANK_RTOL * sigma_1 are treated as zero.
RANK_RTOL = 1e-12


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array or raise ``ValueError``."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must have at least one row and one column")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries (nan or inf)")
    return a


@dataclass(frozen=True)
class SvdFactors:
    """Full SVD ``X = U S V^T`` with a deterministic sign convention.

    ``u`` is ``(d, d)`` orthogonal, ``v`` is ``(n, n)`` orthogonal (columns
    are the right singular vectors) and ``singular_values`` holds the
    ``min(d, n)`` non-increasing values.
    """

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    @property
    def d(self) -> int:
        return self.u.shape[0]

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def rank(self) -> int:
        """Numerical rank: count of singular values above RANK_RTOL * sigma_1."""
        s = self.singular_values
        if s.size == 0 or s[0] <= 0.0:
            return 0
        return int(np.sum(s > RANK_RTOL * s[0]))

    def reconstruct(self) -> np.ndarray:
        """Return ``U S V^T`` with S padded to ``(d, n)``."""
        m = self.singular_values.size
        return (self.u[:, :m] * self.singular_values) @ self.v[:, :m].T


def svd(X) -> SvdFactors:
    """Full singular value decomposition with reproducible signs.

    Each left singular vector is flipped so its largest-magnitude entry is
    positive; the paired right singular vector is flipped along with it so
    the product is unchanged.  Right singular vectors beyond ``min(d, n)``
    (null-space completion) get the same convention applied directly.
    """
    X = as_matrix(X, "X")
    u, s, vh = np.linalg.svd(X, full_matrices=True)
    v = vh.T
    m = s.size
    for i in range(u.shape[1]):
        if u[np.argmax(np.abs(u[:, i])), i] < 0:
            u[:, i] = -u[:, i]
            if i < m:
                v[:, i] = -v[:, i]
    for i in range(m, v.shape[1]):
        if v[np.argmax(np.abs(v[:, i])), i] < 0:
            v[:, i] = -v[:, i]
    return SvdFactors(u=u, singular_values=s, v=v)


def pseudoinverse(X) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD, shape ``(n, d)``.

    Singular values below ``RANK_RTOL * sigma_1`` are truncated to zero.
    """
    f = svd(X)
    s = f.singular_values
    r = f.rank
    if r == 0:
        return np.zeros((f.n, f.d))
    return (f.v[:, :r] / s[:r]) @ f.u[:, :r].T


def gram(X) -> np.ndarray:
    """Sample inner-product (Gram) matrix ``X^T X``, symmetrized, ``(n, n)``."""
    X = as_matrix(X, "X")
    G = X.T @ X
    return (G + G.T) / 2.0


def edm(X, P) -> np.ndarray:
    """Squared Euclidean distances between columns of X and columns of P.

    Entry ``(i, j)`` is ``||x_i - p_j||^2``.  Tiny negative values from
    floating-point cancellation are clamped to zero.
    """
    X = as_matrix(X, "X")
    P = as_matrix(P, "P")
    if X.shape[0] != P.shape[0]:
        raise ValueError(
            f"feature dimension mismatch: X has {X.shape[0]} rows, P has {P.shape[0]}"
        )
    x_sq = np.einsum("ij,ij->j", X, X)
    p_sq = np.einsum("ij,ij->j", P, P)
    d2 = x_sq[:, None] + p_sq[None, :] - 2.0 * (X.T @ P)
    return np.maximum(d2, 0.0)


def edm_gram(G, weights) -> np.ndarray:
    """Squared distance matrix computed from the Gram matrix alone.

    ``weights`` is the ``(k, n)`` dual weight matrix whose rows mix data
    columns into prototypes; the result equals ``edm(X, X @ weights.T)``
    whenever ``G = X^T X``, so the Voronoi sets can be evaluated without
    access to the raw data.
    """
    G = as_matrix(G, "G")
    W = as_matrix(weights, "weights")
    if G.shape[0] != G.shape[1]:
        raise ValueError(f"G must be square, got shape {G.shape}")
    if W.shape[1] != G.shape[0]:
        raise ValueError(
            f"weights have {W.shape[1]} columns but G is {G.shape[0]}x{G.shape[1]}"
        )
    g_diag = np.diag(G)
    p_sq = np.einsum("kn,nm,km->k", W, G, W)
    d2 = g_diag[:, None] + p_sq[None, :] - 2.0 * (G @ W.T)
    return np.maximum(d2, 0.0)
