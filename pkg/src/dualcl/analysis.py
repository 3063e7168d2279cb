"""Numerical validation of the linear gradient-flow theory.

With the Voronoi assignment frozen and the quantization averaged over the
``n`` samples, a weight vector whose cell holds a single sample follows the
continuous flows below under the time mapping ``t = 2 * eps * epoch / n``;
reports produced here state that mapping so fitted rates are interpretable.

* vanilla layer: ``w(t) = mu + (w0 - mu) exp(-t)``, the same rate in every
  coordinate;
* dual layer: the deviation from the critical point ``pinv(X) @ mu``
  decomposes along the right singular vectors and mode i decays at rate
  ``sigma_i^2``; zero-sigma modes ("centers") stay constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dualcl.linalg import RANK_RTOL, SvdFactors, as_matrix, pseudoinverse, svd


def flow_times(epochs: int, eps: float, n_samples: int) -> np.ndarray:
    """Continuous times for epochs ``0..epochs`` under the documented mapping."""
    return 2.0 * eps * np.arange(epochs + 1) / n_samples


@dataclass(frozen=True)
class FlowPrediction:
    """Mode-wise decomposition of the predicted dual-weight evolution."""

    critical_point: np.ndarray  # (n,)
    mode_constants: np.ndarray  # (n,) coordinates of w0 - critical in the V basis
    rates: np.ndarray  # (n,) sigma_i^2, zero for center modes
    center_mask: np.ndarray  # (n,) bool, True where the mode never decays
    time_scale: float  # dt per epoch

    def trajectory(self, factors: SvdFactors, epochs: int) -> np.ndarray:
        t = self.time_scale * np.arange(epochs + 1)
        decay = np.exp(-np.outer(t, self.rates))
        return self.critical_point[None, :] + (self.mode_constants * decay) @ factors.v.T


def decompose_dual_flow(X, weights0, mu, eps: float) -> tuple[FlowPrediction, SvdFactors]:
    """Split a dual weight vector into decaying and constant modes."""
    X = as_matrix(X, "X")
    w0 = np.asarray(weights0, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    n = X.shape[1]
    if w0.shape[0] != n:
        raise ValueError(f"weights0 must have length {n}")
    if mu.shape[0] != X.shape[0]:
        raise ValueError(f"mu must have length {X.shape[0]}")
    f = svd(X)
    crit = pseudoinverse(X) @ mu
    rates = np.zeros(n)
    m = f.singular_values.size
    rates[:m] = f.singular_values**2
    cutoff = RANK_RTOL * f.singular_values[0] if f.singular_values[0] > 0 else 0.0
    rates[:m][f.singular_values <= cutoff] = 0.0
    constants = f.v.T @ (w0 - crit)
    return (
        FlowPrediction(
            critical_point=crit,
            mode_constants=constants,
            rates=rates,
            center_mask=rates == 0.0,
            time_scale=2.0 * eps / n,
        ),
        f,
    )


def predict_dual_flow(X, weights0, mu, epochs: int, eps: float) -> np.ndarray:
    """Predicted dual weight trajectory, shape ``(epochs + 1, n)``."""
    prediction, f = decompose_dual_flow(X, weights0, mu, eps)
    return prediction.trajectory(f, epochs)


def predict_base_flow(w0, mu, epochs: int, eps: float, n_samples: int) -> np.ndarray:
    """Predicted vanilla weight trajectory: isotropic exponential decay.

    The mean-quantization convention makes the per-epoch time step depend on
    the sample count, hence the explicit ``n_samples``.
    """
    w0 = np.asarray(w0, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    if w0.shape != mu.shape:
        raise ValueError("w0 and mu must have the same length")
    t = flow_times(epochs, eps, n_samples)
    return mu[None, :] + np.exp(-t)[:, None] * (w0 - mu)[None, :]


@dataclass(frozen=True)
class DecayFit:
    """Per-mode log-linear decay fits of a recorded trajectory."""

    rates: np.ndarray  # fitted slopes of log|amplitude| vs t (nan if unobservable)
    observable: np.ndarray  # bool mask
    points_used: np.ndarray  # int per mode

    @property
    def n_modes(self) -> int:
        return self.rates.shape[0]


AMPLITUDE_FLOOR = 1e-8
OBSERVABLE_FLOOR = 1e-10


def fit_decay_rates(
    trajectory, factors: SvdFactors, eps: float, center=None, directions=None
) -> DecayFit:
    """Fit per-mode decay rates of a trajectory against continuous time.

    ``trajectory`` is ``(T, m)`` over consecutive epochs.  By default dual
    trajectories (``m == n``) are projected on the right singular vectors
    and vanilla trajectories (``m == d``) on the standard basis, since their
    decay is isotropic; pass ``directions`` (columns) to override, e.g. the
    left singular vectors for prototype-space trajectories of a dual layer.
    ``center`` is the fixed point the amplitudes are measured from; it
    defaults to the final trajectory point, which is accurate for converged
    runs.  Modes whose initial amplitude is below 1e-10 are marked
    unobservable; points with amplitude below 1e-8 are left out of the fit.
    """
    traj = as_matrix(trajectory, "trajectory")
    m = traj.shape[1]
    if directions is not None:
        directions = as_matrix(directions, "directions")
        if directions.shape[0] != m:
            raise ValueError("directions do not match the trajectory dimension")
    elif m == factors.n:
        directions = factors.v
    elif m == factors.d:
        directions = np.eye(m)
    else:
        raise ValueError(
            f"trajectory dimension {m} matches neither the sample count "
            f"{factors.n} nor the feature count {factors.d}"
        )
    center = traj[-1] if center is None else np.asarray(center, dtype=np.float64).reshape(-1)
    t = flow_times(traj.shape[0] - 1, eps, factors.n)
    amplitudes = np.abs((traj - center[None, :]) @ directions)

    n_modes = directions.shape[1]
    rates = np.full(n_modes, np.nan)
    observable = np.zeros(n_modes, dtype=bool)
    used = np.zeros(n_modes, dtype=np.int64)
    for i in range(n_modes):
        amp = amplitudes[:, i]
        if amp[0] < OBSERVABLE_FLOOR:
            continue
        mask = amp > AMPLITUDE_FLOOR
        if int(mask.sum()) < 3:
            continue
        slope, _ = np.polyfit(t[mask], np.log(amp[mask]), 1)
        rates[i] = slope
        observable[i] = True
        used[i] = int(mask.sum())
    return DecayFit(rates=rates, observable=observable, points_used=used)


@dataclass(frozen=True)
class SubspaceReport:
    residual_norms: np.ndarray  # per input vector
    basis_rank: int


def subspace_residuals(vectors, X, which: str = "range_X") -> SubspaceReport:
    """Distance of each column of ``vectors`` to a data range subspace.

    ``which`` selects the column space of X (``range_X``, spanned by the
    leading left singular vectors) or of its transpose (``range_XT``,
    spanned by the leading right singular vectors).
    """
    V = as_matrix(vectors, "vectors")
    f = svd(X)
    r = f.rank
    if which == "range_X":
        basis = f.u[:, :r]
    elif which == "range_XT":
        basis = f.v[:, :r]
    else:
        raise ValueError("which must be 'range_X' or 'range_XT'")
    if V.shape[0] != basis.shape[0]:
        raise ValueError(
            f"vectors of length {V.shape[0]} cannot lie in a subspace of "
            f"R^{basis.shape[0]}"
        )
    residual = V - basis @ (basis.T @ V)
    return SubspaceReport(
        residual_norms=np.linalg.norm(residual, axis=0), basis_rank=r
    )


@dataclass(frozen=True)
class DualityReport:
    """Numeric residuals for the whitening assumptions and range identities."""

    base_whiteness: float  # ||X X^T - I_d||_F
    dual_whiteness: float  # ||X^T X - I_n||_F
    u_recovery_max_error: float  # max_i ||u_i - X v_i / sigma_i||
    centroid_recovery_max_error: float  # max over probes of ||X pinv(X) mu - mu||

    def to_dict(self) -> dict:
        return {
            "base_whiteness": self.base_whiteness,
            "dual_whiteness": self.dual_whiteness,
            "u_recovery_max_error": self.u_recovery_max_error,
            "centroid_recovery_max_error": self.centroid_recovery_max_error,
        }


def duality_checks(X, n_probes: int = 5, seed: int = 0) -> DualityReport:
    """Residuals of the duality assumptions for a given data matrix.

    Probe centroids are random mixtures of data columns, mimicking Voronoi
    centroids; those always lie in the column space, so the critical point
    of the dual flow maps back onto them exactly.
    """
    X = as_matrix(X, "X")
    d, n = X.shape
    f = svd(X)
    base = float(np.linalg.norm(X @ X.T - np.eye(d)))
    dual = float(np.linalg.norm(X.T @ X - np.eye(n)))

    u_err = 0.0
    for i in range(f.rank):
        recovered = X @ f.v[:, i] / f.singular_values[i]
        u_err = max(u_err, float(np.linalg.norm(f.u[:, i] - recovered)))

    rng = np.random.default_rng(seed)
    pinv = pseudoinverse(X)
    mu_err = 0.0
    for _ in range(n_probes):
        weights = rng.dirichlet(np.ones(n))
        mu = X @ weights
        mu_err = max(mu_err, float(np.linalg.norm(X @ (pinv @ mu) - mu)))
    return DualityReport(
        base_whiteness=base,
        dual_whiteness=dual,
        u_recovery_max_error=u_err,
        centroid_recovery_max_error=mu_err,
    )
