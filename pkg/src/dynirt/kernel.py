"""RBF covariance and the Gaussian-process linear algebra used by curve fitting.

Every solve goes through a Cholesky factor of the well-conditioned matrix

    B = I + V^{-1/2} Sigma1 V^{-1/2},     V = Diag(v),

whose eigenvalues are all >= 1.  The closed forms

    P     = (Sigma1^{-1} + V^{-1})^{-1}                 = Sigma1 - A^T A
    W     = Sigma12^T Sigma1^{-1} P
    Sigma = Sigma2 + (W - Sigma12^T) Sigma1^{-1} Sigma12 = Sigma2 - C^T C
    mu    = W (m / v)

with ``A = L^{-1} V^{-1/2} Sigma1`` and ``C = L^{-1} V^{-1/2} Sigma12`` follow
from the Woodbury identity, so Sigma1 is never inverted.

Sites may carry negative variance (a factor that widens the posterior).  B
then loses its Cholesky factor and the same quantities come from a
symmetric-indefinite solve with ``Sigma1 + V`` instead:

    P  = Sigma1 - Sigma1 (Sigma1 + V)^{-1} Sigma1
    mu = Sigma12^T (Sigma1 + V)^{-1} m
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

#: Variance that marks a discarded (uninformative) site factor.
FALLBACK_VARIANCE = 1e6


class SingularCovarianceError(np.linalg.LinAlgError):
    """Raised when the jittered emission-time covariance is not positive definite."""


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the jittered RBF covariance.

    Parameters
    ----------
    h : float
        Bandwidth, in time units.
    S : float
        Amplitude; ``K(0) = S**2`` before jitter.
    epsilon : float
        Diagonal jitter added where two times coincide exactly.
    """

    h: float
    S: float = 1.0
    epsilon: float = 1e-4

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValueError(f"bandwidth h must be finite and > 0, got {self.h}")
        if not (np.isfinite(self.S) and self.S > 0):
            raise ValueError(f"amplitude S must be finite and > 0, got {self.S}")
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError(f"jitter epsilon must be finite and >= 0, got {self.epsilon}")

    def replace(self, **changes) -> "KernelParams":
        fields = {"h": self.h, "S": self.S, "epsilon": self.epsilon}
        fields.update(changes)
        return KernelParams(**fields)


def rbf(delta_tau, params: KernelParams):
    """``S^2 exp(-(delta/h)^2 / 2)``, plus ``epsilon`` where ``delta == 0`` exactly."""
    d = np.asarray(delta_tau, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("time differences must be finite")
    k = params.S**2 * np.exp(-0.5 * (d / params.h) ** 2)
    k = k + np.where(d == 0.0, params.epsilon, 0.0)
    return float(k) if k.ndim == 0 else k


def _as_times(x, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def build_cov(times_a, times_b, params: KernelParams, self_cov: bool = False) -> np.ndarray:
    """Covariance matrix ``K(|a_i - b_j|)``.

    Jitter is only added when ``self_cov`` is set (``times_a`` and ``times_b``
    must then be the same vector) and only at pairs with bitwise-equal times.
    Cross covariances are always jitter-free.
    """
    a = _as_times(times_a, "times_a")
    b = _as_times(times_b, "times_b")
    diff = a[:, None] - b[None, :]
    k = params.S**2 * np.exp(-0.5 * (diff / params.h) ** 2)
    if self_cov:
        if a.shape != b.shape or not np.array_equal(a, b):
            raise ValueError("self_cov=True requires identical time vectors")
        k = k + params.epsilon * (diff == 0.0)
    return k


def check_positive_definite(sigma1: np.ndarray, params: KernelParams) -> None:
    try:
        linalg.cholesky(sigma1, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            f"emission-time covariance is singular with jitter epsilon={params.epsilon}; "
            "increase epsilon or merge coincident emission times"
        ) from exc


def _whitened_factor(sigma1: np.ndarray, v: np.ndarray):
    s = 1.0 / np.sqrt(v)
    B = np.eye(len(v)) + s[:, None] * sigma1 * s[None, :]
    L = linalg.cholesky(B, lower=True, check_finite=False)
    return s, L


def _check_sites(m, v, n=None):
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float)
    if n is not None and not (len(m) == len(v) == n):
        raise ValueError("t, m and v must have equal length")
    if np.any(~np.isfinite(v) | (v == 0)):
        raise ValueError("site variances must be finite and nonzero")
    return m, v


def _indefinite_solve(sigma1: np.ndarray, v: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return linalg.solve(sigma1 + np.diag(v), rhs, assume_a="sym", check_finite=False)


def site_posterior(sigma1: np.ndarray, m: np.ndarray, v: np.ndarray):
    """Posterior covariance ``P`` and mean ``P (m/v)`` at the emission times.

    This is the prior ``N(0, sigma1)`` multiplied by independent Gaussian
    site factors ``N(m_i, v_i)``.  With negative ``v_i`` the result need not
    be positive definite; callers check.
    """
    m, v = _check_sites(m, v)
    if np.any(v < 0):
        X = _indefinite_solve(sigma1, v, np.column_stack([sigma1, m]))
        P = sigma1 - sigma1 @ X[:, :-1]
        return 0.5 * (P + P.T), sigma1 @ X[:, -1]
    s, L = _whitened_factor(sigma1, v)
    A = linalg.solve_triangular(L, s[:, None] * sigma1, lower=True, check_finite=False)
    P = sigma1 - A.T @ A
    P = 0.5 * (P + P.T)
    return P, P @ (m / v)


def predictive(t, tau, m, v, params: KernelParams):
    """Mean and covariance of the curve at query times ``tau``.

    Parameters
    ----------
    t : array, shape (n,)
        Emission times (distinct).
    tau : array, shape (k,)
        Query times.
    m, v : array, shape (n,)
        Means and variances of the Gaussian site factors.  Discarded sites
        carry ``v = FALLBACK_VARIANCE``; negative variances are allowed.

    Returns
    -------
    mu : array, shape (k,)
    sigma : array, shape (k, k)
    """
    t = _as_times(t, "t")
    tau = _as_times(tau, "tau")
    m, v = _check_sites(m, v, len(t))
    sigma1 = build_cov(t, t, params, self_cov=True)
    check_positive_definite(sigma1, params)
    sigma12 = build_cov(t, tau, params)
    sigma2 = build_cov(tau, tau, params)
    if np.any(v < 0):
        X = _indefinite_solve(sigma1, v, np.column_stack([sigma12, m]))
        sigma = sigma2 - sigma12.T @ X[:, :-1]
        return sigma12.T @ X[:, -1], 0.5 * (sigma + sigma.T)

    s, L = _whitened_factor(sigma1, v)
    C = linalg.solve_triangular(L, s[:, None] * sigma12, lower=True, check_finite=False)
    r = m / v
    z = linalg.solve_triangular(L, s * (sigma1 @ r), lower=True, check_finite=False)
    mu = sigma12.T @ r - C.T @ z
    sigma = sigma2 - C.T @ C
    return mu, 0.5 * (sigma + sigma.T)


def predictive_marginals(t, tau, m, v, params: KernelParams):
    """Like :func:`predictive` but returns only the marginal variances.

    Avoids forming the full ``k x k`` covariance for long query grids.
    """
    t = _as_times(t, "t")
    tau = _as_times(tau, "tau")
    m, v = _check_sites(m, v, len(t))
    sigma1 = build_cov(t, t, params, self_cov=True)
    check_positive_definite(sigma1, params)
    sigma12 = build_cov(t, tau, params)
    if np.any(v < 0):
        X = _indefinite_solve(sigma1, v, np.column_stack([sigma12, m]))
        var = params.S**2 - np.einsum("ij,ij->j", sigma12, X[:, :-1])
        return sigma12.T @ X[:, -1], var
    s, L = _whitened_factor(sigma1, v)
    C = linalg.solve_triangular(L, s[:, None] * sigma12, lower=True, check_finite=False)
    r = m / v
    z = linalg.solve_triangular(L, s * (sigma1 @ r), lower=True, check_finite=False)
    mu = sigma12.T @ r - C.T @ z
    var = params.S**2 - np.einsum("ij,ij->j", C, C)
    return mu, var
