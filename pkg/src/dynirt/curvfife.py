"""Curve fitting from emissions: the public fitting API.

:func:`fit` grafts Gaussian factors onto a set of emissions under a
standard-normal-marginal RBF prior and returns a :class:`CurveDistribution`
that answers joint Gaussian queries at arbitrary times.  Emission
log-densities are always expressed in the fitting space; the attached
:class:`~dynirt.transforms.Transform` is only used to map summaries back to
the curve's original range.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .emissions import EmissionTriplet, GridSpec, log_expected_density
from .grafting import GaussianFactorSet, IterationControl, collapse_coincident, graft
from .kernel import KernelParams, predictive, predictive_marginals
from .transforms import Transform

log = logging.getLogger(__name__)

__all__ = [
    "BandwidthSelection",
    "CV_RULES",
    "CurveDistribution",
    "Transform",
    "default_bandwidths",
    "fit",
    "select_bandwidth",
    "choose_bandwidth",
    "cv_pointwise",
]


@dataclass(frozen=True)
class CurveDistribution:
    emission_times: np.ndarray
    factors: GaussianFactorSet
    params: KernelParams
    transform: Transform = field(default_factory=Transform.identity)
    converged: bool = True
    n_iter: int = 0

    def query(self, tau):
        """Joint mean and covariance of the fitted-space curve at ``tau``."""
        return predictive(self.emission_times, tau, self.factors.m, self.factors.v, self.params)

    def query_marginals(self, tau):
        """Mean and variance of the fitted-space curve at each time in ``tau``."""
        return predictive_marginals(self.emission_times, tau, self.factors.m, self.factors.v, self.params)

    def marginals(self, tau):
        """Median and +-1 sd band at each time, mapped to the original space.

        Returns ``(median, lower, upper)``.  The +-1 sd band in the fitting
        space is the 70% band; monotone transforms carry quantiles over, so
        the mapped band and median remain valid quantiles.
        """
        mean, var = self.query_marginals(tau)
        sd = np.sqrt(np.maximum(var, 0.0))
        inv = self.transform.inverse
        return inv(mean), inv(mean - sd), inv(mean + sd)

    @property
    def warning(self) -> str | None:
        return None if self.converged else "grafting did not converge"


def fit(
    emissions: list[EmissionTriplet],
    params: KernelParams,
    ctrl: IterationControl = IterationControl(),
    transform: Transform = Transform.identity(),
) -> CurveDistribution:
    if params.S != 1.0:
        raise ValueError("curve fitting assumes a standard normal prior marginal (S = 1)")
    merged, _ = collapse_coincident(list(emissions))
    res = graft(merged, params, ctrl)
    times = np.array([e.time for e in merged], dtype=float)
    return CurveDistribution(times, res.factors, params, transform, res.converged, res.n_iter)


def default_bandwidths(times, n: int = 8) -> np.ndarray:
    """``n`` log-spaced bandwidths between span/50 and span/2."""
    times = np.asarray(times, dtype=float)
    span = float(times.max() - times.min()) if len(times) else 0.0
    if span <= 0:
        return np.array([1.0])
    return np.geomspace(span / 50, span / 2, n)


@dataclass(frozen=True)
class BandwidthSelection:
    h: float
    scores: dict


def kfold_indices(n: int, k: int, seed) -> list[np.ndarray]:
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k too large: {k} folds for {n} emissions")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


def heldout_score(
    train: list[EmissionTriplet],
    test: list[EmissionTriplet],
    params: KernelParams,
    ctrl: IterationControl = IterationControl(),
) -> np.ndarray:
    """``log E[f_i(y(t_i))]`` for each test emission under a fit to ``train``."""
    dist = fit(train, params, ctrl)
    tt = np.array([e.time for e in test], dtype=float)
    mean, var = dist.query_marginals(tt)
    return np.array(
        [log_expected_density(e.log_density, mu, s2, ctrl.grid) for e, mu, s2 in zip(test, mean, var)]
    )


CV_RULES = ("max", "one_se")


def select_bandwidth(
    emissions: list[EmissionTriplet],
    candidate_hs=None,
    k: int = 5,
    ctrl: IterationControl = IterationControl(),
    seed=0,
    epsilon: float = 1e-4,
    rule: str = "max",
) -> BandwidthSelection:
    """k-fold cross-validated choice of the RBF bandwidth.

    Each candidate is scored by the mean held-out ``log E[f_i]`` over all
    emissions.  ``rule="max"`` takes the best score, ties to the smallest
    bandwidth.  ``rule="one_se"`` takes the largest bandwidth whose score is
    within one standard error of the best, the error being that of the
    best candidate's mean per-emission score.
    """
    if rule not in CV_RULES:
        raise ValueError(f"rule must be one of {CV_RULES}")
    emissions = list(emissions)
    if candidate_hs is None:
        candidate_hs = default_bandwidths([e.time for e in emissions])
    hs = sorted(float(h) for h in candidate_hs)
    if not hs:
        raise ValueError("candidate bandwidth set is empty")
    pointwise = {h: cv_pointwise(emissions, h, k, ctrl, seed, epsilon) for h in hs}
    return BandwidthSelection(choose_bandwidth(pointwise, rule), {h: float(v.mean()) for h, v in pointwise.items()})


def best_bandwidth(scores: dict, tol: float = 1e-12) -> float:
    """Highest-scoring bandwidth; scores within ``tol`` of the best tie, and ties go to the smallest."""
    top = max(scores.values())
    return min(h for h, s in scores.items() if s >= top - tol * max(1.0, abs(top)))


def choose_bandwidth(pointwise: dict, rule: str = "max") -> float:
    """Apply a selection rule to per-emission held-out scores keyed by bandwidth."""
    means = {h: float(np.mean(v)) for h, v in pointwise.items()}
    best = best_bandwidth(means)
    if rule == "max" or len(pointwise[best]) < 2:
        return best
    # SE of the best candidate's own mean score, not of paired differences
    ref = pointwise[best]
    se = float(np.std(ref, ddof=1) / np.sqrt(len(ref)))
    return max(h for h, m in means.items() if m >= means[best] - se)


def cv_pointwise(emissions, h, k, ctrl=IterationControl(), seed=0, epsilon: float = 1e-4) -> np.ndarray:
    """Held-out score of every emission under k-fold CV at bandwidth ``h``."""
    folds = kfold_indices(len(emissions), k, seed)
    params = KernelParams(h=h, S=1.0, epsilon=epsilon)
    out = np.empty(len(emissions))
    for fold in folds:
        held = set(fold.tolist())
        train = [e for i, e in enumerate(emissions) if i not in held]
        idx = sorted(held)
        out[idx] = heldout_score(train, [emissions[i] for i in idx], params, ctrl)
    return out
