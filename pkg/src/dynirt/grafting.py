"""Grafting: replace each emission factor by a moment-matched Gaussian factor.

All sites are updated synchronously.  Each sweep computes, for every site,
the Gaussian message from the prior and the other sites' current factors,
moment-matches the tilted marginal ``f_i * message_i`` on a grid, and solves
for the Gaussian factor that would have produced the same moments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .emissions import EmissionTriplet, GridSpec, SummedLogDensity, tilted_moments_batch
from .kernel import FALLBACK_VARIANCE, KernelParams, build_cov, check_positive_definite, site_posterior

log = logging.getLogger(__name__)

#: Smallest admissible ``v_i - P_ii`` before a site's message is considered invalid.
MESSAGE_GUARD = 1e-10

FALLBACKS = ("signed", "tilt", "discard")


@dataclass(frozen=True)
class GaussianFactorSet:
    m: np.ndarray
    v: np.ndarray

    @property
    def discarded(self) -> np.ndarray:
        return self.v >= FALLBACK_VARIANCE

    @classmethod
    def standard(cls, n: int) -> "GaussianFactorSet":
        return cls(np.zeros(n), np.ones(n))


@dataclass(frozen=True)
class MessageSet:
    eta: np.ndarray
    rho: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class IterationControl:
    """Stopping rule and numerical knobs for :func:`graft`.

    ``damping`` mixes the previous factor's natural parameters into every
    update (0 disables it).  Independently, a site whose precision update
    reverses direction between sweeps is damped by ``oscillation_damping``
    from then on; set that to 0 for plain undamped sweeps.

    ``fallback`` selects what happens to a site whose implied variance is
    not positive; see :func:`update_factors`.  Under ``"signed"`` a sweep
    that would leave the posterior covariance indefinite reverts its
    negative sites to ``"tilt"``, and a run that does not converge is
    repeated from scratch under ``"tilt"``.
    """

    tol: float = 1e-4
    max_iter: int = 50
    damping: float = 0.0
    oscillation_damping: float = 0.5
    grid: GridSpec = field(default_factory=GridSpec)
    fallback: str = "signed"

    def __post_init__(self):
        if self.fallback not in FALLBACKS:
            raise ValueError(f"fallback must be one of {FALLBACKS}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 <= self.damping < 1.0 or not 0.0 <= self.oscillation_damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")


@dataclass(frozen=True)
class GraftResult:
    factors: GaussianFactorSet
    n_iter: int
    n_sweeps: int
    converged: bool
    max_change: float


def compute_messages(factors: GaussianFactorSet, sigma1: np.ndarray) -> MessageSet:
    """Leave-one-out Gaussian messages for every site at once.

    Evaluates

        P   = (Sigma1^-1 + Diag(1/v))^-1,   mu_hat = P (m/v)
        H   = P + (diag(P) 1^T) o P / ((v - diag(P)) 1^T)
        M   = 1 (m/v)^T - Diag(m/v)
        rho = diag(H),   eta = (H o M) 1

    Sites with a non-positive cavity variance (for ``v_i > 0``, those with
    ``v_i - P_ii < MESSAGE_GUARD``) are returned with ``valid[i] = False``
    and placeholder moments.
    """
    m, v = factors.m, factors.v
    P, _ = site_posterior(sigma1, m, v)
    dP = np.diag(P)
    denom = v - dP
    valid = np.where(v > 0, denom >= MESSAGE_GUARD, (dP > 0) & (denom <= -MESSAGE_GUARD))
    safe = np.where(valid, denom, 1.0)
    H = P + (dP[:, None] * P) / safe[:, None]
    r = m / v
    M = np.ones((len(m), 1)) * r[None, :] - np.diag(r)
    rho = np.diag(H).copy()
    eta = (H * M).sum(axis=1)
    valid &= np.isfinite(rho) & (rho > 0) & np.isfinite(eta)
    rho[~valid] = 1.0
    eta[~valid] = 0.0
    return MessageSet(eta, rho, valid)


def update_factors(messages: MessageSet, nu, gamma, fallback: str = "discard") -> GaussianFactorSet:
    """Factors whose product with the messages has the tilted moments ``(nu, gamma)``.

    Sites with an invalid message or non-finite moments are discarded as
    ``N(0, FALLBACK_VARIANCE)``.  So are sites whose implied variance is not
    positive when ``fallback="discard"``.  With ``fallback="tilt"`` such a
    site instead keeps its linear natural parameter ``m/v`` and only has its
    precision raised to ``1/FALLBACK_VARIANCE``.  Discarding those sites drops
    exactly the surprising observations under a non-log-concave likelihood
    (a correct guess by a weak student under 3PL) and biases the posterior.
    ``fallback="signed"`` keeps a finite negative variance as it is, so the
    tilted moments are matched exactly; only infinite or vanishing
    precisions get the ``"tilt"`` treatment.
    """
    if fallback not in FALLBACKS:
        raise ValueError(f"fallback must be one of {FALLBACKS}")
    nu = np.asarray(nu, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = 1.0 / gamma - 1.0 / messages.rho
        shift = nu / gamma - messages.eta / messages.rho
        v = 1.0 / prec
        m = v * shift
    broken = ~messages.valid | ~np.isfinite(prec) | ~np.isfinite(shift)
    nonpos = ~broken & ~((v > 0) & np.isfinite(v) & (v < FALLBACK_VARIANCE))
    if fallback == "signed":
        nonpos &= ~((v < 0) & (v > -FALLBACK_VARIANCE))
    if fallback == "discard":
        broken |= nonpos
    else:
        v = np.where(nonpos, FALLBACK_VARIANCE, v)
        m = np.where(nonpos, FALLBACK_VARIANCE * shift, m)
    v = np.where(broken, FALLBACK_VARIANCE, v)
    m = np.where(broken, 0.0, m)
    return GaussianFactorSet(m, v)


def _damp(old: GaussianFactorSet, new: GaussianFactorSet, damping) -> GaussianFactorSet:
    if np.all(damping == 0.0):
        return new
    prec = (1 - damping) / new.v + damping / old.v
    shift = (1 - damping) * new.m / new.v + damping * old.m / old.v
    return GaussianFactorSet(shift / prec, 1.0 / prec)


def collapse_coincident(emissions: list[EmissionTriplet]):
    """Merge emissions sharing a time into one emission with summed log-density.

    Returns ``(merged, index)`` where ``merged`` is sorted by time and
    ``index[k]`` is the position in ``merged`` of ``emissions[k]``.
    """
    times = np.array([e.time for e in emissions], dtype=float)
    uniq, index = np.unique(times, return_inverse=True)
    if len(uniq) == len(emissions) and np.all(np.diff(times) > 0):
        return list(emissions), np.arange(len(emissions))
    merged = []
    for k, t in enumerate(uniq):
        members = [emissions[i] for i in np.flatnonzero(index == k)]
        if len(members) == 1:
            merged.append(members[0])
        else:
            merged.append(
                EmissionTriplet(
                    float(t),
                    tuple(e.payload for e in members),
                    SummedLogDensity(tuple(e.log_density for e in members)),
                )
            )
    return merged, index


def factor_change(old: GaussianFactorSet, new: GaussianFactorSet) -> np.ndarray:
    """Per-site change in natural parameters ``(1/v, m/v)``.

    Discarded sites sit at precision ~0, so moving into or out of the
    fallback registers as the (small) precision actually gained or lost.
    """
    dp = np.abs(1.0 / new.v - 1.0 / old.v)
    dr = np.abs(new.m / new.v - old.m / old.v)
    return np.maximum(dp, dr)


def _posterior_is_valid(sigma1: np.ndarray, factors: GaussianFactorSet) -> bool:
    try:
        P, mu = site_posterior(sigma1, factors.m, factors.v)
        linalg.cholesky(P, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        return False
    return bool(np.all(np.isfinite(mu)))


def graft(
    emissions: list[EmissionTriplet],
    params: KernelParams,
    ctrl: IterationControl = IterationControl(),
) -> GraftResult:
    """Fit Gaussian site factors for emissions with distinct times.

    Iteration stops once no site's natural parameters move by ``ctrl.tol``
    or more.  ``n_iter`` counts the sweeps that still moved some factor by at least
    ``ctrl.tol``; ``n_sweeps`` additionally includes the final confirming
    sweep.  Purely Gaussian emissions therefore report ``n_iter == 1``.
    """
    if not emissions:
        raise ValueError("graft needs at least one emission")
    t = np.array([e.time for e in emissions], dtype=float)
    if len(np.unique(t)) != len(t):
        raise ValueError("emission times must be distinct; merge them with collapse_coincident")
    sigma1 = build_cov(t, t, params, self_cov=True)
    check_positive_definite(sigma1, params)

    grid = ctrl.grid
    y0 = grid.points
    densities = [e.log_density for e in emissions]
    base_logf = np.vstack([f(y0) for f in densities])

    n = len(emissions)
    factors = GaussianFactorSet.standard(n)
    site_damping = np.full(n, ctrl.damping)
    last_step = np.zeros(n)
    n_iter = 0
    change = np.inf
    converged = False
    sweep = 0
    for sweep in range(1, ctrl.max_iter + 1):
        msgs = compute_messages(factors, sigma1)
        nu, gamma = tilted_moments_batch(densities, msgs.eta, msgs.rho, grid, base_logf=base_logf)
        proposal = update_factors(msgs, nu, gamma, ctrl.fallback)
        step = 1.0 / proposal.v - 1.0 / factors.v
        flipped = (step * last_step < 0) & (np.abs(step) >= ctrl.tol)
        site_damping[flipped] = np.maximum(site_damping[flipped], ctrl.oscillation_damping)
        new = _damp(factors, proposal, site_damping)
        if np.any(new.v < 0) and not _posterior_is_valid(sigma1, new):
            proposal = update_factors(msgs, nu, gamma, "tilt")
            step = 1.0 / proposal.v - 1.0 / factors.v
            new = _damp(factors, proposal, site_damping)
            if np.any(new.v < 0) and not _posterior_is_valid(sigma1, new):
                # damping toward last sweep's negative sites can still leave
                # the posterior improper; take those sites' tilt values outright
                neg = new.v < 0
                new = GaussianFactorSet(np.where(neg, proposal.m, new.m), np.where(neg, proposal.v, new.v))
        last_step = step
        change = float(np.max(factor_change(factors, new)))
        factors = new
        if change < ctrl.tol:
            converged = True
            break
        n_iter = sweep
    if not converged and ctrl.fallback == "signed":
        # negative sites can keep the iteration cycling; the tilt rule is
        # the stable alternative
        log.info("signed grafting did not converge (max change %.3g); retrying with tilt", change)
        return graft(emissions, params, replace(ctrl, fallback="tilt"))
    if not converged:
        log.warning("grafting did not converge in %d sweeps (max change %.3g)", ctrl.max_iter, change)
    return GraftResult(factors, n_iter, sweep, converged, change)
