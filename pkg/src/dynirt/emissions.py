"""Emissions and moments of tilted marginals by grid quadrature.

A tilted marginal is ``p(y) ∝ f(y) N(y; mu, var)``: an emission's likelihood
times the Gaussian message arriving at its site.  Everything is evaluated in
log space with max-subtraction so that sharply peaked or heavily penalised
emissions do not underflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import special

from .transforms import Transform


class IncompatibleEmissionError(ValueError):
    pass


@dataclass(frozen=True)
class EmissionTriplet:
    """One observation: a time, the raw emission, and ``y -> log f(y)``.

    ``log_density`` takes an array of curve values in the fitting space and
    returns an array of the same shape (``-inf`` allowed).
    """

    time: float
    payload: Any
    log_density: Callable = field(repr=False)


@dataclass(frozen=True)
class TiltedMoments:
    nu: float
    gamma: float


@dataclass(frozen=True)
class GridSpec:
    """Uniform quadrature grid; widened to cover messages that stray outside it."""

    lo: float = -6.0
    hi: float = 6.0
    n: int = 1201
    width_sd: float = 6.0
    min_points_per_sd: float = 2.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("grid requires hi > lo")
        if self.n < 11:
            raise ValueError("grid needs at least 11 points")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)


def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def _normal_logpdf(y, mean, var):
    return -0.5 * (y - mean) ** 2 / var - 0.5 * np.log(2 * np.pi * var)


def moments_from_log_weights(y: np.ndarray, logw: np.ndarray):
    """Trapezoid mean and variance of an unnormalised density given on rows of ``y``.

    ``y`` and ``logw`` have shape ``(n_sites, n_grid)`` (or broadcast to it)
    and each row must be a uniform grid.  Returns ``(nu, gamma, log_mass)``
    where ``log_mass`` omits the grid spacing.
    """
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw, axis=-1, keepdims=True)
    if np.any(~np.isfinite(top)):
        raise IncompatibleEmissionError("emission incompatible with message support")
    w = np.exp(logw - top) * _trapezoid_weights(logw.shape[-1])
    z = w.sum(axis=-1)
    nu = (w * y).sum(axis=-1) / z
    gamma = (w * (y - nu[..., None]) ** 2).sum(axis=-1) / z
    return nu, gamma, np.log(z) + top[..., 0]


def _grid_for(msg_mean, msg_var, grid: GridSpec):
    half = grid.width_sd * np.sqrt(msg_var)
    lo = np.minimum(grid.lo, msg_mean - half)
    hi = np.maximum(grid.hi, msg_mean + half)
    return lo, hi


def tilted_moments_batch(
    log_densities: list[Callable],
    msg_mean,
    msg_var,
    grid: GridSpec = GridSpec(),
    base_logf: np.ndarray | None = None,
):
    """Tilted mean/variance for many sites at once.

    Parameters
    ----------
    log_densities : list of callables
        One emission log-density per site.
    msg_mean, msg_var : arrays, shape (n,)
        Gaussian message at each site.
    base_logf : array, shape (n, grid.n), optional
        Log-densities already evaluated on ``grid.points``; sites whose
        message fits inside the base grid reuse them.

    Returns
    -------
    nu, gamma : arrays, shape (n,)
    """
    msg_mean = np.asarray(msg_mean, dtype=float)
    msg_var = np.asarray(msg_var, dtype=float)
    if np.any(~(msg_var > 0)):
        raise ValueError("message variances must be positive")
    n = len(msg_mean)
    lo, hi = _grid_for(msg_mean, msg_var, grid)
    inside = (lo == grid.lo) & (hi == grid.hi)
    nu = np.empty(n)
    gamma = np.empty(n)

    y0 = grid.points
    if base_logf is None:
        base_logf = np.vstack([f(y0) for f in log_densities]) if n else np.empty((0, grid.n))
    idx = np.flatnonzero(inside)
    if idx.size:
        logw = base_logf[idx] + _normal_logpdf(y0[None, :], msg_mean[idx, None], msg_var[idx, None])
        nu[idx], gamma[idx], _ = moments_from_log_weights(y0[None, :], logw)

    u = np.linspace(0.0, 1.0, grid.n)
    for i in np.flatnonzero(~inside):
        y = lo[i] + (hi[i] - lo[i]) * u
        logw = log_densities[i](y) + _normal_logpdf(y, msg_mean[i], msg_var[i])
        nu[i], gamma[i], _ = moments_from_log_weights(y, logw)

    # a tilted marginal narrower than the grid resolution is re-integrated on
    # a grid centred on it
    spacing = (hi - lo) / (grid.n - 1)
    narrow = np.sqrt(gamma) < grid.min_points_per_sd * spacing
    for i in np.flatnonzero(narrow):
        # an unresolved peak can collapse onto one node, so its width is only
        # known to be below the current spacing
        width = max(np.sqrt(gamma[i]), spacing[i])
        for _ in range(8):
            half = 10.0 * max(width, 1e-300)
            y = np.linspace(nu[i] - half, nu[i] + half, grid.n)
            logw = log_densities[i](y) + _normal_logpdf(y, msg_mean[i], msg_var[i])
            nu[i], gamma[i], _ = moments_from_log_weights(y, logw)
            step = 2 * half / (grid.n - 1)
            if np.sqrt(gamma[i]) >= grid.min_points_per_sd * step:
                break
            width = max(np.sqrt(gamma[i]), step)
    return nu, gamma


def tilted_moments(
    emission: EmissionTriplet, msg_mean: float, msg_var: float, grid: GridSpec = GridSpec()
) -> TiltedMoments:
    """Mean and variance of ``f(y) N(y; msg_mean, msg_var)`` normalised."""
    nu, gamma = tilted_moments_batch([emission.log_density], [msg_mean], [msg_var], grid)
    return TiltedMoments(float(nu[0]), float(gamma[0]))


def log_expected_density(log_density: Callable, mean: float, var: float, grid: GridSpec = GridSpec()) -> float:
    """``log E[f(y)]`` for ``y ~ N(mean, var)``, by trapezoid on the grid."""
    lo, hi = _grid_for(np.asarray(mean), np.asarray(var), grid)
    y = np.linspace(float(lo), float(hi), grid.n)
    logg = -0.5 * (y - mean) ** 2 / var
    logw = log_density(y) + logg
    top = np.max(logw)
    if not np.isfinite(top):
        return -np.inf
    tw = _trapezoid_weights(grid.n)
    # dividing by the Gaussian's own quadrature mass cancels truncation error
    mass = np.sum(np.exp(logg - logg.max()) * tw)
    return float(np.log(np.sum(np.exp(logw - top) * tw) / mass) + top - logg.max())


# -- concrete emission families ---------------------------------------------


@dataclass(frozen=True)
class _BernoulliIdentity:
    yes: bool

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        p = y if self.yes else 1.0 - y
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(p)
        return np.where((y >= 0) & (y <= 1), out, -np.inf)


@dataclass(frozen=True)
class _BernoulliProbit:
    yes: bool

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return special.log_ndtr(x if self.yes else -x)


def bernoulli_log_density(answer: bool, transform: Transform = Transform.identity()) -> Callable:
    """Log-likelihood of a yes/no answer whose success probability is the curve.

    In original space the density is ``y`` (yes) or ``1 - y`` (no); in the
    fitting space it is that density composed with the inverse transform.
    """
    answer = bool(answer)
    if transform.kind == "identity":
        return _BernoulliIdentity(answer)
    if transform.kind == "probit":
        return _BernoulliProbit(answer)
    return transform.pullback(_BernoulliIdentity(answer))


def bernoulli_emission(time: float, answer: bool, transform: Transform = Transform.identity()) -> EmissionTriplet:
    return EmissionTriplet(float(time), bool(answer), bernoulli_log_density(answer, transform))


@dataclass(frozen=True)
class _GaussianObservation:
    value: float
    std: float

    def __call__(self, y):
        return _normal_logpdf(self.value, np.asarray(y, dtype=float), self.std**2)


def gaussian_emission(time: float, value: float, std: float) -> EmissionTriplet:
    """A noisy reading ``value ~ N(y(time), std^2)``."""
    if not std > 0:
        raise ValueError("std must be positive")
    return EmissionTriplet(float(time), (float(value), float(std)), _GaussianObservation(float(value), float(std)))


@dataclass(frozen=True)
class _Uniform:
    def __call__(self, y):
        return np.zeros(np.shape(y))


def uniform_emission(time: float) -> EmissionTriplet:
    """An emission carrying no information."""
    return EmissionTriplet(float(time), None, _Uniform())


@dataclass(frozen=True)
class SummedLogDensity:
    """Product of several emissions observed at the same time."""

    parts: tuple

    def __call__(self, y):
        total = self.parts[0](y)
        for f in self.parts[1:]:
            total = total + f(y)
        return total
