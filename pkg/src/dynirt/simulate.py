"""Synthetic dynamic-IRT data: ability curves, probit-3PL items and responses.

Curves: Latin-hypercube endpoints ``(theta(0), theta(1))`` in the unit
square, interiors drawn from an RBF Gaussian process conditioned on both
endpoints, redrawn until the whole curve lies in [0, 1].

The bridge uses a constant prior mean of 0.5 (the centre of the ability
range); with a zero mean almost every draw would leave [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .dynaesti import Responses
from .irf import ItemModel, ThreePL, probit_three_pl
from .kernel import KernelParams, build_cov

PRIOR_MEAN = 0.5


class RejectionLimitError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_students: int = 500
    m_items: int = 500
    gen_h: float = 0.19
    gen_S: float = 0.6
    seed: int = 0
    grid_points: int = 1001
    a_log_sd: float = 0.2
    b_range: tuple = (0.0, 1.0)
    c_range: tuple = (0.0, 0.2)
    static: bool = False
    max_attempts: int = 100_000

    def __post_init__(self):
        if self.n_students < 1 or self.m_items < 1:
            raise ValueError("need at least one student and one item")
        if not (self.gen_h > 0 and self.gen_S > 0):
            raise ValueError("gen_h and gen_S must be positive")

    def streams(self):
        """Independent generators for curves, items and responses."""
        return [np.random.default_rng(s) for s in np.random.SeedSequence(self.seed).spawn(3)]


@dataclass
class SyntheticData:
    config: SynthConfig
    grid: np.ndarray
    curves: np.ndarray
    items: dict
    responses: Responses
    students: list = field(default_factory=list)


def latin_hypercube(n: int, dim: int, rng) -> np.ndarray:
    """``n`` points in ``[0, 1]^dim``; each coordinate hits every ``1/n`` stratum once."""
    u = rng.random((n, dim))
    strata = np.column_stack([rng.permutation(n) for _ in range(dim)])
    return (strata + u) / n


class _Bridge:
    """Sampler for the GP interior given the endpoint values."""

    def __init__(self, grid: np.ndarray, params: KernelParams):
        K = build_cov(grid, grid, params.replace(epsilon=0.0), self_cov=True)
        ends = [0, len(grid) - 1]
        inner = np.arange(1, len(grid) - 1)
        Kee = K[np.ix_(ends, ends)]
        Kie = K[np.ix_(inner, ends)]
        self.gain = np.linalg.solve(Kee, Kie.T).T
        C = K[np.ix_(inner, inner)] - self.gain @ Kie.T
        lam, U = np.linalg.eigh(0.5 * (C + C.T))
        keep = lam > 1e-12 * lam.max()
        self.root = U[:, keep] * np.sqrt(lam[keep])

    def draw(self, endpoints, rng, batch: int) -> np.ndarray:
        mean = PRIOR_MEAN + self.gain @ (np.asarray(endpoints) - PRIOR_MEAN)
        z = rng.standard_normal((self.root.shape[1], batch))
        inner = mean[:, None] + self.root @ z
        ends = np.broadcast_to(np.asarray(endpoints)[:, None], (2, batch))
        return np.vstack([ends[:1], inner, ends[1:]]).T


def sample_curves(config: SynthConfig, rng=None):
    """True ability curves on a uniform grid over [0, 1].

    Returns ``(grid, curves)`` with ``curves`` of shape ``(n, grid_points)``.
    """
    rng = config.streams()[0] if rng is None else rng
    grid = np.linspace(0.0, 1.0, config.grid_points)
    n = config.n_students
    if config.static:
        levels = latin_hypercube(n, 1, rng)[:, 0]
        return grid, np.repeat(levels[:, None], len(grid), axis=1)
    ends = latin_hypercube(n, 2, rng)
    bridge = _Bridge(grid, KernelParams(config.gen_h, config.gen_S, 0.0))
    seeds = rng.bit_generator.seed_seq.spawn(n) if hasattr(rng.bit_generator, "seed_seq") else None
    curves = np.empty((n, len(grid)))
    for i in range(n):
        sub = np.random.default_rng(seeds[i]) if seeds is not None else rng
        tried = 0
        while True:
            batch = 32
            draws = bridge.draw(ends[i], sub, batch)
            ok = np.flatnonzero(np.all((draws >= 0) & (draws <= 1), axis=1))
            if ok.size:
                curves[i] = draws[ok[0]]
                break
            tried += batch
            if tried >= config.max_attempts:
                raise RejectionLimitError(
                    f"curve {i}: no draw inside [0, 1] after {tried} attempts; try a smaller gen_S"
                )
    return grid, curves


def sample_items(config: SynthConfig, rng=None) -> dict:
    rng = config.streams()[1] if rng is None else rng
    m = config.m_items
    b = rng.uniform(*config.b_range, size=m)
    c = rng.uniform(*config.c_range, size=m)
    a = np.exp(config.a_log_sd * rng.standard_normal(m))
    return {item_id(j, m): ItemModel("probit3pl", ThreePL(float(a[j]), float(b[j]), float(c[j]))) for j in range(m)}


def response_times(m: int) -> np.ndarray:
    """``T_j = (j - 1) / (m - 1)``: items spread uniformly over [0, 1]."""
    return np.linspace(0.0, 1.0, m) if m > 1 else np.zeros(1)


def student_id(i: int, n: int) -> str:
    return f"s{i:0{len(str(max(n - 1, 1)))}d}"


def item_id(j: int, m: int) -> str:
    return f"i{j:0{len(str(max(m - 1, 1)))}d}"


def sample_responses(grid, curves, items: dict, times=None, rng=None, students=None) -> Responses:
    """Draw ``R_ij ~ F(theta_i(T_j), psi_j)`` for every student and item."""
    rng = np.random.default_rng() if rng is None else rng
    names = list(items)
    times = response_times(len(names)) if times is None else np.asarray(times, dtype=float)
    n = curves.shape[0]
    students = [student_id(i, n) for i in range(n)] if students is None else students
    theta = np.array([np.interp(times, grid, c) for c in curves])
    theta = np.clip(theta, 1e-12, 1 - 1e-12)
    p = np.column_stack([items[j].prob(theta[:, k], 1) for k, j in enumerate(names)])
    R = (rng.random(p.shape) < p).astype(int)
    return Responses(
        np.repeat(students, len(names)),
        np.tile(names, n),
        np.tile(times, n),
        R.ravel(),
    )


def simulate(config: SynthConfig) -> SyntheticData:
    rc, ri, rr = config.streams()
    grid, curves = sample_curves(config, rc)
    items = sample_items(config, ri)
    students = [student_id(i, config.n_students) for i in range(config.n_students)]
    responses = sample_responses(grid, curves, items, rng=rr, students=students)
    return SyntheticData(config, grid, curves, items, responses, students)


@dataclass
class PollingData:
    times: np.ndarray
    answers: np.ndarray
    grid: np.ndarray
    truth: np.ndarray


def polling(seed, n_days: int = 100, h: float = 0.19, grid_points: int = 1001) -> PollingData:
    """One yes/no answer per day from a population whose approval drifts.

    Approval is ``Phi(g(t))`` with ``g`` a unit-amplitude RBF Gaussian
    process on [0, 1]; day ``d`` sits at ``t = d / (n_days - 1)``.
    """
    rng = np.random.default_rng(seed)
    grid = np.linspace(0.0, 1.0, grid_points)
    times = np.linspace(0.0, 1.0, n_days)
    both = np.concatenate([times, grid])
    K = build_cov(both, both, KernelParams(h=h, S=1.0, epsilon=0.0), self_cov=True)
    lam, U = np.linalg.eigh(K)
    keep = lam > 1e-10 * lam.max()
    g = (U[:, keep] * np.sqrt(lam[keep])) @ rng.standard_normal(keep.sum())
    approval = special.ndtr(g)
    answers = rng.random(n_days) < approval[:n_days]
    return PollingData(times, answers, grid, approval[n_days:])
