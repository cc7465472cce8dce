"""Metrics comparing estimated curves and IRFs with the truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .irf import ItemModel


@dataclass(frozen=True)
class SampledFunction:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or len(grid) < 2:
            raise ValueError("grid and values must be equal-length 1-D arrays with >= 2 points")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def on(self, grid) -> np.ndarray:
        return np.interp(grid, self.grid, self.values)


def _common(f: SampledFunction, g: SampledFunction):
    if f.grid.shape == g.grid.shape and np.array_equal(f.grid, g.grid):
        return f.grid, f.values, g.values
    lo = max(f.grid[0], g.grid[0])
    hi = min(f.grid[-1], g.grid[-1])
    if not (np.isclose(lo, f.grid[0]) and np.isclose(hi, f.grid[-1])):
        raise ValueError("functions are not sampled over a common interval")
    return f.grid, f.values, g.on(f.grid)


def _mean_integral(x, y) -> float:
    return float(np.trapezoid(y, x) / (x[-1] - x[0]))


def rmise(f: SampledFunction, g: SampledFunction) -> float:
    """Root of the mean integrated squared difference over ``f``'s interval.

    On [0, 1] this is ``sqrt(int (f - g)^2 dx)``.  ``g`` is linearly
    interpolated onto ``f``'s grid when the grids differ.
    """
    x, a, b = _common(f, g)
    return float(np.sqrt(max(_mean_integral(x, (a - b) ** 2), 0.0)))


def correspondence(theta: SampledFunction, theta_hat: SampledFunction) -> float:
    """Cosine similarity of the derivatives of two curves, in [-1, 1]."""
    x, a, b = _common(theta, theta_hat)
    da = np.gradient(a, x)
    db = np.gradient(b, x)
    na = np.sqrt(np.trapezoid(da * da, x))
    nb = np.sqrt(np.trapezoid(db * db, x))
    scale = 1e-14
    if na <= scale * (1 + np.max(np.abs(a))) or nb <= scale * (1 + np.max(np.abs(b))):
        raise ValueError("correspondence undefined for constant curve")
    c = np.trapezoid(da * db, x) / (na * nb)
    return float(np.clip(c, -1.0, 1.0))


def irf_rmise(item_true: ItemModel, item_est: ItemModel, grid_points: int = 1001, golf_range=(-3.0, 3.0)) -> float:
    """RMISE between correct-response curves (RMS over categories for golf).

    Probit 3PL curves are compared over abilities in [0, 1]; 3PL and golf
    over ``golf_range``.
    """
    if item_true.family != item_est.family:
        raise ValueError(f"family mismatch: {item_true.family} vs {item_est.family}")
    if item_true.family == "probit3pl":
        x = np.linspace(0.0, 1.0, grid_points)
        th = np.clip(x, 1e-12, 1 - 1e-12)
        return rmise(SampledFunction(x, item_true.prob(th, 1)), SampledFunction(x, item_est.prob(th, 1)))
    x = np.linspace(*golf_range, grid_points)
    if item_true.family == "3pl":
        return rmise(SampledFunction(x, item_true.prob(x, 1)), SampledFunction(x, item_est.prob(x, 1)))
    cats = sorted(set(item_true.params.support.tolist()) | set(item_est.params.support.tolist()))
    errs = []
    for s in cats:
        pt = _golf_prob(item_true, x, s)
        pe = _golf_prob(item_est, x, s)
        errs.append(rmise(SampledFunction(x, pt), SampledFunction(x, pe)))
    return float(np.sqrt(np.mean(np.square(errs))))


def _golf_prob(item: ItemModel, x, s):
    if item.params.s_min <= s <= item.params.s_max:
        return item.prob(x, s)
    return np.zeros_like(x)


def rms(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean(v**2)))


def experiment_report(
    grid,
    true_curves,
    est_curves,
    true_items: dict | None = None,
    est_items: dict | None = None,
    static: bool = False,
    threshold: float = 0.6,
) -> dict:
    """Aggregate curve and item metrics.

    ``true_curves`` and ``est_curves`` are ``(n, len(grid))`` arrays in the
    same row order.  Correspondence is skipped for static (constant) truth;
    instead the RMSE of per-student ability levels is reported.
    """
    grid = np.asarray(grid, dtype=float)
    true_curves = np.atleast_2d(true_curves)
    est_curves = np.atleast_2d(est_curves)
    rmises = [rmise(SampledFunction(grid, t), SampledFunction(grid, e)) for t, e in zip(true_curves, est_curves)]
    report = {"n_students": len(rmises), "curve_rms_rmise": rms(rmises)}
    if static:
        level_true = true_curves.mean(axis=1)
        level_est = est_curves.mean(axis=1)
        report["ability_rmse"] = rms(level_est - level_true)
    else:
        cs = []
        for t, e in zip(true_curves, est_curves):
            try:
                cs.append(correspondence(SampledFunction(grid, t), SampledFunction(grid, e)))
            except ValueError:
                cs.append(0.0)
        cs = np.array(cs)
        report["mean_correspondence"] = float(cs.mean())
        report["frac_correspondence_above_0.6"] = float(np.mean(cs > threshold))
    if true_items is not None and est_items is not None:
        names = [j for j in true_items if j in est_items]
        report["n_items"] = len(names)
        report["irf_rms_rmise"] = rms([irf_rmise(true_items[j], est_items[j]) for j in names])
    return report


def format_report(report: dict) -> str:
    """Aligned two-column text rendering of a report."""
    width = max(len(k) for k in report) if report else 0
    lines = []
    for k, v in report.items():
        val = f"{v:.6f}" if isinstance(v, float) else str(v)
        lines.append(f"{k:<{width}}  {val}")
    return "\n".join(lines) + "\n"
