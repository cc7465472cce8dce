"""EM estimation of item parameters and time-varying abilities.

The E-step fits one curve distribution per student with :func:`curvfife.fit`,
using each response's IRF as its emission.  The M-step maximises, item by
item, the expected log-likelihood of that item's responses under the
per-response ability marginals from the E-step.

``mode="static"`` maps every response of a student to one shared time, so
the prior collapses to a single standard-normal ability and the same
pipeline reproduces ordinary (static) marginal IRT.
"""

from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from . import curvfife
from ._parallel import pmap
from .curvfife import CurveDistribution
from .emissions import EmissionTriplet, log_expected_density
from .grafting import IterationControl
from .irf import ItemModel, initial_item
from .kernel import KernelParams

log = logging.getLogger(__name__)

STATIC_TIME = 0.0
DYNAMIC_MAX_ROUNDS = 30
STATIC_MAX_ROUNDS = 200
STATIC_PARAM_TOL = 5e-3


@dataclass(frozen=True)
class ResponseRecord:
    student: str
    item: str
    time: float
    response: int


@dataclass
class Responses:
    """Long-format response table, one row per (student, item, time)."""

    student: np.ndarray
    item: np.ndarray
    time: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        self.student = np.asarray(self.student, dtype=str)
        self.item = np.asarray(self.item, dtype=str)
        self.time = np.asarray(self.time, dtype=float)
        self.response = np.asarray(self.response, dtype=int)
        n = len(self.student)
        if not (len(self.item) == len(self.time) == len(self.response) == n):
            raise ValueError("response columns must have equal length")
        if not np.all(np.isfinite(self.time)):
            raise ValueError("response times must be finite")

    @classmethod
    def from_records(cls, records) -> "Responses":
        records = list(records)
        return cls(
            [r.student for r in records],
            [r.item for r in records],
            [r.time for r in records],
            [r.response for r in records],
        )

    @classmethod
    def from_matrix(cls, R, T, students=None, items=None) -> "Responses":
        """Convert dense ``n x m`` response and time matrices; NaN responses are skipped."""
        R = np.asarray(R, dtype=float)
        T = np.asarray(T, dtype=float)
        n, m = R.shape
        students = [str(i) for i in range(n)] if students is None else [str(s) for s in students]
        items = [str(j) for j in range(m)] if items is None else [str(j) for j in items]
        ii, jj = np.nonzero(~np.isnan(R))
        return cls(
            np.array(students)[ii], np.array(items)[jj], T[ii, jj], R[ii, jj].astype(int)
        )

    def __len__(self) -> int:
        return len(self.student)

    def records(self):
        for s, j, t, r in zip(self.student, self.item, self.time, self.response):
            yield ResponseRecord(str(s), str(j), float(t), int(r))

    def subset(self, mask) -> "Responses":
        return Responses(self.student[mask], self.item[mask], self.time[mask], self.response[mask])

    @property
    def students(self) -> list[str]:
        return sorted(set(self.student.tolist()), key=_natural_key)

    @property
    def items(self) -> list[str]:
        return sorted(set(self.item.tolist()), key=_natural_key)

    def rows(self, mask) -> np.ndarray:
        """Indices of the masked rows in canonical (student, time, item) order.

        Downstream sums then do not depend on the order rows arrived in.
        """
        idx = np.flatnonzero(mask)
        return idx[np.lexsort((self.item[idx], self.time[idx], self.student[idx]))]

    def check_unique(self) -> None:
        keys = set(zip(self.student.tolist(), self.item.tolist(), self.time.tolist()))
        if len(keys) != len(self):
            raise ValueError("(student, item, time) triplets must be unique")


def _natural_key(s: str):
    # "s2" < "s10"; digit runs compare numerically
    return [(0, int(p), "") if p.isdigit() else (1, 0, p) for p in re.split(r"(\d+)", s) if p] + [(2, 0, s)]


@dataclass(frozen=True)
class EmConfig:
    """Settings for :func:`run_em`.

    ``h=None`` selects bandwidths by k-fold cross-validation at the start
    of round ``cv_round`` and keeps them fixed afterwards, unless
    ``reselect_h`` is set (then every later round selects again).  Earlier
    rounds use ``provisional_h`` (default: a fifth of the time span).
    ``cv_scope="pooled"`` picks one bandwidth maximising the held-out score
    summed over all students; ``"student"`` picks one per student.
    ``cv_rule`` applies to single-curve selections (``"max"`` when unset).
    ``ctrl`` defaults to the ``"tilt"`` fallback: with hundreds of responses
    per curve, signed sites tend to keep the iteration cycling.

    EM stops when the expected log-likelihood changes by at most ``em_tol``
    (relative) and, if ``param_tol`` is set, no item parameter moved by more
    than ``param_tol``.  Unset ``em_max_rounds`` / ``param_tol`` take mode
    defaults: 30 rounds and no parameter test for dynamic fits, 200 rounds
    and ``5e-3`` for static ones, whose cheap rounds otherwise stop while
    the 3PL guessing and difficulty parameters are still drifting.
    """

    family: str = "probit3pl"
    init_params: dict | None = None
    h: float | None = None
    epsilon: float = 1e-4
    cv_k: int = 5
    cv_candidates: tuple | None = None
    cv_seed: int = 0
    cv_scope: str = "pooled"
    cv_rule: str | None = None
    cv_round: int = 2
    provisional_h: float | None = None
    reselect_h: bool = False
    em_max_rounds: int | None = None
    em_tol: float = 1e-4
    param_tol: float | None = None
    quad_points: int = 41
    mode: str = "dynamic"
    ctrl: IterationControl = field(default_factory=lambda: IterationControl(fallback="tilt"))
    workers: int = 1
    grid_points: int = 101

    def __post_init__(self):
        if self.em_max_rounds is not None and self.em_max_rounds < 1:
            raise ValueError("em_max_rounds must be >= 1")
        if self.quad_points < 11:
            raise ValueError("quad_points must be >= 11")
        if self.mode not in ("dynamic", "static"):
            raise ValueError("mode must be 'dynamic' or 'static'")
        if self.cv_scope not in ("pooled", "student"):
            raise ValueError("cv_scope must be 'pooled' or 'student'")
        if self.cv_rule is not None and self.cv_rule not in curvfife.CV_RULES:
            raise ValueError(f"cv_rule must be one of {curvfife.CV_RULES}")
        if self.cv_round < 1:
            raise ValueError("cv_round must be >= 1")
        if self.param_tol is not None and not self.param_tol > 0:
            raise ValueError("param_tol must be positive")

    @property
    def max_rounds(self) -> int:
        if self.em_max_rounds is not None:
            return self.em_max_rounds
        return STATIC_MAX_ROUNDS if self.mode == "static" else DYNAMIC_MAX_ROUNDS

    @property
    def item_tol(self) -> float:
        if self.param_tol is not None:
            return self.param_tol
        return STATIC_PARAM_TOL if self.mode == "static" else np.inf


@dataclass(frozen=True)
class ResponseLogDensity:
    """``x -> log F(x, psi, r)`` in the item's fitting space."""

    item: ItemModel
    response: int

    def __call__(self, x):
        return self.item.loglik(x, self.response)


@dataclass
class AbilityEstimate:
    student: str
    grid_times: np.ndarray
    median: np.ndarray
    band70: tuple
    dist: CurveDistribution
    h: float


@dataclass
class EStepResult:
    dists: dict
    bandwidths: dict
    mean: np.ndarray
    var: np.ndarray


@dataclass
class EmResult:
    items: dict
    abilities: dict
    diagnostics: dict


def _student_emissions(times, item_models, responses) -> list[EmissionTriplet]:
    return [
        EmissionTriplet(float(t), (it, int(r)), ResponseLogDensity(it, int(r)))
        for t, it, r in zip(times, item_models, responses)
    ]


def _fit_student(job):
    """Worker: fit one student's curve, selecting ``h`` by CV when not given."""
    times, item_models, responses, h, config, seed = job
    emissions = _student_emissions(times, item_models, responses)
    transform = item_models[0].transform
    scores = None
    if config.mode == "static":
        h = 1.0
    elif h is None and config.h is not None:
        h = config.h
    elif h is None:
        k = min(config.cv_k, len(emissions))
        if k >= 2 and len(np.unique(times)) > 1:
            cands = config.cv_candidates
            rule = config.cv_rule or "max"
            sel = curvfife.select_bandwidth(emissions, cands, k, config.ctrl, seed, config.epsilon, rule)
            h, scores = sel.h, sel.scores
        else:
            h = float(curvfife.default_bandwidths(times)[-1])
    params = KernelParams(h=h, S=1.0, epsilon=config.epsilon)
    dist = curvfife.fit(emissions, params, config.ctrl, transform)
    mean, var = dist.query_marginals(times)
    return dist, h, scores, mean, var


def _student_seed(config: EmConfig, student: str) -> list[int]:
    return [config.cv_seed, *(ord(ch) for ch in student)]


def e_step(
    responses: Responses, items: dict, config: EmConfig, bandwidths: dict | None = None
) -> EStepResult:
    """Fit every student's ability curve with the items held fixed.

    Returns per-student distributions and, aligned with ``responses``, the
    fitted-space marginal mean and variance of ability at each response.
    """
    missing = set(responses.items) - set(items)
    if missing:
        raise KeyError(f"no parameters for items: {sorted(missing)[:5]}")
    bandwidths = dict(bandwidths or {})
    students = responses.students
    jobs, rows = [], []
    for s in students:
        idx = responses.rows(responses.student == s)
        if idx.size == 0:
            warnings.warn(f"student {s} has no responses; skipped")
            continue
        times = responses.time[idx] if config.mode == "dynamic" else np.full(idx.size, STATIC_TIME)
        models = [items[j] for j in responses.item[idx]]
        jobs.append((times, models, responses.response[idx], bandwidths.get(s), config, _student_seed(config, s)))
        rows.append((s, idx))
    results = pmap(_fit_student, jobs, config.workers)
    mean = np.full(len(responses), np.nan)
    var = np.full(len(responses), np.nan)
    dists = {}
    for (s, idx), (dist, h, _, mu, s2) in zip(rows, results):
        dists[s] = dist
        bandwidths[s] = h
        mean[idx] = mu
        var[idx] = s2
    return EStepResult(dists, bandwidths, mean, var)


def _cv_job(job):
    """Worker: held-out score of every candidate bandwidth for one student."""
    times, item_models, responses, candidates, config, seed = job
    emissions = _student_emissions(times, item_models, responses)
    k = min(config.cv_k, len(emissions))
    if k < 2 or len(np.unique(times)) < 2:
        return None
    return {h: float(curvfife.cv_pointwise(emissions, h, k, config.ctrl, seed, config.epsilon).mean()) for h in candidates}


def bandwidth_candidates(responses: Responses, config: EmConfig) -> list[float]:
    if config.cv_candidates is not None:
        return sorted(float(h) for h in config.cv_candidates)
    return [float(h) for h in curvfife.default_bandwidths(responses.time)]


def select_bandwidths(responses: Responses, items: dict, config: EmConfig) -> tuple[dict, dict]:
    """Cross-validated bandwidths for every student.

    Returns ``(bandwidths, scores)`` where ``scores`` maps each student to
    its per-candidate mean held-out log-likelihood (``None`` when the
    student has too few distinct times to cross-validate).  With the pooled
    scope all students share the bandwidth with the best response-weighted
    total score.  Ties go to the smaller bandwidth.
    """
    cands = bandwidth_candidates(responses, config)
    students = responses.students
    jobs = []
    for s in students:
        idx = responses.rows(responses.student == s)
        models = [items[j] for j in responses.item[idx]]
        jobs.append((responses.time[idx], models, responses.response[idx], cands, config, _student_seed(config, s)))
    results = pmap(_cv_job, jobs, config.workers)
    scores = dict(zip(students, results))

    fallback = cands[-1]
    if config.cv_scope == "student":
        return {s: (fallback if sc is None else curvfife.best_bandwidth(sc)) for s, sc in scores.items()}, scores
    total = {h: 0.0 for h in cands}
    for (s, sc), job in zip(scores.items(), jobs):
        if sc is not None:
            for h in cands:
                total[h] += sc[h] * len(job[0])
    h = fallback if all(sc is None for sc in scores.values()) else curvfife.best_bandwidth(total)
    return {s: h for s in students}, scores


def _provisional_h(responses: Responses, config: EmConfig) -> float:
    if config.provisional_h is not None:
        return float(config.provisional_h)
    span = float(responses.time.max() - responses.time.min())
    return span / 5 if span > 0 else 1.0


def _quadrature(n: int):
    z, w = np.polynomial.hermite_e.hermegauss(n)
    return z, w / w.sum()


def expected_loglik(item: ItemModel, responses, mean, var, quad_points: int = 41, vec=None, grad=False):
    """``sum_i E_{N(mean_i, var_i)}[log F(x, psi, r_i)]`` by Gauss-Hermite quadrature."""
    z, w = _quadrature(quad_points)
    x = np.asarray(mean)[:, None] + np.sqrt(np.asarray(var))[:, None] * z[None, :]
    r = np.asarray(responses)[:, None]
    if not grad:
        return float((item.loglik(x, r, vec) * w).sum())
    ll, g = item.loglik(x, r, vec, grad=True)
    return float((ll * w).sum()), np.einsum("ik,ikp->p", np.broadcast_to(w, ll.shape), g)


@dataclass(frozen=True)
class ItemUpdate:
    item: ItemModel
    before: float
    after: float
    message: str | None = None


def _fit_item(job) -> ItemUpdate:
    item, responses, mean, var, quad_points = job
    x0 = item.to_vector()

    def neg(vec):
        val, g = expected_loglik(item, responses, mean, var, quad_points, vec, grad=True)
        return -val, -g

    before = -neg(x0)[0]
    try:
        res = optimize.minimize(
            neg, x0, jac=True, method="L-BFGS-B", bounds=item.bounds(), options={"gtol": 1e-6, "ftol": 1e-15, "maxiter": 2000}
        )
    except (FloatingPointError, ValueError) as exc:
        return ItemUpdate(item, before, before, f"optimizer error: {exc}")
    after = -float(res.fun)
    if not np.isfinite(after) or after < before:
        return ItemUpdate(item, before, before, f"optimizer failed to improve ({res.message})")
    msg = None if res.success else f"optimizer stopped early: {res.message}"
    return ItemUpdate(item.with_vector(res.x), before, after, msg)


def m_step(responses: Responses, mean, var, items: dict, config: EmConfig) -> tuple[dict, dict]:
    """Update each item independently.  Returns ``(items, per-item ItemUpdate)``."""
    names = sorted(items, key=_natural_key)
    jobs = []
    for j in names:
        idx = responses.rows(responses.item == j)
        jobs.append((items[j], responses.response[idx], mean[idx], var[idx], config.quad_points))
    updates = pmap(_fit_item, jobs, config.workers)
    out = dict(items)
    info = {}
    for j, up in zip(names, updates):
        out[j] = up.item
        info[j] = up
        if up.message and "failed" in up.message:
            log.warning("item %s: %s", j, up.message)
    return out, info


def total_expected_loglik(responses: Responses, mean, var, items: dict, quad_points: int = 41) -> float:
    total = 0.0
    for j in sorted(items, key=_natural_key):
        idx = responses.rows(responses.item == j)
        if np.any(idx):
            total += expected_loglik(items[j], responses.response[idx], mean[idx], var[idx], quad_points)
    return total


def initial_items(responses: Responses, config: EmConfig, ranges: dict | None = None) -> dict:
    out = {}
    for j in responses.items:
        if config.init_params and j in config.init_params:
            p = config.init_params[j]
            out[j] = p if isinstance(p, ItemModel) else ItemModel.from_dict(p)
            continue
        if config.family == "golf":
            r = responses.response[responses.item == j]
            rng = (ranges or {}).get(j, (min(int(r.min()), 0), max(int(r.max()), 0)))
            out[j] = initial_item("golf", rng)
        else:
            out[j] = initial_item(config.family)
    return out


def ability_estimates(estep: EStepResult, grid, config: EmConfig) -> dict:
    out = {}
    for s, dist in estep.dists.items():
        tau = np.full(1, STATIC_TIME) if config.mode == "static" else np.asarray(grid, dtype=float)
        med, lo, hi = dist.marginals(tau)
        if config.mode == "static":
            n = len(grid)
            med, lo, hi = (np.full(n, v[0]) for v in (med, lo, hi))
        out[s] = AbilityEstimate(s, np.asarray(grid, dtype=float), med, (lo, hi), dist, estep.bandwidths[s])
    return out


def run_em(responses: Responses, config: EmConfig = EmConfig(), items: dict | None = None) -> EmResult:
    """Alternate E- and M-steps until the expected log-likelihood settles."""
    responses.check_unique()
    items = dict(items) if items is not None else initial_items(responses, config)
    students = responses.students
    if config.h is not None:
        bandwidths = {s: float(config.h) for s in students}
    else:
        bandwidths = {s: _provisional_h(responses, config) for s in students}
    cv_scores = None
    history = []
    prev = None
    converged = False
    for rnd in range(1, config.max_rounds + 1):
        selecting = config.h is None and config.mode == "dynamic" and (
            rnd == config.cv_round or (config.reselect_h and rnd > config.cv_round)
        )
        if selecting:
            bandwidths, cv_scores = select_bandwidths(responses, items, config)
            prev = None  # the objective changes with the bandwidths
        estep = e_step(responses, items, config, bandwidths)
        pre = total_expected_loglik(responses, estep.mean, estep.var, items, config.quad_points)
        new, info = m_step(responses, estep.mean, estep.var, items, config)
        moved = max((float(np.abs(new[j].to_vector() - items[j].to_vector()).max()) for j in new), default=0.0)
        items = new
        post = total_expected_loglik(responses, estep.mean, estep.var, items, config.quad_points)
        history.append({"round": rnd, "pre_m": pre, "post_m": post, "max_param_change": moved,
                        "selected_h": selecting,
                        "item_warnings": {j: u.message for j, u in info.items() if u.message}})
        log.info("EM round %d: expected log-lik %.6f -> %.6f", rnd, pre, post)
        waiting = config.h is None and config.mode == "dynamic" and rnd < config.cv_round
        settled = moved <= config.item_tol
        if prev is not None and not waiting and settled and abs(post - prev) <= config.em_tol * abs(prev):
            converged = True
            break
        prev = post
    # final E-step so abilities reflect the last item update
    estep = e_step(responses, items, config, bandwidths)
    times = responses.time
    grid = np.linspace(times.min(), times.max(), config.grid_points) if len(times) else np.zeros(1)
    abilities = ability_estimates(estep, grid, config)
    final = total_expected_loglik(responses, estep.mean, estep.var, items, config.quad_points)
    diagnostics = {
        "rounds": len(history),
        "converged": converged,
        "history": history,
        "final_expected_loglik": final,
        "bandwidths": {s: estep.bandwidths[s] for s in estep.bandwidths},
        "cv_scores": cv_scores,
        "nonconverged_students": sorted(s for s, d in estep.dists.items() if not d.converged),
    }
    return EmResult(items, abilities, diagnostics)


# -- hold-out comparison ---------------------------------------------------


def _heldout_logprob(train: Responses, test: Responses, items: dict, config: EmConfig) -> float:
    times = train.time if config.mode == "dynamic" else np.full(len(train), STATIC_TIME)
    models = [items[j] for j in train.item]
    h = config.h
    job = (times, models, train.response, h, config, [config.cv_seed])
    dist = _fit_student(job)[0]
    tt = test.time if config.mode == "dynamic" else np.full(len(test), STATIC_TIME)
    mean, var = dist.query_marginals(tt)
    grid = config.ctrl.grid
    return float(
        sum(
            log_expected_density(ResponseLogDensity(items[j], int(r)), mu, s2, grid)
            for j, r, mu, s2 in zip(test.item, test.response, mean, var)
        )
    )


@dataclass(frozen=True)
class HoldoutResult:
    ratio: float
    log_ratio: float
    dynamic_logprob: float
    static_logprob: float
    runs: list


def holdout_bandwidths(times) -> list[float]:
    """Default CV grid plus one bandwidth ten times the span.

    The extra candidate lets the dynamic model flatten into the static one,
    so a subject whose ability does not move is not penalised for the
    flexibility of the smaller bandwidths.
    """
    times = np.asarray(times, dtype=float)
    span = float(times.max() - times.min()) if len(times) else 0.0
    hs = [float(h) for h in curvfife.default_bandwidths(times)]
    return hs + [10.0 * span] if span > 0 else hs


def holdout_compare(
    responses: Responses, items: dict, config: EmConfig = EmConfig(), n_runs: int = 5, seed=0
) -> HoldoutResult:
    """Dynamic-vs-static likelihood ratio on random half splits of one subject.

    For each run the responses are split into two random halves; each scheme
    fits ability on one half and scores the other by its expected likelihood
    under the fitted marginals, then the halves swap.  Both halves and all
    runs are combined by geometric mean.  Without a fixed ``h`` or
    explicit candidates, bandwidths come from :func:`holdout_bandwidths`
    over the subject's full time range, and unless ``cv_rule`` is set the
    one-standard-error rule picks among them.
    """
    n = len(responses)
    if n < 2:
        raise ValueError("hold-out comparison needs at least 2 responses")
    rng = np.random.default_rng(seed)
    dyn_cfg = replace(config, mode="dynamic")
    if config.h is None and config.cv_candidates is None:
        dyn_cfg = replace(dyn_cfg, cv_candidates=tuple(holdout_bandwidths(responses.time)))
    if config.cv_rule is None:
        dyn_cfg = replace(dyn_cfg, cv_rule="one_se")
    sta_cfg = replace(config, mode="static")
    runs = []
    for _ in range(n_runs):
        perm = rng.permutation(n)
        half_a = np.zeros(n, dtype=bool)
        half_a[perm[: n // 2]] = True
        A, B = responses.subset(half_a), responses.subset(~half_a)
        row = {}
        for name, cfg in (("dynamic", dyn_cfg), ("static", sta_cfg)):
            row[name] = 0.5 * (_heldout_logprob(A, B, items, cfg) + _heldout_logprob(B, A, items, cfg))
        runs.append(row)
    dyn = float(np.mean([r["dynamic"] for r in runs]))
    sta = float(np.mean([r["static"] for r in runs]))
    return HoldoutResult(float(np.exp(dyn - sta)), dyn - sta, dyn, sta, runs)
