"""Item response functions.

Three families are supported:

``3pl``
    ``c + (1 - c) sigmoid(a (theta - b))`` on a real-valued ability.
``probit3pl``
    The same curve on abilities in (0, 1), with both ability and difficulty
    passed through the probit: ``c + (1 - c) sigmoid(a (ndtri(theta) - ndtri(b)))``.
``golf``
    A partial-credit model over stroke counts relative to par.  ``s > 0`` is
    ``s`` strokes under par, ``s < 0`` over par; the log odds against par
    accumulate ``a_k (theta - b_k)`` from ``k = ±1`` out to ``s``.

For estimation every family is evaluated in its *fitting space*, where the
ability prior is standard normal: identity for ``3pl`` and ``golf``, probit
for ``probit3pl``.  In that space ``probit3pl`` is just ``3pl`` with
difficulty ``ndtri(b)``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import special

from .transforms import Transform

A_BOUNDS = (1e-3, 1e3)
B_BOUNDS = (-10.0, 10.0)
# ndtr(8.2) rounds to 1.0; keep probit difficulties strictly inside (0, 1)
PROBIT_B_BOUNDS = (-8.0, 8.0)
C_BOUNDS = (0.0, 0.5)

FAMILIES = ("3pl", "probit3pl", "golf")


class NoFittableCategoriesError(ValueError):
    pass


@dataclass(frozen=True)
class ThreePL:
    a: float
    b: float
    c: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"discrimination must be positive, got {self.a}")
        if not 0 <= self.c < 1:
            raise ValueError(f"guessing must lie in [0, 1), got {self.c}")


def three_pl(theta, params: ThreePL, r=1):
    p = params.c + (1 - params.c) * special.expit(params.a * (np.asarray(theta, dtype=float) - params.b))
    return np.where(np.asarray(r) == 1, p, 1 - p)


def probit_three_pl(theta01, params: ThreePL, r=1):
    theta01 = np.asarray(theta01, dtype=float)
    if np.any((theta01 <= 0) | (theta01 >= 1)) or not 0 < params.b < 1:
        raise ValueError("probit 3PL needs ability and difficulty strictly inside (0, 1)")
    shifted = ThreePL(params.a, float(special.ndtri(params.b)), params.c)
    return three_pl(special.ndtri(theta01), shifted, r)


def three_pl_loglik(x, a, beta, c, r, grad: bool = False):
    """Log-likelihood of dichotomous responses ``r`` at fitted abilities ``x``.

    With ``grad=True`` also returns the derivatives with respect to
    ``(a, beta, c)`` stacked on a trailing axis.
    """
    x = np.asarray(x, dtype=float)
    r = np.asarray(r)
    z = a * (x - beta)
    lp = special.log_expit(z)
    lq = special.log_expit(-z)
    log1mc = np.log1p(-c)
    with np.errstate(divide="ignore"):
        logc = np.log(c)
    ll1 = np.logaddexp(logc, log1mc + lp)
    ll0 = log1mc + lq
    ll = np.where(r == 1, ll1, ll0)
    if not grad:
        return ll
    dz1 = np.exp(log1mc + lp + lq - ll1)
    dc1 = np.exp(lq - ll1)
    dz = np.where(r == 1, dz1, -np.exp(lp))
    dc = np.where(r == 1, dc1, -1.0 / (1.0 - c))
    g = np.stack([dz * (x - beta), -a * dz, dc], axis=-1)
    return ll, g


# -- golf ------------------------------------------------------------------


@dataclass(frozen=True)
class GolfItem:
    """Step parameters ``{s: (a_s, b_s)}`` for every non-zero stroke count in range."""

    steps: dict

    def __post_init__(self):
        keys = sorted(int(s) for s in self.steps)
        if 0 in keys or not keys:
            raise ValueError("golf steps need non-zero stroke counts")
        lo, hi = min(keys[0], 0), max(keys[-1], 0)
        expected = [s for s in range(lo, hi + 1) if s != 0]
        if keys != expected:
            raise ValueError(f"golf steps must be contiguous around par, got {keys}")
        for s, (a, _) in self.steps.items():
            if not a > 0:
                raise ValueError(f"a_{s} must be positive")

    @property
    def s_min(self) -> int:
        return min(min(self.steps), 0)

    @property
    def s_max(self) -> int:
        return max(max(self.steps), 0)

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.s_min, self.s_max + 1)

    @property
    def step_keys(self) -> list[int]:
        return [s for s in range(self.s_min, self.s_max + 1) if s != 0]

    def to_vector(self) -> np.ndarray:
        return np.array([v for s in self.step_keys for v in self.steps[s]], dtype=float)

    @classmethod
    def from_vector(cls, s_min: int, s_max: int, vec) -> "GolfItem":
        keys = [s for s in range(s_min, s_max + 1) if s != 0]
        vec = np.asarray(vec, dtype=float).reshape(len(keys), 2)
        return cls({s: (float(a), float(b)) for s, (a, b) in zip(keys, vec)})


def _path_matrix(s_min: int, s_max: int) -> np.ndarray:
    """``A[c, k]`` is the sign of category ``c`` if step ``k`` lies on its path from par."""
    cats = np.arange(s_min, s_max + 1)
    keys = [s for s in cats if s != 0]
    A = np.zeros((len(cats), len(keys)))
    for ci, s in enumerate(cats):
        for ki, k in enumerate(keys):
            if (s > 0 and 0 < k <= s) or (s < 0 and s <= k < 0):
                A[ci, ki] = np.sign(s)
    return A


def golf_log_odds(theta, item: GolfItem, s: int):
    """Log odds of scoring ``s`` rather than par."""
    s = int(s)
    if s != 0 and s not in item.steps:
        raise ValueError(f"stroke count {s} outside the item's support [{item.s_min}, {item.s_max}]")
    theta = np.asarray(theta, dtype=float)
    if s == 0:
        return np.zeros_like(theta)
    sign = 1 if s > 0 else -1
    total = np.zeros_like(theta)
    for k in range(sign, s + sign, sign):
        a, b = item.steps[k]
        total = total + a * (theta - b)
    return sign * total


def golf_probs(theta, item: GolfItem) -> np.ndarray:
    """Probabilities over ``item.support`` (last axis) at each ``theta``."""
    omega = np.stack([golf_log_odds(theta, item, s) for s in item.support], axis=-1)
    return special.softmax(omega, axis=-1)


def golf_loglik(x, a, b, s_min: int, s_max: int, s, grad: bool = False):
    """Log P(s | x) for the golf IRF, vectorised over ``x`` and ``s``.

    ``a`` and ``b`` are ordered by stroke count, skipping par.  Gradients are
    returned as ``(..., 2 * n_steps)`` interleaved ``(a_k, b_k)``.
    """
    x = np.asarray(x, dtype=float)
    A = _path_matrix(s_min, s_max)
    u = np.asarray(a) * (x[..., None] - np.asarray(b))
    omega = u @ A.T
    logp = omega - special.logsumexp(omega, axis=-1, keepdims=True)
    ci = np.broadcast_to(np.asarray(s) - s_min, x.shape)
    ll = np.take_along_axis(logp, ci[..., None], axis=-1)[..., 0]
    if not grad:
        return ll
    p = np.exp(logp)
    du = A[ci] - p @ A
    da = du * (x[..., None] - np.asarray(b))
    db = -du * np.asarray(a)
    g = np.stack([da, db], axis=-1).reshape(*du.shape[:-1], -1)
    return ll, g


def clip_strokes(records, min_count: int = 100, fold_first: bool = True):
    """Clip stroke counts to the categories seen more than ``min_count`` times.

    Working outward from par on each side, extreme counts are folded into
    their inward neighbour until the outermost category is frequent enough.
    Returns ``(s_min, s_max, clipped)``.  With ``fold_first=False`` the
    threshold is applied to raw per-category counts instead.
    """
    recs = np.asarray(records, dtype=int)
    if recs.size == 0:
        raise ValueError("no stroke records")
    counts = Counter(recs.tolist())

    def edge(sign):
        extreme = max((s * sign for s in counts if s * sign > 0), default=0)
        for mag in range(extreme, 0, -1):
            s = sign * mag
            n = sum(c for k, c in counts.items() if k * sign >= mag) if fold_first else counts.get(s, 0)
            if n > min_count:
                return s
        return 0

    s_max, s_min = edge(+1), edge(-1)
    if s_max == 0 and s_min == 0:
        raise NoFittableCategoriesError("hole has no fittable categories")
    return s_min, s_max, np.clip(recs, s_min, s_max)


# -- item models -----------------------------------------------------------


@dataclass(frozen=True)
class ItemModel:
    """An item: IRF family plus its parameters.

    ``params`` is ``ThreePL`` for the 3PL families and ``GolfItem`` for golf.
    """

    family: str
    params: object

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown IRF family {self.family!r}; supported: {', '.join(FAMILIES)}")

    @property
    def transform(self) -> Transform:
        return Transform.probit() if self.family == "probit3pl" else Transform.identity()

    # optimisation vector, in fitting space
    def to_vector(self) -> np.ndarray:
        if self.family == "golf":
            return self.params.to_vector()
        p = self.params
        if self.family == "probit3pl":
            return np.array([p.a, float(np.clip(special.ndtri(p.b), *PROBIT_B_BOUNDS)), p.c])
        return np.array([p.a, p.b, p.c])

    def with_vector(self, vec) -> "ItemModel":
        vec = np.asarray(vec, dtype=float)
        if self.family == "golf":
            return ItemModel("golf", GolfItem.from_vector(self.params.s_min, self.params.s_max, vec))
        a, beta, c = (float(v) for v in vec)
        b = float(special.ndtr(beta)) if self.family == "probit3pl" else beta
        return ItemModel(self.family, ThreePL(a, b, c))

    def bounds(self) -> list[tuple[float, float]]:
        if self.family == "golf":
            return [A_BOUNDS, B_BOUNDS] * len(self.params.steps)
        if self.family == "probit3pl":
            return [A_BOUNDS, PROBIT_B_BOUNDS, C_BOUNDS]
        return [A_BOUNDS, B_BOUNDS, C_BOUNDS]

    def loglik(self, x, r, vec=None, grad: bool = False):
        """Log-likelihood of responses ``r`` at fitted-space abilities ``x``."""
        vec = self.to_vector() if vec is None else vec
        if self.family == "golf":
            k = len(vec) // 2
            v = np.asarray(vec).reshape(k, 2)
            return golf_loglik(x, v[:, 0], v[:, 1], self.params.s_min, self.params.s_max, r, grad)
        return three_pl_loglik(x, vec[0], vec[1], vec[2], r, grad)

    def prob(self, theta, r=1):
        """Response probability at an original-space ability."""
        if self.family == "3pl":
            return three_pl(theta, self.params, r)
        if self.family == "probit3pl":
            return probit_three_pl(theta, self.params, r)
        probs = golf_probs(theta, self.params)
        return probs[..., int(r) - self.params.s_min]

    def to_dict(self) -> dict:
        if self.family == "golf":
            keys = self.params.step_keys
            return {
                "family": "golf",
                "params": {
                    "a": {str(s): self.params.steps[s][0] for s in keys},
                    "b": {str(s): self.params.steps[s][1] for s in keys},
                },
                "s_min": self.params.s_min,
                "s_max": self.params.s_max,
            }
        p = self.params
        return {"family": self.family, "params": {"a": p.a, "b": p.b, "c": p.c}}

    @classmethod
    def from_dict(cls, d: dict) -> "ItemModel":
        fam = d["family"]
        if fam not in FAMILIES:
            raise ValueError(f"unknown IRF family {fam!r}; supported: {', '.join(FAMILIES)}")
        p = d["params"]
        if fam == "golf":
            steps = {int(s): (float(p["a"][s]), float(p["b"][s])) for s in p["a"]}
            return cls("golf", GolfItem(steps))
        return cls(fam, ThreePL(float(p["a"]), float(p["b"]), float(p["c"])))


def initial_item(family: str, s_range: tuple[int, int] | None = None, a=1.0, b=None, c=0.0) -> ItemModel:
    """Starting guess: ``a=1, b=0.5, c=0`` for probit 3PL (``b=0`` for 3PL)."""
    if family == "probit3pl":
        return ItemModel(family, ThreePL(a, 0.5 if b is None else b, c))
    if family == "3pl":
        return ItemModel(family, ThreePL(a, 0.0 if b is None else b, c))
    if family == "golf":
        if s_range is None:
            raise ValueError("golf items need an (s_min, s_max) range")
        s_min, s_max = s_range
        # step difficulties spread outward so that rarer scores need more extreme ability
        steps = {s: (a, float(np.sign(s)) * (abs(s) - 0.5)) for s in range(s_min, s_max + 1) if s != 0}
        return ItemModel("golf", GolfItem(steps))
    raise ValueError(f"unknown IRF family {family!r}; supported: {', '.join(FAMILIES)}")
