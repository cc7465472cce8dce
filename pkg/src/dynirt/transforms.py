"""Monotone maps between a curve's original range and the fitting space."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special


def _identity(x):
    return np.asarray(x, dtype=float)


def _probit(y):
    return special.ndtri(y)


def _probit_inverse(x):
    return special.ndtr(x)


@dataclass(frozen=True)
class Transform:
    """Strictly increasing ``forward`` (original -> fitted) and its ``inverse``."""

    kind: str
    forward: Callable = _identity
    inverse: Callable = _identity

    @classmethod
    def identity(cls) -> "Transform":
        return cls("identity")

    @classmethod
    def probit(cls) -> "Transform":
        return cls("probit", _probit, _probit_inverse)

    @classmethod
    def custom(cls, forward: Callable, inverse: Callable) -> "Transform":
        return cls("custom", forward, inverse)

    @classmethod
    def from_name(cls, name: str) -> "Transform":
        if name == "identity":
            return cls.identity()
        if name == "probit":
            return cls.probit()
        raise ValueError(f"unknown transform {name!r}; expected 'identity' or 'probit'")

    def pullback(self, log_density: Callable) -> Callable:
        """Express an original-space log-density as a function of fitted values."""
        if self.kind == "identity":
            return log_density
        return _Composed(log_density, self.inverse)


@dataclass(frozen=True)
class _Composed:
    log_density: Callable
    inverse: Callable

    def __call__(self, x):
        return self.log_density(self.inverse(x))
