"""Vector-valued observables and their cylinder projections.

Two symbolic families cover everything the laboratory measures on shifts:

* table observables — a finite value table over depth-k words;
* the analytic cos(2 pi x) observable of the doubling map, whose conditional
  expectation over any dyadic cylinder is a closed-form sine difference.

``cylinder_values`` / ``conditional_table`` produce exact projections
E(phi | first k symbols); these feed the transfer operators and the
conditional approximants of the blocking construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import InputError
from .markov import MarkovShiftModel

_TWO_PI = 2.0 * math.pi


@dataclass
class ObservableSpec:
    """A mean-zero observable phi: M -> R^d with centering metadata.

    kind: "table" (finite word table), "doubling-cos" (analytic), or
    "callable" (generic evaluator, simulation-only).
    """

    name: str
    dimension: int
    kind: str = "table"
    depth: Optional[int] = None
    table: Optional[np.ndarray] = None          # (A**depth, d), uncentered
    centering: np.ndarray = None                # subtracted everywhere
    holder_exponent: Optional[float] = None
    evaluator: Optional[Callable] = None
    exact_mean: bool = False                     # centering is exact, skip pilots

    def __post_init__(self):
        if self.centering is None:
            self.centering = np.zeros(self.dimension)
        self.centering = np.asarray(self.centering, dtype=np.float64).reshape(
            self.dimension
        )
        if self.table is not None:
            self.table = np.asarray(self.table, dtype=np.float64).reshape(
                -1, self.dimension
            )

    def descriptor(self) -> dict:
        return {
            "name": self.name,
            "dimension": self.dimension,
            "kind": self.kind,
            "depth": self.depth,
            "centering": self.centering.tolist(),
        }

    def centered_table(self) -> np.ndarray:
        if self.table is None:
            raise InputError(f"observable {self.name} has no value table")
        return self.table - self.centering[None, :]


def pm1(model: Optional[MarkovShiftModel] = None) -> ObservableSpec:
    """The +/-1 observable on a 2-symbol shift (phi(0)=+1, phi(1)=-1)."""
    table = np.array([[1.0], [-1.0]])
    centering = np.zeros(1)
    exact = True
    if model is not None:
        if model.alphabet_size != 2:
            raise InputError("pm1 needs a 2-symbol model")
        centering = (model.stationary[:, None] * table).sum(axis=0)
        exact = True
    return ObservableSpec("pm1", 1, kind="table", depth=1, table=table,
                          centering=centering, holder_exponent=1.0,
                          exact_mean=exact)


def pm1_pair() -> ObservableSpec:
    """Two independent +/-1 coordinates read off the bits of a 4-symbol full shift."""
    table = np.array(
        [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]
    )
    return ObservableSpec("pm1-pair", 2, kind="table", depth=1, table=table,
                          centering=np.zeros(2), holder_exponent=1.0,
                          exact_mean=True)


def table_observable(name: str, table, depth: int,
                     model: Optional[MarkovShiftModel] = None,
                     center: bool = True) -> ObservableSpec:
    """Wrap a depth-k word table; centering from the exact cylinder measures."""
    table = np.atleast_2d(np.asarray(table, dtype=np.float64))
    if table.ndim == 2 and table.shape[0] < table.shape[1] and table.shape[0] == 1:
        table = table.T
    d = table.shape[1]
    centering = np.zeros(d)
    if center and model is not None:
        m = model.cylinder_measures(depth)
        centering = m @ table
    return ObservableSpec(name, d, kind="table", depth=depth, table=table,
                          centering=centering, exact_mean=model is not None)


def _cos_eval(x):
    return np.array([math.cos(_TWO_PI * x)])


def cos2pi() -> ObservableSpec:
    """cos(2 pi x) on the doubling map (exact mean zero)."""
    return ObservableSpec("cos2pi", 1, kind="doubling-cos", depth=None,
                          centering=np.zeros(1), holder_exponent=1.0,
                          exact_mean=True, evaluator=_cos_eval)


def constant_observable(value, d: int = 1) -> ObservableSpec:
    """phi identically equal to ``value`` (centering annihilates it)."""
    v = np.full(d, float(value))
    return ObservableSpec("constant", d, kind="table", depth=1,
                          table=np.tile(v, (2, 1)), centering=v,
                          exact_mean=True)


# ---------------------------------------------------------------------------
# exact projections


def _dyadic_cos_mean(code: int, k: int) -> float:
    """Mean of cos(2 pi x) over the dyadic interval of depth k coded by ``code``."""
    h = math.ldexp(1.0, -k)
    alpha = code * h
    return (math.sin(_TWO_PI * (alpha + h)) - math.sin(_TWO_PI * alpha)) / (
        _TWO_PI * h
    )


def cylinder_values(obs: ObservableSpec, model: MarkovShiftModel,
                    k: int) -> np.ndarray:
    """Exact E(phi | k-cylinder) for every k-word (code order), centered.

    For a table observable of depth k0 <= k this lifts the table; for k < k0
    it averages continuations with the exact transition weights. For the
    doubling cos observable the projection is a closed-form interval mean.
    """
    A = model.alphabet_size
    d = obs.dimension
    if obs.kind == "doubling-cos":
        if A != 2:
            raise InputError("doubling-cos lives on the full 2-shift")
        out = np.empty((2 ** k, 1))
        for c in range(2 ** k):
            out[c, 0] = _dyadic_cos_mean(c, k)
        return out - obs.centering[None, :]
    if obs.kind != "table":
        raise InputError(f"observable kind {obs.kind!r} has no cylinder projection")
    k0 = obs.depth
    tab = obs.centered_table()
    if k >= k0:
        # value on [a_0..a_{k-1}] is the table value of the first k0 symbols
        reps = A ** (k - k0)
        return np.repeat(tab, reps, axis=0)
    # average over continuations: E(phi | first k symbols)
    # back-average the last letters one at a time
    cur = tab.reshape(A ** (k0 - 1), A, d)
    for depth in range(k0 - 1, k - 1, -1):
        # cur: (A**depth, A, d) values indexed by (prefix word, next letter)
        new = np.empty((A ** depth, d))
        for c in range(A ** depth):
            last = c % A
            new[c] = model.transition[last] @ cur[c]
        if depth == k:
            return new
        cur = new.reshape(A ** (depth - 1), A, d)
    return new


def conditional_table(obs: ObservableSpec, model: MarkovShiftModel,
                      ell: int) -> np.ndarray:
    """E(phi | xi_0 .. xi_ell): the depth-(ell+1) conditional approximant table."""
    return cylinder_values(obs, model, ell + 1)
