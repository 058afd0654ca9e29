"""Intermittent interval maps with a neutral fixed point, and their induced
first-return maps on the right half interval.

The map is x (1 + 2^gamma x^gamma) on [0, 1/2) and 2x - 1 on [1/2, 1]. The
left branch has a neutral fixed point at 0; first returns to [1/2, 1] have a
polynomial tail with exponent 1/gamma under the uniform measure on [1/2, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import backend
from ..errors import CappedReturnError, InputError

RETURN_CAP_DEFAULT = 10 ** 9


@dataclass(frozen=True)
class LsvModel:
    """Intermittency exponent gamma in (0, 1); induced domain [1/2, 1]."""

    gamma: float
    return_cap: int = RETURN_CAP_DEFAULT

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise InputError("gamma must lie in (0, 1)")

    def descriptor(self) -> dict:
        return {"kind": "lsv", "gamma": self.gamma}


def lsv_step(model: LsvModel, x: float) -> float:
    """One application of the map; x must lie in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise InputError("x must lie in [0, 1]")
    if x < 0.5:
        return x * (1.0 + math.pow(2.0, model.gamma) * math.pow(x, model.gamma))
    return 2.0 * x - 1.0


def doubling_step(x: float) -> float:
    """The doubling map 2x mod 1 on [0, 1)."""
    if not 0.0 <= x < 1.0:
        raise InputError("x must lie in [0, 1)")
    y = 2.0 * x
    return y - 1.0 if y >= 1.0 else y


def induced_return(model: LsvModel, y: float):
    """First return to [1/2, 1]: returns (F(y), R(y)).

    Raises CappedReturnError if the orbit fails to return within the
    configured cap (numerically trapped near the neutral fixed point).
    """
    if not 0.5 <= y <= 1.0:
        raise InputError("y must lie in [1/2, 1]")
    c2g = math.pow(2.0, model.gamma)
    x = 2.0 * y - 1.0
    r = 1
    while x < 0.5:
        x = x * (1.0 + c2g * math.pow(x, model.gamma))
        r += 1
        if r > model.return_cap:
            raise CappedReturnError(model.return_cap, y)
    return x, r


def sample_returns(model: LsvModel, count: int, rng) -> np.ndarray:
    """Return times for ``count`` points uniform on [1/2, 1] (reference measure)."""
    ker = backend.kernels()
    out, capped = ker.lsv_returns(model.gamma, count, model.return_cap, rng)
    if capped >= 0:
        raise CappedReturnError(model.return_cap)
    return out


def branch_boundaries(model: LsvModel, n_max: int) -> np.ndarray:
    """Escape-level boundaries xi_0 > xi_1 > ... of the left branch.

    xi_0 = 1/2 and g(xi_{k+1}) = xi_k for the left branch g; a point
    x in [xi_{k+1}, xi_k) needs exactly k+1 left-branch steps to leave
    [0, 1/2). These give the exact return-time tail on the induced domain:
    P(R > n) = xi_{n-1} under the uniform measure on [1/2, 1].
    """
    g = model.gamma
    c2g = math.pow(2.0, g)

    def gfun(x):
        return x * (1.0 + c2g * math.pow(x, g))

    xs = np.empty(n_max + 1)
    xs[0] = 0.5
    x = 0.5
    for k in range(1, n_max + 1):
        # Newton solve g(z) = x with z < x
        z = x * 0.7
        for _ in range(80):
            fz = gfun(z) - x
            dz = 1.0 + c2g * (1.0 + g) * math.pow(z, g)
            step = fz / dz
            z -= step
            if abs(step) < 1e-16 * max(z, 1e-300):
                break
        xs[k] = z
        x = z
    return xs


def induced_branch_intervals(model: LsvModel, n_max: int):
    """Branch domains of the induced map: [l_n, r_n) has return time n.

    Branch 1 is [3/4, 1]; branch n >= 2 is the preimage of [xi_{n-1}, xi_{n-2})
    under the linear right branch.
    """
    xs = branch_boundaries(model, n_max)
    out = [(0.75, 1.0)]
    for n in range(2, n_max + 1):
        out.append(((1.0 + xs[n - 1]) / 2.0, (1.0 + xs[n - 2]) / 2.0))
    return out


def exact_return_tail(model: LsvModel, n_max: int) -> np.ndarray:
    """Exact P(R > n), n = 0..n_max, under the uniform measure on [1/2, 1]."""
    xs = branch_boundaries(model, n_max)
    tail = np.empty(n_max + 1)
    tail[0] = 1.0
    for n in range(1, n_max + 1):
        tail[n] = xs[n - 1]
    return tail
