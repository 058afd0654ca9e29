"""Finite-state Markov shifts (symbolic Gibbs-Markov models).

States are one-sided symbol sequences; the dynamics is the left shift,
realized as a stationary Markov chain over the alphabet. All conditional
structure needed elsewhere (transfer operators, conditional approximants,
martingale correctors) reduces to linear algebra on the transition matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError

WINDOW_DEPTH_DEFAULT = 64


def _stationary_of(transition: np.ndarray) -> np.ndarray:
    """Left fixed probability vector of a row-stochastic matrix."""
    vals, vecs = np.linalg.eig(transition.T)
    i = int(np.argmin(np.abs(vals - 1.0)))
    pi = np.real(vecs[:, i])
    pi = np.abs(pi)
    return pi / pi.sum()


def _is_primitive(transition: np.ndarray) -> bool:
    """Some power has all entries positive (topological mixing)."""
    A = transition.shape[0]
    B = (transition > 0.0).astype(np.int64)
    P = B.copy()
    # Wielandt bound on the primitivity index
    for _ in range((A - 1) ** 2 + 1):
        if (P > 0).all():
            return True
        P = np.minimum(P @ B, 1)
    return bool((P > 0).all())


@dataclass(frozen=True)
class MarkovShiftModel:
    """A topologically mixing finite-state Markov measure with metric beta^s.

    transition : (A, A) row-stochastic matrix
    stationary : left fixed probability vector (computed if omitted)
    beta       : metric parameter in (0, 1)
    """

    transition: np.ndarray
    stationary: np.ndarray = None
    beta: float = 0.5
    window_depth: int = WINDOW_DEPTH_DEFAULT

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise InputError("transition must be a square matrix")
        if (P < 0).any():
            raise InputError("transition entries must be nonnegative")
        if np.abs(P.sum(axis=1) - 1.0).max() > 1e-12:
            raise InputError("transition rows must sum to 1 within 1e-12")
        object.__setattr__(self, "transition", P)
        pi = self.stationary
        if pi is None:
            pi = _stationary_of(P)
        pi = np.asarray(pi, dtype=np.float64)
        if np.abs(pi @ P - pi).max() > 1e-12:
            raise InputError("stationary must be a left fixed vector within 1e-12")
        if abs(pi.sum() - 1.0) > 1e-12:
            raise InputError("stationary must sum to 1")
        object.__setattr__(self, "stationary", pi)
        if not 0.0 < self.beta < 1.0:
            raise InputError("beta must lie in (0, 1)")
        if not _is_primitive(P):
            raise InputError("transition must be topologically mixing")

    # -- basic structure ----------------------------------------------------

    @property
    def alphabet_size(self) -> int:
        return self.transition.shape[0]

    @property
    def cum_rows(self) -> np.ndarray:
        return np.cumsum(self.transition, axis=1)

    def second_eigenvalue(self) -> float:
        """Modulus of the subleading eigenvalue (mixing rate)."""
        vals = np.linalg.eigvals(self.transition)
        mods = np.sort(np.abs(vals))[::-1]
        return float(mods[1]) if len(mods) > 1 else 0.0

    def backward_transition(self) -> np.ndarray:
        """Time-reversed chain q(s -> a) = pi(a) P(a, s) / pi(s)."""
        return np.einsum("a,as,s->sa", self.stationary, self.transition,
                         1.0 / self.stationary)

    def sample_state(self, rng) -> int:
        """Draw an initial symbol from the stationary law (one uniform)."""
        u = rng.random()
        c = np.cumsum(self.stationary)
        return int(np.searchsorted(c, u, side="right"))

    def descriptor(self) -> dict:
        return {
            "kind": "markov-shift",
            "alphabet_size": self.alphabet_size,
            "transition": self.transition.tolist(),
            "beta": self.beta,
        }

    # -- cylinders ----------------------------------------------------------

    def word_code(self, word) -> int:
        A = self.alphabet_size
        code = 0
        for a in word:
            if not 0 <= a < A:
                raise InputError(f"symbol {a} outside alphabet [0, {A})")
            code = code * A + int(a)
        return code

    def words(self, k: int):
        """All k-letter words in code order (admissible or not)."""
        A = self.alphabet_size
        out = np.empty((A ** k, k), dtype=np.int64)
        for i in range(A ** k):
            c = i
            for j in range(k - 1, -1, -1):
                out[i, j] = c % A
                c //= A
        return out

    def cylinder_measure(self, word) -> float:
        """Stationary measure of the cylinder [word]."""
        P, pi = self.transition, self.stationary
        m = pi[word[0]]
        for a, b in zip(word[:-1], word[1:]):
            m *= P[a, b]
        return float(m)

    def cylinder_measures(self, k: int) -> np.ndarray:
        """Measures of all k-cylinders in code order."""
        A = self.alphabet_size
        m = self.stationary.copy()
        for _ in range(k - 1):
            m = (m[:, None] * self.transition).reshape(-1)
        return m

    # -- classic constructors ------------------------------------------------

    @classmethod
    def two_state(cls, flip: float, beta: float = 0.5) -> "MarkovShiftModel":
        """Symmetric two-state chain that flips with probability ``flip``."""
        if not 0.0 < flip < 1.0:
            raise InputError("flip probability must lie in (0, 1)")
        P = np.array([[1.0 - flip, flip], [flip, 1.0 - flip]])
        return cls(P, np.array([0.5, 0.5]), beta)

    @classmethod
    def full_shift(cls, m: int, beta: float = 0.5) -> "MarkovShiftModel":
        """Full m-shift with the uniform Bernoulli measure."""
        if m < 2:
            raise InputError("full shift needs at least 2 symbols")
        P = np.full((m, m), 1.0 / m)
        return cls(P, np.full(m, 1.0 / m), beta)


@dataclass
class SymbolWindow:
    """Rolling fixed-depth symbol window (most recent last)."""

    symbols: tuple
    depth: int = WINDOW_DEPTH_DEFAULT

    def push(self, symbol: int) -> "SymbolWindow":
        syms = (self.symbols + (symbol,))[-self.depth:]
        return SymbolWindow(syms, self.depth)

    @property
    def current(self) -> int:
        return self.symbols[-1]


def shift_step(model: MarkovShiftModel, state, rng):
    """One step of the shift: draw the next symbol from the current row.

    ``state`` is a SymbolWindow or a bare symbol; returns
    ``(next_symbol, new_window)``.
    """
    if isinstance(state, SymbolWindow):
        cur = state.current
        window = state
    else:
        cur = int(state)
        window = SymbolWindow((cur,), model.window_depth)
    A = model.alphabet_size
    if not 0 <= cur < A:
        raise InputError(f"symbol {cur} outside alphabet [0, {A})")
    u = rng.random()
    row = model.cum_rows[cur]
    nxt = 0
    while nxt < A - 1 and not (u < row[nxt]):
        nxt += 1
    return nxt, window.push(nxt)


def separation_time(model: MarkovShiftModel, x, y):
    """Greatest n with x, y in the same n-cylinder, and d_beta = beta^n.

    ``x`` and ``y`` are symbol sequences; comparison stops at the shorter
    length (sequences are finite prefixes of points).
    """
    A = model.alphabet_size
    s = 0
    for a, b in zip(x, y):
        if not (0 <= a < A and 0 <= b < A):
            raise InputError("symbols outside alphabet")
        if a != b:
            break
        s += 1
    return s, model.beta ** s
