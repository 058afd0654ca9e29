"""Kernel backend selection.

The hot inner loops (trajectory generation, induced returns, collision
marching, Brownian exit stepping) exist twice: a compiled Cython extension
(``asiplab._kernels``) and a pure-Python mirror (``asiplab._kernels_py``).
Both consume the numpy BitGenerator draw-by-draw in the same order, so for a
given seed they produce bit-identical output; ``tests/test_backend_equivalence``
holds them to that.

Selection happens at import: the compiled module if it built, otherwise the
pure fallback. Override with the environment variable ``ASIPLAB_BACKEND``
set to ``compiled`` or ``pure``.
"""

from __future__ import annotations

import os

from . import _kernels_py

_FORCED = os.environ.get("ASIPLAB_BACKEND", "").strip().lower()

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _FORCED == "pure":
    _active = _kernels_py
elif _FORCED == "compiled":
    if _compiled is None:
        raise ImportError(
            "ASIPLAB_BACKEND=compiled but the asiplab._kernels extension is not built; "
            "run `pip install -e . --no-build-isolation`"
        )
    _active = _compiled
else:
    _active = _compiled if _compiled is not None else _kernels_py


def kernels():
    """The active kernel module."""
    return _active


def backend_name() -> str:
    return "compiled" if _active is _compiled and _compiled is not None else "pure"


def available_backends() -> dict:
    out = {"pure": _kernels_py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
