"""asiplab: a computational laboratory for Brownian approximation of chaotic
dynamical systems.

Subpackages/modules:
  systems   — Markov shifts, doubling map, intermittent maps, Lorentz gas
  simulate  — ensemble Birkhoff sums with checkpointing and persistence
  transfer  — transfer-operator machinery on finite cylinder spaces
  blocking  — long/short block construction and remainder diagnostics
  coupling  — martingale approximation and Skorokhod embedding of block sums
  stats     — CLT/LIL/mixing/return-tail verification suite
  cli       — command-line front door
"""

__version__ = "0.1.0"

from .backend import backend_name

__all__ = ["backend_name", "__version__"]
