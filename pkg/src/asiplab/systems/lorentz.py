"""Planar periodic Lorentz gas: geometry, collision map, horizon checking.

The scatterer configuration is a periodic array of disks: two lattice vectors
spanning the cell plus a list of (center, radius) disks inside it. All
collision queries march the ray through the tiled lattice; reflection is
specular. Tangential (grazing) hits within tolerance are treated as misses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import backend
from ..errors import HorizonViolationError, InputError

GRAZE_TOL = 1e-12
DEFAULT_CUTOFF_CELLS = 40.0


@dataclass(frozen=True)
class LorentzConfig:
    """Periodic disk configuration.

    lattice_vectors : (2, 2) array, rows are the two cell vectors
    scatterers      : list of (cx, cy, radius)
    horizon_bound   : optional verified max free flight
    """

    lattice_vectors: np.ndarray
    scatterers: tuple
    horizon_bound: Optional[float] = None
    graze_tol: float = GRAZE_TOL

    def __post_init__(self):
        L = np.asarray(self.lattice_vectors, dtype=np.float64).reshape(2, 2)
        if abs(np.linalg.det(L)) < 1e-12:
            raise InputError("lattice vectors must be linearly independent")
        object.__setattr__(self, "lattice_vectors", L)
        sc = tuple((float(cx), float(cy), float(r)) for cx, cy, r in self.scatterers)
        if not sc:
            object.__setattr__(self, "scatterers", sc)
            return
        for _, _, r in sc:
            if r <= 0:
                raise InputError("scatterer radii must be positive")
        object.__setattr__(self, "scatterers", sc)
        self._check_disjoint()
        if self.covering_fraction() >= 1.0:
            raise InputError("scatterers leave no free region in the cell")

    # -- geometry helpers ----------------------------------------------------

    @property
    def basis(self) -> np.ndarray:
        """Column-vector basis matrix (maps integer pairs to translations)."""
        return self.lattice_vectors.T.copy()

    @property
    def inv_basis(self) -> np.ndarray:
        return np.linalg.inv(self.basis)

    @property
    def centers(self) -> np.ndarray:
        return np.array([[s[0], s[1]] for s in self.scatterers], dtype=np.float64)

    @property
    def radii(self) -> np.ndarray:
        return np.array([s[2] for s in self.scatterers], dtype=np.float64)

    def cell_diameter(self) -> float:
        e1 = self.lattice_vectors[0]
        e2 = self.lattice_vectors[1]
        return float(max(np.linalg.norm(e1 + e2), np.linalg.norm(e1 - e2)))

    def covering_fraction(self) -> float:
        area = abs(np.linalg.det(self.basis))
        return float(sum(math.pi * r * r for *_, r in self.scatterers) / area)

    def _check_disjoint(self):
        """Disks must be pairwise disjoint across the full tiling."""
        B = self.basis
        C = self.centers
        R = self.radii
        n = len(R)
        for i in range(n):
            for j in range(n):
                for k1 in range(-2, 3):
                    for k2 in range(-2, 3):
                        if i == j and k1 == 0 and k2 == 0:
                            continue
                        off = B @ np.array([k1, k2], dtype=float)
                        dist = np.linalg.norm(C[i] - C[j] - off)
                        if dist < R[i] + R[j] - 1e-12:
                            raise InputError(
                                f"scatterers {i} and {j} overlap across the tiling"
                            )

    def default_cutoff(self) -> float:
        if self.horizon_bound is not None:
            return 2.0 * self.horizon_bound + self.cell_diameter()
        return DEFAULT_CUTOFF_CELLS * self.cell_diameter()

    def descriptor(self) -> dict:
        return {
            "kind": "lorentz",
            "lattice_vectors": self.lattice_vectors.tolist(),
            "scatterers": [list(s) for s in self.scatterers],
            "horizon_bound": self.horizon_bound,
        }

    def contains_free(self, q) -> bool:
        """Is q outside every scatterer (within the tolerance)?"""
        B, C, R = self.basis, self.centers, self.radii
        inv = self.inv_basis
        for s in range(len(R)):
            lam = inv @ (np.asarray(q, float) - C[s])
            k = np.floor(lam + 0.5)
            for d1 in (-1.0, 0.0, 1.0):
                for d2 in (-1.0, 0.0, 1.0):
                    cc = C[s] + B @ (k + np.array([d1, d2]))
                    if np.linalg.norm(np.asarray(q, float) - cc) < R[s] - 1e-12:
                        return False
        return True


@dataclass
class FlowState:
    """Billiard flow state: position, unit velocity, elapsed time."""

    q: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(2)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(2)
        n = np.linalg.norm(self.v)
        if abs(n - 1.0) > 1e-12:
            raise InputError("velocity must be a unit vector within 1e-12")


def next_collision(config: LorentzConfig, state: FlowState,
                   cutoff: Optional[float] = None):
    """First collision of the ray q + t v with the scatterer tiling.

    Returns ``(point, flight_time, reflected_velocity)``. Raises
    HorizonViolationError if no collision occurs within the cutoff.
    """
    if not config.scatterers:
        raise HorizonViolationError("no scatterers: free flight is unbounded")
    cutoff = cutoff if cutoff is not None else config.default_cutoff()
    ker = backend.kernels()
    t, disk, k1, k2 = ker.lorentz_free_flight(
        config.basis.tolist(), config.inv_basis.tolist(), config.centers,
        config.radii, state.q, state.v, cutoff, config.graze_tol)
    if disk < 0:
        raise HorizonViolationError(
            f"no collision within cutoff {cutoff}", flight_length=cutoff)
    point = state.q + t * state.v
    C, B = config.centers, config.basis
    center = C[disk] + B @ np.array([k1, k2])
    n = point - center
    n = n / np.linalg.norm(n)
    v = state.v - 2.0 * float(state.v @ n) * n
    return point, float(t), v


def check_finite_horizon(config: LorentzConfig, angular_resolution: int = 360,
                         boundary_resolution: int = 64,
                         max_flight_cutoff: Optional[float] = None):
    """Scan free flights from scatterer boundaries over a direction fan.

    Returns ``(finite, measured_max_flight)``. The measured value is a lower
    bound on the true supremum (finite resolution); lattice corridor
    directions are added to the fan so open corridors are caught exactly.
    """
    if not config.scatterers:
        return False, math.inf
    cutoff = max_flight_cutoff if max_flight_cutoff is not None else config.default_cutoff()
    if cutoff <= config.cell_diameter():
        raise InputError("cutoff must exceed the cell diameter")
    B = config.basis
    dirs = []
    for k1 in range(-3, 4):
        for k2 in range(-3, 4):
            if k1 == 0 and k2 == 0:
                continue
            v = B @ np.array([k1, k2], dtype=float)
            v = v / np.linalg.norm(v)
            dirs.append(v)
    ker = backend.kernels()
    max_flight, exceeded = ker.lorentz_horizon_scan(
        config.basis.tolist(), config.inv_basis.tolist(), config.centers,
        config.radii, boundary_resolution, angular_resolution, cutoff,
        np.array(dirs), config.graze_tol)
    if exceeded:
        return False, math.inf
    return True, float(max_flight)


def sample_flow_state(config: LorentzConfig, rng) -> FlowState:
    """Draw (q, v) from the flow-invariant measure: uniform free position in
    the cell times uniform direction (rejection sampling)."""
    B = config.basis
    for _ in range(100000):
        u1 = rng.random()
        u2 = rng.random()
        q = B @ np.array([u1, u2])
        if config.contains_free(q):
            th = 2.0 * math.pi * rng.random()
            return FlowState(q, np.array([math.cos(th), math.sin(th)]))
    raise InputError("free region too small to sample")


def triangular_finite_horizon(radius: float = 0.46) -> LorentzConfig:
    """Triangular disk lattice with finite horizon.

    One disk per primitive cell with lattice vectors (1,0), (1/2, sqrt(3)/2).
    For radius in (sqrt(3)/4, 1/2) every lattice corridor is blocked while
    the disks stay disjoint.
    """
    if not 0.25 * math.sqrt(3.0) < radius < 0.5:
        raise InputError("finite horizon needs radius in (sqrt(3)/4, 1/2)")
    return LorentzConfig(
        lattice_vectors=np.array([[1.0, 0.0], [0.5, 0.5 * math.sqrt(3.0)]]),
        scatterers=((0.0, 0.0, radius),),
    )


# -- plain-text config files -------------------------------------------------

def config_to_text(config: LorentzConfig) -> str:
    lines = ["# asiplab lorentz geometry", "[lattice]"]
    lines.append(f"e1 = [{config.lattice_vectors[0][0]!r}, {config.lattice_vectors[0][1]!r}]")
    lines.append(f"e2 = [{config.lattice_vectors[1][0]!r}, {config.lattice_vectors[1][1]!r}]")
    if config.horizon_bound is not None:
        lines.append(f"horizon_bound = {config.horizon_bound!r}")
    lines.append(f"graze_tol = {config.graze_tol!r}")
    for cx, cy, r in config.scatterers:
        lines.append("")
        lines.append("[[scatterer]]")
        lines.append(f"center = [{cx!r}, {cy!r}]")
        lines.append(f"radius = {r!r}")
    return "\n".join(lines) + "\n"


def save_config(config: LorentzConfig, path):
    with open(path, "w") as fh:
        fh.write(config_to_text(config))


def load_config(path) -> LorentzConfig:
    """Load a geometry file (TOML: [lattice] e1/e2 + [[scatterer]] blocks)."""
    import tomli

    with open(path, "rb") as fh:
        data = tomli.load(fh)
    known = {"lattice", "scatterer"}
    unknown = set(data) - known
    if unknown:
        raise InputError(f"unknown geometry keys: {sorted(unknown)}")
    lat = data.get("lattice", {})
    lat_known = {"e1", "e2", "horizon_bound", "graze_tol"}
    unknown = set(lat) - lat_known
    if unknown:
        raise InputError(f"unknown [lattice] keys: {sorted(unknown)}")
    if "e1" not in lat or "e2" not in lat:
        raise InputError("[lattice] must define e1 and e2")
    scs = []
    for s in data.get("scatterer", []):
        unknown = set(s) - {"center", "radius"}
        if unknown:
            raise InputError(f"unknown [[scatterer]] keys: {sorted(unknown)}")
        scs.append((s["center"][0], s["center"][1], s["radius"]))
    return LorentzConfig(
        lattice_vectors=np.array([lat["e1"], lat["e2"]], dtype=float),
        scatterers=tuple(scs),
        horizon_bound=lat.get("horizon_bound"),
        graze_tol=lat.get("graze_tol", GRAZE_TOL),
    )
