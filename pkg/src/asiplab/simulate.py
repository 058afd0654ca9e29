"""High-throughput Birkhoff-sum ensembles with deterministic seeding.

Every trajectory gets its own generator derived from
``SeedSequence(master_seed, spawn_key=(index,))``, so results are identical
for any worker count and bit-identical on replay.
"""

from __future__ import annotations

import json
import math
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import backend
from .errors import FormatError, InputError
from .systems.lorentz import LorentzConfig, sample_flow_state
from .systems.lsv import LsvModel
from .systems.markov import MarkovShiftModel
from .systems.observables import ObservableSpec, cylinder_values

BURN_IN_DEFAULT = 1000
PILOT_DEFAULT = 10 ** 7

_MAGIC = b"ASIPENS1"
_VERSION = 1


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """The canonical per-trajectory generator."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(index,)))
    )


def geometric_checkpoints(n_max: int, per_octave: int = 4,
                          n_min: int = 1) -> np.ndarray:
    """N = ceil(2^(k/q)) grid, deduplicated, clipped to [n_min, n_max]."""
    out = []
    k = 0
    while True:
        n = math.ceil(2.0 ** (k / per_octave))
        if n > n_max:
            break
        if n >= n_min and (not out or n > out[-1]):
            out.append(n)
        k += 1
    if not out or out[-1] != n_max:
        out.append(n_max)
    return np.array(out, dtype=np.int64)


@dataclass
class PartialSumSeries:
    """Checkpointed partial sums S_N along one trajectory."""

    checkpoints: np.ndarray
    sums: np.ndarray          # (C, d)
    d: int
    seed: int

    def __post_init__(self):
        self.checkpoints = np.asarray(self.checkpoints)
        self.sums = np.asarray(self.sums, dtype=np.float64).reshape(
            len(self.checkpoints), self.d
        )
        if len(self.checkpoints) > 1 and not (np.diff(self.checkpoints) > 0).all():
            raise InputError("checkpoint times must be strictly increasing")
        if not np.isfinite(self.sums).all():
            raise InputError("partial sums must be finite")


@dataclass
class EnsembleResult:
    """Trajectory ensemble on a common checkpoint grid."""

    checkpoints: np.ndarray    # (C,) int64 (maps) or float64 (flows)
    sums: np.ndarray           # (K, C, d)
    seeds: np.ndarray          # (K,) trajectory indices
    master_seed: int
    system: dict
    observable: dict
    failures: dict = field(default_factory=dict)
    timing: float = 0.0
    backend: str = ""

    @property
    def K(self) -> int:
        return self.sums.shape[0]

    @property
    def d(self) -> int:
        return self.sums.shape[2]

    def series(self, i: int) -> PartialSumSeries:
        return PartialSumSeries(self.checkpoints, self.sums[i], self.d,
                                int(self.seeds[i]))

    def checkpoint_index(self, n) -> int:
        idx = np.nonzero(self.checkpoints == n)[0]
        if len(idx) == 0:
            raise InputError(f"checkpoint {n} not in the stored grid")
        return int(idx[0])

    def at(self, n) -> np.ndarray:
        """S_N over the ensemble: (K, d)."""
        return self.sums[:, self.checkpoint_index(n), :]

    def summary(self) -> dict:
        return {
            "system": self.system,
            "observable": self.observable,
            "master_seed": int(self.master_seed),
            "trajectories": int(self.K),
            "dimension": int(self.d),
            "checkpoints": np.asarray(self.checkpoints).tolist(),
            "failures": {str(k): v for k, v in self.failures.items()},
            "timing_seconds": self.timing,
            "backend": self.backend,
        }


# ---------------------------------------------------------------------------
# single-trajectory drivers


def _markov_table_for(system, obs: ObservableSpec):
    if obs.kind == "table":
        model = system
        tab = cylinder_values(obs, model, obs.depth)
        return tab, obs.depth
    raise InputError(f"observable kind {obs.kind!r} not supported on this system")


def birkhoff_series(system, obs: ObservableSpec, n_max: int, checkpoints,
                    seed, *, index: int = 0, burn_in: int = BURN_IN_DEFAULT,
                    rng: Optional[np.random.Generator] = None) -> PartialSumSeries:
    """Partial sums of the centered observable along one seeded orbit.

    ``seed`` is the master seed; the trajectory generator is derived from
    ``(seed, index)``. Deterministic given (system, obs, seed, index).
    """
    cks = np.asarray(checkpoints, dtype=np.int64)
    if len(cks) == 0 or cks[0] < 1 or cks[-1] > n_max:
        raise InputError("checkpoints must lie in [1, n_max]")
    if rng is None:
        rng = trajectory_rng(seed, index)
    ker = backend.kernels()
    if isinstance(system, MarkovShiftModel):
        if obs.kind == "doubling-cos":
            raise InputError("the cos observable runs on the doubling map")
        tab, depth = _markov_table_for(system, obs)
        state0 = system.sample_state(rng)
        sums, _ = ker.markov_birkhoff(system.cum_rows, tab, depth, n_max,
                                      cks, state0, burn_in, rng)
        return PartialSumSeries(cks, sums, obs.dimension, index)
    if isinstance(system, DoublingMap):
        if obs.kind == "doubling-cos":
            sums, _ = ker.doubling_cos_birkhoff(n_max, cks, burn_in, rng)
            return PartialSumSeries(cks, sums.reshape(-1, 1), 1, index)
        # any word-table observable runs on the symbolic full 2-shift
        full = MarkovShiftModel.full_shift(2)
        tab, depth = _markov_table_for(full, obs)
        state0 = full.sample_state(rng)
        sums, _ = ker.markov_birkhoff(full.cum_rows, tab, depth, n_max,
                                      cks, state0, burn_in, rng)
        return PartialSumSeries(cks, sums, obs.dimension, index)
    if isinstance(system, LsvModel):
        return _lsv_series(system, obs, n_max, cks, rng, index, burn_in)
    raise InputError(f"unsupported system {type(system).__name__}")


@dataclass(frozen=True)
class DoublingMap:
    """The doubling map x -> 2x mod 1, simulated symbolically."""

    def descriptor(self) -> dict:
        return {"kind": "doubling"}


def _lsv_series(model: LsvModel, obs: ObservableSpec, n_max, cks, rng,
                index, burn_in) -> PartialSumSeries:
    if obs.evaluator is None:
        raise InputError("LSV simulation needs a callable observable")
    ker = backend.kernels()
    x = 0.5 + 0.5 * rng.random()
    if burn_in > 0:
        orbit = ker.lsv_orbit(model.gamma, x, burn_in)
        x = orbit[-1]
    orbit = ker.lsv_orbit(model.gamma, x, n_max)
    vals = np.array([obs.evaluator(xx) for xx in orbit], dtype=np.float64)
    vals = vals.reshape(n_max, obs.dimension) - obs.centering[None, :]
    acc = np.cumsum(vals, axis=0)
    return PartialSumSeries(cks, acc[cks - 1], obs.dimension, index)


def lorentz_position_series(config: LorentzConfig, t_max: float, checkpoints,
                            seed, *, index: int = 0,
                            cutoff: Optional[float] = None,
                            require_finite_horizon: bool = True,
                            rng: Optional[np.random.Generator] = None
                            ) -> PartialSumSeries:
    """Displacement q(T) - q(0) at the requested times (piecewise-linear exact)."""
    if require_finite_horizon and config.horizon_bound is None:
        raise InputError(
            "finite horizon not verified; set horizon_bound or pass "
            "require_finite_horizon=False"
        )
    cks = np.asarray(checkpoints, dtype=np.float64)
    if len(cks) == 0 or cks[0] < 0 or cks[-1] > t_max:
        raise InputError("checkpoints must lie in [0, t_max]")
    if rng is None:
        rng = trajectory_rng(seed, index)
    state = sample_flow_state(config, rng)
    ker = backend.kernels()
    cutoff = cutoff if cutoff is not None else config.default_cutoff()
    pos, ncol, max_flight, verr = ker.lorentz_run(
        config.basis.tolist(), config.inv_basis.tolist(), config.centers,
        config.radii, state.q, state.v, t_max, cks, cutoff, config.graze_tol)
    if max_flight > cutoff:
        from .errors import HorizonViolationError

        raise HorizonViolationError(
            f"free flight exceeded cutoff {cutoff} (trajectory {index})",
            flight_length=max_flight)
    disp = pos - state.q[None, :]
    return PartialSumSeries(cks, disp, 2, index)


# ---------------------------------------------------------------------------
# ensembles


def _run_one(args):
    (system, obs, n_max, cks, master_seed, index, burn_in, flow) = args
    try:
        if flow:
            s = lorentz_position_series(system, n_max, cks, master_seed,
                                        index=index)
        else:
            s = birkhoff_series(system, obs, n_max, cks, master_seed,
                                index=index, burn_in=burn_in)
        return index, s.sums, None
    except Exception as exc:  # recorded per index, partial results retained
        return index, None, f"{type(exc).__name__}: {exc}"


def run_ensemble(system, obs: Optional[ObservableSpec], n_max, checkpoints,
                 K: int, master_seed: int, workers: int = 1,
                 burn_in: int = BURN_IN_DEFAULT) -> EnsembleResult:
    """K independent trajectories; result independent of the worker count."""
    if K < 1:
        raise InputError("trajectory count must be >= 1")
    flow = isinstance(system, LorentzConfig)
    cks = np.asarray(checkpoints, dtype=np.float64 if flow else np.int64)
    d = 2 if flow else obs.dimension
    t0 = time.perf_counter()
    tasks = [(system, obs, n_max, cks, master_seed, i, burn_in, flow)
             for i in range(K)]
    results = [None] * K
    failures = {}
    if workers <= 1:
        for t in tasks:
            i, sums, err = _run_one(t)
            results[i] = (sums, err)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, sums, err in pool.map(_run_one, tasks,
                                         chunksize=max(1, K // (8 * workers))):
                results[i] = (sums, err)
    ok = [i for i in range(K) if results[i][1] is None]
    sums = np.zeros((len(ok), len(cks), d))
    seeds = np.zeros(len(ok), dtype=np.int64)
    for row, i in enumerate(ok):
        sums[row] = results[i][0]
        seeds[row] = i
    for i in range(K):
        if results[i][1] is not None:
            failures[i] = results[i][1]
    return EnsembleResult(
        checkpoints=cks, sums=sums, seeds=seeds, master_seed=master_seed,
        system=system.descriptor(),
        observable=obs.descriptor() if obs is not None else {"name": "velocity",
                                                             "dimension": 2},
        failures=failures, timing=time.perf_counter() - t0,
        backend=backend.backend_name())


def symbol_ensemble(model: MarkovShiftModel, n: int, K: int,
                    master_seed: int) -> np.ndarray:
    """(K, n) symbol paths, started from stationary draws."""
    ker = backend.kernels()
    out = np.empty((K, n), dtype=np.int64)
    for i in range(K):
        rng = trajectory_rng(master_seed, i)
        s0 = model.sample_state(rng)
        out[i] = ker.markov_symbols(model.cum_rows, n, s0, rng)
    return out


def eta_ensemble(model: MarkovShiftModel, obs: ObservableSpec, n: int, K: int,
                 master_seed: int) -> np.ndarray:
    """(K, n) per-step centered observable values along fresh paths."""
    if obs.dimension != 1:
        raise InputError("eta ensembles are for scalar observables")
    tab = cylinder_values(obs, model, obs.depth)[:, 0]
    ker = backend.kernels()
    out = np.empty((K, n), dtype=np.float64)
    for i in range(K):
        rng = trajectory_rng(master_seed, i)
        s0 = model.sample_state(rng)
        out[i] = ker.markov_eta(model.cum_rows, tab, obs.depth, n, s0, rng)
    return out


def stationarity_check(model: MarkovShiftModel, obs: ObservableSpec, n: int,
                       K: int, p: float, master_seed: int) -> dict:
    """Ensemble p-norm of the per-step observable across time indices.

    Stationarity holds when the per-index norms are constant within MC error;
    reports the max relative deviation and the MC noise scale.
    """
    etas = eta_ensemble(model, obs, n, K, master_seed)
    norms = (np.abs(etas) ** p).mean(axis=0) ** (1.0 / p)
    mean_norm = float(norms.mean())
    spread = float(np.abs(norms - mean_norm).max())
    stderr = float(norms.std(ddof=1) / math.sqrt(n))
    mc_scale = float((np.abs(etas[:, 0]) ** p).std(ddof=1)
                     / math.sqrt(K) / max(mean_norm ** (p - 1.0), 1e-300) / p)
    return {"mean_norm": mean_norm, "max_abs_deviation": spread,
            "mc_scale": mc_scale, "pass": spread <= 4.0 * mc_scale + 1e-12}


# ---------------------------------------------------------------------------
# persistence


def save_ensemble(result: EnsembleResult, path):
    """Binary container: magic + version + JSON header + raw float64 arrays."""
    header = result.summary()
    header["flow"] = bool(result.checkpoints.dtype == np.float64)
    header["seeds"] = result.seeds.tolist()
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(result.checkpoints).tobytes())
        fh.write(np.ascontiguousarray(result.sums).tobytes())


def load_ensemble(path) -> EnsembleResult:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise FormatError(f"not an ensemble file (magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise FormatError(f"unsupported ensemble version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        blob = fh.read(hlen)
        if len(blob) != hlen:
            raise FormatError("truncated header")
        header = json.loads(blob.decode("utf-8"))
        C = len(header["checkpoints"])
        K = header["trajectories"]
        d = header["dimension"]
        ck_dtype = np.float64 if header["flow"] else np.int64
        raw = fh.read(C * 8)
        if len(raw) != C * 8:
            raise FormatError("truncated checkpoint block")
        cks = np.frombuffer(raw, dtype=ck_dtype)
        raw = fh.read(K * C * d * 8)
        if len(raw) != K * C * d * 8:
            raise FormatError("truncated sums block")
        sums = np.frombuffer(raw, dtype=np.float64).reshape(K, C, d).copy()
    return EnsembleResult(
        checkpoints=cks, sums=sums,
        seeds=np.array(header["seeds"], dtype=np.int64),
        master_seed=header["master_seed"], system=header["system"],
        observable=header["observable"],
        failures={int(k): v for k, v in header["failures"].items()},
        timing=header["timing_seconds"], backend=header["backend"])


def export_csv(result: EnsembleResult, path):
    """Lossy-to-17-significant-digits CSV: header N,S_1,...,S_d,seed."""
    d = result.d
    cols = ",".join(f"S_{i+1}" for i in range(d))
    with open(path, "w") as fh:
        fh.write(f"N,{cols},seed\n")
        for i in range(result.K):
            for c, n in enumerate(result.checkpoints):
                vals = ",".join(repr(float(v)) for v in result.sums[i, c])
                nrep = repr(float(n)) if result.checkpoints.dtype == np.float64 else str(int(n))
                fh.write(f"{nrep},{vals},{int(result.seeds[i])}\n")


def import_csv(path, master_seed: int = 0) -> EnsembleResult:
    """Re-import an exported CSV (numeric fields equal to 1 ulp)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        d = len(header) - 2
        rows = [line.strip().split(",") for line in fh if line.strip()]
    byseed = {}
    for r in rows:
        seed = int(r[-1])
        byseed.setdefault(seed, []).append((float(r[0]),
                                            [float(x) for x in r[1:-1]]))
    seeds = sorted(byseed)
    cks = np.array([n for n, _ in byseed[seeds[0]]])
    if np.allclose(cks, np.round(cks)):
        cks = cks.astype(np.int64)
    sums = np.zeros((len(seeds), len(cks), d))
    for i, s in enumerate(seeds):
        sums[i] = np.array([v for _, v in byseed[s]])
    return EnsembleResult(checkpoints=cks, sums=sums,
                          seeds=np.array(seeds, dtype=np.int64),
                          master_seed=master_seed, system={}, observable={})
