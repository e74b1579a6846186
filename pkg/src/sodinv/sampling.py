"""Latin hypercube sampling of initial-state parameters, batch dataset
generation through the high-fidelity solver, normalization and persistence."""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import container
from .euler1d import Grid, PrimitiveField, SolverConfig, build_initial_condition, solve

CHANNELS = ("rho", "u", "p")


@dataclass(frozen=True)
class ParameterVector:
    """The four unknowns of the inverse problem, ordered (rho_L, p_L, rho_R, p_R)."""

    rho_L: float
    p_L: float
    rho_R: float
    p_R: float

    def __post_init__(self):
        if min(self.rho_L, self.p_L, self.rho_R, self.p_R) <= 0.0:
            raise ValueError(f"all components must be positive: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.rho_L, self.p_L, self.rho_R, self.p_R])

    @classmethod
    def from_array(cls, arr) -> "ParameterVector":
        a = np.asarray(arr, dtype=np.float64)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class ParameterRanges:
    """Per-component (low, high) sampling bounds."""

    rho_L: tuple = (0.5, 1.5)
    p_L: tuple = (0.5, 1.5)
    rho_R: tuple = (0.05, 0.15)
    p_R: tuple = (0.05, 0.15)

    def __post_init__(self):
        for name, (lo, hi) in self.items():
            if not lo < hi:
                raise ValueError(f"range for {name} must have low < high")

    def items(self):
        return [
            ("rho_L", self.rho_L),
            ("p_L", self.p_L),
            ("rho_R", self.rho_R),
            ("p_R", self.p_R),
        ]

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lows = np.array([b[0] for _, b in self.items()])
        highs = np.array([b[1] for _, b in self.items()])
        return lows, highs

    def to_dict(self) -> dict:
        return {name: list(b) for name, b in self.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterRanges":
        return cls(**{k: tuple(v) for k, v in d.items()})


@dataclass
class SnapshotPair:
    """One simulation: parameters, initial field, final field at t_final."""

    theta: ParameterVector
    x0: PrimitiveField
    xf: PrimitiveField


@dataclass
class Dataset:
    grid: Grid
    pairs: list
    seed: int
    solver_config: SolverConfig

    def __len__(self) -> int:
        return len(self.pairs)

    def config_hash(self) -> str:
        blob = json.dumps(self.solver_config.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class NormalizationStats:
    """Per-channel (rho, u, p) mean/std, fitted on pooled x0+xf training snapshots."""

    mean: np.ndarray  # (3,)
    std: np.ndarray  # (3,)

    def apply(self, arr: np.ndarray) -> np.ndarray:
        """Standardize a (..., 3, nx) array channelwise."""
        return (arr - self.mean[:, None]) / self.std[:, None]

    def invert(self, arr: np.ndarray) -> np.ndarray:
        return arr * self.std[:, None] + self.mean[:, None]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.array(d["mean"]), np.array(d["std"]))


def lhs_sample(n: int, ranges: ParameterRanges, seed: int) -> list[ParameterVector]:
    """Latin hypercube design: one sample per stratum in each dimension."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lows, highs = ranges.as_arrays()
    out = np.empty((n, 4))
    for dim in range(4):
        strata = rng.permutation(n)
        offsets = rng.random(n)
        unit = (strata + offsets) / n
        out[:, dim] = lows[dim] + unit * (highs[dim] - lows[dim])
    return [ParameterVector.from_array(row) for row in out]


def _solve_one(args):
    theta_arr, grid, config = args
    x0 = build_initial_condition(theta_arr, grid)
    return solve(x0, grid, config).as_array()


def generate_dataset(thetas: list, grid: Grid, config: SolverConfig,
                     seed: int = 0, workers: int = 1) -> Dataset:
    """Run the high-fidelity solver for every theta; order is preserved."""
    jobs = [(t.as_array(), grid, config) for t in thetas]
    finals = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_solve_one, jobs, chunksize=8)
            for i, arr in enumerate(results):
                finals.append((i, arr))
    else:
        for i, job in enumerate(jobs):
            try:
                finals.append((i, _solve_one(job)))
            except Exception as err:
                raise RuntimeError(f"solver failed for theta index {i}: {err}") from err
    pairs = []
    for i, arr in finals:
        x0 = build_initial_condition(thetas[i], grid)
        pairs.append(SnapshotPair(thetas[i], x0, PrimitiveField.from_array(arr)))
    return Dataset(grid=grid, pairs=pairs, seed=seed, solver_config=config)


def split_dataset(dataset: Dataset, fraction: float, seed: int) -> tuple:
    """Disjoint covering (train, validation) index arrays; deterministic per seed."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0,1)")
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(n * fraction))
    return np.sort(perm[:k]), np.sort(perm[k:])


def fit_normalization(dataset: Dataset, train_idx) -> NormalizationStats:
    """Channelwise mean/std over the pooled initial+final training snapshots."""
    train_idx = np.asarray(train_idx)
    if train_idx.size == 0:
        raise ValueError("training split is empty")
    snaps = []
    for i in train_idx:
        snaps.append(dataset.pairs[i].x0.as_array())
        snaps.append(dataset.pairs[i].xf.as_array())
    stacked = np.stack(snaps)  # (2*n_train, 3, nx)
    mean = stacked.mean(axis=(0, 2))
    std = stacked.std(axis=(0, 2))
    for c, name in enumerate(CHANNELS):
        if std[c] <= 1e-12 * max(1.0, abs(mean[c])):
            raise ValueError(f"zero variance in channel {name!r}; cannot normalize")
    return NormalizationStats(mean=mean, std=std)


def save_dataset(dataset: Dataset, path):
    grid = dataset.grid
    header = {
        "kind": "dataset",
        "grid": {"nx": grid.nx, "x_min": grid.x_min, "x_max": grid.x_max},
        "seed": dataset.seed,
        "solver": dataset.solver_config.to_dict(),
        "solver_hash": dataset.config_hash(),
        "n_pairs": len(dataset),
        "channels": list(CHANNELS),
    }
    nx = grid.nx
    block = 4 + 6 * nx
    payload = np.empty(len(dataset) * block)
    for i, pair in enumerate(dataset.pairs):
        o = i * block
        payload[o : o + 4] = pair.theta.as_array()
        payload[o + 4 : o + 4 + 3 * nx] = pair.x0.as_array().ravel()
        payload[o + 4 + 3 * nx : o + block] = pair.xf.as_array().ravel()
    container.write_container(path, header, payload)


def load_dataset(path) -> Dataset:
    header, payload = container.read_container(path)
    if header.get("kind") != "dataset":
        raise container.ContainerError(f"{path}: not a dataset container")
    g = header["grid"]
    grid = Grid(nx=g["nx"], x_min=g["x_min"], x_max=g["x_max"])
    config = SolverConfig.from_dict(header["solver"])
    nx = grid.nx
    block = 4 + 6 * nx
    n = header["n_pairs"]
    if payload.size != n * block:
        raise container.ContainerError(
            f"{path}: payload holds {payload.size} values, expected {n * block}"
        )
    pairs = []
    for i in range(n):
        o = i * block
        theta = ParameterVector.from_array(payload[o : o + 4])
        x0 = PrimitiveField.from_array(payload[o + 4 : o + 4 + 3 * nx].reshape(3, nx))
        xf = PrimitiveField.from_array(
            payload[o + 4 + 3 * nx : o + block].reshape(3, nx)
        )
        pairs.append(SnapshotPair(theta, x0, xf))
    return Dataset(grid=grid, pairs=pairs, seed=header["seed"], solver_config=config)
