"""Rover Exploration ground truth, sensors, and the energy budget.

The map is an ``n x n`` grid over the continuous region ``[0, n]^2``; cell
``(i, j)`` (row ``i``, column ``j``) is centred at ``(j + 0.5, i + 0.5)``.
Values between cell centres are read by bilinear interpolation so the
continuous-space planner can sample anywhere in the region.
"""

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg

from .exceptions import ConditioningError, OutOfRegionError
from .gp import Measurement, SquaredExponential


class SensorKind(enum.IntEnum):
    NONE = -1  # knot carries no measurement
    SPECTROMETER = 0
    DRILL = 1


@dataclass(frozen=True)
class SensorModel:
    spectrometer_noise_sd: float = 1.0
    drill_noise_var: float = 1e-9
    spectrometer_cost: float = 0.0
    drill_cost: float = 3.0

    def __post_init__(self):
        if not self.spectrometer_noise_sd > 0:
            raise ValueError("spectrometer_noise_sd must be positive")
        if not 0 <= self.drill_noise_var < self.spectrometer_noise_sd**2:
            raise ValueError("drill_noise_var must lie in [0, spectrometer_noise_sd**2)")
        if self.spectrometer_cost < 0 or not self.drill_cost > self.spectrometer_cost:
            raise ValueError("need 0 <= spectrometer_cost < drill_cost")

    def noise_var(self, kind):
        kind = np.asarray(kind)
        return np.select([kind == SensorKind.DRILL, kind == SensorKind.SPECTROMETER],
                         [self.drill_noise_var, self.spectrometer_noise_sd**2], np.nan)

    def cost(self, kind):
        kind = np.asarray(kind)
        return np.select([kind == SensorKind.DRILL, kind == SensorKind.SPECTROMETER],
                         [self.drill_cost, self.spectrometer_cost], 0.0)


@dataclass(frozen=True)
class BudgetModel:
    total_budget: float
    movement_cost_per_unit: float = 1.0

    def __post_init__(self):
        if not (self.total_budget > 0 and math.isfinite(self.total_budget)):
            raise ValueError(f"total_budget must be positive and finite, got {self.total_budget}")
        if not self.movement_cost_per_unit > 0:
            raise ValueError("movement_cost_per_unit must be positive")


@dataclass(frozen=True)
class EnvironmentMap:
    cells: np.ndarray
    num_types: int
    smoothing_prob: float
    seed: int

    @property
    def size_n(self):
        return self.cells.shape[0]

    @property
    def extent(self):
        return float(self.size_n)

    def contains(self, location, tol=1e-9):
        loc = np.asarray(location, dtype=float)
        return bool(np.all(loc >= -tol) and np.all(loc <= self.extent + tol))

    def cell_centers(self):
        n = self.size_n
        c = np.arange(n) + 0.5
        xx, yy = np.meshgrid(c, c)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def value_at(self, location):
        """Bilinear interpolation of the cell-centre lattice."""
        x, y = np.asarray(location, dtype=float)[:2]
        if not self.contains((x, y)):
            raise OutOfRegionError(f"location ({x}, {y}) is outside [0, {self.extent}]^2")
        n = self.size_n
        u = min(max(x - 0.5, 0.0), n - 1.0)
        v = min(max(y - 0.5, 0.0), n - 1.0)
        j0, i0 = int(math.floor(u)), int(math.floor(v))
        j1, i1 = min(j0 + 1, n - 1), min(i0 + 1, n - 1)
        fu, fv = u - j0, v - i0
        c = self.cells
        top = (1.0 - fu) * c[i0, j0] + fu * c[i0, j1]
        bottom = (1.0 - fu) * c[i1, j0] + fu * c[i1, j1]
        return float((1.0 - fv) * top + fv * bottom)


def default_type_values(num_types):
    return np.arange(1, num_types + 1, dtype=float)


def generate_map(n, num_types, smoothing_prob, seed, type_values=None):
    """Spatially correlated map from iid type draws plus neighbour averaging.

    Each cell starts as a uniform draw over the ``num_types`` values. One pass
    in row-major order then replaces each cell, with probability
    ``smoothing_prob``, by the mean of its (existing) 4-connected neighbours.
    The pass is in place, so later cells see already-smoothed neighbours.
    """
    if n < 2 or num_types < 2:
        raise ValueError(f"need n >= 2 and num_types >= 2, got n={n}, num_types={num_types}")
    if not 0.0 <= smoothing_prob <= 1.0:
        raise ValueError(f"smoothing_prob must lie in [0, 1], got {smoothing_prob}")
    values = default_type_values(num_types) if type_values is None else np.asarray(type_values, float)
    if len(values) != num_types:
        raise ValueError("type_values must have num_types entries")

    rng = np.random.default_rng(seed)
    cells = values[rng.integers(num_types, size=(n, n))]
    coins = rng.random((n, n))
    for i in range(n):
        for j in range(n):
            if coins[i, j] < smoothing_prob:
                nbrs = [cells[a, b] for a, b in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1))
                        if 0 <= a < n and 0 <= b < n]
                cells[i, j] = sum(nbrs) / len(nbrs)
    return EnvironmentMap(cells, num_types, smoothing_prob, seed)


def generate_gp_map(n, kernel=None, seed=0, value_range=(1.0, 4.0), clip=True, jitter=1e-8):
    """Map drawn from a zero-mean GP prior on the cell centres.

    The SE kernel factorizes over the two axes on a regular grid, so the draw
    is ``L Z L^T`` with ``L`` the Cholesky factor of the 1-D Gram matrix. That
    keeps large maps (e.g. 640 x 640) cheap. The draw is shifted to the middle
    of ``value_range`` and scaled so three prior standard deviations of a
    unit-variance kernel span half the range.
    """
    kernel = SquaredExponential() if kernel is None else kernel
    if n < 2:
        raise ValueError("n must be >= 2")
    lo, hi = map(float, value_range)
    c = (np.arange(n) + 0.5)[:, None]
    K1 = np.exp(-0.5 * (c - c.T) ** 2 / kernel.length_scale**2) + jitter * np.eye(n)
    try:
        L = linalg.cholesky(K1, lower=True)
    except linalg.LinAlgError as err:
        raise ConditioningError(f"GP map Gram matrix is not positive definite for n={n}") from err
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, n))
    draw = math.sqrt(kernel.signal_var) * (L @ Z @ L.T)
    cells = 0.5 * (lo + hi) + draw * (hi - lo) / 6.0
    if clip:
        cells = np.clip(cells, lo, hi)
    return EnvironmentMap(cells, 0, float("nan"), seed)


def sense(env, location, kind, sensors, rng):
    """Take one measurement of the ground truth at a continuous location."""
    truth = env.value_at(location)
    loc = np.asarray(location, dtype=float)[:2].copy()
    kind = SensorKind(kind)
    if kind == SensorKind.NONE:
        raise ValueError("cannot sense with SensorKind.NONE")
    if kind == SensorKind.DRILL:
        return Measurement(loc, truth, sensors.drill_noise_var)
    sd = sensors.spectrometer_noise_sd
    return Measurement(loc, truth + sd * rng.standard_normal(), sd**2)


def path_cost_arrays(positions, sensor_types, budget, sensors):
    positions = np.asarray(positions, dtype=float)
    moves = np.linalg.norm(np.diff(positions, axis=0), axis=1).sum() if len(positions) > 1 else 0.0
    return float(budget.movement_cost_per_unit * moves + sensors.cost(sensor_types).sum())


def path_cost(traj, budget, sensors):
    """Movement cost along the knot positions plus one sensor cost per knot."""
    return path_cost_arrays(traj.positions, traj.sensor_types, budget, sensors)


def save_map(env, path):
    path = Path(path)
    n = env.size_n
    lines = [f"{n} {env.num_types} {env.smoothing_prob!r} {env.seed}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in env.cells]
    path.write_text("\n".join(lines) + "\n")


def load_map(path):
    path = Path(path)
    rows = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 4:
        raise ValueError(f"{path}: header must be 'n beta p_g seed'")
    n, beta, p_g, seed = int(rows[0][0]), int(rows[0][1]), float(rows[0][2]), int(rows[0][3])
    cells = np.array([[float(v) for v in r] for r in rows[1:]])
    if cells.shape != (n, n):
        raise ValueError(f"{path}: expected {n}x{n} values, got shape {cells.shape}")
    return EnvironmentMap(cells, beta, p_g, seed)
