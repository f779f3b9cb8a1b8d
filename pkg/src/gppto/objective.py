"""Composite trajectory objective and its gradients.

J(x, u) = -q * VR(plan) + |x_T - x_f|^2_{Q_f} + sum_t 1/2 u_t^T R u_t + J_b(x)

VR is the drop in total posterior variance (over the belief's query grid)
caused by the measurements the plan would take, relative to the belief's
current conditioning set. Every knot contributes one planned measurement
whose noise variance is set by its sensor type. J_b is a quadratic penalty
on the squared distance of each knot from the environment box.
"""

from dataclasses import dataclass, field

import numpy as np

from .environment import SensorKind
from .gp import total_variance


@dataclass
class ObjectiveParams:
    goal: np.ndarray
    region: tuple  # ((xmin, ymin), (xmax, ymax))
    q: float = 1.0
    goal_weight: np.ndarray = None  # Q_f; defaults to 100 I on the position block
    control_weight: np.ndarray = None  # R; defaults to 0.1 I
    boundary_weight: float = 100.0
    fd_variance_gradient: bool = False

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=float).reshape(-1)
        n = len(self.goal)
        if self.goal_weight is None:
            Q = np.zeros((n, n))
            Q[:2, :2] = 100.0 * np.eye(2)
            self.goal_weight = Q
        if self.control_weight is None:
            self.control_weight = 0.1 * np.eye(2)
        self.goal_weight = np.asarray(self.goal_weight, dtype=float)
        self.control_weight = np.asarray(self.control_weight, dtype=float)
        lo, hi = self.region
        self.region = (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
        if self.q < 0:
            raise ValueError("q must be nonnegative")
        if self.boundary_weight < 0:
            raise ValueError("boundary_weight must be nonnegative")
        for name, M in (("goal_weight", self.goal_weight), ("control_weight", self.control_weight)):
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(self.control_weight).min() <= 0:
            raise ValueError("control_weight must be positive definite")
        if np.linalg.eigvalsh(self.goal_weight).min() < -1e-12:
            raise ValueError("goal_weight must be positive semi-definite")


@dataclass(frozen=True)
class ObjectiveBreakdown:
    variance_term: float
    goal_term: float
    control_term: float
    boundary_term: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.variance_term + self.goal_term
                           + self.control_term + self.boundary_term)


class Objective:
    """J bound to a belief and sensor model; caches the belief's own trace."""

    def __init__(self, params, belief, sensors):
        self.params = params
        self.belief = belief
        self.sensors = sensors
        self.kernel = belief.kernel_
        self.query = np.asarray(belief.query_points, dtype=float).reshape(-1, 2)
        if hasattr(belief, "L_"):
            self.X_exec = belief.X_train_
            self.nu_exec = belief.noise_var_
        else:
            self.X_exec = np.zeros((0, 2))
            self.nu_exec = np.zeros(0)
        self.base_trace = total_variance(self.kernel, self.query, self.X_exec,
                                         self.nu_exec, belief.jitter)[0]

    def _planned(self, traj):
        mask = traj.sensor_types != SensorKind.NONE
        knots = np.flatnonzero(mask)
        X = np.vstack([self.X_exec, traj.positions[knots]])
        nu = np.concatenate([self.nu_exec, self.sensors.noise_var(traj.sensor_types[knots])])
        return knots, X, nu

    def variance_reduction(self, traj):
        knots, X, nu = self._planned(traj)
        if len(knots) == 0:
            return 0.0
        tr = total_variance(self.kernel, self.query, X, nu, self.belief.jitter)[0]
        return self.base_trace - tr

    def _boundary_excess(self, positions):
        lo, hi = self.params.region
        return positions - np.clip(positions, lo, hi)

    def evaluate(self, traj):
        p = self.params
        d = traj.states[-1] - p.goal
        excess = self._boundary_excess(traj.positions)
        return ObjectiveBreakdown(
            variance_term=-p.q * self.variance_reduction(traj) if p.q else 0.0,
            goal_term=float(d @ p.goal_weight @ d),
            control_term=0.5 * float(np.einsum("ti,ij,tj->", traj.controls,
                                               p.control_weight, traj.controls)),
            boundary_term=p.boundary_weight * float(np.sum(excess**2)),
        )

    def __call__(self, traj):
        return self.evaluate(traj).total

    def gradients(self, traj):
        """(a_t, b_t): gradients of J with respect to each state and control."""
        p = self.params
        a = np.zeros_like(traj.states)
        a[:, :2] += 2.0 * p.boundary_weight * self._boundary_excess(traj.positions)
        a[-1] += 2.0 * p.goal_weight @ (traj.states[-1] - p.goal)
        b = traj.controls @ p.control_weight.T

        if p.q:
            knots, X, nu = self._planned(traj)
            if len(knots):
                if p.fd_variance_gradient:
                    g = self._fd_variance_gradient(traj, knots)
                else:
                    rows = len(self.X_exec) + np.arange(len(knots))
                    _, g = total_variance(self.kernel, self.query, X, nu, self.belief.jitter,
                                          grad_rows=rows)
                # d(-q * (base - Tr))/dx = q * dTr/dx
                a[knots, :2] += p.q * g
        return a, b

    def _fd_variance_gradient(self, traj, knots, h=1e-6):
        _, X, nu = self._planned(traj)
        off = len(self.X_exec)
        g = np.zeros((len(knots), 2))
        for r in range(len(knots)):
            for d in range(2):
                Xp, Xm = X.copy(), X.copy()
                Xp[off + r, d] += h
                Xm[off + r, d] -= h
                fp = total_variance(self.kernel, self.query, Xp, nu, self.belief.jitter)[0]
                fm = total_variance(self.kernel, self.query, Xm, nu, self.belief.jitter)[0]
                g[r, d] = (fp - fm) / (2 * h)
        return g


def evaluate(params, traj, belief, sensors):
    return Objective(params, belief, sensors).evaluate(traj)


def gradients(params, traj, belief, sensors):
    return Objective(params, belief, sensors).gradients(traj)
