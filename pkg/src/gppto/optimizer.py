"""Projection-based trajectory optimization with GP variance objectives.

One iteration of :func:`optimize`:

1. linearize the dynamics at every knot and take the objective gradients
   ``a_t = dJ/dx_t``, ``b_t = dJ/du_t``;
2. solve the linear-quadratic subproblem for the descent direction ``(z, v)``
   with a Riccati backward pass;
3. backtrack on the step size until the projected, budget-clamped candidate
   satisfies the sufficient-decrease condition;
4. randomly perturb one planned sensor type and keep the change only if the
   objective drops.

The best plan seen is tracked and returned, so stopping early (by iteration
cap) still yields a usable plan.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator

from .dynamics import DynamicsKind, Trajectory, linearize, step
from .environment import SensorKind
from .exceptions import SetupError, WeightConfigurationError
from .objective import Objective

logger = logging.getLogger(__name__)

_TOL = 1e-9


# ---------------------------------------------------------------------------
# descent direction


@dataclass
class DescentProblem:
    """Per-knot linearization ``(A_t, B_t)`` and gradients ``(a_t, b_t)``."""

    A: np.ndarray  # (T+1, n, n)
    B: np.ndarray  # (T+1, n, m)
    a: np.ndarray  # (T+1, n)
    b: np.ndarray  # (T+1, m)
    Q_n: np.ndarray
    R_n: np.ndarray

    def __post_init__(self):
        self.A, self.B = np.asarray(self.A, float), np.asarray(self.B, float)
        self.a, self.b = np.asarray(self.a, float), np.asarray(self.b, float)
        T1 = len(self.a)
        if not (len(self.A) == len(self.B) == len(self.b) == T1):
            raise ValueError("A, B, a, b must all have T+1 entries")
        if np.linalg.eigvalsh(0.5 * (self.Q_n + self.Q_n.T)).min() < -1e-12:
            raise WeightConfigurationError("Q_n must be positive semi-definite")
        try:
            np.linalg.cholesky(self.R_n)
        except np.linalg.LinAlgError as err:
            raise WeightConfigurationError("R_n must be positive definite") from err

    @property
    def horizon(self):
        return len(self.a) - 1


@dataclass
class RiccatiSolution:
    P: np.ndarray
    r: np.ndarray
    K: np.ndarray
    Gamma: np.ndarray


@dataclass
class DescentDirection:
    z: np.ndarray
    v: np.ndarray


def _gains(A, B, Q_n, R_n, T):
    """Backward pass shared by the descent problem and the projection LQR."""
    n, m = Q_n.shape[0], R_n.shape[0]
    P = np.zeros((T + 1, n, n))
    K = np.zeros((T + 1, m, n))
    Gamma = np.zeros((T + 1, m, m))
    P[T] = Q_n
    Gamma[T] = R_n
    for t in range(T - 1, -1, -1):
        At, Bt, Pn = A[t], B[t], P[t + 1]
        G = R_n + Bt.T @ Pn @ Bt
        try:
            cho = linalg.cho_factor(G)
        except linalg.LinAlgError as err:
            raise WeightConfigurationError(f"Gamma_{t} is not positive definite") from err
        K[t] = linalg.cho_solve(cho, Bt.T @ Pn @ At)
        Pt = Q_n + At.T @ Pn @ At - K[t].T @ G @ K[t]
        P[t] = 0.5 * (Pt + Pt.T)
        Gamma[t] = G
    return P, K, Gamma


def solve_riccati(dp):
    T = dp.horizon
    P, K, Gamma = _gains(dp.A, dp.B, dp.Q_n, dp.R_n, T)
    r = np.zeros_like(dp.a)
    r[T] = dp.a[T]
    for t in range(T - 1, -1, -1):
        r[t] = dp.a[t] + (dp.A[t].T - K[t].T @ dp.B[t].T) @ r[t + 1] - K[t].T @ dp.b[t]
    return RiccatiSolution(P, r, K, Gamma)


def descent_direction(dp):
    """Minimizer of sum_t a^T z + b^T v + 1/2 z^T Q_n z + 1/2 v^T R_n v.

    Subject to ``z_{t+1} = A_t z_t + B_t v_t`` and ``z_0 = 0``.
    """
    T = dp.horizon
    sol = solve_riccati(dp)
    K, r = sol.K, sol.r
    z = np.zeros_like(dp.a)
    v = np.zeros_like(dp.b)
    for t in range(T):
        v[t] = -K[t] @ z[t] - np.linalg.solve(sol.Gamma[t], dp.B[t].T @ r[t + 1] + dp.b[t])
        z[t + 1] = dp.A[t] @ z[t] + dp.B[t] @ v[t]
    # last control only enters through its own cost
    v[T] = -np.linalg.solve(dp.R_n, dp.b[T])
    return DescentDirection(z, v)


def lqr_gains(A, B, Q_n, R_n):
    """Feedback gains K_0..K_T of the tracking LQR (K_T is unused)."""
    return _gains(np.asarray(A), np.asarray(B), Q_n, R_n, len(A) - 1)[1]


# ---------------------------------------------------------------------------
# projection and line search


def project(cand_states, cand_controls, x0, model, gains):
    """Feedback rollout of a candidate onto the dynamics.

    ``u_t = mu_t + K_t (alpha_t - x_t)``, ``x_{t+1} = step(x_t, u_t)``.
    """
    cand_states = np.asarray(cand_states, dtype=float)
    cand_controls = np.asarray(cand_controls, dtype=float)
    T = len(cand_states) - 1
    xs = np.empty_like(cand_states)
    us = cand_controls.copy()
    xs[0] = x0
    for t in range(T):
        us[t] = cand_controls[t] + gains[t] @ (cand_states[t] - xs[t])
        xs[t + 1] = step(model, xs[t], us[t])
    return xs, us


@dataclass
class LineSearchParams:
    gamma0: float = 1.0
    tau: float = 0.5
    rho: float = 1e-4
    max_backtracks: int = 30

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if not 0 < self.tau < 1 or not 0 < self.rho < 1:
            raise ValueError("tau and rho must lie in (0, 1)")
        if self.max_backtracks < 0:
            raise ValueError("max_backtracks must be >= 0")


@dataclass
class LineSearchResult:
    gamma: float
    candidate: object = None
    value: float = np.inf
    descent: bool = True  # False when the direction was not a descent direction
    trials: int = 0


def line_search(params, f0, slope, trial):
    """Backtracking search for the first step meeting sufficient decrease.

    ``trial(gamma)`` returns ``(value, candidate)`` for the projected step.
    Accepts ``gamma`` once ``value <= f0 + rho * gamma * slope``. Returns a zero
    step when ``slope >= 0`` or after ``max_backtracks`` reductions.
    """
    if not slope < 0:
        return LineSearchResult(0.0, descent=False)
    gamma = params.gamma0
    for k in range(params.max_backtracks + 1):
        value, cand = trial(gamma)
        if value <= f0 + params.rho * gamma * slope:
            return LineSearchResult(gamma, cand, value, trials=k + 1)
        gamma *= params.tau
    return LineSearchResult(0.0, trials=params.max_backtracks + 1)


# ---------------------------------------------------------------------------
# budget


@dataclass
class BudgetConstraint:
    """Energy left for the plan, plus what is needed to check reachability.

    The movement allowance (budget minus planned sensing) is spread evenly over
    the knots: no step may be longer than ``step_cap``, and from every knot the
    goal must stay within the remaining number of capped steps.
    """

    budget: float
    goal: np.ndarray  # position
    sensors: object
    region: tuple
    movement_cost: float = 1.0
    u_max: float = 1.0
    dt: float = 1.0

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=float)[:2]
        lo, hi = self.region
        self.region = (np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))

    @property
    def reach(self):
        return self.u_max * self.dt

    def cost(self, traj):
        moves = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1).sum()
        return float(self.movement_cost * moves + self.sensors.cost(traj.sensor_types).sum())

    def step_cap(self, horizon, sensor_types):
        """Longest allowed step when the allowance is shared evenly by ``horizon`` moves."""
        if horizon == 0:
            return 0.0
        # margin keeps accumulated round-off from pushing the final cost over budget
        allowance = self.budget - float(self.sensors.cost(sensor_types).sum()) - _TOL
        return max(min(allowance / (self.movement_cost * horizon), self.reach), 0.0)

    def check_instance(self, x0, horizon, sensor_types=None):
        x0 = np.asarray(x0, dtype=float)[:2]
        lo, hi = self.region
        if np.any(x0 < lo - _TOL) or np.any(x0 > hi + _TOL):
            raise SetupError(f"start {x0} lies outside the region")
        if np.any(self.goal < lo - _TOL) or np.any(self.goal > hi + _TOL):
            raise SetupError(f"goal {self.goal} lies outside the region")
        if sensor_types is None:
            sensor_types = np.full(horizon + 1, SensorKind.SPECTROMETER)
        sensing = float(self.sensors.cost(sensor_types).sum())
        if sensing > self.budget + _TOL:
            raise SetupError(f"planned sensing {sensing:.6g} exceeds budget {self.budget:.6g}")
        cap = self.step_cap(horizon, sensor_types)
        dist = float(np.linalg.norm(self.goal - x0))
        if dist > horizon * cap + _TOL:
            raise SetupError(
                f"infeasible instance: goal is {dist:.6g} away but {horizon} steps of at most "
                f"{cap:.6g} fit the budget {self.budget:.6g}")


def _require_position_control(model):
    if model.kind is not DynamicsKind.SINGLE_INTEGRATOR:
        raise SetupError("budget enforcement needs a position-controlled (single integrator) model")


def straight_line_plan(x0, goal, horizon, dt, sensor_types=None):
    """Evenly spaced knots from ``x0`` to ``goal``; all spectrometer by default."""
    x0 = np.asarray(x0, dtype=float)
    goal = np.asarray(goal, dtype=float)[: len(x0)]
    s = np.linspace(0.0, 1.0, horizon + 1)[:, None] if horizon else np.zeros((1, 1))
    states = x0 + s * (goal - x0)
    controls = np.zeros((horizon + 1, 2))
    if horizon:
        controls[:-1] = (goal - x0)[:2] / (horizon * dt)
    if sensor_types is None:
        sensor_types = np.full(horizon + 1, SensorKind.SPECTROMETER)
    return Trajectory(states, controls, sensor_types, dt)


def _project_two_discs(p, c1, r1, c2, r2):
    """Euclidean projection of ``p`` onto the intersection of two discs (assumed non-empty)."""
    def onto(c, r):
        dx, dy = p[0] - c[0], p[1] - c[1]
        n = math.hypot(dx, dy)
        return (p[0], p[1]) if n <= r else (c[0] + dx * r / n, c[1] + dy * r / n)

    y = onto(c1, r1)
    if math.hypot(y[0] - c2[0], y[1] - c2[1]) <= r2:
        return y
    y = onto(c2, r2)
    if math.hypot(y[0] - c1[0], y[1] - c1[1]) <= r1:
        return y
    # nearest crossing point of the two circles
    ex, ey = c2[0] - c1[0], c2[1] - c1[1]
    d = math.hypot(ex, ey)
    if d == 0.0:
        return y
    ex, ey = ex / d, ey / d
    a = (r1 * r1 - r2 * r2 + d * d) / (2 * d)
    h = math.sqrt(max(r1 * r1 - a * a, 0.0))
    bx, by = c1[0] + a * ex, c1[1] + a * ey
    q1 = (bx - h * ey, by + h * ex)
    q2 = (bx + h * ey, by - h * ex)
    if math.hypot(q1[0] - p[0], q1[1] - p[1]) <= math.hypot(q2[0] - p[0], q2[1] - p[1]):
        return q1
    return q2


def _cap_pairs(Y, first, cap):
    """Project every pair (Y[k], Y[k+1]), k = first, first+2, ..., onto |Y[k+1] - Y[k]| <= cap."""
    m = (len(Y) - first) // 2
    a = Y[first:first + 2 * m:2]
    b = Y[first + 1:first + 2 * m + 1:2]
    d = b - a
    n = np.hypot(d[:, 0], d[:, 1])
    f = np.maximum(n - cap, 0.0) / (2.0 * np.maximum(n, 1e-300))
    shift = d * f[:, None]
    a += shift
    b -= shift


def project_feasible(P, x0, goal, cap, lo, hi, max_sweeps=1000, tol=1e-8):
    """Approximate Euclidean projection of knot positions onto the budget set.

    The set (fixed start, fixed goal, every step at most ``cap``, every knot in
    the box) is convex, so Dykstra's alternating projections over even pairs,
    odd pairs and box-plus-endpoints converge to the nearest feasible plan.
    """
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    X = np.array(P, dtype=float)
    I1, I2, I3 = np.zeros_like(X), np.zeros_like(X), np.zeros_like(X)
    for _ in range(max_sweeps):
        prev = X
        Z = X + I1
        X = Z.copy()
        _cap_pairs(X, 0, cap)
        I1 = Z - X
        Z = X + I2
        X = Z.copy()
        _cap_pairs(X, 1, cap)
        I2 = Z - X
        Z = X + I3
        X = np.clip(Z, lo, hi)
        X[0], X[-1] = x0, goal
        I3 = Z - X
        if np.abs(X - prev).max() < tol:
            break
    return X


def enforce_budget(traj, bc):
    """Clamp each step so the plan stays affordable and can still reach the goal.

    An infeasible plan is first moved to (nearly) its Euclidean projection on
    the budget set, so a small step against an active cap loses only its
    blocked component. A knot-by-knot pass then removes what is left: a knot
    that breaks the step cap or leaves the reachability ball around the goal
    goes to its nearest point in the intersection of the two discs, and one
    outside the region box is pulled back towards the goal-directed step
    ``g``, which satisfies every check. A plan that already satisfies every
    check is returned unchanged.
    """
    T = traj.horizon
    bc.check_instance(traj.states[0], T, traj.sensor_types)
    cap = bc.step_cap(T, traj.sensor_types)
    lo, hi = bc.region
    lo, hi = (float(lo[0]), float(lo[1])), (float(hi[0]), float(hi[1]))
    gx, gy = float(bc.goal[0]), float(bc.goal[1])
    P = traj.positions
    steps = np.sqrt(np.sum(np.diff(P, axis=0) ** 2, axis=1))
    reach = np.sqrt(np.sum((P[1:] - bc.goal) ** 2, axis=1))
    if (np.all(steps <= cap) and np.all(reach <= cap * np.arange(T - 1, -1, -1))
            and np.all((P >= lo) & (P <= hi))):
        return traj
    P = project_feasible(P, P[0], bc.goal, cap, lo, hi).tolist()
    xs = [P[0]]
    for t in range(T):
        x = xs[t]
        p = P[t + 1]
        left = (T - t - 1) * cap
        step_len = math.hypot(p[0] - x[0], p[1] - x[1])
        to_goal = math.hypot(p[0] - gx, p[1] - gy)
        inside = lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1]
        if step_len > cap or to_goal > left or not inside:
            if left == 0.0:
                p = (gx, gy)
            else:
                p = _project_two_discs(p, x, cap, (gx, gy), left)
            if not (lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1]):
                dist = math.hypot(gx - x[0], gy - x[1])
                s = 1.0 if dist <= cap else cap / dist
                g = (x[0] + s * (gx - x[0]), x[1] + s * (gy - x[1]))
                d = (p[0] - g[0], p[1] - g[1])
                lam = 1.0
                for k in range(2):
                    if d[k] > 0:
                        lam = min(lam, (hi[k] - g[k]) / d[k])
                    elif d[k] < 0:
                        lam = min(lam, (lo[k] - g[k]) / d[k])
                lam = max(lam, 0.0)
                p = (g[0] + lam * d[0], g[1] + lam * d[1])
            p = [p[0], p[1]]
        xs.append(p)
    states = traj.states.copy()
    states[:, :2] = xs
    controls = traj.controls.copy()
    controls[:T] = np.diff(states, axis=0) / bc.dt
    return traj.with_(states=states, controls=controls)


def truncate_to_budget(traj, bc):
    """Cut an over-budget plan at its tail and re-join the goal in a straight line.

    Keeps the longest prefix ``x_0..x_k`` whose steps respect the step cap and
    from which the goal is reachable in the remaining capped steps, then walks
    straight to the goal (and waits there). Returns ``None`` when even the
    straight line does not fit.
    """
    T = traj.horizon
    try:
        bc.check_instance(traj.states[0], T, traj.sensor_types)
    except SetupError:
        return None
    cap = bc.step_cap(T, traj.sensor_types)
    P = traj.positions
    lo, hi = bc.region
    steps = np.linalg.norm(np.diff(P, axis=0), axis=1)
    to_goal = np.linalg.norm(P - bc.goal, axis=1)
    inside = np.all((P >= lo) & (P <= hi), axis=1)
    k = 0
    while (k < T and steps[k] <= cap and to_goal[k + 1] <= (T - k - 1) * cap
           and inside[k + 1]):
        k += 1
    if k == T:
        return traj
    xs = traj.states.copy()
    for t in range(k, T):
        d = bc.goal - xs[t, :2]
        dist = float(np.linalg.norm(d))
        xs[t + 1, :2] = bc.goal if dist <= cap else xs[t, :2] + d * (cap / dist)
    us = traj.controls.copy()
    us[:T] = np.diff(xs, axis=0) / bc.dt
    return traj.with_(states=xs, controls=us)


# ---------------------------------------------------------------------------
# sensor injection


@dataclass
class InjectionResult:
    traj: Trajectory
    value: float
    accepted: bool = False
    knot: int = -1
    kind: int = -1


def _perturb_kind(current, kinds, rng):
    kinds = list(kinds)
    if len(kinds) == 2 and current in kinds:
        return kinds[1 - kinds.index(current)]
    return kinds[rng.integers(len(kinds))]


def inject_samples(traj, value, objective, rng, inject_prob, bc=None,
                   kinds=(SensorKind.SPECTROMETER, SensorKind.DRILL)):
    """Maybe perturb one planned sensor type; keep it only if J drops."""
    if rng.random() >= inject_prob:
        return InjectionResult(traj, value)
    i = int(rng.integers(traj.horizon + 1))
    new = _perturb_kind(int(traj.sensor_types[i]), kinds, rng)
    if new == traj.sensor_types[i]:
        return InjectionResult(traj, value)
    types = traj.sensor_types.copy()
    types[i] = new
    cand = traj.with_(sensor_types=types)
    if bc is not None:
        cand = truncate_to_budget(cand, bc)
        if cand is None:
            return InjectionResult(traj, value)
    cand_value = objective(cand)
    if cand_value < value:
        return InjectionResult(cand, cand_value, True, i, int(new))
    return InjectionResult(traj, value)


# ---------------------------------------------------------------------------
# main loop


@dataclass
class OptimizerConfig:
    line_search: LineSearchParams = field(default_factory=LineSearchParams)
    Q_n: np.ndarray = None  # defaults to I
    R_n: np.ndarray = None  # defaults to 0.1 I
    inject_prob: float = 0.75
    max_iters: int = 50
    convergence_tol: float = 1e-4
    patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.inject_prob <= 1.0:
            raise ValueError("inject_prob must lie in [0, 1]")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")

    def weights(self, n, m):
        Q = np.eye(n) if self.Q_n is None else np.asarray(self.Q_n, dtype=float)
        R = 0.1 * np.eye(m) if self.R_n is None else np.asarray(self.R_n, dtype=float)
        return Q, R


@dataclass
class OptimizationResult:
    plan: Trajectory
    value: float
    best_history: list  # best J after initialization and after every iteration
    value_history: list  # current J, same indexing
    injections: list  # (iteration, knot, new kind) of accepted perturbations
    iterations: int
    converged: bool


def build_descent_problem(model, traj, objective, Q_n, R_n):
    A, B = zip(*(linearize(model, x, u) for x, u in zip(traj.states, traj.controls)))
    a, b = objective.gradients(traj)
    return DescentProblem(np.array(A), np.array(B), a, b, Q_n, R_n)


def optimize(config, model, objective_params, belief, sensors, start, horizon=None,
             budget=None, init=None, rng=None):
    """Run the GP-PTO loop and return the best plan found.

    ``budget`` is a :class:`BudgetConstraint` (or ``None`` for an unconstrained
    problem). ``init`` overrides the straight-line initial plan, e.g. to warm
    start from the previous receding-horizon plan.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    objective = Objective(objective_params, belief, sensors)
    Q_n, R_n = config.weights(model.state_dim, model.control_dim)
    start = np.asarray(start, dtype=float)

    if init is None:
        if horizon is None:
            raise ValueError("either horizon or init must be given")
        traj = straight_line_plan(start, objective_params.goal, horizon, model.dt)
    else:
        traj = init
        if not np.allclose(traj.states[0], start):
            raise ValueError("initial plan does not start at the start state")
    if budget is not None:
        _require_position_control(model)
        traj = enforce_budget(traj, budget)

    J = objective(traj)
    best, best_J = traj, J
    best_hist, val_hist, injections = [J], [J], []
    stall = 0
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        dp = build_descent_problem(model, traj, objective, Q_n, R_n)
        d = descent_direction(dp)
        slope = float(np.sum(dp.a * d.z) + np.sum(dp.b * d.v))

        def trial(gamma, traj=traj, d=d):
            alpha = traj.states + gamma * d.z
            mu = traj.controls + gamma * d.v
            A, B = zip(*(linearize(model, x, u) for x, u in zip(alpha, mu)))
            xs, us = project(alpha, mu, start, model, lqr_gains(np.array(A), np.array(B), Q_n, R_n))
            cand = traj.with_(states=xs, controls=us)
            if budget is not None:
                cand = enforce_budget(cand, budget)
            return objective(cand), cand

        ls = line_search(config.line_search, J, slope, trial)
        J_prev = J
        if ls.gamma > 0:
            traj, J = ls.candidate, ls.value

        inj = inject_samples(traj, J, objective, rng, config.inject_prob, budget)
        if inj.accepted:
            traj, J = inj.traj, inj.value
            injections.append((it, inj.knot, inj.kind))

        if J < best_J:
            best, best_J = traj, J
        best_hist.append(best_J)
        val_hist.append(J)

        rel = abs(J_prev - J) / max(abs(J_prev), 1e-12)
        stall = stall + 1 if rel < config.convergence_tol else 0
        if stall >= config.patience:
            converged = True
            break
    logger.debug("optimize: %d iterations, best J %.6g, %d injections", it, best_J, len(injections))
    return OptimizationResult(best, best_J, best_hist, val_hist, injections, it, converged)


class GPPTOPlanner(BaseEstimator):
    """Estimator-style front end to :func:`optimize`.

    ``fit`` conditions the planner's world belief on executed measurements;
    ``plan`` runs the optimizer from a start state. Hyperparameters are plain
    constructor arguments, so ``get_params``/``set_params``/``clone`` work.
    """

    def __init__(self, belief=None, model=None, sensors=None, goal=(9.5, 9.5), extent=10.0,
                 q=1.0, goal_weight=100.0, control_weight=0.1, boundary_weight=100.0,
                 gamma0=1.0, tau=0.5, rho=1e-4, max_backtracks=30, q_n=1.0, r_n=0.1,
                 inject_prob=0.75, max_iters=50, convergence_tol=1e-4, patience=3,
                 random_state=0):
        self.belief = belief
        self.model = model
        self.sensors = sensors
        self.goal = goal
        self.extent = extent
        self.q = q
        self.goal_weight = goal_weight
        self.control_weight = control_weight
        self.boundary_weight = boundary_weight
        self.gamma0 = gamma0
        self.tau = tau
        self.rho = rho
        self.max_backtracks = max_backtracks
        self.q_n = q_n
        self.r_n = r_n
        self.inject_prob = inject_prob
        self.max_iters = max_iters
        self.convergence_tol = convergence_tol
        self.patience = patience
        self.random_state = random_state

    def _components(self):
        from .dynamics import DynamicsModel
        from .environment import SensorModel
        from .gp import GaussianProcessBelief, grid_query_points

        model = self.model if self.model is not None else DynamicsModel()
        sensors = self.sensors if self.sensors is not None else SensorModel()
        belief = self.belief
        if belief is None:
            belief = GaussianProcessBelief(query_points=grid_query_points(self.extent, int(self.extent)))
        n, m = model.state_dim, model.control_dim
        goal = np.zeros(n)
        goal[:2] = self.goal
        Qf = np.zeros((n, n))
        Qf[:2, :2] = self.goal_weight * np.eye(2)
        params = _objective_params(goal, self.extent, self.q, Qf, self.control_weight * np.eye(m),
                                   self.boundary_weight)
        config = OptimizerConfig(
            line_search=LineSearchParams(self.gamma0, self.tau, self.rho, self.max_backtracks),
            Q_n=self.q_n * np.eye(n), R_n=self.r_n * np.eye(m), inject_prob=self.inject_prob,
            max_iters=self.max_iters, convergence_tol=self.convergence_tol,
            patience=self.patience, seed=self.random_state)
        return model, sensors, belief, params, config

    def fit(self, X, y, noise_var):
        from sklearn.base import clone
        _, _, belief, _, _ = self._components()
        self.belief_ = clone(belief).fit(X, y, noise_var)
        return self

    def plan(self, start, horizon, budget=None, init=None):
        model, sensors, belief, params, config = self._components()
        belief = getattr(self, "belief_", belief)
        bc = None
        if budget is not None:
            bc = BudgetConstraint(budget, params.goal, sensors, params.region,
                                  u_max=model.u_max, dt=model.dt)
        self.result_ = optimize(config, model, params, belief, sensors, start, horizon,
                                budget=bc, init=init)
        return self.result_.plan


def _objective_params(goal, extent, q, Qf, R, boundary_weight):
    from .objective import ObjectiveParams
    return ObjectiveParams(goal=goal, region=((0.0, 0.0), (extent, extent)), q=q,
                           goal_weight=Qf, control_weight=R, boundary_weight=boundary_weight)


# ---------------------------------------------------------------------------
# receding horizon


@dataclass
class EpisodeState:
    """Mutable state of one receding-horizon episode."""

    env: object
    belief: object  # unconditioned GaussianProcessBelief template
    sensors: object
    model: object
    objective_params: object
    config: OptimizerConfig
    budget: float
    position: np.ndarray
    knots_left: int
    opt_rng: np.random.Generator
    sensor_rng: np.random.Generator
    movement_cost: float = 1.0
    spent: float = 0.0
    measurements: object = None
    plan: Trajectory = None
    warm_start: bool = True

    def __post_init__(self):
        from .gp import MeasurementSet
        self.position = np.asarray(self.position, dtype=float)
        if self.measurements is None:
            self.measurements = MeasurementSet()

    def conditioned_belief(self):
        from sklearn.base import clone
        return clone(self.belief).fit_measurements(self.measurements)


@dataclass
class ReplanOutcome:
    measurement: object
    kind: int
    moved_to: np.ndarray
    plan: Trajectory
    result: OptimizationResult
    planning_time: float


def replan_step(state):
    """Plan from the current state, sense at the current knot, take one step.

    The plan's first sensor type is used at the current position, the
    measurement is appended to the executed set, and the agent moves to the
    plan's second knot (if any knots remain).
    """
    import time

    from .environment import sense

    params = state.objective_params
    bc = BudgetConstraint(state.budget - state.spent, params.goal, state.sensors, params.region,
                          state.movement_cost, state.model.u_max, state.model.dt)
    init = None
    if state.warm_start and state.plan is not None and state.plan.horizon >= 1:
        p = state.plan
        init = Trajectory(p.states[1:], p.controls[1:], p.sensor_types[1:], p.dt)
    t0 = time.perf_counter()
    result = optimize(state.config, state.model, params, state.conditioned_belief(), state.sensors,
                      state.position, state.knots_left, budget=bc, init=init, rng=state.opt_rng)
    elapsed = time.perf_counter() - t0
    plan = result.plan

    kind = int(plan.sensor_types[0])
    meas = sense(state.env, state.position, kind, state.sensors, state.sensor_rng)
    state.measurements.append(meas)
    state.spent += float(state.sensors.cost(kind))
    if state.knots_left > 0:
        nxt = plan.states[1].copy()
        state.spent += state.movement_cost * float(np.linalg.norm(nxt[:2] - state.position[:2]))
        state.position = nxt
        state.knots_left -= 1
    state.plan = plan
    return ReplanOutcome(meas, kind, state.position.copy(), plan, result, elapsed)
