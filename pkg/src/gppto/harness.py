"""Episode runner, baseline policies, metrics and experiment sweeps.

Every policy is scored with the same Gaussian process configuration: the
executed measurements of an episode condition a fresh belief after every
step, and the trace of its covariance, the RMSE of its mean against the true
map, and the mean expected improvement are recorded.

Each episode owns one master seed. Independent child streams are spawned
for the map, the sensor noise, the optimizer's sample injection, and the
random policy, so changing one consumer does not shift the others.
"""

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import clone

from .dynamics import DynamicsModel
from .environment import (BudgetModel, SensorKind, SensorModel, default_type_values,
                          generate_gp_map, generate_map, load_map, sense)
from .exceptions import SetupError
from .gp import GaussianProcessBelief, MeasurementSet, SquaredExponential, expected_improvement, grid_query_points
from .objective import ObjectiveParams
from .optimizer import (BudgetConstraint, EpisodeState, LineSearchParams, OptimizerConfig, optimize,
                        replan_step)

logger = logging.getLogger(__name__)

POLICIES = ("gp_pto", "gp_pto_offline", "random")

CSV_COLUMNS = ["policy", "seed", "budget", "sigma_s", "step", "trace_sigma", "rmse",
               "expected_improvement_mean", "cost_spent", "drilled", "frac_along_trajectory",
               "planning_time_s"]
TIMING_COLUMNS = ("planning_time_s",)


@dataclass
class ExperimentConfig:
    # environment
    n: int = 10
    num_types: int = 4
    smoothing_prob: float = 0.95
    gp_map: bool = False
    map_file: str = None
    # sweep
    sigma_s_list: list = field(default_factory=lambda: [1.0])
    budget_list: list = field(default_factory=lambda: [60.0])
    policies: list = field(default_factory=lambda: ["gp_pto"])
    runs_per_cell: int = 50
    seed: int = 0
    seeds: list = None
    n_jobs: int = 1
    # sensing and cost
    drill_noise_var: float = 1e-9
    spectrometer_cost: float = 0.0
    drill_cost: float = 3.0
    movement_cost: float = 1.0
    # belief
    length_scale: float = 1.0
    signal_var: float = 1.0
    mean_const: float = None
    jitter: float = 1e-8
    query_density: int = None
    # dynamics
    dt: float = 1.0
    u_max: float = 1.0
    # objective
    q: float = 1.0
    goal_weight: float = 100.0
    control_weight: float = 0.1
    boundary_weight: float = 100.0
    # optimizer
    gamma0: float = 1.0
    tau: float = 0.5
    rho: float = 1e-4
    max_backtracks: int = 30
    q_n: float = 1.0
    r_n: float = 0.1
    inject_prob: float = 0.75
    max_iters: int = 50
    offline_max_iters: int = 5000
    convergence_tol: float = 1e-4
    patience: int = 3
    warm_start: bool = True
    # episode
    start: list = None
    goal: list = None
    goal_tolerance: float = 0.5

    def __post_init__(self):
        if not self.sigma_s_list or not self.budget_list or not self.policies:
            raise ValueError("sweep lists must be nonempty")
        if self.runs_per_cell < 1:
            raise ValueError("runs_per_cell must be >= 1")
        for p in self.policies:
            if p not in POLICIES:
                raise ValueError(f"unknown policy {p!r}; choose from {POLICIES}")

    @property
    def type_values(self):
        return default_type_values(self.num_types)

    @property
    def start_position(self):
        return np.array(self.start if self.start is not None else [0.5, 0.5], dtype=float)

    @property
    def goal_position(self):
        if self.goal is not None:
            return np.array(self.goal, dtype=float)
        return np.array([self.n - 0.5, self.n - 0.5])

    def episode_seeds(self):
        if self.seeds is not None:
            return list(self.seeds)
        return [self.seed + k for k in range(self.runs_per_cell)]

    def kernel(self):
        return SquaredExponential(self.length_scale, self.signal_var)

    def belief(self):
        density = self.n if self.query_density is None else self.query_density
        mean = float(np.mean(self.type_values)) if self.mean_const is None else self.mean_const
        return GaussianProcessBelief(kernel=self.kernel(), mean_const=mean, jitter=self.jitter,
                                     query_points=grid_query_points(float(self.n), density))

    def sensors(self, sigma_s):
        return SensorModel(sigma_s, self.drill_noise_var, self.spectrometer_cost, self.drill_cost)

    def model(self):
        return DynamicsModel("single_integrator", self.dt, self.u_max)

    def objective_params(self):
        R = self.control_weight * np.eye(2)
        Qf = self.goal_weight * np.eye(2)
        return ObjectiveParams(goal=self.goal_position, region=((0.0, 0.0), (self.n, self.n)),
                               q=self.q, goal_weight=Qf, control_weight=R,
                               boundary_weight=self.boundary_weight)

    def optimizer_config(self, offline=False):
        return OptimizerConfig(
            line_search=LineSearchParams(self.gamma0, self.tau, self.rho, self.max_backtracks),
            Q_n=self.q_n * np.eye(2), R_n=self.r_n * np.eye(2), inject_prob=self.inject_prob,
            max_iters=self.offline_max_iters if offline else self.max_iters,
            convergence_tol=self.convergence_tol, patience=self.patience)

    def horizon(self, budget):
        return int(math.floor(budget / (self.movement_cost * self.u_max * self.dt)))


@dataclass
class StepRecord:
    step: int
    trace_sigma: float
    rmse: float
    expected_improvement_mean: float
    cost_spent: float
    drilled: int
    frac_along_trajectory: float
    planning_time_s: float = 0.0


@dataclass
class EpisodeRecord:
    seed: int
    policy: str
    budget: float
    sigma_s: float
    steps: list
    total_cost: float
    final_position: np.ndarray
    prior_trace: float
    planning_time_s: float = 0.0
    injections: int = 0

    @property
    def trace_history(self):
        return np.array([s.trace_sigma for s in self.steps])

    @property
    def final_trace(self):
        return self.steps[-1].trace_sigma

    @property
    def final_rmse(self):
        return self.steps[-1].rmse

    @property
    def final_expected_improvement(self):
        return self.steps[-1].expected_improvement_mean

    @property
    def drill_fractions(self):
        return [s.frac_along_trajectory for s in self.steps if s.drilled]

    @property
    def num_drills(self):
        return sum(s.drilled for s in self.steps)

    def rows(self):
        head = dict(policy=self.policy, seed=self.seed, budget=self.budget, sigma_s=self.sigma_s)
        out = [{**head, **asdict(s)} for s in self.steps]
        out.append({**head, "step": -1, "trace_sigma": self.final_trace, "rmse": self.final_rmse,
                    "expected_improvement_mean": self.final_expected_improvement,
                    "cost_spent": self.total_cost, "drilled": self.num_drills,
                    "frac_along_trajectory": 1.0, "planning_time_s": self.planning_time_s})
        return out


# ---------------------------------------------------------------------------
# metrics


def compute_rmse(mean, truth):
    mean = np.asarray(mean, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean((mean - truth) ** 2)))


class _Scorer:
    """Shared metric belief for every policy of an experiment."""

    def __init__(self, belief, env):
        self.belief = belief
        self.truth = np.array([env.value_at(x) for x in belief.query_points])
        self.prior_trace = float(np.trace(clone(belief).posterior().cov))

    def score(self, measurements):
        post = clone(self.belief).fit_measurements(measurements).posterior()
        y_min = float(np.min(measurements.values))
        return (float(np.trace(post.cov)), compute_rmse(post.mean, self.truth),
                float(np.mean(expected_improvement(post, y_min))))


# ---------------------------------------------------------------------------
# policies


MOVES = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
RANDOM_ACTIONS = [(d, k) for d in range(4) for k in (SensorKind.SPECTROMETER, SensorKind.DRILL)]


def admissible_actions(position, goal, remaining, sensors, movement_cost, extent):
    """Unit moves x sensor kinds that keep the goal reachable on the grid.

    Reachability uses the Manhattan distance, the cheapest path under unit
    axis-aligned moves.
    """
    out = []
    for d, kind in RANDOM_ACTIONS:
        nxt = position + MOVES[d]
        if np.any(nxt < 0) or np.any(nxt > extent):
            continue
        to_goal = movement_cost * np.abs(goal - nxt).sum()
        if movement_cost + float(sensors.cost(kind)) + to_goal <= remaining + 1e-9:
            out.append((d, kind))
    return out


def random_policy_step(position, goal, remaining, sensors, rng, movement_cost=1.0, extent=10.0):
    """Uniform draw over admissible actions; ``None`` when none is left."""
    acts = admissible_actions(np.asarray(position, float), np.asarray(goal, float), remaining,
                              sensors, movement_cost, extent)
    if not acts:
        return None
    return acts[rng.integers(len(acts))]


# ---------------------------------------------------------------------------
# episodes


def _rngs(seed):
    ss = np.random.SeedSequence(seed)
    map_ss, sensor_ss, opt_ss, policy_ss = ss.spawn(4)
    return (int(map_ss.generate_state(1)[0]), np.random.default_rng(sensor_ss),
            np.random.default_rng(opt_ss), np.random.default_rng(policy_ss))


def make_environment(config, map_seed):
    if config.map_file:
        return load_map(config.map_file)
    if config.gp_map:
        return generate_gp_map(config.n, config.kernel(), map_seed,
                               value_range=(config.type_values[0], config.type_values[-1]))
    return generate_map(config.n, config.num_types, config.smoothing_prob, map_seed)


def run_episode(config, policy, seed, budget=None, sigma_s=None, env=None):
    """Run one seeded episode of ``policy`` and score it."""
    budget = config.budget_list[0] if budget is None else float(budget)
    sigma_s = config.sigma_s_list[0] if sigma_s is None else float(sigma_s)
    map_seed, sensor_rng, opt_rng, policy_rng = _rngs(seed)
    env = make_environment(config, map_seed) if env is None else env
    sensors = config.sensors(sigma_s)
    BudgetModel(budget, config.movement_cost)
    scorer = _Scorer(config.belief(), env)
    start, goal = config.start_position, config.goal_position
    line = config.movement_cost * np.linalg.norm(goal - start)
    if line > budget:
        raise SetupError(f"infeasible instance: straight-line cost {line:.6g} exceeds budget {budget}")

    if policy == "random":
        rec = _run_random(config, env, sensors, budget, scorer, sensor_rng, policy_rng)
    elif policy == "gp_pto":
        rec = _run_gp_pto(config, env, sensors, budget, scorer, sensor_rng, opt_rng)
    elif policy == "gp_pto_offline":
        rec = _run_offline(config, env, sensors, budget, scorer, sensor_rng, opt_rng)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    rec.seed, rec.budget, rec.sigma_s = seed, budget, sigma_s
    if rec.total_cost > budget + 1e-9:
        raise AssertionError(f"episode overspent: {rec.total_cost} > {budget}")
    return rec


def _record(scorer, measurements, k, total, spent, kind, elapsed=0.0):
    tr, rmse, ei = scorer.score(measurements)
    frac = k / total if total else 0.0
    return StepRecord(k, tr, rmse, ei, spent, int(kind == SensorKind.DRILL), frac, elapsed)


def _run_gp_pto(config, env, sensors, budget, scorer, sensor_rng, opt_rng):
    T = config.horizon(budget)
    state = EpisodeState(env=env, belief=config.belief(), sensors=sensors, model=config.model(),
                         objective_params=config.objective_params(),
                         config=config.optimizer_config(), budget=budget,
                         position=config.start_position, knots_left=T, opt_rng=opt_rng,
                         sensor_rng=sensor_rng, movement_cost=config.movement_cost,
                         warm_start=config.warm_start)
    steps, injections = [], 0
    for k in range(T + 1):
        out = replan_step(state)
        injections += len(out.result.injections)
        steps.append(_record(scorer, state.measurements, k, T, state.spent, out.kind, out.planning_time))
    return EpisodeRecord(0, "gp_pto", budget, 0.0, steps, state.spent, state.position,
                         scorer.prior_trace, sum(s.planning_time_s for s in steps), injections)


def _run_offline(config, env, sensors, budget, scorer, sensor_rng, opt_rng):
    T = config.horizon(budget)
    params = config.objective_params()
    model = config.model()
    bc = BudgetConstraint(budget, params.goal, sensors, params.region, config.movement_cost,
                          model.u_max, model.dt)
    t0 = time.perf_counter()
    result = optimize(config.optimizer_config(offline=True), model, params, config.belief(),
                      sensors, config.start_position, T, budget=bc, rng=opt_rng)
    elapsed = time.perf_counter() - t0
    plan = result.plan
    measurements = MeasurementSet()
    spent = 0.0
    steps = []
    for k in range(T + 1):
        x, kind = plan.states[k], int(plan.sensor_types[k])
        measurements.append(sense(env, x, kind, sensors, sensor_rng))
        spent += float(sensors.cost(kind))
        if k < T:
            spent += config.movement_cost * float(np.linalg.norm(plan.states[k + 1] - x))
        steps.append(_record(scorer, measurements, k, T, spent, kind, elapsed if k == 0 else 0.0))
    return EpisodeRecord(0, "gp_pto_offline", budget, 0.0, steps, spent, plan.states[-1],
                         scorer.prior_trace, elapsed, len(result.injections))


def _run_random(config, env, sensors, budget, scorer, sensor_rng, policy_rng):
    x = config.start_position.copy()
    goal = config.goal_position
    spent = 0.0
    measurements = MeasurementSet()
    taken = []  # (kind, spent after the step)
    while True:
        act = random_policy_step(x, goal, budget - spent, sensors, policy_rng,
                                 config.movement_cost, float(env.extent))
        kind = SensorKind.SPECTROMETER if act is None else act[1]
        measurements.append(sense(env, x, kind, sensors, sensor_rng))
        spent += float(sensors.cost(kind))
        if act is not None:
            x = x + MOVES[act[0]]
            spent += config.movement_cost
        taken.append((int(kind), spent, len(measurements)))
        if act is None:
            break
    total = len(taken) - 1
    steps = []
    for k, (kind, s, m) in enumerate(taken):
        steps.append(_record(scorer, measurements[:m], k, total, s, kind))
    return EpisodeRecord(0, "random", budget, 0.0, steps, spent, x, scorer.prior_trace)


# ---------------------------------------------------------------------------
# sweeps


def _episode_job(config, policy, seed, budget, sigma_s):
    return run_episode(config, policy, seed, budget, sigma_s)


def sweep(config, out=None):
    """Run every (budget, sigma_s, policy) cell and aggregate the episodes.

    Returns ``(records, summary)`` where ``summary`` holds one dict per cell
    with the mean and population standard deviation of the episode-level
    metrics. When ``out`` is given the per-step rows are written there as CSV.
    """
    jobs = [(config, p, s, b, sig) for b in config.budget_list for sig in config.sigma_s_list
            for p in config.policies for s in config.episode_seeds()]
    records = Parallel(n_jobs=config.n_jobs)(delayed(_episode_job)(*j) for j in jobs)
    if out is not None:
        write_csv(records, out)
    return records, summarize(records)


SUMMARY_FIELDS = ("final_trace", "final_rmse", "final_expected_improvement", "total_cost",
                  "num_drills", "planning_time_s")


def summarize(records):
    cells = {}
    for r in records:
        cells.setdefault((r.budget, r.sigma_s, r.policy), []).append(r)
    summary = []
    for (b, sig, pol), recs in cells.items():
        row = {"budget": b, "sigma_s": sig, "policy": pol, "runs": len(recs)}
        for name in SUMMARY_FIELDS:
            vals = np.array([getattr(r, name) for r in recs], dtype=float)
            row[f"{name}_mean"] = float(vals.mean())
            row[f"{name}_sd"] = float(vals.std())
        summary.append(row)
    return summary


def write_csv(records, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for r in records:
                for row in r.rows():
                    w.writerow({k: _fmt(row[k]) for k in CSV_COLUMNS})
    except OSError as err:
        raise OSError(f"could not write results to {path}: {err}") from err


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def config_fields():
    return {f.name: f for f in fields(ExperimentConfig)}
