"""Agent motion models: forward-Euler stepping and exact linearization."""

import enum
from dataclasses import dataclass, replace

import numpy as np


class DynamicsKind(str, enum.Enum):
    SINGLE_INTEGRATOR = "single_integrator"
    DOUBLE_INTEGRATOR = "double_integrator"


@dataclass(frozen=True)
class DynamicsModel:
    """x_{t+1} = x_t + h(x_t, u_t) dt with position or acceleration control.

    ``single_integrator``: state is position (2), control is velocity (2).
    ``double_integrator``: state is position + velocity (4), control is acceleration (2).
    """

    kind: DynamicsKind = DynamicsKind.SINGLE_INTEGRATOR
    dt: float = 1.0
    u_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DynamicsKind(self.kind))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.u_max > 0:
            raise ValueError(f"u_max must be positive, got {self.u_max}")

    @property
    def state_dim(self):
        return 2 if self.kind is DynamicsKind.SINGLE_INTEGRATOR else 4

    @property
    def control_dim(self):
        return 2

    def h(self, x, u):
        if self.kind is DynamicsKind.SINGLE_INTEGRATOR:
            return u
        return np.concatenate([x[2:], u])

    def jacobians(self, x, u):
        """(dh/dx, dh/du); constant for both built-in models."""
        if self.kind is DynamicsKind.SINGLE_INTEGRATOR:
            return np.zeros((2, 2)), np.eye(2)
        A = np.zeros((4, 4))
        A[:2, 2:] = np.eye(2)
        B = np.zeros((4, 2))
        B[2:] = np.eye(2)
        return A, B


@dataclass(frozen=True)
class Trajectory:
    """Knots x_{0:T}, controls u_{0:T} and the sensor used at each knot.

    ``controls[T]`` is never applied by the dynamics; it is kept so every knot
    carries a (state, control, sensor) triple.
    """

    states: np.ndarray
    controls: np.ndarray
    sensor_types: np.ndarray
    dt: float

    def __post_init__(self):
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        sensors = np.asarray(self.sensor_types, dtype=int).reshape(-1)
        if not len(states) == len(controls) == len(sensors):
            raise ValueError(
                f"states, controls and sensor_types need T+1 entries each, got "
                f"{len(states)}, {len(controls)}, {len(sensors)}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "sensor_types", sensors)

    @property
    def horizon(self):
        return len(self.states) - 1

    @property
    def positions(self):
        return self.states[:, :2]

    def with_(self, **changes):
        return replace(self, **changes)


def _check(model, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.state_dim,) or u.shape != (model.control_dim,):
        raise ValueError(
            f"{model.kind.value} expects x of shape ({model.state_dim},) and u of shape "
            f"({model.control_dim},), got {x.shape} and {u.shape}")
    return x, u


def step(model, x, u):
    x, u = _check(model, x, u)
    return x + model.h(x, u) * model.dt


def linearize(model, x, u):
    """Discrete Jacobians (I + A dt, B dt) of one step about (x, u)."""
    x, u = _check(model, x, u)
    A, B = model.jacobians(x, u)
    return np.eye(model.state_dim) + A * model.dt, B * model.dt


def rollout(model, x0, controls):
    """States x_0..x_K from applying each of the K controls in turn."""
    controls = np.asarray(controls, dtype=float).reshape(-1, model.control_dim)
    states = np.empty((len(controls) + 1, model.state_dim))
    states[0] = x0
    for t, u in enumerate(controls):
        states[t + 1] = step(model, states[t], u)
    return states
