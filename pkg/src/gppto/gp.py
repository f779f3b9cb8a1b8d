"""Gaussian process world belief.

The belief is a zero-order (constant mean) Gaussian process over the 2-D
environment with a squared-exponential kernel. Every measurement carries its
own noise variance, so the noise term of the Gram matrix is ``diag(nu_i)``
rather than a single ``nu * I``. A drill sample has a noise variance near zero
and a spectrometer sample has ``sigma_s**2``.

:class:`GaussianProcessBelief` follows the scikit-learn estimator protocol
(``fit``/``predict``/``get_params``) so it can be cloned and reconfigured like
any regressor. The module level functions (:func:`posterior`,
:func:`trace_variance`, :func:`variance_reduction`,
:func:`expected_improvement`) are the information metrics used by the
planner and the experiment harness.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist
from scipy.stats import norm
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import assert_all_finite, check_is_fitted

from .exceptions import ConditioningError


@dataclass(frozen=True)
class SquaredExponential:
    """k(x, x') = signal_var * exp(-|x - x'|^2 / (2 length_scale^2))."""

    length_scale: float = 1.0
    signal_var: float = 1.0

    def __post_init__(self):
        if not self.length_scale > 0:
            raise ValueError(f"length_scale must be positive, got {self.length_scale}")
        if not self.signal_var > 0:
            raise ValueError(f"signal_var must be positive, got {self.signal_var}")

    def __call__(self, A, B=None):
        A = np.atleast_2d(A)
        B = A if B is None else np.atleast_2d(B)
        if A.shape[0] == 0 or B.shape[0] == 0:
            return np.zeros((A.shape[0], B.shape[0]))
        d2 = cdist(A, B, "sqeuclidean")
        return self.signal_var * np.exp(-0.5 * d2 / self.length_scale**2)

    def diag(self, A):
        return np.full(np.atleast_2d(A).shape[0], self.signal_var)

    def grad_second(self, A, B, K=None):
        """Derivative of k(a_j, b_i) with respect to b_i.

        Returns an array of shape ``(len(A), len(B), dim)``.
        """
        if K is None:
            K = self(A, B)
        diff = A[:, None, :] - B[None, :, :]
        return K[:, :, None] * diff / self.length_scale**2


@dataclass(frozen=True)
class Measurement:
    location: np.ndarray
    value: float
    noise_var: float

    def __post_init__(self):
        loc = np.asarray(self.location, dtype=float).reshape(-1)
        if not np.all(np.isfinite(loc)):
            raise ValueError(f"measurement location must be finite, got {loc}")
        if self.noise_var < 0:
            raise ValueError(f"noise_var must be >= 0, got {self.noise_var}")
        object.__setattr__(self, "location", loc)


@dataclass
class MeasurementSet:
    """Measurements in acquisition order (the running record of the episode)."""

    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return MeasurementSet(self.entries[idx])
        return self.entries[idx]

    def append(self, measurement):
        self.entries.append(measurement)

    def extended(self, measurements):
        return MeasurementSet(self.entries + list(measurements))

    @property
    def locations(self):
        if not self.entries:
            return np.zeros((0, 2))
        return np.array([m.location for m in self.entries])

    @property
    def values(self):
        return np.array([m.value for m in self.entries], dtype=float)

    @property
    def noise_vars(self):
        return np.array([m.noise_var for m in self.entries], dtype=float)

    def is_prefix_of(self, other):
        if len(self) > len(other):
            return False
        for a, b in zip(self.entries, other.entries):
            if a.value != b.value or a.noise_var != b.noise_var:
                return False
            if not np.array_equal(a.location, b.location):
                return False
        return True

    @classmethod
    def from_arrays(cls, locations, values, noise_vars):
        locations = np.asarray(locations, dtype=float).reshape(-1, 2)
        values = np.broadcast_to(np.asarray(values, dtype=float), (len(locations),))
        noise_vars = np.broadcast_to(np.asarray(noise_vars, dtype=float), (len(locations),))
        return cls([Measurement(x, float(y), float(nu))
                    for x, y, nu in zip(locations, values, noise_vars)])


@dataclass(frozen=True)
class Posterior:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def var(self):
        return np.clip(np.diag(self.cov), 0.0, None)


def grid_query_points(extent, density):
    """Cell-centred ``density x density`` grid over ``[0, extent]^2``.

    Points are ordered row-major (y outer, x inner) to match map cells.
    """
    if density < 1:
        raise ValueError("density must be >= 1")
    h = extent / density
    c = (np.arange(density) + 0.5) * h
    xx, yy = np.meshgrid(c, c)
    return np.column_stack([xx.ravel(), yy.ravel()])


def _cholesky(S, X):
    try:
        return linalg.cholesky(S, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    d2 = cdist(X, X, "sqeuclidean")
    i, j = np.nonzero(np.triu(d2 < 1e-12, k=1))
    pairs = list(zip(i.tolist(), j.tolist()))
    raise ConditioningError(
        f"Gram matrix is numerically singular; duplicate measurement locations at index pairs {pairs}",
        duplicates=pairs,
    )


class GaussianProcessBelief(BaseEstimator):
    """GP regression with per-sample noise, evaluated over a fixed query grid.

    Parameters
    ----------
    kernel : SquaredExponential, optional
        Covariance function. Defaults to unit length scale and unit signal variance.
    mean_const : float
        Constant prior mean.
    jitter : float
        Added to the Gram diagonal on top of the per-sample noise.
    query_points : array of shape (N, 2), optional
        Locations at which :meth:`posterior` reports the belief.

    Attributes
    ----------
    X_train_, y_train_, noise_var_ : arrays
        Conditioning data seen by :meth:`fit`.
    """

    def __init__(self, kernel=None, mean_const=0.0, jitter=1e-8, query_points=None):
        self.kernel = kernel
        self.mean_const = mean_const
        self.jitter = jitter
        self.query_points = query_points

    @property
    def kernel_(self):
        return SquaredExponential() if self.kernel is None else self.kernel

    def fit(self, X, y, noise_var=0.0):
        if not self.jitter > 0:
            raise ValueError(f"jitter must be positive, got {self.jitter}")
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} rows but y has {len(y)} values")
        noise = np.broadcast_to(np.asarray(noise_var, dtype=float), y.shape).copy()
        assert_all_finite(X)
        assert_all_finite(y)
        if np.any(noise < 0):
            raise ValueError("noise_var must be nonnegative")

        self.X_train_ = X
        self.y_train_ = y
        self.noise_var_ = noise
        S = self.kernel_(X) + np.diag(noise + self.jitter)
        self.L_ = _cholesky(S, X)
        self.alpha_ = linalg.cho_solve((self.L_, True), y - self.mean_const)
        return self

    def fit_measurements(self, measurements):
        return self.fit(measurements.locations, measurements.values, measurements.noise_vars)

    def _ensure_fitted(self):
        if not hasattr(self, "L_"):
            # unconditioned belief is the prior
            self.fit(np.zeros((0, 2)), np.zeros(0))

    def predict(self, X, return_std=False, return_cov=False):
        self._ensure_fitted()
        X = np.asarray(X, dtype=float).reshape(-1, 2)
        k = self.kernel_(X, self.X_train_)
        mean = self.mean_const + k @ self.alpha_
        if not (return_std or return_cov):
            return mean
        V = linalg.solve_triangular(self.L_, k.T, lower=True, check_finite=False)
        if return_cov:
            cov = self.kernel_(X) - V.T @ V
            return mean, 0.5 * (cov + cov.T)
        var = self.kernel_.diag(X) - np.einsum("ij,ij->j", V, V)
        return mean, np.sqrt(np.clip(var, 0.0, None))

    def posterior(self):
        """Posterior mean and covariance over ``query_points``."""
        if self.query_points is None:
            raise ValueError("query_points must be set to evaluate the posterior")
        Xq = np.asarray(self.query_points, dtype=float).reshape(-1, 2)
        if len(Xq) == 0:
            raise ValueError("query_points must be nonempty")
        mean, cov = self.predict(Xq, return_cov=True)
        return Posterior(mean, cov)

    def total_variance(self):
        """Trace of the posterior covariance over ``query_points``."""
        check_is_fitted(self, "L_")
        return total_variance(self.kernel_, self.query_points, self.X_train_,
                              self.noise_var_, self.jitter)[0]


def total_variance(kernel, query, X, noise_var, jitter, grad_rows=None):
    """Tr of the posterior covariance over ``query`` given locations ``X``.

    Only locations and noise variances enter; measured values do not.
    When ``grad_rows`` is given, also returns the gradient of the trace with
    respect to ``X[grad_rows]`` as an array of shape ``(len(grad_rows), 2)``.
    """
    query = np.asarray(query, dtype=float).reshape(-1, 2)
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    prior = float(np.sum(kernel.diag(query)))
    if len(X) == 0:
        return prior, (None if grad_rows is None else np.zeros((0, 2)))

    K = kernel(X)
    S = K + np.diag(np.asarray(noise_var, dtype=float) + jitter)
    L = _cholesky(S, X)
    kxq = kernel(X, query)  # (m, N)
    V = linalg.solve_triangular(L, kxq, lower=True, check_finite=False)
    trace = prior - float(np.sum(V * V))
    if grad_rows is None:
        return trace, None

    # Tr(k S^-1 k^T) differentiated through both k(X*, X) and S(X)
    W = linalg.solve_triangular(L, V, lower=True, trans="T", check_finite=False)  # S^-1 k
    G = W @ W.T
    rows = np.asarray(grad_rows, dtype=int)
    Xr = X[rows]
    dq = (query[None, :, :] - Xr[:, None, :]) * kxq[rows][:, :, None] / kernel.length_scale**2
    term_q = 2.0 * np.einsum("rjd,rj->rd", dq, W[rows])
    dS = (X[None, :, :] - Xr[:, None, :]) * K[rows][:, :, None] / kernel.length_scale**2
    term_s = 2.0 * np.einsum("rld,rl->rd", dS, G[rows])
    return trace, -(term_q - term_s)


def posterior(belief, m):
    """Posterior over ``belief.query_points`` after conditioning on ``m``."""
    for meas in m:
        if not np.all(np.isfinite(meas.location)):
            raise ValueError("measurement locations must be finite")
    return clone(belief).fit_measurements(m).posterior()


def trace_variance(p):
    return float(np.trace(p.cov))


def variance_reduction(belief, m_new, m_old):
    """Drop in total variance when going from ``m_old`` to ``m_new``."""
    if not m_old.is_prefix_of(m_new):
        raise ValueError("m_old must be a prefix of m_new")
    if len(m_old) == len(m_new):
        return 0.0
    return trace_variance(posterior(belief, m_old)) - trace_variance(posterior(belief, m_new))


def expected_improvement(p, y_min, minimize=True):
    """Per-point expected improvement over the best value seen so far.

    ``E[I] = (y_min - mu) P(y <= y_min) + var * N(y_min | mu, var)``. The
    density term scaled by the variance equals ``sigma * phi(z)``, so this is
    the usual closed form. With ``minimize=False`` the sign of the target is
    flipped and ``y_min`` is read as the best (largest) value.
    """
    if not np.isfinite(y_min):
        raise ValueError("y_min must be finite")
    mu = np.asarray(p.mean, dtype=float)
    var = np.clip(np.diag(p.cov) if np.ndim(p.cov) == 2 else np.asarray(p.cov, float), 0.0, None)
    if not minimize:
        mu, y_min = -mu, -y_min
    gap = y_min - mu
    ei = np.maximum(gap, 0.0)
    pos = var > 0
    sd = np.sqrt(var[pos])
    ei[pos] = gap[pos] * norm.cdf(y_min, loc=mu[pos], scale=sd) + var[pos] * norm.pdf(
        y_min, loc=mu[pos], scale=sd)
    return ei
