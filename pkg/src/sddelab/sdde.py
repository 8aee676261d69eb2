"""Pathwise left-point (Young) Euler scheme for the delayed equation

    X_t = eta0 + int_0^t sigma(X_{s-r}) dB^H_s + int_0^t b(X_s) ds,   X = eta on [-r, 0].

The grid step divides the delay, so X_{t_k - r} is always a grid value.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import coeffs
from .coeffs import CoefficientProfile, Expression
from .fbm import Grid, FbmBatch, check_hurst
from .report import fmt


class ModelError(ValueError):
    pass


def _is_multiple(value, step, tol=1e-9):
    q = value / step
    return abs(q - round(q)) <= tol * max(1.0, abs(q))


@dataclass(frozen=True)
class ModelSpec:
    hurst: float
    horizon: float
    delay: float
    eta: Expression  # function of u in [-r, 0]
    eta0: float
    sigma: CoefficientProfile
    b: CoefficientProfile
    steps_per_delay: int = 32
    declared_lambda: float | None = None
    declared_Lambda: float | None = None
    name: str = field(default="model", compare=False)

    def __post_init__(self):
        check_hurst(self.hurst)
        if self.delay <= 0:
            raise ModelError("delay r must be positive")
        if self.horizon <= 0:
            raise ModelError("horizon T must be positive")
        if self.steps_per_delay < 1:
            raise ModelError("steps_per_delay must be >= 1")
        if not _is_multiple(self.horizon, self.dt):
            raise ModelError(f"horizon {self.horizon} is not a multiple of the step {self.dt}")
        e0 = coeffs.evaluate(self.eta, 0.0)
        if abs(e0 - self.eta0) > 1e-12:
            raise ModelError(f"eta(0) = {e0!r} differs from eta0 = {self.eta0!r}")
        if self.declared_lambda is not None and self.declared_lambda > self.sigma.lower:
            raise ModelError(
                f"declared lambda {self.declared_lambda} exceeds the sigma scan minimum {self.sigma.lower}")
        if self.declared_Lambda is not None and self.declared_Lambda < self.sigma.upper:
            raise ModelError(
                f"declared Lambda {self.declared_Lambda} is below the sigma scan maximum {self.sigma.upper}")

    @property
    def dt(self):
        return self.delay / self.steps_per_delay

    @property
    def lam(self):
        return self.sigma.lower if self.declared_lambda is None else self.declared_lambda

    @property
    def Lam(self):
        return self.sigma.upper if self.declared_Lambda is None else self.declared_Lambda

    @property
    def M(self):
        """Scan estimate of sup |b'|."""
        return self.b.derivative_sup

    @property
    def b_sup(self):
        return self.b.sup_abs

    @property
    def elliptic(self):
        return self.lam > 0

    def require_elliptic(self):
        if not self.elliptic:
            raise ModelError(f"sigma is not elliptic on the scan range (lambda = {self.lam})")

    def index(self, t):
        """Grid index of time t >= 0 (0 <-> t = 0)."""
        if not _is_multiple(t, self.dt):
            raise ModelError(f"t = {t} is not a grid time (step {self.dt})")
        return int(round(t / self.dt))

    def time_grid(self, horizon=None):
        h = self.horizon if horizon is None else horizon
        return Grid.uniform(h, self.index(h))


def make_model(hurst, horizon, delay, sigma, b, eta="0", eta0=None, *,
               steps_per_delay=32, scan_range=(-10.0, 10.0), scan_points=100_001,
               declared_lambda=None, declared_Lambda=None, name="model"):
    """Build a ModelSpec from expression strings."""
    eta_e = coeffs.parse(eta, variable="u") if isinstance(eta, str) else eta
    if eta0 is None:
        eta0 = coeffs.evaluate(eta_e, 0.0)
    sig = coeffs.profile(coeffs.parse(sigma) if isinstance(sigma, str) else sigma,
                         scan_range, scan_points)
    drift = coeffs.profile(coeffs.parse(b) if isinstance(b, str) else b,
                           scan_range, scan_points)
    return ModelSpec(hurst=hurst, horizon=horizon, delay=delay, eta=eta_e,
                     eta0=float(eta0), sigma=sig, b=drift,
                     steps_per_delay=steps_per_delay,
                     declared_lambda=declared_lambda, declared_Lambda=declared_Lambda,
                     name=name)


@dataclass(frozen=True, eq=False)
class SolutionPath:
    model: ModelSpec
    times: np.ndarray
    values: np.ndarray
    driver: np.ndarray


@dataclass(frozen=True, eq=False)
class SolutionPaths:
    """A batch of solved trajectories on [-r, horizon].

    Column ``j`` of ``values`` is time ``(j - m) * dt`` with
    ``m = steps_per_delay``; the first ``m + 1`` columns are the history.
    """

    model: ModelSpec
    times: np.ndarray
    values: np.ndarray  # (n_paths, m + K + 1)
    driver: np.ndarray  # (n_paths, K + 1)

    @property
    def m(self):
        return self.model.steps_per_delay

    @property
    def n_paths(self):
        return self.values.shape[0]

    def col(self, t):
        """Column of X at time t (t may be negative, down to -r)."""
        return self.m + self.model.index(t) if t >= 0 else self.m - self.model.index(-t)

    def at(self, t):
        return self.values[:, self.col(t)]

    def path(self, i):
        return SolutionPath(self.model, self.times, self.values[i], self.driver[i])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path_id", "t", "X_t"])
            for i in range(self.n_paths):
                for t, x in zip(self.times, self.values[i]):
                    w.writerow([i, fmt(t), fmt(x)])


def solve(model: ModelSpec, driver, horizon=None) -> SolutionPaths:
    """Euler scheme X_{k+1} = X_k + sigma(X_{k-m}) dB_k + b(X_k) dt.

    ``driver`` is an FbmBatch or an array of fBm values on the uniform grid
    of step ``model.dt`` starting at 0.
    """
    if isinstance(driver, FbmBatch):
        times = driver.grid.times
        B = driver.paths
        if not driver.grid.is_uniform or (times.size > 1 and abs(times[1] - model.dt) > 1e-12 * model.dt):
            raise ModelError("driver grid is not the delay-commensurate grid of the model")
    else:
        B = np.asarray(driver, dtype=float)
    if B.ndim == 1:
        B = B[None, :]
    K = B.shape[1] - 1
    if horizon is not None:
        K = model.index(horizon)
        if K > B.shape[1] - 1:
            raise ModelError("driver does not cover the requested horizon")
        B = B[:, :K + 1]
    m = model.steps_per_delay
    dt = model.dt
    n = B.shape[0]
    hist_t = (np.arange(m + 1) - m) * dt
    X = np.empty((n, m + K + 1))
    hist = coeffs.evaluate(model.eta, hist_t)
    hist[-1] = model.eta0
    X[:, :m + 1] = hist
    dB = np.diff(B, axis=1)
    sig, drift = model.sigma.expr, model.b.expr
    for k in range(K):
        j = m + k
        X[:, j + 1] = X[:, j] + coeffs.evaluate(sig, X[:, k]) * dB[:, k] + coeffs.evaluate(drift, X[:, j]) * dt
    if not np.all(np.isfinite(X)):
        raise ModelError("non-finite state in the Euler scheme")
    times = (np.arange(m + K + 1) - m) * dt
    X.setflags(write=False)
    return SolutionPaths(model=model, times=times, values=X, driver=B)


@dataclass(frozen=True)
class Centering:
    mean: float
    abs_dev: float
    mean_se: float
    abs_dev_se: float
    n: int


def mean_and_centering(sol: SolutionPaths, t) -> Centering:
    """Monte Carlo m_t = E X_t and E|X_t - m_t| with standard errors."""
    x = sol.at(t)
    n = x.size
    if n < 2:
        raise ValueError("need at least two paths")
    mean = float(x.mean())
    dev = np.abs(x - mean)
    return Centering(mean=mean, abs_dev=float(dev.mean()),
                     mean_se=float(x.std(ddof=1) / np.sqrt(n)),
                     abs_dev_se=float(dev.std(ddof=1) / np.sqrt(n)), n=n)
