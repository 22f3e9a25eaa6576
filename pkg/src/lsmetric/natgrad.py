"""Prediction-error identification preconditioned by the metric tensor.

The predictor is the noiseless simulation ``x_{t+1} = A x_t + B u_t``,
``y_t = C x_t + u_t`` from ``x_0 = 0``, and the cost is
``(1 / 2T) sum_t |y_t - yhat_t|^2``.  Each iteration takes the damped
natural-gradient step ``-(G + lambda I)^{-1} grad`` with an Armijo
backtracking line search and Levenberg damping.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionError, SingularError, UnstableError
from .sysrep import (
    KroneckerStructure,
    ParamVector,
    StateSpaceModel,
    apply_linear_reparam,
    build_state_space,
    spectral_radius,
    tangent_basis,
)
from .tensor import DEFAULT_GRID, compute_metric

logger = logging.getLogger(__name__)

GUARD_MARGIN = 1e-6


@dataclass
class FitConfig:
    structure: KroneckerStructure
    theta0: ParamVector
    max_iters: int = 200
    grad_tol: float = 1e-10
    lambda0: float = 0.0
    engine: str = "stein"
    armijo_c: float = 1e-4
    max_halvings: int = 30
    lambda_factor: float = 10.0
    lambda_floor: float = 1e-12
    lambda_max: float = 1e12
    series_tol: float = 1e-10
    grid: int = DEFAULT_GRID
    chart: np.ndarray | None = None  # L in theta' = L theta

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")
        if self.lambda0 < 0:
            raise ValueError("lambda0 must be nonnegative")
        if self.theta0.structure != self.structure:
            raise DimensionError("theta0 does not belong to the configured structure")


@dataclass
class IterationRecord:
    iter: int
    theta: np.ndarray  # chart coordinates
    cost: float
    grad_inf: float
    lam: float
    step_norm: float
    rho: float


@dataclass
class FitTrace:
    records: list = field(default_factory=list)
    status: str = "max_iters"

    @property
    def theta(self) -> np.ndarray:
        return self.records[-1].theta

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])


def simulate(model: StateSpaceModel, u, x0=None) -> np.ndarray:
    """Output of the model for inputs ``u`` of shape ``(T, m)``."""
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    if u.shape[1] != model.m:
        raise DimensionError(f"input must have {model.m} channels")
    x = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float)
    y = np.empty_like(u)
    for t in range(u.shape[0]):
        y[t] = model.C @ x + u[t]
        x = model.A @ x + model.B @ u[t]
    return y


def pem_cost_grad(theta: ParamVector, u, y) -> tuple:
    """Prediction-error cost and its exact gradient by sensitivity recursions."""
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    u = u.reshape(len(u), -1)
    y = y.reshape(len(y), -1)
    if u.shape != y.shape:
        raise DimensionError(f"input shape {u.shape} and output shape {y.shape} differ")
    model = build_state_space(theta)
    if spectral_radius(model) >= 1.0:
        raise UnstableError("prediction-error cost requires a stable model")
    A, B, C = model.A, model.B, model.C
    T = u.shape[0]
    basis = tangent_basis(theta.structure)
    dA = np.stack([d[0] for d in basis])
    dB = np.stack([d[1] for d in basis])
    x = np.zeros(model.n)
    dx = np.zeros((len(basis), model.n))
    cost = 0.0
    grad = np.zeros(len(basis))
    for t in range(T):
        e = y[t] - (C @ x + u[t])
        cost += e @ e
        grad -= (dx @ C.T) @ e
        dx = dx @ A.T + dA @ x + dB @ u[t]
        x = A @ x + B @ u[t]
    return cost / (2 * T), grad / T


def natural_step(grad, G, lam: float = 0.0) -> np.ndarray:
    """``-(G + lam I)^{-1} grad`` through a Cholesky factorization."""
    G = G.G if hasattr(G, "G") else np.asarray(G, dtype=float)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    M = G + lam * np.eye(G.shape[0])
    try:
        c, low = scipy.linalg.cho_factor(M)
    except np.linalg.LinAlgError as exc:
        raise SingularError("G + lambda I is not positive definite") from exc
    pivots = np.diag(c) ** 2
    if pivots.min() <= 1e-15 * max(np.abs(np.diag(M)).max(), np.finfo(float).tiny):
        raise SingularError("G + lambda I is numerically singular")
    return -scipy.linalg.cho_solve((c, low), np.asarray(grad, dtype=float))


class _Objective:
    """Cost, gradient and metric in the (possibly reparametrized) chart."""

    def __init__(self, config: FitConfig, u, y):
        self.config = config
        self.u, self.y = u, y
        self.L = None if config.chart is None else np.asarray(config.chart, dtype=float)

    def base(self, coords) -> tuple:
        if self.L is None:
            return ParamVector(self.config.structure, coords), None
        return apply_linear_reparam(self.L, coords, self.config.structure)

    def to_chart(self, theta: ParamVector) -> np.ndarray:
        return theta.values.copy() if self.L is None else self.L @ theta.values

    def rho(self, coords) -> float:
        return spectral_radius(build_state_space(self.base(coords)[0]))

    def cost(self, coords) -> float:
        return pem_cost_grad(self.base(coords)[0], self.u, self.y)[0]

    def cost_grad_metric(self, coords) -> tuple:
        theta, J = self.base(coords)
        cost, grad = pem_cost_grad(theta, self.u, self.y)
        cfg = self.config
        G = compute_metric(theta, cfg.engine, tol=cfg.series_tol, N=cfg.grid).G
        if J is not None:
            grad = J.T @ grad
            G = J.T @ G @ J
        return cost, grad, G


def fit(config: FitConfig, u, y) -> FitTrace:
    """Damped natural-gradient prediction-error fit.

    Raises ``UnstableError`` only for an unstable ``theta0``; every other
    failure ends the run with a terminal status in the returned trace.
    """
    obj = _Objective(config, u, y)
    coords = obj.to_chart(config.theta0)
    rho = obj.rho(coords)
    if rho > 1.0 - GUARD_MARGIN:
        raise UnstableError(f"initial spectral radius {rho:.6g} is not below 1")
    lam = config.lambda0
    trace = FitTrace()
    cost, grad, G = obj.cost_grad_metric(coords)
    trace.records.append(IterationRecord(0, coords.copy(), cost, float(np.abs(grad).max()), lam, 0.0, rho))
    for it in range(1, config.max_iters + 1):
        if np.abs(grad).max() <= config.grad_tol:
            trace.status = "converged"
            return trace
        accepted = None
        try:
            delta = natural_step(grad, G, lam)
        except SingularError:
            delta = None
        if delta is not None:
            slope = float(grad @ delta)
            alpha = 1.0
            for _ in range(config.max_halvings + 1):
                trial = coords + alpha * delta
                trial_rho = obj.rho(trial)
                if trial_rho <= 1.0 - GUARD_MARGIN:
                    trial_cost = obj.cost(trial)
                    if trial_cost <= cost + config.armijo_c * alpha * slope and trial_cost < cost:
                        accepted = (trial, trial_cost, trial_rho, alpha * delta)
                        break
                alpha *= 0.5
        if accepted is None:
            lam = max(lam * config.lambda_factor, config.lambda_floor)
            logger.debug("iteration %d rejected, lambda -> %g", it, lam)
            if lam > config.lambda_max:
                trace.status = "stalled"
                return trace
            continue
        coords, _, rho, step = accepted
        lam = lam / config.lambda_factor
        if lam < config.lambda_floor:
            lam = 0.0
        cost, grad, G = obj.cost_grad_metric(coords)
        trace.records.append(
            IterationRecord(it, coords.copy(), cost, float(np.abs(grad).max()), lam, float(np.linalg.norm(step)), rho)
        )
    trace.status = "converged" if np.abs(grad).max() <= config.grad_tol else "max_iters"
    return trace
