"""Metric tensors of the innovation-form stochastic model.

The model is ``x_{t+1} = A x_t + B e_t``, ``y_t = C x_t + e_t`` with white
``e_t`` of covariance ``R``.  Its output autocovariances are

    Gamma_0 = C P C^T + R,   Gamma_k = C A^{k-1} (A P C^T + B R),  k >= 1,

with ``P = A P A^T + B R B^T``; ``Gamma_{-k} = Gamma_k^T`` and
``T(z) = sum_k Gamma_k z^{-k} = H(z) R H^T(1/z)`` is the spectral density.
"""

from dataclasses import dataclass

import numpy as np

from ._tail import TAIL_WINDOW, geometric_tail
from .errors import BadNoiseError, ConvergenceError, IndexRangeError
from .sysrep import StateSpaceModel, eval_transfer, tangent_basis
from .tensor import (
    MAX_SERIES_TERMS,
    MetricTensor,
    _check_grid,
    _grid_gram,
    require_stable,
    stein_solve,
    transfer_derivatives,
    unit_grid,
)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    R: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.array(self.R, dtype=float))
        if R.shape[0] != R.shape[1]:
            raise BadNoiseError(f"R must be square, got shape {R.shape}")
        if np.abs(R - R.T).max() > 1e-12:
            raise BadNoiseError("R is not symmetric")
        if np.linalg.eigvalsh(0.5 * (R + R.T))[0] <= 0:
            raise BadNoiseError("R is not positive definite")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True, eq=False)
class CovarianceSequence:
    Gamma: np.ndarray  # (K + 1, m, m)
    P: np.ndarray
    Ncross: np.ndarray
    truncation: int
    tail_bound: float


def _check_noise(model, noise):
    if noise.R.shape != (model.m, model.m):
        raise BadNoiseError(f"R must be {model.m}x{model.m}")


def _state_covariance(model, noise):
    A, B, C, R = model.A, model.B, model.C, noise.R
    P = stein_solve(A, A, B @ R @ B.T)
    P = 0.5 * (P + P.T)
    return P, A @ P @ C.T + B @ R


def stationary_covariances(model: StateSpaceModel, noise: NoiseModel, K: int) -> CovarianceSequence:
    require_stable(model)
    _check_noise(model, noise)
    if K < 0:
        raise ValueError("K must be nonnegative")
    A, C = model.A, model.C
    P, N = _state_covariance(model, noise)
    Gamma = np.empty((K + 1, model.m, model.m))
    G0 = C @ P @ C.T + noise.R
    Gamma[0] = 0.5 * (G0 + G0.T)
    V = N
    Ak = np.eye(model.n)
    norms = []
    for k in range(1, K + 1):
        Gamma[k] = C @ V
        norms.append(np.linalg.norm(Gamma[k], 2))
        V = A @ V
        Ak = A @ Ak
    if K == 0 or not Ak.any() or not V.any():
        tail = 0.0 if (not Ak.any() or not V.any()) else np.inf
    else:
        tail = geometric_tail(norms[-TAIL_WINDOW:], K)
    return CovarianceSequence(Gamma, P, N, K, tail)


def _derivative_state(model, noise, directions):
    """Derivatives of ``P`` and ``Ncross`` along every direction."""
    A, B, C, R = model.A, model.B, model.C, noise.R
    P, N = _state_covariance(model, noise)
    dP, dN = [], []
    for dA, dB in directions:
        S = dA @ P @ A.T + A @ P @ dA.T + dB @ R @ B.T + B @ R @ dB.T
        dPk = stein_solve(A, A, S)
        dPk = 0.5 * (dPk + dPk.T)
        dP.append(dPk)
        dN.append(dA @ P @ C.T + A @ dPk @ C.T + dB @ R)
    return P, N, np.stack(dP), np.stack(dN)


def _covariance_derivative_terms(model, noise, directions):
    """Yield ``(k, dGamma_k, finished)``; ``dGamma_k`` has shape ``(P, m, m)``."""
    A, C = model.A, model.C
    dA = np.stack([d[0] for d in directions])
    _, N, dP, dN = _derivative_state(model, noise, directions)
    yield 0, C @ dP @ C.T, False
    V, dV = N, dN  # A^{k-1} N and its derivative
    Ak = np.eye(model.n)
    k = 0
    while True:
        k += 1
        out = C @ dV
        dV = dA @ V + A @ dV
        V = A @ V
        Ak = A @ Ak
        yield k, out, not Ak.any() and not V.any() and not dV.any()


def covariance_derivatives(model, noise, k: int, K: int) -> np.ndarray:
    """``dGamma_0 ... dGamma_K`` with respect to parameter ``k``; shape ``(K + 1, m, m)``."""
    require_stable(model)
    _check_noise(model, noise)
    if not 0 <= k < model.structure.num_params:
        raise IndexRangeError(f"parameter index {k} outside [0, {model.structure.num_params})")
    direction = [tangent_basis(model.structure)[k]]
    out = []
    for idx, dG, _ in _covariance_derivative_terms(model, noise, direction):
        out.append(dG[0])
        if idx >= K:
            break
    return np.stack(out)


def _accumulate(terms, tol, weight_positive, engine):
    G = None
    norms = []
    for k, dG, finished in terms:
        F = dG.reshape(dG.shape[0], -1)
        T = F @ F.T
        if k > 0 and weight_positive:
            # tr[dG_i dG_j^T] + tr[dG_i^T dG_j]
            T = T + np.einsum("iab,jab->ij", dG.transpose(0, 2, 1), dG.transpose(0, 2, 1))
        G = T.copy() if G is None else G + T
        if k == 0:
            continue
        norms.append(np.abs(T).max())
        if finished:
            return MetricTensor(G, engine, k, 0.0)
        if k >= TAIL_WINDOW:
            tail = geometric_tail(norms[-TAIL_WINDOW:], k)
            if tail < tol:
                return MetricTensor(G, engine, k, tail)
        if k >= MAX_SERIES_TERMS:
            raise ConvergenceError("covariance series did not reach the requested tolerance")


def metric_U(model: StateSpaceModel, noise: NoiseModel, tol: float = 1e-10, directions=None) -> MetricTensor:
    """Tensor of ``U(z) = sum_{k>=0} Gamma_k z^{-k}``: ``sum_k tr[dGamma_k_i dGamma_k_j^T]``."""
    require_stable(model)
    _check_noise(model, noise)
    if directions is None:
        directions = tangent_basis(model.structure)
    return _accumulate(_covariance_derivative_terms(model, noise, directions), tol, False, "U")


def metric_T(model: StateSpaceModel, noise: NoiseModel, tol: float = 1e-10, directions=None) -> MetricTensor:
    """Tensor of the spectral density, summed over ``k`` in both directions."""
    require_stable(model)
    _check_noise(model, noise)
    if directions is None:
        directions = tangent_basis(model.structure)
    return _accumulate(_covariance_derivative_terms(model, noise, directions), tol, True, "T")


def metric_T_quadrature(model: StateSpaceModel, noise: NoiseModel, N: int = 2048, directions=None) -> MetricTensor:
    """Grid form ``(1/N) sum_s Re tr[dT_i dT_j^*]`` with ``dT_i = D_i R H^* + H R D_i^*``."""
    _check_grid(N)
    require_stable(model)
    _check_noise(model, noise)
    H, D = transfer_derivatives(model, unit_grid(N), directions)
    R = noise.R
    HR = H @ R
    DRH = D @ R @ np.conj(np.swapaxes(H, -1, -2))
    dT = DRH + HR @ np.conj(np.swapaxes(D, -1, -2))
    G, G_half = _grid_gram(dT)
    return MetricTensor(G, "T-quadrature", N, float(np.abs(G - G_half).max()))


def spectral_density(model: StateSpaceModel, noise: NoiseModel, z: complex) -> np.ndarray:
    require_stable(model)
    _check_noise(model, noise)
    H = eval_transfer(model, z)
    return H @ noise.R @ H.conj().T


def spectral_density_series(cov: CovarianceSequence, z: complex) -> np.ndarray:
    """``sum_{|k| <= K} Gamma_k z^{-k}`` from a covariance sequence."""
    T = cov.Gamma[0].astype(complex)
    for k in range(1, cov.truncation + 1):
        T = T + cov.Gamma[k] * z ** (-k) + cov.Gamma[k].T * z**k
    return T
