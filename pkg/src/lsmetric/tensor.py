"""Metric tensor of a chart for deterministic systems.

Four engines are provided.  All evaluate

    g_ij = (1/2 pi i) oint tr[dH/dtheta_i(z) dH^T/dtheta_j(1/z)] dz / z

on the unit circle, which for real coefficients equals
``sum_k tr[d_i h_k (d_j h_k)^T]`` over the Markov parameters:

* ``metric_stein``: exact, through Stein equations on realizations of dH.
* ``metric_series``: truncated sum over Markov-parameter derivatives.
* ``metric_quadrature``: rectangle rule on an ``N``-point unit-circle grid.
* ``metric_arma``: the matrix-fraction case integrands on the same grid.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from ._tail import TAIL_WINDOW, geometric_tail
from .errors import ConvergenceError, IndexRangeError, SingularError, UnstableError
from .mfd import left_mfd, mfd_derivative, poly_eval
from .sysrep import (
    STABILITY_MARGIN,
    ParamVector,
    StateSpaceModel,
    build_state_space,
    eval_transfer_grid,
    spectral_radius,
    tangent_basis,
)

ENGINES = ("stein", "series", "quadrature", "arma")
KRONECKER_MAX = 4096
DEFAULT_GRID = 1024
MAX_SERIES_TERMS = 10**6


@dataclass(frozen=True, eq=False)
class MetricTensor:
    G: np.ndarray
    engine: str
    truncation: int | None = None
    est_error: float = 0.0

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        G = 0.5 * (G + G.T)
        G.setflags(write=False)
        object.__setattr__(self, "G", G)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.G)[0]) if self.G.size else 0.0

    def is_psd(self) -> bool:
        tol = 1e-8 * max(1.0, float(np.trace(self.G)))
        return self.min_eigenvalue >= -tol

    def pushforward(self, J) -> "MetricTensor":
        """Tensor in the chart ``theta = J theta'``: ``J^T G J``."""
        J = np.asarray(J, dtype=float)
        return MetricTensor(J.T @ self.G @ J, self.engine, self.truncation, self.est_error)


@dataclass(frozen=True, eq=False)
class SensitivityRealization:
    """Strictly proper realization ``Csens (zI - Asens)^{-1} Bsens`` of a derivative of H."""

    Asens: np.ndarray
    Bsens: np.ndarray
    Csens: np.ndarray
    param: int | None = None

    def markov(self, k: int) -> np.ndarray:
        return self.Csens @ np.linalg.matrix_power(self.Asens, k - 1) @ self.Bsens

    def evaluate(self, z: complex) -> np.ndarray:
        n = self.Asens.shape[0]
        return self.Csens @ np.linalg.solve(z * np.eye(n) - self.Asens, self.Bsens.astype(complex))


def require_stable(model: StateSpaceModel) -> None:
    rho = spectral_radius(model)
    if rho > 1.0 - STABILITY_MARGIN:
        raise UnstableError(f"spectral radius {rho:.6g} is not below 1")


def _kron_stein(A1, A2, Q):
    p, q = Q.shape
    lhs = np.eye(p * q) - np.kron(A2, A1)
    try:
        x = np.linalg.solve(lhs, Q.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise SingularError(str(exc)) from exc
    return x.reshape((p, q), order="F")


def _doubling_stein(A1, A2, Q):
    X = Q.copy()
    P1, P2 = A1.copy(), A2.copy()
    for _ in range(200):
        update = P1 @ X @ P2.T
        X = X + update
        if np.abs(update).max() <= 1e-14 * max(np.abs(X).max(), np.finfo(float).tiny):
            return X
        P1, P2 = P1 @ P1, P2 @ P2
    raise ConvergenceError("Stein doubling iteration did not converge")


def stein_solve(A1, A2, Q, method: str = "auto", check: bool = True) -> np.ndarray:
    """Solve ``X = A1 X A2^T + Q``, i.e. ``X = sum_k A1^k Q (A2^T)^k``.

    ``method`` is ``"kronecker"``, ``"doubling"`` or ``"auto"`` (Kronecker
    vectorization while ``dim(A1) * dim(A2) <= 4096``).
    """
    A1 = np.atleast_2d(np.asarray(A1, dtype=float))
    A2 = np.atleast_2d(np.asarray(A2, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape != (A1.shape[0], A2.shape[0]):
        raise ValueError(f"Q has shape {Q.shape}, expected {(A1.shape[0], A2.shape[0])}")
    if check:
        r1 = np.max(np.abs(np.linalg.eigvals(A1))) if A1.size else 0.0
        r2 = np.max(np.abs(np.linalg.eigvals(A2))) if A2.size else 0.0
        if r1 * r2 >= 1.0 - STABILITY_MARGIN:
            raise UnstableError(f"rho(A1) rho(A2) = {r1 * r2:.6g} is not below 1")
    if method == "auto":
        method = "kronecker" if Q.size <= KRONECKER_MAX else "doubling"
    if method == "kronecker":
        return _kron_stein(A1, A2, Q)
    if method == "doubling":
        return _doubling_stein(A1, A2, Q)
    raise ValueError(f"unknown method {method!r}")


def stein_residual(A1, A2, Q, X) -> float:
    return float(np.abs(X - A1 @ X @ A2.T - Q).max())


def observability_gramian(model: StateSpaceModel) -> np.ndarray:
    require_stable(model)
    W = stein_solve(model.A.T, model.A.T, model.C.T @ model.C)
    return 0.5 * (W + W.T)


def _realization(model, dA, dB, param=None) -> SensitivityRealization:
    A, B, C = model.A, model.B, model.C
    n = model.n
    if not np.any(dA):
        return SensitivityRealization(A, np.array(dB, dtype=float), C, param)
    Asens = np.block([[A, dA], [np.zeros((n, n)), A]])
    Bsens = np.vstack([dB, B])
    Csens = np.hstack([C, np.zeros_like(C)])
    return SensitivityRealization(Asens, Bsens, Csens, param)


def sensitivity_realization(model: StateSpaceModel, k: int) -> SensitivityRealization:
    """State-space realization of ``dH/dtheta_k``: n states for group J, 2n for group I."""
    s = model.structure
    if not 0 <= k < s.num_params:
        raise IndexRangeError(f"parameter index {k} outside [0, {s.num_params})")
    dA, dB = tangent_basis(s)[k]
    return _realization(model, dA, dB, k)


def _symmetric_entries(entry, P, threads=1):
    """Fill a ``P x P`` symmetric matrix from ``entry(i, j)`` for ``i <= j``."""
    pairs = list(combinations_with_replacement(range(P), 2))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(lambda ij: entry(*ij), pairs))
    else:
        values = [entry(i, j) for i, j in pairs]
    G = np.zeros((P, P))
    for (i, j), v in zip(pairs, values):
        G[i, j] = G[j, i] = v
    return G


def metric_stein(model: StateSpaceModel, directions=None, threads: int = 1) -> MetricTensor:
    """Exact tensor: ``g_rs = tr[C_r X C_s^T]`` with ``X = A_r X A_s^T + B_r B_s^T``."""
    require_stable(model)
    if directions is None:
        directions = tangent_basis(model.structure)
    reals = [_realization(model, dA, dB, k) for k, (dA, dB) in enumerate(directions)]
    residuals = []

    def entry(r, s):
        Rr, Rs = reals[r], reals[s]
        Q = Rr.Bsens @ Rs.Bsens.T
        X = stein_solve(Rr.Asens, Rs.Asens, Q, check=False)
        residuals.append(stein_residual(Rr.Asens, Rs.Asens, Q, X) / (1.0 + np.abs(Q).max()))
        return float(np.trace(Rr.Csens @ X @ Rs.Csens.T))

    G = _symmetric_entries(entry, len(reals), threads)
    return MetricTensor(G, "stein", None, max(residuals, default=0.0))


def jj_block_closed_form(model: StateSpaceModel) -> np.ndarray:
    """Group-J block from the observability Gramian.

    For ``theta_J`` entries ``(r, c)`` and ``(r', c')`` of B the entry is
    ``delta_{c c'} W_o[r', r]``.
    """
    W = observability_gramian(model)
    m = model.m
    return np.kron(W.T, np.eye(m))


def _markov_derivative_iter(model, directions):
    dA = np.stack([d[0] for d in directions])
    dB = np.stack([d[1] for d in directions])
    A, B, C = model.A, model.B, model.C
    V = np.eye(model.n)  # A^{k-1}
    W = np.zeros_like(dA)  # sum_{r+s=k-2} A^r dA A^s
    k = 0
    while True:
        k += 1
        D = C @ (W @ B + V @ dB)
        W = A @ W + dA @ V
        V = A @ V
        yield k, D, not V.any() and not W.any()


def markov_derivatives(model: StateSpaceModel, N: int, directions=None) -> np.ndarray:
    """Derivatives of ``h_0 ... h_N`` along every direction; shape ``(P, N + 1, m, m)``.

    ``d h_k = C A^{k-1} dB + sum_{r+s=k-2} C A^r dA A^s B``; ``d h_0 = 0``.
    """
    if directions is None:
        directions = tangent_basis(model.structure)
    out = np.zeros((len(directions), N + 1, model.m, model.m))
    for k, D, _ in _markov_derivative_iter(model, directions):
        if k > N:
            break
        out[:, k] = D
    return out


def series_terms(model: StateSpaceModel, directions=None):
    """Yield ``(k, T_k, finished)`` with ``T_k[i, j] = tr[d_i h_k (d_j h_k)^T]``.

    ``finished`` is true once every later term is exactly zero (nilpotent A).
    """
    if directions is None:
        directions = tangent_basis(model.structure)
    P = len(directions)
    for k, D, finished in _markov_derivative_iter(model, directions):
        F = D.reshape(P, -1)
        yield k, F @ F.T, finished


def metric_series(model: StateSpaceModel, tol: float = 1e-10, directions=None) -> MetricTensor:
    require_stable(model)
    G = None
    norms = []
    for k, T, finished in series_terms(model, directions):
        G = T.copy() if G is None else G + T
        norms.append(np.abs(T).max())
        if finished:
            return MetricTensor(G, "series", k, 0.0)
        if k >= TAIL_WINDOW:
            tail = geometric_tail(norms[-TAIL_WINDOW:], k)
            if tail < tol:
                return MetricTensor(G, "series", k, tail)
        if k >= MAX_SERIES_TERMS:
            raise ConvergenceError("series did not reach the requested tolerance")


def unit_grid(N: int) -> np.ndarray:
    return np.exp(2j * np.pi * np.arange(N) / N)


def _check_grid(N):
    if N < 4 or N & (N - 1):
        raise IndexRangeError(f"grid size must be a power of two >= 4, got {N}")


def transfer_derivatives(model: StateSpaceModel, z, directions=None) -> tuple:
    """``H(z)`` and ``D_k(z) = dH/dtheta_k`` on a set of points.

    Returns ``H`` of shape ``(len(z), m, m)`` and ``D`` of shape
    ``(P, len(z), m, m)``; ``D_k = C Phi dA_k Phi B + C Phi dB_k`` with
    ``Phi = (zI - A)^{-1}``.
    """
    if directions is None:
        directions = tangent_basis(model.structure)
    H, Phi = eval_transfer_grid(model, z)
    CPhi = model.C @ Phi
    PhiB = Phi @ model.B
    D = np.stack([CPhi @ (dA @ PhiB + dB) for dA, dB in directions])
    return H, D


def _grid_gram(D, threads=1):
    P, N = D.shape[:2]
    flat = D.reshape(P, N, -1)

    def gram(sub):
        f = sub.reshape(P, -1)
        return _symmetric_entries(lambda i, j: float(np.vdot(f[j], f[i]).real), P, threads) / sub.shape[1]

    return gram(flat), gram(flat[:, ::2])


def metric_quadrature(model: StateSpaceModel, N: int = DEFAULT_GRID, directions=None, threads: int = 1) -> MetricTensor:
    """Rectangle rule ``(1/N) sum_s Re tr[D_i(w_s) D_j(w_s)^*]``, ``w_s = 2 pi s / N``."""
    _check_grid(N)
    require_stable(model)
    _, D = transfer_derivatives(model, unit_grid(N), directions)
    G, G_half = _grid_gram(D, threads)
    return MetricTensor(G, "quadrature", N, float(np.abs(G - G_half).max()))


def _arma_left_factors(theta: ParamVector, z: np.ndarray) -> np.ndarray:
    """Left factors of the matrix-fraction case integrands at the points ``z``.

    Group J: ``A^{-1}(z) M(z) dK``.
    Group I: ``A^{-1}(z) (dM(z) K + dA(z) [I - H(z)])``.
    """
    s = theta.structure
    m, n = s.m, s.n
    pair = left_mfd(theta)
    Az = poly_eval(pair.Apoly, z)
    if np.any(np.linalg.cond(Az) > 1e13):
        raise SingularError("A(z) is singular on the unit circle")
    Mz = poly_eval(pair.Mpoly, z)
    Bz = poly_eval(pair.Bpoly, z)
    Ainv = np.linalg.inv(Az)
    H = Ainv @ Bz
    IminusH = np.eye(m) - H
    AinvM = Ainv @ Mz
    K = pair.K
    factors = []
    for i in s.group_I():
        dA, dM = mfd_derivative(s, i)
        dAz = poly_eval(dA, z)
        dMz = poly_eval(dM, z)
        factors.append(Ainv @ (dMz @ K + dAz @ IminusH))
    for j in s.group_J():
        r, c = divmod(j - m * n, m)
        dK = np.zeros((n, m))
        dK[r, c] = 1.0
        factors.append(AinvM @ dK)
    return np.stack(factors)


def metric_arma(theta: ParamVector, N: int = DEFAULT_GRID, threads: int = 1) -> MetricTensor:
    """Case integrands ``tr[L_i(z) L_j(1/z)^T]`` averaged over the unit-circle grid.

    Blocks I x I, I x J and J x J are evaluated from their own integrands;
    the J x I block is the transpose of I x J.
    """
    _check_grid(N)
    require_stable(build_state_space(theta))
    s = theta.structure
    z = unit_grid(N)
    L = _arma_left_factors(theta, z)
    R = _arma_left_factors(theta, 1.0 / z)
    P = s.num_params
    mn = s.m * s.n

    def integrate(step):
        Ls = L[:, ::step].reshape(P, -1)
        Rs = R[:, ::step].reshape(P, -1)
        count = L[:, ::step].shape[1]
        G = np.zeros((P, P))
        for i in range(P):
            for j in range(P):
                if i >= mn and j < mn:
                    continue
                G[i, j] = (Ls[i] @ Rs[j]).real / count
        G[mn:, :mn] = G[:mn, mn:].T
        return G

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            G, G_half = pool.map(integrate, (1, 2))
    else:
        G, G_half = integrate(1), integrate(2)
    G = 0.5 * (G + G.T)
    G_half = 0.5 * (G_half + G_half.T)
    return MetricTensor(G, "arma", N, float(np.abs(G - G_half).max()))


def compute_metric(theta: ParamVector, engine: str = "stein", tol: float = 1e-10, N: int = DEFAULT_GRID, threads: int = 1) -> MetricTensor:
    """Dispatch to one of the four engines by name."""
    if engine == "arma":
        return metric_arma(theta, N, threads)
    model = build_state_space(theta)
    if engine == "stein":
        return metric_stein(model, threads=threads)
    if engine == "series":
        return metric_series(model, tol)
    if engine == "quadrature":
        return metric_quadrature(model, N, threads=threads)
    raise ValueError(f"unknown engine {engine!r}; choose from {ENGINES}")


@dataclass(frozen=True)
class CrossValidation:
    discrepancies: dict
    tol: float

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.discrepancies.values())


def cross_validate(theta: ParamVector, tol: float = 1e-8, threads: int = 1) -> CrossValidation:
    """Run all four engines and report the max entrywise discrepancy per pair."""
    model = build_state_space(theta)
    require_stable(model)
    results = {
        "stein": metric_stein(model, threads=threads).G,
        "series": metric_series(model, tol * 1e-2).G,
        "quadrature": metric_quadrature(model, 2048, threads=threads).G,
        "arma": metric_arma(theta, 2048, threads).G,
    }
    disc = {}
    for a, b in combinations_with_replacement(ENGINES, 2):
        if a != b:
            disc[f"{a}-{b}"] = float(np.abs(results[a] - results[b]).max())
    return CrossValidation(disc, tol)
