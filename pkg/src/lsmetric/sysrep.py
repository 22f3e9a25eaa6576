"""Overlapping state-space parametrization of stable MIMO systems.

A chart is fixed by the Kronecker structure ``nu = (n_1, ..., n_m)``.  Within
it a system has ``2 m n`` free parameters: the first ``m n`` (group I) fill
the terminal row of each block of ``A``, the remaining ``m n`` (group J) fill
``B`` row-major.  ``C`` selects the first state of every block and the
feedthrough is the identity, so ``H(z) = I + C (zI - A)^{-1} B``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._tail import TAIL_WINDOW, geometric_tail
from .errors import ConvergenceError, DimensionError, IndexRangeError, SingularError

STABILITY_MARGIN = 1e-9


@dataclass(frozen=True)
class KroneckerStructure:
    """Multi-index ``nu`` of Kronecker indices; ``m = len(nu)``."""

    nu: tuple

    def __init__(self, nu):
        nu = tuple(int(v) for v in np.atleast_1d(nu))
        if len(nu) == 0 or any(v < 1 for v in nu):
            raise DimensionError(f"Kronecker indices must be positive, got {nu}")
        object.__setattr__(self, "nu", nu)

    @property
    def m(self) -> int:
        return len(self.nu)

    @property
    def n(self) -> int:
        return sum(self.nu)

    @property
    def p(self) -> int:
        return max(self.nu)

    @property
    def num_params(self) -> int:
        return 2 * self.m * self.n

    @property
    def starts(self) -> tuple:
        """Zero-based first state of every block."""
        return tuple(int(s) for s in np.cumsum((0,) + self.nu[:-1]))

    @property
    def terminal_rows(self) -> tuple:
        return tuple(s + v - 1 for s, v in zip(self.starts, self.nu))

    def is_group_I(self, k: int) -> bool:
        return k < self.m * self.n

    def group_I(self) -> range:
        return range(self.m * self.n)

    def group_J(self) -> range:
        return range(self.m * self.n, 2 * self.m * self.n)


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Parameter vector of a chart: ``theta_I`` followed by ``theta_J``."""

    structure: KroneckerStructure
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.structure.num_params:
            raise DimensionError(
                f"expected {self.structure.num_params} parameters for nu={self.structure.nu}, "
                f"got {values.size}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_groups(cls, structure, theta_I, theta_J):
        theta_I = np.asarray(theta_I, dtype=float).reshape(-1)
        theta_J = np.asarray(theta_J, dtype=float).reshape(-1)
        mn = structure.m * structure.n
        if theta_I.size != mn or theta_J.size != mn:
            raise DimensionError(f"theta_I and theta_J must each have {mn} entries")
        return cls(structure, np.concatenate([theta_I, theta_J]))

    @property
    def theta_I(self) -> np.ndarray:
        return self.values[: self.structure.m * self.structure.n]

    @property
    def theta_J(self) -> np.ndarray:
        return self.values[self.structure.m * self.structure.n :]


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    structure: KroneckerStructure

    @property
    def m(self) -> int:
        return self.structure.m

    @property
    def n(self) -> int:
        return self.structure.n

    @cached_property
    def rho(self) -> float:
        return spectral_radius(self)

    @property
    def is_stable(self) -> bool:
        return self.rho <= 1.0 - STABILITY_MARGIN


@dataclass(frozen=True, eq=False)
class MarkovSequence:
    coefficients: np.ndarray  # (N + 1, m, m); coefficients[0] = I
    truncation: int
    tail_bound: float


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def build_state_space(theta: ParamVector) -> StateSpaceModel:
    s = theta.structure
    m, n = s.m, s.n
    if theta.values.size != 2 * m * n:
        raise DimensionError("parameter vector length does not match the structure")
    A = np.zeros((n, n))
    C = np.zeros((m, n))
    for i, (start, size) in enumerate(zip(s.starts, s.nu)):
        C[i, start] = 1.0
        for r in range(start, start + size - 1):
            A[r, r + 1] = 1.0
    A[list(s.terminal_rows), :] = theta.theta_I.reshape(m, n)
    B = theta.theta_J.reshape(n, m)
    return StateSpaceModel(_frozen(A), _frozen(B), _frozen(C), s)


def structural_derivative(structure: KroneckerStructure, k: int) -> np.ndarray:
    """Constant matrix ``dA/dtheta_k`` (group I) or ``dB/dtheta_k`` (group J)."""
    m, n = structure.m, structure.n
    if not 0 <= k < 2 * m * n:
        raise IndexRangeError(f"parameter index {k} outside [0, {2 * m * n})")
    if structure.is_group_I(k):
        block, col = divmod(k, n)
        D = np.zeros((n, n))
        D[structure.terminal_rows[block], col] = 1.0
    else:
        row, col = divmod(k - m * n, m)
        D = np.zeros((n, m))
        D[row, col] = 1.0
    return D


def tangent_basis(structure: KroneckerStructure, J=None) -> list:
    """Directions ``(dA, dB)`` for every coordinate of the chart.

    With ``J`` given (shape ``2mn x 2mn``), the directions are those of the
    linear chart ``theta = J theta'``: direction ``k`` is
    ``sum_l J[l, k] * basis[l]``.
    """
    m, n = structure.m, structure.n
    basis = []
    for k in range(structure.num_params):
        D = structural_derivative(structure, k)
        if structure.is_group_I(k):
            basis.append((D, np.zeros((n, m))))
        else:
            basis.append((np.zeros((n, n)), D))
    if J is None:
        return basis
    J = np.asarray(J, dtype=float)
    dA = np.stack([b[0] for b in basis])
    dB = np.stack([b[1] for b in basis])
    return [
        (np.tensordot(J[:, k], dA, axes=1), np.tensordot(J[:, k], dB, axes=1))
        for k in range(J.shape[1])
    ]


def eval_transfer(model: StateSpaceModel, z: complex) -> np.ndarray:
    n = model.n
    M = z * np.eye(n) - model.A
    if np.linalg.cond(M) > 1e13:
        raise SingularError(f"zI - A is numerically singular at z={z}")
    return np.eye(model.m) + model.C @ np.linalg.solve(M, model.B.astype(complex))


def eval_transfer_grid(model: StateSpaceModel, z: np.ndarray) -> tuple:
    """``H`` and the resolvent ``(zI - A)^{-1}`` at every point of ``z``.

    Returns arrays of shape ``(len(z), m, m)`` and ``(len(z), n, n)``.
    """
    z = np.asarray(z, dtype=complex).reshape(-1)
    n = model.n
    M = z[:, None, None] * np.eye(n) - model.A
    conds = np.linalg.cond(M)
    if np.any(conds > 1e13):
        raise SingularError("zI - A is numerically singular on the grid")
    Phi = np.linalg.inv(M)
    H = np.eye(model.m) + model.C @ Phi @ model.B
    return H, Phi


def markov_parameters(model: StateSpaceModel, N: int) -> MarkovSequence:
    if N < 1:
        raise DimensionError("N must be at least 1")
    m = model.m
    h = np.empty((N + 1, m, m))
    h[0] = np.eye(m)
    X = model.B.copy()  # A^{k-1} B
    Ak = np.eye(model.n)
    norms = []
    for k in range(1, N + 1):
        h[k] = model.C @ X
        norms.append(np.linalg.norm(h[k], 2))
        X = model.A @ X
        Ak = model.A @ Ak
    if model.rho >= 1.0:
        tail = np.inf
    elif not Ak.any():
        tail = 0.0
    elif len(norms) >= 2:
        tail = geometric_tail(norms[-TAIL_WINDOW:], N)
    else:
        rho = model.rho
        tail = norms[-1] * rho / (1.0 - rho) if rho > 0 else 0.0
    return MarkovSequence(h, N, tail)


def spectral_radius(model: StateSpaceModel) -> float:
    try:
        eig = np.linalg.eigvals(model.A)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(str(exc)) from exc
    return float(np.max(np.abs(eig))) if eig.size else 0.0


def observability_matrix(model: StateSpaceModel) -> np.ndarray:
    rows, X = [], model.C
    for _ in range(model.n):
        rows.append(X)
        X = X @ model.A
    return np.vstack(rows)


def controllability_matrix(model: StateSpaceModel) -> np.ndarray:
    cols, X = [], model.B
    for _ in range(model.n):
        cols.append(X)
        X = model.A @ X
    return np.hstack(cols)


def sample_stable(structure: KroneckerStructure, seed: int, rho_max: float) -> ParamVector:
    """Draw a parameter vector whose model has spectral radius at most ``rho_max``.

    All ``2mn`` values are i.i.d. standard normal from ``numpy.random.PCG64``
    seeded with ``seed``; the group-I values are then shrunk by a factor 0.9
    until the spectral radius condition holds.
    """
    if not 0.0 < rho_max < 1.0:
        raise DimensionError("rho_max must lie in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(seed))
    values = rng.standard_normal(structure.num_params)
    mn = structure.m * structure.n
    theta_J = values[mn:]
    theta_I = values[:mn]
    for _ in range(100):
        theta = ParamVector.from_groups(structure, theta_I, theta_J)
        if spectral_radius(build_state_space(theta)) <= rho_max:
            return theta
        theta_I = 0.9 * theta_I
    raise ConvergenceError("rescaling did not reach the requested spectral radius")


def apply_linear_reparam(L, theta_prime, structure: KroneckerStructure):
    """Map chart coordinates ``theta' = L theta`` back to the base chart.

    Returns ``(theta, J)`` with ``J = L^{-1}``, so gradients map as
    ``J^T grad`` and tensors as ``J^T G J``.
    """
    L = np.asarray(L, dtype=float)
    P = structure.num_params
    if L.shape != (P, P):
        raise DimensionError(f"L must be {P}x{P}")
    if not np.all(np.isfinite(L)) or np.linalg.cond(L) > 1e12:
        raise SingularError("reparametrization matrix is numerically singular")
    J = np.linalg.inv(L)
    theta = ParamVector(structure, J @ np.asarray(theta_prime, dtype=float))
    return theta, J
