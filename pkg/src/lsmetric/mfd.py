"""Left matrix-fraction description ``H(z) = A(z)^{-1} B(z)`` of a chart.

With ``t_i`` the terminal row of block ``i`` and ``s_l`` the block starts::

    A(z)[i, l]       = d_il z^{n_i} - sum_{k<n_l} t_i[s_l + k] z^k
    M(z)[i, s_l + j] = d_il z^{n_i-1-j} - sum_{j<k<n_l} t_i[s_l + k] z^{k-1-j}
    K                = B
    B(z)             = A(z) + M(z) K

so that ``A(z) C (zI - A)^{-1} = M(z)`` and ``H(z) = I + A(z)^{-1} M(z) K``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import IndexRangeError, SingularError
from .sysrep import KroneckerStructure, ParamVector, StateSpaceModel, build_state_space, eval_transfer


@dataclass(frozen=True, eq=False)
class PolyMatrix:
    """Matrix polynomial; ``coeffs[d]`` multiplies ``z**d``."""

    coeffs: np.ndarray  # (degree + 1, rows, cols)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 3:
            raise ValueError("coeffs must have shape (degree + 1, rows, cols)")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def rows(self) -> int:
        return self.coeffs.shape[1]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[2]

    def __add__(self, other):
        d = max(self.degree, other.degree) + 1
        out = np.zeros((d, self.rows, self.cols))
        out[: self.degree + 1] += self.coeffs
        out[: other.degree + 1] += other.coeffs
        return PolyMatrix(out)

    def __sub__(self, other):
        return self + PolyMatrix(-other.coeffs)

    def __matmul__(self, K):
        """Right multiplication by a constant matrix."""
        return PolyMatrix(self.coeffs @ np.asarray(K, dtype=float))

    def row_degrees(self) -> list:
        degs = []
        for i in range(self.rows):
            nz = np.flatnonzero(np.any(self.coeffs[:, i, :] != 0, axis=1))
            degs.append(int(nz[-1]) if nz.size else -1)
        return degs


@dataclass(frozen=True, eq=False)
class MfdPair:
    Apoly: PolyMatrix
    Mpoly: PolyMatrix
    K: np.ndarray

    @property
    def Bpoly(self) -> PolyMatrix:
        return self.Apoly + self.Mpoly @ self.K


def poly_eval(P: PolyMatrix, z):
    """Horner evaluation. ``z`` may be a scalar or a 1-D array of points."""
    z = np.asarray(z)
    scalar = z.ndim == 0
    zz = z.reshape(-1).astype(complex)
    out = np.broadcast_to(P.coeffs[-1].astype(complex), (zz.size, P.rows, P.cols)).copy()
    for d in range(P.degree - 1, -1, -1):
        out = out * zz[:, None, None] + P.coeffs[d]
    return out[0] if scalar else out


def _mfd_coeffs(structure: KroneckerStructure, T: np.ndarray):
    m, n, p = structure.m, structure.n, structure.p
    nu, starts = structure.nu, structure.starts
    Ac = np.zeros((p + 1, m, m))
    Mc = np.zeros((max(p, 1), m, n))
    for i in range(m):
        Ac[nu[i], i, i] += 1.0
        for l in range(m):
            for k in range(nu[l]):
                Ac[k, i, l] -= T[i, starts[l] + k]
            if i == l:
                for j in range(nu[l]):
                    Mc[nu[i] - 1 - j, i, starts[l] + j] += 1.0
            for j in range(nu[l]):
                for k in range(j + 1, nu[l]):
                    Mc[k - 1 - j, i, starts[l] + j] -= T[i, starts[l] + k]
    return Ac, Mc


def left_mfd(theta: ParamVector) -> MfdPair:
    s = theta.structure
    T = theta.theta_I.reshape(s.m, s.n)
    Ac, Mc = _mfd_coeffs(s, T)
    K = theta.theta_J.reshape(s.n, s.m).copy()
    K.setflags(write=False)
    return MfdPair(PolyMatrix(Ac), PolyMatrix(Mc), K)


def mfd_derivative(structure: KroneckerStructure, i: int) -> tuple:
    """Constant derivatives ``(dA(z), dM(z))`` with respect to group-I parameter ``i``."""
    if not 0 <= i < structure.m * structure.n:
        raise IndexRangeError(f"{i} is not a group-I index")
    m, n = structure.m, structure.n
    zero = np.zeros((m, n))
    A0, M0 = _mfd_coeffs(structure, zero)
    E = np.zeros((m, n))
    E[divmod(i, n)] = 1.0
    A1, M1 = _mfd_coeffs(structure, E)
    return PolyMatrix(A1 - A0), PolyMatrix(M1 - M0)


def verify_mfd(model: StateSpaceModel, pair: MfdPair, num_samples: int = 8, seed: int = 0) -> float:
    """Max residual of the two MFD identities at points on ``|z| = 1.5``."""
    rng = np.random.default_rng(seed)
    n = model.n
    worst = 0.0
    for _ in range(num_samples):
        for _attempt in range(10):
            z = 1.5 * np.exp(2j * np.pi * rng.random())
            R = z * np.eye(n) - model.A
            Az = poly_eval(pair.Apoly, z)
            if np.linalg.cond(R) < 1e12 and np.linalg.cond(Az) < 1e12:
                break
        else:
            raise SingularError("could not find sample points away from the poles")
        Mz = poly_eval(pair.Mpoly, z)
        Bz = poly_eval(pair.Bpoly, z)
        r1 = np.abs(Az @ model.C @ np.linalg.inv(R) - Mz).max()
        r2 = np.abs(eval_transfer(model, z) - np.linalg.solve(Az, Bz)).max()
        worst = max(worst, r1, r2)
    return float(worst)


def mfd_for(theta: ParamVector) -> tuple:
    """Convenience: the state-space model and MFD of the same parameter vector."""
    return build_state_space(theta), left_mfd(theta)
