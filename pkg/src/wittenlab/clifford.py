"""Exact Clifford-algebra operators on the exterior algebra of R^n.

Basis of Lambda*(R^n): subsets of {1..n}, ordered by (degree, lexicographic
tuple).  The wedge sign of inserting index i into subset S is
(-1)^(number of occupied indices smaller than i); this fixes every matrix
bit-exactly.

Two anticommuting families act on this 2^n-dimensional space:

    c(v)    = wedge(v) - contract(v)      (skew-symmetric)
    chat(v) = wedge(v) + contract(v)      (symmetric)

with c(e)c(e') + c(e')c(e) = -2<e,e'>, chat(e)chat(e') + chat(e')chat(e) =
+2<e,e'>, and c(e)chat(e') + chat(e')c(e) = 0.

On top of these, the localization operator of a nondegenerate linear
vector field v(y) = y A,

    L = Tr[sqrt(A A^T)] + sum_i c(e_i) chat(e_i A),

has a one-dimensional kernel whose parity equals sign(det A), and the
involutions eta_j = c(U f_j) chat(f_j) from the polar data A = U W S W^T
diagonalize it:  L = sum_j s_j (1 + eta_j).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np
import scipy.linalg

MAX_DIM = 12  # 2^12 x 2^12 dense matrices; hard cap to bound memory


class DimensionError(ValueError):
    """Ambient dimension out of the supported range."""


class SingularMatrixError(ValueError):
    """The local linearization A is (numerically) singular."""


class AmbiguousKernelError(RuntimeError):
    """Eigenvalue gap too small to certify the kernel dimension."""


class FrameError(ValueError):
    """Vectors fail the required orthonormality preconditions."""


def _check_dim(n: int) -> int:
    n = int(n)
    if not 1 <= n <= MAX_DIM:
        raise DimensionError(f"ambient dimension must be 1..{MAX_DIM}, got {n}")
    return n


@lru_cache(maxsize=None)
def basis_subsets(n: int) -> tuple[tuple[int, ...], ...]:
    """All subsets of {1..n} ordered by (degree, lexicographic)."""
    _check_dim(n)
    out = []
    for k in range(n + 1):
        out.extend(combinations(range(1, n + 1), k))
    return tuple(out)


@lru_cache(maxsize=None)
def basis_positions(n: int) -> dict:
    return {s: i for i, s in enumerate(basis_subsets(n))}


@lru_cache(maxsize=None)
def basis_degrees(n: int) -> np.ndarray:
    return np.array([len(s) for s in basis_subsets(n)], dtype=np.int64)


@lru_cache(maxsize=None)
def _generator_tables(n: int):
    """Per generator i: wedge and contraction action tables.

    Each table maps source basis position -> (target position, sign), with
    target -1 when the action kills the basis element.
    """
    subsets = basis_subsets(n)
    pos = basis_positions(n)
    dim = len(subsets)
    w_tgt = -np.ones((n, dim), dtype=np.int64)
    w_sgn = np.zeros((n, dim), dtype=np.int64)
    c_tgt = -np.ones((n, dim), dtype=np.int64)
    c_sgn = np.zeros((n, dim), dtype=np.int64)
    for j, s in enumerate(subsets):
        for i in range(1, n + 1):
            smaller = sum(1 for x in s if x < i)
            sign = -1 if smaller % 2 else 1
            if i not in s:
                t = tuple(sorted(s + (i,)))
                w_tgt[i - 1, j] = pos[t]
                w_sgn[i - 1, j] = sign
            else:
                t = tuple(x for x in s if x != i)
                c_tgt[i - 1, j] = pos[t]
                c_sgn[i - 1, j] = sign
    return w_tgt, w_sgn, c_tgt, c_sgn


@dataclass(frozen=True)
class FiberOperator:
    """A 2^n x 2^n real matrix acting on the exterior algebra basis."""

    n: int
    mat: np.ndarray

    def __post_init__(self):
        _check_dim(self.n)
        m = np.asarray(self.mat, dtype=float)
        dim = 1 << self.n
        if m.shape != (dim, dim):
            raise ValueError(f"matrix must be {dim}x{dim} for n={self.n}")
        object.__setattr__(self, "mat", m)

    def to_csv(self, path) -> None:
        np.savetxt(path, self.mat, delimiter=",", fmt="%.17g")

    def symmetry_residual(self) -> float:
        return float(np.abs(self.mat - self.mat.T).max())

    def skewness_residual(self) -> float:
        return float(np.abs(self.mat + self.mat.T).max())


def _scatter(n: int, v: np.ndarray, tgt, sgn) -> np.ndarray:
    dim = 1 << n
    out = np.zeros((dim, dim))
    for i in range(n):
        if v[i] == 0.0:
            continue
        mask = tgt[i] >= 0
        src = np.nonzero(mask)[0]
        out[tgt[i, src], src] += v[i] * sgn[i, src]
    return out


def wedge_operator(v) -> FiberOperator:
    v = np.asarray(v, dtype=float)
    n = _check_dim(v.size)
    w_tgt, w_sgn, _, _ = _generator_tables(n)
    return FiberOperator(n, _scatter(n, v, w_tgt, w_sgn))


def contraction_operator(v) -> FiberOperator:
    v = np.asarray(v, dtype=float)
    n = _check_dim(v.size)
    _, _, c_tgt, c_sgn = _generator_tables(n)
    return FiberOperator(n, _scatter(n, v, c_tgt, c_sgn))


def clifford_c(v) -> FiberOperator:
    """c(v) = wedge(v) - contract(v); linear in v, skew-symmetric."""
    v = np.asarray(v, dtype=float)
    n = _check_dim(v.size)
    w_tgt, w_sgn, c_tgt, c_sgn = _generator_tables(n)
    return FiberOperator(n, _scatter(n, v, w_tgt, w_sgn) - _scatter(n, v, c_tgt, c_sgn))


def clifford_chat(v) -> FiberOperator:
    """chat(v) = wedge(v) + contract(v); linear in v, symmetric."""
    v = np.asarray(v, dtype=float)
    n = _check_dim(v.size)
    w_tgt, w_sgn, c_tgt, c_sgn = _generator_tables(n)
    return FiberOperator(n, _scatter(n, v, w_tgt, w_sgn) + _scatter(n, v, c_tgt, c_sgn))


def volume_chat(n: int) -> FiberOperator:
    """chat(e_1) chat(e_2) ... chat(e_n)."""
    n = _check_dim(n)
    eye = np.eye(n)
    out = np.eye(1 << n)
    for i in range(n):
        out = out @ clifford_chat(eye[i]).mat
    return FiberOperator(n, out)


@dataclass(frozen=True)
class LocalModelMatrix:
    """Polar data of a nondegenerate linearization: A = U W diag(s) W^T."""

    A: np.ndarray
    U: np.ndarray
    W: np.ndarray
    s: np.ndarray

    @classmethod
    def from_matrix(cls, A) -> "LocalModelMatrix":
        A = np.asarray(A, dtype=float)
        n = _check_dim(A.shape[0])
        if A.shape != (n, n):
            raise ValueError("A must be square")
        x, s, yt = np.linalg.svd(A)
        if s[-1] <= 1e-12 * max(s[0], 1.0):
            raise SingularMatrixError("linearization is numerically singular")
        y = yt.T
        # Force W = y into SO(n) by flipping one column of both SVD factors.
        if np.linalg.det(y) < 0:
            y = y.copy()
            x = x.copy()
            y[:, -1] *= -1
            x[:, -1] *= -1
        u = x @ y.T
        model = cls(A=A, U=u, W=y, s=s.copy())
        recon = u @ y @ np.diag(s) @ y.T
        if np.abs(recon - A).max() > 1e-10 * max(1.0, np.abs(A).max()):
            raise ArithmeticError("polar reconstruction failed")
        return model


def build_L(A) -> FiberOperator:
    """L = Tr[sqrt(A A^T)] + sum_i c(e_i) chat(e_i A), row convention e_i A."""
    model = LocalModelMatrix.from_matrix(A)
    A = model.A
    n = A.shape[0]
    dim = 1 << n
    eye = np.eye(n)
    acc = model.s.sum() * np.eye(dim)
    for i in range(n):
        acc += clifford_c(eye[i]).mat @ clifford_chat(A[i, :]).mat
    return FiberOperator(n, acc)


def eta_operators(A) -> list[FiberOperator]:
    """The commuting involutions eta_j = c(U f_j) chat(f_j), f_j = W e_j."""
    model = LocalModelMatrix.from_matrix(A)
    n = model.A.shape[0]
    out = []
    for j in range(n):
        f = model.W[:, j]
        out.append(FiberOperator(n, clifford_c(model.U @ f).mat @ clifford_chat(f).mat))
    return out


def build_L_via_eta(A) -> FiberOperator:
    """Reassemble L as sum_j s_j (1 + eta_j); equals build_L up to roundoff."""
    model = LocalModelMatrix.from_matrix(A)
    n = model.A.shape[0]
    dim = 1 << n
    acc = np.zeros((dim, dim))
    for j, eta in enumerate(eta_operators(A)):
        acc += model.s[j] * (np.eye(dim) + eta.mat)
    return FiberOperator(n, acc)


@dataclass(frozen=True)
class KernelInfo:
    dim: int
    parity: str  # "even" | "odd"
    vector: np.ndarray
    gap_ratio: float


def kernel_parity(A, gap_ratio_min: float = 10.0) -> KernelInfo:
    """Kernel dimension and parity of build_L(A), certified by an eigen gap."""
    op = build_L(A)
    sym = 0.5 * (op.mat + op.mat.T)
    asym = np.abs(op.mat - op.mat.T).max()
    scale = max(np.abs(op.mat).max(), 1.0)
    if asym > 1e-10 * scale:
        raise ArithmeticError("localization operator failed to be symmetric")
    w, v = scipy.linalg.eigh(sym)
    lam0, lam1 = abs(w[0]), w[1]
    thresh = max(1e-8 * max(w[-1], 1.0), 1e-14)
    if lam0 > thresh or lam1 < gap_ratio_min * thresh:
        raise AmbiguousKernelError(
            f"kernel not certified: |lam0|={lam0:.3e}, lam1={lam1:.3e}, thresh={thresh:.3e}"
        )
    vec = v[:, 0]
    degs = basis_degrees(op.n)
    even_mass = float(np.sum(vec[degs % 2 == 0] ** 2))
    odd_mass = float(np.sum(vec[degs % 2 == 1] ** 2))
    if max(even_mass, odd_mass) < 1.0 - 1e-8:
        raise AmbiguousKernelError("kernel vector has no definite parity")
    parity = "even" if even_mass > odd_mass else "odd"
    vec = vec / np.linalg.norm(vec)
    return KernelInfo(dim=1, parity=parity, vector=vec, gap_ratio=float(lam1 / thresh))


@dataclass(frozen=True)
class SignatureFiberReport:
    """Fiber-level facts behind the skew-adjoint deformation mechanism."""

    n: int
    generator_symmetry_residual: float
    composed_skewness_residual: float
    complex_structure_residual: float
    curvature_min_eigenvalue: float
    min_eig_at_t: float
    t_threshold: float
    positive_at_2t: bool


def signature_fiber_checks(n: int, V, X, gradX, t: float) -> SignatureFiberReport:
    """Checks on the 2^n-dimensional fiber for odd n = 4q+1.

    (a) the volume element chat(e_1)..chat(e_n) composed with a symmetric
        curvature-type generator sum_i c(e_i) chat(G_i) is skew-symmetric;
    (b) (chat(V) chat(X))^2 = -Id for orthonormal V perp X;
    (c) smallest eigenvalue of
            t * sum_i (c(e_i) chat(G_i) - <G_i, V> c(e_i) chat(V)) + t^2 Id
        and the minimal t making it positive definite.
    """
    n = _check_dim(n)
    if n % 4 != 1:
        raise DimensionError(f"odd dimension 4q+1 required, got {n}")
    V = np.asarray(V, dtype=float)
    X = np.asarray(X, dtype=float)
    if V.shape != (n,) or X.shape != (n,):
        raise FrameError("V and X must be n-vectors")
    if abs(np.linalg.norm(V) - 1) > 1e-10 or abs(np.linalg.norm(X) - 1) > 1e-10:
        raise FrameError("V and X must be unit vectors")
    if abs(float(V @ X)) > 1e-10:
        raise FrameError("V and X must be orthogonal")
    if t <= 0:
        raise ValueError("t must be positive")
    G = np.zeros((n, n)) if np.isscalar(gradX) and gradX == 0 else np.asarray(gradX, dtype=float)
    if G.shape != (n, n):
        raise ValueError("gradX must be an n x n matrix (or 0)")

    dim = 1 << n
    eye = np.eye(n)

    # (a) volume element x symmetric generator
    gen = np.zeros((dim, dim))
    for i in range(n):
        gi = G[:, i]
        if np.any(gi):
            gen += clifford_c(eye[i]).mat @ clifford_chat(gi).mat
    if not np.any(gen):
        gen = clifford_c(eye[0]).mat @ clifford_chat(eye[1]).mat
    gen_sym = float(np.abs(gen - gen.T).max())
    composed = volume_chat(n).mat @ gen
    composed_skew = float(np.abs(composed + composed.T).max())

    # (b) almost complex structure
    j_op = clifford_chat(V).mat @ clifford_chat(X).mat
    acs = float(np.abs(j_op @ j_op + np.eye(dim)).max())

    # (c) Bochner-type positivity
    curv = np.zeros((dim, dim))
    cv = clifford_chat(V).mat
    for i in range(n):
        gi = G[:, i]
        ci = clifford_c(eye[i]).mat
        curv += ci @ clifford_chat(gi).mat - float(gi @ V) * (ci @ cv)
    curv = 0.5 * (curv + curv.T)
    lam_min = float(scipy.linalg.eigvalsh(curv)[0])
    min_eig_at_t = t * lam_min + t * t
    t_threshold = max(0.0, -lam_min)
    t_check = 2.0 * t_threshold if t_threshold > 0 else t
    positive = t_check * lam_min + t_check * t_check > 0
    return SignatureFiberReport(
        n=n,
        generator_symmetry_residual=gen_sym,
        composed_skewness_residual=composed_skew,
        complex_structure_residual=acs,
        curvature_min_eigenvalue=lam_min,
        min_eig_at_t=min_eig_at_t,
        t_threshold=t_threshold,
        positive_at_2t=bool(positive),
    )
