"""Grid models of the rescaled harmonic oscillator near a vector-field zero.

Near a nondegenerate zero with linearization A, the deformed Laplacian
splits into a spatial oscillator and an algebraic fiber term,

    K_t = -sum_i d^2/dy_i^2 - t Tr[sqrt(A A^T)] + t^2 <y A A^T, y>
    full model = K_t (x) Id  +  t Id (x) L(A),

where L comes from :mod:`wittenlab.clifford`.  K_t is discretized with
second-order central differences on a Dirichlet box; its kernel is the
Gaussian of sqrt(A A^T), and all nonzero eigenvalues grow linearly in t.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .clifford import LocalModelMatrix, build_L


class GridTooCoarseError(ValueError):
    """h^2 t^2 exceeds the stability budget; enlarge N."""


@dataclass(frozen=True)
class GridSpec:
    """Dirichlet box [-R, R]^m with N points per axis (N odd, >= 51)."""

    dim: int
    half_width: float
    points: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("grid dimension must be 1 or 2")
        if self.points < 51 or self.points % 2 == 0:
            raise ValueError("points per axis must be odd and >= 51")
        if self.half_width <= 0:
            raise ValueError("half width must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.points - 1)

    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.points)


def suggested_half_width(t: float, A) -> float:
    """Box size making the Gaussian tail of the ground state < 1e-8."""
    s = np.linalg.svd(np.atleast_2d(np.asarray(A, dtype=float)), compute_uv=False)
    return max(8.0 / np.sqrt(t * s.min()), 4.0)


@dataclass(frozen=True)
class ModelOperator:
    """Sparse symmetric discretization with (t, A, grid) metadata."""

    matrix: sp.csr_matrix
    t: float
    A: np.ndarray
    grid: GridSpec
    fiber_dim: int = 1

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def symmetry_residual(self) -> float:
        d = self.matrix - self.matrix.T
        return float(np.abs(d.data).max()) if d.nnz else 0.0

    def low_eigenpairs(self, k: int):
        """The k smallest eigenpairs, deterministically."""
        n = self.matrix.shape[0]
        if n <= 1200 or k > n // 4:
            w, v = scipy.linalg.eigh(self.matrix.toarray())
            return w[:k], v[:, :k]
        scale = float(np.abs(self.matrix.diagonal()).max())
        sigma = -1e-3 * max(scale, 1.0)
        v0 = np.random.default_rng(823542).standard_normal(n)
        w, v = spla.eigsh(self.matrix, k=k, sigma=sigma, which="LM", v0=v0)
        order = np.argsort(w)
        return w[order], v[:, order]

    def low_eigenvalues(self, k: int) -> np.ndarray:
        return self.low_eigenpairs(k)[0]


def _laplacian_1d(grid: GridSpec) -> sp.csr_matrix:
    n = grid.points
    h2 = grid.spacing**2
    main = np.full(n, 2.0 / h2)
    off = np.full(n - 1, -1.0 / h2)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _check_resolution(grid: GridSpec, t: float) -> None:
    if grid.spacing**2 * t**2 > 0.5:
        raise GridTooCoarseError(
            f"h^2 t^2 = {grid.spacing**2 * t**2:.3g} > 0.5; "
            f"increase points per axis beyond {grid.points}"
        )


def build_Kt(A, t: float, grid: GridSpec) -> ModelOperator:
    """Discretized K_t; Dirichlet central differences plus diagonal potential."""
    if t <= 0:
        raise ValueError("t must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or n != grid.dim:
        raise ValueError("A must be m x m with m equal to the grid dimension")
    _check_resolution(grid, t)
    model = LocalModelMatrix.from_matrix(A)
    trace_term = model.s.sum()
    aat = A @ A.T
    lap1 = _laplacian_1d(grid)
    ax = grid.axis()
    if n == 1:
        kin = lap1
        pot = t * t * aat[0, 0] * ax**2 - t * trace_term
    else:
        eye = sp.identity(grid.points, format="csr")
        kin = sp.kron(lap1, eye, format="csr") + sp.kron(eye, lap1, format="csr")
        y1, y2 = np.meshgrid(ax, ax, indexing="ij")
        pts = np.stack([y1.ravel(), y2.ravel()], axis=1)
        pot = t * t * np.einsum("pi,ij,pj->p", pts, aat, pts) - t * trace_term
    mat = (kin + sp.diags(pot)).tocsr()
    return ModelOperator(matrix=mat, t=float(t), A=A, grid=grid)


def build_model_laplacian(A, t: float, grid: GridSpec) -> ModelOperator:
    """K_t tensor Id plus t Id tensor L(A); the local model of the deformation."""
    kt = build_Kt(A, t, grid)
    L = build_L(A)
    fdim = L.mat.shape[0]
    eye_g = sp.identity(kt.matrix.shape[0], format="csr")
    mat = sp.kron(kt.matrix, sp.identity(fdim, format="csr"), format="csr")
    mat = (mat + t * sp.kron(eye_g, sp.csr_matrix(L.mat), format="csr")).tocsr()
    return ModelOperator(matrix=mat, t=float(t), A=kt.A, grid=grid, fiber_dim=fdim)


def gaussian_ground_state(A, t: float, grid: GridSpec) -> np.ndarray:
    """Sampled normalized ground state exp(-t <y sqrt(AA^T), y> / 2)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = scipy.linalg.sqrtm(A @ A.T).real
    ax = grid.axis()
    if grid.dim == 1:
        vals = np.exp(-0.5 * t * b[0, 0] * ax**2)
    else:
        y1, y2 = np.meshgrid(ax, ax, indexing="ij")
        pts = np.stack([y1.ravel(), y2.ravel()], axis=1)
        vals = np.exp(-0.5 * t * np.einsum("pi,ij,pj->p", pts, b, pts))
    return vals / np.linalg.norm(vals)


def spectral_gap(op: ModelOperator) -> float:
    w = op.low_eigenvalues(3)
    return float(w[1] - w[0])


def export_spectrum_csv(path, rows) -> None:
    """Write (t, index, eigenvalue) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "index", "eigenvalue"])
        for t, idx, val in rows:
            writer.writerow([f"{t:.17g}", idx, f"{val:.17g}"])


def gap_scaling_fit(A, t_values, points: int = 401):
    """Fit gap(K_t) ~ C t over a sweep; returns (C, per-t gaps)."""
    gaps = []
    for t in t_values:
        grid = GridSpec(dim=np.atleast_2d(A).shape[0], half_width=suggested_half_width(t, A), points=points)
        gaps.append(spectral_gap(build_Kt(A, t, grid)))
    gaps = np.asarray(gaps, dtype=float)
    ts = np.asarray(t_values, dtype=float)
    c = float(np.sum(gaps * ts) / np.sum(ts * ts))
    return c, gaps
