"""Cochain-level exterior calculus on finite cell complexes.

A :class:`CellComplex` stores integer incidence matrices; everything
topological (Betti numbers, Euler characteristic) is computed exactly over
the integers.  On top of that, a family of SPD mass matrices defines inner
products, and the coboundary / codifferential / Hodge Laplacian operators
are assembled in floating point:

    d_k     = boundary_{k+1}^T
    delta_k = M_{k-1}^{-1} d_{k-1}^T M_k
    Delta_k = delta_{k+1} d_k + d_{k-1} delta_k

Boundary degrees drop the undefined term.  All operations are pure
functions of immutable inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .exactrank import integer_rank

SIMPLICIAL = "simplicial"
CUBICAL = "cubical"
CELL = "cell"  # generic CW products; no per-column facet-count rule applies

KERNEL_REL_THRESHOLD = 1e-8  # numerical kernel: eigenvalues below this * lambda_max


class InvalidComplexError(ValueError):
    """The incidence data does not describe a chain complex."""


class DegreeError(ValueError):
    """Requested degree outside 0..dim."""


class NotSPDError(ValueError):
    """A mass matrix is not symmetric positive definite."""


def _as_int_csc(mat) -> sp.csc_matrix:
    if sp.issparse(mat):
        out = mat.tocsc().astype(np.int64)
    else:
        out = sp.csc_matrix(np.asarray(mat, dtype=np.int64))
    out.eliminate_zeros()
    return out


@dataclass(frozen=True)
class CellComplex:
    """Graded cells with signed integer incidence matrices.

    ``incidence[k-1]`` is boundary_k, shape (cells[k-1], cells[k]), for
    k = 1..dim.  ``orientation`` is a sign per top cell.  ``kind`` says
    which facet-count convention the columns obey.
    """

    cells_per_dim: tuple[int, ...]
    incidence: tuple[sp.csc_matrix, ...]
    kind: str = SIMPLICIAL
    orientation: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "cells_per_dim", tuple(int(c) for c in self.cells_per_dim))
        object.__setattr__(self, "incidence", tuple(_as_int_csc(b) for b in self.incidence))
        if len(self.incidence) != len(self.cells_per_dim) - 1:
            raise InvalidComplexError("need one incidence matrix per dimension 1..n")
        for k, b in enumerate(self.incidence, start=1):
            expected = (self.cells_per_dim[k - 1], self.cells_per_dim[k])
            if b.shape != expected:
                raise InvalidComplexError(f"boundary_{k} has shape {b.shape}, expected {expected}")
        if self.orientation is not None:
            ori = np.asarray(self.orientation, dtype=np.int64)
            if ori.shape != (self.cells_per_dim[-1],):
                raise InvalidComplexError("orientation must give one sign per top cell")
            if not np.all(np.abs(ori) == 1):
                raise InvalidComplexError("orientation entries must be +-1")
            object.__setattr__(self, "orientation", ori)

    @property
    def dim(self) -> int:
        return len(self.cells_per_dim) - 1

    def n_cells(self, k: int) -> int:
        if not 0 <= k <= self.dim:
            raise DegreeError(f"degree {k} outside 0..{self.dim}")
        return self.cells_per_dim[k]

    def boundary(self, k: int) -> sp.csc_matrix:
        """Signed boundary matrix from k-cells to (k-1)-cells."""
        if not 1 <= k <= self.dim:
            raise DegreeError(f"boundary defined for 1..{self.dim}, got {k}")
        return self.incidence[k - 1]

    def validate(self) -> None:
        """Check boundary-of-boundary and the facet-count convention."""
        for k in range(1, self.dim):
            prod = self.boundary(k) @ self.boundary(k + 1)
            if prod.nnz and np.any(prod.data != 0):
                raise InvalidComplexError(f"boundary_{k} @ boundary_{k+1} != 0")
        if self.kind in (SIMPLICIAL, CUBICAL):
            for k in range(1, self.dim + 1):
                b = self.boundary(k)
                counts = np.diff(b.indptr)
                want = k + 1 if self.kind == SIMPLICIAL else 2 * k
                if b.shape[1] and not np.all(counts == want):
                    raise InvalidComplexError(
                        f"{self.kind} complex: boundary_{k} columns must have {want} nonzeros"
                    )

    def vertex_support(self, k: int) -> sp.csr_matrix:
        """Boolean vertices-by-k-cells matrix of vertex membership."""
        if k == 0:
            return sp.identity(self.n_cells(0), dtype=bool, format="csr")
        m = (abs(self.boundary(1)) > 0).astype(bool)
        for j in range(2, k + 1):
            m = (m @ (abs(self.boundary(j)) > 0)).astype(bool)
        return m.tocsr()


@dataclass(frozen=True)
class InnerProductFamily:
    """Per-degree SPD mass matrices; diagonal masses stored as 1-d arrays."""

    masses: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "masses", tuple(np.asarray(m, dtype=float) for m in self.masses)
        )
        for k, m in enumerate(self.masses):
            if m.ndim == 1:
                if np.any(m <= 0) or not np.all(np.isfinite(m)):
                    raise NotSPDError(f"diagonal mass at degree {k} must be positive")
            elif m.ndim == 2:
                if m.shape[0] != m.shape[1]:
                    raise NotSPDError(f"mass at degree {k} is not square")
                if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, abs(m).max())):
                    raise NotSPDError(f"mass at degree {k} is not symmetric")
                if np.linalg.eigvalsh(m).min() <= 0:
                    raise NotSPDError(f"mass at degree {k} is not positive definite")
            else:
                raise NotSPDError("mass must be a vector (diagonal) or a matrix")

    @classmethod
    def identity(cls, complex: CellComplex) -> "InnerProductFamily":
        return cls(tuple(np.ones(n) for n in complex.cells_per_dim))

    def is_diagonal(self, k: int) -> bool:
        return self.masses[k].ndim == 1

    def matrix(self, k: int) -> np.ndarray:
        m = self.masses[k]
        return np.diag(m) if m.ndim == 1 else m

    def apply(self, k: int, x: np.ndarray) -> np.ndarray:
        m = self.masses[k]
        return m * x if m.ndim == 1 else m @ x

    def solve(self, k: int, x: np.ndarray) -> np.ndarray:
        m = self.masses[k]
        return x / m if m.ndim == 1 else np.linalg.solve(m, x)

    def inner(self, k: int, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.dot(a, self.apply(k, b)))

    def norm(self, k: int, a: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(k, a, a), 0.0)))

    def sqrt_diag(self, k: int) -> np.ndarray:
        m = self.masses[k]
        if m.ndim != 1:
            raise NotSPDError("sqrt_diag needs a diagonal mass")
        return np.sqrt(m)


@dataclass(frozen=True)
class Cochain:
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))
        if self.coeffs.ndim != 1:
            raise ValueError("cochain coefficients must form a vector")


@dataclass(frozen=True)
class GradedOperator:
    """Per-degree matrices shifting cochain degree by ``shift``."""

    shift: int
    blocks: dict[int, object] = field(default_factory=dict)

    def block(self, k: int):
        return self.blocks[k]

    def apply(self, cochain: Cochain) -> Cochain:
        b = self.blocks[cochain.degree]
        return Cochain(cochain.degree + self.shift, b @ cochain.coeffs)


def coboundary(complex: CellComplex, k: int) -> GradedOperator:
    """The coboundary d_k, the transpose of boundary_{k+1}."""
    if not 0 <= k < complex.dim:
        raise DegreeError(f"coboundary defined for 0..{complex.dim - 1}, got {k}")
    return GradedOperator(shift=+1, blocks={k: complex.boundary(k + 1).T.tocsr()})


def codifferential(complex: CellComplex, inner: InnerProductFamily, k: int) -> GradedOperator:
    """The M-adjoint delta_k of d_{k-1}, mapping k-cochains down a degree."""
    if not 1 <= k <= complex.dim:
        raise DegreeError(f"codifferential defined for 1..{complex.dim}, got {k}")
    d_prev = complex.boundary(k).T  # d_{k-1}, shape (n_k, n_{k-1})
    mk = inner.masses[k]
    mprev = inner.masses[k - 1]
    if mk.ndim == 1 and mprev.ndim == 1:
        delta = sp.diags(1.0 / mprev) @ d_prev.T.astype(float) @ sp.diags(mk)
        return GradedOperator(shift=-1, blocks={k: delta.tocsr()})
    right = d_prev.T.toarray().astype(float) @ inner.matrix(k)
    delta = np.linalg.solve(inner.matrix(k - 1), right)
    return GradedOperator(shift=-1, blocks={k: delta})


def hodge_laplacian(complex: CellComplex, inner: InnerProductFamily, k: int) -> GradedOperator:
    """Delta_k = delta_{k+1} d_k + d_{k-1} delta_k (boundary degrees drop a term)."""
    if not 0 <= k <= complex.dim:
        raise DegreeError(f"degree {k} outside 0..{complex.dim}")
    n = complex.n_cells(k)
    acc = None
    if k < complex.dim:
        dk = coboundary(complex, k).block(k)
        delta_up = codifferential(complex, inner, k + 1).block(k + 1)
        acc = delta_up @ dk
    if k > 0:
        dprev = coboundary(complex, k - 1).block(k - 1)
        delta_k = codifferential(complex, inner, k).block(k)
        term = dprev @ delta_k
        acc = term if acc is None else acc + term
    if acc is None:
        acc = sp.csr_matrix((n, n))
    return GradedOperator(shift=0, blocks={k: acc})


def stiffness_matrix(complex: CellComplex, inner: InnerProductFamily, k: int):
    """M_k Delta_k, symmetric; the matrix of the Dirichlet form at degree k."""
    n = complex.n_cells(k)
    acc = None
    if k < complex.dim:
        dk = complex.boundary(k + 1).T.astype(float)
        if inner.is_diagonal(k + 1):
            acc = (dk.T @ sp.diags(inner.masses[k + 1]) @ dk).tocsr()
        else:
            dkd = dk.toarray()
            acc = dkd.T @ inner.matrix(k + 1) @ dkd
    if k > 0:
        dprev = complex.boundary(k).T.astype(float)  # (n_k, n_{k-1})
        if inner.is_diagonal(k - 1) and inner.is_diagonal(k):
            mk = sp.diags(inner.masses[k])
            term = (mk @ dprev @ sp.diags(1.0 / inner.masses[k - 1]) @ dprev.T @ mk).tocsr()
        else:
            dp = dprev.toarray()
            mk = inner.matrix(k)
            term = mk @ dp @ np.linalg.solve(inner.matrix(k - 1), dp.T @ mk)
        if acc is None:
            acc = term
        elif sp.issparse(acc) != sp.issparse(term):
            acc = _to_dense(acc) + _to_dense(term)
        else:
            acc = acc + term
    if acc is None:
        acc = sp.csr_matrix((n, n))
    return acc


def _to_dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m)


def laplacian_spectrum(complex: CellComplex, inner: InnerProductFamily, k: int):
    """All eigenvalues and M-orthonormal eigenvectors of Delta_k (dense solve)."""
    a = _to_dense(stiffness_matrix(complex, inner, k))
    if inner.is_diagonal(k):
        s = inner.sqrt_diag(k)
        sym = a / s[:, None] / s[None, :]
        w, v = scipy.linalg.eigh(sym)
        vecs = v / s[:, None]
    else:
        w, vecs = scipy.linalg.eigh(a, inner.matrix(k))
    return w, vecs


def kernel_dimension(eigenvalues: np.ndarray, rel_threshold: float = KERNEL_REL_THRESHOLD) -> int:
    """Count eigenvalues below rel_threshold * lambda_max (at least an absolute floor)."""
    w = np.asarray(eigenvalues)
    if w.size == 0:
        return 0
    cut = rel_threshold * max(float(w.max()), 1e-30)
    return int(np.sum(w < max(cut, 1e-300)))


def betti_numbers(complex: CellComplex) -> list[int]:
    """Betti numbers from exact integer ranks of the boundary matrices."""
    cached = getattr(complex, "_betti_cache", None)
    if cached is not None:
        return list(cached)
    ranks = [0] + [integer_rank(complex.boundary(k)) for k in range(1, complex.dim + 1)] + [0]
    betti = [
        complex.cells_per_dim[k] - ranks[k] - ranks[k + 1]
        for k in range(complex.dim + 1)
    ]
    object.__setattr__(complex, "_betti_cache", tuple(betti))
    return betti


def euler_characteristic(complex: CellComplex, check: bool = True) -> int:
    """Alternating cell count; optionally cross-checked against Betti numbers."""
    chi = sum((-1) ** k * n for k, n in enumerate(complex.cells_per_dim))
    if check:
        chi_b = sum((-1) ** k * b for k, b in enumerate(betti_numbers(complex)))
        if chi != chi_b:
            raise InvalidComplexError(
                f"Euler characteristic mismatch: cells give {chi}, Betti give {chi_b}"
            )
    return chi


def hodge_decompose(complex: CellComplex, inner: InnerProductFamily, omega: Cochain):
    """Split omega into (harmonic, exact, coexact), mutually M-orthogonal."""
    k = omega.degree
    if not 0 <= k <= complex.dim:
        raise DegreeError(f"degree {k} outside 0..{complex.dim}")
    if len(omega.coeffs) != complex.n_cells(k):
        raise ValueError("cochain length does not match cell count")
    if not inner.is_diagonal(k):
        raise NotImplementedError("hodge_decompose expects diagonal masses")
    s = inner.sqrt_diag(k)
    y = s * omega.coeffs

    n = complex.n_cells(k)
    exact = np.zeros(n)
    coexact = np.zeros(n)
    if k > 0:
        dprev = complex.boundary(k).T.toarray().astype(float)
        alpha, *_ = np.linalg.lstsq(s[:, None] * dprev, y, rcond=None)
        exact = dprev @ alpha
    if k < complex.dim:
        delta_up = _to_dense(codifferential(complex, inner, k + 1).block(k + 1))
        beta, *_ = np.linalg.lstsq(s[:, None] * delta_up, y, rcond=None)
        coexact = delta_up @ beta
    harmonic = omega.coeffs - exact - coexact
    return (
        Cochain(k, harmonic),
        Cochain(k, exact),
        Cochain(k, coexact),
    )


def product_complex(a: CellComplex, b: CellComplex) -> CellComplex:
    """Cellular product with boundary(s x t) = bd(s) x t + (-1)^dim(s) s x bd(t).

    Degree-m cells are blocks over j = degree of the first factor, ordered
    j ascending, row-major (ia * n_b + ib) inside each block.
    """
    na = a.cells_per_dim
    nb = b.cells_per_dim
    dim = a.dim + b.dim

    def block_sizes(m):
        return [
            (j, na[j] * nb[m - j])
            for j in range(max(0, m - b.dim), min(a.dim, m) + 1)
        ]

    cells = [sum(size for _, size in block_sizes(m)) for m in range(dim + 1)]

    incidence = []
    for m in range(1, dim + 1):
        col_blocks = block_sizes(m)
        row_blocks = block_sizes(m - 1)
        row_pos = {j: i for i, (j, _) in enumerate(row_blocks)}
        grid = [[None] * len(col_blocks) for _ in row_blocks]
        for ci, (j, _) in enumerate(col_blocks):
            kb = m - j
            if j >= 1 and (j - 1) in row_pos:
                block = sp.kron(a.boundary(j), sp.identity(nb[kb], dtype=np.int64, format="csc"))
                grid[row_pos[j - 1]][ci] = block
            if kb >= 1 and j in row_pos:
                sign = -1 if j % 2 else 1
                block = sign * sp.kron(sp.identity(na[j], dtype=np.int64, format="csc"), b.boundary(kb))
                grid[row_pos[j]][ci] = block
        incidence.append(sp.bmat(grid, format="csc", dtype=np.int64))

    def cubelike(c: CellComplex) -> bool:
        return c.kind == CUBICAL or c.dim <= 1

    if a.dim == 0:
        kind = b.kind
    elif b.dim == 0:
        kind = a.kind
    elif cubelike(a) and cubelike(b):
        kind = CUBICAL
    else:
        kind = CELL

    orientation = None
    if a.orientation is not None and b.orientation is not None:
        orientation = np.kron(a.orientation, b.orientation)

    return CellComplex(tuple(cells), tuple(incidence), kind=kind, orientation=orientation)


def circle_complex(n: int = 3) -> CellComplex:
    """Cyclic graph with n vertices and n edges (edge i runs i -> i+1)."""
    if n < 3:
        raise InvalidComplexError("circle needs at least 3 vertices")
    rows, cols, vals = [], [], []
    for i in range(n):
        rows += [i, (i + 1) % n]
        cols += [i, i]
        vals += [-1, 1]
    b1 = sp.csc_matrix((vals, (rows, cols)), shape=(n, n), dtype=np.int64)
    return CellComplex((n, n), (b1,), kind=SIMPLICIAL, orientation=np.ones(n, dtype=np.int64))


def torus_product(n_factors: int, circle_vertices: int = 3) -> CellComplex:
    """Product of circles; the cubical n-torus."""
    c = circle_complex(circle_vertices)
    out = c
    for _ in range(n_factors - 1):
        out = product_complex(out, c)
    return out


def point_complex() -> CellComplex:
    return CellComplex((1,), (), kind=SIMPLICIAL, orientation=np.ones(1, dtype=np.int64))


def to_json_dict(complex: CellComplex, inner: InnerProductFamily | None = None) -> dict:
    """Serialize a complex (and optional diagonal masses) to plain JSON types."""
    boundary = []
    for k in range(1, complex.dim + 1):
        coo = complex.boundary(k).tocoo()
        boundary.append([[int(r), int(c), int(v)] for r, c, v in zip(coo.row, coo.col, coo.data)])
    doc = {
        "dim": complex.dim,
        "cells": list(complex.cells_per_dim),
        "boundary": boundary,
        "masses": None,
    }
    if inner is not None:
        doc["masses"] = [
            [float(x) for x in inner.masses[k]] if inner.is_diagonal(k) else None
            for k in range(complex.dim + 1)
        ]
    return doc


def from_json_dict(doc: dict):
    """Inverse of :func:`to_json_dict`; returns (complex, inner_or_None)."""
    dim = int(doc["dim"])
    cells = [int(c) for c in doc["cells"]]
    incidence = []
    for k in range(1, dim + 1):
        trips = doc["boundary"][k - 1]
        if trips:
            r, c, v = zip(*trips)
        else:
            r, c, v = (), (), ()
        incidence.append(
            sp.csc_matrix((v, (r, c)), shape=(cells[k - 1], cells[k]), dtype=np.int64)
        )
    complex = CellComplex(tuple(cells), tuple(incidence), kind=CELL)
    inner = None
    if doc.get("masses") is not None:
        inner = InnerProductFamily(tuple(np.asarray(m, dtype=float) for m in doc["masses"]))
    return complex, inner


def save_complex(path, complex: CellComplex, inner: InnerProductFamily | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(to_json_dict(complex, inner), fh, sort_keys=True)


def load_complex(path):
    with open(path) as fh:
        return from_json_dict(json.load(fh))
