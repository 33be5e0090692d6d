"""Witten deformation of cochain complexes and its spectral consequences.

Conjugating the coboundary by the diagonal weights exp(t f) gives

    d_t = T^{-1} d T,       T = diag(exp(t f(cell)))

with f on a k-cell the mean of f over its vertices.  d_t d_t = 0 for every
t, the deformed Laplacian Delta_t = delta_t d_t + d_t delta_t keeps kernel
dimensions equal to the Betti numbers, and as t grows its low eigenvectors
localize near the critical points of f.  This module assembles d_t and
Delta_t, sweeps spectra, builds localized reference states, extracts the
low-spectrum (instanton) subcomplex, and renders Morse-inequality verdicts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import exterior_core as ec

WEIGHT_EXPONENT_LIMIT = 300.0
DD_RESIDUAL_TOL = 1e-12


class WeightOverflowError(ValueError):
    """|t * f| exceeds the safe exponent range even after recentering."""


class SpectralGapError(RuntimeError):
    """No clean spectral gap at the requested cutoff."""


class EigsolveError(RuntimeError):
    """The sparse eigensolver failed to converge."""


@dataclass(frozen=True)
class DeformationWeights:
    """Per-degree positive diagonal weights exp(t * f(cell))."""

    t: float
    cell_values: tuple[np.ndarray, ...]  # f averaged over each cell's vertices
    recentered_by: float

    def weights(self, k: int) -> np.ndarray:
        return np.exp(self.t * self.cell_values[k])


def cell_mean_values(complex: ec.CellComplex, f_vertex: np.ndarray) -> tuple[np.ndarray, ...]:
    """f on a k-cell = arithmetic mean of f over the cell's vertices."""
    f_vertex = np.asarray(f_vertex, dtype=float)
    if f_vertex.shape != (complex.n_cells(0),):
        raise ValueError("need one value per vertex")
    out = [f_vertex]
    for k in range(1, complex.dim + 1):
        support = complex.vertex_support(k).astype(float)
        counts = np.asarray(support.sum(axis=0)).ravel()
        sums = support.T @ f_vertex
        out.append(sums / counts)
    return tuple(out)


@dataclass(frozen=True)
class DeformedComplex:
    complex: ec.CellComplex
    inner: ec.InnerProductFamily
    weights: DeformationWeights
    d_t: tuple[object, ...]      # deformed coboundaries, degrees 0..n-1

    @property
    def t(self) -> float:
        return self.weights.t

    def delta_t(self, k: int):
        """M-adjoint of d_{k-1}; maps degree k to k-1."""
        d = self.d_t[k - 1]
        mk = self.inner.masses[k]
        mp = self.inner.masses[k - 1]
        return sp.diags(1.0 / mp) @ d.T @ sp.diags(mk)

    def laplacian(self, k: int):
        n = self.complex.n_cells(k)
        acc = None
        if k < self.complex.dim:
            acc = self.delta_t(k + 1) @ self.d_t[k]
        if k > 0:
            term = self.d_t[k - 1] @ self.delta_t(k)
            acc = term if acc is None else acc + term
        return acc if acc is not None else sp.csr_matrix((n, n))

    def symmetric_form(self, k: int):
        """M^(1/2) Delta_t M^(-1/2): symmetric, same spectrum as Delta_t."""
        n = self.complex.n_cells(k)
        s = np.sqrt(self.inner.masses[k])
        acc = None
        if k < self.complex.dim:
            d = self.d_t[k]
            b = sp.diags(np.sqrt(self.inner.masses[k + 1])) @ d @ sp.diags(1.0 / s)
            acc = (b.T @ b).tocsr()
        if k > 0:
            d = self.d_t[k - 1]
            b = sp.diags(s) @ d @ sp.diags(1.0 / np.sqrt(self.inner.masses[k - 1]))
            term = (b @ b.T).tocsr()
            acc = term if acc is None else acc + term
        return acc if acc is not None else sp.csr_matrix((n, n))

    def dd_residual(self) -> float:
        """max over degrees of |d_t d_t| relative to |d_t|^2."""
        worst = 0.0
        for k in range(self.complex.dim - 1):
            num = spla.norm(self.d_t[k + 1] @ self.d_t[k])
            den = spla.norm(self.d_t[k + 1]) * spla.norm(self.d_t[k])
            if den > 0:
                worst = max(worst, num / den)
        return worst


def deform(
    complex: ec.CellComplex,
    inner: ec.InnerProductFamily,
    f_vertex: np.ndarray,
    t: float,
) -> DeformedComplex:
    """Assemble d_t = T^{-1} d T with T = diag(exp(t f)); f recentered to mean 0."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    f_vertex = np.asarray(f_vertex, dtype=float)
    offset = float(f_vertex.mean())
    f_centered = f_vertex - offset
    if t * np.abs(f_centered).max() > WEIGHT_EXPONENT_LIMIT:
        raise WeightOverflowError(
            f"|t f| reaches {t * np.abs(f_centered).max():.1f} > {WEIGHT_EXPONENT_LIMIT}"
        )
    values = cell_mean_values(complex, f_centered)
    weights = DeformationWeights(t=float(t), cell_values=values, recentered_by=offset)
    d_t = []
    for k in range(complex.dim):
        d = complex.boundary(k + 1).T.astype(float)
        wk = np.exp(t * values[k])
        wk1 = np.exp(t * values[k + 1])
        d_t.append((sp.diags(1.0 / wk1) @ d @ sp.diags(wk)).tocsr())
    return DeformedComplex(complex=complex, inner=inner, weights=weights, d_t=tuple(d_t))


# ---------------------------------------------------------------------------
# spectra


def low_eigenpairs(dc: DeformedComplex, k: int, count: int):
    """Smallest ``count`` eigenpairs of Delta_t at degree k, M-orthonormal."""
    s = dc.symmetric_form(k)
    n = s.shape[0]
    count = min(count, n)
    if n <= 900 or count > n // 3:
        w, v = scipy.linalg.eigh(s.toarray())
        w, v = w[:count], v[:, :count]
    else:
        scale = float(np.abs(s.diagonal()).max())
        v0 = np.random.default_rng(823542).standard_normal(n)
        try:
            w, v = spla.eigsh(s, k=count, sigma=-1e-6 * max(scale, 1.0), which="LM", v0=v0)
        except Exception as exc:  # pragma: no cover - solver fallback
            try:
                w, v = spla.eigsh(s, k=count, which="SA", v0=v0, maxiter=8000)
            except Exception:
                raise EigsolveError(f"eigensolver failed at degree {k}: {exc}") from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    sq = np.sqrt(dc.inner.masses[k])
    vecs = v / sq[:, None]  # back to cochain coordinates; M-orthonormal
    return w, vecs


def spectrum_head(dc: DeformedComplex, k: int, count: int = 16) -> np.ndarray:
    return low_eigenpairs(dc, k, count)[0]


@dataclass(frozen=True)
class SpectrumEntry:
    degree: int
    t: float
    eigenvalues: np.ndarray
    cutoff: float
    count_below: int
    localization_mass: float | None = None


def low_spectrum(
    dc: DeformedComplex,
    degree: int,
    cutoff: float,
    count: int = 16,
    mesh=None,
    critical_points=None,
    radius_hops: int = 4,
) -> SpectrumEntry:
    """Eigenvalues at one degree with the count below ``cutoff``.

    When a mesh and critical points are supplied, also reports the fraction
    of low-eigenvector mass within ``radius_hops`` of critical vertices.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    w, v = low_eigenpairs(dc, degree, count)
    while w.size < dc.complex.n_cells(degree) and w[-1] <= cutoff:
        count = min(2 * count, dc.complex.n_cells(degree))
        w, v = low_eigenpairs(dc, degree, count)
        if count == dc.complex.n_cells(degree):
            break
    n_below = int(np.sum(w < cutoff))
    loc = None
    if mesh is not None and critical_points is not None and n_below > 0:
        loc = localization_mass(dc, mesh, critical_points, v[:, :n_below], degree, radius_hops)
    return SpectrumEntry(
        degree=degree,
        t=dc.t,
        eigenvalues=w,
        cutoff=float(cutoff),
        count_below=n_below,
        localization_mass=loc,
    )


def localization_mass(dc, mesh, critical_points, vectors, degree, radius_hops=4) -> float:
    """Fraction of M-mass of the given cochains carried near critical vertices."""
    near = np.zeros(mesh.complex.n_cells(0), dtype=bool)
    for p in critical_points:
        near[mesh.graph_ball(mesh.nearest_vertex(p.position), radius_hops)] = True
    if degree == 0:
        cell_near = near
    else:
        cells = mesh.edges if degree == 1 else mesh.faces
        cell_near = np.all(near[cells], axis=1)
    m = dc.inner.masses[degree]
    total = 0.0
    captured = 0.0
    for j in range(vectors.shape[1]):
        dens = m * vectors[:, j] ** 2
        total += dens.sum()
        captured += dens[cell_near].sum()
    return float(captured / total) if total > 0 else 0.0


def cluster_cutoff(dc: DeformedComplex, probe: int = 12) -> float:
    """Common cutoff below the first spectral cluster gap of the sweep.

    Exact kernel eigenvalues sit below a relative floor and always belong to
    the low cluster; the remaining eigenvalues of all degrees are pooled, so
    any gap of the pooled list is automatically shared by every degree.
    Among pooled gaps with a 10x relative jump, the one with the largest
    upper endpoint separates the localized states (which can be
    exponentially small) from the mesh-scale spectrum.
    """
    pooled = []
    floor = 0.0
    for k in range(dc.complex.dim + 1):
        w = spectrum_head(dc, k, min(probe, dc.complex.n_cells(k)))
        fk = 1e-10 * max(w[-1], 1e-30)
        floor = max(floor, fk)
        pooled.extend(float(x) for x in w if x > fk)
    if not pooled:
        raise SpectralGapError("no eigenvalues above the kernel floor")
    pooled = sorted(pooled)
    candidates = []
    if pooled[0] > 10.0 * floor:
        candidates.append((0.0, pooled[0]))
    for a, b in zip(pooled, pooled[1:]):
        if b > 10.0 * a:
            candidates.append((a, b))
    if not candidates:
        raise SpectralGapError("no 10x spectral gap shared by all degrees")
    lo, hi = max(candidates, key=lambda g: g[1])
    # Place c so that [c/2, 2c] stays inside the gap: geometric midpoint,
    # clipped; an arithmetic midpoint would always leave 2c above the gap.
    if lo <= 1e-9 * hi:
        return hi / 4.0
    if hi < 4.0 * lo:
        raise SpectralGapError(f"common gap [{lo:.3e}, {hi:.3e}] narrower than ratio 4")
    return float(np.clip(np.sqrt(lo * hi), 2.0 * lo, hi / 2.0))


def export_spectra_csv(path, scenario: str, entries) -> None:
    """CSV columns: scenario,degree,t,eigen_index,eigenvalue."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "degree", "t", "eigen_index", "eigenvalue"])
        for e in entries:
            for i, val in enumerate(e.eigenvalues):
                writer.writerow([scenario, e.degree, f"{e.t:.17g}", i, f"{val:.17g}"])


# ---------------------------------------------------------------------------
# localized reference states


@dataclass(frozen=True)
class LocalizedState:
    critical_point: object
    degree: int
    cochain: np.ndarray
    center_vertex: int
    radius_hops: int


def localized_state(dc: DeformedComplex, mesh, p, radius_hops: int = 4) -> LocalizedState:
    """Discrete cutoff-Gaussian reference state at a critical point.

    Profile exp(-t/2 sum_i |lam_i| y_i^2) in Hessian eigencoordinates y (the
    local ground-state Gaussian of the model operator); the form part is
    degree-graded: constants at degree 0, the projection onto the unstable
    direction at degree 1, the volume cochain at top degree.  Normalized to
    unit M-norm.
    """
    t = dc.t
    k = p.index
    chart = mesh.surface.charts[p.chart_idx]
    jac = chart.jacobian(p.params)
    axes = jac @ (p.frame @ p.eigenvectors)  # embedded Hessian eigendirections
    axes = axes / np.linalg.norm(axes, axis=0, keepdims=True)
    lam_abs = np.abs(p.eigenvalues)
    v0 = mesh.nearest_vertex(p.position)
    ball = mesh.graph_ball(v0, radius_hops)
    in_ball = np.zeros(mesh.complex.n_cells(0), dtype=bool)
    in_ball[ball] = True

    def gauss(points):
        disp = mesh.displacement(np.broadcast_to(p.position, points.shape), points)
        y = disp @ axes
        return np.exp(-0.5 * t * (y * y) @ lam_abs)

    if k == 0:
        coeffs = np.zeros(mesh.complex.n_cells(0))
        coeffs[ball] = gauss(mesh.positions[ball])
    elif k == 1:
        w = p.negative_directions[:, 0]
        chart = mesh.surface.charts[p.chart_idx]
        w3 = chart.jacobian(p.params) @ w
        w3 = w3 / np.linalg.norm(w3)
        mask = np.all(in_ball[mesh.edges], axis=1)
        coeffs = np.zeros(mesh.complex.n_cells(1))
        vecs = mesh.edge_vectors()[mask]
        mids = mesh.edge_midpoints()[mask]
        coeffs[mask] = (vecs @ w3) * gauss(mids)
    elif k == 2:
        mask = np.all(in_ball[mesh.faces], axis=1)
        coeffs = np.zeros(mesh.complex.n_cells(2))
        centers = mesh.face_centroids()[mask]
        ori = mesh.complex.orientation[mask].astype(float)
        coeffs[mask] = ori * mesh.areas[mask] * gauss(centers)
    else:
        raise ValueError("localized states support surface degrees 0..2 only")

    nrm = dc.inner.norm(k, coeffs)
    if nrm == 0:
        raise ValueError("empty localized state; increase the radius")
    return LocalizedState(
        critical_point=p,
        degree=k,
        cochain=coeffs / nrm,
        center_vertex=v0,
        radius_hops=radius_hops,
    )


def build_localized_states(dc, mesh, critical_points, radius_hops: int = 4):
    """States for all critical points, shrinking radii until supports disjoint."""
    r = radius_hops
    warnings = []
    while r >= 2:
        states = [localized_state(dc, mesh, p, r) for p in critical_points]
        balls = [set(mesh.graph_ball(s.center_vertex, r).tolist()) for s in states]
        overlap = any(
            balls[i] & balls[j] for i in range(len(balls)) for j in range(i + 1, len(balls))
        )
        if not overlap:
            if warnings:
                return states, warnings
            return states, []
        warnings.append(f"supports overlap at radius {r}; reducing")
        r -= 1
    raise ValueError("critical points too close: no disjoint support radius >= 2")


# ---------------------------------------------------------------------------
# projection decay and the instanton complex


@dataclass(frozen=True)
class DecayTable:
    t_values: list
    residuals: dict          # state label -> list of residuals over t
    fitted_order: dict       # state label -> decay exponent from a log-log fit
    floor_index: dict        # state label -> index where the decay flattens
    warnings: list


def projection_decay(make_dc, mesh, critical_points, cutoff_policy, t_values, radius_hops=4):
    """Residuals ||P_c u_p - u_p|| over a t sweep.

    ``make_dc`` maps t to a DeformedComplex; ``cutoff_policy`` maps a
    DeformedComplex to the cutoff c.  Residuals should decrease with t until
    the discretization floor; non-monotonicity is recorded as a warning.
    """
    labels = [f"p{i}(index={p.index})" for i, p in enumerate(critical_points)]
    residuals = {lab: [] for lab in labels}
    for t in t_values:
        dc = make_dc(t)
        c = cutoff_policy(dc)
        states, _ = build_localized_states(dc, mesh, critical_points, radius_hops)
        for lab, state in zip(labels, states):
            k = state.degree
            w, v = low_eigenpairs(dc, k, 16)
            below = v[:, w < c]
            m = dc.inner.masses[k]
            proj = below @ (below.T @ (m * state.cochain))
            diff = proj - state.cochain
            residuals[lab].append(float(np.sqrt(np.dot(diff, m * diff))))
    warnings = []
    fitted = {}
    floor_index = {}
    ts = np.asarray(t_values, dtype=float)
    for lab in labels:
        r = np.asarray(residuals[lab])
        drops = r[:-1] - r[1:]
        flat = np.nonzero(drops <= 0.05 * r[:-1])[0]
        fi = int(flat[0] + 1) if flat.size else len(r)
        floor_index[lab] = fi
        head = slice(0, max(fi, 2))
        if np.any(r[head] <= 0):
            fitted[lab] = float("nan")
        else:
            coeff = np.polyfit(np.log(ts[head]), np.log(r[head]), 1)
            fitted[lab] = float(-coeff[0])
        if np.any(np.diff(r[: fi]) >= 0):
            warnings.append(
                f"{lab}: residuals not strictly decreasing before the floor (mesh resolution)"
            )
    return DecayTable(
        t_values=list(t_values),
        residuals=residuals,
        fitted_order=fitted,
        floor_index=floor_index,
        warnings=warnings,
    )


@dataclass(frozen=True)
class InstantonComplex:
    t: float
    cutoff: float
    bases: tuple[np.ndarray, ...]       # M-orthonormal columns per degree
    induced_d: tuple[np.ndarray, ...]   # matrices in those bases
    dims: tuple[int, ...]
    betti: tuple[int, ...]
    leakage: float


def instanton_complex(dc: DeformedComplex, cutoff: float, probe: int = 16) -> InstantonComplex:
    """Span of low eigenvectors per degree, closed under d_t.

    Requires a spectral gap: no eigenvalue in [cutoff/2, 2*cutoff] at any
    degree.  The induced d_t must map each span into the next with leakage
    below 1e-8, and the small complex reproduces the Betti numbers.
    """
    n_deg = dc.complex.dim + 1
    bases = []
    for k in range(n_deg):
        count = min(probe, dc.complex.n_cells(k))
        w, v = low_eigenpairs(dc, k, count)
        while w[-1] <= 2 * cutoff and count < dc.complex.n_cells(k):
            count = min(2 * count, dc.complex.n_cells(k))
            w, v = low_eigenpairs(dc, k, count)
        in_gap = np.sum((w >= cutoff / 2) & (w <= 2 * cutoff))
        if in_gap:
            raise SpectralGapError(
                f"{in_gap} eigenvalue(s) inside [c/2, 2c] at degree {k}; move c or t"
            )
        bases.append(v[:, w < cutoff])

    leakage = 0.0
    induced = []
    for k in range(n_deg - 1):
        img = dc.d_t[k] @ bases[k]
        mk1 = dc.inner.masses[k + 1]
        coords = bases[k + 1].T @ (mk1[:, None] * img)
        resid = img - bases[k + 1] @ coords
        leak = np.sqrt(np.sum(mk1[:, None] * resid * resid))
        scale = max(np.sqrt(np.sum(mk1[:, None] * img * img)), 1e-30)
        if np.sqrt(np.sum(mk1[:, None] * img * img)) > 1e-12:
            leakage = max(leakage, float(leak / scale))
        induced.append(coords)

    dims = tuple(b.shape[1] for b in bases)
    ranks = [0] + [int(np.linalg.matrix_rank(m, tol=1e-8)) if m.size else 0 for m in induced] + [0]
    betti = tuple(dims[k] - ranks[k] - ranks[k + 1] for k in range(n_deg))
    if leakage > 1e-8:
        raise SpectralGapError(f"induced d_t leaks outside the low span: {leakage:.2e}")
    return InstantonComplex(
        t=dc.t,
        cutoff=float(cutoff),
        bases=tuple(bases),
        induced_d=tuple(np.asarray(m) for m in induced),
        dims=dims,
        betti=betti,
        leakage=float(leakage),
    )


# ---------------------------------------------------------------------------
# Morse inequality verdicts


@dataclass(frozen=True)
class MorseVerdicts:
    weak: bool
    strong: bool
    top_equality: bool
    details: dict

    @property
    def all_hold(self) -> bool:
        return self.weak and self.strong and self.top_equality


def morse_report(m_counts, betti) -> MorseVerdicts:
    """Weak and strong Morse inequalities plus the top alternating equality."""
    m = list(int(x) for x in m_counts)
    b = list(int(x) for x in betti)
    if len(m) != len(b):
        raise ValueError("morse counts and betti numbers must have equal length")
    n = len(m) - 1
    weak = all(b[i] <= m[i] for i in range(n + 1))
    # partial alternating sums below the top degree; the top case is the
    # separate equality check
    strong = True
    partials = []
    for i in range(n):
        lhs = sum((-1) ** j * b[i - j] for j in range(i + 1))
        rhs = sum((-1) ** j * m[i - j] for j in range(i + 1))
        partials.append((lhs, rhs))
        if lhs > rhs:
            strong = False
    top_lhs = sum((-1) ** j * b[n - j] for j in range(n + 1))
    top_rhs = sum((-1) ** j * m[n - j] for j in range(n + 1))
    top_equality = top_lhs == top_rhs
    return MorseVerdicts(
        weak=weak,
        strong=strong,
        top_equality=top_equality,
        details={"partials": partials, "top": (top_lhs, top_rhs)},
    )
