import json

import numpy as np
import pytest
import scipy.sparse as sp

from wittenlab import exterior_core as ec
from wittenlab.exactrank import integer_rank


def union_find_components(n_vertices, edges):
    parent = list(range(n_vertices))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return len({find(v) for v in range(n_vertices)})


def edges_of(complex):
    b1 = complex.boundary(1).tocsc()
    out = []
    for j in range(b1.shape[1]):
        col = b1.indices[b1.indptr[j]:b1.indptr[j + 1]]
        out.append(tuple(col[:2]) if len(col) >= 2 else (col[0], col[0]))
    return out


def test_circle_d0_annihilates_constants():
    c = ec.circle_complex(3)
    d0 = ec.coboundary(c, 0).block(0)
    assert d0.shape == (3, 3)
    assert np.all((d0 @ np.ones(3)) == 0)


def test_dd_zero_on_products():
    t2 = ec.torus_product(2)
    d0 = ec.coboundary(t2, 0).block(0)
    d1 = ec.coboundary(t2, 1).block(1)
    prod = (d1 @ d0).toarray()
    assert np.all(prod == 0)


@pytest.mark.parametrize("n", [3, 5, 8])
def test_rank_d0_matches_union_find(n):
    c = ec.circle_complex(n)
    rank = integer_rank(c.boundary(1))
    comps = union_find_components(n, edges_of(c))
    assert rank == n - comps


def test_integer_rank_against_dense_oracle():
    rng = np.random.default_rng(7)
    for _ in range(25):
        m = rng.integers(-3, 4, size=(8, 11))
        assert integer_rank(sp.csc_matrix(m)) == np.linalg.matrix_rank(m.astype(float))


def test_codifferential_identity_masses_is_transpose():
    t2 = ec.torus_product(2)
    inner = ec.InnerProductFamily.identity(t2)
    delta1 = ec.codifferential(t2, inner, 1).block(1).toarray()
    d0 = ec.coboundary(t2, 0).block(0).toarray()
    assert np.allclose(delta1, d0.T)


def test_delta_of_d_constant_vanishes():
    t2 = ec.torus_product(2)
    inner = ec.InnerProductFamily.identity(t2)
    d0 = ec.coboundary(t2, 0).block(0)
    delta1 = ec.codifferential(t2, inner, 1).block(1)
    ddc = delta1 @ (d0 @ np.ones(t2.n_cells(0)))
    assert np.allclose(ddc, 0)


def test_adjointness_random_masses():
    rng = np.random.default_rng(11)
    t2 = ec.torus_product(2)
    masses = tuple(rng.uniform(0.5, 2.0, size=n) for n in t2.cells_per_dim)
    inner = ec.InnerProductFamily(masses)
    d0 = ec.coboundary(t2, 0).block(0)
    delta1 = ec.codifferential(t2, inner, 1).block(1)
    for _ in range(20):
        mu = rng.standard_normal(t2.n_cells(0))
        om = rng.standard_normal(t2.n_cells(1))
        lhs = inner.inner(1, d0 @ mu, om)
        rhs = inner.inner(0, mu, delta1 @ om)
        assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), abs(rhs), 1.0)


def test_adjointness_dense_spd_mass():
    rng = np.random.default_rng(13)
    c = ec.circle_complex(6)
    a = rng.standard_normal((6, 6))
    m1 = a @ a.T + 6 * np.eye(6)
    inner = ec.InnerProductFamily((rng.uniform(1, 2, 6), m1))
    d0 = ec.coboundary(c, 0).block(0)
    delta1 = ec.codifferential(c, inner, 1).block(1)
    mu = rng.standard_normal(6)
    om = rng.standard_normal(6)
    lhs = float((d0 @ mu) @ (m1 @ om))
    rhs = inner.inner(0, mu, delta1 @ om)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_laplacian_cycle_spectrum():
    # Oracle: 0-Laplacian of the n-cycle has eigenvalues 2 - 2 cos(2 pi j / n).
    for n in (3, 7):
        c = ec.circle_complex(n)
        inner = ec.InnerProductFamily.identity(c)
        w, _ = ec.laplacian_spectrum(c, inner, 0)
        oracle = np.sort(2 - 2 * np.cos(2 * np.pi * np.arange(n) / n))
        assert np.allclose(np.sort(w), oracle, atol=1e-10)
    w3, _ = ec.laplacian_spectrum(ec.circle_complex(3), ec.InnerProductFamily.identity(ec.circle_complex(3)), 0)
    assert np.allclose(np.sort(w3), [0.0, 3.0, 3.0], atol=1e-12)


def test_laplacian_constant_harmonic():
    t2 = ec.torus_product(2)
    inner = ec.InnerProductFamily.identity(t2)
    lap0 = ec.hodge_laplacian(t2, inner, 0).block(0)
    assert np.allclose((lap0 @ np.ones(t2.n_cells(0))), 0, atol=1e-14)


def test_dirichlet_identity_nonnegative():
    rng = np.random.default_rng(3)
    t2 = ec.torus_product(2)
    masses = tuple(rng.uniform(0.5, 2.0, size=n) for n in t2.cells_per_dim)
    inner = ec.InnerProductFamily(masses)
    lap1 = ec.hodge_laplacian(t2, inner, 1).block(1)
    d1 = ec.coboundary(t2, 1).block(1)
    delta1 = ec.codifferential(t2, inner, 1).block(1)
    for _ in range(10):
        om = rng.standard_normal(t2.n_cells(1))
        quad = inner.inner(1, lap1 @ om, om)
        parts = inner.norm(2, d1 @ om) ** 2 + inner.norm(0, delta1 @ om) ** 2
        assert quad >= -1e-10
        assert abs(quad - parts) <= 1e-10 * max(parts, 1.0)


def test_kernel_dims_match_betti_random_masses():
    rng = np.random.default_rng(5)
    t2 = ec.torus_product(2)
    masses = tuple(rng.uniform(0.5, 2.0, size=n) for n in t2.cells_per_dim)
    inner = ec.InnerProductFamily(masses)
    betti = ec.betti_numbers(t2)
    for k in range(3):
        w, _ = ec.laplacian_spectrum(t2, inner, k)
        assert ec.kernel_dimension(w) == betti[k]


def test_hodge_decompose_roundtrip_and_orthogonality():
    rng = np.random.default_rng(17)
    t2 = ec.torus_product(2)
    masses = tuple(rng.uniform(0.5, 2.0, size=n) for n in t2.cells_per_dim)
    inner = ec.InnerProductFamily(masses)
    om = ec.Cochain(1, rng.standard_normal(t2.n_cells(1)))
    h, e, c = ec.hodge_decompose(t2, inner, om)
    total = h.coeffs + e.coeffs + c.coeffs
    nrm = inner.norm(1, om.coeffs)
    assert np.linalg.norm(total - om.coeffs) <= 1e-10 * nrm
    for x, y in [(h, e), (h, c), (e, c)]:
        assert abs(inner.inner(1, x.coeffs, y.coeffs)) < 1e-10 * nrm**2
    lap1 = ec.hodge_laplacian(t2, inner, 1).block(1)
    assert inner.norm(1, lap1 @ h.coeffs) <= 1e-8 * max(nrm, 1.0)


def test_hodge_decompose_fixed_points():
    rng = np.random.default_rng(19)
    t2 = ec.torus_product(2)
    inner = ec.InnerProductFamily.identity(t2)
    # exact input -> harmonic part below tolerance
    d0 = ec.coboundary(t2, 0).block(0)
    om = ec.Cochain(1, d0 @ rng.standard_normal(t2.n_cells(0)))
    h, e, c = ec.hodge_decompose(t2, inner, om)
    assert np.linalg.norm(h.coeffs) <= 1e-10 * np.linalg.norm(om.coeffs)
    assert np.linalg.norm(c.coeffs) <= 1e-10 * np.linalg.norm(om.coeffs)
    # harmonic input -> returned unchanged
    w, v = ec.laplacian_spectrum(t2, inner, 1)
    harm = ec.Cochain(1, v[:, 0])
    h2, e2, c2 = ec.hodge_decompose(t2, inner, harm)
    assert np.linalg.norm(h2.coeffs - harm.coeffs) <= 1e-8
    assert np.linalg.norm(e2.coeffs) <= 1e-8
    assert np.linalg.norm(c2.coeffs) <= 1e-8


def test_product_with_point_is_identity():
    t2 = ec.torus_product(2)
    p = ec.point_complex()
    prod = ec.product_complex(p, t2)
    assert prod.cells_per_dim == t2.cells_per_dim
    for k in range(1, 3):
        assert (prod.boundary(k) != t2.boundary(k)).nnz == 0


def test_product_kunneth_circle_circle():
    t2 = ec.torus_product(2)
    t2.validate()
    assert ec.betti_numbers(t2) == [1, 2, 1]


def test_t3_betti_binomials():
    t3 = ec.torus_product(3)
    t3.validate()
    assert ec.betti_numbers(t3) == [1, 3, 3, 1]
    assert ec.euler_characteristic(t3) == 0


def test_euler_characteristic_torus_zero():
    assert ec.euler_characteristic(ec.torus_product(2)) == 0


def test_alternating_sums_agree():
    for cx in (ec.circle_complex(5), ec.torus_product(2), ec.torus_product(3)):
        cells = sum((-1) ** k * n for k, n in enumerate(cx.cells_per_dim))
        betti = sum((-1) ** k * b for k, b in enumerate(ec.betti_numbers(cx)))
        assert cells == betti


def test_degree_errors():
    c = ec.circle_complex(3)
    inner = ec.InnerProductFamily.identity(c)
    with pytest.raises(ec.DegreeError):
        ec.coboundary(c, 1)
    with pytest.raises(ec.DegreeError):
        ec.codifferential(c, inner, 0)
    with pytest.raises(ec.DegreeError):
        ec.codifferential(c, inner, 2)


def test_non_spd_mass_rejected():
    c = ec.circle_complex(3)
    with pytest.raises(ec.NotSPDError):
        ec.InnerProductFamily((np.array([1.0, -1.0, 1.0]), np.ones(3)))
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
    with pytest.raises(ec.NotSPDError):
        ec.InnerProductFamily((np.ones(2), bad))


def test_json_roundtrip(tmp_path):
    t2 = ec.torus_product(2)
    inner = ec.InnerProductFamily(tuple(np.linspace(1, 2, n) for n in t2.cells_per_dim))
    path = tmp_path / "t2.json"
    ec.save_complex(path, t2, inner)
    doc = json.loads(path.read_text())
    assert set(doc) == {"dim", "cells", "boundary", "masses"}
    loaded, inner2 = ec.load_complex(path)
    assert loaded.cells_per_dim == t2.cells_per_dim
    for k in range(1, 3):
        assert (loaded.boundary(k) != t2.boundary(k)).nnz == 0
    for k in range(3):
        assert np.allclose(inner2.masses[k], inner.masses[k])
    assert ec.betti_numbers(loaded) == [1, 2, 1]


def test_validate_catches_broken_boundary():
    c = ec.circle_complex(3)
    b1 = c.boundary(1).toarray()
    b2 = np.array([[1], [1], [0]])
    with pytest.raises(ec.InvalidComplexError):
        bad = ec.CellComplex((3, 3, 1), (sp.csc_matrix(b1), sp.csc_matrix(b2)), kind=ec.CELL)
        bad.validate()
