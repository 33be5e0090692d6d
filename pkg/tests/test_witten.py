import numpy as np
import pytest

from wittenlab import exterior_core as ec
from wittenlab import geometry as geo
from wittenlab import witten as wt


@pytest.fixture(scope="module")
def torus_setup():
    surface = geo.torus()
    scalar = geo.tilted_height_field(0.1)
    mesh = geo.triangulate(surface, 16)
    f = geo.sample_scalar(scalar, mesh)
    crits = geo.find_critical_points(surface, scalar)
    return mesh, f, crits


@pytest.fixture(scope="module")
def sphere_setup():
    surface = geo.sphere()
    scalar = geo.height_field()
    mesh = geo.triangulate(surface, 16)
    f = geo.sample_scalar(scalar, mesh)
    crits = geo.find_critical_points(surface, scalar)
    return mesh, f, crits


def test_t_zero_is_identity_conjugation(torus_setup):
    mesh, f, _ = torus_setup
    dc = wt.deform(mesh.complex, mesh.inner, f, 0.0)
    for k in range(2):
        d = mesh.complex.boundary(k + 1).T.toarray()
        assert np.allclose(dc.d_t[k].toarray(), d)
    lap0 = ec.hodge_laplacian(mesh.complex, mesh.inner, 0).block(0)
    assert np.abs((dc.laplacian(0) - lap0)).max() < 1e-12


@pytest.mark.parametrize("t", [0.0, 1.0, 5.0, 10.0])
def test_kernel_dimensions_invariant(torus_setup, t):
    mesh, f, _ = torus_setup
    dc = wt.deform(mesh.complex, mesh.inner, f, t)
    assert dc.dd_residual() < 1e-12
    betti = ec.betti_numbers(mesh.complex)
    for k in range(3):
        w, _ = wt.low_eigenpairs(dc, k, 8)
        assert int(np.sum(w < 1e-8 * max(w.max(), 1.0))) == betti[k]


def test_gap_opens_at_degree_zero(torus_setup):
    mesh, f, _ = torus_setup
    w0 = wt.spectrum_head(wt.deform(mesh.complex, mesh.inner, f, 0.0), 0, 4)
    w10 = wt.spectrum_head(wt.deform(mesh.complex, mesh.inner, f, 10.0), 0, 4)
    assert w10[1] > w0[1]


def test_overflow_guard():
    c = ec.circle_complex(4)
    inner = ec.InnerProductFamily.identity(c)
    f = np.array([0.0, 100.0, 0.0, -100.0])
    with pytest.raises(wt.WeightOverflowError):
        wt.deform(c, inner, f, 10.0)
    # recentering absorbs a large constant offset
    dc = wt.deform(c, inner, np.full(4, 1e6), 10.0)
    assert dc.weights.recentered_by == pytest.approx(1e6)


def test_low_spectrum_counts(torus_setup):
    mesh, f, crits = torus_setup
    betti = ec.betti_numbers(mesh.complex)
    dc = wt.deform(mesh.complex, mesh.inner, f, 6.0)
    c = wt.cluster_cutoff(dc)
    counts = [wt.low_spectrum(dc, k, c).count_below for k in range(3)]
    assert counts == [1, 2, 1]
    # counts never fall below Betti numbers
    for t in (0.0, 2.0, 6.0):
        dct = wt.deform(mesh.complex, mesh.inner, f, t)
        ct = wt.cluster_cutoff(dct)
        for k in range(3):
            assert wt.low_spectrum(dct, k, ct).count_below >= betti[k]


def test_localization_mass_nondecreasing(torus_setup):
    mesh, f, crits = torus_setup
    masses = []
    for t in (2.0, 4.0, 8.0):
        dc = wt.deform(mesh.complex, mesh.inner, f, t)
        c = wt.cluster_cutoff(dc)
        e = wt.low_spectrum(dc, 0, c, mesh=mesh, critical_points=crits, radius_hops=3)
        masses.append(e.localization_mass)
    assert masses[0] <= masses[1] + 1e-9
    assert masses[1] <= masses[2] + 1e-9


def test_localized_states_basic(torus_setup):
    mesh, f, crits = torus_setup
    dc = wt.deform(mesh.complex, mesh.inner, f, 6.0)
    states, warnings = wt.build_localized_states(dc, mesh, crits, radius_hops=3)
    degrees = sorted(s.degree for s in states)
    assert degrees == [0, 1, 1, 2]
    for s in states:
        assert dc.inner.norm(s.degree, s.cochain) == pytest.approx(1.0)
    by_degree = {}
    for s in states:
        by_degree.setdefault(s.degree, []).append(s)
    for pair in by_degree.values():
        if len(pair) == 2:
            a, b = pair
            overlap = dc.inner.inner(a.degree, a.cochain, b.cochain)
            assert abs(overlap) < 1e-12


def test_localized_state_degrees_on_sphere(sphere_setup):
    mesh, f, crits = sphere_setup
    dc = wt.deform(mesh.complex, mesh.inner, f, 5.0)
    smin = wt.localized_state(dc, mesh, crits[0], 3)
    smax = wt.localized_state(dc, mesh, crits[1], 3)
    assert smin.degree == 0 and smax.degree == 2


def test_projection_decay_monotone(torus_setup):
    mesh, f, crits = torus_setup
    make_dc = lambda t: wt.deform(mesh.complex, mesh.inner, f, t)
    table = wt.projection_decay(make_dc, mesh, crits, wt.cluster_cutoff, [2.0, 4.0, 8.0], radius_hops=3)
    for lab, r in table.residuals.items():
        fi = table.floor_index[lab]
        head = r[: fi + 1] if fi < len(r) else r
        assert all(head[i] > head[i + 1] for i in range(len(head) - 1)), (lab, r)


def test_projection_decay_full_cutoff_gives_zero(torus_setup):
    mesh, f, crits = torus_setup
    dc = wt.deform(mesh.complex, mesh.inner, f, 4.0)
    state = wt.localized_state(dc, mesh, crits[0], 3)
    w, v = wt.low_eigenpairs(dc, 0, mesh.complex.n_cells(0))
    m = dc.inner.masses[0]
    proj = v @ (v.T @ (m * state.cochain))
    resid = np.sqrt(np.dot(proj - state.cochain, m * (proj - state.cochain)))
    assert resid < 1e-8  # cutoff above the whole spectrum makes P_c the identity


def test_instanton_complex_torus(torus_setup):
    mesh, f, _ = torus_setup
    dc = wt.deform(mesh.complex, mesh.inner, f, 6.0)
    c = wt.cluster_cutoff(dc)
    inst = wt.instanton_complex(dc, c)
    assert inst.dims == (1, 2, 1)
    assert inst.betti == tuple(ec.betti_numbers(mesh.complex))
    assert inst.leakage < 1e-8
    chi = sum((-1) ** k * d for k, d in enumerate(inst.dims))
    assert chi == ec.euler_characteristic(mesh.complex, check=False)


def test_instanton_complex_sphere(sphere_setup):
    mesh, f, _ = sphere_setup
    dc = wt.deform(mesh.complex, mesh.inner, f, 5.0)
    c = wt.cluster_cutoff(dc)
    inst = wt.instanton_complex(dc, c)
    assert inst.dims == (1, 0, 1)
    assert inst.betti == (1, 0, 1)
    for m in inst.induced_d:
        if m.size:
            assert np.abs(m).max() < 1e-10


def test_instanton_gap_violation_raises(torus_setup):
    mesh, f, _ = torus_setup
    dc = wt.deform(mesh.complex, mesh.inner, f, 6.0)
    w = wt.spectrum_head(dc, 0, 4)
    with pytest.raises(wt.SpectralGapError):
        wt.instanton_complex(dc, float(w[2]))  # cutoff planted on an eigenvalue


def test_morse_report_cases():
    v = wt.morse_report([1, 2, 1], [1, 2, 1])
    assert v.weak and v.strong and v.top_equality
    v = wt.morse_report([1, 0, 1], [1, 0, 1])
    assert v.all_hold
    v = wt.morse_report([2, 3, 1], [1, 0, 1])
    assert v.weak and v.strong and not v.top_equality
    with pytest.raises(ValueError):
        wt.morse_report([1, 2], [1, 2, 1])


def test_spectra_csv_format(tmp_path, torus_setup):
    mesh, f, _ = torus_setup
    dc = wt.deform(mesh.complex, mesh.inner, f, 2.0)
    entries = [wt.low_spectrum(dc, k, 1.0, count=4) for k in range(3)]
    path = tmp_path / "spec.csv"
    wt.export_spectra_csv(path, "demo", entries)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "scenario,degree,t,eigen_index,eigenvalue"
    assert len(lines) == 1 + 3 * 4


def test_alternating_count_sum_is_euler(torus_setup, sphere_setup):
    for setup, chi in ((torus_setup, 0), (sphere_setup, 2)):
        mesh, f, _ = setup
        dc = wt.deform(mesh.complex, mesh.inner, f, 5.0)
        c = wt.cluster_cutoff(dc)
        counts = [wt.low_spectrum(dc, k, c).count_below for k in range(3)]
        assert sum((-1) ** k * n for k, n in enumerate(counts)) == chi


def test_cell_mean_values_product_complex():
    t2 = ec.torus_product(2)
    f = np.arange(t2.n_cells(0), dtype=float)
    vals = wt.cell_mean_values(t2, f)
    assert vals[0].shape == (9,)
    assert vals[1].shape == (18,)
    assert vals[2].shape == (9,)
    b1 = t2.boundary(1)
    for j in range(5):
        col = b1.getcol(j)
        verts = col.nonzero()[0]
        assert vals[1][j] == pytest.approx(f[verts].mean())
