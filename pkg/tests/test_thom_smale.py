import numpy as np
import pytest

from wittenlab import exterior_core as ec
from wittenlab import geometry as geo
from wittenlab import thom_smale as tsm
from wittenlab import witten as wt


@pytest.fixture(scope="module")
def sphere_problem():
    return tsm.MorseFlowProblem(geo.sphere(), geo.height_field())


@pytest.fixture(scope="module")
def torus_problem():
    return tsm.MorseFlowProblem(geo.torus(), geo.tilted_height_field(0.1))


@pytest.fixture(scope="module")
def two_peak_problem():
    return tsm.MorseFlowProblem(geo.sphere(), geo.two_peak_field(1.0))


@pytest.fixture(scope="module")
def torus_morse(torus_problem):
    return tsm.build_complex(torus_problem, n_samples=128)


@pytest.fixture(scope="module")
def two_peak_morse(two_peak_problem):
    return tsm.build_complex(two_peak_problem, n_samples=128)


def test_flow_from_equator_reaches_south_pole(sphere_problem):
    line = tsm.integrate_flow(sphere_problem, 0, np.array([1.0, 0.0]), direction=-1)
    assert line.converged
    sink = sphere_problem.critical_points[line.sink]
    assert np.allclose(sink.position, [0, 0, -1], atol=1e-6)
    assert np.all(np.diff(line.f_values) <= 1e-10)


def test_flow_endpoint_near_critical_point(sphere_problem):
    line = tsm.integrate_flow(sphere_problem, 0, np.array([0.3, 0.7]), direction=-1)
    sink = sphere_problem.critical_points[line.sink]
    assert np.linalg.norm(line.points[-1] - sink.position) < 1e-6


def test_flow_rejects_critical_start(sphere_problem):
    p = sphere_problem.critical_points[0]
    with pytest.raises(ValueError):
        tsm.integrate_flow(sphere_problem, p.chart_idx, p.params, direction=-1)


def test_saddle_seed_flows_downhill(torus_problem):
    crits = torus_problem.critical_points
    saddle_id = next(i for i, p in enumerate(crits) if p.index == 1)
    ci, u0 = tsm._unstable_seed(torus_problem, saddle_id, +1)
    line = tsm.integrate_flow(torus_problem, ci, u0, direction=-1)
    assert crits[line.sink].value < crits[saddle_id].value


def test_uphill_flow_increases_f(torus_problem):
    crits = torus_problem.critical_points
    saddle_id = next(i for i, p in enumerate(crits) if p.index == 1)
    ci, u0 = tsm._stable_seed(torus_problem, saddle_id, +1)
    line = tsm.integrate_flow(torus_problem, ci, u0, direction=+1)
    assert np.all(np.diff(line.f_values) >= -1e-10)
    assert crits[line.sink].index == 2


def test_untilted_torus_transversality_error():
    problem = tsm.MorseFlowProblem(geo.torus(), geo.height_field())
    with pytest.raises(tsm.TransversalityError):
        tsm.build_complex(problem, n_samples=64)


def test_torus_saddles_connect_to_minimum_twice(torus_problem):
    crits = torus_problem.critical_points
    min_id = next(i for i, p in enumerate(crits) if p.index == 0)
    for sid, p in enumerate(crits):
        if p.index != 1:
            continue
        cs = tsm.connections(torus_problem, sid, min_id)
        assert len(cs.lines) == 2
        assert sorted(cs.signs) == [-1, 1]


def test_sphere_has_no_index1_queries(sphere_problem):
    md = tsm.build_complex(sphere_problem, n_samples=64)
    assert md.complex.generators[1] == ()
    for b in md.complex.boundaries:
        assert b.size == 0 or np.all(b == 0)
    assert tsm.homology_ranks(md.complex) == [1, 0, 1]


def test_torus_complex_boundaries_vanish(torus_morse):
    for b in torus_morse.complex.boundaries:
        assert np.all(b == 0)
    assert tsm.homology_ranks(torus_morse.complex) == [1, 2, 1]


def test_two_peak_complex(two_peak_morse):
    ts = two_peak_morse.complex
    assert [len(g) for g in ts.generators] == [1, 1, 2]
    b2 = ts.boundaries[1]
    assert sorted(b2.ravel().tolist()) == [-1, 1]  # saddle row = +-(max1 - max2)
    assert tsm.homology_ranks(ts) == [1, 0, 1]


def test_boundary_squared_zero(torus_morse, two_peak_morse):
    torus_morse.complex.validate()
    two_peak_morse.complex.validate()


def test_euler_from_generators(torus_morse, two_peak_morse):
    for md, chi in ((torus_morse, 0), (two_peak_morse, 2)):
        dims = [len(g) for g in md.complex.generators]
        assert sum((-1) ** i * d for i, d in enumerate(dims)) == chi


def test_orientation_sign_midpoint_independent(two_peak_morse, two_peak_problem):
    lines = [l for cs in two_peak_morse.connection_sets for l in cs.lines
             if two_peak_problem.critical_points[l.source].index == 2]
    assert lines
    for line in lines:
        signs = {
            tsm.orientation_sign(two_peak_problem, line, at_fraction=f)
            for f in (0.3, 0.5, 0.7)
        }
        assert len(signs) == 1


def test_connection_counts_stable_under_doubling(torus_problem):
    crits = torus_problem.critical_points
    max_id = next(i for i, p in enumerate(crits) if p.index == 2)
    for sid, p in enumerate(crits):
        if p.index != 1:
            continue
        a = tsm._count_separatrices(torus_problem, max_id, sid, 128, 1e-3)
        b = tsm._count_separatrices(torus_problem, max_id, sid, 256, 1e-3)
        assert a == b == 2


def test_homology_matches_betti(torus_morse):
    mesh = geo.triangulate(geo.torus(), 16)
    assert tsm.homology_ranks(torus_morse.complex) == ec.betti_numbers(mesh.complex)


@pytest.fixture(scope="module")
def torus_pinf(torus_problem, torus_morse):
    mesh = geo.triangulate(geo.torus(), 32)
    f = geo.sample_scalar(geo.tilted_height_field(0.1), mesh)
    dc = wt.deform(mesh.complex, mesh.inner, f, 8.0)
    cutoff = wt.cluster_cutoff(dc)
    inst = wt.instanton_complex(dc, cutoff)
    return tsm.p_infinity_matrix(inst, torus_morse, mesh, dc.weights)


def test_p_infinity_full_rank_torus(torus_pinf):
    assert torus_pinf.full_rank
    assert torus_pinf.matrices[1].shape == (2, 2)
    assert abs(np.linalg.det(torus_pinf.normalized_matrices[1])) > 0.1
    for k in range(3):
        assert torus_pinf.condition_numbers[k] < 1e6
    assert 0.95 <= torus_pinf.marked_area_fraction <= 1.05


def test_p_infinity_degree_zero_is_point_value(torus_pinf):
    m0 = torus_pinf.normalized_matrices[0]
    assert m0.shape == (1, 1)
    assert abs(m0[0, 0]) > 1e-3


def test_whitney_integral_of_exact_form():
    # oracle: the Whitney interpolant of d0(g) integrates to g(end) - g(start)
    mesh = geo.triangulate(geo.torus(), 16)
    g = mesh.positions[:, 2] + 0.3 * mesh.positions[:, 0]
    d0 = mesh.complex.boundary(1).T.astype(float)
    cochain = d0 @ g
    path_verts = [10, 11, 12, 28, 44, 60]  # edge-adjacent walk on the grid
    poly = mesh.positions[path_verts]
    val = tsm.whitney_line_integral(mesh, cochain, poly)
    expected = g[60] - g[10]
    assert abs(val - expected) < 1e-10 * max(1.0, abs(expected))


def test_basin_marking_covers_surface(torus_problem):
    mesh = geo.triangulate(geo.torus(), 16)
    basins = tsm.basin_of_maxima(torus_problem, mesh)
    crits = torus_problem.critical_points
    max_ids = {i for i, p in enumerate(crits) if p.index == 2}
    frac = float(np.sum(basins >= 0)) / len(basins)
    assert frac > 0.95
    assert set(basins[basins >= 0].tolist()) <= max_ids


def test_flow_line_csv_export(tmp_path, sphere_problem):
    line = tsm.integrate_flow(sphere_problem, 0, np.array([0.5, 0.5]), direction=-1)
    path = tmp_path / "line.csv"
    tsm.export_flow_line_csv(path, line)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "index,chart,u1,u2,x,y,z,f"
    assert len(rows) == 1 + len(line.points)


def test_complex_json_export(torus_morse):
    doc = tsm.complex_to_json_dict(torus_morse.complex)
    assert doc["generators"][1] and len(doc["generators"][1]) == 2
    assert doc["boundaries"][0] == [[0, 0]]
