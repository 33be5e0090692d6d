import numpy as np
import pytest

from wittenlab import oscillator as osc
from wittenlab.clifford import basis_degrees, kernel_parity


def hermite_levels(a, t, k):
    # Oracle: -d^2 + (t a y)^2 - t|a| has eigenvalues 2 j t |a|, j = 0,1,2,...
    return np.array([2.0 * j * t * abs(a) for j in range(k)])


def test_ground_state_and_gap_unit_case():
    grid = osc.GridSpec(dim=1, half_width=8.0, points=801)
    op = osc.build_Kt(np.array([[1.0]]), 1.0, grid)
    w = op.low_eigenvalues(3)
    assert abs(w[0]) < 1e-3
    assert abs(w[1] - 2.0) < 1e-3 * 2.0


def test_kt_annihilates_sampled_gaussian():
    grid = osc.GridSpec(dim=1, half_width=8.0, points=801)
    t = 1.0
    op = osc.build_Kt(np.array([[1.0]]), t, grid)
    y = grid.axis()
    v = np.exp(-t * y**2 / 2.0)
    resid = np.linalg.norm(op.matrix @ v) / np.linalg.norm(v)
    assert resid < 1e-3


def test_gap_doubles_with_t():
    c, gaps = osc.gap_scaling_fit(np.array([[1.0]]), [1.0, 2.0], points=801)
    assert abs(gaps[1] - 2.0 * gaps[0]) <= 0.02 * gaps[1]


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("t", [1.0, 2.0, 4.0])
def test_hermite_oracle_sweep(a, t):
    grid = osc.GridSpec(dim=1, half_width=osc.suggested_half_width(t, [[a]]), points=801)
    op = osc.build_Kt(np.array([[a]]), t, grid)
    w = op.low_eigenvalues(3)
    oracle = hermite_levels(a, t, 3)
    assert abs(w[0] - oracle[0]) < 1e-3 * (2 * a * t)
    assert abs(w[1] - oracle[1]) <= 0.01 * oracle[1]
    ground = op.low_eigenpairs(1)[1][:, 0]
    gauss = osc.gaussian_ground_state([[a]], t, grid)
    err = min(np.linalg.norm(ground - gauss), np.linalg.norm(ground + gauss))
    assert err < 1e-3


def test_ground_energy_monotone_in_resolution():
    vals = []
    for n in (201, 401, 801):
        grid = osc.GridSpec(dim=1, half_width=8.0, points=n)
        vals.append(abs(osc.build_Kt(np.array([[1.0]]), 1.0, grid).low_eigenvalues(1)[0]))
    assert vals[0] >= vals[1] >= vals[2]


def test_grid_too_coarse_rejected():
    grid = osc.GridSpec(dim=1, half_width=30.0, points=51)
    with pytest.raises(osc.GridTooCoarseError):
        osc.build_Kt(np.array([[1.0]]), 4.0, grid)


def test_symmetry():
    grid = osc.GridSpec(dim=2, half_width=5.0, points=51)
    op = osc.build_Kt(np.array([[1.0, 0.3], [0.0, 1.0]]), 1.0, grid)
    assert op.symmetry_residual() < 1e-12


def test_model_laplacian_ground_factorizes_n1():
    grid = osc.GridSpec(dim=1, half_width=8.0, points=401)
    t = 1.0
    op = osc.build_model_laplacian(np.array([[1.0]]), t, grid)
    w, v = op.low_eigenpairs(3)
    assert abs(w[0]) < 1e-3
    assert w[1] > 10 * max(abs(w[0]), 1e-6)
    ground = v[:, 0].reshape(grid.points, 2)
    u, s, vt = np.linalg.svd(ground, full_matrices=False)
    assert s[1] < 1e-3 * s[0]  # rank-one: spatial (x) fiber
    fiber = vt[0]
    assert abs(abs(fiber[0]) - 1.0) < 1e-3  # fiber factor is the vacuum
    gauss = osc.gaussian_ground_state([[1.0]], t, grid)
    spatial = u[:, 0]
    err = min(np.linalg.norm(spatial - gauss), np.linalg.norm(spatial + gauss))
    assert err < 1e-3


def test_model_laplacian_parity_n2():
    grid = osc.GridSpec(dim=2, half_width=6.0, points=61)
    a = np.diag([1.0, -1.0])
    op = osc.build_model_laplacian(a, 1.0, grid)
    w, v = op.low_eigenpairs(2)
    assert abs(w[0]) < 5e-2
    assert w[1] > 10 * abs(w[0])
    ground = v[:, 0].reshape(grid.points**2, 4)
    u, s, vt = np.linalg.svd(ground, full_matrices=False)
    fiber = vt[0]
    degs = basis_degrees(2)
    odd_mass = float(np.sum(fiber[degs % 2 == 1] ** 2))
    assert odd_mass > 1.0 - 1e-3
    assert kernel_parity(a).parity == "odd"


def test_gap_constant_stable_across_t():
    ts = [1.0, 2.0, 4.0, 8.0]
    c, gaps = osc.gap_scaling_fit(np.array([[1.0]]), ts, points=801)
    ratios = gaps / np.asarray(ts)
    assert (ratios.max() - ratios.min()) / ratios.mean() < 0.10


def test_spectrum_csv_export(tmp_path):
    path = tmp_path / "spec.csv"
    osc.export_spectrum_csv(path, [(1.0, 0, 0.0), (1.0, 1, 2.0)])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "t,index,eigenvalue"
    assert len(lines) == 3
