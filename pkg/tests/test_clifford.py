import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from wittenlab import clifford as cl


def unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def test_c_on_vacuum_creates_generator():
    op = cl.clifford_c(np.array([1.0, 0.0]))
    vac = np.zeros(4)
    vac[0] = 1.0  # empty subset comes first in the basis order
    out = op.mat @ vac
    expected = np.zeros(4)
    expected[cl.basis_positions(2)[(1,)]] = 1.0
    assert np.allclose(out, expected)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_clifford_anticommutators(n):
    rng = np.random.default_rng(100 + n)
    eye = np.eye(1 << n)
    for _ in range(40):
        e, ep = unit(rng, n), unit(rng, n)
        c, cp = cl.clifford_c(e).mat, cl.clifford_c(ep).mat
        h, hp = cl.clifford_chat(e).mat, cl.clifford_chat(ep).mat
        dot = float(e @ ep)
        assert np.abs(c @ cp + cp @ c + 2 * dot * eye).max() < 1e-12
        assert np.abs(h @ hp + hp @ h - 2 * dot * eye).max() < 1e-12
        assert np.abs(c @ hp + hp @ c).max() < 1e-12


@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_c_skew_chat_symmetric(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    assert cl.clifford_c(v).skewness_residual() < 1e-12 * max(1, np.abs(v).max())
    assert cl.clifford_chat(v).symmetry_residual() < 1e-12 * max(1, np.abs(v).max())


def test_linearity_in_v():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(4), rng.standard_normal(4)
    lhs = cl.clifford_c(2.0 * a - 3.0 * b).mat
    rhs = 2.0 * cl.clifford_c(a).mat - 3.0 * cl.clifford_c(b).mat
    assert np.abs(lhs - rhs).max() < 1e-13


@pytest.mark.parametrize("n", [2, 3, 4])
def test_volume_element_identity_on_parities(n):
    # (-1)^n prod_i c(e_i) chat(e_i) acts as +Id on even forms, -Id on odd.
    eye = np.eye(n)
    prod = np.eye(1 << n)
    for i in range(n):
        prod = prod @ (cl.clifford_c(eye[i]).mat @ cl.clifford_chat(eye[i]).mat)
    prod *= (-1) ** n
    degs = cl.basis_degrees(n)
    signs = np.where(degs % 2 == 0, 1.0, -1.0)
    assert np.abs(prod - np.diag(signs)).max() < 1e-12


def test_build_L_identity_spectrum_n2():
    # Explicit 4x4 oracle: L doubles the number of occupied indices.
    op = cl.build_L(np.eye(2))
    w = np.sort(scipy.linalg.eigvalsh(0.5 * (op.mat + op.mat.T)))
    assert np.allclose(w, [0.0, 2.0, 2.0, 4.0], atol=1e-12)
    degs = cl.basis_degrees(2)
    assert np.allclose(op.mat, np.diag(2.0 * degs), atol=1e-12)


def test_kernel_parity_identity_is_vacuum():
    info = cl.kernel_parity(np.eye(3))
    assert info.dim == 1 and info.parity == "even"
    assert abs(abs(info.vector[0]) - 1.0) < 1e-10


def test_kernel_parity_reflection_is_odd():
    info = cl.kernel_parity(np.diag([-1.0, 1.0]))
    assert info.parity == "odd"


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_kernel_parity_matches_sign_det(n):
    rng = np.random.default_rng(200 + n)
    done = 0
    while done < 40:
        a = rng.uniform(-2, 2, size=(n, n))
        if abs(np.linalg.det(a)) <= 0.1:
            continue
        info = cl.kernel_parity(a)
        want = "even" if np.linalg.det(a) > 0 else "odd"
        assert info.parity == want and info.dim == 1
        done += 1


def test_min_nonzero_eigenvalue_at_least_min_singular():
    rng = np.random.default_rng(42)
    for _ in range(20):
        a = rng.uniform(-2, 2, size=(3, 3))
        if abs(np.linalg.det(a)) <= 0.1:
            continue
        s = np.linalg.svd(a, compute_uv=False)
        w = np.sort(scipy.linalg.eigvalsh(cl.build_L(a).mat))
        assert w[1] >= s.min() - 1e-10


def test_eta_relations():
    rng = np.random.default_rng(7)
    for n in (2, 3, 4):
        a = rng.uniform(-2, 2, size=(n, n)) + 0.5 * np.eye(n)
        if abs(np.linalg.det(a)) < 0.1:
            continue
        model = cl.LocalModelMatrix.from_matrix(a)
        etas = cl.eta_operators(a)
        eye = np.eye(1 << n)
        for j, eta in enumerate(etas):
            m = eta.mat
            assert eta.symmetry_residual() < 1e-12
            assert np.abs(m @ m - eye).max() < 1e-12
            f = model.W[:, j]
            ch = cl.clifford_chat(f).mat
            assert np.abs(ch @ m + m @ ch).max() < 1e-12
            for i, other in enumerate(etas):
                if i == j:
                    continue
                assert np.abs(m @ other.mat - other.mat @ m).max() < 1e-12
                fi = model.W[:, i]
                chi = cl.clifford_chat(fi).mat
                assert np.abs(chi @ m - m @ chi).max() < 1e-12


def test_eta_identity_case_and_equal_multiplicity():
    etas = cl.eta_operators(np.eye(3))
    eye3 = np.eye(3)
    for j, eta in enumerate(etas):
        expected = cl.clifford_c(eye3[j]).mat @ cl.clifford_chat(eye3[j]).mat
        assert np.abs(eta.mat - expected).max() < 1e-12
        w = np.sort(scipy.linalg.eigvalsh(eta.mat))
        assert np.sum(w < 0) == np.sum(w > 0) == 4


def test_build_L_two_routes_agree():
    rng = np.random.default_rng(3)
    for n in (2, 3, 5):
        a = rng.uniform(-2, 2, size=(n, n)) + 0.3 * np.eye(n)
        if abs(np.linalg.det(a)) < 0.05:
            continue
        direct = cl.build_L(a).mat
        via_eta = cl.build_L_via_eta(a).mat
        assert np.abs(direct - via_eta).max() < 1e-12 * max(1.0, np.abs(direct).max())


def test_polar_reconstruction_and_so_n():
    rng = np.random.default_rng(5)
    for _ in range(30):
        a = rng.uniform(-2, 2, size=(4, 4))
        if abs(np.linalg.det(a)) < 0.1:
            continue
        m = cl.LocalModelMatrix.from_matrix(a)
        assert np.linalg.det(m.W) > 0
        assert np.abs(m.U @ m.U.T - np.eye(4)).max() < 1e-12
        recon = m.U @ m.W @ np.diag(m.s) @ m.W.T
        assert np.abs(recon - a).max() < 1e-10


def test_singular_matrix_rejected():
    with pytest.raises(cl.SingularMatrixError):
        cl.build_L(np.array([[1.0, 0.0], [2.0, 0.0]]))


def test_signature_checks_complex_structure():
    rep = cl.signature_fiber_checks(5, np.eye(5)[0], np.eye(5)[1], 0, t=1.0)
    assert rep.complex_structure_residual < 1e-12
    assert rep.composed_skewness_residual < 1e-12
    assert rep.generator_symmetry_residual < 1e-12


def test_signature_checks_zero_curvature_positive_all_t():
    for t in (0.1, 1.0, 10.0):
        rep = cl.signature_fiber_checks(5, np.eye(5)[0], np.eye(5)[1], 0, t=t)
        assert rep.t_threshold == 0.0
        assert rep.min_eig_at_t == pytest.approx(t * t)
        assert rep.positive_at_2t


def test_signature_checks_random_curvature_finite_threshold():
    rng = np.random.default_rng(9)
    v = np.eye(5)[0]
    x = np.eye(5)[1]
    g = rng.uniform(-1, 1, size=(5, 5))
    rep = cl.signature_fiber_checks(5, v, x, g, t=1.0)
    assert np.isfinite(rep.t_threshold)
    assert rep.positive_at_2t
    assert rep.composed_skewness_residual < 1e-12


def test_signature_checks_rejects_bad_frames():
    with pytest.raises(cl.FrameError):
        cl.signature_fiber_checks(5, np.eye(5)[0], np.eye(5)[0], 0, t=1.0)
    with pytest.raises(cl.FrameError):
        cl.signature_fiber_checks(5, 2.0 * np.eye(5)[0], np.eye(5)[1], 0, t=1.0)
    with pytest.raises(cl.DimensionError):
        cl.signature_fiber_checks(3, np.eye(3)[0], np.eye(3)[1], 0, t=1.0)


def test_fiber_csv_export(tmp_path):
    op = cl.clifford_chat(np.array([1.0, 2.0]))
    path = tmp_path / "op.csv"
    op.to_csv(path)
    loaded = np.loadtxt(path, delimiter=",")
    assert np.allclose(loaded, op.mat)


def test_dimension_cap():
    with pytest.raises(cl.DimensionError):
        cl.basis_subsets(13)
