"""The acceptance suite: every exit criterion as a callable check.

Each criterion returns a CriterionResult with a machine-readable verdict;
the CLI ``accept`` command and the pytest suite both run this registry.
Seeds are threaded everywhere so that two runs with the same seed produce
byte-identical reports.
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import clifford as cl
from . import exterior_core as ec
from . import geometry as geo
from . import indices as ix
from . import oscillator as osc
from . import thom_smale as tsm
from . import witten as wt

_MESH_CACHE: dict = {}
_MORSE_CACHE: dict = {}


def _mesh(surface_name: str, resolution: int):
    key = (surface_name, resolution)
    if key not in _MESH_CACHE:
        surface = {"sphere": geo.sphere, "torus": geo.torus, "flat_torus": geo.flat_torus}[surface_name]()
        _MESH_CACHE[key] = geo.triangulate(surface, resolution)
    return _MESH_CACHE[key]


def _morse(surface_name: str, field_key: str):
    if field_key == "tilted":
        scalar = geo.tilted_height_field(0.1)
    elif field_key == "two_peak":
        scalar = geo.two_peak_field(1.0)
    else:
        scalar = geo.height_field()
    key = (surface_name, field_key)
    if key not in _MORSE_CACHE:
        surface = {"sphere": geo.sphere, "torus": geo.torus}[surface_name]()
        problem = tsm.MorseFlowProblem(surface, scalar)
        _MORSE_CACHE[key] = tsm.build_complex(problem, n_samples=128)
    return _MORSE_CACHE[key]


@dataclass
class CriterionResult:
    cid: str
    name: str
    passed: bool
    details: str
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.cid} {status} ({self.seconds:6.1f}s)  {self.name}: {self.details}"


def _unit(rng, n):
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def c01_clifford_relations(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in range(2, 7):
        eye = np.eye(1 << n)
        for _ in range(1000):
            e, ep = _unit(rng, n), _unit(rng, n)
            c, cp = cl.clifford_c(e).mat, cl.clifford_c(ep).mat
            h, hp = cl.clifford_chat(e).mat, cl.clifford_chat(ep).mat
            dot = float(e @ ep)
            worst = max(
                worst,
                float(np.abs(c @ cp + cp @ c + 2 * dot * eye).max()),
                float(np.abs(h @ hp + hp @ h - 2 * dot * eye).max()),
                float(np.abs(c @ hp + hp @ c).max()),
            )
    dt = time.time() - t0
    passed = worst < 1e-12 and dt < 5.0
    return CriterionResult(
        "C01", "Clifford anticommutation relations",
        passed, f"max residual {worst:.2e} over 1000 pairs per n in 2..6", dt,
    )


def c02_localization_kernel(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    rng = np.random.default_rng(seed + 1)
    checked = 0
    failures = 0
    min_gap = np.inf
    for n in (2, 3, 4, 5):
        done = 0
        while done < 200:
            a = rng.uniform(-2.0, 2.0, size=(n, n))
            if abs(np.linalg.det(a)) <= 0.1:
                continue
            done += 1
            checked += 1
            info = cl.kernel_parity(a)
            min_gap = min(min_gap, info.gap_ratio)
            want = "even" if np.linalg.det(a) > 0 else "odd"
            if info.dim != 1 or info.parity != want or info.gap_ratio < 10.0:
                failures += 1
    dt = time.time() - t0
    passed = failures == 0 and dt < 30.0
    return CriterionResult(
        "C02", "localization operator kernel: dimension one, parity = sign(det)",
        passed, f"{checked} samples, {failures} failures, min gap ratio {min_gap:.1f}", dt,
    )


def c03_involution_relations(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    rng = np.random.default_rng(seed + 2)
    worst = 0.0
    worst_recon = 0.0
    for n in (2, 3, 4, 5):
        done = 0
        while done < 25:
            a = rng.uniform(-2.0, 2.0, size=(n, n))
            if abs(np.linalg.det(a)) <= 0.1:
                continue
            done += 1
            model = cl.LocalModelMatrix.from_matrix(a)
            etas = cl.eta_operators(a)
            eye = np.eye(1 << n)
            for j, eta in enumerate(etas):
                m = eta.mat
                f = model.W[:, j]
                ch = cl.clifford_chat(f).mat
                worst = max(
                    worst,
                    eta.symmetry_residual(),
                    float(np.abs(m @ m - eye).max()),
                    float(np.abs(ch @ m + m @ ch).max()),
                )
                for i, other in enumerate(etas):
                    if i == j:
                        continue
                    fi = model.W[:, i]
                    chi = cl.clifford_chat(fi).mat
                    worst = max(
                        worst,
                        float(np.abs(m @ other.mat - other.mat @ m).max()),
                        float(np.abs(chi @ m - m @ chi).max()),
                    )
            direct = cl.build_L(a).mat
            via = cl.build_L_via_eta(a).mat
            scale = max(1.0, float(np.abs(direct).max()))
            worst_recon = max(worst_recon, float(np.abs(direct - via).max()) / scale)
    dt = time.time() - t0
    passed = worst < 1e-12 and worst_recon < 1e-12
    return CriterionResult(
        "C03", "involution relations and L = sum s_i (1 + eta_i)",
        passed, f"relation residual {worst:.2e}, reconstruction {worst_recon:.2e}", dt,
    )


def c04_oscillator(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    worst_ground = 0.0
    worst_gap = 0.0
    worst_vec = 0.0
    for a in (0.5, 1.0, 2.0):
        for t in (1.0, 2.0, 4.0):
            grid = osc.GridSpec(dim=1, half_width=osc.suggested_half_width(t, [[a]]), points=801)
            op = osc.build_Kt(np.array([[a]]), t, grid)
            w, v = op.low_eigenpairs(2)
            scale = 2.0 * a * t
            worst_ground = max(worst_ground, abs(w[0]) / (1e-3 * scale))
            worst_gap = max(worst_gap, abs(w[1] - scale) / (0.01 * scale))
            gauss = osc.gaussian_ground_state([[a]], t, grid)
            err = min(np.linalg.norm(v[:, 0] - gauss), np.linalg.norm(v[:, 0] + gauss))
            worst_vec = max(worst_vec, err / 1e-3)
    dt = time.time() - t0
    passed = worst_ground < 1.0 and worst_gap < 1.0 and worst_vec < 1.0 and dt < 60.0
    return CriterionResult(
        "C04", "oscillator ground state and linear gap (Hermite oracle)",
        passed,
        f"margins used: ground {worst_ground:.2f}, gap {worst_gap:.2f}, vector {worst_vec:.2f} (of 1.0)",
        dt,
    )


def _kernel_dims(complex, inner, probe: int = 16):
    dims = []
    for k in range(complex.dim + 1):
        n = complex.n_cells(k)
        if n <= 1200:
            w, _ = ec.laplacian_spectrum(complex, inner, k)
            dims.append(ec.kernel_dimension(w))
            continue
        import scipy.sparse as sp
        import scipy.sparse.linalg as spla

        a = ec.stiffness_matrix(complex, inner, k)
        s = inner.sqrt_diag(k)
        sym = sp.diags(1.0 / s) @ a @ sp.diags(1.0 / s)
        v0 = np.random.default_rng(823542).standard_normal(n)
        lam_max = float(spla.eigsh(sym, k=1, which="LA", v0=v0, return_eigenvectors=False)[0])
        k_small = min(probe, n - 2)
        w = spla.eigsh(sym, k=k_small, sigma=-1e-6 * max(lam_max, 1.0), which="LM",
                       v0=v0, return_eigenvectors=False)
        w = np.sort(w)
        if w[-1] < 1e-8 * lam_max:
            raise RuntimeError("probe window too small for the kernel count")
        dims.append(int(np.sum(w < 1e-8 * lam_max)))
    return dims


def c05_hodge_betti(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    cases = []
    ok = True

    ico = _mesh("sphere", 8)  # one icosahedron subdivision
    betti = ec.betti_numbers(ico.complex)
    dims = _kernel_dims(ico.complex, ico.inner)
    cases.append(("icosahedral sphere", betti, dims, [1, 0, 1]))

    tor = _mesh("torus", 16)
    betti_t = ec.betti_numbers(tor.complex)
    dims_t = _kernel_dims(tor.complex, tor.inner)
    cases.append(("torus 16x16", betti_t, dims_t, [1, 2, 1]))

    t5 = ec.torus_product(5)
    betti5 = ec.betti_numbers(t5)
    dims5 = _kernel_dims(t5, ec.InnerProductFamily.identity(t5))
    cases.append(("T^5 cubical", betti5, dims5, [1, 5, 10, 10, 5, 1]))

    msgs = []
    for name, betti_x, dims_x, expected in cases:
        good = betti_x == expected and dims_x == expected
        ok = ok and good
        msgs.append(f"{name}: betti {betti_x}, kernel dims {dims_x}")
    dt = time.time() - t0
    passed = ok and dt < 120.0
    return CriterionResult("C05", "harmonic kernels equal exact Betti numbers",
                           passed, "; ".join(msgs), dt)


def c06_deformation_invariance(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    ok = True
    worst_dd = 0.0
    msgs = []
    for surface_name, field in (("sphere", geo.height_field()), ("torus", geo.tilted_height_field(0.1))):
        mesh = _mesh(surface_name, 16)
        f = geo.sample_scalar(field, mesh)
        betti = ec.betti_numbers(mesh.complex)
        for t in (0.0, 1.0, 5.0, 10.0):
            dc = wt.deform(mesh.complex, mesh.inner, f, t)
            worst_dd = max(worst_dd, dc.dd_residual())
            dims = []
            for k in range(3):
                w, _ = wt.low_eigenpairs(dc, k, 8)
                dims.append(int(np.sum(w < 1e-8 * max(float(w[-1]), 1.0))))
            if dims != betti:
                ok = False
                msgs.append(f"{surface_name} t={t}: kernel dims {dims} != betti {betti}")
    dt = time.time() - t0
    passed = ok and worst_dd < 1e-12
    detail = f"d_t d_t residual {worst_dd:.2e}" + ("; " + "; ".join(msgs) if msgs else "")
    return CriterionResult("C06", "deformation leaves kernel dimensions at the Betti numbers",
                           passed, detail, dt)


def _torus32_sweep(t_grid=(1.0, 2.0, 4.0, 8.0, 16.0)):
    mesh = _mesh("torus", 32)
    field = geo.tilted_height_field(0.1)
    f = geo.sample_scalar(field, mesh)
    crits = geo.find_critical_points(geo.torus(), field)
    m_counts = [sum(1 for p in crits if p.index == k) for k in range(3)]
    counts_per_t = {}
    for t in t_grid:
        dc = wt.deform(mesh.complex, mesh.inner, f, t)
        c = wt.cluster_cutoff(dc)
        counts = [wt.low_spectrum(dc, k, c).count_below for k in range(3)]
        counts_per_t[t] = counts
    return mesh, f, crits, m_counts, counts_per_t


def c07_low_count_window(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    _, _, _, m_counts, counts_per_t = _torus32_sweep()
    window = [t for t, counts in counts_per_t.items() if counts == m_counts]
    passed = bool(window) and max(window) >= 2.0 * min(window)
    detail = (
        f"m = {m_counts}; counts {dict((t, c) for t, c in sorted(counts_per_t.items()))}; "
        f"window [{min(window) if window else '-'}, {max(window) if window else '-'}]"
    )
    return CriterionResult("C07", "low-eigenvalue counts equal Morse counts over a 2x window",
                           passed, detail, time.time() - t0)


def c08_projection_decay(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    mesh = _mesh("torus", 32)
    field = geo.tilted_height_field(0.1)
    f = geo.sample_scalar(field, mesh)
    crits = geo.find_critical_points(geo.torus(), field)
    make_dc = lambda t: wt.deform(mesh.complex, mesh.inner, f, t)
    table = wt.projection_decay(make_dc, mesh, crits, wt.cluster_cutoff,
                                [2.0, 4.0, 8.0, 16.0], radius_hops=6)
    ok = True
    msgs = []
    for lab, r in table.residuals.items():
        fi = table.floor_index[lab]
        head = r[: min(fi + 1, len(r))]
        strict = all(head[i] > head[i + 1] for i in range(len(head) - 1))
        ok = ok and strict and fi >= 1
        msgs.append(f"{lab}: {['%.3f' % x for x in r]} floor@{fi}")
    return CriterionResult("C08", "reference-state projection residuals decrease in t",
                           ok, "; ".join(msgs), time.time() - t0)


def c09_morse_inequalities(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    ok = True
    msgs = []
    for surface_name, field, expected_m in (
        ("sphere", geo.height_field(), [1, 0, 1]),
        ("torus", geo.tilted_height_field(0.1), [1, 2, 1]),
    ):
        surface = {"sphere": geo.sphere, "torus": geo.torus}[surface_name]()
        crits = geo.find_critical_points(surface, field)
        m = [sum(1 for p in crits if p.index == k) for k in range(3)]
        betti = ec.betti_numbers(_mesh(surface_name, 16).complex)
        verdicts = wt.morse_report(m, betti)
        ok = ok and m == expected_m and verdicts.all_hold
        msgs.append(f"{surface_name}: m={m}, betti={betti}, verdicts all hold: {verdicts.all_hold}")
    return CriterionResult("C09", "weak/strong Morse inequalities and top equality",
                           ok, "; ".join(msgs), time.time() - t0)


def c10_poincare_hopf(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    reps = {
        "sphere rotation": ix.poincare_hopf(geo.sphere(), geo.rotation_field()),
        "flat torus constant": ix.poincare_hopf(geo.flat_torus(), geo.constant_field()),
        "tilted torus gradient": ix.poincare_hopf(
            geo.torus(), geo.gradient_field(geo.torus(), geo.tilted_height_field(0.1))
        ),
    }
    expected = {"sphere rotation": 2, "flat torus constant": 0, "tilted torus gradient": 0}
    ok = all(rep.verdict and rep.total == expected[k] for k, rep in reps.items())
    detail = "; ".join(f"{k}: sum {rep.total} chi {rep.euler_from_cells}" for k, rep in reps.items())
    return CriterionResult("C10", "zero signs of vector fields sum to chi",
                           ok, detail, time.time() - t0)


def c11_thom_smale(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    ok = True
    msgs = []
    scenarios = [
        ("sphere", "height", 16, 5.0, [1, 0, 1]),
        ("sphere", "two_peak", 16, 8.0, [1, 0, 1]),
        ("torus", "tilted", 32, 8.0, [1, 2, 1]),
    ]
    for surface_name, field_key, res, t, expected in scenarios:
        md = _morse(surface_name, field_key)
        md.complex.validate()
        ranks = tsm.homology_ranks(md.complex)
        mesh = _mesh(surface_name, res)
        scalar = {
            "height": geo.height_field(),
            "two_peak": geo.two_peak_field(1.0),
            "tilted": geo.tilted_height_field(0.1),
        }[field_key]
        f = geo.sample_scalar(scalar, mesh)
        dc = wt.deform(mesh.complex, mesh.inner, f, t)
        cutoff = wt.cluster_cutoff(dc)
        inst = wt.instanton_complex(dc, cutoff)
        rep = tsm.p_infinity_matrix(inst, md, mesh, dc.weights)
        worst_cond = max(rep.condition_numbers.values())
        good = (
            ranks == expected
            and ranks == ec.betti_numbers(mesh.complex)
            and rep.full_rank
            and worst_cond < 1e6
        )
        ok = ok and good
        msgs.append(f"{surface_name}/{field_key}: ranks {ranks}, cell pairing cond {worst_cond:.2f}")
    dt = time.time() - t0
    passed = ok and dt < 120.0
    return CriterionResult("C11", "flow-line homology equals Betti; cell pairing full rank",
                           passed, "; ".join(msgs), dt)


def c12_semicharacteristic(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    rep = ix.atiyah_consistency(q=1, seed=seed)
    skew_ok = True
    for n in range(3, 9):
        out = ix.skew_parity_check(n, 1000, seed=seed + n)
        if out["violations"]:
            skew_ok = False
    fiber_all_t = all(
        cl.signature_fiber_checks(5, np.eye(5)[0], np.eye(5)[1], 0, t=t).min_eig_at_t > 0
        for t in (0.5, 1.0, 2.0, 5.0)
    )
    ok = (
        rep.kervaire.k_mod_2 == 0
        and skew_ok
        and fiber_all_t
        and np.isfinite(rep.fiber_random_grad.t_threshold)
        and rep.fiber_random_grad.positive_at_2t
    )
    detail = (
        f"k(T^5) = {rep.kervaire.k_mod_2} from betti {rep.betti}; skew parity 1000x6 clean: {skew_ok}; "
        f"fiber threshold (random grad) {rep.fiber_random_grad.t_threshold:.3f}"
    )
    return CriterionResult("C12", "semicharacteristic of T^5 vanishes; mod-2 parity machinery",
                           ok, detail, time.time() - t0)


def _determinism_payload(seed: int) -> bytes:
    buf = io.StringIO()
    rng = np.random.default_rng(seed)
    for n in (2, 3):
        for _ in range(50):
            e, ep = _unit(rng, n), _unit(rng, n)
            c, cp = cl.clifford_c(e).mat, cl.clifford_c(ep).mat
            buf.write(f"{float(np.abs(c @ cp + cp @ c + 2 * float(e @ ep) * np.eye(1 << n)).max()):.17e}\n")
    out = ix.skew_parity_check(5, 200, seed=seed)
    buf.write(json.dumps(out["kernel_dims"], sort_keys=True))
    rep = ix.poincare_hopf(geo.sphere(), geo.rotation_field())
    buf.write(json.dumps({"signs": list(rep.signs), "total": rep.total}, sort_keys=True))
    mesh = geo.triangulate(geo.torus(), 16)
    f = geo.sample_scalar(geo.tilted_height_field(0.1), mesh)
    dc = wt.deform(mesh.complex, mesh.inner, f, 4.0)
    entries = [wt.low_spectrum(dc, k, wt.cluster_cutoff(dc)) for k in range(3)]
    for e in entries:
        for i, val in enumerate(e.eigenvalues):
            buf.write(f"{e.degree},{i},{val:.17e}\n")
    return buf.getvalue().encode()


def c13_determinism(seed: int = 0) -> CriterionResult:
    t0 = time.time()
    first = _determinism_payload(seed)
    second = _determinism_payload(seed)
    ok = first == second
    return CriterionResult(
        "C13", "identical seeds give byte-identical reports",
        ok, f"payload {len(first)} bytes, runs {'match' if ok else 'differ'}", time.time() - t0,
    )


CRITERIA = [
    c01_clifford_relations,
    c02_localization_kernel,
    c03_involution_relations,
    c04_oscillator,
    c05_hodge_betti,
    c06_deformation_invariance,
    c07_low_count_window,
    c08_projection_decay,
    c09_morse_inequalities,
    c10_poincare_hopf,
    c11_thom_smale,
    c12_semicharacteristic,
    c13_determinism,
]

SUITES = {
    "all": list(range(1, 14)),
    "exterior_core": [5],
    "clifford": [1, 2, 3],
    "oscillator": [4],
    "witten": [6, 7, 8, 9],
    "indices": [10, 12],
    "thom_smale": [11],
    "determinism": [13],
}


def run_suite(name: str = "all", seed: int = 0):
    """Run a named suite; returns the list of CriterionResult."""
    if name not in SUITES:
        raise KeyError(f"unknown suite '{name}'; choose from {sorted(SUITES)}")
    results = []
    for idx in SUITES[name]:
        fn = CRITERIA[idx - 1]
        try:
            results.append(fn(seed=seed))
        except Exception as exc:  # a crash is a failure, not an abort
            results.append(
                CriterionResult(f"C{idx:02d}", fn.__name__, False, f"raised {exc!r}", 0.0)
            )
    return results


def report_dict(results, seed: int) -> dict:
    return {
        "schema": 1,
        "seed": seed,
        "results": [
            {"id": r.cid, "name": r.name, "passed": bool(r.passed), "details": r.details}
            for r in results
        ],
        "all_passed": bool(all(r.passed for r in results)),
    }
