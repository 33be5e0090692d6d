"""Parametrized test surfaces, Morse data, and triangulation.

Two closed surfaces are built in:

- the round unit sphere, covered by two stereographic charts related by
  the orientation-preserving inversion w = (u1, -u2) / |u|^2;
- the torus of revolution ("standing": tube circle centered on the
  y-z unit circle scaled by R), embedded as
  (x, y, z) = (r sin v, (R + r cos v) cos u, (R + r cos v) sin u),
  plus a flat single-chart torus with identity metric.

Scalar fields are supplied in closed ambient form (value, gradient,
Hessian); chart derivatives come from the chain rule with the chart
embedding's closed-form first and second derivatives.  Nothing here is
automatically differentiated, and every derivative is cross-checked
against finite differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import exterior_core as ec

NEWTON_TOL = 1e-12
GRAD_ZERO_TOL = 1e-10
DEGENERACY_MARGIN = 1e-6
DEDUP_DISTANCE = 1e-6


class DegenerateCriticalPointError(ValueError):
    """A converged critical point has |det Hess| below the margin."""


class DegenerateZeroError(ValueError):
    """A vector-field zero has |det A_p| below the margin."""


class MissedCriticalPointError(RuntimeError):
    """Residual scan suggests a critical point that Newton never reached."""


class MeshError(ValueError):
    """Triangulation failed (degenerate cell or wrong Euler number)."""


# ---------------------------------------------------------------------------
# charts and surfaces


@dataclass(frozen=True)
class Chart:
    """One parameter patch: closed-form embedding with derivatives.

    All three callables broadcast: a (..., 2) parameter array produces
    (..., 3), (..., 3, 2) and (..., 3, 2, 2) embeddings, Jacobians and
    second derivatives.
    """

    name: str
    embed: object      # (..., 2) -> (..., 3)
    jacobian: object   # (..., 2) -> (..., 3, 2)
    hessian: object    # (..., 2) -> (..., 3, 2, 2)
    periodic: bool = False
    seed_box: tuple = ((-1.2, 1.2), (-1.2, 1.2))
    switch_radius: float = math.inf  # leave chart when |u| exceeds this

    def metric(self, u) -> np.ndarray:
        j = self.jacobian(u)
        return np.einsum("...ca,...cb->...ab", j, j)

    def metric_jacobians(self, u):
        """d g / d u_d, index order (..., d, a, b)."""
        j = self.jacobian(u)
        h = self.hessian(u)
        out = []
        for d in range(2):
            hd = h[..., :, :, d]
            out.append(
                np.einsum("...ca,...cb->...ab", hd, j)
                + np.einsum("...ca,...cb->...ab", j, hd)
            )
        return np.stack(out, axis=-3)

    def orthonormal_frame(self, u) -> np.ndarray:
        """Columns: metric Gram-Schmidt of the chart axes (axis-1 first)."""
        g = self.metric(u)
        e1 = np.array([1.0, 0.0])
        e1 = e1 / math.sqrt(e1 @ g @ e1)
        e2 = np.array([0.0, 1.0])
        e2 = e2 - (e1 @ g @ e2) * e1
        e2 = e2 / math.sqrt(e2 @ g @ e2)
        return np.column_stack([e1, e2])


def solve2x2(g: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Batched 2x2 solve by the adjugate formula; g is (..., 2, 2)."""
    a, b = g[..., 0, 0], g[..., 0, 1]
    c, d = g[..., 1, 0], g[..., 1, 1]
    det = a * d - b * c
    x0 = (d * rhs[..., 0] - b * rhs[..., 1]) / det
    x1 = (-c * rhs[..., 0] + a * rhs[..., 1]) / det
    return np.stack([x0, x1], axis=-1)


def _rows3(rx, ry, rz):
    return np.stack([np.stack(rx, axis=-1), np.stack(ry, axis=-1), np.stack(rz, axis=-1)], axis=-2)


def _sphere_chart(name: str, flip: bool) -> Chart:
    """Stereographic chart; ``flip`` negates the y and z coordinates."""
    sy = -1.0 if flip else 1.0

    def embed(u):
        u = np.asarray(u, dtype=float)
        u1, u2 = u[..., 0], u[..., 1]
        d = 1.0 + u1 * u1 + u2 * u2
        return np.stack([2 * u1 / d, sy * 2 * u2 / d, -sy * (u1 * u1 + u2 * u2 - 1) / d], axis=-1)

    def jacobian(u):
        u = np.asarray(u, dtype=float)
        u1, u2 = u[..., 0], u[..., 1]
        d = 1.0 + u1 * u1 + u2 * u2
        d2 = d * d
        return _rows3(
            [(2 * d - 4 * u1 * u1) / d2, -4 * u1 * u2 / d2],
            [sy * (-4 * u1 * u2) / d2, sy * (2 * d - 4 * u2 * u2) / d2],
            [-sy * 4 * u1 / d2, -sy * 4 * u2 / d2],
        )

    def hessian(u):
        u = np.asarray(u, dtype=float)
        u1, u2 = u[..., 0], u[..., 1]
        d = 1.0 + u1 * u1 + u2 * u2
        d3 = d * d * d
        hx = np.stack(
            [
                np.stack([4 * u1 * (4 * u1 * u1 - 3 * d) / d3, 4 * u2 * (4 * u1 * u1 - d) / d3], axis=-1),
                np.stack([4 * u2 * (4 * u1 * u1 - d) / d3, 4 * u1 * (4 * u2 * u2 - d) / d3], axis=-1),
            ],
            axis=-2,
        )
        hy = sy * np.stack(
            [
                np.stack([4 * u2 * (4 * u1 * u1 - d) / d3, 4 * u1 * (4 * u2 * u2 - d) / d3], axis=-1),
                np.stack([4 * u1 * (4 * u2 * u2 - d) / d3, 4 * u2 * (4 * u2 * u2 - 3 * d) / d3], axis=-1),
            ],
            axis=-2,
        )
        hz = -sy * np.stack(
            [
                np.stack([(4 * d - 16 * u1 * u1) / d3, -16 * u1 * u2 / d3], axis=-1),
                np.stack([-16 * u1 * u2 / d3, (4 * d - 16 * u2 * u2) / d3], axis=-1),
            ],
            axis=-2,
        )
        return np.stack([hx, hy, hz], axis=-3)

    return Chart(
        name=name,
        embed=embed,
        jacobian=jacobian,
        hessian=hessian,
        seed_box=((-1.25, 1.25), (-1.25, 1.25)),
        switch_radius=1.6,
    )


def _torus_chart(R: float, r: float) -> Chart:
    def embed(u):
        u = np.asarray(u, dtype=float)
        uu, vv = u[..., 0], u[..., 1]
        ring = R + r * np.cos(vv)
        return np.stack([r * np.sin(vv), ring * np.cos(uu), ring * np.sin(uu)], axis=-1)

    def jacobian(u):
        u = np.asarray(u, dtype=float)
        uu, vv = u[..., 0], u[..., 1]
        ring = R + r * np.cos(vv)
        zero = np.zeros_like(uu)
        return _rows3(
            [zero, r * np.cos(vv)],
            [-ring * np.sin(uu), -r * np.sin(vv) * np.cos(uu)],
            [ring * np.cos(uu), -r * np.sin(vv) * np.sin(uu)],
        )

    def hessian(u):
        u = np.asarray(u, dtype=float)
        uu, vv = u[..., 0], u[..., 1]
        ring = R + r * np.cos(vv)
        zero = np.zeros_like(uu)
        hx = np.stack(
            [np.stack([zero, zero], -1), np.stack([zero, -r * np.sin(vv)], -1)], axis=-2
        )
        hy = np.stack(
            [
                np.stack([-ring * np.cos(uu), r * np.sin(vv) * np.sin(uu)], -1),
                np.stack([r * np.sin(vv) * np.sin(uu), -r * np.cos(vv) * np.cos(uu)], -1),
            ],
            axis=-2,
        )
        hz = np.stack(
            [
                np.stack([-ring * np.sin(uu), -r * np.sin(vv) * np.cos(uu)], -1),
                np.stack([-r * np.sin(vv) * np.cos(uu), -r * np.cos(vv) * np.sin(uu)], -1),
            ],
            axis=-2,
        )
        return np.stack([hx, hy, hz], axis=-3)

    return Chart(
        name="torus",
        embed=embed,
        jacobian=jacobian,
        hessian=hessian,
        periodic=True,
        seed_box=((0.0, 2 * math.pi), (0.0, 2 * math.pi)),
    )


def _flat_torus_chart() -> Chart:
    def embed(u):
        u = np.asarray(u, dtype=float)
        return np.stack([u[..., 0], u[..., 1], np.zeros_like(u[..., 0])], axis=-1)

    def jacobian(u):
        u = np.asarray(u, dtype=float)
        shape = u.shape[:-1]
        j = np.zeros(shape + (3, 2))
        j[..., 0, 0] = 1.0
        j[..., 1, 1] = 1.0
        return j

    def hessian(u):
        u = np.asarray(u, dtype=float)
        return np.zeros(u.shape[:-1] + (3, 2, 2))

    return Chart(
        name="flat",
        embed=embed,
        jacobian=jacobian,
        hessian=hessian,
        periodic=True,
        seed_box=((0.0, 2 * math.pi), (0.0, 2 * math.pi)),
    )


@dataclass(frozen=True)
class ParamSurface:
    name: str
    charts: tuple[Chart, ...]
    expected_euler: int
    diameter: float
    flat_metric: bool = False

    def wrap(self, chart_idx: int, u: np.ndarray) -> np.ndarray:
        if self.charts[chart_idx].periodic:
            return np.mod(u, 2 * math.pi)
        return u

    def transition(self, chart_idx: int, u: np.ndarray):
        """Move a point to the other chart (sphere) or wrap (torus)."""
        if len(self.charts) == 1:
            return chart_idx, self.wrap(chart_idx, u)
        rho = float(u @ u)
        if rho == 0.0:
            raise ValueError("chart origin is not in the overlap")
        return 1 - chart_idx, np.array([u[0] / rho, -u[1] / rho])

    def transition_jacobian(self, chart_idx: int, u: np.ndarray) -> np.ndarray:
        """Derivative of the chart transition at u (identity for tori)."""
        if len(self.charts) == 1:
            return np.eye(2)
        u1, u2 = float(u[0]), float(u[1])
        rho = u1 * u1 + u2 * u2
        return np.array(
            [
                [(u2 * u2 - u1 * u1), -2 * u1 * u2],
                [2 * u1 * u2, (u2 * u2 - u1 * u1)],
            ]
        ) / (rho * rho)

    def orientation_sign(self, chart_idx: int) -> int:
        """+1 when the chart (u1, u2) order matches the global orientation."""
        return self._orient[chart_idx]

    def __post_init__(self):
        signs = []
        for chart in self.charts:
            u = np.array([0.37, 0.23]) if not chart.periodic else np.array([0.9, 2.1])
            j = chart.jacobian(u)
            normal = np.cross(j[:, 0], j[:, 1])
            if self.name == "sphere":
                outward = chart.embed(u)
            elif self.name == "torus":
                p = chart.embed(u)
                center_dir = np.array([0.0, p[1], p[2]])
                center_dir = center_dir / np.linalg.norm(center_dir)
                outward = p - _TORUS_R * center_dir
            else:
                outward = np.array([0.0, 0.0, 1.0])
            signs.append(1 if float(normal @ outward) > 0 else -1)
        object.__setattr__(self, "_orient", tuple(signs))


_TORUS_R = 2.0
_TORUS_r = 1.0


def sphere() -> ParamSurface:
    return ParamSurface(
        name="sphere",
        charts=(_sphere_chart("north-centered", flip=False), _sphere_chart("south-centered", flip=True)),
        expected_euler=2,
        diameter=2.0,
    )


def torus(R: float = _TORUS_R, r: float = _TORUS_r) -> ParamSurface:
    return ParamSurface(
        name="torus",
        charts=(_torus_chart(R, r),),
        expected_euler=0,
        diameter=2 * (R + r),
    )


def flat_torus() -> ParamSurface:
    return ParamSurface(
        name="flat_torus",
        charts=(_flat_torus_chart(),),
        expected_euler=0,
        diameter=2 * math.pi,
        flat_metric=True,
    )


# ---------------------------------------------------------------------------
# scalar fields (ambient closed forms + chain rule through the chart)


@dataclass(frozen=True)
class ScalarField:
    """Closed-form scalar field: ambient value, gradient, Hessian.

    The ambient callables broadcast over leading axes of (..., 3) points.
    """

    name: str
    ambient_value: object    # (..., 3) -> (...)
    ambient_gradient: object  # (..., 3) -> (..., 3)
    ambient_hessian: object   # (..., 3) -> (..., 3, 3)

    def value(self, chart: Chart, u) -> float:
        return float(self.ambient_value(chart.embed(np.asarray(u, dtype=float))))

    def values(self, chart: Chart, us) -> np.ndarray:
        return np.asarray(self.ambient_value(chart.embed(np.asarray(us, dtype=float))))

    def chart_gradient(self, chart: Chart, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        p = chart.embed(u)
        return np.einsum("...ca,...c->...a", chart.jacobian(u), self.ambient_gradient(p))

    def chart_hessian(self, chart: Chart, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        p = chart.embed(u)
        j = chart.jacobian(u)
        h_emb = chart.hessian(u)
        grad = self.ambient_gradient(p)
        hess = np.einsum("...ca,...cd,...db->...ab", j, self.ambient_hessian(p), j)
        return hess + np.einsum("...c,...cab->...ab", grad, h_emb)


def height_field() -> ScalarField:
    return ScalarField(
        "height",
        ambient_value=lambda p: p[..., 2],
        ambient_gradient=lambda p: np.broadcast_to(np.array([0.0, 0.0, 1.0]), p.shape).copy(),
        ambient_hessian=lambda p: np.zeros(p.shape + (3,)),
    )


def tilted_height_field(eps: float = 0.1) -> ScalarField:
    return ScalarField(
        f"tilted_height[{eps}]",
        ambient_value=lambda p: p[..., 2] + eps * p[..., 0],
        ambient_gradient=lambda p: np.broadcast_to(np.array([eps, 0.0, 1.0]), p.shape).copy(),
        ambient_hessian=lambda p: np.zeros(p.shape + (3,)),
    )


def two_peak_field(a: float = 1.0) -> ScalarField:
    """Height plus a * y^2: on the sphere, two maxima, one saddle, one minimum."""

    def grad(p):
        out = np.zeros_like(p)
        out[..., 1] = 2.0 * a * p[..., 1]
        out[..., 2] = 1.0
        return out

    def hess(p):
        h = np.zeros(p.shape + (3,))
        h[..., 1, 1] = 2.0 * a
        return h

    return ScalarField(
        f"two_peak[{a}]",
        ambient_value=lambda p: p[..., 2] + a * p[..., 1] ** 2,
        ambient_gradient=grad,
        ambient_hessian=hess,
    )


def height_squared_field() -> ScalarField:
    """z^2; degenerate along the equator of the sphere (not Morse)."""

    def grad(p):
        out = np.zeros_like(p)
        out[..., 2] = 2.0 * p[..., 2]
        return out

    def hess(p):
        h = np.zeros(p.shape + (3,))
        h[..., 2, 2] = 2.0
        return h

    return ScalarField(
        "height_squared",
        ambient_value=lambda p: p[..., 2] ** 2,
        ambient_gradient=grad,
        ambient_hessian=hess,
    )


# ---------------------------------------------------------------------------
# vector fields


@dataclass(frozen=True)
class VectorField:
    """Chart-wise components with closed-form Jacobian d V^a / d u^b."""

    name: str
    components: object  # (chart_idx, u) -> (2,)
    jacobian: object    # (chart_idx, u) -> (2, 2)


def rotation_field() -> VectorField:
    """Generator of rotation about the z axis on the sphere."""

    def comp(chart_idx, u):
        if chart_idx == 0:
            return np.array([-u[1], u[0]])
        return np.array([u[1], -u[0]])

    def jac(chart_idx, u):
        if chart_idx == 0:
            return np.array([[0.0, -1.0], [1.0, 0.0]])
        return np.array([[0.0, 1.0], [-1.0, 0.0]])

    return VectorField("rotation", comp, jac)


def constant_field(c1: float = 1.0, c2: float = 0.0) -> VectorField:
    return VectorField(
        f"constant[{c1},{c2}]",
        components=lambda chart_idx, u: np.array([c1, c2]),
        jacobian=lambda chart_idx, u: np.zeros((2, 2)),
    )


def gradient_field(surface: ParamSurface, scalar: ScalarField) -> VectorField:
    """The metric gradient of a scalar field, with exact chart Jacobian."""

    def comp(chart_idx, u):
        chart = surface.charts[chart_idx]
        g = chart.metric(u)
        return np.linalg.solve(g, scalar.chart_gradient(chart, u))

    def jac(chart_idx, u):
        chart = surface.charts[chart_idx]
        g = chart.metric(u)
        ginv = np.linalg.inv(g)
        grad = scalar.chart_gradient(chart, u)
        hess = scalar.chart_hessian(chart, u)
        dg = chart.metric_jacobians(u)  # (d, a, b)
        out = ginv @ hess  # columns: derivative directions
        for d in range(2):
            out[:, d] += (-ginv @ dg[d] @ ginv) @ grad
        return out

    return VectorField(f"grad[{scalar.name}]", comp, jac)


# ---------------------------------------------------------------------------
# critical points and vector-field zeros


def _eigvec_sign_fix(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        i = int(np.argmax(np.abs(col)))
        if col[i] < 0:
            out[:, j] = -col
    return out


@dataclass(frozen=True)
class CriticalPoint:
    chart_idx: int
    params: np.ndarray
    position: np.ndarray
    value: float
    index: int
    frame: np.ndarray            # chart-coordinate columns, g-orthonormal
    hessian_frame: np.ndarray    # symmetric 2x2 in that frame
    eigenvalues: np.ndarray      # ascending
    eigenvectors: np.ndarray     # frame coordinates, columns, sign-fixed
    nondegeneracy_margin: float

    @property
    def negative_directions(self) -> np.ndarray:
        """Chart-coordinate unstable directions (columns), one per negative eigenvalue."""
        neg = self.eigenvectors[:, self.eigenvalues < 0]
        return self.frame @ neg


@dataclass(frozen=True)
class VectorFieldZero:
    chart_idx: int
    params: np.ndarray
    position: np.ndarray
    jacobian: np.ndarray  # rows = directional derivatives along the frame
    sign: int


def _newton(surface, value_fn, jac_fn, chart_idx, u0, max_iter=60):
    """Damped Newton for a 2-d root problem with chart switching."""
    u = np.array(u0, dtype=float)
    ci = chart_idx
    for _ in range(max_iter):
        chart = surface.charts[ci]
        v = value_fn(ci, u)
        if not np.all(np.isfinite(v)):
            return None
        if np.linalg.norm(v) < NEWTON_TOL:
            return ci, surface.wrap(ci, u)
        j = jac_fn(ci, u)
        try:
            step = np.linalg.solve(j, -v)
        except np.linalg.LinAlgError:
            return None
        nrm = np.linalg.norm(step)
        if nrm > 0.5:
            step *= 0.5 / nrm
        u = u + step
        if not chart.periodic and np.linalg.norm(u) > chart.switch_radius:
            ci, u = surface.transition(ci, u)
        u = surface.wrap(ci, u)
    chartf = surface.charts[ci]
    if np.linalg.norm(value_fn(ci, u)) < NEWTON_TOL:
        return ci, surface.wrap(ci, u)
    return None


def _seed_grid(chart: Chart, density: int):
    (a0, a1), (b0, b1) = chart.seed_box
    if chart.periodic:
        xs = np.linspace(a0, a1, density, endpoint=False) + (a1 - a0) / (2 * density)
        ys = np.linspace(b0, b1, density, endpoint=False) + (b1 - b0) / (2 * density)
    else:
        xs = np.linspace(a0, a1, density)
        ys = np.linspace(b0, b1, density)
    return [(x, y) for x in xs for y in ys]


def _dedup(surface, found):
    out = []
    for item in found:
        pos = item[2]
        if all(np.linalg.norm(pos - prev[2]) > DEDUP_DISTANCE for prev in out):
            out.append(item)
    return out


def find_critical_points(surface: ParamSurface, scalar: ScalarField, density: int = 24):
    """Newton from a seed grid; returns deduplicated, validated critical points."""

    def value_fn(ci, u):
        return scalar.chart_gradient(surface.charts[ci], u)

    def jac_fn(ci, u):
        return scalar.chart_hessian(surface.charts[ci], u)

    found = []
    for ci, chart in enumerate(surface.charts):
        for u0 in _seed_grid(chart, density):
            res = _newton(surface, value_fn, jac_fn, ci, u0)
            if res is None:
                continue
            cf, uf = res
            pos = surface.charts[cf].embed(uf)
            found.append((cf, uf, pos))
    found = _dedup(surface, found)

    points = []
    for cf, uf, pos in found:
        chart = surface.charts[cf]
        grad = scalar.chart_gradient(chart, uf)
        frame = chart.orthonormal_frame(uf)
        hess_frame = frame.T @ scalar.chart_hessian(chart, uf) @ frame
        hess_frame = 0.5 * (hess_frame + hess_frame.T)
        margin = abs(float(np.linalg.det(hess_frame)))
        if margin <= DEGENERACY_MARGIN:
            raise DegenerateCriticalPointError(
                f"critical point at {pos} has |det Hess| = {margin:.2e} <= {DEGENERACY_MARGIN}"
            )
        if np.linalg.norm(grad) >= GRAD_ZERO_TOL:
            continue
        w, v = np.linalg.eigh(hess_frame)
        v = _eigvec_sign_fix(v)
        points.append(
            CriticalPoint(
                chart_idx=cf,
                params=uf,
                position=pos,
                value=scalar.value(chart, uf),
                index=int(np.sum(w < 0)),
                frame=frame,
                hessian_frame=hess_frame,
                eigenvalues=w,
                eigenvectors=v,
                nondegeneracy_margin=margin,
            )
        )
    points.sort(key=lambda p: (p.value, p.index))
    _scan_for_missed(surface, scalar, points, density)
    return points


def _scan_for_missed(surface, scalar, points, density):
    """Residual sweep: gradient minima far from every found point are errors."""
    for ci, chart in enumerate(surface.charts):
        us = np.array(_seed_grid(chart, 2 * density))
        norms = np.linalg.norm(scalar.chart_gradient(chart, us), axis=-1)
        suspicious = us[norms < 1e-4]
        for u in suspicious:
            pos = chart.embed(u)
            if all(np.linalg.norm(pos - p.position) > 0.2 for p in points):
                raise MissedCriticalPointError(
                    f"gradient nearly vanishes at {pos} but no critical point was found there"
                )


def find_vector_field_zeros(surface: ParamSurface, vfield: VectorField, density: int = 24):
    """Zeros of a chart-wise vector field with signs from frame Jacobians."""
    found = []
    for ci, chart in enumerate(surface.charts):
        for u0 in _seed_grid(chart, density):
            res = _newton(surface, vfield.components, vfield.jacobian, ci, u0)
            if res is None:
                continue
            cf, uf = res
            pos = surface.charts[cf].embed(uf)
            found.append((cf, uf, pos))
    found = _dedup(surface, found)

    zeros = []
    for cf, uf, pos in found:
        chart = surface.charts[cf]
        frame = chart.orthonormal_frame(uf)
        j_chart = vfield.jacobian(cf, uf)
        a_cols = np.linalg.solve(frame, j_chart @ frame)
        a_rows = a_cols.T  # rows = derivative of V along frame directions
        det = float(np.linalg.det(a_rows))
        if abs(det) <= DEGENERACY_MARGIN:
            raise DegenerateZeroError(f"zero at {pos} has |det A| = {abs(det):.2e}")
        zeros.append(
            VectorFieldZero(
                chart_idx=cf,
                params=uf,
                position=pos,
                jacobian=a_rows,
                sign=1 if det > 0 else -1,
            )
        )
    zeros.sort(key=lambda z: (z.position[2], z.position[0], z.position[1]))
    return zeros


# ---------------------------------------------------------------------------
# triangulation


@dataclass(frozen=True)
class SurfaceMesh:
    """Oriented simplicial surface with lumped masses and chart bookkeeping."""

    surface: ParamSurface
    complex: ec.CellComplex
    inner: ec.InnerProductFamily
    positions: np.ndarray       # (V, 3)
    vertex_chart: np.ndarray    # (V,) chart index per vertex
    vertex_params: np.ndarray   # (V, 2)
    edges: np.ndarray           # (E, 2) sorted vertex pairs
    faces: np.ndarray           # (F, 3) sorted vertex triples
    areas: np.ndarray           # (F,)
    edge_lengths: np.ndarray    # (E,)
    _adjacency: object = field(default=None, repr=False)

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """b - a, minimum-image for the flat torus."""
        d = b - a
        if self.surface.flat_metric:
            d = (d + math.pi) % (2 * math.pi) - math.pi
            if d.shape[-1] == 3:
                d[..., 2] = 0.0
        return d

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.displacement(a, b), axis=-1)

    def nearest_vertex(self, point: np.ndarray) -> int:
        return int(np.argmin(self.distance(self.positions, point)))

    def edge_vectors(self) -> np.ndarray:
        return self.displacement(self.positions[self.edges[:, 0]], self.positions[self.edges[:, 1]])

    def edge_midpoints(self) -> np.ndarray:
        a = self.positions[self.edges[:, 0]]
        return a + 0.5 * self.displacement(a, self.positions[self.edges[:, 1]])

    def face_centroids(self) -> np.ndarray:
        a = self.positions[self.faces[:, 0]]
        b = a + self.displacement(a, self.positions[self.faces[:, 1]])
        c = a + self.displacement(a, self.positions[self.faces[:, 2]])
        return (a + b + c) / 3.0

    def vertex_adjacency(self) -> sp.csr_matrix:
        if self._adjacency is None:
            n = len(self.positions)
            i = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
            j = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
            adj = sp.csr_matrix((np.ones_like(i), (i, j)), shape=(n, n))
            object.__setattr__(self, "_adjacency", adj)
        return self._adjacency

    def graph_ball(self, v0: int, hops: int) -> np.ndarray:
        """Vertex indices within ``hops`` edges of v0."""
        dist = sp.csgraph.dijkstra(self.vertex_adjacency(), indices=v0, unweighted=True, limit=hops)
        return np.nonzero(np.isfinite(dist))[0]

    def graph_hops(self, v0: int) -> np.ndarray:
        return sp.csgraph.dijkstra(self.vertex_adjacency(), indices=v0, unweighted=True)


def _simplicial_complex_from_faces(n_vertices: int, tri_rows: list):
    """Build sorted-simplex boundary matrices from oriented triangles."""
    faces_sorted = []
    face_orient = []
    for tri in tri_rows:
        srt = tuple(sorted(tri))
        perm_parity = _permutation_parity(tri, srt)
        faces_sorted.append(srt)
        face_orient.append(1 if perm_parity == 0 else -1)
    order = np.argsort([f for f in faces_sorted], axis=0) if False else None
    idx = sorted(range(len(faces_sorted)), key=lambda i: faces_sorted[i])
    faces_sorted = [faces_sorted[i] for i in idx]
    face_orient = [face_orient[i] for i in idx]
    if len(set(faces_sorted)) != len(faces_sorted):
        raise MeshError("duplicate triangle")

    edge_set = sorted({(f[0], f[1]) for f in faces_sorted}
                      | {(f[0], f[2]) for f in faces_sorted}
                      | {(f[1], f[2]) for f in faces_sorted})
    edge_pos = {e: i for i, e in enumerate(edge_set)}

    rows, cols, vals = [], [], []
    for i, (a, b) in enumerate(edge_set):
        rows += [a, b]
        cols += [i, i]
        vals += [-1, 1]
    b1 = sp.csc_matrix((vals, (rows, cols)), shape=(n_vertices, len(edge_set)), dtype=np.int64)

    rows, cols, vals = [], [], []
    for i, (a, b, c) in enumerate(faces_sorted):
        rows += [edge_pos[(b, c)], edge_pos[(a, c)], edge_pos[(a, b)]]
        cols += [i, i, i]
        vals += [1, -1, 1]
    b2 = sp.csc_matrix((vals, (rows, cols)), shape=(len(edge_set), len(faces_sorted)), dtype=np.int64)

    complex = ec.CellComplex(
        (n_vertices, len(edge_set), len(faces_sorted)),
        (b1, b2),
        kind=ec.SIMPLICIAL,
        orientation=np.array(face_orient, dtype=np.int64),
    )
    return complex, np.array(edge_set, dtype=np.int64), np.array(faces_sorted, dtype=np.int64)


def _permutation_parity(tri, srt):
    perm = [srt.index(v) for v in tri]
    parity = 0
    for i in range(3):
        for j in range(i + 1, 3):
            if perm[i] > perm[j]:
                parity ^= 1
    return parity


_ICO_VERTS = None
_ICO_FACES = None


def _icosahedron():
    global _ICO_VERTS, _ICO_FACES
    if _ICO_VERTS is None:
        phi = (1 + math.sqrt(5)) / 2
        pts = []
        for a in (-1.0, 1.0):
            for b in (-phi, phi):
                pts += [(a, b, 0.0), (0.0, a, b), (b, 0.0, a)]
        verts = np.array(sorted(set(pts)))
        verts = verts / np.linalg.norm(verts, axis=1, keepdims=True)
        # faces: triples of mutually nearest vertices (icosahedron edge length)
        d2 = np.sum((verts[:, None, :] - verts[None, :, :]) ** 2, axis=-1)
        edge2 = np.sort(np.unique(np.round(d2, 9).ravel()))[1]
        adj = np.isclose(d2, edge2, atol=1e-6)
        faces = []
        n = len(verts)
        for i in range(n):
            for j in range(i + 1, n):
                if not adj[i, j]:
                    continue
                for k in range(j + 1, n):
                    if adj[i, k] and adj[j, k]:
                        faces.append((i, j, k))
        _ICO_VERTS, _ICO_FACES = verts, faces
    return _ICO_VERTS, list(_ICO_FACES)


def _subdivide(verts: np.ndarray, faces: list, levels: int):
    verts = [tuple(v) for v in verts]
    for _ in range(levels):
        pos = {v: i for i, v in enumerate(verts)}
        midcache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midcache:
                m = (np.array(verts[i]) + np.array(verts[j])) / 2.0
                m = tuple(m / np.linalg.norm(m))
                if m not in pos:
                    pos[m] = len(verts)
                    verts.append(m)
                midcache[key] = pos[m]
            return midcache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts), faces


def _orient_outward_sphere(verts, faces):
    out = []
    for a, b, c in faces:
        n = np.cross(verts[b] - verts[a], verts[c] - verts[a])
        centroid = (verts[a] + verts[b] + verts[c]) / 3.0
        out.append((a, b, c) if float(n @ centroid) > 0 else (a, c, b))
    return out


def _sphere_vertex_chart(verts):
    """Assign each vertex the stereographic chart where it sits comfortably.

    Chart 0 has the north pole at its origin (singular at the south pole);
    chart 1 is the mirrored chart centered on the south pole.
    """
    chart = (verts[:, 2] < 0.0).astype(np.int64)
    params = np.empty((len(verts), 2))
    for i, p in enumerate(verts):
        x, y, z = p
        if chart[i] == 0:
            denom = 1.0 + z
            params[i] = (x / denom, y / denom)
        else:
            denom = 1.0 - z
            params[i] = (x / denom, -y / denom)
    return chart, params


def triangulate(surface: ParamSurface, resolution: int) -> SurfaceMesh:
    """Triangulate a built-in surface; lumped masses from cell measures.

    For the sphere, ``resolution`` maps to an icosahedron subdivision level
    (roughly ``5 * 2^level`` segments around the equator); for tori it is the
    grid size per chart direction.
    """
    if resolution < 8:
        raise MeshError("resolution must be at least 8")
    if surface.name == "sphere":
        level = max(1, math.ceil(math.log2(resolution / 5)))
        verts, faces = _subdivide(*_icosahedron(), levels=level)
        faces = _orient_outward_sphere(verts, faces)
        vchart, vparams = _sphere_vertex_chart(verts)
        positions = verts
    else:
        res = resolution
        us = 2 * math.pi * np.arange(res) / res
        vs = 2 * math.pi * np.arange(res) / res
        uu, vv = np.meshgrid(us, vs, indexing="ij")
        vparams = np.stack([uu.ravel(), vv.ravel()], axis=1)
        vchart = np.zeros(res * res, dtype=np.int64)
        positions = surface.charts[0].embed(vparams)
        faces = []
        for i in range(res):
            for j in range(res):
                v00 = i * res + j
                v10 = ((i + 1) % res) * res + j
                v01 = i * res + (j + 1) % res
                v11 = ((i + 1) % res) * res + (j + 1) % res
                faces.append((v00, v10, v11))
                faces.append((v00, v11, v01))

    complex, edges, faces_sorted = _simplicial_complex_from_faces(len(positions), faces)

    flat = surface.flat_metric

    def disp(a, b):
        d = b - a
        if flat:
            d = (d + math.pi) % (2 * math.pi) - math.pi
        return d

    pa = positions[faces_sorted[:, 0]]
    pb = pa + disp(pa, positions[faces_sorted[:, 1]])
    pc = pa + disp(pa, positions[faces_sorted[:, 2]])
    cross = np.cross(pb - pa, pc - pa)
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    if np.any(areas < 1e-12):
        raise MeshError("degenerate triangle (area < 1e-12)")

    ea = positions[edges[:, 0]]
    eb = ea + disp(ea, positions[edges[:, 1]])
    edge_lengths = np.linalg.norm(eb - ea, axis=1)

    n_v, n_e, n_f = complex.cells_per_dim
    m0 = np.zeros(n_v)
    m1 = np.zeros(n_e)
    edge_pos = {tuple(e): i for i, e in enumerate(edges)}
    for fi, (a, b, c) in enumerate(faces_sorted):
        share = areas[fi] / 3.0
        m0[[a, b, c]] += share
        for e in ((a, b), (a, c), (b, c)):
            m1[edge_pos[e]] += share
    m1 = m1 / edge_lengths**2
    m2 = 1.0 / areas
    inner = ec.InnerProductFamily((m0, m1, m2))

    mesh = SurfaceMesh(
        surface=surface,
        complex=complex,
        inner=inner,
        positions=np.asarray(positions, dtype=float),
        vertex_chart=vchart,
        vertex_params=vparams,
        edges=edges,
        faces=faces_sorted,
        areas=areas,
        edge_lengths=edge_lengths,
    )
    chi = ec.euler_characteristic(complex, check=False)
    if chi != surface.expected_euler:
        raise MeshError(f"triangulation has chi = {chi}, expected {surface.expected_euler}")
    return mesh


def sample_scalar(scalar: ScalarField, mesh: SurfaceMesh) -> np.ndarray:
    """Exact field values at mesh vertices via their chart parameters."""
    out = np.empty(len(mesh.positions))
    for ci, chart in enumerate(mesh.surface.charts):
        mask = mesh.vertex_chart == ci
        if np.any(mask):
            out[mask] = scalar.values(chart, mesh.vertex_params[mask])
    return out
