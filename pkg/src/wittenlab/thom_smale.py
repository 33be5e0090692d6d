"""Gradient flows, connecting orbits with signs, and the Thom-Smale complex.

The negative gradient flow dy/ds = -grad f connects critical points of a
Morse function.  For index difference one, the connecting orbits are
isolated (under the Morse-Smale transversality assumption, which is checked
at runtime, never constructed); counting them with orientation signs
n_gamma gives integer boundary matrices

    bd W^u(p) = sum_q sum_gamma n_gamma(p, q) W^u(q)

whose homology reproduces the Betti numbers of the surface.  The pairing
of low-spectrum eigencochains with unstable cells (point values, Whitney
line integrals along traced orbits, signed face sums over flow basins)
gives the finite-dimensional cell-integration map whose full rank is the
rank-level content of the de Rham comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import exterior_core as ec
from . import geometry as geo
from .exactrank import integer_rank

GRAD_STOP = 1e-8
ENDPOINT_TOL = 1e-6
TANGENT_ANGLE_TOL = 1e-3


class TransversalityError(RuntimeError):
    """Flow structure incompatible with the Morse-Smale assumption."""


class FlowBudgetError(RuntimeError):
    """Arc-length budget exhausted before convergence."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class MarkingQualityError(RuntimeError):
    """Unstable-cell marking does not cover the expected measure."""


@dataclass(frozen=True)
class FlowLine:
    chart_ids: np.ndarray     # (T,)
    chart_points: np.ndarray  # (T, 2)
    points: np.ndarray        # (T, 3) embedded samples
    f_values: np.ndarray      # (T,)
    arc_length: float
    converged: bool
    sink: int                 # index into the problem's critical point list
    source: int
    branch_sign: int = 0      # +-1 when seeded along a signed eigendirection
    reversed_from_uphill: bool = False


@dataclass(frozen=True)
class ConnectionSet:
    p: int
    q: int
    lines: tuple[FlowLine, ...]
    signs: tuple[int, ...]


@dataclass(frozen=True)
class ThomSmaleComplex:
    generators: tuple[tuple[int, ...], ...]   # per Morse index: critical point ids
    boundaries: tuple[np.ndarray, ...]        # integer bd_i: C_i -> C_{i-1}

    def validate(self) -> None:
        for i in range(1, len(self.boundaries)):
            prod = self.boundaries[i - 1] @ self.boundaries[i]
            if prod.size and np.any(prod != 0):
                raise TransversalityError(
                    f"bd bd != 0 between indices {i + 1} and {i - 1}: {prod}"
                )


class MorseFlowProblem:
    """A surface, a Morse function, its critical points, and flow controls."""

    def __init__(self, surface: geo.ParamSurface, scalar: geo.ScalarField, critical_points=None):
        self.surface = surface
        self.scalar = scalar
        self.critical_points = (
            critical_points
            if critical_points is not None
            else geo.find_critical_points(surface, scalar)
        )
        self.step_length = 0.02 * surface.diameter
        self.dt_max = 0.5
        self.budget = 40.0 * surface.diameter

    def metric_gradient(self, ci: int, u: np.ndarray) -> np.ndarray:
        chart = self.surface.charts[ci]
        return np.linalg.solve(chart.metric(u), self.scalar.chart_gradient(chart, u))

    def metric_gradient_many(self, ci: np.ndarray, us: np.ndarray, active=None):
        """Batched gradient field and metric speeds for mixed-chart states."""
        n = len(us)
        out = np.zeros_like(us)
        speeds = np.zeros(n)
        if active is None:
            active = np.ones(n, dtype=bool)
        for c in np.unique(ci[active]):
            mask = active & (ci == c)
            chart = self.surface.charts[c]
            g = chart.metric(us[mask])
            grad = self.scalar.chart_gradient(chart, us[mask])
            v = geo.solve2x2(g, grad)
            out[mask] = v
            speeds[mask] = np.sqrt(
                np.maximum(np.einsum("...a,...ab,...b->...", v, g, v), 1e-300)
            )
        return out, speeds

    def gradient_norm(self, ci: int, u: np.ndarray) -> float:
        chart = self.surface.charts[ci]
        v = self.metric_gradient(ci, u)
        return float(math.sqrt(v @ chart.metric(u) @ v))

    def nearest_critical(self, pos: np.ndarray) -> int:
        d = [np.linalg.norm(self._crit_disp(p.position, pos)) for p in self.critical_points]
        return int(np.argmin(d))

    def _crit_disp(self, a, b):
        d = b - a
        if self.surface.flat_metric:
            d = (d + math.pi) % (2 * math.pi) - math.pi
        return d


def integrate_flow(
    problem: MorseFlowProblem,
    start_chart: int,
    start_u: np.ndarray,
    direction: int = -1,
    source: int = -1,
    branch_sign: int = 0,
    record_every: int = 1,
) -> FlowLine:
    """Fourth-order adaptive integration of dy/ds = direction * grad f.

    Steps are arc-length controlled far from critical points and switch to a
    fixed time step near them; f must change monotonically at every accepted
    step (Lyapunov check), and integration stops once |grad f| < 1e-8.
    """
    if direction not in (-1, 1):
        raise ValueError("direction must be -1 (downhill) or +1 (uphill)")
    surface = problem.surface
    ci = int(start_chart)
    u = np.array(start_u, dtype=float)
    if problem.gradient_norm(ci, u) < GRAD_STOP:
        raise ValueError("flow must not start at a critical point")

    chart_ids = [ci]
    chart_points = [u.copy()]
    points = [surface.charts[ci].embed(u)]
    f_values = [problem.scalar.value(surface.charts[ci], u)]
    arc = 0.0
    converged = False
    max_steps = 100000

    for step in range(max_steps):
        chart = surface.charts[ci]
        v = direction * problem.metric_gradient(ci, u)
        speed = math.sqrt(max(v @ chart.metric(u) @ v, 1e-300))
        if speed < GRAD_STOP:
            converged = True
            break
        dt = min(problem.dt_max, problem.step_length / speed)
        ok = False
        for _ in range(40):
            k1 = v
            k2 = direction * problem.metric_gradient(ci, u + 0.5 * dt * k1)
            k3 = direction * problem.metric_gradient(ci, u + 0.5 * dt * k2)
            k4 = direction * problem.metric_gradient(ci, u + dt * k3)
            u_new = u + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            f_new = problem.scalar.value(chart, u_new)
            df = direction * (f_new - f_values[-1])
            if df >= -1e-12 * max(1.0, abs(f_values[-1])):
                ok = True
                break
            dt *= 0.5
        if not ok:
            raise FlowBudgetError("step control failed to keep f monotone")
        pos_new = surface.charts[ci].embed(u_new)
        arc += float(np.linalg.norm(problem._crit_disp(points[-1], pos_new)))
        u = surface.wrap(ci, u_new)
        if not chart.periodic and np.linalg.norm(u) > chart.switch_radius:
            ci, u = surface.transition(ci, u)
        if step % record_every == 0 or speed < 1e-6:
            chart_ids.append(ci)
            chart_points.append(u.copy())
            points.append(surface.charts[ci].embed(u))
            f_values.append(problem.scalar.value(surface.charts[ci], u))
        else:
            chart_ids[-1] = ci
            chart_points[-1] = u.copy()
            points[-1] = surface.charts[ci].embed(u)
            f_values[-1] = problem.scalar.value(surface.charts[ci], u)
        if arc > problem.budget:
            line = _pack_line(chart_ids, chart_points, points, f_values, arc, False, -1, source, branch_sign)
            raise FlowBudgetError("arc-length budget exhausted (separatrix drift?)", line)

    if not converged and problem.gradient_norm(ci, u) >= GRAD_STOP:
        line = _pack_line(chart_ids, chart_points, points, f_values, arc, False, -1, source, branch_sign)
        raise FlowBudgetError("no convergence within the step budget", line)

    sink = problem.nearest_critical(points[-1])
    sink_pos = problem.critical_points[sink].position
    if np.linalg.norm(problem._crit_disp(points[-1], sink_pos)) > 1e-4 * problem.surface.diameter:
        line = _pack_line(chart_ids, chart_points, points, f_values, arc, False, -1, source, branch_sign)
        raise FlowBudgetError("converged away from every known critical point", line)
    return _pack_line(chart_ids, chart_points, points, f_values, arc, True, sink, source, branch_sign)


def _pack_line(chart_ids, chart_points, points, f_values, arc, converged, sink, source, branch_sign):
    return FlowLine(
        chart_ids=np.array(chart_ids, dtype=np.int64),
        chart_points=np.array(chart_points),
        points=np.array(points),
        f_values=np.array(f_values),
        arc_length=float(arc),
        converged=converged,
        sink=sink,
        source=source,
        branch_sign=branch_sign,
    )


def _reverse_line(line: FlowLine, new_sink: int) -> FlowLine:
    return FlowLine(
        chart_ids=line.chart_ids[::-1].copy(),
        chart_points=line.chart_points[::-1].copy(),
        points=line.points[::-1].copy(),
        f_values=line.f_values[::-1].copy(),
        arc_length=line.arc_length,
        converged=line.converged,
        sink=new_sink,
        source=line.sink,
        branch_sign=line.branch_sign,
        reversed_from_uphill=True,
    )


def flow_sinks(problem: MorseFlowProblem, starts, direction: int = -1, target=None,
               stop_past_target: bool = False):
    """Lockstep classification of many trajectories.

    Returns sink ids (-2 for unresolved trajectories); with a ``target``
    point, also returns each trajectory's closest approach to it and the
    displacement (target -> trajectory) at that closest approach.  With
    ``stop_past_target`` a trajectory is abandoned once it has retreated
    well past its closest approach (cheap separatrix probing).
    """
    surface = problem.surface
    n = len(starts)
    ci = np.array([s[0] for s in starts], dtype=np.int64)
    us = np.array([s[1] for s in starts], dtype=float)
    done = np.zeros(n, dtype=bool)
    sinks = np.full(n, -2, dtype=np.int64)
    arcs = np.zeros(n)
    min_dist = np.full(n, np.inf)
    disp_at_min = np.zeros((n, 3))
    retreat = 0.1 * surface.diameter

    def rhs(u_arr, active):
        v, _ = problem.metric_gradient_many(ci, u_arr, active)
        return direction * v

    def track_targets(active):
        if target is None:
            return
        for c in np.unique(ci[active]):
            mask = active & (ci == c)
            pos = surface.charts[c].embed(us[mask])
            d = problem._crit_disp(np.broadcast_to(target, pos.shape), pos)
            dist = np.linalg.norm(d, axis=-1)
            idx = np.nonzero(mask)[0]
            better = dist < min_dist[idx]
            min_dist[idx[better]] = dist[better]
            disp_at_min[idx[better]] = d[better]

    track_targets(~done)

    max_steps = 40000
    for _ in range(max_steps):
        active = ~done
        if not active.any():
            break
        v, speeds = problem.metric_gradient_many(ci, us, active)
        v = direction * v
        conv = active & (speeds < GRAD_STOP)
        for i in np.nonzero(conv)[0]:
            pos = surface.charts[ci[i]].embed(us[i])
            k = problem.nearest_critical(pos)
            if np.linalg.norm(problem._crit_disp(pos, problem.critical_points[k].position)) \
                    < 1e-3 * surface.diameter:
                sinks[i] = k
            done[i] = True
        active = ~done
        if not active.any():
            break
        dts = np.where(active, np.minimum(problem.dt_max, problem.step_length / np.maximum(speeds, 1e-300)), 0.0)
        k1 = v
        k2 = rhs(us + 0.5 * dts[:, None] * k1, active)
        k3 = rhs(us + 0.5 * dts[:, None] * k2, active)
        k4 = rhs(us + dts[:, None] * k3, active)
        step = (dts[:, None] / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        us = np.where(active[:, None], us + step, us)
        arcs = arcs + np.where(active, speeds * dts, 0.0)
        done |= active & (arcs > problem.budget)
        # wrap / switch charts
        for c in np.unique(ci):
            mask = ci == c
            chart = surface.charts[c]
            if chart.periodic:
                us[mask] = np.mod(us[mask], 2 * math.pi)
            else:
                norms = np.linalg.norm(us[mask], axis=-1)
                far = np.nonzero(mask)[0][norms > chart.switch_radius]
                for i in far:
                    ci[i], us[i] = surface.transition(int(ci[i]), us[i])
        track_targets(~done)
        if stop_past_target and target is not None:
            active = ~done
            if active.any():
                for c in np.unique(ci[active]):
                    mask = active & (ci == c)
                    pos = surface.charts[c].embed(us[mask])
                    d = np.linalg.norm(
                        problem._crit_disp(np.broadcast_to(target, pos.shape), pos), axis=-1
                    )
                    idx = np.nonzero(mask)[0]
                    done[idx[d > min_dist[idx] + retreat]] = True
    if target is None:
        return sinks
    return sinks, min_dist, disp_at_min


def _unstable_seed(problem, p_id, sign, eps=1e-3, column=0):
    p = problem.critical_points[p_id]
    w = p.negative_directions[:, column]
    return p.chart_idx, p.params + sign * eps * w


def _stable_seed(problem, q_id, sign, eps=1e-3):
    q = problem.critical_points[q_id]
    pos = q.eigenvectors[:, q.eigenvalues > 0]
    w = (q.frame @ pos)[:, 0]
    return q.chart_idx, q.params + sign * eps * w


def connections(
    problem: MorseFlowProblem,
    p_id: int,
    q_id: int,
    n_samples: int = 512,
    eps: float = 1e-3,
    verify_doubling: bool = True,
) -> ConnectionSet:
    """Connecting orbits from p to q when index drops by one.

    Index-1 sources shoot both unstable directions; index-2 sources locate
    separatrix directions by sink changes on the sampled unstable circle and
    realize each orbit by uphill integration from the saddle's stable
    directions.  Counts must agree between methods and be stable under
    doubling the sample density.
    """
    crits = problem.critical_points
    p, q = crits[p_id], crits[q_id]
    if q.index != p.index - 1:
        raise ValueError("connections need index difference one")

    if p.index == 1:
        lines = []
        for sign in (+1, -1):
            ci, u0 = _unstable_seed(problem, p_id, sign, eps)
            line = integrate_flow(problem, ci, u0, direction=-1, source=p_id, branch_sign=sign)
            sink = crits[line.sink]
            if sink.index >= p.index:
                raise TransversalityError(
                    f"unstable manifold of an index-1 point flows into index-{sink.index} "
                    f"point at {sink.position}; Morse-Smale condition violated"
                )
            lines.append(line)
        keep = tuple(l for l in lines if l.sink == q_id)
        signs = tuple(l.branch_sign for l in keep)
        return ConnectionSet(p=p_id, q=q_id, lines=keep, signs=signs)

    if p.index != 2:
        raise ValueError("surface connections support source indices 1 and 2")

    boundary_count = _count_separatrices(problem, p_id, q_id, n_samples, eps)
    if verify_doubling:
        doubled = _count_separatrices(problem, p_id, q_id, 2 * n_samples, eps)
        if doubled != boundary_count:
            raise TransversalityError(
                f"separatrix count unstable under sample doubling: {boundary_count} vs {doubled}"
            )

    lines = []
    for sign in (+1, -1):
        ci, u0 = _stable_seed(problem, q_id, sign, eps)
        up = integrate_flow(problem, ci, u0, direction=+1, source=q_id, branch_sign=sign)
        top = crits[up.sink]
        if top.index != 2:
            raise TransversalityError(
                f"stable manifold of an index-1 point climbs to index-{top.index}"
            )
        if up.sink == p_id:
            lines.append(_reverse_line(up, new_sink=q_id))
    if boundary_count != len(lines):
        raise TransversalityError(
            f"shooting finds {boundary_count} separatrices into the saddle, uphill "
            f"integration finds {len(lines)}"
        )
    signs = tuple(orientation_sign(problem, line) for line in lines)
    return ConnectionSet(p=p_id, q=q_id, lines=tuple(lines), signs=signs)


def _count_separatrices(problem, p_id, q_id, n_samples, eps):
    """Separatrix directions from the maximum p whose orbits enter saddle q.

    The closest approach d(theta) of the orbit shot at angle theta to q is
    continuous and vanishes exactly at separatrix angles; each prominent
    local dip of the sampled d is refined by lockstep golden-section until
    it reaches the saddle or provably bottoms out.  Sink identity alone
    cannot bracket these angles when both sides of a separatrix drain to
    the same minimum.
    """
    p = problem.critical_points[p_id]
    q = problem.critical_points[q_id]
    dirs = p.negative_directions  # (2, 2) chart columns
    hit_tol = 1e-3 * problem.surface.diameter

    offset = 0.2937 / n_samples  # avoid sampling a separatrix dead-on
    angles = 2 * math.pi * (np.arange(n_samples) + offset) / n_samples

    def start_of(a):
        return (p.chart_idx, p.params + eps * (math.cos(a) * dirs[:, 0] + math.sin(a) * dirs[:, 1]))

    _, dist, _ = flow_sinks(problem, [start_of(a) for a in angles],
                            direction=-1, target=q.position, stop_past_target=True)

    # prominent circular local minima of d(theta)
    win = max(3, n_samples // 16)
    step = 2 * math.pi / n_samples
    windows = []
    for i in range(n_samples):
        left = dist[(i - 1) % n_samples]
        right = dist[(i + 1) % n_samples]
        if not (dist[i] <= left and dist[i] <= right):
            continue
        around = [dist[(i + k) % n_samples] for k in range(-win, win + 1)]
        if dist[i] < 0.85 * max(around) or dist[i] < 0.05 * problem.surface.diameter:
            windows.append((angles[i] - step, angles[i] + step))

    found = _refine_dips(problem, start_of, q.position, windows, hit_tol)
    found = sorted(theta % (2 * math.pi) for theta in found)
    merged = []
    for theta in found:
        if not merged or min(abs(theta - merged[-1]), 2 * math.pi - abs(theta - merged[-1])) > 0.5 * step:
            merged.append(theta)
    if len(merged) >= 2:
        wrap = min(abs(merged[0] + 2 * math.pi - merged[-1]), abs(merged[-1] - merged[0]))
        if wrap <= 0.5 * step:
            merged.pop()
    return len(merged)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _refine_dips(problem, start_of, target, windows, hit_tol, rounds=48):
    """Lockstep golden-section descent on the closest-approach function.

    Every active window contributes one probe per round, so each round is a
    single vectorized flow evaluation.  A window succeeds when its approach
    distance drops below hit_tol; windows that stop improving are abandoned.
    """
    if not windows:
        return []
    state = []
    for a_lo, a_hi in windows:
        x1 = a_hi - _GOLDEN * (a_hi - a_lo)
        x2 = a_lo + _GOLDEN * (a_hi - a_lo)
        state.append({"lo": a_lo, "hi": a_hi, "x1": x1, "x2": x2,
                      "f1": None, "f2": None, "best": math.inf, "stall": 0,
                      "done": False, "hit": None})

    def batch_probe(queries):
        starts = [start_of(a) for _, a in queries]
        _, dist, _ = flow_sinks(problem, starts, direction=-1, target=target,
                                stop_past_target=True)
        return dist

    # initialize both interior points
    queries = [(i, s["x1"]) for i, s in enumerate(state)] + [
        (i, s["x2"]) for i, s in enumerate(state)
    ]
    dists = batch_probe(queries)
    n = len(state)
    for i, s in enumerate(state):
        s["f1"], s["f2"] = float(dists[i]), float(dists[n + i])
        s["best"] = min(s["f1"], s["f2"])

    for round_idx in range(rounds):
        queries = []
        for i, s in enumerate(state):
            if s["done"]:
                continue
            if min(s["f1"], s["f2"]) < hit_tol:
                s["done"] = True
                s["hit"] = s["x1"] if s["f1"] < s["f2"] else s["x2"]
                continue
            if s["hi"] - s["lo"] < 1e-13 or s["stall"] > 20:
                s["done"] = True
                continue
            if s["f1"] <= s["f2"]:
                s["hi"], s["x2"], s["f2"] = s["x2"], s["x1"], s["f1"]
                s["x1"] = s["hi"] - _GOLDEN * (s["hi"] - s["lo"])
                queries.append((i, s["x1"]))
            else:
                s["lo"], s["x1"], s["f1"] = s["x1"], s["x2"], s["f2"]
                s["x2"] = s["lo"] + _GOLDEN * (s["hi"] - s["lo"])
                queries.append((i, s["x2"]))
        if not queries:
            break
        dists = batch_probe(queries)
        for (i, a), d in zip(queries, dists):
            s = state[i]
            d = float(d)
            if a == s["x1"]:
                s["f1"] = d
            else:
                s["f2"] = d
            if d < 0.8 * s["best"]:
                s["best"] = d
                s["stall"] = 0
            else:
                s["stall"] += 1
    out = []
    for s in state:
        if s["hit"] is not None:
            out.append(s["hit"])
        elif min(s["f1"], s["f2"]) < hit_tol:
            out.append(s["x1"] if s["f1"] < s["f2"] else s["x2"])
    return out


# ---------------------------------------------------------------------------
# orientation signs


def _rotate90(chart: geo.Chart, u: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """+90 degree metric rotation preserving the chart orientation."""
    frame = chart.orthonormal_frame(u)
    coeff = np.linalg.solve(frame, vec)
    return frame @ np.array([-coeff[1], coeff[0]])


def _cell_orientation_sign(problem, p: geo.CriticalPoint) -> int:
    """Global orientation of the ordered negative eigenbasis of W^u(p)."""
    neg = p.eigenvectors[:, p.eigenvalues < 0]
    det = float(np.linalg.det(neg)) if neg.shape[1] == 2 else 1.0
    chart_orient = problem.surface.orientation_sign(p.chart_idx)
    return int(np.sign(det) * chart_orient)


def orientation_sign(problem: MorseFlowProblem, line: FlowLine, at_fraction: float = 0.5) -> int:
    """n_gamma for a max-to-saddle orbit via orientation transport.

    On the unstable side, s completes -grad f to an oriented basis of the
    transported W^u(p) orientation.  On the stable side, the chosen
    orientation of T_q W^u(q) is carried backward along the orbit as a
    coorientation of W^s(q).  The sign compares the two at a midpoint.
    For saddle-to-minimum orbits the sign is the seeded branch sign.
    """
    crits = problem.critical_points
    p = crits[line.source]
    if p.index == 1:
        if line.branch_sign == 0:
            raise ValueError("saddle orbit lacks branch bookkeeping")
        return line.branch_sign
    if p.index != 2:
        raise ValueError("orientation signs implemented for source indices 1 and 2")
    q = crits[line.sink]

    n_samples = len(line.points)
    mid = max(1, min(n_samples - 2, int(at_fraction * n_samples)))

    # stable side: transport the saddle's unstable orientation backward
    w_q = q.negative_directions[:, 0]
    ell = w_q.copy()
    chart_i = int(line.chart_ids[-1])
    if chart_i != q.chart_idx:
        jt = problem.surface.transition_jacobian(q.chart_idx, q.params)
        ell = jt @ ell
    for idx in range(n_samples - 1, mid - 1, -1):
        ci = int(line.chart_ids[idx])
        u = line.chart_points[idx]
        if idx < n_samples - 1 and int(line.chart_ids[idx + 1]) != ci:
            # the transition is an involution: the same Jacobian formula at
            # the source point pushes vectors back to the previous chart
            jt = problem.surface.transition_jacobian(
                int(line.chart_ids[idx + 1]), line.chart_points[idx + 1]
            )
            ell = jt @ ell
        g = problem.surface.charts[ci].metric(u)
        flow_dir = -problem.metric_gradient(ci, u)
        nrm = math.sqrt(max(flow_dir @ g @ flow_dir, 1e-300))
        if nrm < GRAD_STOP:
            continue
        flow_dir = flow_dir / nrm
        cand = _rotate90(problem.surface.charts[ci], u, flow_dir)
        inner = float(cand @ g @ ell)
        if abs(inner) < TANGENT_ANGLE_TOL * math.sqrt(float(cand @ g @ cand) * float(ell @ g @ ell)):
            raise TransversalityError("near-tangential intersection while transporting orientation")
        ell = cand * np.sign(inner)

    # unstable side at the midpoint
    ci = int(line.chart_ids[mid])
    u = line.chart_points[mid]
    chart = problem.surface.charts[ci]
    g = chart.metric(u)
    flow_dir = -problem.metric_gradient(ci, u)
    flow_dir = flow_dir / math.sqrt(max(flow_dir @ g @ flow_dir, 1e-300))
    sigma_p = _cell_orientation_sign(problem, p)
    s_vec = _rotate90(chart, u, flow_dir) * sigma_p * problem.surface.orientation_sign(ci)

    inner = float(s_vec @ g @ ell)
    denom = math.sqrt(float(s_vec @ g @ s_vec) * float(ell @ g @ ell))
    if abs(inner) < TANGENT_ANGLE_TOL * denom:
        raise TransversalityError("near-tangential orientation comparison")
    return int(np.sign(inner))


# ---------------------------------------------------------------------------
# complex assembly and homology


@dataclass(frozen=True)
class MorseData:
    problem: MorseFlowProblem
    complex: ThomSmaleComplex
    connection_sets: tuple[ConnectionSet, ...]
    saddle_curves: dict     # critical point id -> oriented unstable polyline


def build_complex(problem: MorseFlowProblem, n_samples: int = 512) -> MorseData:
    """Assemble the integer boundary matrices from counted orbits."""
    crits = problem.critical_points
    by_index = {}
    for i, p in enumerate(crits):
        by_index.setdefault(p.index, []).append(i)
    top = max(by_index) if by_index else 0
    generators = tuple(tuple(by_index.get(i, ())) for i in range(max(top + 1, 3)))

    conn_sets = []
    boundaries = []
    for i in range(1, len(generators)):
        rows = generators[i - 1]
        cols = generators[i]
        mat = np.zeros((len(rows), len(cols)), dtype=np.int64)
        for cj, p_id in enumerate(cols):
            for ri, q_id in enumerate(rows):
                cs = connections(problem, p_id, q_id, n_samples=n_samples)
                conn_sets.append(cs)
                mat[ri, cj] = sum(cs.signs)
        boundaries.append(mat)

    ts = ThomSmaleComplex(generators=generators, boundaries=tuple(boundaries))
    ts.validate()

    curves = {}
    for p_id in generators[1]:
        branches = {}
        for cs in conn_sets:
            if cs.p == p_id:
                for line in cs.lines:
                    branches[line.branch_sign] = line
        # unstable orbits that end at non-target sinks still belong to the curve
        for sign in (+1, -1):
            if sign not in branches:
                ci, u0 = _unstable_seed(problem, p_id, sign)
                branches[sign] = integrate_flow(problem, ci, u0, direction=-1,
                                                source=p_id, branch_sign=sign)
        minus = branches[-1]
        plus = branches[+1]
        pts = np.vstack([minus.points[::-1], plus.points])
        curves[p_id] = pts
    return MorseData(problem=problem, complex=ts, connection_sets=tuple(conn_sets), saddle_curves=curves)


def homology_ranks(ts: ThomSmaleComplex) -> list[int]:
    """Ranks over Q by exact integer elimination."""
    ts.validate()
    dims = [len(g) for g in ts.generators]
    ranks = [0] + [integer_rank(sp.csc_matrix(b)) if b.size else 0 for b in ts.boundaries] + [0]
    return [dims[i] - ranks[i] - ranks[i + 1] for i in range(len(dims))]


def export_flow_line_csv(path, line: FlowLine) -> None:
    """Polyline samples: index, chart, u1, u2, x, y, z, f."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "chart", "u1", "u2", "x", "y", "z", "f"])
        for i in range(len(line.points)):
            u = line.chart_points[i]
            p = line.points[i]
            writer.writerow(
                [i, int(line.chart_ids[i])]
                + [f"{v:.17g}" for v in (u[0], u[1], p[0], p[1], p[2], line.f_values[i])]
            )


def complex_to_json_dict(ts: ThomSmaleComplex) -> dict:
    """Generators grouped by Morse index plus integer boundary matrices."""
    return {
        "generators": [list(g) for g in ts.generators],
        "boundaries": [b.tolist() for b in ts.boundaries],
    }


# ---------------------------------------------------------------------------
# pairing eigencochains with unstable cells


def _barycentric(mesh, face, point):
    tri = mesh.positions[mesh.faces[face]]
    origin = tri[0]
    e1 = mesh.displacement(origin, tri[1])
    e2 = mesh.displacement(origin, tri[2])
    rhs = mesh.displacement(origin, point)
    a = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
    b = np.array([e1 @ rhs, e2 @ rhs])
    l12 = np.linalg.solve(a, b)
    return np.array([1.0 - l12.sum(), l12[0], l12[1]])


def whitney_line_integral(mesh, cochain1: np.ndarray, polyline: np.ndarray) -> float:
    """Integral of the Whitney interpolant of a 1-cochain along a polyline.

    On a triangle with barycentric coordinates l, the edge form (i, j)
    contributes  mean(l_i) dl_j - mean(l_j) dl_i  per straight segment.
    """
    h = float(np.median(mesh.edge_lengths))
    # resample so no segment is longer than h / 3
    pts = [polyline[0]]
    for nxt in polyline[1:]:
        prev = pts[-1]
        d = mesh.displacement(prev, nxt)
        n_sub = max(1, int(math.ceil(np.linalg.norm(d) / (h / 3.0))))
        for s in range(1, n_sub + 1):
            pts.append(prev + d * (s / n_sub))
    pts = np.array(pts)

    tree = cKDTree(mesh.face_centroids())
    edge_pos = {tuple(e): i for i, e in enumerate(mesh.edges)}
    total = 0.0
    mids = pts[:-1] + 0.5 * np.diff(pts, axis=0)
    _, candidates = tree.query(mids, k=1)
    for seg in range(len(pts) - 1):
        face = int(candidates[seg])
        la = _barycentric(mesh, face, pts[seg])
        lb = _barycentric(mesh, face, pts[seg + 1])
        mean = 0.5 * (la + lb)
        diff = lb - la
        verts = mesh.faces[face]
        for ii in range(3):
            for jj in range(ii + 1, 3):
                e = edge_pos[(verts[ii], verts[jj])]
                total += cochain1[e] * (mean[ii] * diff[jj] - mean[jj] * diff[ii])
    return float(total)


def _face_param_centroids(mesh):
    """Chart-coordinate centroids of each face (wrap- and chart-aware)."""
    surface = mesh.surface
    out = []
    for tri in mesh.faces:
        c0 = int(mesh.vertex_chart[tri[0]])
        base = mesh.vertex_params[tri[0]]
        acc = base.copy()
        for v in tri[1:]:
            ci, u = int(mesh.vertex_chart[v]), mesh.vertex_params[v]
            if ci != c0:
                ci, u = surface.transition(ci, u)
            d = u - base
            if surface.charts[c0].periodic:
                d = (d + math.pi) % (2 * math.pi) - math.pi
            acc += base + d
        out.append((c0, surface.wrap(c0, acc / 3.0)))
    return out


def basin_of_maxima(problem: MorseFlowProblem, mesh) -> np.ndarray:
    """Uphill sink (a maximum id) for every mesh face; -2 when unresolved.

    Flows start at parameter-space face centroids.  A centroid sitting
    exactly on a stable set climbs to a non-maximum; such faces are retried
    from points shifted toward each face vertex in turn, which leaves the
    stable set for any face of positive area.
    """
    surface = problem.surface
    starts = _face_param_centroids(mesh)
    sinks = flow_sinks(problem, starts, direction=+1)

    def invalid(i):
        return sinks[i] < 0 or problem.critical_points[sinks[i]].index != 2

    for attempt in range(3):
        bad = [i for i in range(len(sinks)) if invalid(i)]
        if not bad:
            break
        retry = []
        for i in bad:
            ci, cu = starts[i]
            v = mesh.faces[i][attempt]
            vci, vu = int(mesh.vertex_chart[v]), mesh.vertex_params[v]
            if vci != ci:
                vci, vu = surface.transition(vci, vu)
            d = vu - cu
            if surface.charts[ci].periodic:
                d = (d + math.pi) % (2 * math.pi) - math.pi
            retry.append((ci, surface.wrap(ci, cu + 0.35 * d)))
        new_sinks = flow_sinks(problem, retry, direction=+1)
        for i, s in zip(bad, new_sinks):
            sinks[i] = s
    for i in range(len(sinks)):
        if invalid(i):
            sinks[i] = -2
    return sinks


@dataclass(frozen=True)
class CellPairingReport:
    matrices: dict            # degree -> raw (generators x eigenvectors) matrix
    normalized_matrices: dict  # rows scaled by exp(-t f(p)); the O(1) part
    ranks: dict
    condition_numbers: dict
    marked_area_fraction: float

    @property
    def full_rank(self) -> bool:
        return all(
            r == min(m.shape) for r, m in ((self.ranks[k], self.matrices[k]) for k in self.matrices)
        )


def p_infinity_matrix(instanton, morse: MorseData, mesh, weights) -> CellPairingReport:
    """Integrals of reweighted low eigencochains over marked unstable cells.

    Degree 0 pairs point cells with vertex values, degree 1 integrates the
    Whitney interpolant along traced orbits, degree 2 sums signed face
    entries over uphill basins.  The per-degree matrices must be square and
    of full rank for the rank-level comparison verdict.
    """
    problem = morse.problem
    crits = problem.critical_points
    mats = {}

    scale = {k: np.exp(weights.t * weights.cell_values[k]) for k in range(3)}

    gens0 = morse.complex.generators[0]
    m0 = np.zeros((len(gens0), instanton.bases[0].shape[1]))
    for ri, pid in enumerate(gens0):
        v = mesh.nearest_vertex(crits[pid].position)
        for cj in range(m0.shape[1]):
            m0[ri, cj] = (scale[0] * instanton.bases[0][:, cj])[v]
    mats[0] = m0

    gens1 = morse.complex.generators[1]
    m1 = np.zeros((len(gens1), instanton.bases[1].shape[1]))
    for ri, pid in enumerate(gens1):
        poly = morse.saddle_curves[pid]
        for cj in range(m1.shape[1]):
            weighted = scale[1] * instanton.bases[1][:, cj]
            m1[ri, cj] = whitney_line_integral(mesh, weighted, poly)
    mats[1] = m1

    gens2 = morse.complex.generators[2]
    basins = basin_of_maxima(problem, mesh)
    resolved = basins >= 0
    frac = float(mesh.areas[resolved].sum() / mesh.areas.sum())
    if not 0.95 <= frac <= 1.05:
        raise MarkingQualityError(f"basin marking covers {frac:.1%} of the surface area")
    m2 = np.zeros((len(gens2), instanton.bases[2].shape[1]))
    for ri, pid in enumerate(gens2):
        mask = basins == pid
        sign = _cell_orientation_sign(problem, crits[pid])
        ori = mesh.complex.orientation[mask].astype(float)
        for cj in range(m2.shape[1]):
            weighted = scale[2] * instanton.bases[2][:, cj]
            m2[ri, cj] = sign * float(np.sum(ori * weighted[mask]))
    mats[2] = m2

    # The pairing carries a predicted diagonal scale exp(t f(p)) per
    # generator; rank and conditioning are judged on the remainder.
    offset = weights.recentered_by
    normalized = {}
    for k, m in mats.items():
        gens = morse.complex.generators[k]
        row_scale = np.array(
            [math.exp(-weights.t * (crits[pid].value - offset)) for pid in gens]
        )
        normalized[k] = row_scale[:, None] * m if m.size else m

    ranks = {}
    conds = {}
    for k, m in normalized.items():
        if m.size == 0:
            ranks[k] = 0
            conds[k] = 1.0
            continue
        s = np.linalg.svd(m, compute_uv=False)
        tol = max(m.shape) * np.finfo(float).eps * s[0] if s[0] > 0 else 0.0
        ranks[k] = int(np.sum(s > tol))
        conds[k] = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
    return CellPairingReport(
        matrices=mats,
        normalized_matrices=normalized,
        ranks=ranks,
        condition_numbers=conds,
        marked_area_fraction=frac,
    )
