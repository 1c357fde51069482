"""Transport of dF = A F along chart paths, and the Newton solve of the residual map.

Loops and paths are based at the points ``0_i`` of the plane charts.  The
loop ``gamma_ij`` follows a route from ``0_i`` to ``p_ij + 1`` that avoids
the unit disks of the other nodes, turns once counterclockwise around
``p_ij`` and comes back.  The path ``Gamma_ji`` follows the same route, then
crosses the neck chart along a log-linear segment from ``w = t_ij`` to
``w = 1/t_ji`` and ends with the route of ``C_j`` run backwards.

Routes are planned once from the t = 0 node positions and stored relative to
the nodes, so they follow the nodes when ``q`` moves them.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import dijkstra

from . import lin_hyp as lh
from . import kernels
from .errors import (
    GeometryError,
    LogBranchError,
    NoConvergence,
    PoleError,
    StepError,
    ValidationError,
)
from .kernels import SEG_ARC, SEG_LINE, SEG_LOG
from .surface_model import (
    R_MIN,
    TAU_MAX,
    ChartId,
    SurfaceParams,
    pair_frame,
    pair_M,
    s_from_tau,
    tau_from_t,
)

TOL_ODE = 1e-10
SIGMA_MIN = 1e-3
ROUTE_RADIUS = 1.25
ROUTE_CLEAR = 1.1
ROUTE_ANGLES = 24
MAX_STEPS = 1 << 21


# ---------------------------------------------------------------------------
# paths


@dataclass(frozen=True)
class Segment:
    chart: ChartId
    kind: int
    a: complex
    b: complex
    r: float = 0.0

    def start(self) -> complex:
        return self.point(0.0)

    def end(self) -> complex:
        return self.point(1.0)

    def point(self, x: float) -> complex:
        if self.kind == SEG_LINE:
            return self.a + (self.b - self.a) * x
        if self.kind == SEG_ARC:
            th = self.b.real + (self.b.imag - self.b.real) * x
            return self.a + self.r * cmath.exp(1j * th)
        return cmath.exp(self.a + (self.b - self.a) * x)

    def length(self) -> float:
        if self.kind == SEG_LINE:
            return abs(self.b - self.a)
        if self.kind == SEG_ARC:
            return abs(self.r * (self.b.imag - self.b.real))
        return abs(self.b - self.a)

    def reversed(self) -> "Segment":
        if self.kind == SEG_ARC:
            return Segment(self.chart, self.kind, self.a, complex(self.b.imag, self.b.real), self.r)
        return Segment(self.chart, self.kind, self.b, self.a, self.r)


@dataclass
class PathSpec:
    segments: list
    transitions: list = field(default_factory=list)  # (v, w, t) at each chart change

    def reversed(self) -> "PathSpec":
        return PathSpec([s.reversed() for s in reversed(self.segments)],
                        [(w, v, t) for v, w, t in reversed(self.transitions)])

    def __add__(self, other: "PathSpec") -> "PathSpec":
        """Concatenation: ``self`` first, then ``other``."""
        return PathSpec(self.segments + other.segments, self.transitions + other.transitions)


@dataclass
class Transport:
    matrix: np.ndarray
    path: PathSpec
    error: float
    steps: list = field(default_factory=list)


def _seg_clear(z0, z1, centers, radius):
    """True when the segment z0-z1 stays at distance >= radius from every center."""
    d = z1 - z0
    L2 = abs(d) ** 2
    for c in centers:
        if L2 == 0:
            dist = abs(c - z0)
        else:
            u = max(0.0, min(1.0, ((c - z0) * d.conjugate()).real / L2))
            dist = abs(z0 + u * d - c)
        if dist < radius - 1e-12:
            return False
    return True


def plan_route(nodes: list, target: int) -> list:
    """Shortest polyline from 0 to nodes[target] + 1 avoiding the disks of
    radius ROUTE_CLEAR around the nodes; returned as ``(ref, offset)`` pairs
    with ``ref`` a node index (or None for an absolute point)."""
    nodes = [complex(p) for p in nodes]
    pts = [(None, 0j)]
    for k, p in enumerate(nodes):
        for m in range(ROUTE_ANGLES):
            off = ROUTE_RADIUS * cmath.exp(2j * math.pi * m / ROUTE_ANGLES)
            w = p + off
            if all(abs(w - q) >= ROUTE_CLEAR for q in nodes):
                pts.append((k, off))
    pts.append((target, 1 + 0j))
    xy = [(0j if r is None else nodes[r]) + o for r, o in pts]
    N = len(pts)
    W = np.full((N, N), np.inf)
    for u in range(N):
        for v in range(u + 1, N):
            # the goal sits on the unit circle of its own node
            cs = [q for k, q in enumerate(nodes) if not (v == N - 1 and k == target)]
            ok = _seg_clear(xy[u], xy[v], cs, ROUTE_CLEAR)
            if ok and v == N - 1:
                ok = _seg_clear(xy[u], xy[v], [nodes[target]], 1.0)
            if ok:
                W[u, v] = W[v, u] = abs(xy[u] - xy[v])
    W[~np.isfinite(W)] = 0
    dist, pred = dijkstra(W, directed=False, indices=0, return_predecessors=True)
    if not np.isfinite(dist[N - 1]):
        raise GeometryError("no route avoiding the node disks")
    path = [N - 1]
    while path[-1] != 0:
        path.append(int(pred[path[-1]]))
    return [pts[k] for k in reversed(path)]


class RouteBook:
    """Routes for every node of every plane chart, planned from p0."""

    def __init__(self, params: SurfaceParams):
        self.routes = {}
        for i in range(params.n):
            nodes = params.nodes_of(i)
            ps = [params.p0[e, side] for e, side, _ in nodes]
            for k, (e, side, _) in enumerate(nodes):
                r = plan_route(ps, k)
                self.routes[(e, side)] = [(None if ref is None else nodes[ref][:2], off)
                                          for ref, off in r]

    def points(self, params: SurfaceParams, e: int, side: int) -> list:
        out = []
        for ref, off in self.routes[(e, side)]:
            out.append(off if ref is None else params.p(*ref) + off)
        return out


def _route_segments(params, book, e, side):
    i = params.pairs[e][side]
    pts = book.points(params, e, side)
    ch = ChartId.plane(i)
    return [Segment(ch, SEG_LINE, pts[k], pts[k + 1]) for k in range(len(pts) - 1)]


def gamma_path(params: SurfaceParams, pair, side: int = 0, book: RouteBook = None) -> PathSpec:
    """Loop around the node of pair ``pair`` in C_i (side 0) or C_j (side 1), based at 0."""
    e = pair if isinstance(pair, (int, np.integer)) else params.pair_index(*pair)
    book = book or RouteBook(params)
    route = _route_segments(params, book, e, side)
    i = params.pairs[e][side]
    circ = Segment(ChartId.plane(i), SEG_ARC, params.p(e, side), complex(0, 2 * math.pi), 1.0)
    return PathSpec(route + [circ] + [s.reversed() for s in reversed(route)])


def big_gamma_path(params: SurfaceParams, pair, book: RouteBook = None, shift: int = 0) -> PathSpec:
    """Path from 0_i to 0_j through the neck chart C_ij."""
    e = pair if isinstance(pair, (int, np.integer)) else params.pair_index(*pair)
    if params.tau <= 0:
        raise ValidationError("the neck path needs tau > 0")
    book = book or RouteBook(params)
    i, j = params.pairs[e]
    ri = _route_segments(params, book, e, 0)
    rj = _route_segments(params, book, e, 1)
    lti, ltj = params.log_t_pair(e, shift)
    tij, tji = params.t_pair(e)
    neck = Segment(ChartId.neck(i, j), SEG_LOG, lti, -ltj)
    trans = [(1.0 + 0j, cmath.exp(lti), tij), (1.0 + 0j, cmath.exp(ltj), tji)]
    return PathSpec(ri + [neck] + [s.reversed() for s in reversed(rj)], trans)


# ---------------------------------------------------------------------------
# transport


def _initial_steps(seg: Segment) -> int:
    return max(8, int(math.ceil(6 * seg.length())))


class Transporter:
    """RK4 transports with Richardson control and optional frozen step counts."""

    def __init__(self, params: SurfaceParams, tol: float = TOL_ODE, backend=None):
        self.params = params
        self.tol = tol
        self.kernel = backend or kernels
        self.frozen = None  # dict key -> list of step counts
        self._fields = {}

    def field(self, chart: ChartId):
        f = self._fields.get(chart)
        if f is None:
            f = self.params.field_of(chart)
            self._fields[chart] = f
        return f

    def _check_poles(self, seg: Segment):
        if seg.chart.kind != "plane":
            return
        for e, side, _ in self.params.nodes_of(seg.chart.i):
            p = self.params.p(e, side)
            if seg.kind == SEG_ARC and abs(seg.a - p) < 1e-12:
                if seg.r < R_MIN:
                    raise PoleError("arc too close to a node")
                continue
            if not _seg_clear(seg.start(), seg.end(), [p], R_MIN) and seg.kind == SEG_LINE:
                raise PoleError(f"segment passes within r_min of node p={p}")

    def segment(self, seg: Segment, dev: bool, n: int = None):
        """Extrapolated transport of one segment along with its error estimate."""
        fk, par, nn = self.field(seg.chart)
        k = self.kernel
        if n is not None:
            Yn = k.rk4_segment(fk, par, nn, seg.kind, seg.a, seg.b, seg.r, n, dev)
            Y2 = k.rk4_segment(fk, par, nn, seg.kind, seg.a, seg.b, seg.r, 2 * n, dev)
            err = np.abs(Y2 - Yn).max() / 15
            return Y2 + (Y2 - Yn) / 15, err, n
        self._check_poles(seg)
        n = _initial_steps(seg)
        Yn = k.rk4_segment(fk, par, nn, seg.kind, seg.a, seg.b, seg.r, n, dev)
        while True:
            Y2 = k.rk4_segment(fk, par, nn, seg.kind, seg.a, seg.b, seg.r, 2 * n, dev)
            err = np.abs(Y2 - Yn).max() / 15
            scale = np.abs(Y2).max() if dev else max(1.0, np.abs(Y2).max())
            if err <= self.tol * scale or scale == 0:
                return Y2 + (Y2 - Yn) / 15, err, n
            n *= 2
            if n > MAX_STEPS:
                raise StepError(f"RK4 error {err:.3e} above tolerance after {n} steps")
            Yn = Y2

    def transport(self, path: PathSpec, dev: bool = False, key=None) -> Transport:
        """Principal solution along ``path``.  In deviation mode the path must
        stay in a single plane chart and the result is ``Pi - B`` where ``B`` is
        the transport of the constant part of the field."""
        steps = self.frozen.get(key) if (self.frozen is not None and key is not None) else None
        used = []
        err = 0.0
        if dev:
            chart = path.segments[0].chart
            if any(s.chart != chart for s in path.segments) or chart.kind != "plane":
                raise ValidationError("deviation transport needs a single plane chart")
            A0 = self.params.A_const(chart.i)
            B = lh.I2.copy()
            D = np.zeros((2, 2), dtype=complex)
            for k, seg in enumerate(path.segments):
                Dk, ek, nk = self.segment(seg, True, None if steps is None else steps[k])
                Bk = lh.I2 + (seg.end() - seg.start()) * A0
                D = Bk @ D + Dk @ B + Dk @ D
                B = Bk @ B
                err += ek
                used.append(nk)
            out = D
        else:
            Y = lh.I2.copy()
            for k, seg in enumerate(path.segments):
                Tk, ek, nk = self.segment(seg, False, None if steps is None else steps[k])
                Y = Tk @ Y
                err += ek * max(1.0, np.abs(Y).max())
                used.append(nk)
            out = Y
        if self.frozen is not None and key is not None and steps is None:
            self.frozen[key] = used
        return Transport(out, path, err, used)


def transport(params: SurfaceParams, path: PathSpec, tol: float = TOL_ODE) -> Transport:
    return Transporter(params, tol).transport(path)


def transport_callable(A_of_z, segments, n: int = 400) -> np.ndarray:
    """RK4 transport of dY = A(z) Y dz for a Python callable, with one
    Richardson extrapolation per segment.  Used for oracles and generic fields."""
    Y = lh.I2.copy()
    for seg in segments:
        Y1 = _rk4_callable(A_of_z, seg, n)
        Y2 = _rk4_callable(A_of_z, seg, 2 * n)
        Y = (Y2 + (Y2 - Y1) / 15) @ Y
    return Y


def _rk4_callable(A_of_z, seg: Segment, n: int) -> np.ndarray:
    def f(x, Y):
        z = seg.point(x)
        if seg.kind == SEG_LINE:
            dz = seg.b - seg.a
        elif seg.kind == SEG_ARC:
            dz = 1j * (z - seg.a) * (seg.b.imag - seg.b.real)
        else:
            dz = z * (seg.b - seg.a)
        return A_of_z(z) @ Y * dz

    Y = lh.I2.copy()
    h = 1.0 / n
    for k in range(n):
        x = k * h
        k1 = f(x, Y)
        k2 = f(x + h / 2, Y + h / 2 * k1)
        k3 = f(x + h / 2, Y + h / 2 * k2)
        k4 = f(x + h, Y + h * k3)
        Y = Y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return Y


def monodromy_of(Y0, loop) -> np.ndarray:
    """Conjugated monodromy Y0^{-1} Pi(gamma) Y0."""
    P = loop.matrix if isinstance(loop, Transport) else np.asarray(loop)
    return lh.sl2_inv(Y0) @ P @ Y0


def monodromy_derivative(A0_of_z, dA_of_z, segments, n: int = 400) -> np.ndarray:
    """Derivative of the monodromy of a family A0 + lambda dA at lambda = 0,
    from the variation-of-constants integral
    ``Pi0(gamma) * int Pi0(z)^{-1} dA(z) Pi0(z) dz`` (RK4 on the augmented system)."""

    def step(seg, n):
        def f(x, Y, J):
            z = seg.point(x)
            if seg.kind == SEG_LINE:
                dz = seg.b - seg.a
            elif seg.kind == SEG_ARC:
                dz = 1j * (z - seg.a) * (seg.b.imag - seg.b.real)
            else:
                dz = z * (seg.b - seg.a)
            return A0_of_z(z) @ Y * dz, lh.sl2_inv(Y) @ dA_of_z(z) @ Y * dz

        return f

    def run(n):
        Y = lh.I2.copy()
        J = np.zeros((2, 2), dtype=complex)
        for seg in segments:
            f = step(seg, n)
            h = 1.0 / n
            for k in range(n):
                x = k * h
                a1, b1 = f(x, Y, J)
                a2, b2 = f(x + h / 2, Y + h / 2 * a1, J)
                a3, b3 = f(x + h / 2, Y + h / 2 * a2, J)
                a4, b4 = f(x + h, Y + h * a3, J)
                Y = Y + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
                J = J + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        return Y @ J

    D1, D2 = run(n), run(2 * n)
    return D2 + (D2 - D1) / 15


# ---------------------------------------------------------------------------
# closed forms


def pij_closed_form(frame, params: SurfaceParams, e: int = None) -> np.ndarray:
    e = params.pair_index(*frame.pair) if e is None else e
    b, s, tau = params.b[e], params.s, params.tau
    return np.pi * 1j * tau * b * np.array([[1, 2 * frame.lam_hat_i * s * params.q[2 * e]], [0, -1]])


def qij_closed_form(frame, params: SurfaceParams, e: int = None) -> np.ndarray:
    e = params.pair_index(*frame.pair) if e is None else e
    i, j = frame.pair
    b0 = (params.xi[i] + params.xi[j]) / 2
    b = params.b[e]
    return params.s * np.array(
        [[b0 - b, frame.lam_hat_i * params.q[2 * e]],
         [-frame.lam_hat_j * params.q[2 * e + 1], b - b0]], dtype=complex)


def pi_gamma_first_order(params: SurfaceParams, e: int) -> np.ndarray:
    """First-order expansion of the hatted monodromy of gamma_ij."""
    fr = pair_frame(params, e)
    i, j = params.pairs[e]
    p = params.p(e, 0)
    E = lh.exp_mat(-p * fr.A_hat_i) @ lh.DIAG @ lh.exp_mat(p * fr.A_hat_i)
    return lh.I2 + params.a[e] * np.pi * 1j * (params.c[i] - params.c[j]) * E


def pi_gamma_numeric(params: SurfaceParams, e: int, tol: float = 1e-12) -> np.ndarray:
    """Hatted monodromy H Pi(gamma_ij) H^{-1} from numerical transport."""
    fr = pair_frame(params, e)
    tr = Transporter(params, tol)
    D = tr.transport(gamma_path(params, e, 0), dev=True).matrix
    return lh.I2 + fr.H @ D @ lh.sl2_inv(fr.H)


def _log_dev(X):
    """log(I + X) with a branch check."""
    if np.linalg.norm(X, 2) >= 1:
        raise LogBranchError("monodromy outside the principal log domain; reduce tau")
    return lh.log_near_identity(X)


# ---------------------------------------------------------------------------
# residual


def residual_closed_t0(params: SurfaceParams) -> np.ndarray:
    """Residual at t = 0 (smooth extension of the scaled residual)."""
    out = []
    for e, (i, j) in enumerate(params.pairs):
        fr = pair_frame(params, e)
        b = params.b[e]
        qij, qji = params.q[2 * e], params.q[2 * e + 1]
        b0 = (params.xi[i] + params.xi[j]) / 2
        f2 = 2j * np.pi * b * fr.lam_hat_i * qij
        f4 = fr.lam_hat_i * qij - np.conj(fr.lam_hat_j * qji)
        out += [-np.pi * b.imag, f2.real, f2.imag, b0 - b.real, f4.real, f4.imag]
    return np.array(out, dtype=float)


def pack_unknowns(params: SurfaceParams) -> np.ndarray:
    x = []
    for e in range(params.m):
        b, qi, qj = params.b[e], params.q[2 * e], params.q[2 * e + 1]
        x += [b.real, b.imag, qi.real, qi.imag, qj.real, qj.imag]
    return np.array(x)


def unpack_unknowns(params: SurfaceParams, x) -> SurfaceParams:
    x = np.asarray(x, dtype=float).reshape(-1, 6)
    b = x[:, 0] + 1j * x[:, 1]
    q = np.empty(2 * len(x), dtype=complex)
    q[0::2] = x[:, 2] + 1j * x[:, 3]
    q[1::2] = x[:, 4] + 1j * x[:, 5]
    return params.with_params(b=b, q=q)


@dataclass
class ResidualState:
    t: float
    tau: float
    s: float
    b: np.ndarray
    q: np.ndarray
    residual: np.ndarray
    P: list
    Q: list

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.residual))


class MonodromyProblem:
    """Residual evaluation with routes fixed from p0 and cached transports."""

    def __init__(self, params: SurfaceParams, tol: float = 1e-12, backend=None):
        self.base = params
        self.book = RouteBook(params)
        self.tol = tol
        self.backend = backend
        self.frozen = None
        self._cache = {}

    # transports -------------------------------------------------------
    def _transporter(self, params):
        tr = Transporter(params, self.tol, self.backend)
        tr.frozen = self.frozen
        return tr

    def transports(self, params: SurfaceParams, dirty=None) -> dict:
        """All generator transports.  ``dirty`` is a set of chart ids whose
        fields changed since the cached evaluation (None: recompute all)."""
        tr = self._transporter(params)
        out = {}
        for e, (i, j) in enumerate(params.pairs):
            for side, k in ((0, i), (1, j)):
                key = ("g", e, side)
                if dirty is not None and key in self._cache and ChartId.plane(k) not in dirty:
                    out[key] = self._cache[key]
                else:
                    out[key] = tr.transport(gamma_path(params, e, side, self.book), dev=True, key=key).matrix
            key = ("G", e)
            charts = {ChartId.plane(i), ChartId.plane(j), ChartId.neck(i, j)}
            if dirty is not None and key in self._cache and not (charts & dirty):
                out[key] = self._cache[key]
            else:
                out[key] = tr.transport(big_gamma_path(params, e, self.book), key=key).matrix
        return out

    def P_Q(self, params: SurfaceParams, T: dict):
        Ps, Qs, Pr = [], [], []
        for e in range(params.m):
            Mi, Mj = pair_M(params, e)
            Mii, Mji = lh.sl2_inv(Mi), lh.sl2_inv(Mj)
            Ps.append(_log_dev(Mii @ T[("g", e, 0)] @ Mi))
            Pr.append(_log_dev(Mji @ T[("g", e, 1)] @ Mj))
            Qs.append(_log_dev(Mji @ T[("G", e)] @ Mi - lh.I2))
        return Ps, Qs, Pr

    def residual(self, params: SurfaceParams, dirty=None, keep: bool = True) -> ResidualState:
        if params.tau == 0:
            r = residual_closed_t0(params)
            return ResidualState(0.0, 0.0, 0.0, params.b.copy(), params.q.copy(), r, [], [])
        if params.tau > TAU_MAX:
            raise ValidationError(f"tau={params.tau} exceeds tau_max={TAU_MAX}")
        if np.any(np.abs(params.b) == 0):
            raise ValidationError("b_ij = 0 is outside the solver domain")
        T = self.transports(params, dirty)
        if keep:
            self._cache = T
        Ps, Qs, _ = self.P_Q(params, T)
        tau, s = params.tau, params.s
        out = []
        for P, Q in zip(Ps, Qs):
            f2 = (P[0, 1] + np.conj(P[1, 0])) / (tau * s)
            f4 = (Q[0, 1] + np.conj(Q[1, 0])) / s
            out += [P[0, 0].real / tau, f2.real, f2.imag, Q[0, 0].real / s, f4.real, f4.imag]
        return ResidualState(params.t, tau, s, params.b.copy(), params.q.copy(), np.array(out), Ps, Qs)

    def defects(self, params: SurfaceParams) -> dict:
        """su2 defects of every generator: gamma for both ordered pairs and Gamma."""
        T = self.transports(params)
        Ps, Qs, Pr = self.P_Q(params, T)
        out = {}
        for e, (i, j) in enumerate(params.pairs):
            out[f"gamma_{i}_{j}"] = lh.su2_defect_log(Ps[e])
            out[f"gamma_{j}_{i}"] = lh.su2_defect_log(Pr[e])
            out[f"Gamma_{j}_{i}"] = lh.su2_defect_log(Qs[e])
        return out

    # Jacobian ---------------------------------------------------------
    def jacobian(self, params: SurfaceParams, h: float = 1e-6) -> np.ndarray:
        """Centred finite differences; only transports touching the perturbed
        pair's charts are recomputed."""
        x0 = pack_unknowns(params)
        base_cache = dict(self._cache)
        J = np.empty((len(x0), len(x0)))
        for k in range(len(x0)):
            e = k // 6
            i, j = params.pairs[e]
            dirty = {ChartId.plane(i), ChartId.plane(j), ChartId.neck(i, j)}
            hk = h * max(1.0, abs(x0[k]))
            cols = []
            for sg in (1, -1):
                x = x0.copy()
                x[k] += sg * hk
                self._cache = base_cache
                cols.append(self.residual(unpack_unknowns(params, x), dirty, keep=False).residual)
            J[:, k] = (cols[0] - cols[1]) / (2 * hk)
        self._cache = base_cache
        return J


def jacobian_t0(params: SurfaceParams) -> np.ndarray:
    """Analytic Jacobian of the t = 0 residual (block diagonal per pair)."""
    m = params.m
    J = np.zeros((6 * m, 6 * m))
    for e in range(m):
        fr = pair_frame(params, e)
        b = params.b[e]
        li, lj = fr.lam_hat_i, fr.lam_hat_j
        qij = params.q[2 * e]
        r = slice(6 * e, 6 * e + 6)
        B = np.zeros((6, 6))
        B[0, 1] = -np.pi
        # f2 = 2 pi i li (b qij): bilinear
        for col, (db, dq) in enumerate([(1, 0), (1j, 0)]):
            v = 2j * np.pi * li * db * qij
            B[1, col], B[2, col] = v.real, v.imag
        for col, dq in ((2, 1), (3, 1j)):
            v = 2j * np.pi * li * b * dq
            B[1, col], B[2, col] = v.real, v.imag
        B[3, 0] = -1
        for col, dq in ((2, 1), (3, 1j)):
            v = li * dq
            B[4, col], B[5, col] = v.real, v.imag
        for col, dq in ((4, 1), (5, 1j)):
            v = -np.conj(lj * dq)
            B[4, col], B[5, col] = v.real, v.imag
        J[r, r] = B
    return J


@dataclass
class SolveResult:
    params: SurfaceParams
    iterations: int
    residual_norm: float
    history: list
    defects: dict
    converged: bool


def newton_solve(params: SurfaceParams, t: float = None, max_iter: int = 12, tol_res: float = 1e-9,
                 tol_ode: float = 1e-12, backend=None, jacobian: str = "auto",
                 initial: SurfaceParams = None, callback=None) -> SolveResult:
    """Newton iteration on (b, q) at fixed t, from (b0, 0) unless ``initial`` is given.

    ``jacobian="fd"`` starts from centred finite differences and recomputes
    them whenever the residual fails to drop by half; ``"t0"`` starts from
    the analytic Jacobian at t = 0.  Both apply Broyden rank-one updates
    between refreshes.  ``"auto"`` picks finite differences up to six pairs.
    RK4 step counts are frozen after the first evaluation so that the
    residual is a smooth function of the unknowns.
    """
    tau = params.tau if t is None else tau_from_t(t)
    if not 0 < tau <= TAU_MAX:
        raise ValidationError(f"tau={tau} outside (0, tau_max={TAU_MAX}]")
    if jacobian == "auto":
        jacobian = "fd" if params.m <= 6 else "t0"
    if initial is None:
        p = params.with_params(tau=tau, b=params.b0, q=np.zeros(2 * params.m))
    else:
        p = params.with_params(tau=tau, b=initial.b, q=initial.q)
    prob = MonodromyProblem(p, tol=tol_ode, backend=backend)
    prob.frozen = {}
    st = prob.residual(p)
    history = [(0, st.norm)]
    if callback:
        callback(0, st)
    J = None
    last = st.norm
    it = 0
    while st.norm >= tol_res:
        if it >= max_iter:
            raise NoConvergence(f"no convergence after {it} iterations, residual {st.norm:.3e}",
                                st.norm, it)
        if J is None:
            J = prob.jacobian(p) if jacobian == "fd" else jacobian_t0(p)
        elif jacobian == "fd" and st.norm > 0.5 * last:
            J = prob.jacobian(p)
        last = st.norm
        dx = np.linalg.solve(J, -st.residual)
        p = unpack_unknowns(p, pack_unknowns(p) + dx)
        F_old = st.residual
        st = prob.residual(p)
        J = J + np.outer(st.residual - F_old - J @ dx, dx) / (dx @ dx)
        it += 1
        history.append((it, st.norm))
        if callback:
            callback(it, st)
    defects = prob.defects(p)
    return SolveResult(p, it, st.norm, history, defects, True)


def solve_ladder(params: SurfaceParams, taus, **kw) -> list:
    """Independent solves along a list of tau values, each from (b0, 0)."""
    return [newton_solve(params.with_params(tau=tau), **kw) for tau in taus]


def smallest_singular_value_t0(params: SurfaceParams) -> float:
    p = params.with_params(tau=0.0, b=params.b0, q=np.zeros(2 * params.m))
    return float(np.linalg.svd(jacobian_t0(p), compute_uv=False).min())
