"""Evaluation of the immersion f = F F* on meshes, with end analysis and an embeddedness probe.

F is propagated from ``F(0_1) = M_1`` to the other base points through the
Gamma transports of a spanning tree of the tangency graph.  Inside a patch,
F is carried along the edges of a spanning tree of the mesh, with all edge
transports computed in one batched kernel call.

Patches per pair (i, j), in the neck coordinate w with (z - p_ij) w = t_ij:

* cap i: D(0, R_i) minus the disks |z - p| < eps (plane chart);
* transition i, outer half: sqrt|t_ij| < |z - p_ij| < eps (plane chart);
* transition i, inner half: sqrt|t_ij| < |w| < eps (neck chart);
* neck: eps < |w| < 1/eps;
* and the mirror images on the j side.

The outer and inner halves of a transition use different first-order
fields, so the seam between them carries the model's chart mismatch; it is
measured and reported rather than hidden.
"""

from __future__ import annotations

import cmath
import io
import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from . import kernels
from . import lin_hyp as lh
from .errors import GeometryError, ResonanceWarning, ValidationError
from .kernels import SEG_ARC, SEG_LINE, SEG_LOG
from .monodromy import PathSpec, RouteBook, Segment, Transporter, _route_segments, big_gamma_path
from .surface_model import ChartId, SurfaceParams, gauss_map, pair_frame, unipotent

EPS = 0.2
R_CAP = 5.0
TOL_GEO = 1e-7
EDGE_H = 0.05


@dataclass
class MeshPatch:
    chart: ChartId
    name: str
    uv: np.ndarray  # complex parameter of each vertex in its chart
    vertices: np.ndarray  # (N, 3) half-space coordinates
    triangles: np.ndarray  # (T, 3)
    seam_ids: np.ndarray = None  # global id of seam vertices, -1 elsewhere
    F: np.ndarray = field(default=None, repr=False)  # lifts at the vertices
    ring_size: int = 0  # vertices per ring for ring grids

    def __post_init__(self):
        if self.seam_ids is None:
            self.seam_ids = np.full(len(self.vertices), -1, dtype=np.int64)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def areas(self) -> np.ndarray:
        V = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(V[:, 1] - V[:, 0], V[:, 2] - V[:, 0]), axis=1)

    def to_dict(self) -> dict:
        return {
            "chart": {"kind": self.chart.kind, "i": self.chart.i, "j": self.chart.j},
            "name": self.name,
            "uv": [[float(z.real), float(z.imag)] for z in self.uv],
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "seam_ids": self.seam_ids.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeshPatch":
        ch = d["chart"]
        uv = np.array([complex(a, b) for a, b in d["uv"]], dtype=complex)
        return cls(ChartId(ch["kind"], ch["i"], ch["j"]), d["name"], uv,
                   np.array(d["vertices"], dtype=float).reshape(-1, 3),
                   np.array(d["triangles"], dtype=np.int64).reshape(-1, 3),
                   np.array(d["seam_ids"], dtype=np.int64))


# ---------------------------------------------------------------------------
# batched transport


def _edge_steps(kinds, a, b, r):
    L = np.where(kinds == SEG_ARC, r * np.abs(b.imag - b.real), np.abs(b - a))
    return np.maximum(4, np.ceil(L / EDGE_H)).astype(np.int64)


def edge_transports(params: SurfaceParams, chart: ChartId, kinds, a, b, r, steps=None) -> np.ndarray:
    """Transports of independent segments of one chart, Richardson-extrapolated."""
    kinds = np.asarray(kinds, dtype=np.int64)
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    r = np.asarray(r, dtype=float)
    if len(kinds) == 0:
        return np.zeros((0, 2, 2), dtype=complex)
    fk, par, nn = params.field_of(chart)
    n = _edge_steps(kinds, a, b, r) if steps is None else np.asarray(steps, dtype=np.int64)
    Y1 = kernels.rk4_batch(fk, par, nn, kinds, a, b, r, n, False)
    Y2 = kernels.rk4_batch(fk, par, nn, kinds, a, b, r, 2 * n, False)
    return Y2 + (Y2 - Y1) / 15


def _propagate(order, parent, T, F_root, root):
    """F along a tree given edge transports T[v] from parent[v] to v."""
    F = np.empty((len(parent), 2, 2), dtype=complex)
    F[root] = F_root
    for v in order:
        if v != root:
            F[v] = T[v] @ F[parent[v]]
    return F


def _bfs_tree(n, edges, root):
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    parent = np.full(n, -1, dtype=np.int64)
    parent[root] = root
    order = [root]
    dq = deque([root])
    while dq:
        u = dq.popleft()
        for v in adj[u]:
            if parent[v] < 0:
                parent[v] = u
                order.append(v)
                dq.append(v)
    if np.any(parent < 0):
        raise GeometryError("mesh is not connected")
    return order, parent


# ---------------------------------------------------------------------------
# immersion


class Immersion:
    """F on the whole model, with the output frame chosen at evaluation."""

    def __init__(self, params: SurfaceParams, tol: float = 1e-11):
        self.params = params
        self.tol = tol
        self.book = RouteBook(params)
        self.tr = Transporter(params, tol)
        self.norm_inv = lh.sl2_inv(params.norm)
        self.F0 = self._base_values()

    def _base_values(self):
        p = self.params
        if p.tau == 0:
            # degenerate limit: the charts are disjoint horospheres
            return np.array([p.M(i, 0.0) for i in range(p.n)])
        F0 = np.zeros((p.n, 2, 2), dtype=complex)
        F0[0] = p.M(0)
        seen = {0}
        dq = deque([0])
        while dq:
            u = dq.popleft()
            for e, (i, j) in enumerate(p.pairs):
                if u not in (i, j):
                    continue
                v = j if u == i else i
                if v in seen:
                    continue
                G = self.tr.transport(big_gamma_path(p, e, self.book)).matrix
                F0[v] = G @ F0[u] if u == i else lh.sl2_inv(G) @ F0[u]
                seen.add(v)
                dq.append(v)
        return F0

    # -- frames
    def to_output(self, X: np.ndarray) -> np.ndarray:
        """Working-frame half-space points to the input frame."""
        return _act_points(self.norm_inv, X)

    def F_node_start(self, e: int, side: int) -> np.ndarray:
        """F at p + 1 for the node (e, side), by the stored route."""
        i = self.params.pairs[e][side]
        route = PathSpec(_route_segments(self.params, self.book, e, side))
        return self.tr.transport(route).matrix @ self.F0[i]

    def F_at(self, chart: ChartId, z) -> np.ndarray:
        p = self.params
        if chart.kind == "plane":
            i = chart.i
            segs = _plane_path(p, i, complex(z))
            return self.tr.transport(PathSpec(segs)).matrix @ self.F0[i]
        e = p.pair_index(chart.i, chart.j)
        lti, _ = p.log_t_pair(e)
        lw = cmath.log(z)
        lw += 2j * math.pi * round((lti.imag - lw.imag) / (2 * math.pi))
        seg = Segment(chart, SEG_LOG, lti, lw)
        return self.tr.transport(PathSpec([seg])).matrix @ self.F_node_start(e, 0)

    def evaluate(self, chart: ChartId, z, frame: str = "input") -> lh.HalfSpacePoint:
        X = lh.immerse_many(self.F_at(chart, z)[None])[0]
        if frame == "input":
            X = self.to_output(X[None])[0]
        return lh.HalfSpacePoint(*X)


def _act_points(H, X):
    """Apply the isometry H to half-space points (N, 3)."""
    X = np.atleast_2d(X)
    w = X[:, 0] + 1j * X[:, 1]
    h = X[:, 2]
    # a lift with f = F F*: F = [[sqrt h, w/sqrt h], [0, 1/sqrt h]]
    sq = np.sqrt(h)
    F = np.zeros((len(X), 2, 2), dtype=complex)
    F[:, 0, 0] = sq
    F[:, 0, 1] = w / sq
    F[:, 1, 1] = 1 / sq
    return lh.immerse_many(np.asarray(H, dtype=complex) @ F)


def _plane_path(params, i, z):
    """Segments from 0 to z in C_i avoiding the node disks of radius 0.75."""
    nodes = [params.p(e, s) for e, s, _ in params.nodes_of(i)]
    ch = ChartId.plane(i)
    if all(_clear(0j, z, nodes, 0.75)):
        return [Segment(ch, SEG_LINE, 0j, z)]
    pts = [0j] + [q + 0.9 * cmath.exp(2j * math.pi * k / 16) for q in nodes for k in range(16)] + [z]
    pts = [w for w in pts if all(abs(w - q) >= 0.85 for q in nodes) or w in (0j, z)]
    N = len(pts)
    W = np.zeros((N, N))
    for u in range(N):
        for v in range(u + 1, N):
            rad = [0.75 if abs(pts[v] - q) > 0.75 and abs(pts[u] - q) > 0.75 else 0.0 for q in nodes]
            if all(_clear(pts[u], pts[v], nodes, rad)):
                W[u, v] = W[v, u] = abs(pts[u] - pts[v])
    from scipy.sparse.csgraph import dijkstra

    dist, pred = dijkstra(W, directed=False, indices=0, return_predecessors=True)
    if not np.isfinite(dist[N - 1]):
        raise GeometryError("no evaluation path to the requested point")
    path = [N - 1]
    while path[-1] != 0:
        path.append(int(pred[path[-1]]))
    path = path[::-1]
    return [Segment(ch, SEG_LINE, pts[path[k]], pts[path[k + 1]]) for k in range(len(path) - 1)]


def _clear(z0, z1, centers, radius):
    d = z1 - z0
    L2 = abs(d) ** 2
    rads = radius if isinstance(radius, list) else [radius] * len(centers)
    out = []
    for c, rr in zip(centers, rads):
        u = 0.0 if L2 == 0 else max(0.0, min(1.0, ((c - z0) * d.conjugate()).real / L2))
        out.append(abs(z0 + u * d - c) >= rr)
    return out


def evaluate_immersion(params: SurfaceParams, chart: ChartId, z, frame: str = "input") -> lh.HalfSpacePoint:
    return Immersion(params).evaluate(chart, z, frame)


# ---------------------------------------------------------------------------
# patches


def cap_radius(params: SurfaceParams, i: int, R: float = R_CAP) -> float:
    """Cap disk radius: R beyond the farthest node of the chart."""
    nodes = [abs(params.p0[e, s]) for e, s, _ in params.nodes_of(i)]
    return R + (max(nodes) if nodes else 0.0)


def ring_angles(params: SurfaceParams, e: int, side: int, n: int) -> np.ndarray:
    """Angles of the ring vertices around the node (e, side).

    Ring vertex k sits at w-angle arg(t_ij) - 2 pi k/n in the neck chart, so
    on the j side, where z - p_ji = t_ji w, the angles run backwards."""
    phi = 2 * np.pi * np.arange(n) / n
    if side == 0 or params.tau == 0:
        return phi
    tij, tji = params.t_pair(e)
    return cmath.phase(tij * tji) - phi


class _SeamIds:
    def __init__(self):
        self.ids = {}

    def get(self, key):
        return self.ids.setdefault(key, len(self.ids))


def build_horosphere_cap(imm: Immersion, i: int, eps: float = EPS, R: float = R_CAP,
                         grid: int = 64, seams: _SeamIds = None) -> MeshPatch:
    p = imm.params
    Ri = cap_radius(p, i, R)
    nodes = [(e, s, p.p(e, s)) for e, s, _ in p.nodes_of(i)]
    h = 2 * Ri / grid
    xs = np.linspace(-Ri, Ri, grid + 1)
    X, Y = np.meshgrid(xs, xs)
    Z = (X + 1j * Y).ravel()
    keep = np.abs(Z) < Ri - 0.5 * h
    for _, _, q in nodes:
        keep &= np.abs(Z - q) > eps + 0.5 * h
    pts = [Z[keep]]
    nring = grid
    ring_keys = []
    for e, s, q in nodes:
        ang = ring_angles(p, e, s, nring)
        pts.append(q + eps * np.exp(1j * ang))
        ring_keys += [("ring", e, s, k) for k in range(nring)]
    nout = max(16, int(math.ceil(2 * np.pi * Ri / h)))
    pts.append(Ri * np.exp(2j * np.pi * np.arange(nout) / nout))
    uv = np.concatenate(pts)
    n_grid = len(pts[0])
    tri = Delaunay(np.column_stack([uv.real, uv.imag])).simplices
    cen = uv[tri].mean(axis=1)
    ok = np.abs(cen) < Ri
    for _, _, q in nodes:
        ok &= np.abs(cen - q) > eps
    tri = tri[ok]
    edges = {(min(a, b), max(a, b)) for t in tri for a, b in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2]))}
    root = int(np.argmin(np.abs(uv)))
    order, parent = _bfs_tree(len(uv), edges, root)
    ch = ChartId.plane(i)
    src = uv[parent]
    T = edge_transports(p, ch, np.zeros(len(uv), np.int64), src, uv, np.zeros(len(uv)))
    F0 = imm.F0[i] if abs(uv[root]) == 0 else imm.tr.transport(PathSpec(_plane_path(p, i, uv[root]))).matrix @ imm.F0[i]
    F = _propagate(order, parent, T, F0, root)
    V = imm.to_output(lh.immerse_many(F))
    sid = np.full(len(uv), -1, dtype=np.int64)
    if seams is not None:
        for k, key in enumerate(ring_keys):
            sid[n_grid + k] = seams.get(key)
    return MeshPatch(ch, f"cap_{i}", uv, V, _orient(tri, uv), sid, F)


def _orient(tri, uv):
    """Counterclockwise triangles in the parameter plane."""
    a, b, c = uv[tri[:, 0]], uv[tri[:, 1]], uv[tri[:, 2]]
    cr = ((b - a).conjugate() * (c - a)).imag
    tri = tri.copy()
    flip = cr < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def _annulus_triangles(nr, na):
    """Triangles of an nr x na ring grid (index r * na + k) closing in k."""
    r = np.arange(nr - 1)[:, None]
    k = np.arange(na)[None, :]
    a = r * na + k
    b = r * na + (k + 1) % na
    c = (r + 1) * na + k
    d = (r + 1) * na + (k + 1) % na
    t1 = np.stack([a, b, d], axis=-1).reshape(-1, 3)
    t2 = np.stack([a, d, c], axis=-1).reshape(-1, 3)
    return np.concatenate([t1, t2])


def _polar_F(imm, chart, centre, radii, angles, F_start, start_point):
    """F on a polar grid around ``centre`` using radial lines and ring arcs."""
    p = imm.params
    nr, na = len(radii), len(angles)
    N = nr * na
    kinds = np.empty(N, dtype=np.int64)
    a = np.empty(N, dtype=complex)
    b = np.empty(N, dtype=complex)
    rr = np.zeros(N)
    parent = np.empty(N, dtype=np.int64)
    for r in range(nr):
        for k in range(na):
            v = r * na + k
            if k == 0:
                kinds[v] = SEG_LINE
                a[v] = start_point if r == 0 else centre + radii[r - 1] * cmath.exp(1j * angles[0])
                b[v] = centre + radii[r] * cmath.exp(1j * angles[0])
                parent[v] = -1 if r == 0 else (r - 1) * na
            else:
                kinds[v] = SEG_ARC
                a[v] = centre
                b[v] = complex(angles[k - 1], angles[k])
                rr[v] = radii[r]
                parent[v] = v - 1
    steps = None
    if kinds.size:
        L = np.where(kinds == SEG_ARC, np.abs(b.imag - b.real), np.abs(b - a) / np.maximum(
            np.minimum(np.abs(a - centre), np.abs(b - centre)), 1e-300))
        steps = np.maximum(4, np.ceil(L / EDGE_H)).astype(np.int64)
    T = edge_transports(p, chart, kinds, a, b, rr, steps)
    F = np.empty((N, 2, 2), dtype=complex)
    for v in range(N):
        F[v] = T[v] @ (F_start if parent[v] < 0 else F[parent[v]])
    return F


def _neck_F(imm, e, us, angles, F_start, start_log):
    """F on a log-polar grid w = exp(u + i angle) in the neck chart."""
    p = imm.params
    i, j = p.pairs[e]
    ch = ChartId.neck(i, j)
    nr, na = len(us), len(angles)
    N = nr * na
    a = np.empty(N, dtype=complex)
    b = np.empty(N, dtype=complex)
    parent = np.empty(N, dtype=np.int64)
    for r in range(nr):
        for k in range(na):
            v = r * na + k
            b[v] = complex(us[r], angles[k])
            if k == 0:
                a[v] = start_log if r == 0 else complex(us[r - 1], angles[0])
                parent[v] = -1 if r == 0 else (r - 1) * na
            else:
                a[v] = complex(us[r], angles[k - 1])
                parent[v] = v - 1
    L = np.abs(b - a)
    steps = np.maximum(4, np.ceil(L / EDGE_H)).astype(np.int64)
    T = edge_transports(p, ch, np.full(N, SEG_LOG, np.int64), a, b, np.zeros(N), steps)
    F = np.empty((N, 2, 2), dtype=complex)
    for v in range(N):
        F[v] = T[v] @ (F_start if parent[v] < 0 else F[parent[v]])
    return F


def build_pair_patches(imm: Immersion, e: int, eps: float = EPS, grid: int = 64,
                       seams: _SeamIds = None) -> list:
    """Transition halves and neck for pair e: [trans_i_out, trans_i_in, neck, trans_j_in, trans_j_out]."""
    p = imm.params
    if p.tau == 0:
        return []
    i, j = p.pairs[e]
    tij, tji = p.t_pair(e)
    lti, ltj = p.log_t_pair(e)
    na = grid
    nr_plane = max(3, grid // 4)
    phi = 2 * np.pi * np.arange(na) / na
    seams = seams or _SeamIds()
    out = []

    # plane-chart halves
    def plane_half(side):
        k = (i, j)[side]
        t = (tij, tji)[side]
        q = p.p(e, side)
        ang = ring_angles(p, e, side, na)
        off = float(ang[0])
        radii = np.exp(np.linspace(math.log(eps), 0.5 * math.log(abs(t)), nr_plane))
        ch = ChartId.plane(k)
        F1 = imm.F_node_start(e, side)
        # from p + 1 to the angle of the first ring vertex along the unit circle
        arc = Segment(ch, SEG_ARC, q, complex(0.0, off), 1.0)
        Fs = imm.tr.transport(PathSpec([arc])).matrix @ F1 if off != 0 else F1
        F = _polar_F(imm, ch, q, radii, ang, Fs, q + cmath.exp(1j * off))
        uv = (q + radii[:, None] * np.exp(1j * ang[None, :])).ravel()
        sid = np.full(len(uv), -1, dtype=np.int64)
        sid[:na] = [seams.get(("ring", e, side, kk)) for kk in range(na)]
        sid[-na:] = [seams.get(("mid", e, side, kk)) for kk in range(na)]
        tri = _annulus_triangles(nr_plane, na)
        V = imm.to_output(lh.immerse_many(F))
        return MeshPatch(ch, f"transition_{i}_{j}_{'ij'[side]}_plane", uv, V, _orient(tri, uv),
                         sid, F, na)

    # neck-chart grid: u from log sqrt|t_ij| to -log sqrt|t_ji|
    u0, u3 = 0.5 * math.log(abs(tij)), -0.5 * math.log(abs(tji))
    u1, u2 = math.log(eps), -math.log(eps)
    n_in = max(3, grid // 4)
    n_neck = grid
    us = np.concatenate([np.linspace(u0, u1, n_in)[:-1], np.linspace(u1, u2, n_neck),
                         np.linspace(u2, u3, n_in)[1:]])
    # w-angle of ring vertex k matches the plane ring: z - p_ij = t_ij / w
    ang_w = lti.imag - phi
    Fs = imm.F_node_start(e, 0)
    F = _neck_F(imm, e, us, ang_w, Fs, lti)
    logw = (us[:, None] + 1j * ang_w[None, :]).ravel()
    Vn = imm.to_output(lh.immerse_many(F))
    ch = ChartId.neck(i, j)
    nrows = len(us)

    def neck_part(r0, r1, name, first_key, last_key):
        rows = np.arange(r0, r1)
        idx = (rows[:, None] * na + np.arange(na)[None, :]).ravel()
        sid = np.full(len(idx), -1, dtype=np.int64)
        if first_key:
            sid[:na] = [seams.get(first_key + (kk,)) for kk in range(na)]
        if last_key:
            sid[-na:] = [seams.get(last_key + (kk,)) for kk in range(na)]
        tri = _annulus_triangles(len(rows), na)
        return MeshPatch(ch, name, np.exp(logw[idx]), Vn[idx], _orient(tri, logw[idx]), sid,
                         F[idx], na)

    r1 = n_in - 1
    r2 = r1 + n_neck - 1
    out.append(plane_half(0))
    out.append(neck_part(0, r1 + 1, f"transition_{i}_{j}_i_neck", ("mid", e, 0), ("neck", e, 0)))
    out.append(neck_part(r1, r2 + 1, f"neck_{i}_{j}", ("neck", e, 0), ("neck", e, 1)))
    out.append(neck_part(r2, nrows, f"transition_{i}_{j}_j_neck", ("neck", e, 1), ("mid", e, 1)))
    out.append(plane_half(1))
    return out


def build_neck(imm: Immersion, e: int, eps: float = EPS, grid: int = 64) -> MeshPatch:
    return build_pair_patches(imm, e, eps, grid)[2]


def build_transition(imm: Immersion, e: int, side: int, eps: float = EPS, grid: int = 64) -> list:
    parts = build_pair_patches(imm, e, eps, grid)
    return [parts[0], parts[1]] if side == 0 else [parts[3], parts[4]]


@dataclass
class SurfaceMesh:
    patches: list
    seam_gap: float
    seam_gaps: dict = field(default_factory=dict)


def build_surface(params: SurfaceParams, eps: float = EPS, R: float = R_CAP, grid: int = 64,
                  imm: Immersion = None) -> SurfaceMesh:
    """Every cap plus the patches of every pair, with the largest gap across seams."""
    imm = imm or Immersion(params)
    seams = _SeamIds()
    patches = [build_horosphere_cap(imm, i, eps, R, grid, seams) for i in range(params.n)]
    for e in range(params.m):
        patches += build_pair_patches(imm, e, eps, grid, seams)
    gaps = seam_gaps(patches)
    return SurfaceMesh(patches, max(gaps.values(), default=0.0), gaps)


def seam_gaps(patches) -> dict:
    """Largest distance between copies of each kind of seam vertex."""
    pos = {}
    for P in patches:
        for v in np.flatnonzero(P.seam_ids >= 0):
            pos.setdefault(int(P.seam_ids[v]), []).append(P.vertices[v])
    out = {}
    for key, vs in pos.items():
        if len(vs) > 1:
            vs = np.array(vs)
            out[key] = float(np.abs(vs - vs[0]).max())
    return out


# ---------------------------------------------------------------------------
# hat-frame diagnostics


def hat_points(params: SurfaceParams, e: int, F: np.ndarray) -> np.ndarray:
    """Half-space points of H F in the pair frame of e."""
    H = pair_frame(params, e).H
    return lh.immerse_many(H @ F)


def catenoid_limit(params: SurfaceParams, e: int, w, b=None) -> np.ndarray:
    """Blown-up neck limit (x1 + i x2, x3) as an (N, 3) array.

    With ``b`` None the t -> 0 value b0 = (xi_i + xi_j)/2 is used."""
    i, j = params.pairs[e]
    rho2 = pair_frame(params, e).rho ** 2
    w = np.asarray(w, dtype=complex)
    bb = (params.xi[i] + params.xi[j]) / 2 if b is None else b
    hz = -(bb / 2) * rho2 * (1 / w - 1) - np.conj((bb / 2) / rho2 * (w - 1))
    x3 = -np.real(bb * np.log(w)) if b is not None else -bb * np.log(np.abs(w))
    return np.column_stack([hz.real, hz.imag, x3])


def neck_blowup(params: SurfaceParams, e: int, neck: MeshPatch, imm: Immersion) -> np.ndarray:
    """(hat f - hat f(1_ij)) / tau on the neck vertices."""
    i, j = params.pairs[e]
    F1 = imm.F_at(ChartId.neck(i, j), 1.0 + 0j)
    X1 = hat_points(params, e, F1[None])[0]
    X = hat_points(params, e, neck.F)
    return (X - X1) / params.tau


def neck_deviation(params: SurfaceParams, e: int, neck: MeshPatch, imm: Immersion,
                   use_solved_b: bool = False) -> float:
    Xt = neck_blowup(params, e, neck, imm)
    C = catenoid_limit(params, e, neck.uv, params.b[e] if use_solved_b else None)
    return float(np.abs(Xt - C).max())


def necksize(params: SurfaceParams, e: int, neck: MeshPatch, imm: Immersion) -> float:
    """Smallest mean radius of the blown-up rings around their centres."""
    Xt = neck_blowup(params, e, neck, imm)
    rings = Xt[:, :2].reshape(-1, neck.ring_size, 2)
    c = rings.mean(axis=1, keepdims=True)
    return float(np.linalg.norm(rings - c, axis=2).mean(axis=1).min())


def angle_proxy(params: SurfaceParams, e: int, patch: MeshPatch, side: int = 0) -> np.ndarray:
    """sin(theta)/(1 + cos(theta)) = x3/|G - x1 - i x2| in the hat frame of
    the side's horosphere (S_i for side 0, S_j for side 1), where theta is the
    angle between the normal and the upward vertical."""
    if side == 0:
        H = pair_frame(params, e).H
    else:
        H = lh.sl2_inv(params.F_horosphere(params.pairs[e][1], params.p0[e, 1]))
    X = lh.immerse_many(H @ patch.F)
    G = np.array([gauss_map(params, patch.chart, z) for z in patch.uv])
    Gh = np.array([lh.act_boundary(H, g) for g in G], dtype=object)
    out = np.empty(len(X))
    for k, g in enumerate(Gh):
        out[k] = 0.0 if lh.is_inf(g) else X[k, 2] / abs(g - X[k, 0] - 1j * X[k, 1])
    return out


def horosphere_distance(S, X: np.ndarray) -> np.ndarray:
    """Euclidean distance of half-space points to a horosphere."""
    if S.is_plane:
        return np.abs(X[:, 2] - S.h)
    c = np.array([S.p.real, S.p.imag, S.R])
    return np.abs(np.linalg.norm(X - c, axis=1) - S.R)


# ---------------------------------------------------------------------------
# ends


@dataclass
class EndAnalysis:
    i: int
    alpha: complex
    beta: complex
    delta: complex
    eigenvalues: tuple
    exponent: float
    predicted: float
    fitted: float = float("nan")
    resonant: bool = False

    def to_row(self) -> list:
        return [self.i, self.alpha, self.beta, self.delta, self.exponent, self.fitted]


def end_exponent(alpha, beta):
    """Growth exponent 1 - sqrt(1 + 4 alpha beta) and the spectral data of A0."""
    ab = complex(alpha) * complex(beta)
    d = 1 + 4 * ab
    sq = cmath.sqrt(d)
    lam = ((-1 + sq) / 2, (-1 - sq) / 2)
    resonant = abs(sq) > 0.5 and abs(sq - round(sq.real)) < 1e-6
    return d, lam, 1 - sq, resonant


def analyze_end(params: SurfaceParams, i: int, imm: Immersion = None, fit: bool = True,
                radii=None) -> EndAnalysis:
    """Residue alpha of the hatted Gauss map at the end of C_i, beta with
    alpha^2 beta = hat lambda_i, and the exponent 1 - sqrt(1 + 4 alpha beta)."""
    nodes = params.nodes_of(i)
    if not nodes:
        raise ValidationError("horosphere without tangencies has no end analysis")
    a = params.a
    dG = 0j  # derivative of G(1/w) at w = 0
    for e, side, _ in nodes:
        ii, jj = params.pairs[e]
        dG += a[e] * (params.c[jj] - params.c[ii]) / (2 * params.lam[i])
    if dG == 0:
        raise ValidationError("the end analysis needs tau > 0")
    H10 = hat_frame(params, i)[1, 0]
    alpha = -1 / (H10 ** 2 * dG)
    lam_hat = params.mu[i]
    beta = lam_hat / alpha ** 2
    d, lams, ex, res = end_exponent(alpha, beta)
    if res:
        warnings.warn(f"resonant end {i}: sqrt(1 + 4 alpha beta) = {cmath.sqrt(d)}", ResonanceWarning)
    zeta = 0.5 * sum(params.xi[i] + params.xi[other] for _, _, other in nodes)
    out = EndAnalysis(i, complex(alpha), complex(beta), d, lams, float(ex.real),
                      float(params.tau * zeta), resonant=res)
    if fit:
        out.fitted = far_field_slope(params, i, imm, radii)
    return out


def _clear_angle(params, i):
    nodes = [params.p(e, s) for e, s, _ in params.nodes_of(i)]
    best, th_best = -1, 0.0
    for k in range(48):
        th = 2 * np.pi * k / 48
        d = min((abs(q - max(0.0, (q * cmath.exp(-1j * th)).real) * cmath.exp(1j * th)) for q in nodes))
        if d > best:
            best, th_best = d, th
    return th_best


def far_field_slope(params: SurfaceParams, i: int, imm: Immersion = None, radii=None) -> float:
    """Slope of log x3 against log |x1 + i x2| in the hat frame along a ray to the end.

    Transports are taken in deviation form, and the exact transport
    I + z A0 of the constant part is mapped to the hat frame analytically, so
    the O(1) lower row of the hatted lift keeps full precision although the
    lift itself grows like |z|."""
    imm = imm or Immersion(params)
    radii = np.logspace(2, 6, 17) if radii is None else np.asarray(radii)
    th = _clear_angle(params, i)
    ch = ChartId.plane(i)
    segs = [Segment(ch, SEG_LINE, 0j, radii[0] * cmath.exp(1j * th))]
    for r1, r2 in zip(radii[:-1], radii[1:]):
        segs.append(Segment(ch, SEG_LOG, complex(math.log(r1), th), complex(math.log(r2), th)))
    H = hat_frame(params, i)
    A0h = np.array([[0, params.mu[i]], [0, 0]], dtype=complex)
    # the signal is a relative change of order tau log(r_max/r_min), far above 1e-8
    tr = Transporter(params, 1e-8)
    Fh = []
    for k, r in enumerate(radii):
        D = tr.transport(PathSpec(segs[:k + 1]), dev=True).matrix
        z = r * cmath.exp(1j * th)
        Fh.append((H + z * A0h @ H + H @ D) @ imm.F0[i])
    X = lh.immerse_many(np.array(Fh))
    rad = np.hypot(X[:, 0], X[:, 1])
    return float(np.polyfit(np.log(rad), np.log(X[:, 2]), 1)[0])


def hat_frame(params: SurfaceParams, i: int) -> np.ndarray:
    """Isometry sending S_i to x3 = 1 and f_i(0) to (0, 0, 1)."""
    return unipotent(-params.w0[i]) @ params.K[i]


# ---------------------------------------------------------------------------
# export


def export_mesh(patches, path=None, model: str = "halfspace", fmt: str = "obj") -> str:
    """Write patches as one OBJ (groups per patch) or PLY file; returns the text."""
    if not patches:
        raise ValidationError("no patches to export")
    if model not in ("halfspace", "ball"):
        raise ValidationError(f"unknown model {model!r}")
    buf = io.StringIO()
    allV = [P.vertices if model == "halfspace" else lh.half_space_to_ball(P.vertices) for P in patches]
    if fmt == "obj":
        buf.write(f"# horoforge surface mesh, model={model}\n")
        off = 1
        for P, V in zip(patches, allV):
            buf.write(f"g {P.name}\n")
            for x in V:
                buf.write(f"v {x[0]:.12e} {x[1]:.12e} {x[2]:.12e}\n")
            for t in P.triangles:
                buf.write(f"f {t[0] + off} {t[1] + off} {t[2] + off}\n")
            off += len(V)
    elif fmt == "ply":
        nv = sum(len(V) for V in allV)
        nt = sum(len(P.triangles) for P in patches)
        buf.write("ply\nformat ascii 1.0\n")
        buf.write(f"element vertex {nv}\nproperty double x\nproperty double y\nproperty double z\n")
        buf.write(f"element face {nt}\nproperty list uchar int vertex_indices\nend_header\n")
        for V in allV:
            for x in V:
                buf.write(f"{x[0]:.12e} {x[1]:.12e} {x[2]:.12e}\n")
        off = 0
        for P, V in zip(patches, allV):
            for t in P.triangles:
                buf.write(f"3 {t[0] + off} {t[1] + off} {t[2] + off}\n")
            off += len(V)
    else:
        raise ValidationError(f"unknown format {fmt!r}")
    text = buf.getvalue()
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def read_obj(text: str):
    """Parse an OBJ written by ``export_mesh``; also returns its group names."""
    V, Fc, groups = [], [], []
    for line in text.splitlines():
        if line.startswith("v "):
            V.append([float(x) for x in line.split()[1:]])
        elif line.startswith("f "):
            Fc.append([int(x) - 1 for x in line.split()[1:]])
        elif line.startswith("g "):
            groups.append(line[2:])
    return np.array(V), np.array(Fc, dtype=np.int64), groups


# ---------------------------------------------------------------------------
# embeddedness


@dataclass
class ProbeReport:
    n_triangles: int
    candidate_pairs: int
    intersections: int
    pairs: list

    def to_dict(self) -> dict:
        return {"n_triangles": self.n_triangles, "candidate_pairs": self.candidate_pairs,
                "intersections": self.intersections, "pairs": self.pairs[:100]}


def _global_mesh(patches):
    verts, tris, owner = [], [], []
    vid = []
    nxt = 0
    seam_map = {}
    off = 0
    for k, P in enumerate(patches):
        ids = np.arange(len(P.vertices)) + nxt
        for v in np.flatnonzero(P.seam_ids >= 0):
            key = int(P.seam_ids[v])
            if key in seam_map:
                ids[v] = seam_map[key]
            else:
                seam_map[key] = ids[v]
        nxt += len(P.vertices)
        verts.append(P.vertices)
        vid.append(ids)
        tris.append(P.triangles + off)
        owner.append(np.full(len(P.triangles), k))
        off += len(P.vertices)
    V = np.concatenate(verts)
    ident = np.concatenate(vid)
    T = np.concatenate(tris)
    return V, T, ident[T], np.concatenate(owner)


def _candidate_pairs(V, T):
    """Triangle pairs whose bounding spheres overlap, bucketed by size class."""
    P = V[T]
    cen = P.mean(axis=1)
    rad = np.linalg.norm(P - cen[:, None, :], axis=2).max(axis=1)
    cls = np.floor(np.log2(np.maximum(rad, 1e-300))).astype(int)
    out = []
    classes = np.unique(cls)
    trees = {c: (np.flatnonzero(cls == c), None) for c in classes}
    trees = {c: (idx, cKDTree(cen[idx])) for c, (idx, _) in trees.items()}
    for a in classes:
        ia, ta = trees[a]
        for b in classes:
            if b < a:
                continue
            ib, tb = trees[b]
            r = 2.0 ** (a + 1) + 2.0 ** (b + 1)
            if a == b:
                pr = ta.query_pairs(r, output_type="ndarray")
                if len(pr):
                    out.append(np.column_stack([ia[pr[:, 0]], ia[pr[:, 1]]]))
            else:
                sm = ta.sparse_distance_matrix(tb, r, output_type="ndarray")
                if len(sm):
                    out.append(np.column_stack([ia[sm["i"]], ib[sm["j"]]]))
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    pr = np.concatenate(out)
    d = np.linalg.norm(cen[pr[:, 0]] - cen[pr[:, 1]], axis=1)
    return pr[d <= rad[pr[:, 0]] + rad[pr[:, 1]]]


def _seg_tri(P0, P1, A, B, C, eps=1e-12):
    """Vectorised segment/triangle crossing (open segment, open triangle)."""
    d = P1 - P0
    e1 = B - A
    e2 = C - A
    h = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, h)
    scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1) * np.linalg.norm(d, axis=1)
    ok = np.abs(det) > 1e-12 * scale
    inv = np.where(ok, 1 / np.where(ok, det, 1), 0)
    s = P0 - A
    u = np.einsum("ij,ij->i", s, h) * inv
    q = np.cross(s, e1)
    v = np.einsum("ij,ij->i", d, q) * inv
    t = np.einsum("ij,ij->i", e2, q) * inv
    return ok & (u > eps) & (v > eps) & (u + v < 1 - eps) & (t > eps) & (t < 1 - eps)


def tri_tri_intersect(T1: np.ndarray, T2: np.ndarray) -> np.ndarray:
    """Crossing test for triangle pairs (N, 3, 3): some edge of one pierces the other."""
    hit = np.zeros(len(T1), dtype=bool)
    for X, Y in ((T1, T2), (T2, T1)):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            hit |= _seg_tri(X[:, a], X[:, b], Y[:, 0], Y[:, 1], Y[:, 2])
    return hit


def embeddedness_probe(patches, chunk: int = 200000) -> ProbeReport:
    """Self-intersection scan: size-bucketed sphere broad phase, edge/triangle narrow phase.
    Triangles sharing a vertex (after identifying seam vertices) are skipped."""
    V, T, ident, owner = _global_mesh(patches)
    pr = _candidate_pairs(V, T)
    if len(pr):
        A, B = ident[pr[:, 0]], ident[pr[:, 1]]
        share = np.zeros(len(pr), dtype=bool)
        for a in range(3):
            for b in range(3):
                share |= A[:, a] == B[:, b]
        pr = pr[~share]
    hits = []
    for k in range(0, len(pr), chunk):
        p = pr[k:k + chunk]
        h = tri_tri_intersect(V[T[p[:, 0]]], V[T[p[:, 1]]])
        hits.append(p[h])
    hits = np.concatenate(hits) if hits else np.zeros((0, 2), dtype=np.int64)
    pairs = [(int(a), int(b)) for a, b in hits]
    return ProbeReport(len(T), int(len(pr)), len(pairs), pairs)


def negative_control(patch: MeshPatch, angle_deg: float = 5.0, shift: float = 0.0) -> MeshPatch:
    """Copy of a patch rotated about its centroid (and optionally shifted)."""
    V = patch.vertices
    c = V.mean(axis=0)
    th = math.radians(angle_deg)
    Rm = np.array([[1, 0, 0], [0, math.cos(th), -math.sin(th)], [0, math.sin(th), math.cos(th)]])
    W = (V - c) @ Rm.T + c
    W[:, 2] += shift
    return MeshPatch(patch.chart, patch.name + "_copy", patch.uv.copy(), W, patch.triangles.copy())
