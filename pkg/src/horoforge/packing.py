"""Horosphere packings in H^3 (half-space model) and horocycle packings in H^2.

A horosphere is either a euclidean sphere tangent to the boundary plane at
its limit point ``p`` (radius ``R``) or a horizontal plane at height ``h``
(limit point at infinity).  Horocycles live in the Poincare disk and are
circles internally tangent to the unit circle.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import lin_hyp as lh
from .errors import (
    DegenerateError,
    GeometryError,
    InvariantViolation,
    PreconditionError,
    ValidationError,
)

TOL_TANG = 1e-9

TANGENT = "Tangent"
DISJOINT = "Disjoint"
OVERLAPPING = "Overlapping"


@dataclass(frozen=True)
class Horosphere:
    kind: str
    p: complex = 0j
    R: float = 0.0
    h: float = 0.0

    def __post_init__(self):
        if self.kind == "sphere":
            if not self.R > 0:
                raise ValidationError(f"sphere horosphere needs R > 0, got {self.R}")
        elif self.kind == "plane":
            if not self.h > 0:
                raise ValidationError(f"plane horosphere needs h > 0, got {self.h}")
        else:
            raise ValidationError(f"unknown horosphere kind {self.kind!r}")

    @classmethod
    def sphere(cls, p, R) -> "Horosphere":
        return cls("sphere", complex(p), float(R))

    @classmethod
    def plane(cls, h) -> "Horosphere":
        return cls("plane", 0j, 0.0, float(h))

    @property
    def is_plane(self) -> bool:
        return self.kind == "plane"

    @property
    def limit_point(self):
        return lh.INF if self.is_plane else self.p

    def sample_point(self) -> lh.HalfSpacePoint:
        """A point on the horosphere: the top of the sphere, or (0, 0, h)."""
        if self.is_plane:
            return lh.HalfSpacePoint(0.0, 0.0, self.h)
        return lh.HalfSpacePoint(self.p.real, self.p.imag, 2 * self.R)

    def to_dict(self) -> dict:
        if self.is_plane:
            return {"kind": "plane", "h": self.h}
        return {"kind": "sphere", "p": [self.p.real, self.p.imag], "R": self.R}

    @classmethod
    def from_dict(cls, d: dict) -> "Horosphere":
        if d["kind"] == "plane":
            return cls.plane(d["h"])
        return cls.sphere(complex(d["p"][0], d["p"][1]), d["R"])


@dataclass(frozen=True)
class Horocycle:
    """Horocycle in the Poincare disk: boundary point ``q`` (|q| = 1), euclidean radius ``r``."""

    q: complex
    r: float

    @property
    def center(self) -> complex:
        return self.q * (1 - self.r)


def _close(a, b, tol=TOL_TANG):
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300)


def tangency_test(S1, S2) -> str:
    """Tangency status of a pair of horospheres (or horocycles)."""
    if isinstance(S1, Horocycle):
        d2 = abs(S1.center - S2.center) ** 2
        rr = (S1.r + S2.r) ** 2
        if _close(d2, rr):
            return TANGENT
        return DISJOINT if d2 > rr else OVERLAPPING
    if S1.is_plane and S2.is_plane:
        return OVERLAPPING if _close(S1.h, S2.h) else DISJOINT
    if S1.is_plane or S2.is_plane:
        sph, pl = (S2, S1) if S1.is_plane else (S1, S2)
        if _close(2 * sph.R, pl.h):
            return TANGENT
        return DISJOINT if 2 * sph.R < pl.h else OVERLAPPING
    d2 = abs(S1.p - S2.p) ** 2
    rr = 4 * S1.R * S2.R
    if _close(d2, rr):
        return TANGENT
    return DISJOINT if d2 > rr else OVERLAPPING


def _status_matrix(horos) -> np.ndarray:
    """Vectorised tangency_test over all pairs: +1 tangent, 0 disjoint, -1 overlapping."""
    n = len(horos)
    if n and isinstance(horos[0], Horocycle):
        c = np.array([h.center for h in horos])
        r = np.array([h.r for h in horos])
        lhs = np.abs(c[:, None] - c[None, :]) ** 2
        rhs = (r[:, None] + r[None, :]) ** 2
    else:
        plane = np.array([h.is_plane for h in horos])
        p = np.array([h.p for h in horos])
        R = np.array([h.R for h in horos])
        hh = np.array([h.h for h in horos])
        lhs = np.abs(p[:, None] - p[None, :]) ** 2
        rhs = 4 * R[:, None] * R[None, :]
        # sphere-plane: disjoint when 2R < h, i.e. compare h (lhs) with 2R (rhs)
        sp = plane[:, None] ^ plane[None, :]
        hv = np.where(plane[:, None], hh[:, None], hh[None, :])
        rv = np.where(plane[:, None], R[None, :], R[:, None])
        lhs = np.where(sp, hv, lhs)
        rhs = np.where(sp, 2 * rv, rhs)
        pp = plane[:, None] & plane[None, :]
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-300)
    status = np.where(np.abs(lhs - rhs) <= TOL_TANG * scale, 1, np.where(lhs > rhs, 0, -1))
    if n and not isinstance(horos[0], Horocycle):
        same = np.abs(hh[:, None] - hh[None, :]) <= TOL_TANG * np.maximum(hh[:, None], hh[None, :])
        status = np.where(pp, np.where(same, -1, 0), status)
    return status


@dataclass
class Packing:
    horospheres: list
    tangencies: list = field(default_factory=list)
    dim: int = 3

    @property
    def n(self) -> int:
        return len(self.horospheres)

    @property
    def m(self) -> int:
        return len(self.tangencies)

    @property
    def genus(self) -> int:
        return self.m - self.n + 1

    def graph(self) -> "TangencyGraph":
        return TangencyGraph(self.n, frozenset(self.tangencies))

    def neighbours(self, i) -> list:
        out = []
        for a, b in self.tangencies:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(out)

    def to_dict(self) -> dict:
        if self.dim == 2:
            hs = [{"kind": "horocycle", "q": [h.q.real, h.q.imag], "r": h.r} for h in self.horospheres]
        else:
            hs = [h.to_dict() for h in self.horospheres]
        return {"dim": self.dim, "horospheres": hs, "tangencies": [list(e) for e in self.tangencies]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict, validate: bool = True) -> "Packing":
        dim = d.get("dim", 3)
        try:
            if dim == 2:
                hs = [Horocycle(complex(*h["q"]), float(h["r"])) for h in d["horospheres"]]
            else:
                hs = [Horosphere.from_dict(h) for h in d["horospheres"]]
        except (KeyError, TypeError, IndexError) as exc:
            raise ValidationError(f"malformed packing entry: {exc}") from exc
        if "tangencies" in d and d["tangencies"] is not None:
            tang = sorted((min(i, j), max(i, j)) for i, j in d["tangencies"])
            P = cls(hs, tang, dim)
            if validate:
                validate_packing(P)
            return P
        P = with_tangencies(hs, dim)
        if validate:
            validate_packing(P)
        return P

    @classmethod
    def from_json(cls, text: str, validate: bool = True) -> "Packing":
        return cls.from_dict(json.loads(text), validate)


@dataclass(frozen=True)
class TangencyGraph:
    n: int
    edges: frozenset

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def genus(self) -> int:
        return self.m - self.n + 1

    def is_connected(self) -> bool:
        if self.n <= 1:
            return True
        if not self.edges:
            return False
        e = np.array(sorted(self.edges))
        A = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(self.n, self.n))
        k, _ = connected_components(A, directed=False)
        return k == 1


def with_tangencies(horos, dim=3) -> Packing:
    st = _status_matrix(horos)
    iu, ju = np.triu_indices(len(horos), 1)
    tang = [(int(i), int(j)) for i, j in zip(iu, ju) if st[i, j] == 1]
    return Packing(list(horos), tang, dim)


def validate_packing(P: Packing, require_connected: bool = False) -> None:
    """Check the packing invariants; raises ValidationError."""
    st = _status_matrix(P.horospheres)
    tset = set(P.tangencies)
    for i, j in combinations(range(P.n), 2):
        s = st[i, j]
        if s == -1:
            raise ValidationError(f"horospheres {i} and {j} overlap")
        if (i, j) in tset and s != 1:
            raise ValidationError(f"pair ({i},{j}) declared tangent but is not")
        if (i, j) not in tset and s == 1:
            raise ValidationError(f"pair ({i},{j}) is tangent but not declared")
    if require_connected and not P.graph().is_connected():
        raise ValidationError("tangency graph is not connected")


# ---------------------------------------------------------------------------
# isometries acting on horospheres


def horosphere_image(H, S: Horosphere) -> Horosphere:
    """Image of a horosphere under the isometry of H^3 induced by ``H``."""
    c = lh.act_boundary(H, S.limit_point)
    if not lh.is_inf(c):
        z = S.limit_point
        if lh.is_inf(z):
            den, scale = H[1, 0], abs(H[0, 0])
        else:
            den, scale = H[1, 0] * z + H[1, 1], abs(H[0, 0] * z) + abs(H[0, 1])
        # a limit point sent numerically next to infinity is infinity
        if abs(den) <= 1e-12 * scale:
            c = lh.INF
    x = lh.half_space_to_minkowski(S.sample_point())
    y = lh.minkowski_to_half_space(lh.act_isometry(H, x))
    if lh.is_inf(c):
        return Horosphere.plane(y.x3)
    R = (abs(y.horizontal - c) ** 2 + y.x3**2) / (2 * y.x3)
    return Horosphere.sphere(c, R)


def normalizing_isometry(S: Horosphere) -> np.ndarray:
    """SL(2,C) matrix sending ``S`` to the horizontal plane at height 1."""
    if S.is_plane:
        a = 1 / math.sqrt(S.h)
        return np.array([[a, 0], [0, 1 / a]], dtype=complex)
    D = 2 * S.R
    K = np.array([[0, 1], [-1, S.p]], dtype=complex)
    return np.diag([math.sqrt(D), 1 / math.sqrt(D)]).astype(complex) @ K


def _order_key(S: Horosphere):
    if S.is_plane:
        return (1, 0.0, 0.0)
    return (0, round(S.p.real, 12), round(S.p.imag, 12))


def solve_apollonius_tangent(S1, S2, S3):
    """The two horospheres tangent to three pairwise tangent horospheres."""
    for A, B in ((S1, S2), (S1, S3), (S2, S3)):
        if tangency_test(A, B) != TANGENT:
            raise DegenerateError("apollonius inputs must be pairwise tangent")
    K = normalizing_isometry(S1)
    T2, T3 = horosphere_image(K, S2), horosphere_image(K, S3)
    if T2.is_plane or T3.is_plane:
        raise DegenerateError("normalization produced a second plane")
    q2, q3 = T2.p, T3.p
    mid = 0.5 * (q2 + q3)
    off = 1j * (math.sqrt(3) / 2) * (q3 - q2)
    Kinv = lh.sl2_inv(K)
    sols = [horosphere_image(Kinv, Horosphere.sphere(mid + sg * off, 0.5)) for sg in (1, -1)]
    sols.sort(key=_order_key)
    return sols[0], sols[1]


# ---------------------------------------------------------------------------
# generators


def lattice_points(R: float) -> list:
    R = float(R)
    k = int(math.ceil(2 * R / math.sqrt(3))) + 2
    w = complex(0.5, math.sqrt(3) / 2)
    pts = []
    for b in range(-k, k + 1):
        for a in range(-2 * k, 2 * k + 1):
            z = a + b * w
            if abs(z) ** 2 <= R * R + 1e-9:
                pts.append((b, a, z))
    pts.sort()
    return [z for _, _, z in pts]


def build_lattice_packing(R: float) -> Packing:
    """Radius-1/2 spheres on the equilateral lattice within the closed disk D(0,R), plus the plane x3=1."""
    if R < 0:
        raise ValidationError("lattice radius must be >= 0")
    horos = [Horosphere.plane(1.0)] + [Horosphere.sphere(z, 0.5) for z in lattice_points(R)]
    return with_tangencies(horos)


def build_apollonian_packing(steps: int, choice_seed: int = 0) -> Packing:
    """Iterated Apollonius insertion starting from the plane and two tangent spheres."""
    if steps < 0:
        raise ValidationError("steps must be >= 0")
    rng = np.random.default_rng(choice_seed)
    horos = [Horosphere.plane(1.0), Horosphere.sphere(0, 0.5), Horosphere.sphere(1, 0.5)]
    tang = [(0, 1), (0, 2), (1, 2)]
    # open slots: (triple, candidate) where candidate is a free solution of the triple
    sols = solve_apollonius_tangent(*horos)
    slots = [((0, 1, 2), sols[0]), ((0, 1, 2), sols[1])]
    for _ in range(steps):
        # a slot is usable when its candidate touches exactly its triple and
        # misses everything else; stale slots are dropped
        while True:
            if not slots:
                raise GeometryError("no admissible apollonius slot left")
            k = int(rng.integers(len(slots)))
            triple, cand = slots.pop(k)
            st = _status_matrix(horos + [cand])[-1, :-1]
            if not np.any(st == -1) and set(np.flatnonzero(st == 1)) == set(triple):
                break
        new = len(horos)
        horos.append(cand)
        for i in triple:
            tang.append((i, new))
        for a, b in combinations(triple, 2):
            x, y = solve_apollonius_tangent(horos[a], horos[b], cand)
            other = next(v for v in triple if v not in (a, b))
            known = horos[other]
            if _same(x, known):
                free = y
            elif _same(y, known):
                free = x
            else:
                raise GeometryError("apollonius involution failed")
            slots.append(((a, b, new), free))
    return Packing(horos, sorted(tang))


def _same(A: Horosphere, B: Horosphere, tol=1e-7) -> bool:
    if A.is_plane or B.is_plane:
        return A.is_plane and B.is_plane and abs(A.h - B.h) <= tol * max(A.h, B.h)
    return abs(A.p - B.p) <= tol * (1 + abs(A.p)) and abs(A.R - B.R) <= tol * max(A.R, B.R)


def cayley_to_disk(z):
    if lh.is_inf(z):
        return 1 + 0j
    return (z - 1j) / (z + 1j)


def build_horocycle_chain(n: int) -> Packing:
    """2D packing with 2n-3 tangencies: the line y=1 and a row of unit-diameter
    circles in the upper half plane, carried to the disk by the Cayley map."""
    if n < 2:
        raise ValidationError("horocycle chain needs n >= 2")
    # (boundary point, a point of the horocycle) in the upper half plane
    data = [(lh.INF, 1j)] + [(float(x), complex(x, 1)) for x in range(n - 1)]
    cycles = []
    for q, w in data:
        q = cayley_to_disk(q)
        w0 = cayley_to_disk(w)
        re = (w0 * np.conj(q)).real
        r = abs(w0 - q) ** 2 / (2 * (1 - re))
        cycles.append(Horocycle(complex(q), float(r)))
    return with_tangencies(cycles, dim=2)


# ---------------------------------------------------------------------------
# bounds and diagnostics


def random_loxodromic(rng: np.random.Generator) -> np.ndarray:
    """A random isometry whose matrix is far from diagonal, so radii become distinct."""
    return lh.random_sl2(rng, scale=1.0)


def verify_packing_bounds(P: Packing, seed: int = 12345) -> dict:
    """Combinatorial bounds of a packing; raises InvariantViolation on failure."""
    rep = {"dim": P.dim, "n": P.n, "m": P.m, "genus": P.genus}
    if P.dim == 2:
        rep["bound"] = 2 * P.n - 3
        rep["bound_ok"] = P.m <= 2 * P.n - 3
        if not rep["bound_ok"]:
            raise InvariantViolation(f"2D bound violated: m={P.m} > 2n-3={2 * P.n - 3}")
        return rep
    rep["bound"] = 5 * P.n - 16 if P.n >= 5 else None
    rep["bound_ok"] = P.n < 5 or P.m <= 5 * P.n - 16
    if not rep["bound_ok"]:
        raise InvariantViolation(f"3D bound violated: m={P.m} > 5n-16={5 * P.n - 16}")
    # lemma: after a generic isometry, the smallest horosphere has <= 5 tangencies,
    # checked along the whole removal induction
    rng = np.random.default_rng(seed)
    H = random_loxodromic(rng)
    img = [horosphere_image(H, S) for S in P.horospheres]
    if any(S.is_plane for S in img):
        H = random_loxodromic(rng)
        img = [horosphere_image(H, S) for S in P.horospheres]
    moved = with_tangencies(img)
    rep["isometry_preserves_tangencies"] = set(moved.tangencies) == set(P.tangencies)
    if not rep["isometry_preserves_tangencies"]:
        raise InvariantViolation("tangency set changed under an isometry")
    alive = set(range(P.n))
    adj = {i: set(P.neighbours(i)) for i in range(P.n)}
    worst = 0
    while len(alive) > 1:
        k = min(alive, key=lambda i: img[i].R)
        deg = len(adj[k] & alive)
        worst = max(worst, deg)
        if deg > 5:
            raise InvariantViolation(f"smallest horosphere {k} has {deg} > 5 tangencies")
        alive.remove(k)
    rep["lemma_max_degree"] = worst
    rep["lemma_ok"] = True
    return rep


def angle_check(S1: Horosphere, S2: Horosphere, S3: Horosphere) -> float:
    """Angle at p1 of the triangle of limit points, for R1 < R2 <= R3."""
    if any(S.is_plane for S in (S1, S2, S3)):
        raise PreconditionError("angle_check needs three sphere horospheres")
    if not (S1.R < S2.R <= S3.R):
        raise PreconditionError("angle_check needs R1 < R2 <= R3")
    if tangency_test(S1, S2) != TANGENT or tangency_test(S1, S3) != TANGENT:
        raise PreconditionError("S1 must be tangent to S2 and S3")
    if tangency_test(S2, S3) == OVERLAPPING:
        raise PreconditionError("S2 and S3 must be tangent or disjoint")
    a = abs(S1.p - S2.p) ** 2
    b = abs(S1.p - S3.p) ** 2
    c = abs(S2.p - S3.p) ** 2
    cos = (a + b - c) / (2 * math.sqrt(a * b))
    return math.acos(max(-1.0, min(1.0, cos)))


def angle_bound_cos(R1, R2, R3) -> float:
    return (R1 * R2 + R1 * R3 - R2 * R3) / (2 * R1 * math.sqrt(R2 * R3))


@dataclass
class ScanRow:
    R: int
    n: int
    m: int
    ratio: float
    upper_ok: bool
    lower_ok: bool


def lattice_ratio_scan(R_max: float) -> tuple:
    """Rows (R, n, m, m/n) for integer R in 1..R_max and the fitted constant C
    in m >= 4n - C sqrt(n)."""
    if R_max < 1:
        raise ValidationError("R_max must be >= 1")
    rows = []
    C = 0.0
    for R in range(1, int(R_max) + 1):
        P = build_lattice_packing(R)
        n, m = P.n, P.m
        rows.append(ScanRow(R, n, m, m / n, m <= 4 * (n - 1), m / n >= (n - 1) / n))
        C = max(C, (4 * n - m) / math.sqrt(n))
    return rows, C


def report_csv(rows: list, header: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
