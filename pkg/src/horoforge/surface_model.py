"""Charted model of the noded surface and its first-order meromorphic data.

Plane charts ``C_i`` carry the horosphere parametrisations, neck charts
``C_ij`` the catenoidal necks.  Every field is affine in the parameters
``a_ij`` (first order), with the node-opening constraint ``t = t(a)`` folded
in:

* on ``C_i``:  ``G = c_i + sum_j a_ij (c_j - c_i) / (2 lam_i (z - p_ij))``
  and ``Omega = lam_i + sum_{j>i} a_ij/(z - p_ij) - sum_{j<i} a_ji/(z - p_ij)``;
* on ``C_ij``: ``G = (c_j z - c_i)/(z - 1)`` and
  ``Omega = a_ij (1 - z)^2 / (2 z^2)``.

The node ``p_ij`` of ``C_i`` is glued to ``0`` of ``C_ij`` by
``(z - p_ij) w = t_ij`` and ``p_ji`` of ``C_j`` to ``infinity`` by
``(z - p_ji) / w = t_ji``.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import lin_hyp as lh
from .errors import DegenerateError, GeometryError, PoleError, ValidationError
from .kernels import FIELD_NECK, FIELD_PLANE
from .packing import Packing, horosphere_image, normalizing_isometry

R_MIN = 1e-3
TAU_MAX = 1e-2
NODE_CLEARANCE = 2.6


@dataclass(frozen=True)
class ChartId:
    kind: str  # "plane" or "neck"
    i: int
    j: int = -1

    @classmethod
    def plane(cls, i):
        return cls("plane", i)

    @classmethod
    def neck(cls, i, j):
        return cls("neck", i, j)

    def __str__(self):
        return f"C{self.i}" if self.kind == "plane" else f"C{self.i}_{self.j}"


def tau_from_t(t: float) -> float:
    return 0.0 if t == 0 else math.exp(-1.0 / (t * t))


def t_from_tau(tau: float) -> float:
    return 0.0 if tau == 0 else 1.0 / math.sqrt(-math.log(tau))


def s_from_tau(tau: float) -> float:
    return 0.0 if tau == 0 else -tau * math.log(tau)


def unipotent(x) -> np.ndarray:
    return np.array([[1, x], [0, 1]], dtype=complex)


@dataclass
class SurfaceParams:
    """Model parameters.  ``pairs[e] = (i, j)`` with ``i < j``; ``q[2e]`` is
    ``q_ij`` and ``q[2e+1]`` is ``q_ji``."""

    n: int
    pairs: list
    c: np.ndarray
    lam: np.ndarray
    xi: np.ndarray
    p0: np.ndarray  # shape (|I|, 2): p0_ij, p0_ji
    K: np.ndarray  # (n, 2, 2) frames sending S_i to the plane x3 = 1
    w0: np.ndarray  # origin offsets of the parametrisations
    mu: np.ndarray  # scale of the parametrisations
    norm: np.ndarray  # isometry from the input frame to the working frame
    tau: float = 0.0
    b: np.ndarray = None
    q: np.ndarray = None
    horospheres: list = field(default_factory=list)

    def __post_init__(self):
        m = len(self.pairs)
        if self.b is None:
            self.b = self.b0.copy()
        if self.q is None:
            self.q = np.zeros(2 * m, dtype=complex)
        self.b = np.asarray(self.b, dtype=complex)
        self.q = np.asarray(self.q, dtype=complex)

    # -- derived quantities
    @property
    def m(self) -> int:
        return len(self.pairs)

    @property
    def genus(self) -> int:
        return self.m - self.n + 1

    @property
    def b0(self) -> np.ndarray:
        return np.array([(self.xi[i] + self.xi[j]) / 2 for i, j in self.pairs], dtype=complex)

    @property
    def s(self) -> float:
        return s_from_tau(self.tau)

    @property
    def t(self) -> float:
        return t_from_tau(self.tau)

    @property
    def a(self) -> np.ndarray:
        ci = np.array([self.c[i] for i, _ in self.pairs])
        cj = np.array([self.c[j] for _, j in self.pairs])
        return self.tau * self.b / (ci - cj)

    def t_pair(self, e):
        """(t_ij, t_ji) at first order."""
        i, j = self.pairs[e]
        a = self.a[e]
        return -a / (2 * self.lam[i]), a / (2 * self.lam[j])

    def log_t_pair(self, e, shift: int = 0):
        """Determinations of log t_ij and log t_ji from the principal log a_ij
        (``shift`` adds 2 pi k to arg a)."""
        i, j = self.pairs[e]
        la = cmath.log(self.a[e]) + 2j * math.pi * shift
        return la + cmath.log(-1 / (2 * self.lam[i])), la + cmath.log(1 / (2 * self.lam[j]))

    def p(self, e, side: int) -> complex:
        """Node position: side 0 is p_ij in C_i, side 1 is p_ji in C_j."""
        return complex(self.p0[e, side] + self.s * self.q[2 * e + side])

    def nodes_of(self, i: int) -> list:
        """(e, side, other) for every node of C_i, in pair order."""
        out = []
        for e, (a, b) in enumerate(self.pairs):
            if a == i:
                out.append((e, 0, b))
            elif b == i:
                out.append((e, 1, a))
        return out

    def with_params(self, tau=None, b=None, q=None) -> "SurfaceParams":
        return replace(
            self,
            tau=self.tau if tau is None else float(tau),
            b=(self.b if b is None else np.asarray(b, dtype=complex)).copy(),
            q=(self.q if q is None else np.asarray(q, dtype=complex)).copy(),
        )

    # -- fields for the kernel
    def plane_field(self, i: int):
        """Flat PLANE parameter array for chart C_i."""
        nodes = self.nodes_of(i)
        a = self.a
        ps, gs, ws = [], [], []
        for e, side, k in nodes:
            ii, jj = self.pairs[e]
            ps.append(self.p(e, side))
            gs.append(a[e] * (self.c[jj] - self.c[ii]) / (2 * self.lam[i]))
            ws.append(a[e] if side == 0 else -a[e])
        par = np.array([self.c[i], self.lam[i]] + ps + gs + ws, dtype=complex)
        return FIELD_PLANE, par, len(nodes)

    def neck_field(self, e: int):
        i, j = self.pairs[e]
        return FIELD_NECK, np.array([self.a[e], self.c[i], self.c[j]], dtype=complex), 0

    def field_of(self, chart: ChartId):
        if chart.kind == "plane":
            return self.plane_field(chart.i)
        return self.neck_field(self.pair_index(chart.i, chart.j))

    def pair_index(self, i, j) -> int:
        key = (min(i, j), max(i, j))
        try:
            return self.pairs.index(key)
        except ValueError:
            raise ValidationError(f"({i},{j}) is not a tangency pair") from None

    # -- matrices M_i
    def M(self, i: int, s: float = None) -> np.ndarray:
        """F(0_i) up to SU(2): the point at distance xi_i s along the inward
        normal geodesic from f_i(0)."""
        s = self.s if s is None else s
        return lh.sl2_inv(self.K[i]) @ unipotent(self.w0[i]) @ lh.xi(self.xi[i] * s)

    def F_horosphere(self, i: int, z) -> np.ndarray:
        """Null lift of the horosphere parametrisation f_i at z (tau = 0)."""
        return lh.sl2_inv(self.K[i]) @ unipotent(self.w0[i] + self.mu[i] * z)

    def A_const(self, i: int) -> np.ndarray:
        c, lam = self.c[i], self.lam[i]
        return lam * np.array([[c, -c * c], [1, -c]], dtype=complex)

    # -- serialisation
    def to_dict(self) -> dict:
        def cl(z):
            return [float(np.real(z)), float(np.imag(z))]

        return {
            "n": self.n,
            "pairs": [list(p) for p in self.pairs],
            "c": [cl(z) for z in self.c],
            "lambda": [cl(z) for z in self.lam],
            "xi": [float(x) for x in self.xi],
            "p0": [[cl(z) for z in row] for row in self.p0],
            "K": [[[cl(z) for z in row] for row in Ki] for Ki in self.K],
            "w0": [cl(z) for z in self.w0],
            "mu": [cl(z) for z in self.mu],
            "norm": [[cl(z) for z in row] for row in self.norm],
            "tau": self.tau,
            "b": [cl(z) for z in self.b],
            "q": [cl(z) for z in self.q],
            "derived": {
                "s": self.s,
                "t": self.t,
                "a": [cl(z) for z in self.a],
                "t_pairs": [[cl(z) for z in self.t_pair(e)] for e in range(self.m)] if self.tau > 0 else [],
                "p": [[cl(self.p(e, 0)), cl(self.p(e, 1))] for e in range(self.m)],
                "genus": self.genus,
            },
            "horospheres": [h.to_dict() for h in self.horospheres],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "SurfaceParams":
        from .packing import Horosphere

        def cz(v):
            return complex(v[0], v[1])

        try:
            sp = cls(
                n=int(d["n"]),
                pairs=[tuple(p) for p in d["pairs"]],
                c=np.array([cz(v) for v in d["c"]]),
                lam=np.array([cz(v) for v in d["lambda"]]),
                xi=np.array(d["xi"], dtype=float),
                p0=np.array([[cz(v) for v in row] for row in d["p0"]], dtype=complex).reshape(-1, 2),
                K=np.array([[[cz(v) for v in row] for row in Ki] for Ki in d["K"]], dtype=complex),
                w0=np.array([cz(v) for v in d["w0"]]),
                mu=np.array([cz(v) for v in d["mu"]]),
                norm=np.array([[cz(v) for v in row] for row in d["norm"]], dtype=complex),
                tau=float(d["tau"]),
                b=np.array([cz(v) for v in d["b"]], dtype=complex),
                q=np.array([cz(v) for v in d["q"]], dtype=complex),
                horospheres=[Horosphere.from_dict(h) for h in d.get("horospheres", [])],
            )
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise ValidationError(f"malformed model file: {exc}") from exc
        _check_consistent(sp)
        return sp

    @classmethod
    def from_json(cls, text: str) -> "SurfaceParams":
        return cls.from_dict(json.loads(text))


def _check_consistent(sp: SurfaceParams) -> None:
    """Reject a model whose arrays disagree with n and the pair list, or
    whose pair graph is disconnected."""
    m = len(sp.pairs)
    if sp.n < 2 or m == 0:
        raise ValidationError("model needs at least two horospheres and one tangency")
    if any(not (0 <= i < sp.n and 0 <= j < sp.n and i != j) for i, j in sp.pairs):
        raise ValidationError("pair index out of range")
    sizes = {"c": (len(sp.c), sp.n), "lambda": (len(sp.lam), sp.n), "xi": (len(sp.xi), sp.n),
             "p0": (len(sp.p0), m), "b": (len(sp.b), m), "q": (len(sp.q), 2 * m)}
    for key, (got, want) in sizes.items():
        if got != want:
            raise ValidationError(f"model field {key!r} has length {got}, expected {want}")
    seen, stack = {0}, [0]
    adj = {}
    for i, j in sp.pairs:
        adj.setdefault(i, []).append(j)
        adj.setdefault(j, []).append(i)
    while stack:
        for k in adj.get(stack.pop(), []):
            if k not in seen:
                seen.add(k)
                stack.append(k)
    if len(seen) != sp.n:
        raise ValidationError("tangency graph is not connected")


# ---------------------------------------------------------------------------
# construction from a packing


def _pick_origin(P: np.ndarray, scale: float) -> complex:
    """Origin of a parametrisation: clear of all tangency points by
    NODE_CLEARANCE * scale, as central as possible."""
    ctr = P.mean() if len(P) else 0j
    best, best_val = None, None
    for rad in np.arange(0, 12.01, 0.25):
        for k in range(24 if rad > 0 else 1):
            w = ctr + scale * rad * cmath.exp(2j * math.pi * k / 24)
            d = np.abs(P - w)
            if d.min() < NODE_CLEARANCE * scale * (1 + 1e-9):
                continue
            val = d.max()
            if best_val is None or val < best_val - 1e-12:
                best, best_val = w, val
    if best is None:
        raise GeometryError("no admissible origin for the horosphere parametrisation")
    return complex(best)


def _choose_normalization(P: Packing) -> np.ndarray:
    """Isometry making every horosphere a sphere: z -> 1/(w - z) with w away
    from all limit points, or the identity when there is no plane."""
    if not any(S.is_plane for S in P.horospheres):
        return lh.I2.copy()
    pts = np.array([S.p for S in P.horospheres if not S.is_plane])
    if len(pts) == 0:
        w = 0j
    else:
        # boundary point far from the spheres' shadows, chosen on a ring
        rad = np.abs(pts).max() + 2.0
        cands = [rad * cmath.exp(2j * math.pi * (k + 0.5) / 16) for k in range(16)]
        w = cands[0]
    return np.array([[0, 1], [-1, w]], dtype=complex)


def from_packing(P: Packing, xi, tau: float = 0.0, scale: float = 0.25) -> SurfaceParams:
    """Model parameters for a connected packing and deflation speeds ``xi``."""
    if P.dim != 3:
        raise ValidationError("surface models need a 3D horosphere packing")
    xi = np.asarray(xi, dtype=float)
    if len(xi) != P.n:
        raise ValidationError(f"need {P.n} speeds, got {len(xi)}")
    if np.any(xi <= 0):
        raise ValidationError("all speeds xi_i must be > 0")
    if P.n < 2 or not P.graph().is_connected():
        raise ValidationError("tangency graph is not connected")
    N = _choose_normalization(P)
    horos = [horosphere_image(N, S) for S in P.horospheres]
    if any(S.is_plane for S in horos):
        raise GeometryError("normalisation left a horizontal plane")
    pairs = sorted((min(i, j), max(i, j)) for i, j in P.tangencies)
    c = np.array([S.p for S in horos], dtype=complex)
    K = np.array([normalizing_isometry(S) for S in horos])
    w0 = np.zeros(P.n, dtype=complex)
    mu = np.zeros(P.n, dtype=complex)
    lam = np.zeros(P.n, dtype=complex)
    p0 = np.zeros((len(pairs), 2), dtype=complex)
    for i in range(P.n):
        nodes = [(e, 0 if a == i else 1, b if a == i else a)
                 for e, (a, b) in enumerate(pairs) if i in (a, b)]
        Pt = np.array([lh.act_boundary(K[i], c[k]) for _, _, k in nodes], dtype=complex)
        if len(Pt) > 1:
            d = np.abs(Pt[:, None] - Pt[None, :])
            dmin = d[np.triu_indices(len(Pt), 1)].min()
        else:
            dmin = 4 * scale
        mu_i = dmin / 4 if len(Pt) > 1 else scale
        for attempt in range(2):
            w = _pick_origin(Pt, mu_i)
            p = (Pt - w) / mu_i
            ok = np.all(np.abs(p) > 2)
            if len(p) > 1:
                dd = np.abs(p[:, None] - p[None, :])
                ok = ok and dd[np.triu_indices(len(p), 1)].min() > 2
            if ok:
                break
            mu_i = mu_i / 2
        else:
            raise GeometryError(f"cannot separate the node disks of horosphere {i}")
        w0[i], mu[i] = w, mu_i
        lam[i] = -mu_i * K[i][1, 0] ** 2
        for (e, side, _), pv in zip(nodes, p):
            p0[e, side] = pv
    if tau > TAU_MAX:
        raise ValidationError(f"tau={tau} exceeds tau_max={TAU_MAX}")
    return SurfaceParams(P.n, pairs, c, lam, xi, p0, K, w0, mu, N, tau=tau, horospheres=list(P.horospheres))


# ---------------------------------------------------------------------------
# pointwise evaluators


def _check_plane_point(params, i, z):
    for e, side, _ in params.nodes_of(i):
        if abs(z - params.p(e, side)) < R_MIN:
            raise PoleError(f"z={z} within r_min of a node of C{i}")


def gauss_map_G0(params: SurfaceParams, chart: ChartId, z):
    """Gauss map at t = 0."""
    if chart.kind == "plane":
        return complex(params.c[chart.i])
    ci, cj = params.c[chart.i], params.c[chart.j]
    if lh.is_inf(z):
        return complex(cj)
    if z == 1:
        return lh.INF
    return complex(cj + (cj - ci) / (z - 1))


def gauss_map(params: SurfaceParams, chart: ChartId, z):
    """First-order Gauss map used by the connection."""
    if chart.kind == "neck":
        return gauss_map_G0(params, chart, z)
    _check_plane_point(params, chart.i, z)
    _, par, nn = params.plane_field(chart.i)
    return complex(par[0] + sum(par[2 + nn + l] / (z - par[2 + l]) for l in range(nn)))


def omega_first_order(params: SurfaceParams, chart: ChartId, z) -> complex:
    """Coefficient of dz of Omega at first order in a."""
    if chart.kind == "neck":
        e = params.pair_index(chart.i, chart.j)
        return complex(params.a[e] * (1 - z) ** 2 / (2 * z * z))
    _check_plane_point(params, chart.i, z)
    _, par, nn = params.plane_field(chart.i)
    return complex(par[1] + sum(par[2 + 2 * nn + l] / (z - par[2 + l]) for l in range(nn)))


def connection_A(params: SurfaceParams, chart: ChartId, z) -> np.ndarray:
    """dz-coefficient of A = [[G, -G^2], [1, -G]] Omega."""
    if chart.kind == "neck":
        e = params.pair_index(chart.i, chart.j)
        a, ci, cj = params.a[e], params.c[chart.i], params.c[chart.j]
        u, v = cj * z - ci, z - 1
        A = a / (2 * z * z) * np.array([[u * v, -u * u], [v * v, -u * v]], dtype=complex)
        if not np.all(np.isfinite(A)):
            raise PoleError("non-finite connection on the neck chart")
        return A
    g = gauss_map(params, chart, z)
    om = omega_first_order(params, chart, z)
    return om * np.array([[g, -g * g], [1, -g]], dtype=complex)


def dG_da_closed_form(params: SurfaceParams, e: int, chart: ChartId, z) -> complex:
    """Derivative of G with respect to a_ij."""
    i, j = params.pairs[e]
    ci, cj = params.c[i], params.c[j]
    if chart.kind == "plane" and chart.i == i:
        return (cj - ci) / (2 * params.lam[i]) / (z - params.p(e, 0))
    if chart.kind == "plane" and chart.i == j:
        return (cj - ci) / (2 * params.lam[j]) / (z - params.p(e, 1))
    return 0j


def dOmega_da_closed_form(params: SurfaceParams, e: int, chart: ChartId, z) -> complex:
    i, j = params.pairs[e]
    if chart.kind == "plane" and chart.i == i:
        return 1 / (z - params.p(e, 0))
    if chart.kind == "plane" and chart.i == j:
        return -1 / (z - params.p(e, 1))
    if chart.kind == "neck" and (chart.i, chart.j) == (i, j):
        return (1 - z) ** 2 / (2 * z * z)
    return 0j


# ---------------------------------------------------------------------------
# pair frames


@dataclass(frozen=True)
class PairFrame:
    pair: tuple
    rho: complex
    H: np.ndarray
    lam_hat_i: complex
    lam_hat_j: complex
    A_hat_i: np.ndarray
    A_hat_j: np.ndarray


def pair_frame(params: SurfaceParams, pair) -> PairFrame:
    """Isometry sending S_i to x3 = 1 and the tangency point to (0, 0, 1).

    ``H = F_i(p0_ij)^{-1}`` for the chosen lift F_i of the parametrisation,
    so that the hatted lift of S_i equals the identity at p0_ij.
    """
    e = pair if isinstance(pair, (int, np.integer)) else params.pair_index(*pair)
    i, j = params.pairs[e]
    ci, cj = params.c[i], params.c[j]
    if abs(ci - cj) < lh.TOL:
        raise DegenerateError("tangent horospheres must have distinct limit points")
    H = lh.sl2_inv(params.F_horosphere(i, params.p0[e, 0]))
    rho = complex(H[0, 0] * cmath.sqrt(cj - ci))
    lam_hat_i = rho**2 * params.lam[i] * (ci - cj)
    lam_hat_j = rho ** (-2) * params.lam[j] * (cj - ci)
    A_hat_i = np.array([[0, lam_hat_i], [0, 0]], dtype=complex)
    A_hat_j = np.array([[0, 0], [lam_hat_j, 0]], dtype=complex)
    return PairFrame((i, j), rho, H, complex(lam_hat_i), complex(lam_hat_j), A_hat_i, A_hat_j)


def connection_A_hat(frame: PairFrame, params: SurfaceParams, chart: ChartId, z) -> np.ndarray:
    """Conjugated connection in the pair frame, from its closed form in G and Omega."""
    i, j = frame.pair
    ci, cj = params.c[i], params.c[j]
    rho2 = frame.rho**2
    om = omega_first_order(params, chart, z)
    if chart.kind == "neck":
        # (G - c_i) = (c_j - c_i) z/(z-1), (G - c_j) = (c_j - c_i)/(z-1); the
        # (z-1)^2 cancels against Omega's double zero
        e = params.pair_index(chart.i, chart.j)
        k = params.a[e] * (cj - ci) / (2 * z * z)
        return k * np.array([[z, -rho2], [z * z / rho2, -z]], dtype=complex)
    g = gauss_map(params, chart, z)
    gi, gj = g - ci, g - cj
    return om / (cj - ci) * np.array([[gi * gj, -rho2 * gj * gj], [gi * gi / rho2, -gi * gj]],
                                     dtype=complex)


def m_hat_matrices(frame: PairFrame, params: SurfaceParams, s: float):
    """(M_i_hat(s), M_j_hat(s)) in the pair frame."""
    e = params.pair_index(*frame.pair)
    i, j = frame.pair
    Mi = lh.exp_mat(-params.p0[e, 0] * frame.A_hat_i) @ lh.xi(params.xi[i] * s)
    Mj = lh.exp_mat(-params.p0[e, 1] * frame.A_hat_j) @ lh.xi(-params.xi[j] * s)
    return Mi, Mj


def pair_M(params: SurfaceParams, e: int, s: float = None):
    """M_i and M_j for pair e in the working frame (hatted matrices pulled back)."""
    s = params.s if s is None else s
    fr = pair_frame(params, e)
    Mi, Mj = m_hat_matrices(fr, params, s)
    Hinv = lh.sl2_inv(fr.H)
    return Hinv @ Mi, Hinv @ Mj
