import math

import numpy as np
import pytest
from fractions import Fraction

from horoforge import lin_hyp as lh
from horoforge import packing as pk
from horoforge import surface_model as sm
from horoforge.errors import PoleError, ValidationError

from conftest import triangle_packing, two_packing


def test_tau_relations():
    for tau in (1e-2, 1e-4, 1e-8):
        t = sm.t_from_tau(tau)
        assert sm.tau_from_t(t) == pytest.approx(tau, rel=1e-12)
        assert sm.s_from_tau(tau) == pytest.approx(-tau * math.log(tau))
    assert sm.s_from_tau(0) == 0 and sm.t_from_tau(0) == 0


def test_derived_parameters(two_model):
    p = two_model
    (i, j), = p.pairs
    assert p.b0[0] == 1
    assert p.a[0] == pytest.approx(p.tau * p.b[0] / (p.c[i] - p.c[j]))
    tij, tji = p.t_pair(0)
    assert tij == pytest.approx(-p.a[0] / (2 * p.lam[i]))
    assert tji == pytest.approx(p.a[0] / (2 * p.lam[j]))
    q = p.with_params(q=[0.3, -0.1j])
    assert q.p(0, 0) == pytest.approx(p.p0[0, 0] + p.s * 0.3)
    assert q.p(0, 1) == pytest.approx(p.p0[0, 1] - p.s * 0.1j)


@pytest.mark.parametrize("P", [two_packing(), triangle_packing(), pk.build_lattice_packing(1)])
def test_node_disks_disjoint(P):
    p = sm.from_packing(P, np.ones(P.n))
    assert p.m == P.m
    for i in range(p.n):
        pts = [p.p0[e, s] for e, s, _ in p.nodes_of(i)]
        assert all(abs(z) > 2 for z in pts)
        for a in range(len(pts)):
            for b in range(a):
                assert abs(pts[a] - pts[b]) > 2


def test_speeds_validation(two):
    sm.from_packing(two, [1.0, 3.0])
    with pytest.raises(ValidationError):
        sm.from_packing(two, [1.0, -1.0])
    with pytest.raises(ValidationError):
        sm.from_packing(two, [1.0])
    with pytest.raises(ValidationError):
        sm.from_packing(two, [1.0, 1.0], tau=0.5)
    far = pk.with_tangencies([pk.Horosphere.plane(1), pk.Horosphere.sphere(5, 0.3)])
    with pytest.raises(ValidationError):
        sm.from_packing(far, [1, 1])


def test_caps_lie_on_horospheres(triangle):
    p = sm.from_packing(triangle, np.ones(3))
    Ninv = lh.sl2_inv(p.norm)
    for i, S in enumerate(triangle.horospheres):
        for z in (0, 0.7 + 0.2j, -3 + 1j):
            X = lh.immerse_many((Ninv @ p.F_horosphere(i, z))[None])
            if S.is_plane:
                assert X[0, 2] == pytest.approx(S.h)
            else:
                c = np.array([S.p.real, S.p.imag, S.R])
                assert np.linalg.norm(X[0] - c) == pytest.approx(S.R)


def test_gauss_map_and_omega(two_model):
    p = two_model.with_params(tau=0.0)
    ci, cj = p.c
    nk = sm.ChartId.neck(0, 1)
    assert sm.gauss_map_G0(p, sm.ChartId.plane(0), 0.3) == ci
    assert sm.gauss_map_G0(p, nk, lh.INF) == cj
    assert sm.gauss_map_G0(p, nk, 1e12) == pytest.approx(cj)
    assert sm.gauss_map_G0(p, nk, 0) == pytest.approx(ci)
    assert sm.omega_first_order(p, sm.ChartId.plane(1), 0.4) == p.lam[1]
    q = two_model
    assert sm.omega_first_order(q, nk, 1.0) == 0
    h = 1e-5
    d = (sm.omega_first_order(q, nk, 1 + h) - sm.omega_first_order(q, nk, 1 - h)) / (2 * h)
    assert abs(d) < 1e-9 * abs(q.a[0])


def test_neck_omega_exact(two_model):
    z = Fraction(-1)
    val = float((1 - z) ** 2 / (2 * z ** 2)) * two_model.a[0]
    assert val == pytest.approx(2 * two_model.a[0])
    assert sm.omega_first_order(two_model, sm.ChartId.neck(0, 1), -1) == pytest.approx(val)


def test_connection(two_model):
    p0 = two_model.with_params(tau=0.0)
    for i in range(2):
        c, lam = p0.c[i], p0.lam[i]
        ref = lam * np.array([[c, -c * c], [1, -c]])
        assert np.allclose(sm.connection_A(p0, sm.ChartId.plane(i), 1.5 - 0.5j), ref)
    rng = np.random.default_rng(0)
    for _ in range(10):
        z = complex(*rng.normal(size=2)) * 2
        for ch in (sm.ChartId.plane(0), sm.ChartId.neck(0, 1)):
            A = sm.connection_A(two_model, ch, z)
            assert abs(np.trace(A)) < 1e-12 * max(1, np.abs(A).max())
            assert abs(np.linalg.det(A)) < 1e-12 * max(1, np.abs(A).max()) ** 2
    assert np.all(np.isfinite(sm.connection_A(two_model, sm.ChartId.neck(0, 1), 1.0)))
    with pytest.raises(PoleError):
        sm.connection_A(two_model, sm.ChartId.plane(0), two_model.p(0, 0) + 1e-5)


def test_charts_glue_at_first_order(two_model):
    """G and Omega on C_i near p_ij agree with the neck chart under (z - p) w = t_ij."""
    p = two_model
    tij, _ = p.t_pair(0)
    pz = p.p(0, 0)
    for w in (0.02, 0.03j, -0.05):
        z = pz + tij / w
        Gp = sm.gauss_map(p, sm.ChartId.plane(0), z)
        Gn = sm.gauss_map_G0(p, sm.ChartId.neck(0, 1), w)
        assert abs(Gp - Gn) < 2 * abs(p.c[1] - p.c[0]) * abs(w) ** 2
        dzdw = -tij / w ** 2
        Op = sm.omega_first_order(p, sm.ChartId.plane(0), z) * dzdw
        On = sm.omega_first_order(p, sm.ChartId.neck(0, 1), w)
        # they differ by the constant a/2 of the neck expansion
        assert abs(Op - On) <= 0.6 * abs(p.a[0])
        assert abs(On) > 100 * abs(p.a[0])


def test_closed_form_derivatives(two_model):
    p = two_model
    h = 1e-7
    for ch, z in ((sm.ChartId.plane(0), 0.5 + 0.3j), (sm.ChartId.plane(1), -1 + 1j)):
        ci, cj = p.c
        da = h
        # perturb a by h through b = a (c_i - c_j)/tau
        db = da * (ci - cj) / p.tau
        pp, pm = p.with_params(b=p.b + db), p.with_params(b=p.b - db)
        dG = (sm.gauss_map(pp, ch, z) - sm.gauss_map(pm, ch, z)) / (2 * da)
        dO = (sm.omega_first_order(pp, ch, z) - sm.omega_first_order(pm, ch, z)) / (2 * da)
        assert dG == pytest.approx(sm.dG_da_closed_form(p, 0, ch, z), rel=1e-6)
        assert dO == pytest.approx(sm.dOmega_da_closed_form(p, 0, ch, z), rel=1e-6)


def test_pair_frame(triangle_model):
    p = triangle_model
    for e, (i, j) in enumerate(p.pairs):
        fr = sm.pair_frame(p, e)
        assert lh.det2(fr.H) == pytest.approx(1)
        assert lh.is_inf(lh.act_boundary(fr.H, p.c[i])) or abs(lh.act_boundary(fr.H, p.c[i])) > 1e10
        assert abs(lh.act_boundary(fr.H, p.c[j])) < 1e-10
        assert fr.lam_hat_i == pytest.approx(fr.rho ** 2 * p.lam[i] * (p.c[i] - p.c[j]))
        assert fr.lam_hat_j == pytest.approx(fr.rho ** -2 * p.lam[j] * (p.c[j] - p.c[i]))
        assert np.allclose(fr.A_hat_i @ fr.A_hat_i, 0) and np.allclose(fr.A_hat_j @ fr.A_hat_j, 0)
        # hatted lift is the identity at the node
        assert np.allclose(fr.H @ p.F_horosphere(i, p.p0[e, 0]), np.eye(2))


def test_connection_hat(triangle_model):
    p = triangle_model
    p0 = p.with_params(tau=0.0)
    rng = np.random.default_rng(4)
    for e, (i, j) in enumerate(p.pairs):
        fr = sm.pair_frame(p, e)
        assert np.allclose(sm.connection_A_hat(fr, p0, sm.ChartId.plane(i), 0.3), fr.A_hat_i)
        assert np.allclose(sm.connection_A_hat(fr, p0, sm.ChartId.neck(i, j), 0.3 + 1j), 0)
        Hi = lh.sl2_inv(fr.H)
        for ch in (sm.ChartId.plane(i), sm.ChartId.plane(j), sm.ChartId.neck(i, j)):
            for _ in range(3):
                z = complex(*rng.normal(size=2))
                A1 = sm.connection_A_hat(fr, p, ch, z)
                A2 = fr.H @ sm.connection_A(p, ch, z) @ Hi
                assert np.abs(A1 - A2).max() < 1e-9 * max(1, np.abs(A2).max())


def test_m_hat(two_model):
    p = two_model
    fr = sm.pair_frame(p, 0)
    Mi, Mj = sm.m_hat_matrices(fr, p, 0.0)
    assert np.allclose(Mi, lh.exp_mat(-p.p0[0, 0] * fr.A_hat_i))
    assert np.allclose(Mj, lh.exp_mat(-p.p0[0, 1] * fr.A_hat_j))
    for s in (0.0, 0.1):
        for M in sm.m_hat_matrices(fr, p, s):
            assert lh.det2(M) == pytest.approx(1)
    # f(0_i) moves along a geodesic at speed xi_i
    xi = np.array([1.0, 2.5])
    q = p.with_params()
    q.xi = xi
    fr = sm.pair_frame(q, 0)
    pts = [lh.immerse(sm.m_hat_matrices(fr, q, s)[1]) for s in (0.0, 0.01, 0.02)]
    d1 = lh.half_space_distance(pts[0], pts[1])
    d2 = lh.half_space_distance(pts[0], pts[2])
    assert d1 / 0.01 == pytest.approx(2.5, rel=1e-6)
    assert d2 == pytest.approx(2 * d1, rel=1e-9)


def test_model_json_roundtrip(triangle_model):
    p = triangle_model.with_params(q=np.arange(6) * 0.1j)
    text = p.to_json()
    q = sm.SurfaceParams.from_json(text)
    assert q.to_json() == text
    d = p.to_dict()
    assert "derived" in d and {"a", "s", "t"} <= set(d["derived"])
