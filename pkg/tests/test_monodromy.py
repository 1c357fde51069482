import cmath
import math

import numpy as np
import pytest

from horoforge import kernels
from horoforge import lin_hyp as lh
from horoforge import monodromy as mo
from horoforge import packing as pk
from horoforge import surface_model as sm
from horoforge.errors import NoConvergence, ValidationError
from horoforge.kernels import SEG_ARC, SEG_LINE

from conftest import triangle_packing, two_packing


def circle(chart, centre=0j, r=1.0):
    return [mo.Segment(chart, SEG_ARC, centre, complex(0, 2 * math.pi), r)]


def test_constant_field_is_exponential(two_model):
    p = two_model.with_params(tau=0.0)
    ch = sm.ChartId.plane(0)
    z = 1.5 - 2j
    T = mo.transport(p, mo.PathSpec([mo.Segment(ch, SEG_LINE, 0j, z)]))
    assert np.allclose(T.matrix, lh.exp_mat(z * p.A_const(0)), atol=1e-12)
    fr = sm.pair_frame(p, 0)
    Y = mo.transport_callable(lambda w: fr.A_hat_i, [mo.Segment(ch, SEG_LINE, 0j, z)], 50)
    assert np.allclose(Y, lh.exp_mat(z * fr.A_hat_i))


@pytest.mark.parametrize("lam", [0.0, 0.3, -0.25 + 0.1j])
def test_scalar_oracle(lam):
    ch = sm.ChartId.plane(0)
    Y = mo.transport_callable(lambda z: np.diag([lam / z, 0]), circle(ch), 400)
    assert Y[0, 0] == pytest.approx(cmath.exp(2j * math.pi * lam), rel=1e-10)
    assert Y[1, 1] == pytest.approx(1)


def test_concatenation(triangle_model):
    p = triangle_model
    tr = mo.Transporter(p, 1e-12)
    g1 = mo.gamma_path(p, 0, 0)
    g2 = mo.big_gamma_path(p, 0)
    a = tr.transport(g1 + g2).matrix
    b = tr.transport(g2).matrix @ tr.transport(g1).matrix
    assert np.abs(a - b).max() < 1e-9 * np.abs(b).max()


def test_reverse_path_inverts(triangle_model):
    p = triangle_model
    tr = mo.Transporter(p, 1e-12)
    for e in range(p.m):
        G = mo.big_gamma_path(p, e)
        M = tr.transport(G.reversed()).matrix @ tr.transport(G).matrix
        assert np.abs(M - np.eye(2)).max() < 1e-8


def test_transition_consistency(triangle_model):
    p = triangle_model
    for e in range(p.m):
        G = mo.big_gamma_path(p, e)
        for v, w, t in G.transitions:
            assert abs(v * w - t) < 1e-12 * max(1, abs(t))
        # segment endpoints match inside each chart
        for s0, s1 in zip(G.segments, G.segments[1:]):
            if s0.chart == s1.chart:
                assert abs(s0.end() - s1.start()) < 1e-12
        g = mo.gamma_path(p, e, 1)
        assert abs(g.segments[0].start() - g.segments[-1].end()) < 1e-12
        assert abs(g.segments[0].start()) < 1e-12


def test_routes_avoid_other_nodes():
    p = sm.from_packing(pk.build_lattice_packing(1), np.ones(8), tau=1e-4)
    book = mo.RouteBook(p)
    for e in range(p.m):
        for side in (0, 1):
            i = p.pairs[e][side]
            others = [p.p(f, s) for f, s, _ in p.nodes_of(i) if (f, s) != (e, side)]
            for seg in mo._route_segments(p, book, e, side):
                assert mo._seg_clear(seg.start(), seg.end(), others, 1.0)


def test_monodromy_of():
    rng = np.random.default_rng(0)
    P = lh.random_sl2(rng)
    assert np.allclose(mo.monodromy_of(np.eye(2), P), P)
    U = lh.exp_mat(0.3j * np.array([[1, 0.5 - 0.2j], [0.5 + 0.2j, -1]]))
    V = lh.random_su2(rng)
    assert lh.su2_defect(mo.monodromy_of(V, U)) < 1e-12
    Y0 = lh.random_sl2(rng)
    ev = np.sort_complex(np.linalg.eigvals(mo.monodromy_of(Y0, P)))
    assert np.allclose(ev, np.sort_complex(np.linalg.eigvals(P)))


def test_derivative_of_constant_family():
    ch = sm.ChartId.plane(0)
    D = mo.monodromy_derivative(lambda z: np.zeros((2, 2)), lambda z: np.zeros((2, 2)), circle(ch), 50)
    assert np.all(D == 0)


def test_closed_forms_at_b0(triangle_model):
    p = triangle_model
    for e in range(p.m):
        fr = sm.pair_frame(p, e)
        P = mo.pij_closed_form(fr, p)
        assert np.allclose(P, np.pi * 1j * p.tau * p.b[e] * lh.DIAG)
        assert np.allclose(mo.qij_closed_form(fr, p), 0)
        q = p.with_params(q=np.full(2 * p.m, 0.2 + 0.1j))
        Q = mo.qij_closed_form(fr, q)
        assert Q[0, 0] == 0 and Q[1, 1] == 0 and Q[0, 1] != 0


def test_gamma_trivial_at_a0(two_model):
    p = two_model.with_params(b=[0.0])
    assert np.abs(mo.pi_gamma_numeric(p, 0) - np.eye(2)).max() < 1e-14


def test_residue_formula(two_model):
    """d Pi_hat(gamma_ij)/da at a = 0 by quadrature equals pi i (c_i - c_j) exp(-p A) diag(1,-1) exp(p A)."""
    p = two_model
    fr = sm.pair_frame(p, 0)
    i, j = p.pairs[0]
    ch = sm.ChartId.plane(i)
    path = mo.gamma_path(p, 0, 0)
    db = 1e-3

    def A_hat(b):
        return lambda z: sm.connection_A_hat(fr, p.with_params(b=[b]), ch, z)

    a1 = p.with_params(b=[db]).a[0]
    # the field is quadratic in a, so the centred difference is its exact derivative
    dA = lambda z: (A_hat(db)(z) - A_hat(-db)(z)) / (2 * a1)  # noqa: E731
    D = mo.monodromy_derivative(A_hat(0.0), dA, path.segments, 300)
    pz = p.p(0, 0)
    ref = np.pi * 1j * (p.c[i] - p.c[j]) * lh.exp_mat(-pz * fr.A_hat_i) @ lh.DIAG @ lh.exp_mat(pz * fr.A_hat_i)
    assert np.abs(D - ref).max() < 1e-6 * np.abs(ref).max()


def test_shift_multiplies_by_gamma_squared(triangle_model):
    p = triangle_model
    tr = mo.Transporter(p, 1e-12)
    for e in range(p.m):
        fr = sm.pair_frame(p, e)
        Hm, Hi = fr.H, lh.sl2_inv(fr.H)
        G = Hm @ tr.transport(mo.big_gamma_path(p, e)).matrix @ Hi
        Gs = Hm @ tr.transport(mo.big_gamma_path(p, e, shift=1)).matrix @ Hi
        g = Hm @ tr.transport(mo.gamma_path(p, e, 0)).matrix @ Hi
        err = np.abs(Gs - G @ g @ g).max()
        effect = np.abs(Gs - G).max()
        assert err < 1e-2 * effect


def test_residual_t0():
    p = sm.from_packing(triangle_packing(), np.array([1.0, 2.0, 0.5]))
    assert np.allclose(mo.residual_closed_t0(p), 0)
    eps = 1e-3
    b = p.b0.copy()
    b[1] += 1j * eps
    r = mo.residual_closed_t0(p.with_params(b=b))
    assert r[6] == pytest.approx(-np.pi * eps)
    q = np.zeros(2 * p.m, dtype=complex)
    q[0] = eps
    r = mo.residual_closed_t0(p.with_params(q=q))
    lam_hat = sm.pair_frame(p, 0).lam_hat_i
    assert complex(r[4], r[5]) == pytest.approx(lam_hat * eps)


def test_jacobian_t0_matches_differences():
    p = sm.from_packing(triangle_packing(), np.ones(3))
    J = mo.jacobian_t0(p)
    x0 = mo.pack_unknowns(p)
    h = 1e-6
    for k in range(len(x0)):
        xp, xm = x0.copy(), x0.copy()
        xp[k] += h
        xm[k] -= h
        col = (mo.residual_closed_t0(mo.unpack_unknowns(p, xp))
               - mo.residual_closed_t0(mo.unpack_unknowns(p, xm))) / (2 * h)
        assert np.allclose(J[:, k], col, atol=1e-7)


@pytest.mark.parametrize("P", [two_packing(), triangle_packing(), pk.build_lattice_packing(1)])
def test_jacobian_invertible(P):
    p = sm.from_packing(P, np.ones(P.n))
    assert mo.smallest_singular_value_t0(p) > mo.SIGMA_MIN


def test_pack_roundtrip(triangle_model):
    p = triangle_model.with_params(b=[1 + 0.1j, 2, 3j], q=np.arange(6) + 1j)
    q = mo.unpack_unknowns(p, mo.pack_unknowns(p))
    assert np.allclose(q.b, p.b) and np.allclose(q.q, p.q)


def test_newton_two(two_solved, two_model):
    r = two_solved
    assert r.converged and r.iterations <= 8 and r.residual_norm < 1e-9
    assert np.all(np.diff([h for _, h in r.history]) < 0)
    assert abs(r.params.b[0] - two_model.b0[0]) < 0.1


def test_newton_guards(two_model):
    with pytest.raises(ValidationError):
        mo.newton_solve(two_model.with_params(tau=0.5))
    with pytest.raises(NoConvergence):
        mo.newton_solve(two_model, max_iter=1)


def test_python_backend_agrees(two_model):
    from horoforge import _kernel_py

    a = mo.pi_gamma_numeric(two_model, 0)
    fr = sm.pair_frame(two_model, 0)
    tr = mo.Transporter(two_model, 1e-12, backend=_kernel_py)
    D = tr.transport(mo.gamma_path(two_model, 0, 0), dev=True).matrix
    b = np.eye(2) + fr.H @ D @ lh.sl2_inv(fr.H)
    assert np.abs(a - b).max() < 1e-12
    assert kernels.BACKEND in ("compiled", "python")
