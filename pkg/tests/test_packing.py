import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import connected_components

from horoforge import packing as pk
from horoforge.errors import PreconditionError, ValidationError

H = pk.Horosphere


def brute_status(A, B):
    """Tangency by sampling the gap along the line of centres (independent of the closed form)."""
    if A.is_plane and B.is_plane:
        return pk.DISJOINT
    if B.is_plane:
        A, B = B, A
    if A.is_plane:
        gap = A.h - 2 * B.R
    else:
        d = math.hypot(abs(A.p - B.p), A.R - B.R)
        gap = d - A.R - B.R
    if abs(gap) < 1e-12:
        return pk.TANGENT
    return pk.DISJOINT if gap > 0 else pk.OVERLAPPING


def test_tangency_examples():
    assert pk.tangency_test(H.plane(1), H.sphere(0, 0.5)) == pk.TANGENT
    assert pk.tangency_test(H.sphere(0, 0.5), H.sphere(1, 0.5)) == pk.TANGENT
    assert pk.tangency_test(H.sphere(0, 0.5), H.sphere(2, 0.5)) == pk.DISJOINT
    assert pk.tangency_test(H.sphere(0, 0.5), H.sphere(0.5, 0.5)) == pk.OVERLAPPING


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 2), st.floats(0.05, 2))
def test_tangency_matches_gap(x, y, r1, r2):
    A, B = H.sphere(0, r1), H.sphere(complex(x, y), r2)
    assert pk.tangency_test(A, B) == brute_status(A, B)


def test_lattice_counts():
    for R, n, m in ((0, 2, 1), (1, 8, 19), (2, 20, 61)):
        P = pk.build_lattice_packing(R)
        assert (P.n, P.m) == (n, m)


def test_lattice_bound_and_genus():
    for R in range(0, 11):
        P = pk.build_lattice_packing(R)
        assert P.m <= 4 * (P.n - 1) or P.n == 2
        e = np.array(P.tangencies)
        from scipy.sparse import coo_matrix

        A = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(P.n, P.n))
        k, _ = connected_components(A, directed=False)
        assert P.genus == P.m - P.n + k


def check_invariants(P):
    tset = set(P.tangencies)
    for i, j in combinations(range(P.n), 2):
        s = brute_status(P.horospheres[i], P.horospheres[j])
        assert s == (pk.TANGENT if (i, j) in tset else pk.DISJOINT)


@pytest.mark.parametrize("steps", [0, 1, 2, 5, 12, 20])
def test_apollonian(steps):
    P = pk.build_apollonian_packing(steps, choice_seed=steps)
    assert P.n == steps + 3 and P.m == 3 * P.n - 6
    check_invariants(P)


def test_apollonian_deterministic():
    a = pk.build_apollonian_packing(8, 4).to_json()
    assert a == pk.build_apollonian_packing(8, 4).to_json()


def test_apollonius_solutions():
    S1, S2, S3 = H.plane(1), H.sphere(0, 0.5), H.sphere(1, 0.5)
    x, y = pk.solve_apollonius_tangent(S1, S2, S3)
    assert x.p == pytest.approx(0.5 - 1j * math.sqrt(3) / 2)
    assert y.p == pytest.approx(0.5 + 1j * math.sqrt(3) / 2)
    assert x.R == pytest.approx(0.5) and y.R == pytest.approx(0.5)
    for S in (x, y):
        for T in (S1, S2, S3):
            assert pk.tangency_test(S, T) == pk.TANGENT
    # involution: replace S3 by x, the old S3 is one of the two answers
    u, v = pk.solve_apollonius_tangent(S1, S2, x)
    assert any(pk._same(w, S3) for w in (u, v))


@pytest.mark.parametrize("n", range(2, 21))
def test_chain2d(n):
    P = pk.build_horocycle_chain(n)
    assert P.m == 2 * n - 3
    # planar certificate with the boundary added as a vertex
    V, E = n + 1, P.m + n
    assert E <= 3 * V - 6 or V < 3


def test_verify_bounds():
    rep = pk.verify_packing_bounds(pk.build_lattice_packing(2))
    assert rep["m"] == 61 and rep["bound"] == 84 and rep["lemma_ok"]
    rep = pk.verify_packing_bounds(pk.build_apollonian_packing(2))
    assert rep["m"] == 9 and rep["bound"] == 9
    rep = pk.verify_packing_bounds(pk.build_horocycle_chain(4))
    assert rep["m"] == 5 and rep["bound"] == 5


def test_angle_check():
    R1, R2 = 0.125, 0.5
    # S2, S3 tangent to each other, S1 tangent to both
    S2, S3 = H.sphere(0, R2), H.sphere(1, R2)
    x = 0.5
    # S1 at distance 2 sqrt(R1 R2) from both limit points
    d = 2 * math.sqrt(R1 * R2)
    S1 = H.sphere(complex(x, -math.sqrt(d * d - 0.25)), R1)
    th = pk.angle_check(S1, S2, S3)
    assert math.cos(th) == pytest.approx(pk.angle_bound_cos(R1, R2, R2))
    # R1 -> R2: equilateral limit
    R1 = 0.4999
    d = 2 * math.sqrt(R1 * R2)
    S1 = H.sphere(complex(0.5, -math.sqrt(d * d - 0.25)), R1)
    assert pk.angle_check(S1, S2, S3) == pytest.approx(math.pi / 3, abs=1e-3)
    assert pk.angle_check(S1, S2, S3) > math.pi / 3
    with pytest.raises(PreconditionError):
        pk.angle_check(S2, S2, S3)


def test_scan():
    rows, C = pk.lattice_ratio_scan(10)
    assert rows[0].ratio == pytest.approx(19 / 8)
    assert rows[1].ratio == pytest.approx(61 / 20)
    r = [row.ratio for row in rows]
    assert all(b >= a for a, b in zip(r, r[1:]))
    assert C > 0


def test_json_roundtrip():
    P = pk.build_lattice_packing(1)
    Q = pk.Packing.from_json(P.to_json())
    assert Q.to_json() == P.to_json()
    d = P.to_dict()
    del d["tangencies"]
    assert pk.Packing.from_dict(d).tangencies == P.tangencies
    with pytest.raises(ValidationError):
        pk.Packing.from_dict({"horospheres": [{"kind": "sphere", "p": [0, 0], "R": 0.5},
                                              {"kind": "sphere", "p": [0.1, 0], "R": 0.5}]})


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_isometries_preserve_tangency(seed):
    rng = np.random.default_rng(seed)
    P = pk.build_lattice_packing(1)
    Hm = pk.random_loxodromic(rng)
    img = [pk.horosphere_image(Hm, S) for S in P.horospheres]
    assert pk.with_tangencies(img).tangencies == P.tangencies
