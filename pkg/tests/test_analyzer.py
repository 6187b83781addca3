import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from mpcjoin.analyzer import (FractionalWeighting, iroot, load_bound_packing,
                              load_bound_worstcase, log_base_p, pow_floor,
                              psi_star, psi_star_recursive, rho_star, share_lp,
                              tau_star)
from mpcjoin.query import canonical_query, parse_query, residual_query

F = Fraction


def triangle():
    return canonical_query("C", 3)


def test_triangle_quantities():
    q = triangle()
    assert tau_star(q)[0] == F(3, 2)
    assert rho_star(q)[0] == F(3, 2)
    assert psi_star(q)[0] == F(2)


def test_star_quantities():
    q = canonical_query("T", 4)
    assert tau_star(q)[0] == 1
    assert rho_star(q)[0] == 4
    assert psi_star(q)[0] == 4


def test_single_atom_all_one():
    q = parse_query("q(x,y) :- S(x,y)")
    assert tau_star(q)[0] == 1
    assert rho_star(q)[0] == 1
    assert psi_star(q)[0] == 1


def test_witnesses_verify():
    for fam, k in [("C", 3), ("C", 5), ("L", 4), ("T", 3), ("K", 4), ("LW", 4)]:
        q = canonical_query(fam, k)
        t, tw = tau_star(q)
        tw.check(q)
        assert tw.total() == t
        r, rw = rho_star(q)
        rw.check(q)
        assert rw.total() == r
        s, sw = psi_star(q)
        sw.check(q)


def test_psi_enumeration_matches_recursion():
    for fam, k in [("C", 3), ("C", 6), ("L", 5), ("K", 4), ("LW", 4),
                   ("T", 3), ("SP", 2), ("W", 3), ("Lstar", 4), ("Ldagger", 3)]:
        q = canonical_query(fam, k)
        assert psi_star(q)[0] == psi_star_recursive(q)


def test_psi_witness_residual_for_star():
    q = canonical_query("T", 3)
    _, w = psi_star(q)
    assert w.residual_witness == frozenset({"z"})


def test_bad_witness_rejected():
    q = triangle()
    w = FractionalWeighting({"S1": F(1), "S2": F(1), "S3": F(1)}, "packing")
    with pytest.raises(ValueError):
        w.check(q)


# -- share allocation ------------------------------------------------------

def test_triangle_shares_uniform():
    q = triangle()
    p = 64
    M = {a.relation: p * p for a in q.atoms}
    alloc = share_lp(q, M, p)
    assert alloc.lam == F(4, 3)
    assert all(alloc.exponents[v] == F(1, 3) for v in q.variables)
    assert alloc.shares == {"x1": 4, "x2": 4, "x3": 4}
    assert alloc.grid_size() <= p


def test_triangle_shares_with_heavy_variable():
    q = triangle()
    p = 64
    M = {a.relation: p * p for a in q.atoms}
    alloc = share_lp(q, M, p, heavy=frozenset({"x1"}))
    assert alloc.lam == F(3, 2)
    assert alloc.shares["x1"] == 1
    assert alloc.shares["x2"] == 8 and alloc.shares["x3"] == 8


def test_all_heavy_no_shares():
    q = triangle()
    alloc = share_lp(q, {a.relation: 64 for a in q.atoms}, 64,
                     heavy=frozenset(q.variables))
    assert alloc.lam == 0
    assert set(alloc.shares.values()) == {1}


def test_share_product_never_exceeds_p():
    q = canonical_query("L", 5)
    for p in (2, 7, 27, 64, 100, 1024):
        alloc = share_lp(q, {a.relation: 10 ** 6 for a in q.atoms}, p)
        assert alloc.grid_size() <= p


def test_unequal_sizes_shift_shares():
    # a tiny relation should not attract large shares on its private vars
    q = parse_query("q(x,y,z) :- S(x,y), T(y,z)")
    p = 64
    alloc = share_lp(q, {"S": 2, "T": p * p}, p)
    assert alloc.shares["z"] >= alloc.shares["x"]


# -- numeric helpers -------------------------------------------------------

def test_log_base_p_exact_powers():
    assert log_base_p(64, 8) == 2
    assert log_base_p(8, 64) == F(1, 2)
    assert log_base_p(4096, 64) == 2


def test_iroot():
    assert iroot(27, 3) == 3
    assert iroot(26, 3) == 2
    assert iroot(1, 5) == 1
    assert iroot(10 ** 18, 2) == 10 ** 9


@settings(deadline=None, max_examples=80)
@given(st.integers(2, 10 ** 9), st.integers(1, 20))
def test_iroot_bounds(n, k):
    r = iroot(n, k)
    assert r ** k <= n < (r + 1) ** k


@settings(deadline=None, max_examples=60)
@given(st.integers(2, 10 ** 6), st.fractions(min_value=0, max_value=3))
def test_pow_floor_close(p, e):
    got = pow_floor(p, e)
    true = p ** float(e)
    assert got <= true * (1 + 1e-9) + 1
    assert got >= true * (1 - 1e-6) - 1


# -- load bounds -----------------------------------------------------------

def test_triangle_load_exponents():
    q = triangle()
    p = 64
    M = {a.relation: p ** 3 for a in q.atoms}
    lb = load_bound_packing(q, M, p)
    # equal sizes: bound is M / p^(1/tau*) = p^3 / p^(2/3)
    assert lb.exponent == F(3) - F(2, 3)
    wc = load_bound_worstcase(q, M, p)
    # worst case dominated by a single-heavy residual: M / p^(1/2)
    assert wc.exponent == F(3) - F(1, 2)
    assert wc.heavy_set and len(wc.heavy_set) == 1


def test_worstcase_at_least_packing():
    for fam, k in [("C", 4), ("L", 3), ("T", 2), ("K", 3)]:
        q = canonical_query(fam, k)
        M = {a.relation: 4096 for a in q.atoms}
        assert load_bound_worstcase(q, M, 64).exponent >= \
            load_bound_packing(q, M, 64).exponent
