import pytest

from mpcjoin.algorithms import (ALGORITHMS, counting_mode, declared_rounds,
                                pick_algorithm, run_algorithm, semi_join)
from mpcjoin.datagen import (DatabaseInstance, RelationInstance, gen_coin_flip,
                             gen_matching, gen_single_heavy)
from mpcjoin.query import QueryError, canonical_query, parse_query
from mpcjoin.sim import oracle_join


def all_ones(q):
    """One tuple of all-1 values per relation: maximally skewed everywhere."""
    rels = {a.relation: RelationInstance(a.relation, a.arity,
                                         (tuple(1 for _ in a.vars),), 1)
            for a in q.atoms}
    return DatabaseInstance(q, rels, 0, {"generator": "all_ones"})


def check(db, alg, p=27, seed=3):
    res = run_algorithm(alg, db, p, seed)
    assert res.output == oracle_join(db), (alg, db.meta)
    return res


# -- correctness spot checks (the acceptance suite runs the full matrix) ---

def test_hc_on_matchings():
    for fam, k in [("C", 3), ("L", 4), ("T", 3)]:
        q = canonical_query(fam, k)
        check(gen_matching(q, 40, 1), "hc")


def test_one_round_skew_handles_heavy_values():
    q = canonical_query("C", 3)
    check(gen_single_heavy(q, 60, "x2", 2), "one_round_skew")
    check(gen_coin_flip(q, 64, 5), "one_round_skew")


def test_one_sided_skew_join():
    q = parse_query("Q(x,z,y) :- S1(x,z), S2(z,y)")
    check(gen_single_heavy(q, 80, "z", 2), "join_one_sided_skew")


def test_one_sided_skew_server_budget():
    q = parse_query("Q(x,z,y) :- S1(x,z), S2(z,y)")
    p = 16
    res = run_algorithm("join_one_sided_skew",
                        gen_single_heavy(q, 80, "z", 2), p, 3)
    assert res.extras["heavy_servers"] <= 2 * p


def test_semi_join_filters_wide_side():
    q = parse_query("Q(z,y) :- R(z), S(z,y)")
    rels = {
        "R": RelationInstance("R", 1, ((1,), (3,), (5,)), 8),
        "S": RelationInstance("S", 2, tuple((z, y) for z in range(1, 7)
                                            for y in range(1, 4)), 8),
    }
    db = DatabaseInstance(q, rels, 0, {})
    res = check(db, "semi_join", p=8)
    assert res.output == {(z, y) for z in (1, 3, 5) for y in range(1, 4)}
    assert res.rounds == 1


def test_semi_join_empty_key_set():
    q = parse_query("Q(z,y) :- R(z), S(z,y)")
    rels = {
        "R": RelationInstance("R", 1, ((9,),), 9),
        "S": RelationInstance("S", 2, ((1, 2), (3, 4)), 9),
    }
    res = check(DatabaseInstance(q, rels, 0, {}), "semi_join", p=4)
    assert res.output == set()


def test_semi_join_rejects_non_nested_atoms():
    q = parse_query("Q(x,z,y) :- S1(x,z), S2(z,y)")
    with pytest.raises(QueryError):
        semi_join(gen_matching(q, 10, 1), 4, 0)


def test_multiround_strategies_match_oracle():
    for fam, k, alg in [("C", 4, "cycle"), ("C", 5, "cycle"),
                        ("L", 5, "line"), ("L", 6, "line"),
                        ("LW", 4, "lw"), ("K", 4, "clique"),
                        ("W", 3, "covering"), ("C", 3, "triangle")]:
        q = canonical_query(fam, k)
        check(gen_single_heavy(q, 36, "x1", 2), alg)
        check(gen_coin_flip(q, 3 ** min(k, 4), 5), alg)


def test_shape_validation():
    tri = gen_matching(canonical_query("C", 3), 10, 1)
    with pytest.raises(QueryError):
        run_algorithm("lw", gen_matching(canonical_query("L", 3), 10, 1), 8, 0)
    with pytest.raises(QueryError):
        run_algorithm("line", tri, 8, 0)
    with pytest.raises(QueryError):
        run_algorithm("covering", tri, 8, 0)
    with pytest.raises(KeyError):
        run_algorithm("nope", tri, 8, 0)


# -- round counts ----------------------------------------------------------

def test_round_contracts_on_skewed_instances():
    cases = [("C", 3, "cycle", 2), ("C", 4, "cycle", 2), ("C", 5, "cycle", 2),
             ("C", 6, "cycle", 2), ("L", 5, "line", 2), ("L", 7, "line", 3),
             ("LW", 4, "lw", 2), ("K", 4, "clique", 3), ("K", 5, "clique", 4),
             ("W", 3, "covering", 2)]
    for fam, k, alg, rounds in cases:
        q = canonical_query(fam, k)
        res = check(all_ones(q), alg, p=16)
        assert res.rounds == rounds, (fam, k)
        assert res.rounds <= declared_rounds(alg, q)


def test_light_instances_finish_in_one_round():
    for fam, k, alg in [("C", 3, "triangle"), ("C", 5, "cycle"),
                        ("LW", 4, "lw"), ("K", 3, "clique")]:
        q = canonical_query(fam, k)
        res = check(gen_matching(q, 30, 1), alg, p=8)
        assert res.rounds == 1


def test_declared_round_bounds():
    assert declared_rounds("hc", canonical_query("C", 3)) == 1
    assert declared_rounds("triangle", canonical_query("C", 3)) == 2
    assert declared_rounds("cycle", canonical_query("C", 6)) == 3
    assert declared_rounds("line", canonical_query("L", 6)) == 3
    assert declared_rounds("clique", canonical_query("K", 4)) == 3
    assert declared_rounds("lw", canonical_query("LW", 5)) == 2


# -- bookkeeping -----------------------------------------------------------

def test_physical_server_budget_reported():
    q = canonical_query("C", 3)
    res = check(gen_single_heavy(q, 60, "x1", 2), "triangle", p=27)
    phys = res.extras["physical_servers"]
    assert res.extras["nominal_p"] == 27
    assert 0 < phys <= 8 * 27


def test_auto_dispatch():
    assert pick_algorithm(canonical_query("C", 4)) == "cycle"
    assert pick_algorithm(canonical_query("K", 4)) == "clique"
    assert pick_algorithm(canonical_query("LW", 4)) == "lw"
    assert pick_algorithm(canonical_query("L", 4)) == "line"
    assert pick_algorithm(canonical_query("W", 3)) == "covering"
    assert pick_algorithm(canonical_query("T", 3)) == "one_round_skew"
    db = gen_matching(canonical_query("C", 4), 12, 1)
    res = run_algorithm("auto", db, 8, 0)
    assert res.name == "cycle"


def test_counting_mode_same_loads_no_output():
    q = canonical_query("C", 3)
    db = gen_single_heavy(q, 50, "x1", 2)
    full = run_algorithm("triangle", db, 27, 3)
    with counting_mode():
        dry = run_algorithm("triangle", db, 27, 3)
    assert dry.report.tuples == full.report.tuples
    assert dry.report.bits == full.report.bits
    assert dry.output == set()
    assert full.output == oracle_join(db)


def test_every_registered_algorithm_has_contract():
    for name in ALGORITHMS:
        assert declared_rounds(name, canonical_query("C", 3)) >= 1
