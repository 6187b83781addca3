import json
import os

import pytest

from mpcjoin.datagen import (DatabaseInstance, RelationInstance,
                             agm_domain_sizes, gen_agm_worst, gen_coin_flip,
                             gen_lowerbound_matching, gen_matching,
                             gen_single_heavy, read_instance, write_instance)
from mpcjoin.query import canonical_query, parse_query


def triangle():
    return canonical_query("C", 3)


def test_matching_every_value_once_per_column():
    db = gen_matching(triangle(), 50, 7)
    for ri in db.relations.values():
        assert ri.m == 50
        for pos in range(ri.arity):
            freq = ri.frequencies(pos)
            assert set(freq) == set(range(1, 51))
            assert set(freq.values()) == {1}


def test_matching_deterministic():
    a = gen_matching(triangle(), 40, 3)
    b = gen_matching(triangle(), 40, 3)
    assert a.relations["S1"].tuples == b.relations["S1"].tuples
    c = gen_matching(triangle(), 40, 4)
    assert c.relations["S1"].tuples != a.relations["S1"].tuples


def test_single_heavy_monopolizes_variable():
    db = gen_single_heavy(triangle(), 30, "x1", 5)
    # x1 appears in S1 (position 0) and S3 (position 1)
    assert db.relations["S1"].frequencies(0) == {1: 30}
    assert db.relations["S3"].frequencies(1) == {1: 30}
    # the other attribute of each relation stays a matching
    assert set(db.relations["S1"].frequencies(1).values()) == {1}
    assert set(db.relations["S2"].frequencies(0).values()) == {1}


def test_single_heavy_warns_when_var_in_one_atom():
    q = parse_query("q(x,y,z) :- S(x,y), T(y,z)")
    db = gen_single_heavy(q, 10, "x", 1)
    assert "warning" in db.meta


def test_agm_domain_sizes_triangle():
    n = agm_domain_sizes(triangle(), 10000)
    assert n == {"x1": 100, "x2": 100, "x3": 100}


def test_agm_worst_full_products():
    db = gen_agm_worst(triangle(), 400, 1)
    for ri in db.relations.values():
        assert ri.m == 400
        vals = {t[0] for t in ri.tuples} | {t[1] for t in ri.tuples}
        assert vals == set(range(1, 21))


def test_agm_sizes_respect_budget():
    for fam, k in [("L", 3), ("T", 3), ("LW", 3), ("K", 4)]:
        q = canonical_query(fam, k)
        n = agm_domain_sizes(q, 500)
        for a in q.atoms:
            prod = 1
            for v in a.vars:
                prod *= n[v]
            assert prod <= 500


def test_coin_flip_within_5_sigma():
    db = gen_coin_flip(triangle(), 10000, 9)
    for ri in db.relations.values():
        n = 10000          # candidate tuples per relation
        mean, sigma = n / 2, (n / 4) ** 0.5
        assert abs(ri.m - mean) <= 5 * sigma


def test_lowerbound_matching_structure():
    q = triangle()
    sizes = {"S1": 30, "S2": 30, "S3": 30}
    db = gen_lowerbound_matching(q, sizes, frozenset({"x1"}), 3)
    assert db.relations["S1"].frequencies(0) == {1: 30}
    assert set(db.relations["S2"].frequencies(0).values()) == {1}
    n = db.relations["S1"].n
    assert n == 30 * 30


def test_lowerbound_all_heavy_atom_padded():
    q = parse_query("q(x,y) :- S(x,y), T(x), U(y)")
    db = gen_lowerbound_matching(q, {"S": 5, "T": 5, "U": 5},
                                 frozenset({"x", "y"}), 1)
    ri = db.relations["S"]
    assert ri.m == 5
    assert (1, 1) in ri.tuples


def test_duplicate_tuples_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        RelationInstance("S", 1, ((1,), (1,)), 2)


def test_relations_must_match_query():
    q = triangle()
    with pytest.raises(ValueError, match="match"):
        DatabaseInstance(q, {}, 0, {})


def test_bit_accounting():
    db = gen_matching(triangle(), 16, 1)
    ri = db.relations["S1"]
    assert ri.value_bits == 4
    assert ri.width_bits == 8
    assert ri.size_bits == 16 * 8
    assert db.total_tuples() == 48


def test_write_read_round_trip(tmp_path):
    q = triangle()
    db = gen_coin_flip(q, 100, 4)
    out = str(tmp_path / "inst")
    write_instance(db, out)
    back = read_instance(q, out)
    for r in db.relations:
        assert back.relations[r].tuples == db.relations[r].tuples
        assert back.relations[r].n == db.relations[r].n
    with open(os.path.join(out, "manifest.json")) as f:
        manifest = json.load(f)
    assert manifest["query"] == q.render()
    assert manifest["relations"]["S1"]["m"] == db.relations["S1"].m


def test_written_files_byte_identical(tmp_path):
    q = triangle()
    p1, p2 = str(tmp_path / "a"), str(tmp_path / "b")
    write_instance(gen_matching(q, 64, 9), p1)
    write_instance(gen_matching(q, 64, 9), p2)
    for name in ("S1.tsv", "S2.tsv", "S3.tsv", "manifest.json"):
        with open(os.path.join(p1, name), "rb") as f1, \
                open(os.path.join(p2, name), "rb") as f2:
            assert f1.read() == f2.read()
