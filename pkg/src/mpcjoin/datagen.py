"""Seeded instance generators for the upper- and lower-bound experiments.

Every generator is a pure function of (query, parameters, seed): relation
contents come from SplitMix64 streams split per relation and attribute, and
tuples are kept lexicographically sorted, so TSV output is byte-identical
across runs and platforms.

Bit accounting follows the M_j = a_j * m_j * ceil(log2 n) convention.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .analyzer import pow_floor
from .lp import OPTIMAL, lp_solve_exact
from .query import Query
from .rng import Stream


def _bits_per_value(n: int) -> int:
    return max(1, (n - 1).bit_length())


@dataclass
class RelationInstance:
    relation: str
    arity: int
    tuples: tuple            # sorted tuple of int-tuples, values in [1, n]
    n: int                   # domain size

    def __post_init__(self):
        for t in self.tuples:
            if len(t) != self.arity:
                raise ValueError("tuple arity mismatch in %s" % self.relation)
        if len(set(self.tuples)) != len(self.tuples):
            raise ValueError("duplicate tuples in %s" % self.relation)

    @property
    def m(self) -> int:
        return len(self.tuples)

    @property
    def value_bits(self) -> int:
        return _bits_per_value(self.n)

    @property
    def width_bits(self) -> int:
        return self.arity * self.value_bits

    @property
    def size_bits(self) -> int:
        return self.m * self.width_bits

    def frequencies(self, position: int) -> dict:
        freq = {}
        for t in self.tuples:
            v = t[position]
            freq[v] = freq.get(v, 0) + 1
        return freq


@dataclass
class DatabaseInstance:
    query: Query
    relations: dict          # relation name -> RelationInstance
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        want = {a.relation for a in self.query.atoms}
        if set(self.relations) != want:
            raise ValueError("relations %s do not match query atoms %s"
                             % (sorted(self.relations), sorted(want)))

    def sizes_bits(self) -> dict:
        return {r: ri.size_bits for r, ri in self.relations.items()}

    def sizes_tuples(self) -> dict:
        return {r: ri.m for r, ri in self.relations.items()}

    def widths_bits(self) -> dict:
        return {r: ri.width_bits for r, ri in self.relations.items()}

    def total_tuples(self) -> int:
        return sum(ri.m for ri in self.relations.values())


def _sorted(tuples) -> tuple:
    return tuple(sorted(set(tuples)))


def gen_matching(q: Query, m: int, seed: int) -> DatabaseInstance:
    """Matching database: every value appears exactly once per attribute."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rels = {}
    for a in q.atoms:
        cols = []
        for pos in range(a.arity):
            perm = list(range(1, m + 1))
            Stream(seed, "matching", a.relation, pos).shuffle(perm)
            cols.append(perm)
        rels[a.relation] = RelationInstance(
            a.relation, a.arity, _sorted(zip(*cols)) if a.arity > 1
            else _sorted((v,) for v in cols[0]), m)
    return DatabaseInstance(q, rels, seed, {"generator": "matching", "m": m, "n": m})


def gen_single_heavy(q: Query, m: int, heavy_var: str, seed: int) -> DatabaseInstance:
    """One value (1) monopolizes heavy_var in every atom containing it; all
    other attributes, and all other atoms, are matchings."""
    if heavy_var not in q.variables:
        raise ValueError("unknown variable %r" % heavy_var)
    touched = [a for a in q.atoms if heavy_var in a.vars]
    warning = None
    if len(touched) < 2:
        warning = "heavy_var %s appears in fewer than 2 atoms" % heavy_var
    rels = {}
    for a in q.atoms:
        cols = []
        for pos, v in enumerate(a.vars):
            if v == heavy_var:
                cols.append([1] * m)
            else:
                perm = list(range(1, m + 1))
                Stream(seed, "single_heavy", a.relation, pos).shuffle(perm)
                cols.append(perm)
        tuples = _sorted(zip(*cols))
        rels[a.relation] = RelationInstance(a.relation, a.arity, tuples, m)
    meta = {"generator": "single_heavy", "m": m, "n": m, "heavy_var": heavy_var}
    if warning:
        meta["warning"] = warning
    return DatabaseInstance(q, rels, seed, meta)


def agm_domain_sizes(q: Query, m: int) -> dict:
    """Per-variable domain sizes n_i = floor(m**v_i) from the cover dual,
    rebalanced upward while every atom keeps prod n_i <= m."""
    # Dual of the cover LP: maximize sum v_i s.t. per atom sum_{i in S_j} v_i <= 1.
    A = [[1 if v in a.vars else 0 for v in q.variables] for a in q.atoms]
    res = lp_solve_exact([1] * q.k, A, ["<="] * len(A), [1] * len(A), maximize=True)
    if res.status != OPTIMAL:
        raise RuntimeError("cover dual LP failed")
    n = {v: max(1, pow_floor(m, e)) for v, e in zip(q.variables, res.x)}
    changed = True
    while changed:
        changed = False
        for v in q.variables:
            trial = dict(n)
            trial[v] += 1
            ok = True
            for a in q.atoms:
                prod = 1
                for w in a.vars:
                    prod *= trial[w]
                if prod > m:
                    ok = False
                    break
            if ok:
                n[v] += 1
                changed = True
    return n


def _product_tuples(doms):
    """Cartesian product of [1..d] ranges, lexicographic."""
    out = [()]
    for d in doms:
        out = [t + (v,) for t in out for v in range(1, d + 1)]
    return out


def gen_agm_worst(q: Query, m: int, seed: int) -> DatabaseInstance:
    """AGM worst-case shape: each relation is the full cartesian product of
    its variables' domains, with domain sizes from the cover dual."""
    if m < 1:
        raise ValueError("m must be >= 1")
    n = agm_domain_sizes(q, m)
    rels = {}
    for a in q.atoms:
        doms = [n[v] for v in a.vars]
        rels[a.relation] = RelationInstance(
            a.relation, a.arity, tuple(_product_tuples(doms)), max(doms))
    return DatabaseInstance(q, rels, seed,
                            {"generator": "agm_worst", "m": m, "domain_sizes": dict(n)})


def gen_coin_flip(q: Query, m: int, seed: int) -> DatabaseInstance:
    """AGM domains, each candidate tuple kept independently with prob 1/2."""
    n = agm_domain_sizes(q, m)
    rels = {}
    for a in q.atoms:
        doms = [n[v] for v in a.vars]
        st = Stream(seed, "coin_flip", a.relation)
        kept = [t for t in _product_tuples(doms) if st.coin()]
        if not kept:
            kept = [tuple(1 for _ in doms)]
        rels[a.relation] = RelationInstance(a.relation, a.arity, tuple(kept), max(doms))
    return DatabaseInstance(q, rels, seed,
                            {"generator": "coin_flip", "m": m, "domain_sizes": dict(n)})


def gen_lowerbound_matching(q: Query, sizes: dict, heavy: frozenset, seed: int) -> DatabaseInstance:
    """Lower-bound family: variables in `heavy` pinned to the constant 1,
    all other attributes uniformly random matchings over [n], n = (max m)^2.

    Atoms fully inside `heavy` keep the constant tuple and are padded with
    tuples of fresh values up to their requested size.
    """
    heavy = frozenset(heavy)
    unknown = heavy - set(q.variables)
    if unknown:
        raise ValueError("unknown variable(s): %s" % sorted(unknown))
    mmax = max(sizes[a.relation] for a in q.atoms)
    n = mmax * mmax
    rels = {}
    fresh = n  # fresh pad values taken from the top of the domain, descending
    for a in q.atoms:
        mj = sizes[a.relation]
        free_pos = [i for i, v in enumerate(a.vars) if v not in heavy]
        if not free_pos:
            tuples = [tuple(1 for _ in a.vars)]
            while len(tuples) < mj:
                t = []
                for _ in a.vars:
                    t.append(fresh)
                    fresh -= 1
                tuples.append(tuple(t))
            rels[a.relation] = RelationInstance(a.relation, a.arity, _sorted(tuples), n)
            continue
        cols = {}
        for pos in free_pos:
            cols[pos] = Stream(seed, "lb_matching", a.relation, pos).sample_distinct(mj, n)
        tuples = []
        for row in range(mj):
            tuples.append(tuple(cols[pos][row] if pos in cols else 1
                                for pos in range(a.arity)))
        rels[a.relation] = RelationInstance(a.relation, a.arity, _sorted(tuples), n)
    return DatabaseInstance(q, rels, seed,
                            {"generator": "lb_matching", "n": n,
                             "heavy": sorted(heavy),
                             "sizes": {a.relation: sizes[a.relation] for a in q.atoms}})


# --- TSV + manifest I/O ---------------------------------------------------

def write_instance(db: DatabaseInstance, outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    for name, ri in sorted(db.relations.items()):
        path = os.path.join(outdir, "%s.tsv" % name)
        with open(path, "w", encoding="ascii", newline="\n") as f:
            for t in sorted(ri.tuples):
                f.write("\t".join(str(v) for v in t) + "\n")
    manifest = {
        "query": db.query.render(),
        "seed": db.seed,
        "meta": db.meta,
        "relations": {
            name: {"arity": ri.arity, "m": ri.m, "n": ri.n,
                   "M_bits": ri.size_bits}
            for name, ri in sorted(db.relations.items())
        },
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_instance(q: Query, indir: str) -> DatabaseInstance:
    with open(os.path.join(indir, "manifest.json")) as f:
        manifest = json.load(f)
    rels = {}
    for a in q.atoms:
        path = os.path.join(indir, "%s.tsv" % a.relation)
        tuples = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if line:
                    tuples.append(tuple(int(v) for v in line.split("\t")))
        rels[a.relation] = RelationInstance(
            a.relation, a.arity, tuple(tuples),
            manifest["relations"][a.relation]["n"])
    return DatabaseInstance(q, rels, manifest["seed"], manifest.get("meta", {}))
