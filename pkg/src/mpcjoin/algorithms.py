"""Parallel join strategies with measured communication loads.

Every public algorithm takes a database instance, a nominal server count p
and a seed, simulates its shipment schedule round by round on the engine,
and returns the computed output together with the per-round load report.

Internally, plans hand out *logical* servers through allocator closures: a
logical server is a tuple of physical ids, so a sub-plan running inside a
cartesian-product grid transparently replicates its traffic to every grid
cell it spans.  Exclusive server blocks (for heavy-hitter values) are drawn
from the same pool; the total number of physical servers used is a small
constant multiple of p and is reported in ``extras["physical_servers"]``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

from .analyzer import log_base_p, pow_floor
from .query import Atom, Query, QueryError
from .rng import derive_key, mix64
from .sim import Engine, LoadReport, hash_family, hc_destinations, join_atoms
from .analyzer import share_lp, _round_shares


_MASK64 = (1 << 64) - 1


class InsufficientServers(RuntimeError):
    """A sub-plan asked for more logical servers than its block provides."""


class Pool:
    """Source of fresh physical server ids."""

    def __init__(self):
        self.count = 0

    def phys(self) -> int:
        i = self.count
        self.count += 1
        return i


@dataclass
class _Ctx:
    eng: Engine
    pool: Pool
    seed: int
    vbits: int                 # bits per value for intermediate relations
    _names: Counter = field(default_factory=Counter)

    def fresh_name(self, prefix: str) -> str:
        n = self._names[prefix]
        self._names[prefix] += 1
        return "%s#%d" % (prefix, n)

    def register(self, name: str, arity: int) -> None:
        self.eng.register_relation(name, arity * self.vbits)


class _Grid:
    """A row x column split of logical servers for cartesian products.

    Rows are created lazily, each consuming `ncols` fresh logical servers
    from the parent allocator; a row's group is the union of its columns,
    so a row-side sub-plan is replicated across all columns.  Column c's
    group is the union of the c-th slot of every realized row, so the
    column side must ship only after the row side has finished allocating.
    """

    def __init__(self, fresh, ncols: int):
        self.fresh = fresh
        self.ncols = max(1, ncols)
        self.rows = []
        self._next_col = 0

    def fresh_row(self):
        cols = [self.fresh() for _ in range(self.ncols)]
        self.rows.append(cols)
        return tuple(p for g in cols for p in g)

    def col_group(self, c: int):
        return tuple(p for cols in self.rows for p in cols[c])

    def fresh_col(self):
        if self._next_col >= self.ncols:
            raise InsufficientServers(
                "grid column block exhausted (%d columns)" % self.ncols)
        c = self._next_col
        self._next_col += 1
        return self.col_group(c)


# -- exact threshold tests -------------------------------------------------

def _ge_root(d: int, m: int, P: int, num: int, den: int) -> bool:
    """d >= m / P**(num/den), exactly."""
    return d ** den * P ** num >= m ** den


def _gt_root(d: int, m: int, P: int, num: int, den: int) -> bool:
    """d > m / P**(num/den), exactly."""
    return d ** den * P ** num > m ** den


# -- row-set combinators ---------------------------------------------------
#
# These assemble *result* rows only; no routing decision ever depends on
# them.  In counting mode they all short-circuit to empty sets, so large
# instances can be dry-run for their loads without materializing outputs.

def _out_join(atoms, rel_tuples, out_vars):
    if _COUNTING_ONLY:
        return set()
    return join_atoms(atoms, rel_tuples, out_vars)


def _reorder(vars_src, rows, vars_dst):
    idx = [vars_src.index(v) for v in vars_dst]
    return {tuple(t[i] for i in idx) for t in rows}


def _join_rows(va, ra, vb, rb):
    """Join two row sets on their shared variables."""
    shared = [v for v in va if v in vb]
    if _COUNTING_ONLY:
        keep_b = [i for i, v in enumerate(vb) if v not in shared]
        return tuple(va) + tuple(vb[i] for i in keep_b), set()
    keep_b = [i for i, v in enumerate(vb) if v not in shared]
    kb = [vb.index(v) for v in shared]
    index = {}
    for t in rb:
        index.setdefault(tuple(t[i] for i in kb), []).append(t)
    ka = [va.index(v) for v in shared]
    out_vars = tuple(va) + tuple(vb[i] for i in keep_b)
    out = set()
    for t in ra:
        for u in index.get(tuple(t[i] for i in ka), ()):
            out.add(t + tuple(u[i] for i in keep_b))
    return out_vars, out


def _plug(vars_in, rows, extra: dict):
    """Extend every row with fixed values for new variables."""
    out_vars = tuple(vars_in) + tuple(extra)
    tail = tuple(extra.values())
    return out_vars, {t + tail for t in rows}


# -- heavy-hitter bookkeeping ---------------------------------------------

def _column_freqs(tuples, pos: int) -> Counter:
    c = Counter()
    for t in tuples:
        c[t[pos]] += 1
    return c


def _heavy_at(atoms, rels, var_list, test):
    """Per-variable heavy value sets; test(freq, m_j) decides heaviness."""
    heavy = {v: set() for v in var_list}
    for a in atoms:
        mj = len(rels[a.relation])
        if mj == 0:
            continue
        for pos, v in enumerate(a.vars):
            for val, f in _column_freqs(rels[a.relation], pos).items():
                if test(f, mj):
                    heavy[v].add(val)
    return heavy


# -- shipment primitives ---------------------------------------------------

def _send_group(eng, rnd, group, rel, tup):
    for s in group:
        eng.send(rnd, s, rel, tup)


def _balanced_hashes(ctx, q, rels, shares, tag):
    """Per-variable bucket maps with near-equal bucket sizes.

    Routing may depend on data statistics, so instead of hashing blindly we
    order each variable's observed values by a seeded permutation and deal
    them round-robin over the buckets: bucket counts differ by at most one,
    which keeps hypercube cells balanced even when the active domain is
    barely larger than the share.  Unseen values fall back to plain hashing.
    """
    hashes = {}
    for v in q.variables:
        s = shares.get(v, 1)
        fb = hash_family(ctx.seed, tag, "hc", v)
        if s <= 1:
            hashes[v] = fb
            continue
        key = derive_key(ctx.seed, tag, "bal", v)
        vals = set()
        for a in q.atoms:
            if v in a.vars:
                pos = a.vars.index(v)
                for t in rels[a.relation]:
                    vals.add(t[pos])
        ordered = sorted(vals, key=lambda x: (mix64((x & _MASK64) ^ key), x))
        vmap = {val: i % s + 1 for i, val in enumerate(ordered)}

        def h(value, buckets, vmap=vmap, fb=fb):
            b = vmap.get(value)
            return b if b is not None else fb(value, buckets)

        hashes[v] = h
    return hashes


def _hc_ship(ctx, rnd, q, rels, shares, cells, tag, keep=None):
    """Hypercube shipment of every atom of q onto the given logical cells.

    `cells` has exactly prod(shares) entries; keep(atom, tuple) filters.
    """
    hashes = _balanced_hashes(ctx, q, rels, shares, tag)
    for a in q.atoms:
        for t in rels[a.relation]:
            if keep is not None and not keep(a, t):
                continue
            asg = dict(zip(a.vars, t))
            for c in hc_destinations(set(a.vars), asg, shares, q.variables, hashes):
                _send_group(ctx.eng, rnd, cells[c], a.relation, t)


def _distribute(ctx, rnd, name, tuples, groups, tag):
    """Partition a relation over the given logical groups by tuple hash."""
    n = len(groups)
    if n == 0:
        return
    h = hash_family(ctx.seed, tag, "dist")
    for t in tuples:
        _send_group(ctx.eng, rnd, groups[h(t, n) - 1], name, t)


def _intersect_ship(ctx, rnd, named_sets, P, fresh, tag):
    """Co-locate same-schema relations by full-tuple hash; return the
    intersection."""
    block = [fresh() for _ in range(max(1, P))]
    h = hash_family(ctx.seed, tag, "ix")
    n = len(block)
    for name, ts in named_sets:
        for t in ts:
            _send_group(ctx.eng, rnd, block[h(t, n) - 1], name, t)
    if _COUNTING_ONLY:
        return set()
    out = set(named_sets[0][1])
    for _, ts in named_sets[1:]:
        out &= set(ts)
    return out


def _semijoin_ship(ctx, rnd, a_name, a_keys, b_name, b_tuples, keypos,
                   P, fresh, tag):
    """One round of the skew-resilient semi-join of B against key set A.

    A's keys are unique, so only B can be skewed on the key: key values
    with frequency above m/P each get an exclusive block of ceil(P*f/m)
    logical servers (B partitioned, matching A keys broadcast); everything
    else goes through a hash join on a block of P servers.  Returns the
    tuples of B whose key projection is in A.
    """
    P = max(1, P)
    m = max(len(a_keys), len(b_tuples), 1)
    freq = Counter(tuple(t[i] for i in keypos) for t in b_tuples)
    heavy = {kv: f for kv, f in freq.items() if f * P > m}
    block = [fresh() for _ in range(P)]
    h = hash_family(ctx.seed, tag, "sjh")
    hpart = hash_family(ctx.seed, tag, "sjp")
    hblocks = {}
    for kv in sorted(heavy):
        ph = -(-P * heavy[kv] // m)     # ceil
        hblocks[kv] = [fresh() for _ in range(ph)]
    ctx.register(a_name, len(keypos))
    for kv in a_keys:
        if kv in hblocks:
            for g in hblocks[kv]:
                _send_group(ctx.eng, rnd, g, a_name, kv)
        else:
            _send_group(ctx.eng, rnd, block[h(kv, P) - 1], a_name, kv)
    for t in b_tuples:
        kv = tuple(t[i] for i in keypos)
        if kv in hblocks:
            g = hblocks[kv]
            _send_group(ctx.eng, rnd, g[hpart(t, len(g)) - 1], b_name, t)
        else:
            _send_group(ctx.eng, rnd, block[h(kv, P) - 1], b_name, t)
    return {t for t in b_tuples if tuple(t[i] for i in keypos) in a_keys}


# -- one-round algorithms --------------------------------------------------

def _subsets(vs):
    n = len(vs)
    for mask in range(1 << n):
        yield frozenset(vs[i] for i in range(n) if mask >> i & 1)


def _one_round_skew_core(ctx, rnd, q, rels, P, fresh, tag):
    """Skew-resilient one-round hypercube: one share allocation per heavy
    profile, all shipped in the same round onto a shared block of P cells.

    Returns the output rows over q.variables.
    """
    P = max(1, P)
    eng = ctx.eng
    sizes = {a.relation: max(1, eng.widths[a.relation] * len(rels[a.relation]))
             for a in q.atoms}
    heavy = _heavy_at(q.atoms, rels, q.variables,
                      lambda f, mj: f * P >= mj)
    # group each relation's tuples by their heavy profile once
    groups = {}
    for a in q.atoms:
        g = {}
        for t in rels[a.relation]:
            prof = frozenset(v for v, val in zip(a.vars, t) if val in heavy[v])
            g.setdefault(prof, []).append(t)
        groups[a.relation] = g
    base = None
    out = set()
    for X in _subsets(q.variables):
        filtered = {}
        ok = True
        for a in q.atoms:
            ts = groups[a.relation].get(frozenset(X & set(a.vars)))
            if not ts:
                ok = False
                break
            filtered[a.relation] = ts
        if not ok:
            continue
        if base is None:
            base = [fresh() for _ in range(P)]
        alloc = share_lp(q, sizes, P, X)
        shares = alloc.shares
        xkey = "|".join(sorted(X))
        hashes = _balanced_hashes(ctx, q, filtered, shares, tag + "v" + xkey)
        mkey = derive_key(ctx.seed, tag, "map", xkey)
        ncells = 1
        for s in shares.values():
            ncells *= s
        if ncells <= P:
            # collision-free placement of the share grid on the base block
            cellmap = sorted(range(P), key=lambda c: mix64(mkey ^ c))[:ncells]
        else:
            cellmap = [mix64(mkey ^ c) % P for c in range(ncells)]
        for a in q.atoms:
            for t in filtered[a.relation]:
                asg = dict(zip(a.vars, t))
                for c in hc_destinations(set(a.vars), asg, shares, q.variables, hashes):
                    _send_group(eng, rnd, base[cellmap[c]], a.relation, t)
        out |= _out_join(q.atoms, filtered, q.variables)
    return out


# -- line queries ----------------------------------------------------------

def _line_vars(atoms):
    vs = [atoms[0].vars[0]]
    for a in atoms:
        vs.append(a.vars[1])
    return tuple(vs)


def _line(ctx, rnd, atoms, rels, P, fresh, tag):
    """Path join over the chained atoms; returns (vars, rows, rounds)."""
    P = max(1, P)
    vs = _line_vars(atoms)
    k = len(atoms)
    if k == 1:
        return atoms[0].vars, set(rels[atoms[0].relation]), 0
    if k <= 4:
        q = Query("sub", vs, tuple(atoms))
        out = _one_round_skew_core(ctx, rnd, q, rels, P, fresh, tag + "b")
        return vs, out, 1
    if k % 2 == 0:
        n = k // 2
        p1 = max(1, pow_floor(P, Fraction(1, n + 1)))
        p0 = max(1, P // p1)
        grid = _Grid(fresh, p1)
        v0, out0, r0 = _line(ctx, rnd, atoms[:-1], rels, p0, grid.fresh_row, tag + "e")
        last = atoms[-1]
        cols = [grid.col_group(c) for c in range(p1)]
        _distribute(ctx, rnd, last.relation, rels[last.relation], cols, tag + "ed")
        ov, rows = _join_rows(v0, out0, last.vars, set(rels[last.relation]))
        return tuple(vs), _reorder(ov, rows, vs), max(r0, 1)

    # odd k >= 5
    n = (k + 1) // 2
    s1, s2 = atoms[0], atoms[1]
    x1 = s1.vars[1]
    m = max(max(len(rels[a.relation]) for a in atoms), 1)
    deg = _column_freqs(rels[s1.relation], 1)
    heavy = sorted(h for h, d in deg.items() if _ge_root(d, m, P, 1, n))
    hset = set(heavy)
    rounds = 0
    out = set()

    # light x1: cartesian grid of the tail line with the head join
    p1 = max(1, pow_floor(P, Fraction(1, n)))
    p0 = max(1, P // p1)
    grid = _Grid(fresh, p1)
    v0, out0, r0 = _line(ctx, rnd, atoms[2:], rels, p0, grid.fresh_row, tag + "t")
    cols = [grid.col_group(c) for c in range(p1)]
    hcol = hash_family(ctx.seed, tag, "lx1")
    light1 = [t for t in rels[s1.relation] if t[1] not in hset]
    light2 = [t for t in rels[s2.relation] if t[0] not in hset]
    for name, ts, pos in ((s1.relation, light1, 1), (s2.relation, light2, 0)):
        for t in ts:
            _send_group(ctx.eng, rnd, cols[hcol(t[pos], p1) - 1], name, t)
    head = _out_join([s1, s2], {s1.relation: light1, s2.relation: light2},
                      (s1.vars[0], x1, s2.vars[1]))
    ov, rows = _join_rows((s1.vars[0], x1, s2.vars[1]), head, v0, out0)
    out |= _reorder(ov, rows, vs)
    rounds = max(rounds, max(r0, 1))

    # heavy x1: one exclusive grid per heavy value
    p1k = pow_floor(P, Fraction(1, n))
    s3 = atoms[2]
    for h in heavy:
        p0h = max(1, (deg[h] * p1k) // m)
        p1h = max(1, pow_floor(P, Fraction(n - 1, n)))
        left = {(t[0],) for t in rels[s1.relation] if t[1] == h}
        keys = {(t[1],) for t in rels[s2.relation] if t[0] == h}
        grid2 = _Grid(fresh, p0h)
        aname = ctx.fresh_name(tag + "k")
        tname = ctx.fresh_name(tag + "s")
        ctx.register(tname, 2)
        res = _semijoin_ship(ctx, rnd, aname, keys, s3.relation,
                             rels[s3.relation], (0,), p1h, grid2.fresh_row,
                             tag + "j" + str(h))
        chain = [Atom(tname, s3.vars)] + list(atoms[3:])
        crels = dict(rels)
        crels[tname] = res
        cv, crows, cr = _line(ctx, rnd + 1, chain, crels, p1h,
                              grid2.fresh_row, tag + "h" + str(h))
        lname = ctx.fresh_name(tag + "u")
        ctx.register(lname, 1)
        cols2 = [grid2.col_group(c) for c in range(p0h)]
        _distribute(ctx, rnd, lname, left, cols2, tag + "d" + str(h))
        pv, prows = _plug(cv, crows, {x1: h})
        jv, jrows = _join_rows(pv, prows, (s1.vars[0],), left)
        out |= _reorder(jv, jrows, vs)
        rounds = max(rounds, 1 + cr, 1)
    return vs, out, rounds


def _chain_eval(ctx, rnd, chain, rels, P, fresh, tag):
    """Evaluate a path whose end atoms may coincide on one edge.

    Single atom: distribute it over a block (1 round).  Two atoms on the
    same edge: co-locate and intersect (1 round).  Otherwise a line join.
    """
    if len(chain) == 1:
        a = chain[0]
        block = [fresh() for _ in range(max(1, P))]
        _distribute(ctx, rnd, a.relation, rels[a.relation], block, tag + "c1")
        return a.vars, set(rels[a.relation]), 1
    if len(chain) == 2 and set(chain[0].vars) == set(chain[1].vars):
        a, b = chain
        rows_b = set(rels[b.relation])
        if a.vars != b.vars:
            rows_b = _reorder(b.vars, rows_b, a.vars)
        out = _intersect_ship(ctx, rnd,
                              [(a.relation, set(rels[a.relation])),
                               (b.relation, rows_b)], P, fresh, tag + "c2")
        return a.vars, out, 1
    return _line(ctx, rnd, chain, rels, P, fresh, tag)


# -- cycle queries ---------------------------------------------------------

def _cycle_odd(ctx, rnd, q, atoms, rels, P, fresh, tag):
    k = len(atoms)
    m = max(max(len(rels[a.relation]) for a in atoms), 1)
    heavy = _heavy_at(atoms, rels, q.variables,
                      lambda f, mj: _gt_root(f, m, P, 1, k))
    out = set()
    rounds = 0

    # light part: uniform hypercube on tuples light at both endpoints
    shares = _round_shares(q, {v: Fraction(1, k) for v in q.variables}, P)
    ncells = 1
    for s in shares.values():
        ncells *= s
    cells = [fresh() for _ in range(ncells)]

    def is_light(a, t):
        return all(val not in heavy[v] for v, val in zip(a.vars, t))

    _hc_ship(ctx, rnd, q, rels, shares, cells, tag + "l", keep=is_light)
    filtered = {a.relation: [t for t in rels[a.relation] if is_light(a, t)]
                for a in atoms}
    out |= _out_join(atoms, filtered, q.variables)
    rounds = max(rounds, 1)

    p1 = max(1, pow_floor(P, Fraction(k - 1, k)))
    for i in range(k):
        # variable x at position i joins atoms[i-1] (pos 1) and atoms[i] (pos 0)
        x = atoms[i].vars[0]
        for h in sorted(heavy[x]):
            nxt = atoms[(i + 1) % k]        # receives the left semi-join
            prv = atoms[(i - 2) % k]        # receives the right semi-join
            lkeys = {(t[1],) for t in rels[atoms[i].relation] if t[0] == h}
            rkeys = {(t[0],) for t in rels[atoms[(i - 1) % k].relation] if t[1] == h}
            ta = ctx.fresh_name(tag + "a")
            tb = ctx.fresh_name(tag + "b")
            ctx.register(ta, 2)
            ctx.register(tb, 2)
            res_a = _semijoin_ship(ctx, rnd, ctx.fresh_name(tag + "ka"), lkeys,
                                   nxt.relation, rels[nxt.relation], (0,),
                                   p1, fresh, tag + "sa%d_%s" % (i, h))
            res_b = _semijoin_ship(ctx, rnd, ctx.fresh_name(tag + "kb"), rkeys,
                                   prv.relation, rels[prv.relation], (1,),
                                   p1, fresh, tag + "sb%d_%s" % (i, h))
            if nxt is prv:                  # k == 3: both ends hit the middle atom
                chain = [Atom(ta, nxt.vars), Atom(tb, nxt.vars)]
            else:
                mids = [atoms[(i + j) % k] for j in range(2, k - 2)]
                chain = [Atom(ta, nxt.vars)] + mids + [Atom(tb, prv.vars)]
            crels = dict(rels)
            crels[ta] = res_a
            crels[tb] = res_b
            cv, crows, cr = _chain_eval(ctx, rnd + 1, chain, crels, p1,
                                        fresh, tag + "c%d_%s" % (i, h))
            pv, prows = _plug(cv, crows, {x: h})
            out |= _reorder(pv, prows, q.variables)
            rounds = max(rounds, 1 + cr)
    return out, rounds


def _cycle_even(ctx, rnd, q, atoms, rels, P, fresh, tag):
    k = len(atoms)
    m = max(max(len(rels[a.relation]) for a in atoms), 1)
    var_at = [a.vars[0] for a in atoms]      # position i -> variable
    # per-position maximum degree of each value
    deg = [Counter() for _ in range(k)]
    for i in range(k):
        for val, f in _column_freqs(rels[atoms[i].relation], 0).items():
            deg[i][val] = max(deg[i][val], f)
        for val, f in _column_freqs(rels[atoms[(i - 1) % k].relation], 1).items():
            deg[i][val] = max(deg[i][val], f)
    out = set()
    rounds = 0

    # Case 2: a single skew-aware hypercube round covering the whole output.
    if P == 1:
        exps = {v: Fraction(0) for v in q.variables}
    else:
        dmax = [max(deg[i].values(), default=1) for i in range(k)]
        lo = [max(Fraction(0), min(Fraction(1),
                                   log_base_p(m, P) - log_base_p(max(d, 1), P)))
              for d in dmax]
        d_odd = min(lo[0::2])
        d_even = min(lo[1::2])
        if d_odd > d_even:
            d_odd, d_even = d_even, d_odd
            first_odd = 1
        else:
            first_odd = 0
        if d_odd > Fraction(2, k):
            e_odd = e_even = Fraction(1, k)
        else:
            e_odd = d_odd
            e_even = Fraction(2, k) - d_odd
        exps = {}
        for i in range(k):
            exps[var_at[i]] = e_odd if i % 2 == first_odd else e_even
    shares = _round_shares(q, exps, P)
    ncells = 1
    for s in shares.values():
        ncells *= s
    cells = [fresh() for _ in range(ncells)]
    _hc_ship(ctx, rnd, q, rels, shares, cells, tag + "g")
    out |= _out_join(atoms, rels, q.variables)
    rounds = max(rounds, 1)

    # Case 1: exclusive blocks for qualifying heavy pairs at odd distance.
    cand = []
    for i in range(k):
        cand.append(sorted(val for val, d in deg[i].items()
                           if d ** k * P ** 2 >= m ** k))
    P1 = max(1, pow_floor(P, Fraction(k - 2, k)))
    for i in range(k):
        for j in range(i + 1, k):
            if (j - i) % 2 == 0:
                continue
            for h in cand[i]:
                for h2 in cand[j]:
                    lhs = m ** (2 * k)
                    rhs = P ** 2 * (deg[i][h] * deg[j][h2]) ** k
                    if lhs > rhs:
                        continue
                    r = _cycle_pair(ctx, rnd, q, atoms, rels, P, P1, fresh,
                                    i, h, j, h2, tag, out)
                    rounds = max(rounds, r)
    return out, rounds


def _cycle_pair(ctx, rnd, q, atoms, rels, P, P1, fresh, i, h, j, h2, tag, out):
    """Residual of an even cycle after fixing a qualifying heavy pair."""
    k = len(atoms)
    var_at = [a.vars[0] for a in atoms]
    if (i - j) % k == 1:                    # normalize to j == i+1 (mod k)
        i, j, h, h2 = j, i, h2, h
    ptag = tag + "p%d_%d_%s_%s" % (i, j, h, h2)

    def unary_right(pos, val):
        # values following val through the atom at `pos`
        return {(t[1],) for t in rels[atoms[pos].relation] if t[0] == val}

    def unary_left(pos, val):
        return {(t[0],) for t in rels[atoms[pos].relation] if t[1] == val}

    def arc(rnd2, start, end, ukeys_a, ukeys_b, Pa, alloc, atag):
        """Semi-join the unary ends into the arc start..end, then evaluate.

        The arc covers positions start..end (atoms), i.e. variables
        var_at[start] .. var_at[end+1]."""
        first, last = atoms[start % k], atoms[end % k]
        ta = ctx.fresh_name(atag + "A")
        tb = ctx.fresh_name(atag + "B")
        ctx.register(ta, 2)
        ctx.register(tb, 2)
        res_a = _semijoin_ship(ctx, rnd2, ctx.fresh_name(atag + "ka"), ukeys_a,
                               first.relation, rels[first.relation], (0,),
                               Pa, alloc, atag + "sa")
        res_b = _semijoin_ship(ctx, rnd2, ctx.fresh_name(atag + "kb"), ukeys_b,
                               last.relation, rels[last.relation], (1,),
                               Pa, alloc, atag + "sb")
        if first is last:
            chain = [Atom(ta, first.vars), Atom(tb, first.vars)]
        else:
            mids = [atoms[t % k] for t in range(start + 1, end)]
            chain = [Atom(ta, first.vars)] + mids + [Atom(tb, last.vars)]
        crels = dict(rels)
        crels[ta] = res_a
        crels[tb] = res_b
        return _chain_eval(ctx, rnd2 + 1, chain, crels, Pa, alloc, atag + "c")

    if (j - i) % k == 1:
        # adjacent: the pair must be an actual tuple of the shared atom
        if (h, h2) not in rels[atoms[i].relation]:
            return 0
        ua = unary_right((i + 1) % k, h2)        # constrains var_at[i+2]
        ub = unary_left((i - 1) % k, h)          # constrains var_at[i-1]
        cv, crows, cr = arc(rnd, i + 2, i + k - 2, ua, ub, P1, fresh, ptag)
        pv, prows = _plug(cv, crows, {var_at[i]: h, var_at[j]: h2})
        out |= _reorder(pv, prows, q.variables)
        return 1 + cr

    # non-adjacent: two arcs evaluated on a grid
    alpha = (j - i) - 2
    beta = k - (j - i) - 2
    g1 = max(1, pow_floor(P, Fraction(alpha + 1, k)))
    g2 = max(1, pow_floor(P, Fraction(beta + 1, k)))
    grid = _Grid(fresh, 8 * g2 + 16)
    u1a = unary_right(i, h)                      # var_at[i+1]
    u1b = unary_left((j - 1) % k, h2)            # var_at[j-1]
    v1, rows1, r1 = arc(rnd, i + 1, j - 2, u1a, u1b, g1, grid.fresh_row,
                        ptag + "x")
    u2a = unary_right(j, h2)                     # var_at[j+1]
    u2b = unary_left((i - 1) % k, h)             # var_at[i-1]
    v2, rows2, r2 = arc(rnd, j + 1, i + k - 2, u2a, u2b, g2, grid.fresh_col,
                        ptag + "y")
    jv, jrows = _join_rows(v1, rows1, v2, rows2)
    pv, prows = _plug(jv, jrows, {var_at[i]: h, var_at[j % k]: h2})
    out |= _reorder(pv, prows, q.variables)
    return 1 + max(r1, r2)


# -- Loomis-Whitney joins --------------------------------------------------

def _lw(ctx, rnd, q, rels, P, fresh, tag):
    k = q.k
    atoms = list(q.atoms)
    omit = {}
    for a in atoms:
        missing = [v for v in q.variables if v not in a.vars]
        omit[missing[0]] = a
    m = max(max(len(rels[a.relation]) for a in atoms), 1)
    heavy = _heavy_at(atoms, rels, q.variables,
                      lambda f, mj: _gt_root(f, m, P, 1, k))
    out = set()
    rounds = 0

    shares = _round_shares(q, {v: Fraction(1, k) for v in q.variables}, P)
    ncells = 1
    for s in shares.values():
        ncells *= s
    cells = [fresh() for _ in range(ncells)]

    def is_light(a, t):
        return all(val not in heavy[v] for v, val in zip(a.vars, t))

    _hc_ship(ctx, rnd, q, rels, shares, cells, tag + "l", keep=is_light)
    filtered = {a.relation: [t for t in rels[a.relation] if is_light(a, t)]
                for a in atoms}
    out |= _out_join(atoms, filtered, q.variables)
    rounds = max(rounds, 1)

    P1 = max(1, pow_floor(P, Fraction(k - 1, k)))
    for xi in q.variables:
        base = omit[xi]                     # the one atom without x_i
        for h in sorted(heavy[xi]):
            results = []
            for a in atoms:
                if a is base:
                    continue
                pos = a.vars.index(xi)
                keyvars = [v for v in a.vars if v != xi]
                keys = {tuple(val for p2, val in enumerate(t) if p2 != pos)
                        for t in rels[a.relation] if t[pos] == h}
                keypos = tuple(base.vars.index(v) for v in keyvars)
                # align projected keys to base's variable order
                keys = _reorder(tuple(keyvars), keys,
                                tuple(base.vars[i] for i in sorted(keypos)))
                keypos = tuple(sorted(keypos))
                nm = ctx.fresh_name(tag + "w")
                ctx.register(nm, k - 1)
                res = _semijoin_ship(ctx, rnd, ctx.fresh_name(tag + "kw"),
                                     keys, base.relation, rels[base.relation],
                                     keypos, P1, fresh,
                                     tag + "s%s_%s_%s" % (xi, a.relation, h))
                results.append((nm, res))
            inter = _intersect_ship(ctx, rnd + 1, results, P1, fresh,
                                    tag + "i%s_%s" % (xi, h))
            pv, prows = _plug(base.vars, inter, {xi: h})
            out |= _reorder(pv, prows, q.variables)
            rounds = max(rounds, 2)
    return out, rounds


# -- clique queries --------------------------------------------------------

def _clique(ctx, rnd, var_list, atoms, rels, P, fresh, tag):
    """Clique join; atoms are binary, one per variable pair (two parallel
    atoms allowed only at k == 2).  Returns (vars, rows, rounds)."""
    k = len(var_list)
    if k == 2:
        if len(atoms) == 1:
            a = atoms[0]
            rows = set(rels[a.relation])
            return tuple(var_list), _reorder(a.vars, rows, tuple(var_list)), 0
        a, b = atoms
        rows_b = _reorder(b.vars, set(rels[b.relation]), a.vars)
        inter = _intersect_ship(ctx, rnd, [(a.relation, set(rels[a.relation])),
                                           (b.relation, rows_b)],
                                P, fresh, tag + "i")
        return tuple(var_list), _reorder(a.vars, inter, tuple(var_list)), 1

    q = Query("sub", tuple(var_list), tuple(atoms))
    m = max(max(len(rels[a.relation]) for a in atoms), 1)
    heavy = _heavy_at(atoms, rels, var_list,
                      lambda f, mj: _gt_root(f, m, P, 1, k))
    out = set()
    rounds = 0

    shares = _round_shares(q, {v: Fraction(1, k) for v in var_list}, P)
    ncells = 1
    for s in shares.values():
        ncells *= s
    cells = [fresh() for _ in range(ncells)]

    def is_light(a, t):
        return all(val not in heavy[v] for v, val in zip(a.vars, t))

    _hc_ship(ctx, rnd, q, rels, shares, cells, tag + "l", keep=is_light)
    filtered = {a.relation: [t for t in rels[a.relation] if is_light(a, t)]
                for a in atoms}
    out |= _out_join(atoms, filtered, tuple(var_list))
    rounds = max(rounds, 1)

    def atom_for(u, v):
        for a in atoms:
            if set(a.vars) == {u, v}:
                return a
        raise QueryError("missing clique atom for %s,%s" % (u, v))

    P1 = max(1, pow_floor(P, Fraction(k - 1, k)))
    for xt in var_list:
        others = [v for v in var_list if v != xt]
        for h in sorted(heavy[xt]):
            replaced = {}
            for idx, y in enumerate(others):
                src = atom_for(xt, y)
                pos = src.vars.index(xt)
                keys = {(t[1 - pos],) for t in rels[src.relation] if t[pos] == h}
                z = others[(idx + 1) % len(others)]
                target = atom_for(y, z)
                kp = (target.vars.index(y),)
                nm = ctx.fresh_name(tag + "q")
                ctx.register(nm, 2)
                res = _semijoin_ship(ctx, rnd, ctx.fresh_name(tag + "kq"),
                                     keys, target.relation,
                                     rels[target.relation], kp, P1, fresh,
                                     tag + "s%s_%s_%s" % (xt, y, h))
                replaced.setdefault(target.relation, []).append((nm, res))
            sub_atoms = []
            sub_rels = dict(rels)
            for a in atoms:
                if xt in a.vars:
                    continue
                if a.relation in replaced:
                    for nm, res in replaced[a.relation]:
                        sub_atoms.append(Atom(nm, a.vars))
                        sub_rels[nm] = res
                else:
                    sub_atoms.append(a)
            cv, crows, cr = _clique(ctx, rnd + 1, others, sub_atoms, sub_rels,
                                    P1, fresh, tag + "h%s_%s" % (xt, h))
            pv, prows = _plug(cv, crows, {xt: h})
            out |= _reorder(pv, prows, tuple(var_list))
            rounds = max(rounds, 1 + cr)
    return tuple(var_list), out, rounds


# -- covering-atom queries -------------------------------------------------

def _covering(ctx, rnd, q, rels, P, fresh, tag):
    cover = next(a for a in q.atoms if set(a.vars) == set(q.variables))
    others = [a for a in q.atoms if a is not cover]
    if not others:
        return _reorder(cover.vars, set(rels[cover.relation]), q.variables), 0
    results = []
    for a in others:
        keypos = tuple(sorted(cover.vars.index(v) for v in a.vars))
        keys = _reorder(a.vars, set(rels[a.relation]),
                        tuple(cover.vars[i] for i in keypos))
        nm = ctx.fresh_name(tag + "c")
        ctx.register(nm, len(cover.vars))
        res = _semijoin_ship(ctx, rnd, ctx.fresh_name(tag + "kc"), keys,
                             cover.relation, rels[cover.relation], keypos,
                             P, fresh, tag + "s" + a.relation)
        results.append((nm, res))
    if len(results) == 1:
        inter = results[0][1]
        rounds = 1
    else:
        inter = _intersect_ship(ctx, rnd + 1, results, P, fresh, tag + "i")
        rounds = 2
    return _reorder(cover.vars, inter, q.variables), rounds


# -- shape detection -------------------------------------------------------

def _oriented_copy(db, a: Atom, flip: bool):
    if not flip:
        return a, list(db.relations[a.relation].tuples)
    return (Atom(a.relation, (a.vars[1], a.vars[0])),
            [(t[1], t[0]) for t in db.relations[a.relation].tuples])


def as_line(db):
    """Orient the atoms of a path-shaped query into a left-to-right chain;
    returns (atoms, rels) or None."""
    q = db.query
    if any(a.arity != 2 for a in q.atoms) or q.num_atoms != q.k - 1:
        return None
    degree = Counter(v for a in q.atoms for v in a.vars)
    ends = [v for v in q.variables if degree[v] == 1]
    if len(ends) != 2 or any(degree[v] not in (1, 2) for v in q.variables):
        return None
    start = ends[0]
    atoms, rels = [], {}
    rest = list(q.atoms)
    cur = start
    while rest:
        nxt = [a for a in rest if cur in a.vars]
        if len(nxt) != 1:
            return None
        a = nxt[0]
        rest.remove(a)
        oa, ts = _oriented_copy(db, a, a.vars[0] != cur)
        atoms.append(oa)
        rels[a.relation] = ts
        cur = oa.vars[1]
    return atoms, rels


def as_cycle(db):
    """Orient a cycle-shaped query; returns (atoms, rels) or None."""
    q = db.query
    if any(a.arity != 2 for a in q.atoms) or q.num_atoms != q.k or q.k < 3:
        return None
    degree = Counter(v for a in q.atoms for v in a.vars)
    if any(degree[v] != 2 for v in q.variables):
        return None
    start = q.variables[0]
    atoms, rels = [], {}
    rest = list(q.atoms)
    cur = start
    while rest:
        nxt = [a for a in rest if cur in a.vars]
        if not nxt:
            return None
        a = nxt[0]
        rest.remove(a)
        oa, ts = _oriented_copy(db, a, a.vars[0] != cur)
        atoms.append(oa)
        rels[a.relation] = ts
        cur = oa.vars[1]
    if cur != start:
        return None
    return atoms, rels


def is_lw(q: Query) -> bool:
    if q.num_atoms != q.k or q.k < 3:
        return False
    omitted = set()
    for a in q.atoms:
        missing = set(q.variables) - set(a.vars)
        if len(missing) != 1:
            return False
        omitted |= missing
    return len(omitted) == q.k


def is_clique(q: Query) -> bool:
    if q.k < 3 or q.num_atoms != q.k * (q.k - 1) // 2:
        return False
    pairs = {frozenset(a.vars) for a in q.atoms if a.arity == 2}
    return len(pairs) == q.num_atoms


def covering_atom(q: Query):
    for a in q.atoms:
        if set(a.vars) == set(q.variables):
            return a
    return None


# -- public entry points ---------------------------------------------------

@dataclass
class AlgorithmResult:
    name: str
    query: Query
    p: int
    output: set               # rows in query.variables order
    report: LoadReport
    rounds: int               # rounds with any traffic (measured)
    extras: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.output)


_COUNTING_ONLY = False
"""When True, engines are created in counting mode (loads only, no
per-server tuple storage).  Outputs are unaffected: every strategy computes
its result from globally filtered relation contents.  Used for cheap dry
runs on large instances; see `counting_mode`."""


class counting_mode:
    """Context manager that switches new engines to counting mode."""

    def __enter__(self):
        global _COUNTING_ONLY
        self._prev = _COUNTING_ONLY
        _COUNTING_ONLY = True
        return self

    def __exit__(self, *exc):
        global _COUNTING_ONLY
        _COUNTING_ONLY = self._prev
        return False


def _setup(db):
    widths = db.widths_bits()
    eng = Engine(widths, store_tuples=not _COUNTING_ONLY)
    pool = Pool()
    vbits = max(ri.value_bits for ri in db.relations.values())
    ctx = _Ctx(eng, pool, 0, vbits)
    return ctx


def _finish(name, db, p, ctx, output, extras=None):
    ex = {"nominal_p": p, "physical_servers": ctx.pool.count}
    ex.update(extras or {})
    return AlgorithmResult(name, db.query, p, output, ctx.eng.report,
                           ctx.eng.report.rounds, ex)


def _root(ctx):
    return lambda: (ctx.pool.phys(),)


def hc_one_round(db, p: int, seed: int) -> AlgorithmResult:
    """Plain one-round hypercube with size-optimized shares (no skew
    handling)."""
    q = db.query
    ctx = _setup(db)
    ctx.seed = seed
    alloc = share_lp(q, db.sizes_bits(), p)
    shares = alloc.shares
    ncells = 1
    for s in shares.values():
        ncells *= s
    fresh = _root(ctx)
    cells = [fresh() for _ in range(ncells)]
    rels = {r: list(ri.tuples) for r, ri in db.relations.items()}
    _hc_ship(ctx, 0, q, rels, shares, cells, "hc")
    out = _out_join(q.atoms, rels, q.variables)
    return _finish("hc", db, p, ctx, out, {"shares": shares, "lambda": alloc.lam})


def one_round_skew(db, p: int, seed: int) -> AlgorithmResult:
    """One-round hypercube resilient to skew: one share allocation per
    heavy profile, all run in parallel on the same p servers."""
    q = db.query
    ctx = _setup(db)
    ctx.seed = seed
    rels = {r: list(ri.tuples) for r, ri in db.relations.items()}
    out = _one_round_skew_core(ctx, 0, q, rels, p, _root(ctx), "ors")
    return _finish("one_round_skew", db, p, ctx, out)


def join_one_sided_skew(db, p: int, seed: int) -> AlgorithmResult:
    """Binary join resilient to skew on one side.

    The side with the lower maximum key frequency plays the skew-free role;
    heavy key values of the other side get exclusive blocks of servers, the
    rest is a hash join on the shared key.
    """
    q = db.query
    if q.num_atoms != 2:
        raise QueryError("one-sided skew join needs exactly two atoms")
    a, b = q.atoms
    key = [v for v in a.vars if v in b.vars]
    if not key:
        raise QueryError("atoms share no variables")
    ctx = _setup(db)
    ctx.seed = seed
    ta = list(db.relations[a.relation].tuples)
    tb = list(db.relations[b.relation].tuples)
    ka = tuple(a.vars.index(v) for v in key)
    kb = tuple(b.vars.index(v) for v in key)
    fa = Counter(tuple(t[i] for i in ka) for t in ta)
    fb = Counter(tuple(t[i] for i in kb) for t in tb)
    if max(fb.values(), default=0) < max(fa.values(), default=0):
        a, b, ta, tb, ka, kb, fa, fb = b, a, tb, ta, kb, ka, fb, fa
    m = max(len(ta), len(tb), 1)
    heavy = {kv: f for kv, f in fb.items() if f * p > m}
    fresh = _root(ctx)
    block = [fresh() for _ in range(p)]
    h = hash_family(seed, "j1s", "h")
    hpart = hash_family(seed, "j1s", "p")
    hblocks = {}
    for kv in sorted(heavy):
        ph = -(-p * heavy[kv] // m)
        hblocks[kv] = [fresh() for _ in range(ph)]
    for t in ta:
        kv = tuple(t[i] for i in ka)
        if kv in hblocks:
            for g in hblocks[kv]:
                _send_group(ctx.eng, 0, g, a.relation, t)
        else:
            _send_group(ctx.eng, 0, block[h(kv, p) - 1], a.relation, t)
    for t in tb:
        kv = tuple(t[i] for i in kb)
        if kv in hblocks:
            g = hblocks[kv]
            _send_group(ctx.eng, 0, g[hpart(t, len(g)) - 1], b.relation, t)
        else:
            _send_group(ctx.eng, 0, block[h(kv, p) - 1], b.relation, t)
    av, rows = _join_rows(a.vars, set(ta), b.vars, set(tb))
    out = _reorder(av, rows, q.variables)
    return _finish("join_one_sided_skew", db, p, ctx, out,
                   {"heavy_keys": len(heavy),
                    "heavy_servers": sum(len(g) for g in hblocks.values())})


def semi_join(db, p: int, seed: int) -> AlgorithmResult:
    """Semi-join q = S filtered by key set R, in one round.

    Expects two atoms where one atom's variables are a subset of the
    other's.  The key-set side has every key at most once, so it plays the
    skew-free role of the one-sided skew join; heavy keys of the wide side
    still get exclusive server blocks.
    """
    q = db.query
    if q.num_atoms != 2:
        raise QueryError("semi-join needs exactly two atoms")
    a, b = q.atoms
    if not (set(a.vars) <= set(b.vars) or set(b.vars) <= set(a.vars)):
        raise QueryError("semi-join needs one atom's variables to contain "
                         "the other's")
    res = join_one_sided_skew(db, p, seed)
    return AlgorithmResult("semi_join", q, p, res.output, res.report,
                           res.rounds, res.extras)


def line_multiround(db, p: int, seed: int) -> AlgorithmResult:
    shaped = as_line(db)
    if shaped is None:
        raise QueryError("query is not a line")
    atoms, rels = shaped
    ctx = _setup(db)
    ctx.seed = seed
    vs, rows, _ = _line(ctx, 0, atoms, rels, p, _root(ctx), "L")
    return _finish("line", db, p, ctx, _reorder(vs, rows, db.query.variables))


def cycle_multiround(db, p: int, seed: int) -> AlgorithmResult:
    shaped = as_cycle(db)
    if shaped is None:
        raise QueryError("query is not a cycle")
    atoms, rels = shaped
    vs = tuple(a.vars[0] for a in atoms)
    q = Query("cyc", vs, tuple(atoms))
    ctx = _setup(db)
    ctx.seed = seed
    if len(atoms) % 2 == 1:
        out, _ = _cycle_odd(ctx, 0, q, atoms, rels, p, _root(ctx), "C")
    else:
        out, _ = _cycle_even(ctx, 0, q, atoms, rels, p, _root(ctx), "C")
    return _finish("cycle", db, p, ctx, _reorder(vs, out, db.query.variables))


def triangle_2round(db, p: int, seed: int) -> AlgorithmResult:
    if db.query.k != 3 or db.query.num_atoms != 3:
        raise QueryError("not a triangle query")
    res = cycle_multiround(db, p, seed)
    return AlgorithmResult("triangle", db.query, p, res.output, res.report,
                           res.rounds, res.extras)


def lw_multiround(db, p: int, seed: int) -> AlgorithmResult:
    q = db.query
    if not is_lw(q):
        raise QueryError("query is not a Loomis-Whitney join")
    ctx = _setup(db)
    ctx.seed = seed
    rels = {r: list(ri.tuples) for r, ri in db.relations.items()}
    out, _ = _lw(ctx, 0, q, rels, p, _root(ctx), "W")
    return _finish("lw", db, p, ctx, out)


def clique_multiround(db, p: int, seed: int) -> AlgorithmResult:
    q = db.query
    if not is_clique(q):
        raise QueryError("query is not a clique")
    ctx = _setup(db)
    ctx.seed = seed
    rels = {r: list(ri.tuples) for r, ri in db.relations.items()}
    vs, rows, _ = _clique(ctx, 0, list(q.variables), list(q.atoms), rels,
                          p, _root(ctx), "K")
    return _finish("clique", db, p, ctx, _reorder(vs, rows, q.variables))


def covering_atom_2round(db, p: int, seed: int) -> AlgorithmResult:
    q = db.query
    if covering_atom(q) is None:
        raise QueryError("no atom covers all variables")
    ctx = _setup(db)
    ctx.seed = seed
    rels = {r: list(ri.tuples) for r, ri in db.relations.items()}
    out, _ = _covering(ctx, 0, q, rels, p, _root(ctx), "V")
    return _finish("covering", db, p, ctx, out)


ALGORITHMS = {
    "hc": hc_one_round,
    "one_round_skew": one_round_skew,
    "join_one_sided_skew": join_one_sided_skew,
    "semi_join": semi_join,
    "line": line_multiround,
    "cycle": cycle_multiround,
    "triangle": triangle_2round,
    "lw": lw_multiround,
    "clique": clique_multiround,
    "covering": covering_atom_2round,
}


def pick_algorithm(q: Query) -> str:
    """Choose the most specific strategy for the query's shape."""
    if covering_atom(q) is not None and q.num_atoms > 1:
        return "covering"
    if is_clique(q):
        return "clique"
    if is_lw(q):
        return "lw"
    degree = Counter(v for a in q.atoms for v in a.vars)
    if q.num_atoms == q.k and all(a.arity == 2 for a in q.atoms) \
            and all(degree[v] == 2 for v in q.variables):
        return "cycle"
    if q.num_atoms == q.k - 1 and all(a.arity == 2 for a in q.atoms):
        ends = [v for v in q.variables if degree[v] == 1]
        if len(ends) == 2:
            return "line"
    return "one_round_skew"


def run_algorithm(name: str, db, p: int, seed: int) -> AlgorithmResult:
    if name == "auto":
        name = pick_algorithm(db.query)
    try:
        fn = ALGORITHMS[name]
    except KeyError:
        raise KeyError("unknown algorithm %r (one of %s)"
                       % (name, "/".join(sorted(ALGORITHMS)))) from None
    return fn(db, p, seed)


def declared_rounds(name: str, q: Query) -> int:
    """Upper bound on the number of communication rounds each strategy
    uses for the given query shape."""
    k = q.k
    if name in ("hc", "one_round_skew", "join_one_sided_skew", "semi_join"):
        return 1
    if name == "line":
        return max(1, (k - 1) // 2)      # k-1 atoms on k variables
    if name in ("cycle", "triangle"):
        return (q.num_atoms + 1) // 2
    if name == "lw":
        return 2
    if name == "clique":
        return k - 1
    if name == "covering":
        return 0 if q.num_atoms == 1 else (1 if q.num_atoms == 2 else 2)
    raise KeyError(name)
