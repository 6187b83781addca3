"""Hypergraph LP quantities: packing/cover/quasi-packing numbers, share
allocations, and the one-round load-bound formulas.

Everything is exact: weights and exponents are Fractions produced by the
rational simplex in :mod:`mpcjoin.lp`.  Relation sizes enter the load
formulas through their base-p logarithm; sizes that are exact rational
powers of p keep the whole computation rational, anything else is
approximated by a controlled rational (denominator <= 10^6).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .lp import OPTIMAL, LPError, lp_solve_exact
from .query import Query, residual_query

LOG_APPROX_DENOM = 10 ** 6


def log_base_p(M: int, p: int) -> Fraction:
    """log_p(M) as a Fraction; exact when M is a rational power of p."""
    if M < 1 or p < 2:
        raise ValueError("need M >= 1 and p >= 2")
    if M == 1:
        return Fraction(0)
    approx = math.log(M) / math.log(p)
    for b in range(1, 65):
        a = round(approx * b)
        if a >= 0 and p ** a == M ** b:
            return Fraction(a, b)
    return Fraction(approx).limit_denominator(LOG_APPROX_DENOM)


def iroot(n: int, k: int) -> int:
    """floor(n ** (1/k)) for non-negative integer n."""
    if n < 0:
        raise ValueError("negative radicand")
    if n == 0 or k == 1:
        return n
    # integer Newton iteration, safe for arbitrarily large n
    r = 1 << -(-n.bit_length() // k)
    while True:
        nxt = ((k - 1) * r + n // r ** (k - 1)) // k
        if nxt >= r:
            break
        r = nxt
    while r > 0 and r ** k > n:
        r -= 1
    while (r + 1) ** k <= n:
        r += 1
    return r


def pow_floor(p: int, e: Fraction) -> int:
    """floor(p ** e) for a non-negative rational exponent.

    Exact for small denominators; falls back to floats for the rational
    log approximations, whose denominators make integer powers infeasible.
    """
    if e < 0:
        raise ValueError("negative exponent")
    if e.denominator <= 64 and e.numerator <= 4096:
        return iroot(p ** e.numerator, e.denominator)
    return int(math.exp(float(e) * math.log(p)) * (1 + 1e-12))


@dataclass
class FractionalWeighting:
    """Per-atom rational weights: a packing, cover, or quasi-packing."""
    weights: dict                      # relation name -> Fraction
    kind: str                          # "packing" | "cover" | "quasi-packing"
    residual_witness: Optional[frozenset] = None   # X for quasi-packings

    def total(self) -> Fraction:
        return sum(self.weights.values(), Fraction(0))

    def check(self, q: Query) -> None:
        """Re-verify the defining constraint system exactly."""
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("negative weight")
        base = q
        if self.kind == "quasi-packing":
            x = self.residual_witness or frozenset()
            for a in q.atoms:
                if set(a.vars) <= x and self.weights.get(a.relation, Fraction(0)) != 0:
                    raise ValueError("X-internal atom %s has nonzero weight" % a.relation)
            base = residual_query(q, x) if x else q
            if base is None:
                raise ValueError("empty residual as witness")
        for v in base.variables:
            s = sum((self.weights.get(a.relation, Fraction(0))
                     for a in base.atoms_with(v)), Fraction(0))
            if self.kind == "cover":
                if s < 1:
                    raise ValueError("variable %s covered by %s < 1" % (v, s))
            else:
                if s > 1:
                    raise ValueError("variable %s packed with %s > 1" % (v, s))


def tau_star(q: Query):
    """Fractional edge packing number with a witness packing."""
    rels = [a.relation for a in q.atoms]
    A = [[1 if v in a.vars else 0 for a in q.atoms] for v in q.variables]
    res = lp_solve_exact([1] * len(rels), A, ["<="] * len(A), [1] * len(A), maximize=True)
    if res.status != OPTIMAL:
        raise LPError("packing LP not optimal: %s" % res.status)
    w = FractionalWeighting(dict(zip(rels, res.x)), "packing")
    return res.value, w


def rho_star(q: Query):
    """Fractional edge cover number with a witness cover."""
    rels = [a.relation for a in q.atoms]
    A = [[1 if v in a.vars else 0 for a in q.atoms] for v in q.variables]
    res = lp_solve_exact([1] * len(rels), A, [">="] * len(A), [1] * len(A), maximize=False)
    if res.status != OPTIMAL:
        raise LPError("cover LP not optimal: %s" % res.status)
    w = FractionalWeighting(dict(zip(rels, res.x)), "cover")
    return res.value, w


def _subsets(vs):
    n = len(vs)
    for mask in range(1 << n):
        yield frozenset(vs[i] for i in range(n) if mask >> i & 1)


def psi_star(q: Query):
    """Edge quasi-packing number by residual enumeration.

    Maximizes tau*(q_X) over X strictly inside vars(q); atoms swallowed by X
    carry weight 0 in the returned witness.  The first maximizing X in
    bitmask order over the canonical variable order is returned, so the
    result is deterministic.
    """
    best = None
    best_x = None
    best_w = None
    cache = {}
    for x in _subsets(q.variables):
        if len(x) == q.k:
            continue
        qx = residual_query(q, x) if x else q
        sig = frozenset((a.relation, a.vars) for a in qx.atoms)
        if sig in cache:
            val, w = cache[sig]
        else:
            val, w = tau_star(qx)
            cache[sig] = (val, w)
        if best is None or val > best:
            best = val
            best_x = x
            weights = dict(w.weights)
            for a in q.atoms:
                weights.setdefault(a.relation, Fraction(0))
            best_w = FractionalWeighting(weights, "quasi-packing", best_x)
    return best, best_w


def psi_star_recursive(q: Query, _memo=None) -> Fraction:
    """psi* via the residual recursion psi*(q) = max(tau*(q), max_x psi*(q_x))."""
    if _memo is None:
        _memo = {}
    sig = frozenset((a.relation, a.vars) for a in q.atoms)
    if sig in _memo:
        return _memo[sig]
    best, _ = tau_star(q)
    for v in q.variables:
        qx = residual_query(q, {v})
        if qx is not None:
            best = max(best, psi_star_recursive(qx, _memo))
    _memo[sig] = best
    return best


@dataclass
class ShareAllocation:
    """HyperCube share exponents and their integer realization."""
    exponents: dict          # variable -> Fraction, sum <= 1
    shares: dict             # variable -> int, product <= p
    lam: Fraction            # optimal LP objective (load is p**lam)
    p: int
    heavy_set: frozenset = field(default_factory=frozenset)

    def grid_size(self) -> int:
        g = 1
        for s in self.shares.values():
            g *= s
        return g


def _round_shares(q: Query, exponents: dict, p: int) -> dict:
    """floor(p**e_i) per variable, then greedily hand the leftover factor to
    the variables with the largest fractional deficit while keeping the
    product <= p."""
    shares = {}
    for v in q.variables:
        e = exponents[v]
        shares[v] = max(1, pow_floor(p, e)) if e > 0 else 1
    while True:
        prod = 1
        for s in shares.values():
            prod *= s
        cand = []
        for v in q.variables:
            e = exponents[v]
            if e <= 0:
                continue
            s = shares[v]
            if prod // s * (s + 1) > p:
                continue
            # deficit: how far below the real-valued share p**e we sit
            deficit = float(e) * math.log(p) - math.log(s)
            if deficit > 1e-12:
                cand.append((deficit, v))
        if not cand:
            return shares
        cand.sort(key=lambda t: (-t[0], q.variables.index(t[1])))
        shares[cand[0][1]] += 1


def share_lp(q: Query, M: dict, p: int, heavy: frozenset = frozenset()) -> ShareAllocation:
    """Solve the skew-aware share LP for heavy-variable set X = heavy.

    Variables in X get exponent 0 and share 1; the remaining exponents
    minimize the worst per-atom exponent gap lambda, where relation sizes
    enter as mu_j = log_p(M_j).  Exponents are then rounded to integer
    shares with product <= p.
    """
    heavy = frozenset(heavy)
    unknown = heavy - set(q.variables)
    if unknown:
        raise ValueError("unknown heavy variables: %s" % sorted(unknown))
    zero = {v: Fraction(0) for v in q.variables}
    if p == 1:
        return ShareAllocation(zero, {v: 1 for v in q.variables}, Fraction(0), p, heavy)
    qx = residual_query(q, heavy) if heavy else q
    if qx is None:
        return ShareAllocation(zero, {v: 1 for v in q.variables}, Fraction(0), p, heavy)

    free = [v for v in q.variables if v not in heavy]
    mu = {a.relation: log_base_p(M[a.relation], p) for a in qx.atoms}
    # columns: e_i for free vars, then lambda; minimize lambda
    n = len(free) + 1
    c = [0] * len(free) + [1]
    A = [[1] * len(free) + [0]]
    rel = ["<="]
    b = [1]
    for a in qx.atoms:
        row = [1 if v in a.vars else 0 for v in free] + [1]
        A.append(row)
        rel.append(">=")
        b.append(mu[a.relation])
    res = lp_solve_exact(c, A, rel, b, maximize=False)
    if res.status != OPTIMAL:
        raise LPError("share LP not optimal: %s" % res.status)
    exponents = dict(zero)
    for i, v in enumerate(free):
        exponents[v] = res.x[i]
    lam = res.x[len(free)]
    shares = _round_shares(q, exponents, p)
    return ShareAllocation(exponents, shares, lam, p, heavy)


@dataclass
class LoadBound:
    """A one-round load bound p**exponent for a given size vector."""
    exponent: Fraction       # log_p of the bound over the bit-size map
    bits: float
    tuples: Optional[float]
    witness: FractionalWeighting
    heavy_set: Optional[frozenset] = None


def _packing_exponent(q: Query, sizes: dict, p: int):
    """max over packings u of log_p L(u, sizes, p), with the maximizing u.

    Linear-fractional objective (sum_j u_j mu_j - 1)/(sum_j u_j), solved via
    the Charnes-Cooper substitution y = u/sum(u), t = 1/sum(u).
    """
    rels = [a.relation for a in q.atoms]
    mu = [log_base_p(sizes[r], p) for r in rels]
    n = len(rels)
    # columns: y_1..y_n, t
    c = mu + [Fraction(-1)]
    A = []
    rel = []
    b = []
    for v in q.variables:
        A.append([1 if v in a.vars else 0 for a in q.atoms] + [-1])
        rel.append("<=")
        b.append(0)
    A.append([1] * n + [0])
    rel.append("==")
    b.append(1)
    res = lp_solve_exact(c, A, rel, b, maximize=True)
    if res.status != OPTIMAL:
        raise LPError("load LP not optimal: %s" % res.status)
    t = res.x[n]
    if t <= 0:
        raise LPError("degenerate load LP: t = 0")
    u = {r: res.x[i] / t for i, r in enumerate(rels)}
    return res.value, FractionalWeighting(u, "packing")


def load_bound_packing(q: Query, M: dict, p: int, widths: Optional[dict] = None) -> LoadBound:
    """L^(q)(M, p): the worst load over fractional edge packings."""
    if p == 1:
        # Only one server: every packing gives the geometric mean of sizes,
        # maximized by concentrating weight on the largest relation.
        big = max(q.atoms, key=lambda a: (M[a.relation], a.relation))
        w = FractionalWeighting({a.relation: Fraction(1 if a is big else 0)
                                 for a in q.atoms}, "packing")
        tup = None
        if widths:
            tup = max(M[a.relation] / widths[a.relation] for a in q.atoms)
        return LoadBound(Fraction(0), float(max(M.values())), tup, w)
    exp, w = _packing_exponent(q, M, p)
    tup = None
    if widths:
        m = {a.relation: max(1, M[a.relation] // widths[a.relation]) for a in q.atoms}
        texp, _ = _packing_exponent(q, m, p)
        tup = float(p) ** float(texp)
    return LoadBound(exp, float(p) ** float(exp), tup, w)


def load_bound_worstcase(q: Query, M: dict, p: int, widths: Optional[dict] = None) -> LoadBound:
    """Worst-case one-round bound: max over heavy sets X of L^(q_X)(M, p)."""
    best = None
    for x in _subsets(q.variables):
        qx = residual_query(q, x) if x else q
        if qx is None:
            continue
        lb = load_bound_packing(qx, M, p, widths)
        if best is None or lb.exponent > best.exponent:
            lb.heavy_set = x
            lb.witness.kind = "quasi-packing"
            lb.witness.residual_witness = x
            for a in q.atoms:
                lb.witness.weights.setdefault(a.relation, Fraction(0))
            best = lb
    return best
