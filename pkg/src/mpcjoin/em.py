"""Block-I/O simulation of any tuple-routed parallel strategy.

A run on p_o simulated servers is replayed on a single machine with W words
of internal memory and block size B (one word holds one tuple).  Per round
the machine (1) partitions the pending deliveries into one bucket per
server, (2) loads each server's accumulated state and redoes its local
computation, and (3) writes the state plus the next round's messages back
out; the final round emits the output instead of writing.  Every phase is
counted in whole blocks.

The server count p_o is the smallest power of two whose measured per-round
load fits the memory budget: r * L(p_o) <= W, with r and L taken from cheap
counting-mode dry runs of the same strategy on the same instance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .algorithms import counting_mode, run_algorithm
from .sim import LoadReport


class MemoryOverflow(RuntimeError):
    """A simulated server accumulated more than W words of state."""


@dataclass
class EMConfig:
    W: int                   # internal memory, in words (= tuples)
    B: int                   # block size, in words

    def __post_init__(self):
        if not (1 <= self.B <= self.W):
            raise ValueError("need 1 <= B <= W, got B=%d W=%d" % (self.B, self.W))


@dataclass
class IOReport:
    io_blocks: int           # total block transfers, both directions
    phases: dict             # {"init": .., "partition": .., "load": .., "write": ..}
    p_o: int                 # chosen server count
    r: int                   # communication rounds replayed
    max_resident: int        # peak words held by any simulated server
    warnings: list = field(default_factory=list)

    def write_csv(self, path: str) -> None:
        import csv
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["phase", "blocks"])
            for name in ("init", "partition", "load", "write"):
                w.writerow([name, self.phases.get(name, 0)])
            w.writerow(["total", self.io_blocks])


def _blocks(words: int, B: int) -> int:
    return -(-words // B)


def choose_po(measure, W: int, p_cap: int = 1 << 24) -> int:
    """Smallest power of two p with r(p) * L(p) <= W.

    `measure(p)` dry-runs the strategy at server count p and returns
    (rounds, max per-round per-server tuple load).  The predicate is
    treated as monotone in p (more servers, less load) and binary-searched
    over exponents.
    """
    def fits(p):
        r, load = measure(p)
        return max(1, r) * load <= W

    if fits(1):
        return 1
    lo, hi = 0, 1
    while not fits(1 << hi):
        lo = hi
        hi *= 2
        if (1 << hi) > p_cap:
            raise MemoryOverflow(
                "no server count up to %d fits the memory budget W=%d"
                % (p_cap, W))
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(1 << mid):
            hi = mid
        else:
            lo = mid
    return 1 << hi


def replay_io(report: LoadReport, input_tuples: int, cfg: EMConfig,
              p_o: int) -> IOReport:
    """Count the block I/Os of executing the reported run on one machine."""
    W, B = cfg.W, cfg.B
    warnings = []
    if p_o > W:
        warnings.append("p_o=%d exceeds W=%d; bucket bookkeeping alone "
                        "overflows the stated memory budget" % (p_o, W))
    if p_o * B > W:
        warnings.append("partition fan-out p_o*B=%d exceeds W=%d; counted "
                        "as if one partial block per bucket still fits"
                        % (p_o * B, W))

    rounds = report.rounds
    phases = {"init": 0, "partition": 0, "load": 0, "write": 0}
    if p_o == 1 or rounds == 0:
        # Everything fits on the lone server: a single input scan.
        phases["init"] = _blocks(input_tuples, B)
        resident = input_tuples
        if resident > W:
            raise MemoryOverflow("p_o=1 run holds %d words > W=%d"
                                 % (resident, W))
        total = sum(phases.values())
        return IOReport(total, phases, p_o, max(rounds, 1), resident, warnings)

    # Input scan; round-1 routing happens inline during this single pass,
    # so the tagged stream is never written out and re-read.
    vol = [report.round_total_tuples(r) for r in range(rounds)]
    phases["init"] = _blocks(input_tuples, B)

    state = {}               # server -> words accumulated so far
    max_resident = 0
    for r in range(rounds):
        incoming = report.tuples[r]
        # (1) partition: scan the pending message stream (round 1 reuses
        # the init scan), appending to one open block per destination
        # bucket.
        if r > 0:
            phases["partition"] += _blocks(vol[r], B)
        phases["partition"] += sum(_blocks(v, B) for v in incoming.values())
        # (2) load: bring in each active server's full accumulated state.
        for s, v in incoming.items():
            state[s] = state.get(s, 0) + v
        for s in sorted(state):
            if state[s] > W:
                raise MemoryOverflow(
                    "server %d holds %d words > W=%d in round %d"
                    % (s, state[s], W, r + 1))
            max_resident = max(max_resident, state[s])
            phases["load"] += _blocks(state[s], B)
        # (3) write: carry the state plus next round's messages back out;
        # the final round emits its output instead.
        if r + 1 < rounds:
            phases["write"] += sum(_blocks(v, B) for v in state.values())
            phases["write"] += _blocks(vol[r + 1], B)
    total = sum(phases.values())
    return IOReport(total, phases, p_o, rounds, max_resident, warnings)


def simulate_em(db, W: int, B: int, alg: str = "auto", seed: int = 0,
                p_cap: int = 1 << 24, compute_output: bool = True,
                cache: dict = None):
    """Run `alg` on `db` under the W/B machine; returns (output, IOReport).

    The server count is chosen by `choose_po` from counting-mode dry runs
    whose block transfers are then counted.  With ``compute_output=False``
    the result set is not materialized (the run is replayed for its I/O
    cost only) and None is returned in its place.  A `cache` dict may be
    shared across calls on the same (db, alg, seed) to reuse dry runs.
    """
    cfg = EMConfig(W, B)
    if cache is None:
        cache = {}

    def measure(p):
        if p not in cache:
            with counting_mode():
                cache[p] = run_algorithm(alg, db, p, seed)
        res = cache[p]
        return res.rounds, res.report.max_tuples()

    p_o = choose_po(measure, W, p_cap)
    measure(p_o)
    res = cache[p_o]
    io = replay_io(res.report, db.total_tuples(), cfg, p_o)
    if not compute_output:
        return None, io
    return run_algorithm(alg, db, p_o, seed).output, io
