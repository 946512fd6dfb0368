"""Compiled trial kernels shared by the matrix engine (k = 2) and the star engine.

A star instance is k binary relations R_i(A_i, B). The matrix query
R_1(A, B), R_2(B, C) is stored the same way with R_2 oriented as (C, B).

Views restrict the join to B-values inside (``VIEW_HEAVY``) or outside
(``VIEW_LIGHT``) a heavy set. Inside the acceptance step a neighbour that falls
in the wrong part counts as a failure and ``|S|`` keeps its full size, which
yields acceptance probability exactly 1/deg_view without knowing deg_view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .access import (
    _EMPTY,
    _GOLDEN,
    build_hash_table,
    randbelow,
    table_contains,
)
from .model import Relation

VIEW_FULL = 0
VIEW_HEAVY = 1
VIEW_LIGHT = 2

STRATEGY_H = 0
STRATEGY_L = 1

# trial status codes
JOIN_FAIL = 0
ACCEPT_FAIL = 1
SUCCESS = 2


class StarArrays(NamedTuple):
    k: int
    dom: int
    rows_a: np.ndarray
    rows_b: np.ndarray
    row_start: np.ndarray
    off_a: np.ndarray
    nbr_a: np.ndarray
    off_b: np.ndarray
    nbr_b: np.ndarray
    table: np.ndarray


@dataclass
class StarCore:
    """Stacked CSR indices of R_1..R_k plus per-B statistics."""

    arrays: StarArrays
    sizes: tuple[int, ...]
    b_values: np.ndarray
    b_degrees: np.ndarray  # (k, len(b_values)): |R_i ⋉ b|
    max_deg_a: int
    _work: tuple | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.arrays.k

    @property
    def n_total(self) -> int:
        return sum(self.sizes)

    def scratch(self) -> tuple[np.ndarray, np.ndarray]:
        size = max(self.max_deg_a, 1)
        return np.full(size, -1, dtype=np.int64), np.zeros(size, dtype=np.int64)

    def work(self) -> tuple[np.ndarray, np.ndarray]:
        """Shared scratch buffers; kernels leave them reset, so reuse is safe."""
        if self._work is None:
            self._work = self.scratch()
        return self._work

    def deg_a(self, i: int, a: int) -> int:
        if not 0 <= a < self.arrays.dom:
            return 0
        off = self.arrays.off_a[i]
        return int(off[a + 1] - off[a])

    def deg_b(self, i: int, b: int) -> int:
        if not 0 <= b < self.arrays.dom:
            return 0
        off = self.arrays.off_b[i]
        return int(off[b + 1] - off[b])

    def contains(self, i: int, a: int, b: int) -> bool:
        d = self.arrays.dom
        if not (0 <= a < d and 0 <= b < d):
            return False
        return bool(table_contains(self.arrays.table, (i * d + a) * d + b))


def build_star_core(relations: Sequence[Relation], dom: int) -> StarCore:
    """``relations[i]`` must have columns ordered (A_i, B)."""
    k = len(relations)
    sizes = tuple(len(r) for r in relations)
    row_start = np.zeros(k + 1, dtype=np.int64)
    np.cumsum(sizes, out=row_start[1:])
    rows_a = np.concatenate([r.rows[:, 0] for r in relations]).astype(np.int64)
    rows_b = np.concatenate([r.rows[:, 1] for r in relations]).astype(np.int64)
    off_a = np.zeros((k, dom + 1), dtype=np.int64)
    off_b = np.zeros((k, dom + 1), dtype=np.int64)
    nbr_a = np.empty(len(rows_a), dtype=np.int64)
    nbr_b = np.empty(len(rows_b), dtype=np.int64)
    max_deg_a = 0
    for i, r in enumerate(relations):
        base = row_start[i]
        a, b = r.rows[:, 0], r.rows[:, 1]
        for col, other, off, nbr in ((a, b, off_a, nbr_a), (b, a, off_b, nbr_b)):
            order = np.argsort(col, kind="stable")
            counts = np.bincount(col, minlength=dom) if len(col) else np.zeros(dom, np.int64)
            off[i, 0] = base
            np.cumsum(counts, out=off[i, 1:])
            off[i, 1:] += base
            nbr[base : base + len(col)] = other[order]
        if len(a):
            max_deg_a = max(max_deg_a, int(np.bincount(a).max()))
    ids = np.arange(k, dtype=np.int64).repeat(sizes)
    keys = (ids * dom + rows_a) * dom + rows_b
    table = build_hash_table(keys)
    arrays = StarArrays(k, dom, rows_a, rows_b, row_start, off_a, nbr_a, off_b, nbr_b, table)
    b_values = np.unique(rows_b)
    b_degrees = np.stack([off_b[i, b_values + 1] - off_b[i, b_values] for i in range(k)]) \
        if k else np.zeros((0, 0), np.int64)
    return StarCore(arrays, sizes, b_values, b_degrees, max_deg_a)


# ------------------------------------------------------------------ kernels
# Every trial runs inside the single loop kernel ``_run``. Splitting it into
# helpers that take arrays costs refcount traffic on each call, roughly doubling
# the per-trial time, so the body is written out in one piece.

MODE_COUNT = 0      # n trials, count successes
MODE_UNTIL = 1      # trials until a success or the ops budget is spent
MODE_OVERLAP = 2    # n light successes, count those a heavy b also produces
MODE_ACCEPT = 3     # acceptance step only, for the join tuple already in avec
MODE_JOIN = 4       # join phase only: status SUCCESS iff a full-join tuple came out


@njit(cache=True)
def _run(sa, ws, dcap, strategy, view, heavy, tie_last, mode, n, budget, heavy_list,
         given_b, rng, scratch, touched, avec, info):
    k = sa.k
    d = sa.dom
    rows_a = sa.rows_a
    rows_b = sa.rows_b
    r0 = sa.row_start[0]
    n0 = sa.row_start[1] - r0
    off_a = sa.off_a
    nbr_a = sa.nbr_a
    off_b = sa.off_b
    nbr_b = sa.nbr_b
    table = sa.table
    tmask = np.uint64(table.shape[0] - 1)
    wkeys = ws.keys
    wcum = ws.cum
    wthr = ws.thr
    walias = ws.alias
    wtotal = ws.total
    wuse = ws.use_alias
    nkeys = wkeys.shape[0]
    hits = 0
    ops = 0
    trials = 0
    last_status = JOIN_FAIL
    last_b = -1
    done = False
    while not done:
        # ---- join phase: b = -1 means the trial already failed
        if mode == MODE_ACCEPT:
            b = given_b
        elif strategy == STRATEGY_H:
            if wuse:
                wi = randbelow(rng, nkeys)
                if randbelow(rng, wtotal) >= wthr[wi]:
                    wi = walias[wi]
            else:
                u = randbelow(rng, wtotal)
                wi = 0
                while wcum[wi] <= u:
                    wi += 1
            b = wkeys[wi]
            for i in range(k):
                lo = off_b[i, b]
                avec[i] = nbr_b[lo + randbelow(rng, off_b[i, b + 1] - lo)]
            ops += 1 + 2 * k
        else:
            r = r0 + randbelow(rng, n0)
            avec[0] = rows_a[r]
            b = rows_b[r]
            ops += 1
            if view == VIEW_HEAVY and heavy[b] == 0:
                b = -1
            elif view == VIEW_LIGHT and heavy[b] != 0:
                b = -1
            else:
                prod = 1
                for i in range(1, k):
                    prod *= off_b[i, b + 1] - off_b[i, b]
                ops += k - 1
                if prod == 0:
                    b = -1
                else:
                    for i in range(1, k):
                        lo = off_b[i, b]
                        avec[i] = nbr_b[lo + randbelow(rng, off_b[i, b + 1] - lo)]
                    ops += k - 1
                    if randbelow(rng, dcap) >= prod:
                        b = -1
        status = JOIN_FAIL
        if mode == MODE_JOIN and b >= 0:
            status = SUCCESS
            b = -b - 1  # skip acceptance; restored below
        # ---- acceptance: probability exactly 1/deg(avec) inside the view
        if b >= 0:
            j = 0
            best = off_a[0, avec[0] + 1] - off_a[0, avec[0]]
            for i in range(1, k):
                di = off_a[i, avec[i] + 1] - off_a[i, avec[i]]
                if di < best or (tie_last and di == best):
                    best = di
                    j = i
            ops += k
            start = off_a[j, avec[j]]
            s = best
            fails = 0
            n_touched = 0
            drawn = 0
            while drawn < s:
                # draw without replacement via a sparse Fisher-Yates swap map
                pj = drawn + randbelow(rng, s - drawn)
                vj = scratch[pj]
                if vj < 0:
                    vj = pj
                    touched[n_touched] = pj
                    n_touched += 1
                vi = scratch[drawn]
                if vi < 0:
                    vi = drawn
                scratch[pj] = vi
                drawn += 1
                bp = nbr_a[start + vj]
                ops += 1
                if bp == b:
                    continue
                ok = True
                if view == VIEW_HEAVY:
                    ok = heavy[bp] != 0
                elif view == VIEW_LIGHT:
                    ok = heavy[bp] == 0
                i = 0
                while ok and i < k:
                    if i != j:
                        ops += 1
                        key = (i * d + avec[i]) * d + bp
                        h = np.uint64(key) * _GOLDEN
                        h ^= h >> np.uint64(29)
                        slot = np.int64(h & tmask)
                        while table[slot] != key and table[slot] != _EMPTY:
                            slot = np.int64((slot + 1) & tmask)
                        ok = table[slot] == key
                    i += 1
                if ok:
                    break
                fails += 1
            for t in range(n_touched):
                scratch[touched[t]] = -1
            info[0] = fails
            info[1] = s
            info[2] = j
            status = SUCCESS if randbelow(rng, s) < fails + 1 else ACCEPT_FAIL
        if mode == MODE_JOIN and status == SUCCESS:
            b = -b - 1
        trials += 1
        last_status = status
        last_b = b
        # ---- bookkeeping per mode
        if mode == MODE_COUNT:
            if status == SUCCESS:
                hits += 1
            done = trials >= n
        elif mode == MODE_UNTIL:
            if status == SUCCESS:
                hits = 1
            done = hits > 0 or ops >= budget
        elif mode == MODE_OVERLAP:
            if status == SUCCESS:
                for hb in heavy_list:
                    found = True
                    i = 0
                    while found and i < k:
                        ops += 1
                        found = table_contains(table, (i * d + avec[i]) * d + hb)
                        i += 1
                    if found:
                        hits += 1
                        break
                n -= 1
            done = n <= 0
        else:
            done = True
    return hits, ops, trials, last_status, last_b


_NO_LIST = np.zeros(0, dtype=np.int64)


def _buffers(k: int) -> tuple[np.ndarray, np.ndarray]:
    return np.empty(k, dtype=np.int64), np.empty(3, dtype=np.int64)


def star_trial(sa, ws, dcap, strategy, view, heavy, tie_last, rng, scratch, touched, avec, info):
    """One sampling trial. Returns (status, b, ops); ``avec`` holds the join tuple."""
    _, ops, _, st, b = _run(sa, ws, dcap, strategy, view, heavy, tie_last, MODE_COUNT, 1, 0,
                            _NO_LIST, -1, rng, scratch, touched, avec, info)
    return int(st), int(b), int(ops)


def star_join(sa, ws, dcap, strategy, view, heavy, rng, avec):
    """Join phase only. Returns b, or -1 when the L strategy rejects."""
    info = np.empty(3, dtype=np.int64)
    _, _, _, st, b = _run(sa, ws, dcap, strategy, view, heavy, False, MODE_JOIN, 1, 0, _NO_LIST,
                          -1, rng, info, info, avec, info)
    return int(b) if st == SUCCESS else -1


def star_accept(sa, ws, avec, b, view, heavy, tie_last, rng, scratch, touched, info):
    """Acceptance step for the join tuple (avec, b); ``info`` receives (F, |S|, anchor).

    Returns (accepted, ops).
    """
    _, ops, _, st, _ = _run(sa, ws, 1, STRATEGY_H, view, heavy, tie_last, MODE_ACCEPT, 1, 0,
                            _NO_LIST, b, rng, scratch, touched, avec, info)
    return st == SUCCESS, int(ops)


def star_count_trials(sa, ws, dcap, strategy, view, heavy, tie_last, n, rng, scratch, touched):
    """Run n independent trials; returns (successes, ops)."""
    if n <= 0:
        return 0, 0
    avec, info = _buffers(sa.k)
    hits, ops, _, _, _ = _run(sa, ws, dcap, strategy, view, heavy, tie_last, MODE_COUNT, n, 0,
                              _NO_LIST, -1, rng, scratch, touched, avec, info)
    return int(hits), int(ops)


def star_sample_until(sa, ws, dcap, strategy, view, heavy, tie_last, budget, rng,
                      scratch, touched, avec):
    """Trials until one succeeds or ``budget`` ops are spent; returns (found, ops, trials)."""
    info = np.empty(3, dtype=np.int64)
    hits, ops, trials, _, _ = _run(sa, ws, dcap, strategy, view, heavy, tie_last, MODE_UNTIL, 0,
                                   budget, _NO_LIST, -1, rng, scratch, touched, avec, info)
    return bool(hits), int(ops), int(trials)


def star_overlap(sa, ws, dcap, heavy, heavy_list, n_samples, tie_last, rng, scratch, touched):
    """Draw n_samples light results and count those also produced by a heavy b.

    Returns (hits, ops).
    """
    if n_samples <= 0:
        return 0, 0
    avec, info = _buffers(sa.k)
    hits, ops, _, _, _ = _run(sa, ws, dcap, STRATEGY_L, VIEW_LIGHT, heavy, tie_last, MODE_OVERLAP,
                              n_samples, 0, np.asarray(heavy_list, dtype=np.int64), -1, rng,
                              scratch, touched, avec, info)
    return int(hits), int(ops)
