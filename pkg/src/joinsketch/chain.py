"""Counting and near-uniform sampling for k-chain queries.

A k-chain is R_1(A_1, A_2), ..., R_k(A_k, A_{k+1}) projected onto
(A_1, A_{k+1}). Its result size is sum_u deg(u), where deg(u) counts the A_{k+1}
values reachable from u. Each deg(u) is estimated with bottom-K (KMV) summaries
pushed backwards through the chain; the sampler draws u proportionally to an
inflated estimate and corrects by rejection after an exact traversal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .access import OpCounters, lower_median
from .model import Instance, QuerySpec, Relation, ShapeError, ShapeKind, bind_relations, classify_query

_HASH_SCALE = float(1 << 32)
_NO_HASH = np.int64(1 << 40)  # larger than any 32-bit hash


# ----------------------------------------------------------------- hashing


@dataclass(frozen=True)
class HashDraw:
    """h(x) = (((a x + b) mod 2^64) >> 32) / 2^32 with odd a: multiply-add-shift."""

    a: int
    b: int

    def __post_init__(self):
        if self.a % 2 == 0:
            raise ValueError("the multiplier must be odd")

    @classmethod
    def draw(cls, rng: np.random.Generator) -> "HashDraw":
        a = int(rng.integers(0, 1 << 63, dtype=np.uint64)) * 2 + 1
        b = int(rng.integers(0, 1 << 64, dtype=np.uint64))
        return cls(a % (1 << 64), b)

    def raw(self, x: int) -> int:
        return ((self.a * int(x) + self.b) % (1 << 64)) >> 32

    def __call__(self, x: int) -> float:
        return self.raw(x) / _HASH_SCALE

    def raw_many(self, xs: np.ndarray) -> np.ndarray:
        return _hash_many(np.asarray(xs, dtype=np.int64), np.uint64(self.a), np.uint64(self.b))


@njit(cache=True)
def _hash_many(xs, a, b):
    out = np.empty(xs.shape[0], dtype=np.int64)
    for i in range(xs.shape[0]):
        out[i] = np.int64((a * np.uint64(xs[i]) + b) >> np.uint64(32))
    return out


# ------------------------------------------------------------- KMV summary


@dataclass(frozen=True)
class KMVSummary:
    """The K smallest distinct hash values of a set, as reals in [0, 1)."""

    capacity: int
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be at least 1")
        vals = tuple(sorted(set(self.values)))[: self.capacity]
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return len(self.values)


def kmv_singleton(h: HashDraw, v: int, K: int) -> KMVSummary:
    return KMVSummary(K, (h(v),))


def kmv_merge(x: KMVSummary, y: KMVSummary) -> KMVSummary:
    if x.capacity != y.capacity:
        raise ValueError(f"capacity mismatch: {x.capacity} vs {y.capacity}")
    return KMVSummary(x.capacity, x.values + y.values)


def kmv_estimate(s: KMVSummary) -> float:
    """Exact size below capacity, otherwise K divided by the K-th smallest value."""
    if len(s) < s.capacity:
        return float(len(s))
    return s.capacity / s.values[-1]


# ------------------------------------------------------------ chain layout


@dataclass
class ChainInstance:
    """A chain instance with per-attribute local ids and forward CSR per relation.

    ``layers[i]`` holds the sorted value ids of attribute A_{i+1}; relation i maps
    layer i to layer i+1 through ``off[off_start[i]:...]`` and ``nbr``.
    """

    relations: tuple[Relation, ...]
    layers: list[np.ndarray]
    sizes: np.ndarray
    off_start: np.ndarray
    off: np.ndarray
    nbr_start: np.ndarray
    nbr: np.ndarray
    labels: tuple[str, ...] | None = None
    attributes: tuple[str, ...] = ()
    _scratch: tuple = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return len(self.relations)

    @property
    def n_total(self) -> int:
        return sum(len(r) for r in self.relations)

    def local(self, layer: int, value: int) -> int:
        vals = self.layers[layer]
        j = int(np.searchsorted(vals, value))
        if j >= len(vals) or vals[j] != value:
            return -1
        return j

    def scratch(self):
        if self._scratch is None:
            total = int(self.sizes.sum())
            base = np.zeros(len(self.sizes) + 1, dtype=np.int64)
            np.cumsum(self.sizes, out=base[1:])
            width = int(self.sizes.max()) if len(self.sizes) else 1
            self._scratch = (np.zeros(total, dtype=np.int64), base, np.zeros(1, dtype=np.int64),
                             np.empty(width, dtype=np.int64), np.empty(width, dtype=np.int64))
        return self._scratch


def _build_chain(rels: Sequence[Relation], labels, attrs) -> ChainInstance:
    k = len(rels)
    layers = []
    for i in range(k + 1):
        parts = []
        if i < k:
            parts.append(rels[i].rows[:, 0])
        if i > 0:
            parts.append(rels[i - 1].rows[:, 1])
        layers.append(np.unique(np.concatenate(parts)).astype(np.int64))
    sizes = np.array([len(v) for v in layers], dtype=np.int64)
    offs, nbrs = [], []
    for i, r in enumerate(rels):
        xs = np.searchsorted(layers[i], r.rows[:, 0])
        ys = np.searchsorted(layers[i + 1], r.rows[:, 1])
        order = np.argsort(xs, kind="stable")
        off = np.zeros(sizes[i] + 1, dtype=np.int64)
        np.cumsum(np.bincount(xs, minlength=sizes[i]), out=off[1:])
        offs.append(off)
        nbrs.append(ys[order].astype(np.int64))
    off_start = np.zeros(k + 1, dtype=np.int64)
    np.cumsum([len(o) for o in offs], out=off_start[1:])
    nbr_start = np.zeros(k + 1, dtype=np.int64)
    np.cumsum([len(n) for n in nbrs], out=nbr_start[1:])
    return ChainInstance(tuple(rels), layers, sizes, off_start,
                         np.concatenate(offs) if offs else np.zeros(0, np.int64), nbr_start,
                         np.concatenate(nbrs) if nbrs else np.zeros(0, np.int64), labels, attrs)


def prepare_chain(inst: Instance | ChainInstance, spec: QuerySpec | None = None) -> ChainInstance:
    if isinstance(inst, ChainInstance):
        return inst
    if spec is None:
        raise ValueError("a query spec is required")
    shape = classify_query(spec)
    if shape.variant is ShapeKind.MATRIX:
        a, b, c = shape.order
        rels = [inst.relation((a, b)).reordered((a, b)), inst.relation((b, c)).reordered((b, c))]
    elif shape.variant is ShapeKind.CHAIN:
        rels = bind_relations(inst, spec, shape)
    else:
        raise ShapeError(f"query has shape {shape}, not chain")
    attrs = (rels[0].schema[0],) + tuple(r.schema[1] for r in rels)
    return _build_chain(rels, inst.labels, attrs)


def chain_instance(relations: Sequence[Sequence[tuple[int, int]]]) -> ChainInstance:
    """Convenience constructor from k lists of raw (a_i, a_{i+1}) id pairs."""
    names = [f"A{i + 1}" for i in range(len(relations) + 1)]
    rels = [Relation((names[i], names[i + 1]), np.array(r, dtype=np.int64).reshape(-1, 2))
            for i, r in enumerate(relations)]
    return _build_chain(rels, None, tuple(names))


# ------------------------------------------------------------ backward pass


@njit(cache=True)
def _kmv_pass(K, k, sizes, off_start, off, nbr_start, nbr, last_hash):
    """Bottom-K summaries pushed from A_{k+1} back to A_1.

    Returns (sizes of the A_1 summaries, their K-th values, merge steps).
    """
    n_last = sizes[k]
    cur = np.full((max(n_last, 1), K), _NO_HASH, dtype=np.int64)
    cur_n = np.zeros(max(n_last, 1), dtype=np.int64)
    for v in range(n_last):
        cur[v, 0] = last_hash[v]
        cur_n[v] = 1
    tmp = np.empty(K, dtype=np.int64)
    ops = 0
    for i in range(k - 1, -1, -1):
        n_i = sizes[i]
        new = np.full((max(n_i, 1), K), _NO_HASH, dtype=np.int64)
        new_n = np.zeros(max(n_i, 1), dtype=np.int64)
        ob = off_start[i]
        nb = nbr_start[i]
        for x in range(n_i):
            for p in range(off[ob + x], off[ob + x + 1]):
                y = nbr[nb + p]
                # merge two sorted distinct lists, keep the K smallest distinct
                p1 = 0
                p2 = 0
                n1 = new_n[x]
                n2 = cur_n[y]
                t = 0
                while t < K and (p1 < n1 or p2 < n2):
                    if p2 >= n2 or (p1 < n1 and new[x, p1] < cur[y, p2]):
                        val = new[x, p1]
                        p1 += 1
                    elif p1 >= n1 or cur[y, p2] < new[x, p1]:
                        val = cur[y, p2]
                        p2 += 1
                    else:
                        val = new[x, p1]
                        p1 += 1
                        p2 += 1
                    tmp[t] = val
                    t += 1
                ops += p1 + p2 + 1
                for q in range(t):
                    new[x, q] = tmp[q]
                new_n[x] = t
        cur = new
        cur_n = new_n
    n0 = sizes[0]
    counts = np.empty(n0, dtype=np.int64)
    kth = np.empty(n0, dtype=np.int64)
    for u in range(n0):
        counts[u] = cur_n[u]
        kth[u] = cur[u, K - 1] if cur_n[u] == K else -1
    return counts, kth, ops


@dataclass
class DegreeTable:
    """Per-start estimates deg^(u), proxies deg^(u)/(1-eps) and a sampler over them."""

    u_values: np.ndarray
    est: np.ndarray
    proxy: np.ndarray
    W: float
    eps: float
    cum: np.ndarray = field(repr=False)

    def draw(self, rng: np.random.Generator) -> int:
        """Index of u with probability proxy(u)/W (float prefix sums)."""
        if self.W <= 0:
            raise ValueError("degenerate degree table: all estimates are 0")
        j = int(np.searchsorted(self.cum, rng.random() * self.cum[-1], side="right"))
        return min(j, len(self.cum) - 1)

    def estimate(self, u: int) -> float:
        j = int(np.searchsorted(self.u_values, u))
        if j < len(self.u_values) and self.u_values[j] == u:
            return float(self.est[j])
        return 0.0


@dataclass
class ChainStats:
    K: int
    m: int
    merge_ops: int
    tuple_visits: int


def chain_params(n: int, eps: float, delta: float) -> tuple[int, int]:
    """(K, m) = (ceil(8/eps^2), ceil(12 ln(N/delta)))."""
    K = math.ceil(8 / (eps * eps))
    m = max(1, math.ceil(12 * math.log(max(n, 1) / delta)))
    return K, m


def degree_estimates(ci: ChainInstance, eps: float, delta: float, rng: np.random.Generator,
                     counters: OpCounters | None = None) -> tuple[np.ndarray, ChainStats]:
    """Lower median over m repetitions of the KMV estimate of every deg(u)."""
    K, m = chain_params(ci.n_total, eps, delta)
    n0 = int(ci.sizes[0])
    runs = np.zeros((m, n0), dtype=np.float64)
    merge_ops = 0
    for r in range(m):
        h = HashDraw.draw(rng)
        last = h.raw_many(ci.layers[ci.k])
        counts, kth, ops = _kmv_pass(K, ci.k, ci.sizes, ci.off_start, ci.off, ci.nbr_start,
                                     ci.nbr, last)
        merge_ops += int(ops)
        full = counts == K
        runs[r] = counts
        if full.any():
            runs[r, full] = K * _HASH_SCALE / np.maximum(kth[full], 1)
    if m:
        med = np.sort(runs, axis=0)[(m - 1) // 2]
    else:
        med = np.zeros(n0)
    stats = ChainStats(K, m, merge_ops, m * ci.n_total)
    if counters is not None:
        counters.add(ops=merge_ops, kind="kmv_pass")
    return med, stats


def build_degree_table(ci: ChainInstance, est: np.ndarray, eps: float) -> DegreeTable:
    proxy = est / (1 - eps)
    cum = np.cumsum(proxy)
    W = float(cum[-1]) if len(cum) else 0.0
    return DegreeTable(ci.layers[0], est, proxy, W, eps, cum)


def approx_count_chain(ci: ChainInstance, eps: float, delta: float, rng: np.random.Generator,
                       counters: OpCounters | None = None) -> tuple[float, DegreeTable]:
    """(eps, delta)-estimate of the chain result size and the per-start table.

    K = ceil(8/eps^2), m = ceil(12 ln(N/delta)); cost O(N K m).
    """
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    est, _ = degree_estimates(ci, eps, delta, rng, counters)
    return float(est.sum()), build_degree_table(ci, est, eps)


# ----------------------------------------------------------------- sampling


@dataclass
class ReachSet:
    start: int
    values: np.ndarray

    @property
    def deg(self) -> int:
        return len(self.values)


@njit(cache=True)
def _reach(u, k, sizes, base, off_start, off, nbr_start, nbr, mark, stamp, front, nxt):
    """Layered BFS from local id u; returns the reached local ids of the last layer."""
    stamp[0] += 1
    s = stamp[0]
    front[0] = u
    nf = 1
    ops = 0
    for i in range(k):
        nn = 0
        ob = off_start[i]
        nb = nbr_start[i]
        mb = base[i + 1]
        for t in range(nf):
            x = front[t]
            for p in range(off[ob + x], off[ob + x + 1]):
                y = nbr[nb + p]
                ops += 1
                if mark[mb + y] != s:
                    mark[mb + y] = s
                    nxt[nn] = y
                    nn += 1
        for t in range(nn):
            front[t] = nxt[t]
        nf = nn
    return front[:nf].copy(), ops


def _reach_local(ci: ChainInstance, u_local: int) -> tuple[np.ndarray, int]:
    mark, base, stamp, front, nxt = ci.scratch()
    return _reach(u_local, ci.k, ci.sizes, base, ci.off_start, ci.off, ci.nbr_start, ci.nbr,
                  mark, stamp, front, nxt)


def reachable_set(ci: ChainInstance, u: int) -> ReachSet:
    """Exact set of A_{k+1} values reachable from u through R_1..R_k."""
    j = ci.local(0, u)
    if j < 0:
        raise KeyError(f"{u} is not a value of {ci.attributes[0] if ci.attributes else 'A_1'}")
    loc, _ = _reach_local(ci, j)
    return ReachSet(u, np.sort(ci.layers[ci.k][loc]))


@dataclass
class ChainDraw:
    """A sampled (u, v), the number of trials it took, and the table in force."""

    result: tuple[int, int]
    trials: int
    table: DegreeTable


def sample_chain_trial(ci: ChainInstance, table: DegreeTable, rng: np.random.Generator
                       ) -> tuple[tuple[int, int] | None, bool, int]:
    """One trial. Returns (result or None, underestimated?, ops)."""
    j = table.draw(rng)
    loc, ops = _reach_local(ci, j)
    deg = len(loc)
    if deg > table.proxy[j]:
        return None, True, ops
    if deg == 0 or rng.random() * table.proxy[j] >= deg:
        return None, False, ops
    v = loc[int(rng.integers(0, deg))]
    return (int(ci.layers[0][j]), int(ci.layers[ci.k][v])), False, ops


def sample_chain(ci: ChainInstance, table: DegreeTable, rng: np.random.Generator,
                 delta: float = 0.1, counters: OpCounters | None = None) -> ChainDraw:
    """Draw one result; each is returned with probability 1/W per trial when the table is accurate.

    Trials repeat until one succeeds. After ceil(log2 N) consecutive
    underestimates the table is rebuilt with eps halved.
    """
    if table.W <= 0:
        raise ValueError("degenerate degree table: all estimates are 0")
    limit = max(1, math.ceil(math.log2(max(ci.n_total, 2))))
    trials = 0
    low = 0
    while True:
        res, under, ops = sample_chain_trial(ci, table, rng)
        trials += 1
        if counters is not None:
            counters.add(ops=ops, trials=1, accepted=int(res is not None))
        if res is not None:
            return ChainDraw(res, trials, table)
        low = low + 1 if under else 0
        if low >= limit:
            _, table = approx_count_chain(ci, table.eps / 2, delta, rng, counters)
            low = 0


def sample_chain_or_empty(ci: ChainInstance, eps: float, delta: float, rng: np.random.Generator,
                          counters: OpCounters | None = None) -> tuple[int, int] | None:
    """Build a table and draw one result; None when every estimate is 0 (empty result)."""
    _, table = approx_count_chain(ci, eps, delta, rng, counters)
    if table.W <= 0:
        return None
    return sample_chain(ci, table, rng, delta, counters).result
