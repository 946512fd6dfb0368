"""Constant-time access structures over relations and the shared random samplers.

Every relation is indexed once into CSR form: for each attribute position the
rows are grouped by value (stable, so neighbours keep insertion order) and an
offsets array of length ``D + 1`` gives each value's segment. Binary relations
also carry an open-addressing hash table over ``x * D + y`` so that membership
can be tested inside compiled kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from numba import njit

from .model import Relation

_EMPTY = -1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def make_rng(seed: int | np.random.SeedSequence | None = None) -> np.random.Generator:
    """Counter-based generator; the single source of randomness for every engine."""
    return np.random.Generator(np.random.Philox(seed))


def rand_int(rng: np.random.Generator, lo: int, hi: int) -> int:
    """Uniform integer in the closed range [lo, hi] without modulo bias."""
    if hi < lo:
        raise ValueError(f"empty range [{lo}, {hi}]")
    return int(rng.integers(lo, hi + 1))


def lower_median(values: Sequence[float]) -> float:
    s = sorted(values)
    if not s:
        raise ValueError("median of empty list")
    return s[(len(s) - 1) // 2]


_TWO53 = 9007199254740992.0


#: largest range randbelow supports; weight totals above it are rejected
MAX_RANGE = 1 << 53


@njit(cache=True, inline="always")
def randbelow(rng, n):
    """Uniform integer in [0, n) for 1 <= n <= 2**53, unbiased by rejection.

    ``rng.random()`` is exactly (u >> 11) / 2**53 for a uniform 64-bit u, so
    scaling back recovers 53 uniform bits.
    """
    limit = (1 << 53) - ((1 << 53) % n)
    x = np.int64(rng.random() * _TWO53)
    while x >= limit:
        x = np.int64(rng.random() * _TWO53)
    return x % n


# ---------------------------------------------------------------- hashing


@njit(cache=True, inline="always")
def _slot(key, mask):
    h = np.uint64(key) * _GOLDEN
    h ^= h >> np.uint64(29)
    return np.int64(h & np.uint64(mask))


@njit(cache=True)
def _table_build(keys_in, cap):
    table = np.full(cap, _EMPTY, dtype=np.int64)
    mask = cap - 1
    for key in keys_in:
        s = _slot(key, mask)
        while table[s] != _EMPTY and table[s] != key:
            s = (s + 1) & mask
        table[s] = key
    return table


@njit(cache=True, inline="always")
def table_contains(table, key):
    mask = table.shape[0] - 1
    s = _slot(key, mask)
    while True:
        t = table[s]
        if t == key:
            return True
        if t == _EMPTY:
            return False
        s = (s + 1) & mask


def build_hash_table(keys: np.ndarray) -> np.ndarray:
    cap = 8
    while cap < 2 * len(keys):
        cap *= 2
    return _table_build(np.ascontiguousarray(keys, dtype=np.int64), cap)


# ------------------------------------------------------------- relations


class BinaryArrays(NamedTuple):
    """Flat view of a binary relation R(X, Y) for compiled kernels.

    ``off_x``/``nbr_x`` list the Y-partners of each X value; ``off_y``/``nbr_y``
    list the X-partners of each Y value.
    """

    rows: np.ndarray
    off_x: np.ndarray
    nbr_x: np.ndarray
    off_y: np.ndarray
    nbr_y: np.ndarray
    table: np.ndarray
    dom: int


def _group(col: np.ndarray, dom: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(col, kind="stable")
    counts = np.bincount(col, minlength=dom) if len(col) else np.zeros(dom, np.int64)
    offsets = np.zeros(dom + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return order.astype(np.int64), offsets


@dataclass
class IndexedRelation:
    """A relation with degree, neighbour, sampling and membership primitives.

    Values are dense ids in ``[0, dom)``; a value outside that range simply has
    degree zero.
    """

    relation: Relation
    dom: int
    order: list[np.ndarray] = field(repr=False)
    offsets: list[np.ndarray] = field(repr=False)
    build_ops: int = 0
    _table: np.ndarray | None = field(default=None, repr=False)
    _members: set | None = field(default=None, repr=False)
    _arrays: BinaryArrays | None = field(default=None, repr=False)

    @property
    def schema(self) -> tuple[str, ...]:
        return self.relation.schema

    @property
    def rows(self) -> np.ndarray:
        return self.relation.rows

    def __len__(self) -> int:
        return len(self.relation)

    def _pos(self, attr: str) -> int:
        try:
            return self.schema.index(attr)
        except ValueError:
            raise KeyError(f"attribute {attr!r} not in schema {self.schema}") from None

    def degree(self, attr: str, v: int) -> int:
        off = self.offsets[self._pos(attr)]
        if not 0 <= v < self.dom:
            return 0
        return int(off[v + 1] - off[v])

    def neighbor_at(self, attr: str, v: int, j: int) -> tuple[int, ...]:
        """The j-th (1-based) partner of ``v`` on ``attr``: the row minus that column."""
        p = self._pos(attr)
        d = self.degree(attr, v)
        if not 1 <= j <= d:
            raise IndexError(f"neighbour index {j} outside 1..{d}")
        row = self.rows[self.order[p][self.offsets[p][v] + j - 1]]
        return tuple(int(x) for i, x in enumerate(row) if i != p)

    def neighbors(self, attr: str, v: int) -> list[tuple[int, ...]]:
        return [self.neighbor_at(attr, v, j) for j in range(1, self.degree(attr, v) + 1)]

    def sample_tuple(self, rng: np.random.Generator) -> tuple[int, ...]:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty relation")
        return tuple(int(x) for x in self.rows[rng.integers(0, len(self))])

    def _as_row(self, t: Mapping[str, int] | Sequence[int]) -> tuple[int, ...]:
        if isinstance(t, Mapping):
            if set(t) != set(self.schema):
                raise KeyError(f"tuple over {sorted(t)} does not match schema {self.schema}")
            return tuple(int(t[a]) for a in self.schema)
        t = tuple(int(x) for x in t)
        if len(t) != len(self.schema):
            raise KeyError(f"tuple of arity {len(t)} does not match schema {self.schema}")
        return t

    def test_tuple(self, t: Mapping[str, int] | Sequence[int]) -> bool:
        row = self._as_row(t)
        if any(not 0 <= x < self.dom for x in row):
            return False
        if self._table is not None:
            return bool(table_contains(self._table, row[0] * self.dom + row[1]))
        return row in self._members

    def arrays(self) -> BinaryArrays:
        if self._arrays is None:
            raise TypeError("compiled access is only available for binary relations")
        return self._arrays


def build_index(rel: Relation, dom: int | None = None) -> IndexedRelation:
    """Index ``rel``; ``dom`` is the shared id-space size (defaults to the local max)."""
    rows = rel.rows
    if dom is None:
        dom = int(rows.max()) + 1 if len(rows) else 0
    order, offsets = [], []
    for p in range(len(rel.schema)):
        o, off = _group(rows[:, p], dom)
        order.append(o)
        offsets.append(off)
    ops = len(rows) * (len(rel.schema) + 1) + len(rel.schema) * (dom + 1)
    idx = IndexedRelation(rel, dom, order, offsets, ops)
    if len(rel.schema) == 2:
        keys = rows[:, 0] * dom + rows[:, 1]
        idx._table = build_hash_table(keys)
        idx._arrays = BinaryArrays(
            rows=rows,
            off_x=offsets[0],
            nbr_x=np.ascontiguousarray(rows[order[0], 1]),
            off_y=offsets[1],
            nbr_y=np.ascontiguousarray(rows[order[1], 0]),
            table=idx._table,
            dom=dom,
        )
    else:
        idx._members = {tuple(int(x) for x in r) for r in rows}
    return idx


# ------------------------------------------------------ weighted sampling

ALIAS_MIN_ITEMS = 64


class WeightedArrays(NamedTuple):
    keys: np.ndarray
    cum: np.ndarray
    thr: np.ndarray
    alias: np.ndarray
    total: int
    use_alias: bool


@dataclass
class WeightedSampler:
    """Draws key i with probability weight_i / total_weight, exactly.

    Integer weights only. Large item sets use an integer Vose alias table, small
    ones a linear scan over prefix sums.
    """

    keys: np.ndarray
    weights: np.ndarray
    total_weight: int
    arrays: WeightedArrays = field(repr=False)

    def draw(self, rng: np.random.Generator) -> int:
        return sample_weighted(self, rng)


def _vose(weights: list[int], total: int) -> tuple[np.ndarray, np.ndarray]:
    n = len(weights)
    scaled = [w * n for w in weights]
    thr = [total] * n
    alias = list(range(n))
    small = [i for i, s in enumerate(scaled) if s < total]
    large = [i for i, s in enumerate(scaled) if s >= total]
    while small and large:
        lo = small.pop()
        hi = large.pop()
        thr[lo] = scaled[lo]
        alias[lo] = hi
        scaled[hi] -= total - scaled[lo]
        (small if scaled[hi] < total else large).append(hi)
    return np.array(thr, dtype=np.int64), np.array(alias, dtype=np.int64)


def build_weighted_sampler(keys: Sequence[int], weights: Sequence[int]) -> WeightedSampler:
    keys = np.asarray(keys, dtype=np.int64)
    w = [int(x) for x in weights]
    if len(w) != len(keys):
        raise ValueError("keys and weights differ in length")
    if any(x < 0 for x in w):
        raise ValueError("negative weight")
    total = sum(w)
    if total > MAX_RANGE or total * max(len(w), 1) >= 2**62:
        raise OverflowError(f"total weight {total} exceeds the supported sampling range")
    cum = np.cumsum(np.array(w, dtype=np.int64)) if w else np.zeros(0, np.int64)
    use_alias = len(w) > ALIAS_MIN_ITEMS and total > 0
    if use_alias:
        thr, alias = _vose(w, total)
    else:
        thr = alias = np.zeros(0, dtype=np.int64)
    arrays = WeightedArrays(keys, cum, thr, alias, total, use_alias)
    return WeightedSampler(keys, np.array(w, dtype=np.int64), total, arrays)


@njit(cache=True, inline="always")
def weighted_pick(keys, cum, thr, alias, total, use_alias, rng):
    if use_alias:
        i = randbelow(rng, keys.shape[0])
        if randbelow(rng, total) >= thr[i]:
            i = alias[i]
    else:
        u = randbelow(rng, total)
        i = 0
        while cum[i] <= u:
            i += 1
    return keys[i]


@njit(cache=True)
def weighted_draw(ws, rng):
    return weighted_pick(ws.keys, ws.cum, ws.thr, ws.alias, ws.total, ws.use_alias, rng)


def sample_weighted(ws: WeightedSampler, rng: np.random.Generator) -> int:
    if ws.total_weight <= 0:
        raise ValueError("weighted sampler has zero total weight")
    return int(weighted_draw(ws.arrays, rng))


# ------------------------------------------------ without-replacement draws


@dataclass
class NoReplacementSampler:
    """Online Fisher-Yates over ``1..universe_size``; memory grows with draws."""

    universe_size: int
    swap_map: dict[int, int] = field(default_factory=dict)
    drawn: int = 0


def nr_next(s: NoReplacementSampler, rng: np.random.Generator) -> int:
    if s.drawn >= s.universe_size:
        raise IndexError("universe exhausted")
    i = s.drawn
    j = int(rng.integers(i, s.universe_size))
    picked = s.swap_map.get(j, j)
    s.swap_map[j] = s.swap_map.pop(i, i)
    s.drawn += 1
    return picked + 1


@njit(cache=True, inline="always")
def nr_draw(scratch, touched, n_touched, i, n, rng):
    """Kernel-side counterpart of ``nr_next`` (0-based).

    ``scratch`` holds -1 for untouched positions; every written position is
    appended to ``touched`` so the caller can reset it in O(draws).
    """
    j = i + randbelow(rng, n - i)
    vj = scratch[j]
    if vj < 0:
        vj = j
    vi = scratch[i]
    if vi < 0:
        vi = i
    if scratch[j] < 0:
        touched[n_touched] = j
        n_touched += 1
    scratch[j] = vi
    return vj, n_touched


@njit(cache=True, inline="always")
def nr_reset(scratch, touched, n_touched):
    for t in range(n_touched):
        scratch[touched[t]] = -1


@dataclass
class OpCounters:
    """Primitive-operation tallies accumulated across calls."""

    ops: int = 0
    trials: int = 0
    accepted: int = 0
    primitive_calls: dict[str, int] = field(default_factory=dict)

    def add(self, ops: int = 0, trials: int = 0, accepted: int = 0, kind: str = "kernel") -> None:
        self.ops += ops
        self.trials += trials
        self.accepted += accepted
        self.primitive_calls[kind] = self.primitive_calls.get(kind, 0) + ops
