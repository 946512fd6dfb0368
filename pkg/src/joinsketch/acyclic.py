"""Join-project sampling and counting for arbitrary acyclic queries.

Full-join tuples are sampled exactly uniformly from a join tree annotated with
subtree extension counts. A sampled tuple s is kept with probability
1/deg(pi_y s), where deg is computed exactly by counting the full join of the
residual query: each relation restricted to the tuples that agree with s on the
output attributes, projected onto its non-output attributes.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .access import OpCounters
from .counting import ThresholdResult, threshold_count
from .model import Instance, QuerySpec, ShapeError

Row = tuple[int, ...]


# --------------------------------------------------------------- join tree


@dataclass(frozen=True)
class JoinTree:
    """A rooted join tree; node i carries ``schemas[i]``."""

    schemas: tuple[tuple[str, ...], ...]
    parent: tuple[int, ...]  # -1 for the root
    root: int

    @property
    def children(self) -> list[list[int]]:
        ch: list[list[int]] = [[] for _ in self.schemas]
        for i, p in enumerate(self.parent):
            if p >= 0:
                ch[p].append(i)
        return ch

    def preorder(self) -> list[int]:
        ch = self.children
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(reversed(ch[n]))
        return out

    def is_valid(self) -> bool:
        """Every attribute's nodes form a connected subtree."""
        attrs = {a for e in self.schemas for a in e}
        for a in attrs:
            nodes = {i for i, e in enumerate(self.schemas) if a in e}
            # connected iff exactly one node's parent lies outside the set
            tops = [i for i in nodes if self.parent[i] not in nodes]
            if len(tops) != 1:
                return False
        return True


def _gyo_edges(schemas: Sequence[frozenset[str]]) -> list[tuple[int, int]] | None:
    """Undirected join-tree edges by ear removal, or None when cyclic."""
    alive = list(range(len(schemas)))
    edges = []
    while len(alive) > 1:
        found = False
        for e in alive:
            others = [f for f in alive if f != e]
            shared = schemas[e] & frozenset().union(*(schemas[f] for f in others))
            for f in others:
                if shared <= schemas[f]:
                    edges.append((e, f))
                    alive.remove(e)
                    found = True
                    break
            if found:
                break
        if not found:
            return None
    return edges


def build_join_tree(spec: QuerySpec, root: int | None = None) -> JoinTree | None:
    """GYO ear removal; None for a cyclic query.

    The root defaults to the node holding the lexicographically smallest
    output attribute (lowest index among ties).
    """
    sets = [frozenset(e) for e in spec.schemas]
    edges = _gyo_edges(sets)
    if edges is None:
        return None
    if root is None:
        first = min(spec.output)
        root = next(i for i, e in enumerate(sets) if first in e)
    adj: list[list[int]] = [[] for _ in sets]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    parent = [-2] * len(sets)
    parent[root] = -1
    stack = [root]
    while stack:
        n = stack.pop()
        for m in adj[n]:
            if parent[m] == -2:
                parent[m] = n
                stack.append(m)
    return JoinTree(tuple(tuple(e) for e in spec.schemas), tuple(parent), root)


# ------------------------------------------------------- annotated counting


def _rand_below(rng: np.random.Generator, n: int) -> int:
    """Uniform integer in [0, n) for arbitrary positive Python ints."""
    if n < (1 << 62):
        return int(rng.integers(0, n))
    bits = n.bit_length()
    while True:
        x = 0
        for _ in range((bits + 31) // 32):
            x = (x << 32) | int(rng.integers(0, 1 << 32))
        x >>= (-bits) % 32
        if x < n:
            return x


@dataclass
class _Group:
    rows: list[int]
    cum: list[int]

    @property
    def total(self) -> int:
        return self.cum[-1] if self.cum else 0

    def pick(self, rng: np.random.Generator) -> int:
        return self.rows[bisect.bisect_right(self.cum, _rand_below(rng, self.total))]


@dataclass
class AnnotatedTree:
    """Join tree plus, per tuple, the number of full-join extensions in its subtree."""

    tree: JoinTree
    rows: list[list[Row]]
    counts: list[list[int]]
    key_child: list[tuple[int, ...]]   # positions of the parent-shared attrs in node i
    key_parent: list[tuple[int, ...]]  # the same attrs' positions in the parent
    groups: list[dict[Row, _Group]]    # child node -> key -> weighted rows
    root_group: _Group
    total: int

    def sample(self, rng: np.random.Generator) -> dict[str, int]:
        if self.total == 0:
            raise ValueError("the full join is empty")
        t = self.tree
        ch = t.children
        out: dict[str, int] = {}
        picked = {t.root: self.root_group.pick(rng)}
        for n in t.preorder():
            row = self.rows[n][picked[n]]
            out.update(zip(t.schemas[n], row))
            for c in ch[n]:
                key = tuple(row[p] for p in self.key_parent[c])
                picked[c] = self.groups[c][key].pick(rng)
        return out


def _annotate(tree: JoinTree, rows: list[list[Row]]) -> AnnotatedTree:
    n = len(tree.schemas)
    ch = tree.children
    key_child: list[tuple[int, ...]] = [()] * n
    key_parent: list[tuple[int, ...]] = [()] * n
    for i, p in enumerate(tree.parent):
        if p >= 0:
            shared = [a for a in tree.schemas[i] if a in tree.schemas[p]]
            key_child[i] = tuple(tree.schemas[i].index(a) for a in shared)
            key_parent[i] = tuple(tree.schemas[p].index(a) for a in shared)
    counts: list[list[int]] = [[] for _ in range(n)]
    groups: list[dict[Row, _Group]] = [{} for _ in range(n)]
    for node in reversed(tree.preorder()):
        cnt = []
        for row in rows[node]:
            c = 1
            for child in ch[node]:
                g = groups[child].get(tuple(row[p] for p in key_parent[child]))
                c *= g.total if g is not None else 0
                if c == 0:
                    break
            cnt.append(c)
        counts[node] = cnt
        if tree.parent[node] >= 0:
            grp: dict[Row, _Group] = {}
            for j, (row, c) in enumerate(zip(rows[node], cnt)):
                if c == 0:
                    continue
                g = grp.setdefault(tuple(row[p] for p in key_child[node]), _Group([], []))
                g.rows.append(j)
                g.cum.append(g.total + c)
            groups[node] = grp
    root = _Group([], [])
    for j, c in enumerate(counts[tree.root]):
        if c:
            root.rows.append(j)
            root.cum.append(root.total + c)
    return AnnotatedTree(tree, rows, counts, key_child, key_parent, groups, root, root.total)


def _rows_for(inst: Instance, schema: Sequence[str]) -> list[Row]:
    rel = inst.relation(schema).reordered(schema)
    return list(dict.fromkeys(map(tuple, rel.rows.tolist())))


def yannakakis_count(inst: Instance, spec: QuerySpec) -> tuple[int, AnnotatedTree]:
    """Exact full-join size with the annotated tree used for sampling."""
    tree = build_join_tree(spec)
    if tree is None:
        raise ShapeError("query is not acyclic")
    at = _annotate(tree, [_rows_for(inst, e) for e in spec.schemas])
    return at.total, at


def _count_rows(schemas: Sequence[tuple[str, ...]], rows: Sequence[Sequence[Row]]) -> int:
    """Full-join size of an acyclic query given as schemas and row lists.

    Empty schemas act as Boolean factors: 1 if their relation is non-empty.
    """
    keep = [i for i, e in enumerate(schemas) if e]
    for i, e in enumerate(schemas):
        if not e and not rows[i]:
            return 0
    if not keep:
        return 1
    spec = QuerySpec.of([schemas[i] for i in keep], schemas[keep[0]][:1])
    tree = build_join_tree(spec)
    if tree is None:
        raise ShapeError("residual query is not acyclic")
    return _annotate(tree, [list(rows[i]) for i in keep]).total


# -------------------------------------------------------------- residuals


@dataclass
class ResidualInstance:
    """For each relation e: pi_{e-y}(R_e ⋉ pi_y s), a view into a prebuilt index."""

    schemas: tuple[tuple[str, ...], ...]
    rows: tuple[tuple[Row, ...], ...]

    def count(self) -> int:
        """|Q_ybar(R_s)|, the number of witnesses of pi_y s."""
        return _count_rows(self.schemas, self.rows)


@dataclass
class AcyclicInstance:
    """An acyclic instance prepared for sampling, with residual indices per relation."""

    inst: Instance
    spec: QuerySpec
    annotated: AnnotatedTree
    residual_index: list[dict[Row, tuple[Row, ...]]] = field(repr=False)
    residual_schemas: tuple[tuple[str, ...], ...] = ()
    key_attrs: tuple[tuple[str, ...], ...] = ()
    _deg: dict[Row, int] = field(default_factory=dict, repr=False)

    @property
    def out_join(self) -> int:
        return self.annotated.total

    @property
    def n_total(self) -> int:
        return self.inst.n_total


def prepare_acyclic(inst: Instance | AcyclicInstance, spec: QuerySpec | None = None) -> AcyclicInstance:
    if isinstance(inst, AcyclicInstance):
        return inst
    if spec is None:
        raise ValueError("a query spec is required")
    _, at = yannakakis_count(inst, spec)
    y = set(spec.output)
    index, rschemas, keys = [], [], []
    for e, rows in zip(spec.schemas, at.rows):
        kpos = [i for i, a in enumerate(e) if a in y]
        rpos = [i for i, a in enumerate(e) if a not in y]
        idx: dict[Row, dict[Row, None]] = {}
        for r in rows:
            idx.setdefault(tuple(r[i] for i in kpos), {})[tuple(r[i] for i in rpos)] = None
        index.append({k: tuple(v) for k, v in idx.items()})
        rschemas.append(tuple(e[i] for i in rpos))
        keys.append(tuple(e[i] for i in kpos))
    return AcyclicInstance(inst, spec, at, index, tuple(rschemas), tuple(keys))


def join_sample_acyclic(ai: AcyclicInstance, rng: np.random.Generator) -> dict[str, int]:
    """A full-join tuple with probability exactly 1/OUT_join."""
    return ai.annotated.sample(rng)


def project(s: Mapping[str, int], attrs: Sequence[str]) -> Row:
    return tuple(s[a] for a in attrs)


def residual_instance(ai: AcyclicInstance, s: Mapping[str, int]) -> ResidualInstance:
    rows = tuple(ai.residual_index[i].get(project(s, ai.key_attrs[i]), ())
                 for i in range(len(ai.spec.schemas)))
    return ResidualInstance(ai.residual_schemas, rows)


def witness_count(ai: AcyclicInstance, s: Mapping[str, int]) -> int:
    """deg(pi_y s), memoised per projected tuple (it is a deterministic quantity)."""
    t = project(s, ai.spec.output)
    d = ai._deg.get(t)
    if d is None:
        d = residual_instance(ai, s).count()
        ai._deg[t] = d
    return d


def accept_join_project_exact(ai: AcyclicInstance, s: Mapping[str, int],
                              rng: np.random.Generator) -> bool:
    """Keep s with probability exactly 1/deg(pi_y s)."""
    d = witness_count(ai, s)
    if d <= 0:
        raise ValueError("s is not a full-join tuple")
    return _rand_below(rng, d) == 0


def _trials(ai: AcyclicInstance, n: int, rng: np.random.Generator,
            counters: OpCounters | None) -> tuple[int, int]:
    hits = 0
    ops = 0
    k = len(ai.spec.schemas)
    for _ in range(n):
        s = join_sample_acyclic(ai, rng)
        ops += k + 1
        if accept_join_project_exact(ai, s, rng):
            hits += 1
    if counters is not None:
        counters.add(ops=ops, trials=n, accepted=hits)
    return hits, ops


def sample_join_project(ai: AcyclicInstance, budget: int | None = None,
                        rng: np.random.Generator | None = None, delta: float = 0.01,
                        counters: OpCounters | None = None) -> Row | None:
    """A uniform result tuple (in output order) or None for the empty verdict.

    ``budget`` counts trials per round; the default is twice the expected
    number of trials when there is a single result, 2 * OUT_join.
    """
    if rng is None:
        raise ValueError("an explicit rng is required")
    if ai.out_join == 0:
        return None
    if budget is None:
        budget = 2 * ai.out_join
    if budget <= 0:
        raise ValueError("budget must be positive")
    rounds = max(1, math.ceil(math.log2(max(ai.n_total, 2))) + math.ceil(math.log2(1 / delta)))
    for _ in range(rounds):
        for _ in range(budget):
            s = join_sample_acyclic(ai, rng)
            ok = accept_join_project_exact(ai, s, rng)
            if counters is not None:
                counters.add(ops=len(ai.spec.schemas) + 1, trials=1, accepted=int(ok))
            if ok:
                return project(s, ai.spec.output)
    return None


def approx_count_acyclic(ai: AcyclicInstance, eps: float, delta: float, rng: np.random.Generator,
                         counters: OpCounters | None = None) -> float:
    """(eps, delta)-estimate of |Q(R)| from W-uniform trials with W = OUT_join.

    The guess lambda starts at OUT_join and halves down to 1/2; each level runs
    ceil(3 ln(2/delta)) rounds of ceil(6 W/(eps^2 lambda)) trials.
    """
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    W = ai.out_join
    if W == 0:
        return 0.0
    res: ThresholdResult = threshold_count(lambda n: _trials(ai, n, rng, counters), W,
                                           0.5, eps, delta, W)
    return res.estimate if res.estimate is not None else 0.0
