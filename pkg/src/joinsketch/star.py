"""Uniform sampling and approximate counting for k-star queries.

A k-star is R_1(A_1, B), ..., R_k(A_k, B) projected onto (A_1, ..., A_k). A
trial draws b with probability W_b / W, one A_i-neighbour of b from each R_i,
and then keeps the tuple with probability 1/deg through the same
without-replacement acceptance step as the matrix engine, anchored on the
smallest list pi_B(R_j ⋉ a_j) (ties to the lowest j).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _starcore as sc
from . import counting
from .access import OpCounters, WeightedSampler
from .matrix import SAMPLING_OPS_CONSTANT, TrialOutcome, _weights_sampler, timeout_rounds
from .model import Instance, QuerySpec, Relation, ShapeError, ShapeKind, bind_relations, classify_query


@dataclass
class StarHIndex:
    """Exact weights W_b = prod_i |R_i ⋉ b| and a sampler over them."""

    b_values: np.ndarray
    weights: list[int]
    W: int
    sampler: WeightedSampler


@dataclass(frozen=True)
class StarCandidate:
    a_vec: tuple[int, ...]
    b: int
    anchor: int


@dataclass
class StarInstance:
    relations: tuple[Relation, ...]
    core: sc.StarCore = field(repr=False)
    hindex: StarHIndex = field(repr=False)
    labels: tuple[str, ...] | None = None
    attributes: tuple[str, ...] = ()

    tie_last = False

    def __post_init__(self):
        self._no_heavy = np.zeros(self.core.arrays.dom + 1, dtype=np.uint8)

    @property
    def k(self) -> int:
        return self.core.k

    @property
    def n_total(self) -> int:
        return self.core.n_total


def build_star_h_index(core: sc.StarCore) -> StarHIndex:
    weights = [1] * len(core.b_values)
    for i in range(core.k):
        for j, d in enumerate(core.b_degrees[i]):
            weights[j] *= int(d)
    w = np.array(weights, dtype=np.int64)
    return StarHIndex(core.b_values, weights, sum(weights), _weights_sampler(core.b_values, w))


def prepare_star(inst: Instance | StarInstance, spec: QuerySpec | None = None) -> StarInstance:
    """Index an instance of a star query (a matrix query counts as the 2-star)."""
    if isinstance(inst, StarInstance):
        return inst
    if spec is None:
        raise ValueError("a query spec is required")
    shape = classify_query(spec)
    if shape.variant is ShapeKind.MATRIX:
        a, b, c = shape.order
        rels = [inst.relation((a, b)).reordered((a, b)), inst.relation((b, c)).reordered((c, b))]
        attrs = (a, c, b)
    elif shape.variant is ShapeKind.STAR:
        rels = bind_relations(inst, spec, shape)
        attrs = shape.order
    else:
        raise ShapeError(f"query has shape {shape}, not star")
    core = sc.build_star_core(rels, max(inst.domain_size, 1))
    return StarInstance(tuple(rels), core, build_star_h_index(core), inst.labels, attrs)


def star_instance(relations: Sequence[Sequence[tuple[int, int]]]) -> StarInstance:
    """Convenience constructor from k lists of raw (a_i, b) id pairs."""
    k = len(relations)
    names = [f"A{i + 1}" for i in range(k)]
    rels = tuple(Relation((names[i], "B"), np.array(r, dtype=np.int64).reshape(-1, 2))
                 for i, r in enumerate(relations))
    spec = QuerySpec.of([r.schema for r in rels], names)
    return prepare_star(Instance(rels), spec)


def sample_star_trial(si: StarInstance, rng: np.random.Generator) -> TrialOutcome:
    """One trial; each result comes back with probability exactly 1/W."""
    if si.hindex.W <= 0:
        raise ValueError("the full join is empty")
    avec = np.empty(si.k, dtype=np.int64)
    info = np.empty(3, dtype=np.int64)
    scratch, touched = si.core.work()
    status, b, ops = sc.star_trial(si.core.arrays, si.hindex.sampler.arrays, 1, sc.STRATEGY_H,
                                   sc.VIEW_FULL, si._no_heavy, False, rng, scratch, touched,
                                   avec, info)
    join = tuple(int(x) for x in avec) + (int(b),)
    if status == sc.SUCCESS:
        return TrialOutcome(join[:-1], join, ops)
    return TrialOutcome(None, join, ops)


def star_candidate(si: StarInstance, rng: np.random.Generator) -> StarCandidate:
    """Join phase only: a full-join tuple drawn with probability 1/W plus its anchor."""
    avec = np.empty(si.k, dtype=np.int64)
    b = sc.star_join(si.core.arrays, si.hindex.sampler.arrays, 1, sc.STRATEGY_H, sc.VIEW_FULL,
                     si._no_heavy, rng, avec)
    degs = [si.core.deg_a(i, int(avec[i])) for i in range(si.k)]
    return StarCandidate(tuple(int(x) for x in avec), b, degs.index(min(degs)))


def default_budget(si: StarInstance) -> int:
    """Twice the expected trial cost when OUT = 1."""
    return 2 * SAMPLING_OPS_CONSTANT * (si.hindex.W + si.n_total)


def sample_star(si: StarInstance, budget: int | None = None, rng: np.random.Generator | None = None,
                delta: float = 0.01, counters: OpCounters | None = None) -> tuple[int, ...] | None:
    """One uniform sample of the star result, or None for the empty verdict."""
    if rng is None:
        raise ValueError("an explicit rng is required")
    if budget is None:
        budget = default_budget(si)
    if budget <= 0:
        raise ValueError("budget must be positive")
    if si.hindex.W == 0:
        return None
    avec = np.empty(si.k, dtype=np.int64)
    scratch, touched = si.core.work()
    for _ in range(timeout_rounds(si.n_total, delta)):
        found, ops, trials = sc.star_sample_until(
            si.core.arrays, si.hindex.sampler.arrays, 1, sc.STRATEGY_H, sc.VIEW_FULL,
            si._no_heavy, False, budget, rng, scratch, touched, avec)
        if counters is not None:
            counters.add(ops=ops, trials=trials, accepted=int(found))
        if found:
            return tuple(int(x) for x in avec)
    return None


def approx_count_star(si: StarInstance, eps: float, delta: float, rng: np.random.Generator,
                      counters: OpCounters | None = None) -> float:
    """(eps, delta)-estimate of the number of star results.

    A value b is heavy when prod_{i>=2} |R_i ⋉ b| > Lambda^{(k-1)/k}; at most
    N / Lambda^{1/k} values qualify. Light tuples are drawn from R_1 and smoothed
    to the cap floor(Lambda^{(k-1)/k}), so the light part has trial bound
    |R_1| * cap. The guess ladders and the combiner are the matrix ones.
    """
    return counting.approx_count(si, eps, delta, rng, counters)
