"""Uniform sampling over the matrix query pi_{A,C} R_1(A,B) ⋈ R_2(B,C)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _starcore as sc
from . import counting
from .access import OpCounters, WeightedSampler, build_weighted_sampler
from .model import Instance, QuerySpec, Relation, ShapeError, ShapeKind, bind_relations, classify_query

#: ops per trial assumed when sizing the sampling timeout
SAMPLING_OPS_CONSTANT = 8


@dataclass
class MatrixHIndex:
    """Exact join weights W_b = |R_1 ⋉ b| * |R_2 ⋉ b| and a sampler over them."""

    b_values: np.ndarray
    weights: np.ndarray
    W: int
    sampler: WeightedSampler


@dataclass(frozen=True)
class LightConfig:
    delta_cap: int

    def __post_init__(self):
        if self.delta_cap < 1:
            raise ValueError("delta_cap must be at least 1")


@dataclass
class TrialOutcome:
    """``result`` is the projected (a, c) on success and None for ⊥."""

    result: tuple[int, ...] | None
    join: tuple[int, ...] | None
    ops: int


@dataclass
class MatrixInstance:
    """A matrix instance prepared for sampling: R_1(A,B), R_2(B,C) and indices."""

    r1: Relation
    r2: Relation
    core: sc.StarCore = field(repr=False)
    hindex: MatrixHIndex = field(repr=False)
    max_deg2: int = 0
    labels: tuple[str, ...] | None = None
    attributes: tuple[str, str, str] = ("A", "B", "C")

    @property
    def n_total(self) -> int:
        return len(self.r1) + len(self.r2)

    #: equal smallest neighbour lists anchor the acceptance step on R_2
    tie_last = True

    def __post_init__(self):
        self._scratch = self.core.work()
        self._no_heavy = np.zeros(self.core.arrays.dom + 1, dtype=np.uint8)

    def deg_a(self, a: int) -> int:
        return self.core.deg_a(0, a)

    def deg_c(self, c: int) -> int:
        return self.core.deg_a(1, c)

    def deg1_b(self, b: int) -> int:
        return self.core.deg_b(0, b)

    def deg2_b(self, b: int) -> int:
        return self.core.deg_b(1, b)


def _weights_sampler(b_values: np.ndarray, weights: np.ndarray) -> WeightedSampler:
    keep = weights > 0
    if not keep.any():
        # placeholder so compiled kernels always receive a valid sampler
        return build_weighted_sampler([0], [1])
    return build_weighted_sampler(b_values[keep], weights[keep])


def build_h_index(core: sc.StarCore, mask: np.ndarray | None = None) -> MatrixHIndex:
    """Weights restricted to B-values with ``mask[b]`` set (all values if None)."""
    w = np.prod(core.b_degrees, axis=0) if core.k else np.zeros(0, np.int64)
    b = core.b_values
    if mask is not None:
        keep = mask[b] != 0
        b, w = b[keep], w[keep]
    total = int(sum(int(x) for x in w))
    return MatrixHIndex(b, w, total, _weights_sampler(b, w))


def prepare_matrix(inst: Instance | MatrixInstance, spec: QuerySpec | None = None) -> MatrixInstance:
    if isinstance(inst, MatrixInstance):
        return inst
    if spec is None:
        if len(inst.relations) != 2:
            raise ShapeError("a matrix instance needs exactly two relations")
        spec = QuerySpec.of([r.schema for r in inst.relations], _guess_output(inst))
    shape = classify_query(spec)
    if shape.variant is not ShapeKind.MATRIX:
        raise ShapeError(f"query has shape {shape}, not matrix")
    r1, r2 = bind_relations(inst, spec, shape)
    dom = max(inst.domain_size, 1)
    a, b, c = shape.order
    core = sc.build_star_core([r1, r2.reordered((c, b))], dom)
    hidx = build_h_index(core)
    max_deg2 = int(core.b_degrees[1].max()) if core.b_degrees.size else 0
    return MatrixInstance(r1, r2, core, hidx, max_deg2, inst.labels, (a, b, c))


def _guess_output(inst: Instance) -> tuple[str, ...]:
    s1, s2 = (set(r.schema) for r in inst.relations)
    return tuple(a for r in inst.relations for a in r.schema if a not in s1 & s2)


def matrix_instance(r1: Sequence[tuple[int, int]], r2: Sequence[tuple[int, int]]) -> MatrixInstance:
    """Convenience constructor from raw (a,b) and (b,c) id pairs."""
    inst = Instance((Relation(("A", "B"), np.array(r1, dtype=np.int64).reshape(-1, 2)),
                     Relation(("B", "C"), np.array(r2, dtype=np.int64).reshape(-1, 2))))
    return prepare_matrix(inst, QuerySpec.of([("A", "B"), ("B", "C")], ("A", "C")))


# ------------------------------------------------------------------ trials


def join_sample_h(mi: MatrixInstance, hidx: MatrixHIndex | None, rng: np.random.Generator) -> tuple[int, int, int]:
    hidx = hidx or mi.hindex
    if hidx.W <= 0:
        raise ValueError("the full join is empty")
    avec = np.empty(2, dtype=np.int64)
    b = sc.star_join(mi.core.arrays, hidx.sampler.arrays, 1, sc.STRATEGY_H, sc.VIEW_FULL, mi._no_heavy,
                     rng, avec)
    return int(avec[0]), int(b), int(avec[1])


def join_sample_l(mi: MatrixInstance, cfg: LightConfig, rng: np.random.Generator) -> tuple[int, int, int] | None:
    if len(mi.r1) == 0:
        raise ValueError("R_1 is empty")
    avec = np.empty(2, dtype=np.int64)
    b = sc.star_join(mi.core.arrays, mi.hindex.sampler.arrays, cfg.delta_cap, sc.STRATEGY_L,
                     sc.VIEW_FULL, mi._no_heavy, rng, avec)
    if b < 0:
        return None
    return int(avec[0]), int(b), int(avec[1])


def matrix_accept_detail(mi: MatrixInstance, triple: tuple[int, int, int],
                         rng: np.random.Generator) -> tuple[bool, int, int]:
    """Acceptance step; returns (accepted, F, |S|)."""
    a, b, c = (int(x) for x in triple)
    if not mi.core.contains(0, a, b) or not mi.core.contains(1, c, b):
        raise ValueError(f"{triple} is not a full-join tuple")
    info = np.empty(3, dtype=np.int64)
    scratch, touched = mi._scratch
    ok, _ = sc.star_accept(mi.core.arrays, mi.hindex.sampler.arrays, np.array([a, c], dtype=np.int64), b,
                           sc.VIEW_FULL, mi._no_heavy, True, rng, scratch, touched, info)
    return bool(ok), int(info[0]), int(info[1])


def matrix_accept(mi: MatrixInstance, triple: tuple[int, int, int], rng: np.random.Generator) -> bool:
    """Keep a join triple with probability exactly 1/deg(a, c)."""
    return matrix_accept_detail(mi, triple, rng)[0]


def _strategy(strategy: str) -> int:
    s = strategy.upper()
    if s == "H":
        return sc.STRATEGY_H
    if s == "L":
        return sc.STRATEGY_L
    raise ValueError(f"unknown strategy {strategy!r}")


def _delta_cap(mi: MatrixInstance, cfg: LightConfig | None) -> int:
    return cfg.delta_cap if cfg is not None else max(mi.max_deg2, 1)


def sample_matrix_trial(mi: MatrixInstance, strategy: str, rng: np.random.Generator,
                        cfg: LightConfig | None = None) -> TrialOutcome:
    st = _strategy(strategy)
    if st == sc.STRATEGY_H and mi.hindex.W == 0:
        return TrialOutcome(None, None, 0)
    if st == sc.STRATEGY_L and len(mi.r1) == 0:
        return TrialOutcome(None, None, 0)
    avec = np.empty(2, dtype=np.int64)
    info = np.empty(3, dtype=np.int64)
    scratch, touched = mi._scratch
    status, b, ops = sc.star_trial(mi.core.arrays, mi.hindex.sampler.arrays, _delta_cap(mi, cfg), st,
                                   sc.VIEW_FULL, mi._no_heavy, True, rng, scratch, touched, avec, info)
    if status == sc.JOIN_FAIL:
        return TrialOutcome(None, None, int(ops))
    join = (int(avec[0]), int(b), int(avec[1]))
    if status == sc.SUCCESS:
        return TrialOutcome((join[0], join[2]), join, int(ops))
    return TrialOutcome(None, join, int(ops))


def timeout_rounds(n: int, delta: float) -> int:
    return max(1, math.ceil(math.log2(max(n, 2))) + math.ceil(math.log2(1 / delta)))


def default_budget(mi: MatrixInstance, strategy: str, cfg: LightConfig | None = None) -> int:
    """Twice the expected trial cost when OUT = 1."""
    if _strategy(strategy) == sc.STRATEGY_H:
        w_eff = mi.hindex.W
    else:
        w_eff = len(mi.r1) * _delta_cap(mi, cfg)
    return 2 * SAMPLING_OPS_CONSTANT * (w_eff + mi.n_total)


def sample_matrix(mi: MatrixInstance, strategy: str = "H", budget: int | None = None,
                  rng: np.random.Generator | None = None, cfg: LightConfig | None = None,
                  delta: float = 0.01, counters: OpCounters | None = None) -> tuple[int, int] | None:
    """One uniform sample of the query result, or None for the empty verdict.

    Trials run in rounds of ``budget`` ops; after ceil(log2 N) + ceil(log2 1/delta)
    empty rounds the result is declared empty.
    """
    if rng is None:
        raise ValueError("an explicit rng is required")
    st = _strategy(strategy)
    if budget is None:
        budget = default_budget(mi, strategy, cfg)
    if budget <= 0:
        raise ValueError("budget must be positive")
    if (st == sc.STRATEGY_H and mi.hindex.W == 0) or len(mi.r1) == 0:
        return None
    avec = np.empty(2, dtype=np.int64)
    scratch, touched = mi._scratch
    for _ in range(timeout_rounds(mi.n_total, delta)):
        found, ops, trials = sc.star_sample_until(
            mi.core.arrays, mi.hindex.sampler.arrays, _delta_cap(mi, cfg), st, sc.VIEW_FULL,
            mi._no_heavy, True, budget, rng, scratch, touched, avec)
        if counters is not None:
            counters.add(ops=int(ops), trials=int(trials), accepted=int(found))
        if found:
            return int(avec[0]), int(avec[1])
    return None


# ---------------------------------------------------------------- counting
# The matrix query is the 2-star; the counter lives in ``counting`` and these
# wrappers only fix the instance type.


def detect_heavy(mi: MatrixInstance, Lambda, delta: float, rng: np.random.Generator,
                 counters: OpCounters | None = None) -> counting.HeavySet:
    """B-values with |R_2 ⋉ b| > sqrt(Lambda), found by sampling and verified exactly."""
    return counting.detect_heavy(mi, Lambda, delta, rng, counters)


def split_instance(mi: MatrixInstance, hs: counting.HeavySet) -> tuple[counting.View, counting.View]:
    return counting.split_instance(mi, hs)


def approx_count_matrix_with_guess(mi: MatrixInstance, Lambda, eps: float, delta: float,
                                   rng: np.random.Generator,
                                   counters: OpCounters | None = None) -> float:
    return counting.approx_count_with_guess(mi, Lambda, eps, delta, rng, counters).estimate


def approx_count_matrix(mi: MatrixInstance | Instance, eps: float, delta: float,
                        rng: np.random.Generator, counters: OpCounters | None = None) -> float:
    """(eps, delta)-estimate of |pi_{A,C}(R_1 ⋈ R_2)|."""
    return counting.approx_count(prepare_matrix(mi), eps, delta, rng, counters)
