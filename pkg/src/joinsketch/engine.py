"""One entry point per query shape: prepare once, then sample or count.

Every engine reports result tuples in the query's output-attribute order so
callers can compare engines directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import acyclic, chain, matrix, star
from .access import OpCounters
from .model import Instance, QuerySpec, ShapeError, ShapeKind, classify_query

SHAPES = ("auto", "matrix", "star", "chain", "acyclic")


@dataclass
class Engine:
    """A prepared instance plus the shape-specific sample and count routines."""

    shape: str
    spec: QuerySpec
    prepared: object
    order: tuple[str, ...]
    _sample: Callable = field(repr=False)
    _count: Callable = field(repr=False)
    strategy: str = "H"
    eps: float = 0.2
    delta: float = 0.1

    def _reorder(self, t: tuple[int, ...] | None) -> tuple[int, ...] | None:
        if t is None:
            return None
        pos = {a: i for i, a in enumerate(self.order)}
        return tuple(t[pos[a]] for a in self.spec.output)

    def sample(self, rng: np.random.Generator, counters: OpCounters | None = None) -> tuple[int, ...] | None:
        """A uniform result tuple, or None when the engine declares the result empty."""
        return self._reorder(self._sample(rng, counters))

    def count(self, eps: float, delta: float, rng: np.random.Generator,
              counters: OpCounters | None = None) -> float:
        return float(self._count(eps, delta, rng, counters))


def resolve_shape(spec: QuerySpec, shape: str = "auto") -> str:
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}")
    if shape != "auto":
        return shape
    kind = classify_query(spec).variant
    if kind is ShapeKind.UNSUPPORTED:
        raise ShapeError("the query is cyclic; no engine supports it")
    return kind.value


def build_engine(inst: Instance, spec: QuerySpec, shape: str = "auto", strategy: str = "H",
                 eps: float = 0.2, delta: float = 0.1) -> Engine:
    """Prepare ``inst`` for the requested engine.

    ``eps`` and ``delta`` only matter for the chain sampler, whose degree
    table is built on the first draw and reused afterwards.
    """
    name = resolve_shape(spec, shape)
    if strategy.upper() not in ("H", "L"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy.upper() == "L" and name != "matrix":
        raise ShapeError("the light strategy exists only for the matrix engine")

    if name == "matrix":
        mi = matrix.prepare_matrix(inst, spec)
        a, _, c = mi.attributes
        return Engine(name, spec, mi, (a, c),
                      lambda rng, ctr: matrix.sample_matrix(mi, strategy, rng=rng, delta=delta, counters=ctr),
                      lambda e, d, rng, ctr: matrix.approx_count_matrix(mi, e, d, rng, ctr),
                      strategy.upper(), eps, delta)
    if name == "star":
        si = star.prepare_star(inst, spec)
        return Engine(name, spec, si, tuple(si.attributes[:-1]),
                      lambda rng, ctr: star.sample_star(si, rng=rng, delta=delta, counters=ctr),
                      lambda e, d, rng, ctr: star.approx_count_star(si, e, d, rng, ctr),
                      "H", eps, delta)
    if name == "chain":
        ci = chain.prepare_chain(inst, spec)
        state: dict = {}

        def sample_chain(rng, ctr):
            if "table" not in state:
                state["table"] = chain.approx_count_chain(ci, eps, delta, rng, ctr)[1]
            if state["table"].W <= 0:
                return None
            draw = chain.sample_chain(ci, state["table"], rng, delta, ctr)
            state["table"] = draw.table
            return draw.result

        return Engine(name, spec, ci, (ci.attributes[0], ci.attributes[-1]), sample_chain,
                      lambda e, d, rng, ctr: chain.approx_count_chain(ci, e, d, rng, ctr)[0],
                      "H", eps, delta)
    if name == "acyclic":
        if classify_query(spec).variant is ShapeKind.UNSUPPORTED:
            raise ShapeError("the query is cyclic; no engine supports it")
        ai = acyclic.prepare_acyclic(inst, spec)
        return Engine(name, spec, ai, tuple(spec.output),
                      lambda rng, ctr: acyclic.sample_join_project(ai, rng=rng, delta=delta, counters=ctr),
                      lambda e, d, rng, ctr: acyclic.approx_count_acyclic(ai, e, d, rng, ctr),
                      "H", eps, delta)
    raise ValueError(f"unknown shape {name!r}")
