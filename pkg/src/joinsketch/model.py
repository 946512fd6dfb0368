"""Relational data model, join-project query specs and shape classification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np


class JoinSketchError(Exception):
    """Base class for library errors."""


class QuerySpecError(JoinSketchError):
    pass


class ValidationError(JoinSketchError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ShapeError(JoinSketchError):
    """Raised when an operation is applied to a query of the wrong shape."""


@dataclass(frozen=True)
class Relation:
    """A set of tuples over an ordered schema; values are interned int ids."""

    schema: tuple[str, ...]
    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        if rows.ndim == 1 and rows.size == 0:
            rows = rows.reshape(0, len(self.schema))
        if rows.ndim != 2 or rows.shape[1] != len(self.schema):
            raise ValueError(
                f"rows of shape {rows.shape} do not fit schema {self.schema}"
            )
        if len(set(self.schema)) != len(self.schema):
            raise ValueError(f"repeated attribute in schema {self.schema}")
        rows = np.ascontiguousarray(rows)
        rows.setflags(write=False)
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def key(self) -> frozenset[str]:
        return frozenset(self.schema)

    def tuples(self) -> list[tuple[int, ...]]:
        return [tuple(int(x) for x in r) for r in self.rows]

    def reordered(self, schema: Sequence[str]) -> "Relation":
        """Same relation with columns permuted into ``schema`` order."""
        schema = tuple(schema)
        if set(schema) != set(self.schema) or len(schema) != len(self.schema):
            raise ValueError(f"{schema} is not a permutation of {self.schema}")
        if schema == self.schema:
            return self
        cols = [self.schema.index(a) for a in schema]
        return Relation(schema, self.rows[:, cols])


@dataclass(frozen=True)
class Instance:
    """A database instance: one relation per schema plus optional value labels.

    ``labels[i]`` is the external spelling of value id ``i`` when the instance
    came from files; generated instances leave it as None.
    """

    relations: tuple[Relation, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "relations", tuple(self.relations))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_total(self) -> int:
        return sum(len(r) for r in self.relations)

    @property
    def domain_size(self) -> int:
        """One past the largest value id in use (ids are dense after interning)."""
        hi = 0
        for r in self.relations:
            if len(r):
                hi = max(hi, int(r.rows.max()) + 1)
        if self.labels is not None:
            hi = max(hi, len(self.labels))
        return hi

    def relation(self, schema: Iterable[str]) -> Relation:
        key = frozenset(schema)
        for r in self.relations:
            if r.key == key:
                return r
        raise KeyError(f"no relation with schema {sorted(key)}")

    def label(self, value: int) -> str:
        if self.labels is None:
            return str(value)
        return self.labels[value]

    def decoded(self) -> dict[frozenset[str], set[tuple[tuple[str, str], ...]]]:
        """Label-level content, independent of id assignment and column order."""
        out = {}
        for r in self.relations:
            out[r.key] = {
                tuple(sorted(zip(r.schema, (self.label(int(v)) for v in row))))
                for row in r.rows
            }
        return out


@dataclass(frozen=True)
class QuerySpec:
    """A join-project query (V, E, y)."""

    attributes: tuple[str, ...]
    schemas: tuple[tuple[str, ...], ...]
    output: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "schemas", tuple(tuple(e) for e in self.schemas))
        object.__setattr__(self, "output", tuple(self.output))
        covered = set().union(*map(set, self.schemas)) if self.schemas else set()
        if set(self.attributes) != covered:
            raise QuerySpecError(
                f"attributes {sorted(self.attributes)} differ from the union of "
                f"schemas {sorted(covered)}"
            )
        if len(set(self.attributes)) != len(self.attributes):
            raise QuerySpecError("repeated attribute")
        if not self.output:
            raise QuerySpecError("output attribute set is empty")
        if not set(self.output) <= covered:
            raise QuerySpecError(f"output {self.output} not covered by schemas")
        for e in self.schemas:
            if not e or len(set(e)) != len(e):
                raise QuerySpecError(f"bad schema {e}")

    @classmethod
    def of(cls, schemas: Sequence[Sequence[str]], output: Sequence[str]) -> "QuerySpec":
        attrs: list[str] = []
        for e in schemas:
            for a in e:
                if a not in attrs:
                    attrs.append(a)
        return cls(tuple(attrs), tuple(tuple(e) for e in schemas), tuple(output))

    def full(self) -> "QuerySpec":
        """The underlying full join query (y = V)."""
        return QuerySpec(self.attributes, self.schemas, self.attributes)


class ShapeKind(str, Enum):
    MATRIX = "matrix"
    STAR = "star"
    CHAIN = "chain"
    ACYCLIC = "acyclic"
    UNSUPPORTED = "unsupported"


@dataclass(frozen=True)
class QueryShape:
    """Classification result.

    ``order`` names the attributes in engine order: ``(A, B, C)`` for a
    matrix, ``(A_1, .., A_k, B)`` for a star, ``(A_1, .., A_{k+1})`` along the
    path for a chain. ``relations`` gives, for each engine relation, the index
    of the matching schema in ``spec.schemas``.
    """

    variant: ShapeKind
    k: int = 0
    order: tuple[str, ...] = ()
    relations: tuple[int, ...] = ()

    def __str__(self) -> str:
        if self.variant in (ShapeKind.STAR, ShapeKind.CHAIN):
            return f"{self.variant.value}({self.k})"
        return self.variant.value


@dataclass(frozen=True)
class EstimatorParams:
    epsilon: float
    delta: float
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must lie in (0,1), got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0,1), got {self.delta}")


def _star_layout(spec: QuerySpec) -> QueryShape | None:
    k = len(spec.schemas)
    if k < 2 or any(len(e) != 2 for e in spec.schemas):
        return None
    common = set(spec.schemas[0]).intersection(*map(set, spec.schemas[1:]))
    if len(common) != 1:
        return None
    (center,) = common
    leaves = [next(a for a in e if a != center) for e in spec.schemas]
    if len(set(leaves)) != k or set(spec.output) != set(leaves):
        return None
    return QueryShape(ShapeKind.STAR, k, tuple(leaves) + (center,), tuple(range(k)))


def _chain_layout(spec: QuerySpec) -> QueryShape | None:
    k = len(spec.schemas)
    if k < 2 or any(len(e) != 2 for e in spec.schemas):
        return None
    if len(spec.attributes) != k + 1:
        return None
    incident: dict[str, list[int]] = {a: [] for a in spec.attributes}
    for i, e in enumerate(spec.schemas):
        for a in e:
            incident[a].append(i)
    ends = sorted(a for a, es in incident.items() if len(es) == 1)
    if len(ends) != 2 or any(len(es) > 2 for es in incident.values()):
        return None
    if set(spec.output) != set(ends) or len(spec.output) != 2:
        return None
    # walk from the endpoint listed first in the output
    start = spec.output[0]
    order, rels, used = [start], [], set()
    cur = start
    while True:
        nxt = [i for i in incident[cur] if i not in used]
        if not nxt:
            break
        i = nxt[0]
        used.add(i)
        rels.append(i)
        cur = next(a for a in spec.schemas[i] if a != cur)
        order.append(cur)
    if len(rels) != k:
        return None
    return QueryShape(ShapeKind.CHAIN, k, tuple(order), tuple(rels))


def classify_query(spec: QuerySpec) -> QueryShape:
    """Classify a query as matrix, star(k), chain(k), acyclic or unsupported.

    Two binary relations sharing one attribute and projected onto the other
    two is the matrix query, whichever of the star/chain readings applies.
    Star and chain shapes need k >= 3 binary schemas; everything else that
    admits a join tree is acyclic-general.
    """
    star = _star_layout(spec)
    chain = _chain_layout(spec)
    if len(spec.schemas) == 2 and (star or chain):
        layout = star or chain
        if star is not None:
            a, c, b = star.order
        else:
            a, b, c = chain.order
        rels = layout.relations
        return QueryShape(ShapeKind.MATRIX, 2, (a, b, c), rels)
    if star is not None:
        return star
    if chain is not None:
        return chain
    from .acyclic import build_join_tree

    if build_join_tree(spec) is not None:
        return QueryShape(ShapeKind.ACYCLIC, len(spec.schemas))
    return QueryShape(ShapeKind.UNSUPPORTED, len(spec.schemas))


def rho_star_closed_form(shape: QueryShape) -> Fraction:
    """Fractional edge covering number for the shapes with a closed form."""
    if shape.variant is ShapeKind.MATRIX:
        return Fraction(2)
    if shape.variant is ShapeKind.STAR:
        return Fraction(shape.k)
    if shape.variant is ShapeKind.CHAIN:
        return Fraction(math.ceil((shape.k + 1) / 2))
    raise ShapeError(f"no closed-form rho* for shape {shape}")


def validate_instance(inst: Instance, spec: QuerySpec) -> list[str]:
    """Return every consistency violation between ``inst`` and ``spec``.

    An empty list means the instance is usable by all engines.
    """
    problems = []
    by_key: dict[frozenset[str], list[Relation]] = {}
    for r in inst.relations:
        by_key.setdefault(r.key, []).append(r)
    wanted = {frozenset(e) for e in spec.schemas}
    for e in spec.schemas:
        key = frozenset(e)
        if key not in by_key:
            problems.append(f"missing relation for schema {{{','.join(e)}}}")
        elif len(by_key[key]) > 1:
            problems.append(f"more than one relation for schema {{{','.join(e)}}}")
    for r in inst.relations:
        if r.key not in wanted:
            problems.append(f"relation over {{{','.join(r.schema)}}} matches no schema")
            continue
        if len(r) and (r.rows.min() < 0):
            problems.append(f"negative value id in {{{','.join(r.schema)}}}")
        if len(r) and len(np.unique(r.rows, axis=0)) != len(r):
            problems.append(f"duplicate row in {{{','.join(r.schema)}}}")
    return problems


def check_instance(inst: Instance, spec: QuerySpec) -> None:
    problems = validate_instance(inst, spec)
    if problems:
        raise ValidationError(problems)


def bind_relations(inst: Instance, spec: QuerySpec, shape: QueryShape) -> list[Relation]:
    """Relations in engine order with columns oriented along ``shape.order``.

    Matrix: R1(A,B), R2(B,C). Star: R_i(A_i, B). Chain: R_i(A_i, A_{i+1}).
    """
    o = shape.order
    if shape.variant is ShapeKind.MATRIX:
        cols = [(o[0], o[1]), (o[1], o[2])]
    elif shape.variant is ShapeKind.STAR:
        cols = [(o[i], o[-1]) for i in range(shape.k)]
    elif shape.variant is ShapeKind.CHAIN:
        cols = [(o[i], o[i + 1]) for i in range(shape.k)]
    else:
        raise ShapeError(f"shape {shape} has no binary layout")
    return [inst.relation(c).reordered(c) for c in cols]
