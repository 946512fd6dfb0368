"""Exact evaluation and the statistical checks used to validate the samplers."""

from __future__ import annotations

import math
import sqlite3
from collections import Counter
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from .access import OpCounters
from .model import Instance, JoinSketchError, QuerySpec, ShapeKind, classify_query

__all__ = [
    "OpCounters",
    "OracleReport",
    "SizeGuardError",
    "OutOfSetError",
    "UniformityVerdict",
    "exact_eval",
    "exact_eval_sql",
    "chi2_quantile",
    "uniformity_test",
    "homogeneity_test",
    "accuracy_trials",
    "scaling_probe",
]

MAX_INTERMEDIATE = 10**7


class SizeGuardError(JoinSketchError):
    """The exact evaluation would materialise too many tuples."""


class OutOfSetError(JoinSketchError):
    """A sampler produced a tuple outside the query result: a correctness bug."""


@dataclass
class OracleReport:
    result_set: set[tuple[int, ...]]
    out: int
    out_join: int
    deg_map: dict[tuple[int, ...], int]
    per_start_reach: dict[int, int] | None = None

    def same_as(self, other: "OracleReport") -> bool:
        return (self.out == other.out and self.out_join == other.out_join
                and self.deg_map == other.deg_map)


def _per_start(spec: QuerySpec, deg_map: dict) -> dict[int, int] | None:
    kind = classify_query(spec).variant
    if kind not in (ShapeKind.MATRIX, ShapeKind.CHAIN):
        return None
    reach: Counter = Counter()
    for t in deg_map:
        reach[t[0]] += 1
    return dict(reach)


def _report(spec: QuerySpec, deg_map: dict) -> OracleReport:
    return OracleReport(set(deg_map), len(deg_map), sum(deg_map.values()), dict(deg_map),
                        _per_start(spec, deg_map))


def exact_eval(inst: Instance, spec: QuerySpec, limit: int = MAX_INTERMEDIATE) -> OracleReport:
    """Backtracking index join over all relations, then projection with witness counts."""
    rels = [(tuple(e), [tuple(r) for r in inst.relation(e).reordered(e).rows.tolist()])
            for e in spec.schemas]
    # join order: repeatedly take the relation sharing most already-bound attributes
    order, bound = [], set()
    left = list(range(len(rels)))
    while left:
        best = max(left, key=lambda i: (len(bound & set(rels[i][0])), -len(rels[i][1]), -i))
        order.append(best)
        left.remove(best)
        bound |= set(rels[best][0])
    plans = []
    seen: list[str] = []
    for i in order:
        schema, rows = rels[i]
        kpos = [p for p, a in enumerate(schema) if a in seen]
        npos = [p for p, a in enumerate(schema) if a not in seen]
        index: dict[tuple, list[tuple]] = {}
        for r in rows:
            index.setdefault(tuple(r[p] for p in kpos), []).append(tuple(r[p] for p in npos))
        kslots = [seen.index(schema[p]) for p in kpos]
        seen.extend(schema[p] for p in npos)
        plans.append((kslots, index))
    out_slots = [seen.index(a) for a in spec.output]
    deg: Counter = Counter()
    touched = 0
    stack: list[tuple[int, tuple]] = [(0, ())]
    while stack:
        level, partial = stack.pop()
        if level == len(plans):
            deg[tuple(partial[s] for s in out_slots)] += 1
            continue
        kslots, index = plans[level]
        for ext in index.get(tuple(partial[s] for s in kslots), ()):
            touched += 1
            if touched > limit:
                raise SizeGuardError(f"more than {limit} intermediate tuples")
            stack.append((level + 1, partial + ext))
    return _report(spec, dict(deg))


def exact_eval_sql(inst: Instance, spec: QuerySpec) -> OracleReport:
    """Independent evaluator: the same query as SQL over an in-memory sqlite database."""
    con = sqlite3.connect(":memory:")
    try:
        froms, where, first_col = [], [], {}
        for i, e in enumerate(spec.schemas):
            cols = ", ".join(f'"{a}" INTEGER' for a in e)
            con.execute(f"CREATE TABLE t{i} ({cols})")
            rows = inst.relation(e).reordered(e).rows.tolist()
            marks = ", ".join("?" for _ in e)
            con.executemany(f"INSERT INTO t{i} VALUES ({marks})", rows)
            froms.append(f"t{i}")
            for a in e:
                if a in first_col:
                    where.append(f'{first_col[a]} = t{i}."{a}"')
                else:
                    first_col[a] = f't{i}."{a}"'
        sel = ", ".join(first_col[a] for a in spec.output)
        sql = f"SELECT {sel}, COUNT(*) FROM {', '.join(froms)}"
        if where:
            sql += " WHERE " + " AND ".join(where)
        sql += f" GROUP BY {sel}"
        deg = {tuple(r[:-1]): r[-1] for r in con.execute(sql)}
    finally:
        con.close()
    return _report(spec, deg)


# ------------------------------------------------------------ chi-square


def chi2_quantile(p: float, dof: int) -> float:
    """Wilson-Hilferty approximation of the chi-square quantile.

    Relative error is below 1% for dof >= 10 and about 3% (on the conservative
    side) at dof = 1 for p = 0.999.
    """
    if dof <= 0:
        return math.inf
    z = NormalDist().inv_cdf(p)
    c = 2.0 / (9.0 * dof)
    return dof * max(1.0 - c + z * math.sqrt(c), 0.0) ** 3


@dataclass
class UniformityVerdict:
    chi_square: float
    dof: int
    threshold_quantile: float
    passed: bool
    max_abs_dev: float
    n_samples: int = 0
    empty_verdicts: int = 0
    counts: dict = field(default_factory=dict, repr=False)


def _chi_square(counts: Sequence[int], n: int) -> tuple[float, float]:
    k = len(counts)
    exp = n / k
    stat = sum((c - exp) ** 2 / exp for c in counts)
    dev = max(abs(c / n - 1 / k) for c in counts) if n else 0.0
    return stat, dev


def uniformity_test(sampler: Callable[[], Hashable | None], results: Iterable[Hashable],
                    n_samples: int, quantile: float = 0.999) -> UniformityVerdict:
    """Pearson chi-square of ``n_samples`` draws against the uniform law on ``results``.

    Raises OutOfSetError on any draw outside ``results``; empty verdicts are
    tallied separately and excluded from the statistic.
    """
    universe = set(results)
    if not universe:
        raise ValueError("empty result set")
    counts: Counter = Counter()
    empty = 0
    for _ in range(n_samples):
        t = sampler()
        if t is None:
            empty += 1
            continue
        if t not in universe:
            raise OutOfSetError(f"sample {t!r} is not a query result")
        counts[t] += 1
    n = n_samples - empty
    dof = len(universe) - 1
    if dof == 0 or n == 0:
        return UniformityVerdict(0.0, dof, math.inf, n > 0 or dof == 0, 0.0, n, empty, dict(counts))
    stat, dev = _chi_square([counts[t] for t in universe], n)
    q = chi2_quantile(quantile, dof)
    return UniformityVerdict(stat, dof, q, stat < q, dev, n, empty, dict(counts))


def homogeneity_test(a: Counter | dict, b: Counter | dict, quantile: float = 0.999) -> UniformityVerdict:
    """Two-sample chi-square: do two samples come from the same distribution?"""
    cats = [c for c in set(a) | set(b) if a.get(c, 0) + b.get(c, 0) > 0]
    na, nb = sum(a.values()), sum(b.values())
    dof = len(cats) - 1
    if dof <= 0 or na == 0 or nb == 0:
        return UniformityVerdict(0.0, max(dof, 0), math.inf, True, 0.0, na + nb)
    n = na + nb
    stat = 0.0
    dev = 0.0
    for c in cats:
        tot = a.get(c, 0) + b.get(c, 0)
        for obs, m in ((a.get(c, 0), na), (b.get(c, 0), nb)):
            exp = tot * m / n
            stat += (obs - exp) ** 2 / exp
        dev = max(dev, abs(a.get(c, 0) / na - b.get(c, 0) / nb))
    q = chi2_quantile(quantile, dof)
    return UniformityVerdict(stat, dof, q, stat < q, dev, n)


# ---------------------------------------------------------------- accuracy


def within(estimate: float, truth: float, eps: float) -> bool:
    if truth == 0:
        return estimate == 0
    return abs(estimate - truth) <= eps * truth


def accuracy_trials(counter: Callable[[], float], oracle_out: int, eps: float, runs: int) -> float:
    """Fraction of ``runs`` estimates with relative error at most eps."""
    if runs <= 0:
        raise ValueError("runs must be positive")
    return sum(within(counter(), oracle_out, eps) for _ in range(runs)) / runs


@dataclass
class ProbeRow:
    label: str
    n: int
    out: int
    mean_ops: float


def scaling_probe(run: Callable[[object, np.random.Generator], int],
                  family: Sequence[tuple[str, object, int, int]], reps: int,
                  rng: np.random.Generator) -> list[ProbeRow]:
    """Mean ops of ``run`` over ``reps`` calls for each (label, instance, N, OUT)."""
    rows = []
    for label, inst, n, out in family:
        total = sum(run(inst, rng) for _ in range(reps))
        rows.append(ProbeRow(label, n, out, total / reps))
    return rows
