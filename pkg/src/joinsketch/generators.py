"""Instance families with known output sizes.

Each family returns the instance, its query spec and a manifest with N and,
where the construction fixes them, OUT and OUT_join. Value ids are allocated
per attribute in disjoint ranges so the active domains never overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .access import make_rng
from .model import Instance, JoinSketchError, QuerySpec, Relation

FAMILIES = ("matrix-cartesian", "matrix-disjointness", "star-disjointness", "chain-d0d1", "zipf-random")


class GeneratorError(JoinSketchError):
    """Parameters outside the family's bounds."""


@dataclass
class GeneratorSpec:
    family: str
    params: dict[str, Any] = field(default_factory=dict)
    seed: int = 0


@dataclass
class Generated:
    instance: Instance
    spec: QuerySpec
    manifest: dict[str, Any]


class _Ids:
    """Hands out consecutive id blocks, one per attribute."""

    def __init__(self) -> None:
        self.next = 0

    def block(self, n: int) -> np.ndarray:
        out = np.arange(self.next, self.next + n, dtype=np.int64)
        self.next += n
        return out


def _rel(schema, pairs) -> Relation:
    return Relation(tuple(schema), np.asarray(pairs, dtype=np.int64).reshape(-1, len(schema)))


def _product(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if len(xs) == 0 or len(ys) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)


def _int(params: dict, key: str, default=None) -> int:
    if key not in params:
        if default is None:
            raise GeneratorError(f"missing parameter {key!r}")
        return default
    try:
        return int(params[key])
    except (TypeError, ValueError):
        raise GeneratorError(f"parameter {key!r} must be an integer") from None


def _isqrt_exact(x: int, what: str) -> int:
    r = math.isqrt(x)
    if r * r != x:
        raise GeneratorError(f"{what} = {x} must be a perfect square")
    return r


def _manifest(family: str, gs: GeneratorSpec, inst: Instance, **extra) -> dict[str, Any]:
    m = {"family": family, "params": dict(gs.params), "seed": gs.seed, "n": inst.n_total}
    m.update(extra)
    return m


def matrix_cartesian(gs: GeneratorSpec) -> list[Generated]:
    """R_1 = A x B, R_2 = B x C with |A| = |C| = sqrt(OUT) and |B| = N / (2 sqrt(OUT)).

    Either ``out`` and ``n`` or explicit ``a``, ``b``, ``c`` sizes.
    """
    p = gs.params
    if "out" in p:
        out, n = _int(p, "out"), _int(p, "n")
        s = _isqrt_exact(out, "out")
        if s == 0 or n % (2 * s):
            raise GeneratorError("n must be a positive multiple of 2*sqrt(out)")
        a = c = s
        b = n // (2 * s)
    else:
        a, b, c = _int(p, "a"), _int(p, "b"), _int(p, "c")
    if min(a, b, c) < 1:
        raise GeneratorError("domain sizes must be positive")
    ids = _Ids()
    A, B, C = ids.block(a), ids.block(b), ids.block(c)
    inst = Instance((_rel(("A", "B"), _product(A, B)), _rel(("B", "C"), _product(B, C))))
    spec = QuerySpec.of([("A", "B"), ("B", "C")], ("A", "C"))
    return [Generated(inst, spec, _manifest("matrix-cartesian", gs, inst, out=a * c, out_join=a * b * c))]


def _disjoint_sets(rng: np.random.Generator, m: int, size: int, k: int, common: bool) -> list[np.ndarray]:
    """k pairwise disjoint subsets of [m] of the given size; optionally one shared element."""
    if size < 1 or k * size > m:
        raise GeneratorError(f"cannot place {k} disjoint sets of size {size} in a universe of {m}")
    perm = rng.permutation(m)
    sets = [np.sort(perm[i * size:(i + 1) * size]) for i in range(k)]
    if common:
        star = sets[0][0]
        sets = [sets[0]] + [np.sort(np.concatenate(([star], s[1:]))) for s in sets[1:]]
    return sets


def star_disjointness(gs: GeneratorSpec) -> list[Generated]:
    """R_i = adom(A_i) x S_i with |adom(A_i)| = K^{1/k} and |S_i| = m/(2k).

    ``intersect=1`` plants exactly one common element, giving OUT = prod |adom(A_i)|;
    otherwise the S_i are disjoint and OUT = 0.
    """
    p = gs.params
    k = _int(p, "k", 3)
    K = _int(p, "K")
    m = _int(p, "m")
    common = bool(_int(p, "intersect", 1))
    side = round(K ** (1.0 / k))
    while side**k > K:
        side -= 1
    while (side + 1) ** k <= K:
        side += 1
    if side**k != K or side < 1:
        raise GeneratorError(f"K = {K} must be a perfect {k}-th power")
    if k < 2:
        raise GeneratorError("k must be at least 2")
    rng = make_rng(gs.seed)
    sets = _disjoint_sets(rng, m, m // (2 * k), k, common)
    ids = _Ids()
    adoms = [ids.block(side) for _ in range(k)]
    bvals = ids.block(m)
    names = [f"A{i + 1}" for i in range(k)]
    rels = tuple(_rel((names[i], "B"), _product(adoms[i], bvals[sets[i]])) for i in range(k))
    inst = Instance(rels)
    spec = QuerySpec.of([r.schema for r in rels], names)
    out = K if common else 0
    return [Generated(inst, spec, _manifest("star-disjointness", gs, inst, out=out, out_join=out))]


def matrix_disjointness(gs: GeneratorSpec) -> list[Generated]:
    """R_1 = adom(A) x S_A, R_2 = S_B x adom(C) with |adom(A)| = |adom(C)| = sqrt(K), |S_A| = |S_B| = m/4."""
    p = gs.params
    K = _int(p, "K")
    m = _int(p, "m")
    common = bool(_int(p, "intersect", 1))
    s = _isqrt_exact(K, "K")
    rng = make_rng(gs.seed)
    SA, SB = _disjoint_sets(rng, m, m // 4, 2, common)
    ids = _Ids()
    A, bvals, C = ids.block(s), ids.block(m), ids.block(s)
    inst = Instance((_rel(("A", "B"), _product(A, bvals[SA])), _rel(("B", "C"), _product(bvals[SB], C))))
    spec = QuerySpec.of([("A", "B"), ("B", "C")], ("A", "C"))
    out = K if common else 0
    return [Generated(inst, spec, _manifest("matrix-disjointness", gs, inst, out=out, out_join=out))]


def _random_cells(rng: np.random.Generator, rows: np.ndarray, cols: np.ndarray, count: int) -> np.ndarray:
    """``count`` distinct uniformly random cells of rows x cols."""
    total = len(rows) * len(cols)
    if count > total:
        raise GeneratorError(f"cannot draw {count} distinct cells from {total}")
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    flat = rng.choice(total, size=count, replace=False)
    return np.stack([rows[flat // len(cols)], cols[flat % len(cols)]], axis=1)


def chain_d0d1(gs: GeneratorSpec) -> list[Generated]:
    """The paired 3-chain distributions D0 (OUT = L*Delta) and D1 (OUT = theta*L*Delta).

    dom(A) = {a_ij : i < 3n, j < sqrt(Delta)}, dom(B) = {b_i}, dom(C) = {c_i},
    dom(D) like dom(A). With |B_alpha| = |C_alpha| = n/sqrt(Delta), R_1 links
    each b_i in B_alpha to its sqrt(Delta) values a_ij, R_3 does the same for C,
    and R_2 places x random tuples in B_alpha x C_alpha, n - x in each mixed
    block and x in B_beta x C_beta, with x = L for D0 and theta*L for D1.
    Both members use the same seed for everything except R_2's counts.
    """
    p = gs.params
    n = _int(p, "n")
    theta = _int(p, "theta", 2)
    L = _int(p, "L", 1)
    Delta = _int(p, "Delta")
    r = _isqrt_exact(Delta, "Delta")
    if theta < 2:
        raise GeneratorError("theta must be at least 2")
    if Delta * L * theta > n * n:
        raise GeneratorError("need Delta * L <= n^2 / theta")
    if (theta + 1) * L > n:
        raise GeneratorError("need (theta + 1) * L <= n")
    if n % r:
        raise GeneratorError("n must be a multiple of sqrt(Delta)")
    m = n // r
    ids = _Ids()
    A = ids.block(3 * n * r).reshape(3 * n, r)
    Bv = ids.block(3 * n)
    Cv = ids.block(3 * n)
    D = ids.block(3 * n * r).reshape(3 * n, r)
    base = make_rng(gs.seed)
    b_perm = base.permutation(3 * n)
    c_perm = base.permutation(3 * n)
    b_alpha, b_beta = np.sort(b_perm[:m]), np.sort(b_perm[m:])
    c_alpha, c_beta = np.sort(c_perm[:m]), np.sort(c_perm[m:])
    r1 = np.array([(A[i, j], Bv[i]) for i in b_alpha for j in range(r)], dtype=np.int64)
    r3 = np.array([(Cv[i], D[i, j]) for i in c_alpha for j in range(r)], dtype=np.int64)
    r2_seed = int(base.integers(0, 2**63))
    out = []
    for tag, x in (("D0", L), ("D1", theta * L)):
        rng = make_rng(r2_seed)
        blocks = [
            _random_cells(rng, Bv[b_alpha], Cv[c_alpha], x),
            _random_cells(rng, Bv[b_alpha], Cv[c_beta], n - x),
            _random_cells(rng, Bv[b_beta], Cv[c_alpha], n - x),
            _random_cells(rng, Bv[b_beta], Cv[c_beta], x),
        ]
        r2 = np.concatenate(blocks)
        inst = Instance((_rel(("A", "B"), r1), _rel(("B", "C"), r2), _rel(("C", "D"), r3)))
        spec = QuerySpec.of([("A", "B"), ("B", "C"), ("C", "D")], ("A", "D"))
        out.append(Generated(inst, spec, _manifest("chain-d0d1", gs, inst, out=x * Delta,
                                                   distribution=tag, planted=x)))
    return out


def zipf_random(gs: GeneratorSpec) -> list[Generated]:
    """Random matrix, star or chain instance whose join values follow a Zipf law.

    Parameters: ``shape`` (matrix, star or chain), ``k``, ``n`` tuples per
    relation, ``domain`` values per attribute and exponent ``s`` (times 100,
    since parameters are integers; default 120). Only N is promised.
    """
    p = gs.params
    shape = str(p.get("shape", "matrix"))
    k = 2 if shape == "matrix" else _int(p, "k", 3)
    n = _int(p, "n")
    dom = _int(p, "domain", max(2, n // 2))
    s = _int(p, "s", 120) / 100.0
    if n > dom * dom:
        raise GeneratorError("n exceeds domain^2 distinct pairs")
    rng = make_rng(gs.seed)
    weights = 1.0 / np.arange(1, dom + 1) ** s
    weights /= weights.sum()
    ids = _Ids()
    if shape in ("matrix", "star"):
        names = ["A", "C"] if shape == "matrix" else [f"A{i + 1}" for i in range(k)]
        leaves = [ids.block(dom) for _ in range(k)]
        center = ids.block(dom)
        rels = []
        for i in range(k):
            pairs = _distinct_pairs(rng, n, lambda m: leaves[i][rng.integers(0, dom, m)],
                                    lambda m: center[rng.choice(dom, m, p=weights)])
            schema = (names[i], "B")
            if shape == "matrix" and i == 1:
                schema, pairs = ("B", "C"), pairs[:, ::-1]
            rels.append(_rel(schema, pairs))
        output = tuple(names)
    elif shape == "chain":
        names = [f"A{i + 1}" for i in range(k + 1)]
        layers = [ids.block(dom) for _ in range(k + 1)]
        rels = []
        for i in range(k):
            pairs = _distinct_pairs(rng, n, lambda m: layers[i][rng.choice(dom, m, p=weights)],
                                    lambda m: layers[i + 1][rng.choice(dom, m, p=weights)])
            rels.append(_rel((names[i], names[i + 1]), pairs))
        output = (names[0], names[-1])
    else:
        raise GeneratorError(f"unknown shape {shape!r}")
    inst = Instance(tuple(rels))
    spec = QuerySpec.of([r.schema for r in rels], output)
    return [Generated(inst, spec, _manifest("zipf-random", gs, inst))]


def _distinct_pairs(rng, n: int, left: Callable, right: Callable, max_rounds: int = 1000) -> np.ndarray:
    got: dict[tuple[int, int], None] = {}
    for _ in range(max_rounds):
        need = n - len(got)
        if need <= 0:
            break
        for pair in zip(left(2 * need).tolist(), right(2 * need).tolist()):
            got.setdefault(pair, None)
            if len(got) == n:
                break
    if len(got) < n:
        raise GeneratorError("could not draw enough distinct pairs; enlarge the domain")
    return np.array(list(got), dtype=np.int64)


_DISPATCH = {
    "matrix-cartesian": matrix_cartesian,
    "matrix-disjointness": matrix_disjointness,
    "star-disjointness": star_disjointness,
    "chain-d0d1": chain_d0d1,
    "zipf-random": zipf_random,
}


def generate(gs: GeneratorSpec) -> list[Generated]:
    """Build the family's instance(s); chain-d0d1 yields the D0 and D1 pair."""
    try:
        fn = _DISPATCH[gs.family]
    except KeyError:
        raise GeneratorError(f"unknown family {gs.family!r}; choose from {', '.join(FAMILIES)}") from None
    return fn(gs)
