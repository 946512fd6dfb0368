from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from joinsketch.access import make_rng, randbelow
from joinsketch.model import Instance, QuerySpec, Relation
from joinsketch.oracle import (OutOfSetError, SizeGuardError, accuracy_trials, chi2_quantile,
                               exact_eval, exact_eval_sql, homogeneity_test, scaling_probe,
                               uniformity_test, within)

from builders import (c1, cartesian, ids, m1, naive_matrix, random_acyclic, random_chain,
                      random_matrix, random_star)


def random_case(seed: int, kind: str):
    g = np.random.default_rng(seed)
    if kind == "matrix":
        return random_matrix(g, 6, 5, 6, int(g.integers(0, 30)), int(g.integers(0, 30)))
    if kind in ("star3", "star4"):
        return random_star(g, int(kind[-1]), 4, 4, 8)
    if kind in ("chain3", "chain4"):
        return random_chain(g, int(kind[-1]), 5, 10)
    return random_acyclic(g, 3, 10)


class TestExactEval:
    def test_m1(self):
        inst, spec = m1()
        rep = exact_eval(inst, spec)
        a1, c1_ = ids(inst, "a1", "c1")
        assert (rep.out, rep.out_join, rep.deg_map[(a1, c1_)]) == (4, 5, 2)
        assert rep.deg_map == naive_matrix(inst)

    def test_chain_reach(self):
        inst, spec = c1()
        rep = exact_eval(inst, spec)
        a1, a2 = ids(inst, "a1", "a2")
        assert rep.per_start_reach == {a1: 2, a2: 2}
        assert sum(rep.per_start_reach.values()) == rep.out

    def test_empty(self):
        inst = Instance((Relation(("A", "B"), np.zeros((0, 2), dtype=np.int64)),
                         Relation(("B", "C"), np.zeros((0, 2), dtype=np.int64))))
        rep = exact_eval(inst, QuerySpec.of([("A", "B"), ("B", "C")], ("A", "C")))
        assert (rep.out, rep.out_join, rep.result_set) == (0, 0, set())

    def test_injective_projection(self):
        inst, spec = c1()
        rep = exact_eval(inst, spec.full())
        assert rep.out == rep.out_join == 6

    def test_size_guard(self):
        inst, spec = cartesian(20, 20, 20)
        with pytest.raises(SizeGuardError):
            exact_eval(inst, spec, limit=1000)

    @given(st.integers(0, 2**32), st.sampled_from(["matrix", "star3", "star4", "chain3", "chain4", "acyclic"]))
    def test_two_evaluators_agree(self, seed, kind):
        inst, spec = random_case(seed, kind)
        a, b = exact_eval(inst, spec), exact_eval_sql(inst, spec)
        assert a.same_as(b) and a.result_set == b.result_set
        assert a.out == len(a.result_set)

    @given(st.integers(0, 2**32))
    def test_matrix_matches_naive_loop(self, seed):
        inst, spec = random_case(seed, "matrix")
        rep = exact_eval(inst, spec)
        assert rep.deg_map == naive_matrix(inst)
        assert sum(rep.deg_map.values()) == rep.out_join


class TestChiSquare:
    @pytest.mark.parametrize("p,dof,table", [(0.999, 1, 10.828), (0.95, 5, 11.070),
                                             (0.999, 10, 29.588), (0.999, 100, 149.449),
                                             (0.99, 1000, 1106.969)])
    def test_quantile_close_to_table(self, p, dof, table):
        q = chi2_quantile(p, dof)
        tol = 0.04 if dof < 10 else 0.01
        assert abs(q - table) <= tol * table

    def test_zero_dof(self):
        assert chi2_quantile(0.999, 0) == float("inf")


class TestUniformity:
    def test_constant_sampler_fails(self):
        assert not uniformity_test(lambda: 1, [1, 2, 3], 300).passed

    def test_single_result_passes(self):
        assert uniformity_test(lambda: 1, [1], 10).passed

    def test_out_of_set_is_hard_error(self):
        with pytest.raises(OutOfSetError):
            uniformity_test(lambda: 9, [1, 2], 10)

    def test_empty_verdicts_tallied(self):
        it = iter([None, 1, 2] * 100)
        v = uniformity_test(lambda: next(it), [1, 2], 300)
        assert v.empty_verdicts == 100 and v.n_samples == 200 and v.passed

    def test_calibration(self):
        """The reference uniform sampler fails about 0.1% of the time at the 0.999 quantile."""
        rng = make_rng(17)
        reps, k, n = 3000, 10, 200
        fails = sum(not uniformity_test(lambda: int(randbelow(rng, k)), range(k), n).passed
                    for _ in range(reps))
        expected = reps * 0.001
        assert abs(fails - expected) <= 3 * (expected ** 0.5) + 1

    def test_homogeneity(self):
        rng = np.random.default_rng(3)
        a = Counter(rng.integers(0, 5, 5000).tolist())
        b = Counter(rng.integers(0, 5, 5000).tolist())
        assert homogeneity_test(a, b).passed
        skew = Counter(rng.choice(5, 5000, p=[0.4, 0.15, 0.15, 0.15, 0.15]).tolist())
        assert not homogeneity_test(a, skew).passed


class TestAccuracy:
    def test_within(self):
        assert within(0, 0, 0.1) and not within(0.1, 0, 0.1)
        assert within(9, 10, 0.1) and not within(8.9, 10, 0.1)

    def test_exact_counter(self):
        assert accuracy_trials(lambda: 10.0, 10, 0.2, 5) == 1.0

    def test_zero_counter(self):
        assert accuracy_trials(lambda: 0.0, 10, 0.2, 5) == 0.0

    def test_runs_positive(self):
        with pytest.raises(ValueError):
            accuracy_trials(lambda: 1.0, 1, 0.2, 0)


def test_scaling_probe_means():
    rows = scaling_probe(lambda inst, rng: inst, [("x", 4, 10, 1), ("y", 8, 10, 4)], 3, make_rng(0))
    assert [(r.label, r.mean_ops) for r in rows] == [("x", 4), ("y", 8)]
