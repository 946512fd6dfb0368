from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from joinsketch.access import OpCounters, make_rng
from joinsketch.matrix import (LightConfig, build_h_index, default_budget, join_sample_h,
                               join_sample_l, matrix_accept, matrix_accept_detail, matrix_instance,
                               prepare_matrix, sample_matrix, sample_matrix_trial)
from joinsketch.model import Instance, QuerySpec, Relation, ShapeError
from joinsketch.oracle import chi2_quantile, exact_eval, uniformity_test

from builders import binom_tol, ids, m1, random_matrix


@pytest.fixture(scope="module")
def M1():
    inst, spec = m1()
    return inst, spec, prepare_matrix(inst, spec)


def triples(inst):
    """The full join of R_1(A,B) and R_2(B,C) by brute force."""
    r1 = inst.relation(("A", "B")).reordered(("A", "B")).tuples()
    r2 = inst.relation(("B", "C")).reordered(("B", "C")).tuples()
    return {(a, b, c) for a, b in r1 for b2, c in r2 if b == b2}


class TestHIndex:
    def test_m1_weights(self, M1):
        inst, _, mi = M1
        w = dict(zip(mi.hindex.b_values.tolist(), mi.hindex.weights.tolist()))
        b1, b2, b3 = ids(inst, "b1", "b2", "b3")
        assert (w[b1], w[b2], w[b3]) == (4, 1, 0)
        assert mi.hindex.W == 5

    @given(st.integers(0, 2**32))
    def test_w_equals_full_join_size(self, seed):
        rng = np.random.default_rng(seed)
        inst, spec = random_matrix(rng, 5, 4, 5, int(rng.integers(0, 20)), int(rng.integers(0, 20)))
        mi = prepare_matrix(inst, spec)
        assert mi.hindex.W == exact_eval(inst, spec).out_join == len(triples(inst))

    def test_masked_index(self, M1):
        inst, _, mi = M1
        mask = np.zeros(mi.core.arrays.dom + 1, dtype=np.uint8)
        mask[ids(inst, "b1")[0]] = 1
        assert build_h_index(mi.core, mask).W == 4

    def test_wrong_shape(self):
        inst = Instance((Relation(("A", "B"), np.zeros((0, 2), dtype=np.int64)),))
        with pytest.raises(ShapeError):
            prepare_matrix(inst, QuerySpec.of([("A", "B")], ("A", "B")))


class TestJoinSampleH:
    def test_uniform_over_full_join(self, M1, rng):
        inst, _, mi = M1
        n = 50000
        c = Counter(join_sample_h(mi, None, rng) for _ in range(n))
        assert set(c) == triples(inst)
        for v in c.values():
            assert abs(v / n - 0.2) <= binom_tol(0.2, n)

    def test_zero_weight_value_never_drawn(self, M1, rng):
        inst, _, mi = M1
        b3 = ids(inst, "b3")[0]
        assert all(join_sample_h(mi, None, rng)[1] != b3 for _ in range(5000))

    def test_single_triple(self, rng):
        mi = matrix_instance([(0, 5)], [(5, 9)])
        assert {join_sample_h(mi, None, rng) for _ in range(50)} == {(0, 5, 9)}

    def test_empty_join(self, rng):
        mi = matrix_instance([(0, 5)], [(6, 9)])
        with pytest.raises(ValueError):
            join_sample_h(mi, None, rng)


class TestJoinSampleL:
    def test_success_probability(self, M1, rng):
        inst, _, mi = M1
        n = 50000
        draws = [join_sample_l(mi, LightConfig(2), rng) for _ in range(n)]
        ok = [d for d in draws if d is not None]
        assert abs(len(ok) / n - 5 / 8) <= binom_tol(5 / 8, n)
        c = Counter(ok)
        assert set(c) == triples(inst)
        for v in c.values():
            assert abs(v / len(ok) - 0.2) <= binom_tol(0.2, len(ok))

    def test_dangling_b_always_fails(self, rng):
        mi = matrix_instance([(0, 5)], [(6, 9)])
        assert all(join_sample_l(mi, LightConfig(3), rng) is None for _ in range(200))

    def test_regular_instance_never_smoothed(self, rng):
        mi = matrix_instance([(0, 5), (1, 6)], [(5, 8), (5, 9), (6, 8), (6, 9)])
        assert all(join_sample_l(mi, LightConfig(2), rng) is not None for _ in range(500))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LightConfig(0)


class TestAccept:
    def test_half_for_degree_two(self, M1, rng):
        inst, _, mi = M1
        a1, b1, c1 = ids(inst, "a1", "b1", "c1")
        n = 100000
        acc = sum(matrix_accept(mi, (a1, b1, c1), rng) for _ in range(n))
        assert abs(acc / n - 0.5) <= 0.01

    def test_expected_failures(self, M1, rng):
        inst, _, mi = M1
        a1, b1, c1 = ids(inst, "a1", "b1", "c1")
        n = 100000
        tot = 0
        for _ in range(n):
            _, f, s = matrix_accept_detail(mi, (a1, b1, c1), rng)
            assert s == 2
            tot += f + 1
        assert abs(tot / n - 1.0) <= 0.05

    def test_unique_witness_always_accepted(self, M1, rng):
        inst, _, mi = M1
        a2, b1, c2 = ids(inst, "a2", "b1", "c2")
        assert all(matrix_accept(mi, (a2, b1, c2), rng) for _ in range(500))

    def test_precondition(self, M1, rng):
        inst, _, mi = M1
        a3, b1, c1 = ids(inst, "a3", "b1", "c1")
        with pytest.raises(ValueError):
            matrix_accept(mi, (a3, b1, c1), rng)

    def test_every_result_on_random_instances(self):
        rng = make_rng(11)
        gen = np.random.default_rng(3)
        for _ in range(3):
            inst, spec = random_matrix(gen, 5, 5, 5, 15, 15)
            mi = prepare_matrix(inst, spec)
            rep = exact_eval(inst, spec)
            for a, b, c in sorted(triples(inst)):
                n = 4000
                acc = sum(matrix_accept(mi, (a, b, c), rng) for _ in range(n))
                p = 1 / rep.deg_map[(a, c)]
                assert abs(acc / n - p) <= binom_tol(p, n, 4) + 1e-9


class TestTrials:
    def test_h_per_trial_probability(self, M1, rng):
        inst, _, mi = M1
        n = 50000
        c = Counter(sample_matrix_trial(mi, "H", rng).result for _ in range(n))
        results = exact_eval(*M1[:2]).result_set
        assert set(c) - {None} == results
        for t in results:
            assert abs(c[t] / n - 0.2) <= binom_tol(0.2, n)

    def test_l_per_trial_probability(self, M1, rng):
        _, _, mi = M1
        n = 50000
        ok = sum(sample_matrix_trial(mi, "L", rng, LightConfig(2)).result is not None for _ in range(n))
        assert abs(ok / n - 0.5) <= binom_tol(0.5, n)

    def test_empty_result_all_bottom(self, rng):
        mi = matrix_instance([(0, 5), (1, 6)], [(7, 9)])
        for s in ("H", "L"):
            assert all(sample_matrix_trial(mi, s, rng).result is None for _ in range(100))

    def test_unknown_strategy(self, M1, rng):
        with pytest.raises(ValueError):
            sample_matrix_trial(M1[2], "X", rng)

    @pytest.mark.parametrize("strategy", ["H", "L"])
    def test_equal_per_trial_probability(self, strategy):
        """Every result has the same trial probability (chi-square on trial outcomes)."""
        rng = make_rng(8)
        inst, spec = random_matrix(np.random.default_rng(21), 6, 4, 6, 14, 14)
        mi = prepare_matrix(inst, spec)
        rep = exact_eval(inst, spec)
        n = 200000 if strategy == "L" else 100000
        c = Counter(sample_matrix_trial(mi, strategy, rng).result for _ in range(n))
        hits = {t: c[t] for t in rep.result_set}
        assert set(c) - {None} == rep.result_set
        tot = sum(hits.values())
        exp = tot / len(hits)
        stat = sum((v - exp) ** 2 / exp for v in hits.values())
        assert stat < chi2_quantile(0.999, len(hits) - 1)
        w_eff = mi.hindex.W if strategy == "H" else len(mi.r1) * mi.max_deg2
        assert abs(tot / n - rep.out / w_eff) <= binom_tol(rep.out / w_eff, n, 4)


class TestSampleMatrix:
    def test_m1_uniform(self, M1, rng):
        inst, spec, mi = M1
        v = uniformity_test(lambda: sample_matrix(mi, "H", rng=rng), exact_eval(inst, spec).result_set, 100000)
        assert v.passed and v.empty_verdicts == 0

    def test_m1_uniform_light(self, M1, rng):
        inst, spec, mi = M1
        v = uniformity_test(lambda: sample_matrix(mi, "L", rng=rng), exact_eval(inst, spec).result_set, 40000)
        assert v.passed and v.empty_verdicts == 0

    def test_empty_verdict(self, rng):
        mi = matrix_instance([(0, 5), (1, 6)], [(7, 9)])
        assert sample_matrix(mi, "H", rng=rng) is None
        assert sample_matrix(mi, "L", rng=rng, budget=50) is None

    def test_budget_must_be_positive(self, M1, rng):
        with pytest.raises(ValueError):
            sample_matrix(M1[2], "H", budget=0, rng=rng)

    def test_rng_required(self, M1):
        with pytest.raises(ValueError):
            sample_matrix(M1[2], "H")

    def test_independent_draws(self, M1, rng):
        """Consecutive samples: joint law of ordered pairs is the product of the marginals."""
        mi = M1[2]
        n = 40000
        pairs = Counter((sample_matrix(mi, "H", rng=rng), sample_matrix(mi, "H", rng=rng)) for _ in range(n))
        assert len(pairs) == 16
        exp = n / 16
        stat = sum((v - exp) ** 2 / exp for v in pairs.values())
        assert stat < chi2_quantile(0.999, 15)

    def test_counters(self, M1, rng):
        c = OpCounters()
        sample_matrix(M1[2], "H", rng=rng, counters=c)
        assert c.accepted == 1 and c.trials >= 1 and c.ops > 0

    def test_default_budget_scales_with_weight(self, M1):
        mi = M1[2]
        assert default_budget(mi, "H") < default_budget(mi, "L", LightConfig(100))

    def test_seeded_repeatable(self, M1):
        mi = M1[2]
        a = [sample_matrix(mi, "H", rng=make_rng(4)) for _ in range(3)]
        b = [sample_matrix(mi, "H", rng=make_rng(4)) for _ in range(3)]
        assert a == b


@given(st.integers(0, 2**32))
def test_full_join_bounded_by_n_sqrt_out(seed):
    rng = np.random.default_rng(seed)
    inst, spec = random_matrix(rng, 6, 5, 6, int(rng.integers(1, 30)), int(rng.integers(1, 30)))
    rep = exact_eval(inst, spec)
    assert rep.out_join <= inst.n_total * rep.out ** 0.5 + 1e-9
