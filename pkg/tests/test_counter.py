import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from joinsketch import counting
from joinsketch.access import OpCounters, make_rng
from joinsketch.counting import (HeavySet, approx_count_with_guess, approx_count_with_threshold,
                                 combine, detect_heavy, heavy_join_stats, intersect_estimate,
                                 is_heavy_product, light_cap, root_floor, split_instance,
                                 threshold_count)
from joinsketch.matrix import approx_count_matrix, matrix_instance, prepare_matrix
from joinsketch.oracle import exact_eval

from builders import cartesian, filtered, ids, m1, random_matrix


@pytest.fixture(scope="module")
def M1():
    inst, spec = m1()
    return inst, spec, prepare_matrix(inst, spec)


def exact_heavy(mi, Lam):
    core = mi.core
    return {int(b) for b in core.b_values
            if is_heavy_product(counting._degree_product(core, int(b), 1), Lam, core.k)}


class TestArithmetic:
    @given(st.integers(1, 10**12), st.integers(1, 5))
    def test_root_floor(self, x, k):
        r = root_floor(Fraction(x), k)
        assert r ** k <= x < (r + 1) ** k

    @given(st.integers(1, 10**6))
    def test_light_cap_matrix(self, lam):
        assert light_cap(lam, 2) == math.isqrt(lam)

    def test_heavy_product_is_strict(self):
        assert not is_heavy_product(4, 16, 2)
        assert is_heavy_product(5, 16, 2)
        assert is_heavy_product(9, 8, 3) and not is_heavy_product(4, 8, 3)


class TestDetectHeavy:
    def test_detects_half_degree_value(self):
        n_half = 40
        r1 = [(i, 1000) for i in range(5)] + [(100 + i, 2000 + i) for i in range(n_half - 5)]
        r2 = [(1000, 3000 + j) for j in range(n_half)] + [(2000 + i, 5000 + i) for i in range(n_half - 5)]
        mi = matrix_instance(r1, r2)
        N = mi.n_total
        rng = make_rng(1)
        found = sum(1000 in detect_heavy(mi, N, 0.1, rng) for _ in range(100))
        assert found >= 90

    def test_all_light_gives_empty(self, M1, rng):
        for _ in range(20):
            assert len(detect_heavy(M1[2], 16, 0.1, rng)) == 0

    def test_lambda_below_one(self, M1, rng):
        with pytest.raises(ValueError):
            detect_heavy(M1[2], Fraction(1, 2), 0.1, rng)

    @given(st.integers(0, 2**32), st.integers(1, 64))
    def test_sound(self, seed, lam):
        gen = np.random.default_rng(seed)
        inst, spec = random_matrix(gen, 4, 5, 8, 12, 25)
        mi = prepare_matrix(inst, spec)
        hs = detect_heavy(mi, lam, 0.1, make_rng(seed))
        assert set(hs.values.tolist()) <= exact_heavy(mi, lam)


class TestViews:
    def test_empty_heavy_set(self, M1):
        mi = M1[2]
        hv, lv = split_instance(mi, HeavySet.of(mi.core, [], 16))
        assert heavy_join_stats(hv) == 0
        assert lv.full_join_size() == mi.hindex.W

    def test_all_heavy(self, M1):
        mi = M1[2]
        hv, lv = split_instance(mi, HeavySet.of(mi.core, mi.core.b_values, 16))
        assert heavy_join_stats(hv) == mi.hindex.W
        assert lv.full_join_size() == 0

    def test_m1_split_matches_filtered_copies(self, M1):
        inst, spec, mi = M1
        b1, b2, b3 = ids(inst, "b1", "b2", "b3")
        hv, lv = split_instance(mi, HeavySet.of(mi.core, [b1], 16))
        assert heavy_join_stats(hv) == 4
        heavy = exact_eval(filtered(inst, spec, "B", [b1]), spec)
        light = exact_eval(filtered(inst, spec, "B", [b2, b3]), spec)
        assert heavy.out_join == hv.full_join_size()
        assert light.out_join == lv.full_join_size()
        assert (heavy.out, light.out) == (4, 1)

    def test_light_trial_bound(self, M1):
        mi = M1[2]
        _, lv = split_instance(mi, HeavySet.of(mi.core, [], 16))
        assert lv.dcap == 4 and lv.trial_bound() == 16


def light_view(mi, Lam):
    return split_instance(mi, HeavySet.of(mi.core, [], Lam))[1]


class TestThreshold:
    def test_empty_view_fails(self, rng):
        mi = matrix_instance([(0, 5)], [(6, 7)])
        lv = light_view(mi, 16)
        assert approx_count_with_threshold(lv, lv.trial_bound(), 1, 0.2, 0.1, rng).failed

    def test_m1_light_view(self, M1):
        mi = M1[2]
        rng = make_rng(2)
        lv = light_view(mi, 16)
        ok = 0
        for _ in range(50):
            r = approx_count_with_threshold(lv, lv.trial_bound(), 1, 0.2, 0.1, rng)
            ok += r.estimate is not None and 3.2 <= r.estimate <= 4.8
        assert ok >= 45

    def test_injective_heavy_view_is_exact(self, rng):
        mi = matrix_instance([(0, 5)], [(5, 7), (5, 8)])
        hv, _ = split_instance(mi, HeavySet.of(mi.core, [5], 1))
        for _ in range(5):
            r = approx_count_with_threshold(hv, heavy_join_stats(hv), 1, 0.2, 0.1, rng)
            assert r.estimate == 2.0

    def test_reports_when_tau_at_most_half(self, M1):
        mi = M1[2]
        rng = make_rng(3)
        lv = light_view(mi, 16)
        ok = sum(approx_count_with_threshold(lv, 16, 2, 0.2, 0.1, rng).estimate is not None
                 for _ in range(30))
        assert ok >= 27

    def test_bottom_certifies_small_count(self, M1):
        """Outside the band OUT/2 < tau <= OUT a failure means OUT < tau, up to delta."""
        mi = M1[2]
        rng = make_rng(4)
        lv = light_view(mi, 16)
        wrong = runs = 0
        for tau in (1, 2, 8, 16):
            for _ in range(20):
                r = approx_count_with_threshold(lv, 16, tau, 0.2, 0.1, rng)
                runs += 1
                wrong += r.failed and 4 >= tau
        assert wrong <= 0.1 * runs

    def test_round_estimator_unbiased(self, M1):
        mi = M1[2]
        run = light_view(mi, 16).runner(make_rng(5))
        k = 600
        rounds = [run(k)[0] * 16 / k for _ in range(10000)]
        assert abs(np.mean(rounds) - 4) <= 0.02 * 4

    def test_threshold_with_exact_runner(self):
        """A deterministic runner whose success rate is exactly OUT/bound."""
        def run(n):
            return n * 3 // 12, n
        r = threshold_count(run, 12, 1, 0.2, 0.1, 12)
        assert r.estimate == pytest.approx(3, rel=0.01)
        assert threshold_count(lambda n: (0, n), 12, 1, 0.2, 0.1, 12).failed


class TestIntersect:
    def _instance(self, overlap: bool):
        # heavy value 100 links A{0..3} to C{10..13}; light values link a's to c's pairwise
        r1 = [(a, 100) for a in range(4)]
        r2 = [(100, c) for c in range(10, 14)]
        for i in range(4):
            b = 200 + i
            a = i if overlap else 20 + i
            r1.append((a, b))
            r2.append((b, 10 + i if overlap else 30 + i))
        return matrix_instance(r1, r2)

    def test_disjoint(self, rng):
        mi = self._instance(False)
        hv, lv = split_instance(mi, HeavySet.of(mi.core, [100], 64))
        assert intersect_estimate(mi, hv, lv, 0.2, 0.1, rng).beta == 0.0

    def test_superset(self, rng):
        mi = self._instance(True)
        hv, lv = split_instance(mi, HeavySet.of(mi.core, [100], 64))
        f = intersect_estimate(mi, hv, lv, 0.2, 0.1, rng)
        assert f.beta >= 0.8 and f.sample_size == int(np.ceil(np.log(20) / 0.08))

    def test_partial_overlap(self):
        r1 = [(a, 100) for a in range(2)] + [(a, 200 + a) for a in range(4)]
        r2 = [(100, 10), (100, 11)] + [(200 + a, 10 + a) for a in range(4)]
        mi = matrix_instance(r1, r2)
        hv, lv = split_instance(mi, HeavySet.of(mi.core, [100], 64))
        rng = make_rng(6)
        betas = [intersect_estimate(mi, hv, lv, 0.1, 0.1, rng).beta for _ in range(20)]
        assert sum(abs(b - 0.5) <= 0.1 for b in betas) >= 18

    def test_no_heavy(self, M1, rng):
        mi = M1[2]
        hv, lv = split_instance(mi, HeavySet.of(mi.core, [], 16))
        assert intersect_estimate(mi, hv, lv, 0.2, 0.1, rng).beta == 0.0


class TestCombine:
    @given(st.one_of(st.none(), st.floats(0, 1e6)), st.one_of(st.none(), st.floats(0, 1e6)),
           st.floats(0, 1))
    def test_clipping(self, sh, sl, beta):
        v = combine(sh, sl, beta)
        assert v >= 0
        if sh is not None and sl is not None:
            assert min(sh, sl * beta) <= sh
            assert v >= max(sh, sl) - min(sh, sl * beta) - 1e-9
            assert v <= sh + sl + 1e-9

    def test_cases(self):
        assert combine(None, None, None) == 0
        assert combine(3.0, None, None) == 3.0
        assert combine(None, 2.0, None) == 2.0
        assert combine(4.0, 2.0, 0.5) == 5.0


class TestGuess:
    def test_empty_result_gives_zero(self, rng):
        mi = matrix_instance([(0, 5), (1, 6)], [(7, 9)])
        assert approx_count_with_guess(mi, 4, 0.2, 0.1, rng).estimate == 0

    def test_m1_correct_guess(self, M1):
        mi = M1[2]
        rng = make_rng(7)
        ok = sum(3 <= approx_count_with_guess(mi, 4, 0.25, 0.1, rng).estimate <= 5 for _ in range(50))
        assert ok >= 45

    def test_heavy_part_empty_reduces_to_light(self, M1, rng):
        g = approx_count_with_guess(M1[2], 16, 0.25, 0.1, rng)
        assert len(g.heavy) == 0 and g.s_heavy is None and g.estimate == (g.s_light or 0.0)


class TestApproxCount:
    def test_empty(self, rng):
        mi = matrix_instance([(0, 5), (1, 6)], [(7, 9)])
        assert approx_count_matrix(mi, 0.2, 0.1, rng) == 0

    def test_m1(self, M1):
        mi = M1[2]
        rng = make_rng(8)
        ok = sum(3 <= approx_count_matrix(mi, 0.25, 0.1, rng) <= 5 for _ in range(50))
        assert ok >= 45

    def test_cartesian_64(self):
        inst, spec = cartesian(8, 4, 8)
        mi = prepare_matrix(inst, spec)
        rng = make_rng(9)
        ok = sum(abs(approx_count_matrix(mi, 0.2, 0.1, rng) - 64) <= 0.2 * 64 for _ in range(10))
        assert ok >= 9

    def test_single_result(self, rng):
        mi = matrix_instance([(0, 5)], [(5, 9)])
        assert approx_count_matrix(mi, 0.2, 0.1, rng) == 1.0

    def test_counts_ops(self, M1, rng):
        c = OpCounters()
        approx_count_matrix(M1[2], 0.2, 0.1, rng, c)
        assert c.ops > 0 and c.trials > 0

    def test_parameter_bounds(self, M1, rng):
        with pytest.raises(ValueError):
            approx_count_matrix(M1[2], 0, 0.1, rng)

    def test_accepts_plain_instance(self, rng):
        inst, _ = cartesian(1, 1, 2)
        assert approx_count_matrix(inst, 0.2, 0.1, rng) == pytest.approx(2, rel=0.2)
