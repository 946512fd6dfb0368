"""Hybrid heavy/light approximate counting for star-shaped queries (matrix is k = 2).

A B-value is heavy under guess Lambda when prod_{i>=2} |R_i ⋉ b| exceeds
Lambda^{(k-1)/k}; for the matrix that is |R_2 ⋉ b| > sqrt(Lambda). Heavy results
are counted with exact per-b join weights, light results with a capped rejection
sampler, and the two estimates are merged after subtracting their estimated
overlap.

Every public function takes a *target*: any prepared instance exposing ``core``
(a :class:`~joinsketch._starcore.StarCore`) and ``tie_last`` (the anchor rule
used by the acceptance step). Matrix and star instances both qualify.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Protocol

import numpy as np

from . import _starcore as sc
from .access import OpCounters, build_weighted_sampler, lower_median

TrialRunner = Callable[[int], "tuple[int, int]"]


class CountTarget(Protocol):
    core: sc.StarCore
    tie_last: bool


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _ceil(x: float) -> int:
    return int(math.ceil(x - 1e-12))


def root_floor(num: Fraction, k: int) -> int:
    """Largest integer m with m^k <= num."""
    if num < 1:
        return 0
    m = int(math.floor(float(num) ** (1.0 / k)))
    while m > 0 and m**k > num:
        m -= 1
    while (m + 1) ** k <= num:
        m += 1
    return m


def light_cap(Lambda, k: int) -> int:
    """floor(Lambda^{(k-1)/k}): the largest degree product a light b may have."""
    return root_floor(_frac(Lambda) ** (k - 1), k)


def is_heavy_product(prod: int, Lambda, k: int) -> bool:
    """prod > Lambda^{(k-1)/k}, decided exactly."""
    return Fraction(prod) ** k > _frac(Lambda) ** (k - 1)


def _degree_product(core: sc.StarCore, b: int, first: int = 0) -> int:
    p = 1
    for i in range(first, core.k):
        p *= core.deg_b(i, b)
    return p


@dataclass
class HeavySet:
    """Verified heavy B-values for one guess; ``mask[b]`` is 1 for members."""

    values: np.ndarray
    Lambda: Fraction
    threshold: float
    mask: np.ndarray = field(repr=False)

    @classmethod
    def of(cls, core: sc.StarCore, values: Iterable[int], Lambda) -> "HeavySet":
        """A heavy set with arbitrary members (no verification), for experiments."""
        Lam = _frac(Lambda)
        vals = np.array(sorted({int(v) for v in values}), dtype=np.int64)
        mask = np.zeros(core.arrays.dom + 1, dtype=np.uint8)
        mask[vals] = 1
        return cls(vals, Lam, float(Lam) ** ((core.k - 1) / core.k), mask)

    def __contains__(self, b: int) -> bool:
        return 0 <= b < len(self.mask) and bool(self.mask[b])

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class ThresholdResult:
    """An estimate, or None meaning the count is below the threshold."""

    estimate: float | None
    ops: int = 0
    rounds: int = 0

    @property
    def failed(self) -> bool:
        return self.estimate is None


@dataclass
class GuessState:
    Lambda: Fraction
    lam: Fraction
    tau: Fraction
    k_delta: int
    k_lambda: int


@dataclass
class OverlapFraction:
    beta: float
    sample_size: int


@dataclass
class GuessResult:
    """Everything one guess produced; kept for tests and diagnostics."""

    estimate: float
    heavy: HeavySet
    heavy_bound: int
    light_bound: int
    s_heavy: float | None
    s_light: float | None
    beta: float | None


@dataclass
class View:
    """A virtual sub-instance: the join restricted to heavy or light B-values.

    Nothing is copied; trials on a view reject B-values outside it. The light
    view smooths by ``dcap`` so each of its join tuples has trial probability
    1/(|R_1| dcap).
    """

    target: CountTarget
    heavy: HeavySet
    kind: str  # "heavy" or "light"

    @property
    def core(self) -> sc.StarCore:
        return self.target.core

    @property
    def dcap(self) -> int:
        return max(light_cap(self.heavy.Lambda, self.core.k), 1) if self.kind == "light" else 1

    @property
    def code(self) -> int:
        return sc.VIEW_HEAVY if self.kind == "heavy" else sc.VIEW_LIGHT

    def contains_b(self, b: int) -> bool:
        return (b in self.heavy) == (self.kind == "heavy")

    def b_values(self) -> list[int]:
        return [int(b) for b in self.core.b_values if self.contains_b(int(b))]

    def full_join_size(self) -> int:
        return sum(_degree_product(self.core, b) for b in self.b_values())

    def trial_bound(self) -> int:
        """W_eff: the inverse per-tuple trial probability."""
        if self.kind == "heavy":
            return self.full_join_size()
        return self.core.sizes[0] * self.dcap

    def sampler(self):
        if self.kind != "heavy":
            return _placeholder()
        bs = [b for b in self.b_values() if _degree_product(self.core, b) > 0]
        if not bs:
            return None
        return build_weighted_sampler(bs, [_degree_product(self.core, b) for b in bs]).arrays

    def runner(self, rng: np.random.Generator, counters: OpCounters | None = None) -> TrialRunner | None:
        ws = self.sampler()
        if ws is None:
            return None
        strategy = sc.STRATEGY_H if self.kind == "heavy" else sc.STRATEGY_L
        scratch, touched = self.core.work()
        arrays, mask, dcap, tie = self.core.arrays, self.heavy.mask, self.dcap, self.target.tie_last
        view = self.code

        def run(n: int) -> tuple[int, int]:
            hits, ops = sc.star_count_trials(arrays, ws, dcap, strategy, view, mask, tie, n, rng,
                                             scratch, touched)
            if counters is not None:
                counters.add(ops=ops, trials=n, accepted=hits)
            return hits, ops

        return run


_PLACEHOLDER = None


def _placeholder():
    global _PLACEHOLDER
    if _PLACEHOLDER is None:
        _PLACEHOLDER = build_weighted_sampler([0], [1]).arrays
    return _PLACEHOLDER


# ----------------------------------------------------------- heavy values


def detect_heavy(target: CountTarget, Lambda, delta: float, rng: np.random.Generator,
                 counters: OpCounters | None = None) -> HeavySet:
    """Sample rows of R_2..R_k and keep candidates whose degree product is heavy.

    Each relation gets ceil(N ln(N(k-1)/delta) / Lambda^{1/k}) draws, so any b
    with |R_i ⋉ b| > Lambda^{1/k} is seen with probability >= 1 - delta/(N(k-1)).
    Verification is exact, hence the output never contains a light value.
    """
    core = target.core
    Lam = _frac(Lambda)
    if Lam < 1:
        raise ValueError("Lambda must be at least 1")
    k = core.k
    n = core.n_total
    if n == 0:
        return HeavySet.of(core, [], Lam)
    draws = _ceil(n * math.log(n * (k - 1) / delta) / float(Lam) ** (1.0 / k))
    a = core.arrays
    cands = []
    ops = 0
    for i in range(1, k):
        if core.sizes[i] == 0:
            continue
        r = rng.integers(a.row_start[i], a.row_start[i + 1], size=draws)
        cands.append(a.rows_b[r])
        ops += draws
    heavy = []
    if cands:
        for b in np.unique(np.concatenate(cands)):
            ops += k - 1
            if is_heavy_product(_degree_product(core, int(b), 1), Lam, k):
                heavy.append(int(b))
    if counters is not None:
        counters.add(ops=ops, kind="detect_heavy")
    return HeavySet.of(core, heavy, Lam)


def split_instance(target: CountTarget, hs: HeavySet) -> tuple[View, View]:
    """(heavy view, light view) sharing the target's indices."""
    return View(target, hs, "heavy"), View(target, hs, "light")


def heavy_join_stats(view: View) -> int:
    """Exact full-join size of a heavy view."""
    return view.full_join_size()


# ------------------------------------------------------ threshold counter


def threshold_count(run_trials: TrialRunner, bound: int, tau, eps: float, delta: float,
                    start) -> ThresholdResult:
    """Guess-halving estimator for a trial whose per-tuple probability is 1/``bound``.

    Each round runs k_lambda = ceil(6 bound / (eps^2 lambda)) trials and scales
    the success count by bound / k_lambda, an unbiased estimate of the count.
    The lower median of k_delta = ceil(3 ln(2/delta)) rounds is returned once it
    reaches lambda. A level stops early as soon as enough rounds fell short
    that its median can no longer reach lambda; the output law is unchanged.
    """
    if bound <= 0:
        return ThresholdResult(None)
    tau = max(_frac(tau), Fraction(1, 2))
    lam = _frac(start)
    k_delta = _ceil(3 * math.log(2 / delta))
    need_fail = (k_delta - 1) // 2 + 1
    ops = rounds = 0
    # levels above the bound never validate: every round estimate is at most bound
    while lam > bound and lam / 2 >= tau:
        lam /= 2
    while lam >= tau:
        k_lam = _ceil(6 * bound / (eps * eps * float(lam)))
        ests = []
        short = 0
        for _ in range(k_delta):
            hits, o = run_trials(k_lam)
            ops += o
            rounds += 1
            s = hits * bound / k_lam
            ests.append(s)
            if s < lam:
                short += 1
                if short >= need_fail:
                    break
        if short < need_fail:
            med = lower_median(ests)
            if med >= lam:
                return ThresholdResult(float(med), ops, rounds)
        lam /= 2
    return ThresholdResult(None, ops, rounds)


def _start(target: CountTarget) -> int:
    return max(target.core.n_total, 1) ** target.core.k


def approx_count_with_threshold(view: View, bound: int, tau, eps: float, delta: float,
                                rng: np.random.Generator,
                                counters: OpCounters | None = None) -> ThresholdResult:
    """Count the results of ``view``, or None when they look fewer than ``tau``.

    ``bound`` must dominate the view's full-join size; the trial law is fixed by
    the view (exact weights for heavy, |R_1| * dcap for light).
    """
    run = view.runner(rng, counters)
    if run is None or bound <= 0:
        return ThresholdResult(None)
    return threshold_count(run, bound, tau, eps, delta, _start(view.target))


def combine(s_heavy: float | None, s_light: float | None, beta: float | None) -> float:
    """s^h + s^l - min(s^h, s^l beta); a missing side defers to the other."""
    if s_heavy is None and s_light is None:
        return 0.0
    if s_heavy is None:
        return s_light
    if s_light is None:
        return s_heavy
    return s_heavy + s_light - min(s_heavy, s_light * (beta or 0.0))


def intersect_estimate(target: CountTarget, heavy_view: View, light_view: View, eps: float,
                       delta: float, rng: np.random.Generator,
                       counters: OpCounters | None = None) -> OverlapFraction:
    """Fraction of light results that some heavy b also produces (additive eps).

    Draws ceil(ln(2/delta) / (2 eps^2)) uniform light results and scans the heavy
    values for a witness of each.
    """
    n = _ceil(math.log(2 / delta) / (2 * eps * eps))
    hs = heavy_view.heavy
    if len(hs) == 0:
        return OverlapFraction(0.0, n)
    core = target.core
    scratch, touched = core.work()
    hits, ops = sc.star_overlap(core.arrays, _placeholder(), light_view.dcap, hs.mask, hs.values,
                                n, target.tie_last, rng, scratch, touched)
    if counters is not None:
        counters.add(ops=ops, kind="overlap")
    return OverlapFraction(hits / n, n)


# -------------------------------------------------------- per-guess driver


def approx_count_with_guess(target: CountTarget, Lambda, eps: float, delta: float,
                            rng: np.random.Generator,
                            counters: OpCounters | None = None) -> GuessResult:
    """One hybrid estimate; accurate w.h.p. when Lambda <= 4 OUT, at most 2 OUT in mean."""
    Lam = _frac(Lambda)
    e1 = eps / 5
    hs = detect_heavy(target, Lam, delta / 4, rng, counters)
    hv, lv = split_instance(target, hs)
    tau = Fraction(e1) * Lam / 16
    hb = heavy_join_stats(hv)
    s_h = None
    if hb > 0:
        s_h = approx_count_with_threshold(hv, hb, tau, e1, delta / 4, rng, counters).estimate
    lb = lv.trial_bound()
    s_l = None
    if lb > 0:
        s_l = approx_count_with_threshold(lv, lb, tau, e1, delta / 4, rng, counters).estimate
    beta = None
    if s_h is not None and s_l is not None:
        beta = intersect_estimate(target, hv, lv, e1, delta / 4, rng, counters).beta
    return GuessResult(combine(s_h, s_l, beta), hs, hb, lb, s_h, s_l, beta)


def approx_count(target: CountTarget, eps: float, delta: float, rng: np.random.Generator,
                 counters: OpCounters | None = None) -> float:
    """Outer ladder: Lambda = N^k, N^k/2, ..., 1 with ceil(ln(2/delta)) guesses each.

    Returns the first lower median that reaches its Lambda, else 0. On the last
    rung (Lambda = 1) any positive median is returned: no trial can succeed when
    the result is empty, and an unbiased estimate of a count of 1 falls below 1
    about half of the time.

    An empty full join (checked in O(N)) returns 0 at once, which is what the
    ladder would return after every trial failed.
    """
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    core = target.core
    if not any(_degree_product(core, int(b)) for b in core.b_values):
        return 0.0
    reps = _ceil(math.log(2 / delta))
    Lam = Fraction(_start(target))
    while Lam >= 1:
        ests = [approx_count_with_guess(target, Lam, eps, delta / 2, rng, counters).estimate
                for _ in range(reps)]
        s = lower_median(ests)
        if s >= Lam or (Lam == 1 and s > 0):
            return float(s)
        Lam /= 2
    return 0.0
