#!/usr/bin/env python3
"""
Tests for quadratic maxplus estimators, their envelopes and Remez approximations
"""
import math
import os
import sys
from fractions import Fraction

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from nlcert import ApproximationError
from nlcert import expr as ex
from nlcert.domain import Interval
from nlcert.maxplus import (FUNCTIONS, Orientation, function_entry, maxplus_envelope, over_estimator, remez,
                            under_estimator)
from utils.helpers import run_test_functions

RUN_SLOW = os.getenv("NLCERT_RUN_SLOW") == "1"

CASES = [
    ('arctan', Interval(Fraction(-2), Fraction(3)), [-1.5, 0.0, 0.7, 2.5]),
    ('exp', Interval(Fraction(-1), Fraction(2)), [-0.5, 1.0, 1.9]),
    ('log', Interval(Fraction(1, 10), Fraction(5)), [0.2, 1.0, 4.0]),
    ('sin', Interval(Fraction(-3), Fraction(4)), [-2.0, 0.5, 3.0]),
    ('cos', Interval(Fraction(0), Fraction(6)), [1.0, 3.0, 5.5]),
]


def _grid(iv: Interval, count: int = 2001) -> np.ndarray:
    lo, hi = iv.as_floats()
    return np.linspace(lo, hi, count)


def test_estimators_are_sound():
    for name, iv, points in CASES:
        fn = function_entry(name)
        xs = _grid(iv)
        values = fn(xs)
        for a in points:
            under = under_estimator(fn, iv, a)
            over = over_estimator(fn, iv, a)
            assert np.all(under.eval_float(xs) <= values + 1e-12), (name, a)
            assert np.all(over.eval_float(xs) >= values - 1e-12), (name, a)


def _random_pairs(rng: np.random.Generator, name: str, count: int):
    """(interval, control point) pairs inside the domain of name"""
    for _ in range(count):
        lo = float(rng.uniform(0.05, 5.0)) if name == "log" else float(rng.uniform(-5.0, 5.0))
        hi = lo + float(rng.uniform(0.01, 4.0))
        yield Interval(Fraction(lo), Fraction(hi)), float(rng.uniform(lo, hi))


def _soundness_sweep(samples: int, exact_samples: int):
    rng = np.random.default_rng(2024)
    for name in FUNCTIONS:
        fn = function_entry(name)
        for iv, a in _random_pairs(rng, name, 100):
            xs = _grid(iv, samples)
            values = fn(xs)
            slack = 8 * np.spacing(np.abs(values)) + 1e-12
            under = under_estimator(fn, iv, a)
            over = over_estimator(fn, iv, a)
            assert np.all(under.eval_float(xs) <= values + slack), (name, iv, a)
            assert np.all(over.eval_float(xs) >= values - slack), (name, iv, a)
            for x in xs[:: max(1, samples // exact_samples)]:
                value = float(fn.f(float(x)))
                ulp = Fraction(2 * math.ulp(value))
                assert under.eval_exact(float(x)) <= Fraction(value) + ulp, (name, iv, a, x)
                assert over.eval_exact(float(x)) >= Fraction(value) - ulp, (name, iv, a, x)


def test_estimators_are_sound_on_random_intervals():
    _soundness_sweep(1000, 5)


def test_estimators_are_sound_on_dense_grids():
    if not RUN_SLOW:
        print("   (skipped: set NLCERT_RUN_SLOW=1)")
        return
    _soundness_sweep(10 ** 4, 50)


def test_estimators_touch_at_control_point():
    for name, iv, points in CASES:
        fn = function_entry(name)
        for a in points:
            under = under_estimator(fn, iv, a)
            assert abs(float(under.eval_exact(a)) - fn.f(a)) < 1e-12
            assert under.eval_exact(a) <= Fraction(fn.f(a))


def test_more_points_tighten_the_envelope():
    for name, iv, points in CASES:
        xs = _grid(iv)
        values = function_entry(name)(xs)
        gaps = []
        for k in range(1, len(points) + 1):
            envelope = maxplus_envelope(name, iv, points[:k])
            gap = values - envelope.eval_float(xs)
            assert gap.min() >= -1e-12
            gaps.append(gap.max())
        assert all(later <= earlier + 1e-12 for earlier, later in zip(gaps, gaps[1:])), name


def test_over_envelope_is_min_of_pieces():
    iv = Interval(Fraction(0), Fraction(1))
    envelope = maxplus_envelope('exp', iv, [0.0, 1.0], Orientation.OVER)
    node = envelope.to_expr(ex.Var(0))
    assert isinstance(node, ex.Min)
    assert abs(ex.eval_float(node, [0.5]) - float(envelope.eval_float(0.5))) < 1e-12
    single = maxplus_envelope('exp', iv, [0.5]).to_expr(ex.Var(0))
    assert isinstance(single, ex.Sub)


def test_arctan_curvature_constant():
    gamma = function_entry('atan').gamma(Interval(Fraction(-1), Fraction(1)))
    assert 9 / (16 * math.sqrt(3)) <= float(gamma) <= 0.325
    narrow = function_entry('arctan').gamma(Interval(Fraction(2), Fraction(3)))
    assert float(narrow) < float(gamma)


def test_exp_estimator_at_zero():
    iv = Interval(Fraction(0), Fraction(1))
    under = under_estimator('exp', iv, 0.0)
    assert abs(float(under.F) - 1.0) < 1e-15
    assert under.D == 1
    assert abs(float(under.gamma) - math.e / 2) < 1e-9
    assert float(under.gamma) >= math.e / 2


def test_domain_and_containment_checks():
    try:
        under_estimator('log', Interval(Fraction(0), Fraction(1)), 0.5)
        raise AssertionError("expected ApproximationError")
    except ApproximationError:
        pass
    try:
        under_estimator('exp', Interval(Fraction(0), Fraction(1)), 2.0)
        raise AssertionError("expected ApproximationError")
    except ApproximationError:
        pass
    try:
        maxplus_envelope('exp', Interval(Fraction(0), Fraction(1)), [])
        raise AssertionError("expected ApproximationError")
    except ApproximationError:
        pass


def test_remez_degree_zero_of_identity():
    approx = remez(lambda t: t, Interval(Fraction(-1), Fraction(1)), 0)
    assert abs(float(approx.coefficients[0])) < 1e-12
    assert 1.0 <= float(approx.eta) < 1.0 + 1e-5


def test_remez_exp_cubic():
    iv = Interval(Fraction(0), Fraction(1))
    approx = remez('exp', iv, 3)
    assert 2e-4 < float(approx.eta) < 1e-3
    assert float(approx.eta) >= approx.levelled_error
    assert approx.alternation_count(math.exp) >= 5
    xs = _grid(iv, 5001)
    assert np.all(np.abs(np.exp(xs) - approx.eval_float(xs)) <= float(approx.eta))


def test_remez_beats_an_envelope_of_the_same_size():
    # four control points against a cubic: the minimax fit is far tighter
    iv = Interval(Fraction(0), Fraction(1))
    xs = _grid(iv, 5001)
    values = np.exp(xs)
    envelope = maxplus_envelope("exp", iv, [0.0, 1 / 3, 2 / 3, 1.0])
    envelope_gap = float(np.max(values - envelope.eval_float(xs)))
    approx = remez("exp", iv, 3)
    lower = approx.to_expr(ex.Var(0), Orientation.UNDER)
    remez_gap = max(math.exp(x) - ex.eval_float(lower, [x]) for x in xs[::50])
    assert 0 < remez_gap <= 2 * float(approx.eta) + 1e-12
    assert remez_gap < envelope_gap
    assert np.all(values - envelope.eval_float(xs) >= -1e-12)


def test_remez_expression_orientation():
    iv = Interval(Fraction(0), Fraction(1))
    approx = remez('exp', iv, 2)
    lower = approx.to_expr(ex.Var(0), Orientation.UNDER)
    upper = approx.to_expr(ex.Var(0), Orientation.OVER)
    for x in np.linspace(0, 1, 101):
        assert ex.eval_float(lower, [x]) <= math.exp(x) <= ex.eval_float(upper, [x])


def test_dictionary_entries():
    assert set(FUNCTIONS) == {'arctan', 'exp', 'log', 'sin', 'cos'}
    try:
        function_entry('tanh')
        raise AssertionError("expected ApproximationError")
    except ApproximationError:
        pass


if __name__ == "__main__":
    sys.exit(run_test_functions(globals(), "Maxplus approximation tests"))
