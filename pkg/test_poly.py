#!/usr/bin/env python3
"""
Tests for exact polynomial arithmetic, bounds and rescaling
"""
import os
import sys
from fractions import Fraction

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from nlcert import DimensionError, UnsupportedExpression
from nlcert import expr as ex
from nlcert.domain import BoxDomain
from nlcert.poly import (Polynomial, count_monomials, from_expr, from_text, interval_bound,
                         monomials_up_to, rescale_to_unit_box)
from utils.helpers import run_test_functions


def _xy():
    return Polynomial.variable(0, 2), Polynomial.variable(1, 2)


def test_arithmetic_identities():
    x, y = _xy()
    square = (x - y) ** 2
    assert square == x * x - 2 * x * y + y * y
    assert (square - square).is_zero()
    assert square.degree() == 2
    assert square.coefficient((1, 1)) == Fraction(-2)


def test_monomial_enumeration():
    monos = monomials_up_to(2, 2)
    assert monos[0] == (0, 0)
    assert len(monos) == count_monomials(2, 2) == 6
    assert all(sum(a) <= sum(b) for a, b in zip(monos, monos[1:]))


def test_exact_and_float_evaluation():
    x, y = _xy()
    p = x * x * y - Fraction(1, 3) * y + 2
    assert p.eval_exact([Fraction(1, 2), 3]) == Fraction(1, 4) * 3 - 1 + 2
    values = p.eval_float(np.array([[0.5, 3.0], [1.0, -1.0]]))
    assert abs(values[0] - 1.75) < 1e-12
    assert abs(values[1] - (-1.0 + 1.0 / 3 + 2.0)) < 1e-12


def test_interval_bound_is_sound():
    x, y = _xy()
    p = x * y - x * x + y
    box = BoxDomain([(-1, 2), (Fraction(1, 2), 3)])
    iv = interval_bound(p, box)
    grid = np.array([[a, b] for a in np.linspace(-1, 2, 31) for b in np.linspace(0.5, 3, 31)])
    values = p.eval_float(grid)
    assert float(iv.lo) <= values.min() and values.max() <= float(iv.hi)


def test_rescale_to_unit_box():
    x, y = _xy()
    p = x * x + 3 * y
    box = BoxDomain([(-2, 2), (1, 5)])
    q, affine = rescale_to_unit_box(p, box)
    for u in ([0, 0], [Fraction(1, 2), Fraction(1, 4)], [1, 1]):
        assert q.eval_exact(u) == p.eval_exact(affine.to_original(u))
    assert affine.to_unit([2, 5]) == [1, 1]


def test_text_round_trip():
    x, y = _xy()
    p = Fraction(-7, 3) * x ** 3 * y + Fraction(1, 2) * y - 5
    assert from_text(p.to_text(), 2) == p
    assert from_text("0", 2).is_zero()
    try:
        from_text("1/2*x3", 2)
        raise AssertionError("expected ValueError")
    except ValueError:
        pass


def test_from_expr_accepts_constant_division():
    e = ex.parse_formula("(x1 - x2)^2/4 + x1/2")
    x, y = _xy()
    assert from_expr(e, 2) == Fraction(1, 4) * (x - y) ** 2 + Fraction(1, 2) * x
    try:
        from_expr(ex.parse_formula("1/x1"), 2)
        raise AssertionError("expected UnsupportedExpression")
    except UnsupportedExpression:
        pass


def test_dimension_mismatch():
    try:
        Polynomial.variable(0, 2) + Polynomial.variable(0, 3)
        raise AssertionError("expected DimensionError")
    except DimensionError:
        pass


if __name__ == "__main__":
    sys.exit(run_test_functions(globals(), "Polynomial tests"))
