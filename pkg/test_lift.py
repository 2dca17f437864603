#!/usr/bin/env python3
"""
Tests for semialgebraic lifting, enclosures and sqrt-leaf conversion
"""
import math
import os
import sys

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from nlcert import UnsupportedExpression
from nlcert import expr as ex
from nlcert.domain import BoxDomain
from nlcert.lift import BoundOptions, bound_sa, is_liftable, lift, lower_bound_sa, polarities, xconvert
from utils.helpers import run_test_functions


def test_liftable_nodes():
    assert is_liftable(ex.parse_formula("sqrt(x1)"))
    assert is_liftable(ex.parse_formula("x1/x2"))
    assert not is_liftable(ex.Div(ex.Var(0), ex.Constant(3)))
    assert not is_liftable(ex.parse_formula("x1*x2"))


def test_polarities_follow_signs():
    e = ex.parse_formula("x1 - atan(x2) + (-2)*max(x1, x2)")
    pol = polarities(e)
    assert pol[ex.parse_formula("atan(x2)")] == {-1}
    assert pol[ex.parse_formula("max(x1, x2)")] == {-1}
    assert pol[ex.Var(0)] == {1, -1}


def test_sqrt_lifting_layout():
    e = ex.parse_formula("sqrt(x1) + x2")
    lifted = lift(e, BoxDomain([(1, 4), (0, 1)]))
    assert lifted.num_lifted == 1
    assert lifted.n == 3
    # the objective grows with the sqrt, so z >= sqrt(x1) is all that is kept
    assert len(lifted.defining) == 2
    z = lifted.box[2]
    assert z.lo <= 1 and z.hi >= 2


def test_non_monotone_sqrt_keeps_both_sides():
    e = ex.parse_formula("sqrt(x1)*x2")
    lifted = lift(e, BoxDomain([(1, 4), (-1, 1)]))
    assert lifted.num_lifted == 1
    assert len(lifted.defining) == 3
    result = lower_bound_sa(e, BoxDomain([(1, 4), (-1, 1)]))
    assert -2.05 < result.bound <= -2.0 + 1e-6


def test_decreasing_division_is_one_sided():
    e = ex.parse_formula("x2 - 1/x1")
    lifted = lift(e, BoxDomain([(1, 2), (0, 1)]))
    assert len(lifted.defining) == 1
    result = lower_bound_sa(e, BoxDomain([(1, 2), (0, 1)]))
    assert abs(result.bound + 1.0) < 1e-4


def test_sqrt_lower_bound():
    result = lower_bound_sa(ex.parse_formula("sqrt(x1)"), BoxDomain([(1, 4)]))
    assert abs(result.bound - 1.0) < 1e-5


def test_division_lower_bound():
    result = lower_bound_sa(ex.parse_formula("1/x1"), BoxDomain([(1, 2)]))
    assert abs(result.bound - 0.5) < 1e-5


def test_max_of_opposites():
    result = lower_bound_sa(ex.parse_formula("max(x1, -x1)"), BoxDomain([(-1, 1)]),
                            BoundOptions(order=1))
    assert abs(result.bound) < 1e-5


def test_bound_sa_encloses_range():
    iv = bound_sa(ex.parse_formula("sqrt(x1) - x1"), BoxDomain([(1, 4)]))
    # sqrt(x) - x on [1, 4] ranges over [-2, 0]
    assert abs(float(iv.lo) + 2) < 1e-4
    assert abs(float(iv.hi)) < 1e-4


def test_certified_bound_collects_certificates():
    certificates = []
    options = BoundOptions(certify=True)
    iv = bound_sa(ex.parse_formula("x1^2 - x1"), BoxDomain([(0, 1)]), options, label="demo",
                  certificates=certificates)
    assert [c.label for c in certificates] == ["demo-lower", "demo-upper"]
    assert float(iv.lo) <= -0.25 and float(iv.lo) > -0.26
    assert float(iv.hi) >= 0.0


def test_transcendental_cannot_be_lifted():
    try:
        lift(ex.parse_formula("exp(x1)"), BoxDomain([(0, 1)]))
        raise AssertionError("expected UnsupportedExpression")
    except UnsupportedExpression:
        pass


def test_xconvert_substitutes_low_degree_leaves():
    e = ex.parse_formula("sqrt(x1) + x1")
    conversion = xconvert(e, BoxDomain([(1, 4)]), order=2)
    assert conversion.mode == "substitute"
    assert conversion.expr == ex.parse_formula("x1 + x1^2")
    assert conversion.box[0].lo <= 1 and conversion.box[0].hi >= 2
    assert conversion.to_converted_point([4.0]) == [2.0]
    assert conversion.convert(ex.parse_formula("x1 - 2")) == ex.parse_formula("x1^2 - 2")


def test_xconvert_links_high_degree_leaves():
    e = ex.parse_formula("sqrt(x1)*x1^2")
    conversion = xconvert(e, BoxDomain([(1, 4)]), order=2)
    assert conversion.mode == "link"
    assert conversion.box.n == 2
    assert len(conversion.links) == 2
    point = conversion.to_converted_point([4.0])
    assert point == [4.0, 2.0]
    assert math.isclose(ex.eval_float(conversion.expr, point), 32.0)


def test_xconvert_link_follows_polarity():
    box = BoxDomain([(1, 4)])
    y, x = ex.Var(1), ex.Var(0)
    rising = xconvert(ex.parse_formula("sqrt(x1) - x1^3"), box, order=2)
    assert rising.mode == "link"
    assert rising.links == [ex.Sub(ex.Pow(y, 2), x)]
    falling = xconvert(ex.parse_formula("x1^3 - sqrt(x1)"), box, order=2)
    assert falling.links == [ex.Sub(x, ex.Pow(y, 2))]


def test_enclosure_refinement_keeps_sqrt_defined():
    # the naive interval of the argument reaches below zero; its SOS range does not
    result = lower_bound_sa(ex.parse_formula("sqrt(x1^2 - 2*x1*x2 + x2^2 + 0.5)"), BoxDomain.unit(2))
    assert abs(result.bound - math.sqrt(0.5)) < 1e-4


if __name__ == "__main__":
    sys.exit(run_test_functions(globals(), "Semialgebraic lifting tests"))
