#!/usr/bin/env python3
"""
Tests for SOS relaxations over boxes
"""
import os
import sys
from fractions import Fraction

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from nlcert import RelaxationError
from nlcert.domain import BoxDomain
from nlcert.poly import Polynomial, count_monomials, monomials_up_to
from nlcert.sos import PopInstance, box_constraints, box_pop, build_relaxation, has_equality_pairs, lower_bound
from utils.helpers import run_test_functions

RUN_SLOW = os.getenv("NLCERT_RUN_SLOW") == "1"


def random_quartic(rng: np.random.Generator, n: int) -> Polynomial:
    """Small integer coefficients on every monomial of degree <= 4, plus x1^4 so the degree is exactly 4"""
    monomials = monomials_up_to(n, 4)
    coefficients = rng.integers(-3, 4, size=len(monomials))
    terms = {alpha: Fraction(int(c)) for alpha, c in zip(monomials, coefficients)}
    top = (4,) + (0,) * (n - 1)
    terms[top] = terms.get(top, Fraction(0)) + 1
    return Polynomial(n, terms)


def test_univariate_quadratic_minimum():
    x = Polynomial.variable(0, 1)
    pop, _ = box_pop(x * x - x, BoxDomain([(0, 1)]), order=1, scale=False)
    lam, gram = lower_bound(pop)
    assert abs(lam + 0.25) < 1e-6
    assert gram.residual < 1e-6
    assert min(gram.min_eigenvalues()) > -1e-8


def test_square_of_difference_is_nonnegative():
    x, y = Polynomial.variable(0, 2), Polynomial.variable(1, 2)
    pop, affine = box_pop(x * x + y * y - 2 * x * y, BoxDomain.uniform(-1, 1, 2), order=1)
    lam, _ = lower_bound(pop)
    assert abs(lam) < 1e-6
    assert affine is not None and pop.box == BoxDomain.unit(2)


def test_relaxation_sizes():
    x, y = Polynomial.variable(0, 2), Polynomial.variable(1, 2)
    pop, _ = box_pop(x ** 4 + y ** 2, BoxDomain.unit(2), order=2)
    prob, layout = build_relaxation(pop)
    assert prob.block_sizes[0] == count_monomials(2, 2) == 6
    assert prob.num_constraints == count_monomials(2, 4) - 1
    assert len(layout.bases) == 1 + len(pop.constraints)


def test_box_constraints_with_bound_squares():
    box = BoxDomain([(Fraction(-1, 2), 2)])
    plain = box_constraints(box)
    squared = box_constraints(box, bound_squares=True)
    assert len(plain) == 2 and len(squared) == 4
    x = Polynomial.variable(0, 1)
    assert squared[-1] == Polynomial.constant(4, 1) - x * x


def test_equality_pair_program_reaches_bound():
    # y - x over x == y has minimum 0; the multipliers of the pair run off along a ray
    x, y = Polynomial.variable(0, 2), Polynomial.variable(1, 2)
    pop = PopInstance(y - x, box_constraints(BoxDomain.unit(2)) + [x - y, y - x], order=1, box=BoxDomain.unit(2))
    assert has_equality_pairs(pop)
    lam, gram = lower_bound(pop)
    assert abs(lam) < 1e-5
    assert gram.residual < 1e-6


def test_one_sided_constraints_are_not_pairs():
    x = Polynomial.variable(0, 1)
    pop, _ = box_pop(x ** 3 - x, BoxDomain([(-1, 1)]), order=2)
    assert not has_equality_pairs(pop)
    lam, _ = lower_bound(pop)
    assert abs(lam + 2 / (3 * 3 ** 0.5)) < 1e-4


def test_order_too_small_is_rejected():
    x = Polynomial.variable(0, 1)
    try:
        PopInstance(x ** 4, [], order=1)
        raise AssertionError("expected RelaxationError")
    except RelaxationError:
        pass


def _order_sweep(count: int, n: int):
    rng = np.random.default_rng(7)
    for _ in range(count):
        f = random_quartic(rng, n)
        pop, _ = box_pop(f, BoxDomain.uniform(-1, 1, n), order=2)
        low, _ = lower_bound(pop)
        high, _ = lower_bound(pop.with_order(3))
        assert high >= low - 1e-6 * (1 + abs(low)), (f.to_text(), low, high)
        samples = rng.random((500, n))
        assert high <= float(pop.objective.eval_float(samples).min()) + 1e-6, f.to_text()


def test_lambda_grows_with_the_order():
    _order_sweep(3, 2)


def test_lambda_grows_with_the_order_in_three_variables():
    if not RUN_SLOW:
        print("   (skipped: set NLCERT_RUN_SLOW=1)")
        return
    _order_sweep(10, 3)


def test_lambda_stays_below_sampled_values():
    rng = np.random.default_rng(11)
    for _ in range(5):
        n = int(rng.integers(1, 4))
        f = random_quartic(rng, n)
        pop, _ = box_pop(f, BoxDomain.uniform(-1, 1, n), order=2, bound_squares=True)
        lam, _ = lower_bound(pop)
        samples = rng.random((2000, n))
        assert lam <= float(pop.objective.eval_float(samples).min()) + 1e-6, f.to_text()


if __name__ == "__main__":
    sys.exit(run_test_functions(globals(), "SOS relaxation tests"))
