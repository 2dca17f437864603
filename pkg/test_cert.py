#!/usr/bin/env python3
"""
Tests for exact certificate extraction, checking and the certificate file format
"""
import os
import sys
from dataclasses import replace
from fractions import Fraction

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from nlcert import CertificateError, PSDRepairFailed
from nlcert.cert import (CheckVerdict, certificate_to_text, certify, check, lambda_candidates, ldl_squares,
                         parse_certificate, rationalize, repair_and_decompose, round_matrix, sum_of_squares)
from nlcert import expr as ex
from nlcert.domain import BoxDomain
from nlcert.driver import VerdictStatus, solve
from nlcert.poly import Polynomial, monomials_up_to
from nlcert.sos import box_pop, lower_bound
from utils.config_manager import Config
from utils.helpers import run_test_functions

BENCH_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'bench')
RUN_SLOW = os.getenv('NLCERT_RUN_SLOW') == '1'
SLACK = Fraction(-1, 1000)


def _square_pop():
    x, y = Polynomial.variable(0, 2), Polynomial.variable(1, 2)
    pop, _ = box_pop(x * x + y * y - 2 * x * y, BoxDomain.uniform(-1, 1, 2), order=1, scale=False)
    return pop


def _certified_square():
    pop = _square_pop()
    _, gram = lower_bound(pop)
    cert, report = certify(gram, pop, threshold=SLACK)
    return pop, cert, report


def test_ldl_of_psd_matrix():
    M = [[Fraction(2), Fraction(-1)], [Fraction(-1), Fraction(2)]]
    squares = ldl_squares(M)
    assert squares is not None and all(w > 0 for w, _ in squares)
    rebuilt = [[sum(w * c[i] * c[j] for w, c in squares) for j in range(2)] for i in range(2)]
    assert rebuilt == M


def test_ldl_rejects_indefinite_matrix():
    assert ldl_squares([[Fraction(1), Fraction(2)], [Fraction(2), Fraction(1)]]) is None


def test_psd_repair_uses_small_power_of_two():
    M = round_matrix(np.array([[1.0, 1.0], [1.0, 1.0 - 1e-7]]), 2 ** 30)
    _, delta = repair_and_decompose(M)
    assert delta > 0
    assert delta.numerator == 1 and delta.denominator & (delta.denominator - 1) == 0
    try:
        repair_and_decompose([[Fraction(1), Fraction(3)], [Fraction(3), Fraction(1)]])
        raise AssertionError("expected PSDRepairFailed")
    except PSDRepairFailed:
        pass


def test_square_of_difference_certifies():
    pop, cert, report = _certified_square()
    assert report.verdict == CheckVerdict.VERIFIED, report.message
    assert report.certified_bound >= SLACK
    assert report.certified_bound <= Fraction(1, 1000)
    # the identity holds exactly
    identity = cert.objective - cert.lam - cert.sigma(0) - cert.remainder
    for j, g in enumerate(cert.multipliers, start=1):
        identity = identity - cert.sigma(j) * g
    assert identity.is_zero()
    assert check(cert, pop, threshold=SLACK).verified


def test_lambda_candidates_round_to_nearest_then_floor():
    assert lambda_candidates(-2.5e-9, 2 ** 10) == [Fraction(0), Fraction(-1, 1024)]
    assert lambda_candidates(0.25, 2 ** 10) == [Fraction(1, 4)]
    nearest, floor = lambda_candidates(0.1, 2 ** 10)
    assert nearest == Fraction(0.1).limit_denominator(2 ** 10)
    assert floor <= Fraction(0.1) and (floor * 2 ** 10).denominator == 1


def test_rationalized_lambda_on_the_floor_grid():
    pop = _square_pop()
    _, gram = lower_bound(pop)
    floor = lambda_candidates(gram.lam, 2 ** 10)[-1]
    cert = rationalize(gram, pop, denom_limit=2 ** 10, lam=floor)
    assert cert.lam == floor <= Fraction(gram.lam)
    assert (cert.lam * 2 ** 10).denominator == 1
    assert len(cert.squares) == len(pop.constraints) + 1


def test_tight_goal_certifies_exactly_zero():
    # (x1 - x2)^2 >= 0 touches zero, so only an exact lambda of 0 proves it
    pop = _square_pop()
    _, gram = lower_bound(pop)
    cert, report = certify(gram, pop, threshold=Fraction(0))
    assert report.verdict == CheckVerdict.VERIFIED, report.message
    assert report.certified_bound == 0
    assert cert.lam == 0
    assert cert.remainder.is_zero()


def test_tight_goal_proves_through_the_driver():
    problem = ex.parse_problem("x1^2 - 2*x1*x2 + x2^2 >= 0 on [-1, 1]^2")
    verdict = solve(problem, Config())
    assert verdict.status == VerdictStatus.PROVED, verdict.message
    assert verdict.bound == 0


def test_tampered_lambda_is_rejected():
    pop, cert, _ = _certified_square()
    forged = replace(cert, lam=cert.lam + Fraction(1, 10))
    assert check(forged, pop, threshold=SLACK).verdict == CheckVerdict.REJECTED


def test_tampered_square_is_rejected():
    pop, cert, _ = _certified_square()
    squares = [list(block) for block in cert.squares]
    weight, q = squares[0][0]
    squares[0][0] = (weight * 2, q)
    forged = replace(cert, squares=squares)
    assert check(forged, pop, threshold=SLACK).verdict == CheckVerdict.REJECTED


def test_inflated_bound_is_rejected():
    pop, cert, _ = _certified_square()
    forged = replace(cert, certified_bound=cert.certified_bound + 1)
    assert check(forged, pop, threshold=SLACK).verdict == CheckVerdict.REJECTED


def test_threshold_not_reached():
    pop, cert, _ = _certified_square()
    report = check(cert, pop, threshold=Fraction(1, 2))
    assert report.verdict == CheckVerdict.REMAINDER_TOO_LARGE


def test_wrong_problem_raises_mismatch():
    pop, cert, _ = _certified_square()
    other = pop.with_objective(pop.objective + 1)
    try:
        check(cert, other)
        raise AssertionError("expected CertificateError")
    except CertificateError as exc:
        assert exc.mismatch


def test_file_format_round_trip():
    pop, cert, _ = _certified_square()
    text = certificate_to_text({'name': 'square', 'status': 'Proved'}, [cert])
    parsed = parse_certificate(text)
    assert parsed.header['name'] == 'square'
    assert len(parsed.links) == 1
    link = parsed.links[0]
    assert link.lam == cert.lam and link.remainder == cert.remainder
    assert check(link, pop, threshold=SLACK).verified


def test_malformed_files():
    for text in ["", "not-a-certificate\n", "nlcert-v1\nlinks: 1\n", "nlcert-v1\nbegin goal\nlambda: 1/0\n"]:
        try:
            parse_certificate(text)
            raise AssertionError(f"expected CertificateError for {text!r}")
        except CertificateError:
            pass


def test_sum_of_squares_expansion():
    x = Polynomial.variable(0, 1)
    sigma = sum_of_squares([(Fraction(1, 2), x + 1), (Fraction(3), x)], 1)
    assert sigma == Fraction(1, 2) * (x + 1) ** 2 + 3 * x * x


def _certificate_sweep(count: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(1, 4))
        monomials = monomials_up_to(n, 4)
        coefficients = rng.integers(-3, 4, size=len(monomials))
        terms = {alpha: Fraction(int(c)) for alpha, c in zip(monomials, coefficients)}
        top = (4,) + (0,) * (n - 1)
        terms[top] = terms.get(top, Fraction(0)) + 1
        f = Polynomial(n, terms)
        pop, _ = box_pop(f, BoxDomain.uniform(-1, 1, n), order=2)
        _, gram = lower_bound(pop)
        cert, report = certify(gram, pop, threshold=Fraction(-10 ** 6))
        assert report.verdict == CheckVerdict.VERIFIED, (f.to_text(), report.message)
        assert check(cert, pop, threshold=Fraction(-10 ** 6)).verified
        samples = rng.random((1000, n))
        assert float(report.certified_bound) <= float(pop.objective.eval_float(samples).min()) + 1e-9
        assert float(report.certified_bound) >= gram.lam - 1e-3 * (1 + abs(gram.lam)), f.to_text()


def test_random_polynomials_certify():
    _certificate_sweep(6, 3)


def test_fifty_random_polynomials_certify():
    if not RUN_SLOW:
        print("   (skipped: set NLCERT_RUN_SLOW=1)")
        return
    _certificate_sweep(50, 5)


def test_certified_bound_grows_with_the_denominator_limit():
    pop = _square_pop()
    _, gram = lower_bound(pop)
    bounds = []
    for limit in (2 ** 10, 2 ** 20, 2 ** 30):
        _, report = certify(gram, pop, limit, threshold=Fraction(-1))
        assert report.verified, report.message
        bounds.append(report.certified_bound)
    assert all(later >= earlier - Fraction(1, 10 ** 9) for earlier, later in zip(bounds, bounds[1:]))


def test_caprasse_certified_bound():
    if not RUN_SLOW:
        print("   (skipped: set NLCERT_RUN_SLOW=1)")
        return
    problem = ex.load_problem(os.path.join(BENCH_DIR, 'caprasse.nlc'))
    verdict = solve(problem, Config().with_options(problem.options))
    assert verdict.status == VerdictStatus.PROVED, verdict.message
    assert 1e-6 <= verdict.bound <= 3e-6
    interval = verdict.reports[-1].remainder_interval
    assert float(interval.hi - interval.lo) <= 1e-6


if __name__ == "__main__":
    sys.exit(run_test_functions(globals(), "Certificate tests"))
