"""
Lasserre/Putinar sum-of-squares relaxations
Builds the order-k SOS program f - lambda = sigma_0 + sum_j sigma_j g_j,
solves it and returns floating Gram decompositions
"""
import logging
import math
import time
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from nlcert import DimensionError, RelaxationError
from nlcert.domain import BoxDomain
from nlcert.poly import (AffineMap, Monomial, Polynomial, add_monomials,
                         monomials_up_to, rescale_to_unit_box)
from nlcert.sdp import SdpProblem, SdpSolution, SdpStatus, SdpTolerances, solve as sdp_solve

sos_logger = logging.getLogger("nlcert.sos")

# Non-optimal SDP exits are still usable below these thresholds
ACCEPT_INFEASIBILITY = 1e-6
ACCEPT_GAP = 1e-5
# Cost weight on trace(X) for programs whose plain solve is ill-posed
TRACE_PENALTY = 1e-8


@dataclass
class PopInstance:
    """minimize objective subject to g_j >= 0, relaxed at order k"""
    objective: Polynomial
    constraints: List[Polynomial]
    order: int
    box: Optional[BoxDomain] = None
    name: str = ""

    def __post_init__(self):
        n = self.objective.n
        for g in self.constraints:
            if g.n != n:
                raise DimensionError(f"constraint dimension {g.n} differs from objective dimension {n}")
        if self.box is not None and self.box.n != n:
            raise DimensionError(f"box dimension {self.box.n} differs from objective dimension {n}")
        if self.order < 1:
            raise RelaxationError(f"relaxation order must be positive, got {self.order}")
        if self.objective.degree() > 2 * self.order:
            raise RelaxationError(
                f"relaxation order {self.order} too small for objective degree {self.objective.degree()}")
        for g in self.constraints:
            if g.degree() > 2 * self.order:
                raise RelaxationError(
                    f"relaxation order {self.order} too small for constraint degree {g.degree()}")

    @property
    def n(self) -> int:
        return self.objective.n

    def with_objective(self, objective: Polynomial) -> 'PopInstance':
        return PopInstance(objective, list(self.constraints), self.order, self.box, self.name)

    def with_order(self, order: int) -> 'PopInstance':
        return PopInstance(self.objective, list(self.constraints), order, self.box, self.name)


def box_constraints(box: BoxDomain, bound_squares: bool = False) -> List[Polynomial]:
    """x_i - lo_i >= 0 and hi_i - x_i >= 0, plus the redundant square bounds on request

    The redundant pair per variable is (x_i - lo_i)(hi_i - x_i) >= 0 and
    M_i^2 - x_i^2 >= 0 with M_i = max(|lo_i|, |hi_i|); on [0,1] these read
    x_i (1 - x_i) >= 0 and 1 - x_i^2 >= 0.
    """
    n = box.n
    out: List[Polynomial] = []
    for i, iv in enumerate(box.intervals):
        if iv.width == 0:
            continue
        x = Polynomial.variable(i, n)
        out.append(x - iv.lo)
        out.append(Polynomial.constant(iv.hi, n) - x)
    if bound_squares:
        for i, iv in enumerate(box.intervals):
            if iv.width == 0:
                continue
            x = Polynomial.variable(i, n)
            out.append((x - iv.lo) * (Polynomial.constant(iv.hi, n) - x))
            bound = max(abs(iv.lo), abs(iv.hi))
            out.append(Polynomial.constant(bound * bound, n) - x * x)
    return out


def box_pop(objective: Polynomial, box: BoxDomain, order: int,
            constraints: Sequence[Polynomial] = (), bound_squares: bool = False,
            scale: bool = True, name: str = "") -> Tuple[PopInstance, Optional[AffineMap]]:
    """POP over a box (plus optional polynomial constraints), rescaled to [0,1]^n on request"""
    affine = None
    extra = list(constraints)
    if scale:
        objective, affine = rescale_to_unit_box(objective, box)
        images = affine.images()
        extra = [g.compose(images) for g in extra]
        box = affine.unit_box()
    gs = box_constraints(box, bound_squares) + extra
    return PopInstance(objective, gs, order, box, name), affine


def basis_degree(order: int, g: Optional[Polynomial]) -> int:
    return order if g is None else order - math.ceil(g.degree() / 2)


def gram_bases(pop: PopInstance) -> List[List[Monomial]]:
    """B_0 for sigma_0 followed by B_j for each constraint"""
    bases = [monomials_up_to(pop.n, pop.order)]
    for g in pop.constraints:
        bases.append(monomials_up_to(pop.n, basis_degree(pop.order, g)))
    return bases


@dataclass
class RelaxationLayout:
    """Bookkeeping linking SDP rows and blocks back to the POP"""
    bases: List[List[Monomial]]
    row_monomials: List[Monomial]
    constant: Fraction

    def row_index(self) -> Dict[Monomial, int]:
        return {alpha: r for r, alpha in enumerate(self.row_monomials)}


@dataclass
class GramDecomposition:
    bases: List[List[Monomial]]
    matrices: List[np.ndarray]
    lam: float
    status: SdpStatus = SdpStatus.OPTIMAL
    residual: float = 0.0
    solve_time: float = 0.0
    iterations: int = 0

    def min_eigenvalues(self) -> List[float]:
        return [float(np.linalg.eigvalsh(q)[0]) if q.size else 0.0 for q in self.matrices]


def build_relaxation(pop: PopInstance) -> Tuple[SdpProblem, RelaxationLayout]:
    """SOS side as an SDP primal: Gram matrices are the blocks of X

    One equality row per monomial 0 < |alpha| <= 2k matches the coefficient of
    f - lambda; the constant-monomial equation eliminates lambda, so
    maximizing lambda is minimizing <C, X> with C the constant-term weights.
    """
    n, k = pop.n, pop.order
    bases = gram_bases(pop)
    row_monomials = [a for a in monomials_up_to(n, 2 * k) if sum(a)]
    rows = {alpha: r for r, alpha in enumerate(row_monomials)}
    zero = (0,) * n
    multipliers = [Polynomial.constant(1, n)] + list(pop.constraints)

    constraint_entries: List[List[Tuple[int, int, int, float]]] = [[] for _ in row_monomials]
    cost_entries: List[Tuple[int, int, int, float]] = []
    for blk, (basis, g) in enumerate(zip(bases, multipliers)):
        g_terms = [(delta, float(c)) for delta, c in g.sorted_terms()]
        size = len(basis)
        for a in range(size):
            for b in range(a, size):
                beta_gamma = add_monomials(basis[a], basis[b])
                for delta, c in g_terms:
                    alpha = add_monomials(beta_gamma, delta)
                    if alpha == zero:
                        cost_entries.append((blk, a, b, c))
                    else:
                        constraint_entries[rows[alpha]].append((blk, a, b, c))
    rhs = [float(pop.objective.coefficient(alpha)) for alpha in row_monomials]
    prob = SdpProblem.from_entries([len(b) for b in bases], cost_entries, constraint_entries, rhs)
    sos_logger.debug("relaxation order %d: n=%d, %d rows, %d blocks (|B0|=%d)",
                     k, n, len(row_monomials), len(bases), len(bases[0]))
    return prob, RelaxationLayout(bases, row_monomials, pop.objective.constant_term())


def sos_residual(pop: PopInstance, bases: Sequence[Sequence[Monomial]],
                 matrices: Sequence[np.ndarray], lam: float) -> float:
    """Max coefficient error of f - lambda - sum_j sigma_j g_j in floating point"""
    coeffs: Dict[Monomial, float] = {a: float(c) for a, c in pop.objective.terms.items()}
    zero = (0,) * pop.n
    coeffs[zero] = coeffs.get(zero, 0.0) - lam
    multipliers = [Polynomial.constant(1, pop.n)] + list(pop.constraints)
    for basis, Q, g in zip(bases, matrices, multipliers):
        g_terms = [(delta, float(c)) for delta, c in g.terms.items()]
        size = len(basis)
        for a in range(size):
            for b in range(size):
                q = Q[a, b]
                if q == 0.0:
                    continue
                beta_gamma = add_monomials(basis[a], basis[b])
                for delta, c in g_terms:
                    alpha = add_monomials(beta_gamma, delta)
                    coeffs[alpha] = coeffs.get(alpha, 0.0) - q * c
    return max((abs(v) for v in coeffs.values()), default=0.0)


def has_equality_pairs(pop: PopInstance) -> bool:
    """True when some g and -g are both constraints (an equality written as two inequalities)"""
    seen = set(pop.constraints)
    return any(-g in seen for g in pop.constraints if not g.is_zero())


def _acceptable(solution: SdpSolution) -> bool:
    return solution.status == SdpStatus.OPTIMAL or (
        solution.status in (SdpStatus.MAX_ITER, SdpStatus.NUMERICAL_FAILURE)
        and solution.primal_infeasibility <= ACCEPT_INFEASIBILITY
        and solution.relative_gap <= ACCEPT_GAP)


def lower_bound(pop: PopInstance, tol: Optional[SdpTolerances] = None) -> Tuple[float, GramDecomposition]:
    """Best lambda with f - lambda in the order-k truncated quadratic module (numerically)

    Equality pairs leave the SOS side with an unbounded optimal face, so those
    programs (and any program whose plain solve fails) are solved with a small
    trace penalty; lambda is still read off the feasible Gram matrices.
    """
    start = time.time()
    tol = tol or SdpTolerances()
    prob, layout = build_relaxation(pop)
    if not tol.trace_reg and has_equality_pairs(pop):
        tol = replace(tol, trace_reg=TRACE_PENALTY)
    solution: SdpSolution = sdp_solve(prob, tol)
    if not _acceptable(solution) and not tol.trace_reg:
        sos_logger.info("SDP %s (pinf %.1e); retrying with trace penalty %.0e", solution.status.value,
                        solution.primal_infeasibility, TRACE_PENALTY)
        solution = sdp_solve(prob, replace(tol, trace_reg=TRACE_PENALTY))
    if not _acceptable(solution):
        raise RelaxationError(
            f"SDP {solution.status.value}: no usable degree-{2 * pop.order} certificate "
            f"(pinf {solution.primal_infeasibility:.1e}, gap {solution.relative_gap:.1e})")
    if solution.status != SdpStatus.OPTIMAL:
        sos_logger.warning("using %s SDP solution (pinf %.1e, gap %.1e)", solution.status.value,
                           solution.primal_infeasibility, solution.relative_gap)
    lam = float(layout.constant) - solution.primal_objective
    matrices = [0.5 * (x + x.T) for x in solution.X]
    residual = sos_residual(pop, layout.bases, matrices, lam)
    gram = GramDecomposition(layout.bases, matrices, lam, solution.status, residual,
                             time.time() - start, solution.iterations)
    sos_logger.info("SOS order %d lower bound %.10g (residual %.1e) in %.3fs",
                    pop.order, lam, residual, gram.solve_time)
    return lam, gram

