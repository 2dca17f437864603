"""
Nonlinear maxplus driver
Samples minimizer candidates, replaces transcendental nodes by maxplus (or
minimax) estimators anchored at control points, bounds the resulting
semialgebraic minorant through lifting, and subdivides the box on request
"""
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from nlcert import (ApproximationError, CertificateError, DomainViolation, NlcertError, RelaxationError,
                    UnsupportedExpression)
from nlcert import expr as ex
from nlcert.cert import CheckReport, SosCertificate, certify
from nlcert.domain import BoxDomain, Interval
from nlcert.lift import BoundOptions, BoundResult, XConversion, bound_sa, lift, lower_bound_sa, polarities, xconvert
from nlcert.maxplus import ULP_CONTRACT, Orientation, maxplus_envelope, remez
from nlcert.poly import from_expr, rational_text
from nlcert.sdp import SdpTolerances
from nlcert.sos import PopInstance
from utils.config_manager import Config

driver_logger = logging.getLogger("nlcert.driver")

LOCAL_GRID_DIMENSIONS = 6
INCOMPLETE = (DomainViolation, RelaxationError, UnsupportedExpression, ApproximationError)


class VerdictStatus(Enum):
    PROVED = "Proved"
    DISPROVED = "Disproved"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class IterationRecord:
    """One line group of the proof trace"""
    iteration: int
    control_points: Dict[str, List[float]]
    bound: float
    candidate: List[float]
    elapsed: float = 0.0
    certified: Optional[bool] = None
    box: str = ""
    numeric_bound: Optional[float] = None
    enclosures: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            'iteration': self.iteration,
            'control_points': self.control_points,
            'bound': self.bound,
            'numeric_bound': self.numeric_bound,
            'enclosures': {k: list(v) for k, v in self.enclosures.items()},
            'candidate': self.candidate,
            'elapsed': round(self.elapsed, 6),
            'certified': self.certified,
            'box': self.box,
        }


@dataclass
class IterationState:
    """Mutable state of one maxplus run; control-point sets only grow"""
    iteration: int = 0
    control_points: Dict[ex.Trans, List[float]] = field(default_factory=dict)
    enclosures: Dict[ex.Trans, Interval] = field(default_factory=dict)
    bound: float = float('-inf')
    candidate: Optional[np.ndarray] = None
    records: List[IterationRecord] = field(default_factory=list)
    caches: Dict[BoxDomain, Dict[ex.Expr, Interval]] = field(default_factory=dict)
    enclosure_certificates: List[SosCertificate] = field(default_factory=list)
    plans: List['NodePlan'] = field(default_factory=list)
    minorant: Optional['Minorant'] = None
    last_result: Optional[BoundResult] = None
    witness: Optional[List[float]] = None
    witness_value: float = float('inf')

    def cache_for(self, box: BoxDomain) -> Dict[ex.Expr, Interval]:
        return self.caches.setdefault(box, {})

    def add_control_point(self, node: ex.Trans, value: float) -> bool:
        points = self.control_points.setdefault(node, [])
        if any(abs(p - value) <= 1e-12 * max(1.0, abs(value)) for p in points):
            return False
        points.append(value)
        return True

    def points_text(self) -> Dict[str, List[float]]:
        return {ex.to_text(node): sorted(points) for node, points in self.control_points.items()}


@dataclass
class Verdict:
    status: VerdictStatus
    bound: Optional[float] = None
    witness: Optional[List[float]] = None
    trace: List[IterationRecord] = field(default_factory=list)
    certificates: List[SosCertificate] = field(default_factory=list)
    reports: List[CheckReport] = field(default_factory=list)
    unresolved: List[BoxDomain] = field(default_factory=list)
    message: str = ""
    elapsed: float = 0.0
    name: str = "goal"
    leaves: int = 1
    enclosures: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    @property
    def proved(self) -> bool:
        return self.status == VerdictStatus.PROVED

    def to_dict(self) -> Dict:
        return {
            'name': self.name,
            'status': self.status.value,
            'bound': self.bound,
            'witness': self.witness,
            'message': self.message,
            'elapsed': round(self.elapsed, 6),
            'leaves': self.leaves,
            'unresolved': [b.to_text() for b in self.unresolved],
            'certificates': [c.label for c in self.certificates],
        }


def bound_options(config: Config, certify_bounds: bool = False) -> BoundOptions:
    tol = SdpTolerances(gap_tol=config.sdp_gap_tol, feas_tol=config.sdp_feas_tol,
                        max_iters=config.sdp_max_iters)
    return BoundOptions(order=config.relax_order, scale=config.scale_pol,
                        bound_squares=config.bound_squares_variables, certify=certify_bounds,
                        denom_limit=config.denom_limit, tol=tol)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_points(box: BoxDomain, budget: int) -> np.ndarray:
    """Box corners (capped), the center, then unscrambled Halton points"""
    if budget < 1:
        raise ValueError("sampling budget must be at least 1")
    lo, hi = box.as_float_arrays()
    n = box.n
    corner_cap = min(2 ** min(n, 30), budget - 1)
    corners = [np.where(np.array(bits) == 1, hi, lo)
               for bits in itertools.islice(itertools.product((0, 1), repeat=n), corner_cap)]
    points = corners + [(lo + hi) / 2]
    remaining = budget - len(points)
    if remaining > 0:
        # the first unscrambled Halton point is the lower corner
        unit = qmc.Halton(d=n, scramble=False).random(remaining + 1)[1:]
        points.extend(lo + unit * (hi - lo))
    return np.array(points, dtype=float)


def _feasible(problem: ex.Problem, points: np.ndarray) -> np.ndarray:
    mask = np.ones(points.shape[0], dtype=bool)
    for g in problem.constraints:
        mask &= ex.eval_batch(g, points) >= 0
    return mask


def sample_initial(problem: ex.Problem, budget: int) -> Tuple[np.ndarray, float]:
    """Argmin of the objective over the deterministic sample set"""
    points = sample_points(problem.box, budget)
    values = ex.eval_batch(problem.objective, points)
    values = np.where(_feasible(problem, points), values, np.nan)
    if np.all(np.isnan(values)):
        raise DomainViolation(f"all {len(points)} samples leave the domain or the constraints",
                              ex.to_text(problem.objective)[:80])
    best = int(np.nanargmin(values))
    driver_logger.debug("initial sampling: %d points, best value %.6g", len(points), values[best])
    return points[best], float(values[best])


def _local_grid(box: BoxDomain, center: np.ndarray, radius: float) -> np.ndarray:
    """3^min(n,6) points around center along its widest dimensions"""
    lo, hi = box.as_float_arrays()
    widths = hi - lo
    dims = [int(i) for i in np.argsort(-widths, kind='stable')[:min(box.n, LOCAL_GRID_DIMENSIONS)]]
    grid = []
    for steps in itertools.product((-1, 0, 1), repeat=len(dims)):
        p = np.array(center, dtype=float)
        for d, s in zip(dims, steps):
            p[d] += s * radius * widths[d]
        grid.append(np.clip(p, lo, hi))
    return np.array(grid)


def _polish(e: ex.Expr, box: BoxDomain, start: np.ndarray) -> Tuple[np.ndarray, float]:
    """Bounded local descent from start; domain violations count as +inf"""
    lo, hi = box.as_float_arrays()

    def fun(x: np.ndarray) -> float:
        try:
            return ex.eval_float(e, x)
        except DomainViolation:
            return 1e300

    start_value = fun(start)
    try:
        result = minimize(fun, start, method='L-BFGS-B', bounds=list(zip(lo, hi)),
                          options={'maxiter': 200})
    except (ValueError, FloatingPointError):
        return start, start_value
    x = np.clip(result.x, lo, hi)
    value = fun(x)
    return (x, value) if value < start_value else (start, start_value)


def disproof_margin(e: ex.Expr, value: float) -> float:
    """10x the evaluation ulp budget of e around value"""
    nodes = sum(1 for _ in ex.walk(e))
    return 10 * ULP_CONTRACT * nodes * math.ulp(max(1.0, abs(value)))


def is_counterexample(problem: ex.Problem, x: Sequence[float], value: float) -> bool:
    if not np.isfinite(value) or value >= 0:
        return False
    if ex.classify(problem.objective) == ex.NodeClass.POLYNOMIAL:
        exact = [Fraction(float(v)) for v in x]
        if not problem.box.contains(exact):
            return False
        if any(from_expr(g, problem.n).eval_exact(exact) < 0 for g in problem.constraints):
            return False
        return from_expr(problem.objective, problem.n).eval_exact(exact) < 0
    return value < -disproof_margin(problem.objective, value)


# ---------------------------------------------------------------------------
# Maxplus iterations
# ---------------------------------------------------------------------------

def transcendental_nodes(e: ex.Expr) -> List[ex.Trans]:
    """Distinct transcendental nodes, inner ones before the nodes containing them"""
    nodes: List[ex.Trans] = []

    def visit(node: ex.Expr):
        for child in node.children():
            visit(child)
        if isinstance(node, ex.Trans) and node not in nodes:
            nodes.append(node)

    visit(e)
    return nodes


@dataclass
class NodePlan:
    """How one transcendental node enters every minorant of a problem

    orientation is None for a sandwiched node: it becomes the bounded variable
    x_variable with under(argument) <= x_variable <= over(argument).
    """
    node: ex.Trans
    index: int
    argument: ex.Expr
    orientation: Optional[Orientation]
    variable: Optional[int] = None

    @property
    def label(self) -> str:
        return f"{self.node.function}-argument-{self.index + 1}"


def plan_nodes(problem: ex.Problem) -> List[NodePlan]:
    """One plan per transcendental node, innermost first

    Nodes the objective is monotone in get a one-sided envelope; nodes of
    mixed or unknown polarity, and nodes nested inside another transcendental
    argument, are sandwiched between both envelopes.
    """
    nodes = transcendental_nodes(problem.objective)
    pol = polarities(problem.objective)
    nested = {inner for node in nodes for inner in ex.walk(node.child) if isinstance(inner, ex.Trans)}
    variables: Dict[ex.Expr, ex.Expr] = {}
    plans: List[NodePlan] = []
    for index, node in enumerate(nodes):
        argument = ex.transform(node.child, lambda m: variables.get(m))
        polarity = pol.get(node, {0})
        if node in nested or polarity not in ({1}, {-1}):
            variable = problem.n + len(variables)
            variables[node] = ex.Var(variable)
            plans.append(NodePlan(node, index, argument, None, variable))
        else:
            orientation = Orientation.UNDER if polarity == {1} else Orientation.OVER
            plans.append(NodePlan(node, index, argument, orientation))
    return plans


def _box_before(problem: ex.Problem, plans: Sequence[NodePlan], enclosures: Sequence[Interval],
                count: int) -> BoxDomain:
    """Problem box extended by the ranges of the sandwiched nodes among the first count plans"""
    ranges = [ex.transcendental_interval(plan.node.function, enclosures[i])
              for i, plan in enumerate(plans[:count]) if plan.variable is not None]
    return problem.box.extend(ranges) if ranges else problem.box


def _control_value(value: float, iv: Interval) -> float:
    """Float control point inside iv, clamped onto its endpoints"""
    lo, hi = float(iv.lo), float(iv.hi)
    value = min(max(value, lo), hi)
    while Fraction(value) < iv.lo:
        value = math.nextafter(value, math.inf)
    while Fraction(value) > iv.hi:
        value = math.nextafter(value, -math.inf)
    if not iv.contains(Fraction(value)):
        raise ApproximationError(f"no floating control point inside {iv}")
    return value


def _enclose(problem: ex.Problem, plans: Sequence[NodePlan], index: int, state: IterationState,
             config: Config) -> Interval:
    plan = plans[index]
    if plan.node not in state.enclosures:
        box = _box_before(problem, plans, [state.enclosures[p.node] for p in plans[:index]], index)
        options = bound_options(config, certify_bounds=config.check_certif)
        certificates: List[SosCertificate] = []
        state.enclosures[plan.node] = bound_sa(plan.argument, box, options, problem.constraints,
                                               state.cache_for(box), label=plan.label,
                                               certificates=certificates)
        for cert in certificates:
            cert.derivation = {'box': problem.box.to_text(), 'node': plan.index + 1,
                               'side': cert.label.rsplit('-', 1)[1]}
        state.enclosure_certificates.extend(certificates)
        driver_logger.info("approximation of %s on %s", plan.node.function, state.enclosures[plan.node])
    return state.enclosures[plan.node]


def estimator_pieces(plan: NodePlan, enclosure: Interval, points: Sequence[float], orientation: Orientation,
                     config: Config, iteration: int) -> List[ex.Expr]:
    """Estimators of the node in its argument: one per control point, or one minimax polynomial"""
    if config.approx_mode == "minimax":
        approx = remez(plan.node.function, enclosure, config.minimax_degree + iteration - 1)
        return [approx.to_expr(plan.argument, orientation)]
    envelope = maxplus_envelope(plan.node.function, enclosure, points, orientation)
    return [piece.to_expr(plan.argument) for piece in envelope.pieces]


def _combine(pieces: Sequence[ex.Expr], orientation: Orientation) -> ex.Expr:
    if len(pieces) == 1:
        return pieces[0]
    return ex.Max(tuple(pieces)) if orientation == Orientation.UNDER else ex.Min(tuple(pieces))


@dataclass
class Minorant:
    """Semialgebraic lower estimate of the objective

    expr lives on box (the problem box plus one coordinate per sandwiched
    node) under constraints; surrogate is a float stand-in over the original
    variables for the candidate search.
    """
    expr: ex.Expr
    box: BoxDomain
    constraints: List[ex.Expr]
    surrogate: ex.Expr


def build_minorant(problem: ex.Problem, plans: Sequence[NodePlan], enclosures: Sequence[Interval],
                   points: Sequence[Sequence[float]], config: Config, iteration: int) -> Minorant:
    """Minorant of the objective from argument enclosures and control points (no solving)"""
    replacements: Dict[ex.Expr, ex.Expr] = {}
    middles: Dict[ex.Expr, ex.Expr] = {}
    sandwich: List[ex.Expr] = []
    for plan, enclosure, node_points in zip(plans, enclosures, points):
        if plan.orientation is not None:
            pieces = estimator_pieces(plan, enclosure, node_points, plan.orientation, config, iteration)
            replacements[plan.node] = _combine(pieces, plan.orientation)
            continue
        under = estimator_pieces(plan, enclosure, node_points, Orientation.UNDER, config, iteration)
        over = estimator_pieces(plan, enclosure, node_points, Orientation.OVER, config, iteration)
        t = ex.Var(plan.variable)
        sandwich.extend(t - p for p in under)
        sandwich.extend(p - t for p in over)
        replacements[plan.node] = t
        middle = ex.Constant(Fraction(1, 2)) * (_combine(under, Orientation.UNDER)
                                                + _combine(over, Orientation.OVER))
        middles[t] = ex.transform(middle, lambda m: middles.get(m))
    expr = ex.transform(problem.objective, lambda m: replacements.get(m))
    return Minorant(expr, _box_before(problem, plans, enclosures, len(plans)),
                    sandwich + list(problem.constraints),
                    ex.transform(expr, lambda m: middles.get(m)))


def _conversion(e: ex.Expr, box: BoxDomain, config: Config) -> XConversion:
    if config.xconvert_variables:
        return xconvert(e, box, config.relax_order)
    return XConversion(e, box, [], "none")


def _lower_bound(e: ex.Expr, box: BoxDomain, constraints: Sequence[ex.Expr], state: IterationState,
                 config: Config, certify_bound: bool, label: str) -> BoundResult:
    """SOS lower bound of a semialgebraic e over box (xconvert on request)"""
    options = bound_options(config, certify_bounds=certify_bound)
    conversion = _conversion(e, box, config)
    extra = list(conversion.links) + [conversion.convert(g) for g in constraints]
    return lower_bound_sa(conversion.expr, conversion.box, options, extra,
                          state.cache_for(conversion.box), label=label, threshold=Fraction(0))


def _candidate_search(problem: ex.Problem, e: ex.Expr, state: IterationState,
                      budget: int) -> np.ndarray:
    """Argmin of e over global samples and a shrinking grid around the last candidate"""
    box = problem.box
    radius = 0.5 ** (state.iteration + 1)
    pools = [sample_points(box, budget)]
    if state.candidate is not None:
        pools.append(_local_grid(box, state.candidate, radius))
    points = np.vstack(pools)
    values = np.where(_feasible(problem, points), ex.eval_batch(e, points), np.nan)
    if np.all(np.isnan(values)):
        return state.candidate if state.candidate is not None else points[0]
    best = points[int(np.nanargmin(values))]
    polished, _ = _polish(e, box, best)
    return polished


def _check_witness(problem: ex.Problem, state: IterationState, x: np.ndarray):
    try:
        value = ex.eval_float(problem.objective, x)
    except DomainViolation:
        return
    if value < state.witness_value and is_counterexample(problem, x, value):
        state.witness, state.witness_value = [float(v) for v in x], value


def iterate(problem: ex.Problem, state: IterationState, config: Config) -> IterationState:
    """One maxplus iteration: new control points, minorant, SOS bound, next candidate"""
    start = time.time()
    state.iteration += 1
    if not state.plans:
        state.plans = plan_nodes(problem)
    plans = state.plans
    enclosures: List[Interval] = []
    for index, plan in enumerate(plans):
        enclosure = _enclose(problem, plans, index, state, config)
        enclosures.append(enclosure)
        try:
            raw = ex.eval_float(plan.node.child, state.candidate)
        except DomainViolation:
            raw = float(enclosure.mid)
        state.add_control_point(plan.node, _control_value(raw, enclosure))
    minorant = build_minorant(problem, plans, enclosures, [state.control_points[p.node] for p in plans],
                              config, state.iteration)
    result = _lower_bound(minorant.expr, minorant.box, minorant.constraints, state, config, False, problem.name)
    if result.bound < state.bound - 1e-7:
        driver_logger.warning("iteration %d bound %.6g fell below the previous %.6g",
                              state.iteration, result.bound, state.bound)
    state.minorant, state.last_result, state.bound = minorant, result, result.bound

    candidate = _candidate_search(problem, minorant.surrogate, state, max(16, 2 * problem.n + 2))
    _check_witness(problem, state, candidate)
    state.candidate = candidate
    state.records.append(IterationRecord(state.iteration, state.points_text(), result.bound,
                                         [float(v) for v in candidate], time.time() - start,
                                         box=problem.box.to_text(), numeric_bound=result.gram.lam,
                                         enclosures={ex.to_text(node.child): iv.as_floats()
                                                     for node, iv in state.enclosures.items()}))
    driver_logger.info("iteration %d: lower bound %.6g", state.iteration, result.bound)
    return state


def minorant_derivation(problem: ex.Problem, state: IterationState) -> Dict[str, object]:
    """What a checker needs to rebuild the last minorant: box, iteration, enclosures, control points"""
    return {
        'box': problem.box.to_text(),
        'iteration': state.iteration,
        'nodes': [{'node': ex.to_text(plan.node),
                   'enclosure': [rational_text(state.enclosures[plan.node].lo),
                                 rational_text(state.enclosures[plan.node].hi)],
                   'points': list(state.control_points[plan.node])}
                  for plan in state.plans],
    }


# ---------------------------------------------------------------------------
# Verdicts
# ---------------------------------------------------------------------------

def _certify_result(result: BoundResult, config: Config, label: str) -> Tuple[Optional[SosCertificate], CheckReport]:
    return certify(result.gram, result.pop, config.denom_limit, Fraction(0), label)


def _solve_algebraic(problem: ex.Problem, config: Config, candidate: np.ndarray,
                     state: IterationState, start: float) -> Verdict:
    """Polynomial and semialgebraic goals need a single SOS bound"""
    state.iteration = 1
    result = _lower_bound(problem.objective, problem.box, problem.constraints, state, config,
                          config.check_certif, problem.name)
    if result.certificate is not None:
        result.certificate.derivation = {'box': problem.box.to_text()}
    record = IterationRecord(1, {}, result.bound, [float(v) for v in candidate], time.time() - start,
                             certified=result.certified if config.check_certif else None,
                             box=problem.box.to_text(), numeric_bound=result.gram.lam)
    verdict = Verdict(VerdictStatus.INCONCLUSIVE, result.bound, trace=[record], name=problem.name)
    if result.certificate is not None:
        verdict.certificates.append(result.certificate)
    if result.report is not None:
        verdict.reports.append(result.report)
    if config.check_certif:
        if result.certified:
            verdict.status = VerdictStatus.PROVED
        else:
            verdict.message = result.report.message if result.report else "certification failed"
    elif result.bound >= 0:
        verdict.status = VerdictStatus.PROVED
    return verdict


def _solve_transcendental(problem: ex.Problem, config: Config, candidate: np.ndarray,
                          state: IterationState,
                          on_iteration: Optional[Callable[[IterationRecord], None]]) -> Verdict:
    state.candidate = candidate
    verdict = Verdict(VerdictStatus.INCONCLUSIVE, name=problem.name)
    for _ in range(config.samp_iters):
        iterate(problem, state, config)
        record = state.records[-1]
        verdict.bound = state.bound
        if state.witness is not None:
            break
        if state.bound >= 0:
            if not config.check_certif:
                verdict.status = VerdictStatus.PROVED
            else:
                certificate, report = _certify_result(state.last_result, config, problem.name)
                record.certified = report.verified
                verdict.reports.append(report)
                if report.verified:
                    certificate.derivation = minorant_derivation(problem, state)
                    verdict.status = VerdictStatus.PROVED
                    verdict.bound = report.bound_float
                    verdict.certificates = list(state.enclosure_certificates) + [certificate]
                else:
                    verdict.message = f"final bound not certified: {report.message or report.verdict.value}"
        if on_iteration is not None:
            on_iteration(record)
        if verdict.proved:
            break
    verdict.trace = list(state.records)
    verdict.enclosures = {ex.to_text(node.child): iv.as_floats() for node, iv in state.enclosures.items()}
    if not verdict.proved and not verdict.message:
        verdict.message = f"lower bound {state.bound:.6g} after {state.iteration} iterations"
    return verdict


def solve_box(problem: ex.Problem, config: Config,
              on_iteration: Optional[Callable[[IterationRecord], None]] = None) -> Verdict:
    """Sampling plus bounding on the problem box, without subdivision"""
    start = time.time()
    state = IterationState()
    try:
        candidate, value = sample_initial(problem, config.samp_budget)
    except DomainViolation as exc:
        return Verdict(VerdictStatus.INCONCLUSIVE, message=str(exc), name=problem.name,
                       elapsed=time.time() - start, unresolved=[problem.box])
    if is_counterexample(problem, candidate, value):
        return Verdict(VerdictStatus.DISPROVED, value, [float(v) for v in candidate], name=problem.name,
                       message=f"objective is {value:.6g} at a sample point", elapsed=time.time() - start)
    try:
        if ex.classify(problem.objective) == ex.NodeClass.TRANSCENDENTAL:
            verdict = _solve_transcendental(problem, config, candidate, state, on_iteration)
        else:
            verdict = _solve_algebraic(problem, config, candidate, state, start)
            if on_iteration is not None:
                on_iteration(verdict.trace[-1])
    except INCOMPLETE as exc:
        driver_logger.info("inconclusive on %s: %s", problem.box.to_text(), exc)
        verdict = Verdict(VerdictStatus.INCONCLUSIVE, state.bound if state.records else None,
                          trace=list(state.records), message=str(exc), name=problem.name)
    if state.witness is not None:
        verdict.status = VerdictStatus.DISPROVED
        verdict.witness = state.witness
        verdict.message = f"objective is {state.witness_value:.6g} at the witness"
    if verdict.status == VerdictStatus.INCONCLUSIVE:
        verdict.unresolved = [problem.box]
    verdict.elapsed = time.time() - start
    return verdict


def solve(problem: ex.Problem, config: Optional[Config] = None,
          on_iteration: Optional[Callable[[IterationRecord], None]] = None) -> Verdict:
    """Prove objective >= 0 over the box; subdivides when bb is enabled"""
    config = (config or Config()).validate()
    verdict = solve_box(problem, config, on_iteration)
    if verdict.status == VerdictStatus.INCONCLUSIVE and config.bb:
        return bb_subdivide(problem, config, config.bb_depth, root=verdict)
    return verdict


def bb_subdivide(problem: ex.Problem, config: Config, depth_limit: int,
                 root: Optional[Verdict] = None) -> Verdict:
    """Bisect inconclusive boxes along their widest dimension, level by level

    Sub-boxes of a level run in a thread pool when config.jobs > 1; results are
    joined in bisection order so the verdict does not depend on scheduling.
    """
    start = time.time()
    root = root or solve_box(problem, config)
    if root.status != VerdictStatus.INCONCLUSIVE:
        return root
    proved: List[Verdict] = []
    frontier: List[BoxDomain] = list(problem.box.bisect(problem.box.widest_dimension()))
    depth = 1
    unresolved: List[BoxDomain] = []
    while frontier:
        verdicts = _solve_level(problem, config, frontier)
        next_frontier: List[BoxDomain] = []
        for box, verdict in zip(frontier, verdicts):
            if verdict.status == VerdictStatus.DISPROVED:
                verdict.elapsed = time.time() - start
                verdict.message = f"{verdict.message} (sub-box {box.to_text()})"
                return verdict
            if verdict.proved:
                proved.append(verdict)
            elif depth < depth_limit:
                next_frontier.extend(box.bisect(box.widest_dimension()))
            else:
                unresolved.append(box)
        driver_logger.info("bb depth %d: %d boxes, %d proved so far, %d to split",
                           depth, len(frontier), len(proved), len(next_frontier))
        frontier = next_frontier
        depth += 1

    trace = [record for v in proved for record in v.trace]
    certificates = [c for v in proved for c in v.certificates]
    bounds = [v.bound for v in proved if v.bound is not None]
    verdict = Verdict(VerdictStatus.PROVED if not unresolved else VerdictStatus.INCONCLUSIVE,
                      min(bounds) if bounds else None, trace=trace, certificates=certificates,
                      reports=[r for v in proved for r in v.reports], unresolved=unresolved,
                      name=problem.name, leaves=len(proved) + len(unresolved),
                      elapsed=time.time() - start)
    if unresolved:
        verdict.message = f"depth limit {depth_limit} reached with {len(unresolved)} unresolved sub-boxes"
    else:
        verdict.message = f"proved on {len(proved)} sub-boxes (depth {depth - 1})"
    return verdict


def _solve_level(problem: ex.Problem, config: Config, boxes: List[BoxDomain]) -> List[Verdict]:
    if config.jobs <= 1 or len(boxes) == 1:
        return [solve_box(problem.with_box(b), config) for b in boxes]
    results: List[Optional[Verdict]] = [None] * len(boxes)
    with ThreadPoolExecutor(max_workers=config.jobs) as executor:
        futures = {executor.submit(solve_box, problem.with_box(b), config): i for i, b in enumerate(boxes)}
        for future in as_completed(futures):
            i = futures[future]
            try:
                results[i] = future.result()
            except NlcertError as exc:
                results[i] = Verdict(VerdictStatus.INCONCLUSIVE, message=str(exc), name=problem.name,
                                     unresolved=[boxes[i]])
    return results


# ---------------------------------------------------------------------------
# Re-derivation for standalone checking
# ---------------------------------------------------------------------------

def lifted_pop(e: ex.Expr, box: BoxDomain, constraints: Sequence[ex.Expr], config: Config,
               label: str) -> PopInstance:
    """The POP lower_bound_sa relaxes for e, rebuilt without solving"""
    lifted = lift(e, box, bound_options(config), constraints)
    pop, _ = lifted.to_pop(config.relax_order, config.bound_squares_variables, config.scale_pol, label)
    return pop


def goal_pop(e: ex.Expr, box: BoxDomain, constraints: Sequence[ex.Expr], config: Config,
             label: str) -> PopInstance:
    """The POP a goal bound is certified against (xconvert included), rebuilt without solving"""
    conversion = _conversion(e, box, config)
    extra = list(conversion.links) + [conversion.convert(g) for g in constraints]
    return lifted_pop(conversion.expr, conversion.box, extra, config, label)


@dataclass
class EnclosureClaim:
    """A side of an argument enclosure that a goal link relies on"""
    node: int
    side: str
    pop: PopInstance
    threshold: Fraction


def _claims(problem: ex.Problem, plan: NodePlan, box: BoxDomain, enclosure: Interval,
            config: Config) -> List[EnclosureClaim]:
    value = ex.constant_value(plan.argument)
    if value is not None:
        if not enclosure.contains(value):
            raise CertificateError(f"enclosure {enclosure} misses the constant argument of {plan.label}")
        return []
    return [EnclosureClaim(plan.index + 1, "lower",
                           lifted_pop(plan.argument, box, problem.constraints, config, f"{plan.label}-lower"),
                           enclosure.lo),
            EnclosureClaim(plan.index + 1, "upper",
                           lifted_pop(-plan.argument, box, problem.constraints, config, f"{plan.label}-upper"),
                           -enclosure.hi)]


def rederive(problem: ex.Problem, derivation: Dict[str, object],
             config: Config) -> Tuple[PopInstance, List[EnclosureClaim]]:
    """Goal POP and enclosure claims of a certificate link, rebuilt from problem and derivation

    problem must already carry the link's box. Raises CertificateError when
    the derivation does not fit the problem.
    """
    if ex.classify(problem.objective) != ex.NodeClass.TRANSCENDENTAL:
        return goal_pop(problem.objective, problem.box, problem.constraints, config, problem.name), []
    plans = plan_nodes(problem)
    records = derivation.get('nodes')
    if not isinstance(records, list) or len(records) != len(plans):
        raise CertificateError("derivation does not list the transcendental nodes of the problem")
    enclosures: List[Interval] = []
    points: List[List[float]] = []
    claims: List[EnclosureClaim] = []
    try:
        for plan, record in zip(plans, records):
            if record.get('node') != ex.to_text(plan.node):
                raise CertificateError(f"derivation names {record.get('node')!r} where the problem "
                                       f"has {ex.to_text(plan.node)}")
            lo, hi = record['enclosure']
            enclosure = Interval(Fraction(lo), Fraction(hi))
            box = _box_before(problem, plans, enclosures, plan.index)
            claims.extend(_claims(problem, plan, box, enclosure, config))
            enclosures.append(enclosure)
            points.append([float(p) for p in record['points']])
        minorant = build_minorant(problem, plans, enclosures, points, config, int(derivation['iteration']))
    except CertificateError:
        raise
    except (KeyError, TypeError, ValueError, ZeroDivisionError, ApproximationError, DomainViolation) as exc:
        raise CertificateError(f"unusable derivation: {exc}") from None
    return goal_pop(minorant.expr, minorant.box, minorant.constraints, config, problem.name), claims
