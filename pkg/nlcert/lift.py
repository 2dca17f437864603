"""
Semialgebraic lifting
Sqrt, division, min/max and abs nodes become auxiliary variables with polynomial
defining constraints, so semialgebraic bounds reduce to polynomial SOS programs
"""
import logging
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Set, Tuple

from nlcert import DomainViolation, RelaxationError, UnsupportedExpression
from nlcert import expr as ex
from nlcert.cert import CheckReport, SosCertificate, certify
from nlcert.domain import BoxDomain, Interval, sqrt_down, sqrt_up
from nlcert.poly import AffineMap, Polynomial
from nlcert.sdp import SdpTolerances
from nlcert.sos import GramDecomposition, PopInstance, box_pop, lower_bound

lift_logger = logging.getLogger("nlcert.lift")


@dataclass
class BoundOptions:
    """Relaxation settings shared by every bound computed through lifting"""
    order: int = 2
    scale: bool = True
    bound_squares: bool = False
    certify: bool = False
    denom_limit: int = 2 ** 20
    refine: bool = True
    tol: SdpTolerances = field(default_factory=SdpTolerances)


@dataclass
class LiftedPop:
    """Polynomial problem over (x, y, z) equivalent to bounding a semialgebraic expression"""
    objective: Polynomial
    defining: List[Polynomial]
    box: BoxDomain
    z_bounds: List[Interval]
    back_map: Dict[ex.Expr, int]
    base_dimension: int

    @property
    def n(self) -> int:
        return self.objective.n

    @property
    def num_lifted(self) -> int:
        return len(self.z_bounds)

    def required_order(self) -> int:
        degree = max([self.objective.degree()] + [g.degree() for g in self.defining] + [1])
        return math.ceil(degree / 2)

    def to_pop(self, order: int, bound_squares: bool = False, scale: bool = True,
               name: str = "") -> Tuple[PopInstance, Optional[AffineMap]]:
        needed = self.required_order()
        if order < needed:
            lift_logger.info("relaxation order raised from %d to %d for lifted degree", order, needed)
            order = needed
        return box_pop(self.objective, self.box, order, self.defining, bound_squares, scale, name)


@dataclass
class BoundResult:
    """One SOS lower bound of a (lifted) expression"""
    bound: float
    pop: PopInstance
    gram: GramDecomposition
    lifted: LiftedPop
    affine: Optional[AffineMap] = None
    certificate: Optional[SosCertificate] = None
    report: Optional[CheckReport] = None

    @property
    def exact_bound(self) -> Fraction:
        """The certified rational bound when there is one, else the float bound"""
        if self.report is not None and self.report.certified_bound is not None:
            return self.report.certified_bound
        return Fraction(self.bound)

    @property
    def certified(self) -> bool:
        return self.report is not None and self.report.verified


def is_liftable(node: ex.Expr) -> bool:
    if isinstance(node, ex.Div):
        return ex.constant_value(node.right) is None
    return isinstance(node, (ex.Sqrt, ex.Min, ex.Max, ex.Abs))


def _sign(value: Fraction) -> int:
    return (value > 0) - (value < 0)


def polarities(e: ex.Expr) -> Dict[ex.Expr, Set[int]]:
    """Monotonicity of the root in each node: +1 increasing, -1 decreasing, 0 unknown"""
    pol: Dict[ex.Expr, Set[int]] = {}

    def visit(node: ex.Expr, s: int):
        seen = pol.setdefault(node, set())
        if s in seen:
            return
        seen.add(s)
        if isinstance(node, ex.Add):
            visit(node.left, s)
            visit(node.right, s)
        elif isinstance(node, ex.Sub):
            visit(node.left, s)
            visit(node.right, -s)
        elif isinstance(node, ex.Mul):
            cl, cr = ex.constant_value(node.left), ex.constant_value(node.right)
            if cl is not None:
                visit(node.right, s * _sign(cl))
            elif cr is not None:
                visit(node.left, s * _sign(cr))
            else:
                visit(node.left, 0)
                visit(node.right, 0)
        elif isinstance(node, ex.Div):
            c = ex.constant_value(node.right)
            visit(node.left, s * _sign(c) if c else 0)
            visit(node.right, 0)
        elif isinstance(node, ex.Pow):
            visit(node.child, s if node.exponent % 2 else 0)
        elif isinstance(node, (ex.Sqrt, ex.Min, ex.Max)):
            for child in node.children():
                visit(child, s)
        elif isinstance(node, ex.Trans):
            visit(node.child, s if node.function in ('arctan', 'exp', 'log') else 0)
        else:
            for child in node.children():
                visit(child, 0)

    visit(e, 1)
    return pol


def _collect_liftable(exprs: Sequence[ex.Expr]) -> List[ex.Expr]:
    """Distinct liftable nodes of exprs, children before parents"""
    ordered: List[ex.Expr] = []
    seen: Set[ex.Expr] = set()
    visited: Set[int] = set()

    def visit(node: ex.Expr):
        if id(node) in visited:
            return
        visited.add(id(node))
        for child in node.children():
            visit(child)
        if is_liftable(node) and node not in seen:
            seen.add(node)
            ordered.append(node)

    for e in exprs:
        visit(e)
    return ordered


class Enclosure:
    """Outward interval enclosures of subexpressions over a box

    Sqrt/log arguments and denominators whose naive interval leaves the domain
    are tightened by an SOS range bound before giving up.
    """

    def __init__(self, box: BoxDomain, options: BoundOptions,
                 cache: Optional[Dict[ex.Expr, Interval]] = None):
        self.box = box
        self.options = options
        self.cache: Dict[ex.Expr, Interval] = cache if cache is not None else {}

    def _refine(self, node: ex.Expr, naive: Interval) -> Interval:
        if not self.options.refine:
            return naive
        lift_logger.debug("refining enclosure of %s beyond %s", ex.to_text(node), naive)
        # refined ranges enter lifted boxes, so they are always certified
        tight = bound_sa(node, self.box, replace(self.options, certify=True), cache=self.cache)
        lo, hi = max(naive.lo, tight.lo), min(naive.hi, tight.hi)
        return Interval(lo, hi) if lo <= hi else tight

    def __call__(self, node: ex.Expr) -> Interval:
        if node in self.cache:
            return self.cache[node]
        if isinstance(node, ex.Constant):
            out = Interval.point(node.value)
        elif isinstance(node, ex.Var):
            out = self.box[node.index]
        elif isinstance(node, ex.Add):
            out = self(node.left) + self(node.right)
        elif isinstance(node, ex.Sub):
            out = self(node.left) - self(node.right)
        elif isinstance(node, ex.Mul):
            out = self(node.left) ** 2 if node.left == node.right else self(node.left) * self(node.right)
        elif isinstance(node, ex.Pow):
            out = self(node.child) ** node.exponent
        elif isinstance(node, ex.Div):
            den = self(node.right)
            if den.contains_zero():
                den = self._refine(node.right, den)
                self.cache[node.right] = den
            if den.contains_zero():
                raise DomainViolation("denominator interval contains zero", ex.to_text(node.right))
            out = self(node.left) / den
        elif isinstance(node, ex.Sqrt):
            arg = self(node.child)
            if arg.lo < 0:
                arg = self._refine(node.child, arg)
                self.cache[node.child] = arg
            if arg.lo < 0:
                raise DomainViolation("sqrt argument interval dips below zero", ex.to_text(node.child))
            out = Interval(sqrt_down(arg.lo), sqrt_up(arg.hi))
        elif isinstance(node, ex.Abs):
            out = self(node.child).abs()
        elif isinstance(node, (ex.Min, ex.Max)):
            parts = [self(a) for a in node.args]
            pick = min if isinstance(node, ex.Min) else max
            out = Interval(pick(p.lo for p in parts), pick(p.hi for p in parts))
        elif isinstance(node, ex.Trans):
            arg = self(node.child)
            if node.function == 'log' and arg.lo <= 0:
                arg = self._refine(node.child, arg)
                self.cache[node.child] = arg
            out = ex.transcendental_interval(node.function, arg)
        else:
            raise TypeError(f"unknown node {node!r}")
        self.cache[node] = out
        return out


class _Lifter:
    def __init__(self, e: ex.Expr, box: BoxDomain, enclose: Optional[Enclosure],
                 extra: Sequence[ex.Expr] = ()):
        for part in [e, *extra]:
            if ex.classify(part) == ex.NodeClass.TRANSCENDENTAL:
                raise UnsupportedExpression(f"cannot lift transcendental expression {ex.to_text(part)}")
        self.e = e
        self.extra = list(extra)
        self.box = box
        self.enclose = enclose
        self.base = box.n
        self.nodes = _collect_liftable([e, *self.extra])
        self.N = self.base + len(self.nodes)
        self.z_index = {node: self.base + t for t, node in enumerate(self.nodes)}
        self.pol = polarities(e)
        # nodes inside side constraints get no one-sided encoding
        for g in self.extra:
            for node in ex.walk(g):
                self.pol.setdefault(node, set()).add(0)
        self.memo: Dict[ex.Expr, Polynomial] = {}

    def poly(self, node: ex.Expr) -> Polynomial:
        if node in self.memo:
            return self.memo[node]
        N = self.N
        if node in self.z_index:
            out = Polynomial.variable(self.z_index[node], N)
        elif isinstance(node, ex.Constant):
            out = Polynomial.constant(node.value, N)
        elif isinstance(node, ex.Var):
            out = Polynomial.variable(node.index, N)
        elif isinstance(node, ex.Add):
            out = self.poly(node.left) + self.poly(node.right)
        elif isinstance(node, ex.Sub):
            out = self.poly(node.left) - self.poly(node.right)
        elif isinstance(node, ex.Mul):
            out = self.poly(node.left) * self.poly(node.right)
        elif isinstance(node, ex.Pow):
            out = self.poly(node.child) ** node.exponent
        elif isinstance(node, ex.Div):
            out = self.poly(node.left).scale(1 / ex.constant_value(node.right))
        else:
            raise UnsupportedExpression(f"cannot lift {ex.to_text(node)}")
        self.memo[node] = out
        return out

    def defining(self, node: ex.Expr) -> List[Polynomial]:
        """Constraints tying z to node; one-sided when the root is monotone in node"""
        z = Polynomial.variable(self.z_index[node], self.N)
        polarity = self.pol.get(node, {0})
        if isinstance(node, (ex.Sqrt, ex.Abs)):
            u = self.poly(node.child)
            square = u if isinstance(node, ex.Sqrt) else u * u
            if polarity == {1}:
                return [z * z - square, z]
            if polarity == {-1}:
                return [square - z * z, z]
            return [z * z - square, square - z * z, z]
        if isinstance(node, ex.Div):
            p, q = self.poly(node.left), self.poly(node.right)
            if self.enclose is not None and polarity in ({1}, {-1}):
                den = self.enclose(node.right)
                if not den.contains_zero():
                    side = next(iter(polarity)) * (1 if den.lo > 0 else -1)
                    return [(z * q - p).scale(side)]
            return [z * q - p, p - z * q]
        parts = [self.poly(a) for a in node.args]
        if isinstance(node, ex.Max):
            gaps = [z - p for p in parts]
            one_sided = polarity == {1}
        else:
            gaps = [p - z for p in parts]
            one_sided = polarity == {-1}
        if one_sided:
            return gaps
        product = Polynomial.constant(1, self.N)
        for g in gaps:
            product = product * g
        return gaps + [-product]

    def build(self) -> LiftedPop:
        defining: List[Polynomial] = []
        z_bounds: List[Interval] = []
        for node in self.nodes:
            defining.extend(self.defining(node))
            if self.enclose is not None:
                z_bounds.append(self.enclose(node))
        for g in self.extra:
            defining.append(self.poly(g))
        objective = self.poly(self.e)
        box = self.box.extend(z_bounds) if self.enclose is not None else self.box
        return LiftedPop(objective, defining, box, z_bounds, dict(self.z_index), self.base)

    def max_degree(self) -> int:
        degrees = [self.poly(self.e).degree()]
        for node in self.nodes:
            degrees.extend(g.degree() for g in self.defining(node))
        degrees.extend(self.poly(g).degree() for g in self.extra)
        return max(degrees)


def to_polynomial(e: ex.Expr, n: int) -> Polynomial:
    """Polynomial of a polynomial-class expression"""
    if ex.classify(e) != ex.NodeClass.POLYNOMIAL:
        raise UnsupportedExpression(f"not a polynomial: {ex.to_text(e)}")
    from nlcert.poly import from_expr
    return from_expr(e, n)


def lift(e: ex.Expr, box: BoxDomain, options: Optional[BoundOptions] = None,
         extra_constraints: Sequence[ex.Expr] = (),
         cache: Optional[Dict[ex.Expr, Interval]] = None) -> LiftedPop:
    """Lift e over box; extra_constraints are semialgebraic Exprs required >= 0"""
    options = options or BoundOptions()
    enclose = Enclosure(box, options, cache)
    lifted = _Lifter(e, box, enclose, extra_constraints).build()
    lift_logger.debug("lifted %s: %d auxiliary variables, %d defining constraints",
                      ex.to_text(e)[:60], lifted.num_lifted, len(lifted.defining))
    return lifted


def lower_bound_sa(e: ex.Expr, box: BoxDomain, options: Optional[BoundOptions] = None,
                   extra_constraints: Sequence[ex.Expr] = (),
                   cache: Optional[Dict[ex.Expr, Interval]] = None,
                   label: str = "goal", threshold: Optional[Fraction] = None) -> BoundResult:
    """SOS lower bound of a semialgebraic expression over box (certified on request)"""
    options = options or BoundOptions()
    lifted = lift(e, box, options, extra_constraints, cache)
    pop, affine = lifted.to_pop(options.order, options.bound_squares, options.scale, label)
    lam, gram = lower_bound(pop, options.tol)
    result = BoundResult(lam, pop, gram, lifted, affine)
    if options.certify:
        target = threshold if threshold is not None else Fraction(-10 ** 30)
        certificate, report = certify(gram, pop, options.denom_limit, target, label)
        result.certificate, result.report = certificate, report
        if report.certified_bound is not None:
            result.bound = float(report.certified_bound)
        else:
            lift_logger.warning("certification of %s failed: %s", label, report.message)
            result.bound = float('-inf')
    return result


def bound_sa(e: ex.Expr, box: BoxDomain, options: Optional[BoundOptions] = None,
             extra_constraints: Sequence[ex.Expr] = (),
             cache: Optional[Dict[ex.Expr, Interval]] = None,
             label: str = "range",
             certificates: Optional[List[SosCertificate]] = None) -> Interval:
    """Enclosure of e over box from SOS lower bounds of e and -e

    When options.certify is set, both sides are certified and their
    certificates are appended to certificates.
    """
    options = options or BoundOptions()
    if isinstance(e, ex.Constant):
        return Interval.point(e.value)
    lower = lower_bound_sa(e, box, options, extra_constraints, cache, label=f"{label}-lower")
    upper = lower_bound_sa(-e, box, options, extra_constraints, cache, label=f"{label}-upper")
    if not (math.isfinite(lower.bound) and math.isfinite(upper.bound)):
        raise RelaxationError(f"no certified enclosure for {ex.to_text(e)}")
    if certificates is not None:
        certificates.extend(r.certificate for r in (lower, upper) if r.certificate is not None)
    lo, hi = lower.exact_bound, -upper.exact_bound
    if lo > hi:
        if float(lo - hi) > 1e-6 * (1 + abs(float(lo))):
            raise RelaxationError(f"inconsistent bounds [{float(lo)}, {float(hi)}] for {ex.to_text(e)}")
        lo, hi = hi, lo
    lift_logger.info("semialgebraic bound of %s: [%.6g, %.6g]", ex.to_text(e)[:60], float(lo), float(hi))
    return Interval(lo, hi)


# ---------------------------------------------------------------------------
# sqrt(x_i) leaves
# ---------------------------------------------------------------------------

@dataclass
class XConversion:
    """Problem after eliminating sqrt(x_i) leaves"""
    expr: ex.Expr
    box: BoxDomain
    links: List[ex.Expr]
    mode: str  # "none", "substitute" or "link"
    converted: List[int] = field(default_factory=list)

    def convert(self, g: ex.Expr) -> ex.Expr:
        """Rewrite a side constraint into the converted variables"""
        if self.mode != "substitute":
            return g
        converted = set(self.converted)
        return ex.transform(g, lambda node: ex.Pow(node, 2)
                            if isinstance(node, ex.Var) and node.index in converted else None)

    def to_converted_point(self, x: Sequence[float]) -> List[float]:
        """Image of an original point in the converted variables"""
        if self.mode == "substitute":
            return [math.sqrt(v) if i in self.converted else v for i, v in enumerate(x)]
        if self.mode == "link":
            return list(x) + [math.sqrt(x[i]) for i in self.converted]
        return list(x)


def _sqrt_leaves(e: ex.Expr) -> List[int]:
    return sorted({node.child.index for node in ex.walk(e)
                   if isinstance(node, ex.Sqrt) and isinstance(node.child, ex.Var)})


def xconvert(e: ex.Expr, box: BoxDomain, order: int) -> XConversion:
    """Remove sqrt(x_i) leaves

    Substitutes x_i = y_i^2 everywhere when the lifted degree still fits the
    relaxation order; otherwise replaces only the sqrt(x_i) leaves by fresh
    variables y_i tied to x_i through y_i^2 = x_i.
    """
    leaves = [i for i in _sqrt_leaves(e) if box[i].lo >= 0]
    if not leaves:
        return XConversion(e, box, [], "none")

    def substitute(node: ex.Expr) -> Optional[ex.Expr]:
        if isinstance(node, ex.Sqrt) and isinstance(node.child, ex.Var) and node.child.index in leaves:
            return node.child
        if isinstance(node, ex.Var) and node.index in leaves:
            return ex.Pow(node, 2)
        return None

    substituted = ex.transform(e, substitute)
    sub_box = BoxDomain([Interval(sqrt_down(iv.lo), sqrt_up(iv.hi)) if i in leaves else iv
                         for i, iv in enumerate(box.intervals)])
    degree = _Lifter(substituted, sub_box, None).max_degree()
    if degree <= 2 * order:
        lift_logger.info("xconvert: x_i = y_i^2 for %s (lifted degree %d)",
                         ", ".join(f"x{i + 1}" for i in leaves), degree)
        return XConversion(substituted, sub_box, [], "substitute", leaves)

    index = {i: box.n + t for t, i in enumerate(leaves)}
    under_trans = {i for t in ex.walk(e) if isinstance(t, ex.Trans) for i in _sqrt_leaves(t.child)}

    def link_leaf(node: ex.Expr) -> Optional[ex.Expr]:
        if isinstance(node, ex.Sqrt) and isinstance(node.child, ex.Var) and node.child.index in index:
            return ex.Var(index[node.child.index])
        return None

    linked = ex.transform(e, link_leaf)
    link_box = box.extend([Interval(sqrt_down(box[i].lo), sqrt_up(box[i].hi)) for i in leaves])
    pol = polarities(linked)
    links: List[ex.Expr] = []
    for i in leaves:
        y, x = ex.Var(index[i]), ex.Var(i)
        # y_i >= sqrt(x_i) suffices when the objective grows with y_i (and <= when it falls)
        if pol.get(y) != {-1} or i in under_trans:
            links.append(ex.Sub(ex.Pow(y, 2), x))
        if pol.get(y) != {1} or i in under_trans:
            links.append(ex.Sub(x, ex.Pow(y, 2)))
    lift_logger.info("xconvert: linked sqrt leaves of %s (substitution degree %d > %d)",
                     ", ".join(f"x{i + 1}" for i in leaves), degree, 2 * order)
    return XConversion(linked, link_box, links, "link", leaves)
