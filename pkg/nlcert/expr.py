"""
Expression front end
Parses problem descriptions into a typed abstract syntax tree, classifies
subtrees by function class and evaluates them (float, batched, interval)
"""
import logging
import math
import re
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from lark import Lark, Transformer, Token
from lark.exceptions import UnexpectedInput, VisitError

from nlcert import DimensionError, DomainViolation, ParseError
from nlcert.domain import BoxDomain, Interval, to_fraction

expr_logger = logging.getLogger("nlcert.expr")

TRANSCENDENTAL_FUNCTIONS = ('arctan', 'exp', 'log', 'sin', 'cos')
FUNCTION_ALIASES = {
    'atan': 'arctan', 'arctan': 'arctan', 'exp': 'exp', 'log': 'log', 'ln': 'log',
    'sin': 'sin', 'cos': 'cos',
}
PRINT_NAMES = {'arctan': 'atan', 'exp': 'exp', 'log': 'log', 'sin': 'sin', 'cos': 'cos'}


class NodeClass(IntEnum):
    """Function class of a subtree, ordered Polynomial < Semialgebraic < Transcendental"""
    POLYNOMIAL = 0
    SEMIALGEBRAIC = 1
    TRANSCENDENTAL = 2


# ---------------------------------------------------------------------------
# Abstract syntax tree
# ---------------------------------------------------------------------------

class Expr:
    """Base class of syntax tree nodes (immutable, structural equality)"""

    def children(self) -> Tuple['Expr', ...]:
        return ()

    def __add__(self, other):
        return Add(self, as_expr(other))

    def __radd__(self, other):
        return Add(as_expr(other), self)

    def __sub__(self, other):
        return Sub(self, as_expr(other))

    def __rsub__(self, other):
        return Sub(as_expr(other), self)

    def __mul__(self, other):
        return Mul(self, as_expr(other))

    def __rmul__(self, other):
        return Mul(as_expr(other), self)

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __neg__(self):
        return Mul(Constant(Fraction(-1)), self)

    def __pow__(self, exponent: int):
        return Pow(self, exponent)

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True, eq=True, repr=False)
class Constant(Expr):
    value: Fraction

    def __post_init__(self):
        object.__setattr__(self, 'value', to_fraction(self.value))

    def __repr__(self):
        return f"Constant({self.value})"


@dataclass(frozen=True, eq=True, repr=False)
class Var(Expr):
    index: int  # 0-based; printed as x{index+1}

    def __repr__(self):
        return f"Var(x{self.index + 1})"


@dataclass(frozen=True, eq=True, repr=False)
class _Binary(Expr):
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)

    def __repr__(self):
        return f"{type(self).__name__}({self.left!r}, {self.right!r})"


class Add(_Binary):
    pass


class Sub(_Binary):
    pass


class Mul(_Binary):
    pass


class Div(_Binary):
    pass


@dataclass(frozen=True, eq=True, repr=False)
class Pow(Expr):
    child: Expr
    exponent: int

    def __post_init__(self):
        if int(self.exponent) != self.exponent or self.exponent < 1:
            raise ValueError(f"power exponent must be a positive integer, got {self.exponent}")

    def children(self):
        return (self.child,)

    def __repr__(self):
        return f"Pow({self.child!r}, {self.exponent})"


@dataclass(frozen=True, eq=True, repr=False)
class Sqrt(Expr):
    child: Expr

    def children(self):
        return (self.child,)

    def __repr__(self):
        return f"Sqrt({self.child!r})"


@dataclass(frozen=True, eq=True, repr=False)
class Abs(Expr):
    child: Expr

    def children(self):
        return (self.child,)

    def __repr__(self):
        return f"Abs({self.child!r})"


@dataclass(frozen=True, eq=True, repr=False)
class _Extremum(Expr):
    args: Tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, 'args', tuple(self.args))
        if len(self.args) < 2:
            raise ValueError(f"{type(self).__name__} needs at least two arguments")

    def children(self):
        return self.args

    def __repr__(self):
        return f"{type(self).__name__}({', '.join(repr(a) for a in self.args)})"


class Min(_Extremum):
    pass


class Max(_Extremum):
    pass


@dataclass(frozen=True, eq=True, repr=False)
class Trans(Expr):
    function: str
    child: Expr

    def __post_init__(self):
        if self.function not in TRANSCENDENTAL_FUNCTIONS:
            raise ValueError(f"unknown transcendental function {self.function}")

    def children(self):
        return (self.child,)

    def __repr__(self):
        return f"Trans({self.function}, {self.child!r})"


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    return Constant(to_fraction(value))


def rebuild(node: Expr, children: Sequence[Expr]) -> Expr:
    """Copy of node with new children"""
    if isinstance(node, _Binary):
        return type(node)(children[0], children[1])
    if isinstance(node, Pow):
        return Pow(children[0], node.exponent)
    if isinstance(node, (Sqrt, Abs)):
        return type(node)(children[0])
    if isinstance(node, _Extremum):
        return type(node)(tuple(children))
    if isinstance(node, Trans):
        return Trans(node.function, children[0])
    return node


def transform(e: Expr, fn: Callable[[Expr], Optional[Expr]]) -> Expr:
    """Top-down rewrite: fn returns a replacement or None to recurse into children"""
    replacement = fn(e)
    if replacement is not None:
        return replacement
    kids = e.children()
    if not kids:
        return e
    return rebuild(e, [transform(c, fn) for c in kids])


def walk(e: Expr):
    """Pre-order traversal"""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children()))


def variables_used(e: Expr) -> List[int]:
    return sorted({node.index for node in walk(e) if isinstance(node, Var)})


def count_nodes(e: Expr, kinds) -> int:
    return sum(1 for node in walk(e) if isinstance(node, kinds))


def constant_value(e: Expr) -> Optional[Fraction]:
    """Exact value of a variable-free algebraic tree, None otherwise"""
    if isinstance(e, Constant):
        return e.value
    if isinstance(e, (Add, Sub, Mul, Div)):
        a, b = constant_value(e.left), constant_value(e.right)
        if a is None or b is None:
            return None
        if isinstance(e, Add):
            return a + b
        if isinstance(e, Sub):
            return a - b
        if isinstance(e, Mul):
            return a * b
        return a / b if b != 0 else None
    if isinstance(e, Pow):
        base = constant_value(e.child)
        return None if base is None else base ** e.exponent
    return None


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def classify(e: Expr) -> NodeClass:
    """Polynomial, Semialgebraic or Transcendental (maximum over the tree)"""
    result = NodeClass.POLYNOMIAL
    for node in walk(e):
        if isinstance(node, Trans):
            return NodeClass.TRANSCENDENTAL
        if isinstance(node, (Sqrt, Min, Max, Abs)):
            result = NodeClass.SEMIALGEBRAIC
        elif isinstance(node, Div) and not constant_value(node.right):
            result = NodeClass.SEMIALGEBRAIC
    return result


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

_FLOAT_FUNCTIONS = {
    'arctan': math.atan, 'exp': math.exp, 'log': math.log, 'sin': math.sin, 'cos': math.cos,
}


def eval_float(e: Expr, x: Sequence[float]) -> float:
    """Floating evaluation at point x; domain violations name the offending subtree"""
    if isinstance(e, Constant):
        return float(e.value)
    if isinstance(e, Var):
        return float(x[e.index])
    if isinstance(e, Add):
        return eval_float(e.left, x) + eval_float(e.right, x)
    if isinstance(e, Sub):
        return eval_float(e.left, x) - eval_float(e.right, x)
    if isinstance(e, Mul):
        return eval_float(e.left, x) * eval_float(e.right, x)
    if isinstance(e, Div):
        den = eval_float(e.right, x)
        if den == 0.0:
            raise DomainViolation("division by zero", to_text(e))
        return eval_float(e.left, x) / den
    if isinstance(e, Pow):
        return eval_float(e.child, x) ** e.exponent
    if isinstance(e, Sqrt):
        arg = eval_float(e.child, x)
        if arg < 0.0:
            raise DomainViolation("sqrt of a negative value", to_text(e))
        return math.sqrt(arg)
    if isinstance(e, Abs):
        return abs(eval_float(e.child, x))
    if isinstance(e, Min):
        return min(eval_float(a, x) for a in e.args)
    if isinstance(e, Max):
        return max(eval_float(a, x) for a in e.args)
    if isinstance(e, Trans):
        arg = eval_float(e.child, x)
        if e.function == 'log' and arg <= 0.0:
            raise DomainViolation("log of a nonpositive value", to_text(e))
        return _FLOAT_FUNCTIONS[e.function](arg)
    raise TypeError(f"unknown node {e!r}")


_NUMPY_FUNCTIONS = {
    'arctan': np.arctan, 'exp': np.exp, 'log': np.log, 'sin': np.sin, 'cos': np.cos,
}


def eval_batch(e: Expr, points: np.ndarray) -> np.ndarray:
    """Vectorised evaluation over an (N, n) array; domain violations give nan"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    cache: Dict[int, np.ndarray] = {}

    def ev(node: Expr) -> np.ndarray:
        key = id(node)
        if key in cache:
            return cache[key]
        if isinstance(node, Constant):
            out = np.full(points.shape[0], float(node.value))
        elif isinstance(node, Var):
            out = points[:, node.index]
        elif isinstance(node, Add):
            out = ev(node.left) + ev(node.right)
        elif isinstance(node, Sub):
            out = ev(node.left) - ev(node.right)
        elif isinstance(node, Mul):
            out = ev(node.left) * ev(node.right)
        elif isinstance(node, Div):
            den = ev(node.right)
            out = np.where(den == 0.0, np.nan, ev(node.left) / np.where(den == 0.0, 1.0, den))
        elif isinstance(node, Pow):
            out = ev(node.child) ** node.exponent
        elif isinstance(node, Sqrt):
            arg = ev(node.child)
            out = np.where(arg < 0.0, np.nan, np.sqrt(np.abs(arg)))
        elif isinstance(node, Abs):
            out = np.abs(ev(node.child))
        elif isinstance(node, Min):
            out = np.minimum.reduce([ev(a) for a in node.args])
        elif isinstance(node, Max):
            out = np.maximum.reduce([ev(a) for a in node.args])
        elif isinstance(node, Trans):
            arg = ev(node.child)
            if node.function == 'log':
                out = np.where(arg <= 0.0, np.nan, np.log(np.where(arg <= 0.0, 1.0, arg)))
            else:
                out = _NUMPY_FUNCTIONS[node.function](arg)
        else:
            raise TypeError(f"unknown node {node!r}")
        cache[key] = out
        return out

    with np.errstate(all='ignore'):
        return ev(e)


def _monotone_interval(fn: Callable[[float], float], iv: Interval) -> Interval:
    lo, hi = iv.as_floats()
    return Interval.outward(fn(lo), fn(hi))


def _trig_interval(fn: Callable[[float], float], phase: float, iv: Interval) -> Interval:
    """Range of sin(x + phase) over iv, using the critical points k*pi + pi/2"""
    lo, hi = iv.as_floats()
    if hi - lo >= 2 * math.pi:
        return Interval(Fraction(-1), Fraction(1))
    values = [fn(lo), fn(hi)]
    k = math.floor((lo + phase - math.pi / 2) / math.pi) - 1
    while True:
        crit = k * math.pi + math.pi / 2 - phase
        if crit > hi + 1e-12:
            break
        if crit >= lo - 1e-12:
            values.append(1.0 if k % 2 == 0 else -1.0)
        k += 1
    return Interval(max(Fraction(-1), Interval.outward(min(values), min(values)).lo),
                    min(Fraction(1), Interval.outward(max(values), max(values)).hi))


def transcendental_interval(function: str, iv: Interval) -> Interval:
    """Outward-rounded range of a dictionary function over iv (2-ulp contract)"""
    if function == 'arctan':
        return _monotone_interval(math.atan, iv)
    if function == 'exp':
        return _monotone_interval(math.exp, iv)
    if function == 'log':
        if iv.lo <= 0:
            raise DomainViolation("log of an interval reaching zero", str(iv))
        return _monotone_interval(math.log, iv)
    if function == 'sin':
        return _trig_interval(math.sin, 0.0, iv)
    if function == 'cos':
        return _trig_interval(math.cos, math.pi / 2, iv)
    raise ValueError(function)


def eval_interval(e: Expr, box: BoxDomain,
                  cache: Optional[Dict[Expr, Interval]] = None) -> Interval:
    """Enclosure of e over box by recursive interval arithmetic

    Algebraic nodes are exact over the rationals; sqrt and transcendental
    nodes are rounded outward.
    """
    if cache is None:
        cache = {}
    if e in cache:
        return cache[e]
    if isinstance(e, Constant):
        out = Interval.point(e.value)
    elif isinstance(e, Var):
        out = box[e.index]
    elif isinstance(e, Add):
        out = eval_interval(e.left, box, cache) + eval_interval(e.right, box, cache)
    elif isinstance(e, Sub):
        out = eval_interval(e.left, box, cache) - eval_interval(e.right, box, cache)
    elif isinstance(e, Mul):
        if e.left == e.right:
            out = eval_interval(e.left, box, cache) ** 2
        else:
            out = eval_interval(e.left, box, cache) * eval_interval(e.right, box, cache)
    elif isinstance(e, Div):
        den = eval_interval(e.right, box, cache)
        if den.contains_zero():
            raise DomainViolation("denominator interval contains zero", to_text(e.right))
        out = eval_interval(e.left, box, cache) / den
    elif isinstance(e, Pow):
        out = eval_interval(e.child, box, cache) ** e.exponent
    elif isinstance(e, Sqrt):
        arg = eval_interval(e.child, box, cache)
        if arg.lo < 0:
            raise DomainViolation("sqrt argument interval dips below zero", to_text(e.child))
        out = arg.sqrt()
    elif isinstance(e, Abs):
        out = eval_interval(e.child, box, cache).abs()
    elif isinstance(e, (Min, Max)):
        parts = [eval_interval(a, box, cache) for a in e.args]
        if isinstance(e, Min):
            out = Interval(min(p.lo for p in parts), min(p.hi for p in parts))
        else:
            out = Interval(max(p.lo for p in parts), max(p.hi for p in parts))
    elif isinstance(e, Trans):
        out = transcendental_interval(e.function, eval_interval(e.child, box, cache))
    else:
        raise TypeError(f"unknown node {e!r}")
    cache[e] = out
    return out


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

def fraction_to_decimal(q: Fraction) -> Optional[str]:
    """Exact decimal rendering when the denominator only has factors 2 and 5"""
    den = q.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return None
    digits = max(twos, fives)
    scaled = abs(q.numerator) * (10 ** digits) // q.denominator
    text = str(scaled)
    if digits:
        text = text.rjust(digits + 1, '0')
        text = f"{text[:-digits]}.{text[-digits:]}".rstrip('0').rstrip('.')
    return ('-' if q < 0 else '') + text


def _const_text(value: Fraction) -> str:
    text = fraction_to_decimal(value)
    if text is None:
        text = f"({value.numerator}/{value.denominator})"
        return text if value >= 0 else f"({text})"
    return f"({text})" if value < 0 else text


_LEVEL = {Add: 1, Sub: 1, Mul: 2, Div: 2, Pow: 3}


def _level(e: Expr) -> int:
    if isinstance(e, Constant) and e.value < 0:
        return 4
    return _LEVEL.get(type(e), 4)


def to_text(e: Expr) -> str:
    """Infix rendering in the input grammar; parse(to_text(e)) rebuilds e"""
    if isinstance(e, Constant):
        return _const_text(e.value)
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, _Binary):
        op = {Add: '+', Sub: '-', Mul: '*', Div: '/'}[type(e)]
        level = _LEVEL[type(e)]
        left = to_text(e.left)
        if _level(e.left) < level:
            left = f"({left})"
        right = to_text(e.right)
        if _level(e.right) <= level:
            right = f"({right})"
        return f"{left} {op} {right}" if level == 1 else f"{left}*{right}" if op == '*' else f"{left}/{right}"
    if isinstance(e, Pow):
        base = to_text(e.child)
        if _level(e.child) <= 3:
            base = f"({base})"
        return f"{base}^{e.exponent}"
    if isinstance(e, Sqrt):
        return f"sqrt({to_text(e.child)})"
    if isinstance(e, Abs):
        return f"abs({to_text(e.child)})"
    if isinstance(e, (Min, Max)):
        name = 'min' if isinstance(e, Min) else 'max'
        return f"{name}({', '.join(to_text(a) for a in e.args)})"
    if isinstance(e, Trans):
        return f"{PRINT_NAMES[e.function]}({to_text(e.child)})"
    raise TypeError(f"unknown node {e!r}")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

FORMULA_GRAMMAR = r"""
    ?start: sum

    ?sum: product
        | sum "+" product   -> add
        | sum "-" product   -> sub

    ?product: unary
        | product "*" unary -> mul
        | product "/" unary -> div

    ?unary: power
        | "-" unary         -> neg
        | "+" unary

    ?power: atom
        | atom "^" INT      -> pow

    ?atom: NUMBER                          -> number
        | NAME "(" sum ("," sum)* ")"      -> call
        | NAME                             -> name
        | "(" sum ")"

    NUMBER: /(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?/
    NAME: /[A-Za-z_][A-Za-z0-9_]*/
    INT: /\d+/

    %import common.WS
    %ignore WS
"""

_formula_parser = Lark(FORMULA_GRAMMAR, start='start', parser='lalr')
_VAR_NAME = re.compile(r'^x([1-9]\d*)$')


class _FormulaBuilder(Transformer):
    """Turns the lark parse tree into Expr nodes"""

    def __init__(self, definitions: Dict[str, Expr], dimension: Optional[int],
                 line: int, column_offset: int):
        super().__init__()
        self.definitions = definitions
        self.dimension = dimension
        self.line = line
        self.column_offset = column_offset

    def _error(self, message: str, token: Token) -> ParseError:
        line = self.line or token.line
        column = (token.column or 0) + (self.column_offset if self.line else 0)
        return ParseError(message, line, column)

    def number(self, items):
        return Constant(Fraction(str(items[0])))

    def add(self, items):
        return Add(items[0], items[1])

    def sub(self, items):
        return Sub(items[0], items[1])

    def mul(self, items):
        return Mul(items[0], items[1])

    def div(self, items):
        left, right = items
        if constant_value(right) == 0:
            raise ParseError(f"division by the constant zero: {to_text(left)}/{to_text(right)}", self.line)
        if isinstance(left, Constant) and isinstance(right, Constant):
            return Constant(left.value / right.value)
        return Div(left, right)

    def neg(self, items):
        child = items[0]
        if isinstance(child, Constant):
            return Constant(-child.value)
        return Mul(Constant(Fraction(-1)), child)

    def pow(self, items):
        base, exponent = items
        if int(exponent) < 1:
            raise self._error("exponent must be a positive integer", exponent)
        return Pow(base, int(exponent))

    def name(self, items):
        token = items[0]
        ident = str(token)
        if ident in self.definitions:
            return self.definitions[ident]
        match = _VAR_NAME.match(ident)
        if not match:
            raise self._error(f"unknown name '{ident}'", token)
        index = int(match.group(1)) - 1
        if self.dimension is not None and index >= self.dimension:
            raise DimensionError(
                f"variable {ident} exceeds the box dimension {self.dimension} (line {self.line or token.line})")
        return Var(index)

    def call(self, items):
        token, args = items[0], items[1:]
        fname = str(token).lower()
        if fname in FUNCTION_ALIASES:
            if len(args) != 1:
                raise self._error(f"{fname} takes one argument", token)
            return Trans(FUNCTION_ALIASES[fname], args[0])
        if fname == 'sqrt':
            if len(args) != 1:
                raise self._error("sqrt takes one argument", token)
            return Sqrt(args[0])
        if fname == 'abs':
            if len(args) != 1:
                raise self._error("abs takes one argument", token)
            return Abs(args[0])
        if fname in ('min', 'max'):
            if len(args) < 2:
                raise self._error(f"{fname} needs at least two arguments", token)
            return (Min if fname == 'min' else Max)(tuple(args))
        raise self._error(f"unknown function '{token}'", token)


def parse_formula(text: str, definitions: Optional[Dict[str, Expr]] = None,
                  dimension: Optional[int] = None, line: int = 0, column_offset: int = 0) -> Expr:
    """Parse one infix formula into an Expr"""
    try:
        tree = _formula_parser.parse(text)
    except UnexpectedInput as exc:
        pos = getattr(exc, 'pos_in_stream', None) or 0
        line_no = line or max(getattr(exc, 'line', 1) or 1, 1)
        column = max(getattr(exc, 'column', 1) or 1, 1) + (column_offset if line else 0)
        raise ParseError(f"syntax error near {text[max(pos - 5, 0):pos + 5]!r}",
                         line_no, column) from None
    builder = _FormulaBuilder(definitions or {}, dimension, line, column_offset)
    try:
        return builder.transform(tree)
    except VisitError as exc:
        if isinstance(exc.orig_exc, (ParseError, DimensionError)):
            raise exc.orig_exc from None
        raise


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------

@dataclass
class Problem:
    """Goal objective >= 0 over a box, optionally cut by polynomial constraints"""
    objective: Expr
    box: BoxDomain
    constraints: List[Expr] = field(default_factory=list)
    options: Dict[str, str] = field(default_factory=dict)
    name: str = "goal"
    definitions: Dict[str, Expr] = field(default_factory=dict)

    def __post_init__(self):
        n = self.box.n
        for e in [self.objective] + list(self.constraints):
            used = variables_used(e)
            if used and used[-1] >= n:
                raise DimensionError(f"formula uses x{used[-1] + 1} but the box has dimension {n}")
        for g in self.constraints:
            if classify(g) != NodeClass.POLYNOMIAL:
                raise ParseError(f"constraint must be polynomial: {to_text(g)}")

    @property
    def n(self) -> int:
        return self.box.n

    def to_text(self) -> str:
        """Canonical serialization (stable input for problem hashes)"""
        lines = [f"name: {self.name}", f"objective: {to_text(self.objective)}",
                 f"box: {self.box.to_text()}"]
        lines += [f"constraint: {to_text(g)} >= 0" for g in self.constraints]
        return "\n".join(lines) + "\n"

    def with_box(self, box: BoxDomain) -> 'Problem':
        return Problem(self.objective, box, list(self.constraints), dict(self.options),
                       self.name, dict(self.definitions))

    def with_objective(self, objective: Expr, name: Optional[str] = None) -> 'Problem':
        return Problem(objective, self.box, list(self.constraints), dict(self.options),
                       name or self.name, dict(self.definitions))


_BOX_FACTOR = re.compile(r'\[\s*([^,\[\]]+?)\s*,\s*([^\[\]]+?)\s*\](?:\s*\^\s*(\d+))?')
_BOX_SEPARATOR = re.compile(r'^[\sx×*]*$')
_GOAL_SUFFIX = re.compile(r'\s*>=\s*0\s*$')


def _parse_endpoint(text: str, line: int) -> Fraction:
    value = constant_value(parse_formula(text, line=line))
    if value is None:
        raise ParseError(f"box endpoint must be a constant: {text!r}", line)
    return value


def parse_box(text: str, line: int = 0) -> BoxDomain:
    """Parse '[lo,hi] x [lo,hi]^k ...' into a BoxDomain"""
    intervals = []
    position = 0
    for match in _BOX_FACTOR.finditer(text):
        if not _BOX_SEPARATOR.match(text[position:match.start()]):
            raise ParseError(f"unexpected text in box: {text[position:match.start()]!r}", line, position + 1)
        lo = _parse_endpoint(match.group(1), line)
        hi = _parse_endpoint(match.group(2), line)
        if lo > hi:
            raise ParseError(f"empty interval [{match.group(1)}, {match.group(2)}]", line, match.start() + 1)
        intervals.extend([Interval(lo, hi)] * int(match.group(3) or 1))
        position = match.end()
    if not intervals or not _BOX_SEPARATOR.match(text[position:]):
        raise ParseError(f"malformed box: {text!r}", line, position + 1)
    return BoxDomain(intervals)


def _strip_goal(formula: str) -> str:
    return _GOAL_SUFFIX.sub('', formula)


def parse_problem(text: str) -> Problem:
    """Parse a problem description (file format or one-line shorthand)"""
    lines = text.splitlines()
    keyed = any(re.match(r'^\s*(objective|box)\s*:', ln) for ln in lines)
    if not keyed:
        stripped = " ".join(ln.split('#', 1)[0].strip() for ln in lines).strip()
        if ' on ' not in stripped:
            raise ParseError("expected '<formula> >= 0 on <box>' or an objective:/box: file", 1, 1)
        formula, box_text = stripped.rsplit(' on ', 1)
        box = parse_box(box_text, 1)
        objective = parse_formula(_strip_goal(formula), dimension=box.n, line=1)
        return Problem(objective, box)

    name = "goal"
    box: Optional[BoxDomain] = None
    objective_entry: Optional[Tuple[str, int, int]] = None
    constraint_entries: List[Tuple[str, int, int]] = []
    define_entries: List[Tuple[str, str, int, int]] = []
    options: Dict[str, str] = {}
    for number, raw in enumerate(lines, start=1):
        content = raw.split('#', 1)[0].rstrip()
        if not content.strip():
            continue
        match = re.match(r'^\s*(name|objective|box|constraint)\s*:\s*', content)
        if match:
            key, body, offset = match.group(1), content[match.end():], match.end() + 1
            if key == 'name':
                name = body.strip()
            elif key == 'box':
                box = parse_box(body, number)
            elif key == 'objective':
                objective_entry = (_strip_goal(body), number, offset)
            else:
                if not _GOAL_SUFFIX.search(body):
                    raise ParseError("constraints must read '<poly> >= 0'", number, offset)
                constraint_entries.append((_strip_goal(body), number, offset))
            continue
        match = re.match(r'^\s*define\s+([A-Za-z_][A-Za-z0-9_]*)\s*=\s*', content)
        if match:
            define_entries.append((match.group(1), content[match.end():], number, match.end() + 1))
            continue
        match = re.match(r'^\s*option\s+([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(\S+)\s*$', content)
        if match:
            options[match.group(1)] = match.group(2)
            continue
        raise ParseError(f"unrecognised line: {content.strip()!r}", number, 1)

    if box is None:
        raise ParseError("missing 'box:' line", len(lines) or 1, 1)
    if objective_entry is None:
        raise ParseError("missing 'objective:' line", len(lines) or 1, 1)
    definitions: Dict[str, Expr] = {}
    for ident, body, number, offset in define_entries:
        if _VAR_NAME.match(ident) or ident.lower() in FUNCTION_ALIASES:
            raise ParseError(f"cannot redefine '{ident}'", number, offset)
        definitions[ident] = parse_formula(body, definitions, box.n, number, offset)
    objective = parse_formula(objective_entry[0], definitions, box.n, objective_entry[1], objective_entry[2])
    constraints = [parse_formula(body, definitions, box.n, number, offset)
                   for body, number, offset in constraint_entries]
    expr_logger.debug("parsed problem %s: n=%d, %d constraints", name, box.n, len(constraints))
    return Problem(objective, box, constraints, options, name, definitions)


def load_problem(path: str) -> Problem:
    with open(path, 'r', encoding='utf-8') as f:
        return parse_problem(f.read())
