"""
Sparse multivariate polynomials over exact rationals
Arithmetic, exact and floating evaluation, interval bounds and unit-box rescaling
"""
import re
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations_with_replacement
from math import comb
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from nlcert import DimensionError, UnsupportedExpression
from nlcert.domain import BoxDomain, Interval, to_fraction

Monomial = Tuple[int, ...]
Scalar = Union[int, Fraction]


def grlex_key(alpha: Monomial) -> Tuple[int, Monomial]:
    """Graded lexicographic sort key (ascending: 1 < x_n < ... < x_1 < x_n^2 ...)"""
    return (sum(alpha), alpha)


def monomials_up_to(n: int, degree: int) -> List[Monomial]:
    """All exponent vectors in n variables of total degree <= degree, in grlex order"""
    out: List[Monomial] = []
    for d in range(degree + 1):
        layer = []
        for combo in combinations_with_replacement(range(n), d):
            alpha = [0] * n
            for i in combo:
                alpha[i] += 1
            layer.append(tuple(alpha))
        out.extend(sorted(layer))
    return out


def count_monomials(n: int, degree: int) -> int:
    return comb(n + degree, degree)


def add_monomials(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


class Polynomial:
    """Polynomial in n variables: map from exponent tuples to nonzero Fractions"""

    __slots__ = ('n', 'terms', '_hash')

    def __init__(self, n: int, terms: Optional[Dict[Monomial, Scalar]] = None):
        if n < 0:
            raise DimensionError(f"negative dimension {n}")
        self.n = n
        self.terms: Dict[Monomial, Fraction] = {}
        self._hash = None
        for alpha, c in (terms or {}).items():
            alpha = tuple(alpha)
            if len(alpha) != n:
                raise DimensionError(f"monomial {alpha} does not have {n} entries")
            c = to_fraction(c)
            if c != 0:
                self.terms[alpha] = c

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, n: int) -> 'Polynomial':
        return cls(n)

    @classmethod
    def constant(cls, value: Scalar, n: int) -> 'Polynomial':
        return cls(n, {(0,) * n: value})

    @classmethod
    def variable(cls, i: int, n: int) -> 'Polynomial':
        alpha = [0] * n
        alpha[i] = 1
        return cls(n, {tuple(alpha): 1})

    @classmethod
    def monomial(cls, alpha: Monomial, coefficient: Scalar = 1) -> 'Polynomial':
        return cls(len(alpha), {tuple(alpha): coefficient})

    # -- queries -----------------------------------------------------------

    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, alpha: Monomial) -> Fraction:
        return self.terms.get(tuple(alpha), Fraction(0))

    def constant_term(self) -> Fraction:
        return self.coefficient((0,) * self.n)

    def sorted_terms(self, descending: bool = False) -> List[Tuple[Monomial, Fraction]]:
        return sorted(self.terms.items(), key=lambda t: grlex_key(t[0]), reverse=descending)

    def variables(self) -> List[int]:
        return sorted({i for alpha in self.terms for i, e in enumerate(alpha) if e})

    def __len__(self) -> int:
        return len(self.terms)

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = Polynomial.constant(other, self.n)
        return isinstance(other, Polynomial) and self.n == other.n and self.terms == other.terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.n, frozenset(self.terms.items())))
        return self._hash

    # -- arithmetic --------------------------------------------------------

    def _coerce(self, other) -> 'Polynomial':
        if isinstance(other, Polynomial):
            if other.n != self.n:
                raise DimensionError(f"dimension mismatch: {self.n} vs {other.n}")
            return other
        return Polynomial.constant(to_fraction(other), self.n)

    def __add__(self, other) -> 'Polynomial':
        other = self._coerce(other)
        out = dict(self.terms)
        for alpha, c in other.terms.items():
            out[alpha] = out.get(alpha, Fraction(0)) + c
        return Polynomial(self.n, out)

    __radd__ = __add__

    def __neg__(self) -> 'Polynomial':
        return Polynomial(self.n, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other) -> 'Polynomial':
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> 'Polynomial':
        return self._coerce(other) - self

    def __mul__(self, other) -> 'Polynomial':
        if not isinstance(other, Polynomial):
            return self.scale(other)
        other = self._coerce(other)
        out: Dict[Monomial, Fraction] = {}
        for a, c in self.terms.items():
            for b, d in other.terms.items():
                key = add_monomials(a, b)
                out[key] = out.get(key, Fraction(0)) + c * d
        return Polynomial(self.n, out)

    __rmul__ = __mul__

    def scale(self, factor: Scalar) -> 'Polynomial':
        factor = to_fraction(factor)
        return Polynomial(self.n, {a: c * factor for a, c in self.terms.items()})

    def __pow__(self, exponent: int) -> 'Polynomial':
        if exponent < 0:
            raise ValueError("negative polynomial power")
        result = Polynomial.constant(1, self.n)
        base = self
        while exponent:
            if exponent & 1:
                result = result * base
            exponent >>= 1
            if exponent:
                base = base * base
        return result

    # -- structure ---------------------------------------------------------

    def extend(self, n_new: int) -> 'Polynomial':
        """Same polynomial viewed in n_new >= n variables"""
        if n_new < self.n:
            raise DimensionError(f"cannot shrink dimension {self.n} to {n_new}")
        pad = (0,) * (n_new - self.n)
        return Polynomial(n_new, {a + pad: c for a, c in self.terms.items()})

    def compose(self, images: Sequence['Polynomial']) -> 'Polynomial':
        """Substitute x_i := images[i]; all images share one dimension"""
        if len(images) != self.n:
            raise DimensionError(f"need {self.n} images, got {len(images)}")
        m = images[0].n if images else 0
        powers: Dict[Tuple[int, int], Polynomial] = {}

        def power(i: int, e: int) -> Polynomial:
            if (i, e) not in powers:
                powers[(i, e)] = images[i] ** e if e < 2 else (
                    power(i, e - 1) * images[i])
            return powers[(i, e)]

        result = Polynomial.zero(m)
        for alpha, c in self.sorted_terms():
            term = Polynomial.constant(c, m)
            for i, e in enumerate(alpha):
                if e:
                    term = term * power(i, e)
            result = result + term
        return result

    # -- evaluation --------------------------------------------------------

    def eval_exact(self, x: Sequence[Scalar]) -> Fraction:
        if len(x) != self.n:
            raise DimensionError(f"point has {len(x)} coordinates, expected {self.n}")
        xs = [to_fraction(v) for v in x]
        total = Fraction(0)
        for alpha, c in self.terms.items():
            term = c
            for v, e in zip(xs, alpha):
                if e:
                    term *= v ** e
            total += term
        return total

    def float_mirror(self) -> Tuple[np.ndarray, np.ndarray]:
        """(exponent matrix, float coefficients) for fast numerical work"""
        if not self.terms:
            return np.zeros((0, self.n), dtype=int), np.zeros(0)
        items = self.sorted_terms()
        exponents = np.array([a for a, _ in items], dtype=int).reshape(len(items), self.n)
        coefficients = np.array([float(c) for _, c in items])
        return exponents, coefficients

    def eval_float(self, points) -> np.ndarray:
        """Vectorised float evaluation at an (N, n) array (or a single point)"""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        exponents, coefficients = self.float_mirror()
        if coefficients.size == 0:
            return np.zeros(pts.shape[0])
        monos = np.prod(pts[:, None, :] ** exponents[None, :, :], axis=2)
        return monos @ coefficients

    # -- text --------------------------------------------------------------

    def to_text(self) -> str:
        return to_text(self)

    def __str__(self) -> str:
        return to_text(self)

    def __repr__(self) -> str:
        return f"Polynomial(n={self.n}, {to_text(self)})"


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------

def add(p: Polynomial, q) -> Polynomial:
    return p + q


def sub(p: Polynomial, q) -> Polynomial:
    return p - q


def mul(p: Polynomial, q) -> Polynomial:
    return p * q


def scale(p: Polynomial, factor: Scalar) -> Polynomial:
    return p.scale(factor)


def pow(p: Polynomial, exponent: int) -> Polynomial:  # noqa: A001
    return p ** exponent


def eval_exact(p: Polynomial, x: Sequence[Scalar]) -> Fraction:
    return p.eval_exact(x)


def interval_bound(p: Polynomial, box: BoxDomain) -> Interval:
    """Enclosure of p over box by exact per-monomial interval products"""
    if box.n != p.n:
        raise DimensionError(f"box dimension {box.n} differs from polynomial dimension {p.n}")
    lo = hi = Fraction(0)
    for alpha, c in p.terms.items():
        iv = Interval.point(1)
        for i, e in enumerate(alpha):
            if e:
                iv = iv * (box[i] ** e)
        if c > 0:
            lo += c * iv.lo
            hi += c * iv.hi
        else:
            lo += c * iv.hi
            hi += c * iv.lo
    return Interval(lo, hi)


@dataclass(frozen=True)
class AffineMap:
    """x_i = lo_i + width_i * u_i (width_i = 0 for degenerate variables)"""
    lo: Tuple[Fraction, ...]
    width: Tuple[Fraction, ...]

    @property
    def n(self) -> int:
        return len(self.lo)

    def to_original(self, u: Sequence[Scalar]) -> List[Fraction]:
        return [l + w * to_fraction(v) for l, w, v in zip(self.lo, self.width, u)]

    def to_unit(self, x: Sequence[Scalar]) -> List[Fraction]:
        return [(to_fraction(v) - l) / w if w else Fraction(0)
                for l, w, v in zip(self.lo, self.width, x)]

    def to_original_float(self, u: np.ndarray) -> np.ndarray:
        lo = np.array([float(v) for v in self.lo])
        width = np.array([float(v) for v in self.width])
        return lo + width * np.asarray(u, dtype=float)

    def unit_box(self) -> BoxDomain:
        return BoxDomain([(0, 1) if w else (0, 0) for w in self.width])

    def images(self) -> List[Polynomial]:
        n = self.n
        return [Polynomial.constant(l, n) + Polynomial.variable(i, n).scale(w)
                for i, (l, w) in enumerate(zip(self.lo, self.width))]


def rescale_to_unit_box(p: Polynomial, box: BoxDomain) -> Tuple[Polynomial, AffineMap]:
    """q(u) = p(lo + u*(hi - lo)); degenerate variables become their constant value"""
    if box.n != p.n:
        raise DimensionError(f"box dimension {box.n} differs from polynomial dimension {p.n}")
    affine = AffineMap(tuple(box.lower), tuple(iv.width for iv in box.intervals))
    return p.compose(affine.images()), affine


# ---------------------------------------------------------------------------
# Conversion from expression trees
# ---------------------------------------------------------------------------

def from_expr(e, n: int) -> Polynomial:
    """Expand a polynomial-class Expr into a Polynomial in n variables"""
    from nlcert import expr as ex

    cache: Dict[int, Polynomial] = {}

    def conv(node) -> Polynomial:
        key = id(node)
        if key in cache:
            return cache[key]
        if isinstance(node, ex.Constant):
            out = Polynomial.constant(node.value, n)
        elif isinstance(node, ex.Var):
            if node.index >= n:
                raise DimensionError(f"x{node.index + 1} exceeds dimension {n}")
            out = Polynomial.variable(node.index, n)
        elif isinstance(node, ex.Add):
            out = conv(node.left) + conv(node.right)
        elif isinstance(node, ex.Sub):
            out = conv(node.left) - conv(node.right)
        elif isinstance(node, ex.Mul):
            out = conv(node.left) * conv(node.right)
        elif isinstance(node, ex.Pow):
            out = conv(node.child) ** node.exponent
        elif isinstance(node, ex.Div):
            den = ex.constant_value(node.right)
            if den is None or den == 0:
                raise UnsupportedExpression(f"not a polynomial: {ex.to_text(node)}")
            out = conv(node.left).scale(1 / den)
        else:
            raise UnsupportedExpression(f"not a polynomial: {ex.to_text(node)}")
        cache[key] = out
        return out

    return conv(e)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def rational_text(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}" if q.denominator != 1 else str(q.numerator)


def monomial_text(alpha: Monomial) -> str:
    factors = []
    for i, e in enumerate(alpha):
        if e == 1:
            factors.append(f"x{i + 1}")
        elif e > 1:
            factors.append(f"x{i + 1}^{e}")
    return "*".join(factors)


def to_text(p: Polynomial) -> str:
    """'num/den*x1^a*x3 + ...' in descending graded-lex order; '0' for zero"""
    if p.is_zero():
        return "0"
    parts = []
    for alpha, c in p.sorted_terms(descending=True):
        mono = monomial_text(alpha)
        parts.append(f"{rational_text(c)}*{mono}" if mono else rational_text(c))
    return " + ".join(parts)


_TERM = re.compile(r'^(-?\d+)(?:/(\d+))?((?:\*x\d+(?:\^\d+)?)*)$')
_FACTOR = re.compile(r'\*x(\d+)(?:\^(\d+))?')


def from_text(text: str, n: int) -> Polynomial:
    """Inverse of to_text; raises ValueError on malformed input"""
    text = text.strip()
    if text == "0":
        return Polynomial.zero(n)
    terms: Dict[Monomial, Fraction] = {}
    for raw in text.split(" + "):
        match = _TERM.match(raw.strip())
        if not match:
            raise ValueError(f"malformed polynomial term {raw!r}")
        den = int(match.group(2) or 1)
        if den == 0:
            raise ValueError(f"zero denominator in {raw!r}")
        alpha = [0] * n
        for var, exp in _FACTOR.findall(match.group(3)):
            index = int(var) - 1
            if not 0 <= index < n:
                raise ValueError(f"variable x{var} outside dimension {n}")
            alpha[index] += int(exp or 1)
        key = tuple(alpha)
        if key in terms:
            raise ValueError(f"repeated monomial in {text[:40]!r}")
        terms[key] = Fraction(int(match.group(1)), den)
    return Polynomial(n, terms)


def sum_polynomials(polys: Iterable[Polynomial], n: int) -> Polynomial:
    out: Dict[Monomial, Fraction] = {}
    for p in polys:
        if p.n != n:
            raise DimensionError(f"dimension mismatch: {p.n} vs {n}")
        for alpha, c in p.terms.items():
            out[alpha] = out.get(alpha, Fraction(0)) + c
    return Polynomial(n, out)
