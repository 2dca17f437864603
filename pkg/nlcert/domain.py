"""
Shared value types: closed rational intervals and boxes
Used by the expression, polynomial, lifting and driver modules
"""
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, List, Sequence, Tuple, Union

from nlcert import DimensionError

Number = Union[int, float, Fraction]


def to_fraction(value: Union[Number, str]) -> Fraction:
    """Exact rational from an int, Fraction, decimal string or float (floats are taken bit-exactly)"""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, str)):
        return Fraction(value)
    return Fraction(float(value))


def _down(x: float, ulps: int = 2) -> Fraction:
    for _ in range(ulps):
        x = math.nextafter(x, -math.inf)
    return Fraction(x)


def _up(x: float, ulps: int = 2) -> Fraction:
    for _ in range(ulps):
        x = math.nextafter(x, math.inf)
    return Fraction(x)


def sqrt_down(q: Fraction) -> Fraction:
    """Rational r with r >= 0 and r*r <= q"""
    if q <= 0:
        return Fraction(0)
    r = _down(math.sqrt(float(q)))
    while r > 0 and r * r > q:
        r = _down(float(r))
    return max(r, Fraction(0))


def sqrt_up(q: Fraction) -> Fraction:
    """Rational r with r*r >= q"""
    if q <= 0:
        return Fraction(0)
    r = _up(math.sqrt(float(q)))
    while r * r < q:
        r = _up(float(r))
    return r


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi] with exact rational endpoints"""
    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        object.__setattr__(self, 'lo', to_fraction(self.lo))
        object.__setattr__(self, 'hi', to_fraction(self.hi))
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, value: Number) -> 'Interval':
        v = to_fraction(value)
        return cls(v, v)

    @classmethod
    def outward(cls, lo: float, hi: float, ulps: int = 2) -> 'Interval':
        """Interval from float bounds widened by a few ulps on each side"""
        return cls(_down(lo, ulps), _up(hi, ulps))

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def mid(self) -> Fraction:
        return (self.lo + self.hi) / 2

    def as_floats(self) -> Tuple[float, float]:
        return float(self.lo), float(self.hi)

    def contains(self, value: Number) -> bool:
        v = to_fraction(value)
        return self.lo <= v <= self.hi

    def contains_zero(self) -> bool:
        return self.lo <= 0 <= self.hi

    def hull(self, other: 'Interval') -> 'Interval':
        return Interval(min(self.lo, other.lo), max(self.hi, other.hi))

    def __add__(self, other: Union['Interval', Number]) -> 'Interval':
        if not isinstance(other, Interval):
            other = Interval.point(other)
        return Interval(self.lo + other.lo, self.hi + other.hi)

    __radd__ = __add__

    def __neg__(self) -> 'Interval':
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other: Union['Interval', Number]) -> 'Interval':
        if not isinstance(other, Interval):
            other = Interval.point(other)
        return self + (-other)

    def __mul__(self, other: Union['Interval', Number]) -> 'Interval':
        if not isinstance(other, Interval):
            other = Interval.point(other)
        products = (self.lo * other.lo, self.lo * other.hi,
                    self.hi * other.lo, self.hi * other.hi)
        return Interval(min(products), max(products))

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> 'Interval':
        """Sign-aware integer power"""
        if exponent == 0:
            return Interval.point(1)
        lo_p, hi_p = self.lo ** exponent, self.hi ** exponent
        if exponent % 2 == 1:
            return Interval(lo_p, hi_p)
        if self.lo >= 0:
            return Interval(lo_p, hi_p)
        if self.hi <= 0:
            return Interval(hi_p, lo_p)
        return Interval(Fraction(0), max(lo_p, hi_p))

    def reciprocal(self) -> 'Interval':
        if self.contains_zero():
            raise ZeroDivisionError("interval reciprocal through zero")
        return Interval(1 / self.hi, 1 / self.lo)

    def __truediv__(self, other: 'Interval') -> 'Interval':
        return self * other.reciprocal()

    def sqrt(self) -> 'Interval':
        return Interval(sqrt_down(self.lo), sqrt_up(self.hi))

    def abs(self) -> 'Interval':
        if self.lo >= 0:
            return self
        if self.hi <= 0:
            return -self
        return Interval(Fraction(0), max(-self.lo, self.hi))

    def __str__(self) -> str:
        lo, hi = self.as_floats()
        return f"[{lo:.6g}, {hi:.6g}]"


class BoxDomain:
    """Product of closed rational intervals [lo_i, hi_i], i = 1..n"""

    def __init__(self, intervals: Iterable[Union[Interval, Tuple[Number, Number]]]):
        self.intervals: List[Interval] = [
            iv if isinstance(iv, Interval) else Interval(to_fraction(iv[0]), to_fraction(iv[1]))
            for iv in intervals
        ]
        if not self.intervals:
            raise DimensionError("a box needs at least one variable")

    @classmethod
    def uniform(cls, lo: Number, hi: Number, n: int) -> 'BoxDomain':
        return cls([(lo, hi)] * n)

    @classmethod
    def unit(cls, n: int) -> 'BoxDomain':
        return cls.uniform(0, 1, n)

    @property
    def n(self) -> int:
        return len(self.intervals)

    @property
    def lower(self) -> List[Fraction]:
        return [iv.lo for iv in self.intervals]

    @property
    def upper(self) -> List[Fraction]:
        return [iv.hi for iv in self.intervals]

    def __getitem__(self, i: int) -> Interval:
        return self.intervals[i]

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        return isinstance(other, BoxDomain) and self.intervals == other.intervals

    def __hash__(self) -> int:
        return hash(tuple(self.intervals))

    def extend(self, intervals: Sequence[Interval]) -> 'BoxDomain':
        return BoxDomain(list(self.intervals) + list(intervals))

    def center(self) -> List[Fraction]:
        return [iv.mid for iv in self.intervals]

    def contains(self, point: Sequence[Number]) -> bool:
        if len(point) != self.n:
            return False
        return all(iv.contains(v) for iv, v in zip(self.intervals, point))

    def widest_dimension(self) -> int:
        """Index of the widest variable, relative to its magnitude"""
        def relative_width(iv: Interval) -> float:
            scale = max(abs(float(iv.lo)), abs(float(iv.hi)), 1.0)
            return float(iv.width) / scale
        return max(range(self.n), key=lambda i: (relative_width(self.intervals[i]), -i))

    def bisect(self, dim: int) -> Tuple['BoxDomain', 'BoxDomain']:
        iv = self.intervals[dim]
        left = list(self.intervals)
        right = list(self.intervals)
        left[dim] = Interval(iv.lo, iv.mid)
        right[dim] = Interval(iv.mid, iv.hi)
        return BoxDomain(left), BoxDomain(right)

    def as_float_arrays(self):
        import numpy as np
        return (np.array([float(v) for v in self.lower]),
                np.array([float(v) for v in self.upper]))

    def to_text(self) -> str:
        return " x ".join(f"[{iv.lo},{iv.hi}]" for iv in self.intervals)

    def __repr__(self) -> str:
        return "BoxDomain(" + ", ".join(str(iv) for iv in self.intervals) + ")"


def tiles(box: BoxDomain, parts: Sequence[BoxDomain]) -> bool:
    """True when parts lie inside box, meet only on faces and fill its volume

    Volumes are taken over the dimensions where box has positive width.
    """
    dims = [i for i, iv in enumerate(box.intervals) if iv.width > 0]

    def volume(b: BoxDomain) -> Fraction:
        v = Fraction(1)
        for i in dims:
            v *= b[i].width
        return v

    for part in parts:
        if part.n != box.n or any(not (box[i].lo <= part[i].lo and part[i].hi <= box[i].hi)
                                  for i in range(box.n)):
            return False
    for a, b in itertools.combinations(parts, 2):
        overlap = Fraction(1)
        for i in dims:
            overlap *= max(Fraction(0), min(a[i].hi, b[i].hi) - max(a[i].lo, b[i].lo))
        if overlap > 0:
            return False
    return sum((volume(p) for p in parts), Fraction(0)) == volume(box)
