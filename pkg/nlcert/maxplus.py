"""
Maxplus approximation of univariate transcendental functions
Quadratic under/over-estimators tangent at control points, their envelopes,
and Remez minimax polynomials as an alternative approximation
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.optimize import minimize_scalar

from nlcert import ApproximationError
from nlcert import expr as ex
from nlcert.domain import Interval, to_fraction

maxplus_logger = logging.getLogger("nlcert.maxplus")

ULP_CONTRACT = 2
REMEZ_GRID = 4096
REMEZ_MAX_EXCHANGES = 50


def _up(value: float, ulps: int = ULP_CONTRACT) -> Fraction:
    for _ in range(ulps):
        value = math.nextafter(value, math.inf)
    return Fraction(value)


class Orientation(Enum):
    UNDER = "Under"
    OVER = "Over"


# ---------------------------------------------------------------------------
# Function dictionary
# ---------------------------------------------------------------------------

def _arctan_curvature(m: float, M: float) -> float:
    """sup |x|/(1+x^2)^2 over [m, M]; the peak 9/(16 sqrt 3) sits at |x| = 1/sqrt 3"""
    a = 0.0 if m <= 0 <= M else min(abs(m), abs(M))
    b = max(abs(m), abs(M))
    peak = 1 / math.sqrt(3)

    def g(t: float) -> float:
        return t / (1 + t * t) ** 2

    if a <= peak <= b:
        return 9 / (16 * math.sqrt(3))
    return max(g(a), g(b))


def _trig_abs_max(phase: float, m: float, M: float) -> float:
    """sup |sin(x + phase)| over [m, M]"""
    iv = ex.transcendental_interval('sin', Interval.outward(m + phase, M + phase, ulps=4))
    return float(max(abs(iv.lo), abs(iv.hi)))


@dataclass(frozen=True)
class FunctionEntry:
    """Dictionary function with derivatives and a sound curvature bound"""
    name: str
    f: Callable[[float], float]
    df: Callable[[float], float]
    d2f: Callable[[float], float]
    half_curvature: Callable[[float, float], float]
    domain_lo: float = -math.inf
    domain_open: bool = False
    vectorized: Optional[Callable] = None

    def in_domain(self, iv: Interval) -> bool:
        lo = float(iv.lo)
        return lo > self.domain_lo if self.domain_open else lo >= self.domain_lo

    def gamma(self, iv: Interval) -> Fraction:
        """Rational upper bound of sup |f''|/2 over iv"""
        if not self.in_domain(iv):
            raise ApproximationError(f"{iv} leaves the domain of {self.name}")
        m, M = iv.as_floats()
        bound = self.half_curvature(m, M)
        return _up(bound * (1 + 1e-12), ULP_CONTRACT + 2)

    def __call__(self, x):
        if self.vectorized is not None and isinstance(x, np.ndarray):
            return self.vectorized(x)
        return self.f(x)


FUNCTIONS = {
    'arctan': FunctionEntry(
        'arctan', math.atan, lambda x: 1 / (1 + x * x), lambda x: -2 * x / (1 + x * x) ** 2,
        _arctan_curvature, vectorized=np.arctan),
    'exp': FunctionEntry(
        'exp', math.exp, math.exp, math.exp,
        lambda m, M: math.exp(M) / 2, vectorized=np.exp),
    'log': FunctionEntry(
        'log', math.log, lambda x: 1 / x, lambda x: -1 / (x * x),
        lambda m, M: 1 / (2 * m * m), domain_lo=0.0, domain_open=True, vectorized=np.log),
    'sin': FunctionEntry(
        'sin', math.sin, math.cos, lambda x: -math.sin(x),
        lambda m, M: min(0.5, _trig_abs_max(0.0, m, M) / 2), vectorized=np.sin),
    'cos': FunctionEntry(
        'cos', math.cos, lambda x: -math.sin(x), lambda x: -math.cos(x),
        lambda m, M: min(0.5, _trig_abs_max(math.pi / 2, m, M) / 2), vectorized=np.cos),
}


def function_entry(name: str) -> FunctionEntry:
    key = ex.FUNCTION_ALIASES.get(name, name)
    if key not in FUNCTIONS:
        raise ApproximationError(f"no dictionary entry for {name}")
    return FUNCTIONS[key]


# ---------------------------------------------------------------------------
# Quadratic estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadEstimator:
    """par_a(x) = F + D (x - a) -/+ gamma (x - a)^2 on [m, M]"""
    function: str
    a: Fraction
    orientation: Orientation
    interval: Interval
    F: Fraction
    D: Fraction
    gamma: Fraction

    @property
    def sign(self) -> int:
        return -1 if self.orientation == Orientation.UNDER else 1

    def eval_exact(self, x) -> Fraction:
        h = to_fraction(x) - self.a
        return self.F + self.D * h + self.sign * self.gamma * h * h

    def eval_float(self, x):
        h = np.asarray(x, dtype=float) - float(self.a)
        return float(self.F) + float(self.D) * h + self.sign * float(self.gamma) * h * h

    def to_expr(self, argument: ex.Expr) -> ex.Expr:
        h = ex.Sub(argument, ex.Constant(self.a))
        linear = ex.Add(ex.Constant(self.F), ex.Mul(ex.Constant(self.D), h))
        quadratic = ex.Mul(ex.Constant(self.gamma), ex.Pow(h, 2))
        return ex.Sub(linear, quadratic) if self.orientation == Orientation.UNDER else ex.Add(linear, quadratic)


def _estimator(fn: FunctionEntry, iv: Interval, a, orientation: Orientation) -> QuadEstimator:
    if not fn.in_domain(iv):
        raise ApproximationError(f"interval {iv} leaves the domain of {fn.name}")
    a_float = float(to_fraction(a))
    a_exact = Fraction(a_float)
    if not iv.contains(a_exact):
        raise ApproximationError(f"control point {a_float} outside {iv}")
    gamma = fn.gamma(iv)
    fa = fn.f(a_float)
    dfa = fn.df(a_float)
    width = iv.width
    slack = (Fraction(ULP_CONTRACT * math.ulp(fa)) +
             Fraction(ULP_CONTRACT * math.ulp(dfa)) * width)
    F = Fraction(fa) - slack if orientation == Orientation.UNDER else Fraction(fa) + slack
    return QuadEstimator(fn.name, a_exact, orientation, iv, F, Fraction(dfa), gamma)


def under_estimator(fn: Union[FunctionEntry, str], iv: Interval, a) -> QuadEstimator:
    """Quadratic minorant of fn on iv, tangent at a"""
    fn = function_entry(fn) if isinstance(fn, str) else fn
    return _estimator(fn, iv, a, Orientation.UNDER)


def over_estimator(fn: Union[FunctionEntry, str], iv: Interval, a) -> QuadEstimator:
    """Quadratic majorant of fn on iv, tangent at a"""
    fn = function_entry(fn) if isinstance(fn, str) else fn
    return _estimator(fn, iv, a, Orientation.OVER)


@dataclass
class Envelope:
    """Max (under) or min (over) of quadratic estimators sharing an interval"""
    function: str
    orientation: Orientation
    interval: Interval
    pieces: List[QuadEstimator]

    @property
    def points(self) -> List[Fraction]:
        return [p.a for p in self.pieces]

    def eval_float(self, x):
        values = np.array([p.eval_float(x) for p in self.pieces])
        return values.max(axis=0) if self.orientation == Orientation.UNDER else values.min(axis=0)

    def eval_exact(self, x) -> Fraction:
        values = [p.eval_exact(x) for p in self.pieces]
        return max(values) if self.orientation == Orientation.UNDER else min(values)

    def to_expr(self, argument: ex.Expr) -> ex.Expr:
        parts = tuple(p.to_expr(argument) for p in self.pieces)
        if len(parts) == 1:
            return parts[0]
        return ex.Max(parts) if self.orientation == Orientation.UNDER else ex.Min(parts)


def maxplus_envelope(fn: Union[FunctionEntry, str], iv: Interval, points: Sequence,
                     orientation: Orientation = Orientation.UNDER) -> Envelope:
    fn = function_entry(fn) if isinstance(fn, str) else fn
    if not points:
        raise ApproximationError("a maxplus envelope needs at least one control point")
    pieces = [_estimator(fn, iv, a, orientation) for a in points]
    return Envelope(fn.name, orientation, iv, pieces)


# ---------------------------------------------------------------------------
# Remez minimax polynomials
# ---------------------------------------------------------------------------

def _chebyshev_to_power(coeffs: Sequence[Fraction]) -> List[Fraction]:
    """Exact power-basis coefficients of sum_k c_k T_k(t)"""
    degree = len(coeffs) - 1
    T = [[Fraction(1)], [Fraction(0), Fraction(1)]]
    for k in range(2, degree + 1):
        prev, cur = T[k - 2], T[k - 1]
        nxt = [Fraction(0)] + [2 * c for c in cur]
        for i, c in enumerate(prev):
            nxt[i] -= c
        T.append(nxt)
    out = [Fraction(0)] * (degree + 1)
    for k, c in enumerate(coeffs):
        for i, t in enumerate(T[k]):
            out[i] += c * t
    return out


def _compose_affine(power: Sequence[Fraction], shift: Fraction, scale: Fraction) -> List[Fraction]:
    """Coefficients in x of p((x - shift) / scale)"""
    degree = len(power) - 1
    out = [Fraction(0)] * (degree + 1)
    base = [Fraction(1)]
    linear = [-shift / scale, 1 / scale]
    for c in power:
        for i, b in enumerate(base):
            out[i] += c * b
        nxt = [Fraction(0)] * (len(base) + 1)
        for i, b in enumerate(base):
            nxt[i] += b * linear[0]
            nxt[i + 1] += b * linear[1]
        base = nxt
    return out


@dataclass
class MinimaxApprox:
    """Polynomial p with sup |f - p| <= eta on the interval"""
    function: str
    interval: Interval
    degree: int
    chebyshev: List[float]
    coefficients: List[Fraction]
    eta: Fraction
    levelled_error: float = 0.0
    exchanges: int = 0
    extrema: List[float] = field(default_factory=list)

    def eval_float(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in reversed(self.coefficients):
            out = out * x + float(c)
        return out

    def eval_exact(self, x) -> Fraction:
        x = to_fraction(x)
        out = Fraction(0)
        for c in reversed(self.coefficients):
            out = out * x + c
        return out

    def to_expr(self, argument: ex.Expr, orientation: Orientation = Orientation.UNDER) -> ex.Expr:
        """p(arg) - eta (under) or p(arg) + eta (over), in Horner form"""
        shift = -self.eta if orientation == Orientation.UNDER else self.eta
        coeffs = list(self.coefficients)
        coeffs[0] += shift
        node: ex.Expr = ex.Constant(coeffs[-1])
        for c in reversed(coeffs[:-1]):
            node = ex.Add(ex.Constant(c), ex.Mul(argument, node))
        return node

    def alternation_count(self, fn: Callable, tolerance: float = 0.05) -> int:
        """Sign-alternating near-extrema of f - p reaching (1 - tolerance) * eta"""
        lo, hi = self.interval.as_floats()
        grid = np.linspace(lo, hi, 20001)
        err = np.array([fn(float(t)) for t in grid]) - self.eval_float(grid)
        threshold = (1 - tolerance) * float(self.eta)
        count, last = 0, 0
        for e in err:
            if abs(e) >= threshold:
                s = 1 if e > 0 else -1
                if s != last:
                    count += 1
                    last = s
        return count


def _as_callable(fn) -> Callable[[float], float]:
    return fn.f if isinstance(fn, FunctionEntry) else fn


def remez(fn: Union[FunctionEntry, str, Callable[[float], float]], iv: Interval, degree: int,
          tolerance: float = 1e-9) -> MinimaxApprox:
    """Best uniform polynomial approximation of fn on iv by the exchange algorithm"""
    if isinstance(fn, str):
        fn = function_entry(fn)
    if degree < 0:
        raise ApproximationError("minimax degree must be nonnegative")
    if isinstance(fn, FunctionEntry) and not fn.in_domain(iv):
        raise ApproximationError(f"interval {iv} leaves the domain of {fn.name}")
    f = _as_callable(fn)
    name = fn.name if isinstance(fn, FunctionEntry) else getattr(fn, '__name__', 'f')
    lo, hi = iv.as_floats()
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    if half <= 0:
        value = Fraction(f(lo))
        return MinimaxApprox(name, iv, 0, [float(value)], [value], _up(0.0) + Fraction(math.ulp(float(value))))

    def fx(t):
        return np.array([f(mid + half * float(v)) for v in np.atleast_1d(t)])

    n_ref = degree + 2
    reference = np.sort(np.cos(np.pi * np.arange(n_ref) / (n_ref - 1)))
    grid = np.sort(np.concatenate([np.cos(np.pi * (np.arange(REMEZ_GRID) + 0.5) / REMEZ_GRID), [-1.0, 1.0]]))
    f_grid = fx(grid)
    coeffs = np.zeros(degree + 1)
    levelled = 0.0
    exchanges = 0
    for exchanges in range(1, REMEZ_MAX_EXCHANGES + 1):
        V = cheb.chebvander(reference, degree)
        signs = (-1.0) ** np.arange(n_ref)
        system = np.hstack([V, signs[:, None]])
        solution = np.linalg.solve(system, fx(reference))
        coeffs, levelled = solution[:-1], abs(solution[-1])

        err = f_grid - cheb.chebval(grid, coeffs)
        extrema = _alternating_extrema(grid, err, lambda t: f(mid + half * t) - cheb.chebval(t, coeffs))
        max_err = max(abs(e) for _, e in extrema) if extrema else float(np.max(np.abs(err)))
        if max_err <= 1e-15 or (max_err - levelled) <= tolerance * max_err:
            break
        if len(extrema) >= n_ref:
            extrema = _trim_extrema(extrema, n_ref)
            reference = np.array([t for t, _ in extrema])
        else:
            # degenerate alternation: the levelled error is already minimal
            break
    else:
        raise ApproximationError(f"Remez did not converge for {name} on {iv} after {REMEZ_MAX_EXCHANGES} exchanges")

    exact_cheb = [Fraction(float(c)) for c in coeffs]
    power_t = _chebyshev_to_power(exact_cheb)
    power_x = _compose_affine(power_t, Fraction(mid), Fraction(half))
    approx = MinimaxApprox(name, iv, degree, [float(c) for c in coeffs], power_x, Fraction(0),
                           levelled, exchanges)
    approx.eta = _certify_error(f, approx, lo, hi)
    approx.extrema = [mid + half * float(t) for t in reference]
    maxplus_logger.debug("remez %s degree %d on %s: eta %.3e after %d exchanges",
                         name, degree, iv, float(approx.eta), exchanges)
    return approx


def _alternating_extrema(grid: np.ndarray, err: np.ndarray, err_fn: Callable[[float], float]):
    """Largest |err| of each constant-sign run, refined by a bounded scalar search"""
    extrema = []
    start = 0
    for i in range(1, len(grid) + 1):
        if i == len(grid) or np.sign(err[i]) != np.sign(err[start]):
            run = slice(start, i)
            k = start + int(np.argmax(np.abs(err[run])))
            t, e = float(grid[k]), float(err[k])
            left, right = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
            if right > left and 0 < k < len(grid) - 1:
                sign = 1.0 if e > 0 else -1.0
                res = minimize_scalar(lambda s: -sign * err_fn(s), bounds=(left, right), method='bounded',
                                      options={'xatol': 1e-14})
                if res.success and sign * err_fn(res.x) > sign * e:
                    t, e = float(res.x), float(err_fn(res.x))
            extrema.append((t, e))
            start = i
    return extrema


def _trim_extrema(extrema, count: int):
    """Drop the weaker end point until count alternating extrema remain"""
    extrema = list(extrema)
    while len(extrema) > count:
        if abs(extrema[0][1]) < abs(extrema[-1][1]):
            extrema.pop(0)
        else:
            extrema.pop()
    return extrema


def _certify_error(f: Callable[[float], float], approx: MinimaxApprox, lo: float, hi: float) -> Fraction:
    """Outward-rounded sup |f - p| from a dense Chebyshev grid plus local refinement"""
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    t = np.cos(np.pi * (np.arange(REMEZ_GRID) + 0.5) / REMEZ_GRID)
    xs = np.concatenate([mid + half * t, [lo, hi]])
    err = np.array([f(float(x)) for x in xs]) - approx.eval_float(xs)
    order = np.argsort(xs)
    xs, err = xs[order], err[order]
    worst = float(np.max(np.abs(err)))
    for k in np.argsort(-np.abs(err))[:8]:
        left, right = xs[max(k - 1, 0)], xs[min(k + 1, len(xs) - 1)]
        if right > left:
            res = minimize_scalar(lambda s: -abs(f(s) - float(approx.eval_float(s))),
                                  bounds=(left, right), method='bounded')
            worst = max(worst, -float(res.fun))
    scale = max(1.0, sum(abs(float(c)) * max(abs(lo), abs(hi)) ** i
                         for i, c in enumerate(approx.coefficients)))
    return _up(worst * (1 + 1e-6) + 4 * math.ulp(scale), ULP_CONTRACT)


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def envelope_figure(fn: Union[FunctionEntry, str], iv: Interval, points: Sequence[float],
                    path: str, samples: int = 400) -> str:
    """Write an HTML figure of the estimator hierarchy (one curve per prefix of points)"""
    try:
        import plotly.graph_objects as go
    except ImportError:
        raise ApproximationError("plotly is required for envelope figures: pip install plotly") from None
    fn = function_entry(fn) if isinstance(fn, str) else fn
    lo, hi = iv.as_floats()
    xs = np.linspace(lo, hi, samples)
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=xs, y=fn(xs), name=fn.name, line=dict(width=3)))
    for k in range(1, len(points) + 1):
        envelope = maxplus_envelope(fn, iv, points[:k])
        fig.add_trace(go.Scatter(x=xs, y=envelope.eval_float(xs), name=f"{k} point(s)",
                                 line=dict(dash='dash')))
    fig.update_layout(
        title={'text': f"Maxplus underestimators of {fn.name} on [{lo:.4g}, {hi:.4g}]", 'x': 0.5,
               'xanchor': 'center'},
        xaxis_title="x",
        yaxis_title="value",
        height=600,
        legend=dict(orientation="h", yanchor="top", y=-0.15, xanchor="center", x=0.5),
    )
    fig.write_html(path)
    return path
