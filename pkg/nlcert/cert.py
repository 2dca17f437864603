"""
Exact SOS certificates
Rational extraction from floating Gram matrices, exact LDL^T repair, remainder
bounding, zero-trust checking and the nlcert-v1 certificate file format
"""
import json
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from nlcert import CertificateError, PSDRepairFailed
from nlcert.domain import BoxDomain, Interval
from nlcert.poly import Monomial, Polynomial, add_monomials, from_text, interval_bound, rational_text
from nlcert.sos import GramDecomposition, PopInstance
from utils.helpers import sha256_text

cert_logger = logging.getLogger("nlcert.cert")

FORMAT_VERSION = "nlcert-v1"
MAX_SHIFT = Fraction(1, 1000)

Square = Tuple[Fraction, Polynomial]
RationalMatrix = List[List[Fraction]]


class CheckVerdict(Enum):
    VERIFIED = "Verified"
    REMAINDER_TOO_LARGE = "RemainderTooLarge"
    PSD_REPAIR_FAILED = "PSDRepairFailed"
    REJECTED = "Rejected"


@dataclass
class SosCertificate:
    """f - lam = sum_j sigma_j g_j + sigma_0 + remainder, sigma_j = sum_t w_t q_t^2"""
    objective: Polynomial
    multipliers: List[Polynomial]
    box: BoxDomain
    order: int
    lam: Fraction
    squares: List[List[Square]]
    remainder: Polynomial
    remainder_interval: Interval
    certified_bound: Fraction
    label: str = "goal"
    shifts: List[Fraction] = field(default_factory=list)
    # how the checker re-derives this link's POP (box, control points, enclosures)
    derivation: Dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.objective.n

    def sigma(self, j: int) -> Polynomial:
        return sum_of_squares(self.squares[j], self.n)

    def pop_hash(self) -> str:
        text = "\n".join([self.objective.to_text()] + [g.to_text() for g in self.multipliers])
        return sha256_text(text)


@dataclass
class CheckReport:
    verdict: CheckVerdict
    certified_bound: Optional[Fraction]
    remainder_interval: Optional[Interval]
    elapsed: float = 0.0
    message: str = ""
    label: str = "goal"

    @property
    def bound_float(self) -> float:
        return float(self.certified_bound) if self.certified_bound is not None else float('-inf')

    @property
    def verified(self) -> bool:
        return self.verdict == CheckVerdict.VERIFIED


# ---------------------------------------------------------------------------
# Exact linear algebra
# ---------------------------------------------------------------------------

def round_matrix(Q: np.ndarray, denom_limit: int) -> RationalMatrix:
    """Continued-fraction rounding of the upper triangle, mirrored exactly"""
    s = Q.shape[0]
    out: RationalMatrix = [[Fraction(0)] * s for _ in range(s)]
    for i in range(s):
        for j in range(i, s):
            q = Fraction(float(0.5 * (Q[i, j] + Q[j, i]))).limit_denominator(denom_limit)
            out[i][j] = q
            out[j][i] = q
    return out


def _lcm_denominator(M: RationalMatrix) -> int:
    d = 1
    for row in M:
        for v in row:
            d = d * v.denominator // math.gcd(d, v.denominator)
    return d


def ldl_squares(M: RationalMatrix) -> Optional[List[Tuple[Fraction, List[int]]]]:
    """Fraction-free symmetric elimination with diagonal pivoting

    Returns [(w_k, c_k)] with M = sum_k w_k c_k c_k^T, w_k > 0 and integer
    vectors c_k, or None when M is not positive semidefinite.
    """
    s = len(M)
    if s == 0:
        return []
    D = _lcm_denominator(M)
    A = [[int(v * D) for v in row] for row in M]
    remaining = list(range(s))
    prev = 1
    out: List[Tuple[Fraction, List[int]]] = []
    while remaining:
        pivot = max(remaining, key=lambda i: (A[i][i], -i))
        p = A[pivot][pivot]
        if p < 0:
            return None
        if p == 0:
            if any(A[i][j] for i in remaining for j in remaining):
                return None
            break
        column = [0] * s
        for i in remaining:
            column[i] = A[i][pivot]
        out.append((Fraction(1, D * prev * p), column))
        remaining.remove(pivot)
        for a, i in enumerate(remaining):
            a_ip = A[i][pivot]
            for j in remaining[a:]:
                value = p * A[i][j] - a_ip * A[pivot][j]
                value //= prev
                A[i][j] = value
                A[j][i] = value
        prev = p
    return out


def min_eigenvalue(M: RationalMatrix) -> float:
    if not M:
        return 0.0
    return float(np.linalg.eigvalsh(np.array([[float(v) for v in row] for row in M]))[0])


def shifted(M: RationalMatrix, delta: Fraction) -> RationalMatrix:
    return [[v + delta if i == j else v for j, v in enumerate(row)] for i, row in enumerate(M)]


def repair_and_decompose(M: RationalMatrix) -> Tuple[List[Tuple[Fraction, List[int]]], Fraction]:
    """Exact LDL^T of M + delta*I with delta the smallest working power of two (0 if M is psd)"""
    squares = ldl_squares(M)
    if squares is not None:
        return squares, Fraction(0)
    estimate = max(-min_eigenvalue(M), 2.0 ** -60)
    exponent = math.ceil(math.log2(estimate))
    delta = Fraction(2) ** exponent
    result = ldl_squares(shifted(M, delta))
    if result is not None:
        for _ in range(6):
            smaller = delta / 2
            attempt = ldl_squares(shifted(M, smaller))
            if attempt is None:
                break
            delta, result = smaller, attempt
    else:
        while result is None:
            delta *= 2
            if delta > MAX_SHIFT:
                raise PSDRepairFailed(
                    f"Gram matrix needs a diagonal shift above {float(MAX_SHIFT):g} to become psd")
            result = ldl_squares(shifted(M, delta))
    if delta > MAX_SHIFT:
        raise PSDRepairFailed(f"Gram matrix needs a diagonal shift of {float(delta):.3g}")
    cert_logger.debug("PSD repair: shift 2^%d on a %dx%d Gram matrix", int(math.log2(delta)), len(M), len(M))
    return result, delta


# ---------------------------------------------------------------------------
# Polynomials from Gram data
# ---------------------------------------------------------------------------

def gram_polynomial(M: RationalMatrix, basis: Sequence[Monomial], n: int) -> Polynomial:
    terms: Dict[Monomial, Fraction] = {}
    for a, row in enumerate(M):
        for b, v in enumerate(row):
            if v:
                alpha = add_monomials(basis[a], basis[b])
                terms[alpha] = terms.get(alpha, Fraction(0)) + v
    return Polynomial(n, terms)


def sum_of_squares(squares: Sequence[Square], n: int) -> Polynomial:
    terms: Dict[Monomial, Fraction] = {}
    for weight, q in squares:
        items = list(q.terms.items())
        for a, (alpha, ca) in enumerate(items):
            for beta, cb in items[a:]:
                factor = weight * ca * cb * (1 if alpha == beta else 2)
                key = add_monomials(alpha, beta)
                terms[key] = terms.get(key, Fraction(0)) + factor
    return Polynomial(n, terms)


def _squares_from_ldl(decomposition: Sequence[Tuple[Fraction, List[int]]],
                      basis: Sequence[Monomial], n: int) -> List[Square]:
    out = []
    for weight, column in decomposition:
        q = Polynomial(n, {basis[i]: c for i, c in enumerate(column) if c})
        if not q.is_zero():
            out.append((weight, q))
    return out


def _fold_residual(M: RationalMatrix, basis: Sequence[Monomial], residual: Polynomial) -> Polynomial:
    """Absorb residual monomials into the Gram matrix M in place; return what is left"""
    pairs: Dict[Monomial, Tuple[int, int]] = {}
    for a in range(len(basis)):
        for b in range(a, len(basis)):
            alpha = add_monomials(basis[a], basis[b])
            if alpha not in pairs or (a == b and pairs[alpha][0] != pairs[alpha][1]):
                pairs[alpha] = (a, b)
    left: Dict[Monomial, Fraction] = {}
    for alpha, c in residual.terms.items():
        if alpha not in pairs:
            left[alpha] = c
            continue
        a, b = pairs[alpha]
        if a == b:
            M[a][a] += c
        else:
            M[a][b] += c / 2
            M[b][a] += c / 2
    return Polynomial(residual.n, left)


# ---------------------------------------------------------------------------
# Rationalization and checking
# ---------------------------------------------------------------------------

def lambda_candidates(lam: float, denom_limit: int) -> List[Fraction]:
    """Nearest fraction with denominator <= denom_limit, then the floor on the 1/denom_limit grid"""
    nearest = Fraction(lam).limit_denominator(denom_limit)
    floor = Fraction(math.floor(Fraction(lam) * denom_limit), denom_limit)
    return [nearest] if nearest == floor else [nearest, floor]


def rationalize(gram: GramDecomposition, pop: PopInstance, denom_limit: int = 2 ** 20,
                label: str = "goal", lam: Optional[Fraction] = None) -> SosCertificate:
    """Round a floating Gram decomposition to an exact certificate candidate

    Multiplier Gram matrices are rounded and repaired first; the exact
    residual of f - lam - sum_j sigma_j g_j - sigma_0 is then folded into
    sigma_0's Gram matrix before its own repair, so the remainder only
    carries the final diagonal shift. lam defaults to the nearest candidate.
    """
    if pop.box is None:
        raise CertificateError("a certificate needs the POP's box to bound the remainder")
    n = pop.n
    if lam is None:
        lam = lambda_candidates(gram.lam, denom_limit)[0]
    squares: List[List[Square]] = [[]]
    shifts: List[Fraction] = [Fraction(0)]
    combination = Polynomial.zero(n)
    for basis, Q, g in zip(gram.bases[1:], gram.matrices[1:], pop.constraints):
        M = round_matrix(Q, denom_limit)
        decomposition, delta = repair_and_decompose(M)
        squares.append(_squares_from_ldl(decomposition, basis, n))
        shifts.append(delta)
        sigma = gram_polynomial(shifted(M, delta) if delta else M, basis, n)
        combination = combination + sigma * g

    basis0 = gram.bases[0]
    M0 = round_matrix(gram.matrices[0], denom_limit)
    residual = pop.objective - lam - combination - gram_polynomial(M0, basis0, n)
    unfolded = _fold_residual(M0, basis0, residual)
    decomposition, delta0 = repair_and_decompose(M0)
    squares[0] = _squares_from_ldl(decomposition, basis0, n)
    shifts[0] = delta0

    sigma0 = gram_polynomial(shifted(M0, delta0) if delta0 else M0, basis0, n)
    remainder = pop.objective - lam - combination - sigma0
    interval = interval_bound(remainder, pop.box)
    certified = lam + interval.lo
    cert_logger.info("rational extraction: lam %s, shift %s, %d unfolded residual terms, certified %.10g",
                     rational_text(lam), rational_text(delta0), len(unfolded), float(certified))
    return SosCertificate(pop.objective, list(pop.constraints), pop.box, pop.order, lam, squares,
                          remainder, interval, certified, label, shifts)


def check(cert: SosCertificate, pop: PopInstance, box: Optional[BoxDomain] = None,
          threshold: Fraction = Fraction(0)) -> CheckReport:
    """Zero-trust exact re-check of a certificate against a POP over box

    Recomputes f - lam - sigma_0 - sum_j sigma_j g_j from the raw squares,
    requires it to equal the stored remainder, bounds it on the box and
    compares lam + lower(remainder) with the threshold.
    """
    start = time.time()
    box = box or pop.box

    def reject(message: str) -> CheckReport:
        cert_logger.warning("certificate %s rejected: %s", cert.label, message)
        return CheckReport(CheckVerdict.REJECTED, None, None, time.time() - start, message, cert.label)

    if cert.objective != pop.objective or cert.multipliers != list(pop.constraints):
        raise CertificateError(f"certificate {cert.label} does not match the problem", mismatch=True)
    if box is None or cert.box != box:
        raise CertificateError(f"certificate {cert.label} was issued for a different box", mismatch=True)
    if len(cert.squares) != len(cert.multipliers) + 1:
        return reject("wrong number of SOS multipliers")
    for j, squares in enumerate(cert.squares):
        for weight, q in squares:
            if weight <= 0:
                return reject(f"non-positive weight in sigma {j}")
            if q.n != cert.n:
                return reject(f"square of the wrong dimension in sigma {j}")
            if j and 2 * q.degree() + cert.multipliers[j - 1].degree() > 2 * cert.order:
                return reject(f"sigma {j} exceeds degree {2 * cert.order}")
            if not j and 2 * q.degree() > 2 * cert.order:
                return reject(f"sigma 0 exceeds degree {2 * cert.order}")

    remainder = cert.objective - cert.lam - cert.sigma(0)
    for j, g in enumerate(cert.multipliers, start=1):
        if cert.squares[j]:
            remainder = remainder - cert.sigma(j) * g
    if remainder != cert.remainder:
        return reject("stored remainder differs from the recomputed identity")
    interval = interval_bound(remainder, box)
    if interval != cert.remainder_interval:
        return reject("stored remainder interval differs from the recomputed bound")
    certified = cert.lam + interval.lo
    if cert.certified_bound > certified:
        return reject("stored bound exceeds what the identity proves")
    verdict = CheckVerdict.VERIFIED if certified >= threshold else CheckVerdict.REMAINDER_TOO_LARGE
    elapsed = time.time() - start
    cert_logger.info("certificate %s: %s, bound %.10g (remainder in %s) in %.3fs",
                     cert.label, verdict.value, float(certified), interval, elapsed)
    return CheckReport(verdict, certified, interval, elapsed, "", cert.label)


def certify(gram: GramDecomposition, pop: PopInstance, denom_limit: int = 2 ** 20,
            threshold: Fraction = Fraction(0), label: str = "goal") -> Tuple[Optional[SosCertificate], CheckReport]:
    """rationalize then check, trying each lambda candidate until one verifies

    Without a verified candidate the one with the best certified bound is
    returned; PSD repair failures come back as a verdict.
    """
    best: Tuple[Optional[SosCertificate], Optional[CheckReport]] = (None, None)
    for lam in lambda_candidates(gram.lam, denom_limit):
        try:
            cert = rationalize(gram, pop, denom_limit, label, lam)
        except PSDRepairFailed as exc:
            report = CheckReport(CheckVerdict.PSD_REPAIR_FAILED, None, None, 0.0, str(exc), label)
            if best[1] is None:
                best = (None, report)
            continue
        report = check(cert, pop, pop.box, threshold)
        if report.verified:
            return cert, report
        if best[0] is None or cert.certified_bound > best[0].certified_bound:
            best = (cert, report)
        cert_logger.debug("lambda %s did not verify %s: %s", rational_text(lam), label, report.message)
    return best


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------

@dataclass
class CertificateFile:
    """A chain of certificates plus the header tying them to a problem"""
    header: Dict[str, str]
    links: List[SosCertificate]


def _interval_text(iv: Interval) -> str:
    return f"{rational_text(iv.lo)} ; {rational_text(iv.hi)}"


def certificate_to_text(header: Dict[str, str], links: Sequence[SosCertificate]) -> str:
    lines = [FORMAT_VERSION]
    for key in sorted(header):
        lines.append(f"{key}: {header[key]}")
    lines.append(f"links: {len(links)}")
    for cert in links:
        lines.append(f"begin {cert.label}")
        lines.append(f"pop-hash: {cert.pop_hash()}")
        lines.append(f"variables: {cert.n}")
        lines.append(f"order: {cert.order}")
        lines.append(f"box: {cert.box.to_text()}")
        lines.append(f"objective: {cert.objective.to_text()}")
        for g in cert.multipliers:
            lines.append(f"constraint: {g.to_text()}")
        lines.append(f"lambda: {rational_text(cert.lam)}")
        for j, squares in enumerate(cert.squares):
            lines.append(f"sigma {j}")
            for weight, q in squares:
                lines.append(f"weight: {rational_text(weight)} ; square: {q.to_text()}")
        lines.append(f"remainder: {cert.remainder.to_text()}")
        lines.append(f"remainder-interval: {_interval_text(cert.remainder_interval)}")
        lines.append(f"certified-bound: {rational_text(cert.certified_bound)}")
        if cert.derivation:
            lines.append(f"derivation: {json.dumps(cert.derivation, sort_keys=True, separators=(',', ':'))}")
        lines.append("end")
    return "\n".join(lines) + "\n"


def _fraction(text: str, where: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise CertificateError(f"malformed rational {text!r} in {where}") from None


def _derivation(text: Optional[str], label: str) -> Dict[str, Any]:
    if text is None:
        return {}
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        raise CertificateError(f"malformed derivation in link {label}") from None
    if not isinstance(value, dict):
        raise CertificateError(f"derivation of link {label} is not a record")
    return value


def parse_certificate(text: str) -> CertificateFile:
    from nlcert.expr import parse_box

    lines = [ln.rstrip("\n") for ln in text.splitlines()]
    if not lines or lines[0].strip() != FORMAT_VERSION:
        raise CertificateError(f"missing '{FORMAT_VERSION}' header")
    header: Dict[str, str] = {}
    links: List[SosCertificate] = []
    position = 1
    expected_links = None

    def split(line: str) -> Tuple[str, str]:
        if ':' not in line:
            raise CertificateError(f"malformed certificate line {line!r}")
        key, value = line.split(':', 1)
        return key.strip(), value.strip()

    while position < len(lines) and not lines[position].startswith("begin "):
        if lines[position].strip():
            key, value = split(lines[position])
            if key == "links":
                expected_links = int(value)
            else:
                header[key] = value
        position += 1

    try:
        while position < len(lines):
            line = lines[position]
            if not line.strip():
                position += 1
                continue
            if not line.startswith("begin "):
                raise CertificateError(f"expected 'begin', found {line!r}")
            label = line[len("begin "):].strip()
            position += 1
            fields: Dict[str, str] = {}
            constraints: List[str] = []
            sigma_blocks: List[List[str]] = []
            while position < len(lines) and lines[position].strip() != "end":
                current = lines[position].strip()
                if current.startswith("sigma "):
                    sigma_blocks.append([])
                elif current.startswith("weight:"):
                    if not sigma_blocks:
                        raise CertificateError("weight line outside a sigma block")
                    sigma_blocks[-1].append(current)
                else:
                    key, value = split(current)
                    if key == "constraint":
                        constraints.append(value)
                    elif key in fields:
                        raise CertificateError(f"duplicate field {key!r} in link {label}")
                    else:
                        fields[key] = value
                position += 1
            if position >= len(lines):
                raise CertificateError(f"link {label} is not terminated by 'end'")
            position += 1
            for required in ("pop-hash", "variables", "order", "box", "objective", "lambda",
                             "remainder", "remainder-interval", "certified-bound"):
                if required not in fields:
                    raise CertificateError(f"link {label} lacks '{required}'")
            n = int(fields["variables"])
            squares: List[List[Square]] = []
            for block in sigma_blocks:
                parsed = []
                for entry in block:
                    weight_part, square_part = entry.split(";", 1)
                    weight = _fraction(weight_part.split(":", 1)[1], f"link {label}")
                    square = from_text(square_part.split(":", 1)[1], n)
                    parsed.append((weight, square))
                squares.append(parsed)
            lo_text, hi_text = fields["remainder-interval"].split(";", 1)
            cert = SosCertificate(
                objective=from_text(fields["objective"], n),
                multipliers=[from_text(c, n) for c in constraints],
                box=parse_box(fields["box"]),
                order=int(fields["order"]),
                lam=_fraction(fields["lambda"], f"link {label}"),
                squares=squares,
                remainder=from_text(fields["remainder"], n),
                remainder_interval=Interval(_fraction(lo_text, label), _fraction(hi_text, label)),
                certified_bound=_fraction(fields["certified-bound"], f"link {label}"),
                label=label,
                derivation=_derivation(fields.get("derivation"), label))
            if cert.pop_hash() != fields["pop-hash"]:
                raise CertificateError(f"link {label}: pop-hash does not match its contents")
            links.append(cert)
    except CertificateError:
        raise
    except Exception as exc:
        raise CertificateError(f"malformed certificate: {exc}") from None
    if expected_links is not None and expected_links != len(links):
        raise CertificateError(f"header announces {expected_links} links, found {len(links)}")
    if not links:
        raise CertificateError("certificate has no links")
    return CertificateFile(header, links)


def write_certificate(path: str, header: Dict[str, str], links: Sequence[SosCertificate]) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(certificate_to_text(header, links))


def read_certificate(path: str) -> CertificateFile:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return parse_certificate(f.read())
    except OSError as exc:
        raise CertificateError(f"cannot read certificate {path}: {exc}") from None
