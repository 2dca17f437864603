"""
Block-diagonal semidefinite programming
Infeasible-start primal-dual interior point method (HKM direction, Mehrotra
predictor-corrector) and SDPA sparse-format input/output

Primal:  minimize <C, X>  subject to  <A_i, X> = b_i,  X psd
Dual:    maximize b'y     subject to  Z = C - sum_i y_i A_i psd
"""
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular

sdp_logger = logging.getLogger("nlcert.sdp")

# Blocks up to this size use the Kronecker form of the Schur complement
SMALL_BLOCK = 40
ROW_CHUNK = 256
BACKTRACK_STEPS = 40

Entry = Tuple[int, int, int, float]  # (block, i, j, value) with i <= j, 0-based


class SdpStatus(Enum):
    OPTIMAL = "Optimal"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class SdpTolerances:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iters: int = 200
    step_fraction: float = 0.98
    trace_reg: float = 0.0


class SdpProblem:
    """Block-diagonal SDP data

    Constraint matrices are stored as one sparse operator acting on the
    concatenated row-major vectorization of the blocks; symmetric entries are
    stored in both positions so that <A_i, X> is a plain dot product.
    """

    def __init__(self, block_sizes: Sequence[int], cost: Sequence[np.ndarray],
                 operator: sp.csr_matrix, rhs: np.ndarray):
        self.block_sizes = [int(s) for s in block_sizes]
        self.offsets = np.concatenate([[0], np.cumsum([s * s for s in self.block_sizes])]).astype(int)
        self.cost = [np.asarray(c, dtype=float) for c in cost]
        self.operator = sp.csr_matrix(operator)
        self.rhs = np.asarray(rhs, dtype=float)
        if len(self.cost) != len(self.block_sizes):
            raise ValueError("one cost block per block size is required")
        for c, s in zip(self.cost, self.block_sizes):
            if c.shape != (s, s) or not np.allclose(c, c.T):
                raise ValueError("cost blocks must be symmetric and match the block sizes")
        if self.operator.shape != (len(self.rhs), int(self.offsets[-1])):
            raise ValueError(f"operator shape {self.operator.shape} does not match the problem")

    @classmethod
    def from_entries(cls, block_sizes: Sequence[int], cost_entries: Iterable[Entry],
                     constraint_entries: Sequence[Iterable[Entry]], rhs: Sequence[float]) -> 'SdpProblem':
        """Assemble from upper-triangle entries (block, i, j, value)"""
        sizes = [int(s) for s in block_sizes]
        offsets = np.concatenate([[0], np.cumsum([s * s for s in sizes])]).astype(int)
        cost = [np.zeros((s, s)) for s in sizes]
        for blk, i, j, v in cost_entries:
            cost[blk][i, j] += v
            if i != j:
                cost[blk][j, i] += v
        rows, cols, vals = [], [], []
        for r, entries in enumerate(constraint_entries):
            for blk, i, j, v in entries:
                s = sizes[blk]
                rows.append(r)
                cols.append(offsets[blk] + i * s + j)
                vals.append(v)
                if i != j:
                    rows.append(r)
                    cols.append(offsets[blk] + j * s + i)
                    vals.append(v)
        operator = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), int(offsets[-1])))
        operator.sum_duplicates()
        return cls(sizes, cost, operator, np.asarray(rhs, dtype=float))

    @property
    def num_constraints(self) -> int:
        return len(self.rhs)

    def constraint_block(self, i: int, blk: int) -> np.ndarray:
        s = self.block_sizes[blk]
        row = self.operator.getrow(i)[:, self.offsets[blk]:self.offsets[blk + 1]]
        return row.toarray().reshape(s, s)

    def apply(self, blocks: Sequence[np.ndarray]) -> np.ndarray:
        """(<A_1, X>, ..., <A_p, X>)"""
        return self.operator @ _vec(blocks)

    def adjoint(self, y: np.ndarray) -> List[np.ndarray]:
        """sum_i y_i A_i"""
        return _unvec(self.operator.T @ y, self.block_sizes, self.offsets)

    def objective(self, blocks: Sequence[np.ndarray]) -> float:
        return float(sum(np.sum(c * x) for c, x in zip(self.cost, blocks)))


@dataclass
class SdpSolution:
    X: List[np.ndarray]
    y: np.ndarray
    Z: List[np.ndarray]
    primal_objective: float
    dual_objective: float
    gap: float
    iterations: int
    status: SdpStatus
    primal_infeasibility: float = 0.0
    dual_infeasibility: float = 0.0
    solve_time: float = 0.0
    history: List[Dict[str, float]] = field(default_factory=list)

    @property
    def relative_gap(self) -> float:
        return self.gap / (
            1.0 + abs(self.primal_objective) + abs(self.dual_objective))


def _vec(blocks: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(b).ravel() for b in blocks])


def _unvec(v: np.ndarray, sizes: Sequence[int], offsets: np.ndarray) -> List[np.ndarray]:
    return [np.asarray(v[offsets[k]:offsets[k + 1]]).reshape(s, s) for k, s in enumerate(sizes)]


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _inner(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> float:
    return float(sum(np.sum(x * y) for x, y in zip(a, b)))


def _norm(blocks: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(np.sum(b * b) for b in blocks)))


class _SchurAssembler:
    """Builds M_ij = tr(A_i X A_j Z^-1) block by block"""

    def __init__(self, prob: SdpProblem):
        self.prob = prob
        self.p = prob.num_constraints
        csc = prob.operator.tocsc()
        self.blocks = []
        for k, s in enumerate(prob.block_sizes):
            local = csc[:, prob.offsets[k]:prob.offsets[k + 1]].tocsr()
            rows = np.unique(local.nonzero()[0])
            if rows.size == 0:
                self.blocks.append((s, rows, None, None))
                continue
            restricted = local[rows]
            per_row = None
            if s > SMALL_BLOCK:
                per_row = []
                for r in range(restricted.shape[0]):
                    start, end = restricted.indptr[r], restricted.indptr[r + 1]
                    cols = restricted.indices[start:end]
                    per_row.append((cols // s, cols % s, restricted.data[start:end]))
            self.blocks.append((s, rows, restricted, per_row))

    def assemble(self, X: Sequence[np.ndarray], Zinv: Sequence[np.ndarray]) -> np.ndarray:
        M = np.zeros((self.p, self.p))
        for k, (s, rows, restricted, per_row) in enumerate(self.blocks):
            if rows.size == 0:
                continue
            if per_row is None:
                kron = np.kron(X[k], Zinv[k])
                W = restricted @ kron
                sub = np.asarray((restricted @ W.T).T)
            else:
                sub = np.empty((rows.size, rows.size))
                for start in range(0, rows.size, ROW_CHUNK):
                    stop = min(start + ROW_CHUNK, rows.size)
                    G = np.empty((s * s, stop - start))
                    for c, r in enumerate(range(start, stop)):
                        K, L, v = per_row[r]
                        G[:, c] = (X[k][:, K] @ (v[:, None] * Zinv[k][L, :])).ravel()
                    sub[start:stop, :] = np.asarray(restricted @ G).T
            M[np.ix_(rows, rows)] += sub
        return _sym(M)


def _cholesky_blocks(blocks: Sequence[np.ndarray]) -> Optional[List[np.ndarray]]:
    """Lower Cholesky factors, or None when some block is not numerically positive definite"""
    try:
        return [np.linalg.cholesky(b) for b in blocks]
    except np.linalg.LinAlgError:
        return None


def _max_step(factors: Sequence[np.ndarray], dX: Sequence[np.ndarray]) -> float:
    """Largest alpha with X + alpha*dX psd, X = L L^T given by its factors (inf if unbounded)"""
    alpha = np.inf
    for L, d in zip(factors, dX):
        T = solve_triangular(L, solve_triangular(L, d, lower=True).T, lower=True)
        lam_min = float(np.linalg.eigvalsh(_sym(T))[0])
        if lam_min < 0:
            alpha = min(alpha, -1.0 / lam_min)
    return alpha


def _backtrack(blocks: Sequence[np.ndarray], step: Sequence[np.ndarray], alpha: float):
    """Shrink alpha until blocks + alpha*step factor; returns (alpha, new blocks, factors)"""
    for _ in range(BACKTRACK_STEPS):
        moved = [_sym(x + alpha * d) for x, d in zip(blocks, step)]
        factors = _cholesky_blocks(moved)
        if factors is not None:
            return alpha, moved, factors
        alpha *= 0.8
    raise LinAlgError("iterate left the positive definite cone")


class _SchurSolver:
    """Cholesky of the Schur complement, regularized, with an eigenvalue fallback"""

    def __init__(self, M: np.ndarray):
        self.factor = None
        self.eig = None
        scale = max(1.0, float(np.max(np.abs(np.diag(M)), initial=0.0)))
        reg = 0.0
        for _ in range(5):
            try:
                shifted = M + reg * np.eye(M.shape[0]) if reg else M
                self.factor = cho_factor(shifted, lower=False, check_finite=True)
                if reg:
                    sdp_logger.debug("Schur complement regularized by %.1e", reg)
                return
            except (LinAlgError, ValueError):
                reg = 1e-12 * scale if not reg else reg * 100.0
        if not np.all(np.isfinite(M)):
            raise LinAlgError("Schur complement has non-finite entries")
        w, V = np.linalg.eigh(M)
        cutoff = 1e-14 * max(1.0, float(np.max(np.abs(w))))
        inverse = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
        sdp_logger.debug("Schur complement solved by eigendecomposition (%d of %d modes kept)",
                         int(np.count_nonzero(inverse)), len(w))
        self.eig = (V, inverse)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.factor is not None:
            return cho_solve(self.factor, rhs)
        V, inverse = self.eig
        return V @ (inverse * (V.T @ rhs))


def _equilibrated(prob: SdpProblem, trace_reg: float) -> Tuple[SdpProblem, np.ndarray]:
    """Rows scaled to unit norm, cost shifted by trace_reg*I; returns (problem, row scale)"""
    row_norms = np.sqrt(np.asarray(prob.operator.multiply(prob.operator).sum(axis=1)).ravel())
    scale = np.where(row_norms > 0, 1.0 / np.where(row_norms > 0, row_norms, 1.0), 1.0)
    operator = sp.diags(scale) @ prob.operator
    cost = [c + trace_reg * np.eye(c.shape[0]) for c in prob.cost] if trace_reg else prob.cost
    return SdpProblem(prob.block_sizes, cost, operator, scale * prob.rhs), scale


def solve(prob: SdpProblem, tol: Optional[SdpTolerances] = None) -> SdpSolution:
    """Solve prob by the HKM infeasible-start predictor-corrector method

    The iteration runs on the row-equilibrated problem (plus trace_reg*I in
    the cost when requested); reported objectives and infeasibilities refer
    to prob itself. A non-optimal exit returns the best iterate seen.
    """
    tol = tol or SdpTolerances()
    start_time = time.time()
    sizes = prob.block_sizes
    N = sum(sizes)
    work, row_scale = _equilibrated(prob, tol.trace_reg)
    b = work.rhs
    C = work.cost
    norm_b = float(np.linalg.norm(prob.rhs))
    norm_C = _norm(C)

    xi_x = max(10.0, np.sqrt(N), float(np.max(1.0 + np.abs(b), initial=0.0)))
    xi_z = max(10.0, np.sqrt(N), norm_C, 1.0)
    X = [xi_x * np.eye(s) for s in sizes]
    Z = [xi_z * np.eye(s) for s in sizes]
    LX = [np.sqrt(xi_x) * np.eye(s) for s in sizes]
    LZ = [np.sqrt(xi_z) * np.eye(s) for s in sizes]
    y = np.zeros(work.num_constraints)

    schur = _SchurAssembler(work)
    history: List[Dict[str, float]] = []
    status = SdpStatus.MAX_ITER
    iteration = 0
    best = None

    def residuals():
        rp = b - work.apply(X)
        ATy = work.adjoint(y)
        Rd = [c - z - a for c, z, a in zip(C, Z, ATy)]
        return rp, Rd

    def report(rp, Rd):
        pobj = work.objective(X)
        dobj = float(b @ y)
        return (pobj, dobj,
                float(np.linalg.norm(rp / row_scale)) / (1.0 + norm_b),
                _norm(Rd) / (1.0 + norm_C))

    rp, Rd = residuals()
    pobj, dobj, pinf, dinf = report(rp, Rd)
    while True:
        mu = _inner(X, Z) / N
        rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        history.append({'iteration': iteration, 'primal': pobj, 'dual': dobj,
                        'gap': rel_gap, 'pinf': pinf, 'dinf': dinf, 'mu': mu})
        sdp_logger.debug("it %3d  pobj % .9e  dobj % .9e  gap %.2e  pinf %.2e  dinf %.2e",
                         iteration, pobj, dobj, rel_gap, pinf, dinf)
        merit = max(pinf, dinf, rel_gap)
        if best is None or merit < best[0]:
            best = (merit, iteration, X, y, Z, pobj, dobj, pinf, dinf)
        if rel_gap <= tol.gap_tol and pinf <= tol.feas_tol and dinf <= tol.feas_tol:
            status = SdpStatus.OPTIMAL
            break
        if _norm(X) > 1e12 * (1.0 + xi_x) or (dinf <= tol.feas_tol and dobj > 1e10 * (1.0 + abs(pobj))):
            status = SdpStatus.INFEASIBLE
            break
        if iteration >= tol.max_iters:
            break
        try:
            identity = [np.eye(s) for s in sizes]
            Zinv = [_sym(cho_solve((L, True), eye)) for L, eye in zip(LZ, identity)]
            solver = _SchurSolver(schur.assemble(X, Zinv))
            XRdZinv = [x @ r @ zi for x, r, zi in zip(X, Rd, Zinv)]
            base_rhs = rp + work.apply(XRdZinv)

            def direction(H):
                dy = solver.solve(base_rhs - work.apply(H))
                ATdy = work.adjoint(dy)
                dZ = [r - a for r, a in zip(Rd, ATdy)]
                dX = [_sym(h - x @ dz @ zi) for h, x, dz, zi in zip(H, X, dZ, Zinv)]
                return dX, dy, dZ

            # predictor
            H_aff = [-x for x in X]
            dX_a, dy_a, dZ_a = direction(H_aff)
            ap = min(1.0, _max_step(LX, dX_a))
            ad = min(1.0, _max_step(LZ, dZ_a))
            mu_aff = _inner([x + ap * d for x, d in zip(X, dX_a)],
                            [z + ad * d for z, d in zip(Z, dZ_a)]) / N
            sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

            # corrector
            H = [sigma * mu * zi - x - da @ dz @ zi
                 for zi, x, da, dz in zip(Zinv, X, dX_a, dZ_a)]
            dX, dy, dZ = direction(H)
            ap = min(1.0, tol.step_fraction * _max_step(LX, dX))
            ad = min(1.0, tol.step_fraction * _max_step(LZ, dZ))
            if not (np.isfinite(ap) and np.isfinite(ad)):
                raise LinAlgError("non-finite step length")
            ap, X_next, LX_next = _backtrack(X, dX, ap)
            ad, Z_next, LZ_next = _backtrack(Z, dZ, ad)
        except (LinAlgError, ValueError) as exc:
            sdp_logger.warning("SDP iteration %d failed: %s", iteration, exc)
            status = SdpStatus.NUMERICAL_FAILURE
            break
        if ap < 1e-12 and ad < 1e-12:
            sdp_logger.warning("SDP step length underflow at iteration %d", iteration)
            status = SdpStatus.NUMERICAL_FAILURE
            break
        X, LX = X_next, LX_next
        y = y + ad * dy
        Z, LZ = Z_next, LZ_next
        iteration += 1
        rp, Rd = residuals()
        pobj, dobj, pinf, dinf = report(rp, Rd)

    if status in (SdpStatus.MAX_ITER, SdpStatus.NUMERICAL_FAILURE) and best[1] != iteration:
        sdp_logger.info("returning iterate %d of %d (merit %.1e)", best[1], iteration, best[0])
        _, _, X, y, Z, pobj, dobj, pinf, dinf = best
    elapsed = time.time() - start_time
    solution = SdpSolution(X=X, y=row_scale * y, Z=Z, primal_objective=prob.objective(X),
                           dual_objective=dobj, gap=abs(pobj - dobj), iterations=iteration, status=status,
                           primal_infeasibility=pinf, dual_infeasibility=dinf,
                           solve_time=elapsed, history=history)
    sdp_logger.info("SDP %s after %d iterations (%d rows, blocks %s) in %.2fs",
                    status.value, iteration, prob.num_constraints,
                    _block_summary(sizes), elapsed)
    return solution


def _block_summary(sizes: Sequence[int]) -> str:
    counts: Dict[int, int] = {}
    for s in sizes:
        counts[s] = counts.get(s, 0) + 1
    return ",".join(f"{s}x{c}" if c > 1 else str(s) for s, c in sorted(counts.items(), reverse=True))


# ---------------------------------------------------------------------------
# SDPA sparse format
# ---------------------------------------------------------------------------
# SDPA reads  max <F0, Y>  s.t. <F_i, Y> = c_i,  Y psd.  Our primal maps onto
# it with F0 = -C, F_i = A_i and c = b.

def write_sdpa(prob: SdpProblem, path: str, comment: str = "nlcert") -> None:
    lines = [f'"{comment}"', str(prob.num_constraints), str(len(prob.block_sizes)),
             " ".join(str(s) for s in prob.block_sizes),
             " ".join(repr(float(v)) for v in prob.rhs)]
    for k, c in enumerate(prob.cost):
        for i, j in zip(*np.nonzero(np.triu(c))):
            lines.append(f"0 {k + 1} {i + 1} {j + 1} {float(-c[i, j])!r}")
    coo = prob.operator.tocoo()
    for r, col, v in sorted(zip(coo.row, coo.col, coo.data)):
        k = int(np.searchsorted(prob.offsets, col, side='right') - 1)
        s = prob.block_sizes[k]
        i, j = divmod(int(col - prob.offsets[k]), s)
        if i <= j and v != 0:
            lines.append(f"{r + 1} {k + 1} {i + 1} {j + 1} {float(v)!r}")
    with open(path, 'w', encoding='utf-8') as f:
        f.write("\n".join(lines) + "\n")


def read_sdpa(path: str) -> SdpProblem:
    with open(path, 'r', encoding='utf-8') as f:
        raw = [ln.strip() for ln in f if ln.strip()]
    body = [ln for ln in raw if not ln.startswith(('"', '*'))]

    def numbers(line: str) -> List[str]:
        return line.replace(',', ' ').replace('{', ' ').replace('}', ' ').replace('(', ' ').replace(')', ' ').split()

    m = int(numbers(body[0])[0])
    nblocks = int(numbers(body[1])[0])
    sizes = [abs(int(v)) for v in numbers(body[2])[:nblocks]]
    rhs = [float(v) for v in numbers(body[3])[:m]]
    cost_entries: List[Entry] = []
    constraint_entries: List[List[Entry]] = [[] for _ in range(m)]
    for line in body[4:]:
        parts = numbers(line)
        if len(parts) < 5:
            continue
        matno, blk, i, j = (int(v) for v in parts[:4])
        value = float(parts[4])
        i, j = min(i, j) - 1, max(i, j) - 1
        if matno == 0:
            cost_entries.append((blk - 1, i, j, -value))
        else:
            constraint_entries[matno - 1].append((blk - 1, i, j, value))
    return SdpProblem.from_entries(sizes, cost_entries, constraint_entries, rhs)
