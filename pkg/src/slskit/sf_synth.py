"""State-feedback localized synthesis.

Each disturbance cell gets its own equality-constrained QP over the entries its
locality pattern allows. The achievability equation for the columns ``c`` of a
pair ``(X, U)`` reads, coefficient by coefficient,

    X[e+1] - A X[e] - B U[e] = E   (e = 0)
                             = 0   (e = 1..T),   with X[0] = 0 and X[T+1] = 0.

For LLQR ``X = R``, ``U = M`` and ``E`` is the identity restricted to ``c``.
The same builder serves the output-feedback ADMM (``U[0]`` may be free there).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .fir import FirMatrix, SystemResponse, fir_transpose, sf_residual
from .policy import DEFAULT_POLICY, NumericPolicy
from .sparsity import ConstraintSpace, membership

MAX_LOCAL_VARS = 20_000


def partition_by_noise(B1) -> tuple[tuple[tuple[int, ...], ...], np.ndarray]:
    """Cells of mutually correlated disturbance columns and the permutation grouping them.

    Cells are connected components of ``Sp{B1 B1^T}``, ordered by their smallest index.
    """
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    W = (B1 @ B1.T) != 0
    # B1 B1^T may cancel numerically; use the bipartite structure instead.
    S = (B1 != 0).astype(float)
    W |= (S @ S.T) > 0
    np.fill_diagonal(W, True)
    _, labels = connected_components(csr_matrix(W), directed=False)
    cells: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        cells.setdefault(int(lab), []).append(i)
    ordered = sorted((tuple(v) for v in cells.values()), key=lambda c: c[0])
    perm = np.array([i for c in ordered for i in c], dtype=int)
    return tuple(ordered), perm


@dataclass(frozen=True, eq=False)
class LocalSubproblem:
    """Reduced achievability system for one cell of columns.

    Variables are the pattern-allowed entries ``(k, part, row, col)`` with
    ``part`` 0 for ``X`` rows and 1 for ``U`` rows; ``col`` indexes ``cells``.
    """

    cells: tuple[int, ...]
    s_x: np.ndarray
    s_u: np.ndarray
    t: np.ndarray
    var_k: np.ndarray
    var_part: np.ndarray
    var_row: np.ndarray
    var_col: np.ndarray
    G: np.ndarray
    b: np.ndarray
    H: Optional[np.ndarray] = None
    n_x: int = 0
    n_u: int = 0
    T: int = 0

    @property
    def n_var(self) -> int:
        return self.var_k.size

    def stacked_rows(self) -> np.ndarray:
        """Row index of each variable in the stacked ``[X; U]`` space."""
        return np.where(self.var_part == 0, self.var_row, self.n_x + self.var_row)

    def scatter(self, v: np.ndarray, X: np.ndarray, U: np.ndarray) -> None:
        """Write local values into global coefficient arrays ``(T+1, rows, cols)``."""
        cols = np.asarray(self.cells)[self.var_col]
        x = self.var_part == 0
        X[self.var_k[x], self.var_row[x], cols[x]] = v[x]
        U[self.var_k[~x], self.var_row[~x], cols[~x]] = v[~x]

    def gather(self, X: np.ndarray, U: np.ndarray) -> np.ndarray:
        cols = np.asarray(self.cells)[self.var_col]
        x = self.var_part == 0
        v = np.empty(self.n_var)
        v[x] = X[self.var_k[x], self.var_row[x], cols[x]]
        v[~x] = U[self.var_k[~x], self.var_row[~x], cols[~x]]
        return v


def build_local_system(A, B, S_X: ConstraintSpace, S_U: ConstraintSpace, cells: Sequence[int],
                       E: Optional[np.ndarray] = None, T: Optional[int] = None,
                       max_vars: int = MAX_LOCAL_VARS) -> LocalSubproblem:
    """Reduced constraint ``G v = b`` for the columns ``cells`` of ``(X, U)``.

    ``E`` (shape ``(n, len(cells))``) is the right-hand side of the ``e = 0`` block;
    it defaults to the matching identity columns.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    cells = tuple(int(c) for c in cells)
    T = max(S_X.T, S_U.T) if T is None else T
    if S_X[0].nnz():
        raise ValueError("X must be strictly proper")
    cx = S_X.stacked()[:, :, cells] if S_X.T >= 0 else None
    cu = S_U.stacked()[:, :, cells]
    if E is None:
        E = np.eye(n)[:, cells]
    E = np.asarray(E, dtype=float).reshape(n, len(cells))
    # Variables: allowed entries for k <= T (X from k=1, U from k=0).
    kx, rx, colx = np.nonzero(cx[:T + 1])
    ku, ru, colu = np.nonzero(cu[:T + 1])
    var_k = np.concatenate([kx, ku])
    var_part = np.concatenate([np.zeros(kx.size, int), np.ones(ku.size, int)])
    var_row = np.concatenate([rx, ru])
    var_col = np.concatenate([colx, colu])
    order = np.lexsort((var_row, var_part, var_k, var_col))
    var_k, var_part, var_row, var_col = (a[order] for a in (var_k, var_part, var_row, var_col))
    if var_k.size > max_vars:
        raise MemoryError(f"local subproblem has {var_k.size} variables (limit {max_vars})")
    s_x = np.unique(rx)
    s_u = np.unique(ru)
    # Rows of the dynamics touched by the variables or by the right-hand side.
    touched = np.zeros(n, dtype=bool)
    touched[s_x] = True
    if s_x.size:
        touched |= np.any(A[:, s_x] != 0, axis=1)
    if s_u.size:
        touched |= np.any(B[:, s_u] != 0, axis=1)
    touched |= np.any(E != 0, axis=1)
    t = np.flatnonzero(touched)
    pos = -np.ones(n, dtype=int)
    pos[t] = np.arange(t.size)
    nt, nc = t.size, len(cells)

    def row(e, i_local, c):
        return (c * (T + 1) + e) * nt + i_local

    G = np.zeros((nc * (T + 1) * nt, var_k.size))
    At, Bt = A[t], B[t]
    for v in range(var_k.size):
        k, r, c = var_k[v], var_row[v], var_col[v]
        if var_part[v] == 0:
            if k - 1 >= 0:
                G[row(k - 1, pos[r], c), v] += 1.0
            if k <= T:
                base = row(k, 0, c)
                G[base:base + nt, v] -= At[:, r]
        else:
            base = row(k, 0, c)
            G[base:base + nt, v] -= Bt[:, r]
    b = np.zeros(G.shape[0])
    for c in range(nc):
        base = row(0, 0, c)
        b[base:base + nt] = E[t, c]
    # Rows that are 0 = 0 carry no information and would make the KKT matrix singular.
    keep = np.any(G != 0, axis=1) | (b != 0)
    G, b = G[keep], b[keep]
    return LocalSubproblem(cells, s_x, s_u, t, var_k, var_part, var_row, var_col, G, b,
                           None, n, m, T)


def quadratic_weights(sub: LocalSubproblem, Hfull: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``v^T H v = sum_k trace(Phi[k]^T Hfull Phi[k] W_cc)`` over the cell's variables."""
    p = sub.stacked_rows()
    cols = np.asarray(sub.cells)[sub.var_col]
    same_k = sub.var_k[:, None] == sub.var_k[None, :]
    return same_k * Hfull[np.ix_(p, p)] * W[np.ix_(cols, cols)]


@dataclass(frozen=True)
class LocalSolution:
    v: np.ndarray
    objective: float
    residual: float
    feasible: bool


def solve_kkt(H: np.ndarray, G: np.ndarray, b: np.ndarray,
              policy: NumericPolicy = DEFAULT_POLICY) -> LocalSolution:
    """Minimize ``v^T H v`` subject to ``G v = b`` via ``[2H G^T; G 0]``.

    A singular KKT matrix falls back to the minimum-norm least-squares solution.
    """
    nv, ne = G.shape[1], G.shape[0]
    K = np.zeros((nv + ne, nv + ne))
    K[:nv, :nv] = 2.0 * H
    K[:nv, nv:] = G.T
    K[nv:, :nv] = G
    rhs = np.concatenate([np.zeros(nv), b])
    sol = None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(K, check_finite=False)
        if np.min(np.abs(np.diag(lu[0])), initial=np.inf) > 1e-12 * max(1.0, np.abs(K).max()):
            cand = sla.lu_solve(lu, rhs, check_finite=False)
            if np.all(np.isfinite(cand)) and \
                    np.linalg.norm(K @ cand - rhs) <= 1e-11 * (1.0 + np.linalg.norm(rhs)):
                sol = cand
    except (sla.LinAlgError, ValueError):
        sol = None
    if sol is None:
        sol = sla.lstsq(K, rhs, lapack_driver="gelsd", check_finite=False)[0]
    v = sol[:nv]
    res = float(np.linalg.norm(G @ v - b))
    bnorm = float(np.linalg.norm(b))
    return LocalSolution(v, float(v @ H @ v), res, policy.feasible(res, bnorm))


@dataclass(frozen=True, eq=False)
class SfProblem:
    """LLQR data: minimize ``sum_k trace(Phi[k]^T Hfull Phi[k] W)`` with ``Phi = [R; M]``.

    ``Hfull = [[Q, S], [S^T, Rw]]`` and ``W`` is the disturbance covariance ``B1 B1^T``.
    """

    A: np.ndarray
    B2: np.ndarray
    S_R: ConstraintSpace
    S_M: ConstraintSpace
    Q: np.ndarray
    Rw: np.ndarray
    W: np.ndarray
    partition: tuple[tuple[int, ...], ...]
    S: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("A", "B2", "Q", "Rw", "W"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))
        n, m = self.B2.shape
        if self.A.shape != (n, n):
            raise ValueError("A must be square with as many rows as B2")
        if self.S_R.shape != (n, n) or self.S_M.shape != (m, n):
            raise ValueError("constraint spaces do not match plant dimensions")
        if self.Q.shape != (n, n) or self.Rw.shape != (m, m) or self.W.shape != (n, n):
            raise ValueError("weight dimensions do not match plant dimensions")
        for name in ("Q", "Rw", "W"):
            M = getattr(self, name)
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
        try:
            np.linalg.cholesky(self.Rw)
        except np.linalg.LinAlgError as exc:
            raise ValueError("Rw must be positive definite") from exc
        S = np.zeros((n, m)) if self.S is None else np.atleast_2d(np.asarray(self.S, float))
        object.__setattr__(self, "S", S)
        part = tuple(tuple(int(i) for i in c) for c in self.partition)
        flat = sorted(i for c in part for i in c)
        if flat != list(range(n)):
            raise ValueError("partition cells must be disjoint and cover every state")
        object.__setattr__(self, "partition", part)

    @property
    def T(self) -> int:
        return max(self.S_R.T, self.S_M.T)

    @property
    def Hfull(self) -> np.ndarray:
        return np.block([[self.Q, self.S], [self.S.T, self.Rw]])

    @classmethod
    def from_plant(cls, plant, S_R: ConstraintSpace, S_M: ConstraintSpace) -> "SfProblem":
        W = plant.B1 @ plant.B1.T
        cells, _ = partition_by_noise(plant.B1)
        return cls(plant.A, plant.B2, S_R, S_M, plant.C1.T @ plant.C1,
                   plant.D12.T @ plant.D12, W, cells, plant.C1.T @ plant.D12)


def reduce_dimension(problem: SfProblem, j: int,
                     max_vars: int = MAX_LOCAL_VARS) -> LocalSubproblem:
    """Reduced subproblem for cell ``j`` of the problem's partition."""
    cells = problem.partition[j]
    sub = build_local_system(problem.A, problem.B2, problem.S_R, problem.S_M, cells,
                             T=problem.T, max_vars=max_vars)
    if np.any(sub.var_k == 0):
        raise ValueError("M must be strictly proper for state feedback")
    H = quadratic_weights(sub, problem.Hfull, problem.W)
    return LocalSubproblem(**{**sub.__dict__, "H": H})


def solve_local_qp(sub: LocalSubproblem,
                   policy: NumericPolicy = DEFAULT_POLICY) -> LocalSolution:
    if sub.H is None:
        raise ValueError("subproblem has no objective weights")
    return solve_kkt(sub.H, sub.G, sub.b, policy)


@dataclass(frozen=True)
class SfResult:
    R: Optional[FirMatrix]
    M: Optional[FirMatrix]
    objective: float
    per_column_objectives: tuple[float, ...]
    status: str
    failing_column: Optional[int] = None
    residual: float = float("nan")
    cell_residuals: tuple[float, ...] = field(default=())

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def response(self) -> SystemResponse:
        if not self.feasible:
            raise ValueError(f"no feasible response (status {self.status})")
        return SystemResponse(self.R, self.M)

    def to_json(self) -> dict:
        out = {"objective": self.objective,
               "per_column_objectives": list(self.per_column_objectives),
               "status": self.status}
        if self.failing_column is not None:
            out["failing_column"] = self.failing_column
        if self.feasible:
            out["residual"] = self.residual
            out["R"] = self.R.to_json()
            out["M"] = self.M.to_json()
        return out


def _map_cells(fn, n_cells: int, workers: int):
    if workers <= 1 or n_cells <= 1:
        return [fn(j) for j in range(n_cells)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(n_cells)))


def llqr_solve(problem: SfProblem, workers: int = 1, diagnostics: bool = False,
               policy: NumericPolicy = DEFAULT_POLICY) -> SfResult:
    """Solve every cell independently and merge the local columns in cell order.

    Without ``diagnostics`` the sequential path stops at the first infeasible cell.
    """
    n, m = problem.B2.shape
    T = problem.T
    cells = problem.partition

    def solve(j):
        sub = reduce_dimension(problem, j)
        return sub, solve_local_qp(sub, policy)

    if workers <= 1 and not diagnostics:
        out = []
        for j in range(len(cells)):
            out.append(solve(j))
            if not out[-1][1].feasible:
                break
    else:
        out = _map_cells(solve, len(cells), workers)
    objs = tuple(s.objective for _, s in out)
    resid = tuple(s.residual for _, s in out)
    for (sub, s) in out:
        if not s.feasible:
            return SfResult(None, None, float("nan"), objs, "infeasible",
                            failing_column=int(sub.cells[0]), cell_residuals=resid)
    Rc = np.zeros((T + 1, n, n))
    Mc = np.zeros((T + 1, m, n))
    for sub, s in out:
        sub.scatter(s.v, Rc, Mc)
    R, M = FirMatrix(Rc), FirMatrix(Mc)
    return SfResult(R, M, float(sum(objs)), objs, "feasible", None,
                    sf_residual(problem.A, problem.B2, R, M), resid)


@dataclass(frozen=True)
class LocalizabilityReport:
    localizable: bool
    failing_column: Optional[int]
    residuals: tuple[float, ...]


def is_localizable(plant, S_R: ConstraintSpace, S_M: ConstraintSpace,
                   policy: NumericPolicy = DEFAULT_POLICY) -> LocalizabilityReport:
    """Per-column least-squares feasibility of the reduced achievability equations."""
    A, B2 = plant.A, plant.B2
    n = A.shape[0]
    residuals = []
    failing = None
    for j in range(n):
        sub = build_local_system(A, B2, S_R, S_M, (j,))
        if sub.n_var:
            v = sla.lstsq(sub.G, sub.b, lapack_driver="gelsd", check_finite=False)[0]
            res = float(np.linalg.norm(sub.G @ v - sub.b))
        else:
            res = float(np.linalg.norm(sub.b))
        residuals.append(res)
        if failing is None and not policy.feasible(res, float(np.linalg.norm(sub.b))):
            failing = j
    return LocalizabilityReport(failing is None, failing, tuple(residuals))


def t_step_controllable(A, B2, T: int, policy: NumericPolicy = DEFAULT_POLICY) -> bool:
    """Whether some strictly proper FIR pair of horizon ``T`` solves ``(zI-A)R - B2 M = I``."""
    if T < 1:
        raise ValueError("T must be at least 1")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B2 = np.asarray(B2, dtype=float).reshape(A.shape[0], -1)
    n, m = B2.shape
    S_R = ConstraintSpace.full(n, n, T)
    S_M = ConstraintSpace.full(m, n, T)
    # Every column has the same coefficient matrix (full patterns), so solve them together.
    sub = build_local_system(A, B2, S_R, S_M, (0,))
    G, t = sub.G, sub.t
    nt = t.size
    rhs = np.zeros((G.shape[0], n))
    rhs[:nt] = np.eye(n)
    X, *_ = sla.lstsq(G, rhs, lapack_driver="gelsd", check_finite=False)
    res = float(np.linalg.norm(G @ X - rhs))
    return policy.feasible(res, float(np.sqrt(n)))


def t_step_observable(A, C2, T: int, policy: NumericPolicy = DEFAULT_POLICY) -> bool:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C2 = np.asarray(C2, dtype=float).reshape(-1, A.shape[0])
    return t_step_controllable(A.T, C2.T, T, policy)


def ldkf_solve(plant, S_R: ConstraintSpace, S_N: ConstraintSpace,
               weights: Optional[tuple[np.ndarray, np.ndarray]] = None, W=None,
               workers: int = 1, policy: NumericPolicy = DEFAULT_POLICY
               ) -> tuple[Optional[FirMatrix], Optional[FirMatrix], float]:
    """Localized estimator ``[R N] [zI-A; -C2] = I`` minimizing ``||[R N][B1; D21]||^2``.

    Solved as an LLQR on ``(A^T, C2^T)``. ``weights`` overrides ``(Q', Rw')``, which
    default to ``(B1 B1^T, D21 D21^T)``; ``W`` weights the rows and defaults to ``I``.
    Returns ``(None, None, nan)`` when infeasible.
    """
    A, C2 = plant.A, plant.C2
    n = A.shape[0]
    if weights is None:
        Qp, Rp = plant.B1 @ plant.B1.T, plant.D21 @ plant.D21.T
        Sp = plant.B1 @ plant.D21.T
    else:
        Qp, Rp = weights
        Sp = None
    W = np.eye(n) if W is None else W
    cells, _ = partition_by_noise(W)
    prob = SfProblem(A.T, C2.T, S_R.transpose(), S_N.transpose(), Qp, Rp, W, cells, Sp)
    res = llqr_solve(prob, workers=workers, policy=policy)
    if not res.feasible:
        return None, None, float("nan")
    return fir_transpose(res.R), fir_transpose(res.M), res.objective


def h2_objective(problem: SfProblem, R: FirMatrix, M: FirMatrix) -> float:
    """Recompute the LLQR objective from a response (independent of the cell solves)."""
    Phi = FirMatrix(np.concatenate([R.padded(problem.T).coeffs, M.padded(problem.T).coeffs], 1))
    total = 0.0
    for k in range(Phi.T + 1):
        P = Phi.coeffs[k]
        total += float(np.trace(P.T @ problem.Hfull @ P @ problem.W))
    return total


def check_result(problem: SfProblem, res: SfResult, tol: float = 1e-9) -> bool:
    """Achievability and exact pattern membership of a feasible result."""
    return (res.feasible and res.residual <= tol and membership(res.R, problem.S_R)
            and membership(res.M, problem.S_M))


__all__ = [
    "partition_by_noise", "LocalSubproblem", "build_local_system", "quadratic_weights",
    "solve_kkt", "SfProblem", "reduce_dimension", "solve_local_qp", "SfResult", "llqr_solve",
    "LocalizabilityReport", "is_localizable", "t_step_controllable", "t_step_observable",
    "ldkf_solve", "h2_objective", "check_result",
]
