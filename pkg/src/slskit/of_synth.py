"""Output-feedback localized synthesis by ADMM.

The closed-loop map ``Phi = [[R, N], [M, L]]`` must satisfy two affine equations:

    [zI - A, -B2] Phi = [I, 0]       (column-wise separable)
    Phi [zI - A; -C2] = [I; 0]       (row-wise separable)

ADMM keeps two copies: ``Phi`` lives on the row side, ``Psi`` on the column side.
Each side splits into independent cells that are solved by closed-form proximal
maps (affine, or affine followed by group soft-thresholding) or, for the
row-wise L1 constraint, by a short warm-started inner ADMM.

By default the H2 objective and the sensor norm are column-side terms, while the
actuator norm and the L1 constraint are row-side terms.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import lsqr

from .fir import FirMatrix, SystemResponse, of_residual
from .policy import DEFAULT_POLICY, NumericPolicy
from .sf_synth import (LocalSubproblem, build_local_system, partition_by_noise,
                       quadratic_weights)
from .sparsity import (INF, ConstraintSpace, SparsityPattern, _as_fraction, _floor_h,
                       distance_matrix, membership)


class SubproblemInfeasible(RuntimeError):
    def __init__(self, side: str, cell: tuple[int, ...], residual: float):
        super().__init__(f"{side}-side cell {cell} is infeasible (residual {residual:.3e})")
        self.side = side
        self.cell = cell
        self.residual = residual


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.0
    eps_pri: float = 1e-6
    eps_dual: float = 1e-6
    max_iter: int = 5000
    workers: int = 1
    divergence_window: int = 200
    divergence_factor: float = 10.0
    polish: bool = True
    l1_split: bool = True
    inner_sigma: float = 3.0
    inner_relax: float = 1.7
    inner_tol: float = 1e-10
    inner_max_iter: int = 2000

    def __post_init__(self):
        for name in ("rho", "eps_pri", "eps_dual", "inner_sigma", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1 or self.workers < 1:
            raise ValueError("max_iter and workers must be positive")
        if not 0.0 < self.inner_relax < 2.0:
            raise ValueError("inner_relax must lie in (0, 2)")


@dataclass(frozen=True)
class RegularizerWeights:
    mu: np.ndarray
    lam: np.ndarray
    eps: float = 1e-3

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        lam = np.asarray(self.lam, dtype=float).ravel()
        if np.any(mu < 0) or np.any(lam < 0):
            raise ValueError("regularizer weights must be nonnegative")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "lam", lam)


@dataclass(frozen=True, eq=False)
class OfProblem:
    """``min ||[C1 D12] Phi [B1; D21]||^2 + actuator/sensor norms`` over ``Phi`` in ``S_Phi``.

    ``gamma`` bounds the row-wise L1 norm of ``[C1 D12] Phi [B1; D21]``; ``None`` or
    ``inf`` means no bound. ``h2_side`` places the quadratic on the column ("col") or
    row ("row") side.
    """

    plant: object
    S_Phi: ConstraintSpace
    mu: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    h2_side: str = "col"

    def __post_init__(self):
        p = self.plant
        nx, nu, ny = p.n_x, p.n_u, p.n_y
        if self.S_Phi.shape != (nx + nu, nx + ny):
            raise ValueError(f"S_Phi must be {(nx + nu, nx + ny)}, got {self.S_Phi.shape}")
        mu = np.zeros(nu) if self.mu is None else np.asarray(self.mu, dtype=float).ravel()
        lam = np.zeros(ny) if self.lam is None else np.asarray(self.lam, dtype=float).ravel()
        if mu.shape != (nu,) or lam.shape != (ny,):
            raise ValueError("mu must have n_u entries and lam n_y entries")
        if np.any(mu < 0) or np.any(lam < 0):
            raise ValueError("regularizer weights must be nonnegative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "lam", lam)
        g = self.gamma
        if g is not None and not g > 0:
            raise ValueError("gamma must be positive")
        if g is not None and np.isinf(g):
            object.__setattr__(self, "gamma", None)
        if self.h2_side not in ("col", "row"):
            raise ValueError("h2_side must be 'col' or 'row'")
        if self.gamma is not None and np.any(mu > 0):
            raise ValueError("actuator norm and L1 bound cannot share the row side")

    @property
    def T(self) -> int:
        return self.S_Phi.T

    @property
    def Cz(self) -> np.ndarray:
        return np.hstack([self.plant.C1, self.plant.D12])

    @property
    def Bw(self) -> np.ndarray:
        return np.vstack([self.plant.B1, self.plant.D21])


def _space(arr: np.ndarray) -> ConstraintSpace:
    return ConstraintSpace(tuple(SparsityPattern(a) for a in arr))


def of_locality(plant, d: Optional[int], T: int, h=None) -> ConstraintSpace:
    """Locality, FIR and delay pattern for ``Phi``.

    Exponents of ``Abar``: ``R`` uses ``d``, ``M`` and ``N`` use ``d + 1``, ``L`` uses
    ``d + 2`` (``None`` means unrestricted). With a speed ratio ``h`` the exponent at
    ``k`` is capped by ``floor(h (k-1))`` for ``R, M, N`` and by ``floor(h k)`` for ``L``.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    nx, nu, ny = plant.n_x, plant.n_u, plant.n_y
    D = distance_matrix(plant.A)
    Bt = (plant.B2.T != 0).astype(int)
    Ct = (plant.C2.T != 0).astype(int)
    hf = INF if h is None else _as_fraction(h)
    if hf != INF and hf <= 1:
        raise ValueError("communication speed ratio h must exceed 1")

    def reach(extra, cap):
        e = np.inf if d is None else d + extra
        e = min(e, cap)
        return (D <= e).astype(int)

    out = np.zeros((T + 1, nx + nu, nx + ny), dtype=bool)
    for k in range(T + 1):
        cap = _floor_h(hf, k - 1) if (k >= 1 and hf != INF) else np.inf
        if k >= 1:
            R = reach(0, cap) > 0
            M = (Bt @ reach(1, cap)) > 0
            N = (reach(1, cap) @ Ct) > 0
            out[k, :nx, :nx] = R
            out[k, nx:, :nx] = M
            out[k, :nx, nx:] = N
        capL = _floor_h(hf, k) if hf != INF else np.inf
        out[k, nx:, nx:] = (Bt @ reach(2, capL) @ Ct) > 0
    return _space(out)


def full_locality(plant, T: int) -> ConstraintSpace:
    return of_locality(plant, None, T)


def prox_group_soft_threshold(p, kappa: float) -> np.ndarray:
    """``max(0, 1 - kappa/||p||) p``."""
    if kappa < 0:
        raise ValueError("threshold must be nonnegative")
    p = np.asarray(p, dtype=float)
    nrm = float(np.linalg.norm(p))
    if nrm <= kappa or nrm == 0.0:
        return np.zeros_like(p)
    return (1.0 - kappa / nrm) * p


def project_row_l1_ball(row, gamma: float) -> np.ndarray:
    """Euclidean projection onto ``{v : ||v||_1 <= gamma}``."""
    return project_weighted_l1_ball(row, gamma, None)


def project_weighted_l1_ball(p, gamma: float, w=None) -> np.ndarray:
    """Projection onto ``{v : sum_i w_i |v_i| <= gamma}``; entries with ``w_i = 0`` are free."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    p = np.asarray(p, dtype=float)
    w = np.ones_like(p) if w is None else np.asarray(w, dtype=float)
    a = np.abs(p)
    if float(w @ a) <= gamma:
        return p.copy()
    act = w > 0
    aa, ww = a[act], w[act]
    ratio = aa / ww
    order = np.argsort(-ratio)
    aa, ww, ratio = aa[order], ww[order], ratio[order]
    cum_wa = np.cumsum(ww * aa)
    cum_ww = np.cumsum(ww * ww)
    theta_all = (cum_wa - gamma) / cum_ww
    # Largest prefix whose last ratio still exceeds its threshold.
    valid = np.flatnonzero(ratio > theta_all)
    theta = float(theta_all[valid[-1]])
    out = p.copy()
    out[act] = np.sign(p[act]) * np.maximum(a[act] - theta * w[act], 0.0)
    return out


def actuator_norm(resp: SystemResponse, mu) -> float:
    """``sum_i mu_i ||row_i [M L]||_H2``."""
    ML = np.concatenate([_coeffs(resp.M, resp.T), _coeffs(resp.L, resp.T)], axis=2)
    norms = np.sqrt(np.sum(ML ** 2, axis=(0, 2)))
    return float(np.asarray(mu, dtype=float) @ norms)


def sensor_norm(resp: SystemResponse, lam) -> float:
    """``sum_j lam_j ||col_j [N; L]||_H2``."""
    NL = np.concatenate([_coeffs(resp.N, resp.T), _coeffs(resp.L, resp.T)], axis=1)
    norms = np.sqrt(np.sum(NL ** 2, axis=(0, 1)))
    return float(np.asarray(lam, dtype=float) @ norms)


def actuator_row_norms(resp: SystemResponse) -> np.ndarray:
    ML = np.concatenate([_coeffs(resp.M, resp.T), _coeffs(resp.L, resp.T)], axis=2)
    return np.sqrt(np.sum(ML ** 2, axis=(0, 2)))


def sensor_col_norms(resp: SystemResponse) -> np.ndarray:
    NL = np.concatenate([_coeffs(resp.N, resp.T), _coeffs(resp.L, resp.T)], axis=1)
    return np.sqrt(np.sum(NL ** 2, axis=(0, 1)))


def _coeffs(G: FirMatrix, T: int) -> np.ndarray:
    return G.padded(T).coeffs


def reweight_l1(weights: RegularizerWeights, resp: SystemResponse,
                eps: Optional[float] = None) -> RegularizerWeights:
    """``mu_i = 1/(||row_i [M L]|| + eps)`` and ``lam_j = 1/(||col_j [N; L]|| + eps)``."""
    eps = weights.eps if eps is None else eps
    if not eps > 0:
        raise ValueError("eps must be positive")
    return RegularizerWeights(1.0 / (actuator_row_norms(resp) + eps),
                              1.0 / (sensor_col_norms(resp) + eps), eps)


def h2_cost(problem: OfProblem, resp_or_phi) -> float:
    """``||[C1 D12] Phi [B1; D21]||_H2^2``."""
    Phi = resp_or_phi.phi() if isinstance(resp_or_phi, SystemResponse) else resp_or_phi
    C = Phi.coeffs if isinstance(Phi, FirMatrix) else Phi
    return float(np.sum((problem.Cz @ C @ problem.Bw) ** 2))


def l1_cost(problem: OfProblem, resp: SystemResponse) -> float:
    """Row-wise L1 (worst-case l_inf gain) of ``[C1 D12] Phi [B1; D21]``."""
    C = problem.Cz @ resp.phi().coeffs @ problem.Bw
    return float(np.max(np.sum(np.abs(C), axis=(0, 2)), initial=0.0))


def total_objective(problem: OfProblem, resp: SystemResponse) -> float:
    return h2_cost(problem, resp) + actuator_norm(resp, problem.mu) + sensor_norm(resp, problem.lam)


@dataclass(eq=False)
class _Cell:
    """One proximal subproblem; the only mutable state is its factorization cache."""

    side: str
    sub: LocalSubproblem
    idx: np.ndarray
    H: np.ndarray
    group: float = 0.0
    l1_w: Optional[np.ndarray] = None
    gamma: Optional[float] = None
    x0: Optional[np.ndarray] = None
    F: Optional[np.ndarray] = None
    cache: dict = field(default_factory=dict)
    factorizations: int = 0
    hits: int = 0
    y: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None

    def prepare(self, policy: NumericPolicy) -> None:
        G, b = self.sub.G, self.sub.b
        nv = self.sub.n_var
        if nv == 0:
            res = float(np.linalg.norm(b))
            if not policy.feasible(res, res):
                raise SubproblemInfeasible(self.side, self.sub.cells, res)
            self.x0, self.F = np.zeros(0), np.zeros((0, 0))
            return
        if G.shape[0] == 0:
            self.x0, self.F = np.zeros(nv), np.eye(nv)
            return
        U, s, Vt = np.linalg.svd(G, full_matrices=True)
        tol = max(G.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
        r = int(np.sum(s > tol))
        x0 = Vt[:r].T @ ((U[:, :r].T @ b) / s[:r])
        res = float(np.linalg.norm(G @ x0 - b))
        if not policy.feasible(res, float(np.linalg.norm(b))):
            raise SubproblemInfeasible(self.side, self.sub.cells, res)
        self.x0, self.F = x0, Vt[r:].T

    def affine_map(self, penalty: float) -> tuple[np.ndarray, np.ndarray]:
        """``v = K a + k0`` minimizing ``v'Hv + (penalty/2)||v - a||^2`` on the affine set."""
        key = float(penalty)
        hit = self.cache.get(key)
        if hit is not None:
            self.hits += 1
            return hit
        self.factorizations += 1
        F, x0 = self.F, self.x0
        P = 2.0 * self.H + penalty * np.eye(self.H.shape[0])
        S = F.T @ P @ F
        if F.shape[1]:
            SinvFt = sla.solve(S, F.T, assume_a="pos")
            K = penalty * (F @ SinvFt)
            k0 = x0 - F @ (SinvFt @ (P @ x0))
        else:
            K = np.zeros((x0.size, x0.size))
            k0 = x0.copy()
        self.cache[key] = (K, k0)
        return K, k0

    def prox(self, a: np.ndarray, rho: float, cfg: AdmmConfig, l1: bool = True) -> np.ndarray:
        if self.sub.n_var == 0:
            return a
        if self.group > 0:
            c = float(self.H[0, 0]) if self.H.size else 0.0
            # Affine part is a subspace here (rhs = 0), so projection commutes with scaling.
            K, _ = self.affine_map(rho)
            return prox_group_soft_threshold(K @ a, self.group / (2.0 * c + rho))
        K, k0 = self.affine_map(rho)
        v = K @ a + k0
        if not l1 or self.gamma is None or float(self.l1_w @ np.abs(v)) <= self.gamma:
            return v
        return self._l1_prox(a, rho, cfg)

    def _l1_prox(self, a: np.ndarray, rho: float, cfg: AdmmConfig) -> np.ndarray:
        # Inner ADMM between the affine set and the weighted l1 ball; sigma scales with rho.
        sigma = cfg.inner_sigma * rho
        alpha = cfg.inner_relax
        K, k0 = self.affine_map(rho + sigma)
        y = self.y if self.y is not None else np.zeros_like(a)
        u = self.u if self.u is not None else np.zeros_like(a)
        tol = cfg.inner_tol * (1.0 + float(np.linalg.norm(a)))
        for _ in range(cfg.inner_max_iter):
            v = K @ ((rho * a + sigma * (y - u)) / (rho + sigma)) + k0
            vr = alpha * v + (1.0 - alpha) * y
            y_new = project_weighted_l1_ball(vr + u, self.gamma, self.l1_w)
            u = u + vr - y_new
            done = (np.linalg.norm(v - y_new) <= tol and np.linalg.norm(y_new - y) <= tol)
            y = y_new
            if done:
                break
        self.y, self.u = y, u
        return v


@dataclass
class AdmmState:
    Phi: FirMatrix
    Psi: FirMatrix
    Lam: FirMatrix
    iteration: int
    primal: list
    dual: list
    objective: list
    lambda_identity: list
    status: str
    polish_residual: float = float("nan")
    factorizations: int = 0
    cache_hits: int = 0
    Xi: Optional[FirMatrix] = None
    Lam_l1: Optional[FirMatrix] = None

    def write_trace_csv(self, path: str | Path) -> None:
        write_trace_csv(self, path)


def write_trace_csv(state: AdmmState, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "primal", "dual", "objective"])
        for i, (p, d, o) in enumerate(zip(state.primal, state.dual, state.objective), 1):
            w.writerow([i, format(p, ".17g"), format(d, ".17g"), format(o, ".17g")])


def _diag_of(M: np.ndarray, name: str) -> np.ndarray:
    M = np.atleast_2d(M)
    if M.shape[0] != M.shape[1] or np.any(M - np.diag(np.diag(M))):
        raise ValueError(f"{name} must be square diagonal for a row-wise L1 bound")
    return np.diag(M)


def _build_cells(problem: OfProblem, policy: NumericPolicy) -> tuple[list[_Cell], list[_Cell]]:
    p = problem.plant
    nx, nu, ny = p.n_x, p.n_u, p.n_y
    T = problem.T
    S = problem.S_Phi.stacked()
    shape = S.shape
    CzTCz = problem.Cz.T @ problem.Cz
    BwBwT = problem.Bw @ problem.Bw.T

    # Column side acts on Phi directly.
    S_Xc, S_Uc = _space(S[:, :nx, :]), _space(S[:, nx:, :])
    Ec = np.hstack([np.eye(nx), np.zeros((nx, ny))])
    # Row side acts on Phi^T: (zI - A^T) X - C2^T U = [I 0].
    St = np.transpose(S, (0, 2, 1))
    S_Xr, S_Ur = _space(St[:, :nx, :]), _space(St[:, nx:, :])
    Er = np.hstack([np.eye(nx), np.zeros((nx, nu))])

    col_quad = problem.h2_side == "col"
    Wc = BwBwT if col_quad else np.eye(nx + ny)
    Wr = CzTCz if not col_quad else np.eye(nx + nu)
    col_cells, _ = partition_by_noise(Wc)
    row_cells, _ = partition_by_noise(Wr)

    if problem.gamma is not None:
        cz = _diag_of(problem.Cz, "[C1 D12]")
        bw = _diag_of(problem.Bw, "[B1; D21]")

    cols_out, rows_out = [], []
    for cells in col_cells:
        sub = build_local_system(p.A, p.B2, S_Xc, S_Uc, cells, E=Ec[:, cells], T=T)
        stacked = np.where(sub.var_part == 0, sub.var_row, nx + sub.var_row)
        idx = np.ravel_multi_index((sub.var_k, stacked, np.asarray(cells)[sub.var_col]), shape)
        H = quadratic_weights(sub, CzTCz, BwBwT) if col_quad else np.zeros((sub.n_var,) * 2)
        group = 0.0
        sens = [c - nx for c in cells if c >= nx and problem.lam[c - nx] > 0]
        if sens:
            if len(cells) != 1:
                raise ValueError(f"sensor column {cells} is correlated with others; "
                                 "group prox needs a singleton cell")
            if H.size and not np.allclose(H, H[0, 0] * np.eye(H.shape[0]), atol=1e-14):
                raise ValueError("sensor group prox needs a scalar quadratic on its column")
            group = float(problem.lam[sens[0]])
        cols_out.append(_Cell("col", sub, idx, H, group))

    for cells in row_cells:
        sub = build_local_system(p.A.T, p.C2.T, S_Xr, S_Ur, cells, E=Er[:, cells], T=T)
        stacked = np.where(sub.var_part == 0, sub.var_row, nx + sub.var_row)
        phi_rows = np.asarray(cells)[sub.var_col]
        idx = np.ravel_multi_index((sub.var_k, phi_rows, stacked), shape)
        H = quadratic_weights(sub, BwBwT, CzTCz) if not col_quad else np.zeros((sub.n_var,) * 2)
        group = 0.0
        acts = [c - nx for c in cells if c >= nx and problem.mu[c - nx] > 0]
        if acts:
            if len(cells) != 1:
                raise ValueError(f"actuator row {cells} is correlated with others; "
                                 "group prox needs a singleton cell")
            if H.size and not np.allclose(H, H[0, 0] * np.eye(H.shape[0]), atol=1e-14):
                raise ValueError("actuator group prox needs a scalar quadratic on its row")
            group = float(problem.mu[acts[0]])
        cell = _Cell("row", sub, idx, H, group)
        if problem.gamma is not None:
            if len(cells) != 1:
                raise ValueError("L1 bound needs uncorrelated rows")
            cell.l1_w = np.abs(cz[cells[0]] * bw[stacked])
            cell.gamma = float(problem.gamma)
        rows_out.append(cell)

    for c in cols_out + rows_out:
        c.prepare(policy)
    return cols_out, rows_out


def _polish(problem: OfProblem, cols: list[_Cell], rows: list[_Cell], Psi: np.ndarray
            ) -> tuple[np.ndarray, float]:
    """Smallest pattern-respecting correction satisfying both affine equations."""
    allowed = np.flatnonzero(problem.S_Phi.stacked().ravel())
    where = -np.ones(Psi.size, dtype=int)
    where[allowed] = np.arange(allowed.size)
    blocks, rhs = [], []
    flat = Psi.ravel()
    for c in cols + rows:
        if c.sub.G.shape[0] == 0:
            continue
        Gc = sp.coo_matrix(c.sub.G)
        blocks.append(sp.csr_matrix((Gc.data, (Gc.row, where[c.idx][Gc.col])),
                                    shape=(Gc.shape[0], allowed.size)))
        rhs.append(c.sub.b - c.sub.G @ flat[c.idx])
    G = sp.vstack(blocks).tocsr()
    r = np.concatenate(rhs)
    delta = lsqr(G, r, atol=1e-15, btol=1e-15, iter_lim=20 * allowed.size)[0]
    out = flat.copy()
    out[allowed] += delta
    return out.reshape(Psi.shape), float(np.linalg.norm(G @ delta - r))


def admm_solve(problem: OfProblem, cfg: AdmmConfig = AdmmConfig(),
               callback: Optional[Callable] = None,
               policy: NumericPolicy = DEFAULT_POLICY,
               warm_start: Optional[AdmmState] = None) -> tuple[SystemResponse, AdmmState]:
    """Run ADMM from ``Phi = Psi = Lam = 0`` (or a previous state); returns the column-side iterate.

    With an L1 bound and ``cfg.l1_split`` the ball gets its own copy ``Xi`` of the
    row-side variable, updated in the same block as ``Phi``, so that every update
    is closed form. Otherwise the row prox runs a short inner ADMM.

    ``callback(k, Phi, Psi, Lam)`` is called after every iteration with copies.
    """
    p = problem.plant
    nx, nu, ny = p.n_x, p.n_u, p.n_y
    shape = (problem.T + 1, nx + nu, nx + ny)
    cols, rows = _build_cells(problem, policy)
    if warm_start is None:
        Phi, Psi, Lam = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    else:
        Phi, Psi, Lam = (X.padded(problem.T).coeffs.copy()
                         for X in (warm_start.Phi, warm_start.Psi, warm_start.Lam))
        if Phi.shape != shape:
            raise ValueError("warm start has incompatible dimensions")
    split = cfg.l1_split and problem.gamma is not None
    Xi, Lam2 = Phi.copy(), np.zeros(shape)
    if warm_start is not None and warm_start.Xi is not None:
        Xi = warm_start.Xi.padded(problem.T).coeffs.copy()
        Lam2 = warm_start.Lam_l1.padded(problem.T).coeffs.copy()
    rho = cfg.rho
    primal, dual, objective, lam_id = [], [], [], []
    status = "maxed"
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None

    def sweep(cells, src, dst, penalty=rho):
        flat_src, flat_dst = src.ravel(), dst.reshape(-1)

        def one(c):
            return c.prox(flat_src[c.idx], penalty, cfg, l1=not split)

        results = list(pool.map(one, cells)) if pool else [one(c) for c in cells]
        for c, v in zip(cells, results):
            flat_dst[c.idx] = v

    try:
        k = 0
        for k in range(1, cfg.max_iter + 1):
            Phi_new = np.zeros(shape)
            sweep(rows, Psi - Lam, Phi_new)
            Psi_new = np.zeros(shape)
            if split:
                Xi_new = np.zeros(shape)
                src, dst = (Psi - Lam2).ravel(), Xi_new.reshape(-1)
                for c in rows:
                    dst[c.idx] = project_weighted_l1_ball(src[c.idx], c.gamma, c.l1_w)
                sweep(cols, 0.5 * (Phi_new + Lam + Xi_new + Lam2), Psi_new, 2.0 * rho)
                Lam2_new = Lam2 + Xi_new - Psi_new
            else:
                sweep(cols, Phi_new + Lam, Psi_new)
            Lam_new = Lam + Phi_new - Psi_new
            gap = np.abs(Lam_new - Lam - (Phi_new - Psi_new))
            r_pri = float(np.linalg.norm(Phi_new - Psi_new))
            if split:
                gap = np.maximum(gap, np.abs(Lam2_new - Lam2 - (Xi_new - Psi_new)))
                r_pri = float(np.hypot(r_pri, np.linalg.norm(Xi_new - Psi_new)))
                Xi, Lam2 = Xi_new, Lam2_new
            lam_id.append(float(np.max(gap, initial=0.0)))
            r_dual = float(np.linalg.norm(Psi_new - Psi))
            Phi, Psi, Lam = Phi_new, Psi_new, Lam_new
            primal.append(r_pri)
            dual.append(r_dual)
            objective.append(_objective_arr(problem, Phi, Psi))
            if callback is not None:
                callback(k, Phi.copy(), Psi.copy(), Lam.copy())
            if r_pri < cfg.eps_pri and r_dual < cfg.eps_dual:
                status = "converged"
                break
            w = cfg.divergence_window
            if k > w and primal[-1] > cfg.divergence_factor * primal[-1 - w] > 0:
                status = "diverged"
                break
    finally:
        if pool:
            pool.shutdown()
    out = Psi
    polish_res = float("nan")
    if cfg.polish and status == "converged":
        cand, polish_res = _polish(problem, cols, rows, Psi)
        out = cand
    resp = SystemResponse.from_phi(FirMatrix(out), nx, nu)
    state = AdmmState(FirMatrix(Phi), FirMatrix(Psi), FirMatrix(Lam), k, primal, dual,
                      objective, lam_id, status, polish_res,
                      sum(c.factorizations for c in cols + rows),
                      sum(c.hits for c in cols + rows),
                      FirMatrix(Xi) if split else None, FirMatrix(Lam2) if split else None)
    return resp, state


def _objective_arr(problem: OfProblem, Phi: np.ndarray, Psi: np.ndarray) -> float:
    """``h_row(Phi) + h_col(Psi)`` under the configured assignment."""
    nx = problem.plant.n_x
    h2_src = Psi if problem.h2_side == "col" else Phi
    val = float(np.sum((problem.Cz @ h2_src @ problem.Bw) ** 2))
    if np.any(problem.lam > 0):
        val += float(problem.lam @ np.sqrt(np.sum(Psi[:, :, nx:] ** 2, axis=(0, 1))))
    if np.any(problem.mu > 0):
        val += float(problem.mu @ np.sqrt(np.sum(Phi[:, nx:, :] ** 2, axis=(0, 2))))
    return val


def check_response(problem: OfProblem, resp: SystemResponse) -> tuple[float, float, bool]:
    """Both affine residuals and exact pattern membership."""
    p = problem.plant
    left, right = of_residual(p.A, p.B2, p.C2, resp)
    return left, right, membership(resp.phi(), problem.S_Phi)


def llqg_solve(plant, S_Phi: ConstraintSpace, cfg: AdmmConfig = AdmmConfig(), **kw):
    return admm_solve(OfProblem(plant, S_Phi), cfg, **kw)


def h2_joint_reg_solve(plant, S_Phi: ConstraintSpace, mu, lam, cfg: AdmmConfig = AdmmConfig(),
                       **kw):
    return admm_solve(OfProblem(plant, S_Phi, mu=mu, lam=lam), cfg, **kw)


def mixed_h2_l1_solve(plant, S_Phi: ConstraintSpace, gamma: Optional[float],
                      cfg: AdmmConfig = AdmmConfig(), **kw):
    return admm_solve(OfProblem(plant, S_Phi, gamma=gamma), cfg, **kw)


@dataclass(frozen=True)
class RegularizationReport:
    baseline_cost: float
    final_cost: Optional[float]
    kept_sensors: tuple[int, ...]
    removed_sensors: tuple[int, ...]
    sensor_norms: tuple[float, ...]
    actuator_norms: tuple[float, ...]
    feasible: bool
    statuses: tuple[str, ...]

    @property
    def degradation(self) -> float:
        if self.final_cost is None:
            return float("nan")
        return self.final_cost / self.baseline_cost - 1.0

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def sensor_regularization(plant, d: Optional[int], T: int, h=None, mu0: float = 1.0,
                          lambda0: float = 1.0, rounds: int = 8, threshold: float = 0.02,
                          eps: float = 1e-3, cfg: AdmmConfig = AdmmConfig(),
                          actuator_prices=None, sensor_prices=None) -> RegularizationReport:
    """Reweighted joint regularization, sensor removal below ``threshold``, resynthesis.

    Round ``r`` uses ``mu = mu0 * price_a * w_a`` and ``lam = lambda0 * price_s * w_s`` with
    reweighting factors ``w`` starting at one.
    """
    pa = np.ones(plant.n_u) if actuator_prices is None else np.asarray(actuator_prices, float)
    ps = np.ones(plant.n_y) if sensor_prices is None else np.asarray(sensor_prices, float)
    S_Phi = of_locality(plant, d, T, h)
    base_resp, base_state = llqg_solve(plant, S_Phi, cfg)
    base_prob = OfProblem(plant, S_Phi)
    baseline = h2_cost(base_prob, base_resp)
    w = RegularizerWeights(np.ones(plant.n_u), np.ones(plant.n_y), eps)
    statuses = [base_state.status]
    resp = base_resp
    for _ in range(rounds):
        resp, st = h2_joint_reg_solve(plant, S_Phi, mu0 * pa * w.mu, lambda0 * ps * w.lam, cfg)
        statuses.append(st.status)
        w = reweight_l1(w, resp, eps)
    s_norms = sensor_col_norms(resp)
    a_norms = actuator_row_norms(resp)
    keep = tuple(int(j) for j in np.flatnonzero(s_norms >= threshold))
    removed = tuple(int(j) for j in np.flatnonzero(s_norms < threshold))
    final = None
    feasible = False
    if keep:
        reduced = plant.with_sensors(keep)
        S_red = of_locality(reduced, d, T, h)
        try:
            r2, st2 = llqg_solve(reduced, S_red, cfg)
            statuses.append(st2.status)
            if st2.status == "converged":
                final = h2_cost(OfProblem(reduced, S_red), r2)
                feasible = True
        except SubproblemInfeasible:
            statuses.append("infeasible")
    return RegularizationReport(baseline, final, keep, removed, tuple(map(float, s_norms)),
                                tuple(map(float, a_norms)), feasible, tuple(statuses))


@dataclass(frozen=True)
class TradeoffPoint:
    gamma: Optional[float]
    h2: float
    l1: float
    status: str


def l1_tradeoff(plant, S_Phi: ConstraintSpace, gammas: Sequence[Optional[float]],
                cfg: AdmmConfig = AdmmConfig(), warm_start: Optional[AdmmState] = None
                ) -> list[TradeoffPoint]:
    """Solve the mixed H2/L1 problem for each bound, warm-starting from the previous point."""
    out, prev = [], warm_start
    for g in gammas:
        prob = OfProblem(plant, S_Phi, gamma=g)
        resp, st = admm_solve(prob, cfg, warm_start=prev)
        prev = st
        out.append(TradeoffPoint(g, h2_cost(prob, resp), l1_cost(prob, resp), st.status))
    return out
