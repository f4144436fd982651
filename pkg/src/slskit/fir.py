"""FIR transfer matrices ``G(z) = sum_k G[k] z^-k``, closed-loop residuals and baselines."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .policy import DEFAULT_POLICY, NumericPolicy


@dataclass(frozen=True, eq=False)
class FirMatrix:
    """Coefficients stored as an array of shape ``(T + 1, rows, cols)``."""

    coeffs: np.ndarray

    # Let ``ndarray @ FirMatrix`` dispatch to ``__rmatmul__``.
    __array_ufunc__ = None

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.float64, copy=True)
        if c.ndim != 3 or c.shape[0] < 1:
            raise ValueError(f"coeffs must have shape (T+1, rows, cols), got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def T(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def rows(self) -> int:
        return self.coeffs.shape[1]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.coeffs.shape[1], self.coeffs.shape[2]

    def __getitem__(self, k: int) -> np.ndarray:
        if k < 0:
            raise IndexError("negative spectral index")
        if k > self.T:
            return np.zeros(self.shape)
        return self.coeffs[k]

    @classmethod
    def zeros(cls, rows: int, cols: int, T: int = 0) -> "FirMatrix":
        return cls(np.zeros((T + 1, rows, cols)))

    @classmethod
    def constant(cls, G0) -> "FirMatrix":
        return cls(np.asarray(G0, dtype=float)[None])

    @classmethod
    def identity(cls, n: int) -> "FirMatrix":
        return cls(np.eye(n)[None])

    @classmethod
    def delay(cls, n: int, k: int = 1) -> "FirMatrix":
        """``z^-k I``."""
        c = np.zeros((k + 1, n, n))
        c[k] = np.eye(n)
        return cls(c)

    @classmethod
    def from_list(cls, coeffs: Sequence) -> "FirMatrix":
        return cls(np.stack([np.atleast_2d(np.asarray(c, dtype=float)) for c in coeffs]))

    def is_strictly_proper(self) -> bool:
        return not np.any(self.coeffs[0])

    def trimmed(self) -> "FirMatrix":
        nz = np.flatnonzero(np.any(self.coeffs.reshape(self.T + 1, -1), axis=1))
        last = int(nz[-1]) if nz.size else 0
        return FirMatrix(self.coeffs[:last + 1])

    def padded(self, T: int) -> "FirMatrix":
        if T < self.T:
            raise ValueError("padding cannot shorten; use truncated()")
        c = np.zeros((T + 1,) + self.shape)
        c[:self.T + 1] = self.coeffs
        return FirMatrix(c)

    def truncated(self, T: int) -> "FirMatrix":
        """Explicitly drop coefficients beyond ``T``."""
        if T >= self.T:
            return self.padded(T)
        return FirMatrix(self.coeffs[:T + 1])

    def __add__(self, other: "FirMatrix") -> "FirMatrix":
        return fir_add(self, other)

    def __sub__(self, other: "FirMatrix") -> "FirMatrix":
        return fir_add(self, -other)

    def __neg__(self) -> "FirMatrix":
        return FirMatrix(-self.coeffs)

    def __mul__(self, c: float) -> "FirMatrix":
        return FirMatrix(self.coeffs * c)

    __rmul__ = __mul__

    def __matmul__(self, other) -> "FirMatrix":
        if isinstance(other, FirMatrix):
            return fir_mul(self, other)
        M = np.atleast_2d(np.asarray(other, dtype=float))
        if M.shape[0] != self.cols:
            raise ValueError(f"cannot multiply {self.shape} by {M.shape}")
        return FirMatrix(self.coeffs @ M)

    def __rmatmul__(self, other) -> "FirMatrix":
        M = np.atleast_2d(np.asarray(other, dtype=float))
        if M.shape[1] != self.rows:
            raise ValueError(f"cannot multiply {M.shape} by {self.shape}")
        return FirMatrix(np.einsum("ij,kjl->kil", M, self.coeffs))

    def advance(self) -> "FirMatrix":
        """Multiply by ``z``; only defined for strictly proper matrices."""
        if not self.is_strictly_proper():
            raise ValueError("z * G is not causal unless G[0] == 0")
        if self.T == 0:
            return FirMatrix.zeros(*self.shape)
        return FirMatrix(self.coeffs[1:])

    def delayed(self, k: int = 1) -> "FirMatrix":
        c = np.zeros((self.T + 1 + k,) + self.shape)
        c[k:] = self.coeffs
        return FirMatrix(c)

    def rows_of(self, idx) -> "FirMatrix":
        return FirMatrix(self.coeffs[:, idx, :])

    def cols_of(self, idx) -> "FirMatrix":
        return FirMatrix(self.coeffs[:, :, idx])

    def equals(self, other: "FirMatrix", tol: float = 0.0) -> bool:
        if self.shape != other.shape:
            return False
        K = max(self.T, other.T)
        return bool(np.max(np.abs(self.padded(K).coeffs - other.padded(K).coeffs), initial=0.0)
                    <= tol)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs), initial=0.0))

    def to_json(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "T": self.T,
                "coeffs": [c.ravel().tolist() for c in self.coeffs]}

    @classmethod
    def from_json(cls, obj: dict) -> "FirMatrix":
        for key in ("rows", "cols", "T", "coeffs"):
            if key not in obj:
                raise ValueError(f"FIR matrix is missing field '{key}'")
        rows, cols, T = int(obj["rows"]), int(obj["cols"]), int(obj["T"])
        c = np.asarray(obj["coeffs"], dtype=float)
        if c.shape != (T + 1, rows * cols):
            raise ValueError(f"coeffs shape {c.shape} does not match T={T}, {rows}x{cols}")
        return cls(c.reshape(T + 1, rows, cols))


def _common(G: FirMatrix, H: FirMatrix) -> tuple[FirMatrix, FirMatrix]:
    K = max(G.T, H.T)
    return G.padded(K), H.padded(K)


def fir_add(G: FirMatrix, H: FirMatrix) -> FirMatrix:
    if G.shape != H.shape:
        raise ValueError(f"cannot add {G.shape} and {H.shape}")
    G, H = _common(G, H)
    return FirMatrix(G.coeffs + H.coeffs)


def fir_mul(G: FirMatrix, H: FirMatrix) -> FirMatrix:
    """Polynomial product in ``z^-1``; the horizon is ``T_G + T_H``."""
    if G.cols != H.rows:
        raise ValueError(f"cannot multiply {G.shape} by {H.shape}")
    out = np.zeros((G.T + H.T + 1, G.rows, H.cols))
    for i in range(G.T + 1):
        out[i:i + H.T + 1] += np.einsum("ij,kjl->kil", G.coeffs[i], H.coeffs)
    return FirMatrix(out)


def fir_transpose(G: FirMatrix) -> FirMatrix:
    return FirMatrix(np.transpose(G.coeffs, (0, 2, 1)))


def fir_apply(G: FirMatrix, u) -> np.ndarray:
    """Causal convolution ``y[t] = sum_k G[k] u[t-k]`` over a finite trace ``u`` of shape (N, cols)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] != G.cols:
        raise ValueError(f"input has {u.shape[1]} channels, expected {G.cols}")
    N = u.shape[0]
    y = np.zeros((N, G.rows))
    for k in range(min(G.T + 1, N)):
        y[k:] += u[:N - k] @ G.coeffs[k].T
    return y


def h2_norm_sq(G: FirMatrix) -> float:
    return float(np.sum(G.coeffs ** 2))


def el1_norm(G: FirMatrix) -> float:
    return float(np.sum(np.abs(G.coeffs)))


def l1_induced_norm(G: FirMatrix) -> float:
    """Worst-case l_inf to l_inf gain: max row sum of absolute coefficients."""
    return float(np.max(np.sum(np.abs(G.coeffs), axis=(0, 2)), initial=0.0))


def zI_minus(A, G: FirMatrix) -> FirMatrix:
    """``(zI - A) G`` for strictly proper ``G``."""
    return G.advance().padded(G.T) - (np.asarray(A) @ G)


def times_zI_minus(G: FirMatrix, A) -> FirMatrix:
    """``G (zI - A)`` for strictly proper ``G``."""
    return G.advance().padded(G.T) - (G @ np.asarray(A))


@dataclass(frozen=True)
class SystemResponse:
    """Closed-loop maps; ``N`` and ``L`` are absent for state feedback."""

    R: FirMatrix
    M: FirMatrix
    N: Optional[FirMatrix] = None
    L: Optional[FirMatrix] = None

    @property
    def T(self) -> int:
        return max(G.T for G in (self.R, self.M, self.N, self.L) if G is not None)

    def phi(self) -> FirMatrix:
        """Stacked ``[[R, N], [M, L]]`` at a common horizon."""
        if self.N is None or self.L is None:
            raise ValueError("state-feedback response has no N, L blocks")
        K = self.T
        R, M, N, L = (G.padded(K).coeffs for G in (self.R, self.M, self.N, self.L))
        return FirMatrix(np.concatenate([np.concatenate([R, N], axis=2),
                                         np.concatenate([M, L], axis=2)], axis=1))

    @classmethod
    def from_phi(cls, Phi: FirMatrix, nx: int, nu: int) -> "SystemResponse":
        c = Phi.coeffs
        return cls(FirMatrix(c[:, :nx, :nx]), FirMatrix(c[:, nx:nx + nu, :nx]),
                   FirMatrix(c[:, :nx, nx:]), FirMatrix(c[:, nx:nx + nu, nx:]))

    def to_json(self) -> dict:
        out = {"R": self.R.to_json(), "M": self.M.to_json()}
        if self.N is not None:
            out["N"] = self.N.to_json()
            out["L"] = self.L.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "SystemResponse":
        for key in ("R", "M"):
            if key not in obj:
                raise ValueError(f"system response is missing field '{key}'")
        N = FirMatrix.from_json(obj["N"]) if "N" in obj else None
        L = FirMatrix.from_json(obj["L"]) if "L" in obj else None
        return cls(FirMatrix.from_json(obj["R"]), FirMatrix.from_json(obj["M"]), N, L)


def _check_dims(A, B2, R: FirMatrix, M: FirMatrix) -> None:
    n = A.shape[0]
    if A.shape != (n, n) or B2.shape[0] != n:
        raise ValueError("A must be square and B2 must have as many rows as A")
    if R.shape != (n, n):
        raise ValueError(f"R must be {n}x{n}, got {R.shape}")
    if M.shape != (B2.shape[1], n):
        raise ValueError(f"M must be {B2.shape[1]}x{n}, got {M.shape}")


def sf_residual_fir(A, B2, R: FirMatrix, M: FirMatrix) -> FirMatrix:
    """``(zI - A) R - B2 M - I`` as an FIR matrix."""
    A, B2 = np.atleast_2d(A), np.atleast_2d(B2)
    _check_dims(A, B2, R, M)
    if not (R.is_strictly_proper() and M.is_strictly_proper()):
        raise ValueError("R and M must be strictly proper")
    K = max(R.T, M.T)
    R, M = R.padded(K), M.padded(K)
    return zI_minus(A, R) - (B2 @ M) - FirMatrix.identity(A.shape[0])


def sf_residual(A, B2, R: FirMatrix, M: FirMatrix) -> float:
    return sf_residual_fir(A, B2, R, M).max_abs()


def of_residual(A, B2, C2, resp: SystemResponse) -> tuple[float, float]:
    """Max-abs residuals of ``[zI-A, -B2] Phi = [I 0]`` and ``Phi [zI-A; -C2] = [I; 0]``."""
    A, B2, C2 = (np.atleast_2d(X) for X in (A, B2, C2))
    n = A.shape[0]
    if resp.N is None or resp.L is None:
        raise ValueError("output-feedback residual needs N and L")
    K = resp.T
    R, M, N, L = (G.padded(K) for G in (resp.R, resp.M, resp.N, resp.L))
    if not all(G.is_strictly_proper() for G in (R, M, N)):
        raise ValueError("R, M, N must be strictly proper")
    I = FirMatrix.identity(n)
    left = max((zI_minus(A, R) - B2 @ M - I).max_abs(),
               (zI_minus(A, N) - B2 @ L).max_abs())
    right = max((times_zI_minus(R, A) - N @ C2 - I).max_abs(),
                (times_zI_minus(M, A) - L @ C2).max_abs())
    return left, right


def compose_of_from_sf_est(R1: FirMatrix, M1: FirMatrix, R2: FirMatrix, N2: FirMatrix,
                           A) -> SystemResponse:
    """Combine a state-feedback pair ``(R1, M1)`` with an estimation pair ``(R2, N2)``.

    ``R = R1 + R2 - R1 (zI-A) R2``, ``M = M1 - M1 (zI-A) R2``,
    ``N = N2 - R1 (zI-A) N2``, ``L = -M1 (zI-A) N2``.
    """
    A = np.atleast_2d(A)
    for G in (R1, M1, R2, N2):
        if not G.is_strictly_proper():
            raise ValueError("all inputs must be strictly proper")
    if R1.shape != R2.shape or R1.shape != A.shape:
        raise ValueError("R1, R2 and A must share dimensions")
    ZR2 = zI_minus(A, R2)
    ZN2 = zI_minus(A, N2)
    R = R1 + R2 - fir_mul(R1, ZR2)
    M = M1 - fir_mul(M1, ZR2)
    N = N2 - fir_mul(R1, ZN2)
    L = -fir_mul(M1, ZN2)
    K = max(G.T for G in (R, M, N, L))
    return SystemResponse(R.padded(K), M.padded(K), N.padded(K), L.padded(K))


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    spectral_radius: float
    margin: float

    @property
    def inconclusive(self) -> bool:
        return abs(self.spectral_radius - 1.0) < self.margin


def inverse_stability(D: FirMatrix, margin: float = 1e-3) -> StabilityVerdict:
    """Stability of ``(I + D(z))^-1`` for strictly proper square ``D``.

    The roots of ``det(z^T I + D[1] z^(T-1) + ... + D[T])`` are the eigenvalues of the
    block companion matrix; the inverse is stable iff they all lie inside ``1 - margin``.
    """
    if D.rows != D.cols:
        raise ValueError("D must be square")
    if not D.is_strictly_proper():
        raise ValueError("D must be strictly proper")
    D = D.trimmed()
    n, T = D.rows, D.T
    if T == 0:
        return StabilityVerdict(True, 0.0, margin)
    C = np.zeros((n * T, n * T))
    C[:n, :] = -np.concatenate([D.coeffs[k] for k in range(1, T + 1)], axis=1)
    if T > 1:
        C[n:, :-n] = np.eye(n * (T - 1))
    lam = np.linalg.eigvals(C)
    if not np.all(np.isfinite(lam)):
        raise np.linalg.LinAlgError("eigenvalue computation returned non-finite values")
    rho = float(np.max(np.abs(lam)))
    return StabilityVerdict(rho < 1.0 - margin, rho, margin)


@dataclass(frozen=True)
class DareSolution:
    P: np.ndarray
    K: np.ndarray
    cost_per_unit_noise: float
    iterations: int
    residual: float


def _riccati_map(A, B, Q, Rw, P):
    BtP = B.T @ P
    G = Rw + BtP @ B
    K = np.linalg.solve(G, BtP @ A)
    Pn = Q + A.T @ P @ A - A.T @ P @ B @ K
    return 0.5 * (Pn + Pn.T), K


def dare_solve(A, B, Q, Rw, damping: float = 1.0,
               policy: NumericPolicy = DEFAULT_POLICY) -> DareSolution:
    """Damped fixed-point iteration ``P <- (1-a) P + a F(P)`` started at ``P = Q``."""
    A, B, Q, Rw = (np.atleast_2d(np.asarray(X, dtype=float)) for X in (A, B, Q, Rw))
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    P = Q.copy()
    res = np.inf
    for it in range(1, policy.dare_max_iter + 1):
        Pn, K = _riccati_map(A, B, Q, Rw, P)
        res = float(np.linalg.norm(Pn - P))
        if not np.isfinite(res):
            break
        if res <= policy.dare_tol:
            P = Pn
            break
        P = (1 - damping) * P + damping * Pn
    else:
        raise RuntimeError(f"Riccati iteration did not converge: residual {res:.3e} "
                           f"after {policy.dare_max_iter} iterations")
    if not np.isfinite(res):
        raise RuntimeError("Riccati iteration diverged")
    Pn, K = _riccati_map(A, B, Q, Rw, P)
    res = float(np.linalg.norm(Pn - P))
    rho = float(np.max(np.abs(np.linalg.eigvals(A - B @ K))))
    if rho >= 1.0:
        raise RuntimeError(f"Riccati fixed point is not stabilizing (closed-loop radius {rho:.6f})")
    return DareSolution(P, K, float(np.trace(P)), it, res)


def lqr_h2_cost(A, B1, B2, Q, Rw, policy: NumericPolicy = DEFAULT_POLICY) -> float:
    """Squared H2 cost of the centralized LQR loop driven by unit white noise through ``B1``."""
    sol = dare_solve(A, B2, Q, Rw, policy=policy)
    B1 = np.atleast_2d(B1)
    return float(np.trace(B1.T @ sol.P @ B1))


def write_impulse_csv(G: FirMatrix, path: str | Path) -> None:
    """One row per time step with columns ``g_i_j``."""
    header = ["k"] + [f"g_{i}_{j}" for i in range(G.rows) for j in range(G.cols)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(G.T + 1):
            w.writerow([k] + [format(v, ".17g") for v in G.coeffs[k].ravel()])
