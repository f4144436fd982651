"""Controller implementations, closed-loop simulation and internal-stability checks.

State feedback, with ``v_*`` the optional internal perturbations::

    w_e[k]   = x[k] + v_x[k] - x_r[k]
    u[k]     = sum_t M[t+1] (w_e + v_M)[k-t] + v_u[k]
    x_r[k+1] = sum_t R[t+2] (w_e + v_R)[k-t]
    x[k+1]   = A (x[k] + v_A[k]) + B2 u[k] + w[k]

Output feedback realizes ``z beta = Rt beta + Nt y`` and ``u = Mt beta + L y`` with
``Rt = z(I - zR)``, ``Nt = -zN`` and ``Mt = zM``.
"""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .fir import (FirMatrix, StabilityVerdict, fir_mul, inverse_stability, sf_residual,
                  sf_residual_fir)
from .plant import philox


class SfController:
    """FIFO implementation of a strictly proper state-feedback response ``(R, M)``."""

    def __init__(self, R: FirMatrix, M: FirMatrix):
        if not (R.is_strictly_proper() and M.is_strictly_proper()):
            raise ValueError("R and M must be strictly proper")
        if R.rows != R.cols or M.cols != R.rows:
            raise ValueError("R must be square and M must have as many columns as R")
        self.T = max(R.T, M.T, 1)
        self.R = R.padded(self.T)
        self.M = M.padded(self.T)
        self.n, self.m = R.rows, M.rows
        self.reset()

    def reset(self) -> None:
        z = np.zeros(self.n)
        self.buf_M = deque([z] * self.T, maxlen=self.T)  # (w_e + v_M)[k], [k-1], ...
        self.buf_R = deque([z] * self.T, maxlen=self.T)
        self.x_r = z.copy()

    def step(self, x_meas, v_R=None, v_M=None) -> tuple[np.ndarray, np.ndarray]:
        """Returns ``(u, w_e)`` and advances the reference."""
        w_e = np.asarray(x_meas, dtype=float) - self.x_r
        self.buf_M.appendleft(w_e if v_M is None else w_e + v_M)
        self.buf_R.appendleft(w_e if v_R is None else w_e + v_R)
        u = np.zeros(self.m)
        for tau, we in enumerate(self.buf_M):
            u += self.M.coeffs[tau + 1] @ we
        x_r = np.zeros(self.n)
        for tau in range(self.T - 1):
            x_r += self.R.coeffs[tau + 2] @ self.buf_R[tau]
        self.x_r = x_r
        return u, w_e


def sf_step(ctrl: SfController, x_meas) -> np.ndarray:
    return ctrl.step(x_meas)[0]


class OfController:
    """Realization of an output-feedback response ``(R, M, N, L)``."""

    def __init__(self, R: FirMatrix, M: FirMatrix, N: FirMatrix, L: FirMatrix):
        for name, G in (("R", R), ("M", M), ("N", N)):
            if not G.is_strictly_proper():
                raise ValueError(f"{name} must be strictly proper")
        T = max(G.T for G in (R, M, N, L))
        self.T = max(T, 1)
        R, M, N, L = (G.padded(self.T + 1) for G in (R, M, N, L))
        self.n, self.m, self.q = R.rows, M.rows, N.cols
        # Rt = z(I - zR) = -(R[2] + R[3] z^-1 + ...), assuming R[1] = I.
        self.Rt = -R.coeffs[2:]
        self.Nt = -N.coeffs[1:]
        self.Mt = M.coeffs[1:]
        self.L = L.coeffs
        self.reset()

    def reset(self) -> None:
        K = self.T + 1
        self.beta_hist = deque([np.zeros(self.n)] * K, maxlen=K)
        self.y_hist = deque([np.zeros(self.q)] * K, maxlen=K)
        self.beta = np.zeros(self.n)

    def step(self, y_meas, v_beta=None) -> tuple[np.ndarray, np.ndarray]:
        """Returns ``(u, beta)`` for the current step and advances ``beta``."""
        y = np.asarray(y_meas, dtype=float)
        self.beta_hist.appendleft(self.beta)
        self.y_hist.appendleft(y)
        u = np.zeros(self.m)
        nxt = np.zeros(self.n)
        for k, b in enumerate(self.beta_hist):
            if k < len(self.Mt):
                u += self.Mt[k] @ b
            if k < len(self.Rt):
                nxt += self.Rt[k] @ b
        for k, yy in enumerate(self.y_hist):
            u += self.L[k] @ yy
            if k < len(self.Nt):
                nxt += self.Nt[k] @ yy
        beta = self.beta
        self.beta = nxt if v_beta is None else nxt + v_beta
        return u, beta


def of_step(ctrl: OfController, y_meas) -> np.ndarray:
    return ctrl.step(y_meas)[0]


CHANNELS = ("w", "v_x", "v_u", "v_R", "v_M", "v_A", "v_y", "v_beta")


@dataclass
class SimulationTrace:
    x: np.ndarray
    u: np.ndarray
    y: Optional[np.ndarray]
    internal: np.ndarray  # w_e for state feedback, beta for output feedback
    injections: dict = field(default_factory=dict)
    cost: Optional[np.ndarray] = None

    @property
    def horizon(self) -> int:
        return self.u.shape[0]

    def to_csv(self) -> str:
        cols = {"x": self.x[:-1], "u": self.u, "e": self.internal}
        if self.y is not None:
            cols["y"] = self.y
        header = ["k"] + [f"{name}{i}" for name, a in cols.items() for i in range(a.shape[1])]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for k in range(self.horizon):
            w.writerow([k] + [format(v, ".17g") for a in cols.values() for v in a[k]])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def simulate(plant, controller, injections: Optional[dict] = None, horizon: int = 100,
             seed: Optional[int] = None, awgn: bool = False, x0=None,
             diverge_at: float = math.inf) -> SimulationTrace:
    """Drive the plant with the controller (``None`` means ``u = 0``).

    ``injections`` maps channel names to arrays of shape ``(horizon, dim)``; missing
    rows are zero. With ``awgn`` a seeded standard normal ``omega`` enters as
    ``w = B1 omega`` and, for output feedback, ``D21 omega`` on the measurements.
    The run stops early once ``||x||`` exceeds ``diverge_at``.
    """
    A, B2, C2 = plant.A, plant.B2, plant.C2
    n, m, q = A.shape[0], B2.shape[1], C2.shape[0]
    N = int(horizon)
    inj = {k: np.asarray(v, dtype=float) for k, v in (injections or {}).items()}
    for k in inj:
        if k not in CHANNELS:
            raise ValueError(f"unknown injection channel '{k}'")

    def at(name, k, dim):
        a = inj.get(name)
        if a is None or k >= a.shape[0]:
            return None
        return a[k].reshape(dim)

    if awgn:
        if seed is None:
            raise ValueError("stochastic simulation needs an explicit seed")
        omega = philox(seed).standard_normal((N, plant.B1.shape[1]))
    of = isinstance(controller, OfController)
    x = np.zeros((N + 1, n))
    if x0 is not None:
        x[0] = x0
    u = np.zeros((N, m))
    y = np.zeros((N, q)) if of else None
    internal = np.zeros((N, n))
    cost = np.zeros(N)
    Cz = np.hstack([plant.C1, plant.D12])
    if controller is not None:
        controller.reset()
    last = N
    for k in range(N):
        s = x[k]
        if of:
            yk = C2 @ s
            vy = at("v_y", k, q)
            if vy is not None:
                yk = yk + vy
            if awgn:
                yk = yk + plant.D21 @ omega[k]
            y[k] = yk
            uc, internal[k] = controller.step(yk, at("v_beta", k, n))
        elif controller is not None:
            vx = at("v_x", k, n)
            xm = s if vx is None else s + vx
            uc, internal[k] = controller.step(xm, at("v_R", k, n), at("v_M", k, n))
        else:
            uc = np.zeros(m)
        vu = at("v_u", k, m)
        u[k] = uc if vu is None else uc + vu
        vA = at("v_A", k, n)
        nxt = A @ (s if vA is None else s + vA) + B2 @ u[k]
        w = at("w", k, n)
        if w is not None:
            nxt = nxt + w
        if awgn:
            nxt = nxt + plant.B1 @ omega[k]
        x[k + 1] = nxt
        cost[k] = float(np.sum((Cz @ np.concatenate([s, u[k]])) ** 2))
        if not np.isfinite(nxt).all() or np.linalg.norm(nxt) > diverge_at:
            last = k + 1
            break
    if last < N:
        x, u, internal, cost = x[:last + 1], u[:last], internal[:last], cost[:last]
        y = y[:last] if y is not None else None
    return SimulationTrace(x, u, y, internal, inj, cost)


@dataclass(frozen=True)
class MapCheck:
    analytic: FirMatrix
    simulated: FirMatrix
    deviation: float


@dataclass(frozen=True)
class PerturbationTable:
    maps: dict

    @property
    def max_deviation(self) -> float:
        return max(c.deviation for c in self.maps.values())

    def __getitem__(self, key) -> MapCheck:
        return self.maps[key]


def analytic_maps(A, B2, R: FirMatrix, M: FirMatrix) -> dict:
    """Closed-form FIR maps from each perturbation to ``(w_e, x, u)``."""
    A, B2 = np.atleast_2d(A), np.atleast_2d(B2)
    n, m = B2.shape
    I_n, I_m = FirMatrix.identity(n), FirMatrix.identity(m)
    zinv = FirMatrix.delay(n, 1)
    Rt = R.advance() - I_n           # zR - I = AR + B2 M
    Mt = M.advance()                 # zM
    RA, MA = R @ A, M @ A
    IzA = I_n - zinv @ A             # I - z^-1 A
    RtRA = Rt - RA                   # R~ - R A
    MtMA = Mt - MA                   # M~ - M A
    RB2, IMB2 = R @ B2, I_m + M @ B2
    return {
        ("w", "w_e"): zinv, ("w", "x"): R, ("w", "u"): M,
        ("v_x", "w_e"): IzA, ("v_x", "x"): RtRA, ("v_x", "u"): MtMA,
        ("v_u", "w_e"): zinv @ B2, ("v_u", "x"): RB2, ("v_u", "u"): IMB2,
        ("v_R", "w_e"): -fir_mul(IzA, Rt), ("v_R", "x"): -fir_mul(RtRA, Rt),
        ("v_R", "u"): -fir_mul(MtMA, Rt),
        ("v_M", "w_e"): fir_mul(zinv @ B2, Mt), ("v_M", "x"): fir_mul(RB2, Mt),
        ("v_M", "u"): fir_mul(IMB2, Mt),
        ("v_A", "w_e"): zinv @ A, ("v_A", "x"): RA, ("v_A", "u"): MA,
    }


def perturbation_maps(plant, R: FirMatrix, M: FirMatrix, tol: float = 1e-9
                      ) -> PerturbationTable:
    """All 18 maps, built analytically and by unit-impulse simulation on each channel."""
    A, B2 = plant.A, plant.B2
    res = sf_residual(A, B2, R, M)
    if res > tol:
        raise ValueError(f"(R, M) is not achievable for this plant (residual {res:.3e})")
    n, m = B2.shape
    ana = analytic_maps(A, B2, R, M)
    horizon = max(G.T for G in ana.values()) + 3
    ctrl = SfController(R, M)
    sims = {}
    for ch, dim in (("w", n), ("v_x", n), ("v_u", m), ("v_R", n), ("v_M", n), ("v_A", n)):
        cols = {"w_e": [], "x": [], "u": []}
        for j in range(dim):
            imp = np.zeros((horizon, dim))
            imp[0, j] = 1.0
            tr = simulate(plant, ctrl, {ch: imp}, horizon)
            cols["w_e"].append(tr.internal)
            cols["x"].append(tr.x[:horizon])
            cols["u"].append(tr.u)
        for out, traces in cols.items():
            sims[(ch, out)] = FirMatrix(np.stack(traces, axis=2))
    table = {}
    for key, G in ana.items():
        S = sims[key]
        K = max(G.T, S.T)
        dev = float(np.max(np.abs(G.padded(K).coeffs - S.padded(K).coeffs)))
        table[key] = MapCheck(G, S, dev)
    return PerturbationTable(table)


def compute_delta_rm(A_true, B2_true, R: FirMatrix, M: FirMatrix, tol: float = 1e-9
                     ) -> FirMatrix:
    """``Delta_RM = (zI - A) R - B2 M - I`` for the true plant.

    The lag-zero term is ``R[1] - I`` whatever the plant; round-off there is cleared
    so that the result is strictly proper.
    """
    D = sf_residual_fir(A_true, B2_true, R, M)
    lag0 = float(np.max(np.abs(D.coeffs[0]), initial=0.0))
    if lag0 > tol:
        raise ValueError(f"R[1] differs from the identity by {lag0:.3e}")
    c = D.coeffs.copy()
    c[0] = 0.0
    return FirMatrix(c)


@dataclass(frozen=True)
class RobustVerdict:
    stable: bool
    spectral_radius: float
    margin: float
    inconclusive: bool
    simulated: Optional[bool] = None  # True bounded, False diverged, None not run
    steps: int = 0
    peak: float = float("nan")


def simulation_steps(margin: float, minimum: int = 500) -> int:
    """Long enough for growth at rate ``1 + margin`` to clear a 1e6 threshold comfortably."""
    return max(minimum, int(math.ceil(30.0 / math.log1p(margin))))


def robust_stability(delta: FirMatrix, margin: float = 1e-3, closed_loop=None,
                     threshold: float = 1e6, steps: Optional[int] = None,
                     seed: int = 0) -> RobustVerdict:
    """Stability of ``(I + delta)^-1``; optionally confirmed by simulating the true loop.

    ``closed_loop`` is ``(true_plant, R, M)``. The simulation starts from a seeded
    random disturbance impulse and reports whether ``||x||`` stays below ``threshold``.
    """
    v: StabilityVerdict = inverse_stability(delta, margin)
    inconclusive = abs(v.spectral_radius - 1.0) < margin
    if closed_loop is None:
        return RobustVerdict(v.stable, v.spectral_radius, margin, inconclusive)
    plant, R, M = closed_loop
    steps = simulation_steps(margin) if steps is None else steps
    n = plant.A.shape[0]
    w = np.zeros((1, n))
    w[0] = philox(seed).standard_normal(n)
    tr = simulate(plant, SfController(R, M), {"w": w}, steps, diverge_at=threshold)
    peak = float(np.max(np.linalg.norm(tr.x, axis=1)))
    bounded = bool(peak <= threshold and np.isfinite(peak))
    if v.stable and not bounded:
        raise RuntimeError("stable verdict contradicted by simulation "
                           f"(peak {peak:.3e} after {tr.horizon} steps)")
    return RobustVerdict(v.stable, v.spectral_radius, margin, inconclusive, bounded, steps, peak)
