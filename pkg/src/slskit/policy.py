"""Shared numeric tolerances so solvers and tests agree on what 'zero' means."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class NumericPolicy:
    abs_tol: float = 1e-9
    rel_tol: float = 1e-7
    # Least-squares feasibility: residual <= feas_rel * (1 + ||rhs||).
    feas_rel: float = 1e-8
    dare_tol: float = 1e-10
    dare_max_iter: int = 100_000

    def close(self, a: float, b: float) -> bool:
        return abs(a - b) <= self.abs_tol + self.rel_tol * max(abs(a), abs(b))

    def feasible(self, residual: float, rhs_norm: float) -> bool:
        return residual <= self.feas_rel * (1.0 + rhs_norm)


DEFAULT_POLICY = NumericPolicy()
