"""Binary sparsity patterns, graph distances and spatio-temporal constraint spaces.

A pattern ``P`` has ``P[i, j] = True`` when entry ``(i, j)`` may be nonzero.
Addition is elementwise OR and multiplication is the OR/AND boolean product.
For a square state pattern the edge ``k -> j`` exists when ``A[j, k] != 0``,
so ``dist(k -> j)`` is the smallest ``p`` with ``(Abar^p)[j, k]`` set, where
``Abar = Sp{I} + Sp{A}``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

INF = math.inf


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=bool, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparsityPattern:
    """Immutable boolean matrix of structurally allowed nonzeros."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ValueError(f"pattern must be 2-D, got shape {b.shape}")
        object.__setattr__(self, "bits", _frozen(b))

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "SparsityPattern":
        return cls(np.zeros((rows, cols), dtype=bool))

    @classmethod
    def ones(cls, rows: int, cols: int) -> "SparsityPattern":
        return cls(np.ones((rows, cols), dtype=bool))

    @classmethod
    def identity(cls, n: int) -> "SparsityPattern":
        return cls(np.eye(n, dtype=bool))

    def __add__(self, other: "SparsityPattern") -> "SparsityPattern":
        return pattern_add(self, other)

    def __and__(self, other: "SparsityPattern") -> "SparsityPattern":
        _same_shape(self, other)
        return SparsityPattern(self.bits & other.bits)

    def __matmul__(self, other: "SparsityPattern") -> "SparsityPattern":
        return pattern_mul(self, other)

    def __le__(self, other: "SparsityPattern") -> bool:
        return pattern_subset(self, other)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparsityPattern):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash((self.shape, np.packbits(self.bits).tobytes()))

    def __repr__(self) -> str:
        return f"SparsityPattern({self.rows}x{self.cols}, nnz={int(self.bits.sum())})"

    @property
    def T(self) -> "SparsityPattern":
        return SparsityPattern(self.bits.T)

    def nnz(self) -> int:
        return int(self.bits.sum())

    def to_json(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "rle": [_rle_encode(r) for r in self.bits]}

    @classmethod
    def from_json(cls, obj: dict) -> "SparsityPattern":
        rows, cols = int(obj["rows"]), int(obj["cols"])
        rle = obj["rle"]
        if len(rle) != rows:
            raise ValueError(f"expected {rows} encoded rows, got {len(rle)}")
        bits = np.zeros((rows, cols), dtype=bool)
        for i, runs in enumerate(rle):
            bits[i] = _rle_decode(runs, cols)
        return cls(bits)


def _rle_encode(row: np.ndarray) -> list[int]:
    # Alternating run lengths, starting with a (possibly empty) run of zeros.
    runs, cur, n = [], False, 0
    for b in row:
        if bool(b) == cur:
            n += 1
        else:
            runs.append(n)
            cur, n = bool(b), 1
    runs.append(n)
    return runs


def _rle_decode(runs: Sequence[int], cols: int) -> np.ndarray:
    if sum(runs) != cols:
        raise ValueError(f"run lengths sum to {sum(runs)}, expected {cols}")
    out = np.zeros(cols, dtype=bool)
    pos, val = 0, False
    for r in runs:
        if r < 0:
            raise ValueError("negative run length")
        out[pos:pos + r] = val
        pos += r
        val = not val
    return out


def _same_shape(p: SparsityPattern, q: SparsityPattern) -> None:
    if p.shape != q.shape:
        raise ValueError(f"pattern shapes differ: {p.shape} vs {q.shape}")


def support(M) -> SparsityPattern:
    """Exact support: bit set iff the entry is nonzero."""
    return SparsityPattern(np.asarray(M) != 0)


def support_tol(M, tol: float) -> SparsityPattern:
    """Support with a magnitude threshold, for numerically computed matrices."""
    return SparsityPattern(np.abs(np.asarray(M)) > tol)


def pattern_add(p: SparsityPattern, q: SparsityPattern) -> SparsityPattern:
    _same_shape(p, q)
    return SparsityPattern(p.bits | q.bits)


def pattern_mul(p: SparsityPattern, q: SparsityPattern) -> SparsityPattern:
    if p.cols != q.rows:
        raise ValueError(f"cannot multiply {p.shape} by {q.shape}")
    prod = p.bits.astype(np.int64) @ q.bits.astype(np.int64)
    return SparsityPattern(prod > 0)


def pattern_pow(p: SparsityPattern, e: int) -> SparsityPattern:
    """Boolean matrix power by repeated squaring; ``p**0`` is the identity."""
    if p.rows != p.cols:
        raise ValueError("pattern power needs a square pattern")
    if e < 0:
        raise ValueError("exponent must be nonnegative")
    result = SparsityPattern.identity(p.rows)
    base = p
    while e:
        if e & 1:
            result = pattern_mul(result, base)
        e >>= 1
        if e:
            base = pattern_mul(base, base)
    return result


def pattern_subset(p: SparsityPattern, q: SparsityPattern) -> bool:
    """True when ``p`` is contained in ``q`` (``p + q == q``)."""
    _same_shape(p, q)
    return not bool(np.any(p.bits & ~q.bits))


def augmented(A_pattern) -> SparsityPattern:
    """``Abar = Sp{I} + Sp{A}``."""
    P = _as_pattern(A_pattern)
    if P.rows != P.cols:
        raise ValueError("state pattern must be square")
    return SparsityPattern(P.bits | np.eye(P.rows, dtype=bool))


def _as_pattern(A) -> SparsityPattern:
    return A if isinstance(A, SparsityPattern) else support(A)


def _successors(P: SparsityPattern) -> list[np.ndarray]:
    # Edge k -> j whenever P[j, k] is set.
    return [np.flatnonzero(P.bits[:, k]) for k in range(P.cols)]


def _bfs(adj: list[np.ndarray], start: int, limit: float = INF) -> dict[int, int]:
    dist = {start: 0}
    q = deque([start])
    while q:
        v = q.popleft()
        if dist[v] >= limit:
            continue
        for w in adj[v]:
            w = int(w)
            if w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    return dist


def distance(A_pattern, src: int, dst: int) -> float:
    """Hop count of the shortest path ``src -> dst``; ``inf`` if unreachable."""
    P = _as_pattern(A_pattern)
    n = P.rows
    if P.rows != P.cols:
        raise ValueError("state pattern must be square")
    for idx in (src, dst):
        if not 0 <= idx < n:
            raise IndexError(f"node index {idx} out of range for {n} nodes")
    return _bfs(_successors(P), src).get(dst, INF)


def distance_matrix(A_pattern) -> np.ndarray:
    """``D[i, j] = dist(j -> i)``, so ``D <= d`` is exactly ``Abar^d``."""
    P = _as_pattern(A_pattern)
    if P.rows != P.cols:
        raise ValueError("state pattern must be square")
    # csgraph edges go row -> column; an edge k -> j lives at P.bits[j, k].
    G = csr_matrix(P.bits.T.astype(np.float64))
    D = shortest_path(G, directed=True, unweighted=True)
    return D.T


def reach_pattern(A_pattern, d: int) -> SparsityPattern:
    """``Abar^d`` via graph distances."""
    if d < 0:
        raise ValueError("d must be nonnegative")
    return SparsityPattern(distance_matrix(A_pattern) <= d)


@dataclass(frozen=True)
class LocalityRegion:
    center: int
    d: int
    up: frozenset[int]
    down: frozenset[int]


def up_down_sets(A_pattern, j: int, d: int) -> LocalityRegion:
    """Incoming set ``{s : dist(s -> j) <= d}`` and outgoing set ``{s : dist(j -> s) <= d}``."""
    if d < 0:
        raise ValueError("d must be nonnegative")
    P = _as_pattern(A_pattern)
    if not 0 <= j < P.rows:
        raise IndexError(f"node index {j} out of range")
    down = _bfs(_successors(P), j, d)
    up = _bfs(_successors(P.T), j, d)
    return LocalityRegion(j, d, frozenset(up), frozenset(down))


def is_ad_sparse(X, A_pattern, d: int) -> bool:
    """True iff ``Sp{X}`` is contained in ``Abar^d``."""
    S = _as_pattern(X)
    return pattern_subset(S, reach_pattern(A_pattern, d))


@dataclass(frozen=True, eq=False)
class ConstraintSpace:
    """Per-coefficient patterns ``S[0..T]``; components past ``T`` are zero."""

    components: tuple[SparsityPattern, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("constraint space needs at least one component")
        shape = comps[0].shape
        for c in comps:
            if c.shape != shape:
                raise ValueError("all components must share dimensions")
        object.__setattr__(self, "components", comps)

    @property
    def T(self) -> int:
        return len(self.components) - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.components[0].shape

    def __getitem__(self, k: int) -> SparsityPattern:
        if k < 0:
            raise IndexError("negative spectral index")
        if k > self.T:
            return SparsityPattern.zeros(*self.shape)
        return self.components[k]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConstraintSpace):
            return NotImplemented
        K = max(self.T, other.T)
        return self.shape == other.shape and all(self[k] == other[k] for k in range(K + 1))

    def __hash__(self):
        return hash(tuple(self.components))

    def stacked(self) -> np.ndarray:
        """Boolean array of shape ``(T+1, rows, cols)``."""
        return np.stack([c.bits for c in self.components])

    def union(self) -> SparsityPattern:
        return SparsityPattern(self.stacked().any(axis=0))

    def intersect(self, other: "ConstraintSpace") -> "ConstraintSpace":
        K = min(self.T, other.T)
        return ConstraintSpace(tuple(self[k] & other[k] for k in range(K + 1)))

    def transpose(self) -> "ConstraintSpace":
        return ConstraintSpace(tuple(c.T for c in self.components))

    def is_subset(self, other: "ConstraintSpace") -> bool:
        return all(pattern_subset(self[k], other[k]) for k in range(self.T + 1))

    def to_json(self) -> dict:
        return {"T": self.T, "components": [c.to_json() for c in self.components]}

    @classmethod
    def from_json(cls, obj: dict) -> "ConstraintSpace":
        comps = tuple(SparsityPattern.from_json(c) for c in obj["components"])
        if len(comps) != int(obj["T"]) + 1:
            raise ValueError("component count does not match horizon")
        return cls(comps)

    @classmethod
    def full(cls, rows: int, cols: int, T: int, strictly_proper: bool = True) -> "ConstraintSpace":
        comps = [SparsityPattern.ones(rows, cols) for _ in range(T + 1)]
        if strictly_proper:
            comps[0] = SparsityPattern.zeros(rows, cols)
        return cls(tuple(comps))


def _as_fraction(h):
    if h == INF:
        return INF
    return Fraction(h)


def _floor_h(h, m: int):
    """``floor(h * m)`` in exact arithmetic; ``h = inf`` gives ``inf`` for ``m > 0``."""
    if h == INF:
        return 0 if m == 0 else INF
    return math.floor(h * m)


def build_dT_localized(A, B2, d: int, T: int, h=INF, t_s: int = 0
                       ) -> tuple[ConstraintSpace, ConstraintSpace]:
    """Locality, FIR and communication-delay pattern pair ``(S_R, S_M)``.

    ``S_R[i] = Abar^min(d, floor(h(i-1)))`` for ``i = 1..T`` and
    ``S_M[i + t_s] = Sp{B2^T} Abar^min(d+1, floor(h(i-1)))``, truncated at ``T``.
    ``h`` may be an int, a float, a ``Fraction`` or a string such as ``"3/2"``.
    """
    if d < 0:
        raise ValueError("d must be nonnegative")
    if T < 1:
        raise ValueError("T must be at least 1")
    if t_s not in (0, 1):
        raise ValueError("t_s must be 0 or 1")
    hf = _as_fraction(h)
    if hf != INF and hf <= 1:
        raise ValueError("communication speed ratio h must exceed 1")
    Apat = _as_pattern(A)
    n = Apat.rows
    B2pat = _as_pattern(B2)
    if B2pat.rows != n:
        raise ValueError("B2 row count must match A")
    m = B2pat.cols
    D = distance_matrix(Apat)

    def power(e):
        return SparsityPattern(D <= e)

    zero_R = SparsityPattern.zeros(n, n)
    zero_M = SparsityPattern.zeros(m, n)
    S_R = [zero_R] + [power(min(d, _floor_h(hf, i - 1))) for i in range(1, T + 1)]
    S_M = [zero_M] * (T + 1)
    for i in range(1, T + 1 - t_s):
        S_M[i + t_s] = pattern_mul(B2pat.T, power(min(d + 1, _floor_h(hf, i - 1))))
    S_R, S_M = ConstraintSpace(tuple(S_R)), ConstraintSpace(tuple(S_M))
    report = validate_dT(S_R, S_M, Apat, B2pat, d, T)
    if not report.ok:
        raise ValueError(f"constructed pair is not (d,T) localized: {report.failures}")
    return S_R, S_M


@dataclass(frozen=True)
class DTReport:
    finite: bool
    r_sparse: bool
    m_sparse: bool
    failures: tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return self.finite and self.r_sparse and self.m_sparse

    def __bool__(self) -> bool:
        return self.ok


def validate_dT(S_R: ConstraintSpace, S_M: ConstraintSpace, A, B2, d: int, T: int) -> DTReport:
    """Check the three conditions of a (d,T) localized FIR constraint."""
    Apat, B2pat = _as_pattern(A), _as_pattern(B2)
    finite = all(S[k].nnz() == 0 for S in (S_R, S_M) for k in range(T + 1, max(S.T, T) + 1))
    D = distance_matrix(Apat)
    reach_d, reach_d1 = SparsityPattern(D <= d), SparsityPattern(D <= d + 1)
    r_sparse = all(pattern_subset(S_R[k], reach_d) for k in range(S_R.T + 1))
    m_sparse = all(pattern_subset(pattern_mul(B2pat, S_M[k]), reach_d1) for k in range(S_M.T + 1))
    failures = tuple(name for name, ok in (("finite", finite), ("R locality", r_sparse),
                                           ("M locality", m_sparse)) if not ok)
    return DTReport(finite, r_sparse, m_sparse, failures)


def membership(G, S: ConstraintSpace) -> bool:
    """True iff every coefficient support of ``G`` lies in the matching component of ``S``."""
    coeffs = G.coeffs if hasattr(G, "coeffs") else np.asarray(G)
    if coeffs.shape[1:] != S.shape:
        raise ValueError(f"FIR dims {coeffs.shape[1:]} do not match space {S.shape}")
    for k in range(coeffs.shape[0]):
        nz = coeffs[k] != 0
        if np.any(nz & ~S[k].bits):
            return False
    return True


def comm_delay_space(A_pattern, tau: int, T: int) -> ConstraintSpace:
    """Entry ``(i, j)`` of component ``k`` allowed iff ``k >= tau * dist(j -> i)``."""
    if tau < 1:
        raise ValueError("tau must be at least 1")
    D = distance_matrix(A_pattern)
    return ConstraintSpace(tuple(SparsityPattern(tau * D <= k) for k in range(T + 1)))


def from_index_sets(rows: int, cols: int, allowed: Iterable[tuple[int, int]]) -> SparsityPattern:
    bits = np.zeros((rows, cols), dtype=bool)
    for i, j in allowed:
        bits[i, j] = True
    return SparsityPattern(bits)
