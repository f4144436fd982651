"""Plant models: chains, meshes and the Euler-discretized swing-equation network.

Random draws use numpy's counter-based Philox generator, so a seed reproduces the
same parameters on every platform. Swing parameters are consumed edge-major:
first ``k_ij`` for each edge ``(i, j)`` with ``i < j`` in lexicographic order, then
``d_i`` for every node, then ``1/m_i`` for every node.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree

from . import jsonio
from .sparsity import SparsityPattern


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True, eq=False)
class PlantModel:
    """``x+ = A x + B1 w + B2 u``, ``z = C1 x + D12 u``, ``y = C2 x + D21 w``."""

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    graph: SparsityPattern
    node_dims: tuple[int, ...]

    def __post_init__(self):
        for name in ("A", "B1", "B2", "C1", "C2", "D12", "D21"):
            a = np.array(np.atleast_2d(getattr(self, name)), dtype=float, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "node_dims", tuple(int(d) for d in self.node_dims))
        n = self.A.shape[0]
        checks = [
            (self.A.shape == (n, n), "A must be square"),
            (self.B1.shape[0] == n, "B1 rows must equal n_x"),
            (self.B2.shape[0] == n, "B2 rows must equal n_x"),
            (self.C1.shape[1] == n, "C1 columns must equal n_x"),
            (self.C2.shape[1] == n, "C2 columns must equal n_x"),
            (self.D12.shape == (self.C1.shape[0], self.B2.shape[1]), "D12 must be n_z x n_u"),
            (self.D21.shape == (self.C2.shape[0], self.B1.shape[1]), "D21 must be n_y x n_w"),
            (sum(self.node_dims) == n, "node_dims must sum to n_x"),
            (self.graph.shape == (len(self.node_dims),) * 2, "graph must be n_nodes x n_nodes"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B2.shape[1]

    @property
    def n_y(self) -> int:
        return self.C2.shape[0]

    @property
    def n_w(self) -> int:
        return self.B1.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.node_dims)

    @property
    def dims(self) -> tuple[int, int, int]:
        """``(n_x, n_u, n_nodes)``."""
        return self.n_x, self.n_u, self.n_nodes

    @property
    def Q(self) -> np.ndarray:
        return self.C1.T @ self.C1

    @property
    def Rw(self) -> np.ndarray:
        return self.D12.T @ self.D12

    def state_nodes(self) -> np.ndarray:
        """Node index of every state."""
        return np.repeat(np.arange(self.n_nodes), self.node_dims)

    def with_A(self, A) -> "PlantModel":
        return replace(self, A=np.asarray(A, dtype=float))

    def with_sensors(self, keep: Sequence[int]) -> "PlantModel":
        """Keep only the listed measurement channels."""
        keep = list(keep)
        return replace(self, C2=self.C2[keep], D21=self.D21[keep])

    def to_json(self) -> dict:
        out = {name: getattr(self, name) for name in ("A", "B1", "B2", "C1", "C2", "D12", "D21")}
        out["graph"] = self.graph.to_json()
        out["node_dims"] = list(self.node_dims)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PlantModel":
        fields = ("A", "B1", "B2", "C1", "C2", "D12", "D21", "graph", "node_dims")
        for name in fields:
            if name not in obj:
                raise ValueError(f"plant is missing field '{name}'")
        mats = {}
        for name in fields[:7]:
            a = np.asarray(obj[name], dtype=float)
            if a.ndim != 2:
                raise ValueError(f"field '{name}' must be a 2-D array")
            mats[name] = a
        return cls(graph=SparsityPattern.from_json(obj["graph"]),
                   node_dims=tuple(obj["node_dims"]), **mats)


def save(plant: PlantModel, path: str | Path) -> None:
    jsonio.dump(plant, path)


def load(path: str | Path) -> PlantModel:
    try:
        return PlantModel.from_json(jsonio.load(path))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from exc


def _standard_io(n_x: int, n_u: int, C2, proc_std, sens_std):
    """``[C1 D12] = I``; noise ``w = [process; sensor]`` with diagonal gains."""
    C2 = np.atleast_2d(C2)
    n_y = C2.shape[0]
    proc_std = np.broadcast_to(np.asarray(proc_std, dtype=float), (n_x,))
    sens_std = np.broadcast_to(np.asarray(sens_std, dtype=float), (n_y,))
    B1 = np.hstack([np.diag(proc_std), np.zeros((n_x, n_y))])
    D21 = np.hstack([np.zeros((n_y, n_x)), np.diag(sens_std)])
    C1 = np.vstack([np.eye(n_x), np.zeros((n_u, n_x))])
    D12 = np.vstack([np.zeros((n_x, n_u)), np.eye(n_u)])
    return B1, C1, D12, D21


def path_graph(n: int) -> SparsityPattern:
    bits = np.zeros((n, n), dtype=bool)
    idx = np.arange(n - 1)
    bits[idx, idx + 1] = bits[idx + 1, idx] = True
    return SparsityPattern(bits)


def build_chain(n: int, coupling=0.2, diag=1.0, actuated: Sequence[int] | None = None,
                proc_std=1.0, sens_std=0.1) -> PlantModel:
    """Scalar subsystems on a line: tridiagonal ``A``, one actuator per listed node.

    ``coupling`` may be a scalar or an ``(n-1, 2)`` array of (lower, upper)
    off-diagonal values; ``diag`` a scalar or length-``n`` array.
    """
    if n < 2:
        raise ValueError("a chain needs at least two nodes")
    A = np.diag(np.broadcast_to(np.asarray(diag, dtype=float), (n,)).copy())
    c = np.asarray(coupling, dtype=float)
    c = np.broadcast_to(c, (n - 1, 2)) if c.ndim < 2 else c
    idx = np.arange(n - 1)
    A[idx + 1, idx] = c[:, 0]
    A[idx, idx + 1] = c[:, 1]
    act = list(range(n)) if actuated is None else list(actuated)
    B2 = np.zeros((n, len(act)))
    B2[act, np.arange(len(act))] = 1.0
    B1, C1, D12, D21 = _standard_io(n, len(act), np.eye(n), proc_std, sens_std)
    return PlantModel(A, B1, B2, C1, np.eye(n), D12, D21, path_graph(n), (1,) * n)


def grid_edges(k: int) -> list[tuple[int, int]]:
    edges = []
    for r in range(k):
        for c in range(k):
            v = r * k + c
            if c + 1 < k:
                edges.append((v, v + 1))
            if r + 1 < k:
                edges.append((v, v + k))
    return sorted(edges)


def graph_from_edges(n: int, edges) -> SparsityPattern:
    bits = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        bits[i, j] = bits[j, i] = True
    return SparsityPattern(bits)


def graph_edges(graph: SparsityPattern) -> list[tuple[int, int]]:
    i, j = np.nonzero(np.triu(graph.bits, 1))
    return sorted(zip(i.tolist(), j.tolist()))


def build_mesh(k: int, mode: str = "tree", p: float = 0.25, seed: int = 0) -> SparsityPattern:
    """Interaction graph on a ``k x k`` grid.

    ``mode="tree"`` keeps a uniformly weighted random spanning tree (always
    connected); ``mode="drop"`` removes each grid edge independently with
    probability ``p`` (may disconnect the grid).
    """
    if k < 2:
        raise ValueError("mesh side must be at least 2")
    n = k * k
    edges = grid_edges(k)
    rng = philox(seed)
    if mode == "tree":
        w = rng.random(len(edges)) + 1.0  # strictly positive weights
        i, j = zip(*edges)
        G = coo_matrix((w, (i, j)), shape=(n, n)).tocsr()
        T = minimum_spanning_tree(G).tocoo()
        kept = sorted((min(a, b), max(a, b)) for a, b in zip(T.row.tolist(), T.col.tolist()))
    elif mode == "drop":
        if not 0 <= p < 1:
            raise ValueError("drop probability must lie in [0, 1)")
        keep = rng.random(len(edges)) >= p
        kept = [e for e, kk in zip(edges, keep) if kk]
    else:
        raise ValueError(f"unknown mesh mode '{mode}'")
    return graph_from_edges(n, kept)


def is_connected(graph: SparsityPattern) -> bool:
    ncomp, _ = connected_components(coo_matrix(graph.bits.astype(float)), directed=False)
    return ncomp == 1


@dataclass(frozen=True)
class SwingParams:
    dt: float = 0.2
    k_range: tuple[float, float] = (0.5, 1.0)
    d_range: tuple[float, float] = (1.0, 1.5)
    inv_m_range: tuple[float, float] = (0.0, 2.0)
    phase_cov: float = 1e-4
    freq_cov: float = 1.0
    sensor_cov: float = 1e-2
    normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("k_range", "d_range", "inv_m_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: [{lo}, {hi}]")
        if min(self.phase_cov, self.freq_cov, self.sensor_cov) < 0:
            raise ValueError("covariances must be nonnegative")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def _uniform(rng, lo_hi, size):
    lo, hi = lo_hi
    return lo + (hi - lo) * rng.random(size)


def build_swing_plant(graph: SparsityPattern, params: SwingParams = SwingParams()) -> PlantModel:
    """Two states ``[theta_i, dtheta_i]`` per bus, Euler step ``dt``, load control on ``dtheta_i``."""
    n = graph.rows
    dt = params.dt
    edges = graph_edges(graph)
    rng = philox(params.seed)
    k_e = _uniform(rng, params.k_range, len(edges))
    d = _uniform(rng, params.d_range, n)
    inv_m = _uniform(rng, params.inv_m_range, n)
    K = np.zeros((n, n))
    for (i, j), kij in zip(edges, k_e):
        K[i, j] = K[j, i] = kij
    k_tot = K.sum(axis=1)
    A = np.zeros((2 * n, 2 * n))
    for i in range(n):
        a = 2 * i
        A[a, a], A[a, a + 1] = 1.0, dt
        A[a + 1, a] = -k_tot[i] * inv_m[i] * dt
        A[a + 1, a + 1] = 1.0 - d[i] * inv_m[i] * dt
        for j in np.flatnonzero(K[i]):
            A[a + 1, 2 * j] = K[i, j] * inv_m[i] * dt
    B2 = np.zeros((2 * n, n))
    B2[2 * np.arange(n) + 1, np.arange(n)] = 1.0
    proc_std = np.tile([np.sqrt(params.phase_cov), np.sqrt(params.freq_cov)], n)
    B1, C1, D12, D21 = _standard_io(2 * n, n, np.eye(2 * n), proc_std, np.sqrt(params.sensor_cov))
    plant = PlantModel(A, B1, B2, C1, np.eye(2 * n), D12, D21, graph, (2,) * n)
    return normalize_spectral_radius(plant) if params.normalize else plant


def spectral_radius(A) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(A, dtype=float)))))


def normalize_spectral_radius(plant: PlantModel, target: float = 1.0) -> PlantModel:
    """Scale ``A`` so that its spectral radius equals ``target``."""
    rho = spectral_radius(plant.A)
    if not np.isfinite(rho) or rho == 0:
        raise ValueError("A has zero or undefined spectral radius")
    return plant.with_A(plant.A * (target / rho))


def swing_chain(n: int = 3, seed: int = 0) -> PlantModel:
    return build_swing_plant(path_graph(n), SwingParams(seed=seed))


def swing_mesh(k: int = 3, seed: int = 0, mode: str = "tree") -> PlantModel:
    return build_swing_plant(build_mesh(k, mode=mode, seed=seed), SwingParams(seed=seed))


DATA_DIR = Path(__file__).parent / "data"


def load_fixture(name: str = "chain3_swing") -> PlantModel:
    return load(DATA_DIR / f"{name}.json")
