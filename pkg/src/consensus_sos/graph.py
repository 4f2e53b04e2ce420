"""Weighted undirected follower graphs with leader gains, and switching schedules."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .poly import DimensionError

BOUNDARY_TOL = 1e-12  # relative snap tolerance for switch instants


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class TopologyGraph:
    """Follower adjacency ``A`` plus leader gains ``d`` (the leader is not a node of A)."""

    adjacency: np.ndarray
    leader_gains: np.ndarray

    def __post_init__(self):
        A = np.array(self.adjacency, dtype=float)
        d = np.array(self.leader_gains, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise DimensionError("adjacency must be a nonempty square matrix")
        if d.shape != (A.shape[0],):
            raise DimensionError("one leader gain per follower is required")
        if not np.array_equal(A, A.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(A) != 0) or np.any(A < 0) or np.any(d < 0):
            raise ValueError("weights must be nonnegative with zero diagonal")
        A.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "leader_gains", d)

    @classmethod
    def from_edges(cls, n: int, edges=(), gains=None) -> "TopologyGraph":
        """Build from 0-based ``(j, k)`` or ``(j, k, w)`` edges and a gain mapping or sequence."""
        A = np.zeros((n, n))
        for e in edges:
            j, k = e[0], e[1]
            w = e[2] if len(e) > 2 else 1.0
            A[j, k] = A[k, j] = w
        d = np.zeros(n)
        if isinstance(gains, dict):
            for j, w in gains.items():
                d[j] = w
        elif gains is not None:
            d[:] = gains
        return cls(A, d)

    @property
    def size(self) -> int:
        return self.adjacency.shape[0]

    @property
    def laplacian(self) -> np.ndarray:
        A = self.adjacency
        return np.diag(A.sum(axis=1)) - A

    @property
    def gain_matrix(self) -> np.ndarray:
        return np.diag(self.leader_gains)

    def neighbors(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[j])

    def to_json(self) -> dict:
        return {"N": self.size, "A": self.adjacency.tolist(), "d": self.leader_gains.tolist()}

    @classmethod
    def from_json(cls, obj) -> "TopologyGraph":
        g = cls(obj["A"], obj["d"])
        if "N" in obj and obj["N"] != g.size:
            raise DimensionError("declared N does not match the adjacency")
        return g


def grand_matrix(g: TopologyGraph) -> np.ndarray:
    """``L + D``."""
    return g.laplacian + g.gain_matrix


def union(gs: Sequence[TopologyGraph]) -> TopologyGraph:
    if not gs:
        raise ValueError("union of no graphs")
    n = gs[0].size
    if any(g.size != n for g in gs):
        raise DimensionError("graphs have different follower counts")
    return TopologyGraph(sum(g.adjacency for g in gs), sum(g.leader_gains for g in gs))


def leader_connected(g: TopologyGraph) -> bool:
    """BFS from the leader over followers; true when every follower is reached."""
    n = g.size
    seen = np.zeros(n, dtype=bool)
    queue = deque(np.flatnonzero(g.leader_gains > 0).tolist())
    seen[list(queue)] = True
    while queue:
        j = queue.popleft()
        for k in g.neighbors(j):
            if not seen[k]:
                seen[k] = True
                queue.append(k)
    return bool(seen.all())


def laplacian_bilinear(L: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> float:
    """``sum_ij alpha_i^T L_ij beta_j`` for stacked rows ``alpha[i]``, ``beta[j]``."""
    return float(np.einsum("ik,ij,jk->", alpha, L, beta))


def pairwise_difference_form(L: np.ndarray, alpha: np.ndarray, beta: np.ndarray) -> float:
    """``-sum_{i<j} (alpha_i - alpha_j)^T L_ij (beta_i - beta_j)``."""
    total = 0.0
    n = L.shape[0]
    for i in range(n - 1):
        for j in range(i + 1, n):
            total -= L[i, j] * float((alpha[i] - alpha[j]) @ (beta[i] - beta[j]))
    return total


@dataclass(frozen=True)
class SwitchingSchedule:
    """Piecewise-constant switching signal, repeated cyclically past its horizon.

    ``subintervals`` holds ``(graph_index, duration)`` pairs; ``windows`` lists
    subinterval indices where joint-connectivity windows start (the first is 0).
    """

    graphs: tuple
    subintervals: tuple
    windows: tuple
    dwell_time: float
    _starts: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        object.__setattr__(self, "subintervals", tuple((int(i), float(dt)) for i, dt in self.subintervals))
        object.__setattr__(self, "windows", tuple(int(w) for w in self.windows))
        if not self.graphs or not self.subintervals:
            raise ValueError("schedule needs graphs and subintervals")
        n = self.graphs[0].size
        if any(g.size != n for g in self.graphs):
            raise DimensionError("graphs have different follower counts")
        if not self.dwell_time > 0:
            raise ValueError("dwell time must be positive")
        for gi, dur in self.subintervals:
            if not 0 <= gi < len(self.graphs):
                raise IndexError(f"graph index {gi} out of range")
            if dur < self.dwell_time * (1 - BOUNDARY_TOL):
                raise ValueError(f"subinterval of {dur} s is shorter than the dwell time")
        w = self.windows
        if not w or w[0] != 0 or any(b <= a for a, b in zip(w, w[1:])) or w[-1] >= len(self.subintervals):
            raise ValueError("windows must be increasing subinterval indices starting at 0")
        starts = np.concatenate([[0.0], np.cumsum([d for _, d in self.subintervals])])
        object.__setattr__(self, "_starts", starts)

    @property
    def follower_count(self) -> int:
        return self.graphs[0].size

    @property
    def period(self) -> float:
        return float(self._starts[-1])

    @property
    def boundaries(self) -> np.ndarray:
        """Start times of the subintervals within one period, plus the period."""
        return self._starts.copy()

    def window_subintervals(self, window_index: int) -> range:
        if not 0 <= window_index < len(self.windows):
            raise IndexError(f"window {window_index} out of range")
        lo = self.windows[window_index]
        hi = self.windows[window_index + 1] if window_index + 1 < len(self.windows) else len(self.subintervals)
        return range(lo, hi)

    def subinterval_at(self, t: float) -> tuple[int, int]:
        """(cycle, subinterval index) active at ``t``; right-continuous."""
        if t < 0:
            raise DomainError("time must be nonnegative")
        P = self.period
        cycle, r = divmod(t, P)
        # snap values within rounding of a boundary onto it
        tol = BOUNDARY_TOL * max(1.0, t)
        if P - r <= tol:
            cycle, r = cycle + 1, 0.0
        k = int(np.searchsorted(self._starts, r + tol, side="right")) - 1
        return int(cycle), min(k, len(self.subintervals) - 1)

    def graph_index_at(self, t: float) -> int:
        return self.subintervals[self.subinterval_at(t)[1]][0]

    def to_json(self) -> dict:
        return {
            "graphs": [g.to_json() for g in self.graphs],
            "subintervals": [[gi, dur] for gi, dur in self.subintervals],
            "windows": list(self.windows),
            "tau": self.dwell_time,
        }

    @classmethod
    def from_json(cls, obj) -> "SwitchingSchedule":
        return cls(
            graphs=[TopologyGraph.from_json(g) for g in obj["graphs"]],
            subintervals=[tuple(s) for s in obj["subintervals"]],
            windows=obj["windows"],
            dwell_time=obj["tau"],
        )


def is_jointly_connected(s: SwitchingSchedule, window_index: int) -> bool:
    members = [s.graphs[s.subintervals[k][0]] for k in s.window_subintervals(window_index)]
    return leader_connected(union(members))


def graph_at(s: SwitchingSchedule, t: float) -> int:
    return s.graph_index_at(t)


def reference_graphs() -> list:
    """Four followers; each graph is disconnected but the union reaches the leader."""
    return [
        TopologyGraph.from_edges(4, [(1, 2)], {0: 1.0}),
        TopologyGraph.from_edges(4, [(0, 1)], {3: 1.0}),
        TopologyGraph.from_edges(4, [(2, 3)]),
    ]


def reference_schedule(duration: float = 1e-3) -> SwitchingSchedule:
    """Cycle G1 -> G2 -> G3 with equal subintervals and one window per cycle."""
    return SwitchingSchedule(
        graphs=reference_graphs(),
        subintervals=[(0, duration), (1, duration), (2, duration)],
        windows=[0],
        dwell_time=duration,
    )
