"""Areal adjacency structures and the Gaussian Markov random field they induce.

The GMRF used throughout the package has precision ``Q = lam * A + I`` where
``A`` is the graph Laplacian (neighbour counts on the diagonal, ``-1`` for
each pair of neighbours). Disconnected graphs, including graphs with isolated
areas, are allowed: the identity term keeps ``Q`` positive definite.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

LOG_2PI = np.log(2.0 * np.pi)


class GraphError(ValueError):
    """Raised for malformed graph input."""


@dataclass(frozen=True)
class SpatialGraph:
    """Undirected neighbourhood graph over ``n`` areas.

    Areas are indexed ``0..n-1`` internally; the edge-list file format is
    1-based.

    Attributes
    ----------
    n : int
        Number of areas.
    edges : ndarray of shape (m, 2)
        Unordered neighbour pairs stored with ``i < j``, sorted.
    n_neighbors : ndarray of shape (n,)
        Number of neighbours of each area.
    """

    n: int
    edges: np.ndarray
    n_neighbors: np.ndarray

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def neighbors(self, i: int) -> np.ndarray:
        mask = (self.edges[:, 0] == i) | (self.edges[:, 1] == i)
        e = self.edges[mask]
        return np.sort(np.where(e[:, 0] == i, e[:, 1], e[:, 0]))

    def neighbor_lists(self) -> list[np.ndarray]:
        out: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            out[i].append(int(j))
            out[j].append(int(i))
        return [np.array(sorted(x), dtype=np.int64) for x in out]

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Neighbour lists in compressed form ``(offsets, indices)``."""
        lists = self.neighbor_lists()
        offsets = np.zeros(self.n + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([len(x) for x in lists])
        indices = (np.concatenate(lists) if self.n_edges else np.zeros(0)).astype(np.int64)
        return offsets, indices

    def connected_components(self) -> np.ndarray:
        """Component label of every area (labels ``0..k-1``)."""
        from scipy.sparse import coo_matrix
        from scipy.sparse.csgraph import connected_components

        m = coo_matrix(
            (np.ones(self.n_edges), (self.edges[:, 0], self.edges[:, 1])),
            shape=(self.n, self.n),
        )
        _, labels = connected_components(m, directed=False)
        return labels


def build_graph(edge_list, n: int) -> SpatialGraph:
    """Build a graph from 1-based index pairs.

    Duplicate pairs (in either orientation) are merged. Self loops and
    out-of-range indices raise :class:`GraphError`.
    """
    if int(n) != n or n <= 0:
        raise GraphError(f"number of areas must be a positive integer, got {n!r}")
    n = int(n)
    pairs = set()
    for pair in edge_list:
        i, j = (int(v) for v in pair)
        if not (1 <= i <= n and 1 <= j <= n):
            raise GraphError(f"edge ({i}, {j}) has an index outside [1, {n}]")
        if i == j:
            raise GraphError(f"self loop at area {i}")
        pairs.add((min(i, j) - 1, max(i, j) - 1))
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    nu = np.bincount(edges.ravel(), minlength=n).astype(np.int64)
    return SpatialGraph(n=n, edges=edges, n_neighbors=nu)


def grid_graph(rows: int, cols: int) -> SpatialGraph:
    """Rook-contiguity lattice, areas numbered row by row."""
    if rows <= 0 or cols <= 0:
        raise GraphError("grid dimensions must be positive")
    idx = np.arange(rows * cols).reshape(rows, cols) + 1
    horiz = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
    vert = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
    return build_graph(np.vstack([horiz, vert]), rows * cols)


def read_edge_list(path) -> SpatialGraph:
    """Read the plain-text edge-list format (``n <count>`` then ``i j`` lines)."""
    n = None
    pairs = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if n is None:
            if len(tokens) != 2 or tokens[0] != "n":
                raise GraphError(f"{path}:{lineno}: expected header 'n <count>'")
            n = int(tokens[1])
            continue
        if len(tokens) != 2:
            raise GraphError(f"{path}:{lineno}: expected 'i j'")
        pairs.append((int(tokens[0]), int(tokens[1])))
    if n is None:
        raise GraphError(f"{path}: missing 'n <count>' header")
    return build_graph(pairs, n)


def write_edge_list(graph: SpatialGraph, path) -> None:
    lines = [f"n {graph.n}"]
    lines += [f"{i + 1} {j + 1}" for i, j in graph.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_graph_arg(spec: str) -> SpatialGraph:
    """Resolve a CLI graph argument: ``grid:ROWSxCOLS`` or an edge-list path."""
    m = re.fullmatch(r"grid:(\d+)x(\d+)", spec.strip())
    if m:
        return grid_graph(int(m.group(1)), int(m.group(2)))
    return read_edge_list(spec)


@dataclass(frozen=True)
class AdjacencyMatrix:
    """Graph Laplacian with its eigendecomposition cached.

    Attributes
    ----------
    matrix : ndarray (n, n)
        ``a_ii = nu_i``, ``a_ij = -1`` for neighbours.
    eigvals : ndarray (n,)
        Eigenvalues in ascending order (clipped at zero).
    eigvecs : ndarray (n, n)
        Matching orthonormal eigenvectors (columns).
    """

    graph: SpatialGraph
    matrix: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.graph.n


def adjacency(graph: SpatialGraph) -> AdjacencyMatrix:
    n = graph.n
    a = np.zeros((n, n))
    if graph.n_edges:
        i, j = graph.edges[:, 0], graph.edges[:, 1]
        a[i, j] = -1.0
        a[j, i] = -1.0
    a[np.diag_indices(n)] = graph.n_neighbors
    try:
        e, u = linalg.eigh(a)
    except linalg.LinAlgError as exc:  # pragma: no cover - valid Laplacians never fail
        raise GraphError("eigendecomposition of the adjacency matrix failed") from exc
    e = np.clip(e, 0.0, None)
    for arr in (a, e, u):
        arr.setflags(write=False)
    return AdjacencyMatrix(graph=graph, matrix=a, eigvals=e, eigvecs=u)


def _check_lambda(lam: float) -> None:
    if not np.isfinite(lam) or lam < 0:
        raise ValueError(f"spatial association must be a nonnegative number, got {lam!r}")


def precision(adj: AdjacencyMatrix, lam: float) -> np.ndarray:
    """``Q = lam * A + I``."""
    _check_lambda(lam)
    return lam * adj.matrix + np.eye(adj.n)


def log_normalizer(adj: AdjacencyMatrix, lam: float) -> float:
    """``log c(lam) = -(n/2) log(2 pi) + 0.5 * sum(log(lam * e_i + 1))``."""
    _check_lambda(lam)
    return -0.5 * adj.n * LOG_2PI + 0.5 * float(np.sum(np.log1p(lam * adj.eigvals)))


def pairwise_quadratic_form(u: np.ndarray, graph: SpatialGraph, lam: float) -> float:
    """``lam * sum_{i~j} (u_i - u_j)^2 + sum_i u_i^2`` (each pair counted once)."""
    u = np.asarray(u, dtype=float)
    diff = u[graph.edges[:, 0]] - u[graph.edges[:, 1]] if graph.n_edges else np.zeros(0)
    return lam * float(diff @ diff) + float(u @ u)


def gmrf_log_density(u, adj: AdjacencyMatrix, lam: float) -> float:
    """Log density of ``N(0, Q^{-1})`` evaluated at ``u``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (adj.n,):
        raise ValueError(f"expected a vector of length {adj.n}, got shape {u.shape}")
    return log_normalizer(adj, lam) - 0.5 * pairwise_quadratic_form(u, adj.graph, lam)


def sample_gmrf(adj: AdjacencyMatrix, lam: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw from ``N(0, Q^{-1})`` using the cached eigendecomposition.

    With ``size=None`` a single vector is returned, otherwise an array of
    shape ``(size, n)``.
    """
    _check_lambda(lam)
    k = 1 if size is None else int(size)
    eps = rng.standard_normal((k, adj.n))
    draws = (eps / np.sqrt(lam * adj.eigvals + 1.0)) @ adj.eigvecs.T
    return draws[0] if size is None else draws
