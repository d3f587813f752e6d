"""Correlation-thresholded zone graphs for spatial completion and forecasting."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

TOP_K = 3


@dataclass
class ErzGraph:
    adjacency: np.ndarray  # (M, M) symmetric, zero diagonal, entries in [0, 1]
    threshold: float

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("ErzGraph: adjacency must be square")
        if not np.allclose(a, a.T, atol=1e-12, rtol=0):
            raise ValueError("ErzGraph: adjacency must be symmetric")
        if np.any(np.diag(a) != 0) or np.any(a < 0) or np.any(a > 1):
            raise ValueError("ErzGraph: zero diagonal and entries in [0, 1] required")
        self.adjacency = a

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def degree(self) -> np.ndarray:
        return (self.adjacency > 0).sum(axis=1)

    def neighbourhood_mask(self) -> np.ndarray:
        """Boolean (M, M): edges plus self-loops."""
        return (self.adjacency > 0) | np.eye(self.n_nodes, dtype=bool)

    def normalized(self) -> np.ndarray:
        return normalize_adjacency(self)


def abs_correlation(samples: np.ndarray) -> np.ndarray:
    """|Pearson| between columns of ``samples`` (n, M); zero-variance columns correlate 0."""
    x = np.asarray(samples, dtype=np.float64)
    x = x - x.mean(axis=0)
    norm = np.sqrt((x * x).sum(axis=0))
    ok = norm > 1e-12 * max(1.0, norm.max(initial=0.0))
    x = np.where(ok, x / np.where(ok, norm, 1.0), 0.0)
    corr = np.clip(np.abs(x.T @ x), 0.0, 1.0)
    corr[~ok, :] = 0.0
    corr[:, ~ok] = 0.0
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 0.0)
    return corr


def threshold_graph(corr: np.ndarray, threshold: float, top_k: int = TOP_K) -> np.ndarray:
    """Keep |corr| >= threshold; nodes left with fewer than ``top_k`` edges keep their strongest ``top_k``."""
    adj = np.where(corr >= threshold, corr, 0.0)
    np.fill_diagonal(adj, 0.0)
    m = len(corr)
    k = min(top_k, m - 1)
    deg = (adj > 0).sum(axis=1)
    for i in range(m):
        if deg[i] >= k:
            continue
        others = np.delete(np.arange(m), i)
        # stable order: strongest first, ties by index
        ranked = others[np.argsort(-corr[i, others], kind="stable")][:k]
        for j in ranked:
            adj[i, j] = adj[j, i] = corr[i, j]
    return adj


def build_sa_graph(snapshots: np.ndarray, threshold: float = 0.7, top_k: int = TOP_K) -> ErzGraph:
    """Graph over zones from a stack of snapshots (n, M)."""
    snapshots = np.asarray(snapshots, dtype=np.float64)
    if snapshots.ndim != 2 or snapshots.shape[0] < 2:
        raise ValueError("build_sa_graph: need at least 2 snapshots")
    return ErzGraph(threshold_graph(abs_correlation(snapshots), threshold, top_k), threshold)


def build_stf_graph(trajectories, threshold: float = 0.7, top_k: int = TOP_K) -> ErzGraph:
    """Same construction over all (scenario, hour) samples of the trajectories."""
    arrays = [np.asarray(getattr(t, "values", t), dtype=np.float64) for t in trajectories]
    if not arrays:
        raise ValueError("build_stf_graph: need at least 1 trajectory")
    samples = np.concatenate(arrays, axis=0)
    if samples.shape[0] < 2:
        raise ValueError("build_stf_graph: need at least 2 samples")
    return ErzGraph(threshold_graph(abs_correlation(samples), threshold, top_k), threshold)


def normalize_adjacency(graph: ErzGraph | np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a = graph.adjacency if isinstance(graph, ErzGraph) else np.asarray(graph, dtype=np.float64)
    a_hat = a + np.eye(len(a))
    d = 1.0 / np.sqrt(a_hat.sum(axis=1))
    out = a_hat * d[:, None] * d[None, :]
    return 0.5 * (out + out.T)


def write_edge_list(path: str | Path, graph: ErzGraph) -> None:
    """CSV edge list, upper triangle, zone ids 1-based."""
    lines = [f"# M={graph.n_nodes} threshold={graph.threshold!r}", "i,j,weight"]
    iu, ju = np.nonzero(np.triu(graph.adjacency, k=1))
    for i, j in zip(iu, ju):
        lines.append(f"{i + 1},{j + 1},{graph.adjacency[i, j]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path: str | Path) -> ErzGraph:
    lines = Path(path).read_text().splitlines()
    header = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split())
    m = int(header["M"])
    adj = np.zeros((m, m))
    for line in lines[2:]:
        if not line.strip():
            continue
        i, j, w = line.split(",")
        adj[int(i) - 1, int(j) - 1] = adj[int(j) - 1, int(i) - 1] = float(w)
    return ErzGraph(adj, float(header["threshold"]))
