"""Deterministic graph generators and feature synthesisers for experiments."""

from __future__ import annotations

import numpy as np

from .graphs import Graph, from_edges


def cycle_graph(n: int) -> Graph:
    i = np.arange(n, dtype=np.int64)
    return from_edges(i, (i + 1) % n, n=n)


def path_graph(n: int) -> Graph:
    i = np.arange(n - 1, dtype=np.int64)
    return from_edges(i, i + 1, n=n)


def star_graph(n: int) -> Graph:
    """Hub 0 joined to n-1 leaves."""
    leaves = np.arange(1, n, dtype=np.int64)
    return from_edges(np.zeros(n - 1, dtype=np.int64), leaves, n=n)


def complete_graph(n: int) -> Graph:
    u, v = np.triu_indices(n, k=1)
    return from_edges(u, v, n=n)


def bridge_of_cliques(sizes) -> Graph:
    """Cliques of the given sizes chained by single bridge edges."""
    src, dst = [], []
    start = 0
    prev_last = None
    for s in sizes:
        ids = np.arange(start, start + s)
        u, v = np.triu_indices(s, k=1)
        src.append(ids[u])
        dst.append(ids[v])
        if prev_last is not None:
            src.append(np.array([prev_last]))
            dst.append(np.array([start]))
        prev_last = start + s - 1
        start += s
    return from_edges(np.concatenate(src), np.concatenate(dst), n=start)


def erdos_renyi(n: int, p: float, seed: int = 0) -> Graph:
    rng = np.random.default_rng(seed)
    u, v = np.triu_indices(n, k=1)
    keep = rng.random(u.size) < p
    return from_edges(u[keep], v[keep], n=n)


def sbm_graph(block_sizes, p_in: float, p_out: float, seed: int = 0,
              rates: np.ndarray | None = None) -> tuple[Graph, np.ndarray]:
    """Sample a stochastic block model; returns (graph, block label per node).

    ``rates`` overrides the two-rate scheme with a full symmetric
    block-by-block edge probability matrix.
    """
    block_sizes = np.asarray(block_sizes, dtype=np.int64)
    k = block_sizes.size
    n = int(block_sizes.sum())
    labels = np.repeat(np.arange(k), block_sizes)
    if rates is None:
        rates = np.full((k, k), p_out)
        np.fill_diagonal(rates, p_in)
    rates = np.asarray(rates, dtype=np.float64)
    if rates.shape != (k, k) or not np.allclose(rates, rates.T):
        raise ValueError("rates must be a symmetric k x k matrix")
    rng = np.random.default_rng(seed)
    u, v = np.triu_indices(n, k=1)
    keep = rng.random(u.size) < rates[labels[u], labels[v]]
    return from_edges(u[keep], v[keep], n=n), labels


def noisy_onehot_features(labels: np.ndarray, num_classes: int,
                          flip_rate: float = 0.0, sigma: float = 0.0,
                          seed: int = 0) -> np.ndarray:
    """One-hot label indicators with a fraction flipped to a random other
    class, plus optional additive Gaussian noise."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    shown = labels.copy()
    flip = rng.random(labels.size) < flip_rate
    if num_classes > 1:
        offs = rng.integers(1, num_classes, size=labels.size)
        shown[flip] = (labels[flip] + offs[flip]) % num_classes
    x = np.zeros((labels.size, num_classes))
    x[np.arange(labels.size), shown] = 1.0
    if sigma > 0:
        x = x + sigma * rng.standard_normal(x.shape)
    return x


def gaussian_features(n: int, dim: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((n, dim))
