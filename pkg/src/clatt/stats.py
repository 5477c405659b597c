"""Graph summary statistics: distances, clustering, assortativity, homophily."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import Graph


def _bfs_int(g: Graph, source: int) -> np.ndarray:
    """Hop distances from ``source``; -1 marks unreachable nodes."""
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[source] = 0
    frontier = np.array([source], dtype=np.int64)
    offs, nbrs = g.offsets, g.neighbors
    d = 0
    while frontier.size:
        starts = offs[frontier]
        counts = offs[frontier + 1] - starts
        total = int(counts.sum())
        if total == 0:
            break
        cum = np.concatenate(([0], np.cumsum(counts)[:-1]))
        flat = nbrs[np.repeat(starts - cum, counts) + np.arange(total)]
        cand = flat[dist[flat] < 0]
        if cand.size == 0:
            break
        frontier = np.unique(cand)
        d += 1
        dist[frontier] = d
    return dist


def bfs_distances(g: Graph, source: int) -> np.ndarray:
    """Hop distances from ``source`` as floats, inf for unreachable nodes."""
    if not 0 <= source < g.n:
        raise ValueError(f"source {source} out of range for n={g.n}")
    d = _bfs_int(g, source).astype(np.float64)
    d[d < 0] = np.inf
    return d


def connected_components(g: Graph) -> tuple[np.ndarray, int]:
    """Component label per node (0-based, by discovery order) and count."""
    labels = np.full(g.n, -1, dtype=np.int64)
    c = 0
    for s in range(g.n):
        if labels[s] >= 0:
            continue
        reach = _bfs_int(g, s) >= 0
        labels[reach] = c
        c += 1
    return labels, c


@dataclass
class DistanceStats:
    diameter: float
    avg_distance: float
    exact: bool
    component_size: int
    num_components: int


def distance_stats(g: Graph, exact_threshold: int = 20000,
                   num_sources: int = 1000, seed: int = 0) -> DistanceStats:
    """Diameter and mean shortest-path distance over the largest component.

    Exact all-pairs BFS when the component has at most ``exact_threshold``
    nodes. Above that the mean is estimated from ``num_sources`` uniformly
    sampled sources and the diameter is a lower bound from repeated
    farthest-point sweeps; ``exact`` is False in that case.
    """
    if g.n == 0:
        raise ValueError("empty graph")
    labels, ncomp = connected_components(g)
    sizes = np.bincount(labels, minlength=ncomp)
    nodes = np.where(labels == int(sizes.argmax()))[0]
    nc = nodes.size
    if nc == 1:
        return DistanceStats(0.0, 0.0, True, 1, ncomp)
    if nc <= exact_threshold:
        total = 0
        diam = 0
        for s in nodes:
            d = _bfs_int(g, int(s))
            inside = d[d > 0]
            total += int(inside.sum())
            diam = max(diam, int(inside.max()))
        avg = total / (nc * (nc - 1))
        return DistanceStats(float(diam), float(avg), True, nc, ncomp)
    rng = np.random.default_rng(seed)
    sources = rng.choice(nodes, size=min(num_sources, nc), replace=False)
    acc = 0.0
    diam = 0
    far = int(sources[0])
    for s in sources:
        d = _bfs_int(g, int(s))
        inside = d[d > 0]
        acc += inside.sum() / inside.size
        if inside.max() > diam:
            diam = int(inside.max())
    for _ in range(4):  # farthest-point sweeps tighten the diameter bound
        d = _bfs_int(g, far)
        far = int(d.argmax())
        diam = max(diam, int(d.max()))
    return DistanceStats(float(diam), float(acc / len(sources)), False, nc, ncomp)


def clustering_coefficients(g: Graph) -> tuple[float, float]:
    """(global transitivity, mean local clustering).

    Nodes with degree < 2 contribute 0 to the local average. Returns NaN
    transitivity when the graph has no wedges.
    """
    degs = g.degrees
    edges = g.edge_array()
    tri_at = np.zeros(g.n, dtype=np.int64)
    closed = 0
    for u, v in edges:
        c = np.intersect1d(g.neighbors_of(int(u)), g.neighbors_of(int(v)),
                           assume_unique=True).size
        closed += c
        tri_at[u] += c
        tri_at[v] += c
    tri_at //= 2
    wedges_at = degs * (degs - 1) // 2
    total_wedges = int(wedges_at.sum())
    global_cc = float("nan") if total_wedges == 0 else closed / total_wedges
    with np.errstate(invalid="ignore", divide="ignore"):
        local = np.where(wedges_at > 0, tri_at / np.maximum(wedges_at, 1), 0.0)
    return global_cc, float(local.mean())


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        return float("nan")
    return float((xc * yc).sum() / (sx * sy))


def _endpoint_values(g: Graph, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    src = np.repeat(np.arange(g.n), g.degrees)
    return values[src], values[g.neighbors]


def degree_assortativity(g: Graph) -> float:
    """Pearson correlation of endpoint degrees over directed edge copies.

    NaN when every edge joins equal-degree endpoints (zero variance).
    """
    if g.m == 0:
        return float("nan")
    x, y = _endpoint_values(g, g.degrees.astype(np.float64))
    return _pearson(x, y)


def target_assortativity(g: Graph, values: np.ndarray) -> float:
    """Pearson correlation of a numeric node attribute across edges."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (g.n,):
        raise ValueError("need one value per node")
    if g.m == 0:
        return float("nan")
    x, y = _endpoint_values(g, values)
    return _pearson(x, y)


def unbiased_homophily(g: Graph, labels: np.ndarray, alpha: float = 0.0) -> float:
    """Label homophily normalised so class count and class sizes do not bias it.

    With degree shares p_k and within-class edge-end shares c_kk, computes
    sum_k p_k^alpha (c_kk / p_k - p_k) scaled by its maximum (positive side)
    or its magnitude at zero within-class mass (negative side), so the value
    is 1 for perfectly homophilous labelings, about 0 for labels independent
    of edges, and at worst -1. ``alpha=0`` (default) weights classes equally;
    ``alpha=1`` recovers the degree-weighted variant. Classes with no edge
    endpoints are dropped; fewer than two remaining classes is an error.
    """
    labels = np.asarray(labels)
    if labels.shape != (g.n,):
        raise ValueError("need one label per node")
    if g.m == 0:
        raise ValueError("homophily undefined for an edgeless graph")
    _, lab = np.unique(labels, return_inverse=True)
    k = int(lab.max()) + 1
    two_m = 2 * g.m
    deg_share = np.bincount(lab, weights=g.degrees, minlength=k) / two_m
    lu, lv = _endpoint_values(g, lab)
    within = np.bincount(lu[lu == lv], minlength=k) / two_m
    live = deg_share > 0
    if int(live.sum()) < 2:
        raise ValueError("homophily needs at least two classes with edges")
    p = deg_share[live]
    c = within[live]
    w = p ** alpha
    raw = float((w * (c / p - p)).sum())
    pos_scale = float((w * (1.0 - p)).sum())
    neg_scale = float((w * p).sum())
    return raw / pos_scale if raw >= 0 else raw / neg_scale


@dataclass
class GraphStats:
    """Summary row for one graph; distance fields cover the largest component."""

    num_nodes: int
    num_edges: int
    avg_degree: float
    median_degree: float
    diameter: float
    avg_distance: float
    global_clustering: float
    avg_local_clustering: float
    degree_assortativity: float
    unbiased_homophily: float = float("nan")
    target_assortativity: float = float("nan")
    num_components: int = 1
    largest_component_size: int = 0
    flags: dict = field(default_factory=dict)


def compute_graph_stats(g: Graph, targets: np.ndarray | None = None,
                        task: str = "multiclass", exact_threshold: int = 20000,
                        seed: int = 0) -> GraphStats:
    """Compute the full summary. ``targets`` adds homophily (classification)
    or target assortativity (regression)."""
    dstats = distance_stats(g, exact_threshold=exact_threshold, seed=seed)
    global_cc, local_cc = clustering_coefficients(g)
    deg_r = degree_assortativity(g)
    flags = {}
    if not dstats.exact:
        flags["distances_approximate"] = True
        flags["diameter_is_lower_bound"] = True
    if dstats.num_components > 1:
        flags["distances_on_largest_component"] = True
    if np.isnan(deg_r):
        flags["degree_assortativity_undefined"] = True
    hom = float("nan")
    t_assort = float("nan")
    if targets is not None:
        if task == "regression":
            t_assort = target_assortativity(g, targets)
            if np.isnan(t_assort):
                flags["target_assortativity_undefined"] = True
        else:
            hom = unbiased_homophily(g, targets)
    degs = g.degrees
    return GraphStats(
        num_nodes=g.n,
        num_edges=g.m,
        avg_degree=float(2 * g.m / g.n),
        median_degree=float(np.median(degs)),
        diameter=dstats.diameter,
        avg_distance=dstats.avg_distance,
        global_clustering=global_cc,
        avg_local_clustering=local_cc,
        degree_assortativity=deg_r,
        unbiased_homophily=hom,
        target_assortativity=t_assort,
        num_components=dstats.num_components,
        largest_component_size=dstats.component_size,
        flags=flags,
    )


def stats_to_dict(stats: GraphStats) -> dict:
    """JSON-safe dict keyed by field names; non-finite floats become null."""
    out = {}
    for name, val in vars(stats).items():
        if isinstance(val, float) and not np.isfinite(val):
            out[name] = None
        else:
            out[name] = val
    return out
