"""How stable are the four clustering algorithms across seeds?

Runs each algorithm several times on one graph and prints the pairwise
correlation-coefficient matrix between all runs, plus each algorithm's
mean self-agreement. Near-1 self blocks mean the algorithm is effectively
deterministic on this graph; low off-diagonal blocks flag algorithms that
see genuinely different structure.

Usage:
    python3 scripts/cluster_stability.py [--edges graph.csv] [--runs 3]
"""

import argparse
import itertools

import numpy as np

from clatt.blockmodel import hierarchical_fit, planted_partition_fit
from clatt.graphs import load_edge_list
from clatt.leiden import leiden_cpm
from clatt.similarity import similarity_matrix
from clatt.synthetic import sbm_graph


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--edges", help="edge list CSV; default: a 4-block SBM")
    ap.add_argument("--runs", type=int, default=3)
    args = ap.parse_args()

    if args.edges:
        g = load_edge_list(args.edges)
    else:
        g, _ = sbm_graph([60, 60, 60, 60], 0.15, 0.01, seed=0)
    print(f"graph: {g.n} nodes, {g.m} edges")

    runs = []
    for seed in range(args.runs):
        runs.append(leiden_cpm(g, seed=seed))
        runs.append(planted_partition_fit(g, seed=seed))
        runs.append(hierarchical_fit(g, seed=seed))
    names = [f"{c.algorithm_tag}/{i // 3}" for i, c in enumerate(runs)]

    mat, reasons = similarity_matrix(runs)
    width = max(len(n) for n in names)
    print(" " * width + "  " + "  ".join(f"{n:>{width}}" for n in names))
    for name, row in zip(names, mat):
        cells = "  ".join(f"{'nan' if np.isnan(v) else format(v, '.3f'):>{width}}" for v in row)
        print(f"{name:>{width}}  {cells}")
    for (i, j), why in sorted(reasons.items()):
        print(f"note: {names[i]} vs {names[j]}: {why}")

    print()
    for tag in ("LA", "BPP", "H1"):
        pairs = [
            mat[i, j]
            for i, j in itertools.combinations(range(len(runs)), 2)
            if runs[i].algorithm_tag == tag and runs[j].algorithm_tag == tag and np.isfinite(mat[i, j])
        ]
        if pairs:
            print(f"{tag} self-agreement over {len(pairs)} pairs: {np.mean(pairs):.3f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
