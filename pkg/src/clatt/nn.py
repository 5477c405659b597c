"""Model stack: cluster attention, baseline convolutions, residual blocks.

Everything here is a pure function over a flat dict of named parameter
Tensors, so checkpointing and the optimizer stay trivial. The attention
kernel is shared: cluster attention, the neighborhood transformer and
the global transformer all go through _attend.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .partition import FilteredClustering

__all__ = [
    "CONV_TYPES",
    "PE_KINDS",
    "ClusterBatch",
    "ModelSpec",
    "ModelInputs",
    "build_cluster_batch",
    "clatt_forward",
    "fuse",
    "gcn_matrix",
    "mean_matrix",
    "neighborhood_table",
    "gcn_conv",
    "sage_conv",
    "local_attention_conv",
    "global_attention",
    "init_params",
    "prepare_inputs",
    "model_forward",
]

CONV_TYPES = ("GCN", "SAGE", "LGT", "GGT")
PE_KINDS = ("none", "deepwalk", "laplacian")

GLOBAL_ATTENTION_MAX_NODES = 20_000
MAX_CLUSTER_SLOTS = 512


@dataclass
class ClusterBatch:
    """Padded node-id table for dense attention within clusters.

    index_table[r, s] is a node id when mask[r, s] is True and a dummy 0
    otherwise. scatter maps flattened (row, slot) outputs back onto the
    n nodes; unassigned nodes receive all-zero rows.
    """

    index_table: np.ndarray
    mask: np.ndarray
    scatter: sp.csr_matrix
    row_of: np.ndarray
    slot_of: np.ndarray
    n: int

    @property
    def num_clusters(self) -> int:
        return self.index_table.shape[0]

    @property
    def max_cluster_size(self) -> int:
        return self.index_table.shape[1]


def build_cluster_batch(fc: FilteredClustering) -> ClusterBatch:
    """Lay retained clusters out as rows, members as node-id-sorted slots."""
    a = np.asarray(fc.assignment)
    n = a.shape[0]
    retained = np.nonzero(a >= 0)[0]
    if retained.size == 0:
        raise ValueError("build_cluster_batch: no retained clusters")
    ids = a[retained]
    uniq = np.unique(ids)
    rows = np.searchsorted(uniq, ids)
    sizes = np.bincount(rows)
    max_size = int(sizes.max())
    if max_size > MAX_CLUSTER_SLOTS:
        raise ValueError(f"cluster of size {max_size} exceeds the {MAX_CLUSTER_SLOTS} slot bound")
    num = uniq.size
    order = np.argsort(rows, kind="stable")  # retained is ascending, so slots sort by node id
    rows_sorted = rows[order]
    nodes_sorted = retained[order]
    starts = np.concatenate(([0], np.cumsum(sizes)))
    slots = np.arange(nodes_sorted.size) - starts[rows_sorted]

    table = np.zeros((num, max_size), dtype=np.int64)
    mask = np.zeros((num, max_size), dtype=bool)
    table[rows_sorted, slots] = nodes_sorted
    mask[rows_sorted, slots] = True

    row_of = np.full(n, -1, dtype=np.int64)
    slot_of = np.full(n, -1, dtype=np.int64)
    row_of[nodes_sorted] = rows_sorted
    slot_of[nodes_sorted] = slots

    scatter = sp.csr_matrix(
        (np.ones(nodes_sorted.size), (nodes_sorted, rows_sorted * max_size + slots)),
        shape=(n, num * max_size),
    )
    return ClusterBatch(table, mask, scatter, row_of, slot_of, n)


def _attend(q: T.Tensor, k: T.Tensor, v: T.Tensor, key_mask: np.ndarray):
    """Scaled dot-product attention; key_mask broadcasts over query rows.

    q is (..., Sq, dh); k and v are (..., S, dh). Returns the probability
    tensor (..., Sq, S) and the context (..., Sq, dh).
    """
    dh = q.data.shape[-1]
    logits = T.scale(T.matmul(q, T.swap_axes(k, -1, -2)), 1.0 / math.sqrt(dh))
    mask = np.broadcast_to(key_mask, logits.data.shape)
    p = T.masked_softmax(logits, mask)
    return p, T.matmul(p, v)


def _qkv(x: T.Tensor, prm: dict, prefix: str):
    q = T.linear(x, prm[prefix + "wq"], prm[prefix + "bq"])
    k = T.linear(x, prm[prefix + "wk"], prm[prefix + "bk"])
    v = T.linear(x, prm[prefix + "wv"], prm[prefix + "bv"])
    return q, k, v


def _check_heads(d: int, heads: int) -> int:
    if heads < 1 or d % heads != 0:
        raise ValueError(f"hidden dim {d} is not divisible by {heads} heads")
    return d // heads


def clatt_forward(x: T.Tensor, batches, param_groups, heads: int, capture=None, tags=None, layer=None) -> T.Tensor:
    """Per-clustering masked attention inside clusters, outputs concatenated.

    param_groups holds one dict per clustering with keys wq/bq/wk/bk/wv/bv.
    Nodes a clustering leaves unassigned get an exactly-zero block.
    """
    n, d = x.data.shape
    dh = _check_heads(d, heads)
    batches = list(batches)
    param_groups = list(param_groups)
    if len(batches) != len(param_groups):
        raise ValueError(f"{len(batches)} cluster batches but {len(param_groups)} parameter groups")
    outs = []
    for ci, (batch, prm) in enumerate(zip(batches, param_groups)):
        q = T.linear(x, prm["wq"], prm["bq"])
        k = T.linear(x, prm["wk"], prm["bk"])
        v = T.linear(x, prm["wv"], prm["bv"])
        num, size = batch.index_table.shape

        def slotted(t):
            g = T.take_rows(t, batch.index_table)  # (num, size, d)
            g = T.reshape(g, (num, size, heads, dh))
            return T.swap_axes(g, 1, 2)  # (num, heads, size, dh)

        p, ctx = _attend(slotted(q), slotted(k), slotted(v), batch.mask[:, None, None, :])
        y = T.reshape(T.swap_axes(ctx, 1, 2), (num * size, d))
        outs.append(T.spmm(batch.scatter, y))
        if capture is not None:
            capture.append(
                {
                    "kind": "cluster",
                    "layer": layer,
                    "clustering": tags[ci] if tags else None,
                    "probs": p.data,
                    "index_table": batch.index_table,
                    "mask": batch.mask,
                }
            )
    return T.concat_last_dim(outs)


def fuse(mp_out: T.Tensor, clatt_out: T.Tensor, w: T.Tensor, b: T.Tensor) -> T.Tensor:
    return T.linear(T.concat_last_dim([mp_out, clatt_out]), w, b)


def gcn_matrix(g) -> sp.csr_matrix:
    """Symmetric-normalized adjacency with self-loops."""
    n = g.n
    deg = g.degrees.astype(np.float64) + 1.0
    dinv = 1.0 / np.sqrt(deg)
    rows = np.concatenate([np.repeat(np.arange(n), g.degrees), np.arange(n)])
    cols = np.concatenate([g.neighbors, np.arange(n)])
    data = dinv[rows] * dinv[cols]
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def mean_matrix(g) -> sp.csr_matrix:
    """Row-normalized adjacency; isolated nodes get an all-zero row."""
    n = g.n
    deg = g.degrees.astype(np.float64)
    rows = np.repeat(np.arange(n), g.degrees)
    data = 1.0 / deg[rows]
    return sp.csr_matrix((data, (rows, g.neighbors)), shape=(n, n))


def neighborhood_table(g):
    """(n, max_deg+1) node-id table over N(i) and i, with validity mask."""
    n = g.n
    ids = np.concatenate([np.repeat(np.arange(n), g.degrees), np.arange(n)])
    vals = np.concatenate([g.neighbors, np.arange(n)])
    order = np.lexsort((vals, ids))
    ids = ids[order]
    vals = vals[order]
    counts = g.degrees + 1
    size = int(counts.max())
    starts = np.concatenate(([0], np.cumsum(counts)))
    slots = np.arange(ids.size) - starts[ids]
    table = np.zeros((n, size), dtype=np.int64)
    mask = np.zeros((n, size), dtype=bool)
    table[ids, slots] = vals
    mask[ids, slots] = True
    return table, mask


def gcn_conv(x: T.Tensor, adj_norm, w: T.Tensor, b: T.Tensor) -> T.Tensor:
    return T.linear(T.spmm(adj_norm, x), w, b)


def sage_conv(x: T.Tensor, mean_mat, w: T.Tensor, b: T.Tensor) -> T.Tensor:
    return T.linear(T.concat_last_dim([x, T.spmm(mean_mat, x)]), w, b)


def local_attention_conv(x, table, mask, prm, heads: int, capture=None, layer=None) -> T.Tensor:
    """Attention of each node over its neighborhood plus itself."""
    n, d = x.data.shape
    dh = _check_heads(d, heads)
    size = table.shape[1]
    q, k, v = _qkv(x, prm, "")
    q4 = T.reshape(q, (n, heads, 1, dh))

    def slotted(t):
        g = T.take_rows(t, table)
        g = T.reshape(g, (n, size, heads, dh))
        return T.swap_axes(g, 1, 2)

    p, ctx = _attend(q4, slotted(k), slotted(v), mask[:, None, None, :])
    if capture is not None:
        capture.append(
            {
                "kind": "local",
                "layer": layer,
                "clustering": None,
                "probs": p.data[:, :, 0, :],
                "index_table": table,
                "mask": mask,
            }
        )
    return T.reshape(ctx, (n, d))


def global_attention(x: T.Tensor, pe: T.Tensor, prm: dict, heads: int, capture=None, layer=None) -> T.Tensor:
    """All-to-all attention on concat(x projection, pe projection)."""
    n, d = x.data.shape
    dh = _check_heads(d, heads)
    if n > GLOBAL_ATTENTION_MAX_NODES:
        raise ValueError(
            f"global attention materializes an n x n matrix; n={n} exceeds the "
            f"desk-scale limit of {GLOBAL_ATTENTION_MAX_NODES}"
        )
    zx = T.linear(x, prm["wx"], prm["bx"])
    zp = T.linear(pe, prm["wpe"], prm["bpe"])
    u = T.concat_last_dim([zx, zp])
    q = T.swap_axes(T.reshape(T.linear(u, prm["wq"], prm["bq"]), (n, heads, dh)), 0, 1)
    k = T.swap_axes(T.reshape(T.linear(u, prm["wk"], prm["bk"]), (n, heads, dh)), 0, 1)
    v = T.swap_axes(T.reshape(T.linear(u, prm["wv"], prm["bv"]), (n, heads, dh)), 0, 1)
    p, ctx = _attend(q, k, v, np.ones((1, 1, n), dtype=bool))
    if capture is not None:
        capture.append({"kind": "global", "layer": layer, "clustering": None, "probs": p.data})
    return T.reshape(T.swap_axes(ctx, 0, 1), (n, d))


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; serializes to/from plain JSON."""

    conv_type: str
    use_clatt: bool = False
    clusterings: tuple = ()
    pe: str = "none"
    layers: int = 3
    hidden: int = 512
    heads: int = 4
    dropout: float = 0.0
    lr: float = 3e-4

    def validate(self) -> None:
        if self.conv_type not in CONV_TYPES:
            raise ValueError(f"conv_type must be one of {CONV_TYPES}, got {self.conv_type!r}")
        if self.pe not in PE_KINDS:
            raise ValueError(f"pe must be one of {PE_KINDS}, got {self.pe!r}")
        if self.use_clatt and not self.clusterings:
            raise ValueError("use_clatt requires a non-empty clusterings list")
        if self.conv_type == "GGT" and self.pe == "none":
            raise ValueError("GGT requires a positional encoding")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.hidden < 1:
            raise ValueError("hidden must be >= 1")
        needs_heads = self.use_clatt or self.conv_type in ("LGT", "GGT")
        if needs_heads:
            _check_heads(self.hidden, self.heads)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def name(self) -> str:
        base = self.conv_type
        if self.use_clatt:
            base += "-CLATT(" + ",".join(self.clusterings) + ")"
        return base

    def to_json(self) -> str:
        d = {
            "conv_type": self.conv_type,
            "use_clatt": self.use_clatt,
            "clusterings": list(self.clusterings),
            "pe": self.pe,
            "layers": self.layers,
            "hidden": self.hidden,
            "heads": self.heads,
            "dropout": self.dropout,
            "lr": self.lr,
        }
        return json.dumps(d)

    @staticmethod
    def from_json(text: str) -> "ModelSpec":
        d = json.loads(text)
        spec = ModelSpec(
            conv_type=d["conv_type"],
            use_clatt=bool(d.get("use_clatt", False)),
            clusterings=tuple(d.get("clusterings", ())),
            pe=d.get("pe", "none"),
            layers=int(d.get("layers", 3)),
            hidden=int(d.get("hidden", 512)),
            heads=int(d.get("heads", 4)),
            dropout=float(d.get("dropout", 0.0)),
            lr=float(d.get("lr", 3e-4)),
        )
        spec.validate()
        return spec


def _glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


def init_params(spec: ModelSpec, in_dim: int, out_dim: int, seed: int = 0, pe_dim: int | None = None) -> dict:
    """Fresh parameter dict; every layer gets its own attention weights."""
    spec.validate()
    rng = np.random.default_rng(seed)
    d = spec.hidden
    params: dict[str, T.Tensor] = {}

    def w(name, fan_in, fan_out):
        params[name] = T.Tensor(_glorot(rng, fan_in, fan_out), requires_grad=True)

    def b(name, dim):
        params[name] = T.Tensor(np.zeros(dim), requires_grad=True)

    def qkv(prefix, in_d=None):
        src = d if in_d is None else in_d
        for part in ("q", "k", "v"):
            w(f"{prefix}.w{part}", src, d)
            b(f"{prefix}.b{part}", d)

    def norm(prefix):
        params[prefix + ".g"] = T.Tensor(np.ones(d), requires_grad=True)
        params[prefix + ".b"] = T.Tensor(np.zeros(d), requires_grad=True)

    w("enc.w", in_dim, d)
    b("enc.b", d)
    for i in range(spec.layers):
        lp = f"layer{i}"
        norm(lp + ".norm1")
        if spec.conv_type == "GCN":
            w(lp + ".conv.w", d, d)
            b(lp + ".conv.b", d)
        elif spec.conv_type == "SAGE":
            w(lp + ".conv.w", 2 * d, d)
            b(lp + ".conv.b", d)
        elif spec.conv_type == "LGT":
            qkv(lp + ".conv")
        else:  # GGT
            if pe_dim is None:
                raise ValueError("GGT needs pe_dim at init time")
            dx = d // 2
            w(lp + ".conv.wx", d, dx)
            b(lp + ".conv.bx", dx)
            w(lp + ".conv.wpe", pe_dim, d - dx)
            b(lp + ".conv.bpe", d - dx)
            qkv(lp + ".conv")
        if spec.use_clatt:
            for tag in spec.clusterings:
                qkv(f"{lp}.clatt.{tag}")
            w(lp + ".fuse.w", d + d * len(spec.clusterings), d)
            b(lp + ".fuse.b", d)
        norm(lp + ".norm2")
        w(lp + ".mlp.w1", d, d)
        b(lp + ".mlp.b1", d)
        w(lp + ".mlp.w2", d, d)
        b(lp + ".mlp.b2", d)
    norm("final_norm")
    w("head.w", d, out_dim)
    b("head.b", out_dim)
    return params


@dataclass
class ModelInputs:
    """Precomputed graph-side structures one model spec needs."""

    x: np.ndarray
    n: int
    adj_norm: sp.csr_matrix | None = None
    mean_mat: sp.csr_matrix | None = None
    nbr_table: np.ndarray | None = None
    nbr_mask: np.ndarray | None = None
    pe: np.ndarray | None = None
    batches: list = field(default_factory=list)
    tags: tuple = ()


def prepare_inputs(g, features: np.ndarray, spec: ModelSpec, clusterings: dict | None = None, pe: np.ndarray | None = None) -> ModelInputs:
    """Build exactly the structures model_forward will touch."""
    spec.validate()
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != g.n:
        raise ValueError(f"features have {features.shape[0]} rows for a {g.n}-node graph")
    inp = ModelInputs(x=features, n=g.n)
    if spec.conv_type == "GCN":
        inp.adj_norm = gcn_matrix(g)
    elif spec.conv_type == "SAGE":
        inp.mean_mat = mean_matrix(g)
    elif spec.conv_type == "LGT":
        inp.nbr_table, inp.nbr_mask = neighborhood_table(g)
    else:
        if pe is None:
            raise ValueError("GGT requires a positional encoding array")
    if pe is not None:
        pe = np.asarray(pe, dtype=np.float64)
        if pe.shape[0] != g.n:
            raise ValueError(f"pe has {pe.shape[0]} rows for a {g.n}-node graph")
        inp.pe = pe
    if spec.use_clatt:
        clusterings = clusterings or {}
        missing = [t for t in spec.clusterings if t not in clusterings]
        if missing:
            raise ValueError(f"missing clusterings for tags {missing}")
        inp.batches = [build_cluster_batch(clusterings[t]) for t in spec.clusterings]
        inp.tags = tuple(spec.clusterings)
    return inp


def _layer_prm(params: dict, prefix: str) -> dict:
    plen = len(prefix)
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix)}


def model_forward(
    spec: ModelSpec,
    params: dict,
    inp: ModelInputs,
    training: bool = False,
    dropout_rng: np.random.Generator | None = None,
    capture=None,
) -> T.Tensor:
    """Encoder, residual Mix/MLP blocks, final norm plus linear head."""
    spec.validate()
    use_dropout = training and spec.dropout > 0.0
    if use_dropout and dropout_rng is None:
        raise ValueError("training with dropout needs a dropout_rng")
    x = T.Tensor(inp.x)
    h = T.linear(x, params["enc.w"], params["enc.b"])
    pe_t = T.Tensor(inp.pe) if inp.pe is not None else None
    for i in range(spec.layers):
        lp = f"layer{i}"
        z = T.layer_norm(h, params[lp + ".norm1.g"], params[lp + ".norm1.b"])
        if spec.conv_type == "GCN":
            mix = gcn_conv(z, inp.adj_norm, params[lp + ".conv.w"], params[lp + ".conv.b"])
        elif spec.conv_type == "SAGE":
            mix = sage_conv(z, inp.mean_mat, params[lp + ".conv.w"], params[lp + ".conv.b"])
        elif spec.conv_type == "LGT":
            mix = local_attention_conv(
                z, inp.nbr_table, inp.nbr_mask, _layer_prm(params, lp + ".conv."), spec.heads, capture=capture, layer=i
            )
        else:
            mix = global_attention(z, pe_t, _layer_prm(params, lp + ".conv."), spec.heads, capture=capture, layer=i)
        if spec.use_clatt:
            groups = [_layer_prm(params, f"{lp}.clatt.{tag}.") for tag in spec.clusterings]
            cl = clatt_forward(z, inp.batches, groups, spec.heads, capture=capture, tags=inp.tags, layer=i)
            mix = fuse(mix, cl, params[lp + ".fuse.w"], params[lp + ".fuse.b"])
        if use_dropout:
            mix = T.dropout(mix, spec.dropout, dropout_rng)
        h = T.add(h, mix)
        z2 = T.layer_norm(h, params[lp + ".norm2.g"], params[lp + ".norm2.b"])
        m = T.linear(T.gelu(T.linear(z2, params[lp + ".mlp.w1"], params[lp + ".mlp.b1"])), params[lp + ".mlp.w2"], params[lp + ".mlp.b2"])
        if use_dropout:
            m = T.dropout(m, spec.dropout, dropout_rng)
        h = T.add(h, m)
    hn = T.layer_norm(h, params["final_norm.g"], params["final_norm.b"])
    return T.linear(hn, params["head.w"], params["head.b"])
