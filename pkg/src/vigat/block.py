"""Graph-attention block over a fully connected set of feature nodes.

Two learned affine maps embed every node; pairwise dot products of the two
embeddings give raw attention scores whose squares, row-normalized, form
the adjacency matrix. The node features are then propagated through M
layers of (adjacency @ nodes @ weight) followed by layer normalization and
ReLU, and the final node features are mean-pooled into one vector.

Because the adjacency is row-stochastic, its column sums measure how much
total weight each node receives from the whole graph; those sums are the
weighted-in-degrees used by the explanation stage.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, DimensionError
from .kernels import (
    GradPair,
    LAYER_NORM_EPS,
    ROW_NORM_EPS,
    affine_rows,
    affine_rows_backward,
    layernorm_rows,
    layernorm_rows_backward,
    matmul,
    mean_rows,
    mean_rows_backward,
    relu,
    relu_backward,
    row_sq_normalize,
    row_sq_normalize_backward,
)


@dataclass(eq=False)
class GatBlockParams:
    """Trainable tensors of one block: attention affines, per-layer
    propagation weights, and per-layer layer-norm gain/bias. Propagation
    layers carry no additive bias."""

    w_check: GradPair  # (F, F) attention embedding of the receiving node
    w_tilde: GradPair  # (F, F) attention embedding of the sending node
    b_check: GradPair  # (F,)
    b_tilde: GradPair  # (F,)
    gat_weights: list[GradPair]  # M of (F, F)
    ln_gains: list[GradPair]  # M of (F,)
    ln_biases: list[GradPair]  # M of (F,)

    @property
    def feature_dim(self) -> int:
        return self.w_check.value.shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.gat_weights)

    def grad_pairs(self) -> list[GradPair]:
        return [
            self.w_check,
            self.w_tilde,
            self.b_check,
            self.b_tilde,
            *self.gat_weights,
            *self.ln_gains,
            *self.ln_biases,
        ]

    def zero_grads(self) -> None:
        for pair in self.grad_pairs():
            pair.zero_grad()

    def param_count(self) -> int:
        return sum(p.value.size for p in self.grad_pairs())


def init_block(
    feature_dim: int,
    n_layers: int,
    rng: np.random.Generator,
    dtype=np.float32,
) -> GatBlockParams:
    """Identity-centered init: every square map starts at I plus uniform
    noise of scale 1/(5 sqrt(F)); biases zero, layer-norm gain one, bias
    zero.

    The block then begins life as a similarity-weighted feature averager
    (attention scores are near raw dot products, propagation near the
    adjacency itself), so gradient steps refine the attention instead of
    first untangling random projections. That matters because the head
    trains on frozen input features, often for few optimizer steps.
    """
    if feature_dim < 1 or n_layers < 1:
        raise ValueError(f"need feature_dim >= 1 and n_layers >= 1, got {feature_dim}, {n_layers}")
    f = feature_dim
    noise = 1.0 / (5.0 * np.sqrt(f))

    def weight():
        jitter = rng.uniform(-noise, noise, size=(f, f))
        return GradPair.of((np.eye(f) + jitter).astype(dtype))

    return GatBlockParams(
        w_check=weight(),
        w_tilde=weight(),
        b_check=GradPair.of(np.zeros(f, dtype=dtype)),
        b_tilde=GradPair.of(np.zeros(f, dtype=dtype)),
        gat_weights=[weight() for _ in range(n_layers)],
        ln_gains=[GradPair.of(np.ones(f, dtype=dtype)) for _ in range(n_layers)],
        ln_biases=[GradPair.of(np.zeros(f, dtype=dtype)) for _ in range(n_layers)],
    )


@dataclass(eq=False)
class BlockTrace:
    """Everything the forward pass saw, kept for the backward pass and for
    explanation extraction. Arrays carry whatever leading batch axes the
    input had; for a single graph they are (K, F) / (K, K) shaped."""

    params: GatBlockParams
    nodes: np.ndarray  # block input
    v_check: np.ndarray
    v_tilde: np.ndarray
    e_scores: np.ndarray  # raw pairwise attention scores, pre-normalization
    adjacency: np.ndarray  # row-normalized squared scores
    pre_norm: list[np.ndarray] = field(default_factory=list)  # per layer, before layer norm
    normed: list[np.ndarray] = field(default_factory=list)  # per layer, before ReLU
    layer_inputs: list[np.ndarray] = field(default_factory=list)  # node features per depth
    pooled: np.ndarray = None

    def slice_batch(self, index: int) -> "BlockTrace":
        """View of one graph out of a batched trace."""
        return BlockTrace(
            params=self.params,
            nodes=self.nodes[index],
            v_check=self.v_check[index],
            v_tilde=self.v_tilde[index],
            e_scores=self.e_scores[index],
            adjacency=self.adjacency[index],
            pre_norm=[a[index] for a in self.pre_norm],
            normed=[a[index] for a in self.normed],
            layer_inputs=[a[index] for a in self.layer_inputs],
            pooled=self.pooled[index],
        )


def block_forward(params: GatBlockParams, nodes: np.ndarray) -> BlockTrace:
    """Run the block on (..., K, F) nodes; returns the full trace."""
    nodes = np.asarray(nodes)
    if nodes.ndim < 2 or nodes.shape[-1] != params.feature_dim:
        raise DimensionError(
            f"block input must be (..., K, {params.feature_dim}), got {nodes.shape}"
        )
    v_check = affine_rows(nodes, params.w_check.value, params.b_check.value)
    v_tilde = affine_rows(nodes, params.w_tilde.value, params.b_tilde.value)
    e_scores = matmul(v_check, np.swapaxes(v_tilde, -1, -2))
    adjacency = row_sq_normalize(e_scores, ROW_NORM_EPS)

    trace = BlockTrace(
        params=params,
        nodes=nodes,
        v_check=v_check,
        v_tilde=v_tilde,
        e_scores=e_scores,
        adjacency=adjacency,
        layer_inputs=[nodes],
    )
    z = nodes
    for m in range(params.n_layers):
        pre = matmul(matmul(adjacency, z), params.gat_weights[m].value)
        normed = layernorm_rows(
            pre, params.ln_gains[m].value, params.ln_biases[m].value, LAYER_NORM_EPS
        )
        z = relu(normed)
        trace.pre_norm.append(pre)
        trace.normed.append(normed)
        trace.layer_inputs.append(z)
    trace.pooled = mean_rows(z)
    return trace


def _check_trace(params: GatBlockParams, trace: BlockTrace) -> None:
    if trace.params is not params:
        raise ConsistencyError(
            "trace was produced by a different parameter set than the one passed"
        )
    if len(trace.layer_inputs) != params.n_layers + 1:
        raise ConsistencyError(
            f"trace depth {len(trace.layer_inputs) - 1} does not match "
            f"params depth {params.n_layers}"
        )


def block_backward(
    params: GatBlockParams,
    trace: BlockTrace,
    d_pooled: np.ndarray | None = None,
    d_adjacency: np.ndarray | None = None,
) -> np.ndarray:
    """Accumulate parameter gradients; returns the gradient w.r.t. the input.

    ``d_pooled`` is the upstream gradient on the pooled output (..., F);
    ``d_adjacency`` optionally injects a gradient directly on the adjacency
    matrix (..., K, K). At least one must be given.
    """
    _check_trace(params, trace)
    if d_pooled is None and d_adjacency is None:
        raise ValueError("block_backward needs d_pooled and/or d_adjacency")
    k = trace.nodes.shape[-2]

    if d_pooled is not None:
        d_pooled = np.asarray(d_pooled)
        if d_pooled.shape != trace.pooled.shape:
            raise DimensionError(
                f"d_pooled shape {d_pooled.shape} does not match pooled {trace.pooled.shape}"
            )
        dz = mean_rows_backward(d_pooled, k)
    else:
        dz = np.zeros_like(trace.layer_inputs[-1])

    da = np.zeros_like(trace.adjacency)
    if d_adjacency is not None:
        d_adjacency = np.asarray(d_adjacency)
        if d_adjacency.shape != trace.adjacency.shape:
            raise DimensionError(
                f"d_adjacency shape {d_adjacency.shape} does not match "
                f"adjacency {trace.adjacency.shape}"
            )
        da = da + d_adjacency

    adj_t = np.swapaxes(trace.adjacency, -1, -2)
    for m in reversed(range(params.n_layers)):
        d_normed = relu_backward(dz, trace.normed[m])
        d_pre, d_gain, d_bias = layernorm_rows_backward(
            d_normed, trace.pre_norm[m], params.ln_gains[m].value, LAYER_NORM_EPS
        )
        params.ln_gains[m].accumulate(d_gain)
        params.ln_biases[m].accumulate(d_bias)

        z_prev = trace.layer_inputs[m]
        propagated = matmul(trace.adjacency, z_prev)  # cheap to recompute
        flat_p = propagated.reshape(-1, propagated.shape[-1])
        flat_g = d_pre.reshape(-1, d_pre.shape[-1])
        params.gat_weights[m].accumulate(flat_p.T @ flat_g)
        d_propagated = d_pre @ params.gat_weights[m].value.T
        da += matmul(d_propagated, np.swapaxes(z_prev, -1, -2))
        dz = matmul(adj_t, d_propagated)

    d_e = row_sq_normalize_backward(da, trace.e_scores, ROW_NORM_EPS)
    d_v_check = matmul(d_e, trace.v_tilde)
    d_v_tilde = matmul(np.swapaxes(d_e, -1, -2), trace.v_check)

    dn_check, dw_check, db_check = affine_rows_backward(
        d_v_check, trace.nodes, params.w_check.value
    )
    dn_tilde, dw_tilde, db_tilde = affine_rows_backward(
        d_v_tilde, trace.nodes, params.w_tilde.value
    )
    params.w_check.accumulate(dw_check)
    params.b_check.accumulate(db_check)
    params.w_tilde.accumulate(dw_tilde)
    params.b_tilde.accumulate(db_tilde)
    return dz + dn_check + dn_tilde


def wid_column_sums(adjacency: np.ndarray) -> np.ndarray:
    """Weighted in-degree of every node: column sums of the adjacency.

    Rows are normalized to sum to one, so the column sums total K and
    measure how much attention each node collects from the whole graph.
    """
    adjacency = np.asarray(adjacency)
    if adjacency.ndim < 2 or adjacency.shape[-1] != adjacency.shape[-2]:
        raise DimensionError(f"adjacency must be square, got shape {adjacency.shape}")
    return adjacency.sum(axis=-2)
