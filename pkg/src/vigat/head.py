"""The factorized attention head: frame block, per-frame object block,
temporal block over pooled object features, and a two-layer classifier.

One video is processed as N + 2 block invocations. The frame block sees
the N x F frame features once; the object block runs once per frame on
that frame's K x F object features; their pooled outputs are stacked into
an N x F matrix fed to the temporal block. The frame-block and temporal-
block pooled vectors are concatenated (2F) and classified by two fully
connected layers with dropout between them.

Under weight tying a single block parameter set serves all three roles, so
its gradient is automatically the sum over all N + 2 invocations; untied
heads keep three independent blocks (frame / object / temporal).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .block import BlockTrace, GatBlockParams, block_backward, block_forward, init_block
from .errors import ConsistencyError, DimensionError
from .kernels import (
    GradPair,
    concat,
    dropout,
    dropout_backward,
    sigmoid,
    sigmoid_backward,
    softmax_row,
    softmax_row_backward,
)
from .packs import FeaturePack

OUTPUT_MODES = ("multilabel", "singlelabel")

# Block role indices into an untied head's block list.
ROLE_FRAMES = 0
ROLE_OBJECTS = 1
ROLE_TEMPORAL = 2


@dataclass(eq=False)
class HeadParams:
    """All trainable state plus the structural flags that shape it.

    ``version`` counts optimizer updates; traces remember the version they
    were computed against so a stale trace cannot feed a backward pass.
    """

    tied: bool
    blocks: list[GatBlockParams]  # one entry when tied, three when untied
    u1_weight: GradPair  # (F, 2F)
    u1_bias: GradPair  # (F,)
    u2_weight: GradPair  # (C, F)
    u2_bias: GradPair  # (C,)
    dropout_rate: float
    output_mode: str
    version: int = 0

    @property
    def feature_dim(self) -> int:
        return self.blocks[0].feature_dim

    @property
    def n_layers(self) -> int:
        return self.blocks[0].n_layers

    @property
    def n_classes(self) -> int:
        return self.u2_weight.value.shape[0]

    @property
    def dtype(self):
        return self.u1_weight.value.dtype

    def block_for(self, role: int) -> GatBlockParams:
        return self.blocks[0] if self.tied else self.blocks[role]

    def grad_pairs(self) -> list[GradPair]:
        pairs = []
        for block in self.blocks:
            pairs.extend(block.grad_pairs())
        pairs.extend([self.u1_weight, self.u1_bias, self.u2_weight, self.u2_bias])
        return pairs

    def zero_grads(self) -> None:
        for pair in self.grad_pairs():
            pair.zero_grad()

    def clone(self) -> "HeadParams":
        return copy.deepcopy(self)


def param_count(params: HeadParams) -> int:
    return sum(p.value.size for p in params.grad_pairs())


def init_head(
    feature_dim: int,
    n_classes: int,
    n_layers: int = 2,
    tied: bool = True,
    output_mode: str = "singlelabel",
    dropout_rate: float = 0.5,
    seed: int = 0,
    dtype=np.float32,
) -> HeadParams:
    """Seeded initialization. Blocks start identity-centered (see
    ``init_block``), the first classifier layer starts as a mean of the two
    embedding halves, and the final layer starts at zero."""
    if output_mode not in OUTPUT_MODES:
        raise ValueError(f"output_mode must be one of {OUTPUT_MODES}, got {output_mode!r}")
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    if n_classes < 1:
        raise ValueError(f"need at least one class, got {n_classes}")
    rng = np.random.default_rng(seed)
    f = feature_dim
    n_blocks = 1 if tied else 3
    blocks = [init_block(f, n_layers, rng, dtype) for _ in range(n_blocks)]
    noise = 1.0 / (5.0 * np.sqrt(f))

    # First classifier layer starts as the average of the frame and object
    # halves of the video embedding; the final layer starts at zero so the
    # logits begin unbiased at exactly zero (loss log C) and the class rows
    # grow purely out of the data.
    fuse = np.hstack([np.eye(f), np.eye(f)]) / 2.0
    u1 = fuse + rng.uniform(-noise, noise, size=(f, 2 * f))

    return HeadParams(
        tied=tied,
        blocks=blocks,
        u1_weight=GradPair.of(u1.astype(dtype)),
        u1_bias=GradPair.of(np.zeros(f, dtype=dtype)),
        u2_weight=GradPair.of(np.zeros((n_classes, f), dtype=dtype)),
        u2_bias=GradPair.of(np.zeros(n_classes, dtype=dtype)),
        dropout_rate=dropout_rate,
        output_mode=output_mode,
    )


@dataclass(eq=False)
class HeadTrace:
    """Forward record of one video: block traces, classifier intermediates,
    and the final scores."""

    params_version: int
    frame_trace: BlockTrace  # block over the N frame features
    object_trace: BlockTrace  # batched block over N graphs of K objects
    temporal_trace: BlockTrace  # block over the N pooled object vectors
    h_matrix: np.ndarray  # (N, F) pooled object vectors
    zeta: np.ndarray  # (2F,) concatenated video embedding
    hidden: np.ndarray  # (F,) first classifier layer output
    dropped: np.ndarray  # (F,) hidden after dropout
    dropout_mask: np.ndarray | None
    logits: np.ndarray  # (C,)
    scores: np.ndarray  # (C,) after sigmoid / softmax
    train: bool
    frame_indices: np.ndarray | None = None  # set by subset inference

    @property
    def object_traces(self) -> list[BlockTrace]:
        """Per-frame views into the batched object-block trace."""
        n = self.h_matrix.shape[0]
        return [self.object_trace.slice_batch(i) for i in range(n)]


def _check_pack_dims(params: HeadParams, pack: FeaturePack) -> None:
    if pack.n_features != params.feature_dim:
        raise DimensionError(
            f"pack {pack.video_id!r} has feature dim {pack.n_features}, "
            f"head expects {params.feature_dim}"
        )
    if pack.n_classes != params.n_classes:
        raise DimensionError(
            f"pack {pack.video_id!r} has {pack.n_classes} classes, "
            f"head expects {params.n_classes}"
        )


def head_forward(
    params: HeadParams,
    pack: FeaturePack,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> HeadTrace:
    """Score one video; the returned trace supports backward and explanation."""
    _check_pack_dims(params, pack)
    dtype = params.dtype
    frame_feats = np.asarray(pack.frame_feats, dtype=dtype)
    object_feats = np.asarray(pack.object_feats, dtype=dtype)

    frame_trace = block_forward(params.block_for(ROLE_FRAMES), frame_feats)
    object_trace = block_forward(params.block_for(ROLE_OBJECTS), object_feats)
    h_matrix = object_trace.pooled  # (N, F)
    temporal_trace = block_forward(params.block_for(ROLE_TEMPORAL), h_matrix)

    zeta = concat(frame_trace.pooled, temporal_trace.pooled)
    hidden = params.u1_weight.value @ zeta + params.u1_bias.value
    dropped, mask = dropout(hidden, params.dropout_rate, train, rng)
    logits = params.u2_weight.value @ dropped + params.u2_bias.value
    scores = sigmoid(logits) if params.output_mode == "multilabel" else softmax_row(logits)

    return HeadTrace(
        params_version=params.version,
        frame_trace=frame_trace,
        object_trace=object_trace,
        temporal_trace=temporal_trace,
        h_matrix=h_matrix,
        zeta=zeta,
        hidden=hidden,
        dropped=dropped,
        dropout_mask=mask,
        logits=logits,
        scores=scores,
        train=train,
    )


def head_forward_subset(
    params: HeadParams,
    pack: FeaturePack,
    frame_indices,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> HeadTrace:
    """Score a video using only the selected frames.

    Indices must be non-empty, strictly increasing and within range.
    Selecting every frame reproduces full inference bit for bit.
    """
    idx = np.asarray(frame_indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("frame_indices must be a non-empty 1-D index list")
    if (np.diff(idx) <= 0).any():
        raise ValueError(f"frame_indices must be strictly increasing, got {idx.tolist()}")
    if idx[0] < 0 or idx[-1] >= pack.n_frames:
        raise ValueError(
            f"frame_indices must lie in [0, {pack.n_frames}), got {idx.tolist()}"
        )
    trace = head_forward(params, pack.restrict_frames(idx), train=train, rng=rng)
    trace.frame_indices = idx
    return trace


def head_backward(params: HeadParams, trace: HeadTrace, loss_grad: np.ndarray) -> None:
    """Accumulate gradients of the loss into every parameter's holder.

    ``loss_grad`` is d(loss)/d(scores), length C. Under tying the shared
    block receives the sum of all N + 2 role contributions because every
    role accumulates into the same holders.
    """
    if trace.params_version != params.version:
        raise ConsistencyError(
            f"trace is stale: computed at parameter version {trace.params_version}, "
            f"parameters are now at {params.version}"
        )
    loss_grad = np.asarray(loss_grad)
    if loss_grad.shape != trace.scores.shape:
        raise DimensionError(
            f"loss_grad shape {loss_grad.shape} does not match scores {trace.scores.shape}"
        )

    if params.output_mode == "multilabel":
        d_logits = sigmoid_backward(loss_grad, trace.scores)
    else:
        d_logits = softmax_row_backward(loss_grad, trace.scores)

    params.u2_weight.accumulate(np.outer(d_logits, trace.dropped))
    params.u2_bias.accumulate(d_logits)
    d_dropped = params.u2_weight.value.T @ d_logits
    d_hidden = dropout_backward(d_dropped, trace.dropout_mask)
    params.u1_weight.accumulate(np.outer(d_hidden, trace.zeta))
    params.u1_bias.accumulate(d_hidden)
    d_zeta = params.u1_weight.value.T @ d_hidden

    f = params.feature_dim
    d_frame_pooled = d_zeta[:f]
    d_temporal_pooled = d_zeta[f:]

    d_h = block_backward(
        params.block_for(ROLE_TEMPORAL), trace.temporal_trace, d_pooled=d_temporal_pooled
    )
    block_backward(params.block_for(ROLE_OBJECTS), trace.object_trace, d_pooled=d_h)
    block_backward(params.block_for(ROLE_FRAMES), trace.frame_trace, d_pooled=d_frame_pooled)
