"""Explanation extraction: which frames and objects drove a prediction.

The attention adjacency of every block is row-stochastic, so each node's
column sum (weighted in-degree) measures how much attention the whole
graph pays to it. Frame saliency comes from two such vectors: the frame
block's (computed on frame features) and the temporal block's (computed
on pooled object features). Criteria combine them per frame; object
saliency ranks the K objects inside each frame the same way.

Two baselines are included for the evaluation harness: a gradient-weighted
activation score on the temporal block's final node features, and seeded
random rankings.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .block import wid_column_sums
from .head import HeadParams, HeadTrace, head_forward
from .kernels import relu
from .packs import FeaturePack

WID_CRITERIA = ("mean", "max", "local_only", "global_only")
ALL_CRITERIA = WID_CRITERIA + ("gradcam", "random")

# Accept the short CLI spellings everywhere.
_ALIASES = {"local": "local_only", "global": "global_only"}


def canonical_criterion(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in ALL_CRITERIA:
        raise ValueError(f"unknown criterion {name!r}; expected one of {ALL_CRITERIA}")
    return name


def rank_descending(values: np.ndarray) -> np.ndarray:
    """Indices sorted by descending value; ties go to the lower index."""
    values = np.asarray(values)
    return np.argsort(-values, kind="stable")


def frame_wids(trace: HeadTrace) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame weighted in-degrees from the frame block and the temporal
    block; each vector sums to N."""
    omega1 = wid_column_sums(trace.frame_trace.adjacency)
    omega3 = wid_column_sums(trace.temporal_trace.adjacency)
    return omega1, omega3


def frame_criterion(omega1: np.ndarray, omega3: np.ndarray, kind: str) -> np.ndarray:
    """Combine the two frame in-degree vectors into one saliency vector."""
    kind = canonical_criterion(kind)
    omega1 = np.asarray(omega1)
    omega3 = np.asarray(omega3)
    if omega1.shape != omega3.shape:
        raise ValueError(f"in-degree shapes differ: {omega1.shape} vs {omega3.shape}")
    if kind == "mean":
        return (omega1 + omega3) / 2.0
    if kind == "max":
        return np.maximum(omega1, omega3)
    if kind == "local_only":
        return omega3.copy()
    if kind == "global_only":
        return omega1.copy()
    raise ValueError(f"criterion {kind!r} is not an in-degree combination")


def object_wids(trace: HeadTrace) -> np.ndarray:
    """Per-frame object in-degrees, shape (N, K); each row sums to K."""
    return wid_column_sums(trace.object_trace.adjacency)


def gradcam_frame_scores(
    params: HeadParams, trace: HeadTrace, target_class: int | None = None
) -> np.ndarray:
    """Gradient-weighted activation score per frame.

    Differentiates the target class logit w.r.t. the temporal block's
    final-layer node features, averages that gradient over nodes (with
    mean pooling every node shares it), and scores each frame by the
    ReLU'd inner product of its node features with that direction.
    Requires an inference-mode trace so the classifier path is dropout
    free.
    """
    if trace.dropout_mask is not None:
        raise ValueError("gradient-weighted scores need an inference-mode trace")
    if target_class is None:
        target_class = int(np.argmax(trace.scores))
    c = params.n_classes
    if not 0 <= target_class < c:
        raise ValueError(f"target_class must lie in [0, {c}), got {target_class}")
    f = params.feature_dim
    node_feats = trace.temporal_trace.layer_inputs[-1]  # (N, F)
    n = node_feats.shape[0]
    # d logit / d zeta, then the temporal half; mean pooling spreads it as
    # (1/N) to every node, and the node average equals that shared row.
    d_zeta = params.u1_weight.value.T @ params.u2_weight.value[target_class]
    alpha = d_zeta[f:] / n
    return relu(node_feats @ alpha)


def random_frame_ranking(n_frames: int, trials: int, seed) -> list[np.ndarray]:
    """Seeded uniform permutations of the frame indices, one per trial."""
    if n_frames < 1 or trials < 1:
        raise ValueError(f"need n_frames >= 1 and trials >= 1, got {n_frames}, {trials}")
    rng = np.random.default_rng(seed)
    return [rng.permutation(n_frames) for _ in range(trials)]


@dataclass
class FrameSaliency:
    """Frame-level explanation of one prediction."""

    criterion: str
    scores: np.ndarray  # the active criterion's per-frame values
    ranking: np.ndarray  # frame indices, most salient first
    omega1: np.ndarray  # frame-block in-degrees
    omega3: np.ndarray  # temporal-block in-degrees
    beta: np.ndarray  # their mean
    gradcam: np.ndarray | None = None


@dataclass
class ObjectSaliency:
    """Object-level explanation: in-degrees and rankings inside each frame."""

    wids: np.ndarray  # (N, K)
    rankings: np.ndarray  # (N, K) object indices, most salient first


def build_frame_saliency(
    params: HeadParams,
    trace: HeadTrace,
    criterion: str,
    target_class: int | None = None,
    seed: int = 0,
) -> FrameSaliency:
    """Frame saliency under any supported criterion, from one full trace."""
    kind = canonical_criterion(criterion)
    omega1, omega3 = frame_wids(trace)
    beta = (omega1 + omega3) / 2.0
    gradcam = None
    if kind in WID_CRITERIA:
        scores = frame_criterion(omega1, omega3, kind)
        ranking = rank_descending(scores)
    elif kind == "gradcam":
        gradcam = gradcam_frame_scores(params, trace, target_class)
        scores = gradcam
        ranking = rank_descending(scores)
    else:  # random
        ranking = random_frame_ranking(omega1.shape[0], 1, seed)[0]
        # Descending rank weights so the export schema stays score-shaped.
        scores = np.empty(len(ranking), dtype=np.float64)
        scores[ranking] = np.arange(len(ranking), 0, -1, dtype=np.float64)
    return FrameSaliency(
        criterion=kind,
        scores=np.asarray(scores),
        ranking=ranking,
        omega1=omega1,
        omega3=omega3,
        beta=beta,
        gradcam=gradcam,
    )


def build_object_saliency(trace: HeadTrace) -> ObjectSaliency:
    wids = object_wids(trace)
    rankings = np.stack([rank_descending(row) for row in wids])
    return ObjectSaliency(wids=wids, rankings=rankings)


def explanation_export(
    params: HeadParams,
    pack: FeaturePack,
    criterion: str,
    seed: int = 0,
) -> dict:
    """JSON-ready explanation of one video's prediction."""
    trace = head_forward(params, pack, train=False)
    saliency = build_frame_saliency(params, trace, criterion, seed=seed)
    objects = build_object_saliency(trace)
    per_frame = []
    for n in range(pack.n_frames):
        ranked = [
            {
                "object_index": int(k),
                "class_name": pack.object_classes[n][k],
                "confidence": float(pack.object_confidences[n, k]),
                "wid": float(objects.wids[n, k]),
            }
            for k in objects.rankings[n]
        ]
        per_frame.append({"frame": n, "ranked": ranked})
    return {
        "video_id": pack.video_id,
        "predicted_class": int(np.argmax(trace.scores)),
        "criterion": saliency.criterion,
        "frame_scores": [float(v) for v in saliency.scores],
        "ranked_frames": [int(i) for i in saliency.ranking],
        "per_frame_objects": per_frame,
    }


def precision_at(ranking, relevant, k: int) -> float:
    """Fraction of the top-k ranked items that are relevant."""
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    top = list(ranking)[:k]
    relevant = set(int(r) for r in relevant)
    return sum(1 for i in top if int(i) in relevant) / k
