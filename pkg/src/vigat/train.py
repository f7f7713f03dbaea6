"""Training loop, Adam optimizer, milestone learning-rate schedule, and the
evaluation metrics (top-1 accuracy and mean average precision).

The loop is deterministic for a fixed seed: epoch shuffles and dropout
streams are derived generators keyed by (seed, epoch, batch), batches keep
their shuffled order, and the final incomplete batch is trained like any
other. Per-epoch rows (epoch, lr, train_loss, test_metric) are logged and
the best-test-metric parameter snapshot is retained alongside the final
one.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import DatasetError, DimensionError
from .head import HeadParams, head_forward, head_backward, init_head
from .packs import DatasetManifest, FeaturePack, check_consistent_packs

logger = logging.getLogger("vigat.train")

# Stream tags keep the shuffle and dropout draws on disjoint substreams.
_SHUFFLE_TAG = 7919
_DROPOUT_TAG = 104729

LOG_HEADER = ("epoch", "lr", "train_loss", "test_metric")


@dataclass
class HeadConfig:
    """Structural choices for a fresh head; data supplies F and C."""

    n_layers: int = 2
    tied: bool = True
    dropout_rate: float = 0.5


@dataclass
class TrainConfig:
    epochs: int
    lr0: float = 1e-4
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1
    batch_size: int = 64
    seed: int = 0
    mode: str = "singlelabel"

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {self.milestones}")
        if self.milestones and not 0 < self.milestones[-1] < self.epochs:
            raise ValueError(
                f"milestones must lie strictly inside (0, {self.epochs}), got {self.milestones}"
            )
        if self.mode not in ("multilabel", "singlelabel"):
            raise ValueError(f"unknown mode {self.mode!r}")


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Learning rate for a zero-based epoch: lr0 scaled by gamma once per
    milestone already reached."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    passed = sum(1 for m in config.milestones if m <= epoch)
    return config.lr0 * config.gamma**passed


_CLIP = 1e-7


def loss_and_grad(scores: np.ndarray, labels: np.ndarray, mode: str):
    """Loss on post-nonlinearity scores and its gradient d(loss)/d(scores).

    Multilabel: mean binary cross-entropy over classes. Singlelabel:
    categorical cross-entropy against the single positive label. Scores
    are clipped away from 0/1 inside the logs; the gradient is zero where
    the clip is active so it stays the exact derivative of the returned
    value.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DimensionError(
            f"scores shape {scores.shape} does not match labels {labels.shape}"
        )
    interior = (scores > _CLIP) & (scores < 1.0 - _CLIP)
    s = np.clip(scores, _CLIP, 1.0 - _CLIP)
    y = labels.astype(np.float64)
    if mode == "multilabel":
        c = scores.shape[0]
        loss = -np.mean(y * np.log(s) + (1.0 - y) * np.log1p(-s))
        grad = (-y / s + (1.0 - y) / (1.0 - s)) / c
    elif mode == "singlelabel":
        positives = np.flatnonzero(labels)
        if positives.size != 1:
            raise ValueError(
                f"singlelabel loss needs exactly one positive label, got {positives.size}"
            )
        u = positives[0]
        loss = -np.log(s[u])
        grad = np.zeros_like(s)
        grad[u] = -1.0 / s[u]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    grad *= interior
    return float(loss), grad


class AdamState:
    """First/second moment buffers, one pair per parameter holder."""

    def __init__(self, params: HeadParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self._pairs = params.grad_pairs()
        self.m = [np.zeros_like(p.value, dtype=np.float64) for p in self._pairs]
        self.v = [np.zeros_like(p.value, dtype=np.float64) for p in self._pairs]


def adam_step(state: AdamState, params: HeadParams, lr: float) -> None:
    """One bias-corrected Adam update from the accumulated gradients."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    pairs = params.grad_pairs()
    if len(pairs) != len(state._pairs) or any(
        a is not b for a, b in zip(pairs, state._pairs)
    ):
        raise ValueError("optimizer state belongs to a different parameter set")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for pair, m, v in zip(pairs, state.m, state.v):
        g = pair.grad.astype(np.float64, copy=False)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        pair.value -= update.astype(pair.value.dtype, copy=False)
    params.version += 1


def top1_accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax score lands on a positive label."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise DimensionError(
            f"scores {scores.shape} and labels {labels.shape} must be equal 2-D shapes"
        )
    top = scores.argmax(axis=1)
    return float(np.mean(labels[np.arange(len(top)), top] == 1))


def average_precision(scores_col: np.ndarray, labels_col: np.ndarray) -> float | None:
    """AP for one class: precision averaged at every positive's rank.

    Ranking ties are broken by the smaller row index (stable sort). Returns
    None when the class has no positives.
    """
    scores_col = np.asarray(scores_col, dtype=np.float64)
    labels_col = np.asarray(labels_col)
    n_pos = int((labels_col == 1).sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores_col, kind="stable")
    hits = (labels_col[order] == 1).astype(np.float64)
    precision = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision[hits == 1].sum() / n_pos)


def mean_average_precision_detail(scores: np.ndarray, labels: np.ndarray):
    """Per-class APs (None where skipped) and their mean over scored classes."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise DimensionError(
            f"scores {scores.shape} and labels {labels.shape} must be equal 2-D shapes"
        )
    aps = [average_precision(scores[:, c], labels[:, c]) for c in range(scores.shape[1])]
    scored = [a for a in aps if a is not None]
    if not scored:
        raise ValueError("every class has zero positives; mAP is undefined")
    return float(np.mean(scored)), aps


def mean_average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    value, _ = mean_average_precision_detail(scores, labels)
    return value


def _metric_for_mode(mode: str):
    if mode == "singlelabel":
        return "top1", top1_accuracy
    return "mAP", mean_average_precision


def score_packs(
    params: HeadParams, packs: list[FeaturePack], workers: int = 1
) -> np.ndarray:
    """Inference scores for a pack list as a (Q, C) matrix."""
    def one(pack):
        return head_forward(params, pack, train=False).scores

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, packs))
    else:
        rows = [one(p) for p in packs]
    return np.stack(rows)


def labels_matrix(packs: list[FeaturePack]) -> np.ndarray:
    return np.stack([p.labels for p in packs])


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    test_metric: float


@dataclass
class TrainResult:
    params: HeadParams  # final-epoch parameters
    best_params: HeadParams  # snapshot at the best test metric
    log: list[EpochLog]
    metric_name: str
    best_epoch: int
    best_metric: float
    final_metric: float


def write_train_log(log: list[EpochLog], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as out:
        writer = csv.writer(out)
        writer.writerow(LOG_HEADER)
        for row in log:
            writer.writerow(
                [row.epoch, f"{row.lr:.10g}", f"{row.train_loss:.8f}", f"{row.test_metric:.8f}"]
            )


def fit_packs(
    train_packs: list[FeaturePack],
    test_packs: list[FeaturePack] | None,
    head_config: HeadConfig,
    config: TrainConfig,
    workers: int = 1,
) -> TrainResult:
    """Train a fresh head on pack lists. ``test_packs`` may be None, in
    which case the logged metric is NaN and the best snapshot is the final
    one."""
    train_packs = list(train_packs)
    if not train_packs:
        raise DatasetError("training split is empty")
    _, _, f, c = check_consistent_packs(
        train_packs + (list(test_packs) if test_packs else [])
    )
    if config.mode == "singlelabel":
        for pack in train_packs:
            if int(pack.labels.sum()) != 1:
                raise DatasetError(
                    f"singlelabel training requires exactly one positive label, "
                    f"pack {pack.video_id!r} has {int(pack.labels.sum())}"
                )
    metric_name, metric_fn = _metric_for_mode(config.mode)
    test_labels = labels_matrix(test_packs) if test_packs else None

    params = init_head(
        feature_dim=f,
        n_classes=c,
        n_layers=head_config.n_layers,
        tied=head_config.tied,
        output_mode=config.mode,
        dropout_rate=head_config.dropout_rate,
        seed=config.seed,
    )
    adam = AdamState(params)
    log: list[EpochLog] = []
    best_metric = -np.inf
    best_epoch = -1
    best_params = params.clone()

    n = len(train_packs)
    for epoch in range(config.epochs):
        lr = lr_at(config, epoch)
        order = np.random.default_rng([config.seed, _SHUFFLE_TAG, epoch]).permutation(n)
        loss_sum = 0.0
        for batch_no, start in enumerate(range(0, n, config.batch_size)):
            batch = order[start : start + config.batch_size]
            drop_rng = np.random.default_rng(
                [config.seed, _DROPOUT_TAG, epoch, batch_no]
            )
            params.zero_grads()
            for vid in batch:
                pack = train_packs[vid]
                trace = head_forward(params, pack, train=True, rng=drop_rng)
                loss, grad = loss_and_grad(trace.scores, pack.labels, config.mode)
                head_backward(params, trace, grad / len(batch))
                loss_sum += loss
            adam_step(adam, params, lr)

        if test_packs:
            metric = metric_fn(score_packs(params, test_packs, workers), test_labels)
        else:
            metric = float("nan")
        train_loss = loss_sum / n
        log.append(EpochLog(epoch, lr, train_loss, metric))
        logger.info(
            "epoch %d lr %.3g train_loss %.5f %s %.4f", epoch, lr, train_loss, metric_name, metric
        )
        if test_packs and metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_params = params.clone()

    final_metric = log[-1].test_metric
    if not test_packs:
        best_params = params.clone()
        best_epoch = config.epochs - 1
        best_metric = final_metric
    return TrainResult(
        params=params,
        best_params=best_params,
        log=log,
        metric_name=metric_name,
        best_epoch=best_epoch,
        best_metric=float(best_metric),
        final_metric=float(final_metric),
    )


def train_model(
    manifest: DatasetManifest,
    head_config: HeadConfig,
    config: TrainConfig,
    workers: int = 1,
) -> TrainResult:
    """Train on a manifest's train split, tracking the test split metric."""
    train_packs = manifest.load_split("train")
    test_packs = manifest.load_split("test")
    return fit_packs(train_packs, test_packs, head_config, config, workers=workers)


def layer_depth_sweep(
    manifest: DatasetManifest,
    layer_values,
    head_config: HeadConfig,
    config: TrainConfig,
    workers: int = 1,
) -> list[dict]:
    """Train one head per requested depth; returns comparable metric rows."""
    train_packs = manifest.load_split("train")
    test_packs = manifest.load_split("test")
    rows = []
    for m in layer_values:
        cfg = replace(head_config, n_layers=int(m))
        result = fit_packs(train_packs, test_packs, cfg, config, workers=workers)
        rows.append(
            {
                "layers": int(m),
                "metric_name": result.metric_name,
                "best_metric": result.best_metric,
                "final_metric": result.final_metric,
            }
        )
        logger.info("depth %d: best %.4f final %.4f", m, result.best_metric, result.final_metric)
    return rows
