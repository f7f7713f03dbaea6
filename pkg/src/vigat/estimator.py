"""Scikit-learn style front door for the attention head.

``VigatClassifier`` follows the estimator protocol: constructor arguments
are stored verbatim (so ``get_params`` / ``set_params`` / ``clone`` work),
``fit`` returns ``self``, and everything learned gets a trailing
underscore. The sample unit is a :class:`FeaturePack`, which carries its
own labels, so ``fit(packs)`` needs no separate ``y``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .checkpoint import load_checkpoint, save_checkpoint
from .explain import explanation_export
from .packs import FeaturePack, check_consistent_packs
from .train import (
    HeadConfig,
    TrainConfig,
    fit_packs,
    labels_matrix,
    mean_average_precision,
    score_packs,
    top1_accuracy,
)


def _as_pack_list(packs) -> list[FeaturePack]:
    if isinstance(packs, FeaturePack):
        packs = [packs]
    packs = list(packs)
    for p in packs:
        if not isinstance(p, FeaturePack):
            raise TypeError(f"expected FeaturePack samples, got {type(p).__name__}")
    check_consistent_packs(packs)
    return packs


class VigatClassifier(BaseEstimator):
    """Video event classifier over precomputed frame and object features.

    Parameters mirror the training defaults: two propagation layers, tied
    block weights, Adam at 1e-4 with an optional milestone decay schedule,
    batch size 64, dropout 0.5 between the classifier layers.
    """

    def __init__(
        self,
        layers: int = 2,
        tied: bool = True,
        mode: str = "singlelabel",
        learning_rate: float = 1e-4,
        milestones: tuple = (),
        gamma: float = 0.1,
        epochs: int = 100,
        batch_size: int = 64,
        dropout_rate: float = 0.5,
        seed: int = 0,
        workers: int = 1,
    ):
        self.layers = layers
        self.tied = tied
        self.mode = mode
        self.learning_rate = learning_rate
        self.milestones = milestones
        self.gamma = gamma
        self.epochs = epochs
        self.batch_size = batch_size
        self.dropout_rate = dropout_rate
        self.seed = seed
        self.workers = workers

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr0=self.learning_rate,
            milestones=tuple(self.milestones),
            gamma=self.gamma,
            batch_size=self.batch_size,
            seed=self.seed,
            mode=self.mode,
        )

    def fit(self, packs, y=None, eval_packs=None):
        """Train on a pack list; ``eval_packs`` optionally tracks a test
        metric per epoch and selects the best snapshot."""
        train = _as_pack_list(packs)
        evals = _as_pack_list(eval_packs) if eval_packs is not None else None
        if evals is not None:
            check_consistent_packs(train + evals)
        head_cfg = HeadConfig(
            n_layers=self.layers, tied=self.tied, dropout_rate=self.dropout_rate
        )
        result = fit_packs(train, evals, head_cfg, self._train_config(), workers=self.workers)
        self.head_params_ = result.best_params
        self.final_params_ = result.params
        self.history_ = result.log
        self.metric_name_ = result.metric_name
        self.best_epoch_ = result.best_epoch
        self.best_metric_ = result.best_metric
        self.n_classes_ = result.params.n_classes
        self.n_features_in_ = result.params.feature_dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "head_params_"):
            raise NotFittedError(
                "this VigatClassifier is not fitted yet; call fit or from_checkpoint"
            )

    def predict_proba(self, packs) -> np.ndarray:
        """Per-class scores, shape (n_videos, n_classes)."""
        self._check_fitted()
        return score_packs(self.head_params_, _as_pack_list(packs), workers=self.workers)

    def predict(self, packs) -> np.ndarray:
        """Top-scoring class index per video."""
        return self.predict_proba(packs).argmax(axis=1)

    def score(self, packs, y=None) -> float:
        """Top-1 accuracy (singlelabel) or mAP (multilabel) on the packs'
        own labels."""
        packs = _as_pack_list(packs)
        scores = self.predict_proba(packs)
        labels = labels_matrix(packs)
        if self.mode == "singlelabel":
            return top1_accuracy(scores, labels)
        return mean_average_precision(scores, labels)

    def explain(self, pack, criterion: str = "mean", seed: int = 0) -> dict:
        """Frame and object saliency for one video, export-schema shaped."""
        self._check_fitted()
        return explanation_export(self.head_params_, pack, criterion, seed=seed)

    def save(self, path) -> None:
        self._check_fitted()
        save_checkpoint(self.head_params_, path)

    @classmethod
    def from_checkpoint(cls, path, workers: int = 1) -> "VigatClassifier":
        """A fitted estimator wrapping a saved parameter set."""
        params = load_checkpoint(path)
        est = cls(
            layers=params.n_layers,
            tied=params.tied,
            mode=params.output_mode,
            dropout_rate=params.dropout_rate,
            workers=workers,
        )
        est.head_params_ = params
        est.final_params_ = params
        est.history_ = []
        est.metric_name_ = "top1" if params.output_mode == "singlelabel" else "mAP"
        est.best_epoch_ = -1
        est.best_metric_ = float("nan")
        est.n_classes_ = params.n_classes
        est.n_features_in_ = params.feature_dim
        return est
