"""Shared fixtures: random pack builders and a session-scoped acceptance
run (synthetic dataset + trained checkpoint) reused by the heavier tests."""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vigat.packs import FeaturePack


def make_pack(
    rng: np.random.Generator,
    n: int = 4,
    k: int = 3,
    f: int = 6,
    c: int = 5,
    video_id: str = "vid",
    mode: str = "singlelabel",
) -> FeaturePack:
    labels = np.zeros(c, dtype=np.uint8)
    if mode == "singlelabel":
        labels[rng.integers(c)] = 1
    else:
        labels[rng.random(c) < 0.4] = 1
        if labels.sum() == 0:
            labels[rng.integers(c)] = 1
    names = ["person", "car", "dog", "chair", "tree"]
    return FeaturePack(
        video_id=video_id,
        labels=labels,
        frame_feats=rng.normal(size=(n, f)),
        object_feats=rng.normal(size=(n, k, f)),
        object_classes=[[names[rng.integers(len(names))] for _ in range(k)] for _ in range(n)],
        object_confidences=np.sort(rng.random((n, k)))[:, ::-1],
        object_bboxes=rng.random((n, k, 4)),
    )


def randomize_head(head, rng: np.random.Generator, scale: float = 0.6):
    """Put every parameter in generic position. The initializer leans on
    identity structure and a zero final layer, which would leave some
    gradient paths exactly zero and make gradient or invariance checks
    vacuous."""
    for pair in head.grad_pairs():
        pair.value[...] = rng.normal(0.0, scale, size=pair.value.shape)
    return head


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_pack(rng):
    return make_pack(rng)
