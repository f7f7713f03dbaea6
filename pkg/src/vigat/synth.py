"""Synthetic feature generator with planted class evidence.

Each video gets one class. A unit-norm signature vector for that class is
planted into the frame features and all object features of a few randomly
chosen evidence frames; everything else is Gaussian noise. The planted
frame indices are recorded in a ground-truth sidecar so explanation
quality can be scored against a known answer.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError
from .packs import (
    DatasetManifest,
    FeaturePack,
    SplitEntry,
    save_manifest,
    write_pack,
)

GROUND_TRUTH_NAME = "ground_truth.json"
MANIFEST_NAME = "manifest.json"


@dataclass
class SynthSpec:
    """Parameters of one synthetic dataset. Equal specs produce identical bytes."""

    classes: int = 8
    frames: int = 8
    objects: int = 5
    features: int = 16
    train_videos: int = 512
    test_videos: int = 128
    evidence_frames: int = 2
    noise_sigma: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if min(self.classes, self.frames, self.objects, self.features) < 1:
            raise ValueError("all dimensions must be at least 1")
        if not 1 <= self.evidence_frames <= self.frames:
            raise ValueError(
                f"evidence_frames must lie in [1, {self.frames}], got {self.evidence_frames}"
            )
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.train_videos < 1 or self.test_videos < 0:
            raise ValueError("need at least one training video and non-negative test count")


def _make_video(spec: SynthSpec, rng: np.random.Generator, signatures, cls: int):
    n, k, f = spec.frames, spec.objects, spec.features
    evidence = np.sort(rng.choice(n, size=spec.evidence_frames, replace=False))

    # Noise everywhere; evidence rows get the class signature added on top.
    # With noise_sigma == 0 the non-evidence rows are exactly zero, which the
    # attention normalization tolerates via its denominator guard.
    frame_feats = rng.normal(0.0, spec.noise_sigma, size=(n, f))
    object_feats = rng.normal(0.0, spec.noise_sigma, size=(n, k, f))
    frame_feats[evidence] += signatures[cls]
    object_feats[evidence] += signatures[cls]

    confidences = np.sort(rng.random(size=(n, k)))[:, ::-1]
    bboxes = rng.random(size=(n, k, 4))

    labels = np.zeros(spec.classes, dtype=np.uint8)
    labels[cls] = 1
    evidence_set = set(int(i) for i in evidence)
    classes = [
        ["evidence" if i in evidence_set else "background"] * k for i in range(n)
    ]
    return frame_feats, object_feats, confidences, bboxes, labels, classes, evidence


def synth_generate(spec: SynthSpec, out_dir, overwrite: bool = False) -> DatasetManifest:
    """Write packs, manifest and ground-truth sidecar into ``out_dir``."""
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists() and not overwrite:
        raise DatasetError(f"{manifest_path} already exists; pass overwrite to replace it")
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(spec.seed)
    signatures = rng.normal(size=(spec.classes, spec.features))
    if spec.classes <= spec.features:
        # Orthonormal signatures keep every class pair equally far apart, so
        # separability does not hinge on the luck of the draw.
        q, _ = np.linalg.qr(signatures.T)
        signatures = np.ascontiguousarray(q.T)
    else:
        signatures /= np.linalg.norm(signatures, axis=1, keepdims=True)

    splits: list[SplitEntry] = []
    ground_truth: dict[str, list[int]] = {}
    for subset, count in (("train", spec.train_videos), ("test", spec.test_videos)):
        for i in range(count):
            cls = i % spec.classes
            frames, objects, conf, bbox, labels, classes, evidence = _make_video(
                spec, rng, signatures, cls
            )
            video_id = f"{subset}_{i:04d}"
            pack = FeaturePack(
                video_id=video_id,
                labels=labels,
                frame_feats=frames,
                object_feats=objects,
                object_classes=classes,
                object_confidences=conf,
                object_bboxes=bbox,
            )
            rel = f"{video_id}.vgf"
            write_pack(pack, out_dir / rel)
            splits.append(SplitEntry(rel, subset))
            ground_truth[video_id] = [int(v) for v in evidence]

    manifest = DatasetManifest(
        class_names=[f"class_{c:02d}" for c in range(spec.classes)],
        mode="singlelabel",
        n_frames=spec.frames,
        n_objects=spec.objects,
        n_features=spec.features,
        splits=splits,
        root=out_dir,
    )
    save_manifest(manifest, manifest_path)
    with open(out_dir / GROUND_TRUTH_NAME, "w", encoding="utf-8") as out:
        json.dump(ground_truth, out, indent=2, sort_keys=True)
        out.write("\n")
    return manifest


def load_ground_truth(dataset_dir) -> dict[str, list[int]]:
    path = Path(dataset_dir) / GROUND_TRUTH_NAME
    return json.loads(path.read_text(encoding="utf-8"))
