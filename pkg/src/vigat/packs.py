"""Feature packs: the per-video unit of input, plus binary IO and manifests.

A pack bundles one video's precomputed features: an N x F frame-feature
matrix, an N x K x F object-feature tensor, per-object detector metadata
(class name, confidence, bounding box), a length-C 0/1 label vector, and
the video id. Packs serialize to a little-endian binary format with magic
``VGF1``; datasets are described by a JSON manifest listing pack paths and
their train/test subset.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, NamedTuple

import numpy as np

from .errors import (
    BadMagicError,
    CorruptRecordError,
    DatasetError,
    DimensionError,
    NonFiniteError,
    PackValidationError,
    TruncatedError,
)

PACK_MAGIC = b"VGF1"
PACK_VERSION = 1


class ObjectMeta(NamedTuple):
    class_name: str
    confidence: float
    bbox: tuple[float, float, float, float]


@dataclass(eq=False)
class FeaturePack:
    """One video's features, labels and detector metadata.

    Arrays are normalized to float32 on construction so that serialization
    round-trips bit-exactly. Object metadata is stored column-wise:
    ``object_classes[n][k]``, ``object_confidences[n, k]``,
    ``object_bboxes[n, k, :4]``.
    """

    video_id: str
    labels: np.ndarray  # (C,) uint8, entries 0/1
    frame_feats: np.ndarray  # (N, F) float32
    object_feats: np.ndarray  # (N, K, F) float32
    object_classes: list[list[str]]
    object_confidences: np.ndarray  # (N, K) float32
    object_bboxes: np.ndarray  # (N, K, 4) float32

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        self.frame_feats = np.ascontiguousarray(self.frame_feats, dtype=np.float32)
        self.object_feats = np.ascontiguousarray(self.object_feats, dtype=np.float32)
        self.object_confidences = np.ascontiguousarray(
            self.object_confidences, dtype=np.float32
        )
        self.object_bboxes = np.ascontiguousarray(self.object_bboxes, dtype=np.float32)

    @property
    def n_frames(self) -> int:
        return self.frame_feats.shape[0]

    @property
    def n_objects(self) -> int:
        return self.object_feats.shape[1]

    @property
    def n_features(self) -> int:
        return self.frame_feats.shape[1]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[0]

    def object_meta(self, n: int, k: int) -> ObjectMeta:
        return ObjectMeta(
            self.object_classes[n][k],
            float(self.object_confidences[n, k]),
            tuple(float(v) for v in self.object_bboxes[n, k]),
        )

    def restrict_frames(self, frame_indices) -> "FeaturePack":
        """A new pack holding only the selected frames, labels unchanged."""
        idx = np.asarray(frame_indices, dtype=np.intp)
        return FeaturePack(
            video_id=self.video_id,
            labels=self.labels,
            frame_feats=self.frame_feats[idx],
            object_feats=self.object_feats[idx],
            object_classes=[self.object_classes[i] for i in idx],
            object_confidences=self.object_confidences[idx],
            object_bboxes=self.object_bboxes[idx],
        )


def packs_equal(a: FeaturePack, b: FeaturePack) -> bool:
    """Exact (bit-level) equality, used by round-trip tests."""
    return (
        a.video_id == b.video_id
        and np.array_equal(a.labels, b.labels)
        and np.array_equal(a.frame_feats, b.frame_feats)
        and np.array_equal(a.object_feats, b.object_feats)
        and a.object_classes == b.object_classes
        and np.array_equal(a.object_confidences, b.object_confidences)
        and np.array_equal(a.object_bboxes, b.object_bboxes)
    )


def validate_pack(pack: FeaturePack) -> None:
    """Check structural invariants; raises on the first violation."""
    n, f = pack.frame_feats.shape if pack.frame_feats.ndim == 2 else (0, 0)
    if pack.frame_feats.ndim != 2 or n < 1 or f < 1:
        raise PackValidationError(
            f"frame features must be a non-empty 2-D matrix, got shape "
            f"{pack.frame_feats.shape}"
        )
    if pack.object_feats.ndim != 3 or pack.object_feats.shape[0] != n:
        raise PackValidationError(
            f"object features must be (N, K, F) with N={n}, got shape "
            f"{pack.object_feats.shape}"
        )
    k = pack.object_feats.shape[1]
    if k < 1 or pack.object_feats.shape[2] != f:
        raise PackValidationError(
            f"object features must share the frame feature dim {f}, got shape "
            f"{pack.object_feats.shape}"
        )
    if pack.labels.ndim != 1 or pack.n_classes < 1:
        raise PackValidationError(f"labels must be a non-empty vector, got shape {pack.labels.shape}")
    bad = (pack.labels > 1).nonzero()[0]
    if bad.size:
        raise PackValidationError(f"labels must be 0/1, offending index {bad[0]}")
    for name, arr in (
        ("frame features", pack.frame_feats),
        ("object features", pack.object_feats),
        ("object confidences", pack.object_confidences),
        ("object bboxes", pack.object_bboxes),
    ):
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{name} of video {pack.video_id!r} contain non-finite values")
    if pack.object_confidences.shape != (n, k):
        raise PackValidationError(
            f"object confidences must be (N, K)=({n}, {k}), got "
            f"{pack.object_confidences.shape}"
        )
    if pack.object_bboxes.shape != (n, k, 4):
        raise PackValidationError(
            f"object bboxes must be (N, K, 4)=({n}, {k}, 4), got "
            f"{pack.object_bboxes.shape}"
        )
    if len(pack.object_classes) != n or any(len(row) != k for row in pack.object_classes):
        raise PackValidationError("object class names must form an N x K table")
    if k > 1:
        diffs = np.diff(pack.object_confidences, axis=1)
        if (diffs > 0).any():
            frame = int(np.argwhere(diffs > 0)[0][0])
            raise PackValidationError(
                f"object confidences must be non-increasing within each frame; "
                f"frame {frame} of video {pack.video_id!r} violates this"
            )


def _write_str(out: BinaryIO, s: str) -> None:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise PackValidationError(f"string too long to serialize ({len(raw)} bytes)")
    out.write(struct.pack("<H", len(raw)))
    out.write(raw)


def write_pack(pack: FeaturePack, path) -> None:
    """Serialize a validated pack to ``path``."""
    validate_pack(pack)
    n, k, f, c = pack.n_frames, pack.n_objects, pack.n_features, pack.n_classes

    # String table in first-occurrence order keeps output deterministic.
    table: dict[str, int] = {}
    indices = np.empty((n, k), dtype=np.uint16)
    for i, row in enumerate(pack.object_classes):
        for j, name in enumerate(row):
            if name not in table:
                if len(table) > 0xFFFF:
                    raise PackValidationError("too many distinct object class names")
                table[name] = len(table)
            indices[i, j] = table[name]

    path = Path(path)
    with open(path, "wb") as out:
        out.write(PACK_MAGIC)
        out.write(struct.pack("<H", PACK_VERSION))
        out.write(struct.pack("<IIII", n, k, f, c))
        out.write(pack.labels.tobytes())
        out.write(pack.frame_feats.astype("<f4", copy=False).tobytes())
        out.write(pack.object_feats.astype("<f4", copy=False).tobytes())
        meta = np.empty((n, k), dtype=[("conf", "<f4"), ("bbox", "<f4", 4), ("cls", "<u2")])
        meta["conf"] = pack.object_confidences
        meta["bbox"] = pack.object_bboxes
        meta["cls"] = indices
        out.write(meta.tobytes())
        out.write(struct.pack("<H", len(table)))
        for name in table:
            _write_str(out, name)
        _write_str(out, pack.video_id)


class _Cursor:
    """Bounds-checked reader over one file's bytes."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise TruncatedError(
                f"{self.path}: needed {count} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def read_str(self) -> str:
        (length,) = self.unpack("<H")
        return self.take(length).decode("utf-8")

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise CorruptRecordError(
                f"{self.path}: {len(self.data) - self.pos} unexpected trailing bytes"
            )


def read_pack(path) -> FeaturePack:
    """Deserialize and validate a pack written by :func:`write_pack`."""
    path = Path(path)
    cur = _Cursor(path.read_bytes(), path)
    magic = cur.take(4)
    if magic != PACK_MAGIC:
        raise BadMagicError(f"{path}: expected magic {PACK_MAGIC!r}, found {magic!r}")
    (version,) = cur.unpack("<H")
    if version != PACK_VERSION:
        raise CorruptRecordError(f"{path}: unsupported pack version {version}")
    n, k, f, c = cur.unpack("<IIII")
    if min(n, k, f, c) < 1:
        raise CorruptRecordError(f"{path}: header declares empty dimensions {(n, k, f, c)}")
    labels = np.frombuffer(cur.take(c), dtype=np.uint8).copy()
    frame_feats = (
        np.frombuffer(cur.take(4 * n * f), dtype="<f4").reshape(n, f).copy()
    )
    object_feats = (
        np.frombuffer(cur.take(4 * n * k * f), dtype="<f4").reshape(n, k, f).copy()
    )
    meta_dtype = np.dtype([("conf", "<f4"), ("bbox", "<f4", 4), ("cls", "<u2")])
    meta = np.frombuffer(cur.take(meta_dtype.itemsize * n * k), dtype=meta_dtype)
    meta = meta.reshape(n, k)
    (table_len,) = cur.unpack("<H")
    table = [cur.read_str() for _ in range(table_len)]
    video_id = cur.read_str()
    cur.expect_end()

    cls_idx = meta["cls"]
    if table_len and cls_idx.max(initial=0) >= table_len:
        raise CorruptRecordError(
            f"{path}: object class index {int(cls_idx.max())} out of range "
            f"for table of {table_len}"
        )
    if table_len == 0 and n * k > 0:
        raise CorruptRecordError(f"{path}: empty class-name table for {n * k} objects")
    pack = FeaturePack(
        video_id=video_id,
        labels=labels,
        frame_feats=frame_feats,
        object_feats=object_feats,
        object_classes=[[table[j] for j in row] for row in cls_idx],
        object_confidences=meta["conf"].copy(),
        object_bboxes=meta["bbox"].copy(),
    )
    validate_pack(pack)
    return pack


@dataclass
class SplitEntry:
    pack_path: str  # relative to the manifest's directory
    subset: str  # "train" | "test"


@dataclass
class DatasetManifest:
    """Describes one dataset: shared dimensions, mode, and its packs."""

    class_names: list[str]
    mode: str  # "multilabel" | "singlelabel"
    n_frames: int
    n_objects: int
    n_features: int
    splits: list[SplitEntry] = field(default_factory=list)
    root: Path = field(default_factory=Path)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def paths(self, subset: str) -> list[Path]:
        if subset not in ("train", "test"):
            raise DatasetError(f"unknown subset {subset!r}")
        return [self.root / e.pack_path for e in self.splits if e.subset == subset]

    def load_split(self, subset: str) -> list[FeaturePack]:
        paths = self.paths(subset)
        if not paths:
            raise DatasetError(f"manifest has no packs in the {subset!r} subset")
        return [read_pack(p) for p in paths]


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "class_names": manifest.class_names,
        "mode": manifest.mode,
        "N": manifest.n_frames,
        "K": manifest.n_objects,
        "F": manifest.n_features,
        "splits": [
            {"pack_path": e.pack_path, "subset": e.subset} for e in manifest.splits
        ],
    }
    with open(path, "w", encoding="utf-8") as out:
        json.dump(doc, out, indent=2, sort_keys=True)
        out.write("\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: not valid JSON ({exc})") from exc
    try:
        manifest = DatasetManifest(
            class_names=list(doc["class_names"]),
            mode=doc["mode"],
            n_frames=int(doc["N"]),
            n_objects=int(doc["K"]),
            n_features=int(doc["F"]),
            splits=[SplitEntry(e["pack_path"], e["subset"]) for e in doc["splits"]],
            root=path.parent,
        )
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"{path}: missing or malformed field ({exc})") from exc
    if manifest.mode not in ("multilabel", "singlelabel"):
        raise DatasetError(f"{path}: unknown mode {manifest.mode!r}")
    for entry in manifest.splits:
        if entry.subset not in ("train", "test"):
            raise DatasetError(f"{path}: unknown subset {entry.subset!r}")
    return manifest


@dataclass
class ManifestIssue:
    pack_path: str
    kind: str
    detail: str

    def __str__(self):
        return f"{self.pack_path}: {self.kind}: {self.detail}"


def validate_manifest(manifest: DatasetManifest) -> list[ManifestIssue]:
    """Open every pack and report violations of the shared contract.

    Returns an empty list for a fully consistent dataset. IO and decoding
    failures become issues rather than exceptions so a whole dataset can be
    audited in one pass.
    """
    issues: list[ManifestIssue] = []
    for entry in manifest.splits:
        rel = entry.pack_path
        try:
            pack = read_pack(manifest.root / rel)
        except Exception as exc:  # noqa: BLE001 - collected into the report
            issues.append(ManifestIssue(rel, "unreadable", str(exc)))
            continue
        dims = (pack.n_frames, pack.n_objects, pack.n_features, pack.n_classes)
        expected = (
            manifest.n_frames,
            manifest.n_objects,
            manifest.n_features,
            manifest.n_classes,
        )
        if dims != expected:
            issues.append(
                ManifestIssue(rel, "dimension-mismatch", f"pack {dims} vs manifest {expected}")
            )
            continue
        positives = int(pack.labels.sum())
        if manifest.mode == "singlelabel" and positives != 1:
            issues.append(
                ManifestIssue(rel, "mode-violation", f"singlelabel pack has {positives} positives")
            )
        elif entry.subset == "train" and positives < 1:
            issues.append(
                ManifestIssue(rel, "mode-violation", "training pack has no positive label")
            )
    return issues


def check_consistent_packs(packs) -> tuple[int, int, int, int]:
    """Validate a pack collection shares (N, K, F, C); returns those dims."""
    packs = list(packs)
    if not packs:
        raise DatasetError("need at least one pack")
    dims = (packs[0].n_frames, packs[0].n_objects, packs[0].n_features, packs[0].n_classes)
    for pack in packs[1:]:
        got = (pack.n_frames, pack.n_objects, pack.n_features, pack.n_classes)
        if got != dims:
            raise DimensionError(
                f"pack {pack.video_id!r} has dims {got}, expected {dims} "
                f"from {packs[0].video_id!r}"
            )
    return dims
