"""Video event recognition on precomputed frame and object features.

A factorized graph-attention head scores videos from feature packs, its
attention matrices double as explanations (weighted in-degrees per frame
and per object), and an evaluation harness quantifies explanation quality
by confidence drop and fidelity. Includes a synthetic generator with
planted evidence, binary pack/checkpoint formats, a deterministic trainer,
an sklearn-style estimator and a CLI.
"""
from .block import (
    BlockTrace,
    GatBlockParams,
    block_backward,
    block_forward,
    init_block,
    wid_column_sums,
)
from .checkpoint import load_checkpoint, read_checkpoint_header, save_checkpoint
from .errors import (
    BadMagicError,
    ChecksumError,
    ConsistencyError,
    CorruptRecordError,
    DatasetError,
    DimensionError,
    NonFiniteError,
    PackFormatError,
    PackValidationError,
    TruncatedError,
    VigatError,
)
from .estimator import VigatClassifier
from .explain import (
    FrameSaliency,
    ObjectSaliency,
    build_frame_saliency,
    build_object_saliency,
    explanation_export,
    frame_criterion,
    frame_wids,
    gradcam_frame_scores,
    object_wids,
    precision_at,
    random_frame_ranking,
    rank_descending,
)
from .head import (
    HeadParams,
    HeadTrace,
    head_backward,
    head_forward,
    head_forward_subset,
    init_head,
    param_count,
)
from .kernels import GradPair
from .packs import (
    DatasetManifest,
    FeaturePack,
    ManifestIssue,
    ObjectMeta,
    SplitEntry,
    check_consistent_packs,
    load_manifest,
    packs_equal,
    read_pack,
    save_manifest,
    validate_manifest,
    validate_pack,
    write_pack,
)
from .synth import SynthSpec, load_ground_truth, synth_generate
from .train import (
    AdamState,
    EpochLog,
    HeadConfig,
    TrainConfig,
    TrainResult,
    adam_step,
    average_precision,
    fit_packs,
    labels_matrix,
    layer_depth_sweep,
    loss_and_grad,
    lr_at,
    mean_average_precision,
    mean_average_precision_detail,
    score_packs,
    top1_accuracy,
    train_model,
    write_train_log,
)
from .xai import (
    XaiReport,
    XaiRow,
    compare_criteria,
    evaluate_criterion,
    write_report_csv,
    write_report_json,
)

__version__ = "0.1.0"
