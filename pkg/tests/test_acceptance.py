"""Acceptance gate: the end-to-end behavioral bars this package must clear.

Each test prints one diagnostic line and asserts one bar, so a verbose run
reads as a checklist. The heavier bars share one session-scoped run: a
synthetic dataset generated at the default geometry with seed 7, trained
through the command line at the stock configuration (100 epochs, Adam at
1e-4, batch 64, tied two-layer blocks, dropout 0.5).
"""
import csv
import time

import numpy as np
import pytest
from click.testing import CliRunner

from vigat.checkpoint import load_checkpoint
from vigat.cli import main as cli_main
from vigat.explain import (
    build_frame_saliency,
    frame_wids,
    object_wids,
    precision_at,
    random_frame_ranking,
)
from vigat.head import (
    head_backward,
    head_forward,
    head_forward_subset,
    init_head,
    param_count,
)
from vigat.packs import read_pack
from vigat.synth import SynthSpec, load_ground_truth, synth_generate
from vigat.train import loss_and_grad, layer_depth_sweep, HeadConfig, TrainConfig
from vigat.xai import evaluate_criterion
from conftest import make_pack, randomize_head
from oracles import (
    evidence_mean_features,
    finite_difference_grad,
    oracle_column_sums,
    oracle_head_scores,
    oracle_nearest_centroid,
    oracle_xai_measures,
    relative_error,
)


def generic_head(f=5, c=4, m=2, tied=True, mode="singlelabel", seed=0):
    head = init_head(
        feature_dim=f, n_classes=c, n_layers=m, tied=tied, output_mode=mode,
        dropout_rate=0.0, seed=seed, dtype=np.float64,
    )
    return randomize_head(head, np.random.default_rng(seed + 500))


# ---------------------------------------------------------------- criterion 1


def test_01_gradient_fidelity():
    """Analytic gradients of the full head match central finite differences
    (N=3, K=2, F=6, C=4, M=1; both tyings, both output modes) within 1e-4,
    in under 30 seconds."""
    started = time.monotonic()
    rng = np.random.default_rng(42)
    worst = 0.0
    for mode in ("multilabel", "singlelabel"):
        for tied in (True, False):
            head = generic_head(f=6, c=4, m=1, tied=tied, mode=mode, seed=9)
            pack = make_pack(rng, n=3, k=2, f=6, c=4, mode=mode)

            def loss_of(_):
                trace = head_forward(head, pack)
                return loss_and_grad(trace.scores, pack.labels, mode)[0]

            trace = head_forward(head, pack)
            _, grad = loss_and_grad(trace.scores, pack.labels, mode)
            head.zero_grads()
            head_backward(head, trace, grad)
            for pair in head.grad_pairs():
                fd = finite_difference_grad(loss_of, pair.value)
                worst = max(worst, relative_error(pair.grad, fd))
    elapsed = time.monotonic() - started
    print(f"\n[acceptance] gradient fidelity: max rel err {worst:.2e} in {elapsed:.1f}s")
    assert worst < 1e-4
    assert elapsed < 30.0


# ---------------------------------------------------------------- criterion 2


def test_02_adjacency_and_wid_algebra():
    """On 100 random traces: adjacency rows sum to 1 (1e-6); per-frame object
    in-degrees sum to K (1e-4); both frame in-degree vectors and their mean
    sum to N (1e-4)."""
    rng = np.random.default_rng(7)
    worst_row = worst_obj = worst_frame = 0.0
    for trial in range(100):
        n = int(rng.integers(1, 8))
        k = int(rng.integers(1, 6))
        head = generic_head(f=5, c=4, m=2, seed=trial)
        pack = make_pack(rng, n=n, k=k, f=5, c=4)
        trace = head_forward(head, pack)
        for adj in (
            trace.frame_trace.adjacency,
            trace.temporal_trace.adjacency,
            *trace.object_trace.adjacency,
        ):
            worst_row = max(worst_row, float(np.abs(adj.sum(axis=-1) - 1.0).max()))
        ow = object_wids(trace)
        worst_obj = max(worst_obj, float(np.abs(ow.sum(axis=1) - k).max()))
        w1, w3 = frame_wids(trace)
        beta = (w1 + w3) / 2.0
        for v in (w1, w3, beta):
            worst_frame = max(worst_frame, abs(float(v.sum()) - n))
    print(
        f"\n[acceptance] adjacency/WiD algebra: row-sum err {worst_row:.2e}, "
        f"object-sum err {worst_obj:.2e}, frame-sum err {worst_frame:.2e}"
    )
    assert worst_row < 1e-6
    assert worst_obj < 1e-4
    assert worst_frame < 1e-4


# ---------------------------------------------------------------- criterion 3


def test_03_oracle_equivalence():
    """Forward scores and every in-degree vector match straight-line loop
    re-implementations to 1e-5 on 20 random instances."""
    rng = np.random.default_rng(19)
    worst = 0.0
    for trial in range(20):
        mode = "multilabel" if trial % 2 else "singlelabel"
        head = generic_head(f=5, c=4, m=2, tied=trial % 3 != 0, mode=mode, seed=trial)
        pack = make_pack(rng, n=int(rng.integers(2, 6)), k=int(rng.integers(2, 5)), f=5, c=4, mode=mode)
        trace = head_forward(head, pack)
        scores, frame_adj, object_adjs, temporal_adj = oracle_head_scores(
            head, pack.frame_feats, pack.object_feats
        )
        worst = max(worst, float(np.abs(trace.scores - scores).max()))
        w1, w3 = frame_wids(trace)
        worst = max(worst, float(np.abs(w1 - oracle_column_sums(frame_adj)).max()))
        worst = max(worst, float(np.abs(w3 - oracle_column_sums(temporal_adj)).max()))
        ow = object_wids(trace)
        for i, adj in enumerate(object_adjs):
            worst = max(worst, float(np.abs(ow[i] - oracle_column_sums(adj)).max()))
    print(f"\n[acceptance] oracle equivalence: max abs diff {worst:.2e}")
    assert worst < 1e-5


# ---------------------------------------------------------------- criterion 4


def test_04_permutation_invariance():
    """Frame and within-frame object permutations leave scores unchanged to
    1e-6 and permute the saliency values consistently, on 20 instances."""
    from test_head import _permute_pack

    rng = np.random.default_rng(23)
    worst = 0.0
    for trial in range(20):
        n, k = int(rng.integers(2, 7)), int(rng.integers(2, 6))
        head = generic_head(f=5, c=4, m=2, seed=trial + 40)
        pack = make_pack(rng, n=n, k=k, f=5, c=4)
        frame_perm = rng.permutation(n)
        object_perm = rng.permutation(k)
        permuted = _permute_pack(pack, frame_perm, object_perm)

        base = head_forward(head, pack)
        moved = head_forward(head, permuted)
        worst = max(worst, float(np.abs(base.scores - moved.scores).max()))

        w1, w3 = frame_wids(base)
        p1, p3 = frame_wids(moved)
        worst = max(worst, float(np.abs(w1[frame_perm] - p1).max()))
        worst = max(worst, float(np.abs(w3[frame_perm] - p3).max()))
        ow, pw = object_wids(base), object_wids(moved)
        worst = max(worst, float(np.abs(ow[frame_perm][:, object_perm] - pw).max()))
    print(f"\n[acceptance] permutation invariance: max abs diff {worst:.2e}")
    assert worst < 1e-6


# ---------------------------------------------------------------- criterion 5


def test_05_parameter_accounting():
    """Sharing one block saves exactly two blocks of parameters; at the
    published scale (F=768, M=2, C=200) the totals sit within 10% of 3.85e6
    (shared) and 8.426e6 (per-role)."""
    f, m, c = 768, 2, 200
    tied = init_head(f, c, m, tied=True, seed=0)
    untied = init_head(f, c, m, tied=False, seed=0)
    block = tied.blocks[0].param_count()
    n_tied, n_untied = param_count(tied), param_count(untied)
    print(
        f"\n[acceptance] parameter accounting: tied {n_tied:,} untied {n_untied:,} "
        f"block {block:,}"
    )
    assert n_untied - n_tied == 2 * block
    assert abs(n_tied - 3.85e6) / 3.85e6 < 0.10
    assert abs(n_untied - 8.426e6) / 8.426e6 < 0.10


# ---------------------------------------------------------------- criterion 6


def test_06_weight_tying_gradient_identity():
    """The shared block's gradient equals the sum of the per-role gradients
    of an identically-parameterized unshared head, to 1e-6."""
    from test_head import _sync_untied_to_tied

    rng = np.random.default_rng(31)
    tied = generic_head(f=6, c=5, m=2, tied=True, seed=3)
    untied = generic_head(f=6, c=5, m=2, tied=False, seed=4)
    _sync_untied_to_tied(tied, untied)
    pack = make_pack(rng, n=4, k=3, f=6, c=5)

    for head in (tied, untied):
        trace = head_forward(head, pack)
        _, grad = loss_and_grad(trace.scores, pack.labels, "singlelabel")
        head.zero_grads()
        head_backward(head, trace, grad)

    worst = 0.0
    role_sum = [np.zeros_like(p.grad) for p in untied.blocks[0].grad_pairs()]
    for block in untied.blocks:
        for acc, pair in zip(role_sum, block.grad_pairs()):
            acc += pair.grad
    for tied_pair, summed in zip(tied.blocks[0].grad_pairs(), role_sum):
        worst = max(worst, relative_error(tied_pair.grad, summed))
    print(f"\n[acceptance] weight-tying gradient identity: max rel err {worst:.2e}")
    assert worst < 1e-6


# ------------------------------------------------------- shared trained model


ACCEPT_SPEC = SynthSpec(seed=7)  # 8 classes, 8x5 nodes, F=16, 512/128 videos


@pytest.fixture(scope="session")
def acceptance_run(tmp_path_factory):
    """Dataset (seed 7) plus one command-line training at the stock
    configuration; reused by every criterion that needs a trained model."""
    root = tmp_path_factory.mktemp("acceptance")
    data, run = root / "data", root / "run"
    synth_generate(ACCEPT_SPEC, data)
    runner = CliRunner()
    started = time.monotonic()
    result = runner.invoke(
        cli_main,
        ["train", "--dataset-dir", str(data), "--out", str(run), "--seed", "0"],
    )
    train_seconds = time.monotonic() - started
    assert result.exit_code == 0, result.output
    with open(run / "train_log.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    eval_result = runner.invoke(
        cli_main,
        ["eval", "--dataset-dir", str(data), "--checkpoint", str(run / "checkpoint.vgc")],
    )
    assert eval_result.exit_code == 0, eval_result.output
    manifest_train = [read_pack(p) for p in _paths(data, "train")]
    manifest_test = [read_pack(p) for p in _paths(data, "test")]
    return {
        "data": data,
        "params": load_checkpoint(run / "checkpoint.vgc"),
        "log_rows": rows,
        "train_seconds": train_seconds,
        "eval_line": eval_result.output.strip(),
        "train_packs": manifest_train,
        "test_packs": manifest_test,
        "truth": load_ground_truth(data),
    }


def _paths(data, split):
    from vigat.packs import load_manifest
    from vigat.synth import MANIFEST_NAME

    return load_manifest(data / MANIFEST_NAME).paths(split)


# ---------------------------------------------------------------- criterion 7


def test_07_synthetic_learnability(acceptance_run):
    """The stock configuration reaches test top-1 >= 0.95 within 100 epochs
    on the planted-evidence dataset, in under ten minutes, and a
    nearest-centroid oracle first proves the data separable (>= 0.99)."""
    truth = acceptance_run["truth"]
    train, test = acceptance_run["train_packs"], acceptance_run["test_packs"]
    feats = lambda packs: [evidence_mean_features(p, truth[p.video_id]) for p in packs]
    labels = lambda packs: [int(np.argmax(p.labels)) for p in packs]
    predicted = oracle_nearest_centroid(feats(train), labels(train), feats(test))
    oracle_acc = float(np.mean([p == l for p, l in zip(predicted, labels(test))]))

    best = max(float(r["test_metric"]) for r in acceptance_run["log_rows"])
    epochs = len(acceptance_run["log_rows"])
    seconds = acceptance_run["train_seconds"]
    print(
        f"\n[acceptance] synthetic learnability: oracle {oracle_acc:.4f}, "
        f"best top-1 {best:.4f} over {epochs} epochs in {seconds:.0f}s; "
        f"eval prints {acceptance_run['eval_line']!r}"
    )
    assert oracle_acc >= 0.99, "oracle separability proof failed"
    assert epochs <= 100
    assert best >= 0.95
    assert seconds < 600.0
    assert float(acceptance_run["eval_line"].split()[1]) >= 0.95


# ---------------------------------------------------------------- criterion 8


def test_08_explanation_quality_ordering(acceptance_run):
    """Mean-in-degree explanations beat seeded-random frame selection on the
    trained model: lower AD and higher F+ by more than 0.05 at budgets 1 and
    2, and precision@2 against the planted frames higher by more than 0.2."""
    params = acceptance_run["params"]
    test = acceptance_run["test_packs"]
    truth = acceptance_run["truth"]

    beta = evaluate_criterion(params, test, "mean", [1, 2])
    rnd = evaluate_criterion(params, test, "random", [1, 2], trials=5, seed=0)
    lines = []
    for u in (1, 2):
        b, r = beta.row("mean", u), rnd.row("random", u)
        lines.append(
            f"budget {u}: AD {b.ad:.4f} vs {r.ad:.4f}, F+ {b.f_plus:.4f} vs {r.f_plus:.4f}"
        )
        assert b.ad < r.ad - 0.05
        assert b.f_plus > r.f_plus + 0.05

    prec_beta, prec_rand = [], []
    for i, pack in enumerate(test):
        trace = head_forward(params, pack)
        ranking = build_frame_saliency(params, trace, "mean").ranking
        prec_beta.append(precision_at(ranking, truth[pack.video_id], 2))
        trials = random_frame_ranking(pack.n_frames, 5, [0, i])
        prec_rand.append(
            float(np.mean([precision_at(t, truth[pack.video_id], 2) for t in trials]))
        )
    pb, pr = float(np.mean(prec_beta)), float(np.mean(prec_rand))
    print(
        f"\n[acceptance] explanation quality: {'; '.join(lines)}; "
        f"precision@2 {pb:.4f} vs random {pr:.4f}"
    )
    assert pb > pr + 0.2


# ---------------------------------------------------------------- criterion 9


def test_09_layer_depth_sweep(acceptance_run):
    """The depth-ablation harness trains heads at one to four propagation
    layers and reports comparable metrics; depth two lands within two
    points of the sweep's best."""
    from vigat.packs import load_manifest
    from vigat.synth import MANIFEST_NAME

    manifest = load_manifest(acceptance_run["data"] / MANIFEST_NAME)
    config = TrainConfig(
        epochs=100, lr0=1e-4, milestones=(), gamma=0.1, batch_size=64,
        seed=0, mode="singlelabel",
    )
    rows = layer_depth_sweep(
        manifest, [1, 2, 3, 4], HeadConfig(n_layers=2, tied=True, dropout_rate=0.5), config
    )
    assert [r["layers"] for r in rows] == [1, 2, 3, 4]
    best = max(r["best_metric"] for r in rows)
    at_two = next(r["best_metric"] for r in rows if r["layers"] == 2)
    table = ", ".join(f"M={r['layers']}: {r['best_metric']:.4f}" for r in rows)
    print(f"\n[acceptance] layer-depth sweep: {table}")
    assert at_two >= best - 0.02


# --------------------------------------------------------------- criterion 10


def test_10_measure_definitions(acceptance_run):
    """Harness output equals a definitional recomputation of the four
    measures on a 10-video split to 1e-6, and keeping every frame forces
    AD = IC = F- = 0."""
    params = acceptance_run["params"]
    split = acceptance_run["test_packs"][:10]
    upsilon = 3
    report = evaluate_criterion(params, split, "mean", [upsilon])
    row = report.row("mean", upsilon)

    records = []
    for pack in split:
        trace = head_forward(params, pack)
        ranking = build_frame_saliency(params, trace, "mean").ranking
        kept = np.sort(ranking[:upsilon])
        comp = np.sort(ranking[upsilon:])
        records.append(
            {
                "labels": pack.labels,
                "y_full": trace.scores,
                "y_kept": head_forward_subset(params, pack, kept).scores,
                "y_comp": head_forward_subset(params, pack, comp).scores,
            }
        )
    ad, ic, fm, fp = oracle_xai_measures(records)
    worst = max(
        abs(row.ad - ad), abs(row.ic - ic), abs(row.f_minus - fm), abs(row.f_plus - fp)
    )

    n = split[0].n_frames
    degenerate = evaluate_criterion(params, split, "mean", [n]).row("mean", n)
    print(
        f"\n[acceptance] measure definitions: max abs diff {worst:.2e}; "
        f"full-budget AD {degenerate.ad} IC {degenerate.ic} F- {degenerate.f_minus}"
    )
    assert worst < 1e-6
    assert degenerate.ad == 0.0
    assert degenerate.ic == 0.0
    assert degenerate.f_minus == 0.0
