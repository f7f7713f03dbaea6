"""Trainer components: loss, Adam, schedule, metrics, and the loop itself."""
import csv

import numpy as np
import pytest

from vigat.errors import DatasetError, DimensionError
from vigat.head import init_head
from vigat.kernels import GradPair
from vigat.synth import SynthSpec, synth_generate
from vigat.train import (
    AdamState,
    HeadConfig,
    TrainConfig,
    adam_step,
    average_precision,
    fit_packs,
    layer_depth_sweep,
    loss_and_grad,
    lr_at,
    mean_average_precision,
    mean_average_precision_detail,
    top1_accuracy,
    train_model,
    write_train_log,
)
from conftest import make_pack
from oracles import finite_difference_grad, oracle_average_precision, relative_error


# ---------------------------------------------------------------- schedule


def test_lr_schedule_milestones():
    cfg = TrainConfig(epochs=120, lr0=1e-4, milestones=(50, 90), gamma=0.1)
    assert lr_at(cfg, 0) == pytest.approx(1e-4)
    assert lr_at(cfg, 49) == pytest.approx(1e-4)
    assert lr_at(cfg, 50) == pytest.approx(1e-5)
    assert lr_at(cfg, 89) == pytest.approx(1e-5)
    assert lr_at(cfg, 90) == pytest.approx(1e-6)
    assert lr_at(cfg, 119) == pytest.approx(1e-6)
    with pytest.raises(ValueError):
        lr_at(cfg, -1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, milestones=(5, 5))
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, milestones=(12,))
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, mode="both")


# -------------------------------------------------------------------- loss


def test_multilabel_loss_hand_value():
    loss, _ = loss_and_grad(np.array([0.5, 0.5]), np.array([1, 0]), "multilabel")
    assert loss == pytest.approx(np.log(2.0))


def test_singlelabel_loss_hand_value():
    loss, _ = loss_and_grad(np.array([0.25, 0.75]), np.array([0, 1]), "singlelabel")
    assert loss == pytest.approx(-np.log(0.75))


def test_perfect_prediction_loss_near_zero():
    loss, _ = loss_and_grad(np.array([1.0, 0.0]), np.array([1, 0]), "multilabel")
    assert loss == pytest.approx(0.0, abs=1e-6)
    loss, _ = loss_and_grad(np.array([0.0, 1.0]), np.array([0, 1]), "singlelabel")
    assert loss == pytest.approx(0.0, abs=1e-6)


def test_loss_gradients_match_finite_differences(rng):
    scores = rng.uniform(0.05, 0.95, size=6)
    labels = np.array([1, 0, 0, 1, 0, 1])
    for mode, lab in (("multilabel", labels), ("singlelabel", np.eye(6, dtype=int)[2])):
        _, grad = loss_and_grad(scores, lab, mode)
        fd = finite_difference_grad(
            lambda s: loss_and_grad(s, lab, mode)[0], scores.copy()
        )
        assert relative_error(grad, fd) < 1e-6


def test_singlelabel_loss_requires_one_positive():
    with pytest.raises(ValueError):
        loss_and_grad(np.array([0.5, 0.5]), np.array([1, 1]), "singlelabel")
    with pytest.raises(DimensionError):
        loss_and_grad(np.array([0.5, 0.5]), np.array([1, 0, 0]), "multilabel")


# -------------------------------------------------------------------- adam


def test_adam_zero_gradients_leave_params_unchanged():
    head = init_head(4, 3, 1, seed=0)
    state = AdamState(head)
    before = [p.value.copy() for p in head.grad_pairs()]
    head.zero_grads()
    adam_step(state, head, lr=1e-3)
    for pair, prev in zip(head.grad_pairs(), before):
        assert np.array_equal(pair.value, prev)
    assert head.version == 1


def test_adam_matches_torch_reference(rng):
    torch = pytest.importorskip("torch")
    value = rng.normal(size=(3, 2)).astype(np.float32)
    grads = [rng.normal(size=(3, 2)).astype(np.float32) for _ in range(6)]

    head = init_head(4, 3, 1, seed=0)
    pair = head.grad_pairs()[0]
    # Drive one tensor of a real head with a scripted gradient sequence.
    pair.value = value.copy()
    pair.grad = np.zeros_like(value)
    state = AdamState(head)

    t_param = torch.nn.Parameter(torch.tensor(value, dtype=torch.float64))
    opt = torch.optim.Adam([t_param], lr=1e-2, betas=(0.9, 0.999), eps=1e-8)

    for g in grads:
        head.zero_grads()
        pair.accumulate(g)
        adam_step(state, head, lr=1e-2)
        opt.zero_grad()
        t_param.grad = torch.tensor(g, dtype=torch.float64)
        opt.step()
        assert np.allclose(pair.value, t_param.detach().numpy(), atol=1e-5)


def test_adam_rejects_bad_lr_and_foreign_state():
    head = init_head(4, 3, 1, seed=0)
    state = AdamState(head)
    with pytest.raises(ValueError):
        adam_step(state, head, lr=0.0)
    other = init_head(4, 3, 1, seed=0)
    with pytest.raises(ValueError):
        adam_step(state, other, lr=1e-3)


# ----------------------------------------------------------------- metrics


def test_top1_accuracy_hand_case():
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
    labels = np.array([[1, 0], [1, 0], [0, 1]])
    assert top1_accuracy(scores, labels) == pytest.approx(1 / 3)


def test_average_precision_frozen_case():
    # Ranked hits at positions 1 and 3: AP = (1/1 + 2/3) / 2 = 5/6.
    ap = average_precision(np.array([0.9, 0.8, 0.7, 0.6]), np.array([1, 0, 1, 0]))
    assert ap == pytest.approx(5 / 6)


def test_average_precision_tie_breaks_by_video_index():
    # Equal scores: video 0 ranks first, so the positive at video 1 sees
    # precision 1/2.
    ap = average_precision(np.array([0.5, 0.5]), np.array([0, 1]))
    assert ap == pytest.approx(0.5)


def test_average_precision_matches_oracle(rng):
    for _ in range(20):
        scores = rng.random(12)
        labels = (rng.random(12) < 0.4).astype(int)
        expected = oracle_average_precision(scores.tolist(), labels.tolist())
        got = average_precision(scores, labels)
        if expected is None:
            assert got is None
        else:
            assert got == pytest.approx(expected)


def test_map_skips_empty_classes(rng):
    scores = rng.random((6, 3))
    labels = np.zeros((6, 3), dtype=int)
    labels[:3, 0] = 1
    labels[2:, 1] = 1  # class 2 has no positives
    value, aps = mean_average_precision_detail(scores, labels)
    assert aps[2] is None
    assert value == pytest.approx(np.mean([aps[0], aps[1]]))
    with pytest.raises(ValueError):
        mean_average_precision(scores, np.zeros_like(labels))


# -------------------------------------------------------------------- loop


def _tiny_dataset(tmp_path, **overrides):
    spec = SynthSpec(
        classes=3,
        frames=4,
        objects=2,
        features=8,
        train_videos=36,
        test_videos=12,
        evidence_frames=1,
        noise_sigma=0.2,
        seed=5,
        **overrides,
    )
    return synth_generate(spec, tmp_path / "data")


def test_training_learns_and_logs(tmp_path):
    manifest = _tiny_dataset(tmp_path)
    config = TrainConfig(epochs=10, lr0=3e-3, batch_size=16, seed=1, mode="singlelabel")
    result = train_model(manifest, HeadConfig(n_layers=1), config)

    assert len(result.log) == 10
    assert result.log[0].train_loss > result.log[-1].train_loss
    assert result.final_metric > 0.5
    assert result.best_metric >= result.final_metric - 1e-12
    assert result.best_epoch == max(
        range(10), key=lambda i: (result.log[i].test_metric, -i)
    )
    # Last incomplete batch is still trained: 36 videos / batch 16 = 3 batches.
    assert result.params.version == 10 * 3


def test_training_is_deterministic(tmp_path):
    manifest = _tiny_dataset(tmp_path)
    config = TrainConfig(epochs=3, lr0=1e-3, batch_size=16, seed=7, mode="singlelabel")
    a = train_model(manifest, HeadConfig(n_layers=1), config)
    b = train_model(manifest, HeadConfig(n_layers=1), config)
    assert [r.train_loss for r in a.log] == [r.train_loss for r in b.log]
    assert [r.test_metric for r in a.log] == [r.test_metric for r in b.log]
    for pa, pb in zip(a.params.grad_pairs(), b.params.grad_pairs()):
        assert np.array_equal(pa.value, pb.value)


def test_seed_changes_the_run(tmp_path):
    manifest = _tiny_dataset(tmp_path)
    base = dict(epochs=2, lr0=1e-3, batch_size=16, mode="singlelabel")
    a = train_model(manifest, HeadConfig(n_layers=1), TrainConfig(seed=1, **base))
    b = train_model(manifest, HeadConfig(n_layers=1), TrainConfig(seed=2, **base))
    assert a.log[-1].train_loss != b.log[-1].train_loss


def test_log_csv_format(tmp_path):
    manifest = _tiny_dataset(tmp_path)
    config = TrainConfig(
        epochs=4, lr0=1e-3, milestones=(2,), batch_size=64, seed=0, mode="singlelabel"
    )
    result = train_model(manifest, HeadConfig(n_layers=1), config)
    path = tmp_path / "log.csv"
    write_train_log(result.log, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "lr", "train_loss", "test_metric"]
    assert len(rows) == 5
    assert [r[0] for r in rows[1:]] == ["0", "1", "2", "3"]
    # Milestone at epoch 2 drops the logged lr by gamma.
    assert float(rows[1][1]) == pytest.approx(1e-3)
    assert float(rows[3][1]) == pytest.approx(1e-4)


def test_workers_do_not_change_results(tmp_path):
    manifest = _tiny_dataset(tmp_path)
    config = TrainConfig(epochs=2, lr0=1e-3, batch_size=16, seed=3, mode="singlelabel")
    a = train_model(manifest, HeadConfig(n_layers=1), config, workers=1)
    b = train_model(manifest, HeadConfig(n_layers=1), config, workers=4)
    assert [r.test_metric for r in a.log] == [r.test_metric for r in b.log]


def test_fit_packs_validates_labels(rng):
    packs = [make_pack(rng, mode="multilabel", video_id=f"v{i}") for i in range(4)]
    packs[0].labels[:] = 0
    packs[0].labels[:2] = 1  # two positives: fine for multilabel, not single
    config = TrainConfig(epochs=1, mode="singlelabel", batch_size=2)
    with pytest.raises(DatasetError):
        fit_packs(packs, None, HeadConfig(n_layers=1), config)


def test_empty_split_raises(tmp_path):
    with pytest.raises(DatasetError):
        fit_packs([], None, HeadConfig(), TrainConfig(epochs=1))


def test_layer_depth_sweep_rows(tmp_path):
    manifest = _tiny_dataset(tmp_path)
    config = TrainConfig(epochs=2, lr0=1e-3, batch_size=16, seed=0, mode="singlelabel")
    rows = layer_depth_sweep(manifest, [1, 2], HeadConfig(), config)
    assert [r["layers"] for r in rows] == [1, 2]
    for row in rows:
        assert 0.0 <= row["best_metric"] <= 1.0
        assert row["metric_name"] == "top1"
