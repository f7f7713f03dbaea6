"""Command-line interface.

Subcommands: ``synth`` (generate a synthetic dataset), ``train``, ``eval``,
``explain`` (per-video saliency JSON), ``xai-bench`` (explanation-quality
report), ``inspect`` (dump a pack or checkpoint header). Exit codes: 0 on
success, 1 on runtime failure, 2 on usage errors. Set ``VIGAT_LOG`` to
debug/info/warning to control log verbosity. Existing outputs are never
clobbered unless ``--overwrite`` is given.
"""
from __future__ import annotations

import functools
import json
import logging
import os
from pathlib import Path

import click
import numpy as np

from .checkpoint import load_checkpoint, read_checkpoint_header, save_checkpoint
from .errors import VigatError
from .explain import ALL_CRITERIA, canonical_criterion, explanation_export
from .head import param_count
from .packs import load_manifest, read_pack, validate_manifest
from .synth import MANIFEST_NAME, SynthSpec, synth_generate
from .train import (
    HeadConfig,
    TrainConfig,
    labels_matrix,
    mean_average_precision_detail,
    score_packs,
    top1_accuracy,
    train_model,
    write_train_log,
)
from .xai import compare_criteria, write_report_csv, write_report_json

# Training protocols of the three reference datasets; packs must match the
# frame/class geometry, the preset only fills schedule and mode defaults.
PRESETS = {
    "fcvid": {"mode": "multilabel", "epochs": 200, "milestones": (50, 90)},
    "minikinetics": {"mode": "singlelabel", "epochs": 100, "milestones": (20, 50)},
    "activitynet": {"mode": "multilabel", "epochs": 200, "milestones": (110, 160)},
}

CRITERION_CHOICES = ("mean", "max", "local", "global", "gradcam", "random")


def _setup_logging():
    level_name = os.environ.get("VIGAT_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def friendly_errors(fn):
    """Map package and OS errors to a message plus exit code 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (VigatError, OSError, ValueError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _refuse_existing(paths, overwrite: bool):
    if overwrite:
        return
    for path in paths:
        if Path(path).exists():
            raise click.ClickException(
                f"{path} already exists; pass --overwrite to replace it"
            )


def _parse_int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise click.ClickException(f"expected comma-separated integers, got {text!r}") from exc


def _load_dataset(dataset_dir: str):
    manifest_path = Path(dataset_dir) / MANIFEST_NAME
    if not manifest_path.is_file():
        raise click.ClickException(f"no {MANIFEST_NAME} found under {dataset_dir}")
    return load_manifest(manifest_path)


@click.group()
def main():
    """Video event recognition on precomputed features: train, evaluate and
    explain a factorized graph-attention head."""
    _setup_logging()


@main.command()
@click.option("--out", required=True, type=click.Path(), help="Dataset directory to create.")
@click.option("--classes", default=8, show_default=True, type=int)
@click.option("--frames", default=8, show_default=True, type=int)
@click.option("--objects", default=5, show_default=True, type=int)
@click.option("--features", default=16, show_default=True, type=int)
@click.option("--train-videos", default=512, show_default=True, type=int)
@click.option("--test-videos", default=128, show_default=True, type=int)
@click.option("--evidence", default=2, show_default=True, type=int, help="Planted frames per video.")
@click.option("--noise-sigma", default=0.3, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--overwrite", is_flag=True)
@friendly_errors
def synth(out, classes, frames, objects, features, train_videos, test_videos, evidence, noise_sigma, seed, overwrite):
    """Generate a synthetic dataset with planted class evidence."""
    _refuse_existing([Path(out) / MANIFEST_NAME], overwrite)
    spec = SynthSpec(
        classes=classes,
        frames=frames,
        objects=objects,
        features=features,
        train_videos=train_videos,
        test_videos=test_videos,
        evidence_frames=evidence,
        noise_sigma=noise_sigma,
        seed=seed,
    )
    manifest = synth_generate(spec, out, overwrite=overwrite)
    click.echo(f"wrote {len(manifest.splits)} packs to {out}")


@main.command()
@click.option("--dataset-dir", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="Run directory for checkpoint and log.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None,
              help="Fill schedule and mode defaults for a reference protocol.")
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None, help="Initial learning rate.")
@click.option("--milestones", type=str, default=None, help="Comma-separated decay epochs, e.g. 50,90.")
@click.option("--gamma", type=float, default=None, help="Decay factor at each milestone.")
@click.option("--batch-size", type=int, default=None)
@click.option("--layers", type=int, default=None, help="Propagation layers per block.")
@click.option("--tied/--untied", "tied", default=True, show_default=True,
              help="Share one block across the frame, object and temporal roles.")
@click.option("--mode", type=click.Choice(["multilabel", "singlelabel"]), default=None,
              help="Defaults to the manifest's mode.")
@click.option("--dropout", type=float, default=None, show_default="0.5")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--overwrite", is_flag=True)
@friendly_errors
def train(dataset_dir, out, preset, epochs, lr, milestones, gamma, batch_size, layers, tied, mode, dropout, seed, workers, overwrite):
    """Train a head on a dataset and save the best-metric checkpoint."""
    manifest = _load_dataset(dataset_dir)
    issues = validate_manifest(manifest)
    if issues:
        listing = "\n  ".join(str(i) for i in issues[:20])
        raise click.ClickException(f"dataset failed validation:\n  {listing}")

    chosen = PRESETS[preset] if preset else {}
    config = TrainConfig(
        epochs=epochs if epochs is not None else chosen.get("epochs", 100),
        lr0=lr if lr is not None else 1e-4,
        milestones=(
            _parse_int_list(milestones)
            if milestones is not None
            else chosen.get("milestones", ())
        ),
        gamma=gamma if gamma is not None else 0.1,
        batch_size=batch_size if batch_size is not None else 64,
        seed=seed,
        mode=mode if mode is not None else chosen.get("mode", manifest.mode),
    )
    if config.mode != manifest.mode:
        raise click.ClickException(
            f"requested mode {config.mode!r} but the manifest declares {manifest.mode!r}"
        )
    head_config = HeadConfig(
        n_layers=layers if layers is not None else 2,
        tied=tied,
        dropout_rate=dropout if dropout is not None else 0.5,
    )

    out = Path(out)
    ckpt_path = out / "checkpoint.vgc"
    log_path = out / "train_log.csv"
    _refuse_existing([ckpt_path, log_path], overwrite)
    out.mkdir(parents=True, exist_ok=True)

    result = train_model(manifest, head_config, config, workers=workers)
    save_checkpoint(result.best_params, ckpt_path)
    write_train_log(result.log, log_path)
    click.echo(
        f"best {result.metric_name} {result.best_metric:.6f} at epoch {result.best_epoch}; "
        f"final {result.final_metric:.6f}"
    )
    click.echo(f"saved {ckpt_path} and {log_path}")


@main.command("eval")
@click.option("--dataset-dir", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@friendly_errors
def eval_cmd(dataset_dir, checkpoint, split, workers):
    """Score a checkpoint on one dataset split."""
    manifest = _load_dataset(dataset_dir)
    params = load_checkpoint(checkpoint)
    packs = manifest.load_split(split)
    scores = score_packs(params, packs, workers=workers)
    labels = labels_matrix(packs)
    if params.output_mode == "singlelabel":
        click.echo(f"top1 {top1_accuracy(scores, labels):.6f} Q={len(packs)}")
    else:
        value, aps = mean_average_precision_detail(scores, labels)
        skipped = sum(1 for a in aps if a is None)
        line = f"mAP {value:.6f} Q={len(packs)}"
        if skipped:
            line += f" (skipped {skipped} classes with no positives)"
        click.echo(line)


@main.command()
@click.option("--dataset-dir", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path(), help="Directory for per-video JSON files.")
@click.option("--criterion", type=click.Choice(CRITERION_CHOICES), default="mean", show_default=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for the random criterion.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--overwrite", is_flag=True)
@friendly_errors
def explain(dataset_dir, checkpoint, out, criterion, split, seed, workers, overwrite):
    """Export frame and object saliency for every video in a split."""
    from concurrent.futures import ThreadPoolExecutor

    manifest = _load_dataset(dataset_dir)
    params = load_checkpoint(checkpoint)
    packs = manifest.load_split(split)
    out = Path(out)
    targets = [out / f"{p.video_id}.json" for p in packs]
    _refuse_existing(targets, overwrite)
    out.mkdir(parents=True, exist_ok=True)

    kind = canonical_criterion(criterion)

    def export(pack):
        return explanation_export(params, pack, kind, seed=seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            docs = list(pool.map(export, packs))
    else:
        docs = [export(p) for p in packs]
    for target, doc in zip(targets, docs):
        with open(target, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    click.echo(f"wrote {len(docs)} explanation files to {out}")


@main.command("xai-bench")
@click.option("--dataset-dir", required=True, type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--criteria", default="mean,max,local,global,gradcam,random", show_default=True,
              help="Comma-separated criteria to compare.")
@click.option("--upsilon", default="1,2,3", show_default=True,
              help="Comma-separated kept-frame budgets.")
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.option("--trials", type=int, default=5, show_default=True, help="Random-baseline repeats.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="Directory for report.csv/report.json.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--overwrite", is_flag=True)
@friendly_errors
def xai_bench(dataset_dir, checkpoint, criteria, upsilon, split, trials, seed, out, workers, overwrite):
    """Score explanation criteria by confidence drop and fidelity."""
    manifest = _load_dataset(dataset_dir)
    params = load_checkpoint(checkpoint)
    packs = manifest.load_split(split)
    names = [canonical_criterion(c.strip()) for c in criteria.split(",") if c.strip()]
    if not names:
        raise click.ClickException("no criteria given")
    upsilons = _parse_int_list(upsilon)
    if not upsilons:
        raise click.ClickException("no upsilon values given")

    out = Path(out)
    csv_path = out / "report.csv"
    json_path = out / "report.json"
    _refuse_existing([csv_path, json_path], overwrite)
    out.mkdir(parents=True, exist_ok=True)

    report, winners = compare_criteria(
        params, packs, names, upsilons, trials=trials, seed=seed, workers=workers
    )
    write_report_csv(report, csv_path)
    write_report_json(report, json_path)
    for row in report.rows:
        click.echo(
            f"{row.criterion} upsilon={row.upsilon} AD={row.ad:.4f} IC={row.ic:.4f} "
            f"Fminus={row.f_minus:.4f} Fplus={row.f_plus:.4f} Q={row.q} skipped={row.skipped}"
        )
    for w in winners:
        click.echo(f"winner {w['measure']} upsilon={w['upsilon']}: {w['winner']}")
    click.echo(f"saved {csv_path} and {json_path}")


@main.command()
@click.argument("path", type=click.Path())
@friendly_errors
def inspect(path):
    """Print a human-readable summary of a pack or checkpoint."""
    raw = Path(path).read_bytes()[:4]
    if raw == b"VGF1":
        pack = read_pack(path)
        positives = np.flatnonzero(pack.labels)
        click.echo(f"feature pack {pack.video_id!r}")
        click.echo(
            f"  frames={pack.n_frames} objects={pack.n_objects} "
            f"features={pack.n_features} classes={pack.n_classes}"
        )
        click.echo(f"  positive labels: {positives.tolist()}")
        names = sorted({n for row in pack.object_classes for n in row})
        click.echo(f"  object classes: {names}")
    elif raw == b"VGC1":
        header = read_checkpoint_header(path)
        params = load_checkpoint(path)
        click.echo("checkpoint")
        click.echo(
            f"  tied={header['tied']} mode={header['output_mode']} "
            f"F={header['feature_dim']} M={header['n_layers']} C={header['n_classes']}"
        )
        click.echo(f"  parameters: {param_count(params)}")
        click.echo(f"  dropout rate: {params.dropout_rate}")
    else:
        raise click.ClickException(f"{path} is neither a feature pack nor a checkpoint")


if __name__ == "__main__":
    main()
