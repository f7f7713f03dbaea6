"""Explanation-quality harness: score every criterion by how well its
top-Upsilon frames preserve (and its discarded frames destroy) the model's
behavior.

For each video the model runs three times: on all N frames, on the top
Upsilon frames of the explanation ranking, and on the complement. Four
measures aggregate over the Q evaluable videos:

- AD (average drop, lower better): relative confidence lost on the kept
  frames, ``max(0, full - kept) / full``.
- IC (increase in confidence, higher better): fraction of videos whose
  kept-frame confidence exceeds the full one.
- F- (lower better): ground-truth accuracy of full inference minus that of
  kept-frame inference.
- F+ (higher better): full accuracy minus accuracy of complement-frame
  inference.

Videos with fewer than Upsilon frames are excluded and counted in the
``skipped`` column. The random baseline reruns with five seeded rankings
and reports the trial average.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .explain import build_frame_saliency, canonical_criterion, random_frame_ranking
from .head import HeadParams, head_forward, head_forward_subset
from .packs import FeaturePack

logger = logging.getLogger("vigat.xai")

RANDOM_TRIALS = 5

CSV_COLUMNS = ("criterion", "upsilon", "AD", "IC", "Fminus", "Fplus", "Q", "skipped")

# Direction of "better" per measure, used by the winner table.
_HIGHER_IS_BETTER = {"AD": False, "IC": True, "Fminus": False, "Fplus": True}


@dataclass
class XaiRow:
    criterion: str
    upsilon: int
    ad: float
    ic: float
    f_minus: float
    f_plus: float
    q: int
    skipped: int


@dataclass
class XaiReport:
    rows: list[XaiRow]

    def row(self, criterion: str, upsilon: int) -> XaiRow:
        for r in self.rows:
            if r.criterion == criterion and r.upsilon == upsilon:
                return r
        raise KeyError(f"no row for criterion {criterion!r} at upsilon {upsilon}")


def _hit(labels: np.ndarray, predicted: int | None) -> float:
    """1 when the prediction lands on a positive label; empty-complement
    predictions (None) never hit."""
    if predicted is None:
        return 0.0
    return float(labels[predicted] == 1)


@dataclass
class _VideoOutcome:
    """One video under one ranking and one Upsilon."""

    y_full: float  # full-inference confidence of the top class
    y_kept: float  # same class's confidence on the kept frames
    full_hit: float
    kept_hit: float
    complement_hit: float


def _evaluate_video(
    params: HeadParams,
    pack: FeaturePack,
    full_scores: np.ndarray,
    ranking: np.ndarray,
    upsilon: int,
) -> _VideoOutcome:
    top_class = int(np.argmax(full_scores))
    kept = np.sort(ranking[:upsilon])
    kept_scores = head_forward_subset(params, pack, kept).scores
    if upsilon < pack.n_frames:
        complement = np.sort(ranking[upsilon:])
        comp_scores = head_forward_subset(params, pack, complement).scores
        comp_pred = int(np.argmax(comp_scores))
    else:
        comp_pred = None  # nothing left to look at
    return _VideoOutcome(
        y_full=float(full_scores[top_class]),
        y_kept=float(kept_scores[top_class]),
        full_hit=_hit(pack.labels, top_class),
        kept_hit=_hit(pack.labels, int(np.argmax(kept_scores))),
        complement_hit=_hit(pack.labels, comp_pred),
    )


def _aggregate(outcomes: list[_VideoOutcome], criterion: str, upsilon: int, skipped: int) -> XaiRow:
    drops = []
    guarded = 0
    for o in outcomes:
        if o.y_full > 0:
            drops.append(max(0.0, o.y_full - o.y_kept) / o.y_full)
        else:
            guarded += 1
    if guarded:
        logger.warning(
            "%d videos had zero full-inference confidence and were excluded from AD",
            guarded,
        )
    q = len(outcomes)
    return XaiRow(
        criterion=criterion,
        upsilon=upsilon,
        ad=float(np.mean(drops)) if drops else 0.0,
        ic=float(np.mean([o.y_kept > o.y_full for o in outcomes])),
        f_minus=float(np.mean([o.full_hit - o.kept_hit for o in outcomes])),
        f_plus=float(np.mean([o.full_hit - o.complement_hit for o in outcomes])),
        q=q,
        skipped=skipped,
    )


def evaluate_criterion(
    params: HeadParams,
    packs: list[FeaturePack],
    criterion: str,
    upsilons,
    trials: int = RANDOM_TRIALS,
    seed: int = 0,
    workers: int = 1,
) -> XaiReport:
    """One report row per Upsilon for a single criterion."""
    kind = canonical_criterion(criterion)
    upsilons = [int(u) for u in upsilons]
    if not upsilons or any(u < 1 for u in upsilons):
        raise ValueError(f"upsilons must be positive integers, got {upsilons}")
    packs = list(packs)

    def full_and_rankings(pack_index):
        pack = packs[pack_index]
        trace = head_forward(params, pack, train=False)
        if kind == "random":
            rankings = random_frame_ranking(pack.n_frames, trials, [seed, pack_index])
        else:
            rankings = [build_frame_saliency(params, trace, kind).ranking]
        return trace.scores, rankings

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            prepared = list(pool.map(full_and_rankings, range(len(packs))))
    else:
        prepared = [full_and_rankings(i) for i in range(len(packs))]

    rows = []
    for upsilon in upsilons:
        skipped = sum(1 for p in packs if p.n_frames < upsilon)
        n_trials = trials if kind == "random" else 1
        trial_rows = []
        for t in range(n_trials):
            outcomes = [
                _evaluate_video(params, packs[i], scores, rankings[t], upsilon)
                for i, (scores, rankings) in enumerate(prepared)
                if packs[i].n_frames >= upsilon
            ]
            if not outcomes:
                break
            trial_rows.append(_aggregate(outcomes, kind, upsilon, skipped))
        if not trial_rows:
            logger.warning(
                "criterion %s at upsilon %d: every video skipped, row dropped", kind, upsilon
            )
            continue
        rows.append(
            XaiRow(
                criterion=kind,
                upsilon=upsilon,
                ad=float(np.mean([r.ad for r in trial_rows])),
                ic=float(np.mean([r.ic for r in trial_rows])),
                f_minus=float(np.mean([r.f_minus for r in trial_rows])),
                f_plus=float(np.mean([r.f_plus for r in trial_rows])),
                q=trial_rows[0].q,
                skipped=skipped,
            )
        )
    return XaiReport(rows)


def compare_criteria(
    params: HeadParams,
    packs: list[FeaturePack],
    criteria,
    upsilons,
    trials: int = RANDOM_TRIALS,
    seed: int = 0,
    workers: int = 1,
) -> tuple[XaiReport, list[dict]]:
    """Evaluate several criteria and tabulate the winner per measure."""
    merged: list[XaiRow] = []
    for criterion in criteria:
        report = evaluate_criterion(
            params, packs, criterion, upsilons, trials=trials, seed=seed, workers=workers
        )
        merged.extend(report.rows)
    report = XaiReport(merged)

    winners = []
    for upsilon in [int(u) for u in upsilons]:
        at_u = [r for r in report.rows if r.upsilon == upsilon]
        if not at_u:
            continue
        for measure, attr in (
            ("AD", "ad"),
            ("IC", "ic"),
            ("Fminus", "f_minus"),
            ("Fplus", "f_plus"),
        ):
            values = [(getattr(r, attr), r.criterion) for r in at_u]
            best = max(values)[0] if _HIGHER_IS_BETTER[measure] else min(values)[0]
            names = [name for value, name in values if value == best]
            winners.append(
                {
                    "measure": measure,
                    "upsilon": upsilon,
                    "winner": names[0] if len(names) == 1 else "tie",
                }
            )
    return report, winners


def _row_record(row: XaiRow) -> dict:
    return {
        "criterion": row.criterion,
        "upsilon": row.upsilon,
        "AD": row.ad,
        "IC": row.ic,
        "Fminus": row.f_minus,
        "Fplus": row.f_plus,
        "Q": row.q,
        "skipped": row.skipped,
    }


def write_report_csv(report: XaiReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as out:
        writer = csv.writer(out)
        writer.writerow(CSV_COLUMNS)
        for row in report.rows:
            rec = _row_record(row)
            writer.writerow(
                [
                    rec["criterion"],
                    rec["upsilon"],
                    f"{rec['AD']:.6f}",
                    f"{rec['IC']:.6f}",
                    f"{rec['Fminus']:.6f}",
                    f"{rec['Fplus']:.6f}",
                    rec["Q"],
                    rec["skipped"],
                ]
            )


def write_report_json(report: XaiReport, path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        json.dump([_row_record(r) for r in report.rows], out, indent=2, sort_keys=True)
        out.write("\n")
