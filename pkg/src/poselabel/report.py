"""Evaluate estimated pose tracks against ground truth.

Produces per-demo and aggregate median/p95 translation and rotation errors
(symmetry-aware), the fraction of frames within 5 mm / 2 degrees, and branch
flip counts. Results go to stdout, a metrics.csv table, and per-demo error
figures rendered next to it.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import dataset as ds
from . import geometry as geo
from .synthetic import PoseError, pose_error, read_ground_truth
from .tracking import PoseTrackEntry, SymmetryGroup

WITHIN_TRANSLATION = 0.005  # meters
WITHIN_ROTATION = math.radians(2.0)


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class DemoEvaluation:
    demo_id: str
    errors: list[PoseError]
    branches: list[int]
    fitness: list[float]

    @property
    def branch_flips(self) -> int:
        return sum(1 for a, b in zip(self.branches, self.branches[1:]) if a != b)


def evaluate_track(
    demo_id: str,
    entries: list[PoseTrackEntry],
    truth: list[geo.RigidTransform],
    group: SymmetryGroup,
) -> DemoEvaluation:
    if len(entries) != len(truth):
        raise EvalError(
            f"{demo_id}: track has {len(entries)} frames but ground truth has {len(truth)}"
        )
    errors = []
    branches = []
    for entry, t in zip(entries, truth):
        errors.append(pose_error(entry.pose, t, group))
        angles = [
            geo.rotation_geodesic(geo.compose(entry.pose, g), t) for g in group.transforms
        ]
        branches.append(int(np.argmin(angles)))
    return DemoEvaluation(demo_id, errors, branches, [e.fitness for e in entries])


def _percentile(values, q) -> float:
    return float(np.percentile(np.asarray(values, dtype=np.float64), q))


def metrics_row(ev: DemoEvaluation) -> dict:
    trans = [e.translation for e in ev.errors]
    rot = [e.rotation for e in ev.errors]
    within = [
        t <= WITHIN_TRANSLATION and r <= WITHIN_ROTATION for t, r in zip(trans, rot)
    ]
    return {
        "demo_id": ev.demo_id,
        "frames": len(ev.errors),
        "median_translation_mm": _percentile(trans, 50) * 1000.0,
        "p95_translation_mm": _percentile(trans, 95) * 1000.0,
        "median_rotation_deg": math.degrees(_percentile(rot, 50)),
        "p95_rotation_deg": math.degrees(_percentile(rot, 95)),
        "within_5mm_2deg": float(np.mean(within)),
        "branch_flips": ev.branch_flips,
        "mean_fitness": float(np.mean(ev.fitness)) if ev.fitness else 0.0,
    }


def aggregate_row(evaluations: list[DemoEvaluation]) -> dict:
    pooled = DemoEvaluation(
        "ALL",
        [e for ev in evaluations for e in ev.errors],
        [0],
        [f for ev in evaluations for f in ev.fitness],
    )
    row = metrics_row(pooled)
    row["branch_flips"] = sum(ev.branch_flips for ev in evaluations)
    return row


CSV_FIELDS = [
    "demo_id", "frames", "median_translation_mm", "p95_translation_mm",
    "median_rotation_deg", "p95_rotation_deg", "within_5mm_2deg",
    "branch_flips", "mean_fitness",
]


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CSV_FIELDS})


def format_table(rows: list[dict]) -> str:
    header = (
        f"{'demo':<14} {'frames':>6} {'med t(mm)':>10} {'p95 t(mm)':>10} "
        f"{'med r(deg)':>10} {'p95 r(deg)':>10} {'<5mm,2deg':>9} {'flips':>5} {'fit':>5}"
    )
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['demo_id']:<14} {r['frames']:>6} {r['median_translation_mm']:>10.3f} "
            f"{r['p95_translation_mm']:>10.3f} {r['median_rotation_deg']:>10.3f} "
            f"{r['p95_rotation_deg']:>10.3f} {r['within_5mm_2deg']:>9.3f} "
            f"{r['branch_flips']:>5} {r['mean_fitness']:>5.2f}"
        )
    return "\n".join(lines)


def save_demo_figure(path, ev: DemoEvaluation) -> None:
    trans_mm = [e.translation * 1000.0 for e in ev.errors]
    rot_deg = [math.degrees(e.rotation) for e in ev.errors]
    fig, (ax_t, ax_r) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax_t.plot(trans_mm, lw=1.2, color="tab:blue")
    ax_t.axhline(WITHIN_TRANSLATION * 1000.0, color="tab:red", ls="--", lw=0.8, label="5 mm")
    ax_t.set_ylabel("translation error (mm)")
    ax_t.legend(loc="upper right", fontsize=8)
    ax_r.plot(rot_deg, lw=1.2, color="tab:orange")
    ax_r.axhline(math.degrees(WITHIN_ROTATION), color="tab:red", ls="--", lw=0.8, label="2 deg")
    ax_r.set_ylabel("rotation error (deg)")
    ax_r.set_xlabel("frame")
    ax_r.legend(loc="upper right", fontsize=8)
    fig.suptitle(f"{ev.demo_id}: pose error vs ground truth")
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def save_aggregate_figure(path, evaluations: list[DemoEvaluation]) -> None:
    fig, (ax_t, ax_r) = plt.subplots(1, 2, figsize=(9, 4))
    trans = [[e.translation * 1000.0 for e in ev.errors] for ev in evaluations]
    rot = [[math.degrees(e.rotation) for e in ev.errors] for ev in evaluations]
    labels = [ev.demo_id for ev in evaluations]
    ax_t.boxplot(trans, tick_labels=labels)
    ax_t.set_ylabel("translation error (mm)")
    ax_t.axhline(5.0, color="tab:red", ls="--", lw=0.8)
    ax_r.boxplot(rot, tick_labels=labels)
    ax_r.set_ylabel("rotation error (deg)")
    ax_r.axhline(2.0, color="tab:red", ls="--", lw=0.8)
    for ax in (ax_t, ax_r):
        ax.tick_params(axis="x", rotation=45, labelsize=8)
    fig.suptitle("pose error distribution per demo")
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)


def load_track_entries(demo_dir) -> list[PoseTrackEntry]:
    records = ds.read_jsonl(Path(demo_dir) / "poses.jsonl")
    records.sort(key=lambda r: r["frame_index"])
    return [PoseTrackEntry.from_json_dict(r) for r in records]


def evaluate_directories(
    labels_dir,
    truth_dir,
    group: SymmetryGroup,
    out_dir,
    force: bool = False,
) -> list[dict]:
    """Match demo ids between a label output dir and a ground-truth dataset
    dir, score every demo, and write metrics.csv plus figures into out_dir."""
    labels_dir = Path(labels_dir)
    truth_dir = Path(truth_dir)
    label_ids = sorted(p.name for p in labels_dir.iterdir() if (p / "poses.jsonl").is_file())
    if not label_ids:
        raise EvalError(f"{labels_dir}: no demos with poses.jsonl")
    truth_ids = {p.name for p in truth_dir.iterdir() if (p / "ground_truth.jsonl").is_file()}
    missing = [d for d in label_ids if d not in truth_ids]
    if missing:
        raise EvalError(f"no ground truth for demo ids: {', '.join(missing)}")

    hashes = set()
    for demo_id in label_ids:
        manifest = labels_dir / demo_id / "manifest.json"
        if manifest.is_file():
            hashes.add(json.loads(manifest.read_text()).get("config_hash"))
    if len(hashes) > 1 and not force:
        raise EvalError(
            "label demos were produced with different configs; pass --force to compare anyway"
        )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    evaluations = []
    for demo_id in label_ids:
        entries = load_track_entries(labels_dir / demo_id)
        truth = read_ground_truth(truth_dir / demo_id)
        ev = evaluate_track(demo_id, entries, truth, group)
        evaluations.append(ev)
        save_demo_figure(out_dir / f"{demo_id}_errors.png", ev)
    rows = [metrics_row(ev) for ev in evaluations]
    rows.append(aggregate_row(evaluations))
    write_metrics_csv(out_dir / "metrics.csv", rows)
    save_aggregate_figure(out_dir / "aggregate_errors.png", evaluations)
    return rows
