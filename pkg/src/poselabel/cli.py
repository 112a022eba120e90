"""Batch entry points: label datasets, generate synthetic data, sample meshes,
evaluate tracks against ground truth.

Exit codes: 0 success, 1 usage/config error, 2 partial failure (some demos
failed; partial results are kept).
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import dataset as ds
from . import labeling
from . import report
from . import synthetic as syn
from .mesh import load_mesh, sample_uniform
from .ply import write_cloud_ply
from .tracking import SymmetryGroup


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _fail(message: str) -> int:
    sys.stderr.write(f"error: {message}\n")
    return 1


def parse_symmetry(spec: str | None) -> SymmetryGroup:
    """Parse 'z:2', 'x:4', or '0,0,1:2' into a rotational symmetry group."""
    if not spec or spec in ("none", "1"):
        return SymmetryGroup.trivial()
    try:
        axis_part, order_part = spec.split(":")
        order = int(order_part)
        named = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}
        axis = named.get(axis_part.lower()) or tuple(float(c) for c in axis_part.split(","))
        if len(axis) != 3:
            raise ValueError
        return SymmetryGroup.rotational(axis, order)
    except (ValueError, TypeError):
        raise ValueError(
            f"bad symmetry spec {spec!r}; expected AXIS:ORDER like 'z:2' or '0,0,1:2'"
        ) from None


# --- label ---------------------------------------------------------------------


def _apply_seed_override(config, seed: int | None):
    if seed is None:
        return config
    return replace(
        config,
        ransac=replace(config.ransac, seed=seed),
        model=replace(config.model, seed=seed),
    )


def _label_one(demo_dir: str, config_dict: dict, out_dir: str) -> dict:
    """Worker: label one demonstration directory. Self-contained so demos can
    run in separate processes with bit-identical results."""
    config = cfgmod.config_from_dict(config_dict)
    mesh = load_mesh(config.model.path)
    model = labeling.build_model_cloud(mesh, config)
    demo = ds.load_demonstration(demo_dir)
    labeled = labeling.label_demonstration(demo, model, config)
    labeling.write_labeled_demonstration(
        out_dir,
        labeled,
        config,
        model_hash=ds.sha256_of_file(config.model.path),
        cameras_hash=labeling.cameras_content_hash(demo.cameras),
    )
    flagged = sum(1 for e in labeled.track.entries if e.fitness == 0.0)
    return {
        "demo_id": labeled.demo_id,
        "status": "ok",
        "frames": len(labeled.track),
        "labeled_steps": len(labeled.steps),
        "mean_fitness": float(np.mean([e.fitness for e in labeled.track.entries])),
        "flagged_frames": flagged,
        "re_registrations": labeled.track.count_method("re-registered"),
    }


def cmd_label(args) -> int:
    if args.print_default_config:
        print(cfgmod.print_default_config())
        return 0
    if args.dataset_dir is None or args.out_dir is None:
        return _fail("label needs DATASET_DIR and OUT_DIR (or --print-default-config)")
    try:
        config = cfgmod.load_config(args.config) if args.config else cfgmod.default_config()
        config = _apply_seed_override(config, args.seed)
        if args.jobs is not None:
            config = replace(config, jobs=args.jobs)
    except cfgmod.ConfigError as e:
        return _fail(str(e))
    if not config.model.path:
        return _fail("config field model.path is required for labeling")
    if not Path(config.model.path).is_file():
        return _fail(f"model mesh not found: {config.model.path}")
    try:
        demo_ids = ds.discover_demos(args.dataset_dir)
    except ds.DatasetLayoutError as e:
        return _fail(str(e))
    if not demo_ids:
        return _fail(f"no demonstrations found in {args.dataset_dir}")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_dict = cfgmod.config_to_dict(config)
    jobs = [(str(Path(args.dataset_dir) / d), config_dict, str(out_dir)) for d in demo_ids]

    rows = []
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = [pool.submit(_label_one, *job) for job in jobs]
            for demo_id, fut in zip(demo_ids, futures):
                try:
                    rows.append(fut.result())
                except Exception as e:  # noqa: BLE001 - reported per demo
                    rows.append({"demo_id": demo_id, "status": "failed", "error": str(e)})
    else:
        for demo_id, job in zip(demo_ids, jobs):
            try:
                rows.append(_label_one(*job))
            except Exception as e:  # noqa: BLE001 - reported per demo
                if args.debug:
                    traceback.print_exc()
                rows.append({"demo_id": demo_id, "status": "failed", "error": str(e)})

    n_failed = sum(1 for r in rows if r["status"] != "ok")
    summary = {
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "dataset": str(args.dataset_dir),
        "config_hash": cfgmod.config_hash(config),
        "demos": rows,
        "n_failed": n_failed,
    }
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
    for r in rows:
        if r["status"] == "ok":
            print(
                f"{r['demo_id']}: ok, {r['labeled_steps']} steps, "
                f"mean fitness {r['mean_fitness']:.3f}, {r['flagged_frames']} flagged"
            )
        else:
            print(f"{r['demo_id']}: FAILED ({r['error']})")
    print(f"labeled {len(rows) - n_failed}/{len(rows)} demos -> {out_dir}")
    return 0 if n_failed == 0 else 2


# --- synth ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        scenario = syn.load_scenario(args.scenario)
    except (OSError, syn.ScenarioError) as e:
        return _fail(str(e))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, spec in enumerate(scenario.demos):
        config = spec.config
        if args.seed is not None:
            config = replace(config, seed=args.seed + i)
        demo, truth, _ = syn.generate_synthetic_demo(scenario.mesh, config, spec.demo_id)
        demo_dir = ds.write_demonstration(out_dir, demo, depth_format=scenario.depth_format)
        syn.write_ground_truth(demo_dir, truth)
        print(f"{spec.demo_id}: {len(demo)} frames x {len(demo.cameras)} views -> {demo_dir}")
    return 0


# --- eval ----------------------------------------------------------------------


def cmd_eval(args) -> int:
    try:
        group = parse_symmetry(args.symmetry)
    except ValueError as e:
        return _fail(str(e))
    out_dir = Path(args.out) if args.out else Path(args.labels_dir) / "eval"
    try:
        rows = report.evaluate_directories(
            args.labels_dir, args.truth_dir, group, out_dir, force=args.force
        )
    except (OSError, report.EvalError, ds.DatasetLayoutError) as e:
        return _fail(str(e))
    print(report.format_table(rows))
    print(f"metrics and figures -> {out_dir}")
    return 0


# --- sample-mesh -----------------------------------------------------------------


def cmd_sample_mesh(args) -> int:
    try:
        mesh = load_mesh(args.mesh)
        cloud = sample_uniform(mesh, args.count, seed=args.seed or 0)
    except (OSError, ValueError) as e:
        return _fail(str(e))
    write_cloud_ply(args.out, cloud, binary=not args.ascii)
    print(f"sampled {len(cloud)} points from {args.mesh} -> {args.out}")
    return 0


# --- entry ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poselabel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_label = sub.add_parser("label", help="label a demonstration dataset with poses/actions")
    p_label.add_argument("dataset_dir", nargs="?", help="dataset root (one subdir per demo)")
    p_label.add_argument("out_dir", nargs="?", help="output root for labels")
    p_label.add_argument("--config", help="pipeline config JSON")
    p_label.add_argument("--jobs", type=int, help="parallel demos (overrides config)")
    p_label.add_argument("--seed", type=int, help="override RANSAC and model seeds")
    p_label.add_argument(
        "--print-default-config", action="store_true", help="print defaults and exit"
    )
    p_label.add_argument("--debug", action="store_true", help=argparse.SUPPRESS)
    p_label.set_defaults(func=cmd_label)

    p_synth = sub.add_parser("synth", help="generate a synthetic ground-truth dataset")
    p_synth.add_argument("scenario", help="scenario JSON file")
    p_synth.add_argument("out_dir", help="output dataset root")
    p_synth.add_argument("--seed", type=int, help="override per-demo seeds")
    p_synth.set_defaults(func=cmd_synth)

    p_eval = sub.add_parser("eval", help="score labeled tracks against ground truth")
    p_eval.add_argument("labels_dir", help="label output root (from `poselabel label`)")
    p_eval.add_argument("truth_dir", help="dataset root holding ground_truth.jsonl per demo")
    p_eval.add_argument("--symmetry", help="AXIS:ORDER, e.g. z:2 (default: none)")
    p_eval.add_argument("--out", help="metrics/figures dir (default LABELS_DIR/eval)")
    p_eval.add_argument(
        "--force", action="store_true", help="allow comparing demos labeled with mixed configs"
    )
    p_eval.set_defaults(func=cmd_eval)

    p_mesh = sub.add_parser("sample-mesh", help="sample a model point cloud from a mesh")
    p_mesh.add_argument("mesh", help="OBJ or PLY mesh file")
    p_mesh.add_argument("-n", "--count", type=int, default=5000)
    p_mesh.add_argument("--seed", type=int, default=0)
    p_mesh.add_argument("-o", "--out", default="model.ply")
    p_mesh.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    p_mesh.set_defaults(func=cmd_sample_mesh)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
