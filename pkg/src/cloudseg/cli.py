"""Command-line interface: segment, eval, sweep, synth.

Exit codes: 0 success, 2 bad arguments or configuration, 3 file I/O problems,
4 pipeline failures. Every segmentation run writes a manifest JSON alongside
its outputs with the fully resolved configuration; re-running with
``--config <manifest>`` and the same input reproduces the labels byte for
byte on the same machine.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    KMeansConfig,
    PipelineConfig,
    config_from_flat,
    config_to_flat,
)
from .core import LabelMap, PointCloud
from .io_formats import CloudIOError, LabeledCloud, read_cloud, write_labeled_ply
from .kmeans import kmeans_segment
from .metrics import evaluate, time_segmentation
from .refine import self_train
from .gnn import save_model
from .srg import srg_segment
from .synthetic import KINDS, make_synthetic

EXIT_OK = 0
EXIT_ARGS = 2
EXIT_IO = 3
EXIT_PIPELINE = 4

METHODS = ("srg", "srgnet", "kmeans")


class ArgumentProblem(Exception):
    pass


def _load_config_file(path: Path) -> tuple[dict, str | None]:
    """Read a flat config JSON or a run manifest; returns (flat, method|None)."""
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as exc:
        raise ArgumentProblem(f"cannot parse config file {path}: {exc}")
    if not isinstance(payload, dict):
        raise ArgumentProblem(f"config file {path} must hold a JSON object")
    if "config" in payload and isinstance(payload["config"], dict):
        return dict(payload["config"]), payload.get("method")
    return dict(payload), None


def _resolve_config(args) -> tuple[PipelineConfig, str]:
    flat = config_to_flat(PipelineConfig())
    method = getattr(args, "method", None)
    if getattr(args, "config", None):
        file_flat, manifest_method = _load_config_file(Path(args.config))
        flat.update(file_flat)
        if method is None and manifest_method:
            method = manifest_method
    if getattr(args, "parts", None) is not None:
        flat["target_parts"] = args.parts
        flat["train_num_classes"] = args.parts
    if getattr(args, "iters", None) is not None:
        flat["train_iterations"] = args.iters
    if getattr(args, "seed", None) is not None:
        flat["rng_seed"] = args.seed
    try:
        config = config_from_flat(flat)
    except (ValueError, KeyError, TypeError) as exc:
        raise ArgumentProblem(f"bad configuration: {exc}")
    if method is None:
        method = "srgnet"
    if method not in METHODS:
        raise ArgumentProblem(f"unknown method {method!r}; choose from {METHODS}")
    return config, method


def _segment_one(
    input_path: Path, out_dir: Path, config: PipelineConfig, method: str
) -> dict:
    labeled = read_cloud(input_path)
    cloud = labeled.cloud
    q = config.target_parts
    stem = input_path.stem

    history = None
    model = None
    if method == "srg":
        labels, latency_ms = time_segmentation(
            lambda c: srg_segment(
                c, config.srg, q, config.rng_seed, normals_k=config.normals_k
            ),
            cloud,
        )
    elif method == "kmeans":
        kconfig = KMeansConfig(k=q, rng_seed=config.rng_seed)
        labels, latency_ms = time_segmentation(
            lambda c: kmeans_segment(c, kconfig), cloud
        )
    else:
        def run(c: PointCloud) -> LabelMap:
            nonlocal model, history
            result, model, history = self_train(c, config)
            return result

        labels, latency_ms = time_segmentation(run, cloud)

    out_dir.mkdir(parents=True, exist_ok=True)
    ply_path = out_dir / f"{stem}_labels.ply"
    write_labeled_ply(ply_path, cloud, labels)

    outputs = {"labels_ply": str(ply_path)}
    if history is not None:
        log_path = out_dir / f"{stem}_training_log.csv"
        with open(log_path, "w") as fh:
            fh.write("iteration,loss,num_labels\n")
            for record in history:
                fh.write(f"{record.iteration},{record.loss:.9g},{record.num_labels}\n")
        outputs["training_log"] = str(log_path)
    if model is not None:
        ckpt_path = out_dir / f"{stem}_model.ckpt"
        save_model(ckpt_path, model)
        outputs["checkpoint"] = str(ckpt_path)

    report = None
    if labeled.truth is not None:
        report = evaluate(labels, labeled.truth, latency_ms=latency_ms)
        (out_dir / f"{stem}_report.json").write_text(report.to_json() + "\n")
        (out_dir / f"{stem}_report.txt").write_text(report.to_text() + "\n")
        outputs["report"] = str(out_dir / f"{stem}_report.json")

    manifest = {
        "tool_version": __version__,
        "command": "segment",
        "method": method,
        "input": str(input_path),
        "output_dir": str(out_dir),
        "rng_seed": config.rng_seed,
        "config": config_to_flat(config),
        "outputs": outputs,
    }
    (out_dir / f"{stem}_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    summary = {"input": str(input_path), "latency_ms": latency_ms}
    if report is not None:
        summary["miou"] = report.miou
        summary["oa"] = report.oa
    return summary


def cmd_segment(args) -> int:
    config, method = _resolve_config(args)
    out_dir = Path(args.out)
    inputs = [Path(p) for p in args.input]
    for path in inputs:
        if not path.exists():
            raise FileNotFoundError(path)
    jobs = max(1, args.jobs)
    if jobs > 1 and len(inputs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(
                pool.map(_segment_worker, [(str(p), str(out_dir), config, method) for p in inputs])
            )
    else:
        summaries = [_segment_one(p, out_dir, config, method) for p in inputs]
    for summary in summaries:
        line = f"{summary['input']}: wrote labels ({summary['latency_ms']:.1f} ms)"
        if "miou" in summary:
            line += f", miou={summary['miou']:.4f}, oa={summary['oa']:.4f}"
        print(line)
    return EXIT_OK


def _segment_worker(packed) -> dict:
    input_path, out_dir, config, method = packed
    return _segment_one(Path(input_path), Path(out_dir), config, method)


def cmd_eval(args) -> int:
    pred = read_cloud(Path(args.pred))
    truth = read_cloud(Path(args.truth))
    if pred.truth is None:
        raise ArgumentProblem(f"{args.pred} carries no label property")
    if truth.truth is None:
        raise ArgumentProblem(f"{args.truth} carries no label property")
    if len(pred.truth) != len(truth.truth):
        raise ArgumentProblem(
            f"point count mismatch: {len(pred.truth)} vs {len(truth.truth)}"
        )
    report = evaluate(pred.truth, truth.truth)
    print(report.to_json() if args.json else report.to_text())
    return EXIT_OK


_SWEEP_PARAMS = {
    "normal-deg": "srg_normal_threshold_deg",
    "euclid-factor": "srg_euclid_threshold_factor",
    "knn": "srg_knn_k",
}


def cmd_sweep(args) -> int:
    from .normals import ensure_normals
    from .spatial import build
    from .srg import grow_regions

    config, _ = _resolve_config(args)
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise ArgumentProblem("empty --values list")
    labeled = read_cloud(Path(args.input))
    if labeled.truth is None:
        raise ArgumentProblem("sweep requires an input with ground-truth labels")
    flat_key = _SWEEP_PARAMS[args.param]
    cast = int if args.param == "knn" else float

    rows = ["value,miou,oa,latency_ms,num_regions"]
    index = build(labeled.cloud)
    cloud = ensure_normals(labeled.cloud, index, k=config.normals_k)
    for raw in values:
        try:
            value = cast(raw)
        except ValueError:
            raise ArgumentProblem(f"bad sweep value {raw!r}")
        flat = config_to_flat(config)
        flat[flat_key] = value
        try:
            swept = config_from_flat(flat)
        except ValueError as exc:
            raise ArgumentProblem(f"bad sweep value {raw!r}: {exc}")
        grown = grow_regions(cloud, index, swept.srg, swept.rng_seed)
        labels, latency_ms = time_segmentation(
            lambda c: srg_segment(
                c, swept.srg, swept.target_parts, swept.rng_seed, index=index
            ),
            cloud,
        )
        report = evaluate(labels, labeled.truth, latency_ms=latency_ms)
        rows.append(
            f"{value},{report.miou:.6f},{report.oa:.6f},"
            f"{latency_ms:.3f},{grown.num_clusters}"
        )
    csv_text = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).write_text(csv_text)
    else:
        sys.stdout.write(csv_text)
    return EXIT_OK


def cmd_synth(args) -> int:
    params: dict = {"n": args.n}
    if args.noise is not None:
        params["noise"] = args.noise
    if args.angle is not None:
        params["angle_deg"] = args.angle
    if args.separation is not None:
        params["separation"] = args.separation
    if args.size is not None:
        params["size"] = args.size
    if args.radius is not None:
        params["radius"] = args.radius
    try:
        labeled = make_synthetic(args.kind, params, rng_seed=args.seed)
    except (ValueError, TypeError) as exc:
        raise ArgumentProblem(f"bad synth parameters: {exc}")
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    write_labeled_ply(out, labeled.cloud, labeled.truth)
    print(f"wrote {labeled.cloud.n} points to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloudseg",
        description="Unsupervised part segmentation of 3D point clouds",
    )
    parser.add_argument("--version", action="version", version=f"cloudseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="segment one or more clouds")
    seg.add_argument("input", nargs="+", help="input cloud file(s)")
    seg.add_argument("--method", choices=METHODS, default=None)
    seg.add_argument("--parts", type=int, default=None, help="target part count (>= 2)")
    seg.add_argument("--iters", type=int, default=None, help="training iterations")
    seg.add_argument("--seed", type=int, default=None)
    seg.add_argument("--config", default=None, help="flat config JSON or a run manifest")
    seg.add_argument("--out", default="runs", help="output directory")
    seg.add_argument("--jobs", type=int, default=1, help="parallel workers for many inputs")
    seg.set_defaults(func=cmd_segment)

    ev = sub.add_parser("eval", help="compare two labeled clouds")
    ev.add_argument("pred", help="predicted labels (ply with label property)")
    ev.add_argument("truth", help="ground-truth labels (ply with label property)")
    ev.add_argument("--json", action="store_true", help="machine-readable output")
    ev.set_defaults(func=cmd_eval)

    sw = sub.add_parser("sweep", help="sweep one growing parameter, emit CSV")
    sw.add_argument("input", help="labeled input cloud")
    sw.add_argument("--param", choices=sorted(_SWEEP_PARAMS), required=True)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--parts", type=int, default=None)
    sw.add_argument("--seed", type=int, default=None)
    sw.add_argument("--config", default=None)
    sw.add_argument("--out", default=None, help="write CSV here instead of stdout")
    sw.set_defaults(func=cmd_sweep)

    sy = sub.add_parser("synth", help="generate a synthetic labeled cloud")
    sy.add_argument("kind", choices=KINDS)
    sy.add_argument("--n", type=int, default=2000)
    sy.add_argument("--noise", type=float, default=None)
    sy.add_argument("--angle", type=float, default=None, help="dihedral angle (deg)")
    sy.add_argument("--separation", type=float, default=None, help="two_blobs spacing")
    sy.add_argument("--size", type=float, default=None)
    sy.add_argument("--radius", type=float, default=None)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--out", required=True)
    sy.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_ARGS
    try:
        return args.func(args)
    except ArgumentProblem as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except (FileNotFoundError, IsADirectoryError, PermissionError, CloudIOError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # pipeline failures
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
