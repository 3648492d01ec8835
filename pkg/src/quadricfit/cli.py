"""Command-line surface: fit scene files, run benchmarks, evaluate, fit masks.

stdout carries only machine-readable output (JSON or CSV); diagnostics go
to stderr.  Exit codes: 0 success, 1 malformed input, 2 partial failure
(some objects, ids or files could not be processed while the rest were).
All commands are deterministic given their flags; seeds default to 0.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import files
from .closed_form import ObjectObservations, fit_pfd
from .errors import NoFiniteCenterError, QuadricFitError
from .geometry import Quadric, decompose_quadric
from .mask_fitting import load_mask, moments_ellipse
from .metrics import evaluate
from .regularized import fit_pfd_reg
from .synthetic import DEFAULT_MAGNITUDE_GRIDS, ScenarioConfig, run_sweep

EXIT_OK = 0
EXIT_MALFORMED = 1
EXIT_PARTIAL = 2

# CLI method names map to the row labels used in sweep tables
METHOD_LABELS = {"pfd": "PfD", "pfd-reg": "PfD+REG"}


def _warn(message: str) -> None:
    print(message, file=sys.stderr)


def _lambda_flag(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--lambda must be 'auto' or a number, got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError("--lambda must be >= 0")
    return value


def cmd_fit(args) -> int:
    scene = files.load_scene(args.scene)
    min_views = 3 if args.method == "pfd" else 2
    entries = []
    skipped = []
    for object_id in sorted(scene.detections):
        detections = list(scene.detections[object_id])
        if len(detections) < min_views:
            skipped.append(object_id)
            _warn(
                f"{object_id}: insufficient_views "
                f"({len(detections)} < {min_views} required by {args.method})"
            )
            continue
        try:
            obs = ObjectObservations.from_ellipses(object_id, detections)
            if args.method == "pfd":
                solution = fit_pfd(obs, scene.cameras)
            else:
                solution = fit_pfd_reg(
                    obs,
                    scene.cameras,
                    lam=args.lam,
                    max_iters=args.max_iters,
                    tol_cost=args.tol_cost,
                    tol_step=args.tol_step,
                )
        except QuadricFitError as exc:
            skipped.append(object_id)
            _warn(f"{object_id}: solver_error: {exc}")
            continue
        entries.append(files.result_entry(solution))
    payload = files.results_payload(entries)
    files.write_text(files.dump_json(payload), args.out)
    return EXIT_PARTIAL if skipped else EXIT_OK


def cmd_bench(args) -> int:
    kinds = args.kinds or list(DEFAULT_MAGNITUDE_GRIDS)
    if args.grid is not None:
        grids = {kind: tuple(args.grid) for kind in kinds}
    else:
        grids = {kind: DEFAULT_MAGNITUDE_GRIDS[kind] for kind in kinds}
    cfg = ScenarioConfig(seed=args.seed, n_objects=args.objects, n_views=args.views)
    result = run_sweep(
        cfg,
        grids=grids,
        methods=tuple(METHOD_LABELS[m] for m in args.methods),
        trials=args.trials,
        mc_samples=args.mc_samples,
        lam=args.lam,
        parallel=not args.serial,
    )
    files.write_text(result.to_csv(), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    results = files.load_results(args.results)
    scene = files.load_scene(args.scene)
    if not scene.gt:
        _warn(f"{args.scene}: scene file has no 'gt' block to evaluate against")
        return EXIT_MALFORMED
    by_id = {}
    for record in results:
        if record.object_id in by_id:
            _warn(f"{record.object_id}: duplicate result record")
            return EXIT_MALFORMED
        by_id[record.object_id] = record

    mismatched = sorted(set(by_id) ^ set(scene.gt))
    for object_id in mismatched:
        side = "results" if object_id in by_id else "ground truth"
        _warn(f"{object_id}: only present in {side}; skipped")

    gts, ests, ids = [], [], []
    for object_id in sorted(set(by_id) & set(scene.gt)):
        try:
            gt_ellipsoid = decompose_quadric(Quadric(scene.gt[object_id]))
        except NoFiniteCenterError:
            gt_ellipsoid = None
        if gt_ellipsoid is None or not gt_ellipsoid.valid:
            _warn(f"{object_id}: ground-truth quadric is not an ellipsoid; skipped")
            mismatched.append(object_id)
            continue
        gts.append(gt_ellipsoid)
        ests.append(by_id[object_id].ellipsoid)
        ids.append(object_id)

    report = evaluate(
        gts,
        ests,
        object_ids=ids,
        samples=args.mc_samples,
        seed=args.seed,
        thresholds=args.thresholds,
    )
    if args.format == "csv":
        text = report.to_csv()
    else:
        text = report.to_json()
        files.validate_eval_report(json.loads(text))
    files.write_text(text, args.out)
    return EXIT_PARTIAL if mismatched else EXIT_OK


def cmd_ellipse_from_mask(args) -> int:
    sidecar = {}
    if args.sidecar is not None:
        payload = files.load_json(args.sidecar)
        if not isinstance(payload, dict) or not isinstance(payload.get("masks", []), list):
            _warn(f"{args.sidecar}: sidecar must be an object with a 'masks' array")
            return EXIT_MALFORMED
        for item in payload.get("masks", []):
            if not isinstance(item, dict) or "path" not in item:
                _warn(f"{args.sidecar}: each sidecar entry needs a 'path'")
                return EXIT_MALFORMED
            sidecar[item["path"]] = item

    records = []
    failures = []
    for index, mask_path in enumerate(args.masks):
        meta = sidecar.get(mask_path, sidecar.get(Path(mask_path).name, {}))
        object_id = meta.get("object", Path(mask_path).stem)
        frame = meta.get("frame", index)
        offset = tuple(meta.get("origin_offset", (0.0, 0.0)))
        try:
            ellipse = moments_ellipse(load_mask(mask_path, origin_offset=offset))
        except (QuadricFitError, OSError) as exc:
            _warn(f"{mask_path}: {exc}")
            failures.append(mask_path)
            continue
        records.append(
            {
                "object": str(object_id),
                "frame": int(frame),
                "ellipse": {
                    "cx": float(ellipse.center[0]),
                    "cy": float(ellipse.center[1]),
                    "l1": float(ellipse.semi_axes[0]),
                    "l2": float(ellipse.semi_axes[1]),
                    "alpha": float(ellipse.angle),
                },
            }
        )
    files.write_text(files.dump_json({"detections": records}), args.out)
    return EXIT_PARTIAL if failures else EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadricfit",
        description="Recover 3D ellipsoids from 2D detections across calibrated views.",
        epilog="Exit codes: 0 success, 1 malformed input, 2 partial failure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="estimate one ellipsoid per object from a scene file")
    fit.add_argument("scene", help="scene JSON file (cameras + detections)")
    fit.add_argument("--method", choices=sorted(METHOD_LABELS), default="pfd")
    fit.add_argument("--lambda", dest="lam", type=_lambda_flag, default="auto",
                     help="regularization weight for pfd-reg ('auto' scales with the data term)")
    fit.add_argument("--max-iters", type=int, default=200)
    fit.add_argument("--tol-cost", type=float, default=1e-10)
    fit.add_argument("--tol-step", type=float, default=1e-12)
    fit.add_argument("--out", default=None, help="write results JSON here instead of stdout")
    fit.set_defaults(func=cmd_fit)

    bench = sub.add_parser("bench", help="run the synthetic perturbation sweep")
    bench.add_argument("--kinds", nargs="+", choices=sorted(DEFAULT_MAGNITUDE_GRIDS), default=None)
    bench.add_argument("--grid", nargs="+", type=float, default=None,
                       help="magnitude grid shared by all chosen kinds "
                            "(native units: TE/SE fractions, RE radians)")
    bench.add_argument("--methods", nargs="+", choices=sorted(METHOD_LABELS),
                       default=["pfd", "pfd-reg"])
    bench.add_argument("--trials", type=int, default=5)
    bench.add_argument("--objects", type=int, default=50, help="objects per scene")
    bench.add_argument("--views", type=int, default=20, help="views per scene")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--mc-samples", type=int, default=10_000)
    bench.add_argument("--lambda", dest="lam", type=_lambda_flag, default="auto")
    bench.add_argument("--serial", action="store_true", help="disable the process pool")
    bench.add_argument("--out", default=None, help="write the CSV here instead of stdout")
    bench.set_defaults(func=cmd_bench)

    ev = sub.add_parser("eval", help="score a results file against scene ground truth")
    ev.add_argument("results", help="results JSON produced by 'fit'")
    ev.add_argument("scene", help="scene JSON with a 'gt' block")
    ev.add_argument("--thresholds", nargs="+", type=float, default=[1.0, 2.0],
                    help="centroid distance thresholds in world units")
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--mc-samples", type=int, default=100_000)
    ev.add_argument("--format", choices=["json", "csv"], default="json")
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_eval)

    mask = sub.add_parser("ellipse-from-mask",
                          help="fit moment ellipses to binary masks (PGM/PNG)")
    mask.add_argument("masks", nargs="+", help="mask image paths")
    mask.add_argument("--sidecar", default=None,
                      help="JSON with per-mask metadata: "
                           '{"masks": [{"path", "object", "frame", "origin_offset"}]}')
    mask.add_argument("--out", default=None)
    mask.set_defaults(func=cmd_ellipse_from_mask)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except QuadricFitError as exc:
        _warn(f"error: {exc}")
        return EXIT_MALFORMED


if __name__ == "__main__":
    sys.exit(main())
