"""Command-line entry point: propagate, evaluate, ablate, synth, serve."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import dataset, evaluation, synth
from .core import NUM_CLASSES, ManifestError, SegpropError, load_manifest
from .flow import (
    DEFAULT_EPS_FB,
    ArrayFlowSource,
    DirectoryFlowSource,
    EstimatingFlowSource,
    FlowField,
    FlowDirection,
    write_flow_file,
)
from .propagation import ExternalVoteProvider, PropagationConfig, Propagator

log = logging.getLogger("segprop")

SYNTH_PRESETS = {
    "translating_rectangles": synth.translating_rectangles_scene,
    "crossing_sprites": synth.crossing_sprites_scene,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--f", dest="radius", type=int, default=2,
                        help="temporal neighborhood radius for iterations")
    parser.add_argument("--iterations", type=int, default=3,
                        help="consensus iterations after the initial pass (0 = none)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--eps-fb", type=float, default=DEFAULT_EPS_FB,
                        help="forward-backward validity threshold in px")
    parser.add_argument("--inlier-px", type=float, default=3.0)
    parser.add_argument("--min-region-size", type=int, default=64)
    parser.add_argument("--flow-weight", type=float, default=1.0)
    parser.add_argument("--homography-weight", type=float, default=1.0)
    parser.add_argument("--external-weight", type=float, default=1.0)
    parser.add_argument("--no-homography", action="store_true",
                        help="disable the per-region homography vote channel")
    parser.add_argument("--tie-break", choices=("near_pull", "lowest"), default="near_pull")


def _config_from_args(args) -> PropagationConfig:
    return PropagationConfig(
        radius=args.radius,
        iterations=args.iterations,
        seed=args.seed,
        eps_fb=args.eps_fb,
        ransac_inlier_px=args.inlier_px,
        min_region_size=args.min_region_size,
        flow_weight=args.flow_weight,
        homography_weight=args.homography_weight,
        external_weight=args.external_weight,
        use_homography=not args.no_homography,
        tie_break=args.tie_break,
    )


def _flow_source_for(manifest, flow_flag: str | None):
    if flow_flag == "estimate":
        images = [
            np.asarray(Image.open(p).convert("L"), dtype=np.float64) / 255.0
            for p in manifest.frame_paths
        ]
        return EstimatingFlowSource(images)
    flow_dir = flow_flag or manifest.flow_dir
    if flow_dir is None:
        raise SegpropError(
            "no flow source: set flow_dir in the manifest, pass --flow DIR, "
            "or pass --flow estimate"
        )
    return DirectoryFlowSource(flow_dir)


def cmd_propagate(args) -> int:
    manifest = load_manifest(args.manifest)
    labels_dir = Path(args.labels) if args.labels else Path(args.manifest).parent / "labels"
    keyframe_labels = []
    for k in manifest.keyframe_indices:
        path = labels_dir / f"{k:06d}.png"
        if not path.exists():
            raise SegpropError(f"missing keyframe label image {path}")
        keyframe_labels.append(dataset.load_label_map(path, frame_index=k))
    flows = _flow_source_for(manifest, args.flow)
    config = _config_from_args(args)

    providers = []
    for spec in args.provider or []:
        kind, _, arg = spec.partition(":")
        if kind != "external":
            raise SegpropError(f"unknown provider kind {kind!r}")
        providers.append(ExternalVoteProvider(arg))

    if args.dry_run:
        print(json.dumps({
            "manifest": str(args.manifest),
            "frames": manifest.frame_count,
            "keyframes": manifest.keyframe_indices,
            "config": config.to_dict(),
            "providers": [p.name for p in providers],
        }, indent=2))
        return 0

    out_dir = Path(args.out)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    prop = Propagator(config=config, providers=providers)
    dense = prop.run(keyframe_labels, flows, manifest.frame_count)
    for lm in dense:
        dataset.save_label_image(lm, out_dir / "labels" / f"{lm.frame_index:06d}.png")
    (out_dir / "report.json").write_text(json.dumps(prop.report, indent=2, default=str))
    print(f"wrote {manifest.frame_count} label images to {out_dir / 'labels'}")
    return 0


def cmd_evaluate(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    pred_files = {int(p.stem): p for p in pred_dir.glob("*.png")}
    gt_files = {int(p.stem): p for p in gt_dir.glob("*.png")}
    common = sorted(set(pred_files) & set(gt_files))
    if not common:
        raise SegpropError("no overlapping frame indices between pred and gt")
    pairs = (
        (dataset.load_label_map(pred_files[k], k), dataset.load_label_map(gt_files[k], k))
        for k in common
    )
    agg = evaluation.evaluate_frames(pairs)
    pooled = evaluation.report_from_confusion(np.asarray(agg["pooled"]["confusion"]))
    print(evaluation.format_class_table(pooled))
    print(f"mean F (per-frame average): {agg['mean_f']:.3f}")
    if args.out:
        Path(args.out).write_text(json.dumps(agg, indent=2))
    return 0


def cmd_ablate(args) -> int:
    manifest = load_manifest(args.manifest)
    labels_dir = Path(args.labels) if args.labels else Path(args.manifest).parent / "labels"
    gt_labels = {
        k: dataset.load_label_map(labels_dir / f"{k:06d}.png", frame_index=k)
        for k in manifest.keyframe_indices
    }
    flows = _flow_source_for(manifest, args.flow)
    strides = [int(s) for s in args.strides.split(",")]
    config = _config_from_args(args)
    rows = evaluation.ablation_propagation_length(
        gt_labels, flows, manifest.frame_count, strides, config
    )
    print(evaluation.format_ablation_table(rows))
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2))
    return 0


def cmd_synth(args) -> int:
    if args.spec:
        spec = synth.load_scene(args.spec)
    else:
        factory = SYNTH_PRESETS[args.preset]
        spec = factory(width=args.size, height=args.size,
                       frame_count=args.frames, seed=args.seed)
    scene = synth.render_scene(spec)
    out = Path(args.out)
    frames_dir = out / "frames"
    labels_dir = out / "labels"
    flow_dir = out / "flow"
    gt_dir = out / "ground_truth"
    for d in (frames_dir, labels_dir, flow_dir, gt_dir):
        d.mkdir(parents=True, exist_ok=True)

    for t in range(spec.frame_count):
        img = (scene.frames[t] * 255).astype(np.uint8)
        Image.fromarray(img).save(frames_dir / f"{t:06d}.png")
        dataset.save_label_image(scene.labels[t], gt_dir / f"{t:06d}.png")
        if t % args.label_stride == 0:
            dataset.save_label_image(scene.labels[t], labels_dir / f"{t:06d}.png")
    for t, vec in enumerate(scene.flows_forward):
        write_flow_file(flow_dir / f"{t:06d}_fwd.flo",
                        FlowField(t, FlowDirection.FORWARD, vec))
    for t, vec in scene.flows_backward.items():
        write_flow_file(flow_dir / f"{t:06d}_bwd.flo",
                        FlowField(t, FlowDirection.BACKWARD, vec))

    entry = dataset.index_video(out)
    from .core import save_manifest
    save_manifest(entry.manifest, out / "manifest.json")
    synth.save_scene(spec, out / "scene.json")
    print(f"synthesized {spec.frame_count} frames at {spec.width}x{spec.height} in {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.root, workers=args.jobs, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segprop",
        description="Flow-chain and homography voting toolkit for densifying "
                    "sparse keyframe video annotations.",
    )
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propagate", help="densify keyframe labels across a sequence")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels", help="keyframe label dir (default: <manifest dir>/labels)")
    p.add_argument("--flow", help="flow dir, or 'estimate' to compute classically")
    p.add_argument("--out", default="out")
    p.add_argument("--provider", action="append",
                   help="external vote channel, e.g. external:VOTES_DIR")
    p.add_argument("--dry-run", action="store_true",
                   help="validate inputs and print the plan without writing")
    _add_config_flags(p)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("evaluate", help="score predicted labels against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="hidden-keyframe propagation-length sweep")
    p.add_argument("--manifest", required=True)
    p.add_argument("--labels")
    p.add_argument("--flow")
    p.add_argument("--strides", default="25,50,100")
    p.add_argument("--out")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic scene in dataset layout")
    p.add_argument("--spec", help="scene spec JSON (overrides --preset)")
    p.add_argument("--preset", choices=sorted(SYNTH_PRESETS), default="translating_rectangles")
    p.add_argument("--frames", type=int, default=26)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--label-stride", type=int, default=25,
                   help="write keyframe labels every N frames")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="run the annotation/review HTTP service")
    p.add_argument("--root", required=True, help="directory of sequence folders")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--jobs", type=int, default=2, help="propagation worker threads")
    p.add_argument("--ui", help="static frontend directory to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (SegpropError, ManifestError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
