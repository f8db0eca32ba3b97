"""Command-line interface.

Every subcommand writes its artifacts plus ``manifest.json`` (parameters,
seed, input/output digests and library versions) into ``--out``. Exit status
is 0 on success, 2 for usage errors and 1 for data errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import cloudseg, distill, evalkit, gbvs, heatmap, ingest, knn, multiview, roi, synthetic
from .core import BBox2D, BBox3D, PinholeCamera
from .errors import GazePerceptError, ParseError

EXCLUDED_FROM_MANIFEST = ("out", "threads", "config", "func")


@dataclass
class RunConfig:
    command: str
    params: dict
    seed: int
    out: Path
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[Path] = field(default_factory=list)

    def write(self, rel: str, data: bytes | str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, str):
            data = data.encode()
        p.write_bytes(data)
        self.outputs.append(p)
        return p

    def track(self, *paths) -> None:
        self.outputs.extend(Path(p) for p in paths)


class UsageError(Exception):
    pass


# -- small input helpers -----------------------------------------------------


def _floats(text: str, n: int, what: str) -> tuple[float, ...]:
    parts = text.replace(",", " ").split()
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be {n} numbers, got {text!r}") from None
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"{what} must be {n} numbers, got {text!r}")
    return vals


def _point2(text):
    return _floats(text, 2, "point")


def _point3(text):
    return _floats(text, 3, "point")


def _box(text):
    return BBox2D(*_floats(text, 4, "box"))


def load_points(path, dims: int) -> np.ndarray:
    """Numeric rows (comma or whitespace separated, ``#`` comments); a gaze log also works."""
    text = Path(path).read_text()
    if text.lstrip().startswith("#") and "rx" in text.split("\n", 1)[0]:
        return ingest.parse_gaze_log(text).positions(dims)
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            if not rows:
                continue  # header line
            raise ParseError(f"non-numeric value in {path}", lineno) from None
        if len(vals) < dims:
            raise ParseError(f"expected {dims} columns, got {len(vals)}", lineno)
        rows.append(vals[:dims])
    return np.array(rows, dtype=float).reshape(-1, dims)


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    import PIL
    import scipy

    return {"gazepercept": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "Pillow": PIL.__version__}


def _gbvs_params(args) -> gbvs.GbvsParams:
    return gbvs.GbvsParams(
        sigma=args.sigma,
        k=None if args.k < 0 else args.k,
        l=args.l,
        q=args.q,
        cap=args.cap,
        variant=args.variant,
        normalize_k=None if args.normalize_k < 0 else args.normalize_k,
        legacy_sigma=args.legacy_sigma,
        sigma_fraction=args.sigma_fraction,
    )


def _camera(args) -> PinholeCamera:
    if args.camera:
        doc = json.loads(Path(args.camera).read_text())
        try:
            return PinholeCamera(
                float(doc["fx"]), float(doc["fy"]), float(doc["cx"]), float(doc["cy"]),
                int(doc["width"]), int(doc["height"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad camera file {args.camera}: {exc}") from None
    return PinholeCamera(525.0, 525.0, 319.5, 239.5, 640, 480)


# -- subcommands -------------------------------------------------------------


def cmd_heatmap(args, run: RunConfig) -> None:
    log = ingest.load_gaze_log(args.gaze)
    run.inputs["gaze"] = args.gaze
    ann = None
    if args.annotations:
        ann = ingest.load_annotations(args.annotations)
        run.inputs["annotations"] = args.annotations
    spec = heatmap.WindowSpec(args.window, args.stride)
    grid = tuple(args.grid) + (1,) * (3 - len(args.grid))
    dims = 3 if grid[2] > 1 else 2
    fs = heatmap.build_features(log, spec, grid, ann, dims)
    path = run.out / "features.bin"
    heatmap.save_features(path, fs.features, grid, log.resolution, spec)
    run.track(path, str(path) + ".json")
    labels = {
        "classes": fs.classes.tolist(),
        "targets": [None if np.isnan(t).any() else [float(v) for v in t] for t in fs.targets],
        "starts": fs.starts.tolist(),
    }
    run.write("labels.json", json.dumps(labels, indent=1) + "\n")
    print(f"{len(fs.features)} windows, {fs.features.shape[1]} features each")


def cmd_knn(args, run: RunConfig) -> None:
    X, _ = heatmap.load_features(args.features)
    doc = json.loads(Path(args.labels).read_text())
    run.inputs.update(features=args.features, labels=args.labels)
    classes = np.asarray(doc["classes"], dtype=int)
    if args.task == "classify":
        rep = knn.cross_validate(X, classes, args.folds, args.k, args.seed, "classify")
    else:
        keep = [i for i, t in enumerate(doc["targets"]) if t is not None]
        y = np.array([doc["targets"][i] for i in keep], dtype=float).reshape(-1, 4)
        rep = knn.cross_validate(X[keep], y, args.folds, args.k, args.seed, "regress")
    run.write("cv_report.json", rep.to_json() + "\n")
    print(f"{rep.task}: mean {rep.mean:.4f} (std {rep.std:.4f}) over {rep.folds} folds")


def cmd_saliency(args, run: RunConfig) -> None:
    image = ingest.load_png(args.image)
    run.inputs["image"] = args.image
    gaze = None
    if args.gaze:
        gaze = load_points(args.gaze, 2)
        run.inputs["gaze"] = args.gaze
    params = _gbvs_params(args)
    field_ = gbvs.saliency(image, gaze, params)
    gbvs.save_saliency_png(field_, run.out / "saliency.png")
    gbvs.save_saliency_bin(field_, run.out / "saliency.bin")
    gbvs.save_overlay_png(image, field_, run.out / "overlay.png")
    run.track(run.out / "saliency.png", run.out / "saliency.bin", run.out / "overlay.png")
    if args.roi:
        box, mask = roi.extract_roi(field_, largest_only=args.largest_only)
        roi.save_mask_png(mask, run.out / "mask.png")
        roi.save_box_json(box, run.out / "box.json", args.label, mask.threshold)
        run.track(run.out / "mask.png", run.out / "box.json")
        print(f"box {box.as_tuple()}")


def cmd_roi(args, run: RunConfig) -> None:
    run.inputs["saliency"] = args.saliency
    if args.saliency.endswith(".bin"):
        if not args.shape:
            raise UsageError("--shape H W is required for .bin input")
        values = np.frombuffer(Path(args.saliency).read_bytes(), dtype="<f8").reshape(args.shape)
    else:
        values = ingest.load_png(args.saliency).astype(float)
        if values.ndim == 3:
            values = values.mean(axis=2)
        values /= 255.0
    box, mask = roi.extract_roi(values, largest_only=args.largest_only)
    roi.save_mask_png(mask, run.out / "mask.png")
    roi.save_box_json(box, run.out / "box.json", args.label, mask.threshold)
    run.track(run.out / "mask.png", run.out / "box.json")
    print(f"threshold {mask.threshold}, box {box.as_tuple()}")


def cmd_distill(args, run: RunConfig) -> None:
    props = ingest.load_proposals(args.proposals)
    run.inputs["proposals"] = args.proposals
    kept = distill.distill_multi(props, args.gaze)
    ingest.save_proposals(kept.boxes, run.out / "distilled.txt")
    run.track(run.out / "distilled.txt")
    doc = {"indices": list(kept.indices), "n_input": len(props), "n_kept": len(kept)}
    if args.gt is not None:
        before = distill.sufficiency_report(props, args.gt, args.tau)
        after = distill.sufficiency_report(kept, args.gt, args.tau, reference=props)
        doc["sufficiency"] = json.loads(distill.report_json(before, after))
    run.write("distill_report.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"kept {len(kept)} of {len(props)} proposals")


def _seg_params(args) -> cloudseg.SegParams:
    base = cloudseg.SegParams.literal_tabletop if args.preset == "literal" else cloudseg.SegParams
    kw = dict(
        z_min=args.z_min, z_max=args.z_max, max_normal_deviation_deg=args.max_deviation,
        inlier_distance=args.inlier_distance, iterations=args.iterations, seed=args.seed,
        attach_radius=args.attach_radius, expected_normal=args.normal,
    )
    for name in ("leaf", "tolerance", "min_cluster_size"):
        v = getattr(args, name)
        if v is not None:
            kw[name] = v
    return base(**kw)


def cmd_segment(args, run: RunConfig) -> None:
    cloud = ingest.load_xyz(args.cloud)
    run.inputs["cloud"] = args.cloud
    seg = cloudseg.segment_by_gaze(cloud, args.gaze, _seg_params(args), args.mode)
    run.write("segmentation.json", seg.to_json())
    ingest.save_xyz(cloud.points[seg.indices], run.out / "object.xyz")
    run.track(run.out / "object.xyz")
    print(f"{len(seg.indices)} object points, box center {seg.box.center}")


def cmd_label(args, run: RunConfig) -> None:
    cam = _camera(args)
    if args.camera:
        run.inputs["camera"] = args.camera
    if args.cloud:
        pts = ingest.load_xyz(args.cloud).points
        run.inputs["cloud"] = args.cloud
        box = BBox3D.from_points(pts)
    else:
        pts = load_points(args.gaze_points, 3)
        run.inputs["gaze_points"] = args.gaze_points
        box = multiview.gaze_box_3d(pts)
    path = multiview.circular_path(box, args.waypoints, args.min_dist)
    result = multiview.label_run(pts, path, cam, m_min=args.m_min if args.cloud else 1)
    out_dir = run.out / "omd" / args.label
    multiview.save_run(result, out_dir, cam, args.label)
    run.track(*sorted(p for p in out_dir.iterdir()))
    doc = {"box": {"center": list(box.center), "size": list(box.size)}, "errors": {str(k): v for k, v in result.errors.items()}}
    run.write("label_run.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"{len(result.labeled)} of {len(path)} views labelled")


def cmd_eval(args, run: RunConfig) -> None:
    gts = evalkit.load_ground_truth(args.gt)
    dets = evalkit.load_detections(args.pred)
    run.inputs.update(gt=args.gt, pred=args.pred)
    rep = evalkit.report(dets, gts, include_empty=args.include_empty)
    run.track(*evalkit.write_report(rep, run.out, plots=args.plots))
    _print_report(rep)


def _print_report(rep: evalkit.MetricReport) -> None:
    print(f"mAP50 {rep.map50:.3f}  mAP75 {rep.map75:.3f}  mAP {rep.map:.3f}  mAR100 {rep.mar(100):.3f}")
    if rep.unknown_classes:
        print(f"unknown classes: {', '.join(rep.unknown_classes)}")


def _demo_frame(task):
    i, frame, params = task
    field_ = gbvs.saliency(frame.image, frame.gaze, params)
    try:
        box, mask = roi.extract_roi(field_)
    except GazePerceptError:
        return i, field_, None, 0.0
    # confidence = mean saliency over the foreground
    score = float(field_.values[mask.mask].mean())
    return i, field_, box, min(max(score, 0.0), 1.0)


def cmd_demo(args, run: RunConfig) -> None:
    rng = np.random.default_rng(args.seed)
    params = _gbvs_params(args)
    frames = [synthetic.render_frame(rng, decoy=bool(rng.random() < args.decoy_rate)) for _ in range(args.frames)]
    tasks = [(i, f, params) for i, f in enumerate(frames)]
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(_demo_frame, tasks))

    dets, gts = [], []
    for (i, field_, box, score), fr in zip(results, frames):
        name = f"frame{i:03d}"
        (run.out / "frames").mkdir(parents=True, exist_ok=True)
        ingest.save_rgb_png(fr.image, run.out / "frames" / f"{name}.png")
        gbvs.save_saliency_png(field_, run.out / "frames" / f"{name}_saliency.png")
        run.track(run.out / "frames" / f"{name}.png", run.out / "frames" / f"{name}_saliency.png")
        run.write(f"frames/{name}_gaze.csv", "".join(f"{x!r},{y!r}\n" for x, y in fr.gaze.tolist()))
        gts.append(evalkit.GroundTruth(name, "object", fr.box))
        if box is not None:
            dets.append(evalkit.Detection(name, "object", box, score))
    evalkit.save_detections(dets, run.out / "detections.json")
    evalkit.save_ground_truth(gts, run.out / "ground_truth.json")
    run.track(run.out / "detections.json", run.out / "ground_truth.json")
    rep = evalkit.report(dets, gts)
    run.track(*evalkit.write_report(rep, run.out / "eval"))

    scene = synthetic.tabletop_scene(rng)
    target = int(rng.integers(len(scene.blob_centers)))
    ingest.save_xyz(scene.points, run.out / "scene.xyz")
    run.track(run.out / "scene.xyz")
    seg_params = cloudseg.SegParams(z_min=-0.5, z_max=1.0, seed=args.seed)
    seg = cloudseg.segment_by_gaze(scene.points, scene.blob_centers[target], seg_params)
    run.write("segmentation.json", seg.to_json())
    cam = PinholeCamera(525.0, 525.0, 319.5, 239.5, 640, 480)
    path = multiview.circular_path(seg.box, args.waypoints)
    labeled = multiview.label_run(scene.points[seg.indices], path, cam)
    out_dir = run.out / "omd" / "object"
    multiview.save_run(labeled, out_dir, cam, "object")
    run.track(*sorted(out_dir.iterdir()))
    _print_report(rep)
    print(f"segmented {len(seg.indices)} points; {len(labeled.labeled)} views labelled")


# -- parser ------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--threads", type=int, default=1, help="worker threads")


def _add_gbvs(p: argparse.ArgumentParser, sigma_fraction: float = 0.15) -> None:
    p.add_argument("--variant", choices=gbvs.VARIANTS, default="ga")
    p.add_argument("--k", type=int, default=1, help="activation steps; negative iterates to convergence")
    p.add_argument("--normalize-k", type=int, default=1, help="normalisation steps; negative converges")
    p.add_argument("--sigma", type=float, default=None, help="Gaussian scale in map cells")
    p.add_argument("--sigma-fraction", type=float, default=sigma_fraction, help="sigma as a fraction of the mean map edge")
    p.add_argument("--l", type=float, default=0.0, help="sparsification threshold (0 = dense)")
    p.add_argument("--q", type=float, default=0.0, help="temporal blend factor")
    p.add_argument("--cap", type=int, default=32, help="internal map edge length")
    p.add_argument("--legacy-sigma", action="store_true")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="gazepercept", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("heatmap", help="window a gaze log into heatmap features")
    p.add_argument("--gaze", required=True)
    p.add_argument("--annotations")
    p.add_argument("--grid", type=int, nargs="+", default=[30, 30])
    p.add_argument("--window", type=float, default=250.0, help="window length in ms")
    p.add_argument("--stride", type=float, default=None, help="window stride in ms (default: length)")
    p.set_defaults(func=cmd_heatmap)
    subs["heatmap"] = p

    p = sub.add_parser("knn", help="cross-validate a KNN model on heatmap features")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--task", choices=("classify", "regress"), default="classify")
    p.add_argument("--k", type=int, default=knn.DEFAULT_K)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_knn)
    subs["knn"] = p

    p = sub.add_parser("saliency", help="plain / gaze-assisted GBVS saliency")
    p.add_argument("--image", required=True)
    p.add_argument("--gaze")
    _add_gbvs(p)
    p.add_argument("--roi", action="store_true", help="also extract the Otsu box")
    p.add_argument("--largest-only", action="store_true")
    p.add_argument("--label", default="")
    p.set_defaults(func=cmd_saliency)
    subs["saliency"] = p

    p = sub.add_parser("roi", help="Otsu box from a saliency map")
    p.add_argument("--saliency", required=True, help="8-bit PNG or little-endian float64 .bin")
    p.add_argument("--shape", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--largest-only", action="store_true")
    p.add_argument("--label", default="")
    p.set_defaults(func=cmd_roi)
    subs["roi"] = p

    p = sub.add_parser("distill", help="keep proposals containing the gaze point(s)")
    p.add_argument("--proposals", required=True)
    p.add_argument("--gaze", type=_point2, action="append", required=True, help="x,y (repeat to intersect)")
    p.add_argument("--gt", type=_box, help="x1,y1,x2,y2 ground truth for the sufficiency report")
    p.add_argument("--tau", type=float, default=distill.SUFFICIENT_IOU)
    p.set_defaults(func=cmd_distill)
    subs["distill"] = p

    p = sub.add_parser("segment", help="gaze-seeded point-cloud segmentation")
    p.add_argument("--cloud", required=True)
    p.add_argument("--gaze", type=_point3, required=True, help="x,y,z in the cloud frame")
    p.add_argument("--mode", choices=cloudseg.MODES, default="nearest")
    p.add_argument("--preset", choices=("default", "literal"), default="default")
    p.add_argument("--z-min", type=float, default=0.0)
    p.add_argument("--z-max", type=float, default=3.0)
    p.add_argument("--leaf", type=float)
    p.add_argument("--tolerance", type=float)
    p.add_argument("--min-cluster-size", type=int)
    p.add_argument("--max-deviation", type=float, default=30.0)
    p.add_argument("--inlier-distance", type=float, default=0.01)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--attach-radius", type=float, default=0.02)
    p.add_argument("--normal", type=_point3, default=(0.0, 0.0, 1.0))
    p.set_defaults(func=cmd_segment)
    subs["segment"] = p

    p = sub.add_parser("label", help="multiview auto-labelling into the OMD layout")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--cloud", help="segmented object cloud (XYZ, world frame)")
    src.add_argument("--gaze-points", help="3D gaze points; the view path circles their median/IQR box")
    p.add_argument("--camera", help="JSON with fx, fy, cx, cy, width, height")
    p.add_argument("--waypoints", type=int, default=8)
    p.add_argument("--min-dist", type=float, default=multiview.MIN_DIST)
    p.add_argument("--m-min", type=int, default=multiview.M_MIN)
    p.add_argument("--label", default="object")
    p.set_defaults(func=cmd_label)
    subs["label"] = p

    p = sub.add_parser("eval", help="COCO-style metrics for detections")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--include-empty", action="store_true", help="count classes without ground truth in the means")
    p.add_argument("--plots", action="store_true", help="write PNG plots (needs matplotlib)")
    p.set_defaults(func=cmd_eval)
    subs["eval"] = p

    p = sub.add_parser("demo-synthetic", help="run the whole pipeline on seeded synthetic data")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--decoy-rate", type=float, default=0.0)
    p.add_argument("--waypoints", type=int, default=8)
    _add_gbvs(p, sigma_fraction=0.2)
    p.set_defaults(func=cmd_demo)
    subs["demo-synthetic"] = p

    for p in subs.values():
        _add_common(p)
    return parser, subs


def read_config(path, sub: argparse.ArgumentParser) -> dict:
    """Parse ``key = value`` lines into typed defaults for ``sub``."""
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config", "func")}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"{path}:{lineno}: unknown parameter {key!r}")
        act = actions[dest]
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            out[dest] = value.lower() in ("1", "true", "yes", "on")
        elif act.nargs in ("+", "*") or (isinstance(act.nargs, int) and act.nargs > 1):
            conv = act.type or str
            out[dest] = [conv(v) for v in value.replace(",", " ").split()]
        elif act.type is not None:
            try:
                out[dest] = act.type(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from None
        else:
            out[dest] = value
    return out


def _manifest(run: RunConfig, args) -> str:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in EXCLUDED_FROM_MANIFEST}

    def plain(v):
        if isinstance(v, BBox2D):
            return list(v.as_tuple())
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v

    outputs = sorted({p.resolve() for p in run.outputs if Path(p).is_file()})
    doc = {
        "command": run.command,
        "parameters": {k: plain(v) for k, v in params.items()},
        "seed": run.seed,
        "inputs": {k: {"path": v, "sha256": _digest(v)} for k, v in sorted(run.inputs.items())},
        "outputs": [
            {"path": p.relative_to(run.out.resolve()).as_posix(), "sha256": _digest(p)} for p in outputs
        ],
        "versions": _versions(),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def run(argv=None) -> int:
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.config:
            sub = subs[args.command]
            sub.set_defaults(**read_config(args.config, sub))
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"usage error: cannot read config: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    cfg = RunConfig(args.command, vars(args), args.seed, out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, cfg)
        (out / "manifest.json").write_text(_manifest(cfg, args))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
