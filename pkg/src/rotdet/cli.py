"""Command-line surface: train, detect, eval, bench."""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import cascade, evaluate, imageio, pipeline, synth, trainer
from .backend import BACKEND_NAME

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _load_images(data: str, n_images: int, seed: int):
    if data == "synthetic":
        return synth.gen_synthetic(n_images, seed)
    try:
        return synth.load_corpus(data)
    except (FileNotFoundError, ValueError) as exc:
        raise SystemExit2(f"cannot load corpus: {exc}")


class SystemExit2(RuntimeError):
    pass


def cmd_train(args) -> int:
    cfg = trainer.TrainConfig(seed=args.seed)
    images = _load_images(args.data, args.n_images, args.seed)
    t0 = time.time()
    try:
        nets = trainer.train_cascade(
            images, cfg, log_dir=args.log_dir, iters=args.iters,
            progress=lambda m: print(f"[train] {m}", flush=True))
    except trainer.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except trainer.InsufficientDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        cascade.save_cascade(args.out, nets)
    except OSError as exc:
        print(f"error: cannot write model: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"[train] model written to {args.out} "
          f"({time.time() - t0:.1f}s, backend {BACKEND_NAME})")
    if args.eval_images > 0 and args.iters != 0:
        held = synth.gen_synthetic(args.eval_images, args.seed + 90001)
        m = evaluate.orientation_metrics(nets, held)
        print(f"[train] held-out stage-1 orientation accuracy: "
              f"{m['stage1_accuracy']:.4f} (n={m['n_stage1']})")
        print(f"[train] held-out stage-2 orientation accuracy: "
              f"{m['stage2_accuracy']:.4f} (n={m['n_stage2']})")
        print(f"[train] held-out stage-3 mean angle error: "
              f"{m['stage3_mae_deg']:.2f} deg (n={m['n_stage3']})")
    return EXIT_OK


def _detect_one(path, nets, cfg):
    img = imageio.read_image(path)
    dets = pipeline.detect(img, nets, cfg)
    return img, dets


def cmd_detect(args) -> int:
    try:
        nets = cascade.load_cascade(args.model)
    except (OSError, ValueError) as exc:
        print(f"error: cannot load model: {exc}", file=sys.stderr)
        return EXIT_DATA
    cfg = pipeline.DetectConfig(min_face=args.min_face)
    workers = max(1, int(os.environ.get("PCN_THREADS", "1")))
    records = []
    failed = False

    def run(path):
        try:
            return _detect_one(path, nets, cfg)
        except (OSError, ValueError) as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, args.inputs))
    else:
        results = [run(p) for p in args.inputs]

    for path, res in zip(args.inputs, results):
        if isinstance(res, Exception):
            print(f"error: {path}: {res}", file=sys.stderr)
            failed = True
            continue
        img, dets = res
        rec = {
            "path": path,
            "faces": [
                {"a": round(d.box.a, 4), "b": round(d.box.b, 4),
                 "w": round(d.box.w, 4), "theta": round(d.theta_rip, 4),
                 "score": round(d.score, 6)}
                for d in dets
            ],
        }
        records.append(rec)
        if args.annotate:
            os.makedirs(args.annotate, exist_ok=True)
            name = os.path.splitext(os.path.basename(path))[0] + "_det.ppm"
            imageio.write_ppm(os.path.join(args.annotate, name),
                              imageio.annotate(img, dets))

    out = sys.stdout if args.json == "-" else open(args.json, "w")
    try:
        for rec in records:
            out.write(json.dumps(rec) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_DATA if failed else EXIT_OK


def cmd_eval(args) -> int:
    try:
        nets = cascade.load_cascade(args.model)
    except (OSError, ValueError) as exc:
        print(f"error: cannot load model: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        images = _load_images(args.data, 0, 0)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if not images:
        print("error: empty corpus", file=sys.stderr)
        return EXIT_DATA
    m = evaluate.orientation_metrics(nets, images)
    print(f"stage-1 orientation accuracy: {m['stage1_accuracy']:.4f} "
          f"(n={m['n_stage1']})")
    print(f"stage-2 orientation accuracy: {m['stage2_accuracy']:.4f} "
          f"(n={m['n_stage2']})")
    print(f"stage-3 mean abs angle error: {m['stage3_mae_deg']:.2f} deg "
          f"(n={m['n_stage3']})")
    budget = args.fp_budget if args.fp_budget is not None else len(images) / 28.0
    cfg = pipeline.DetectConfig(min_face=args.min_face)
    for rot in (0, 90, 180, 270):
        r = evaluate.recall_at_fp(nets, images, cfg=cfg, fp_budget=budget,
                                  rotation=rot)
        print(f"recall @ {budget:.1f} FP, corpus rotated {rot:3d} deg: "
              f"{r['recall']:.4f} ({r['faces']} faces, "
              f"{r['detections']} detections)")
    return EXIT_OK


def _bench_frame(rng, w: int, h: int) -> np.ndarray:
    """A noise frame with a few rendered faces, so every cascade stage
    sees realistic traffic."""
    img = rng.random((h, w, 3), dtype=np.float32) * 0.35 + 0.2
    for _ in range(3):
        side = int(rng.integers(48, 73))
        a = int(rng.integers(0, w - side + 1))
        b = int(rng.integers(0, h - side + 1))
        style = synth.GlyphStyle(
            face_rgb=tuple(rng.uniform(0.78, 0.95, 3)),
            feature_rgb=tuple(rng.uniform(0.02, 0.15, 3)))
        patch, alpha = synth.render_glyph(side, float(rng.uniform(-180, 180)),
                                          style)
        region = img[b : b + side, a : a + side]
        region *= 1 - alpha[..., None].astype(np.float32)
        region += patch.astype(np.float32)
    return img


def cmd_bench(args) -> int:
    try:
        nets = cascade.load_cascade(args.model)
    except (OSError, ValueError) as exc:
        print(f"error: cannot load model: {exc}", file=sys.stderr)
        return EXIT_DATA
    cfg = pipeline.DetectConfig(min_face=args.min_face, stride=args.stride)
    rng = np.random.default_rng(args.seed)
    times, counts, builds = [], [], []
    for _ in range(args.runs):
        frame = _bench_frame(rng, args.width, args.height)
        stats = {}
        t0 = time.perf_counter()
        pipeline.detect(frame, nets, cfg, stats=stats)
        times.append(time.perf_counter() - t0)
        counts.append(stats["stage_counts"])
        builds.append(stats["frame_builds"])
    times = np.array(times)
    counts = np.array(counts, dtype=float)
    print(f"backend: {BACKEND_NAME}")
    print(f"frames: {args.runs} at {args.width}x{args.height}, "
          f"min face {args.min_face}px, stride {args.stride}")
    print(f"FPS mean {1.0 / times.mean():.2f}  median "
          f"{1.0 / np.median(times):.2f}")
    mean_counts = counts.mean(axis=0)
    print(f"candidates: proposed {mean_counts[0]:.0f} -> stage1 "
          f"{mean_counts[1]:.1f} -> stage2 {mean_counts[2]:.1f} -> stage3 "
          f"{mean_counts[3]:.1f}")
    print(f"orientation frame builds per image: {np.mean(builds):.1f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rotdet",
        description="Rotation-invariant cascaded face detector")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the three-stage cascade")
    t.add_argument("--out", required=True, help="output model file")
    t.add_argument("--seed", type=int, default=7)
    t.add_argument("--iters", type=int, default=None,
                   help="SGD iterations per stage (default: full schedule)")
    t.add_argument("--data", default="synthetic",
                   help="'synthetic' or a corpus directory")
    t.add_argument("--n-images", type=int, default=5000)
    t.add_argument("--log-dir", default=None)
    t.add_argument("--eval-images", type=int, default=200)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="detect faces in images")
    d.add_argument("--model", required=True)
    d.add_argument("--in", dest="inputs", nargs="+", required=True)
    d.add_argument("--json", default="-", help="JSONL output path (- = stdout)")
    d.add_argument("--annotate", default=None,
                   help="directory for annotated copies")
    d.add_argument("--min-face", type=int, default=40)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", help="evaluate on an annotated corpus")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--fp-budget", type=float, default=None)
    e.add_argument("--min-face", type=int, default=24,
                   help="smallest face side scanned for (synthetic corpus "
                        "faces go down to 24px)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="throughput benchmark")
    b.add_argument("--model", required=True)
    b.add_argument("--width", type=int, default=640)
    b.add_argument("--height", type=int, default=480)
    b.add_argument("--min-face", type=int, default=40)
    b.add_argument("--stride", type=int, default=4)
    b.add_argument("--runs", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
