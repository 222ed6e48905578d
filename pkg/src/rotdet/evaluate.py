"""Held-out metrics: per-stage orientation quality and detection recall
at a false-positive budget, overall and per corpus orientation."""
from __future__ import annotations

import numpy as np

from . import cascade, geometry, pipeline
from .geometry import Box, OrientationFrame, normalize_angle


def _true_theta1(theta: float) -> float:
    return 0.0 if -90.0 < theta <= 90.0 else 180.0


def _true_theta2(residual: float) -> float:
    # coarse step putting the residual into [-45, 45]
    for t2 in (-90.0, 0.0, 90.0):
        if -45.0 <= normalize_angle(residual - t2) <= 45.0:
            return t2
    return 0.0


def _crop_in_frame(frames: dict, box: Box, theta_coarse: float, side: int,
                   W: int, H: int) -> np.ndarray:
    fr = geometry.frame_for_theta(theta_coarse)
    x, y = geometry.remap_box(box.a, box.b, box.w, OrientationFrame.UP, fr, W, H)
    return geometry.crop_resize_many(frames[fr], np.array([[x, y, box.w]]), side)[0]


def orientation_metrics(nets: dict, images, predictor=None) -> dict:
    """Accuracy of the stage-1/2 coarse decisions and stage-3 mean
    absolute angle error, measured on ground-truth face crops presented
    with ground-truth coarse calibration.

    ``predictor(stage, patch, residual)`` may be injected for testing;
    it must return the predicted angle in degrees for that stage.
    """
    from .trainer import stage1_orient_label, stage2_orient_label

    hits1 = tot1 = hits2 = tot2 = 0
    errs3 = []
    for si in images:
        img = si.image
        h, w = img.shape[:2]
        frames = pipeline.build_frames(img)
        for box, theta in si.faces:
            # stage 1: raw crop, binary up/down
            lbl1 = stage1_orient_label(theta)
            if lbl1 is not None:
                if predictor is None:
                    patch = geometry.crop_resize_many(
                        img, np.array([[box.a, box.b, box.w]]), 24)
                    outs = cascade.forward(nets[1], patch)
                    g = cascade.face_prob(outs["orient"])[0]
                    pred = cascade.decide_theta1(float(g))
                else:
                    pred = predictor(1, box, theta)
                hits1 += int((pred == 0.0) == (lbl1 == 1))
                tot1 += 1

            # stage 2: crop calibrated by the true theta1
            t1 = _true_theta1(theta)
            r1 = normalize_angle(theta - t1)
            lbl2 = stage2_orient_label(r1)
            if lbl2 is not None:
                if predictor is None:
                    patch = _crop_in_frame(frames, box, t1, 24, w, h)
                    outs = cascade.forward(nets[2], patch[None])
                    p = outs["orient"][0]
                    pred = cascade.decide_theta2(*np.asarray(p, dtype=np.float64))
                else:
                    pred = predictor(2, box, r1)
                hits2 += int(pred == (-90.0, 0.0, 90.0)[lbl2])
                tot2 += 1

            # stage 3: crop calibrated by true theta1 + theta2
            t2 = _true_theta2(r1)
            r2 = normalize_angle(r1 - t2)
            if predictor is None:
                patch = _crop_in_frame(frames, box, t1 + t2, 48, w, h)
                outs = cascade.forward(nets[3], patch[None])
                pred3 = float(cascade.theta3_degrees(outs["orient"][0, 0]))
            else:
                pred3 = predictor(3, box, r2)
            errs3.append(abs(pred3 - r2))
    return {
        "stage1_accuracy": hits1 / tot1 if tot1 else float("nan"),
        "stage2_accuracy": hits2 / tot2 if tot2 else float("nan"),
        "stage3_mae_deg": float(np.mean(errs3)) if errs3 else float("nan"),
        "n_stage1": tot1,
        "n_stage2": tot2,
        "n_stage3": len(errs3),
    }


def rotate_ground_truth(faces, R: int, W: int, H: int):
    """Ground truth for an image rotated clockwise by R degrees."""
    if R == 0:
        return list(faces)
    out = []
    for box, theta in faces:
        x, y = geometry._map_cw(box.a, box.b, box.w, R, W, H)
        out.append((Box(x, y, box.w), normalize_angle(theta + R)))
    return out


def recall_at_fp(nets: dict, images, cfg=None, fp_budget: float | None = None,
                 rotation: int = 0, iou_match: float = 0.5,
                 detector=None) -> dict:
    """Recall at a corpus-level false-positive budget.

    Detections across the (optionally rotated) corpus are pooled and
    sorted by score; recall is read off at the largest prefix whose
    false-positive count stays within the budget.
    """
    cfg = cfg or pipeline.DetectConfig()
    if fp_budget is None:
        fp_budget = len(images) / 28.0
    scored = []  # (score, is_tp)
    total_faces = 0
    for si in images:
        img = si.image
        h, w = img.shape[:2]
        if rotation:
            img = geometry.rot_exact(img, rotation)
            gts = rotate_ground_truth(si.faces, rotation, w, h)
        else:
            gts = list(si.faces)
        total_faces += len(gts)
        dets = detector(img) if detector else pipeline.detect(img, nets, cfg)
        taken = [False] * len(gts)
        for d in sorted(dets, key=lambda d: -d.score):
            best, best_iou = -1, iou_match
            for j, (gb, _) in enumerate(gts):
                if taken[j]:
                    continue
                v = geometry.iou(d.box, gb)
                if v >= best_iou:
                    best, best_iou = j, v
            if best >= 0:
                taken[best] = True
                scored.append((d.score, True))
            else:
                scored.append((d.score, False))
    scored.sort(key=lambda t: -t[0])
    tp = fp = 0
    best_tp = 0
    for s, is_tp in scored:
        if is_tp:
            tp += 1
        else:
            fp += 1
        if fp <= fp_budget:
            best_tp = tp
    recall = best_tp / total_faces if total_faces else float("nan")
    return {"recall": recall, "faces": total_faces,
            "detections": len(scored), "fp_budget": fp_budget}


def match_rotated_detections(dets_orig, dets_rot, R: int, W: int, H: int,
                             iou_thresh: float = 0.7,
                             angle_tol: float = 15.0):
    """Count original detections that reappear, properly transformed, in
    the rotated image's detections; returns (matched, total)."""
    matched = 0
    for d in dets_orig:
        x, y = geometry._map_cw(d.box.a, d.box.b, d.box.w, R, W, H) if R else (d.box.a, d.box.b)
        want_theta = normalize_angle(d.theta_rip + R)
        box_r = Box(x, y, d.box.w)
        for e in dets_rot:
            dth = abs(normalize_angle(e.theta_rip - want_theta))
            if dth <= angle_tol and geometry.iou(box_r, e.box) >= iou_thresh:
                matched += 1
                break
    return matched, len(dets_orig)
