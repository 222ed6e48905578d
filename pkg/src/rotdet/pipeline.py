"""End-to-end detection: pyramid proposals, three cascade passes with
flip-based calibration across four orientation frames, and final NMS.

Candidate boxes always live in original-image coordinates; the ``frame``
field says which pre-rotated copy of the image currently feeds the net,
and is kept equal to the rotation cancelling the accumulated coarse
angle.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cascade, geometry
from .geometry import Box, OrientationFrame

NET_SIDE = 24  # stage-1 window side at pyramid scale


@dataclass
class DetectConfig:
    min_face: int = 40
    pyramid_factor: float = 0.79
    stride: int = 4
    stage_thresholds: tuple = (0.4, 0.5, 0.9)
    nms_iou: tuple = (0.8, 0.8, 0.3)
    max_candidates: int = 2500


@dataclass
class Candidate:
    box: Box  # original-image coordinates
    frame: OrientationFrame = OrientationFrame.UP
    score: float = 0.0
    theta_acc: float = 0.0  # theta1 (+ theta2) so far, in {0, +-90, 180}
    theta3: float = 0.0


@dataclass
class DetectedFace:
    box: Box
    theta_rip: float  # degrees in (-180, 180]
    score: float


def pyramid_levels(w: int, h: int, cfg: DetectConfig):
    """Yields (scale, level_w, level_h) until the short side drops below
    the net input side."""
    scale = NET_SIDE / cfg.min_face
    levels = []
    while True:
        lw, lh = int(np.floor(w * scale)), int(np.floor(h * scale))
        if min(lw, lh) < NET_SIDE:
            break
        levels.append((scale, lw, lh))
        scale *= cfg.pyramid_factor
    return levels


def propose(img: np.ndarray, cfg: DetectConfig) -> list[Candidate]:
    """Sliding-window proposals over the image pyramid, all in frame UP."""
    h, w = img.shape[:2]
    if min(h, w) < cfg.min_face:
        return []
    cands = []
    for scale, lw, lh in pyramid_levels(w, h, cfg):
        side = NET_SIDE / scale
        for ys in range(0, lh - NET_SIDE + 1, cfg.stride):
            for xs in range(0, lw - NET_SIDE + 1, cfg.stride):
                cands.append(Candidate(box=Box(xs / scale, ys / scale, side)))
    return cands


def build_frames(img: np.ndarray, stats: dict | None = None) -> dict:
    """The four pre-rotated copies; built exactly once per detect call."""
    if stats is not None:
        stats["frame_builds"] = stats.get("frame_builds", 0) + 1
    return {
        OrientationFrame.UP: img,
        OrientationFrame.RIGHT: geometry.rot_exact(img, 90),
        OrientationFrame.DOWN: geometry.rot_exact(img, 180),
        OrientationFrame.LEFT: geometry.rot_exact(img, 270),
    }


def _forward_chunked(net, patches: np.ndarray, chunk: int = 256) -> dict:
    outs = []
    for i in range(0, len(patches), chunk):
        outs.append(cascade.forward(net, patches[i : i + chunk]))
    return {k: np.concatenate([o[k] for o in outs]) for k in outs[0]}


def run_stage(cands: list[Candidate], stage: int, nets: dict, frames: dict,
              cfg: DetectConfig) -> list[Candidate]:
    """One cascade pass: crop in each candidate's frame, score, regress,
    calibrate, then NMS (per frame for stages 1-2, global for stage 3)."""
    if not cands:
        return []
    net = nets[stage]
    img = frames[OrientationFrame.UP]
    h, w = img.shape[:2]
    tau = cfg.stage_thresholds[stage - 1]

    # crop every candidate from its current frame
    patches = np.empty((len(cands), 3, net.input_side, net.input_side),
                       dtype=np.float32)
    frame_ids = np.array([int(c.frame) for c in cands])
    fboxes = np.array([[c.box.a, c.box.b, c.box.w] for c in cands])
    for fr in OrientationFrame:
        sel = np.flatnonzero(frame_ids == int(fr))
        if len(sel) == 0:
            continue
        boxes_fr = np.empty((len(sel), 3))
        for j, i in enumerate(sel):
            c = cands[i]
            x, y = geometry.remap_box(c.box.a, c.box.b, c.box.w,
                                      OrientationFrame.UP, fr, w, h)
            boxes_fr[j] = (x, y, c.box.w)
        fboxes[sel] = boxes_fr
        patches[sel] = geometry.crop_resize_many(frames[fr], boxes_fr,
                                                 net.input_side)

    outs = _forward_chunked(net, patches)
    f = cascade.face_prob(outs["face"])

    keep = np.flatnonzero(f >= tau)
    if stage == 1 and len(keep) > cfg.max_candidates:
        keep = keep[np.argsort(-f[keep], kind="stable")[: cfg.max_candidates]]

    survivors = []
    for i in keep:
        c = cands[i]
        t = outs["bbox"][i].astype(np.float64)
        # regression happens in the candidate's current frame
        fx, fy, fw = fboxes[i]
        tw = float(t[0])
        if tw <= 0:  # degenerate regression, keep the original box
            nx, ny, nw = fx, fy, fw
        else:
            nw = tw * fw
            nx = fx + 0.5 * fw - 0.5 * nw + float(t[1]) * nw
            ny = fy + 0.5 * fw - 0.5 * nw + float(t[2]) * nw
        ox, oy = geometry.remap_box(nx, ny, nw, c.frame, OrientationFrame.UP, w, h)
        new = Candidate(box=Box(ox, oy, nw), frame=c.frame,
                        score=float(f[i]), theta_acc=c.theta_acc,
                        theta3=c.theta3)
        if stage == 1:
            g = cascade.face_prob(outs["orient"][i][None])[0]  # 2-way softmax
            new.theta_acc = geometry.normalize_angle(
                new.theta_acc + cascade.decide_theta1(float(g)))
            new.frame = geometry.frame_for_theta(new.theta_acc)
        elif stage == 2:
            p = np.asarray(outs["orient"][i], dtype=np.float64)
            e = np.exp(p - p.max())
            p = e / e.sum()
            new.theta_acc = geometry.normalize_angle(
                new.theta_acc + cascade.decide_theta2(*p))
            new.frame = geometry.frame_for_theta(new.theta_acc)
        else:
            new.theta3 = float(cascade.theta3_degrees(outs["orient"][i][0]))
        survivors.append(new)

    # NMS per frame for the coarse stages; the last stage keeps everything
    # so the final merge can vote over all surviving windows
    if stage == 3:
        return survivors
    thr = cfg.nms_iou[stage - 1]
    out = []
    for fr in OrientationFrame:
        group = [c for c in survivors if c.frame == fr]
        if group:
            out.extend(_nms_cands(group, thr))
    out.sort(key=lambda c: -c.score)
    return out


def _nms_cands(group: list[Candidate], thresh: float) -> list[Candidate]:
    boxes = np.array([[c.box.a, c.box.b, c.box.w] for c in group])
    scores = np.array([c.score for c in group])
    return [group[i] for i in geometry.nms_indices(boxes, scores, thresh)]


def _vote_merge(cands: list[Candidate], thresh: float) -> list[DetectedFace]:
    """Final NMS with box/angle voting.

    Each NMS keeper is replaced by the score-weighted mean of every
    overlapping window (IoU >= 0.5); the angle averages only windows
    agreeing with the keeper within 30 degrees, so a minority of
    miscalibrated windows cannot drag it.  Voting makes the output
    stable against proposal-grid alignment, which shifts when the input
    is rotated.
    """
    boxes = np.array([[c.box.a, c.box.b, c.box.w] for c in cands])
    scores = np.array([c.score for c in cands])
    thetas = np.array([cascade.accumulate_rip(c.theta_acc, 0.0, c.theta3)
                       for c in cands])
    out = []
    for i in geometry.nms_indices(boxes, scores, thresh):
        near = geometry.iou_many(boxes[i], boxes) >= 0.5
        w = scores[near]
        box = (boxes[near] * w[:, None]).sum(axis=0) / w.sum()
        rel = ((thetas - thetas[i] + 180.0) % 360.0) - 180.0
        agree = near & (np.abs(rel) <= 30.0)
        wt = scores[agree]
        theta = geometry.normalize_angle(
            thetas[i] + float((rel[agree] * wt).sum() / wt.sum()))
        out.append(DetectedFace(box=Box(*box), theta_rip=theta,
                                score=float(scores[i])))
    return out


def detect(img: np.ndarray, nets: dict, cfg: DetectConfig | None = None,
           stats: dict | None = None) -> list[DetectedFace]:
    """Full three-stage detection; returns faces sorted by score."""
    cfg = cfg or DetectConfig()
    frames = build_frames(img, stats)
    cands = propose(img, cfg)
    if stats is not None:
        stats["stage_counts"] = [len(cands)]
    for stage in (1, 2, 3):
        cands = run_stage(cands, stage, nets, frames, cfg)
        if stats is not None:
            stats["stage_counts"].append(len(cands))
    if not cands:
        return []
    return _vote_merge(cands, cfg.nms_iou[2])
