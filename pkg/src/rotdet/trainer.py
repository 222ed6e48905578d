"""Sample mining and the three-stage training loop.

Mining follows the band rules (positive IoU > 0.7, negative < 0.3,
suspected in [0.4, 0.7]), per-stage angle label ranges, and hard
negatives filtered through the previously trained stage.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import cascade, nn
from .cascade import BAND_NEG, BAND_POS, BAND_SUS, BatchLabels, LossWeights, Network
from .geometry import (bbox_targets_arr, crop_resize_many, iou_many,
                       normalize_angle, rotate_continuous)

STAGE_SIDE = {1: 24, 2: 24, 3: 48}

# orientation label ranges, degrees
STAGE1_UP = (-65.0, 65.0)
STAGE1_DOWN_MIN = 115.0
STAGE2_RANGES = ((-90.0, -60.0), (-30.0, 30.0), (60.0, 90.0))


class InsufficientDataError(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optim: nn.OptimState = field(default_factory=lambda: nn.OptimState(
        lr=1e-3, momentum=0.9, weight_decay=5e-4,
        lr_drop_iter=7000, max_iter=10000))
    batch: int = 50
    ratio: tuple = (2, 2, 1)  # pos : neg : suspected
    seed: int = 0


@dataclass
class SamplePool:
    """Column-wise store of mined training windows (patches kept uint8)."""

    patches: np.ndarray  # (N, 3, S, S) uint8
    band: np.ndarray  # int8
    reg: np.ndarray  # (N, 3) float32
    reg_mask: np.ndarray
    orient: np.ndarray  # float32 (class index or normalized angle)
    orient_mask: np.ndarray

    def __len__(self):
        return len(self.band)


def _patch_to_u8(p: np.ndarray) -> np.ndarray:
    # crop_resize output is in [-1, 1]
    return np.clip(np.rint((p + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _patch_to_f32(p: np.ndarray) -> np.ndarray:
    return p.astype(np.float32) / 127.5 - 1.0


def stage1_orient_label(theta: float):
    if STAGE1_UP[0] <= theta <= STAGE1_UP[1]:
        return 1
    if abs(theta) >= STAGE1_DOWN_MIN:
        return 0
    return None


def stage2_orient_label(theta: float):
    for lbl, (lo, hi) in enumerate(STAGE2_RANGES):
        if lo <= theta <= hi:
            return lbl
    return None


def _rotated_copy(img_f: np.ndarray, faces, target_theta: float, face_idx: int):
    """Rotate an image so the chosen face's angle becomes target_theta;
    returns (rotated image, updated (box array, theta) list)."""
    h, w = img_f.shape[:2]
    delta = normalize_angle(target_theta - faces[face_idx][1])
    rot = rotate_continuous(img_f, delta)
    t = np.deg2rad(delta)
    ct, st = np.cos(t), np.sin(t)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    new_faces = []
    for box, theta in faces:
        bcx = box[0] + (box[2] - 1) / 2.0 - cx
        bcy = box[1] + (box[2] - 1) / 2.0 - cy
        nx = ct * bcx - st * bcy + cx
        ny = st * bcx + ct * bcy + cy
        nb = np.array([nx - (box[2] - 1) / 2.0, ny - (box[2] - 1) / 2.0, box[2]])
        new_faces.append((nb, normalize_angle(theta + delta)))
    return rot, new_faces


def _jitter_windows(rng, gt: np.ndarray, n: int, spread: float) -> np.ndarray:
    off = rng.uniform(-spread, spread, size=(n, 2)) * gt[2]
    sc = np.exp(rng.uniform(np.log(1 - spread), np.log(1 + spread), size=n))
    w = gt[2] * sc
    a = gt[0] + off[:, 0] + (gt[2] - w) / 2.0
    b = gt[1] + off[:, 1] + (gt[2] - w) / 2.0
    return np.stack([a, b, w], axis=1)


def _score_windows(net: Network, img: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    patches = crop_resize_many(img, boxes, net.input_side)
    outs = cascade.forward(net, patches)
    return cascade.face_prob(outs["face"])


def mine_samples(images, stage: int, prev_nets=None, seed: int = 0,
                 copies: int = 2, prev_threshold: float = 0.4) -> SamplePool:
    """Build the training pool for one stage from a labeled image set."""
    if stage >= 2 and not prev_nets:
        raise ValueError("stage >= 2 mining needs the previously trained nets")
    rng = np.random.default_rng(seed + 1000 * stage)
    side = STAGE_SIDE[stage]
    prev = prev_nets[stage - 1] if stage >= 2 else None

    patches, bands, regs, reg_masks, orients, orient_masks = [], [], [], [], [], []

    def add(img, win_boxes, gt_box, band, theta):
        if len(win_boxes) == 0:
            return
        p = crop_resize_many(img, win_boxes, side)
        t = (bbox_targets_arr(win_boxes, np.tile(gt_box, (len(win_boxes), 1)))
             if gt_box is not None else np.zeros((len(win_boxes), 3)))
        if stage == 1:
            lbl = stage1_orient_label(theta) if theta is not None else None
        elif stage == 2:
            # residuals just past +-90 (stage-1's unlabeled band) clamp to
            # the nearest quarter-turn class
            lbl = (stage2_orient_label(float(np.clip(theta, -90.0, 90.0)))
                   if theta is not None else None)
        else:
            lbl = theta / cascade.THETA3_SCALE if theta is not None else None
        for i in range(len(win_boxes)):
            patches.append(_patch_to_u8(p[i]))
            bands.append(band)
            regs.append(t[i])
            reg_masks.append(band != BAND_NEG)
            orients.append(0.0 if lbl is None else float(lbl))
            orient_masks.append(band != BAND_NEG and lbl is not None)

    for si in images:
        img_f = si.image.astype(np.float32) / 255.0
        h, w = img_f.shape[:2]
        face_list = [(np.array([f.a, f.b, f.w]), t) for f, t in si.faces]

        views = []
        miscal_views = []
        if stage == 1:
            # corpus faces already cover the full angle range
            views = [(img_f, face_list, i) for i in range(len(face_list))]
            if not face_list:
                views = [(img_f, [], None)]
        else:
            # stage 2 must also fix residuals leaking past +-90 when the
            # previous stage guessed wrong inside its unlabeled band
            lim = 110.0 if stage == 2 else 45.0
            for i in range(len(face_list)):
                for _ in range(copies):
                    tgt = rng.uniform(-lim, lim)
                    rimg, rfaces = _rotated_copy(img_f, face_list, tgt, i)
                    views.append((rimg, rfaces, i))
                # a miscalibrated view: the same face far outside what the
                # remaining stages can still correct must be *rejected*,
                # otherwise a wrong coarse decision upstream survives the
                # cascade (stage 2 + 3 can fix up to 90+45 deg, stage 3
                # alone up to 45 deg)
                bad = (140.0, 180.0) if stage == 2 else (75.0, 180.0)
                tgt = float(rng.choice([-1.0, 1.0]) * rng.uniform(*bad))
                rimg, rfaces = _rotated_copy(img_f, face_list, tgt, i)
                miscal_views.append((rimg, rfaces, i))
            if not face_list:
                views = [(img_f, [], None)]

        for vimg, vfaces, fi in miscal_views:
            gt, _ = vfaces[fi]
            if not (0 <= gt[0] and 0 <= gt[1] and gt[0] + gt[2] <= w
                    and gt[1] + gt[2] <= h):
                continue
            add(vimg, _jitter_windows(rng, gt, 2, 0.08), None, BAND_NEG, None)

        for vimg, vfaces, fi in views:
            all_boxes = np.array([b for b, _ in vfaces]) if vfaces else np.zeros((0, 3))

            if fi is not None:
                gt, theta = vfaces[fi]
                if not (0 <= gt[0] and 0 <= gt[1] and gt[0] + gt[2] <= w
                        and gt[1] + gt[2] <= h):
                    continue  # face drifted out of frame after rotation
                tight = _jitter_windows(rng, gt, 8, 0.08)
                loose = _jitter_windows(rng, gt, 10, 0.32)
                cand = np.concatenate([tight, loose])
                ious = np.array([iou_many(c, gt[None]) for c in cand])[:, 0]
                pos = cand[ious > 0.7][:3]
                sus = cand[(ious >= 0.4) & (ious <= 0.7)][:2]
                add(vimg, pos, gt, BAND_POS, theta)
                add(vimg, sus, gt, BAND_SUS, theta)

            # negatives: random windows clear of every face
            n_rand = 24 if stage >= 2 else 8
            sides = rng.uniform(20, max(21, min(h, w) * 0.6), size=n_rand)
            na = rng.uniform(0, w - sides)
            nb = rng.uniform(0, h - sides)
            nboxes = np.stack([na, nb, sides], axis=1)
            if len(all_boxes):
                clear = np.array([iou_many(bx, all_boxes).max() < 0.3
                                  for bx in nboxes])
                nboxes = nboxes[clear]
            if stage >= 2 and len(nboxes):
                # hard negatives: keep windows the previous stage accepts
                scores = _score_windows(prev, vimg, nboxes)
                hard = nboxes[scores >= prev_threshold]
                if len(hard) < 2:  # early cascades can be too clean
                    hard = nboxes[np.argsort(-scores, kind="stable")[:2]]
                nboxes = hard[:4]
            else:
                nboxes = nboxes[:4]
            add(vimg, nboxes, None, BAND_NEG, None)

    if not any(b == BAND_POS for b in bands):
        raise InsufficientDataError("insufficient data: no positive samples mined")

    return SamplePool(
        patches=np.stack(patches),
        band=np.array(bands, dtype=np.int8),
        reg=np.array(regs, dtype=np.float32),
        reg_mask=np.array(reg_masks, dtype=bool),
        orient=np.array(orients, dtype=np.float32),
        orient_mask=np.array(orient_masks, dtype=bool),
    )


class _BandSampler:
    """Cyclic per-band shuffled index stream."""

    def __init__(self, indices: np.ndarray, rng: np.random.Generator):
        self.indices = indices
        self.rng = rng
        self.order = rng.permutation(len(indices))
        self.pos = 0

    def take(self, n: int) -> np.ndarray:
        out = []
        while n > 0:
            avail = len(self.order) - self.pos
            grab = min(n, avail)
            out.append(self.order[self.pos : self.pos + grab])
            self.pos += grab
            n -= grab
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(len(self.indices))
                self.pos = 0
        return self.indices[np.concatenate(out)]


def batch_quota(batch: int, ratio=(2, 2, 1)):
    """Exact pos:neg:suspected split; remainder samples are dropped."""
    unit = batch // sum(ratio)
    return ratio[0] * unit, ratio[1] * unit, ratio[2] * unit


def draw_batch(pool: SamplePool, samplers, quota):
    n_pos, n_neg, n_sus = quota
    idx = np.concatenate([
        samplers[BAND_POS].take(n_pos) if n_pos else np.array([], dtype=int),
        samplers[BAND_NEG].take(n_neg) if n_neg else np.array([], dtype=int),
        samplers[BAND_SUS].take(n_sus) if n_sus else np.array([], dtype=int),
    ])
    x = _patch_to_f32(pool.patches[idx])
    labels = BatchLabels(
        band=pool.band[idx],
        reg=pool.reg[idx],
        reg_mask=pool.reg_mask[idx],
        orient=pool.orient[idx],
        orient_mask=pool.orient_mask[idx],
    )
    return x, labels


def train_stage(stage: int, pool: SamplePool, cfg: TrainConfig,
                net: Network | None = None, log_path=None,
                log_every: int = 200):
    """Run the SGD schedule on one stage; returns (net, log rows)."""
    if net is None:
        net = cascade.build_pcn(stage, seed=cfg.seed + stage)
    rng = np.random.default_rng(cfg.seed + 77 * stage)
    samplers = {
        b: _BandSampler(np.flatnonzero(pool.band == b), rng)
        for b in (BAND_POS, BAND_NEG, BAND_SUS)
        if (pool.band == b).any()
    }
    quota = list(batch_quota(cfg.batch, cfg.ratio))
    # degenerate pools: reassign missing-band quota to negatives/positives
    for b, qi in ((BAND_POS, 0), (BAND_NEG, 1), (BAND_SUS, 2)):
        if b not in samplers:
            quota[qi] = 0
    optim = nn.OptimState(**vars(cfg.optim))
    layers = net.all_layers()
    rows = []
    writer = None
    if log_path:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "total_loss", "cls_loss", "reg_loss",
                         "cal_loss", "lr"])
    try:
        for it in range(optim.max_iter):
            x, labels = draw_batch(pool, samplers, quota)
            outs, cache = cascade.forward(net, x, want_cache=True)
            total, grads, parts = cascade.stage_loss(outs, labels, stage,
                                                     cfg.loss_weights)
            if not np.isfinite(total):
                raise TrainingDiverged(
                    f"stage {stage} loss became non-finite at iteration {it}")
            cascade.backward(net, cache, grads)
            nn.sgd_step(layers, optim)
            optim.iteration += 1
            if it % log_every == 0 or it == optim.max_iter - 1:
                row = (it, total, parts["cls"], parts["reg"], parts["cal"],
                       optim.current_lr())
                rows.append(row)
                if writer:
                    writer.writerow([f"{v:.6g}" if isinstance(v, float) else v
                                     for v in row])
    finally:
        if writer:
            fh.close()
    return net, rows


def train_cascade(images, cfg: TrainConfig, log_dir=None, iters=None,
                  progress=None):
    """Train stages 1 -> 2 -> 3 with per-stage mining; returns nets dict."""
    if iters is not None:
        cfg.optim.max_iter = iters
        cfg.optim.lr_drop_iter = max(1, int(0.7 * iters))
    nets = {}
    for stage in (1, 2, 3):
        if progress:
            progress(f"mining stage {stage} samples")
        pool = mine_samples(images, stage, prev_nets=nets, seed=cfg.seed,
                            prev_threshold=0.4 if stage == 2 else 0.5)
        if progress:
            counts = {b: int((pool.band == b).sum())
                      for b in (BAND_POS, BAND_NEG, BAND_SUS)}
            progress(f"stage {stage}: {len(pool)} samples "
                     f"(pos {counts[BAND_POS]}, neg {counts[BAND_NEG]}, "
                     f"sus {counts[BAND_SUS]})")
        log_path = None
        if log_dir:
            import os
            os.makedirs(log_dir, exist_ok=True)
            log_path = os.path.join(log_dir, f"stage{stage}_log.csv")
        if cfg.optim.max_iter > 0:
            nets[stage], _ = train_stage(stage, pool, cfg, log_path=log_path)
        else:
            nets[stage] = cascade.build_pcn(stage, seed=cfg.seed + stage)
        if progress:
            progress(f"stage {stage} trained")
    return nets
