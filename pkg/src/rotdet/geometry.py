"""Image geometry: exact 90-degree rotations, window remapping between
pre-rotated orientation frames, continuous rotation, crop/resize, square
box regression transforms, IoU, and NMS.

Conventions: screen coordinates (x right, y down); positive angles are
clockwise.  Images are (H, W, C) arrays, float in [0, 1] or uint8.
Boxes are axis-aligned squares (top-left a, b and side w).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class WindowOutOfBounds(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    a: float  # top-left x, px
    b: float  # top-left y, px
    w: float  # side length, px

    def __post_init__(self):
        if self.w <= 0:
            raise ValueError("box side must be positive")


class OrientationFrame(IntEnum):
    """Which pre-rotated copy of the source image window coords refer to."""

    UP = 0  # 0 deg
    LEFT = 1  # -90 deg
    RIGHT = 2  # +90 deg
    DOWN = 3  # 180 deg


# clockwise rotation applied to the original image to obtain each frame
FRAME_CW_ROT = {
    OrientationFrame.UP: 0,
    OrientationFrame.LEFT: 270,
    OrientationFrame.RIGHT: 90,
    OrientationFrame.DOWN: 180,
}

_ROT_FOR_FRAME = {v: k for k, v in FRAME_CW_ROT.items()}


def frame_for_theta(theta_acc: float) -> OrientationFrame:
    """Frame whose rotation cancels the accumulated coarse angle."""
    return _ROT_FOR_FRAME[int(-theta_acc) % 360]


def normalize_angle(theta: float) -> float:
    """Map any angle into (-180, 180]."""
    t = float(theta) % 360.0
    return t - 360.0 if t > 180.0 else t


# ---------------------------------------------------------------------------
# rotations


def rot_exact(img: np.ndarray, angle: int) -> np.ndarray:
    """Exact pixel permutation rotating clockwise by 90/180/270 degrees."""
    if angle == 90:
        return np.ascontiguousarray(np.rot90(img, -1, axes=(0, 1)))
    if angle == 180:
        return np.ascontiguousarray(np.rot90(img, 2, axes=(0, 1)))
    if angle == 270:
        return np.ascontiguousarray(np.rot90(img, 1, axes=(0, 1)))
    raise ValueError("angle must be 90, 180 or 270")


def rotate_continuous(img: np.ndarray, theta_deg: float) -> np.ndarray:
    """Rotate clockwise about the image center, bilinear, zero fill."""
    if img.dtype == np.uint8:
        img = img.astype(np.float32) / 255.0
    h, w = img.shape[:2]
    t = np.deg2rad(theta_deg)
    ct, st = np.cos(t), np.sin(t)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dx, dy = xx - cx, yy - cy
    # inverse map: output pixel p samples source R(-theta) (p - c) + c
    sx = ct * dx + st * dy + cx
    sy = -st * dx + ct * dy + cy
    return _bilinear_gather(np.asarray(img, dtype=np.float32), sx, sy)


def _bilinear_gather(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample img (H,W,C) at float coords; zero outside the source."""
    h, w = img.shape[:2]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0).astype(img.dtype)
    fy = (sy - y0).astype(img.dtype)

    def fetch(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        yc = np.clip(yi, 0, h - 1)
        xc = np.clip(xi, 0, w - 1)
        v = img[yc, xc]
        return v * valid[..., None].astype(img.dtype)

    fx = fx[..., None]
    fy = fy[..., None]
    top = fetch(y0, x0) * (1 - fx) + fetch(y0, x0 + 1) * fx
    bot = fetch(y0 + 1, x0) * (1 - fx) + fetch(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bot * fy


# ---------------------------------------------------------------------------
# window remapping across orientation frames


def _map_cw(x: float, y: float, s: float, rot: int, W: float, H: float):
    """Remap a window from an image of dims (W, H) onto its cw rotation."""
    if rot == 0:
        return x, y
    if rot == 90:
        return H - y - s, x
    if rot == 180:
        return W - x - s, H - y - s
    if rot == 270:
        return y, W - x - s
    raise ValueError("rotation must be a multiple of 90")


def remap_box(x: float, y: float, s: float,
              frm: OrientationFrame, to: OrientationFrame, W: int, H: int):
    """Window coordinate change of frame; W, H are ORIGINAL image dims."""
    r_from = FRAME_CW_ROT[OrientationFrame(frm)]
    r_to = FRAME_CW_ROT[OrientationFrame(to)]
    if r_from:
        wf, hf = (W, H) if r_from in (0, 180) else (H, W)
        x, y = _map_cw(x, y, s, (360 - r_from) % 360, wf, hf)
    if r_to:
        x, y = _map_cw(x, y, s, r_to, W, H)
    return x, y


def remap_window(win: Box, frm: OrientationFrame, to: OrientationFrame,
                 W: int, H: int) -> Box:
    x, y = remap_box(win.a, win.b, win.w, frm, to, W, H)
    wt, ht = (W, H) if FRAME_CW_ROT[OrientationFrame(to)] in (0, 180) else (H, W)
    if x < 0 or y < 0 or x + win.w > wt or y + win.w > ht:
        raise WindowOutOfBounds("oob")
    return Box(x, y, win.w)


# ---------------------------------------------------------------------------
# crops


def crop_resize_many(img: np.ndarray, boxes: np.ndarray, out_side: int) -> np.ndarray:
    """Crop square windows (possibly out of bounds, zero padded) and
    bilinearly resize to (N, C, out_side, out_side), zero-centered to [-1, 1].

    boxes: (N, 3) array of (a, b, w).
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    if boxes.ndim == 1:
        boxes = boxes[None]
    if np.any(boxes[:, 2] <= 0):
        raise ValueError("box side must be positive")
    imgf = np.asarray(img)
    if imgf.dtype == np.uint8:
        imgf = imgf.astype(np.float32) / 255.0
    n = boxes.shape[0]
    s = out_side
    grid = (np.arange(s, dtype=np.float64) + 0.5)
    scale = boxes[:, 2][:, None] / s  # (N,1)
    gx = boxes[:, 0][:, None] + grid[None, :] * scale - 0.5  # (N,S)
    gy = boxes[:, 1][:, None] + grid[None, :] * scale - 0.5
    sx = np.broadcast_to(gx[:, None, :], (n, s, s))
    sy = np.broadcast_to(gy[:, :, None], (n, s, s))
    out = _bilinear_gather(imgf.astype(np.float32), sx, sy)  # (N,S,S,C)
    out = out.transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out * 2.0 - 1.0, dtype=np.float32)


def crop_resize(img: np.ndarray, win: Box, out_side: int) -> np.ndarray:
    return crop_resize_many(img, np.array([[win.a, win.b, win.w]]), out_side)[0]


# ---------------------------------------------------------------------------
# box regression transform


def bbox_targets(box: Box, gt: Box):
    """Regression targets (t_w, t_a, t_b) moving ``box`` onto ``gt``."""
    tw = gt.w / box.w
    ta = (gt.a + 0.5 * gt.w - box.a - 0.5 * box.w) / gt.w
    tb = (gt.b + 0.5 * gt.w - box.b - 0.5 * box.w) / gt.w
    return tw, ta, tb


def bbox_apply(box: Box, t) -> Box:
    tw, ta, tb = float(t[0]), float(t[1]), float(t[2])
    if tw <= 0:
        raise ValueError("t_w must be positive")
    w = tw * box.w
    a = box.a + 0.5 * box.w - 0.5 * w + ta * w
    b = box.b + 0.5 * box.w - 0.5 * w + tb * w
    return Box(a, b, w)


def bbox_targets_arr(boxes: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Vector form: boxes/gts (N,3) -> targets (N,3) as (t_w, t_a, t_b)."""
    tw = gts[:, 2] / boxes[:, 2]
    ta = (gts[:, 0] + 0.5 * gts[:, 2] - boxes[:, 0] - 0.5 * boxes[:, 2]) / gts[:, 2]
    tb = (gts[:, 1] + 0.5 * gts[:, 2] - boxes[:, 1] - 0.5 * boxes[:, 2]) / gts[:, 2]
    return np.stack([tw, ta, tb], axis=1)


def bbox_apply_arr(boxes: np.ndarray, t: np.ndarray) -> np.ndarray:
    w = t[:, 0] * boxes[:, 2]
    a = boxes[:, 0] + 0.5 * boxes[:, 2] - 0.5 * w + t[:, 1] * w
    b = boxes[:, 1] + 0.5 * boxes[:, 2] - 0.5 * w + t[:, 2] * w
    return np.stack([a, b, w], axis=1)


# ---------------------------------------------------------------------------
# overlap / suppression


def iou(x: Box, y: Box) -> float:
    return float(iou_many(np.array([x.a, x.b, x.w]),
                          np.array([[y.a, y.b, y.w]]))[0])


def iou_many(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    """IoU of one (a,b,w) box against (N,3) boxes."""
    ax1, ay1, aw = box[0], box[1], box[2]
    ix = np.minimum(ax1 + aw, others[:, 0] + others[:, 2]) - np.maximum(ax1, others[:, 0])
    iy = np.minimum(ay1 + aw, others[:, 1] + others[:, 2]) - np.maximum(ay1, others[:, 1])
    inter = np.maximum(ix, 0) * np.maximum(iy, 0)
    union = aw * aw + others[:, 2] * others[:, 2] - inter
    return inter / union


def nms_indices(boxes: np.ndarray, scores: np.ndarray, thresh: float) -> list[int]:
    """Greedy NMS; returns kept indices in descending-score order.

    Score ties break toward the earlier index (stable sort).
    """
    order = np.argsort(-scores, kind="stable")
    alive = np.ones(len(scores), dtype=bool)
    keep = []
    for i in order:
        if not alive[i]:
            continue
        keep.append(int(i))
        overl = iou_many(boxes[i], boxes[alive])
        idx_alive = np.flatnonzero(alive)
        alive[idx_alive[overl > thresh]] = False
        alive[i] = False
    return keep


def nms(cands, thresh: float):
    """cands: list of (Box, score) -> surviving list sorted by score desc."""
    if not cands:
        return []
    boxes = np.array([[c[0].a, c[0].b, c[0].w] for c in cands], dtype=np.float64)
    scores = np.array([c[1] for c in cands], dtype=np.float64)
    return [cands[i] for i in nms_indices(boxes, scores, thresh)]
