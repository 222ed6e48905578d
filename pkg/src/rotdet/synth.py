"""Synthetic corpus: glyph "faces" on textured noise backgrounds.

The glyph is a bright disc with two dark eye dots in the upper half and
a dark mouth bar in the lower half, so every rotation is visually
distinct (no 90/180 degree self-symmetry).  All drawing stays inside the
disc inscribed in the patch, so rotation never clips content.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import imageio
from .geometry import Box, normalize_angle, rot_exact, rotate_continuous

IMAGE_SIZE = 128
FACE_SIDE_RANGE = (24, 64)


@dataclass
class GlyphStyle:
    face_rgb: tuple
    feature_rgb: tuple


@dataclass
class SynthImage:
    image: np.ndarray  # (H, W, 3) uint8
    faces: list  # list of (Box, theta_deg)


def _smooth_mask(d: np.ndarray, edge: float) -> np.ndarray:
    return np.clip(d / edge + 0.5, 0.0, 1.0)


def render_glyph(side: int, theta_deg: float, style: GlyphStyle):
    """Render one glyph patch at the given in-plane angle.

    Returns (patch, alpha): (side, side, 3) float and (side, side) float.
    Angles that are exact multiples of 90 go through the lossless
    rotation path, others through bilinear rotation.
    """
    s = float(side)
    yy, xx = np.meshgrid(np.arange(side, dtype=np.float64),
                         np.arange(side, dtype=np.float64), indexing="ij")
    c = (side - 1) / 2.0
    ux = (xx - c) / s
    uy = (yy - c) / s
    r = np.hypot(ux, uy)
    edge = 1.5 / s

    alpha = _smooth_mask(0.46 - r, edge)
    feat = np.zeros_like(alpha)
    for ex in (-0.17, 0.17):  # eyes, upper half
        feat = np.maximum(feat, _smooth_mask(
            0.075 - np.hypot(ux - ex, uy + 0.15), edge))
    mouth = np.minimum(_smooth_mask(0.17 - np.abs(ux), edge),
                       _smooth_mask(0.045 - np.abs(uy - 0.22), edge))
    feat = np.maximum(feat, mouth)

    face = np.asarray(style.face_rgb, dtype=np.float64)
    dark = np.asarray(style.feature_rgb, dtype=np.float64)
    patch = face[None, None, :] * (1 - feat[..., None]) + dark[None, None, :] * feat[..., None]
    patch *= alpha[..., None]

    theta = normalize_angle(theta_deg)
    if theta % 90.0 == 0.0:
        k = int(theta) % 360
        if k:
            patch = rot_exact(patch, k)
            alpha = rot_exact(alpha[..., None], k)[..., 0]
    else:
        patch = rotate_continuous(patch.astype(np.float32), theta).astype(np.float64)
        alpha = rotate_continuous(
            alpha[..., None].astype(np.float32), theta).astype(np.float64)[..., 0]
    return patch, alpha


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.uniform(0.15, 0.55, size=(9, 9, 3))
    # bilinear upsample of the coarse grid
    t = np.linspace(0, 8, size)
    i0 = np.clip(t.astype(int), 0, 7)
    f = (t - i0)
    rows = (coarse[i0] * (1 - f)[:, None, None] + coarse[i0 + 1] * f[:, None, None])
    bg = (rows[:, i0] * (1 - f)[None, :, None] + rows[:, i0 + 1] * f[None, :, None])
    bg += rng.normal(0.0, 0.025, size=bg.shape)
    return np.clip(bg, 0.0, 1.0)


def gen_synthetic(n: int, seed: int, size: int = IMAGE_SIZE) -> list[SynthImage]:
    """Deterministically render n labeled images with 0-2 glyph faces."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        img = _background(rng, size)
        n_faces = int(rng.integers(0, 3))
        faces = []
        tries = 0
        while len(faces) < n_faces and tries < 20:
            tries += 1
            side = int(rng.integers(FACE_SIDE_RANGE[0], FACE_SIDE_RANGE[1] + 1))
            a = int(rng.integers(0, size - side + 1))
            b = int(rng.integers(0, size - side + 1))
            box = np.array([a, b, side], dtype=np.float64)
            if any(_overlap(box, f) for f, _ in faces):
                continue
            theta = normalize_angle(rng.uniform(-180.0, 180.0))
            style = GlyphStyle(
                face_rgb=tuple(rng.uniform(0.78, 0.95, 3)),
                feature_rgb=tuple(rng.uniform(0.02, 0.15, 3)),
            )
            patch, alpha = render_glyph(side, theta, style)
            region = img[b : b + side, a : a + side]
            region *= 1 - alpha[..., None]
            region += patch
            faces.append((box, theta))
        out.append(SynthImage(
            image=imageio.to_uint8(img),
            faces=[(Box(f[0], f[1], f[2]), t) for f, t in faces],
        ))
    return out


def _overlap(box: np.ndarray, other: np.ndarray) -> bool:
    ix = min(box[0] + box[2], other[0] + other[2]) - max(box[0], other[0])
    iy = min(box[1] + box[2], other[1] + other[2]) - max(box[1], other[1])
    return ix > -4 and iy > -4  # keep a small gap between faces


def save_corpus(images: list[SynthImage], outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "annotations.jsonl"), "w") as fh:
        for i, si in enumerate(images):
            name = f"img_{i:05d}.ppm"
            imageio.write_ppm(os.path.join(outdir, name), si.image)
            rec = {
                "file": name,
                "faces": [
                    {"a": f.a, "b": f.b, "w": f.w, "theta": round(t, 4)}
                    for f, t in si.faces
                ],
            }
            fh.write(json.dumps(rec) + "\n")


def load_corpus(indir) -> list[SynthImage]:
    ann = os.path.join(indir, "annotations.jsonl")
    if not os.path.exists(ann):
        raise FileNotFoundError(f"missing annotations file: {ann}")
    out = []
    with open(ann) as fh:
        for line in fh:
            rec = json.loads(line)
            img = imageio.read_ppm(os.path.join(indir, rec["file"]))
            faces = [(Box(f["a"], f["b"], f["w"]), float(f["theta"]))
                     for f in rec["faces"]]
            out.append(SynthImage(image=img, faces=faces))
    return out
