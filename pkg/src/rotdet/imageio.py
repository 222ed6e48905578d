"""Image file I/O: binary PPM (P6) always, PNG optionally via Pillow,
plus detection annotation drawing."""
from __future__ import annotations

import numpy as np


class ImageReadError(ValueError):
    pass


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM into a (H, W, 3) uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ImageReadError(f"{path}: not a P6 PPM")
    # header: magic, width, height, maxval, separated by whitespace/comments
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ImageReadError(f"{path}: unsupported maxval {maxval}")
    if len(data) - pos < w * h * 3:
        raise ImageReadError(f"{path}: truncated pixel data")
    pix = np.frombuffer(data, dtype=np.uint8, offset=pos, count=w * h * 3)
    return pix.reshape(h, w, 3).copy()


def write_ppm(path, img: np.ndarray) -> None:
    img = to_uint8(img)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def to_uint8(img: np.ndarray) -> np.ndarray:
    if img.dtype == np.uint8:
        return img
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def to_float(img: np.ndarray) -> np.ndarray:
    if img.dtype == np.uint8:
        return img.astype(np.float32) / 255.0
    return img.astype(np.float32)


def read_image(path) -> np.ndarray:
    """PPM natively; anything else goes through Pillow when installed."""
    p = str(path)
    if p.lower().endswith(".ppm"):
        return read_ppm(p)
    try:
        from PIL import Image
    except ImportError as exc:
        raise ImageReadError(
            f"{path}: only PPM supported without the optional Pillow dependency"
        ) from exc
    with Image.open(p) as im:
        return np.asarray(im.convert("RGB"))


BOX_COLOR = np.array([60, 220, 60], dtype=np.uint8)
TICK_COLOR = np.array([60, 110, 255], dtype=np.uint8)


def annotate(img: np.ndarray, faces) -> np.ndarray:
    """Draw a 1-px box plus an orientation tick from the box center.

    The tick points along the face's in-plane angle (upward for an
    upright face); faces is an iterable of DetectedFace.
    """
    out = to_uint8(img).copy()
    h, w = out.shape[:2]
    for face in faces:
        a, b, s = int(round(face.box.a)), int(round(face.box.b)), int(round(face.box.w))
        x0, x1 = np.clip([a, a + s - 1], 0, w - 1)
        y0, y1 = np.clip([b, b + s - 1], 0, h - 1)
        out[y0, x0 : x1 + 1] = BOX_COLOR
        out[y1, x0 : x1 + 1] = BOX_COLOR
        out[y0 : y1 + 1, x0] = BOX_COLOR
        out[y0 : y1 + 1, x1] = BOX_COLOR
        # tick: radius-length line from center at angle theta (0 = up)
        cx, cy = a + (s - 1) / 2.0, b + (s - 1) / 2.0
        t = np.deg2rad(face.theta_rip)
        n = max(int(s / 2), 2)
        for i in range(n):
            r = i * (s / 2.0) / n
            px = int(round(cx + r * np.sin(t)))
            py = int(round(cy - r * np.cos(t)))
            if 0 <= px < w and 0 <= py < h:
                out[py, px] = TICK_COLOR
    return out
