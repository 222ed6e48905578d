"""The three cascade stage networks with their multi-task heads.

Each stage predicts face-vs-nonface, a box regression triple, and an
orientation output whose form depends on the stage: binary up/down,
ternary left/up/right, or a continuous residual angle normalized by 45.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import nn
from .geometry import normalize_angle

BAND_NEG, BAND_POS, BAND_SUS = 0, 1, 2

HEAD_ROLES = {"face": 1, "bbox": 2, "orient": 3}
_ROLE_HEADS = {v: k for k, v in HEAD_ROLES.items()}

THETA3_SCALE = 45.0

# (layer specs, fc width); conv spec: (out_ch, k, s); pool spec: (k, s)
_ARCHS = {
    1: dict(
        input_side=24,
        trunk=[("conv", 10, 3, 2), ("relu",), ("conv", 16, 3, 1), ("relu",),
               ("pool", 2, 2), ("conv", 24, 3, 1), ("relu",),
               ("fc", 96), ("relu",)],
        orient_dim=2,
    ),
    2: dict(
        input_side=24,
        trunk=[("conv", 10, 3, 2), ("relu",), ("conv", 16, 3, 1), ("relu",),
               ("conv", 24, 3, 1), ("relu",), ("pool", 2, 2),
               ("conv", 32, 3, 1), ("relu",), ("fc", 128), ("relu",)],
        orient_dim=3,
    ),
    3: dict(
        input_side=48,
        trunk=[("conv", 24, 3, 2), ("relu",), ("pool", 2, 2),
               ("conv", 32, 3, 1), ("relu",),
               ("conv", 48, 3, 1), ("relu",), ("pool", 2, 2),
               ("conv", 64, 3, 1), ("relu",),
               ("fc", 192), ("relu",)],
        orient_dim=1,
    ),
}


@dataclass
class Network:
    stage: int
    input_side: int
    trunk: list
    heads: dict  # name -> nn.FC

    def all_layers(self):
        return list(self.trunk) + [self.heads[k] for k in ("face", "bbox", "orient")]

    def param_count(self) -> int:
        return sum(l.w.size + l.b.size for l in nn.param_layers(self.all_layers()))

    def output_arity(self) -> int:
        return sum(h.w.shape[0] for h in self.heads.values())


def build_pcn(stage: int, seed: int = 0, dtype=np.float32) -> Network:
    """Construct and Gaussian-initialize the network for a cascade stage."""
    spec = _ARCHS[stage]
    side = spec["input_side"]
    ch, s_h, s_w = 3, side, side
    trunk = []
    for item in spec["trunk"]:
        if item[0] == "conv":
            out_ch, k, s = item[1], item[2], item[3]
            trunk.append(nn.make_conv(ch, out_ch, k, s, dtype))
            ch = out_ch
            s_h = (s_h - k) // s + 1
            s_w = (s_w - k) // s + 1
        elif item[0] == "pool":
            k, s = item[1], item[2]
            trunk.append(nn.Pool(k=k, s=s))
            s_h = (s_h - k) // s + 1
            s_w = (s_w - k) // s + 1
        elif item[0] == "relu":
            trunk.append(nn.Relu())
        else:  # fc
            n_out = item[1]
            trunk.append(nn.make_fc(ch * s_h * s_w, n_out, dtype))
            ch, s_h, s_w = n_out, 1, 1
    feat = ch
    heads = {
        "face": nn.make_fc(feat, 2, dtype),
        "bbox": nn.make_fc(feat, 3, dtype),
        "orient": nn.make_fc(feat, spec["orient_dim"], dtype),
    }
    net = Network(stage=stage, input_side=side, trunk=trunk, heads=heads)
    nn.scaled_init(net.all_layers(), seed=seed)
    return net


# ---------------------------------------------------------------------------
# forward / backward


def forward(net: Network, x: np.ndarray, want_cache: bool = False):
    """x: (N, 3, S, S) -> dict of head logits; optionally also a cache
    for backward."""
    h = x
    cache = []
    for layer in net.trunk:
        if isinstance(layer, nn.Conv):
            y = nn.conv2d(h, layer)
            cache.append((layer, h, None))
        elif isinstance(layer, nn.Pool):
            y, idx = nn.maxpool(h, layer.k, layer.s)
            cache.append((layer, h, idx))
        elif isinstance(layer, nn.Relu):
            y = nn.relu(h)
            cache.append((layer, h, None))
        else:  # FC
            y = nn.fc(h, layer)
            cache.append((layer, h, None))
        h = y
    outs = {name: nn.fc(h, head) for name, head in net.heads.items()}
    if want_cache:
        return outs, (cache, h)
    return outs


def backward(net: Network, cache, head_grads) -> np.ndarray:
    """Accumulate parameter gradients; returns grad wrt the input batch."""
    layers_cache, feat = cache
    g = None
    for name, head in net.heads.items():
        if name not in head_grads:
            continue
        gh = nn.fc_backward(feat, head, head_grads[name].astype(feat.dtype))
        g = gh if g is None else g + gh
    for layer, x, extra in reversed(layers_cache):
        if isinstance(layer, nn.Conv):
            g = nn.conv2d_backward(x, layer, g.reshape(
                x.shape[0],
                layer.w.shape[0],
                (x.shape[2] - layer.k) // layer.s + 1,
                (x.shape[3] - layer.k) // layer.s + 1))
        elif isinstance(layer, nn.Pool):
            oh = (x.shape[2] - layer.k) // layer.s + 1
            ow = (x.shape[3] - layer.k) // layer.s + 1
            g = nn.maxpool_backward(
                g.reshape(x.shape[0], x.shape[1], oh, ow), extra,
                x.shape, layer.k, layer.s)
        elif isinstance(layer, nn.Relu):
            g = nn.relu_backward(x, g.reshape(x.shape))
        else:
            g = nn.fc_backward(x, layer, g)
    return g


def face_prob(face_logits: np.ndarray) -> np.ndarray:
    return nn.softmax(face_logits)[..., 1]


def theta3_degrees(orient_out: np.ndarray) -> np.ndarray:
    return THETA3_SCALE * np.clip(orient_out, -1.0, 1.0)


# ---------------------------------------------------------------------------
# multi-task loss


@dataclass
class LossWeights:
    lambda_reg: float = 0.5
    lambda_cal: float = 0.5


@dataclass
class BatchLabels:
    """Per-sample supervision for one minibatch.

    band: 0 negative / 1 positive / 2 suspected.
    reg / orient entries are only read where their mask is set.
    """

    band: np.ndarray
    reg: np.ndarray
    reg_mask: np.ndarray
    orient: np.ndarray
    orient_mask: np.ndarray


def stage_loss(outs: dict, labels: BatchLabels, stage: int, lw: LossWeights):
    """Returns (total_loss, head_grads, parts).

    Classification uses positives+negatives; regression uses
    positives+suspected; calibration uses only samples carrying an
    orientation label.  Missing-label terms contribute zero loss and
    zero gradient.
    """
    band = labels.band
    n = len(band)
    grads = {k: np.zeros_like(v, dtype=np.float64) for k, v in outs.items()}
    parts = {"cls": 0.0, "reg": 0.0, "cal": 0.0}

    m_cls = band != BAND_SUS
    if m_cls.any():
        y = (band[m_cls] == BAND_POS).astype(np.int64)
        loss_i, g = nn.softmax_xent(outs["face"][m_cls].astype(np.float64), y)
        cnt = int(m_cls.sum())
        parts["cls"] = float(loss_i.sum() / cnt)
        grads["face"][m_cls] = g / cnt

    m_reg = ((band == BAND_POS) | (band == BAND_SUS)) & labels.reg_mask
    if m_reg.any():
        loss_i, g = nn.smooth_l1(outs["bbox"][m_reg].astype(np.float64),
                                 labels.reg[m_reg].astype(np.float64))
        cnt = int(m_reg.sum())
        parts["reg"] = float(loss_i.sum() / cnt)
        grads["bbox"][m_reg] = g / cnt

    m_cal = labels.orient_mask & (band != BAND_NEG)
    if m_cal.any():
        cnt = int(m_cal.sum())
        if stage in (1, 2):
            y = labels.orient[m_cal].astype(np.int64)
            loss_i, g = nn.softmax_xent(outs["orient"][m_cal].astype(np.float64), y)
        else:
            tgt = labels.orient[m_cal].astype(np.float64).reshape(-1, 1)
            loss_i, g = nn.smooth_l1(outs["orient"][m_cal].astype(np.float64), tgt)
        parts["cal"] = float(loss_i.sum() / cnt)
        grads["orient"][m_cal] = g / cnt

    grads["bbox"] *= lw.lambda_reg
    grads["orient"] *= lw.lambda_cal
    total = parts["cls"] + lw.lambda_reg * parts["reg"] + lw.lambda_cal * parts["cal"]
    return total, grads, parts


# ---------------------------------------------------------------------------
# per-stage angle decisions


def decide_theta1(g: float) -> float:
    """Binary up/down calibration: 0 deg when facing up (g >= 0.5)."""
    return 0.0 if g >= 0.5 else 180.0


def decide_theta2(g0: float, g1: float, g2: float) -> float:
    """Ternary calibration; argmax id -> {-90, 0, 90}, ties to smaller id."""
    idx = int(np.argmax([g0, g1, g2]))
    return (-90.0, 0.0, 90.0)[idx]


def accumulate_rip(theta1: float, theta2: float, theta3: float) -> float:
    """Total in-plane angle, normalized into (-180, 180]."""
    return normalize_angle(theta1 + theta2 + theta3)


# ---------------------------------------------------------------------------
# serialization (all stages in one file)


def save_cascade(path, nets: dict[int, Network]) -> None:
    with open(path, "wb") as fh:
        fh.write(nn.MAGIC)
        fh.write(struct.pack("<I", nn.FORMAT_VERSION))
        fh.write(struct.pack("<I", len(nets)))
        for stage in sorted(nets):
            net = nets[stage]
            fh.write(struct.pack("<II", stage, net.input_side))
            records = [(0, l) for l in net.trunk]
            records += [(HEAD_ROLES[k], net.heads[k]) for k in ("face", "bbox", "orient")]
            nn.write_records(fh, records)


def load_cascade(path) -> dict[int, Network]:
    with open(path, "rb") as fh:
        if fh.read(4) != nn.MAGIC:
            raise nn.ModelFormatError("bad magic")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != nn.FORMAT_VERSION:
            raise nn.ModelFormatError(f"unsupported format version {version}")
        (n_nets,) = struct.unpack("<I", fh.read(4))
        nets = {}
        for _ in range(n_nets):
            stage, side = struct.unpack("<II", fh.read(8))
            trunk, heads = [], {}
            for role, layer in nn.read_records(fh):
                if role == 0:
                    trunk.append(layer)
                else:
                    heads[_ROLE_HEADS[role]] = layer
            nets[stage] = Network(stage=stage, input_side=side,
                                  trunk=trunk, heads=heads)
    return nets
