"""Rotation-invariant cascaded face detection with progressive
orientation calibration."""

from .backend import BACKEND_NAME
from .cascade import (LossWeights, Network, accumulate_rip, build_pcn,
                      decide_theta1, decide_theta2, load_cascade,
                      save_cascade, stage_loss)
from .geometry import (Box, OrientationFrame, bbox_apply, bbox_targets,
                       crop_resize, iou, nms, normalize_angle, remap_window,
                       rot_exact, rotate_continuous)
from .pipeline import Candidate, DetectConfig, DetectedFace, detect, propose
from .synth import gen_synthetic, load_corpus, save_corpus
from .trainer import TrainConfig, mine_samples, train_cascade, train_stage

__version__ = "0.1.0"
