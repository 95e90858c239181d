"""Occlusion sensitivity computed natively on the torch model.

Same semantics as the pipeline's occlusion stage: slide a full-height
window along time on a stride grid (plus one flush tail window when the
grid does not land on the end), mask it, and attribute the probability
drop p0 - p_masked to every covered cell, normalizing by coverage. The
masked variants are batched through the model.
"""

import math

import numpy as np
import torch

from .model import ModelBundle


def window_starts(total: int, window: int, stride: int) -> list:
    if window > total:
        raise ValueError(f"window {window} exceeds extent {total}")
    starts = list(range(0, total - window + 1, stride))
    if starts[-1] + window != total:
        starts.append(total - window)
    return starts


def mask_fill_value(matrix: np.ndarray, mask: str, log_floor: float) -> float:
    if mask == "mean":
        return float(matrix.mean())
    if mask == "floor":
        return float(math.log(log_floor))
    if mask.startswith("fixed:"):
        return float(mask.split(":", 1)[1])
    raise ValueError(f"mask must be mean, floor, or fixed:<v>, got {mask!r}")


def occlusion_relevance(bundle: ModelBundle, matrix: np.ndarray,
                        target_label: str, window: int = 10, stride: int = 3,
                        mask: str = "mean", log_floor: float = 1e-10,
                        batch_size: int = 64) -> np.ndarray:
    """Coverage-normalized drop map for `target_label`, shape H x W."""
    if target_label not in bundle.labels:
        raise ValueError(f"unknown target label {target_label!r}; model "
                         f"labels are {list(bundle.labels)}")
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    matrix = np.asarray(matrix, dtype=np.float64)
    h, w = matrix.shape
    starts = window_starts(w, window, stride)
    fill = mask_fill_value(matrix, mask, log_floor)
    target = bundle.labels.index(target_label)

    base = torch.as_tensor(matrix, dtype=torch.float32)
    p0 = float(bundle.probabilities(base)[target])

    batch = torch.empty((len(starts), 1, h, w), dtype=torch.float32)
    for i, s in enumerate(starts):
        batch[i, 0] = base
        batch[i, 0, :, s:s + window] = fill
    drops = np.empty(len(starts))
    with torch.no_grad():
        for lo in range(0, len(starts), batch_size):
            logits = bundle.model(batch[lo:lo + batch_size])
            probs = torch.softmax(logits.double(), dim=1)[:, target]
            drops[lo:lo + len(probs)] = p0 - probs.numpy()

    acc = np.zeros((h, w))
    cnt = np.zeros((h, w))
    for s, drop in zip(starts, drops):
        acc[:, s:s + window] += drop
        cnt[:, s:s + window] += 1.0
    return acc / cnt
