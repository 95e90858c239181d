"""Class-conditioned relevance maps via layer-wise epsilon rules.

Relevance starts at the head as the target logit with every other output
masked, then flows backward one layer at a time: the epsilon rule for
convolutions, batch norms, pooling, and the linear head (computed with an
autograd pass per layer), a contribution-proportional split at each
residual sum, and pass-through at ReLUs. The result is an input-sized map
whose cells say how much each spectrogram cell contributed to the target
class.
"""

import numpy as np
import torch
from torch import nn

from .model import EmotionResNet, ModelBundle, ResidualBlock

EPSILON = 1e-6

SUPPORTED_LAYERS = (nn.Conv2d, nn.BatchNorm2d, nn.ReLU, nn.MaxPool2d,
                    nn.AdaptiveAvgPool2d, nn.Dropout, nn.Linear, nn.Identity,
                    ResidualBlock, EmotionResNet)


class UnsupportedLayerError(Exception):
    pass


def check_supported(model: nn.Module) -> None:
    """Refuse architectures with layers no relevance rule covers."""
    for name, module in model.named_modules():
        if not isinstance(module, SUPPORTED_LAYERS):
            raise UnsupportedLayerError(
                f"no relevance rule for layer {name or '<root>'} "
                f"({type(module).__name__})")


def _stabilized(z: torch.Tensor) -> torch.Tensor:
    return z + torch.where(z >= 0, EPSILON, -EPSILON)


def _eps_backward(fn, activation: torch.Tensor,
                  relevance: torch.Tensor) -> torch.Tensor:
    """Epsilon rule through one (locally linear) computation `fn`."""
    a = activation.detach().requires_grad_(True)
    with torch.enable_grad():
        z = fn(a)
        s = (relevance / _stabilized(z)).detach()
        (z * s).sum().backward()
    return (a * a.grad).detach()


def _block_forward(block: ResidualBlock, x: torch.Tensor):
    """Forward through a residual block, keeping the pre-sum pieces."""
    y1 = block.relu1(block.bn1(block.conv1(x)))
    main = block.bn2(block.conv2(y1))
    short = block.shortcut(x)
    return y1, main, short, block.relu2(main + short)


def _block_backward(block: ResidualBlock, x, y1, main, short,
                    relevance: torch.Tensor) -> torch.Tensor:
    denom = _stabilized(main + short)
    r_main = relevance * main / denom
    r_short = relevance * short / denom
    r_y1 = _eps_backward(lambda a: block.bn2(block.conv2(a)), y1, r_main)
    r_x = _eps_backward(lambda a: block.bn1(block.conv1(a)), x, r_y1)
    if isinstance(block.shortcut, nn.Identity):
        r_x = r_x + r_short
    else:
        r_x = r_x + _eps_backward(block.shortcut, x, r_short)
    return r_x


def epsilon_lrp(bundle: ModelBundle, matrix: np.ndarray,
                target_label: str) -> np.ndarray:
    """Input-sized relevance map for `target_label` on one spectrogram."""
    if target_label not in bundle.labels:
        raise ValueError(f"unknown target label {target_label!r}; model "
                         f"labels are {list(bundle.labels)}")
    check_supported(bundle.model)
    model = bundle.model
    model.eval()
    target = bundle.labels.index(target_label)

    x0 = torch.as_tensor(np.asarray(matrix, dtype=np.float64),
                         dtype=torch.float32).reshape(1, 1, *matrix.shape)
    with torch.no_grad():
        stem = model.stem_relu(model.stem_bn(model.stem_conv(x0)))
        b1_y1, b1_main, b1_short, b1_out = _block_forward(model.block1, stem)
        pooled = model.pool(b1_out)
        b2_y1, b2_main, b2_short, b2_out = _block_forward(model.block2,
                                                          pooled)
        gapped = model.gap(b2_out).flatten(1)
        logits = model.head(gapped)

    relevance = torch.zeros_like(logits)
    relevance[0, target] = logits[0, target]

    r = _eps_backward(model.head, gapped, relevance)
    r = _eps_backward(lambda a: model.gap(a).flatten(1), b2_out, r)
    r = _block_backward(model.block2, pooled, b2_y1, b2_main, b2_short, r)
    r = _eps_backward(model.pool, b1_out, r)
    r = _block_backward(model.block1, stem, b1_y1, b1_main, b1_short, r)
    r = _eps_backward(lambda a: model.stem_bn(model.stem_conv(a)), x0, r)
    return r.detach()[0, 0].double().numpy()
