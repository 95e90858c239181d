"""The classifier: a small residual CNN over single-channel log-Mel input.

Two residual blocks (32 then 64 feature maps, 3x3 convolutions, batch
norm, ReLU, skip connections), a 2x2 max pool after the first block,
global average pooling, dropout 0.5, and a linear softmax head. Artifacts
are torch checkpoints carrying the state dict plus the label list and the
expected input height/width.
"""

import torch
from torch import nn

DEFAULT_LABELS = ("angry", "disgust", "fear", "happy", "neutral", "sad")


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.relu1 = nn.ReLU()
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.relu2 = nn.ReLU()
        if in_ch != out_ch:
            self.shortcut = nn.Conv2d(in_ch, out_ch, 1, bias=False)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        y = self.relu1(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return self.relu2(y + self.shortcut(x))


class EmotionResNet(nn.Module):
    def __init__(self, n_labels: int):
        super().__init__()
        if n_labels < 2:
            raise ValueError("need at least two emotion labels")
        self.stem_conv = nn.Conv2d(1, 32, 3, padding=1, bias=False)
        self.stem_bn = nn.BatchNorm2d(32)
        self.stem_relu = nn.ReLU()
        self.block1 = ResidualBlock(32, 32)
        self.pool = nn.MaxPool2d(2)
        self.block2 = ResidualBlock(32, 64)
        self.gap = nn.AdaptiveAvgPool2d(1)
        self.dropout = nn.Dropout(0.5)
        self.head = nn.Linear(64, n_labels)

    def forward(self, x):
        x = self.stem_relu(self.stem_bn(self.stem_conv(x)))
        x = self.block1(x)
        x = self.pool(x)
        x = self.block2(x)
        x = self.gap(x).flatten(1)
        x = self.dropout(x)
        return self.head(x)


class ModelBundle:
    """A loaded model plus the metadata the protocol and exporters need."""

    def __init__(self, model: EmotionResNet, labels: tuple,
                 input_h: int, input_w: int):
        self.model = model
        self.labels = tuple(labels)
        self.input_h = int(input_h)
        self.input_w = int(input_w)
        self.model.eval()

    @torch.no_grad()
    def probabilities(self, matrix: torch.Tensor) -> torch.Tensor:
        """Softmax over the head logits for one H x W matrix."""
        logits = self.model(matrix.reshape(1, 1, *matrix.shape))
        return torch.softmax(logits[0].double(), dim=0)

    def check_dims(self, h: int, w: int) -> None:
        if (h, w) != (self.input_h, self.input_w):
            raise ValueError(f"input dims {h}x{w} do not match model "
                             f"{self.input_h}x{self.input_w}")


def init_bundle(labels=DEFAULT_LABELS, input_h: int = 128,
                input_w: int = 132, seed: int = 0) -> ModelBundle:
    """Seeded fresh model; identical seeds give identical parameters."""
    torch.manual_seed(seed)
    model = EmotionResNet(len(labels))
    return ModelBundle(model, labels, input_h, input_w)


def save_bundle(bundle: ModelBundle, path) -> None:
    torch.save({"state_dict": bundle.model.state_dict(),
                "labels": list(bundle.labels),
                "input_h": bundle.input_h,
                "input_w": bundle.input_w}, path)


def load_bundle(path) -> ModelBundle:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise RuntimeError(f"cannot load model artifact {path}: {exc}") from exc
    for key in ("state_dict", "labels", "input_h", "input_w"):
        if key not in payload:
            raise RuntimeError(f"model artifact {path} is missing {key!r}")
    labels = tuple(payload["labels"])
    model = EmotionResNet(len(labels))
    model.load_state_dict(payload["state_dict"])
    return ModelBundle(model, labels, payload["input_h"], payload["input_w"])
