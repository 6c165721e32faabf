"""Stage two: multi-channel fully-convolutional segmentation network.

The net takes the current frame stacked with a restored background (6
channels) or the frame alone (3 channels, the single-image ablation), runs a
dilated convolution trunk at a reduced stride, widens the receptive field
with a dilated head convolution, classifies per pixel into 2 classes, and
bilinearly upsamples the logits back to the input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ConvSpec, Tensor, concat_channels, masked_nll_mean, softmax_channels
from .errors import ConfigError, DataError, ShapeError
from .nets import ActLayer, ConvLayer, Network, NetworkSpec, ResizeToInput


@dataclass(frozen=True)
class McfcnProfile:
    """Hyperparameters of the segmentation network."""

    in_channels: int = 6
    stage_channels: tuple = (16, 32, 64, 64)
    fc6_dilation: int = 6
    output_stride: int = 4
    num_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if self.in_channels not in (3, 6):
            raise ConfigError(f"in_channels must be 3 or 6, got {self.in_channels}")
        if not self.stage_channels or any(c < 1 for c in self.stage_channels):
            raise ConfigError("stage_channels must be positive and non-empty")
        if self.fc6_dilation < 1:
            raise ConfigError("fc6_dilation must be positive")
        os = self.output_stride
        if os < 1 or (os & (os - 1)) != 0:
            raise ConfigError(f"output_stride must be a power of two, got {os}")
        if len(self.stage_channels) < os.bit_length() - 1:
            raise ConfigError("need at least log2(output_stride) trunk stages")
        if self.num_classes != 2:
            raise ConfigError("the classifier is fixed to 2 classes")

    @property
    def strided_stages(self) -> int:
        return self.output_stride.bit_length() - 1


DESK_MCFCN = McfcnProfile()
DESK_MCFCN_SINGLE = McfcnProfile(in_channels=3)
FULL_MCFCN = McfcnProfile(in_channels=6, stage_channels=(64, 128, 256, 512, 512), fc6_dilation=6, output_stride=8)


def build_mcfcn(profile: McfcnProfile) -> NetworkSpec:
    """Dilated trunk at reduced stride, dilated head, 1x1 classifier,
    bilinear upsample back to the input resolution."""
    layers: list = []
    prev = profile.in_channels
    for i, ch in enumerate(profile.stage_channels):
        stride = 2 if i < profile.strided_stages else 1
        # the first stage past the strided prefix dilates to recover reach
        dilation = 2 if (stride == 1 and i == profile.strided_stages) else 1
        layers.append(
            ConvLayer(
                f"stage{i + 1}",
                ConvSpec(prev, ch, 3, 3, stride=stride, dilation=dilation, padding=dilation),
            )
        )
        layers.append(ActLayer("relu"))
        prev = ch
    d = profile.fc6_dilation
    layers.append(ConvLayer("head6", ConvSpec(prev, prev, 3, 3, stride=1, dilation=d, padding=d)))
    layers.append(ActLayer("relu"))
    layers.append(ConvLayer("head7", ConvSpec(prev, prev, 1, 1)))
    layers.append(ActLayer("relu"))
    layers.append(ConvLayer("classifier", ConvSpec(prev, profile.num_classes, 1, 1)))
    layers.append(ResizeToInput())
    return NetworkSpec(name=f"mcfcn_{profile.in_channels}ch", in_channels=profile.in_channels, layers=tuple(layers))


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel classes: 0 background, 1 foreground, -1 ignored."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if not np.issubdtype(v.dtype, np.integer):
            raise DataError("label values must be integers")
        if v.ndim != 2:
            raise ShapeError(f"label map must be 2-D, got shape {v.shape}")
        bad = np.setdiff1d(np.unique(v), [-1, 0, 1])
        if bad.size:
            raise DataError(f"label values outside {{-1, 0, 1}}: {bad.tolist()}")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel 2-class probabilities, channel-normalized."""

    probs: Tensor

    def __post_init__(self):
        if self.probs.data.ndim != 4 or self.probs.data.shape[1] != 2:
            raise ShapeError(f"probability map must be [N,2,H,W], got {self.probs.data.shape}")

    @property
    def shape(self) -> tuple:
        return self.probs.data.shape

    def foreground(self) -> np.ndarray:
        return self.probs.data[:, 1]


def segment(net: Network, x: Tensor) -> ProbabilityMap:
    """Forward pass to a full-resolution 2-class probability map."""
    if x.data.shape[1] != net.spec.in_channels:
        raise ShapeError(f"input has {x.data.shape[1]} channels, network expects {net.spec.in_channels}")
    logits = net.forward(x)
    return ProbabilityMap(softmax_channels(logits))


def segmentation_loss(pmap: ProbabilityMap, labels) -> Tensor:
    """Mean negative log-likelihood of the true class over scored pixels;
    label -1 removes a pixel from the loss and its gradient entirely."""
    if isinstance(labels, LabelMap):
        labels = labels.values
    return masked_nll_mean(pmap.probs, labels)


def mask_from_probs(pmap: ProbabilityMap, mode: str = "argmax", threshold: float | None = None) -> np.ndarray:
    """Binarize a probability map.

    argmax mode marks foreground where it strictly beats background (ties go
    to background); threshold mode marks foreground strictly above the cut.
    Single-frame maps come back as [H,W], batches as [N,H,W].
    """
    fg = pmap.probs.data[:, 1]
    bg = pmap.probs.data[:, 0]
    if mode == "argmax":
        mask = fg > bg
    elif mode == "threshold":
        if threshold is None or not 0.0 < float(threshold) < 1.0:
            raise ConfigError(f"threshold mode needs a cut in (0, 1), got {threshold}")
        mask = fg > float(threshold)
    else:
        raise ConfigError(f"unknown mask mode {mode!r}")
    mask = mask.astype(np.uint8)
    return mask[0] if mask.shape[0] == 1 else mask


__all__ = [
    "DESK_MCFCN",
    "DESK_MCFCN_SINGLE",
    "FULL_MCFCN",
    "LabelMap",
    "McfcnProfile",
    "ProbabilityMap",
    "build_mcfcn",
    "concat_channels",
    "mask_from_probs",
    "segment",
    "segmentation_loss",
]
