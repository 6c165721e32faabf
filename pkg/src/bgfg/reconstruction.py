"""Stage one: convolutional encoder-decoder that restores a clean background.

The encoder halves the spatial extent per stage with stride-2 convolutions;
a 3x3 convolution forms the latent code; the decoder mirrors the encoder
with stride-2 transposed convolutions and ends in a 3-channel image squashed
by tanh, which covers the mean-shifted normalized image range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ConvSpec, Tensor, squared_error_sum
from .errors import ConfigError, DataError, ShapeError
from .nets import ActLayer, BatchNormLayer, ConvLayer, Network, NetworkSpec, TConvLayer

ENCODER_LEAK = 0.2


@dataclass(frozen=True)
class EncoderDecoderProfile:
    """Hyperparameters of the background-restoration network."""

    input_size: int = 32
    channel_progression: tuple = (16, 32, 64)
    latent_channels: int = 128
    use_batchnorm: bool = False

    def __post_init__(self):
        object.__setattr__(self, "channel_progression", tuple(int(c) for c in self.channel_progression))
        if not self.channel_progression:
            raise ConfigError("channel_progression must not be empty")
        if any(c < 1 for c in self.channel_progression):
            raise ConfigError("channel widths must be positive")
        if self.latent_channels < 1:
            raise ConfigError("latent_channels must be positive")
        stages = len(self.channel_progression)
        if self.input_size < 2**stages or self.input_size % (2**stages) != 0:
            raise ConfigError(
                f"input_size {self.input_size} must be divisible by 2^{stages} for {stages} stride-2 stages"
            )

    @property
    def latent_size(self) -> int:
        return self.input_size // (2 ** len(self.channel_progression))


DESK_ENCODER_DECODER = EncoderDecoderProfile()
FULL_ENCODER_DECODER = EncoderDecoderProfile(
    input_size=128, channel_progression=(64, 128, 256, 512), latent_channels=512
)


def build_encoder_decoder(profile: EncoderDecoderProfile) -> NetworkSpec:
    """All-convolutional mirror: stride-2 encoder, latent 3x3 conv, stride-2
    transposed-conv decoder, 3-channel tanh output head."""
    layers: list = []
    prev = 3
    for i, ch in enumerate(profile.channel_progression):
        layers.append(ConvLayer(f"enc{i + 1}", ConvSpec(prev, ch, 4, 4, stride=2, padding=1)))
        if profile.use_batchnorm and i > 0:
            layers.append(BatchNormLayer(f"enc{i + 1}_bn", ch))
        layers.append(ActLayer("leaky_relu", ENCODER_LEAK))
        prev = ch
    layers.append(ConvLayer("latent", ConvSpec(prev, profile.latent_channels, 3, 3, stride=1, padding=1)))
    layers.append(ActLayer("leaky_relu", ENCODER_LEAK))
    prev = profile.latent_channels
    for j, ch in enumerate(reversed(profile.channel_progression)):
        layers.append(TConvLayer(f"dec{j + 1}", ConvSpec(prev, ch, 4, 4, stride=2, padding=1)))
        if profile.use_batchnorm:
            layers.append(BatchNormLayer(f"dec{j + 1}_bn", ch))
        layers.append(ActLayer("relu"))
        prev = ch
    layers.append(ConvLayer("out", ConvSpec(prev, 3, 3, 3, stride=1, padding=1)))
    layers.append(ActLayer("tanh"))
    return NetworkSpec(name="encoder_decoder", in_channels=3, layers=tuple(layers))


def reconstruct(net: Network, frame: Tensor, profile: EncoderDecoderProfile) -> Tensor:
    """One forward pass from frame batch to restored background batch."""
    s = profile.input_size
    if frame.data.ndim != 4 or frame.data.shape[2:] != (s, s):
        raise ShapeError(f"frame must be [N,3,{s},{s}], got {frame.data.shape}")
    return net.forward(frame)


def reconstruction_loss(background: Tensor, target: Tensor) -> Tensor:
    """Sum of squared differences over every element of the batch."""
    return squared_error_sum(background, target)


@dataclass(frozen=True)
class GroundTruthBackground:
    """Reference background image plus how many background-labeled
    observations backed each pixel."""

    image: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ShapeError(f"background image must be [3,H,W], got {self.image.shape}")
        if self.coverage.shape != self.image.shape[1:]:
            raise ShapeError("coverage grid must match the image spatial size")
        if (self.coverage < 0).any():
            raise DataError("coverage counts must be non-negative")


def synthesize_gt_background(frames) -> GroundTruthBackground:
    """Per-pixel median over frames where the pixel is labeled background;
    pixels never observed as background fall back to the unconditional
    temporal median (coverage 0)."""
    frames = list(frames)
    if not frames:
        raise DataError("cannot synthesize a background from an empty sequence")
    images = np.stack([np.asarray(f.image, dtype=np.float64) for f in frames])  # [T,3,H,W]
    labels = np.stack([f.labels.values for f in frames])  # [T,H,W]
    if labels.shape[1:] != images.shape[2:]:
        raise ShapeError("label maps must match image spatial size")
    bg_mask = labels == 0
    coverage = bg_mask.sum(axis=0)
    masked = np.ma.masked_array(images, mask=np.broadcast_to(~bg_mask[:, None], images.shape))
    med = np.ma.median(masked, axis=0)
    fallback = np.median(images, axis=0)
    image = np.where(coverage[None] > 0, med.filled(0.0), fallback)
    return GroundTruthBackground(image=image, coverage=coverage)
