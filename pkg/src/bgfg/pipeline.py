"""End-to-end wiring of the two stages.

Stage one restores a background at its own (small) working size; a fixed,
non-trainable bilinear bridge lifts it to the segmentation working size,
where it is stacked behind the current frame (channels 0-2 frame, 3-5
background) and segmented.  Training runs three steps: restoration alone,
segmentation alone with stage one frozen, then both jointly under the
weighted multi-task loss.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (
    SgdState,
    Tensor,
    bilinear_matrix,
    bilinear_resize,
    concat_channels,
    resize_bilinear,
    sgd_step,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import FrameSample, resize_image, resize_labels_nearest
from .errors import CheckpointError, ConfigError, DataError, NumericalError, ShapeError
from .nets import Network
from .reconstruction import (
    DESK_ENCODER_DECODER,
    FULL_ENCODER_DECODER,
    EncoderDecoderProfile,
    build_encoder_decoder,
    reconstruction_loss,
    synthesize_gt_background,
)
from .segmentation import (
    DESK_MCFCN,
    FULL_MCFCN,
    McfcnProfile,
    ProbabilityMap,
    build_mcfcn,
    mask_from_probs,
    segment,
    segmentation_loss,
)

CHANNEL_ORDER = "frame_then_background"
_SCOPES = ("stage1", "stage2", "both")


@dataclass(frozen=True)
class StepSpec:
    """One schedule step: its minibatch size, constant learning rate,
    iteration count, and which stage(s) receive updates."""

    batch_size: int
    learning_rate: float
    iterations: int
    trainable_scope: str

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.trainable_scope not in _SCOPES:
            raise ConfigError(f"trainable_scope must be one of {_SCOPES}, got {self.trainable_scope!r}")


@dataclass(frozen=True)
class TrainingConfig:
    """Three-step schedule plus the loss weight and initialization law."""

    steps: tuple
    lambda_weight: float = 1.0
    init_std: float = 0.01
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, "steps", steps)
        if len(steps) != 3:
            raise ConfigError(f"the schedule has exactly 3 steps, got {len(steps)}")
        expected = _SCOPES
        scopes = tuple(s.trainable_scope for s in steps)
        if scopes != expected:
            raise ConfigError(f"step scopes must be {expected} in order, got {scopes}")
        if self.lambda_weight < 0:
            raise ConfigError("lambda_weight must be non-negative")
        if not self.init_std > 0:
            raise ConfigError("init_std must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")


def full_training_config(seed: int = 0) -> TrainingConfig:
    """Full-scale schedule: batches 4/2/1, rates 1e-4/1e-3/1e-5,
    iterations 20000/6000/3000."""
    return TrainingConfig(
        steps=(
            StepSpec(4, 1e-4, 20000, "stage1"),
            StepSpec(2, 1e-3, 6000, "stage2"),
            StepSpec(1, 1e-5, 3000, "both"),
        ),
        seed=seed,
    )


def desk_training_config(seed: int = 0, iterations=(2000, 1000, 500)) -> TrainingConfig:
    """Desk-scale schedule: same shape as the full one, shrunk to CPU budgets.

    The wider init (0.1 vs the full-scale 0.01) keeps signal alive through the
    untrained stack; the full-scale run inherits pretrained-style tuning
    instead and keeps the narrow default.
    """
    return TrainingConfig(
        steps=(
            StepSpec(4, 2e-4, iterations[0], "stage1"),
            StepSpec(2, 2e-1, iterations[1], "stage2"),
            StepSpec(1, 2e-5, iterations[2], "both"),
        ),
        init_std=0.1,
        seed=seed,
    )


@dataclass(frozen=True)
class PipelineProfile:
    """Working sizes and dtype of the whole two-stage system."""

    encoder: EncoderDecoderProfile = field(default_factory=lambda: DESK_ENCODER_DECODER)
    mcfcn: McfcnProfile = field(default_factory=lambda: DESK_MCFCN)
    stage2_size: int = 64
    dtype: str = "float32"

    def __post_init__(self):
        if self.stage2_size < 1:
            raise ConfigError("stage2_size must be positive")
        if self.mcfcn.in_channels != 6:
            raise ConfigError("the two-stage pipeline needs the 6-channel segmentation profile")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")


DESK_PIPELINE = PipelineProfile()
FULL_PIPELINE = PipelineProfile(
    encoder=FULL_ENCODER_DECODER, mcfcn=FULL_MCFCN, stage2_size=961, dtype="float32"
)


def bilinear_bridge(background: Tensor, target: int) -> Tensor:
    """Fixed-coefficient bilinear resize from stage-1 output to stage-2 input.

    The coefficients come from a cached, read-only matrix pair; nothing here
    is a parameter, so no training step can move it.  Equal sizes pass
    through bitwise."""
    if target < 1:
        raise ShapeError("bridge target size must be positive")
    return bilinear_resize(background, target, target)


def bridge_coefficients(s_in: int, s_out: int, dtype: str = "float64"):
    """The matrix pair realizing the bridge (row, column); read-only views."""
    m = bilinear_matrix(s_in, s_out, dtype)
    return m, m


def joint_loss(l_rec: Tensor, l_seg: Tensor, lambda_weight: float) -> Tensor:
    """Weighted multi-task total: restoration plus lambda times segmentation."""
    if lambda_weight < 0:
        raise ConfigError("lambda_weight must be non-negative")
    for name, t in (("restoration", l_rec), ("segmentation", l_seg)):
        if not np.isfinite(t.data).all():
            raise NumericalError(f"{name} loss is non-finite")
    return l_rec + l_seg * float(lambda_weight)


class TwoStagePipeline:
    """Both networks plus the normalization constants they were trained with."""

    def __init__(self, profile: PipelineProfile = DESK_PIPELINE, channel_mean=None):
        self.profile = profile
        np_dtype = np.dtype(profile.dtype)
        self.stage1 = Network(build_encoder_decoder(profile.encoder), dtype=np_dtype)
        self.stage2 = Network(build_mcfcn(profile.mcfcn), dtype=np_dtype)
        self.channel_mean = (
            np.zeros(3, dtype=np.float64) if channel_mean is None else np.asarray(channel_mean, dtype=np.float64)
        )
        if self.channel_mean.shape != (3,):
            raise ConfigError("channel_mean must hold 3 values")

    @property
    def initialized(self) -> bool:
        return self.stage1._initialized and self.stage2._initialized

    def initialize(self, seed: int, init_std: float = 0.01) -> None:
        self.stage1.initialize([seed, 101], init_std)
        self.stage2.initialize([seed, 202], init_std)

    def set_channel_mean_from(self, frames) -> None:
        images = np.stack([np.asarray(f.image, dtype=np.float64) for f in frames])
        self.channel_mean = images.mean(axis=(0, 2, 3))

    def normalize(self, images: np.ndarray) -> np.ndarray:
        shift = self.channel_mean.reshape(3, 1, 1)
        return np.asarray(images, dtype=np.float64) - (shift if images.ndim == 3 else shift[None])

    def denormalize(self, images: np.ndarray) -> np.ndarray:
        shift = self.channel_mean.reshape(3, 1, 1)
        out = np.asarray(images, dtype=np.float64) + (shift if images.ndim == 3 else shift[None])
        return np.clip(out, 0.0, 1.0)

    def _as_dtype(self, arr: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(arr, dtype=np.dtype(self.profile.dtype))

    def trainable_params(self, scope: str) -> dict:
        params: dict = {}
        if scope in ("stage1", "both"):
            params.update({f"stage1/{k}": v for k, v in self.stage1.params.items()})
        if scope in ("stage2", "both"):
            params.update({f"stage2/{k}": v for k, v in self.stage2.params.items()})
        return params

    def set_scope(self, scope: str) -> None:
        self.stage1.set_trainable(scope in ("stage1", "both"))
        self.stage2.set_trainable(scope in ("stage2", "both"))

    def zero_grad(self) -> None:
        self.stage1.zero_grad()
        self.stage2.zero_grad()

    def infer(self, frame: np.ndarray, output_size=None):
        """Frame(s) -> (restored background, ProbabilityMap, binary mask).

        The background comes back at the stage-1 working size in [0,1]; the
        mask at the stage-2 working size unless output_size (an extent or an
        (h, w) pair) asks otherwise.
        """
        if not self.initialized:
            raise ConfigError("pipeline parameters are uninitialized; train or load a checkpoint first")
        arr = np.asarray(frame, dtype=np.float64)
        single = arr.ndim == 3
        if single:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[1] != 3:
            raise ShapeError(f"frames must be [3,H,W] or [N,3,H,W], got {np.asarray(frame).shape}")
        s1 = self.profile.encoder.input_size
        s2 = self.profile.stage2_size
        x1 = self._as_dtype(self.normalize(resize_image(arr, s1)))
        x2 = self._as_dtype(self.normalize(resize_image(arr, s2)))
        restored = self.stage1.forward(Tensor(x1))
        bridged = bilinear_bridge(restored, s2)
        stacked = concat_channels(Tensor(x2), Tensor(bridged.data))
        pmap = segment(self.stage2, stacked)
        background = self.denormalize(restored.data.astype(np.float64))
        if output_size is not None:
            oh, ow = (output_size, output_size) if np.isscalar(output_size) else tuple(output_size)
            if (oh, ow) != (s2, s2):
                up = resize_bilinear(pmap.probs.data.astype(np.float64), int(oh), int(ow))
                pmap = ProbabilityMap(Tensor(up / up.sum(axis=1, keepdims=True)))
        mask = mask_from_probs(pmap, mode="argmax")
        if single:
            background = background[0]
        return background, pmap, mask

    def save(self, path) -> None:
        if not self.initialized:
            raise ConfigError("nothing to save: pipeline parameters are uninitialized")
        tensors = {f"stage1/{k}": v for k, v in self.stage1.param_arrays().items()}
        tensors.update({f"stage2/{k}": v for k, v in self.stage2.param_arrays().items()})
        tensors["channel_mean"] = self.channel_mean
        metadata = {
            "format": "two_stage_pipeline",
            "channel_order": CHANNEL_ORDER,
            "dtype": self.profile.dtype,
            "stage2_size": self.profile.stage2_size,
            "encoder": {
                "input_size": self.profile.encoder.input_size,
                "channel_progression": list(self.profile.encoder.channel_progression),
                "latent_channels": self.profile.encoder.latent_channels,
                "use_batchnorm": self.profile.encoder.use_batchnorm,
            },
            "mcfcn": {
                "in_channels": self.profile.mcfcn.in_channels,
                "stage_channels": list(self.profile.mcfcn.stage_channels),
                "fc6_dilation": self.profile.mcfcn.fc6_dilation,
                "output_stride": self.profile.mcfcn.output_stride,
                "num_classes": self.profile.mcfcn.num_classes,
            },
        }
        save_checkpoint(path, tensors, metadata)

    @classmethod
    def load(cls, path) -> "TwoStagePipeline":
        tensors, metadata = load_checkpoint(path)
        if metadata.get("format") != "two_stage_pipeline":
            raise CheckpointError(f"checkpoint {path} is not a two-stage pipeline")
        try:
            encoder = EncoderDecoderProfile(
                input_size=metadata["encoder"]["input_size"],
                channel_progression=tuple(metadata["encoder"]["channel_progression"]),
                latent_channels=metadata["encoder"]["latent_channels"],
                use_batchnorm=metadata["encoder"]["use_batchnorm"],
            )
            mcfcn = McfcnProfile(
                in_channels=metadata["mcfcn"]["in_channels"],
                stage_channels=tuple(metadata["mcfcn"]["stage_channels"]),
                fc6_dilation=metadata["mcfcn"]["fc6_dilation"],
                output_stride=metadata["mcfcn"]["output_stride"],
                num_classes=metadata["mcfcn"]["num_classes"],
            )
            profile = PipelineProfile(
                encoder=encoder,
                mcfcn=mcfcn,
                stage2_size=metadata["stage2_size"],
                dtype=metadata["dtype"],
            )
        except (KeyError, TypeError) as exc:
            raise CheckpointError(f"checkpoint {path} is missing profile metadata: {exc}") from exc
        if "channel_mean" not in tensors:
            raise CheckpointError(f"checkpoint {path} lacks the channel_mean tensor")
        pipeline = cls(profile, channel_mean=tensors["channel_mean"])
        try:
            pipeline.stage1.load_params(
                {k[len("stage1/") :]: v for k, v in tensors.items() if k.startswith("stage1/")}
            )
            pipeline.stage2.load_params(
                {k[len("stage2/") :]: v for k, v in tensors.items() if k.startswith("stage2/")}
            )
        except ShapeError as exc:
            raise CheckpointError(f"checkpoint {path} does not match its declared profiles: {exc}") from exc
        return pipeline


def _target_backgrounds(frames) -> list:
    """Per-frame clean background: the frame's own reference when present,
    otherwise a label-masked temporal median shared by the sequence."""
    if all(f.gt_background is not None for f in frames):
        return [np.asarray(f.gt_background, dtype=np.float64) for f in frames]
    synthesized = synthesize_gt_background(frames).image
    return [
        np.asarray(f.gt_background, dtype=np.float64) if f.gt_background is not None else synthesized
        for f in frames
    ]


class _TrainingSet:
    """Frames pre-resized to both working sizes, normalized, and stacked."""

    def __init__(self, pipeline: TwoStagePipeline, frames):
        s1 = pipeline.profile.encoder.input_size
        s2 = pipeline.profile.stage2_size
        backgrounds = _target_backgrounds(frames)
        self.frames_s1 = pipeline._as_dtype(
            np.stack([pipeline.normalize(resize_image(f.image, s1)) for f in frames])
        )
        self.targets_s1 = pipeline._as_dtype(
            np.stack([pipeline.normalize(resize_image(b, s1)) for b in backgrounds])
        )
        self.frames_s2 = pipeline._as_dtype(
            np.stack([pipeline.normalize(resize_image(f.image, s2)) for f in frames])
        )
        self.labels_s2 = np.stack([resize_labels_nearest(f.labels, s2).values for f in frames])
        self.n = len(frames)


def run_training_schedule(
    pipeline: TwoStagePipeline, config: TrainingConfig, frames, out_dir=None
) -> list:
    """Run the three steps; returns the per-iteration loss history.

    Parameters are freshly drawn from Normal(0, init_std^2).  Step 1 fits the
    restoration loss alone; step 2 fits the segmentation loss with stage one
    frozen (its backgrounds are precomputed once, which is exact because the
    frozen forward pass is deterministic); step 3 descends the joint loss
    end-to-end.  The history is bit-reproducible for a fixed seed.
    """
    frames = list(frames)
    if not frames:
        raise DataError("training needs at least one frame")
    for f in frames:
        if not isinstance(f, FrameSample):
            raise DataError("training data must be FrameSample objects")
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    pipeline.initialize(config.seed, config.init_std)
    pipeline.set_channel_mean_from(frames)
    data = _TrainingSet(pipeline, frames)
    s2 = pipeline.profile.stage2_size
    history: list = []
    global_iter = 0
    for step_index, step in enumerate(config.steps):
        rng = np.random.default_rng([config.seed, 11, step_index])
        scope = step.trainable_scope
        pipeline.set_scope(scope)
        optimizer = SgdState(step.learning_rate, config.momentum)
        params = pipeline.trainable_params(scope)
        bridged_all = None
        if scope == "stage2":
            bridged_all = _precompute_bridged(pipeline, data.frames_s1, s2)
        for it in range(step.iterations):
            idx = rng.integers(0, data.n, size=step.batch_size)
            pipeline.zero_grad()
            l_rec_v = l_seg_v = joint_v = None
            if scope == "stage1":
                restored = pipeline.stage1.forward(Tensor(data.frames_s1[idx]))
                loss = reconstruction_loss(restored, Tensor(data.targets_s1[idx])) / step.batch_size
                l_rec_v = loss.item()
            elif scope == "stage2":
                stacked = concat_channels(Tensor(data.frames_s2[idx]), Tensor(bridged_all[idx]))
                pmap = segment(pipeline.stage2, stacked)
                loss = segmentation_loss(pmap, data.labels_s2[idx])
                l_seg_v = loss.item()
            else:
                restored = pipeline.stage1.forward(Tensor(data.frames_s1[idx]))
                l_rec = reconstruction_loss(restored, Tensor(data.targets_s1[idx])) / step.batch_size
                bridged = bilinear_bridge(restored, s2)
                stacked = concat_channels(Tensor(data.frames_s2[idx]), bridged)
                pmap = segment(pipeline.stage2, stacked)
                l_seg = segmentation_loss(pmap, data.labels_s2[idx])
                loss = joint_loss(l_rec, l_seg, config.lambda_weight)
                l_rec_v, l_seg_v, joint_v = l_rec.item(), l_seg.item(), loss.item()
            if not np.isfinite(loss.data):
                raise NumericalError(
                    f"non-finite loss at step {step_index + 1}, iteration {it + 1}; aborting"
                )
            loss.backward()
            sgd_step(optimizer, params)
            global_iter += 1
            history.append(
                {
                    "step": step_index + 1,
                    "iteration": global_iter,
                    "l_rec": l_rec_v,
                    "l_seg": l_seg_v,
                    "joint": joint_v,
                }
            )
        if out_path is not None:
            pipeline.save(out_path / f"step{step_index + 1}.ckpt")
    pipeline.set_scope("both")
    if out_path is not None:
        (out_path / "loss_history.csv").write_text(loss_history_csv(history))
    return history


def _precompute_bridged(pipeline: TwoStagePipeline, frames_s1: np.ndarray, s2: int, chunk: int = 8) -> np.ndarray:
    outputs = []
    for start in range(0, frames_s1.shape[0], chunk):
        restored = pipeline.stage1.forward(Tensor(frames_s1[start : start + chunk]))
        outputs.append(bilinear_bridge(restored, s2).data)
    return np.concatenate(outputs, axis=0)


def loss_history_csv(history) -> str:
    """CSV with one row per iteration; absent losses stay blank."""
    out = io.StringIO()
    out.write("iteration,l_rec,l_seg,joint\n")
    for row in history:
        cells = [str(row["iteration"])]
        for key in ("l_rec", "l_seg", "joint"):
            v = row[key]
            cells.append("" if v is None else repr(float(v)))
        out.write(",".join(cells) + "\n")
    return out.getvalue()


def infer_end_to_end(pipeline: TwoStagePipeline, frame: np.ndarray, output_size: int | None = None):
    """Single-call inference: (restored background, probability map, mask)."""
    return pipeline.infer(frame, output_size=output_size)
