"""Classic comparison methods: PCA background modeling, a streaming robust
PCA (low-rank + sparse) decomposition, and the pixel-difference threshold
classifier with its F-measure sweep."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import split_dataset
from .errors import ConfigError, DataError, ShapeError
from .evaluation import f_measure

DEFAULT_SWEEP_GRID = np.linspace(0.0, 0.5, 51)


@dataclass(frozen=True)
class PcaBackgroundModel:
    """Mean image plus the top-k principal directions of the training frames."""

    mean: np.ndarray
    components: np.ndarray
    k: int
    image_shape: tuple

    def __post_init__(self):
        if self.components.shape != (self.k, self.mean.size):
            raise ShapeError(
                f"components must be [k, dim] = [{self.k}, {self.mean.size}], got {self.components.shape}"
            )


def pca_fit(frames, k: int) -> PcaBackgroundModel:
    """Top-k orthonormal basis of the mean-centered vectorized frames."""
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if not frames:
        raise DataError("pca_fit needs at least one frame")
    if k < 0 or k > len(frames):
        raise ConfigError(f"rank k must lie in [0, {len(frames)}], got {k}")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ShapeError("all frames must share one shape")
    x = np.stack([f.reshape(-1) for f in frames])
    mean = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
    return PcaBackgroundModel(mean=mean, components=np.ascontiguousarray(vt[:k]), k=k, image_shape=shape)


def pca_background(model: PcaBackgroundModel, frame: np.ndarray) -> np.ndarray:
    """Mean plus the projection of the centered frame onto the basis."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != model.image_shape:
        raise ShapeError(f"frame shape {frame.shape} != model shape {model.image_shape}")
    centered = frame.reshape(-1) - model.mean
    restored = model.mean + model.components.T @ (model.components @ centered)
    return restored.reshape(model.image_shape)


@dataclass(frozen=True)
class RpcaState:
    """Streaming low-rank + sparse decomposition state.

    basis columns span the current background subspace; singular_values
    weight them for the incremental update.  Every update satisfies
    low_rank + sparse == frame exactly.
    """

    basis: np.ndarray
    singular_values: np.ndarray
    rank: int
    sparse_threshold: float
    frames_seen: int = 0
    image_shape: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.rank < 1:
            raise ConfigError("rank must be at least 1")
        if not self.sparse_threshold > 0:
            raise ConfigError("sparse_threshold must be positive")
        if self.basis.ndim != 2 or self.basis.shape[1] != self.singular_values.size:
            raise ShapeError("basis must be [dim, r] with one singular value per column")


def rpca_init(image_shape, rank: int, sparse_threshold: float) -> RpcaState:
    dim = int(np.prod(image_shape))
    return RpcaState(
        basis=np.zeros((dim, 0)),
        singular_values=np.zeros(0),
        rank=rank,
        sparse_threshold=sparse_threshold,
        frames_seen=0,
        image_shape=tuple(image_shape),
    )


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def rpca_update(state: RpcaState, frame: np.ndarray):
    """Consume one frame; returns (state', low_rank_image, sparse_image).

    While the basis is still filling (warm-up), the frame is absorbed as
    clean background.  Afterwards the residual against the subspace is
    soft-thresholded into the sparse part and the low-rank part is defined
    as frame - sparse, which keeps the decomposition exact; the subspace is
    then refreshed from the low-rank part by a rank-truncated update.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != state.image_shape:
        raise ShapeError(f"frame shape {frame.shape} != state shape {state.image_shape}")
    x = frame.reshape(-1)
    warm = state.basis.shape[1] < state.rank
    if warm:
        sparse = np.zeros_like(x)
    else:
        residual = x - state.basis @ (state.basis.T @ x)
        sparse = soft_threshold(residual, state.sparse_threshold)
    low_rank = x - sparse
    new_basis, new_sv = _subspace_update(state.basis, state.singular_values, low_rank, state.rank)
    new_state = RpcaState(
        basis=new_basis,
        singular_values=new_sv,
        rank=state.rank,
        sparse_threshold=state.sparse_threshold,
        frames_seen=state.frames_seen + 1,
        image_shape=state.image_shape,
    )
    return new_state, low_rank.reshape(state.image_shape), sparse.reshape(state.image_shape)


def _subspace_update(basis: np.ndarray, sv: np.ndarray, v: np.ndarray, rank: int):
    """Rank-truncated incremental SVD absorbing one vector."""
    coeff = basis.T @ v
    residual = v - basis @ coeff
    rho = float(np.linalg.norm(residual))
    r = basis.shape[1]
    if rho > 1e-12:
        augmented = np.concatenate([basis, (residual / rho)[:, None]], axis=1)
        k = np.zeros((r + 1, r + 1))
        k[:r, :r] = np.diag(sv)
        k[:r, r] = coeff
        k[r, r] = rho
    else:
        augmented = basis
        k = np.concatenate([np.diag(sv), coeff[:, None]], axis=1)
    u, s, _ = np.linalg.svd(k, full_matrices=False)
    keep = min(rank, s.size)
    new_basis = augmented @ u[:, :keep]
    # Gram-Schmidt hygiene: u is orthonormal, so this is already near-exact
    return np.ascontiguousarray(new_basis), s[:keep]


def threshold_classify(frame: np.ndarray, background: np.ndarray, theta: float) -> np.ndarray:
    """Foreground where the largest per-channel absolute difference exceeds theta."""
    if theta < 0:
        raise ConfigError(f"threshold must be non-negative, got {theta}")
    frame = np.asarray(frame, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if frame.shape != background.shape:
        raise ShapeError(f"frame shape {frame.shape} != background shape {background.shape}")
    diff = np.abs(frame - background).max(axis=0)
    return (diff > theta).astype(np.uint8)


@dataclass(frozen=True)
class SweepResult:
    """F-measure per threshold over a grid, plus the best point."""

    thetas: tuple
    f_measures: tuple
    best_theta: float
    best_f: float

    def to_csv(self) -> str:
        lines = ["theta,f_measure"]
        lines += [f"{t:.6f},{f:.6f}" for t, f in zip(self.thetas, self.f_measures)]
        return "\n".join(lines) + "\n"


def threshold_sweep(method: str, sequence, thetas=None, *, rank: int = 3, sparse_threshold: float = 0.1, reconstructor=None) -> SweepResult:
    """Score threshold_classify over a grid of cuts on the test split.

    method picks how backgrounds are produced: "pca" fits on the training
    split, "rpca" streams the whole sequence and uses each test frame's
    low-rank part, "baseline1" calls `reconstructor(image) -> background`.
    """
    sequence = list(sequence)
    if not sequence:
        raise DataError("threshold_sweep needs a non-empty sequence")
    if thetas is None:
        thetas = DEFAULT_SWEEP_GRID
    thetas = np.asarray(list(thetas), dtype=np.float64)
    if thetas.size == 0:
        raise ConfigError("threshold grid must not be empty")
    if thetas.min() < 0.0 or thetas.max() > 0.5:
        raise ConfigError("threshold grid must lie within [0, 0.5]")
    split = split_dataset(len(sequence))
    train = [sequence[i - 1] for i in split.train_indices]
    test = [sequence[i - 1] for i in split.test_indices]
    if method == "pca":
        model = pca_fit([f.image for f in train], min(rank, len(train)))
        backgrounds = [pca_background(model, f.image) for f in test]
    elif method == "rpca":
        state = rpca_init(train[0].image.shape, rank=min(rank, len(train)), sparse_threshold=sparse_threshold)
        for f in train:
            state, _, _ = rpca_update(state, f.image)
        backgrounds = []
        for f in test:
            state, low_rank, _ = rpca_update(state, f.image)
            backgrounds.append(low_rank)
    elif method == "baseline1":
        if reconstructor is None:
            raise ConfigError("baseline1 sweep needs a reconstructor callable")
        backgrounds = [np.asarray(reconstructor(f.image)) for f in test]
    else:
        raise ConfigError(f"unknown sweep method {method!r}")
    labels = [f.labels for f in test]
    diffs = [np.abs(f.image - b).max(axis=0) for f, b in zip(test, backgrounds)]
    fs = []
    for theta in thetas:
        masks = [(d > theta).astype(np.uint8) for d in diffs]
        fs.append(f_measure(masks, labels, grouping="sequence").f_measure)
    best = int(np.argmax(fs))
    return SweepResult(
        thetas=tuple(float(t) for t in thetas),
        f_measures=tuple(float(f) for f in fs),
        best_theta=float(thetas[best]),
        best_f=float(fs[best]),
    )
