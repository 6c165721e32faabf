"""Command-line entry point.

Subcommands: train, infer, eval, sweep, synth, reconstruct, pca, rpca.
A JSON config file is the source of truth; repeated `--set dotted.key=value`
flags override individual entries, and every key is validated against the
schema before any work starts.  Each run prints its fully resolved
configuration.  Exit codes: 0 success, 2 usage or configuration error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor, resize_bilinear
from .baselines import pca_background, pca_fit, rpca_init, rpca_update, threshold_sweep
from .data import (
    FrameSample,
    SpriteSpec,
    SyntheticSceneSpec,
    image_to_uint8,
    load_sequence,
    mask_to_uint8,
    paste_objects,
    resize_image,
    split_dataset,
    synth_sequence,
    write_sequence,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NumericalError,
    ShapeError,
    ToolkitError,
)
from .evaluation import aggregate_mean, f_measure, format_report, report_to_csv
from .pipeline import (
    DESK_PIPELINE,
    FULL_PIPELINE,
    StepSpec,
    TrainingConfig,
    TwoStagePipeline,
    run_training_schedule,
)

DEFAULT_CONFIG = {
    "seed": 0,
    "profile": "desk",
    "lambda": 1.0,
    "init_std": 0.1,
    "momentum": 0.9,
    "strict_labels": True,
    "augment": "auto",
    "training": {
        "step1": {"batch_size": 4, "learning_rate": 2e-4, "iterations": 2000},
        "step2": {"batch_size": 2, "learning_rate": 2e-1, "iterations": 1000},
        "step3": {"batch_size": 1, "learning_rate": 2e-5, "iterations": 500},
    },
    "pca": {"rank": 3},
    "rpca": {"rank": 3, "sparse_threshold": 0.1},
    "scene": {
        "canvas": 64,
        "background": "static",
        "noise_sigma": 0.01,
        "frames": 60,
        "seed": 0,
        "sprites": [
            {"shape": "square", "size": 14, "velocity": [2, 3], "color": [0.9, 0.15, 0.1]},
        ],
    },
}

_PROFILES = {"desk": DESK_PIPELINE, "full": FULL_PIPELINE}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bgfg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data=False, out=False, checkpoint=False):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one configuration entry (dotted keys)")
        p.add_argument("--seed", type=int, help="shortcut for --set seed=...")
        p.add_argument("--profile", choices=sorted(_PROFILES), help="shortcut for --set profile=...")
        if data:
            p.add_argument("--data", required=True, help="sequence directory (input/ + groundtruth/)")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="pipeline checkpoint path")

    common(sub.add_parser("train", help="run the three-step schedule"), data=True, out=True)
    common(sub.add_parser("infer", help="restore backgrounds and segment frames"), data=True, out=True, checkpoint=True)
    p_eval = sub.add_parser("eval", help="score mask images against annotations")
    common(p_eval, data=True, out=True)
    p_eval.add_argument("--masks", required=True, help="directory of mask_%%06d.png files")
    p_eval.add_argument("--split", choices=("train", "test", "all"), default="all")
    p_sweep = sub.add_parser("sweep", help="F-measure over a threshold grid")
    common(p_sweep, data=True, out=True)
    p_sweep.add_argument("--method", choices=("pca", "rpca", "baseline1"), required=True)
    p_sweep.add_argument("--checkpoint", help="pipeline checkpoint (baseline1 only)")
    common(sub.add_parser("synth", help="generate a synthetic sequence"), out=True)
    common(sub.add_parser("reconstruct", help="stage-1 backgrounds for every frame"), data=True, out=True, checkpoint=True)
    common(sub.add_parser("pca", help="PCA backgrounds for the test split"), data=True, out=True)
    common(sub.add_parser("rpca", help="streaming low-rank/sparse decomposition"), data=True, out=True)
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _merge_into(base: dict, incoming: dict, path: str = ""):
    for key, value in incoming.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        current = base[key]
        if isinstance(current, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"configuration key {where!r} expects a table")
            _merge_into(current, value, where)
            continue
        base[key] = _coerce(where, current, value)


def _coerce(where: str, current, value):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"configuration key {where!r} expects true/false")
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"configuration key {where!r} expects an integer")
        return int(value)
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"configuration key {where!r} expects a number")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"configuration key {where!r} expects a string")
        return value
    if isinstance(current, list):
        if not isinstance(value, list):
            raise ConfigError(f"configuration key {where!r} expects a list")
        return value
    raise ConfigError(f"configuration key {where!r} has unsupported type")


def _apply_override(config: dict, assignment: str):
    if "=" not in assignment:
        raise ConfigError(f"--set needs KEY=VALUE, got {assignment!r}")
    dotted, _, raw = assignment.partition("=")
    keys = dotted.strip().split(".")
    node = config
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"unknown configuration key {dotted!r}")
        node = node[key]
    leaf = keys[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown configuration key {dotted!r}")
    if isinstance(node[leaf], dict):
        raise ConfigError(f"configuration key {dotted!r} is a table; set its leaves instead")
    node[leaf] = _coerce(dotted, node[leaf], _parse_value(raw))


def resolve_config(args) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise DataError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        _merge_into(config, loaded)
    for assignment in args.overrides:
        _apply_override(config, assignment)
    if args.seed is not None:
        config["seed"] = args.seed
    if getattr(args, "profile", None):
        config["profile"] = args.profile
    if config["profile"] not in _PROFILES:
        raise ConfigError(f"unknown profile {config['profile']!r}; choose from {sorted(_PROFILES)}")
    return config


def _training_config(config: dict) -> TrainingConfig:
    t = config["training"]
    scopes = ("stage1", "stage2", "both")
    steps = tuple(
        StepSpec(
            batch_size=t[f"step{i + 1}"]["batch_size"],
            learning_rate=t[f"step{i + 1}"]["learning_rate"],
            iterations=t[f"step{i + 1}"]["iterations"],
            trainable_scope=scopes[i],
        )
        for i in range(3)
    )
    return TrainingConfig(
        steps=steps,
        lambda_weight=config["lambda"],
        init_std=config["init_std"],
        momentum=config["momentum"],
        seed=config["seed"],
    )


def _scene_spec(config: dict) -> SyntheticSceneSpec:
    scene = config["scene"]
    sprites = []
    for entry in scene["sprites"]:
        if not isinstance(entry, dict):
            raise ConfigError("each scene.sprites entry must be a table")
        known = {"shape", "size", "velocity", "color", "start", "camouflage"}
        unknown = set(entry) - known
        if unknown:
            raise ConfigError(f"unknown sprite keys: {sorted(unknown)}")
        sprites.append(
            SpriteSpec(
                shape=entry.get("shape", "square"),
                size=int(entry.get("size", 8)),
                velocity=tuple(entry.get("velocity", (1, 1))),
                color=tuple(entry.get("color", (0.9, 0.2, 0.2))),
                start=tuple(entry["start"]) if entry.get("start") is not None else None,
                camouflage=entry.get("camouflage"),
            )
        )
    return SyntheticSceneSpec(
        canvas=scene["canvas"],
        background=scene["background"],
        sprites=tuple(sprites),
        noise_sigma=scene["noise_sigma"],
        frames=scene["frames"],
        seed=scene["seed"],
    )


def _log_config(config: dict, out_dir: Path | None):
    line = json.dumps(config, sort_keys=True)
    print(f"resolved configuration: {line}")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved_config.json").write_text(line + "\n")


def _save_png(path: Path, array: np.ndarray):
    if array.ndim == 3:
        Image.fromarray(array.transpose(1, 2, 0)).save(path)
    else:
        Image.fromarray(array).save(path)


def _train_split_frames(frames, config):
    split = split_dataset(len(frames))
    train = [frames[i - 1] for i in split.train_indices]
    augment = config["augment"]
    if augment not in ("auto", "never", "always"):
        raise ConfigError(f"augment must be auto, never, or always, got {augment!r}")
    has_foreground = any((f.labels.values == 1).any() for f in train)
    if augment == "always" or (augment == "auto" and not has_foreground):
        train = [
            paste_objects(f, seed=[config["seed"], 7, f.frame_index]) for f in train
        ]
    return train


def _cmd_train(args) -> int:
    config = resolve_config(args)
    out_dir = Path(args.out)
    _log_config(config, out_dir)
    frames = load_sequence(args.data, strict_labels=config["strict_labels"])
    train = _train_split_frames(frames, config)
    pipeline = TwoStagePipeline(_PROFILES[config["profile"]])
    history = run_training_schedule(pipeline, _training_config(config), train, out_dir=out_dir)
    total = history[-1]["iteration"] if history else 0
    print(
        f"trained {len(train)} frames over {total} iterations; "
        f"checkpoints and loss_history.csv in {out_dir}"
    )
    return 0


def _cmd_infer(args) -> int:
    config = resolve_config(args)
    out_dir = Path(args.out)
    _log_config(config, out_dir)
    pipeline = TwoStagePipeline.load(args.checkpoint)
    frames = load_sequence(args.data, strict_labels=config["strict_labels"])
    for f in frames:
        background, _, mask = pipeline.infer(f.image, output_size=f.image.shape[1:])
        _save_png(out_dir / f"background_{f.frame_index:06d}.png", image_to_uint8(background))
        _save_png(out_dir / f"mask_{f.frame_index:06d}.png", mask_to_uint8(mask))
    print(f"wrote {len(frames)} background/mask pairs to {out_dir}")
    return 0


def _load_mask(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"missing mask image: {path}")
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) > 127).astype(np.uint8)


def _select_split(frames, which: str):
    if which == "all":
        return frames
    split = split_dataset(len(frames))
    indices = split.train_indices if which == "train" else split.test_indices
    return [frames[i - 1] for i in indices]


def _cmd_eval(args) -> int:
    config = resolve_config(args)
    out_dir = Path(args.out)
    _log_config(config, out_dir)
    data_root = Path(args.data)
    masks_root = Path(args.masks)
    if (data_root / "input").is_dir():
        frames = _select_split(load_sequence(data_root, strict_labels=config["strict_labels"]), args.split)
        masks = [_load_mask(masks_root / f"mask_{f.frame_index:06d}.png") for f in frames]
        report = f_measure(masks, [f.labels for f in frames], grouping="sequence", name=data_root.name)
    else:
        categories = sorted(d for d in data_root.iterdir() if d.is_dir())
        if not categories:
            raise DataError(f"{data_root} holds neither a sequence nor categories")
        category_reports = []
        for category in categories:
            sequence_reports = []
            for seq_dir in sorted(d for d in category.iterdir() if (d / "input").is_dir()):
                frames = _select_split(
                    load_sequence(seq_dir, strict_labels=config["strict_labels"]), args.split
                )
                masks = [
                    _load_mask(masks_root / category.name / seq_dir.name / f"mask_{f.frame_index:06d}.png")
                    for f in frames
                ]
                sequence_reports.append(
                    f_measure(masks, [f.labels for f in frames], grouping="sequence", name=seq_dir.name)
                )
            if sequence_reports:
                category_reports.append(aggregate_mean(sequence_reports, "category", name=category.name))
        if not category_reports:
            raise DataError(f"no sequences found under {data_root}")
        report = aggregate_mean(category_reports, "overall", name="overall")
    (out_dir / "report.csv").write_text(report_to_csv(report))
    print(format_report(report))
    print(f"report.csv written to {out_dir}")
    return 0


def _cmd_sweep(args) -> int:
    config = resolve_config(args)
    out_dir = Path(args.out)
    _log_config(config, out_dir)
    frames = load_sequence(args.data, strict_labels=config["strict_labels"])
    reconstructor = None
    if args.method == "baseline1":
        if not args.checkpoint:
            raise ConfigError("sweep --method baseline1 needs --checkpoint")
        pipeline = TwoStagePipeline.load(args.checkpoint)
        s1 = pipeline.profile.encoder.input_size

        def reconstructor(image):
            x = pipeline._as_dtype(pipeline.normalize(resize_image(image, s1)))
            restored = pipeline.stage1.forward(Tensor(x[None] if x.ndim == 3 else x))
            background = pipeline.denormalize(restored.data.astype(np.float64))[0]
            return resize_bilinear(background[None], image.shape[1], image.shape[2])[0]

    result = threshold_sweep(
        args.method,
        frames,
        rank=config["pca"]["rank"] if args.method == "pca" else config["rpca"]["rank"],
        sparse_threshold=config["rpca"]["sparse_threshold"],
        reconstructor=reconstructor,
    )
    (out_dir / "sweep.csv").write_text(result.to_csv())
    print(f"best threshold {result.best_theta:.3f} with F {result.best_f:.4f}; sweep.csv in {out_dir}")
    return 0


def _cmd_synth(args) -> int:
    config = resolve_config(args)
    out_dir = Path(args.out)
    _log_config(config, out_dir)
    frames = synth_sequence(_scene_spec(config))
    write_sequence(frames, out_dir)
    print(f"wrote {len(frames)} synthetic frames to {out_dir}")
    return 0


def _cmd_reconstruct(args) -> int:
    config = resolve_config(args)
    out_dir = Path(args.out)
    _log_config(config, out_dir)
    pipeline = TwoStagePipeline.load(args.checkpoint)
    frames = load_sequence(args.data, strict_labels=config["strict_labels"])
    s1 = pipeline.profile.encoder.input_size
    for f in frames:
        x = pipeline._as_dtype(pipeline.normalize(resize_image(f.image, s1)))
        restored = pipeline.stage1.forward(Tensor(x[None] if x.ndim == 3 else x))
        background = pipeline.denormalize(restored.data.astype(np.float64))[0]
        background = resize_bilinear(background[None], f.image.shape[1], f.image.shape[2])[0]
        _save_png(out_dir / f"background_{f.frame_index:06d}.png", image_to_uint8(background))
    print(f"wrote {len(frames)} backgrounds to {out_dir}")
    return 0


def _cmd_pca(args) -> int:
    config = resolve_config(args)
    out_dir = Path(args.out)
    _log_config(config, out_dir)
    frames = load_sequence(args.data, strict_labels=config["strict_labels"])
    split = split_dataset(len(frames))
    train = [frames[i - 1].image for i in split.train_indices]
    model = pca_fit(train, min(config["pca"]["rank"], len(train)))
    for i in split.test_indices:
        f = frames[i - 1]
        background = np.clip(pca_background(model, f.image), 0.0, 1.0)
        _save_png(out_dir / f"background_{f.frame_index:06d}.png", image_to_uint8(background))
    print(f"wrote {len(split.test_indices)} PCA backgrounds to {out_dir}")
    return 0


def _cmd_rpca(args) -> int:
    config = resolve_config(args)
    out_dir = Path(args.out)
    _log_config(config, out_dir)
    frames = load_sequence(args.data, strict_labels=config["strict_labels"])
    state = rpca_init(frames[0].image.shape, config["rpca"]["rank"], config["rpca"]["sparse_threshold"])
    for f in frames:
        state, low_rank, sparse = rpca_update(state, f.image)
        _save_png(out_dir / f"low_rank_{f.frame_index:06d}.png", image_to_uint8(np.clip(low_rank, 0, 1)))
        _save_png(out_dir / f"sparse_{f.frame_index:06d}.png", image_to_uint8(np.abs(sparse).max(axis=0)))
    print(f"wrote {len(frames)} low-rank/sparse pairs to {out_dir}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "synth": _cmd_synth,
    "reconstruct": _cmd_reconstruct,
    "pca": _cmd_pca,
    "rpca": _cmd_rpca,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ShapeError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
