"""Command-line entry point: ``ctxmotion <command> [options]``.

Exit codes: 0 success, 1 validation error, 2 missing resource, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import ContractError, NumericError
from .checkpoint import CheckpointError, VersionError, load, save
from .context import heuristic_adjacency
from .data import (
    OBSERVED,
    RateError,
    SceneSequence,
    SchemaError,
    SplitError,
    content_hash,
    read_scene,
    split_dataset,
    write_scene,
)
from .evaluation import (
    HUMAN_ROWS,
    OBJECT_ROWS,
    HorizonTable,
    curves_csv,
    horizon_errors,
    interaction_records,
    interaction_statistics,
    write_interactions_csv,
)
from .model import (
    VARIANTS,
    ConfigError,
    ModelConfig,
    WindowBatch,
    zero_velocity_batch,
)
from .synthetic import KINDS, ScenarioSpec, SpecError, generate, write_ground_truth
from .training import DataError, make_windows, predict_batch, train

logger = logging.getLogger("ctxmotion")

EXIT_OK, EXIT_INVALID, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3
VARIANT_ALIASES = {"li": "crnn-li", "omp": "crnn-omp", "omp-li": "crnn-omp-li"}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _scene_paths(specs: list[str]) -> list[Path]:
    paths: list[Path] = []
    for s in specs:
        p = Path(s)
        if p.is_dir():
            found = sorted(p.glob("*.jsonl"))
            if not found:
                raise CliError(f"no scene files (*.jsonl) in {p}", EXIT_MISSING)
            paths += found
        elif p.exists():
            paths.append(p)
        else:
            raise CliError(f"scene path not found: {p}", EXIT_MISSING)
    return paths


def _load_scenes(specs: list[str]) -> tuple[list[SceneSequence], list[Path]]:
    paths = _scene_paths(specs)
    scenes = []
    for p in paths:
        try:
            scenes.append(read_scene(p))
        except (SchemaError, RateError) as exc:
            raise CliError(f"{p}: {exc}") from None
    return scenes, paths


def _load_checkpoint(path: str):
    p = Path(path)
    if not p.exists():
        raise CliError(f"checkpoint not found: {p}", EXIT_MISSING)
    try:
        return load(p)
    except (VersionError, CheckpointError) as exc:
        raise CliError(f"{p}: {exc}") from None


def _check_vocab(config: ModelConfig, scenes: list[SceneSequence], ckpt: str) -> None:
    for s in scenes:
        if len(s.vocabulary) != config.vocab_size:
            raise CliError(f"{ckpt}: model vocabulary size {config.vocab_size} does not match "
                           f"scene {s.name!r} ({len(s.vocabulary)})")


def _variant_config(args) -> ModelConfig:
    variant = VARIANT_ALIASES.get(args.variant, args.variant)
    if variant == "zv":
        raise CliError("the zero-velocity baseline has nothing to train")
    flags = dict(VARIANTS[variant])
    if args.omp:
        flags["omp"] = True
    if args.li:
        flags["li"] = True
    if args.no_context:
        flags["context"] = False
    try:
        return ModelConfig(**flags, human_hidden=args.human_hidden, context_hidden=args.context_hidden,
                           interaction_hidden=args.interaction_hidden, scale_inputs=args.scale_inputs)
    except ConfigError as exc:
        raise CliError(f"invalid variant flags: {exc}") from None


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, config: ModelConfig | None, paths: list[Path]) -> dict:
    return {
        "command": args.command,
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "config": config.to_dict() if config else None,
        "inputs": {str(p): content_hash(p) for p in paths},
        "argv": {k: v for k, v in vars(args).items() if k != "func"},
    }


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    config = _variant_config(args)
    scenes, paths = _load_scenes(args.scenes)
    if args.train_all:
        split = {"train": scenes, "val": [], "test": []}
    else:
        try:
            split = split_dataset(scenes, args.seed)
        except SplitError as exc:
            raise CliError(f"{exc} (use --train-all to skip the split)") from None
    vocab = scenes[0].vocabulary
    config = ModelConfig(**{**config.to_dict(), "vocab_size": len(vocab)})
    out = _out_dir(args)
    try:
        result = train(split["train"], config, args.seed, args.max_steps, split["val"] or None,
                       patience=args.patience, batch_size=args.batch_size,
                       augment_data=not args.no_augment)
    except DataError as exc:
        raise CliError(str(exc)) from None
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt"
    save(ckpt, config, result.params, {"variant": config.variant, "seed": args.seed})
    (out / "train_loss.csv").write_text(result.report.loss_csv())
    (out / "validation.csv").write_text(result.report.validation_csv())
    manifest = _manifest(args, config, paths)
    manifest["split"] = {k: [s.name for s in v] for k, v in split.items()}
    manifest["report"] = {"steps": len(result.report.losses), "best_step": result.report.best_step,
                          "clipped_steps": result.report.clipped_steps,
                          "stopped_early": result.report.stopped_early,
                          "wall_clock_s": round(result.report.wall_clock, 3)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    print(f"wrote {ckpt} after {len(result.report.losses)} steps")
    return EXIT_OK


def cmd_eval(args) -> int:
    scenes, paths = _load_scenes(args.scenes)
    models = []
    for c in args.checkpoint or []:
        config, params, _ = _load_checkpoint(c)
        _check_vocab(config, scenes, c)
        models.append((config, params))
    ref = models[0][0] if models else ModelConfig(context=False)
    windows = make_windows(scenes, ref)
    if not windows:
        raise CliError("test scenes are shorter than one window")
    human = HorizonTable("Human motion prediction", HUMAN_ROWS)
    obj = HorizonTable("Object motion prediction", OBJECT_ROWS)
    zv = horizon_errors(windows, lambda b: zero_velocity_batch(b, ref.observed, ref.predicted),
                        ref.observed, ref.predicted)
    human.set_row("zv", zv["human"])
    if "object" in zv:
        obj.set_row("zv", zv["object"])
    for config, params in models:
        errs = horizon_errors(windows, lambda b, c=config, p=params: predict_batch(b, c, p),
                              config.observed, config.predicted)
        human.set_row(config.variant, errs["human"])
        if "object" in errs and config.variant in OBJECT_ROWS:
            obj.set_row(config.variant, errs["object"])
    out = _out_dir(args)
    from .plotting import plot_horizon_table

    texts = []
    for name, table in (("human", human), ("object", obj)):
        shown = table if args.fine_horizons else table.coarse()
        (out / f"{name}_errors.csv").write_text(shown.to_csv())
        texts.append(shown.to_text())
        plot_horizon_table(table, out / f"{name}_errors.png")
    report = "\n".join(texts)
    (out / "tables.txt").write_text(report)
    (out / "manifest.json").write_text(json.dumps(_manifest(args, ref if models else None, paths),
                                                  indent=2, sort_keys=True, default=str))
    print(report, end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    config, params, _ = _load_checkpoint(args.checkpoint)
    scenes, paths = _load_scenes(args.scenes)
    _check_vocab(config, scenes, args.checkpoint)
    out = _out_dir(args)
    for scene, path in zip(scenes, paths):
        if scene.n_frames < config.observed:
            raise CliError(f"{path}: needs at least {config.observed} frames, has {scene.n_frames}")
        window = scene.subsequence(scene.n_frames - config.observed, scene.n_frames)
        batch = WindowBatch.from_windows([window])
        try:
            pred = predict_batch(batch, config, params)
        except NumericError as exc:
            raise CliError(str(exc), EXIT_NUMERIC) from None
        bundle = pred.bundles()[0]
        full = _append_prediction(scene, bundle, config)
        write_scene(full, out / f"{path.stem}.pred.jsonl",
                    {"predicted_frames": config.predicted, "variant": config.variant})
        with (out / f"{path.stem}.interactions.csv").open("w", newline="") as fh:
            write_interactions_csv(interaction_records(bundle.interactions, bundle.entity_ids,
                                                       bundle.entity_types), fh)
    print(f"wrote predictions for {len(scenes)} scene(s) to {out}")
    return EXIT_OK


def _append_prediction(scene: SceneSequence, bundle, config: ModelConfig) -> SceneSequence:
    n_pred = bundle.poses.shape[0]
    hm = scene.human_mask
    last_boxes = scene.boxes[-1]
    boxes = np.repeat(last_boxes[None], n_pred, axis=0)
    joints = np.zeros((n_pred, scene.n_entities, scene.joints.shape[2]))
    joints[:, hm] = bundle.poses.reshape(n_pred, int(hm.sum()), -1)
    if bundle.boxes is not None:
        boxes = bundle.boxes.copy()
    p = joints[:, hm].reshape(n_pred, int(hm.sum()), -1, 3)
    boxes[:, hm] = np.concatenate([p.min(axis=2), p.max(axis=2)], axis=-1)
    # boxes from the object head are kept as emitted; the schema wants min <= max
    lo = np.minimum(boxes[..., :3], boxes[..., 3:])
    hi = np.maximum(boxes[..., :3], boxes[..., 3:])
    boxes = np.concatenate([lo, hi], axis=-1)
    meta = (scene.meta or [{} for _ in range(scene.n_frames)]) + [
        {"predicted": True, "box_source": "predicted" if bundle.boxes is not None else "held"}
        for _ in range(n_pred)]
    return SceneSequence(list(scene.entity_ids), list(scene.entity_types),
                         np.concatenate([scene.boxes, boxes]), np.concatenate([scene.joints, joints]),
                         scene.vocabulary, scene.step_ms, scene.joint_names, scene.name, meta)


def cmd_gen_synthetic(args) -> int:
    out = _out_dir(args)
    for k in range(args.count):
        spec = ScenarioSpec(args.kind, args.duration, args.noise, args.seed + k, args.distractors)
        try:
            seq, gt = generate(spec)
        except SpecError as exc:
            raise CliError(str(exc)) from None
        stem = f"{args.kind}_{args.seed + k:04d}"
        write_scene(seq, out / f"{stem}.jsonl")
        write_ground_truth(gt, out / f"{stem}.interactions.csv")
    print(f"wrote {args.count} {args.kind} scene(s) to {out}")
    return EXIT_OK


def cmd_inspect_interactions(args) -> int:
    scenes, paths = _load_scenes(args.scenes)
    if args.checkpoint:
        config, params, _ = _load_checkpoint(args.checkpoint)
        _check_vocab(config, scenes, args.checkpoint)
        if not config.context:
            raise CliError("checkpoint has no context branch, so no interactions to inspect")
    else:
        config, params = None, None
    obs = config.observed if config else OBSERVED
    windows = []
    for s in scenes:
        if s.n_frames < obs:
            raise CliError(f"scene {s.name!r} has fewer than {obs} frames")
        windows += [s.subsequence(a, a + obs) for a in range(0, s.n_frames - obs + 1, args.stride)]
    records = []
    for w_idx, w in enumerate(windows):
        batch = WindowBatch.from_windows([w])
        if params is None:
            inter = np.stack([heuristic_adjacency(batch.centers(k)) for k in range(obs)])
        else:
            inter = predict_batch(batch, config, params).bundles()[0].interactions
        records += interaction_records(inter, w.entity_ids, w.entity_types, w_idx)
    out = _out_dir(args)
    with (out / "interactions.csv").open("w", newline="") as fh:
        write_interactions_csv(records, fh)
    curves = interaction_statistics(records, args.grouping)
    (out / "interaction_curves.csv").write_text(curves_csv(curves))
    self_curves = interaction_statistics(records, "self")
    (out / "self_interaction_curves.csv").write_text(curves_csv(self_curves))
    from .plotting import plot_interaction_curves

    plot_interaction_curves(curves, out / "interaction_curves.png")
    plot_interaction_curves(self_curves, out / "self_interaction_curves.png",
                            title="Average self-interactions")
    print(f"wrote {len(records)} interaction records from {len(windows)} window(s) to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxmotion", description="Context-aware human and object motion prediction.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint_required=False, out_default="out", checkpoint=True):
        sp.add_argument("--scenes", nargs="+", required=True, help="scene files or directories")
        if checkpoint:
            sp.add_argument("--checkpoint", required=checkpoint_required)
        sp.add_argument("--out", default=out_default)
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("train", help="train a model variant")
    common(sp, out_default="run")
    sp.add_argument("--variant", choices=list(VARIANTS) + list(VARIANT_ALIASES), default="crnn-li")
    sp.add_argument("--omp", action="store_true", help="add object motion prediction")
    sp.add_argument("--li", action="store_true", help="add learned interactions")
    sp.add_argument("--no-context", action="store_true", help="drop the context branch")
    sp.add_argument("--max-steps", type=int, default=100_000)
    sp.add_argument("--patience", type=int, default=10)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--human-hidden", type=int, default=1024)
    sp.add_argument("--context-hidden", type=int, default=256)
    sp.add_argument("--interaction-hidden", type=int, default=128)
    sp.add_argument("--scale-inputs", action="store_true", help="feed metres to the network")
    sp.add_argument("--no-augment", action="store_true")
    sp.add_argument("--train-all", action="store_true", help="train on every scene, no split")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="horizon error tables on test scenes")
    common(sp, out_default="eval", checkpoint=False)
    sp.add_argument("--checkpoint", nargs="*", default=None, help="one or more trained models")
    sp.add_argument("--fine-horizons", action="store_true", help="all 20 horizons instead of 4")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="forecast the frames after each scene")
    common(sp, checkpoint_required=True, out_default="pred")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("gen-synthetic", help="write synthetic scenes and ground-truth interactions")
    sp.add_argument("--kind", choices=KINDS, default="pick_place")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--duration", type=int, default=60)
    sp.add_argument("--noise", type=float, default=5.0)
    sp.add_argument("--distractors", type=int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="scenes")
    sp.set_defaults(func=cmd_gen_synthetic)

    sp = sub.add_parser("inspect-interactions", help="dump adjacency series and averaged curves")
    common(sp, out_default="interactions")
    sp.add_argument("--stride", type=int, default=1)
    sp.add_argument("--grouping", choices=["type", "entity"], default="type")
    sp.set_defaults(func=cmd_inspect_interactions)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SchemaError, RateError, ConfigError, SpecError, VersionError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
