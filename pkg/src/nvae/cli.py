"""Command-line interface.

Subcommands::

    nvae train    --config cfg.ini [--seed N] [--out-dir DIR]
    nvae sample   --checkpoint ck [--class C] [--sigma S] [--count N]
    nvae traverse --checkpoint ck (--shared | --class-latents | --class C) [--steps N]
    nvae diagnose {kl|confusion|gap} --checkpoint ck --config cfg.ini
    nvae augment  --checkpoint ck --config cfg.ini [--p-sub P] [--sigma S] [--reps R]

The default output directory is ``$NVAE_OUT_DIR`` or ``./nvae_out``. Every
command writes a ``<command>_manifest.json`` describing its inputs (with
checksums), resolved configuration, and outputs; commands never modify their
input files.

Exit codes: 0 success, 2 bad configuration or missing input, 3 training
aborted on a non-finite objective, 4 checkpoint rejected, 1 anything else.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import __version__
from . import diagnostics as diag
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, RunManifest, build_model, file_sha256, load_config, load_datasets, write_manifest
from .errors import CheckpointError, ConfigError, DataError, NvaeError, TrainingAborted
from .training import train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NAN_ABORT = 3
EXIT_BAD_CHECKPOINT = 4


def _default_out_dir() -> str:
    return os.environ.get("NVAE_OUT_DIR", os.path.join(os.getcwd(), "nvae_out"))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvae", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"nvae {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.add_argument("--out-dir", default=None)
    p_train.add_argument("--resume", default=None, help="checkpoint to continue from")

    p_sample = sub.add_parser("sample", help="generate class-conditional samples")
    p_sample.add_argument("--checkpoint", required=True)
    p_sample.add_argument("--class", dest="class_index", type=int, default=0)
    p_sample.add_argument("--sigma", type=float, default=1.0)
    p_sample.add_argument("--count", type=int, default=64)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--out-dir", default=None)
    p_sample.add_argument("--image-side", type=int, default=None,
                          help="image side length; default assumes square images")

    p_trav = sub.add_parser("traverse", help="latent traversal grids")
    p_trav.add_argument("--checkpoint", required=True)
    mode = p_trav.add_mutually_exclusive_group(required=True)
    mode.add_argument("--shared", action="store_true", help="one row per shared dim")
    mode.add_argument("--class-latents", action="store_true",
                      help="one row per (class, dim) pair")
    mode.add_argument("--class", dest="class_index", type=int, default=None,
                      help="rows for one class's dims")
    p_trav.add_argument("--steps", type=int, default=10)
    p_trav.add_argument("--label", type=int, default=0,
                        help="conditioning label for shared traversals")
    p_trav.add_argument("--out-dir", default=None)
    p_trav.add_argument("--image-side", type=int, default=None)

    p_diag = sub.add_parser("diagnose", help="KL profile, confusion, surrogate gap")
    p_diag.add_argument("what", choices=("kl", "confusion", "gap"))
    p_diag.add_argument("--checkpoint", required=True)
    p_diag.add_argument("--config", required=True, help="config providing the dataset")
    p_diag.add_argument("--out-dir", default=None)

    p_aug = sub.add_parser("augment", help="augmentation-by-substitution experiment")
    p_aug.add_argument("--checkpoint", required=True)
    p_aug.add_argument("--config", required=True, help="config providing the datasets")
    p_aug.add_argument("--p-sub", type=float, default=0.4)
    p_aug.add_argument("--sigma", type=float, nargs="+", default=[1.0])
    p_aug.add_argument("--reps", type=int, default=3)
    p_aug.add_argument("--seed", type=int, default=0)
    p_aug.add_argument("--out-dir", default=None)
    return parser


def _load_checkpoint_or_die(path):
    if not os.path.exists(path):
        raise DataError(f"checkpoint file not found: {path}")
    return load_checkpoint(path)


def _square_shape(input_dim: int, side: int | None, source: str) -> tuple[int, int]:
    if side is not None:
        if side * side != input_dim and input_dim % side != 0:
            raise ConfigError(f"--image-side {side} does not divide {source} width {input_dim}")
        return (input_dim // side, side)
    side = int(round(np.sqrt(input_dim)))
    if side * side != input_dim:
        raise ConfigError(
            f"{source} width {input_dim} is not square; pass --image-side"
        )
    return (side, side)


def _cmd_train(args) -> int:
    started = time.time()
    cfg = load_config(args.config, seed_override=args.seed)
    out_dir = args.out_dir or _default_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    train_ds, test_ds = load_datasets(cfg)

    inputs = {args.config: file_sha256(args.config)}
    for key in ("train_images", "train_labels", "test_images", "test_labels"):
        path = cfg.data.get(key)
        if path and os.path.exists(path):
            inputs[path] = file_sha256(path)

    if args.resume:
        ck = _load_checkpoint_or_die(args.resume)
        model = ck.model
        optimizer_state = ck.optimizer_state
        start_epoch = ck.epoch
        inputs[args.resume] = file_sha256(args.resume)
    else:
        model = build_model(cfg, train_ds.input_dim, train_ds.n_classes)
        optimizer_state = None
        start_epoch = 0

    report = train(
        model,
        train_ds,
        cfg.train,
        test_dataset=test_ds,
        checkpoint_dir=out_dir,
        optimizer_state=optimizer_state,
        start_epoch=start_epoch,
        log=lambda line: print(line, flush=True),
    )
    report_path = os.path.join(out_dir, "train_report.csv")
    report.to_csv(report_path)
    outputs = sorted(
        os.path.join(out_dir, name)
        for name in os.listdir(out_dir)
        if name.endswith(".ckpt") or name == "train_report.csv"
    )
    write_manifest(
        out_dir,
        RunManifest(
            command="train",
            seed=cfg.seed,
            config_snapshot=cfg.snapshot,
            inputs=inputs,
            outputs=outputs,
            wall_time=time.time() - started,
        ),
    )
    print(f"final checkpoint: {os.path.join(out_dir, 'final.ckpt')}")
    return EXIT_OK


def _cmd_sample(args) -> int:
    started = time.time()
    ck = _load_checkpoint_or_die(args.checkpoint)
    model = ck.model
    if not 0 <= args.class_index < model.layout.n_classes:
        raise ConfigError(
            f"--class {args.class_index} out of range [0, {model.layout.n_classes})"
        )
    out_dir = args.out_dir or _default_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    shape = _square_shape(model.input_dim, args.image_side, "checkpoint input")
    rng = np.random.default_rng(args.seed)
    from .model import generate_batch

    ys = np.full(args.count, args.class_index, dtype=np.int64)
    images = generate_batch(model, ys, args.sigma, rng)
    n_cols = int(np.ceil(np.sqrt(args.count)))
    grid = diag.images_to_grid(images, shape, n_cols)
    out_path = os.path.join(
        out_dir, f"samples_class{args.class_index}_sigma{args.sigma:g}.pgm"
    )
    diag.write_pgm(out_path, grid)
    write_manifest(
        out_dir,
        RunManifest(
            command="sample",
            seed=args.seed,
            config_snapshot={
                "class": args.class_index,
                "sigma": args.sigma,
                "count": args.count,
            },
            inputs={args.checkpoint: file_sha256(args.checkpoint)},
            outputs=[out_path],
            wall_time=time.time() - started,
        ),
    )
    print(f"wrote {out_path}")
    return EXIT_OK


def _cmd_traverse(args) -> int:
    started = time.time()
    ck = _load_checkpoint_or_die(args.checkpoint)
    model = ck.model
    layout = model.layout
    shape = _square_shape(model.input_dim, args.image_side, "checkpoint input")
    if args.shared:
        targets = [("shared", j) for j in range(layout.shared_latent_dim)]
        label = args.label
        name = "traverse_shared.pgm"
    elif args.class_latents:
        targets = [
            ("class", c, j)
            for c in range(layout.n_classes)
            for j in range(layout.class_latent_dim)
        ]
        label = None
        name = "traverse_class_latents.pgm"
    else:
        c = args.class_index
        if not 0 <= c < layout.n_classes:
            raise ConfigError(f"--class {c} out of range [0, {layout.n_classes})")
        targets = [("class", c, j) for j in range(layout.class_latent_dim)]
        label = c
        name = f"traverse_class{c}.pgm"
    if not targets:
        raise ConfigError("nothing to traverse: the requested latent block is empty")
    rows = []
    for target in targets:
        y = label if label is not None else target[1]
        rows.append(diag.traversal_grid(model, [target], args.steps, shape, label=y))
    grid = np.concatenate(rows, axis=0)
    out_dir = args.out_dir or _default_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, name)
    diag.write_pgm(out_path, grid)
    write_manifest(
        out_dir,
        RunManifest(
            command="traverse",
            seed=0,
            config_snapshot={"steps": args.steps, "targets": [list(t) for t in targets]},
            inputs={args.checkpoint: file_sha256(args.checkpoint)},
            outputs=[out_path],
            wall_time=time.time() - started,
        ),
    )
    print(f"wrote {out_path}")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    started = time.time()
    ck = _load_checkpoint_or_die(args.checkpoint)
    cfg = load_config(args.config)
    train_ds, test_ds = load_datasets(cfg)
    dataset = test_ds if test_ds is not None else train_ds
    out_dir = args.out_dir or _default_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    if args.what == "kl":
        out_path = os.path.join(out_dir, "kl_profile.csv")
        diag.write_kl_profile_csv(out_path, diag.kl_profile(ck.model, dataset))
    elif args.what == "confusion":
        out_path = os.path.join(out_dir, "kl_confusion.csv")
        diag.write_confusion_csv(out_path, diag.class_kl_confusion(ck.model, dataset))
    else:
        out_path = os.path.join(out_dir, "surrogate_gap.csv")
        diag.write_gap_csv(out_path, diag.surrogate_gap(ck.model, dataset))
    write_manifest(
        out_dir,
        RunManifest(
            command=f"diagnose_{args.what}",
            seed=cfg.seed,
            config_snapshot=cfg.snapshot,
            inputs={
                args.checkpoint: file_sha256(args.checkpoint),
                args.config: file_sha256(args.config),
            },
            outputs=[out_path],
            wall_time=time.time() - started,
        ),
    )
    print(f"wrote {out_path}")
    return EXIT_OK


def _cmd_augment(args) -> int:
    started = time.time()
    ck = _load_checkpoint_or_die(args.checkpoint)
    cfg = load_config(args.config)
    train_ds, test_ds = load_datasets(cfg)
    if test_ds is None:
        raise ConfigError(f"{args.config}: augment needs a test dataset in [data]")
    results = [
        diag.augmentation_experiment(
            ck.model, train_ds, test_ds, args.p_sub, sigma, args.reps, seed=args.seed
        )
        for sigma in args.sigma
    ]
    out_dir = args.out_dir or _default_out_dir()
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "augmentation.csv")
    diag.write_augmentation_csv(out_path, results)
    write_manifest(
        out_dir,
        RunManifest(
            command="augment",
            seed=args.seed,
            config_snapshot={
                **cfg.snapshot,
                "p_sub": args.p_sub,
                "sigma": args.sigma,
                "reps": args.reps,
            },
            inputs={
                args.checkpoint: file_sha256(args.checkpoint),
                args.config: file_sha256(args.config),
            },
            outputs=[out_path],
            wall_time=time.time() - started,
        ),
    )
    for res in results:
        print(
            f"p_sub={res.substitution_prob:g} sigma={res.sigma:g}: "
            f"error {res.mean_error:.4f} +- {res.std_error:.4f}"
        )
    print(f"wrote {out_path}")
    return EXIT_OK


_HANDLERS = {
    "train": _cmd_train,
    "sample": _cmd_sample,
    "traverse": _cmd_traverse,
    "diagnose": _cmd_diagnose,
    "augment": _cmd_augment,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except TrainingAborted as exc:
        print(
            f"error: {exc}"
            + (f" (last good checkpoint: {exc.checkpoint_path})" if exc.checkpoint_path else ""),
            file=sys.stderr,
        )
        return EXIT_NAN_ABORT
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CHECKPOINT
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NvaeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
