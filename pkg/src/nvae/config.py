"""Plain-text run configuration (INI sections of key=value) and run manifests.

A config file has three sections::

    [model]
    classes = 10                 ; required for synthetic/idx label checking
    class_latent_dim = 2
    shared_latent_dim = 8
    alpha_p = 1.0                ; symmetric prior concentration
    alpha_q = 10.0               ; concentration head scale
    encoder_hidden = 400,200
    decoder_hidden = 200,400
    bias_term = true

    [train]
    objective = beta             ; lobj | beta | baseline
    beta_c = 2.0                 ; class-block KL weight
    beta_s = 1.0                 ; baseline-mode KL weight
    learning_rate = 0.001
    adam_beta1 = 0.9
    adam_beta2 = 0.999
    batch_size = 128
    epochs = 30
    seed = 0
    samples_per_step = 1

    [data]
    kind = idx | synthetic
    ; idx: train_images/train_labels (+ optional test_images/test_labels)
    ; synthetic: classes, side, samples, test_samples, seed,
    ;            shared (factor list), class_factors (| separated lists)

Flags override config values. The manifest written at the end of each command
records the resolved configuration, input checksums, and outputs, which is
enough to reproduce the run.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass

from . import __version__
from .data import (
    Dataset,
    SyntheticSpec,
    load_idx,
    make_synthetic,
    parse_factor_list,
)
from .errors import ConfigError, DataError
from .model import LatentLayout, NvaeModel
from .training import TrainConfig

__all__ = [
    "RunConfig",
    "load_config",
    "build_model",
    "load_datasets",
    "RunManifest",
    "write_manifest",
    "file_sha256",
]

_MODEL_DEFAULTS = {
    "class_latent_dim": "2",
    "shared_latent_dim": "8",
    "alpha_p": "1.0",
    "alpha_q": "10.0",
    "encoder_hidden": "400,200",
    "decoder_hidden": "200,400",
    "bias_term": "true",
}

_TRAIN_DEFAULTS = {
    "objective": "beta",
    "beta_c": "2.0",
    "beta_s": "1.0",
    "learning_rate": "0.001",
    "adam_beta1": "0.9",
    "adam_beta2": "0.999",
    "batch_size": "128",
    "epochs": "30",
    "seed": "0",
    "samples_per_step": "1",
}


@dataclass
class RunConfig:
    """Parsed configuration plus the raw resolved key/value snapshot."""

    path: str
    model: dict
    train: TrainConfig
    data: dict
    snapshot: dict

    @property
    def seed(self) -> int:
        return self.train.seed


def _parse_hidden(text: str, where: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: expected comma-separated ints, got {text!r}") from exc
    if not dims:
        raise ConfigError(f"{where}: at least one hidden width required")
    return dims


def load_config(path, *, seed_override: int | None = None) -> RunConfig:
    """Parse and validate a config file; raises ConfigError with location info."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except configparser.Error as exc:
        # configparser messages carry [line N] context already
        raise ConfigError(f"bad config: {exc}") from exc

    model_raw = dict(_MODEL_DEFAULTS)
    if parser.has_section("model"):
        model_raw.update(dict(parser.items("model")))
    train_raw = dict(_TRAIN_DEFAULTS)
    if parser.has_section("train"):
        train_raw.update(dict(parser.items("train")))
    if not parser.has_section("data"):
        raise ConfigError(f"{path}: missing required [data] section")
    data_raw = dict(parser.items("data"))

    def want(raw: dict, key: str, conv, where: str):
        try:
            return conv(raw[key])
        except KeyError as exc:
            raise ConfigError(f"{path}: missing key {key!r} in [{where}]") from exc
        except ValueError as exc:
            raise ConfigError(
                f"{path}: bad value for {key!r} in [{where}]: {raw[key]!r}"
            ) from exc

    def boolean(text: str) -> bool:
        lowered = text.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(text)

    model_cfg = {
        "class_latent_dim": want(model_raw, "class_latent_dim", int, "model"),
        "shared_latent_dim": want(model_raw, "shared_latent_dim", int, "model"),
        "alpha_p": want(model_raw, "alpha_p", float, "model"),
        "alpha_q": want(model_raw, "alpha_q", float, "model"),
        "encoder_hidden": _parse_hidden(model_raw["encoder_hidden"], f"{path} [model] encoder_hidden"),
        "decoder_hidden": _parse_hidden(model_raw["decoder_hidden"], f"{path} [model] decoder_hidden"),
        "bias_term": want(model_raw, "bias_term", boolean, "model"),
    }
    if "classes" in model_raw:
        model_cfg["classes"] = want(model_raw, "classes", int, "model")

    seed = want(train_raw, "seed", int, "train")
    if seed_override is not None:
        seed = int(seed_override)
    try:
        train_cfg = TrainConfig(
            objective=train_raw["objective"].strip(),
            class_kl_weight=want(train_raw, "beta_c", float, "train"),
            shared_kl_weight=want(train_raw, "beta_s", float, "train"),
            learning_rate=want(train_raw, "learning_rate", float, "train"),
            adam_betas=(
                want(train_raw, "adam_beta1", float, "train"),
                want(train_raw, "adam_beta2", float, "train"),
            ),
            batch_size=want(train_raw, "batch_size", int, "train"),
            epochs=want(train_raw, "epochs", int, "train"),
            seed=seed,
            class_bias=model_cfg["bias_term"],
            samples_per_step=want(train_raw, "samples_per_step", int, "train"),
        )
    except Exception as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: invalid [train] section: {exc}") from exc

    kind = data_raw.get("kind", "").strip().lower()
    if kind not in ("idx", "synthetic"):
        raise ConfigError(
            f"{path}: [data] kind must be 'idx' or 'synthetic', got {kind!r}"
        )
    data_cfg = {"kind": kind, **data_raw}

    snapshot = {
        "model": {k: model_raw[k] for k in sorted(model_raw)},
        "train": {**{k: train_raw[k] for k in sorted(train_raw)}, "seed": str(seed)},
        "data": {k: data_raw[k] for k in sorted(data_raw)},
    }
    return RunConfig(path=path, model=model_cfg, train=train_cfg, data=data_cfg, snapshot=snapshot)


def load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset | None]:
    """Materialize (train, optional test) datasets from the [data] section."""
    data = cfg.data
    if data["kind"] == "idx":
        for key in ("train_images", "train_labels"):
            if key not in data:
                raise ConfigError(f"{cfg.path}: [data] missing {key!r}")
            if not os.path.exists(data[key]):
                raise DataError(f"dataset file not found: {data[key]}")
        n_classes = cfg.model.get("classes")
        train_ds = load_idx(data["train_images"], data["train_labels"], n_classes)
        test_ds = None
        if "test_images" in data or "test_labels" in data:
            for key in ("test_images", "test_labels"):
                if key not in data:
                    raise ConfigError(f"{cfg.path}: [data] missing {key!r}")
                if not os.path.exists(data[key]):
                    raise DataError(f"dataset file not found: {data[key]}")
            test_ds = load_idx(data["test_images"], data["test_labels"], train_ds.n_classes)
        return train_ds, test_ds

    def integer(key: str, default: int) -> int:
        try:
            return int(data.get(key, default))
        except ValueError as exc:
            raise ConfigError(f"{cfg.path}: bad [data] {key}: {data[key]!r}") from exc

    n_classes = integer("classes", cfg.model.get("classes", 2))
    spec = SyntheticSpec(
        n_classes=n_classes,
        image_side=integer("side", 16),
        n_samples=integer("samples", 1500),
        seed=integer("seed", 7),
        shared_factors=parse_factor_list(data.get("shared", "intensity:0.4:1.0")),
        class_factors=_parse_class_factors(data.get("class_factors", ""), n_classes, cfg.path),
    )
    train_ds = make_synthetic(spec)
    test_n = integer("test_samples", 0)
    test_ds = None
    if test_n:
        test_spec = SyntheticSpec(
            n_classes=spec.n_classes,
            image_side=spec.image_side,
            n_samples=test_n,
            seed=spec.seed + 1,
            shared_factors=spec.shared_factors,
            class_factors=spec.class_factors,
        )
        test_ds = make_synthetic(test_spec)
    return train_ds, test_ds


def _parse_class_factors(text: str, n_classes: int, path: str):
    text = text.strip()
    if not text:
        return tuple(() for _ in range(n_classes))
    groups = [g.strip() for g in text.split("|")]
    if len(groups) != n_classes:
        raise ConfigError(
            f"{path}: [data] class_factors has {len(groups)} groups for {n_classes} classes"
        )
    return tuple(parse_factor_list(g) for g in groups)


def build_model(cfg: RunConfig, input_dim: int, n_classes: int) -> NvaeModel:
    layout = LatentLayout(
        n_classes=n_classes,
        class_latent_dim=cfg.model["class_latent_dim"],
        shared_latent_dim=cfg.model["shared_latent_dim"],
    )
    return NvaeModel(
        input_dim,
        layout,
        prior_concentration=cfg.model["alpha_p"],
        concentration_scale=cfg.model["alpha_q"],
        class_bias=cfg.model["bias_term"],
        encoder_hidden=cfg.model["encoder_hidden"],
        decoder_hidden=cfg.model["decoder_hidden"],
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# run manifests
# ---------------------------------------------------------------------------


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    command: str
    seed: int
    config_snapshot: dict
    inputs: dict
    outputs: list
    wall_time: float
    library_version: str = __version__

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "library_version": self.library_version,
            "seed": self.seed,
            "config": self.config_snapshot,
            "input_checksums": self.inputs,
            "outputs": self.outputs,
            "wall_time_seconds": self.wall_time,
        }


def write_manifest(out_dir, manifest: RunManifest) -> str:
    """Atomically write ``<command>_manifest.json`` into the output directory."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(os.fspath(out_dir), f"{manifest.command}_manifest.json")
    blob = json.dumps(manifest.to_dict(), indent=2, sort_keys=True)
    fd, tmp = tempfile.mkstemp(dir=os.fspath(out_dir), suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(blob + "\n")
    os.replace(tmp, path)
    return path
