"""Self-describing binary checkpoints.

Layout:

    b"NVAE-CKPT-v1\\n"          versioned header string
    uint64 little-endian        length of the JSON metadata block
    JSON (UTF-8)                layout, hyperparameters, seed, epoch,
                                optimizer step, and a tensor index of
                                (name, kind, shape, offset)
    raw float64 little-endian   tensor payloads, back to back

Checkpoints written mid-training also carry the optimizer's moment tensors
so that resuming reproduces an uninterrupted run bit for bit. Files are
written atomically (temp file + rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import CheckpointError
from .model import LatentLayout, NvaeModel

__all__ = ["FORMAT_HEADER", "Checkpoint", "save_checkpoint", "load_checkpoint"]

FORMAT_HEADER = b"NVAE-CKPT-v1\n"


@dataclass
class Checkpoint:
    model: NvaeModel
    optimizer_state: dict | None
    seed: int
    epoch: int
    meta: dict


def _tensor_entries(model: NvaeModel, optimizer_state: dict | None):
    """Yield (name, kind, array) in a fixed order."""
    for name, node in model.parameters().items():
        yield name, "param", node.value.array
    if optimizer_state is not None:
        for name, arr in optimizer_state["m"].items():
            yield name, "adam_m", arr
        for name, arr in optimizer_state["v"].items():
            yield name, "adam_v", arr


def save_checkpoint(
    path,
    model: NvaeModel,
    *,
    optimizer_state: dict | None = None,
    seed: int = 0,
    epoch: int = 0,
) -> None:
    entries = list(_tensor_entries(model, optimizer_state))
    index = []
    offset = 0
    for name, kind, arr in entries:
        index.append(
            {"name": name, "kind": kind, "shape": list(arr.shape), "offset": offset}
        )
        offset += arr.size * 8
    meta = {
        "library_version": __version__,
        "hyperparameters": model.hyperparameters(),
        "seed": int(seed),
        "epoch": int(epoch),
        "optimizer_step": int(optimizer_state["step"]) if optimizer_state else None,
        "tensors": index,
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(FORMAT_HEADER)
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
            for _, _, arr in entries:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        header = fh.read(len(FORMAT_HEADER))
        if header != FORMAT_HEADER:
            raise CheckpointError(
                f"{path}: not a recognized checkpoint "
                f"(expected header {FORMAT_HEADER!r}, got {header!r})"
            )
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise CheckpointError(f"{path}: truncated metadata length")
        (meta_len,) = np.frombuffer(raw_len, dtype="<u8")
        blob = fh.read(int(meta_len))
        if len(blob) != int(meta_len):
            raise CheckpointError(f"{path}: truncated metadata block")
        try:
            meta = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt metadata ({exc})") from exc
        payload = fh.read()

    hp = meta["hyperparameters"]
    layout = LatentLayout(
        n_classes=hp["n_classes"],
        class_latent_dim=hp["class_latent_dim"],
        shared_latent_dim=hp["shared_latent_dim"],
    )
    model = NvaeModel(
        hp["input_dim"],
        layout,
        prior_concentration=hp["prior_concentration"],
        concentration_scale=hp["concentration_scale"],
        class_bias=hp["class_bias"],
        encoder_hidden=tuple(hp["encoder_hidden"]),
        decoder_hidden=tuple(hp["decoder_hidden"]),
        seed=hp["seed"],
    )
    params = model.parameters()
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        chunk = payload[start : start + size * 8]
        if len(chunk) != size * 8:
            raise CheckpointError(f"{path}: truncated tensor payload for {entry['name']}")
        arr = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        kind = entry["kind"]
        if kind == "param":
            node = params.get(entry["name"])
            if node is None:
                raise CheckpointError(f"{path}: unknown parameter {entry['name']!r}")
            if node.value.shape != shape:
                raise CheckpointError(
                    f"{path}: parameter {entry['name']!r} has shape {shape}, "
                    f"model expects {node.value.shape}"
                )
            node.value.array[...] = arr
        elif kind == "adam_m":
            adam_m[entry["name"]] = arr
        elif kind == "adam_v":
            adam_v[entry["name"]] = arr
        else:
            raise CheckpointError(f"{path}: unknown tensor kind {kind!r}")

    optimizer_state = None
    if meta.get("optimizer_step") is not None:
        optimizer_state = {"step": int(meta["optimizer_step"]), "m": adam_m, "v": adam_v}
    return Checkpoint(
        model=model,
        optimizer_state=optimizer_state,
        seed=int(meta["seed"]),
        epoch=int(meta["epoch"]),
        meta=meta,
    )
