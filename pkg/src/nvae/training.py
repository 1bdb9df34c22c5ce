"""Minibatch stochastic-gradient training with seeded reproducibility.

Determinism contract: the trained parameters, the per-epoch report, and every
emitted checkpoint are bit-identical functions of (seed, config, dataset).
Per-epoch randomness (shuffle order, reparameterization noise) is derived
from ``SeedSequence([seed, tag, epoch])``, never from mutable generator
state, so resuming from an epoch checkpoint continues exactly where an
uninterrupted run would be.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as M
from .checkpoint import save_checkpoint
from .data import BatchStream, Dataset
from .errors import DomainError, ShapeError, TrainingAborted

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainReport",
    "adam_init",
    "adam_step",
    "train",
    "label_accuracy",
    "REPORT_COLUMNS",
]

_NOISE_TAG = 0x401E

OBJECTIVES = ("lobj", "beta", "baseline")

REPORT_COLUMNS = (
    "epoch",
    "objective",
    "reconstruction",
    "kl_shared",
    "kl_class",
    "class_nll",
    "train_accuracy",
    "test_accuracy",
)


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "beta"
    class_kl_weight: float = 2.0
    shared_kl_weight: float = 1.0
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0
    class_bias: bool = True
    samples_per_step: int = 1

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise DomainError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.class_kl_weight < 0:
            raise DomainError("class_kl_weight must be >= 0")
        if self.learning_rate <= 0:
            raise DomainError("learning_rate must be positive")
        if self.epochs < 1:
            raise DomainError("epochs must be >= 1")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.samples_per_step < 1:
            raise DomainError("samples_per_step must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    objective: float
    reconstruction: float
    kl_shared: float
    kl_class: float
    class_nll: float | None
    train_accuracy: float | None
    test_accuracy: float | None
    wall_time: float


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)

    def final(self) -> EpochRecord:
        return self.records[-1]

    def to_csv(self, path) -> None:
        """One row per epoch, fixed column order; wall time is deliberately
        left out so reports are bit-identical across reruns."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            for r in self.records:
                writer.writerow(
                    [
                        r.epoch,
                        _fmt(r.objective),
                        _fmt(r.reconstruction),
                        _fmt(r.kl_shared),
                        _fmt(r.kl_class),
                        _fmt(r.class_nll),
                        _fmt(r.train_accuracy),
                        _fmt(r.test_accuracy),
                    ]
                )


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def adam_init(params) -> dict:
    """Fresh first/second-moment state for a name -> node mapping."""
    items = params.items() if hasattr(params, "items") else params
    state = {"step": 0, "m": {}, "v": {}}
    for name, node in items:
        state["m"][name] = np.zeros(node.value.shape)
        state["v"][name] = np.zeros(node.value.shape)
    return state


def adam_step(params, grads, state, lr: float, decays=(0.9, 0.999), eps: float = 1e-8) -> dict:
    """One bias-corrected adaptive-moment update, in place on the params.

    ``grads`` maps names to arrays of the parameter shapes. Deterministic;
    returns the mutated state.
    """
    b1, b2 = decays
    state["step"] += 1
    t = state["step"]
    items = params.items() if hasattr(params, "items") else params
    for name, node in items:
        g = grads[name]
        if g.shape != node.value.shape:
            raise ShapeError(
                f"adam_step: grad shape {g.shape} != param {name!r} shape {node.value.shape}"
            )
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        node.value.array[...] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def label_accuracy(model: M.NvaeModel, dataset: Dataset, chunk: int = 1024) -> float:
    """Fraction of examples whose inferred label matches the dataset label."""
    hits = 0
    for start in range(0, len(dataset), chunk):
        xs = dataset.images[start : start + chunk]
        pred = M.infer_label(model, xs)
        hits += int(np.sum(pred == dataset.labels[start : start + chunk]))
    return hits / len(dataset)


def _objective(model, config: TrainConfig, x, y, noise):
    if config.objective == "beta":
        return M.objective_beta(model, x, y, noise, config.class_kl_weight)
    if config.objective == "lobj":
        return M.objective_lobj(model, x, y, noise)
    return M.objective_baseline(model, x, y, noise, config.shared_kl_weight)


def train(
    model: M.NvaeModel,
    dataset: Dataset,
    config: TrainConfig,
    *,
    test_dataset: Dataset | None = None,
    checkpoint_dir=None,
    optimizer_state: dict | None = None,
    start_epoch: int = 0,
    log=None,
) -> TrainReport:
    """Maximize the configured objective by minimizing its negation.

    Emits ``epoch_XXX.ckpt`` plus ``final.ckpt`` under ``checkpoint_dir`` when
    given. Pass ``optimizer_state``/``start_epoch`` from a loaded checkpoint
    to resume; the continuation is bit-identical to an uninterrupted run.
    A non-finite objective aborts with the last good parameters saved.
    """
    if model.input_dim != dataset.input_dim:
        raise ShapeError(
            f"model expects {model.input_dim} features, dataset has {dataset.input_dim}"
        )
    if model.class_bias != config.class_bias:
        raise DomainError(
            "config.class_bias disagrees with the model's class_bias flag"
        )
    params = model.parameters()
    state = optimizer_state if optimizer_state is not None else adam_init(params)
    stream = BatchStream(dataset, config.batch_size, config.seed)
    report = TrainReport()

    def _ckpt(name: str, epoch: int):
        if checkpoint_dir is None:
            return None
        path = os.path.join(os.fspath(checkpoint_dir), name)
        save_checkpoint(
            path, model, optimizer_state=state, seed=config.seed, epoch=epoch
        )
        return path

    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        noise_rng = np.random.default_rng(
            np.random.SeedSequence([config.seed, _NOISE_TAG, epoch])
        )
        sums = {"objective": 0.0, "reconstruction": 0.0, "kl_shared": 0.0,
                "kl_class": 0.0, "class_nll": 0.0}
        seen = 0
        with ad.nan_checks(False):
            for step, (xb, yb) in enumerate(stream.epoch(epoch)):
                noise = M.draw_noise(model, len(xb), noise_rng, config.samples_per_step)
                obj, terms = _objective(model, config, xb, yb, noise)
                if not np.isfinite(terms["objective"]):
                    path = _ckpt("abort_last_good.ckpt", epoch)
                    raise TrainingAborted(
                        f"non-finite objective at epoch {epoch} step {step}",
                        epoch=epoch,
                        step=step,
                        checkpoint_path=path,
                    )
                loss = -1.0 * obj
                ad.backward(loss)
                grads = {name: node.grad for name, node in params.items()}
                adam_step(params, grads, state, config.learning_rate, config.adam_betas)
                n = len(xb)
                seen += n
                for key in sums:
                    sums[key] += terms[key] * n
        means = {key: sums[key] / seen for key in sums}
        record = EpochRecord(
            epoch=epoch,
            objective=means["objective"],
            reconstruction=means["reconstruction"],
            kl_shared=means["kl_shared"],
            kl_class=means["kl_class"],
            class_nll=None if config.objective == "baseline" else means["class_nll"],
            train_accuracy=label_accuracy(model, dataset),
            test_accuracy=(
                label_accuracy(model, test_dataset) if test_dataset is not None else None
            ),
            wall_time=time.perf_counter() - t0,
        )
        report.records.append(record)
        _ckpt(f"epoch_{epoch:03d}.ckpt", epoch + 1)
        if log is not None:
            log(
                f"epoch {epoch:3d}  objective {record.objective:12.4f}  "
                f"recon {record.reconstruction:12.4f}  "
                f"kl_s {record.kl_shared:8.4f}  kl_c {record.kl_class:8.4f}  "
                f"train_acc {record.train_accuracy:.4f}"
                + (
                    f"  test_acc {record.test_accuracy:.4f}"
                    if record.test_accuracy is not None
                    else ""
                )
            )
    _ckpt("final.ckpt", config.epochs)
    return report
