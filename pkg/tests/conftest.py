"""Shared fixtures: seeded reference training runs reused across test modules.

The heavyweight runs (detector experiments, the digits reference run) are
session-scoped; determinism tests re-execute them through the returned
``rerun`` callables and compare artifacts byte for byte.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np
import pytest

from nvae import data as D
from nvae import diagnostics as G
from nvae import model as M
from nvae import training as T
from nvae.checkpoint import save_checkpoint
from nvae.cli import main as cli_main


@dataclass
class TrainedRun:
    model: M.NvaeModel
    dataset: D.Dataset
    config: T.TrainConfig
    report: T.TrainReport
    checkpoint_path: str
    rerun: callable


def _train_run(tmp_dir: str, spec: D.SyntheticSpec, layout: M.LatentLayout,
               class_bias: bool, name: str) -> TrainedRun:
    dataset = D.make_synthetic(spec)
    config = T.TrainConfig(
        objective="beta",
        class_kl_weight=2.0,
        epochs=150,
        batch_size=128,
        seed=0,
        class_bias=class_bias,
    )

    def build_and_train(path):
        model = M.NvaeModel(
            dataset.input_dim,
            layout,
            class_bias=class_bias,
            encoder_hidden=(128, 64),
            decoder_hidden=(64, 128),
            seed=config.seed,
        )
        report = T.train(model, dataset, config)
        save_checkpoint(path, model, seed=config.seed, epoch=config.epochs)
        return model, report

    first_path = os.path.join(tmp_dir, f"{name}.ckpt")
    model, report = build_and_train(first_path)

    def rerun():
        path = os.path.join(tmp_dir, f"{name}_rerun.ckpt")
        build_and_train(path)
        return path

    return TrainedRun(model, dataset, config, report, first_path, rerun)


@pytest.fixture(scope="session")
def shared_only_run(tmp_path_factory) -> TrainedRun:
    """Detector regime (a): every continuous factor is shared across classes."""
    tmp = tmp_path_factory.mktemp("shared_only")
    return _train_run(
        str(tmp),
        D.shared_only_spec(n_classes=2, side=16, n_samples=1500, seed=7),
        M.LatentLayout(2, 1, 6),
        class_bias=True,
        name="shared_only",
    )


@pytest.fixture(scope="session")
def class_exclusive_run(tmp_path_factory) -> TrainedRun:
    """Detector regime (b): one class-exclusive bar each, intensity shared.

    The shared block is sized to the shared factor count; spare shared
    capacity would absorb the exclusive factors at half the KL price.
    """
    tmp = tmp_path_factory.mktemp("class_exclusive")
    return _train_run(
        str(tmp),
        D.class_exclusive_spec(n_classes=2, side=16, n_samples=1500, seed=7),
        M.LatentLayout(2, 1, 1),
        class_bias=True,
        name="class_exclusive",
    )


@pytest.fixture(scope="session")
def class_exclusive_nobias_run(tmp_path_factory) -> TrainedRun:
    """Regime (b) with the one-hot decoder bias removed (ablation)."""
    tmp = tmp_path_factory.mktemp("class_exclusive_nobias")
    return _train_run(
        str(tmp),
        D.class_exclusive_spec(n_classes=2, side=16, n_samples=1500, seed=7),
        M.LatentLayout(2, 1, 1),
        class_bias=False,
        name="class_exclusive_nobias",
    )


# ---------------------------------------------------------------------------
# digits reference run (MNIST-format stand-in shipped with scikit-learn)
# ---------------------------------------------------------------------------


def _digits_datasets():
    from sklearn.datasets import load_digits

    digits = load_digits()
    X = np.round(digits.images.reshape(len(digits.images), -1) / 16.0 * 255.0) / 255.0
    y = digits.target.astype(np.int64)
    train = D.Dataset(X[:1437], y[:1437], 10, (8, 8))
    test = D.Dataset(X[1437:], y[1437:], 10, (8, 8))
    return train, test


@pytest.fixture(scope="session")
def digits_datasets():
    return _digits_datasets()


@pytest.fixture(scope="session")
def digits_workspace(tmp_path_factory, digits_datasets):
    """IDX files + config for the desk-scale reference run, trained via the CLI."""
    tmp = tmp_path_factory.mktemp("digits")
    train, test = digits_datasets
    paths = {
        "train_images": str(tmp / "train-images.idx"),
        "train_labels": str(tmp / "train-labels.idx"),
        "test_images": str(tmp / "test-images.idx"),
        "test_labels": str(tmp / "test-labels.idx"),
    }
    D.save_idx(train, paths["train_images"], paths["train_labels"])
    D.save_idx(test, paths["test_images"], paths["test_labels"])
    config_path = str(tmp / "digits.ini")
    with open(config_path, "w") as fh:
        fh.write(
            "[model]\n"
            "classes = 10\n"
            "class_latent_dim = 2\n"
            "shared_latent_dim = 8\n"
            "encoder_hidden = 400,200\n"
            "decoder_hidden = 200,400\n"
            "\n"
            "[train]\n"
            "objective = beta\n"
            "beta_c = 2.0\n"
            "seed = 0\n"
            "\n"
            "[data]\n"
            "kind = idx\n"
            f"train_images = {paths['train_images']}\n"
            f"train_labels = {paths['train_labels']}\n"
            f"test_images = {paths['test_images']}\n"
            f"test_labels = {paths['test_labels']}\n"
        )

    def run_training(out_name: str) -> str:
        out_dir = str(tmp / out_name)
        code = cli_main(["train", "--config", config_path, "--out-dir", out_dir])
        assert code == 0, f"training exited with {code}"
        return out_dir

    out_dir = run_training("out")
    return {
        "dir": str(tmp),
        "config": config_path,
        "out_dir": out_dir,
        "checkpoint": os.path.join(out_dir, "final.ckpt"),
        "report_csv": os.path.join(out_dir, "train_report.csv"),
        "paths": paths,
        "run_training": run_training,
    }


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion
# ---------------------------------------------------------------------------

_CRITERION_RE = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_criterion_outcomes: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    match = _CRITERION_RE.search(report.nodeid)
    if not match:
        return
    num = int(match.group(1))
    name = match.group(2).replace("_", " ")
    if report.when == "call":
        _criterion_outcomes[num] = ("PASS" if report.passed else "FAIL", name)
    elif report.when == "setup" and report.failed:
        _criterion_outcomes[num] = ("FAIL (setup)", name)
    elif report.when == "setup" and report.skipped:
        _criterion_outcomes[num] = ("SKIP", name)


def pytest_terminal_summary(terminalreporter):
    if not _criterion_outcomes:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(_criterion_outcomes):
        outcome, name = _criterion_outcomes[num]
        terminalreporter.write_line(f"criterion {num:2d} ({name}): {outcome}")
