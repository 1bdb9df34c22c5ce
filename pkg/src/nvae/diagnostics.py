"""Analysis procedures over a trained model: KL detectors, traversal grids,
the surrogate-gap measurement, and the augmentation-by-substitution harness.

Every diagnostic is a pure read of (model, dataset): nothing here mutates
parameters, and all randomness comes from explicitly derived seeds, so each
output is a deterministic function of its inputs.

File outputs are deliberately plain: CSV with fixed headers (floats printed
with repr-level precision) and binary PGM (P5) image grids where each pixel
byte is ``round(255 * mean)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import distributions as dist
from . import model as M
from .data import Dataset
from .errors import DataError, DomainError
from .training import adam_init, adam_step

__all__ = [
    "KlProfile",
    "GapStats",
    "AugmentationResult",
    "ProbeConfig",
    "kl_profile",
    "class_kl_confusion",
    "traversal_grid",
    "surrogate_gap",
    "augmentation_experiment",
    "write_pgm",
    "read_pgm",
    "images_to_grid",
    "write_kl_profile_csv",
    "write_confusion_csv",
    "write_gap_csv",
    "write_augmentation_csv",
]

_SUBSTITUTE_TAG = 0x5AB5
_GENERATE_TAG = 0x6E4E
_PROBE_TAG = 0x9B0E


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# per-dimension KL detector
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KlProfile:
    """Dataset-mean per-dimension KL, partitioned by latent role.

    ``shared`` has one entry per shared dimension; ``class_blocks`` is
    (n_classes, class_latent_dim); ``true_class`` averages each example's
    correct-class block only; ``off_class_mean`` averages all other blocks.
    """

    shared: np.ndarray
    class_blocks: np.ndarray
    true_class: np.ndarray
    off_class_mean: float = 0.0

    @property
    def class_block_mean(self) -> float:
        return float(self.class_blocks.mean()) if self.class_blocks.size else 0.0

    def __post_init__(self):
        object.__setattr__(self, "shared", np.asarray(self.shared, dtype=np.float64))
        object.__setattr__(
            self, "class_blocks", np.asarray(self.class_blocks, dtype=np.float64)
        )
        object.__setattr__(
            self, "true_class", np.asarray(self.true_class, dtype=np.float64)
        )


def _per_dim_kl(model: M.NvaeModel, images: np.ndarray) -> np.ndarray:
    enc = M.encode(model, images)
    per_dim, _ = dist.gauss_kl_std(enc.z_posterior)
    return per_dim.value.array


def kl_profile(model: M.NvaeModel, dataset: Dataset, chunk: int = 512) -> KlProfile:
    """Mean per-dimension posterior-to-prior KL over the dataset.

    High entries mark informative latent dimensions; class blocks that stay
    near zero are detectors for the absence of class-dependent factors.
    """
    layout = model.layout
    if dataset.n_classes != layout.n_classes:
        raise DomainError(
            f"dataset has {dataset.n_classes} classes, model expects {layout.n_classes}"
        )
    L, d_c = layout.n_classes, layout.class_latent_dim
    split = layout.class_block_dim
    total = np.zeros(layout.z_dim)
    true_total = np.zeros(d_c) if d_c else np.zeros(0)
    off_sum = 0.0
    for start in range(0, len(dataset), chunk):
        xs = dataset.images[start : start + chunk]
        ys = dataset.labels[start : start + chunk]
        kl = _per_dim_kl(model, xs)  # (n, z_dim)
        total += kl.sum(axis=0)
        if d_c:
            blocks = kl[:, :split].reshape(len(xs), L, d_c)
            true_total += blocks[np.arange(len(xs)), ys].sum(axis=0)
            off_sum += blocks.sum() - blocks[np.arange(len(xs)), ys].sum()
    n = len(dataset)
    mean = total / n
    shared = mean[split:]
    class_blocks = mean[:split].reshape(L, d_c) if d_c else np.zeros((L, 0))
    true_class = true_total / n
    off_mean = off_sum / (n * max((L - 1) * d_c, 1))
    return KlProfile(shared, class_blocks, true_class, off_mean)


def class_kl_confusion(model: M.NvaeModel, dataset: Dataset, chunk: int = 512) -> np.ndarray:
    """(true class, block) matrix of mean per-dim class-block KL.

    Entry (t, i) averages, over examples labelled t, the mean per-dimension
    KL of class block i. Diagonal dominance means the encoder routes
    class-dependent information into the matching block only.
    """
    layout = model.layout
    L, d_c = layout.n_classes, layout.class_latent_dim
    if d_c == 0:
        return np.zeros((L, L))
    sums = np.zeros((L, L))
    counts = np.zeros(L)
    split = layout.class_block_dim
    for start in range(0, len(dataset), chunk):
        xs = dataset.images[start : start + chunk]
        ys = dataset.labels[start : start + chunk]
        kl = _per_dim_kl(model, xs)[:, :split].reshape(len(xs), L, d_c)
        block_means = kl.mean(axis=2)  # (n, L)
        for t in range(L):
            pick = ys == t
            if pick.any():
                sums[t] += block_means[pick].sum(axis=0)
                counts[t] += int(pick.sum())
    counts[counts == 0] = 1
    return sums / counts[:, None]


# ---------------------------------------------------------------------------
# traversal grids and image output
# ---------------------------------------------------------------------------


def images_to_grid(images: np.ndarray, image_shape: tuple[int, int], n_cols: int) -> np.ndarray:
    """Tile flat images row-major into one 2-d array; short rows padded black."""
    n = len(images)
    rows, cols = image_shape
    n_cols = max(1, int(n_cols))
    n_rows = (n + n_cols - 1) // n_cols
    grid = np.zeros((n_rows * rows, n_cols * cols))
    for i, img in enumerate(images):
        r, c = divmod(i, n_cols)
        grid[r * rows : (r + 1) * rows, c * cols : (c + 1) * cols] = img.reshape(rows, cols)
    return grid


def write_pgm(path, image: np.ndarray) -> None:
    """Write a [0, 1] grayscale array as binary PGM, bytes = round(255 * v)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"PGM image must be 2-d, got shape {arr.shape}")
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM written by ``write_pgm``; returns uint8 (h, w)."""
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise DataError(f"{path}: not a binary PGM (magic {magic!r})")
        dims = fh.readline().split()
        maxval = fh.readline().strip()
        if len(dims) != 2 or maxval != b"255":
            raise DataError(f"{path}: unsupported PGM header")
        w, h = int(dims[0]), int(dims[1])
        payload = fh.read(w * h)
        if len(payload) != w * h:
            raise DataError(f"{path}: truncated PGM payload")
        return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def traversal_grid(
    model: M.NvaeModel,
    targets,
    steps: int,
    image_shape: tuple[int, int],
    *,
    seed_input=None,
    label: int | None = None,
) -> np.ndarray:
    """Stack one traversal row per target into a single [0, 1] image grid.

    ``targets`` is a sequence of ``("shared", dim)`` / ``("class", cls, dim)``
    tuples; columns sweep the (-3, 3) grid. Deterministic given (model,
    targets, steps, seed).
    """
    rows = []
    for target in targets:
        images = M.traverse(model, target, steps, x_seed=seed_input, y=label)
        rows.append(images)
    flat = np.concatenate(rows, axis=0)
    return images_to_grid(flat, image_shape, n_cols=steps)


# ---------------------------------------------------------------------------
# surrogate gap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapStats:
    """Summary of dirichlet KL minus classification NLL over a dataset."""

    minimum: float
    mean: float
    maximum: float
    count: int


def surrogate_gap(model: M.NvaeModel, dataset: Dataset, chunk: int = 1024) -> GapStats:
    """Per-example exact Dirichlet KL minus categorical NLL, summarized.

    The classification term used for training is the NLL; the exact bound
    uses the KL. Their difference is the (input-dependent) constant the
    surrogate drops; its observed maximum is the empirical bound constant.
    """
    gaps = []
    for start in range(0, len(dataset), chunk):
        xs = dataset.images[start : start + chunk]
        ys = dataset.labels[start : start + chunk]
        enc = M.encode(model, xs)
        post = dist.dirichlet_posterior(
            model.prior_concentration, model.layout.n_classes, ys
        )
        kl = dist.dirichlet_kl(enc.pi_posterior, post).value.array
        probs = dist.class_prob_from_dirichlet(enc.pi_posterior)
        nll = dist.categorical_nll(ad.log(probs), ys).value.array
        gaps.append(kl - nll)
    g = np.concatenate(gaps)
    return GapStats(float(g.min()), float(g.mean()), float(g.max()), len(g))


# ---------------------------------------------------------------------------
# augmentation by substitution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeConfig:
    """The fixed small classifier used to score generated data."""

    hidden: int = 128
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3


@dataclass(frozen=True)
class AugmentationResult:
    substitution_prob: float
    sigma: float
    seeds: tuple[int, ...]
    test_errors: tuple[float, ...]
    mean_error: float
    std_error: float
    probe: ProbeConfig


class _ProbeClassifier:
    """MLP d -> hidden -> classes with relu and log-softmax output."""

    def __init__(self, input_dim: int, n_classes: int, hidden: int, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, _PROBE_TAG]))
        self.params = ad.ParamStore()
        self.params.add("w0", rng.normal(0, 1 / np.sqrt(input_dim), (input_dim, hidden)))
        self.params.add("b0", np.zeros(hidden))
        self.params.add("w1", rng.normal(0, 1 / np.sqrt(hidden), (hidden, n_classes)))
        self.params.add("b1", np.zeros(n_classes))

    def log_probs(self, x: np.ndarray) -> ad.Node:
        h = ad.relu(ad.constant(x) @ self.params["w0"] + self.params["b0"])
        return ad.log_softmax(h @ self.params["w1"] + self.params["b1"])

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.log_probs(x).value.array, axis=1)


def _train_probe(
    images: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    probe: ProbeConfig,
    seed: int,
) -> _ProbeClassifier:
    clf = _ProbeClassifier(images.shape[1], n_classes, probe.hidden, seed)
    state = adam_init(clf.params)
    with ad.nan_checks(False):
        for epoch in range(probe.epochs):
            rng = np.random.default_rng(np.random.SeedSequence([seed, _PROBE_TAG, epoch]))
            order = rng.permutation(len(images))
            for start in range(0, len(order), probe.batch_size):
                idx = order[start : start + probe.batch_size]
                lp = clf.log_probs(images[idx])
                loss = ad.tmean(dist.categorical_nll(lp, labels[idx]))
                ad.backward(loss)
                grads = {name: node.grad for name, node in clf.params.items()}
                adam_step(clf.params, grads, state, probe.learning_rate)
    return clf


def _substituted_training_set(
    model: M.NvaeModel,
    dataset: Dataset,
    p_sub: float,
    sigma: float,
    seed: int,
) -> np.ndarray:
    """Replace each image, independently with probability p_sub, by a
    generated sample of the same label."""
    sub_rng = np.random.default_rng(np.random.SeedSequence([seed, _SUBSTITUTE_TAG]))
    replace_mask = sub_rng.random(len(dataset)) < p_sub
    images = dataset.images.copy()
    if replace_mask.any():
        gen_rng = np.random.default_rng(np.random.SeedSequence([seed, _GENERATE_TAG]))
        ys = dataset.labels[replace_mask]
        images[replace_mask] = M.generate_batch(model, ys, sigma, gen_rng)
    return images


def augmentation_experiment(
    model: M.NvaeModel,
    train_dataset: Dataset,
    test_dataset: Dataset,
    p_sub: float,
    sigma: float,
    repetitions: int = 3,
    *,
    probe: ProbeConfig = ProbeConfig(),
    seed: int = 0,
) -> AugmentationResult:
    """Train the probe on a partially substituted set; report real-test error.

    Each repetition uses a fresh derived seed for both the substitution mask
    and the probe, and substitutes each original example with probability
    ``p_sub`` by a sample generated at scale ``sigma`` for the same label.
    With ``p_sub=0`` no generation happens at all, so the run is the
    plain-data baseline bit for bit, whatever ``sigma`` is.
    """
    if not 0.0 <= p_sub <= 1.0:
        raise DomainError(f"substitution probability must lie in [0, 1], got {p_sub}")
    if repetitions < 1:
        raise DomainError("repetitions must be >= 1")
    errors = []
    seeds = []
    for rep in range(repetitions):
        rep_seed = int(
            np.random.SeedSequence([seed, rep]).generate_state(1, np.uint32)[0]
        )
        seeds.append(rep_seed)
        images = _substituted_training_set(model, train_dataset, p_sub, sigma, rep_seed)
        clf = _train_probe(
            images, train_dataset.labels, train_dataset.n_classes, probe, rep_seed
        )
        pred = clf.predict(test_dataset.images)
        errors.append(float(np.mean(pred != test_dataset.labels)))
    arr = np.asarray(errors)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return AugmentationResult(
        substitution_prob=float(p_sub),
        sigma=float(sigma),
        seeds=tuple(seeds),
        test_errors=tuple(errors),
        mean_error=float(arr.mean()),
        std_error=std,
        probe=probe,
    )


# ---------------------------------------------------------------------------
# CSV writers (fixed headers, documented in the README)
# ---------------------------------------------------------------------------


def write_kl_profile_csv(path, profile: KlProfile) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "class", "dim", "mean_kl"])
        for j, v in enumerate(profile.shared):
            writer.writerow(["shared", "", j, _fmt(v)])
        L, d_c = profile.class_blocks.shape
        for c in range(L):
            for j in range(d_c):
                writer.writerow(["class", c, j, _fmt(profile.class_blocks[c, j])])
        for j, v in enumerate(profile.true_class):
            writer.writerow(["true_class", "", j, _fmt(v)])


def write_confusion_csv(path, confusion: np.ndarray) -> None:
    L = confusion.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true_class"] + [f"block_{i}" for i in range(L)])
        for t in range(L):
            writer.writerow([t] + [_fmt(v) for v in confusion[t]])


def write_gap_csv(path, stats: GapStats) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["min", "mean", "max", "count"])
        writer.writerow([_fmt(stats.minimum), _fmt(stats.mean), _fmt(stats.maximum), stats.count])


def write_augmentation_csv(path, results: list[AugmentationResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["p_sub", "sigma", "repetition", "seed", "test_error"])
        for res in results:
            for rep, (s, err) in enumerate(zip(res.seeds, res.test_errors)):
                writer.writerow([_fmt(res.substitution_prob), _fmt(res.sigma), rep, s, _fmt(err)])
        writer.writerow([])
        writer.writerow(["p_sub", "sigma", "mean_error", "std_error", "repetitions"])
        for res in results:
            writer.writerow(
                [
                    _fmt(res.substitution_prob),
                    _fmt(res.sigma),
                    _fmt(res.mean_error),
                    _fmt(res.std_error),
                    len(res.test_errors),
                ]
            )
