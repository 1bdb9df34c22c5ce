"""Datasets: IDX file ingestion, a synthetic shape renderer, and batching.

The synthetic renderer exists to study the class-dependence detector at desk
scale. Each class has a fixed glyph; continuous *shared* factors (global
intensity, integer position shifts) apply to every class, while *exclusive*
factors (a bar with a continuously varying position) are rendered only for
their designated class. Pixel values are quantized to the 8-bit grid so a
dataset round-trips bit-exactly through IDX files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError

_RENDER_TAG = 0x5EED

__all__ = [
    "Dataset",
    "FactorSpec",
    "SyntheticSpec",
    "IMAGE_MAGIC",
    "LABEL_MAGIC",
    "load_idx",
    "save_idx",
    "make_synthetic",
    "split_and_batch",
    "BatchStream",
    "parse_factor",
    "parse_factor_list",
    "shared_only_spec",
    "class_exclusive_spec",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

_FACTOR_KINDS = ("intensity", "shift", "hbar", "vbar")


@dataclass(frozen=True)
class Dataset:
    """Images as rows in [0, 1], integer labels, and class/image geometry."""

    images: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int64
    n_classes: int
    image_shape: tuple[int, int]

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        if images.ndim != 2:
            raise DataError(f"images must be 2-d (n, d), got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise DataError(
                f"label count {labels.shape} does not match image count {images.shape[0]}"
            )
        rows, cols = self.image_shape
        if rows * cols != images.shape[1]:
            raise DataError(
                f"image shape {self.image_shape} does not match width {images.shape[1]}"
            )
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise DataError("pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DataError(
                f"labels must lie in [0, {self.n_classes}), got range "
                f"[{labels.min()}, {labels.max()}]"
            )

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def input_dim(self) -> int:
        return self.images.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices)
        return Dataset(
            self.images[idx], self.labels[idx], self.n_classes, self.image_shape
        )


# ---------------------------------------------------------------------------
# IDX files (big-endian, unsigned-byte payload)
# ---------------------------------------------------------------------------


def _read_exact(fh, n: int, path, what: str) -> bytes:
    chunk = fh.read(n)
    if len(chunk) != n:
        raise DataError(f"{path}: truncated {what} (wanted {n} bytes, got {len(chunk)})")
    return chunk


def load_idx(images_path, labels_path, n_classes: int | None = None) -> Dataset:
    """Load an image/label IDX pair; pixels are scaled to [0, 1] by /255."""
    with open(images_path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, images_path, "magic"))
        if magic != IMAGE_MAGIC:
            raise DataError(
                f"{images_path}: bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"
            )
        n, rows, cols = struct.unpack(">III", _read_exact(fh, 12, images_path, "header"))
        payload = _read_exact(fh, n * rows * cols, images_path, "pixel payload")
        images = np.frombuffer(payload, dtype=np.uint8).reshape(n, rows * cols)
    with open(labels_path, "rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, labels_path, "magic"))
        if magic != LABEL_MAGIC:
            raise DataError(
                f"{labels_path}: bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"
            )
        (n_labels,) = struct.unpack(">I", _read_exact(fh, 4, labels_path, "header"))
        labels = np.frombuffer(
            _read_exact(fh, n_labels, labels_path, "label payload"), dtype=np.uint8
        )
    if n_labels != n:
        raise DataError(
            f"image/label count mismatch: {images_path} has {n}, "
            f"{labels_path} has {n_labels}"
        )
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if n_labels else 1
    return Dataset(images / 255.0, labels.astype(np.int64), n_classes, (rows, cols))


def save_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write the dataset as an IDX pair; pixels are quantized to bytes."""
    rows, cols = dataset.image_shape
    pixels = np.round(dataset.images * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, len(dataset), rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, len(dataset)))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# synthetic shapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FactorSpec:
    """One generative factor: a kind tag plus its numeric parameters.

    kinds: ``intensity(lo, hi)``, ``shift(max_px)``, ``hbar(row_lo, row_hi)``,
    ``vbar(col_lo, col_hi)``.
    """

    kind: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in _FACTOR_KINDS:
            raise DataError(f"unknown factor kind {self.kind!r}, know {_FACTOR_KINDS}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a rendered dataset: glyph classes plus factor lists."""

    n_classes: int
    image_side: int = 16
    n_samples: int = 1500
    seed: int = 7
    shared_factors: tuple[FactorSpec, ...] = ()
    class_factors: tuple[tuple[FactorSpec, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "shared_factors", tuple(self.shared_factors))
        object.__setattr__(
            self, "class_factors", tuple(tuple(fs) for fs in self.class_factors)
        )
        if self.n_classes < 1 or self.n_classes > 4:
            raise DataError("synthetic renderer supports 1 to 4 classes")
        if self.image_side < 12:
            raise DataError("image_side must be >= 12")
        if self.n_samples < 1:
            raise DataError("n_samples must be >= 1")
        if self.class_factors and len(self.class_factors) != self.n_classes:
            raise DataError(
                f"class_factors has {len(self.class_factors)} entries for "
                f"{self.n_classes} classes"
            )
        if not self.shared_factors and not any(self.class_factors):
            raise DataError("at least one factor is required")


def parse_factor(text: str) -> FactorSpec:
    """Parse ``kind:p1:p2`` shorthand, e.g. ``intensity:0.5:1.0``."""
    parts = [p.strip() for p in text.split(":") if p.strip()]
    if not parts:
        raise DataError(f"empty factor spec {text!r}")
    return FactorSpec(parts[0], tuple(float(p) for p in parts[1:]))


def parse_factor_list(text: str) -> tuple[FactorSpec, ...]:
    """Parse a comma-separated factor list; empty/`none` gives no factors."""
    text = text.strip()
    if not text or text.lower() == "none":
        return ()
    return tuple(parse_factor(item) for item in text.split(",") if item.strip())


def _draw_glyph(canvas: np.ndarray, cls: int) -> None:
    s = canvas.shape[0]
    m = max(2, s // 8)
    if cls == 0:  # "seven": top bar plus a diagonal stem
        canvas[m : m + 2, m : s - m] = 1.0
        r0, r1 = m + 2, s - m
        c_hi, c_lo = s - m - 2, m
        for i, r in enumerate(range(r0, r1)):
            c = int(round(c_hi - (c_hi - c_lo) * i / max(r1 - r0 - 1, 1)))
            canvas[r, c : c + 2] = 1.0
    elif cls == 1:  # ring
        c0 = (s - 1) / 2.0
        radius = s / 2.0 - m
        yy, xx = np.mgrid[0:s, 0:s]
        dist = np.sqrt((yy - c0) ** 2 + (xx - c0) ** 2)
        canvas[np.abs(dist - radius) < 1.1] = 1.0
    elif cls == 2:  # tee: top bar plus central column
        canvas[m : m + 2, m : s - m] = 1.0
        mid = s // 2
        canvas[m : s - m, mid - 1 : mid + 1] = 1.0
    else:  # cross: both diagonals
        for i in range(m, s - m):
            canvas[i, i : i + 2] = 1.0
            canvas[i, s - 2 - i : s - i] = 1.0


def _apply_bar(canvas: np.ndarray, factor: FactorSpec, u: float) -> None:
    """Draw a 2-pixel-thick bar at a continuous position with antialiasing."""
    s = canvas.shape[0]
    m = max(2, s // 8)
    lo, hi = factor.params if len(factor.params) == 2 else (float(m), float(s - m - 2))
    pos = float(np.clip(lo + (hi - lo) * u, 0.0, s - 2.0))
    # coverage of pixel cell [k, k+1) by the band [pos, pos+2)
    k0 = int(np.floor(pos))
    for k in range(k0, min(k0 + 3, s)):
        cover = min(k + 1.0, pos + 2.0) - max(float(k), pos)
        if cover <= 0:
            continue
        if factor.kind == "hbar":
            canvas[k, m : s - m] = np.maximum(canvas[k, m : s - m], cover)
        else:
            canvas[m : s - m, k] = np.maximum(canvas[m : s - m, k], cover)


def _shift_int(canvas: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(canvas)
    s = canvas.shape[0]
    src_r = slice(max(0, -dy), min(s, s - dy))
    dst_r = slice(max(0, dy), min(s, s + dy))
    src_c = slice(max(0, -dx), min(s, s - dx))
    dst_c = slice(max(0, dx), min(s, s + dx))
    out[dst_r, dst_c] = canvas[src_r, src_c]
    return out


def _apply_shift(canvas: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Translate by a continuous offset via bilinear blending of integer shifts."""
    ix, iy = int(np.floor(dx)), int(np.floor(dy))
    fx, fy = dx - ix, dy - iy
    out = (1 - fy) * (1 - fx) * _shift_int(canvas, ix, iy)
    if fx:
        out += (1 - fy) * fx * _shift_int(canvas, ix + 1, iy)
    if fy:
        out += fy * (1 - fx) * _shift_int(canvas, ix, iy + 1)
    if fx and fy:
        out += fy * fx * _shift_int(canvas, ix + 1, iy + 1)
    return out


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    """Render the dataset; deterministic given the spec (including its seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _RENDER_TAG]))
    s = spec.image_side
    images = np.zeros((spec.n_samples, s * s))
    labels = np.zeros(spec.n_samples, dtype=np.int64)
    for i in range(spec.n_samples):
        cls = i % spec.n_classes
        canvas = np.zeros((s, s))
        _draw_glyph(canvas, cls)
        if spec.class_factors:
            for factor in spec.class_factors[cls]:
                if factor.kind in ("hbar", "vbar"):
                    _apply_bar(canvas, factor, rng.uniform())
                else:
                    raise DataError(
                        f"factor kind {factor.kind!r} cannot be class-exclusive"
                    )
        for factor in spec.shared_factors:
            if factor.kind == "intensity":
                lo, hi = factor.params if len(factor.params) == 2 else (0.4, 1.0)
                canvas = canvas * rng.uniform(lo, hi)
            elif factor.kind == "shift":
                k = float(factor.params[0]) if factor.params else 2.0
                dy, dx = rng.uniform(-k, k, size=2)
                canvas = _apply_shift(canvas, float(dx), float(dy))
            else:
                raise DataError(f"factor kind {factor.kind!r} cannot be shared")
        images[i] = canvas.reshape(-1)
        labels[i] = cls
    images = np.round(np.clip(images, 0.0, 1.0) * 255.0) / 255.0
    return Dataset(images, labels, spec.n_classes, (s, s))


def shared_only_spec(
    n_classes: int = 2, side: int = 16, n_samples: int = 1500, seed: int = 7
) -> SyntheticSpec:
    """All continuous factors shared across classes; class identity is the glyph."""
    return SyntheticSpec(
        n_classes=n_classes,
        image_side=side,
        n_samples=n_samples,
        seed=seed,
        shared_factors=(FactorSpec("intensity", (0.4, 1.0)), FactorSpec("shift", (2,))),
        class_factors=tuple(() for _ in range(n_classes)),
    )


def class_exclusive_spec(
    n_classes: int = 2, side: int = 16, n_samples: int = 1500, seed: int = 7
) -> SyntheticSpec:
    """Each class carries its own continuously varying bar; only intensity is shared."""
    bars = (
        FactorSpec("hbar", (5, side - 4)),
        FactorSpec("vbar", (5, side - 4)),
        FactorSpec("hbar", (3, side - 6)),
        FactorSpec("vbar", (3, side - 6)),
    )
    return SyntheticSpec(
        n_classes=n_classes,
        image_side=side,
        n_samples=n_samples,
        seed=seed,
        shared_factors=(FactorSpec("intensity", (0.7, 1.0)),),
        class_factors=tuple((bars[c],) for c in range(n_classes)),
    )


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


class BatchStream:
    """Seeded minibatch iterator; each epoch reshuffles, partial batch kept."""

    def __init__(self, dataset: Dataset, batch_size: int, seed: int):
        if batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if len(dataset) == 0:
            raise DataError("cannot batch an empty dataset")
        self.dataset = dataset
        self.batch_size = int(batch_size)
        self.seed = int(seed)

    def epoch(self, index: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, int(index)]))
        order = rng.permutation(len(self.dataset))
        for start in range(0, len(order), self.batch_size):
            idx = order[start : start + self.batch_size]
            yield self.dataset.images[idx], self.dataset.labels[idx]

    def __iter__(self):
        return self.epoch(0)


def split_and_batch(dataset: Dataset, batch_size: int, seed: int) -> BatchStream:
    return BatchStream(dataset, batch_size, seed)
