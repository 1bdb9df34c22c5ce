"""Class-conditioned VAE with a per-class latent block and a shared block.

The latent vector is ``z = [z_c, z_s]`` where ``z_c`` holds one block of
``class_latent_dim`` dimensions per class and ``z_s`` is shared by all
classes. Before decoding, every class block except the labelled one is zeroed
and a surviving one-hot indicator is interleaved in front of each block
(row-major over classes), so the decoder input is

    [c_0, z_c0, c_1, z_c1, ..., c_{L-1}, z_c{L-1}, z_s]

with ``c_i`` the one-hot entry. The indicator column acts as a class bias in
the decoder's first layer; ``class_bias=False`` drops it (ablation), leaving
only the masked latents.

Three training objectives are provided, all "higher is better":

* ``objective_lobj``     -- reconstruction - KL(z) + log q(y|x)
* ``objective_beta``     -- same, with the class-block KL reweighted
* ``objective_baseline`` -- plain beta-VAE (no class term)

``exact_elbo`` swaps the classification term for the exact Dirichlet KL and
is used for bound verification, not training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import distributions as dist
from .autodiff import Node, ParamStore
from .errors import DomainError, ShapeError

__all__ = [
    "LatentLayout",
    "EncoderOutput",
    "NvaeModel",
    "encode",
    "mask_class_latents",
    "decode",
    "objective_lobj",
    "objective_beta",
    "objective_baseline",
    "exact_elbo",
    "infer_label",
    "generate",
    "generate_batch",
    "traverse",
    "traversal_points",
    "draw_noise",
]

_INIT_TAG = 0x1AE5


@dataclass(frozen=True)
class LatentLayout:
    """Shapes of the latent space: L class blocks of d_c dims plus d_s shared."""

    n_classes: int
    class_latent_dim: int
    shared_latent_dim: int

    def __post_init__(self):
        if self.n_classes < 1:
            raise DomainError("n_classes must be >= 1")
        if self.class_latent_dim < 0:
            raise DomainError("class_latent_dim must be >= 0")
        if self.shared_latent_dim < 1:
            raise DomainError("shared_latent_dim must be >= 1")

    @property
    def class_block_dim(self) -> int:
        """Total width of all class blocks."""
        return self.n_classes * self.class_latent_dim

    @property
    def z_dim(self) -> int:
        return self.class_block_dim + self.shared_latent_dim

    def masked_dim(self, class_bias: bool) -> int:
        """Width of the masked class-latent vector fed to the decoder."""
        per_block = self.class_latent_dim + (1 if class_bias else 0)
        return self.n_classes * per_block

    def decoder_input_dim(self, class_bias: bool) -> int:
        return self.masked_dim(class_bias) + self.shared_latent_dim


@dataclass(frozen=True)
class EncoderOutput:
    z_posterior: dist.DiagGaussian
    pi_posterior: dist.DirichletParams


class NvaeModel:
    """Encoder/decoder parameter container plus hyperparameters.

    Parameters live in two named stores (``encoder``, ``decoder``) and are
    mutated in place by the optimizer; everything else is fixed at
    construction.
    """

    def __init__(
        self,
        input_dim: int,
        layout: LatentLayout,
        *,
        prior_concentration: float = 1.0,
        concentration_scale: float = 10.0,
        class_bias: bool = True,
        encoder_hidden: tuple[int, ...] = (400, 200),
        decoder_hidden: tuple[int, ...] = (200, 400),
        seed: int = 0,
    ):
        if input_dim < 1:
            raise DomainError("input_dim must be >= 1")
        if prior_concentration <= 0 or concentration_scale <= 0:
            raise DomainError("concentration hyperparameters must be positive")
        if not encoder_hidden or not decoder_hidden:
            raise DomainError("hidden layer tuples must be non-empty")
        self.input_dim = int(input_dim)
        self.layout = layout
        self.prior_concentration = float(prior_concentration)
        self.concentration_scale = float(concentration_scale)
        self.class_bias = bool(class_bias)
        self.encoder_hidden = tuple(int(h) for h in encoder_hidden)
        self.decoder_hidden = tuple(int(h) for h in decoder_hidden)
        self.seed = int(seed)
        self.encoder = ParamStore()
        self.decoder = ParamStore()
        self._init_params()

    def _init_params(self) -> None:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, _INIT_TAG]))

        def linear(store: ParamStore, name: str, n_in: int, n_out: int) -> None:
            scale = 1.0 / np.sqrt(max(n_in, 1))
            store.add(f"{name}.w", rng.normal(0.0, scale, size=(n_in, n_out)))
            store.add(f"{name}.b", np.zeros(n_out))

        d = self.input_dim
        for i, h in enumerate(self.encoder_hidden):
            linear(self.encoder, f"trunk{i}", d, h)
            d = h
        linear(self.encoder, "z_mean", d, self.layout.z_dim)
        linear(self.encoder, "z_logvar", d, self.layout.z_dim)
        linear(self.encoder, "concentration", d, self.layout.n_classes)

        d = self.layout.decoder_input_dim(self.class_bias)
        for i, h in enumerate(self.decoder_hidden):
            linear(self.decoder, f"layer{i}", d, h)
            d = h
        linear(self.decoder, "logits", d, self.input_dim)

    def parameters(self) -> dict[str, Node]:
        """All trainable parameters as one ordered name -> node mapping."""
        out: dict[str, Node] = {}
        for name, node in self.encoder.items():
            out[f"encoder.{name}"] = node
        for name, node in self.decoder.items():
            out[f"decoder.{name}"] = node
        return out

    def hyperparameters(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "n_classes": self.layout.n_classes,
            "class_latent_dim": self.layout.class_latent_dim,
            "shared_latent_dim": self.layout.shared_latent_dim,
            "prior_concentration": self.prior_concentration,
            "concentration_scale": self.concentration_scale,
            "class_bias": self.class_bias,
            "encoder_hidden": list(self.encoder_hidden),
            "decoder_hidden": list(self.decoder_hidden),
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# forward paths
# ---------------------------------------------------------------------------


def _as_batch(x, input_dim: int) -> tuple[Node, bool]:
    """Normalize input to a 2-d node; report whether it was a single vector."""
    node = x if isinstance(x, Node) else ad.constant(np.asarray(x, dtype=np.float64))
    if node.value.ndim == 1:
        if node.shape[0] != input_dim:
            raise ShapeError(f"input has {node.shape[0]} features, expected {input_dim}")
        return ad.reshape(node, (1, input_dim)), True
    if node.value.ndim == 2:
        if node.shape[1] != input_dim:
            raise ShapeError(f"input has {node.shape[1]} features, expected {input_dim}")
        return node, False
    raise ShapeError(f"input must be 1-d or 2-d, got shape {node.shape}")


def _check_pixel_range(x) -> None:
    arr = x.value.array if isinstance(x, Node) else np.asarray(x)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise DomainError(
            f"inputs must lie in [0, 1], got range [{arr.min()}, {arr.max()}]"
        )


def _mlp(store: ParamStore, prefix: str, n_layers: int, h: Node) -> Node:
    for i in range(n_layers):
        h = ad.tanh(h @ store[f"{prefix}{i}.w"] + store[f"{prefix}{i}.b"])
    return h


def encode(model: NvaeModel, x) -> EncoderOutput:
    """Posteriors over latents and class probabilities for one x or a batch.

    A shared tanh trunk feeds three linear heads: mean and log-variance of
    the Gaussian over z, and a softplus head scaled by ``concentration_scale``
    giving strictly positive Dirichlet concentrations.
    """
    _check_pixel_range(x)
    xb, single = _as_batch(x, model.input_dim)
    enc = model.encoder
    h = _mlp(enc, "trunk", len(model.encoder_hidden), xb)
    z_mean = h @ enc["z_mean.w"] + enc["z_mean.b"]
    z_logvar = h @ enc["z_logvar.w"] + enc["z_logvar.b"]
    raw = h @ enc["concentration.w"] + enc["concentration.b"]
    alpha = model.concentration_scale * ad.softplus(raw)
    if single:
        z_mean = ad.reshape(z_mean, (model.layout.z_dim,))
        z_logvar = ad.reshape(z_logvar, (model.layout.z_dim,))
        alpha = ad.reshape(alpha, (model.layout.n_classes,))
    return EncoderOutput(
        z_posterior=dist.DiagGaussian(z_mean, z_logvar),
        pi_posterior=dist.DirichletParams(alpha),
    )


def mask_class_latents(z_c_all, y: int, bias_enabled: bool = True) -> Node:
    """Mask per-class latents down to the labelled class.

    ``z_c_all`` is the (L, d_c) matrix of class latents. Row i of the
    conceptual (L, d_c + 1) matrix is ``[1, z_ci]``; every row except row
    ``y`` is zeroed and the result is vectorized row-major. With
    ``bias_enabled=False`` the indicator column is dropped and the output has
    length L * d_c.
    """
    node = z_c_all if isinstance(z_c_all, Node) else ad.constant(
        np.asarray(z_c_all, dtype=np.float64)
    )
    if node.value.ndim != 2:
        raise ShapeError(f"z_c_all must be 2-d (classes x dims), got {node.shape}")
    n_classes, d_c = node.shape
    if not 0 <= y < n_classes:
        raise DomainError(f"class index {y} out of range [0, {n_classes})")
    pieces: list[Node] = []
    zero_block = ad.constant(np.zeros(d_c)) if d_c else None
    for i in range(n_classes):
        if bias_enabled:
            pieces.append(ad.constant(np.array([1.0 if i == y else 0.0])))
        if d_c:
            if i == y:
                row = ad.reshape(ad.slice_axis(node, 0, i, i + 1), (d_c,))
                pieces.append(row)
            else:
                pieces.append(zero_block)
    if not pieces:
        return ad.constant(np.zeros(0))
    return ad.concat(pieces, axis=0)


def _mask_batch(z_c_flat: Node, y_vec: np.ndarray, layout: LatentLayout, bias: bool) -> Node:
    """Batched masking: (N, L*d_c) class latents -> (N, masked_dim)."""
    n = z_c_flat.shape[0]
    L, d_c = layout.n_classes, layout.class_latent_dim
    hot = dist.one_hot(y_vec, L)  # (N, L)
    if d_c == 0:
        return ad.constant(hot) if bias else ad.constant(np.zeros((n, 0)))
    mask = np.repeat(hot, d_c, axis=1)
    masked = ad.apply_mask(z_c_flat, mask)
    if not bias:
        return masked
    hot_node = ad.constant(hot)
    pieces: list[Node] = []
    for i in range(L):
        pieces.append(ad.slice_axis(hot_node, 1, i, i + 1))
        pieces.append(ad.slice_axis(masked, 1, i * d_c, (i + 1) * d_c))
    return ad.concat(pieces, axis=1)


def decode(model: NvaeModel, z_cy, z_s) -> Node:
    """Decoder MLP from [masked class latents, shared latents] to pixel logits."""
    cy = z_cy if isinstance(z_cy, Node) else ad.constant(np.asarray(z_cy, dtype=np.float64))
    zs = z_s if isinstance(z_s, Node) else ad.constant(np.asarray(z_s, dtype=np.float64))
    if cy.value.ndim != zs.value.ndim:
        raise ShapeError(f"z_cy rank {cy.value.ndim} != z_s rank {zs.value.ndim}")
    single = cy.value.ndim == 1
    want_cy = model.layout.masked_dim(model.class_bias)
    want_zs = model.layout.shared_latent_dim
    if cy.shape[-1] != want_cy or zs.shape[-1] != want_zs:
        raise ShapeError(
            f"decoder expects widths ({want_cy}, {want_zs}), got "
            f"({cy.shape[-1]}, {zs.shape[-1]})"
        )
    if single:
        cy = ad.reshape(cy, (1, want_cy))
        zs = ad.reshape(zs, (1, want_zs))
    h = ad.concat([cy, zs], axis=1) if want_cy else zs
    h = _mlp(model.decoder, "layer", len(model.decoder_hidden), h)
    logits = h @ model.decoder["logits.w"] + model.decoder["logits.b"]
    if single:
        logits = ad.reshape(logits, (model.input_dim,))
    return logits


# ---------------------------------------------------------------------------
# objectives
# ---------------------------------------------------------------------------


def draw_noise(model: NvaeModel, n: int, rng: np.random.Generator, samples: int = 1) -> np.ndarray:
    """Standard-normal noise for ``gauss_sample``: (samples, n, z_dim)."""
    return rng.standard_normal((samples, n, model.layout.z_dim))


def _normalize_noise(noise, n: int, z_dim: int) -> np.ndarray:
    arr = np.asarray(noise, dtype=np.float64)
    if arr.shape == (z_dim,):
        arr = arr.reshape(1, 1, z_dim)
    elif arr.shape == (n, z_dim):
        arr = arr.reshape(1, n, z_dim)
    elif arr.ndim == 3 and arr.shape[1:] == (n, z_dim):
        pass
    else:
        raise ShapeError(
            f"noise shape {arr.shape} does not match ({n}, {z_dim}) in any sample arity"
        )
    return arr


def _forward_terms(model: NvaeModel, x, y, noise) -> dict:
    """Shared forward pass: encode, sample, mask, decode, all loss pieces."""
    _check_pixel_range(x)
    xb, _ = _as_batch(x, model.input_dim)
    n = xb.shape[0]
    y_vec = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y_vec.shape != (n,):
        raise ShapeError(f"labels shape {y_vec.shape} does not match batch size {n}")
    layout = model.layout
    noise = _normalize_noise(noise, n, layout.z_dim)

    enc = encode(model, xb)
    per_dim, _ = dist.gauss_kl_std(enc.z_posterior)  # (N, Z)
    split = layout.class_block_dim
    if split:
        kl_c = ad.tsum(ad.slice_axis(per_dim, 1, 0, split), axis=-1)
    else:
        kl_c = ad.constant(np.zeros(n))
    kl_s = ad.tsum(ad.slice_axis(per_dim, 1, split, layout.z_dim), axis=-1)

    recons = []
    for k in range(noise.shape[0]):
        z = dist.gauss_sample(enc.z_posterior, noise[k])
        if split:
            z_c = ad.slice_axis(z, 1, 0, split)
        else:
            z_c = ad.constant(np.zeros((n, 0)))
        z_s = ad.slice_axis(z, 1, split, layout.z_dim)
        z_cy = _mask_batch(z_c, y_vec, layout, model.class_bias)
        logits = decode(model, z_cy, z_s)
        recons.append(dist.bernoulli_recon_ll(logits, xb))
    if len(recons) == 1:
        recon = recons[0]
    else:
        acc = recons[0]
        for r in recons[1:]:
            acc = acc + r
        recon = acc * (1.0 / len(recons))

    probs = dist.class_prob_from_dirichlet(enc.pi_posterior)
    class_nll = dist.categorical_nll(ad.log(probs), y_vec)  # (N,)
    posterior = dist.dirichlet_posterior(
        model.prior_concentration, layout.n_classes, y_vec
    )
    return {
        "n": n,
        "encoder_output": enc,
        "recon": recon,
        "kl_c": kl_c,
        "kl_s": kl_s,
        "class_nll": class_nll,
        "pi_posterior_target": posterior,
    }


def _terms_summary(parts: dict, objective: Node, extra: dict | None = None) -> dict:
    out = {
        "objective": float(np.mean(objective.value.array)),
        "reconstruction": float(np.mean(parts["recon"].value.array)),
        "kl_class": float(np.mean(parts["kl_c"].value.array)),
        "kl_shared": float(np.mean(parts["kl_s"].value.array)),
        "class_nll": float(np.mean(parts["class_nll"].value.array)),
    }
    out["kl_total"] = out["kl_class"] + out["kl_shared"]
    if extra:
        out.update(extra)
    return out


def objective_beta(model: NvaeModel, x, y, noise, class_kl_weight: float = 2.0):
    """Reweighted objective: recon - KL(z_s) - w * KL(z_c) + log q(y|x).

    Returns (scalar node to maximize, dict of per-term batch means). With
    ``class_kl_weight=1`` this is exactly the unweighted objective.
    """
    if class_kl_weight < 0:
        raise DomainError("class_kl_weight must be >= 0")
    p = _forward_terms(model, x, y, noise)
    # log q(y|x) enters as -NLL so the classification head shares one code
    # path with the diagnostics.
    per_example = p["recon"] - p["kl_s"] - float(class_kl_weight) * p["kl_c"] + (
        -1.0 * p["class_nll"]
    )
    obj = ad.tmean(per_example)
    return obj, _terms_summary(p, obj)


def objective_lobj(model: NvaeModel, x, y, noise):
    """Unweighted objective: recon - KL(z) + log q(y|x); equals beta at weight 1."""
    return objective_beta(model, x, y, noise, class_kl_weight=1.0)


def objective_baseline(model: NvaeModel, x, y, noise, shared_kl_weight: float = 1.0):
    """Plain (beta-)VAE bound: recon - w * KL(z), no classification term."""
    if shared_kl_weight < 0:
        raise DomainError("shared_kl_weight must be >= 0")
    p = _forward_terms(model, x, y, noise)
    kl_total = p["kl_c"] + p["kl_s"]
    per_example = p["recon"] - float(shared_kl_weight) * kl_total
    obj = ad.tmean(per_example)
    return obj, _terms_summary(p, obj)


def exact_elbo(model: NvaeModel, x, y, noise):
    """Joint bound with the exact Dirichlet KL classification term.

    recon - KL(z) - KL(q(pi|x) || posterior(pi|y)), excluding the constant
    class-prior term. Used to verify the surrogate objective, not to train.
    """
    p = _forward_terms(model, x, y, noise)
    dkl = dist.dirichlet_kl(p["encoder_output"].pi_posterior, p["pi_posterior_target"])
    per_example = p["recon"] - p["kl_s"] - 1.0 * p["kl_c"] + (-1.0 * dkl)
    obj = ad.tmean(per_example)
    return obj, _terms_summary(p, obj, {"dirichlet_kl": float(np.mean(dkl.value.array))})


# ---------------------------------------------------------------------------
# inference and generation
# ---------------------------------------------------------------------------


def infer_label(model: NvaeModel, x):
    """Most probable class from the Dirichlet mean; ties go to the lowest index."""
    enc = encode(model, x)
    probs = dist.class_prob_from_dirichlet(enc.pi_posterior).value.array
    if probs.ndim == 1:
        return int(np.argmax(probs))
    return np.argmax(probs, axis=1).astype(np.int64)


def generate_batch(model: NvaeModel, ys, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Sample pixel means for each label: z ~ N(0, sigma^2 I), mask, decode.

    ``sigma`` scales the standard deviation of the latent draw; 1 samples
    from the prior. Returns an (n, input_dim) array of sigmoid outputs.
    """
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    y_vec = np.atleast_1d(np.asarray(ys, dtype=np.int64))
    n = len(y_vec)
    layout = model.layout
    z = sigma * rng.standard_normal((n, layout.z_dim))
    split = layout.class_block_dim
    z_c = ad.constant(z[:, :split]) if split else ad.constant(np.zeros((n, 0)))
    z_s = ad.constant(z[:, split:])
    z_cy = _mask_batch(z_c, y_vec, layout, model.class_bias)
    logits = decode(model, z_cy, z_s)
    return ad.sigmoid(logits).value.array


def generate(model: NvaeModel, y: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Single class-conditional sample; returns one (input_dim,) pixel-mean vector."""
    return generate_batch(model, [int(y)], sigma, rng)[0]


def traversal_points(steps: int) -> np.ndarray:
    """Uniform midpoint grid of `steps` points covering the open range (-3, 3)."""
    if steps < 1:
        raise DomainError("steps must be >= 1")
    return -3.0 + (np.arange(steps) + 0.5) * (6.0 / steps)


def traverse(model: NvaeModel, target, steps: int, x_seed=None, y: int | None = None) -> np.ndarray:
    """Decode while sweeping one latent coordinate across (-3, 3).

    ``target`` is ``("shared", dim)`` or ``("class", class_index, dim)``. All
    other coordinates stay at the seed's encoded posterior mean (when
    ``x_seed`` is given) or at zero. The conditioning label defaults to the
    inferred label of the seed, or to the target class for class targets.
    Returns a (steps, input_dim) array of pixel means.
    """
    layout = model.layout
    kind = target[0]
    if kind == "shared":
        dim = int(target[1])
        if not 0 <= dim < layout.shared_latent_dim:
            raise DomainError(f"shared dim {dim} out of range [0, {layout.shared_latent_dim})")
        column = layout.class_block_dim + dim
    elif kind == "class":
        cls, dim = int(target[1]), int(target[2])
        if not 0 <= cls < layout.n_classes:
            raise DomainError(f"class {cls} out of range [0, {layout.n_classes})")
        if not 0 <= dim < layout.class_latent_dim:
            raise DomainError(f"class dim {dim} out of range [0, {layout.class_latent_dim})")
        column = cls * layout.class_latent_dim + dim
    else:
        raise DomainError(f"unknown traversal target kind {kind!r}")

    if x_seed is not None:
        enc = encode(model, np.asarray(x_seed, dtype=np.float64))
        base = enc.z_posterior.mean.value.array.reshape(-1).copy()
        if y is None:
            y = infer_label(model, np.asarray(x_seed, dtype=np.float64))
    else:
        base = np.zeros(layout.z_dim)
        if y is None:
            if kind != "class":
                raise DomainError("shared traversal without a seed requires a label")
            y = cls
    y = int(y)
    if not 0 <= y < layout.n_classes:
        raise DomainError(f"label {y} out of range [0, {layout.n_classes})")

    grid = traversal_points(steps)
    z = np.tile(base, (steps, 1))
    z[:, column] = grid
    split = layout.class_block_dim
    z_c = ad.constant(z[:, :split]) if split else ad.constant(np.zeros((steps, 0)))
    z_s = ad.constant(z[:, split:])
    z_cy = _mask_batch(z_c, np.full(steps, y, dtype=np.int64), layout, model.class_bias)
    logits = decode(model, z_cy, z_s)
    return ad.sigmoid(logits).value.array
