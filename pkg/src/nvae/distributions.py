"""Densities, divergences, and reparameterized samplers used by the model.

Everything here is written against the autodiff tape, so each quantity is
differentiable through its variational parameters. Functions accept either a
single parameter vector (shape ``(d,)``) or a batch (shape ``(n, d)``); the
reductions always run over the last axis, so batched calls return one value
per row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import DomainError, ShapeError

__all__ = [
    "DiagGaussian",
    "DirichletParams",
    "gauss_kl_std",
    "gauss_sample",
    "dirichlet_kl",
    "dirichlet_posterior",
    "class_prob_from_dirichlet",
    "categorical_nll",
    "bernoulli_recon_ll",
    "one_hot",
]


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else ad.constant(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class DiagGaussian:
    """Gaussian with diagonal covariance: per-dimension mean and log-variance."""

    mean: Node
    log_var: Node

    def __post_init__(self):
        object.__setattr__(self, "mean", _as_node(self.mean))
        object.__setattr__(self, "log_var", _as_node(self.log_var))
        if self.mean.shape != self.log_var.shape:
            raise ShapeError(
                f"DiagGaussian: mean shape {self.mean.shape} != log_var shape {self.log_var.shape}"
            )

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


@dataclass(frozen=True)
class DirichletParams:
    """Dirichlet concentration vector; every component strictly positive."""

    alpha: Node

    def __post_init__(self):
        object.__setattr__(self, "alpha", _as_node(self.alpha))
        a = self.alpha.value.array
        if a.size == 0 or np.min(a) <= 0.0:
            raise DomainError("DirichletParams: concentrations must be strictly positive")

    @property
    def n_classes(self) -> int:
        return self.alpha.shape[-1]


def gauss_kl_std(q: DiagGaussian) -> tuple[Node, Node]:
    """KL(q || N(0, I)) against the unit Gaussian prior.

    Returns ``(per_dim, total)`` where ``per_dim[i] = (mu_i^2 + var_i - 1
    - log var_i) / 2`` and ``total`` sums over the last axis.
    """
    mu, lv = q.mean, q.log_var
    per_dim = 0.5 * (mu * mu + ad.exp(lv) - 1.0 - lv)
    total = ad.tsum(per_dim, axis=-1)
    return per_dim, total


def gauss_sample(q: DiagGaussian, noise) -> Node:
    """Reparameterized draw ``mean + exp(log_var / 2) * noise``.

    ``noise`` is a standard-normal array of the same shape as the mean,
    supplied by the caller's seeded generator; the result is deterministic
    given the noise and differentiable through mean and log_var.
    """
    noise = _as_node(noise)
    if noise.shape != q.mean.shape:
        raise ShapeError(
            f"gauss_sample: noise shape {noise.shape} != mean shape {q.mean.shape}"
        )
    return q.mean + ad.exp(0.5 * q.log_var) * noise


def dirichlet_kl(q: DirichletParams, p: DirichletParams) -> Node:
    """Closed-form KL divergence between two Dirichlet distributions.

    ``lgG(Sq) - sum lgG(q_i) - lgG(Sp) + sum lgG(p_i)
    + sum (q_i - p_i) (psi(q_i) - psi(Sq))``, reduced over the last axis.
    Differentiable through ``q`` (and ``p``, though the model only ever
    needs ``q``).
    """
    if q.alpha.shape != p.alpha.shape:
        raise ShapeError(
            f"dirichlet_kl: shapes differ, {q.alpha.shape} vs {p.alpha.shape}"
        )
    qa, pa = q.alpha, p.alpha
    sq = ad.tsum(qa, axis=-1, keepdims=True)
    sp = ad.tsum(pa, axis=-1, keepdims=True)
    term_norm = ad.reshape(ad.lgamma(sq) - ad.lgamma(sp), sq.shape[:-1])
    term_parts = ad.tsum(ad.lgamma(pa) - ad.lgamma(qa), axis=-1)
    term_mean = ad.tsum((qa - pa) * (ad.digamma(qa) - ad.digamma(sq)), axis=-1)
    return term_norm + term_parts + term_mean


def dirichlet_posterior(prior_concentration: float, n_classes: int, y) -> DirichletParams:
    """Conjugate posterior over class probabilities after observing label y.

    A symmetric prior with concentration ``a`` and a single categorical
    observation give concentrations ``a`` everywhere except ``a + 1`` at the
    observed class. ``y`` may be an int or an int array (one row per label).
    """
    if prior_concentration <= 0.0:
        raise DomainError("prior concentration must be positive")
    alpha = np.full(
        (np.size(y), n_classes) if np.ndim(y) else (n_classes,),
        float(prior_concentration),
    )
    ys = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if np.any(ys < 0) or np.any(ys >= n_classes):
        raise DomainError(f"class index out of range [0, {n_classes}): {y!r}")
    if np.ndim(y):
        alpha[np.arange(len(ys)), ys] += 1.0
    else:
        alpha[ys[0]] += 1.0
    return DirichletParams(ad.constant(alpha))


def class_prob_from_dirichlet(q: DirichletParams) -> Node:
    """Mean of the Dirichlet: p_i = alpha_i / sum(alpha). Rows sum to 1."""
    total = ad.tsum(q.alpha, axis=-1, keepdims=True)
    return ad.div(q.alpha, total)


def one_hot(y, n_classes: int) -> np.ndarray:
    """Constant one-hot rows for an int label or a vector of labels."""
    ys = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if np.any(ys < 0) or np.any(ys >= n_classes):
        raise DomainError(f"class index out of range [0, {n_classes}): {y!r}")
    out = np.zeros((len(ys), n_classes))
    out[np.arange(len(ys)), ys] = 1.0
    return out if np.ndim(y) else out[0]


def categorical_nll(log_probs: Node, y) -> Node:
    """Negative log-likelihood of the labels under given log-probabilities.

    ``log_probs`` has classes on the last axis; ``y`` is an int (vector
    input) or an int array (batch input). Result is >= 0 for normalized
    distributions.
    """
    log_probs = _as_node(log_probs)
    hot = one_hot(y, log_probs.shape[-1])
    picked = ad.tsum(ad.mul(log_probs, ad.constant(hot)), axis=-1)
    return -picked


def bernoulli_recon_ll(logits: Node, x) -> Node:
    """Bernoulli log-likelihood of pixels in [0, 1], from logits.

    Uses the stable form ``x * -softplus(-l) + (1 - x) * -softplus(l)``
    summed over the last axis; always <= 0.
    """
    logits = _as_node(logits)
    xv = np.asarray(x.value.array if isinstance(x, Node) else x, dtype=np.float64)
    if xv.min() < 0.0 or xv.max() > 1.0:
        raise DomainError(
            f"bernoulli_recon_ll: targets must lie in [0, 1], got range "
            f"[{xv.min()}, {xv.max()}]"
        )
    x = _as_node(x)
    if x.shape != logits.shape:
        raise ShapeError(
            f"bernoulli_recon_ll: target shape {x.shape} != logits shape {logits.shape}"
        )
    ll = x * (-ad.softplus(-logits)) + (1.0 - x) * (-ad.softplus(logits))
    return ad.tsum(ll, axis=-1)
