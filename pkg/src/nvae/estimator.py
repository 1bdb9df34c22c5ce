"""scikit-learn compatible estimator wrapping the model and training loop.

``NVAE`` behaves as a classifier (``fit`` / ``predict`` / ``predict_proba`` /
``score``) and as a transformer (``transform`` maps inputs to posterior-mean
latents), so it composes with pipelines and model-selection utilities.
Inputs must be feature matrices with values in [0, 1].
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset
from .model import LatentLayout, NvaeModel, generate_batch, infer_label
from .training import TrainConfig, train
from . import distributions as dist
from . import model as M

__all__ = ["NVAE"]


class NVAE(TransformerMixin, ClassifierMixin, BaseEstimator):
    """Class-conditioned VAE with per-class and shared latent blocks.

    Parameters mirror the library's training configuration; all are plain
    values so ``get_params`` / ``set_params`` / ``clone`` work as usual.

    Attributes set by ``fit``: ``classes_``, ``n_features_in_``, ``model_``
    (the trained :class:`~nvae.model.NvaeModel`), ``report_`` (per-epoch
    training records), ``layout_``.
    """

    def __init__(
        self,
        class_latent_dim: int = 2,
        shared_latent_dim: int = 8,
        encoder_hidden: tuple = (400, 200),
        decoder_hidden: tuple = (200, 400),
        objective: str = "beta",
        class_kl_weight: float = 2.0,
        shared_kl_weight: float = 1.0,
        prior_concentration: float = 1.0,
        concentration_scale: float = 10.0,
        class_bias: bool = True,
        learning_rate: float = 1e-3,
        batch_size: int = 128,
        epochs: int = 30,
        samples_per_step: int = 1,
        random_state: int = 0,
    ):
        self.class_latent_dim = class_latent_dim
        self.shared_latent_dim = shared_latent_dim
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.objective = objective
        self.class_kl_weight = class_kl_weight
        self.shared_kl_weight = shared_kl_weight
        self.prior_concentration = prior_concentration
        self.concentration_scale = concentration_scale
        self.class_bias = class_bias
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.samples_per_step = samples_per_step
        self.random_state = random_state

    def _validate_pixels(self, X: np.ndarray) -> None:
        if X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError(
                f"NVAE expects features in [0, 1]; got range [{X.min()}, {X.max()}]. "
                "Rescale (e.g. MinMaxScaler) before fitting."
            )

    def fit(self, X, y):
        """Train on (X, y); X rows are images in [0, 1], y are class labels."""
        X, y = check_X_y(X, y, dtype=np.float64)
        self._validate_pixels(X)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        layout = LatentLayout(
            n_classes=len(self.classes_),
            class_latent_dim=int(self.class_latent_dim),
            shared_latent_dim=int(self.shared_latent_dim),
        )
        self.layout_ = layout
        self.model_ = NvaeModel(
            X.shape[1],
            layout,
            prior_concentration=self.prior_concentration,
            concentration_scale=self.concentration_scale,
            class_bias=bool(self.class_bias),
            encoder_hidden=tuple(self.encoder_hidden),
            decoder_hidden=tuple(self.decoder_hidden),
            seed=int(self.random_state),
        )
        config = TrainConfig(
            objective=self.objective,
            class_kl_weight=float(self.class_kl_weight),
            shared_kl_weight=float(self.shared_kl_weight),
            learning_rate=float(self.learning_rate),
            batch_size=int(self.batch_size),
            epochs=int(self.epochs),
            seed=int(self.random_state),
            class_bias=bool(self.class_bias),
            samples_per_step=int(self.samples_per_step),
        )
        dataset = Dataset(X, y_idx, len(self.classes_), (1, X.shape[1]))
        self.report_ = train(self.model_, dataset, config)
        return self

    def predict(self, X):
        """Labels inferred from the class-probability head."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        self._validate_pixels(X)
        idx = infer_label(self.model_, X)
        return self.classes_[np.atleast_1d(idx)]

    def predict_proba(self, X):
        """Class probabilities (the Dirichlet posterior mean), rows sum to 1."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        self._validate_pixels(X)
        enc = M.encode(self.model_, X)
        return dist.class_prob_from_dirichlet(enc.pi_posterior).value.array

    def transform(self, X):
        """Posterior-mean latent features, shape (n, z_dim)."""
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        self._validate_pixels(X)
        enc = M.encode(self.model_, X)
        return enc.z_posterior.mean.value.array

    def sample(self, label, n_samples: int = 1, sigma: float = 1.0, random_state: int | None = None):
        """Generate ``n_samples`` pixel-mean images for one class label."""
        check_is_fitted(self, "model_")
        matches = np.nonzero(self.classes_ == label)[0]
        if len(matches) == 0:
            raise ValueError(f"unknown label {label!r}; know {list(self.classes_)}")
        seed = self.random_state if random_state is None else random_state
        rng = np.random.default_rng(seed)
        ys = np.full(n_samples, matches[0], dtype=np.int64)
        return generate_batch(self.model_, ys, float(sigma), rng)

    def _more_tags(self):
        return {"poor_score": True, "non_deterministic": False}
