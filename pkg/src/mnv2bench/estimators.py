"""Scikit-learn style wrappers around the engine.

Three estimators compose into a standard ``Pipeline``:

* :class:`ImagePreprocessor` -- uint8 RGB images to normalised NCHW
  float32 batches
* :class:`FrozenFeatureExtractor` -- batches through a frozen backbone
  to pooled 1280-d features
* :class:`HeadClassifier` -- the SGD-trained linear head as a proper
  classifier with ``fit`` / ``predict`` / ``predict_proba``

The transformers are stateless (``fit`` just validates); the classifier
holds ``coef_`` / ``intercept_`` after fitting and mirrors the training
loop used elsewhere, so a pipeline prediction matches the engine's own
evaluation path.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .model import Model, extract_features, init_head
from .pipeline import PreprocConfig, preprocess, rng_for
from .tensor import softmax
from .training import TrainConfig, _sgd_epoch, lr_at

__all__ = ["ImagePreprocessor", "FrozenFeatureExtractor", "HeadClassifier"]


def _as_image_list(X):
    # Accept a list/tuple of (h, w, 3) uint8 arrays or one 4-d stack.
    if isinstance(X, np.ndarray):
        if X.ndim != 4 or X.shape[3] != 3 or X.dtype != np.uint8:
            raise ValueError(
                f"expected uint8 (n, h, w, 3) array, got {X.dtype} {X.shape}")
        return list(X)
    if isinstance(X, (list, tuple)):
        return list(X)
    raise ValueError("expected a list of images or a 4-d uint8 array")


class ImagePreprocessor(TransformerMixin, BaseEstimator):
    """Resize and normalise uint8 RGB images into an NCHW batch."""

    def __init__(self, size: int = 224, mean=PreprocConfig.mean,
                 std=PreprocConfig.std):
        self.size = size
        self.mean = mean
        self.std = std

    def fit(self, X, y=None):
        _as_image_list(X)
        return self

    def transform(self, X):
        images = _as_image_list(X)
        cfg = PreprocConfig(size=self.size, mean=tuple(self.mean),
                            std=tuple(self.std))
        return np.stack([preprocess(img, cfg) for img in images])


class FrozenFeatureExtractor(TransformerMixin, BaseEstimator):
    """Pooled backbone features from preprocessed (n, 3, h, w) batches."""

    def __init__(self, model: Model = None, batch_size: int = 128):
        self.model = model
        self.batch_size = batch_size

    def _check(self):
        if self.model is None:
            raise ValueError("FrozenFeatureExtractor requires a model")

    def fit(self, X, y=None):
        self._check()
        return self

    def transform(self, X):
        self._check()
        X = check_array(X, dtype=np.float32, allow_nd=True)
        if X.ndim != 4:
            raise ValueError(f"expected (n, 3, h, w) input, got shape {X.shape}")
        chunks = [extract_features(self.model, X[i : i + self.batch_size])
                  for i in range(0, len(X), self.batch_size)]
        return np.concatenate(chunks)


class HeadClassifier(ClassifierMixin, BaseEstimator):
    """Linear softmax classifier trained with momentum SGD.

    Hyper-parameters mirror :class:`~mnv2bench.training.TrainConfig`;
    fitting runs the same epoch loop the engine's head training uses,
    so results are reproducible across both entry points for a given
    seed.
    """

    def __init__(self, lr0: float = 1e-3, momentum: float = 0.9,
                 nesterov: bool = True, weight_decay: float = 1e-4,
                 epochs: int = 30, lr_step: int = 10, lr_gamma: float = 0.1,
                 batch_size: int = 64, seed: int = 0):
        self.lr0 = lr0
        self.momentum = momentum
        self.nesterov = nesterov
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.lr_step = lr_step
        self.lr_gamma = lr_gamma
        self.batch_size = batch_size
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr0=self.lr0, momentum=self.momentum,
                           nesterov=self.nesterov,
                           weight_decay=self.weight_decay, epochs=self.epochs,
                           lr_step=self.lr_step, lr_gamma=self.lr_gamma,
                           batch_train=self.batch_size, seed=self.seed)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float32)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        y_idx = y_idx.astype(np.int64)
        self.n_features_in_ = X.shape[1]
        cfg = self._train_config()
        w, b = init_head(len(self.classes_), cfg.seed,
                         feature_dim=self.n_features_in_)
        vw = np.zeros_like(w)
        vb = np.zeros_like(b)
        self.loss_curve_ = []
        for epoch in range(1, cfg.epochs + 1):
            order = rng_for(cfg.seed, epoch).permutation(len(y_idx))
            loss, _acc = _sgd_epoch(w, b, vw, vb, X, y_idx, order,
                                    lr_at(epoch - 1, cfg), cfg)
            self.loss_curve_.append(loss)
        self.coef_ = w
        self.intercept_ = b
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
