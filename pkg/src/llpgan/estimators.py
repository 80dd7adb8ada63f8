"""Scikit-learn style classifiers trained from label proportions.

Both estimators accept either instance labels (``fit(X, y)``, in which case
bags are built internally and the labels are discarded afterwards) or an
explicit :class:`~llpgan.bags.BagDataset` over the rows of ``X``
(``fit(X, bags=...)``), which is the genuine proportion-only workflow.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bags import BagDataset, LabeledDataset, partition_into_bags
from .exceptions import ConfigurationError
from .networks import build_discriminator, build_generator, mlp_discriminator_spec, mlp_generator_spec
from .training import (
    TrainConfig,
    predict_labels,
    predict_posteriors,
    steps_for_epochs,
    train_dllp,
    train_llp_gan,
)


class _BaseLLPClassifier(BaseEstimator, ClassifierMixin):
    def __init__(
        self,
        n_classes=None,
        bag_size=16,
        hidden=(64, 64),
        epochs=None,
        n_steps=1000,
        bags_per_step=4,
        learning_rate=3e-4,
        rescale=True,
        random_state=0,
    ):
        self.n_classes = n_classes
        self.bag_size = bag_size
        self.hidden = hidden
        self.epochs = epochs
        self.n_steps = n_steps
        self.bags_per_step = bags_per_step
        self.learning_rate = learning_rate
        self.rescale = rescale
        self.random_state = random_state

    # -- shared fitting machinery ------------------------------------------

    def _resolve_bags(self, X, y, bags):
        if (y is None) == (bags is None):
            raise ConfigurationError("pass exactly one of y or bags")
        if bags is not None:
            if not isinstance(bags, BagDataset):
                raise ConfigurationError("bags must be a BagDataset over the rows of X")
            return bags, bags.k
        y = np.asarray(y)
        k = self.n_classes or int(y.max()) + 1
        dataset = LabeledDataset(features=X, labels=y, k=k, name="inline")
        return partition_into_bags(dataset, self.bag_size, self.random_state), k

    def _rescale_fit(self, X):
        if not self.rescale:
            self.feature_offset_ = np.zeros(X.shape[1])
            self.feature_scale_ = np.ones(X.shape[1])
            return X
        lo, hi = X.min(axis=0), X.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        self.feature_offset_ = (hi + lo) / 2.0
        self.feature_scale_ = span / 2.0
        return self._rescale_apply(X)

    def _rescale_apply(self, X):
        return (X - self.feature_offset_) / self.feature_scale_

    def _train_config(self, bags, **overrides):
        if self.epochs is not None:
            total = steps_for_epochs(len(bags), self.bags_per_step, self.epochs)
        else:
            total = self.n_steps
        return TrainConfig(
            total_steps=total,
            bags_per_step=self.bags_per_step,
            learning_rate=self.learning_rate,
            seed=self.random_state,
            **overrides,
        )

    # -- sklearn surface ----------------------------------------------------

    def predict_proba(self, X):
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=np.float64)
        return predict_posteriors(
            self.state_.discriminator, self._rescale_apply(X), algo=self.state_.algo
        )

    def predict(self, X):
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=np.float64)
        return self.classes_[
            predict_labels(self.state_.discriminator, self._rescale_apply(X), algo=self.state_.algo)
        ]


class DLLPClassifier(_BaseLLPClassifier):
    """Bag-level cross-entropy baseline with optional entropy regularization."""

    def __init__(
        self,
        n_classes=None,
        bag_size=16,
        hidden=(64, 64),
        epochs=None,
        n_steps=1000,
        bags_per_step=4,
        learning_rate=3e-4,
        lambda_ent=0.0,
        rescale=True,
        random_state=0,
    ):
        super().__init__(
            n_classes=n_classes,
            bag_size=bag_size,
            hidden=hidden,
            epochs=epochs,
            n_steps=n_steps,
            bags_per_step=bags_per_step,
            learning_rate=learning_rate,
            rescale=rescale,
            random_state=random_state,
        )
        self.lambda_ent = lambda_ent

    def fit(self, X, y=None, *, bags=None):
        X = check_array(X, dtype=np.float64)
        bags, k = self._resolve_bags(X, y, bags)
        scaled = self._rescale_fit(X)
        model = build_discriminator(
            mlp_discriminator_spec(X.shape[1], k, self.hidden), k, seed=self.random_state
        )
        config = self._train_config(bags, lambda_ent=self.lambda_ent)
        self.state_ = train_dllp(scaled, bags, config, model=model)
        self.classes_ = np.arange(k)
        self.n_features_in_ = X.shape[1]
        self.bags_ = bags
        return self


class LLPGanClassifier(_BaseLLPClassifier):
    """Adversarially trained proportion classifier with a feature-matched generator."""

    def __init__(
        self,
        n_classes=None,
        bag_size=16,
        hidden=(64, 64),
        generator_hidden=(64, 64),
        noise_dim=16,
        epochs=None,
        n_steps=1000,
        bags_per_step=4,
        learning_rate=3e-4,
        lambda_sup=1.0,
        fake_batch=None,
        rescale=True,
        random_state=0,
    ):
        super().__init__(
            n_classes=n_classes,
            bag_size=bag_size,
            hidden=hidden,
            epochs=epochs,
            n_steps=n_steps,
            bags_per_step=bags_per_step,
            learning_rate=learning_rate,
            rescale=rescale,
            random_state=random_state,
        )
        self.generator_hidden = generator_hidden
        self.noise_dim = noise_dim
        self.lambda_sup = lambda_sup
        self.fake_batch = fake_batch

    def fit(self, X, y=None, *, bags=None):
        X = check_array(X, dtype=np.float64)
        bags, k = self._resolve_bags(X, y, bags)
        scaled = self._rescale_fit(X)
        disc = build_discriminator(
            mlp_discriminator_spec(X.shape[1], k, self.hidden), k, seed=self.random_state
        )
        gen = build_generator(
            mlp_generator_spec(X.shape[1], self.noise_dim, self.generator_hidden),
            seed=self.random_state + 1,
        )
        config = self._train_config(
            bags, lambda_sup=self.lambda_sup, fake_batch=self.fake_batch
        )
        self.state_ = train_llp_gan(scaled, bags, config, discriminator=disc, generator=gen)
        self.generator_ = self.state_.generator
        self.classes_ = np.arange(k)
        self.n_features_in_ = X.shape[1]
        self.bags_ = bags
        return self
