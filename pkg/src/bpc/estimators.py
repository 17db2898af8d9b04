"""scikit-learn compatible wrappers.

``NetClassifier`` trains one of the small architectures with the SGD trainer;
``PseudoCoresetDistiller`` records a trajectory buffer on ``(X, y)``, distills
a synthetic set and exposes it as ``X_coreset_`` / ``y_coreset_`` (also via
``fit_resample``), so a coreset can be dropped into ordinary sklearn code::

    Xs, ys = PseudoCoresetDistiller(ipc=10).fit_resample(X, y)
    NetClassifier().fit(Xs, ys).score(X_test, y_test)
"""

from __future__ import annotations

import tempfile
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import LabeledDataset
from .distill import DistillConfig, distill
from .energy import EnergySpec
from .langevin import LangevinConfig
from .models import ModelSpec, init_params, predict_logits
from .trajectory import Buffer, TrainConfig, record_trajectory, train_params


def _as_model_inputs(X, input_shape=None):
    X = check_array(X, allow_nd=True, dtype=np.float64)
    if input_shape is not None and X.shape[1:] != tuple(input_shape):
        X = X.reshape(len(X), *input_shape)
    return X


def _encode(y):
    classes = unique_labels(y)
    return classes, np.searchsorted(classes, y)


class NetClassifier(ClassifierMixin, BaseEstimator):
    """Small MLP/ConvNet trained by mini-batch SGD with momentum.

    Parameters
    ----------
    kind : {"mlp", "mlp-deep", "convnet-small", "convnet-wide"}, default="mlp"
    widths : tuple of int, optional
        Hidden widths or per-block channels; ``None`` uses the kind's default.
    input_shape : tuple of int, optional
        Per-example shape. Flat ``(n, d)`` input is reshaped to it when given.
    loss : {"ce", "focal", "margin"}, default="ce"
    epochs, lr, momentum, batch_size
        SGD schedule.
    random_state : int, default=0
        Seeds both the initialization and the mini-batch order.
    """

    def __init__(self, kind="mlp", widths=None, input_shape=None, loss="ce", epochs=300,
                 lr=0.01, momentum=0.9, batch_size=256, random_state=0):
        self.kind = kind
        self.widths = widths
        self.input_shape = input_shape
        self.loss = loss
        self.epochs = epochs
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        X = _as_model_inputs(X, self.input_shape)
        self.classes_, yi = _encode(y)
        self.spec_ = ModelSpec(self.kind, X.shape[1:], max(len(self.classes_), 2),
                               tuple(self.widths or ()))
        cfg = TrainConfig(lr=self.lr, momentum=self.momentum, batch_size=self.batch_size,
                          epochs=self.epochs)
        self.params_ = train_params(self.spec_, EnergySpec(self.loss), cfg, X, yi,
                                    init_params(self.spec_, self.random_state),
                                    np.random.default_rng([self.random_state, 3]))
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = _as_model_inputs(X, self.spec_.input_shape)
        return predict_logits(self.spec_, self.params_, X)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        winners = self.decision_function(X).argmax(axis=1)
        return self.classes_[winners]


class PseudoCoresetDistiller(BaseEstimator):
    """Learn ``ipc`` synthetic examples per class by contrastive divergence.

    ``fit`` records ``n_trajectories`` expert runs on ``(X, y)`` (into
    ``buffer_dir``, or a temporary directory), then distills.
    """

    def __init__(self, ipc=1, kind="mlp", widths=None, input_shape=None,
                 n_trajectories=10, trajectory_epochs=20, trajectory_lr=0.01,
                 trajectory_batch_size=64, real_loss="ce", energy="ce", horizon=1, k_max=2,
                 alpha=0.2, langevin_steps=20, noise_temperature=0.01, n_iter=400, lr=3.0,
                 momentum=0.5, anchors_per_step=4, init="real", buffer_dir=None, random_state=0):
        self.ipc = ipc
        self.kind = kind
        self.widths = widths
        self.input_shape = input_shape
        self.n_trajectories = n_trajectories
        self.trajectory_epochs = trajectory_epochs
        self.trajectory_lr = trajectory_lr
        self.trajectory_batch_size = trajectory_batch_size
        self.real_loss = real_loss
        self.energy = energy
        self.horizon = horizon
        self.k_max = k_max
        self.alpha = alpha
        self.langevin_steps = langevin_steps
        self.noise_temperature = noise_temperature
        self.n_iter = n_iter
        self.lr = lr
        self.momentum = momentum
        self.anchors_per_step = anchors_per_step
        self.init = init
        self.buffer_dir = buffer_dir
        self.random_state = random_state

    def _distill_config(self) -> DistillConfig:
        return DistillConfig(
            horizon=self.horizon, k_max=self.k_max, iterations=self.n_iter, lr=self.lr,
            momentum=self.momentum, energy=EnergySpec(self.energy), ipc=self.ipc, init=self.init,
            anchors_per_step=self.anchors_per_step,
            langevin=LangevinConfig(alpha=self.alpha, steps=self.langevin_steps,
                                    noise_temperature=self.noise_temperature),
            seed=self.random_state)

    def fit(self, X, y):
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float64)
        X = _as_model_inputs(X, self.input_shape)
        self.classes_, yi = _encode(y)
        data = LabeledDataset(X, yi, len(self.classes_), name="fit-data")
        self.spec_ = ModelSpec(self.kind, X.shape[1:], len(self.classes_),
                               tuple(self.widths or ()))
        cfg = self._distill_config()
        tcfg = TrainConfig(lr=self.trajectory_lr, batch_size=self.trajectory_batch_size,
                           epochs=self.trajectory_epochs)
        with tempfile.TemporaryDirectory() as tmp:
            buf = Buffer(self.buffer_dir or tmp)
            for i in range(self.n_trajectories):
                t = record_trajectory(data, self.spec_, EnergySpec(self.real_loss), tcfg,
                                      seed=self.random_state * 1000 + i)
                buf.save(t, f"traj{i:04d}")
            result = distill(data, buf, cfg, self.spec_)
        self.coreset_ = result.coreset
        self.history_ = result.history
        self.X_coreset_ = result.coreset.inputs.copy()
        self.y_coreset_ = self.classes_[result.coreset.class_labels]
        return self

    def fit_resample(self, X, y):
        self.fit(X, y)
        return self.X_coreset_, self.y_coreset_

    def get_coreset(self):
        check_is_fitted(self, "coreset_")
        return self.X_coreset_, self.y_coreset_
