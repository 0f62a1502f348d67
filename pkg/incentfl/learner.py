"""
Multinomial logistic regression trained with minibatch gradient descent.

A model is a flat float64 vector of length ``(F + 1) * C``: the ``F x C``
weight matrix in row-major order, followed by ``C`` biases.
"""

from dataclasses import dataclass

import numpy as np

from .synthdata import class_direction


__all__ = [
    "TrainConfig",
    "standard_train_config",
    "init_model",
    "loss_and_gradient",
    "local_train",
    "evaluate",
    "predict",
    "bayes_accuracy",
]


@dataclass(frozen=True)
class TrainConfig:
    """Local training settings: step size eta, local epochs E, batch size, seed."""

    learning_rate: float = 0.1
    local_epochs: int = 1
    batch_size: int = 16
    seed: int = 0

    def validate(self):
        if not self.learning_rate > 0:
            raise ValueError("TrainConfig learning_rate must be positive.")
        if self.local_epochs < 0:
            raise ValueError("TrainConfig local_epochs must be non-negative.")
        if self.batch_size < 1:
            raise ValueError("TrainConfig batch_size must be at least 1.")


def standard_train_config(seed=0):
    """The training settings of the standard run: one epoch per round with a
    small step size, for use with ``standard_task_spec``.
    """
    return TrainConfig(learning_rate=0.005, local_epochs=1, batch_size=16, seed=seed)


def model_size(feature_dim, num_classes):
    return (feature_dim + 1) * num_classes


def _unpack(model, feature_dim, num_classes):
    model = np.asarray(model, dtype=np.float64)
    if model.shape != (model_size(feature_dim, num_classes),):
        raise ValueError(
            f"Model has {model.size} values, expected {model_size(feature_dim, num_classes)} "
            f"for {feature_dim} features and {num_classes} classes."
        )
    n = feature_dim * num_classes
    return model[:n].reshape(feature_dim, num_classes), model[n:]


def _logits(model, features, num_classes):
    weights, bias = _unpack(model, features.shape[1], num_classes)
    return features @ weights + bias


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    with np.errstate(under="ignore"):
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def init_model(feature_dim, num_classes, seed):
    """Create a model with values drawn uniformly from [-0.01, 0.01].

    The same seed gives the same model, so all clients can start from the
    common initial model.
    """
    if feature_dim < 1 or num_classes < 1:
        raise ValueError("Model dims must be positive.")
    rng = np.random.default_rng(int(seed))
    return rng.uniform(-0.01, 0.01, model_size(feature_dim, num_classes))


def loss_and_gradient(model, batch):
    """Get the mean cross-entropy of the model over the batch, and its
    exact gradient with respect to the model values.
    """
    if len(batch) == 0:
        raise ValueError("Cannot compute the loss over an empty batch.")
    n = len(batch)
    log_probs = _log_softmax(_logits(model, batch.features, batch.num_classes))
    rows = np.arange(n)
    loss = -log_probs[rows, batch.labels].mean()

    with np.errstate(under="ignore"):
        delta = np.exp(log_probs)
    delta[rows, batch.labels] -= 1.0
    delta /= n
    grad_weights = batch.features.T @ delta
    grad_bias = delta.sum(axis=0)
    return float(loss), np.concatenate([grad_weights.ravel(), grad_bias])


def local_train(model, dataset, cfg, stream=()):
    """Run ``cfg.local_epochs`` epochs of minibatch gradient descent.

    Batches come from a shuffle per epoch, seeded by ``cfg.seed`` and the
    optional ``stream`` ints (e.g. client id and round), so results do not
    depend on the order in which clients are trained. The input model is
    not modified.
    """
    cfg.validate()
    model = np.array(model, dtype=np.float64)
    if cfg.local_epochs == 0:
        return model
    if len(dataset) == 0:
        raise ValueError("Cannot train on an empty dataset.")

    rng = np.random.default_rng([int(cfg.seed), *(int(s) for s in stream)])
    n = len(dataset)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = dataset.select(order[start : start + cfg.batch_size])
            _, grad = loss_and_gradient(model, batch)
            model -= cfg.learning_rate * grad
    return model


def predict(model, features, num_classes):
    """Predict class indices; argmax ties resolve to the lowest class index."""
    features = np.asarray(features, dtype=np.float64)
    return np.argmax(_logits(model, features, num_classes), axis=1)


def evaluate(model, dataset):
    """Get ``(accuracy, loss)`` of the model on the dataset."""
    if len(dataset) == 0:
        raise ValueError("Cannot evaluate on an empty dataset.")
    loss, _ = loss_and_gradient(model, dataset)
    predictions = predict(model, dataset.features, dataset.num_classes)
    accuracy = float(np.mean(predictions == dataset.labels))
    return accuracy, loss


def bayes_accuracy(dataset, separation):
    """Accuracy of the Bayes-optimal classifier for the synthetic Gaussian task.

    With equal priors and identity covariance the Bayes rule picks the
    class mean nearest to the projection of a point on the class direction.
    """
    if len(dataset) == 0:
        raise ValueError("Cannot evaluate on an empty dataset.")
    if separation <= 0:
        predictions = np.zeros(len(dataset), dtype=np.int64)
    else:
        projection = dataset.features @ class_direction(dataset.feature_dim)
        predictions = np.clip(np.rint(projection / separation), 0, dataset.num_classes - 1)
    return float(np.mean(predictions == dataset.labels))
