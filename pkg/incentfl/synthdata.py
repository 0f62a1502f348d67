"""
Synthetic classification tasks: class-conditional Gaussian blobs, split
IID among clients by contribution size, plus the server's validation holdout.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .enums import SizeKind


__all__ = [
    "DataPoint",
    "Dataset",
    "SizeDistribution",
    "TaskSpec",
    "generate_task",
    "sample_sizes",
    "STANDARD_SIZES",
    "standard_task_spec",
]


class DataPoint(NamedTuple):
    features: np.ndarray
    label: int


class Dataset:
    """A set of labeled points, stored as a feature matrix and a label vector.

    Arguments:
        features (array): shape (n, feature_dim), converted to float64.
        labels (array): shape (n,), integers in ``[0, num_classes)``.
        num_classes (int): number of classes of the task.
        feature_dim (int, optional): defaults to ``features.shape[1]``.
    """

    def __init__(self, features, labels, num_classes, feature_dim=None):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if feature_dim is None:
            feature_dim = features.shape[1] if features.ndim == 2 else 0
        num_classes, feature_dim = int(num_classes), int(feature_dim)
        if num_classes < 1 or feature_dim < 1:
            raise ValueError("Dataset dims must be positive.")
        features = features.reshape(-1, feature_dim)
        labels = labels.reshape(-1)
        if len(features) != len(labels):
            raise ValueError("Dataset features and labels differ in length.")
        if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"Dataset labels must be in [0, {num_classes}).")
        self.features = features
        self.labels = labels
        self.num_classes = num_classes
        self.feature_dim = feature_dim

    @classmethod
    def empty(cls, num_classes, feature_dim):
        return cls(np.zeros((0, feature_dim)), np.zeros(0), num_classes, feature_dim)

    def __repr__(self):
        return f"<Dataset with {len(self)} points, {self.feature_dim} features, {self.num_classes} classes>"

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, index):
        return DataPoint(self.features[index], int(self.labels[index]))

    @property
    def points(self):
        """The points as a list of ``DataPoint``."""
        return [self[i] for i in range(len(self))]

    def take(self, n):
        """Get a dataset with the first ``n`` points.

        A client contributing ``d_i`` points contributes a prefix of its
        local data, so smaller contributions are subsets of larger ones.
        """
        n = int(n)
        if not 0 <= n <= len(self):
            raise ValueError(f"Cannot take {n} points from a dataset of {len(self)}.")
        return Dataset(self.features[:n], self.labels[:n], self.num_classes, self.feature_dim)

    def select(self, indices):
        """Get a dataset with the points at the given indices."""
        return Dataset(
            self.features[indices], self.labels[indices], self.num_classes, self.feature_dim
        )

    def concat(self, other):
        if (other.num_classes, other.feature_dim) != (self.num_classes, self.feature_dim):
            raise ValueError("Cannot concatenate datasets of different tasks.")
        return Dataset(
            np.concatenate([self.features, other.features]),
            np.concatenate([self.labels, other.labels]),
            self.num_classes,
            self.feature_dim,
        )

    def class_frequencies(self):
        """The fraction of points per class (zeros for an empty dataset)."""
        counts = np.bincount(self.labels, minlength=self.num_classes).astype(np.float64)
        return counts / len(self) if len(self) else counts


@dataclass(frozen=True)
class SizeDistribution:
    """The distribution of client data sizes.

    Use the constructors ``uniform(d_max)``, ``pareto(a, x_m)``,
    ``exponential(rate)`` and ``explicit(sizes)``.
    """

    kind: str
    d_max: float = 0.0
    shape: float = 0.0
    scale: float = 0.0
    rate: float = 0.0
    sizes: tuple = ()

    def __post_init__(self):
        if self.kind == SizeKind.uniform:
            if not self.d_max > 0:
                raise ValueError("Uniform size distribution needs d_max > 0.")
        elif self.kind == SizeKind.pareto:
            if not self.shape > 1:
                raise ValueError("Pareto size distribution needs shape a > 1 (finite mean).")
            if not self.scale > 0:
                raise ValueError("Pareto size distribution needs scale x_m > 0.")
        elif self.kind == SizeKind.exponential:
            if not self.rate > 0:
                raise ValueError("Exponential size distribution needs rate > 0.")
        elif self.kind == SizeKind.explicit:
            if any(s < 0 for s in self.sizes):
                raise ValueError("Explicit sizes must be non-negative.")
        else:
            raise ValueError(f"Unknown size distribution kind: {self.kind!r}")

    @classmethod
    def uniform(cls, d_max):
        return cls(SizeKind.uniform, d_max=float(d_max))

    @classmethod
    def pareto(cls, a, x_m):
        return cls(SizeKind.pareto, shape=float(a), scale=float(x_m))

    @classmethod
    def exponential(cls, rate):
        return cls(SizeKind.exponential, rate=float(rate))

    @classmethod
    def explicit(cls, sizes):
        return cls(SizeKind.explicit, sizes=tuple(int(s) for s in sizes))

    def mean(self):
        """The expected size of a single client."""
        if self.kind == SizeKind.uniform:
            return self.d_max / 2
        elif self.kind == SizeKind.pareto:
            return self.shape * self.scale / (self.shape - 1)
        elif self.kind == SizeKind.exponential:
            return 1.0 / self.rate
        return float(np.mean(self.sizes)) if self.sizes else 0.0

    def support_max(self):
        """A representative upper end of the support, used to scale numerics."""
        if self.kind == SizeKind.uniform:
            return self.d_max
        elif self.kind == SizeKind.pareto:
            return self.scale * 1000.0 ** (1.0 / self.shape)  # 0.999 quantile
        elif self.kind == SizeKind.exponential:
            return np.log(1000.0) / self.rate
        return float(max(self.sizes, default=1)) or 1.0


@dataclass
class TaskSpec:
    """Specification of a synthetic task and its split among clients."""

    num_classes: int = 2
    feature_dim: int = 2
    class_separation: float = 1.0
    samples_per_client: Sequence[int] = field(default_factory=list)
    validation_size: int = 1000
    seed: int = 0

    def validate(self):
        if self.num_classes < 1 or self.feature_dim < 1:
            raise ValueError("Task dims (num_classes, feature_dim) must be positive.")
        if self.validation_size < 1:
            raise ValueError("Task validation_size must be at least 1.")
        if any(int(n) < 0 for n in self.samples_per_client):
            raise ValueError("Task samples_per_client must be non-negative.")
        if not self.class_separation >= 0:
            raise ValueError("Task class_separation must be non-negative.")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("Task seed must be a 64-bit unsigned integer.")


def class_direction(feature_dim):
    """The fixed unit direction along which the class means are placed."""
    return np.ones(feature_dim) / np.sqrt(feature_dim)


def _draw_points(rng, n, spec):
    labels = rng.integers(0, spec.num_classes, size=n)
    noise = rng.standard_normal((n, spec.feature_dim))
    offsets = labels[:, None] * spec.class_separation * class_direction(spec.feature_dim)
    return Dataset(noise + offsets, labels, spec.num_classes, spec.feature_dim)


def generate_task(spec):
    """Generate client datasets and a validation dataset for the given TaskSpec.

    Class ``c`` is an isotropic unit Gaussian with mean ``c * separation``
    along a fixed unit direction. Every client, and the validation set,
    draws from its own random stream spawned from ``spec.seed``, so a
    client's data does not depend on the sizes of the other clients.

    Returns ``(client_datasets, validation)``.
    """
    spec.validate()
    n_clients = len(spec.samples_per_client)
    streams = np.random.SeedSequence(int(spec.seed)).spawn(n_clients + 1)
    clients = [
        _draw_points(np.random.default_rng(streams[k]), int(size), spec)
        for k, size in enumerate(spec.samples_per_client)
    ]
    validation = _draw_points(np.random.default_rng(streams[-1]), spec.validation_size, spec)
    return clients, validation


def sample_sizes(dist, n, seed):
    """Sample ``n`` client sizes from a SizeDistribution.

    Continuous draws are rounded to the nearest integer and floored at 1,
    so that every sampled client can train. Explicit distributions return
    their sizes verbatim.
    """
    n = int(n)
    if n < 1:
        raise ValueError("sample_sizes needs n >= 1.")
    if dist.kind == SizeKind.explicit:
        if len(dist.sizes) != n:
            raise ValueError(f"Explicit sizes have length {len(dist.sizes)}, expected {n}.")
        return list(dist.sizes)

    rng = np.random.default_rng(int(seed))
    if dist.kind == SizeKind.uniform:
        draws = rng.uniform(0.0, dist.d_max, n)
    elif dist.kind == SizeKind.pareto:
        # numpy draws the Lomax form; shift and scale to the classic Pareto
        draws = (rng.pareto(dist.shape, n) + 1.0) * dist.scale
    else:
        draws = rng.exponential(1.0 / dist.rate, n)
    return [max(1, int(v)) for v in np.rint(draws)]


# Ten clients with 50, 100, ..., 500 points
STANDARD_SIZES = tuple(range(50, 501, 50))


def standard_task_spec(seed=0, sizes=STANDARD_SIZES):
    """The standard synthetic task: two well separated classes in 8 dimensions.

    Paired with ``standard_train_config``, models stay far below the Bayes
    accuracy for the whole run, so accuracy keeps growing with the data a
    model has been trained on. The large validation set keeps the ranking
    noise small.
    """
    return TaskSpec(
        num_classes=2,
        feature_dim=8,
        class_separation=6.0,
        samples_per_client=list(sizes),
        validation_size=10000,
        seed=seed,
    )
