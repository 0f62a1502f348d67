import numpy as np
from pytest import raises
from scipy import stats

import incentfl
from incentfl import Dataset, SizeDistribution, TaskSpec, generate_task, sample_sizes
from testutils import run_tests, make_dataset


def test_generate_task_sizes():
    spec = TaskSpec(num_classes=3, feature_dim=4, samples_per_client=[5, 0, 12], validation_size=50)
    clients, validation = generate_task(spec)

    assert [len(c) for c in clients] == [5, 0, 12]
    assert len(validation) == 50
    for ds in clients + [validation]:
        assert ds.features.shape == (len(ds), 4)
        assert ds.num_classes == 3
        assert all(0 <= label < 3 for label in ds.labels)


def test_generate_task_deterministic():
    spec = TaskSpec(samples_per_client=[10, 20], seed=42)
    clients1, val1 = generate_task(spec)
    clients2, val2 = generate_task(spec)
    for a, b in zip(clients1 + [val1], clients2 + [val2]):
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    # Another seed gives other data
    clients3, _ = generate_task(TaskSpec(samples_per_client=[10, 20], seed=43))
    assert not np.array_equal(clients1[0].features, clients3[0].features)


def test_generate_task_client_streams_are_independent():
    # A client's data does not depend on the sizes of the others
    clients1, _ = generate_task(TaskSpec(samples_per_client=[10, 20], seed=1))
    clients2, _ = generate_task(TaskSpec(samples_per_client=[10, 300], seed=1))
    assert np.array_equal(clients1[0].features, clients2[0].features)


def test_generate_task_class_means():
    spec = TaskSpec(feature_dim=2, class_separation=3.0, samples_per_client=[], validation_size=4000)
    _, validation = generate_task(spec)
    direction = incentfl.synthdata.class_direction(2)
    for c in range(2):
        mean = validation.features[validation.labels == c].mean(axis=0)
        assert np.allclose(mean, c * 3.0 * direction, atol=0.1)


def test_generate_task_class_frequencies_are_uniform():
    spec = TaskSpec(num_classes=3, samples_per_client=[1000, 2500], validation_size=3000, seed=8)
    clients, validation = generate_task(spec)
    for ds in clients + [validation]:
        counts = np.bincount(ds.labels, minlength=3)
        assert stats.chisquare(counts).pvalue > 0.001, counts


def test_zero_separation_makes_labels_uninformative():
    spec = TaskSpec(class_separation=0.0, samples_per_client=[1000], validation_size=4000, seed=4)
    (local,), validation = generate_task(spec)
    for c in range(2):
        mean = validation.features[validation.labels == c].mean(axis=0)
        assert np.allclose(mean, 0.0, atol=0.1)

    # A trained model does no better than chance
    cfg = incentfl.TrainConfig(local_epochs=10, seed=4)
    model = incentfl.local_train(incentfl.init_model(2, 2, seed=4), local, cfg)
    assert abs(incentfl.evaluate(model, validation)[0] - 0.5) < 0.05


def test_task_spec_validation():
    with raises(ValueError):
        generate_task(TaskSpec(num_classes=0))
    with raises(ValueError):
        generate_task(TaskSpec(validation_size=0))
    with raises(ValueError):
        generate_task(TaskSpec(samples_per_client=[3, -1]))
    with raises(ValueError):
        generate_task(TaskSpec(class_separation=-1.0))


def test_dataset_basics():
    ds = make_dataset(10, feature_dim=3, num_classes=2)
    assert len(ds) == 10
    assert "10 points" in repr(ds)

    point = ds[3]
    assert point.features.shape == (3,)
    assert point.label in (0, 1)
    assert len(ds.points) == 10

    with raises(ValueError):
        Dataset(np.zeros((3, 2)), [0, 1], 2)  # length mismatch
    with raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, 2], 2)  # label out of range


def test_dataset_take_is_a_prefix():
    ds = make_dataset(10)
    part = ds.take(4)
    assert len(part) == 4
    assert np.array_equal(part.features, ds.features[:4])
    assert len(ds.take(0)) == 0
    with raises(ValueError):
        ds.take(11)


def test_dataset_concat_and_frequencies():
    a = Dataset(np.zeros((3, 2)), [0, 0, 1], 2)
    b = Dataset(np.ones((1, 2)), [1], 2)
    c = a.concat(b)
    assert len(c) == 4
    assert np.allclose(c.class_frequencies(), [0.5, 0.5])

    empty = Dataset.empty(3, 2)
    assert len(empty) == 0
    assert np.array_equal(empty.class_frequencies(), [0, 0, 0])

    with raises(ValueError):
        a.concat(Dataset.empty(3, 2))


def test_size_distribution_validation():
    with raises(ValueError):
        SizeDistribution.uniform(0)
    with raises(ValueError):
        SizeDistribution.pareto(1.0, 10)  # infinite mean
    with raises(ValueError):
        SizeDistribution.pareto(2.0, 0)
    with raises(ValueError):
        SizeDistribution.exponential(0)
    with raises(ValueError):
        SizeDistribution.explicit([1, -2])
    with raises(ValueError):
        SizeDistribution("gaussian")


def test_size_distribution_mean():
    assert SizeDistribution.uniform(100).mean() == 50
    assert SizeDistribution.pareto(2, 10).mean() == 20
    assert SizeDistribution.exponential(0.01).mean() == 100
    assert SizeDistribution.explicit([10, 20, 60]).mean() == 30


def test_sample_sizes():
    # Explicit sizes are returned verbatim
    assert sample_sizes(SizeDistribution.explicit([5, 7, 9]), 3, seed=0) == [5, 7, 9]
    with raises(ValueError):
        sample_sizes(SizeDistribution.explicit([5, 7, 9]), 4, seed=0)
    with raises(ValueError):
        sample_sizes(SizeDistribution.uniform(10), 0, seed=0)

    sizes = sample_sizes(SizeDistribution.uniform(100), 500, seed=1)
    assert len(sizes) == 500
    assert all(1 <= s <= 100 for s in sizes)
    assert all(isinstance(s, int) for s in sizes)

    # Large samples match the distribution means
    assert abs(np.mean(sample_sizes(SizeDistribution.uniform(100), 10000, seed=2)) - 50) < 2.5
    assert abs(np.mean(sample_sizes(SizeDistribution.pareto(2, 10), 10000, seed=2)) - 20) < 2.0

    sizes = sample_sizes(SizeDistribution.pareto(2.0, 10), 500, seed=1)
    assert min(sizes) >= 10

    sizes = sample_sizes(SizeDistribution.exponential(0.01), 2000, seed=1)
    assert min(sizes) >= 1
    assert 80 < np.mean(sizes) < 120

    # Deterministic
    dist = SizeDistribution.pareto(1.5, 5)
    assert sample_sizes(dist, 20, seed=3) == sample_sizes(dist, 20, seed=3)


def test_standard_task_spec():
    spec = incentfl.standard_task_spec(seed=5)
    assert list(spec.samples_per_client) == list(range(50, 501, 50))
    assert spec.seed == 5
    assert (spec.num_classes, spec.feature_dim) == (2, 8)
    assert spec.class_separation == 6.0
    assert spec.validation_size == 10000
    spec.validate()



if __name__ == "__main__":
    run_tests(globals())
