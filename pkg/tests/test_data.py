import logging
import struct

import numpy as np
import pytest

from app.errors import ConfigurationError, FormatError, PartitionError
from app.models.data import ClientShard, Dataset, PartitionKind, PartitionSpec
from app.services.datasets import load_csv, load_idx_images, make_digits, make_synthetic
from app.services.model_core import logistic_regression, sgd_step
from app.services.partition import (
    client_ids, partition, partition_with_details, shard_digest, split_train_test
)
from helpers import make_samples


def _indices(shards):
    return sorted(s.index for shard in shards for s in shard.samples)


def test_digits_shape_and_range():
    dataset = make_digits(samples_per_class=3, seed=0)
    assert len(dataset) == 30
    assert dataset.num_classes == 10
    assert dataset.feature_shape == (1, 8, 8)
    features = np.stack([s.features for s in dataset.samples])
    assert features.min() >= 0.0 and features.max() <= 1.0


def test_digits_are_deterministic():
    first = make_digits(samples_per_class=2, seed=5, size=16)
    second = make_digits(samples_per_class=2, seed=5, size=16)
    assert first.feature_shape == (1, 16, 16)
    for a, b in zip(first.samples, second.samples):
        np.testing.assert_array_equal(a.features, b.features)


def test_digits_reject_bad_size():
    with pytest.raises(ConfigurationError):
        make_digits(samples_per_class=1, seed=0, size=12)


def test_synthetic_domain_shift_is_exact():
    dataset = make_synthetic(num_classes=2, samples_per_class=3, num_domains=3, seed=0,
                             dim=4, shift=1.5, rotation=0.0)
    assert dataset.num_domains == 3
    per_domain = 2 * 3
    for domain in range(3):
        for i in range(per_domain):
            delta = dataset.samples[domain * per_domain + i].features - dataset.samples[i].features
            assert np.linalg.norm(delta) == pytest.approx(domain * 1.5)


def test_classifier_from_first_domain_degrades_on_shifted_domain():
    dataset = make_synthetic(num_classes=4, samples_per_class=60, num_domains=2, seed=3, dim=4,
                             shift=8.0, rotation=1.2)
    first = [s for p, s in enumerate(dataset.samples) if dataset.domain_of(p) == 0]
    second = [s for p, s in enumerate(dataset.samples) if dataset.domain_of(p) == 1]
    train = [s for i, s in enumerate(first) if i % 3]
    held_out = [s for i, s in enumerate(first) if not i % 3]
    shifted = [s for i, s in enumerate(second) if not i % 3]

    model = logistic_regression((4,), 4)
    params = model.init_params(0)
    for _ in range(300):
        params = sgd_step(params, model.grad_summed(params, train), 0.5, len(train))

    def accuracy(samples):
        features = np.stack([s.features for s in samples])
        return float(np.mean(model.predict(params, features) == np.array([s.label for s in samples])))

    assert accuracy(shifted) < accuracy(held_out)


def test_dataset_rejects_out_of_range_label():
    samples = make_samples({0: 1, 3: 1})
    with pytest.raises(ConfigurationError):
        Dataset(samples=samples, num_classes=3)


def test_load_idx_images(write_idx):
    images = np.arange(12, dtype=np.uint8).reshape(3, 2, 2) * 20
    path = write_idx(images, [0, 1, 2])
    dataset = load_idx_images(path)
    assert len(dataset) == 3
    assert dataset.num_classes == 10
    assert dataset.feature_shape == (1, 2, 2)
    np.testing.assert_allclose(dataset.samples[1].features[0], images[1] / 255.0)
    assert [s.label for s in dataset.samples] == [0, 1, 2]


def test_load_idx_rejects_truncated_file(write_idx):
    path = write_idx(np.zeros((2, 3, 3)), [0, 1])
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError):
        load_idx_images(path)


def test_load_idx_rejects_bad_magic(write_idx):
    path = write_idx(np.zeros((1, 2, 2)), [0])
    data = bytearray(path.read_bytes())
    data[:4] = struct.pack('>I', 0x00000802)
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError) as info:
        load_idx_images(path)
    assert info.value.offset == 0


def test_load_idx_requires_labels_path_for_unusual_names(tmp_path):
    path = tmp_path / 'pixels.bin'
    path.write_bytes(b'')
    with pytest.raises(ConfigurationError):
        load_idx_images(path)


def test_load_csv(tmp_path):
    path = tmp_path / 'table.csv'
    path.write_text("a,b,label\n1.0,2.0,0\n3.0,4.0,2\n", encoding='utf-8')
    dataset = load_csv(path)
    assert dataset.num_classes == 3
    np.testing.assert_array_equal(dataset.samples[1].features, [3.0, 4.0])


def test_load_csv_rejects_fractional_label(tmp_path):
    path = tmp_path / 'table.csv'
    path.write_text("a,label\n1.0,0\n2.0,0.5\n", encoding='utf-8')
    with pytest.raises(FormatError) as info:
        load_csv(path)
    assert info.value.offset == 3


def test_client_ids_are_sortable():
    assert client_ids(3) == ['client-00', 'client-01', 'client-02']
    ids = client_ids(120)
    assert ids == sorted(ids)


def test_iid_partition_balances_labels(tiny_dataset):
    shards = partition(tiny_dataset, PartitionSpec(PartitionKind.IID, num_clients=4))
    assert _indices(shards) == list(range(len(tiny_dataset)))
    for shard in shards:
        assert shard.label_counts == {0: 5, 1: 5, 2: 5, 3: 5}


def test_classes_per_client_partition(tiny_dataset):
    spec = PartitionSpec(PartitionKind.CLASSES, num_clients=6, classes_per_client=2, seed=3)
    result = partition_with_details(tiny_dataset, spec)
    assert _indices(result.shards) == list(range(len(tiny_dataset)))
    for shard in result.shards:
        assert len(shard.labels) == 2
    assert set(result.holders) == {0, 1, 2, 3}
    assert all(result.holders.values())


def test_classes_partition_warns_about_rare_labels(caplog):
    dataset = Dataset(samples=tuple(make_samples({0: 1, 1: 6})), num_classes=2)
    spec = PartitionSpec(PartitionKind.CLASSES, num_clients=3, classes_per_client=2, seed=0)
    with caplog.at_level(logging.WARNING):
        shards = partition(dataset, spec)
    assert 'Метка 0' in caplog.text
    assert all(shard.samples for shard in shards)
    assert sum(shard.label_counts.get(0, 0) for shard in shards) == 1


def test_classes_partition_rejects_clients_without_samples():
    dataset = Dataset(samples=tuple(make_samples({0: 1, 1: 1})), num_classes=2)
    spec = PartitionSpec(PartitionKind.CLASSES, num_clients=3, classes_per_client=2, seed=0)
    with pytest.raises(PartitionError):
        partition(dataset, spec)


def test_classes_per_client_must_cover_all_classes(tiny_dataset):
    spec = PartitionSpec(PartitionKind.CLASSES, num_clients=1, classes_per_client=2)
    with pytest.raises(PartitionError):
        partition(tiny_dataset, spec)


def test_domains_per_client_partition(domain_dataset):
    spec = PartitionSpec(PartitionKind.DOMAINS, num_clients=3, domains_per_client=1)
    shards = partition(domain_dataset, spec)
    assert _indices(shards) == list(range(len(domain_dataset)))
    for shard in shards:
        domains = {domain_dataset.domain_tags[s.index] for s in shard.samples}
        assert len(domains) == 1
        assert shard.labels == (0, 1, 2)


def test_domains_per_client_validation(domain_dataset):
    spec = PartitionSpec(PartitionKind.DOMAINS, num_clients=3, domains_per_client=4)
    with pytest.raises(ConfigurationError):
        partition(domain_dataset, spec)


def test_dirichlet_partition(tiny_dataset):
    spec = PartitionSpec(PartitionKind.DIRICHLET, num_clients=3, beta=1.0, seed=2)
    result = partition_with_details(tiny_dataset, spec)
    assert _indices(result.shards) == list(range(len(tiny_dataset)))
    assert all(len(shard) > 0 for shard in result.shards)
    np.testing.assert_allclose(result.proportions.sum(axis=1), 1.0)


def test_dirichlet_requires_positive_beta(tiny_dataset):
    with pytest.raises(ConfigurationError):
        partition(tiny_dataset, PartitionSpec(PartitionKind.DIRICHLET, num_clients=3, beta=0.0))


def test_split_train_test_per_label():
    shard = ClientShard.from_samples('client-00', make_samples({0: 5, 1: 3}))
    split = split_train_test(shard, test_fraction=0.4, seed=1)
    assert split.label_counts == {0: 3, 1: 2}
    assert len(split.test_samples) == 3
    train = {s.index for s in split.samples}
    test = {s.index for s in split.test_samples}
    assert not train & test
    assert train | test == set(range(8))


def test_split_train_test_rejects_full_fraction():
    shard = ClientShard.from_samples('client-00', make_samples({0: 2}))
    with pytest.raises(PartitionError):
        split_train_test(shard, test_fraction=1.0)


def test_shard_digest_is_reproducible(tiny_dataset):
    spec = PartitionSpec(PartitionKind.CLASSES, num_clients=4, classes_per_client=1, seed=0)
    other = PartitionSpec(PartitionKind.IID, num_clients=4, seed=0)
    digest = shard_digest(partition(tiny_dataset, spec))
    assert digest == shard_digest(partition(tiny_dataset, spec))
    assert digest != shard_digest(partition(tiny_dataset, other))


def test_shard_rejects_inconsistent_counts():
    with pytest.raises(ConfigurationError):
        ClientShard(client_id='c', samples=tuple(make_samples({0: 2})), label_counts={0: 3})
