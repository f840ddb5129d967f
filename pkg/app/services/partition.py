"""Разбиение датасета по клиентам: iid, #C, #D, Dirichlet(beta)"""
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from app.errors import PartitionError
from app.models.data import ClientShard, Dataset, PartitionKind, PartitionSpec, Sample
from app.services.seeding import make_rng

logger = logging.getLogger(__name__)


def client_ids(num_clients: int) -> List[str]:
    width = max(2, len(str(num_clients - 1)))
    return [f"client-{i:0{width}d}" for i in range(num_clients)]


@dataclass
class PartitionResult:
    """Разбиение и (для Dirichlet) матрица долей метка x клиент"""
    shards: List[ClientShard]
    proportions: Optional[np.ndarray] = None
    attempts: int = 1
    holders: Dict[int, List[int]] = field(default_factory=dict)


def _positions_by_label(dataset: Dataset, positions: Optional[Sequence[int]] = None) -> Dict[int, List[int]]:
    grouped: Dict[int, List[int]] = {label: [] for label in range(dataset.num_classes)}
    for position in (range(len(dataset)) if positions is None else positions):
        grouped[dataset.samples[position].label].append(position)
    return grouped


def _split_equally(positions: Sequence[int], holders: Sequence[int],
                   rng: np.random.Generator, offset: int = 0) -> Dict[int, List[int]]:
    """Перемешивает позиции и делит их поровну между держателями (остаток по кругу)"""
    shuffled = [positions[i] for i in rng.permutation(len(positions))]
    parts = np.array_split(np.arange(len(shuffled)), len(holders))
    assigned: Dict[int, List[int]] = {}
    for j, part in enumerate(parts):
        holder = holders[(j + offset) % len(holders)]
        assigned.setdefault(holder, []).extend(shuffled[i] for i in part)
    return assigned


def _build_shards(dataset: Dataset, assignment: List[List[int]]) -> List[ClientShard]:
    ids = client_ids(len(assignment))
    shards = []
    for client, positions in zip(ids, assignment):
        samples = [dataset.samples[p] for p in sorted(positions)]
        shards.append(ClientShard.from_samples(client, samples))
    return shards


def _partition_iid(dataset: Dataset, spec: PartitionSpec, rng) -> PartitionResult:
    n = spec.num_clients
    assignment: List[List[int]] = [[] for _ in range(n)]
    offset = 0
    for label, positions in _positions_by_label(dataset).items():
        for holder, taken in _split_equally(positions, list(range(n)), rng, offset).items():
            assignment[holder].extend(taken)
        offset += len(positions) % n
    return PartitionResult(_build_shards(dataset, assignment))


def _partition_classes(dataset: Dataset, spec: PartitionSpec, rng) -> PartitionResult:
    n, k, c = spec.num_clients, dataset.num_classes, spec.classes_per_client
    if n * c < k:
        raise PartitionError(
            f"{n} клиентов по {c} классов не покрывают {k} классов"
        )
    order = rng.permutation(k)
    holders: Dict[int, List[int]] = {label: [] for label in range(k)}
    for client in range(n):
        for j in range(c):
            holders[int(order[(client * c + j) % k])].append(client)
    assignment: List[List[int]] = [[] for _ in range(n)]
    for label, positions in _positions_by_label(dataset).items():
        if len(positions) < len(holders[label]):
            logger.warning("⚠️ Метка %d: %d примеров на %d держателей, часть клиентов её не получит",
                           label, len(positions), len(holders[label]))
        if not positions:
            continue
        for holder, taken in _split_equally(positions, holders[label], rng).items():
            assignment[holder].extend(taken)
    for client, positions in enumerate(assignment):
        if not positions:
            raise PartitionError(f"Клиент {client} не получил ни одного примера")
    return PartitionResult(_build_shards(dataset, assignment), holders=holders)


def _partition_domains(dataset: Dataset, spec: PartitionSpec, rng) -> PartitionResult:
    n, num_domains, d = spec.num_clients, dataset.num_domains, spec.domains_per_client
    if n * d < num_domains:
        raise PartitionError(
            f"{n} клиентов по {d} доменов не покрывают {num_domains} доменов"
        )
    holders: Dict[int, List[int]] = {domain: [] for domain in range(num_domains)}
    for client in range(n):
        for j in range(d):
            domain = (client * d + j) % num_domains
            if client not in holders[domain]:
                holders[domain].append(client)
    assignment: List[List[int]] = [[] for _ in range(n)]
    for domain in range(num_domains):
        in_domain = [p for p in range(len(dataset)) if dataset.domain_of(p) == domain]
        offset = 0
        for label, positions in _positions_by_label(dataset, in_domain).items():
            if not positions:
                continue
            for holder, taken in _split_equally(positions, holders[domain], rng, offset).items():
                assignment[holder].extend(taken)
            offset += len(positions) % len(holders[domain])
    return PartitionResult(_build_shards(dataset, assignment), holders=holders)


def _partition_dirichlet(dataset: Dataset, spec: PartitionSpec, rng) -> PartitionResult:
    n, k = spec.num_clients, dataset.num_classes
    by_label = _positions_by_label(dataset)
    for attempt in range(1, spec.max_retries + 1):
        proportions = np.zeros((k, n))
        assignment: List[List[int]] = [[] for _ in range(n)]
        for label, positions in by_label.items():
            shares = rng.dirichlet(np.full(n, spec.beta))
            proportions[label] = shares
            if not positions:
                continue
            shuffled = [positions[i] for i in rng.permutation(len(positions))]
            cuts = (np.cumsum(shares) * len(shuffled)).astype(int)[:-1]
            for client, part in enumerate(np.split(np.array(shuffled), cuts)):
                assignment[client].extend(int(p) for p in part)
        if all(assignment):
            return PartitionResult(_build_shards(dataset, assignment), proportions, attempt)
        logger.warning("⚠️ Dirichlet: пустой клиент, повторная выборка (попытка %d)", attempt)
    raise PartitionError(
        f"Dirichlet(beta={spec.beta}) не дал непустых долей за {spec.max_retries} попыток"
    )


_PARTITIONERS = {
    PartitionKind.IID: _partition_iid,
    PartitionKind.CLASSES: _partition_classes,
    PartitionKind.DOMAINS: _partition_domains,
    PartitionKind.DIRICHLET: _partition_dirichlet,
}


def partition_with_details(dataset: Dataset, spec: PartitionSpec) -> PartitionResult:
    """
    Разбивает датасет и возвращает служебные подробности (доли, держатели)

    Args:
        dataset: Исходный датасет
        spec: Параметры разбиения

    Returns:
        PartitionResult
    """
    spec.validate(dataset.num_classes, dataset.num_domains)
    rng = make_rng(spec.seed, 'partition', spec.kind.value)
    result = _PARTITIONERS[spec.kind](dataset, spec, rng)
    logger.info("✅ Разбиение %s: %s", spec.kind.value,
                ", ".join(f"{s.client_id}={len(s)}" for s in result.shards))
    return result


def partition(dataset: Dataset, spec: PartitionSpec) -> List[ClientShard]:
    """Непересекающееся покрытие датасета шардами клиентов"""
    return partition_with_details(dataset, spec).shards


def split_train_test(shard: ClientShard, test_fraction: float = 0.2, seed: int = 0) -> ClientShard:
    """
    Отделяет тестовую часть шарда по каждой метке

    Args:
        shard: Шард клиента
        test_fraction: Доля тестовых примеров каждой метки (округление вниз)
        seed: Зерно генератора

    Returns:
        Новый шард с обучающими samples и test_samples
    """
    if not 0.0 <= test_fraction < 1.0:
        raise PartitionError("test_fraction должен быть в [0, 1)")
    rng = make_rng(seed, 'split', shard.client_id)
    train: List[Sample] = []
    test: List[Sample] = []
    for label in shard.labels:
        samples = shard.samples_of(label)
        order = rng.permutation(len(samples))
        n_test = int(np.floor(len(samples) * test_fraction))
        test.extend(samples[i] for i in order[:n_test])
        train.extend(samples[i] for i in order[n_test:])
    train.sort(key=lambda s: s.index)
    test.sort(key=lambda s: s.index)
    return ClientShard(client_id=shard.client_id, samples=tuple(train), test_samples=tuple(test))


def shard_digest(shards: Sequence[ClientShard]) -> str:
    """SHA-256 по индексам, меткам и байтам признаков всех шардов"""
    digest = hashlib.sha256()
    for shard in shards:
        digest.update(shard.client_id.encode('utf-8'))
        for part, samples in ((b'train', shard.samples), (b'test', shard.test_samples)):
            digest.update(part)
            for sample in samples:
                digest.update(int(sample.index).to_bytes(8, 'little', signed=True))
                digest.update(int(sample.label).to_bytes(8, 'little', signed=True))
                digest.update(np.ascontiguousarray(sample.features, dtype='<f8').tobytes())
    return digest.hexdigest()
