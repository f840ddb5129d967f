"""Протокол маскирования меток: поиск уникальных меток, плейсхолдеры, глобальные количества"""
import logging
from collections import defaultdict
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import (
    BackendPrecisionError, FedSlsError, ProtocolAbort, ProtocolIntegrityError
)
from app.models.data import ClientShard
from app.models.messages import Message, MessageKind, Transcript
from app.models.privacy import (
    Ciphertext, GlobalCounts, LabelProtocolResult, MaskedLabelRecord, PlaceholderMap
)
from app.models.schedule import Placeholder
from app.services.he_backends import BaseAheBackend
from app.services.network import Network
from app.services.seeding import make_rng

logger = logging.getLogger(__name__)

# Порог равенства целых меток при приближённой арифметике
ZERO_THRESHOLD = 0.5

# Сообщения серверу, в которых числа допустимы: модели, градиенты,
# статистики BatchNorm, раскрытые суммы и отчёты взвешенного режима
EXEMPT_KINDS = frozenset({
    MessageKind.GRAD_RETURN,
    MessageKind.MODEL_RELAY,
    MessageKind.MODEL_BROADCAST,
    MessageKind.BN_STATS_UPLOAD,
    MessageKind.COUNT_REVEAL_RESPONSE,
    MessageKind.COUNT_REPORT,
})

# (владелец записи, разности) -> признак нуля для каждой разности
ZeroTest = Callable[[str, List[Ciphertext]], List[bool]]
# (клиент, шифртексты) -> расшифрованные значения
Reveal = Callable[[str, List[Ciphertext]], List[float]]


def local_zero_test(backend: BaseAheBackend) -> ZeroTest:
    """Проверка на ноль расшифровкой тем же ключом (модель общего ключа)"""
    def is_zero(owner: str, diffs: List[Ciphertext]) -> List[bool]:
        return [abs(backend.decrypt(diff)) < ZERO_THRESHOLD for diff in diffs]
    return is_zero


def local_reveal(backend: BaseAheBackend) -> Reveal:
    def reveal(holder: str, totals: List[Ciphertext]) -> List[float]:
        return [backend.decrypt(total) for total in totals]
    return reveal


def mask_labels(shard: ClientShard, backend: BaseAheBackend) -> Tuple[MaskedLabelRecord, List[int]]:
    """
    Шифрует пары (метка, количество) клиента

    Returns:
        (запись для сервера, открытые метки в порядке пар; остаются у клиента)
    """
    plain_labels = list(shard.labels)
    pairs = tuple(
        (backend.encrypt(label), backend.encrypt(shard.label_counts[label]))
        for label in plain_labels
    )
    return MaskedLabelRecord(client_id=shard.client_id, pairs=pairs), plain_labels


def discover_unique_labels(records: Sequence[MaskedLabelRecord], backend: BaseAheBackend,
                           known_total: Optional[int] = None,
                           is_zero: Optional[ZeroTest] = None) -> List[Ciphertext]:
    """
    Находит уникальные зашифрованные метки

    Список начинается с меток первого клиента; каждая следующая метка
    вычитается из всех найденных, и владелец записи сообщает, какие
    разности нулевые. Метка добавляется, если нулевых разностей нет.

    Args:
        records: Записи клиентов в порядке обработки
        backend: Бэкенд (сервер использует только сложение и вычитание)
        known_total: Известное число классов (ранняя остановка)
        is_zero: Проверка разностей на стороне клиента

    Returns:
        Список уникальных шифртекстов меток
    """
    if not records:
        raise ProtocolIntegrityError("Нет ни одной записи меток")
    evaluator = backend.evaluator()
    is_zero = is_zero or local_zero_test(backend)

    unique: List[Ciphertext] = list(records[0].labels)
    for record in records[1:]:
        if known_total is not None and len(unique) >= known_total:
            break
        for label in record.labels:
            diffs = [evaluator.subtract(label, reference) for reference in unique]
            if not any(is_zero(record.client_id, diffs)):
                unique.append(label)
                if known_total is not None and len(unique) >= known_total:
                    break
    logger.info("🔍 Найдено уникальных меток: %d", len(unique))
    return unique


def make_placeholder_map(unique: Sequence[Ciphertext], seed: int) -> PlaceholderMap:
    """Случайные плейсхолдеры, не зависящие от значений меток"""
    rng = make_rng(seed, 'placeholders')
    tokens: List[str] = []
    while len(tokens) < len(unique):
        token = rng.bytes(8).hex()
        if token not in tokens:
            tokens.append(token)
    return PlaceholderMap(entries=[(ref, Placeholder(t)) for ref, t in zip(unique, tokens)])


def map_client_labels(record: MaskedLabelRecord, unique: Sequence[Ciphertext],
                      placeholder_map: PlaceholderMap, backend: BaseAheBackend,
                      plain_labels: Sequence[int],
                      is_zero: Optional[ZeroTest] = None) -> Dict[Placeholder, int]:
    """
    Сопоставляет метки клиента плейсхолдерам (выполняется клиентом)

    Args:
        record: Запись клиента
        unique: Уникальные метки
        placeholder_map: Плейсхолдеры уникальных меток
        backend: Бэкенд с ключом клиента
        plain_labels: Открытые метки клиента в порядке пар записи

    Returns:
        плейсхолдер -> настоящая метка
    """
    if len(plain_labels) != len(record.pairs):
        raise ProtocolIntegrityError(
            f"Клиент {record.client_id}: {len(plain_labels)} меток на {len(record.pairs)} пар"
        )
    is_zero = is_zero or local_zero_test(backend)
    mapping: Dict[Placeholder, int] = {}
    for label_ct, plain in zip(record.labels, plain_labels):
        diffs = [backend.subtract(label_ct, reference) for reference in unique]
        matches = [i for i, zero in enumerate(is_zero(record.client_id, diffs)) if zero]
        if len(matches) != 1:
            raise ProtocolIntegrityError(
                f"Клиент {record.client_id}: метка совпала с {len(matches)} уникальными записями"
            )
        placeholder = placeholder_map.placeholder_at(matches[0])
        if placeholder in mapping:
            raise ProtocolIntegrityError(
                f"Клиент {record.client_id}: две метки сопоставлены плейсхолдеру {placeholder}"
            )
        mapping[placeholder] = int(plain)
    return mapping


def aggregate_global_counts(records: Sequence[MaskedLabelRecord],
                            assignment: Dict[str, Sequence[Placeholder]],
                            backend: BaseAheBackend,
                            reveal: Optional[Reveal] = None) -> GlobalCounts:
    """
    Суммирует зашифрованные количества по плейсхолдерам

    Сервер только складывает шифртексты; суммы расшифровывает первый
    держатель плейсхолдера, отдельные количества не раскрываются.

    Args:
        records: Записи клиентов
        assignment: клиент -> плейсхолдеры в порядке пар его записи
        backend: Бэкенд
        reveal: Расшифровка сумм на стороне клиента

    Returns:
        GlobalCounts
    """
    evaluator = backend.evaluator()
    reveal = reveal or local_reveal(backend)

    encrypted: Dict[Placeholder, Ciphertext] = {}
    holders: Dict[Placeholder, List[str]] = defaultdict(list)
    for record in records:
        placeholders = assignment.get(record.client_id)
        if placeholders is None or len(placeholders) != len(record.pairs):
            raise ProtocolIntegrityError(f"Нет сопоставления для клиента {record.client_id}")
        for placeholder, (_, count_ct) in zip(placeholders, record.pairs):
            current = encrypted.get(placeholder)
            encrypted[placeholder] = count_ct if current is None else evaluator.add(current, count_ct)
            holders[placeholder].append(record.client_id)

    by_holder: Dict[str, List[Placeholder]] = defaultdict(list)
    for placeholder in encrypted:
        by_holder[min(holders[placeholder])].append(placeholder)

    counts: Dict[Placeholder, int] = {}
    for holder in sorted(by_holder):
        placeholders = by_holder[holder]
        values = reveal(holder, [encrypted[p] for p in placeholders])
        for placeholder, value in zip(placeholders, values):
            rounded = int(round(value))
            if abs(value - rounded) > backend.tolerance:
                raise BackendPrecisionError(
                    f"Сумма {value} для {placeholder} отличается от целого больше допуска "
                    f"{backend.tolerance}"
                )
            if rounded < 1:
                raise ProtocolIntegrityError(f"N({placeholder}) = {rounded} < 1")
            counts[placeholder] = rounded

    ordered = sorted(counts)
    return GlobalCounts(
        counts={p: counts[p] for p in ordered},
        holders={p: frozenset(holders[p]) for p in ordered},
    )


class _NetworkedClientSide:
    """Ответы клиентов на запросы сервера, переданные через сеть"""

    def __init__(self, server: str, network: Network, backend: BaseAheBackend):
        self.server = server
        self.network = network
        self.backend = backend
        self.count_reveals = 0

    def is_zero(self, owner: str, diffs: List[Ciphertext]) -> List[bool]:
        self.network.send(MessageKind.COMPARE_REQUEST, self.server, owner, {'diffs': diffs})
        request = self.network.receive(self.server, owner, MessageKind.COMPARE_REQUEST)
        flags = [abs(self.backend.decrypt(d)) < ZERO_THRESHOLD for d in request.payload['diffs']]
        self.network.send(MessageKind.COMPARE_RESPONSE, owner, self.server, {'zero': flags})
        return self.network.receive(owner, self.server, MessageKind.COMPARE_RESPONSE).payload['zero']

    def reveal(self, holder: str, totals: List[Ciphertext]) -> List[float]:
        self.network.send(MessageKind.COUNT_REVEAL_REQUEST, self.server, holder, {'totals': totals})
        request = self.network.receive(self.server, holder, MessageKind.COUNT_REVEAL_REQUEST)
        values = [float(self.backend.decrypt(t)) for t in request.payload['totals']]
        self.network.send(MessageKind.COUNT_REVEAL_RESPONSE, holder, self.server, {'totals': values})
        self.count_reveals += 1
        return self.network.receive(holder, self.server, MessageKind.COUNT_REVEAL_RESPONSE).payload['totals']


def run_label_protocol(server_address: str, clients: Sequence[Any], network: Network,
                       backend: BaseAheBackend, known_total: Optional[int] = None,
                       weighted: bool = False, seed: int = 0) -> LabelProtocolResult:
    """
    Три фазы протокола меток через симулируемую сеть

    Args:
        server_address: Адрес сервера
        clients: Узлы клиентов (ClientNode); обрабатываются по id
        network: Сеть
        backend: Бэкенд шифрования (общий ключ клиентов)
        known_total: Известное число классов
        weighted: Клиенты дополнительно сообщают открытые количества
        seed: Зерно генератора плейсхолдеров

    Returns:
        LabelProtocolResult; карты клиентов также устанавливаются на узлы
    """
    nodes = sorted(clients, key=lambda node: node.address)
    try:
        return _run_phases(server_address, nodes, network, backend, known_total, weighted, seed)
    except FedSlsError:
        raise
    except Exception as exc:
        logger.error("❌ Сбой бэкенда шифрования: %s", exc)
        raise ProtocolAbort(f"Протокол меток прерван: {exc}") from exc


def _run_phases(server: str, nodes: Sequence[Any], network: Network, backend: BaseAheBackend,
                known_total: Optional[int], weighted: bool, seed: int) -> LabelProtocolResult:
    client_side = _NetworkedClientSide(server, network, backend)

    # Фаза 1: загрузка зашифрованных записей
    plain: Dict[str, List[int]] = {}
    for node in nodes:
        record, plain_labels = mask_labels(node.shard, backend)
        plain[node.address] = plain_labels
        network.send(MessageKind.LABEL_RECORD_UPLOAD, node.address, server,
                     {'client_id': record.client_id, 'pairs': record.pairs})
    records = []
    for node in nodes:
        payload = network.receive(node.address, server, MessageKind.LABEL_RECORD_UPLOAD).payload
        records.append(MaskedLabelRecord(client_id=payload['client_id'], pairs=tuple(payload['pairs'])))

    unique = discover_unique_labels(records, backend, known_total, is_zero=client_side.is_zero)
    placeholder_map = make_placeholder_map(unique, seed)

    # Фаза 2: клиенты сопоставляют свои метки плейсхолдерам
    client_maps: Dict[str, Dict[Placeholder, int]] = {}
    assignment: Dict[str, Tuple[Placeholder, ...]] = {}
    for node, record in zip(nodes, records):
        network.send(MessageKind.PLACEHOLDER_CLAIM, server, node.address,
                     {'entries': list(placeholder_map.entries)})
        offer = network.receive(server, node.address, MessageKind.PLACEHOLDER_CLAIM).payload
        offered = PlaceholderMap(entries=list(offer['entries']))
        mapping = map_client_labels(record, offered.references, offered, backend,
                                    plain[node.address])
        node.set_placeholder_map(mapping)
        client_maps[node.address] = mapping
        by_label = {label: p for p, label in mapping.items()}
        claim = [by_label[label] for label in plain[node.address]]
        network.send(MessageKind.PLACEHOLDER_CLAIM, node.address, server, {'placeholders': claim})
    for node in nodes:
        claim = network.receive(node.address, server, MessageKind.PLACEHOLDER_CLAIM).payload
        assignment[node.address] = tuple(claim['placeholders'])

    # Фаза 3: суммы количеств
    global_counts = aggregate_global_counts(records, assignment, backend, reveal=client_side.reveal)

    client_counts = None
    if weighted:
        for node in nodes:
            mapping = client_maps[node.address]
            report = {p.id: int(node.shard.label_counts[label]) for p, label in mapping.items()}
            network.send(MessageKind.COUNT_REPORT, node.address, server, {'counts': report})
        client_counts = {}
        for node in nodes:
            report = network.receive(node.address, server, MessageKind.COUNT_REPORT).payload['counts']
            for placeholder in assignment[node.address]:
                client_counts[(node.address, placeholder)] = int(report[placeholder.id])
        logger.warning("⚠️ Взвешенный выбор: клиенты раскрыли серверу свои количества")

    holdings = {address: tuple(sorted(ps)) for address, ps in assignment.items()}
    logger.info("✅ Протокол меток завершён: %d плейсхолдеров, %d запросов раскрытия",
                len(placeholder_map), client_side.count_reveals)
    return LabelProtocolResult(
        placeholder_map=placeholder_map,
        global_counts=global_counts,
        holdings=holdings,
        client_maps=client_maps,
        client_counts=client_counts,
    )


def _collect_ints(value: Any, found: List[int]) -> None:
    if isinstance(value, bool):
        return
    if isinstance(value, (int, np.integer)):
        found.append(int(value))
    elif isinstance(value, dict):
        for item in value.values():
            _collect_ints(item, found)
    elif isinstance(value, (list, tuple)):
        for item in value:
            _collect_ints(item, found)


def scan_server_payloads(transcript: Transcript, server: str = 'server',
                         exempt: Iterable[MessageKind] = EXEMPT_KINDS) -> List[Tuple[Message, int]]:
    """
    Ищет открытые целые числа в сообщениях, адресованных серверу

    Returns:
        Список (сообщение, найденное число); пустой, если утечек нет
    """
    exempt = frozenset(exempt)
    leaks: List[Tuple[Message, int]] = []
    for message in transcript:
        if message.dst != server or message.kind in exempt:
            continue
        found: List[int] = []
        _collect_ints(message.payload, found)
        leaks.extend((message, value) for value in found)
    return leaks
