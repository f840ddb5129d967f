"""Выбор клиентов по меткам: серии для одиночных примеров и выборка для батча"""
from abc import ABC, abstractmethod
from collections import Counter
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.errors import ConfigurationError, UnservablePlaceholderError
from app.models.schedule import Placeholder
from app.models.selection import ClientPool, SelectionKind, SelectionPolicy, TrainingTask
from app.services.seeding import make_rng


class ClientSelector(ABC):
    """Базовый класс политик выбора"""

    def __init__(self, policy: SelectionPolicy):
        self.policy = policy
        self.rng = make_rng(policy.seed, 'selection', policy.kind.value)

    @property
    def kind(self) -> SelectionKind:
        return self.policy.kind

    @abstractmethod
    def choose(self, candidates: List[str], placeholder: Placeholder, pool: ClientPool) -> str:
        """Один клиент среди равноценных кандидатов"""
        pass

    @abstractmethod
    def draw(self, candidates: List[str], placeholder: Placeholder, n: int,
             pool: ClientPool) -> List[str]:
        """n клиентов (без повторов, если кандидатов достаточно)"""
        pass


class UniformSelector(ClientSelector):
    """Равновероятный выбор; использует только принадлежность пулу"""

    def choose(self, candidates, placeholder, pool):
        return candidates[int(self.rng.integers(0, len(candidates)))]

    def draw(self, candidates, placeholder, n, pool):
        replace = n > len(candidates)
        picked = self.rng.choice(len(candidates), size=n, replace=replace)
        return [candidates[int(i)] for i in picked]


class WeightedSelector(ClientSelector):
    """Вероятность пропорциональна текущему остатку n_i(p)"""

    def _weights(self, candidates, placeholder, pool) -> np.ndarray:
        counts = np.array([pool.remaining_count(c, placeholder) for c in candidates], dtype=float)
        return counts / counts.sum()

    def choose(self, candidates, placeholder, pool):
        weights = self._weights(candidates, placeholder, pool)
        return candidates[int(self.rng.choice(len(candidates), p=weights))]

    def draw(self, candidates, placeholder, n, pool):
        weights = self._weights(candidates, placeholder, pool)
        replace = n > len(candidates)
        picked = self.rng.choice(len(candidates), size=n, replace=replace, p=weights)
        return [candidates[int(i)] for i in picked]


def create_policy(kind: SelectionKind, seed: int, pool: Optional[ClientPool] = None) -> ClientSelector:
    """
    Фабрика политик выбора

    Args:
        kind: uniform или weighted
        seed: Зерно генератора
        pool: Пул (для weighted должен содержать количества)

    Returns:
        Экземпляр политики
    """
    kind = SelectionKind(kind)
    policy = SelectionPolicy(kind=kind, seed=seed)
    if kind == SelectionKind.UNIFORM:
        return UniformSelector(policy)
    if pool is None or not pool.counts_known:
        raise ConfigurationError("Взвешенная политика требует известных глобальных количеств")
    return WeightedSelector(policy)


def build_pool(holdings: Mapping[str, Iterable[Placeholder]],
               counts: Optional[Mapping[Tuple[str, Placeholder], int]] = None) -> ClientPool:
    """
    Пул доступности по плейсхолдерам, которые заявил каждый клиент

    Args:
        holdings: client -> плейсхолдеры клиента
        counts: (client, p) -> количество (только во взвешенном режиме)
    """
    pool = ClientPool(counts_known=counts is not None)
    for client in sorted(holdings):
        for placeholder in holdings[client]:
            if counts is not None:
                count = int(counts.get((client, placeholder), 0))
                if count <= 0:
                    continue
                pool.remaining_counts[(client, placeholder)] = count
            pool.avail.setdefault(placeholder, set()).add(client)
    return pool


def _run_length(chunk: Sequence[Placeholder], start: int, client: str, pool: ClientPool) -> int:
    length = 0
    while start + length < len(chunk) and pool.is_available(client, chunk[start + length]):
        length += 1
    return length


def select_single_sample(chunk: Sequence[Placeholder], pool: ClientPool,
                         policy: ClientSelector) -> List[str]:
    """
    Покрывает позиции слева направо; на каждой позиции выбирается клиент
    с самой длинной непрерывной серией обслуживаемых позиций

    Args:
        chunk: Очередной фрагмент расписания
        pool: Пул доступности
        policy: Политика разрешения ничьих

    Returns:
        Клиент для каждой позиции фрагмента
    """
    assignment: List[str] = []
    position = 0
    while position < len(chunk):
        placeholder = chunk[position]
        candidates = pool.candidates(placeholder)
        if not candidates:
            raise UnservablePlaceholderError(placeholder)
        lengths = {c: _run_length(chunk, position, c, pool) for c in candidates}
        best = max(lengths.values())
        maximizers = [c for c in candidates if lengths[c] == best]
        chosen = maximizers[0] if len(maximizers) == 1 else policy.choose(maximizers, placeholder, pool)
        assignment.extend([chosen] * best)
        position += best
    return assignment


def select_batch(batch: Sequence[Placeholder], pool: ClientPool,
                 policy: ClientSelector) -> List[str]:
    """
    Для каждого различного p выбирает N_p клиентов и раздаёт их позициям p по порядку

    Args:
        batch: Плейсхолдеры батча
        pool: Пул доступности
        policy: Политика выбора

    Returns:
        Клиент для каждой позиции батча
    """
    frequencies = Counter(batch)
    drawn: Dict[Placeholder, List[str]] = {}
    for placeholder in dict.fromkeys(batch):
        candidates = pool.candidates(placeholder)
        if not candidates:
            raise UnservablePlaceholderError(placeholder)
        drawn[placeholder] = policy.draw(candidates, placeholder, frequencies[placeholder], pool)
    used: Counter = Counter()
    assignment = []
    for placeholder in batch:
        assignment.append(drawn[placeholder][used[placeholder]])
        used[placeholder] += 1
    return assignment


def group_runs(chunk: Sequence[Placeholder], assignment: Sequence[str]) -> List[TrainingTask]:
    """Объединяет соседние позиции одного клиента в задачи обучения"""
    tasks: List[TrainingTask] = []
    start = 0
    for position in range(1, len(chunk) + 1):
        if position == len(chunk) or assignment[position] != assignment[start]:
            tasks.append(TrainingTask(client=assignment[start], placeholders=tuple(chunk[start:position])))
            start = position
    return tasks


def note_exhausted(pool: ClientPool, client: str, placeholders: Iterable[Placeholder]) -> ClientPool:
    """Убирает клиента из availClients_p для всех p (идемпотентно)"""
    pool.remove(client, placeholders)
    return pool


def note_consumed(pool: ClientPool, client: str, placeholder: Placeholder) -> ClientPool:
    """Уменьшает известный остаток после обслуженной позиции"""
    if not pool.counts_known:
        return pool
    key = (client, placeholder)
    if pool.remaining_counts.get(key, 0) > 0:
        pool.remaining_counts[key] -= 1
        if pool.remaining_counts[key] == 0:
            pool.remove(client, [placeholder])
    return pool
