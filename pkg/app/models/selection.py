"""Модели выбора клиентов: пул доступности, политика, задачи обучения"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set, Tuple

from app.errors import ContractViolation
from app.models.schedule import Placeholder

# Адрес сервера в сети и маркер "вернуть модель на сервер"
SERVER = 'server'


class SelectionKind(str, Enum):
    UNIFORM = 'uniform'
    WEIGHTED = 'weighted'


@dataclass(frozen=True)
class SelectionPolicy:
    """Вид политики и зерно генератора для разрешения ничьих"""
    kind: SelectionKind = SelectionKind.UNIFORM
    seed: int = 0


@dataclass
class ClientPool:
    """
    Пул доступных клиентов на каждый плейсхолдер (availClients_p)

    Если counts_known=False, сервер знает только принадлежность клиента
    пулу, remaining_counts пуст и обращение к количествам запрещено.
    """
    avail: Dict[Placeholder, Set[str]] = field(default_factory=dict)
    remaining_counts: Dict[Tuple[str, Placeholder], int] = field(default_factory=dict)
    counts_known: bool = False

    def candidates(self, placeholder: Placeholder) -> List[str]:
        """Клиенты, ещё способные обслужить плейсхолдер (отсортированы по id)"""
        return sorted(self.avail.get(placeholder, ()))

    def is_available(self, client: str, placeholder: Placeholder) -> bool:
        return client in self.avail.get(placeholder, ())

    def remaining_count(self, client: str, placeholder: Placeholder) -> int:
        if not self.counts_known:
            raise ContractViolation("Количества меток клиентов серверу неизвестны")
        return self.remaining_counts.get((client, placeholder), 0)

    def placeholders(self) -> List[Placeholder]:
        return sorted(self.avail)

    def clients(self) -> List[str]:
        found = set()
        for holders in self.avail.values():
            found.update(holders)
        return sorted(found)

    def remove(self, client: str, placeholders: Iterable[Placeholder]) -> None:
        for placeholder in placeholders:
            holders = self.avail.get(placeholder)
            if holders is not None:
                holders.discard(client)
            if self.counts_known and (client, placeholder) in self.remaining_counts:
                self.remaining_counts[(client, placeholder)] = 0

    def snapshot(self) -> 'ClientPool':
        return ClientPool(
            avail={p: set(c) for p, c in self.avail.items()},
            remaining_counts=dict(self.remaining_counts),
            counts_known=self.counts_known,
        )

    def is_consistent(self) -> bool:
        """Проверяет инвариант: клиент в пуле тогда и только тогда, когда его остаток > 0"""
        if not self.counts_known:
            return True
        for (client, placeholder), count in self.remaining_counts.items():
            if (count > 0) != self.is_available(client, placeholder):
                return False
        for placeholder, holders in self.avail.items():
            for client in holders:
                if self.remaining_counts.get((client, placeholder), 0) <= 0:
                    return False
        return True


@dataclass(frozen=True)
class TrainingTask:
    """Непрерывная серия плейсхолдеров одного клиента и адрес следующего узла"""
    client: str
    placeholders: Tuple[Placeholder, ...]
    next_hop: Optional[str] = None

    def __post_init__(self):
        if not self.placeholders:
            raise ContractViolation("Задача обучения не может быть пустой")
        object.__setattr__(self, 'placeholders', tuple(self.placeholders))

    def with_next_hop(self, next_hop: str) -> 'TrainingTask':
        return TrainingTask(client=self.client, placeholders=self.placeholders, next_hop=next_hop)

    def __len__(self) -> int:
        return len(self.placeholders)
