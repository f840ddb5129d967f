"""Модели данных: выборки, датасеты, разбиения по клиентам"""
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from app.errors import ConfigurationError


@dataclass(frozen=True, eq=False)
class Sample:
    """Один обучающий пример"""
    features: np.ndarray
    label: int
    index: int = -1  # позиция в исходном датасете


@dataclass(eq=False)
class Dataset:
    """Набор примеров с числом классов и (опционально) доменами"""
    samples: Tuple[Sample, ...]
    num_classes: int
    domain_tags: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        self.samples = tuple(self.samples)
        if not self.samples:
            raise ConfigurationError("Датасет пуст")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes должен быть >= 1")
        for sample in self.samples:
            if not 0 <= sample.label < self.num_classes:
                raise ConfigurationError(
                    f"Метка {sample.label} вне диапазона [0, {self.num_classes})"
                )
        if self.domain_tags is not None:
            self.domain_tags = tuple(int(d) for d in self.domain_tags)
            if len(self.domain_tags) != len(self.samples):
                raise ConfigurationError("Длина domain_tags не совпадает с числом примеров")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_domains(self) -> int:
        if self.domain_tags is None:
            return 1
        return max(self.domain_tags) + 1

    @property
    def feature_shape(self) -> Tuple[int, ...]:
        return tuple(self.samples[0].features.shape)

    def label_counts(self) -> Dict[int, int]:
        return dict(sorted(Counter(s.label for s in self.samples).items()))

    def domain_of(self, position: int) -> int:
        return 0 if self.domain_tags is None else self.domain_tags[position]


class PartitionKind(str, Enum):
    IID = 'iid'
    CLASSES = 'classes_per_client'
    DOMAINS = 'domains_per_client'
    DIRICHLET = 'dirichlet'


@dataclass(frozen=True)
class PartitionSpec:
    """Параметры разбиения датасета по клиентам"""
    kind: PartitionKind
    num_clients: int
    seed: int = 0
    classes_per_client: Optional[int] = None  # #C
    domains_per_client: Optional[int] = None  # #D
    beta: Optional[float] = None
    max_retries: int = 100

    def validate(self, num_classes: int, num_domains: int = 1) -> None:
        """
        Проверяет, что разбиение применимо к датасету

        Args:
            num_classes: Число классов датасета
            num_domains: Число доменов датасета

        Raises:
            ConfigurationError: если параметры некорректны
        """
        if self.num_clients < 1:
            raise ConfigurationError("partition.num_clients должен быть >= 1")
        if self.kind == PartitionKind.CLASSES:
            c = self.classes_per_client
            if c is None or not 1 <= c <= num_classes:
                raise ConfigurationError(
                    f"partition.classes_per_client должен быть в [1, {num_classes}], получено {c}"
                )
        elif self.kind == PartitionKind.DOMAINS:
            d = self.domains_per_client
            if d is None or not 1 <= d <= num_domains:
                raise ConfigurationError(
                    f"partition.domains_per_client должен быть в [1, {num_domains}], получено {d}"
                )
        elif self.kind == PartitionKind.DIRICHLET:
            if self.beta is None or self.beta <= 0:
                raise ConfigurationError("partition.beta должен быть > 0")


@dataclass(eq=False)
class ClientShard:
    """Локальные данные клиента"""
    client_id: str
    samples: Tuple[Sample, ...]
    label_counts: Dict[int, int] = field(default_factory=dict)
    test_samples: Tuple[Sample, ...] = ()

    def __post_init__(self):
        self.samples = tuple(self.samples)
        self.test_samples = tuple(self.test_samples)
        counted = dict(sorted(Counter(s.label for s in self.samples).items()))
        if self.label_counts and dict(self.label_counts) != counted:
            raise ConfigurationError(
                f"label_counts клиента {self.client_id} не совпадают с примерами"
            )
        self.label_counts = counted

    @classmethod
    def from_samples(cls, client_id: str, samples: Sequence[Sample]) -> 'ClientShard':
        return cls(client_id=client_id, samples=tuple(samples))

    @property
    def labels(self) -> Tuple[int, ...]:
        return tuple(self.label_counts)

    def samples_of(self, label: int) -> Tuple[Sample, ...]:
        return tuple(s for s in self.samples if s.label == label)

    def __len__(self) -> int:
        return len(self.samples)
