"""Модели эксперимента: конфигурация, метрики, стоимость коммуникаций"""
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

from app.errors import ConfigurationError, ContractViolation
from app.models.data import PartitionSpec
from app.models.selection import SelectionKind

SLS_ALGORITHMS = ('sls-single', 'sls-batch', 'sls-hybrid')
BASELINE_ALGORITHMS = ('fedavg', 'fedprox', 'scaffold', 'sfl')
ALGORITHMS = SLS_ALGORITHMS + BASELINE_ALGORITHMS


@dataclass(frozen=True)
class DatasetSpec:
    """Откуда брать данные"""
    kind: str = 'digits'  # digits, synthetic, idx, csv
    samples_per_class: int = 60
    num_classes: int = 10
    num_domains: int = 1
    dim: int = 16
    shift: float = 2.0
    rotation: float = 0.0
    noise: float = 0.3
    path: str = ''
    labels_path: str = ''


@dataclass(frozen=True)
class ModelSpec:
    """Архитектура модели"""
    kind: str = 'mlp'  # logreg, mlp, cnn
    hidden: int = 32
    norm: str = 'none'  # none, batch, group
    groups: int = 4
    channels: int = 4
    dtype: str = 'float64'

    @property
    def has_batch_norm(self) -> bool:
        return self.norm == 'batch'


@dataclass(frozen=True)
class BaselineConfig:
    """Параметры базовых алгоритмов"""
    algorithm: str = 'fedavg'
    local_epochs: int = 1
    local_batch: int = 32
    lr: float = 0.05
    prox_mu: float = 0.0
    shuffle: bool = True

    def validate(self) -> None:
        if self.algorithm not in BASELINE_ALGORITHMS:
            raise ConfigurationError(f"Неизвестный базовый алгоритм: {self.algorithm}")
        if self.local_epochs < 1:
            raise ConfigurationError("baseline.local_epochs должен быть >= 1")
        if self.local_batch < 1:
            raise ConfigurationError("baseline.local_batch должен быть >= 1")
        if self.prox_mu < 0:
            raise ConfigurationError("baseline.prox_mu должен быть >= 0")
        if self.lr < 0:
            raise ConfigurationError("baseline.lr должен быть >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    """Полностью проверенная конфигурация одного запуска"""
    dataset: DatasetSpec
    partition: PartitionSpec
    model: ModelSpec
    algorithm: str = 'sls-batch'
    chunk_size: int = 5
    batch_size: int = 32
    policy: SelectionKind = SelectionKind.UNIFORM
    lr: float = 0.05
    epochs: int = 10
    seed: int = 0
    backend: str = 'mock'
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    frequency_mode: str = 'default'  # default, uniform, capped_proportional
    frequency: int = 0
    cap: int = 0
    hybrid_batch_epochs: int = 1
    test_fraction: float = 0.2
    known_total: Optional[int] = None
    key_seed: str = ''
    c_update: float = 1.0
    out_dir: str = 'runs'

    @property
    def is_sls(self) -> bool:
        return self.algorithm in SLS_ALGORITHMS


@dataclass
class CommCostModel:
    """T = R × C_update × f_freq"""
    c_update: float
    rounds: int
    f_freq: float

    @classmethod
    def measure(cls, transfers: int, num_clients: int, rounds: int,
                c_update: float) -> 'CommCostModel':
        """
        Строит модель стоимости по измеренному числу передач модели

        Args:
            transfers: Число передач модели в журнале
            num_clients: Число клиентов
            rounds: Число выполненных раундов (эпох)
            c_update: Стоимость одной передачи, секунды
        """
        if num_clients < 1:
            raise ContractViolation("num_clients должен быть >= 1")
        f_freq = 0.0 if rounds == 0 else transfers / (num_clients * rounds)
        return cls(c_update=c_update, rounds=rounds, f_freq=f_freq)


@dataclass
class EpochMetrics:
    epoch: int
    top1: float
    transfers: int
    bytes: int


@dataclass
class MetricsRecord:
    """Метрики запуска по эпохам"""
    algorithm: str = ''
    epochs: List[EpochMetrics] = field(default_factory=list)
    num_clients: int = 0
    shard_digest: str = ''
    dropped: int = 0
    wall_clock: float = 0.0

    def add_epoch(self, metrics: EpochMetrics) -> None:
        if self.epochs and metrics.epoch <= self.epochs[-1].epoch:
            raise ContractViolation("Номера эпох должны возрастать")
        self.epochs.append(metrics)

    @property
    def rounds(self) -> int:
        return len(self.epochs)

    @property
    def transfers(self) -> int:
        return sum(e.transfers for e in self.epochs)

    @property
    def best_accuracy(self) -> float:
        return max((e.top1 for e in self.epochs), default=0.0)

    @property
    def best_epoch(self) -> int:
        """Эпоха, на которой впервые достигнута лучшая точность (-1 если эпох нет)"""
        if not self.epochs:
            return -1
        best = self.best_accuracy
        return next(e.epoch for e in self.epochs if e.top1 == best)

    def to_dict(self, include_wall_clock: bool = False) -> Dict[str, Any]:
        data = {
            'algorithm': self.algorithm,
            'num_clients': self.num_clients,
            'shard_digest': self.shard_digest,
            'dropped': self.dropped,
            'best_accuracy': self.best_accuracy,
            'best_epoch': self.best_epoch,
            'transfers': self.transfers,
            'epochs': [asdict(e) for e in self.epochs],
        }
        if include_wall_clock:
            data['wall_clock'] = self.wall_clock
        return data
