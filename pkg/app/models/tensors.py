"""Параметры модели, суммы градиентов и статистики BatchNorm"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from app.errors import ConfigurationError


def _frozen(tensor) -> np.ndarray:
    array = np.array(tensor, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ModelParams:
    """
    Набор параметров модели (семантика значения: массивы только для чтения)

    layers: обучаемые тензоры в порядке слоёв; buffers: необучаемые
    тензоры (скользящие статистики BatchNorm), в param_count не входят.
    """
    layers: Tuple[np.ndarray, ...]
    buffers: Tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'layers', tuple(_frozen(t) for t in self.layers))
        object.__setattr__(self, 'buffers', tuple(_frozen(t) for t in self.buffers))

    @property
    def param_count(self) -> int:
        return int(sum(t.size for t in self.layers))

    @property
    def shapes(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(t.shape for t in self.layers)

    @property
    def dtype(self):
        return self.layers[0].dtype if self.layers else np.float64

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.layers)

    def flat(self) -> np.ndarray:
        """Все обучаемые параметры одним вектором"""
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([t.ravel() for t in self.layers])

    def replace(self,
                layers: Optional[Sequence[np.ndarray]] = None,
                buffers: Optional[Sequence[np.ndarray]] = None) -> 'ModelParams':
        return ModelParams(
            layers=tuple(self.layers if layers is None else layers),
            buffers=tuple(self.buffers if buffers is None else buffers),
        )

    def check_compatible(self, shapes: Sequence[Tuple[int, ...]]) -> None:
        if tuple(tuple(s) for s in shapes) != self.shapes:
            raise ConfigurationError(
                f"Формы тензоров не совпадают: {list(shapes)} против {list(self.shapes)}"
            )


@dataclass(frozen=True, eq=False)
class GradientSum:
    """Сумма градиентов покомпонентных потерь (форма как у ModelParams)"""
    grads: Tuple[np.ndarray, ...]
    num_terms: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'grads', tuple(np.asarray(g) for g in self.grads))
        if self.num_terms < 0:
            raise ConfigurationError("num_terms не может быть отрицательным")

    @classmethod
    def zeros_like(cls, params: ModelParams) -> 'GradientSum':
        return cls(grads=tuple(np.zeros_like(t) for t in params.layers), num_terms=0)

    @property
    def shapes(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(g.shape for g in self.grads)

    def __add__(self, other: 'GradientSum') -> 'GradientSum':
        if self.shapes != other.shapes:
            raise ConfigurationError("Нельзя сложить суммы градиентов разной формы")
        return GradientSum(
            grads=tuple(a + b for a, b in zip(self.grads, other.grads)),
            num_terms=self.num_terms + other.num_terms,
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.grads)

    def flat(self) -> np.ndarray:
        if not self.grads:
            return np.zeros(0)
        return np.concatenate([g.ravel() for g in self.grads])


@dataclass
class BnBatchStats:
    """Глобальные суммы одного слоя BatchNorm по всем участникам"""
    sum_x: np.ndarray
    sum_sq_dev: np.ndarray
    count: int
    grad_sum: Optional[np.ndarray] = None
    grad_xhat_sum: Optional[np.ndarray] = None

    @property
    def mean(self) -> np.ndarray:
        return self.sum_x / self.count

    @property
    def variance(self) -> np.ndarray:
        return self.sum_sq_dev / self.count


@dataclass
class BnPartial:
    """Локальная частичная сумма, которую участник отдаёт на редукцию"""
    layer_index: int
    stage: str  # sum_x, sum_sq_dev, grad_sums
    values: np.ndarray
    count: int = 0
    extra: dict = field(default_factory=dict)
