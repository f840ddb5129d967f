"""Модель: проход с точными суммарными градиентами, SGD и распределённый BatchNorm"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import ConfigurationError, ContractViolation, NumericError
from app.models.data import Sample
from app.models.experiment import ModelSpec
from app.models.tensors import BnBatchStats, GradientSum, ModelParams
from app.services.batchnorm import (
    BN_MOMENTUM, BatchNorm, GroupNorm, LockstepPass, StatsReducer, drive_lockstep
)
from app.services.layers import (
    Conv2D, Dense, Flatten, Layer, MaxPool2, ReLU, Shape, cross_entropy_sum
)

logger = logging.getLogger(__name__)


@dataclass
class PassResult:
    """Итог прохода одного участника"""
    loss_sum: float
    logits: np.ndarray
    caches: List[object]
    bn_stats: Dict[int, BnBatchStats] = field(default_factory=dict)
    grad: Optional[GradientSum] = None


class Model:
    """
    Последовательность слоёв с фиксированной формой входа

    Параметры хранятся отдельно (ModelParams), сама модель состояния не имеет,
    поэтому её методы можно вызывать из разных процессов.
    """

    def __init__(self, layers: Sequence[Layer], input_shape: Shape, num_classes: int,
                 name: str = 'model', dtype: str = 'float64'):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.name = name
        self.dtype = np.dtype(dtype)

        shape = self.input_shape
        self._param_slices: List[Tuple[int, int]] = []
        self._buffer_slices: List[Tuple[int, int]] = []
        param_pos = buffer_pos = 0
        for layer in self.layers:
            shape = layer.build(shape)
            n_params = len(layer.param_shapes())
            n_buffers = len(layer.init_buffers())
            self._param_slices.append((param_pos, param_pos + n_params))
            self._buffer_slices.append((buffer_pos, buffer_pos + n_buffers))
            param_pos += n_params
            buffer_pos += n_buffers
        if shape != (num_classes,):
            raise ConfigurationError(
                f"Выход модели {shape} не совпадает с числом классов {num_classes}"
            )

    @property
    def has_batch_norm(self) -> bool:
        return any(isinstance(layer, BatchNorm) for layer in self.layers)

    @property
    def batch_norm_layers(self) -> List[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, BatchNorm)]

    def param_shapes(self) -> List[Shape]:
        return [s for layer in self.layers for s in layer.param_shapes()]

    def init_params(self, seed: int) -> ModelParams:
        """
        Детерминированная инициализация параметров

        Args:
            seed: Зерно генератора PCG64

        Returns:
            Новые параметры модели
        """
        rng = np.random.Generator(np.random.PCG64(seed))
        layers = [t.astype(self.dtype) for layer in self.layers for t in layer.init_params(rng)]
        buffers = [t.astype(self.dtype) for layer in self.layers for t in layer.init_buffers()]
        return ModelParams(layers=tuple(layers), buffers=tuple(buffers))

    def _layer_params(self, params: ModelParams, index: int) -> Tuple[np.ndarray, ...]:
        start, end = self._param_slices[index]
        return params.layers[start:end]

    def _layer_buffers(self, params: ModelParams, index: int) -> Tuple[np.ndarray, ...]:
        start, end = self._buffer_slices[index]
        return params.buffers[start:end]

    def _stack(self, batch: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
        for sample in batch:
            if tuple(sample.features.shape) != self.input_shape:
                raise ConfigurationError(
                    f"Форма признаков {sample.features.shape} не совпадает "
                    f"со входом модели {self.input_shape}"
                )
            if not 0 <= sample.label < self.num_classes:
                raise ConfigurationError(f"Метка {sample.label} вне диапазона модели")
        features = np.stack([s.features for s in batch]).astype(self.dtype, copy=False)
        labels = np.array([s.label for s in batch], dtype=np.int64)
        return features, labels

    def start_pass(self, params: ModelParams, batch: Sequence[Sample],
                   backward: bool = True) -> LockstepPass:
        """
        Создаёт проход участника в виде генератора

        На каждом слое BatchNorm генератор отдаёт частичную сумму и ждёт
        глобальную. Для моделей без BatchNorm он завершается сразу.

        Args:
            params: Параметры модели
            batch: Локальные примеры участника
            backward: Считать ли градиенты

        Returns:
            Генератор, возвращающий PassResult
        """
        params.check_compatible(self.param_shapes())
        features, labels = self._stack(batch)
        return self._pass(params, features, labels, backward)

    def _pass(self, params: ModelParams, x: np.ndarray, labels: np.ndarray,
              backward: bool) -> LockstepPass:
        caches = []
        bn_stats: Dict[int, BnBatchStats] = {}
        h = x
        for index, layer in enumerate(self.layers):
            layer_params = self._layer_params(params, index)
            if isinstance(layer, BatchNorm):
                h, cache = yield from layer.forward_lockstep(index, layer_params, h)
                bn_stats[index] = cache.stats
            else:
                h, cache = layer.forward(layer_params, h)
            if not np.all(np.isfinite(h)):
                raise NumericError(f"Неконечная активация в слое {layer.name}", index)
            caches.append(cache)

        loss_sum, dlogits = cross_entropy_sum(h, labels)
        if not np.isfinite(loss_sum):
            raise NumericError("Неконечное значение функции потерь", len(self.layers) - 1)
        result = PassResult(loss_sum=loss_sum, logits=h, caches=caches, bn_stats=bn_stats)
        if not backward:
            return result

        layer_grads: List[List[np.ndarray]] = [[] for _ in self.layers]
        dh = dlogits.astype(self.dtype, copy=False)
        for index in reversed(range(len(self.layers))):
            layer = self.layers[index]
            layer_params = self._layer_params(params, index)
            if isinstance(layer, BatchNorm):
                dh, grads = yield from layer.backward_lockstep(index, layer_params, caches[index], dh)
            else:
                dh, grads = layer.backward(layer_params, caches[index], dh)
            layer_grads[index] = grads
        result.grad = GradientSum(
            grads=tuple(g for grads in layer_grads for g in grads),
            num_terms=len(labels),
        )
        return result

    def _run_single(self, params: ModelParams, batch: Sequence[Sample],
                    bn: Optional[StatsReducer], backward: bool) -> PassResult:
        if self.has_batch_norm and bn is None:
            raise ConfigurationError("Модель с BatchNorm требует редуктор статистик (bn)")
        step = self.start_pass(params, batch, backward)
        if bn is None:
            try:
                next(step)
            except StopIteration as stop:
                return stop.value
            raise ConfigurationError("Модель запросила редукцию без редуктора")
        return drive_lockstep([step], bn)[0]

    def forward_loss(self, params: ModelParams, batch: Sequence[Sample],
                     bn: Optional[StatsReducer] = None) -> Tuple[float, PassResult]:
        """
        Сумма кросс-энтропий по батчу

        Args:
            params: Параметры модели
            batch: Непустой список примеров
            bn: Редуктор статистик (обязателен для моделей с BatchNorm)

        Returns:
            (loss_sum, кэш прохода)
        """
        if not batch:
            raise ContractViolation("forward_loss требует непустой батч")
        result = self._run_single(params, batch, bn, backward=False)
        return result.loss_sum, result

    def grad_summed(self, params: ModelParams, batch: Sequence[Sample],
                    bn: Optional[StatsReducer] = None) -> GradientSum:
        """Градиент суммарной потери; для пустого батча нулевая сумма"""
        if not batch:
            params.check_compatible(self.param_shapes())
            return GradientSum.zeros_like(params)
        return self._run_single(params, batch, bn, backward=True).grad

    def grad_distributed(self, params: ModelParams, batches: Sequence[Sequence[Sample]],
                         reducer: StatsReducer) -> List[PassResult]:
        """Проходы нескольких участников синхронно (общие статистики BatchNorm)"""
        return drive_lockstep([self.start_pass(params, b, True) for b in batches], reducer)

    def logits(self, params: ModelParams, features: np.ndarray) -> np.ndarray:
        """Инференс: BatchNorm использует скользящие статистики"""
        h = np.asarray(features).astype(self.dtype, copy=False)
        if h.shape[1:] != self.input_shape:
            raise ConfigurationError(
                f"Форма признаков {h.shape[1:]} не совпадает со входом {self.input_shape}"
            )
        for index, layer in enumerate(self.layers):
            layer_params = self._layer_params(params, index)
            if isinstance(layer, BatchNorm):
                h = layer.forward_inference(layer_params, self._layer_buffers(params, index), h)
            else:
                h, _ = layer.forward(layer_params, h)
            if not np.all(np.isfinite(h)):
                raise NumericError(f"Неконечная активация в слое {layer.name}", index)
        return h

    def predict(self, params: ModelParams, features: np.ndarray) -> np.ndarray:
        if len(features) == 0:
            return np.zeros(0, dtype=np.int64)
        return np.argmax(self.logits(params, features), axis=1)

    def update_running_stats(self, params: ModelParams, stats_by_layer: Dict[int, BnBatchStats],
                             momentum: float = BN_MOMENTUM) -> ModelParams:
        """
        running = momentum * running + (1 - momentum) * глобальная статистика батча

        Args:
            params: Текущие параметры
            stats_by_layer: Статистики по индексам слоёв BatchNorm
            momentum: Коэффициент сглаживания

        Returns:
            Параметры с обновлёнными буферами
        """
        if not stats_by_layer:
            return params
        buffers = list(params.buffers)
        for index, stats in stats_by_layer.items():
            start, _ = self._buffer_slices[index]
            buffers[start] = momentum * buffers[start] + (1 - momentum) * stats.mean
            buffers[start + 1] = momentum * buffers[start + 1] + (1 - momentum) * stats.variance
        return params.replace(buffers=[b.astype(self.dtype, copy=False) for b in buffers])


def sgd_step(params: ModelParams, grad: GradientSum, lr: float, normalizer: int) -> ModelParams:
    """
    theta' = theta - lr * grad / normalizer (буферы не меняются)

    Args:
        params: Текущие параметры (не изменяются)
        grad: Сумма градиентов
        lr: Шаг обучения
        normalizer: Делитель суммы (>= 1)

    Returns:
        Новые параметры
    """
    if normalizer < 1:
        raise ContractViolation(f"normalizer должен быть >= 1, получено {normalizer}")
    if grad.shapes != params.shapes:
        raise ConfigurationError("Формы градиента и параметров не совпадают")
    layers = []
    for index, (theta, g) in enumerate(zip(params.layers, grad.grads)):
        updated = theta - lr * (g / normalizer)
        if not np.all(np.isfinite(updated)):
            raise NumericError("Неконечный параметр после шага SGD", index)
        layers.append(updated.astype(theta.dtype, copy=False))
    return params.replace(layers=layers)


def logistic_regression(input_shape: Shape, num_classes: int, dtype: str = 'float64') -> Model:
    return Model([Flatten(), Dense(num_classes)], input_shape, num_classes, 'logreg', dtype)


def mlp(input_shape: Shape, num_classes: int, hidden: int = 32, norm: str = 'none',
        groups: int = 4, dtype: str = 'float64') -> Model:
    """Двухслойный перцептрон с опциональной нормализацией после скрытого слоя"""
    layers: List[Layer] = [Flatten(), Dense(hidden)]
    layers += _norm_layer(norm, groups)
    layers += [ReLU(), Dense(num_classes)]
    return Model(layers, input_shape, num_classes, 'mlp', dtype)


def small_cnn(input_shape: Shape, num_classes: int, channels: int = 4, hidden: int = 32,
              norm: str = 'none', groups: int = 2, dtype: str = 'float64') -> Model:
    """Две свёртки 3x3 с пулингом и два полносвязных слоя"""
    layers: List[Layer] = [Conv2D(channels)]
    layers += _norm_layer(norm, groups)
    layers += [ReLU(), MaxPool2(), Conv2D(2 * channels)]
    layers += _norm_layer(norm, groups)
    layers += [ReLU(), MaxPool2(), Flatten(), Dense(hidden), ReLU(), Dense(num_classes)]
    return Model(layers, input_shape, num_classes, 'cnn', dtype)


def _norm_layer(norm: str, groups: int) -> List[Layer]:
    if norm == 'none':
        return []
    if norm == 'batch':
        return [BatchNorm()]
    if norm == 'group':
        return [GroupNorm(groups)]
    raise ConfigurationError(f"Неизвестная нормализация: {norm}")


def build_model(spec: ModelSpec, input_shape: Shape, num_classes: int) -> Model:
    """
    Создаёт модель по описанию из конфигурации

    Args:
        spec: Описание архитектуры
        input_shape: Форма одного примера
        num_classes: Число классов

    Returns:
        Экземпляр Model
    """
    if spec.kind == 'logreg':
        if spec.norm != 'none':
            raise ConfigurationError("Логистическая регрессия не поддерживает нормализацию")
        return logistic_regression(input_shape, num_classes, spec.dtype)
    if spec.kind == 'mlp':
        return mlp(input_shape, num_classes, spec.hidden, spec.norm, spec.groups, spec.dtype)
    if spec.kind == 'cnn':
        if len(input_shape) != 3:
            raise ConfigurationError(
                f"CNN требует изображения (каналы, высота, ширина), получена форма {input_shape}"
            )
        return small_cnn(tuple(input_shape), num_classes, spec.channels, spec.hidden, spec.norm,
                         spec.groups, spec.dtype)
    raise ConfigurationError(f"Неизвестная модель: {spec.kind}")
