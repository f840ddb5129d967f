"""BatchNorm на суммах: статистики батча собираются внешней редукцией по участникам"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Generator, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import (
    ConfigurationError, ContractViolation, DegenerateBatchError, ProtocolOrderError
)
from app.models.tensors import BnBatchStats, BnPartial
from app.services.layers import Layer, Shape

BN_EPS = 1e-5
BN_MOMENTUM = 0.9

# Генератор прохода участника: отдаёт BnPartial, получает (сумма, m)
LockstepPass = Generator[BnPartial, Tuple[np.ndarray, int], Any]


class StatsReducer(ABC):
    """Точка синхронизации: суммирует частичные суммы всех участников"""

    @abstractmethod
    def reduce(self, partials: Sequence[BnPartial]) -> Tuple[np.ndarray, int]:
        """
        Args:
            partials: Частичные суммы в фиксированном порядке участников

        Returns:
            (поэлементная сумма, общее число элементов m)
        """
        pass


class SumReducer(StatsReducer):
    """Точное суммирование в порядке участников"""

    def __init__(self):
        self.calls = 0
        self.last_stage: Optional[str] = None

    def reduce(self, partials):
        total = np.zeros_like(partials[0].values)
        count = 0
        for partial in partials:
            total = total + partial.values
            count += partial.count
        self.calls += 1
        self.last_stage = partials[0].stage
        return total, count


def drive_lockstep(passes: Sequence[LockstepPass], reducer: StatsReducer) -> List[Any]:
    """
    Выполняет проходы участников синхронно, редуцируя каждую частичную сумму

    Args:
        passes: Генераторы проходов (порядок задаёт порядок суммирования)
        reducer: Редуктор статистик

    Returns:
        Результаты генераторов в том же порядке
    """
    results: List[Any] = [None] * len(passes)
    requests: List[Optional[BnPartial]] = []
    for position, step in enumerate(passes):
        try:
            requests.append(next(step))
        except StopIteration as stop:
            requests.append(None)
            results[position] = stop.value

    while any(r is not None for r in requests):
        active = [r for r in requests if r is not None]
        phases = {(r.layer_index, r.stage) for r in active}
        if len(active) != len(passes) or len(phases) != 1:
            raise ProtocolOrderError(
                f"Участники рассинхронизированы: {sorted(phases)}, "
                f"активно {len(active)} из {len(passes)}"
            )
        reply = reducer.reduce(active)
        for position, step in enumerate(passes):
            try:
                requests[position] = step.send(reply)
            except StopIteration as stop:
                requests[position] = None
                results[position] = stop.value
    return results


def _channel_axes(x: np.ndarray) -> Tuple[int, ...]:
    return (0,) + tuple(range(2, x.ndim))


def _per_channel(values: np.ndarray, ndim: int) -> np.ndarray:
    return values.reshape((1, -1) + (1,) * (ndim - 2))


@dataclass
class BnCache:
    """Кэш прямого прохода одного участника"""
    xhat: np.ndarray
    inv_std: np.ndarray
    stats: BnBatchStats


class BatchNorm(Layer):
    """
    BatchNorm по оси каналов (ось 1)

    В режиме обучения среднее и дисперсия глобальные: сначала редуцируется
    сумма x, затем сумма квадратов отклонений от глобального среднего.
    На инференсе используются скользящие статистики из буферов.
    """

    name = 'batchnorm'

    def __init__(self, eps: float = BN_EPS):
        self.eps = eps

    def build(self, input_shape: Shape) -> Shape:
        super().build(input_shape)
        self.channels = input_shape[0]
        return tuple(input_shape)

    def param_shapes(self):
        return [(self.channels,), (self.channels,)]

    def init_params(self, rng):
        return [np.ones(self.channels), np.zeros(self.channels)]

    def init_buffers(self):
        return [np.zeros(self.channels), np.ones(self.channels)]

    def forward_lockstep(self, index: int, params, x: np.ndarray) -> LockstepPass:
        gamma, beta = params
        axes = _channel_axes(x)
        count = x.size // x.shape[1] if x.ndim > 1 else 0
        sum_x, m = yield BnPartial(index, 'sum_x', x.sum(axis=axes), count)
        if m < 2:
            raise DegenerateBatchError(f"Глобальный батч BatchNorm слоя {index}: m={m} < 2")
        mean = sum_x / m
        centered = x - _per_channel(mean, x.ndim)
        sum_sq_dev, _ = yield BnPartial(index, 'sum_sq_dev', (centered ** 2).sum(axis=axes), count)
        inv_std = 1.0 / np.sqrt(sum_sq_dev / m + self.eps)
        xhat = centered * _per_channel(inv_std, x.ndim)
        y = _per_channel(gamma, x.ndim) * xhat + _per_channel(beta, x.ndim)
        stats = BnBatchStats(sum_x=sum_x, sum_sq_dev=sum_sq_dev, count=m)
        return y, BnCache(xhat=xhat, inv_std=inv_std, stats=stats)

    def backward_lockstep(self, index: int, params, cache: Optional[BnCache],
                          dy: np.ndarray) -> LockstepPass:
        if cache is None:
            raise ProtocolOrderError(f"Обратный проход BatchNorm слоя {index} без прямого")
        gamma = params[0]
        axes = _channel_axes(dy)
        ndim = dy.ndim
        dxhat = dy * _per_channel(gamma, ndim)
        local = np.stack([dxhat.sum(axis=axes), (dxhat * cache.xhat).sum(axis=axes)])
        count = dy.size // dy.shape[1]
        totals, _ = yield BnPartial(index, 'grad_sums', local, count)
        grad_sum, grad_xhat_sum = totals[0], totals[1]
        cache.stats.grad_sum = grad_sum
        cache.stats.grad_xhat_sum = grad_xhat_sum
        m = cache.stats.count
        dx = _per_channel(cache.inv_std, ndim) / m * (
            m * dxhat
            - _per_channel(grad_sum, ndim)
            - cache.xhat * _per_channel(grad_xhat_sum, ndim)
        )
        d_gamma = (dy * cache.xhat).sum(axis=axes)
        d_beta = dy.sum(axis=axes)
        return dx, [d_gamma, d_beta]

    def forward_inference(self, params, buffers, x: np.ndarray) -> np.ndarray:
        gamma, beta = params
        running_mean, running_var = buffers
        ndim = x.ndim
        xhat = (x - _per_channel(running_mean, ndim)) / np.sqrt(
            _per_channel(running_var, ndim) + self.eps
        )
        return _per_channel(gamma, ndim) * xhat + _per_channel(beta, ndim)

    def forward(self, params, x):
        raise ProtocolOrderError("BatchNorm в режиме обучения требует редуктор статистик")

    def backward(self, params, cache, dy):
        raise ProtocolOrderError("BatchNorm в режиме обучения требует редуктор статистик")


class GroupNorm(Layer):
    """Нормализация по группам каналов внутри каждого примера (редукция не нужна)"""

    name = 'groupnorm'

    def __init__(self, groups: int, eps: float = BN_EPS):
        self.groups = groups
        self.eps = eps

    def build(self, input_shape: Shape) -> Shape:
        super().build(input_shape)
        self.channels = input_shape[0]
        if self.channels % self.groups:
            raise ConfigurationError(
                f"Число каналов {self.channels} не делится на число групп {self.groups}"
            )
        return tuple(input_shape)

    def param_shapes(self):
        return [(self.channels,), (self.channels,)]

    def init_params(self, rng):
        return [np.ones(self.channels), np.zeros(self.channels)]

    def forward(self, params, x):
        gamma, beta = params
        grouped = x.reshape(x.shape[0], self.groups, -1)
        mean = grouped.mean(axis=2, keepdims=True)
        inv_std = 1.0 / np.sqrt(grouped.var(axis=2, keepdims=True) + self.eps)
        xhat = ((grouped - mean) * inv_std).reshape(x.shape)
        y = _per_channel(gamma, x.ndim) * xhat + _per_channel(beta, x.ndim)
        return y, (xhat, inv_std)

    def backward(self, params, cache, dy):
        gamma = params[0]
        xhat, inv_std = cache
        axes = _channel_axes(dy)
        dxhat = (dy * _per_channel(gamma, dy.ndim)).reshape(dy.shape[0], self.groups, -1)
        xhat_g = xhat.reshape(dxhat.shape)
        size = dxhat.shape[2]
        dx = inv_std / size * (
            size * dxhat
            - dxhat.sum(axis=2, keepdims=True)
            - xhat_g * (dxhat * xhat_g).sum(axis=2, keepdims=True)
        )
        return dx.reshape(dy.shape), [(dy * xhat).sum(axis=axes), dy.sum(axis=axes)]


@dataclass
class DistributedBnCache:
    """Кэш распределённого прямого прохода для bn_backward_distributed"""
    layer: BatchNorm
    gamma: np.ndarray
    beta: np.ndarray
    caches: List[BnCache] = field(default_factory=list)


def _default_affine(channels: int, gamma, beta) -> Tuple[np.ndarray, np.ndarray]:
    gamma = np.ones(channels) if gamma is None else np.asarray(gamma, dtype=float)
    beta = np.zeros(channels) if beta is None else np.asarray(beta, dtype=float)
    return gamma, beta


def bn_forward_distributed(local_inputs: Sequence[np.ndarray], reducer: StatsReducer,
                           gamma: Optional[np.ndarray] = None,
                           beta: Optional[np.ndarray] = None,
                           eps: float = BN_EPS):
    """
    Прямой проход BatchNorm, распределённый между участниками

    Args:
        local_inputs: Активации каждого участника, форма (n_i, C, ...)
        reducer: Редуктор частичных сумм
        gamma: Масштаб (по умолчанию единицы)
        beta: Сдвиг (по умолчанию нули)
        eps: Добавка к дисперсии

    Returns:
        (выходы участников, BnBatchStats, кэш для обратного прохода)
    """
    if not local_inputs:
        raise ContractViolation("Нужен хотя бы один участник")
    inputs = [np.asarray(x, dtype=float) for x in local_inputs]
    layer = BatchNorm(eps)
    layer.build(inputs[0].shape[1:])
    gamma, beta = _default_affine(layer.channels, gamma, beta)
    results = drive_lockstep(
        [layer.forward_lockstep(0, (gamma, beta), x) for x in inputs], reducer
    )
    outputs = [y for y, _ in results]
    caches = [c for _, c in results]
    return outputs, caches[0].stats, DistributedBnCache(layer, gamma, beta, caches)


def bn_backward_distributed(local_grads: Sequence[np.ndarray], reducer: StatsReducer,
                            cache: Optional[DistributedBnCache]) -> List[np.ndarray]:
    """
    Обратный проход BatchNorm: G и G_x редуцируются глобально

    Args:
        local_grads: dJ/dy каждого участника
        reducer: Редуктор частичных сумм
        cache: Результат bn_forward_distributed

    Returns:
        dJ/dx каждого участника
    """
    if cache is None:
        raise ProtocolOrderError("bn_backward_distributed вызван без прямого прохода")
    if len(local_grads) != len(cache.caches):
        raise ContractViolation("Число градиентов не совпадает с числом участников")
    results = drive_lockstep(
        [cache.layer.backward_lockstep(0, (cache.gamma, cache.beta), c, np.asarray(g, dtype=float))
         for c, g in zip(cache.caches, local_grads)],
        reducer,
    )
    return [dx for dx, _ in results]
