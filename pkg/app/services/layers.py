"""Слои нейросети с явным прямым и обратным проходом на numpy"""
from abc import ABC, abstractmethod
from typing import Any, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp, softmax

from app.errors import ConfigurationError

Shape = Tuple[int, ...]


def he_uniform(rng: np.random.Generator, shape: Shape, fan_in: int) -> np.ndarray:
    """Равномерная инициализация He: U(-sqrt(6/fan_in), sqrt(6/fan_in))"""
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer(ABC):
    """Базовый класс для всех слоёв"""

    name = 'layer'

    def build(self, input_shape: Shape) -> Shape:
        """
        Запоминает форму входа (без оси батча) и возвращает форму выхода

        Args:
            input_shape: Форма одного примера на входе слоя

        Returns:
            Форма одного примера на выходе слоя
        """
        self.input_shape = tuple(input_shape)
        return self.input_shape

    def param_shapes(self) -> List[Shape]:
        return []

    def init_params(self, rng: np.random.Generator) -> List[np.ndarray]:
        return []

    def init_buffers(self) -> List[np.ndarray]:
        return []

    @abstractmethod
    def forward(self, params: Sequence[np.ndarray], x: np.ndarray) -> Tuple[np.ndarray, Any]:
        pass

    @abstractmethod
    def backward(self, params: Sequence[np.ndarray], cache: Any,
                 dy: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
        pass


class Flatten(Layer):
    name = 'flatten'

    def build(self, input_shape: Shape) -> Shape:
        super().build(input_shape)
        return (int(np.prod(input_shape)),)

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, dy):
        return dy.reshape(cache), []


class Dense(Layer):
    name = 'dense'

    def __init__(self, units: int):
        self.units = units

    def build(self, input_shape: Shape) -> Shape:
        super().build(input_shape)
        if len(input_shape) != 1:
            raise ConfigurationError(
                f"Dense ожидает вектор на входе, получена форма {input_shape}"
            )
        self.fan_in = input_shape[0]
        return (self.units,)

    def param_shapes(self):
        return [(self.fan_in, self.units), (self.units,)]

    def init_params(self, rng):
        return [he_uniform(rng, (self.fan_in, self.units), self.fan_in), np.zeros(self.units)]

    def forward(self, params, x):
        weight, bias = params
        return x @ weight + bias, x

    def backward(self, params, cache, dy):
        weight, _ = params
        return dy @ weight.T, [cache.T @ dy, dy.sum(axis=0)]


class ReLU(Layer):
    name = 'relu'

    def forward(self, params, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, cache, dy):
        return dy * cache, []


class Conv2D(Layer):
    """Свёртка 3x3 (или k x k) с паддингом same и шагом 1"""

    name = 'conv2d'

    def __init__(self, filters: int, kernel: int = 3):
        if kernel % 2 != 1:
            raise ConfigurationError("Размер ядра свёртки должен быть нечётным")
        self.filters = filters
        self.kernel = kernel

    def build(self, input_shape: Shape) -> Shape:
        super().build(input_shape)
        if len(input_shape) != 3:
            raise ConfigurationError(
                f"Conv2D ожидает вход (каналы, высота, ширина), получено {input_shape}"
            )
        self.in_channels, height, width = input_shape
        self.fan_in = self.in_channels * self.kernel * self.kernel
        return (self.filters, height, width)

    def param_shapes(self):
        k = self.kernel
        return [(self.filters, self.in_channels, k, k), (self.filters,)]

    def init_params(self, rng):
        return [he_uniform(rng, self.param_shapes()[0], self.fan_in), np.zeros(self.filters)]

    def _windows(self, x: np.ndarray) -> np.ndarray:
        pad = self.kernel // 2
        padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        # (n, c, h, w, k, k)
        return sliding_window_view(padded, (self.kernel, self.kernel), axis=(2, 3))

    def forward(self, params, x):
        weight, bias = params
        windows = self._windows(x)
        y = np.einsum('nchwij,ocij->nohw', windows, weight) + bias[None, :, None, None]
        return y, (windows, x.shape)

    def backward(self, params, cache, dy):
        weight, _ = params
        windows, shape = cache
        _, _, height, width = shape
        k = self.kernel
        pad = k // 2
        d_weight = np.einsum('nchwij,nohw->ocij', windows, dy)
        d_bias = dy.sum(axis=(0, 2, 3))
        d_padded = np.zeros((shape[0], shape[1], height + 2 * pad, width + 2 * pad), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                d_padded[:, :, i:i + height, j:j + width] += np.einsum(
                    'nohw,oc->nchw', dy, weight[:, :, i, j]
                )
        return d_padded[:, :, pad:pad + height, pad:pad + width], [d_weight, d_bias]


class MaxPool2(Layer):
    name = 'maxpool2'

    def build(self, input_shape: Shape) -> Shape:
        super().build(input_shape)
        channels, height, width = input_shape
        if height % 2 or width % 2:
            raise ConfigurationError(f"MaxPool2 требует чётные размеры, получено {input_shape}")
        return (channels, height // 2, width // 2)

    def forward(self, params, x):
        n, c, h, w = x.shape
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
        index = np.argmax(blocks, axis=-1)
        y = np.take_along_axis(blocks, index[..., None], axis=-1)[..., 0]
        return y, (index, x.shape)

    def backward(self, params, cache, dy):
        index, (n, c, h, w) = cache
        d_blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(d_blocks, index[..., None], dy[..., None], axis=-1)
        d_blocks = d_blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return d_blocks.reshape(n, c, h, w), []


def cross_entropy_sum(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Сумма (не среднее) кросс-энтропий по батчу и её градиент по логитам

    Args:
        logits: Массив (n, K)
        labels: Целочисленные метки (n,)

    Returns:
        (loss_sum, dlogits)
    """
    rows = np.arange(logits.shape[0])
    loss_sum = float(np.sum(logsumexp(logits, axis=1) - logits[rows, labels]))
    dlogits = softmax(logits, axis=1)
    dlogits[rows, labels] -= 1.0
    return loss_sum, dlogits
