"""Чекпоинты параметров модели в плоском little-endian формате"""
import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from app.errors import FormatError
from app.models.tensors import ModelParams

MAGIC = b'FSLP'
VERSION = 1

# Формат:
#   4 байта    magic "FSLP"
#   u32        версия
#   u32        число обучаемых тензоров
#   u32        число буферов
#   далее для каждого тензора (сначала обучаемые, затем буферы):
#     u32 ndim, ndim x u32 размеры, float64 данные (C-порядок)


def params_to_bytes(params: ModelParams) -> bytes:
    chunks = [MAGIC, struct.pack('<III', VERSION, len(params.layers), len(params.buffers))]
    for tensor in params.layers + params.buffers:
        chunks.append(struct.pack('<I', tensor.ndim))
        chunks.append(struct.pack(f'<{tensor.ndim}I', *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor, dtype='<f8').tobytes())
    return b''.join(chunks)


def serialized_size(params: ModelParams) -> int:
    """Размер сериализованных параметров в байтах (без сериализации)"""
    size = len(MAGIC) + 12
    for tensor in params.layers + params.buffers:
        size += 4 + 4 * tensor.ndim + 8 * tensor.size
    return size


def _read(data: bytes, offset: int, fmt: str) -> Tuple[tuple, int]:
    size = struct.calcsize(fmt)
    if offset + size > len(data):
        raise FormatError("Файл параметров усечён", offset)
    return struct.unpack_from(fmt, data, offset), offset + size


def params_from_bytes(data: bytes) -> ModelParams:
    if data[:4] != MAGIC:
        raise FormatError("Неверная сигнатура файла параметров", 0)
    (version, n_layers, n_buffers), offset = _read(data, 4, '<III')
    if version != VERSION:
        raise FormatError(f"Неподдерживаемая версия {version}", 4)
    tensors: List[np.ndarray] = []
    for _ in range(n_layers + n_buffers):
        (ndim,), offset = _read(data, offset, '<I')
        shape, offset = _read(data, offset, f'<{ndim}I')
        count = int(np.prod(shape)) if ndim else 1
        if offset + 8 * count > len(data):
            raise FormatError("Данные тензора усечены", offset)
        tensor = np.frombuffer(data, dtype='<f8', count=count, offset=offset).reshape(shape)
        tensors.append(tensor.astype(np.float64))
        offset += 8 * count
    if offset != len(data):
        raise FormatError("Лишние байты в конце файла параметров", offset)
    return ModelParams(layers=tuple(tensors[:n_layers]), buffers=tuple(tensors[n_layers:]))


def save_params(params: ModelParams, path: Union[str, Path]) -> Path:
    """
    Сохраняет параметры в файл

    Args:
        params: Параметры модели
        path: Путь к файлу

    Returns:
        Путь к записанному файлу
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(params_to_bytes(params))
    return path


def load_params(path: Union[str, Path]) -> ModelParams:
    return params_from_bytes(Path(path).read_bytes())
