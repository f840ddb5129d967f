"""Детерминированные генераторы случайных чисел"""
import zlib
from typing import Union

import numpy as np

Tag = Union[int, str]


def make_rng(seed: int, *tags: Tag) -> np.random.Generator:
    """
    Генератор PCG64 для независимого потока, заданного зерном и метками

    Args:
        seed: Зерно эксперимента
        tags: Имена потоков (строки хешируются crc32) или числа

    Returns:
        numpy.random.Generator
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        entropy.append(zlib.crc32(tag.encode('utf-8')) if isinstance(tag, str) else int(tag))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *tags: Tag) -> int:
    """Производное 63-битное зерно для вложенного потока"""
    return int(make_rng(seed, *tags).integers(0, 2 ** 63 - 1))
