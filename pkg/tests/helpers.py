"""Построители тестовых данных"""
from typing import Dict, List

import numpy as np

from app.models.data import ClientShard, Sample


def make_samples(label_counts: Dict[int, int], dim: int = 4, seed: int = 0,
                 start_index: int = 0) -> List[Sample]:
    """Случайные примеры с заданным числом примеров каждой метки"""
    rng = np.random.default_rng(seed)
    samples = []
    for label, count in sorted(label_counts.items()):
        for _ in range(count):
            samples.append(Sample(features=rng.normal(size=dim) + label, label=label,
                                  index=start_index + len(samples)))
    return samples


def make_shard(client_id: str, label_counts: Dict[int, int], dim: int = 4, seed: int = 0,
               start_index: int = 0) -> ClientShard:
    return ClientShard.from_samples(client_id, make_samples(label_counts, dim, seed, start_index))
