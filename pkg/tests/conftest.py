"""Общие фикстуры тестов"""
import struct

import numpy as np
import pytest

from app.models.data import Dataset
from app.services.datasets import make_synthetic


@pytest.fixture
def tiny_dataset() -> Dataset:
    return make_synthetic(num_classes=4, samples_per_class=20, num_domains=1, seed=0, dim=4)


@pytest.fixture
def domain_dataset() -> Dataset:
    return make_synthetic(num_classes=3, samples_per_class=12, num_domains=3, seed=1, dim=4,
                          shift=2.0, rotation=0.3)


@pytest.fixture
def write_idx(tmp_path):
    """Пишет пару IDX-файлов (изображения и метки) и возвращает путь к изображениям"""
    def writer(images, labels, name: str = 'train-images-idx3-ubyte'):
        images = np.asarray(images, dtype=np.uint8)
        labels = np.asarray(labels, dtype=np.uint8)
        image_path = tmp_path / name
        label_path = tmp_path / name.replace('images', 'labels').replace('idx3', 'idx1')
        image_path.write_bytes(struct.pack('>IIII', 0x00000803, *images.shape) + images.tobytes())
        label_path.write_bytes(struct.pack('>II', 0x00000801, labels.shape[0]) + labels.tobytes())
        return image_path
    return writer
