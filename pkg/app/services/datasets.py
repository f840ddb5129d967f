"""Датасеты: встроенный набор цифр 8x8, синтетика с доменным сдвигом, загрузчики IDX и CSV"""
import logging
import struct
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from app.errors import ConfigurationError, FormatError
from app.models.data import Dataset, Sample
from app.services.seeding import make_rng

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# Прототипы цифр 8x8 ('#' = 1.0)
DIGIT_GLYPHS = [
    ["..####..", ".#....#.", ".#...##.", ".#..#.#.", ".#.#..#.", ".##...#.", ".#....#.", "..####.."],
    ["...##...", "..###...", ".#.##...", "...##...", "...##...", "...##...", "...##...", ".######."],
    ["..####..", ".#....#.", "......#.", ".....#..", "....#...", "...#....", "..#.....", ".######."],
    ["..####..", ".#....#.", "......#.", "...###..", "......#.", "......#.", ".#....#.", "..####.."],
    ["....##..", "...#.#..", "..#..#..", ".#...#..", ".######.", ".....#..", ".....#..", ".....#.."],
    [".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#....#.", "..####.."],
    ["..####..", ".#......", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.", "..####.."],
    [".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....", "...#...."],
    ["..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.", "..####.."],
    ["..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", ".....#..", "..###..."],
]


def digit_prototypes(size: int = 8) -> np.ndarray:
    """Прототипы десяти цифр, форма (10, size, size)"""
    if size % 8:
        raise ConfigurationError(f"Размер изображения цифр должен быть кратен 8, получено {size}")
    base = np.array([[[1.0 if ch == '#' else 0.0 for ch in row] for row in glyph]
                     for glyph in DIGIT_GLYPHS])
    factor = size // 8
    return np.stack([np.kron(glyph, np.ones((factor, factor))) for glyph in base])


def _shift_image(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    shifted = np.roll(image, (dy, dx), axis=(0, 1))
    if dy > 0:
        shifted[:dy, :] = 0.0
    elif dy < 0:
        shifted[dy:, :] = 0.0
    if dx > 0:
        shifted[:, :dx] = 0.0
    elif dx < 0:
        shifted[:, dx:] = 0.0
    return shifted


def make_digits(samples_per_class: int, seed: int, size: int = 8, noise: float = 0.3,
                num_classes: int = 10) -> Dataset:
    """
    Небольшой 10-классовый набор изображений цифр

    Каждый пример: прототип цифры, сдвинутый на -1..1 пиксель по каждой оси,
    плюс гауссов шум, обрезанный в [0, 1].

    Args:
        samples_per_class: Число примеров на класс
        seed: Зерно генератора
        size: Сторона изображения (кратна 8)
        noise: Стандартное отклонение шума
        num_classes: Сколько первых цифр использовать (1..10)

    Returns:
        Dataset с признаками формы (1, size, size)
    """
    if samples_per_class < 1:
        raise ConfigurationError("samples_per_class должен быть >= 1")
    if not 1 <= num_classes <= len(DIGIT_GLYPHS):
        raise ConfigurationError(f"num_classes для цифр должен быть в [1, {len(DIGIT_GLYPHS)}]")
    rng = make_rng(seed, 'digits')
    prototypes = digit_prototypes(size)
    samples: List[Sample] = []
    for label in range(num_classes):
        for _ in range(samples_per_class):
            dy, dx = rng.integers(-1, 2, size=2)
            image = _shift_image(prototypes[label], int(dy), int(dx))
            image = np.clip(image + noise * rng.standard_normal(image.shape), 0.0, 1.0)
            samples.append(Sample(features=image[None, :, :], label=label, index=len(samples)))
    return Dataset(samples=tuple(samples), num_classes=num_classes)


def domain_transform(dim: int, domain: int, shift: float, rotation: float):
    """
    Аффинное преобразование домена: поворот в плоскости первых двух осей
    на угол domain * rotation и сдвиг domain * shift вдоль ones/sqrt(dim)

    Returns:
        (матрица поворота, вектор сдвига)
    """
    matrix = np.eye(dim)
    angle = domain * rotation
    if dim >= 2 and angle:
        c, s = np.cos(angle), np.sin(angle)
        matrix[0, 0], matrix[0, 1], matrix[1, 0], matrix[1, 1] = c, -s, s, c
    offset = domain * shift * np.ones(dim) / np.sqrt(dim)
    return matrix, offset


def make_synthetic(num_classes: int, samples_per_class: int, num_domains: int, seed: int,
                   dim: int = 16, shift: float = 2.0, rotation: float = 0.0,
                   noise: float = 1.0, spread: float = 3.0) -> Dataset:
    """
    Гауссовы кластеры по классам с доменным сдвигом признаков

    Базовые точки класса общие для всех доменов, домен d применяет к ним
    фиксированное аффинное преобразование, поэтому при rotation=0 средние
    класса в доменах d и 0 отличаются ровно на d * shift по норме.

    Args:
        num_classes: Число классов
        samples_per_class: Примеров на класс в каждом домене
        num_domains: Число доменов
        seed: Зерно генератора
        dim: Размерность признаков
        shift: Величина сдвига между соседними доменами
        rotation: Угол поворота между соседними доменами, радианы
        noise: Стандартное отклонение внутри класса
        spread: Стандартное отклонение центров классов

    Returns:
        Dataset с domain_tags
    """
    if min(num_classes, samples_per_class, num_domains, dim) < 1:
        raise ConfigurationError("Все размеры синтетического датасета должны быть >= 1")
    rng = make_rng(seed, 'synthetic')
    centers = spread * rng.standard_normal((num_classes, dim))
    base = centers[:, None, :] + noise * rng.standard_normal((num_classes, samples_per_class, dim))
    samples: List[Sample] = []
    tags: List[int] = []
    for domain in range(num_domains):
        matrix, offset = domain_transform(dim, domain, shift, rotation)
        for label in range(num_classes):
            for point in base[label]:
                samples.append(Sample(features=matrix @ point + offset, label=label,
                                      index=len(samples)))
                tags.append(domain)
    return Dataset(samples=tuple(samples), num_classes=num_classes, domain_tags=tuple(tags))


def _read_idx(data: bytes, expected_magic: int, expected_ndim: int) -> np.ndarray:
    if len(data) < 4:
        raise FormatError("Файл IDX короче заголовка", len(data))
    (magic,) = struct.unpack_from('>I', data, 0)
    if magic != expected_magic:
        raise FormatError(f"Неверная сигнатура IDX 0x{magic:08x}", 0)
    header_end = 4 + 4 * expected_ndim
    if len(data) < header_end:
        raise FormatError("Заголовок IDX усечён", len(data))
    dims = struct.unpack_from(f'>{expected_ndim}I', data, 4)
    size = int(np.prod(dims))
    if len(data) < header_end + size:
        raise FormatError(
            f"Данные IDX усечены: ожидалось {size} байт", len(data)
        )
    if len(data) > header_end + size:
        raise FormatError("Лишние байты после данных IDX", header_end + size)
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=header_end).reshape(dims)


def _labels_path_for(images_path: Path) -> Path:
    name = images_path.name.replace('images', 'labels').replace('idx3', 'idx1')
    if name == images_path.name:
        raise ConfigurationError(
            f"Не удалось определить файл меток для {images_path}, укажите labels_path"
        )
    return images_path.with_name(name)


def load_idx_images(path: Union[str, Path], labels_path: Optional[Union[str, Path]] = None,
                    num_classes: Optional[int] = None) -> Dataset:
    """
    Загружает изображения и метки в формате IDX (MNIST)

    Args:
        path: Файл изображений (сигнатура 0x00000803)
        labels_path: Файл меток (0x00000801); по умолчанию имя с images -> labels
        num_classes: Число классов (по умолчанию max(метка) + 1, не меньше 10)

    Returns:
        Dataset с признаками формы (1, rows, cols) в [0, 1]
    """
    path = Path(path)
    labels_path = Path(labels_path) if labels_path else _labels_path_for(path)
    images = _read_idx(path.read_bytes(), IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path.read_bytes(), IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"Число изображений {images.shape[0]} не совпадает с числом меток {labels.shape[0]}",
            4,
        )
    if num_classes is None:
        num_classes = max(10, int(labels.max()) + 1) if labels.size else 10
    pixels = images.astype(np.float64) / 255.0
    samples = tuple(
        Sample(features=pixels[i][None, :, :], label=int(labels[i]), index=i)
        for i in range(images.shape[0])
    )
    logger.info("✅ Загружено %d изображений из %s", len(samples), path)
    return Dataset(samples=samples, num_classes=num_classes)


def load_csv(path: Union[str, Path], num_classes: Optional[int] = None) -> Dataset:
    """
    Табличные данные: строка заголовка, метка в последнем столбце

    Args:
        path: Путь к CSV
        num_classes: Число классов (по умолчанию max(метка) + 1)
    """
    path = Path(path)
    try:
        table = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
    except ValueError as e:
        raise FormatError(f"Не удалось разобрать CSV {path}: {e}", 0) from e
    if table.shape[0] == 0 or table.shape[1] < 2:
        raise FormatError(f"CSV {path} не содержит признаков и меток", 0)
    labels = table[:, -1]
    bad = np.nonzero((labels != np.round(labels)) | (labels < 0))[0]
    if bad.size:
        raise FormatError(f"Нецелая или отрицательная метка в строке {int(bad[0]) + 2}", int(bad[0]) + 2)
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    samples = tuple(
        Sample(features=table[i, :-1].copy(), label=int(labels[i]), index=i)
        for i in range(table.shape[0])
    )
    return Dataset(samples=samples, num_classes=num_classes)
