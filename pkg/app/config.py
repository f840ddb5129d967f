"""Конфигурация экспериментов"""
import copy
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Mapping, Optional, Union

import yaml

from app.errors import ConfigurationError
from app.models.data import PartitionKind, PartitionSpec
from app.models.experiment import (
    ALGORITHMS, BASELINE_ALGORITHMS, BaselineConfig, DatasetSpec, ExperimentConfig, ModelSpec
)
from app.models.selection import SelectionKind

logger = logging.getLogger(__name__)

# Путь к файлу конфигурации по умолчанию
CONFIG_FILE = Path(__file__).parent.parent / 'config.yaml'

# Настройки по умолчанию
DEFAULT_CONFIG: Dict[str, Any] = {
    'seed': 0,
    'algorithm': 'sls-batch',  # sls-single, sls-batch, sls-hybrid, fedavg, fedprox, scaffold, sfl
    'test_fraction': 0.2,
    'out_dir': 'runs',
    'log_level': 'INFO',
    'dataset': {
        'kind': 'digits',  # digits, synthetic, idx, csv
        'samples_per_class': 60,
        'num_classes': 10,
        'num_domains': 1,
        'dim': 16,
        'shift': 2.0,
        'rotation': 0.0,
        'noise': 0.3,
        'path': '',
        'labels_path': '',
    },
    'partition': {
        'kind': 'iid',  # iid, classes_per_client, domains_per_client, dirichlet
        'num_clients': 10,
        'classes_per_client': None,
        'domains_per_client': None,
        'beta': None,
        'max_retries': 100,
    },
    'model': {
        'kind': 'mlp',  # logreg, mlp, cnn
        'hidden': 32,
        'norm': 'none',  # none, batch, group
        'groups': 4,
        'channels': 4,
        'dtype': 'float64',
    },
    'sls': {
        'chunk_size': 5,
        'batch_size': 32,
        'policy': 'uniform',  # uniform, weighted
        'frequency_mode': 'default',  # default, uniform, capped_proportional
        'frequency': 0,
        'cap': 0,
        'hybrid_batch_epochs': 1,
    },
    'training': {
        'lr': 0.05,
        'epochs': 10,
    },
    'baseline': {
        'local_epochs': 1,
        'local_batch': 32,
        'prox_mu': 0.0,
        'shuffle': True,
    },
    'privacy': {
        'backend': 'mock',  # mock, openfhe
        'key_seed': 'fedsls-demo-key',
        'known_total': None,
    },
    'cost': {
        'c_update': 1.0,
    },
    'sweep': {},
}

# Поля, которые считаются секретами (не логируются)
SECRET_FIELDS = {
    'privacy.key_seed',
}


def _deep_merge(base: Dict[str, Any], override: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict) and key != 'sweep':
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def with_defaults(config: Mapping[str, Any]) -> Dict[str, Any]:
    """Дополняет конфигурацию недостающими ключами из DEFAULT_CONFIG"""
    return _deep_merge(DEFAULT_CONFIG, config)


def load_config(path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """
    Загружает конфигурацию из YAML-файла поверх настроек по умолчанию

    Args:
        path: Путь к файлу (по умолчанию config.yaml в корне)

    Returns:
        Словарь с настройками
    """
    path = Path(path) if path is not None else CONFIG_FILE
    if not path.exists():
        logger.warning("⚠️ Файл конфигурации %s не найден, используются настройки по умолчанию", path)
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            saved_config = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Ошибка разбора {path}: {e}") from e
    if saved_config is None:
        saved_config = {}
    if not isinstance(saved_config, dict):
        raise ConfigurationError(f"{path}: ожидается словарь настроек")
    config = _deep_merge(DEFAULT_CONFIG, saved_config)
    logger.info("✅ Конфигурация загружена из %s", path)
    return config


def save_config(config: Dict[str, Any], path: Optional[Union[str, Path]] = None) -> bool:
    """
    Сохраняет конфигурацию в YAML

    Args:
        config: Словарь с настройками
        path: Путь к файлу

    Returns:
        True если сохранение успешно, False в противном случае
    """
    path = Path(path) if path is not None else CONFIG_FILE
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            yaml.safe_dump(config, f, allow_unicode=True, sort_keys=False)
        logger.info("✅ Конфигурация сохранена в %s", path)
        return True
    except OSError as e:
        logger.error("❌ Ошибка сохранения конфигурации: %s", e)
        return False


def _split_override(item: str):
    if '=' not in item:
        raise ConfigurationError(f"Переопределение должно иметь вид ключ=значение: {item}")
    key, raw = item.split('=', 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else ''
    except yaml.YAMLError:
        value = raw
    return key.strip(), value


def apply_overrides(config: Dict[str, Any],
                    overrides: Union[Mapping[str, Any], Iterable[str]]) -> Dict[str, Any]:
    """
    Применяет переопределения вида training.lr=0.1

    Args:
        config: Исходная конфигурация (не изменяется)
        overrides: Словарь {ключ через точку: значение} или строки 'ключ=значение'

    Returns:
        Новая конфигурация
    """
    items = overrides.items() if isinstance(overrides, Mapping) else map(_split_override, overrides)
    result = copy.deepcopy(config)
    for key, value in items:
        parts = key.split('.')
        current = result
        for part in parts[:-1]:
            if not isinstance(current.get(part), dict):
                current[part] = {}
            current = current[part]
        current[parts[-1]] = value
    return result


def get_config_for_logging(config: Dict[str, Any]) -> Dict[str, Any]:
    """
    Возвращает конфигурацию с замаскированными секретами для логирования

    Args:
        config: Словарь с настройками

    Returns:
        Копия конфигурации с замаскированными секретами
    """
    masked_config = copy.deepcopy(config)
    for field in SECRET_FIELDS:
        *parents, name = field.split('.')
        section = masked_config
        for part in parents:
            section = section.get(part) if isinstance(section, dict) else None
        if isinstance(section, dict) and section.get(name):
            value = str(section[name])
            if len(value) > 8:
                section[name] = value[:4] + '*' * (len(value) - 8) + value[-4:]
            else:
                section[name] = '*' * len(value)
    return masked_config


def _get(config: Mapping[str, Any], key: str, cast: Callable = None, optional: bool = False):
    current: Any = config
    for part in key.split('.'):
        if not isinstance(current, Mapping) or part not in current:
            raise ConfigurationError(f"Отсутствует ключ конфигурации {key}")
        current = current[part]
    if current is None and optional:
        return None
    if cast is None:
        return current
    try:
        return cast(current)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"{key}: недопустимое значение {current!r}") from e


def _require(condition: bool, key: str, message: str) -> None:
    if not condition:
        raise ConfigurationError(f"{key}: {message}")


def build_experiment_config(config: Mapping[str, Any]) -> ExperimentConfig:
    """
    Проверяет конфигурацию и собирает ExperimentConfig

    Args:
        config: Словарь настроек (после load_config / apply_overrides)

    Returns:
        ExperimentConfig

    Raises:
        ConfigurationError: с указанием ключа, если настройка недопустима
    """
    config = with_defaults(config)
    seed = _get(config, 'seed', int)
    algorithm = _get(config, 'algorithm', str)
    _require(algorithm in ALGORITHMS, 'algorithm', f"неизвестный алгоритм {algorithm}")

    dataset = DatasetSpec(
        kind=_get(config, 'dataset.kind', str),
        samples_per_class=_get(config, 'dataset.samples_per_class', int),
        num_classes=_get(config, 'dataset.num_classes', int),
        num_domains=_get(config, 'dataset.num_domains', int),
        dim=_get(config, 'dataset.dim', int),
        shift=_get(config, 'dataset.shift', float),
        rotation=_get(config, 'dataset.rotation', float),
        noise=_get(config, 'dataset.noise', float),
        path=str(_get(config, 'dataset.path') or ''),
        labels_path=str(_get(config, 'dataset.labels_path') or ''),
    )
    _require(dataset.kind in ('digits', 'synthetic', 'idx', 'csv'), 'dataset.kind',
             f"неизвестный тип {dataset.kind}")
    _require(dataset.samples_per_class >= 1, 'dataset.samples_per_class', "должно быть >= 1")
    _require(dataset.num_classes >= 1, 'dataset.num_classes', "должно быть >= 1")
    _require(dataset.num_domains >= 1, 'dataset.num_domains', "должно быть >= 1")
    _require(dataset.kind not in ('idx', 'csv') or bool(dataset.path), 'dataset.path',
             "нужен путь к файлу данных")
    _require(dataset.kind != 'digits' or dataset.num_classes <= 10, 'dataset.num_classes',
             "для digits не больше 10 классов")

    try:
        partition_kind = PartitionKind(_get(config, 'partition.kind', str))
    except ValueError as e:
        raise ConfigurationError(f"partition.kind: {e}") from e
    partition = PartitionSpec(
        kind=partition_kind,
        num_clients=_get(config, 'partition.num_clients', int),
        seed=seed,
        classes_per_client=_get(config, 'partition.classes_per_client', int, optional=True),
        domains_per_client=_get(config, 'partition.domains_per_client', int, optional=True),
        beta=_get(config, 'partition.beta', float, optional=True),
        max_retries=_get(config, 'partition.max_retries', int),
    )
    domains = dataset.num_domains if dataset.kind == 'synthetic' else 1
    partition.validate(dataset.num_classes, domains)

    model = ModelSpec(
        kind=_get(config, 'model.kind', str),
        hidden=_get(config, 'model.hidden', int),
        norm=_get(config, 'model.norm', str),
        groups=_get(config, 'model.groups', int),
        channels=_get(config, 'model.channels', int),
        dtype=_get(config, 'model.dtype', str),
    )
    _require(model.kind in ('logreg', 'mlp', 'cnn'), 'model.kind', f"неизвестная модель {model.kind}")
    _require(model.norm in ('none', 'batch', 'group'), 'model.norm', f"неизвестная нормализация {model.norm}")
    _require(model.dtype in ('float64', 'float32'), 'model.dtype', "поддерживаются float64 и float32")
    _require(not (model.has_batch_norm and algorithm in ('sls-single', 'sls-hybrid')), 'model.norm',
             "BatchNorm несовместим с режимом одиночных примеров; используйте group")

    lr = _get(config, 'training.lr', float)
    epochs = _get(config, 'training.epochs', int)
    _require(lr >= 0, 'training.lr', "должно быть >= 0")
    _require(epochs >= 1, 'training.epochs', "должно быть >= 1")

    chunk_size = _get(config, 'sls.chunk_size', int)
    batch_size = _get(config, 'sls.batch_size', int)
    _require(chunk_size >= 1, 'sls.chunk_size', "должно быть >= 1")
    _require(batch_size >= 1, 'sls.batch_size', "должно быть >= 1")
    _require(not model.has_batch_norm or batch_size >= 2, 'sls.batch_size', "BatchNorm требует >= 2")
    try:
        policy = SelectionKind(_get(config, 'sls.policy', str))
    except ValueError as e:
        raise ConfigurationError(f"sls.policy: {e}") from e
    frequency_mode = _get(config, 'sls.frequency_mode', str)
    frequency = _get(config, 'sls.frequency', int)
    cap = _get(config, 'sls.cap', int)
    _require(frequency_mode in ('default', 'uniform', 'capped_proportional'), 'sls.frequency_mode',
             f"неизвестный режим {frequency_mode}")
    _require(frequency_mode != 'uniform' or frequency >= 1, 'sls.frequency', "должно быть >= 1")
    _require(frequency_mode != 'capped_proportional' or cap >= 1, 'sls.cap', "должно быть >= 1")
    hybrid_batch_epochs = _get(config, 'sls.hybrid_batch_epochs', int)
    _require(0 <= hybrid_batch_epochs <= epochs, 'sls.hybrid_batch_epochs',
             "должно быть в [0, training.epochs]")

    backend = _get(config, 'privacy.backend', str)
    _require(backend in ('mock', 'openfhe'), 'privacy.backend', f"неизвестный бэкенд {backend}")
    known_total = _get(config, 'privacy.known_total', int, optional=True)
    _require(known_total is None or known_total >= 1, 'privacy.known_total', "должно быть >= 1")

    baseline = BaselineConfig(
        algorithm=algorithm if algorithm in BASELINE_ALGORITHMS else 'fedavg',
        local_epochs=_get(config, 'baseline.local_epochs', int),
        local_batch=_get(config, 'baseline.local_batch', int),
        lr=lr,
        prox_mu=_get(config, 'baseline.prox_mu', float),
        shuffle=bool(_get(config, 'baseline.shuffle')),
    )
    baseline.validate()

    test_fraction = _get(config, 'test_fraction', float)
    _require(0.0 <= test_fraction < 1.0, 'test_fraction', "должно быть в [0, 1)")
    c_update = _get(config, 'cost.c_update', float)
    _require(c_update >= 0, 'cost.c_update', "должно быть >= 0")

    return ExperimentConfig(
        dataset=dataset,
        partition=partition,
        model=model,
        algorithm=algorithm,
        chunk_size=chunk_size,
        batch_size=batch_size,
        policy=policy,
        lr=lr,
        epochs=epochs,
        seed=seed,
        backend=backend,
        baseline=baseline,
        frequency_mode=frequency_mode,
        frequency=frequency,
        cap=cap,
        hybrid_batch_epochs=hybrid_batch_epochs,
        test_fraction=test_fraction,
        known_total=known_total,
        key_seed=str(_get(config, 'privacy.key_seed') or ''),
        c_update=c_update,
        out_dir=str(_get(config, 'out_dir')),
    )
