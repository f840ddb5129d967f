"""Фабрика для создания бэкендов шифрования"""
from typing import Any, Dict

from app.errors import ConfigurationError
from app.services.he_backends import BaseAheBackend, MockAheBackend, OpenFheCkksBackend


def create_backend(config: Dict[str, Any], message_callback=None) -> BaseAheBackend:
    """
    Создает бэкенд на основе секции privacy конфигурации

    Args:
        config: Полная конфигурация или секция privacy
        message_callback: Функция для отправки сообщений

    Returns:
        Экземпляр бэкенда
    """
    privacy = config.get('privacy', config)
    backend_name = privacy.get('backend', 'mock')

    if backend_name == 'mock':
        backend = MockAheBackend(
            key_seed=str(privacy.get('key_seed', 'fedsls')),
            scale_bits=int(privacy.get('scale_bits', 16)),
            message_callback=message_callback,
        )
    elif backend_name == 'openfhe':
        backend = OpenFheCkksBackend(
            scaling_mod_size=int(privacy.get('ckks_scaling_mod_size', 50)),
            batch_size=int(privacy.get('ckks_batch_size', 8)),
            tolerance=float(privacy.get('tolerance', 1e-3)),
            message_callback=message_callback,
        )
    else:
        raise ConfigurationError(f"Неизвестный бэкенд шифрования: {backend_name}")

    is_valid, error = backend.validate()
    if not is_valid:
        raise ConfigurationError(error)
    return backend
