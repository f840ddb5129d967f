"""Исключения симулятора"""
from typing import Any, Optional


class FedSlsError(Exception):
    """Базовое исключение для всех ошибок симулятора"""


class ConfigurationError(FedSlsError, ValueError):
    """Неверная конфигурация: ключи, формы тензоров, несовместимые режимы"""


class ContractViolation(FedSlsError, ValueError):
    """Нарушено предусловие операции"""


class NumericError(FedSlsError, ArithmeticError):
    """Неконечное значение активации"""

    def __init__(self, message: str, layer_index: int):
        super().__init__(f"{message} (слой {layer_index})")
        self.layer_index = layer_index


class DegenerateBatchError(FedSlsError, ValueError):
    """Глобальный батч BatchNorm слишком мал (m < 2)"""


class ProtocolOrderError(FedSlsError, RuntimeError):
    """Шаги протокола выполнены не в том порядке"""


class PartitionError(FedSlsError, ValueError):
    """Разбиение датасета по клиентам невозможно"""


class PlanError(FedSlsError, ValueError):
    """Неверный план частот меток"""


class FormatError(FedSlsError, ValueError):
    """Повреждённый или усечённый файл данных"""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (смещение {offset})")
        self.offset = offset


class UnknownPlaceholderError(FedSlsError, LookupError):
    """Плейсхолдер отсутствует в плане"""


class UnservablePlaceholderError(FedSlsError, RuntimeError):
    """Для плейсхолдера не осталось доступных клиентов"""

    def __init__(self, placeholder: Any, message: Optional[str] = None):
        super().__init__(message or f"Нет доступных клиентов для плейсхолдера {placeholder}")
        self.placeholder = placeholder


class RelayError(FedSlsError, RuntimeError):
    """Модель передана несуществующему узлу или не дошла до адресата"""


class ProtocolAbort(FedSlsError, RuntimeError):
    """Сбой бэкенда шифрования во время протокола меток"""


class ProtocolIntegrityError(FedSlsError, RuntimeError):
    """Метка клиента сопоставилась с нулём или несколькими уникальными метками"""


class BackendPrecisionError(FedSlsError, ArithmeticError):
    """Погрешность расшифровки превышает допуск бэкенда"""
