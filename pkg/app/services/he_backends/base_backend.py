"""Базовый класс для аддитивно-гомоморфных бэкендов"""
from abc import ABC, abstractmethod
from typing import Callable, Optional

from app.models.privacy import Ciphertext


class BaseAheBackend(ABC):
    """
    Базовый класс для всех бэкендов шифрования

    Ключ расшифровки есть только у клиентов; сервер получает
    от бэкенда лишь HomomorphicEvaluator (сложение и вычитание).
    """

    name = 'base'

    def __init__(self, message_callback: Optional[Callable] = None):
        """
        Args:
            message_callback: Функция для отправки сообщений (type, message)
        """
        self.message_callback = message_callback

    @property
    @abstractmethod
    def tolerance(self) -> float:
        """Допуск tau: |decrypt(op(E(a), E(b))) - op(a, b)| <= tau"""
        pass

    @abstractmethod
    def encrypt(self, value: float) -> Ciphertext:
        pass

    @abstractmethod
    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        pass

    @abstractmethod
    def subtract(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        pass

    @abstractmethod
    def decrypt(self, ciphertext: Ciphertext) -> float:
        pass

    def evaluator(self) -> 'HomomorphicEvaluator':
        """Серверная часть: операции над шифртекстами без ключа"""
        return HomomorphicEvaluator(self.add, self.subtract)

    def validate(self):
        """
        Проверяет, что допуск позволяет отличать целые метки

        Returns:
            (is_valid, error_message)
        """
        if self.tolerance >= 0.5:
            return False, f"Допуск бэкенда {self.tolerance} >= 0.5, сравнение меток ненадёжно"
        return True, ""


class HomomorphicEvaluator:
    """Операции, доступные серверу"""

    def __init__(self, add: Callable[[Ciphertext, Ciphertext], Ciphertext],
                 subtract: Callable[[Ciphertext, Ciphertext], Ciphertext]):
        self._add = add
        self._subtract = subtract

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        return self._add(a, b)

    def subtract(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        return self._subtract(a, b)
