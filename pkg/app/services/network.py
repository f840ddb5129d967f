"""Симулируемая сеть: FIFO-очереди между узлами, логические часы и журнал"""
import logging
from collections import deque
from typing import Any, Deque, Dict, Optional, Set, Tuple

import numpy as np

from app.errors import ProtocolOrderError, RelayError
from app.models.messages import Message, MessageKind, Transcript
from app.models.privacy import Ciphertext
from app.models.schedule import Placeholder
from app.models.tensors import BnPartial, GradientSum, ModelParams
from app.services.checkpoint import serialized_size

logger = logging.getLogger(__name__)


def payload_size(value: Any) -> int:
    """Размер полезной нагрузки в байтах (модель считается по сериализованному виду)"""
    if value is None:
        return 0
    if isinstance(value, ModelParams):
        return serialized_size(value)
    if isinstance(value, GradientSum):
        return int(sum(g.nbytes for g in value.grads))
    if isinstance(value, np.ndarray):
        return int(value.nbytes)
    if isinstance(value, Ciphertext):
        return value.nbytes
    if isinstance(value, BnPartial):
        return int(value.values.nbytes) + 8
    if isinstance(value, Placeholder):
        return len(value.id.encode('utf-8'))
    if isinstance(value, bool):
        return 1
    if isinstance(value, (int, float, np.integer, np.floating)):
        return 8
    if isinstance(value, str):
        return len(value.encode('utf-8'))
    if isinstance(value, bytes):
        return len(value)
    if isinstance(value, dict):
        return sum(payload_size(v) for v in value.values())
    if isinstance(value, (list, tuple, set, frozenset)):
        return sum(payload_size(v) for v in value)
    raise TypeError(f"Неизвестный тип полезной нагрузки: {type(value).__name__}")


class Network:
    """
    Доставка без потерь в порядке FIFO для каждой пары (src, dst)

    Каждое отправленное сообщение получает метку логических часов
    и ровно один раз попадает в Transcript.
    """

    def __init__(self, transcript: Optional[Transcript] = None):
        self.transcript = transcript if transcript is not None else Transcript()
        self.clock = 0
        self._nodes: Set[str] = set()
        self._queues: Dict[Tuple[str, str], Deque[Message]] = {}

    def register(self, address: str) -> None:
        self._nodes.add(address)

    @property
    def nodes(self) -> Set[str]:
        return set(self._nodes)

    def send(self, kind: MessageKind, src: str, dst: str,
             payload: Optional[Dict[str, Any]] = None) -> Message:
        """
        Отправляет сообщение

        Args:
            kind: Тип сообщения
            src: Отправитель
            dst: Получатель
            payload: Полезная нагрузка

        Returns:
            Отправленное сообщение
        """
        for address in (src, dst):
            if address not in self._nodes:
                raise RelayError(f"Узел {address} не зарегистрирован в сети")
        payload = payload or {}
        self.clock += 1
        message = Message(kind=kind, src=src, dst=dst, payload=payload,
                          nbytes=payload_size(payload), timestamp=self.clock)
        self._queues.setdefault((src, dst), deque()).append(message)
        self.transcript.append(message)
        logger.debug("📝 %s %s -> %s (%d байт)", kind.value, src, dst, message.nbytes)
        return message

    def receive(self, src: str, dst: str, kind: Optional[MessageKind] = None) -> Message:
        """Забирает первое сообщение из очереди (src, dst)"""
        queue = self._queues.get((src, dst))
        if not queue:
            raise RelayError(f"Нет сообщений {src} -> {dst}"
                             + (f" типа {kind.value}" if kind else ""))
        message = queue.popleft()
        if kind is not None and message.kind != kind:
            raise ProtocolOrderError(
                f"Ожидалось {kind.value} {src} -> {dst}, получено {message.kind.value}"
            )
        return message

    def pending(self, src: str, dst: str) -> int:
        return len(self._queues.get((src, dst), ()))

    def in_flight(self) -> int:
        return sum(len(q) for q in self._queues.values())
