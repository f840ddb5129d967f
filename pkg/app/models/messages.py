"""Сообщения симулируемой сети и журнал (Transcript)"""
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Union

from app.errors import ProtocolOrderError


class MessageKind(str, Enum):
    # Основной протокол обучения
    TASK_ASSIGN = 'TaskAssign'
    MODEL_RELAY = 'ModelRelay'
    NEXT_CLIENT_SIGNAL = 'NextClientSignal'
    TRAIN_REQUEST = 'TrainRequest'
    GRAD_RETURN = 'GradReturn'
    NOT_TRAIN_REPORT = 'NotTrainReport'
    MODEL_BROADCAST = 'ModelBroadcast'
    # Служебные сообщения эпохи и BatchNorm
    EPOCH_START = 'EpochStart'
    TRAIN_START = 'TrainStart'
    BN_STATS_UPLOAD = 'BnStatsUpload'
    BN_STATS_BROADCAST = 'BnStatsBroadcast'
    # Протокол маскирования меток
    LABEL_RECORD_UPLOAD = 'LabelRecordUpload'
    COMPARE_REQUEST = 'CompareRequest'
    COMPARE_RESPONSE = 'CompareResponse'
    PLACEHOLDER_CLAIM = 'PlaceholderClaim'
    COUNT_REVEAL_REQUEST = 'CountRevealRequest'
    COUNT_REVEAL_RESPONSE = 'CountRevealResponse'
    COUNT_REPORT = 'CountReport'


# Передачи модели, по которым считается f_freq
MODEL_TRANSFER_KINDS = frozenset({
    MessageKind.MODEL_RELAY,
    MessageKind.MODEL_BROADCAST,
    MessageKind.TRAIN_REQUEST,
    MessageKind.GRAD_RETURN,
})


def is_model_transfer(message: "Message") -> bool:
    """TrainRequest считается передачей модели, только если несёт параметры"""
    if message.kind == MessageKind.TRAIN_REQUEST:
        return 'params' in message.payload
    return message.kind in MODEL_TRANSFER_KINDS


@dataclass
class Message:
    """Одно сообщение между узлами"""
    kind: MessageKind
    src: str
    dst: str
    payload: Dict[str, Any] = field(default_factory=dict)
    nbytes: int = 0
    timestamp: int = -1

    def summary(self) -> Dict[str, Any]:
        return {
            'timestamp': self.timestamp,
            'kind': self.kind.value,
            'src': self.src,
            'dst': self.dst,
            'bytes': self.nbytes,
        }


class Transcript:
    """Упорядоченный журнал всех сообщений сети"""

    def __init__(self):
        self._messages: List[Message] = []

    def append(self, message: Message) -> None:
        if self._messages and message.timestamp <= self._messages[-1].timestamp:
            raise ProtocolOrderError(
                f"Сообщение {message.kind.value} с меткой времени {message.timestamp} "
                f"уже записано или пришло не по порядку"
            )
        self._messages.append(message)

    def __iter__(self) -> Iterator[Message]:
        return iter(self._messages)

    def __len__(self) -> int:
        return len(self._messages)

    @property
    def messages(self) -> List[Message]:
        return list(self._messages)

    def count(self, kind: MessageKind, src: Optional[str] = None) -> int:
        return sum(1 for m in self._messages
                   if m.kind == kind and (src is None or m.src == src))

    def counts_by_kind(self) -> Dict[str, int]:
        return dict(sorted(Counter(m.kind.value for m in self._messages).items()))

    def bytes_by_kind(self) -> Dict[str, int]:
        totals: Dict[str, int] = {}
        for message in self._messages:
            totals[message.kind.value] = totals.get(message.kind.value, 0) + message.nbytes
        return dict(sorted(totals.items()))

    def model_transfers(self) -> int:
        return sum(1 for m in self._messages if is_model_transfer(m))

    def total_bytes(self) -> int:
        return sum(m.nbytes for m in self._messages)

    def addressed_to(self, address: str) -> List[Message]:
        return [m for m in self._messages if m.dst == address]

    def since(self, position: int) -> List[Message]:
        return self._messages[position:]

    def to_jsonl(self, path: Union[str, Path]) -> Path:
        """
        Выгружает журнал в формате JSON Lines

        Args:
            path: Путь к файлу

        Returns:
            Путь к записанному файлу
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            for message in self._messages:
                f.write(json.dumps(message.summary(), ensure_ascii=False) + '\n')
        return path


@dataclass
class RoundLog:
    """Итоги одной эпохи (раунда) по журналу сообщений"""
    round_index: int
    counts: Dict[str, int] = field(default_factory=dict)
    bytes: Dict[str, int] = field(default_factory=dict)
    transfers: int = 0
    trained_slots: int = 0
    dropped: int = 0
    accuracy: Optional[float] = None

    @classmethod
    def from_messages(cls, round_index: int, messages: List[Message]) -> 'RoundLog':
        counts: Dict[str, int] = {}
        sizes: Dict[str, int] = {}
        for message in messages:
            counts[message.kind.value] = counts.get(message.kind.value, 0) + 1
            sizes[message.kind.value] = sizes.get(message.kind.value, 0) + message.nbytes
        return cls(
            round_index=round_index,
            counts=dict(sorted(counts.items())),
            bytes=dict(sorted(sizes.items())),
            transfers=sum(1 for m in messages if is_model_transfer(m)),
        )
