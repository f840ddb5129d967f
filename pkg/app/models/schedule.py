"""Модели расписания меток"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List


@dataclass(frozen=True, order=True)
class Placeholder:
    """Непрозрачный токен, заменяющий реальную метку на сервере"""
    id: str

    def __str__(self) -> str:
        return self.id


class FrequencyMode(str, Enum):
    UNIFORM = 'uniform'
    CAPPED = 'capped_proportional'


@dataclass
class FrequencyPlan:
    """Сколько раз каждый плейсхолдер повторяется в расписании"""
    freqs: Dict[Placeholder, int]
    mode: FrequencyMode = FrequencyMode.UNIFORM
    parameter: int = 0  # f для uniform, cap для capped_proportional

    @property
    def total(self) -> int:
        return sum(self.freqs.values())

    def __contains__(self, placeholder: Placeholder) -> bool:
        return placeholder in self.freqs


@dataclass
class Schedule:
    """
    Перемешанное мультимножество плейсхолдеров

    entries[:cursor] уже выданы, entries[cursor:] ещё ждут обработки.
    """
    entries: List[Placeholder]
    cursor: int = 0
    seed: int = 0
    reinserted: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def remaining(self) -> List[Placeholder]:
        return self.entries[self.cursor:]

    @property
    def consumed(self) -> List[Placeholder]:
        return self.entries[:self.cursor]

    @property
    def exhausted(self) -> bool:
        return self.cursor >= len(self.entries)
