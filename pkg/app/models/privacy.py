"""Модели протокола маскирования меток"""
import struct
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple

from app.errors import FormatError, ProtocolIntegrityError
from app.models.schedule import Placeholder


@dataclass(frozen=True)
class Ciphertext:
    """Непрозрачный шифртекст (байтовая строка)"""
    blob: bytes

    def to_bytes(self) -> bytes:
        """Сериализация: u32 длина (little-endian) + содержимое"""
        return struct.pack('<I', len(self.blob)) + self.blob

    @classmethod
    def from_bytes(cls, data: bytes) -> 'Ciphertext':
        if len(data) < 4:
            raise FormatError("Шифртекст короче поля длины", offset=len(data))
        (length,) = struct.unpack_from('<I', data, 0)
        if len(data) != 4 + length:
            raise FormatError(
                f"Длина шифртекста {length} не совпадает с данными", offset=4
            )
        return cls(blob=bytes(data[4:]))

    @property
    def nbytes(self) -> int:
        return 4 + len(self.blob)


@dataclass(frozen=True)
class MaskedLabelRecord:
    """Зашифрованные пары (метка, количество) одного клиента"""
    client_id: str
    pairs: Tuple[Tuple[Ciphertext, Ciphertext], ...]

    @property
    def labels(self) -> List[Ciphertext]:
        return [label for label, _ in self.pairs]


@dataclass
class PlaceholderMap:
    """Биекция между найденными уникальными метками и плейсхолдерами"""
    entries: List[Tuple[Ciphertext, Placeholder]] = field(default_factory=list)

    def __post_init__(self):
        self.check_bijection()

    def check_bijection(self) -> None:
        placeholders = [p for _, p in self.entries]
        if len(set(placeholders)) != len(placeholders):
            raise ProtocolIntegrityError("Плейсхолдеры в отображении повторяются")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def placeholders(self) -> List[Placeholder]:
        return [p for _, p in self.entries]

    @property
    def references(self) -> List[Ciphertext]:
        return [ref for ref, _ in self.entries]

    def placeholder_at(self, position: int) -> Placeholder:
        return self.entries[position][1]

    def reference(self, position: int) -> Ciphertext:
        return self.entries[position][0]


@dataclass
class GlobalCounts:
    """Глобальные количества N(p) и держатели каждого плейсхолдера"""
    counts: Dict[Placeholder, int] = field(default_factory=dict)
    holders: Dict[Placeholder, FrozenSet[str]] = field(default_factory=dict)

    def __getitem__(self, placeholder: Placeholder) -> int:
        return self.counts[placeholder]

    def __len__(self) -> int:
        return len(self.counts)


@dataclass
class LabelProtocolResult:
    """Результат трёх фаз протокола меток"""
    placeholder_map: PlaceholderMap
    global_counts: GlobalCounts
    holdings: Dict[str, Tuple[Placeholder, ...]]
    client_maps: Dict[str, Dict[Placeholder, int]]  # хранится только у клиентов
    client_counts: Optional[Dict[Tuple[str, Placeholder], int]] = None
