"""Точный тестовый бэкенд: одноразовые маски по модулю простого 2^61 - 1 (небезопасен)"""
import hashlib
import struct
from typing import Callable, List, Optional, Tuple

from app.errors import FormatError
from app.models.privacy import Ciphertext
from app.services.he_backends.base_backend import BaseAheBackend

PRIME = 2 ** 61 - 1
SCALE_BITS = 16
NONCE_SIZE = 16

# Шифртекст: u64 значение, u32 число масок, затем (nonce, знак) на каждую маску
_HEADER = struct.Struct('<QI')
_TERM = struct.Struct(f'<{NONCE_SIZE}sb')


class MockAheBackend(BaseAheBackend):
    """
    E(a) = encode(a) + PRF(key, nonce) mod p

    Сложение и вычитание складывают значения и объединяют списки масок,
    расшифровка снимает все маски. Арифметика точная, tau = 0.
    """

    name = 'mock'

    def __init__(self, key_seed: str = 'fedsls', scale_bits: int = SCALE_BITS,
                 message_callback: Optional[Callable] = None):
        super().__init__(message_callback)
        self._key = hashlib.sha256(key_seed.encode('utf-8')).digest()
        self.scale = 1 << scale_bits
        self._counter = 0

    @property
    def tolerance(self) -> float:
        return 0.0

    def _pad(self, nonce: bytes) -> int:
        digest = hashlib.blake2b(nonce, key=self._key, digest_size=16).digest()
        return int.from_bytes(digest, 'little') % PRIME

    def _next_nonce(self) -> bytes:
        self._counter += 1
        return hashlib.blake2b(self._counter.to_bytes(8, 'little'), key=self._key,
                               digest_size=NONCE_SIZE, person=b'nonce').digest()

    def _encode(self, value: float) -> int:
        scaled = int(round(value * self.scale))
        if abs(scaled) >= PRIME // 2:
            raise OverflowError(f"Значение {value} не помещается в поле")
        return scaled % PRIME

    def _decode(self, residue: int) -> float:
        if residue > PRIME // 2:
            residue -= PRIME
        return residue / self.scale

    @staticmethod
    def _pack(value: int, terms: List[Tuple[bytes, int]]) -> Ciphertext:
        blob = _HEADER.pack(value, len(terms)) + b''.join(_TERM.pack(n, s) for n, s in terms)
        return Ciphertext(blob=blob)

    @staticmethod
    def _unpack(ciphertext: Ciphertext) -> Tuple[int, List[Tuple[bytes, int]]]:
        blob = ciphertext.blob
        if len(blob) < _HEADER.size:
            raise FormatError("Шифртекст короче заголовка", len(blob))
        value, count = _HEADER.unpack_from(blob, 0)
        if len(blob) != _HEADER.size + count * _TERM.size:
            raise FormatError("Длина шифртекста не совпадает с числом масок", _HEADER.size)
        terms = [_TERM.unpack_from(blob, _HEADER.size + i * _TERM.size) for i in range(count)]
        return value, terms

    def encrypt(self, value: float) -> Ciphertext:
        nonce = self._next_nonce()
        return self._pack((self._encode(value) + self._pad(nonce)) % PRIME, [(nonce, 1)])

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        va, ta = self._unpack(a)
        vb, tb = self._unpack(b)
        return self._pack((va + vb) % PRIME, ta + tb)

    def subtract(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        va, ta = self._unpack(a)
        vb, tb = self._unpack(b)
        return self._pack((va - vb) % PRIME, ta + [(n, -s) for n, s in tb])

    def decrypt(self, ciphertext: Ciphertext) -> float:
        value, terms = self._unpack(ciphertext)
        for nonce, sign in terms:
            value = (value - sign * self._pad(nonce)) % PRIME
        return self._decode(value)
