"""Приближённый бэкенд CKKS на OpenFHE (необязательная зависимость)"""
import struct
from typing import Callable, Dict, Optional

from app.errors import ConfigurationError, FormatError
from app.models.privacy import Ciphertext
from app.services.he_backends.base_backend import BaseAheBackend

try:
    import openfhe
    OPENFHE_AVAILABLE = True
except ImportError:
    OPENFHE_AVAILABLE = False

_MARKER = b'CKKS'


class OpenFheCkksBackend(BaseAheBackend):
    """
    CKKS с упакованным открытым текстом из одного слота

    Объекты шифртекстов OpenFHE хранятся внутри бэкенда, наружу
    выдаётся непрозрачный дескриптор (маркер + u64 номер).
    """

    name = 'openfhe'

    def __init__(self, scaling_mod_size: int = 50, batch_size: int = 8,
                 tolerance: float = 1e-3, message_callback: Optional[Callable] = None):
        super().__init__(message_callback)
        if not OPENFHE_AVAILABLE:
            raise ConfigurationError(
                "Бэкенд openfhe недоступен: установите пакет openfhe "
                "или выберите privacy.backend: mock"
            )
        parameters = openfhe.CCParamsCKKSRNS()
        parameters.SetMultiplicativeDepth(1)
        parameters.SetScalingModSize(scaling_mod_size)
        parameters.SetBatchSize(batch_size)
        self._context = openfhe.GenCryptoContext(parameters)
        self._context.Enable(openfhe.PKESchemeFeature.PKE)
        self._context.Enable(openfhe.PKESchemeFeature.KEYSWITCH)
        self._context.Enable(openfhe.PKESchemeFeature.LEVELEDSHE)
        self._keys = self._context.KeyGen()
        self._tolerance = tolerance
        self._store: Dict[int, object] = {}
        if self.message_callback:
            self.message_callback(
                'info', f"CKKS: размерность кольца {self._context.GetRingDimension()}"
            )

    @property
    def tolerance(self) -> float:
        return self._tolerance

    def _wrap(self, raw) -> Ciphertext:
        handle = len(self._store)
        self._store[handle] = raw
        return Ciphertext(blob=_MARKER + struct.pack('<Q', handle))

    def _unwrap(self, ciphertext: Ciphertext):
        blob = ciphertext.blob
        if len(blob) != 12 or blob[:4] != _MARKER:
            raise FormatError("Шифртекст не принадлежит бэкенду openfhe", 0)
        (handle,) = struct.unpack('<Q', blob[4:])
        if handle not in self._store:
            raise FormatError(f"Неизвестный дескриптор шифртекста {handle}", 4)
        return self._store[handle]

    def encrypt(self, value: float) -> Ciphertext:
        plaintext = self._context.MakeCKKSPackedPlaintext([float(value)])
        return self._wrap(self._context.Encrypt(self._keys.publicKey, plaintext))

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        return self._wrap(self._context.EvalAdd(self._unwrap(a), self._unwrap(b)))

    def subtract(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        return self._wrap(self._context.EvalSub(self._unwrap(a), self._unwrap(b)))

    def decrypt(self, ciphertext: Ciphertext) -> float:
        plaintext = self._context.Decrypt(self._unwrap(ciphertext), self._keys.secretKey)
        plaintext.SetLength(1)
        return float(plaintext.GetRealPackedValue()[0])
