"""Аддитивно-гомоморфные бэкенды"""
from .base_backend import BaseAheBackend, HomomorphicEvaluator
from .mock_backend import MockAheBackend
from .openfhe_backend import OPENFHE_AVAILABLE, OpenFheCkksBackend

__all__ = [
    'BaseAheBackend',
    'HomomorphicEvaluator',
    'MockAheBackend',
    'OpenFheCkksBackend',
    'OPENFHE_AVAILABLE',
]
