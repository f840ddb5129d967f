"""Сервисы приложения"""
from .backend_factory import create_backend
from .baselines import BaselineTrainer
from .client import ClientNode
from .network import Network
from .orchestrator import Orchestrator
from .privacy import run_label_protocol

__all__ = [
    'create_backend',
    'BaselineTrainer',
    'ClientNode',
    'Network',
    'Orchestrator',
    'run_label_protocol',
]
