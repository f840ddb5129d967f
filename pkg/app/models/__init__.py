"""Модели данных симулятора"""
from .tensors import ModelParams, GradientSum, BnBatchStats, BnPartial
from .data import Sample, Dataset, PartitionKind, PartitionSpec, ClientShard
from .schedule import Placeholder, FrequencyMode, FrequencyPlan, Schedule
from .selection import SERVER, SelectionKind, SelectionPolicy, ClientPool, TrainingTask
from .messages import MessageKind, MODEL_TRANSFER_KINDS, is_model_transfer, Message, Transcript, RoundLog
from .privacy import (
    Ciphertext, MaskedLabelRecord, PlaceholderMap, GlobalCounts, LabelProtocolResult
)
from .state import ServerState, ClientState
from .experiment import (
    DatasetSpec, ModelSpec, BaselineConfig, ExperimentConfig,
    CommCostModel, EpochMetrics, MetricsRecord,
)

__all__ = [
    'ModelParams', 'GradientSum', 'BnBatchStats', 'BnPartial',
    'Sample', 'Dataset', 'PartitionKind', 'PartitionSpec', 'ClientShard',
    'Placeholder', 'FrequencyMode', 'FrequencyPlan', 'Schedule',
    'SERVER', 'SelectionKind', 'SelectionPolicy', 'ClientPool', 'TrainingTask',
    'MessageKind', 'MODEL_TRANSFER_KINDS', 'is_model_transfer', 'Message', 'Transcript', 'RoundLog',
    'ServerState', 'ClientState',
    'Ciphertext', 'MaskedLabelRecord', 'PlaceholderMap', 'GlobalCounts', 'LabelProtocolResult',
    'DatasetSpec', 'ModelSpec', 'BaselineConfig', 'ExperimentConfig',
    'CommCostModel', 'EpochMetrics', 'MetricsRecord',
]
