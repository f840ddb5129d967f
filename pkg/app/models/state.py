"""Состояние сервера и клиентов во время обучения"""
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional

from app.models.data import ClientShard, Sample
from app.models.messages import RoundLog
from app.models.schedule import FrequencyPlan, Placeholder, Schedule
from app.models.selection import ClientPool, TrainingTask
from app.models.tensors import ModelParams


@dataclass
class ServerState:
    """Состояние сервера: расписание, пул, очередь задач, глобальная модель"""
    global_params: ModelParams
    plan: Optional[FrequencyPlan] = None
    schedule: Optional[Schedule] = None
    pool: Optional[ClientPool] = None
    queue: Deque[TrainingTask] = field(default_factory=deque)
    round_logs: List[RoundLog] = field(default_factory=list)
    epoch: int = -1
    sls_length: int = 0
    trained_slots: int = 0
    dropped: int = 0


@dataclass
class ClientState:
    """Локальное состояние клиента (никогда не отправляется серверу)"""
    shard: ClientShard
    placeholder_map: Dict[Placeholder, int] = field(default_factory=dict)
    order: Dict[int, List[Sample]] = field(default_factory=dict)
    cursors: Dict[int, int] = field(default_factory=dict)
    local_params: Optional[ModelParams] = None
    batch: List[Sample] = field(default_factory=list)
    iteration: int = -1
    steps: int = 0
