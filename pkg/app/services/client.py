"""Узел клиента: локальные данные, извлечение примеров, обработка сообщений сервера"""
import logging
from typing import Dict, List, Optional

from app.models.data import ClientShard, Sample
from app.models.messages import MessageKind
from app.models.schedule import Placeholder
from app.models.selection import SERVER
from app.models.state import ClientState
from app.models.tensors import ModelParams
from app.services.batchnorm import LockstepPass
from app.services.model_core import Model, PassResult, sgd_step
from app.services.network import Network
from app.services.seeding import make_rng

logger = logging.getLogger(__name__)


def sample_order(shard: ClientShard, seed: int, epoch: int) -> Dict[int, List[Sample]]:
    """
    Порядок извлечения примеров каждой метки в эпохе (без возвращения)

    Args:
        shard: Шард клиента
        seed: Зерно эксперимента
        epoch: Номер эпохи

    Returns:
        метка -> примеры в порядке извлечения
    """
    rng = make_rng(seed, 'cursor', shard.client_id, epoch)
    order: Dict[int, List[Sample]] = {}
    for label in shard.labels:
        samples = shard.samples_of(label)
        order[label] = [samples[i] for i in rng.permutation(len(samples))]
    return order


class ClientNode:
    """Клиент федеративного обучения в симулируемой сети"""

    def __init__(self, shard: ClientShard, model: Model, network: Network,
                 seed: int = 0, lr: float = 0.05, proactive_exhaust: bool = True):
        """
        Args:
            shard: Локальные данные
            model: Архитектура (общая для всех узлов)
            network: Сеть
            seed: Зерно эксперимента
            lr: Шаг локального SGD в режиме одиночных примеров
            proactive_exhaust: Сообщать об исчерпании сразу после последнего примера
        """
        self.state = ClientState(shard=shard)
        self.model = model
        self.network = network
        self.seed = seed
        self.lr = lr
        self.proactive_exhaust = proactive_exhaust
        network.register(self.address)

    @property
    def address(self) -> str:
        return self.state.shard.client_id

    @property
    def shard(self) -> ClientShard:
        return self.state.shard

    @property
    def steps(self) -> int:
        return self.state.steps

    def set_placeholder_map(self, mapping: Dict[Placeholder, int]) -> None:
        self.state.placeholder_map = dict(mapping)

    def begin_epoch(self, epoch: int) -> None:
        self.state.order = sample_order(self.shard, self.seed, epoch)
        self.state.cursors = {label: 0 for label in self.state.order}
        self.state.batch = []
        self.state.iteration = -1

    def remaining(self, placeholder: Placeholder) -> int:
        label = self.state.placeholder_map.get(placeholder)
        if label is None or label not in self.state.order:
            return 0
        return len(self.state.order[label]) - self.state.cursors[label]

    def extract(self, placeholder: Placeholder) -> Optional[Sample]:
        """Следующий неиспользованный пример метки плейсхолдера или None"""
        if self.remaining(placeholder) <= 0:
            return None
        label = self.state.placeholder_map[placeholder]
        sample = self.state.order[label][self.state.cursors[label]]
        self.state.cursors[label] += 1
        return sample

    def _serve(self, placeholder: Placeholder, not_train: List[Placeholder],
               exhaust: List[Placeholder]) -> Optional[Sample]:
        sample = self.extract(placeholder)
        if sample is None:
            not_train.append(placeholder)
            if placeholder not in exhaust:
                exhaust.append(placeholder)
        elif self.proactive_exhaust and self.remaining(placeholder) == 0 and placeholder not in exhaust:
            exhaust.append(placeholder)
        return sample

    # --- сообщения ---

    def on_epoch_start(self) -> None:
        message = self.network.receive(SERVER, self.address, MessageKind.EPOCH_START)
        self.begin_epoch(message.payload['epoch'])

    def on_task(self) -> None:
        """Одиночные примеры: принять модель, сделать шаг на каждый плейсхолдер, передать дальше"""
        assign = self.network.receive(SERVER, self.address, MessageKind.TASK_ASSIGN)
        placeholders = assign.payload['placeholders']
        next_hop = assign.payload['next_hop']
        relay_from = assign.payload['relay_from']
        if relay_from == self.address:
            params: ModelParams = self.state.local_params
        else:
            params = self.network.receive(relay_from, self.address, MessageKind.MODEL_RELAY).payload['params']

        not_train: List[Placeholder] = []
        exhaust: List[Placeholder] = []
        for placeholder in placeholders:
            sample = self._serve(placeholder, not_train, exhaust)
            if sample is None:
                continue
            grad = self.model.grad_summed(params, [sample])
            params = sgd_step(params, grad, self.lr, 1)
            self.state.steps += 1

        self.network.send(MessageKind.NEXT_CLIENT_SIGNAL, self.address, SERVER, {'next_hop': next_hop})
        self.network.send(MessageKind.NOT_TRAIN_REPORT, self.address, SERVER,
                          {'not_train': not_train, 'exhaust': exhaust})
        if next_hop == self.address:
            # следующая задача снова наша: модель остаётся у клиента
            self.state.local_params = params
        else:
            self.network.send(MessageKind.MODEL_RELAY, self.address, next_hop, {'params': params})

    def on_train_request(self) -> None:
        """Батч: извлечь по примеру на плейсхолдер, сообщить о недоступных"""
        request = self.network.receive(SERVER, self.address, MessageKind.TRAIN_REQUEST)
        if request.payload['iteration'] != self.state.iteration:
            self.state.iteration = request.payload['iteration']
            self.state.batch = []
        if 'params' in request.payload:
            self.state.local_params = request.payload['params']
        not_train: List[Placeholder] = []
        exhaust: List[Placeholder] = []
        for placeholder in request.payload['placeholders']:
            sample = self._serve(placeholder, not_train, exhaust)
            if sample is not None:
                self.state.batch.append(sample)
        self.network.send(MessageKind.NOT_TRAIN_REPORT, self.address, SERVER,
                          {'not_train': not_train, 'exhaust': exhaust})

    def on_train_start(self) -> LockstepPass:
        """Начинает проход по извлечённому батчу (генератор для синхронного BatchNorm)"""
        self.network.receive(SERVER, self.address, MessageKind.TRAIN_START)
        return self.model.start_pass(self.state.local_params, self.state.batch, backward=True)

    def return_gradients(self, result: PassResult) -> None:
        self.state.steps += len(self.state.batch)
        self.network.send(MessageKind.GRAD_RETURN, self.address, SERVER, {'grad': result.grad})
        self.state.batch = []

    def on_broadcast(self) -> ModelParams:
        message = self.network.receive(SERVER, self.address, MessageKind.MODEL_BROADCAST)
        self.state.local_params = message.payload['params']
        return self.state.local_params

    def receive_bn_totals(self):
        return self.network.receive(SERVER, self.address, MessageKind.BN_STATS_BROADCAST).payload
