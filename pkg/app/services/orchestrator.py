"""Сервер: обучение по расписанию меток с передачей модели или агрегацией градиентов"""
import logging
from collections import Counter, deque
from typing import Callable, Deque, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.errors import ConfigurationError, ContractViolation
from app.models.data import ClientShard
from app.models.messages import MessageKind, RoundLog
from app.models.schedule import FrequencyPlan, Placeholder
from app.models.selection import SERVER, TrainingTask
from app.models.state import ServerState
from app.models.tensors import BnBatchStats, GradientSum, ModelParams
from app.services.batchnorm import StatsReducer, drive_lockstep
from app.services.client import ClientNode
from app.services.model_core import Model, sgd_step
from app.services.network import Network
from app.services.schedule import build_sls, drop_remaining, pop_front, reinsert_random
from app.services.seeding import derive_seed
from app.services.selection import (
    ClientSelector, build_pool, group_runs, note_consumed, note_exhausted,
    select_batch, select_single_sample,
)

logger = logging.getLogger(__name__)


class NetworkStatsReducer(StatsReducer):
    """Редукция статистик BatchNorm через сервер: загрузка частичных сумм и рассылка итогов"""

    def __init__(self, network: Network, participants: Sequence[str]):
        self.network = network
        self.participants = list(participants)
        self.stats: Dict[int, BnBatchStats] = {}
        self._sum_x: Dict[int, Tuple[np.ndarray, int]] = {}

    def reduce(self, partials):
        for address, partial in zip(self.participants, partials):
            self.network.send(MessageKind.BN_STATS_UPLOAD, address, SERVER, {'partial': partial})
        total = np.zeros_like(partials[0].values)
        count = 0
        for address in self.participants:
            partial = self.network.receive(address, SERVER, MessageKind.BN_STATS_UPLOAD).payload['partial']
            total = total + partial.values
            count += partial.count
        layer, stage = partials[0].layer_index, partials[0].stage
        if stage == 'sum_x':
            self._sum_x[layer] = (total, count)
        elif stage == 'sum_sq_dev':
            sum_x, m = self._sum_x[layer]
            self.stats[layer] = BnBatchStats(sum_x=sum_x, sum_sq_dev=total, count=m)
        for address in self.participants:
            self.network.send(MessageKind.BN_STATS_BROADCAST, SERVER, address,
                              {'total': total, 'count': count})
            self.network.receive(SERVER, address, MessageKind.BN_STATS_BROADCAST)
        return total, count


def evaluate(model: Model, params: ModelParams, shards: Sequence[ClientShard]) -> float:
    """
    Средняя по клиентам top-1 точность на их тестовых частях

    Args:
        model: Модель
        params: Параметры
        shards: Шарды клиентов (используются test_samples)

    Returns:
        Средняя точность; клиенты без тестовых примеров исключаются
    """
    accuracies = []
    for shard in shards:
        if not shard.test_samples:
            logger.warning("⚠️ У клиента %s нет тестовых примеров, он исключён из оценки",
                           shard.client_id)
            continue
        features = np.stack([s.features for s in shard.test_samples])
        labels = np.array([s.label for s in shard.test_samples])
        accuracies.append(float(np.mean(model.predict(params, features) == labels)))
    if not accuracies:
        logger.warning("⚠️ Ни у одного клиента нет тестовых примеров")
        return 0.0
    return float(np.mean(accuracies))


class Orchestrator:
    """Серверный цикл поверх симулируемой сети"""

    def __init__(self, model: Model, network: Network, clients: Sequence[ClientNode],
                 holdings: Mapping[str, Sequence[Placeholder]], lr: float, seed: int = 0,
                 client_counts: Optional[Mapping[Tuple[str, Placeholder], int]] = None,
                 message_callback: Optional[Callable] = None):
        """
        Args:
            model: Архитектура
            network: Сеть (сервер регистрируется в ней)
            clients: Узлы клиентов
            holdings: Какие плейсхолдеры заявил каждый клиент
            lr: Шаг глобального SGD в батч-режиме
            seed: Зерно эксперимента
            client_counts: Количества по клиентам (только во взвешенном режиме)
            message_callback: Функция для отправки сообщений (type, message)
        """
        self.model = model
        self.network = network
        self.clients: Dict[str, ClientNode] = {c.address: c for c in sorted(clients, key=lambda c: c.address)}
        self.holdings = {k: tuple(v) for k, v in holdings.items()}
        self.client_counts = dict(client_counts) if client_counts is not None else None
        self.lr = lr
        self.seed = seed
        self.message_callback = message_callback
        self._reinsertions = 0
        self._epoch_start = 0
        network.register(SERVER)

    def _notify(self, kind: str, text: str) -> None:
        if self.message_callback:
            self.message_callback(kind, text)

    def new_server(self, params: ModelParams, plan: FrequencyPlan) -> ServerState:
        return ServerState(global_params=params, plan=plan)

    def start_epoch(self, server: ServerState, epoch: int) -> ServerState:
        """Новое расписание, свежий пул и сброс курсоров клиентов"""
        server.epoch = epoch
        server.schedule = build_sls(server.plan, derive_seed(self.seed, 'sls', epoch))
        server.sls_length = len(server.schedule)
        server.pool = build_pool(self.holdings, self.client_counts)
        server.queue.clear()
        server.trained_slots = 0
        server.dropped = 0
        self._epoch_start = len(self.network.transcript)
        for address, client in self.clients.items():
            self.network.send(MessageKind.EPOCH_START, SERVER, address, {'epoch': epoch})
            client.on_epoch_start()
        return server

    # --- общие шаги ---

    def _servable(self, server: ServerState, placeholders: Sequence[Placeholder]) -> List[Placeholder]:
        kept = []
        for placeholder in placeholders:
            if server.pool.candidates(placeholder):
                kept.append(placeholder)
                continue
            dropped = 1 + drop_remaining(server.schedule, placeholder)
            server.dropped += dropped
            logger.warning("⚠️ Плейсхолдер %s никто не может обслужить, отброшено позиций: %d",
                           placeholder, dropped)
        return kept

    def _apply_report(self, server: ServerState, client: str, placeholders: Sequence[Placeholder],
                      report: Mapping) -> int:
        failed = Counter(report['not_train'])
        served = 0
        for placeholder in placeholders:
            if failed[placeholder] > 0:
                failed[placeholder] -= 1
                continue
            note_consumed(server.pool, client, placeholder)
            served += 1
        note_exhausted(server.pool, client, report['exhaust'])
        server.trained_slots += served
        return served

    def _finish_epoch(self, server: ServerState) -> ServerState:
        for address, client in self.clients.items():
            self.network.send(MessageKind.MODEL_BROADCAST, SERVER, address,
                              {'params': server.global_params})
            client.on_broadcast()
        if server.trained_slots + server.dropped != server.sls_length:
            logger.error("❌ Нарушен баланс эпохи: обучено %d + отброшено %d != %d",
                         server.trained_slots, server.dropped, server.sls_length)
        log = RoundLog.from_messages(server.epoch, self.network.transcript.since(self._epoch_start))
        log.trained_slots = server.trained_slots
        log.dropped = server.dropped
        server.round_logs.append(log)
        self._notify('status', f"Эпоха {server.epoch}: обучено {server.trained_slots}, "
                               f"отброшено {server.dropped}")
        return server

    # --- одиночные примеры ---

    def _fill_queue(self, server: ServerState, backlog: Deque[TrainingTask], chunk_size: int,
                    policy: ClientSelector) -> None:
        while len(server.queue) < 2:
            if not backlog:
                if server.schedule.exhausted:
                    return
                chunk = self._servable(server, pop_front(server.schedule, chunk_size))
                if not chunk:
                    continue
                assignment = select_single_sample(chunk, server.pool, policy)
                backlog.extend(group_runs(chunk, assignment))
            server.queue.append(backlog.popleft())

    def run_single_sample_epoch(self, server: ServerState, chunk_size: int,
                                policy: ClientSelector) -> ServerState:
        """
        Модель передаётся от клиента к клиенту; каждый делает шаг SGD на пример

        Args:
            server: Состояние после start_epoch
            chunk_size: Сколько записей расписания выбирать за раз
            policy: Политика выбора клиентов

        Returns:
            Обновлённое состояние сервера
        """
        if chunk_size < 1:
            raise ContractViolation(f"chunk_size должен быть >= 1, получено {chunk_size}")
        if self.model.has_batch_norm:
            raise ConfigurationError("Режим одиночных примеров несовместим с BatchNorm")
        backlog: Deque[TrainingTask] = deque()
        holder = SERVER
        while True:
            self._fill_queue(server, backlog, chunk_size, policy)
            if not server.queue:
                break
            task = server.queue.popleft()
            next_hop = server.queue[0].client if server.queue else SERVER
            self.network.send(MessageKind.TASK_ASSIGN, SERVER, task.client, {
                'placeholders': list(task.placeholders),
                'next_hop': next_hop,
                'relay_from': holder,
            })
            if holder == SERVER:
                self.network.send(MessageKind.MODEL_RELAY, SERVER, task.client,
                                  {'params': server.global_params})
            self.clients[task.client].on_task()
            self.network.receive(task.client, SERVER, MessageKind.NEXT_CLIENT_SIGNAL)
            report = self.network.receive(task.client, SERVER, MessageKind.NOT_TRAIN_REPORT).payload
            self._apply_report(server, task.client, task.placeholders, report)
            if report['not_train']:
                self._reinsertions += 1
                reinsert_random(server.schedule, report['not_train'],
                                derive_seed(self.seed, 'reinsert', server.epoch, self._reinsertions))
            if next_hop == SERVER:
                relay = self.network.receive(task.client, SERVER, MessageKind.MODEL_RELAY)
                server.global_params = relay.payload['params']
            holder = SERVER if next_hop == SERVER else task.client
        return self._finish_epoch(server)

    # --- батч ---

    def _gather_batch(self, server: ServerState, batch: List[Placeholder],
                      policy: ClientSelector, iteration: int) -> Tuple[int, List[str]]:
        sent_params = set()
        participants = set()
        trained = 0
        pending = batch
        retries = 0
        while pending:
            assignment = select_batch(pending, server.pool, policy)
            requests: Dict[str, List[Placeholder]] = {}
            for placeholder, client in zip(pending, assignment):
                requests.setdefault(client, []).append(placeholder)
            for client in sorted(requests):
                payload = {'iteration': iteration, 'placeholders': requests[client]}
                if client not in sent_params:
                    payload['params'] = server.global_params
                    sent_params.add(client)
                self.network.send(MessageKind.TRAIN_REQUEST, SERVER, client, payload)
                self.clients[client].on_train_request()
            failed: List[Placeholder] = []
            for client in sorted(requests):
                report = self.network.receive(client, SERVER, MessageKind.NOT_TRAIN_REPORT).payload
                served = self._apply_report(server, client, requests[client], report)
                trained += served
                if served:
                    participants.add(client)
                failed.extend(report['not_train'])
            if not failed:
                break
            retries += 1
            pending = self._servable(server, failed)
            if pending and retries > len(self.clients):
                server.dropped += len(pending)
                logger.warning("⚠️ Не найдено клиентов после %d попыток, отброшено позиций: %d",
                               retries, len(pending))
                break
        return trained, sorted(participants)

    def run_batch_epoch(self, server: ServerState, batch_size: int,
                        policy: ClientSelector) -> ServerState:
        """
        Глобальные шаги SGD по суммам градиентов клиентов

        Args:
            server: Состояние после start_epoch
            batch_size: Записей расписания на один глобальный шаг
            policy: Политика выбора клиентов

        Returns:
            Обновлённое состояние сервера
        """
        if batch_size < 1:
            raise ContractViolation(f"batch_size должен быть >= 1, получено {batch_size}")
        if self.model.has_batch_norm and batch_size < 2:
            raise ConfigurationError("BatchNorm требует batch_size >= 2")
        iteration = 0
        while not server.schedule.exhausted:
            take = batch_size
            if self.model.has_batch_norm and len(server.schedule.remaining) == batch_size + 1:
                take += 1
            batch = self._servable(server, pop_front(server.schedule, take))
            if not batch:
                continue
            trained, participants = self._gather_batch(server, batch, policy, iteration)
            iteration += 1
            if not trained:
                continue
            if self.model.has_batch_norm and trained < 2:
                server.trained_slots -= trained
                server.dropped += trained
                logger.warning("⚠️ Батч BatchNorm из одного примера пропущен (итерация %d)", iteration - 1)
                continue
            for address in participants:
                self.network.send(MessageKind.TRAIN_START, SERVER, address, {})
            reducer = NetworkStatsReducer(self.network, participants)
            passes = [self.clients[address].on_train_start() for address in participants]
            results = drive_lockstep(passes, reducer)
            for address, result in zip(participants, results):
                self.clients[address].return_gradients(result)
            total = GradientSum.zeros_like(server.global_params)
            for address in participants:
                total = total + self.network.receive(address, SERVER, MessageKind.GRAD_RETURN).payload['grad']
            server.global_params = sgd_step(server.global_params, total, self.lr, trained)
            if reducer.stats:
                server.global_params = self.model.update_running_stats(server.global_params, reducer.stats)
        return self._finish_epoch(server)

    def evaluate(self, params: ModelParams) -> float:
        return evaluate(self.model, params, [c.shard for c in self.clients.values()])
