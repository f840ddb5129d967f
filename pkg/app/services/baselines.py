"""Базовые алгоритмы для сравнения: FedAvg, FedProx, SCAFFOLD, SFL"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import ConfigurationError, ContractViolation
from app.models.data import ClientShard, Sample
from app.models.experiment import BaselineConfig
from app.models.messages import MessageKind
from app.models.selection import SERVER
from app.models.tensors import GradientSum, ModelParams
from app.services.batchnorm import SumReducer
from app.services.model_core import sgd_step
from app.services.network import Network
from app.services.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

Tensors = Tuple[np.ndarray, ...]
# Добавка к среднему градиенту минибатча в текущей точке
ExtraGrad = Callable[[ModelParams], Sequence[np.ndarray]]


def minibatches(samples: Sequence[Sample], batch_size: int,
                rng: Optional[np.random.Generator] = None,
                merge_singleton: bool = False) -> List[List[Sample]]:
    """
    Делит примеры на минибатчи

    Args:
        samples: Локальные примеры
        batch_size: Размер минибатча
        rng: Генератор для перемешивания (None - исходный порядок)
        merge_singleton: Присоединить последний батч из одного примера к предыдущему
    """
    order = list(range(len(samples))) if rng is None else list(rng.permutation(len(samples)))
    batches = [[samples[i] for i in order[start:start + batch_size]]
               for start in range(0, len(order), batch_size)]
    if merge_singleton and len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2].extend(batches.pop())
    return batches


def count_local_steps(num_samples: int, cfg: BaselineConfig, merge_singleton: bool = False) -> int:
    """Число локальных шагов SGD: столько же, сколько минибатчей выдаёт minibatches"""
    batches = math.ceil(num_samples / cfg.local_batch)
    if merge_singleton and batches > 1 and num_samples % cfg.local_batch == 1:
        batches -= 1
    return cfg.local_epochs * batches


def local_train(model, params: ModelParams, samples: Sequence[Sample], cfg: BaselineConfig,
                seed: int, extra_grad: Optional[ExtraGrad] = None) -> ModelParams:
    """
    Локальное обучение минибатчевым SGD по средней потере

    Модели с BatchNorm используют статистики своего минибатча и обновляют
    скользящие буферы.

    Args:
        model: Модель (нужны grad_summed и has_batch_norm)
        params: Начальные параметры
        samples: Локальные примеры
        cfg: Параметры базового алгоритма
        seed: Зерно перемешивания
        extra_grad: Поправка градиента (проксимальный член, коррекция SCAFFOLD)

    Returns:
        Параметры после local_epochs эпох
    """
    has_bn = getattr(model, 'has_batch_norm', False)
    for epoch in range(cfg.local_epochs):
        rng = make_rng(seed, 'local-epoch', epoch) if cfg.shuffle else None
        for batch in minibatches(samples, cfg.local_batch, rng, merge_singleton=has_bn):
            if has_bn:
                result = model.grad_distributed(params, [batch], SumReducer())[0]
                grad = result.grad
            else:
                grad = model.grad_summed(params, batch)
            if extra_grad is not None:
                n = len(batch)
                grad = GradientSum(
                    grads=tuple(g + n * e for g, e in zip(grad.grads, extra_grad(params))),
                    num_terms=grad.num_terms,
                )
            params = sgd_step(params, grad, cfg.lr, len(batch))
            if has_bn:
                params = model.update_running_stats(params, result.bn_stats)
    return params


def _transfer(network: Optional[Network], kind: MessageKind, src: str, dst: str,
              payload: Dict) -> None:
    if network is None:
        return
    for address in (src, dst):
        if address not in network.nodes:
            network.register(address)
    network.send(kind, src, dst, payload)
    network.receive(src, dst, kind)


def weighted_average(models: Sequence[ModelParams], weights: Sequence[float]) -> ModelParams:
    """Взвешенное среднее параметров и буферов"""
    total = float(sum(weights))
    if not models or total <= 0:
        raise ContractViolation("Нужен хотя бы один участник с положительным весом")
    coefficients = [w / total for w in weights]
    layers = [sum(c * m.layers[i] for c, m in zip(coefficients, models))
              for i in range(len(models[0].layers))]
    buffers = [sum(c * m.buffers[i] for c, m in zip(coefficients, models))
               for i in range(len(models[0].buffers))]
    return models[0].replace(layers=layers, buffers=buffers)


def _local_seed(seed: int, shard: ClientShard, round_index: int) -> int:
    return derive_seed(seed, 'local', shard.client_id, round_index)


def fedavg_round(model, global_params: ModelParams, shards: Sequence[ClientShard],
                 cfg: BaselineConfig, seed: int = 0, round_index: int = 0,
                 network: Optional[Network] = None,
                 extra_grad_for: Optional[Callable[[ModelParams], ExtraGrad]] = None) -> ModelParams:
    """
    Раунд FedAvg: локальное обучение и среднее, взвешенное размером шардов

    Args:
        model: Модель
        global_params: Глобальные параметры
        shards: Участники раунда
        cfg: Параметры
        seed: Зерно эксперимента
        round_index: Номер раунда
        network: Сеть для учёта передач модели
        extra_grad_for: Поправка градиента по глобальным параметрам (FedProx)

    Returns:
        Новые глобальные параметры
    """
    if not shards:
        raise ContractViolation("В раунде FedAvg нужен хотя бы один клиент")
    locals_: List[ModelParams] = []
    for shard in shards:
        _transfer(network, MessageKind.MODEL_BROADCAST, SERVER, shard.client_id,
                  {'params': global_params})
        extra = extra_grad_for(global_params) if extra_grad_for else None
        local = local_train(model, global_params, shard.samples, cfg,
                            _local_seed(seed, shard, round_index), extra)
        _transfer(network, MessageKind.MODEL_RELAY, shard.client_id, SERVER, {'params': local})
        locals_.append(local)
    return weighted_average(locals_, [len(s.samples) for s in shards])


def fedprox_objective(model, params: ModelParams, global_params: ModelParams,
                      batch: Sequence[Sample], mu: float) -> float:
    """Средняя потеря батча + (mu/2)·||theta - theta_global||²"""
    loss_sum, _ = model.forward_loss(params, batch)
    distance = sum(float(np.sum((t - g) ** 2)) for t, g in zip(params.layers, global_params.layers))
    return loss_sum / len(batch) + 0.5 * mu * distance


def prox_gradient(params: ModelParams, global_params: ModelParams, mu: float) -> Tensors:
    """Градиент проксимального члена: mu·(theta - theta_global)"""
    return tuple(mu * (t - g) for t, g in zip(params.layers, global_params.layers))


def fedprox_local(model, shard: ClientShard, global_params: ModelParams, cfg: BaselineConfig,
                  seed: int = 0) -> ModelParams:
    """Локальное обучение FedProx"""
    if cfg.prox_mu < 0:
        raise ConfigurationError("prox_mu должен быть >= 0")
    return local_train(model, global_params, shard.samples, cfg, seed,
                       lambda params: prox_gradient(params, global_params, cfg.prox_mu))


def fedprox_round(model, global_params: ModelParams, shards: Sequence[ClientShard],
                  cfg: BaselineConfig, seed: int = 0, round_index: int = 0,
                  network: Optional[Network] = None) -> ModelParams:
    return fedavg_round(
        model, global_params, shards, cfg, seed, round_index, network,
        extra_grad_for=lambda anchor: (lambda params: prox_gradient(params, anchor, cfg.prox_mu)),
    )


@dataclass
class ControlVariates:
    """Управляющие переменные SCAFFOLD: серверная c и клиентские c_i"""
    server: Tensors
    clients: Dict[str, Tensors] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: ModelParams, client_ids: Sequence[str]) -> 'ControlVariates':
        zero = tuple(np.zeros_like(t) for t in params.layers)
        return cls(server=zero, clients={cid: zero for cid in client_ids})


def scaffold_round(model, global_params: ModelParams, shards: Sequence[ClientShard],
                   variates: ControlVariates, cfg: BaselineConfig, seed: int = 0,
                   round_index: int = 0,
                   network: Optional[Network] = None) -> Tuple[ModelParams, ControlVariates]:
    """
    Раунд SCAFFOLD (вариант II обновления c_i)

    Локальный шаг: y <- y - lr·(g(y) - c_i + c).
    После K шагов: c_i' = c_i - c + (x - y) / (K·lr).
    Сервер: x += среднее(y - x), c += среднее(c_i' - c_i).

    Returns:
        (новые глобальные параметры, новые управляющие переменные)
    """
    if not shards:
        raise ContractViolation("В раунде SCAFFOLD нужен хотя бы один клиент")
    c = variates.server
    deltas: List[ModelParams] = []
    variate_deltas: List[Tensors] = []
    new_clients = dict(variates.clients)
    for shard in shards:
        steps = count_local_steps(len(shard.samples), cfg,
                                  merge_singleton=getattr(model, 'has_batch_norm', False))
        if steps * cfg.lr == 0:
            raise ContractViolation(f"K·lr = 0 для клиента {shard.client_id}")
        c_i = variates.clients.get(shard.client_id, tuple(np.zeros_like(t) for t in c))
        correction = tuple(ci_k - c_k for ci_k, c_k in zip(c_i, c))
        _transfer(network, MessageKind.MODEL_BROADCAST, SERVER, shard.client_id,
                  {'params': global_params, 'variate': c})

        local = local_train(model, global_params, shard.samples, cfg,
                            _local_seed(seed, shard, round_index),
                            lambda params, corr=correction: tuple(-x for x in corr))
        c_i_new = tuple(
            ci_k - c_k + (x - y) / (steps * cfg.lr)
            for ci_k, c_k, x, y in zip(c_i, c, global_params.layers, local.layers)
        )
        new_clients[shard.client_id] = c_i_new
        delta_c = tuple(new - old for new, old in zip(c_i_new, c_i))
        _transfer(network, MessageKind.MODEL_RELAY, shard.client_id, SERVER,
                  {'params': local, 'variate': delta_c})
        deltas.append(local)
        variate_deltas.append(delta_c)

    n = len(shards)
    layers = [x + sum(d.layers[k] - x for d in deltas) / n
              for k, x in enumerate(global_params.layers)]
    buffers = [sum(d.buffers[k] for d in deltas) / n for k in range(len(global_params.buffers))]
    server = tuple(c_k + sum(dc[k] for dc in variate_deltas) / n for k, c_k in enumerate(c))
    return (global_params.replace(layers=layers, buffers=buffers),
            ControlVariates(server=server, clients=new_clients))


def sfl_pass(model, global_params: ModelParams, shards: Sequence[ClientShard],
             cfg: BaselineConfig, seed: int = 0, round_index: int = 0,
             order: Optional[Sequence[int]] = None,
             network: Optional[Network] = None) -> ModelParams:
    """
    Последовательное обучение: модель проходит по клиентам в перемешанном порядке

    Args:
        order: Порядок индексов клиентов (по умолчанию случайный для раунда)

    Returns:
        Параметры после последнего клиента
    """
    if not shards:
        raise ContractViolation("Для SFL нужен хотя бы один клиент")
    if order is None:
        order = list(make_rng(seed, 'sfl', round_index).permutation(len(shards)))
    if sorted(order) != list(range(len(shards))):
        raise ContractViolation("Порядок SFL должен быть перестановкой клиентов")

    params = global_params
    previous = SERVER
    for position in order:
        shard = shards[position]
        _transfer(network, MessageKind.MODEL_RELAY, previous, shard.client_id, {'params': params})
        params = local_train(model, params, shard.samples, cfg, _local_seed(seed, shard, round_index))
        previous = shard.client_id
    _transfer(network, MessageKind.MODEL_RELAY, previous, SERVER, {'params': params})
    return params


class BaselineTrainer:
    """Раунды базового алгоритма с состоянием между раундами (переменные SCAFFOLD)"""

    def __init__(self, model, shards: Sequence[ClientShard], cfg: BaselineConfig,
                 seed: int = 0, network: Optional[Network] = None):
        cfg.validate()
        self.model = model
        self.shards = list(shards)
        self.cfg = cfg
        self.seed = seed
        self.network = network
        self.variates: Optional[ControlVariates] = None

    def run_round(self, params: ModelParams, round_index: int) -> ModelParams:
        algorithm = self.cfg.algorithm
        if algorithm == 'fedavg':
            return fedavg_round(self.model, params, self.shards, self.cfg, self.seed,
                                round_index, self.network)
        if algorithm == 'fedprox':
            return fedprox_round(self.model, params, self.shards, self.cfg, self.seed,
                                 round_index, self.network)
        if algorithm == 'scaffold':
            if self.variates is None:
                self.variates = ControlVariates.zeros(params, [s.client_id for s in self.shards])
            params, self.variates = scaffold_round(self.model, params, self.shards, self.variates,
                                                   self.cfg, self.seed, round_index, self.network)
            return params
        if algorithm == 'sfl':
            return sfl_pass(self.model, params, self.shards, self.cfg, self.seed,
                            round_index, network=self.network)
        raise ConfigurationError(f"Неизвестный базовый алгоритм: {algorithm}")
