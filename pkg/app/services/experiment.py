"""Запуск экспериментов: данные, алгоритмы, метрики, стоимость коммуникаций, CSV"""
import copy
import csv
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

from app.config import (
    build_experiment_config, get_config_for_logging, save_config, with_defaults
)
from app.errors import ConfigurationError
from app.models.data import ClientShard, Dataset
from app.models.experiment import (
    CommCostModel, DatasetSpec, EpochMetrics, ExperimentConfig, MetricsRecord
)
from app.models.messages import RoundLog, Transcript
from app.models.selection import SERVER, SelectionKind
from app.models.tensors import ModelParams
from app.services.backend_factory import create_backend
from app.services.baselines import BaselineTrainer
from app.services.client import ClientNode
from app.services.datasets import load_csv, load_idx_images, make_digits, make_synthetic
from app.services.model_core import Model, build_model
from app.services.network import Network
from app.services.orchestrator import Orchestrator, evaluate
from app.services.partition import partition, shard_digest, split_train_test
from app.services.privacy import run_label_protocol
from app.services.schedule import plan_from_config
from app.services.selection import create_policy
from app.services.seeding import derive_seed

logger = logging.getLogger(__name__)

CSV_HEADER = ('epoch', 'top1', 'transfers', 'bytes')


@dataclass
class RunOutcome:
    """Результат запуска: метрики, журнал сообщений и итоговая модель"""
    record: MetricsRecord
    transcript: Transcript
    params: ModelParams
    round_logs: List[RoundLog]


def build_dataset(spec: DatasetSpec, seed: int) -> Dataset:
    """Загружает или генерирует датасет по описанию"""
    if spec.kind == 'digits':
        return make_digits(spec.samples_per_class, derive_seed(seed, 'digits'),
                           noise=spec.noise, num_classes=spec.num_classes)
    if spec.kind == 'synthetic':
        return make_synthetic(spec.num_classes, spec.samples_per_class, spec.num_domains,
                              derive_seed(seed, 'synthetic'), dim=spec.dim, shift=spec.shift,
                              rotation=spec.rotation, noise=spec.noise)
    if spec.kind == 'idx':
        return load_idx_images(spec.path, spec.labels_path or None, spec.num_classes)
    if spec.kind == 'csv':
        return load_csv(spec.path, spec.num_classes)
    raise ConfigurationError(f"Неизвестный тип датасета: {spec.kind}")


def prepare_shards(config: ExperimentConfig, dataset: Optional[Dataset] = None) -> List[ClientShard]:
    """Разбиение и отделение тестовых частей (одинаково для всех алгоритмов)"""
    if dataset is None:
        dataset = build_dataset(config.dataset, config.seed)
    shards = partition(dataset, config.partition)
    return [split_train_test(shard, config.test_fraction, config.seed) for shard in shards]


def _model_for(config: ExperimentConfig, shards: Sequence[ClientShard]) -> Model:
    sample = shards[0].samples[0]
    num_classes = max(config.dataset.num_classes,
                      1 + max(s.label for shard in shards for s in shard.samples))
    return build_model(config.model, tuple(sample.features.shape), num_classes)


def _epoch_metrics(epoch: int, accuracy: float, log: RoundLog) -> EpochMetrics:
    return EpochMetrics(epoch=epoch, top1=float(accuracy), transfers=log.transfers,
                        bytes=int(sum(log.bytes.values())))


def _run_sls(config: ExperimentConfig, model: Model, shards: Sequence[ClientShard],
             record: MetricsRecord, message_callback: Optional[Callable]) -> RunOutcome:
    network = Network()
    network.register(SERVER)
    clients = [ClientNode(shard, model, network, seed=config.seed, lr=config.lr) for shard in shards]

    backend = create_backend({'backend': config.backend, 'key_seed': config.key_seed or 'fedsls'},
                             message_callback)
    labels = run_label_protocol(SERVER, clients, network, backend,
                                known_total=config.known_total,
                                weighted=config.policy == SelectionKind.WEIGHTED,
                                seed=derive_seed(config.seed, 'labels'))
    plan = plan_from_config(labels.global_counts.counts, config.frequency_mode,
                            config.frequency, config.cap)
    orchestrator = Orchestrator(model, network, clients, labels.holdings, config.lr, config.seed,
                                labels.client_counts, message_callback)
    server = orchestrator.new_server(model.init_params(derive_seed(config.seed, 'init')), plan)

    for epoch in range(1, config.epochs + 1):
        orchestrator.start_epoch(server, epoch)
        policy = create_policy(config.policy, derive_seed(config.seed, 'policy', epoch), server.pool)
        batch_mode = (config.algorithm == 'sls-batch'
                      or (config.algorithm == 'sls-hybrid' and epoch <= config.hybrid_batch_epochs))
        if batch_mode:
            orchestrator.run_batch_epoch(server, config.batch_size, policy)
        else:
            orchestrator.run_single_sample_epoch(server, config.chunk_size, policy)
        log = server.round_logs[-1]
        log.accuracy = orchestrator.evaluate(server.global_params)
        record.add_epoch(_epoch_metrics(epoch, log.accuracy, log))
        record.dropped += log.dropped
        logger.info("📝 %s эпоха %d: top1=%.4f, передач %d", config.algorithm, epoch,
                    log.accuracy, log.transfers)
    return RunOutcome(record=record, transcript=network.transcript,
                      params=server.global_params, round_logs=server.round_logs)


def _run_baseline(config: ExperimentConfig, model: Model, shards: Sequence[ClientShard],
                  record: MetricsRecord) -> RunOutcome:
    network = Network()
    network.register(SERVER)
    for shard in shards:
        network.register(shard.client_id)
    trainer = BaselineTrainer(model, shards, config.baseline, config.seed, network)
    params = model.init_params(derive_seed(config.seed, 'init'))
    logs: List[RoundLog] = []
    for epoch in range(1, config.epochs + 1):
        start = len(network.transcript)
        params = trainer.run_round(params, epoch)
        log = RoundLog.from_messages(epoch, network.transcript.since(start))
        log.accuracy = evaluate(model, params, shards)
        logs.append(log)
        record.add_epoch(_epoch_metrics(epoch, log.accuracy, log))
        logger.info("📝 %s раунд %d: top1=%.4f", config.algorithm, epoch, log.accuracy)
    return RunOutcome(record=record, transcript=network.transcript, params=params, round_logs=logs)


def execute(config: ExperimentConfig, shards: Optional[Sequence[ClientShard]] = None,
            message_callback: Optional[Callable] = None) -> RunOutcome:
    """
    Выполняет один эксперимент

    Args:
        config: Проверенная конфигурация
        shards: Готовые шарды (по умолчанию строятся из конфигурации)
        message_callback: Функция для отправки сообщений (type, message)

    Returns:
        RunOutcome
    """
    started = time.perf_counter()
    shards = list(shards) if shards is not None else prepare_shards(config)
    model = _model_for(config, shards)
    record = MetricsRecord(algorithm=config.algorithm, num_clients=len(shards),
                           shard_digest=shard_digest(shards))
    logger.info("🔍 Запуск %s: %d клиентов, %d эпох, модель %s",
                config.algorithm, len(shards), config.epochs, model.name)
    if config.is_sls:
        outcome = _run_sls(config, model, shards, record, message_callback)
    else:
        outcome = _run_baseline(config, model, shards, record)
    record.wall_clock = time.perf_counter() - started
    logger.info("✅ %s: лучшая точность %.4f на эпохе %d", config.algorithm,
                record.best_accuracy, record.best_epoch)
    return outcome


def run_experiment(config: ExperimentConfig, shards: Optional[Sequence[ClientShard]] = None,
                   message_callback: Optional[Callable] = None) -> MetricsRecord:
    return execute(config, shards, message_callback).record


def run_hybrid(config: ExperimentConfig, batch_epochs: int,
               shards: Optional[Sequence[ClientShard]] = None) -> MetricsRecord:
    """Батч-эпохи для предобучения, затем эпохи одиночных примеров на той же модели"""
    return run_experiment(replace(config, algorithm='sls-hybrid', hybrid_batch_epochs=batch_epochs),
                          shards)


def comm_cost(record: MetricsRecord, model: Optional[CommCostModel] = None,
              c_update: float = 1.0) -> float:
    """
    T = R × C_update × f_freq

    Args:
        record: Метрики запуска (если модель не задана, f_freq измеряется по ним)
        model: Готовая модель стоимости
        c_update: Стоимость одной передачи для измерения

    Returns:
        T в секундах
    """
    if model is None:
        model = CommCostModel.measure(record.transfers, max(record.num_clients, 1),
                                      record.rounds, c_update)
    return model.rounds * model.c_update * model.f_freq


def emit_csv(record: MetricsRecord, path: Union[str, Path]) -> Path:
    """Пишет CSV: заголовок и по строке на эпоху (UTF-8, LF)"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(CSV_HEADER)
            for e in record.epochs:
                writer.writerow([e.epoch, repr(float(e.top1)), e.transfers, e.bytes])
    except OSError as exc:
        raise OSError(exc.errno, f"Не удалось записать CSV: {exc.strerror}", str(path)) from exc
    return path


def read_csv(path: Union[str, Path]) -> List[EpochMetrics]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return [EpochMetrics(epoch=int(row['epoch']), top1=float(row['top1']),
                             transfers=int(row['transfers']), bytes=int(row['bytes']))
                for row in csv.DictReader(f)]


def write_outputs(outcome: RunOutcome, out_dir: Union[str, Path],
                  config: Optional[ExperimentConfig] = None) -> Path:
    """metrics.csv, metrics.json и transcript.jsonl в каталоге запуска"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    emit_csv(outcome.record, out_dir / 'metrics.csv')
    data = outcome.record.to_dict()
    if config is not None:
        cost = CommCostModel.measure(outcome.record.transfers, max(outcome.record.num_clients, 1),
                                     outcome.record.rounds, config.c_update)
        data['cost'] = {'c_update': cost.c_update, 'rounds': cost.rounds,
                        'f_freq': cost.f_freq, 'T': comm_cost(outcome.record, cost)}
        data['seed'] = config.seed
    with open(out_dir / 'metrics.json', 'w', encoding='utf-8', newline='\n') as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
        f.write('\n')
    outcome.transcript.to_jsonl(out_dir / 'transcript.jsonl')
    logger.info("✅ Результаты сохранены в %s", out_dir)
    return out_dir


def run(config_dict: Dict[str, Any], out_dir: Optional[Union[str, Path]] = None) -> MetricsRecord:
    """Полный запуск по словарю конфигурации с записью результатов"""
    config = build_experiment_config(config_dict)
    outcome = execute(config)
    target = write_outputs(outcome, out_dir or config.out_dir, config)
    save_config(get_config_for_logging(with_defaults(config_dict)), target / 'config.yaml')
    return outcome.record


# --- серии запусков ---

def _set_dotted(config: Dict[str, Any], dotted_key: str, value: Any) -> None:
    keys = dotted_key.split('.')
    current = config
    for key in keys[:-1]:
        current[key] = dict(current.get(key) or {})
        current = current[key]
    current[keys[-1]] = value


def expand_sweep(config: Dict[str, Any]) -> List[Tuple[str, Dict[str, Any]]]:
    """
    Декартово произведение списков из секции sweep (ключи через точку)

    Returns:
        Список (имя точки, конфигурация)
    """
    axes = [(key, list(values)) for key, values in sorted((config.get('sweep') or {}).items())
            if isinstance(values, (list, tuple))]
    base = copy.deepcopy(config)
    base['sweep'] = {}
    if not axes:
        return [('run', base)]
    points = []
    for combo in itertools.product(*(values for _, values in axes)):
        point = copy.deepcopy(base)
        parts = []
        for (key, _), value in zip(axes, combo):
            _set_dotted(point, key, value)
            parts.append(f"{key.split('.')[-1]}={value}")
        points.append(('_'.join(parts), point))
    return points


def _run_point(name: str, config_dict: Dict[str, Any], out_dir: str) -> Tuple[str, float, int]:
    record = run(config_dict, Path(out_dir) / name)
    return name, record.best_accuracy, record.best_epoch


def run_sweep(config: Dict[str, Any], workers: int = 1,
              out_dir: Optional[Union[str, Path]] = None) -> List[Tuple[str, float, int]]:
    """
    Запускает все точки серии, каждую в своём каталоге

    Args:
        config: Словарь конфигурации с секцией sweep
        workers: Число процессов (1 - последовательно в текущем процессе)
        out_dir: Корневой каталог

    Returns:
        Список (имя, лучшая точность, эпоха)
    """
    out_dir = str(out_dir or config.get('out_dir', 'runs'))
    points = expand_sweep(config)
    logger.info("🔍 Серия: %d запусков, процессов %d", len(points), workers)
    if workers <= 1:
        return [_run_point(name, point, out_dir) for name, point in points]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_point, name, point, out_dir) for name, point in points]
        return [future.result() for future in futures]


def report(out_dir: Union[str, Path]) -> str:
    """Таблица лучших точностей по всем metrics.csv в каталоге"""
    out_dir = Path(out_dir)
    rows = []
    for path in sorted(out_dir.rglob('metrics.csv')):
        epochs = read_csv(path)
        record = MetricsRecord(epochs=epochs)
        name = path.parent.relative_to(out_dir).as_posix() if path.parent != out_dir else '.'
        rows.append((name, record.best_accuracy, record.best_epoch, record.transfers))
    if not rows:
        return f"В {out_dir} нет файлов metrics.csv"
    width = max(len('run'), *(len(r[0]) for r in rows))
    lines = [f"{'run':<{width}}  {'best_top1':>9}  {'E#':>4}  {'transfers':>9}"]
    for name, best, epoch, transfers in rows:
        lines.append(f"{name:<{width}}  {best:>9.4f}  {epoch:>4}  {transfers:>9}")
    return '\n'.join(lines)
