"""Построение и потребление стратифицированного расписания меток"""
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np

from app.errors import ConfigurationError, ContractViolation, FormatError, PlanError, UnknownPlaceholderError
from app.models.schedule import FrequencyMode, FrequencyPlan, Placeholder, Schedule
from app.services.seeding import make_rng

logger = logging.getLogger(__name__)


def uniform_plan(placeholders: Iterable[Placeholder], f: int) -> FrequencyPlan:
    """Каждый плейсхолдер повторяется f раз"""
    return FrequencyPlan(freqs={p: int(f) for p in placeholders},
                         mode=FrequencyMode.UNIFORM, parameter=int(f))


def capped_plan(global_counts: Mapping[Placeholder, int], cap: int) -> FrequencyPlan:
    """f_p = min(N(p), cap)"""
    if cap < 1:
        raise PlanError(f"cap должен быть >= 1, получено {cap}")
    return FrequencyPlan(freqs={p: min(int(n), int(cap)) for p, n in global_counts.items()},
                         mode=FrequencyMode.CAPPED, parameter=int(cap))


def default_plan(global_counts: Mapping[Placeholder, int]) -> FrequencyPlan:
    """Равномерный план с f = минимальное глобальное количество"""
    if not global_counts:
        raise PlanError("Пустые глобальные количества")
    return uniform_plan(global_counts, min(int(n) for n in global_counts.values()))


def plan_from_config(global_counts: Mapping[Placeholder, int], mode: str,
                     frequency: int = 0, cap: int = 0) -> FrequencyPlan:
    """
    План частот по ключам конфигурации sls.frequency_mode / frequency / cap

    Args:
        global_counts: N(p) из протокола меток
        mode: default, uniform или capped_proportional
        frequency: f для uniform
        cap: Ограничение для capped_proportional
    """
    if mode == 'default':
        return default_plan(global_counts)
    if mode == FrequencyMode.UNIFORM.value:
        return uniform_plan(global_counts, frequency)
    if mode == FrequencyMode.CAPPED.value:
        return capped_plan(global_counts, cap)
    raise ConfigurationError(f"Неизвестный режим частот: {mode}")


def shuffle_in_place(items: List, rng: np.random.Generator) -> None:
    """Fisher-Yates: для i от n-1 до 1 меняет items[i] с items[j], j ~ U{0..i}"""
    for i in range(len(items) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        items[i], items[j] = items[j], items[i]


def build_sls(plan: FrequencyPlan, seed: int) -> Schedule:
    """
    Перемешанное мультимножество: каждый p повторён f_p раз

    Args:
        plan: План частот
        seed: Зерно перемешивания

    Returns:
        Новое расписание с cursor = 0
    """
    if not plan.freqs:
        raise PlanError("План частот пуст")
    bad = [str(p) for p, f in plan.freqs.items() if f <= 0]
    if bad:
        raise PlanError(f"Частоты должны быть >= 1: {', '.join(bad)}")
    if plan.mode == FrequencyMode.UNIFORM and len(set(plan.freqs.values())) != 1:
        raise PlanError("В равномерном плане все частоты должны совпадать")
    entries: List[Placeholder] = []
    for placeholder in sorted(plan.freqs):
        entries.extend([placeholder] * plan.freqs[placeholder])
    shuffle_in_place(entries, make_rng(seed, 'sls'))
    return Schedule(entries=entries, cursor=0, seed=seed)


def label_probability(plan: FrequencyPlan, placeholder: Placeholder) -> float:
    """P(p) = f_p / сумма f"""
    if placeholder not in plan.freqs:
        raise UnknownPlaceholderError(f"Плейсхолдер {placeholder} отсутствует в плане")
    return plan.freqs[placeholder] / plan.total


def pop_front(schedule: Schedule, k: int) -> List[Placeholder]:
    """Выдаёт до k следующих записей и сдвигает курсор"""
    if k < 1:
        raise ContractViolation(f"k должен быть >= 1, получено {k}")
    taken = schedule.entries[schedule.cursor:schedule.cursor + k]
    schedule.cursor += len(taken)
    return taken


def reinsert_random(schedule: Schedule, placeholders: Sequence[Placeholder], seed: int) -> Schedule:
    """
    Вставляет каждый плейсхолдер в случайную позицию среди невыданных записей

    Args:
        schedule: Расписание (изменяется на месте)
        placeholders: Что вернуть в расписание
        seed: Зерно выбора позиций

    Returns:
        То же расписание
    """
    if not placeholders:
        return schedule
    rng = make_rng(seed, 'reinsert')
    for placeholder in placeholders:
        remaining = len(schedule.entries) - schedule.cursor
        position = schedule.cursor + int(rng.integers(0, remaining + 1))
        schedule.entries.insert(position, placeholder)
        schedule.reinserted += 1
    return schedule


def drop_remaining(schedule: Schedule, placeholder: Placeholder) -> int:
    """Удаляет все невыданные вхождения плейсхолдера, возвращает их число"""
    head = schedule.entries[:schedule.cursor]
    tail = [p for p in schedule.entries[schedule.cursor:] if p != placeholder]
    dropped = len(schedule.entries) - len(head) - len(tail)
    schedule.entries = head + tail
    return dropped


def label_weights(schedule: Schedule) -> Dict[Placeholder, float]:
    """Доля каждого плейсхолдера во всём расписании"""
    counts = Counter(schedule.entries)
    total = len(schedule.entries)
    return {p: counts[p] / total for p in sorted(counts)}


def dump_schedule(schedule: Schedule, path: Union[str, Path]) -> Path:
    """Невыданные записи по одной на строку"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for placeholder in schedule.remaining:
            f.write(f"{placeholder.id}\n")
    return path


def restore_schedule(path: Union[str, Path], seed: int = 0) -> Schedule:
    path = Path(path)
    entries = []
    offset = 0
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            token = line.rstrip('\n')
            if not token or any(ch.isspace() for ch in token):
                raise FormatError(f"Неверный идентификатор плейсхолдера в {path}", offset)
            entries.append(Placeholder(token))
            offset += len(line.encode('utf-8'))
    return Schedule(entries=entries, cursor=0, seed=seed)
