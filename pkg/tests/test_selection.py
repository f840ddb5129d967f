import itertools

import numpy as np
import pytest

from app.errors import ConfigurationError, ContractViolation, UnservablePlaceholderError
from app.models.schedule import Placeholder
from app.models.selection import SelectionKind, TrainingTask
from app.services.selection import (
    UniformSelector, WeightedSelector, build_pool, create_policy, group_runs, note_consumed,
    note_exhausted, select_batch, select_single_sample
)

A, B, X = Placeholder('a1'), Placeholder('b2'), Placeholder('x9')


def test_single_sample_prefers_longest_run():
    pool = build_pool({'c1': [A], 'c2': [B], 'c3': [A, B]})
    assignment = select_single_sample([B, B, A], pool, create_policy('uniform', 0))
    assert assignment == ['c3', 'c3', 'c3']
    tasks = group_runs([B, B, A], assignment)
    assert tasks == [TrainingTask(client='c3', placeholders=(B, B, A))]


def test_single_sample_switches_clients_when_run_ends():
    pool = build_pool({'c1': [A], 'c2': [B]})
    chunk = [A, A, B, A]
    assignment = select_single_sample(chunk, pool, create_policy('uniform', 0))
    assert assignment == ['c1', 'c1', 'c2', 'c1']
    assert [len(t) for t in group_runs(chunk, assignment)] == [2, 1, 1]


def test_single_sample_breaks_ties_with_policy():
    pool = build_pool({'c1': [A], 'c2': [A]})
    chosen = {select_single_sample([A], pool, create_policy('uniform', seed))[0]
              for seed in range(20)}
    assert chosen == {'c1', 'c2'}


def test_unservable_placeholder():
    pool = build_pool({'c1': [A]})
    with pytest.raises(UnservablePlaceholderError) as info:
        select_single_sample([A, X], pool, create_policy('uniform', 0))
    assert info.value.placeholder == X


def test_weighted_policy_requires_counts():
    pool = build_pool({'c1': [A]})
    with pytest.raises(ConfigurationError):
        create_policy('weighted', 0, pool)
    with pytest.raises(ConfigurationError):
        create_policy('weighted', 0)


def test_policy_factory():
    pool = build_pool({'c1': [A]}, counts={('c1', A): 2})
    assert isinstance(create_policy('uniform', 0), UniformSelector)
    weighted = create_policy(SelectionKind.WEIGHTED, 0, pool)
    assert isinstance(weighted, WeightedSelector)
    assert weighted.kind == SelectionKind.WEIGHTED


def test_zero_counts_are_not_in_pool():
    pool = build_pool({'c1': [A], 'c2': [A]}, counts={('c1', A): 3, ('c2', A): 0})
    assert pool.candidates(A) == ['c1']
    assert pool.is_consistent()


def test_weighted_draw_follows_counts():
    pool = build_pool({'c1': [A], 'c2': [A]}, counts={('c1', A): 99, ('c2', A): 1})
    policy = create_policy('weighted', 3, pool)
    picks = [select_batch([A], pool, policy)[0] for _ in range(200)]
    assert picks.count('c1') > 150


def test_select_batch_draws_without_replacement_when_possible():
    pool = build_pool({'c1': [A], 'c2': [A, B]})
    batch = [A, B, A]
    assignment = select_batch(batch, pool, create_policy('uniform', 1))
    assert len(assignment) == 3
    assert {assignment[0], assignment[2]} == {'c1', 'c2'}
    assert assignment[1] == 'c2'


def test_select_batch_reuses_clients_when_pool_is_small():
    pool = build_pool({'c1': [A]})
    assert select_batch([A, A, A], pool, create_policy('uniform', 0)) == ['c1', 'c1', 'c1']


def test_select_batch_unservable():
    with pytest.raises(UnservablePlaceholderError):
        select_batch([X], build_pool({'c1': [A]}), create_policy('uniform', 0))


def test_note_exhausted_is_idempotent():
    pool = build_pool({'c1': [A, B], 'c2': [A]})
    note_exhausted(pool, 'c1', [A, B])
    note_exhausted(pool, 'c1', [A, B])
    assert pool.candidates(A) == ['c2']
    assert pool.candidates(B) == []


def test_note_consumed_removes_client_at_zero():
    pool = build_pool({'c1': [A]}, counts={('c1', A): 2})
    note_consumed(pool, 'c1', A)
    assert pool.remaining_count('c1', A) == 1
    note_consumed(pool, 'c1', A)
    assert pool.candidates(A) == []
    assert pool.is_consistent()


def test_counts_are_hidden_in_uniform_mode():
    pool = build_pool({'c1': [A]})
    note_consumed(pool, 'c1', A)
    assert pool.candidates(A) == ['c1']
    with pytest.raises(ContractViolation):
        pool.remaining_count('c1', A)


def test_training_task_cannot_be_empty():
    with pytest.raises(ContractViolation):
        TrainingTask(client='c1', placeholders=())


def _fewest_runs(chunk, pool):
    best = None
    for assignment in itertools.product(*(pool.candidates(p) for p in chunk)):
        runs = 1 + sum(a != b for a, b in zip(assignment, assignment[1:]))
        best = runs if best is None else min(best, runs)
    return best


@pytest.mark.parametrize('seed', range(25))
def test_greedy_runs_are_as_few_as_brute_force(seed):
    rng = np.random.default_rng(seed)
    placeholders = [A, B, X]
    holdings = {f"c{i}": [p for p in placeholders if rng.random() < 0.5] for i in range(3)}
    holdings['c0'].append(A)
    pool = build_pool(holdings)
    servable = [p for p in placeholders if pool.candidates(p)]
    chunk = [servable[i] for i in rng.integers(0, len(servable), size=int(rng.integers(1, 7)))]

    assignment = select_single_sample(chunk, pool, create_policy('uniform', seed))
    assert all(pool.is_available(c, p) for c, p in zip(assignment, chunk))
    assert len(group_runs(chunk, assignment)) == _fewest_runs(chunk, pool)


@pytest.mark.parametrize('seed', range(25))
def test_every_run_is_the_longest_available(seed):
    rng = np.random.default_rng(100 + seed)
    placeholders = [Placeholder(f"p{i}") for i in range(4)]
    holdings = {f"c{i}": [p for p in placeholders if rng.random() < 0.5] for i in range(4)}
    holdings['c0'] = list(placeholders[:2])
    holdings['c1'] = list(placeholders[2:])
    pool = build_pool(holdings)
    chunk = [placeholders[i] for i in rng.integers(0, 4, size=12)]

    tasks = group_runs(chunk, select_single_sample(chunk, pool, create_policy('uniform', seed)))
    start = 0
    for index, task in enumerate(tasks):
        longest = 0
        for client in pool.candidates(chunk[start]):
            length = 0
            while start + length < len(chunk) and pool.is_available(client, chunk[start + length]):
                length += 1
            longest = max(longest, length)
        assert len(task) == longest
        if index + 1 < len(tasks):
            assert not pool.is_available(task.client, chunk[start + len(task)])
        start += len(task)
    assert start == len(chunk)


@pytest.mark.parametrize('seed', range(10))
def test_pool_stays_consistent_under_random_updates(seed):
    rng = np.random.default_rng(seed)
    placeholders = [A, B, X]
    clients = ['c1', 'c2', 'c3']
    counts = {(c, p): int(rng.integers(0, 4)) for c in clients for p in placeholders}
    pool = build_pool({c: placeholders for c in clients}, counts=counts)
    remaining = {key: n for key, n in counts.items() if n > 0}
    assert pool.is_consistent()

    for _ in range(40):
        client = clients[int(rng.integers(0, 3))]
        placeholder = placeholders[int(rng.integers(0, 3))]
        if rng.random() < 0.8:
            note_consumed(pool, client, placeholder)
            if remaining.get((client, placeholder), 0) > 0:
                remaining[(client, placeholder)] -= 1
        else:
            note_exhausted(pool, client, [placeholder])
            remaining.pop((client, placeholder), None)
        assert pool.is_consistent()
        for p in placeholders:
            expected = sorted(c for c in clients if remaining.get((c, p), 0) > 0)
            assert pool.candidates(p) == expected
