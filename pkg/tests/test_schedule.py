from collections import Counter

import numpy as np
import pytest
from scipy import stats

from app.errors import (
    ConfigurationError, ContractViolation, FormatError, PlanError, UnknownPlaceholderError
)
from app.models.schedule import FrequencyMode, FrequencyPlan, Placeholder
from app.services.schedule import (
    build_sls, capped_plan, default_plan, drop_remaining, dump_schedule, label_probability,
    label_weights, plan_from_config, pop_front, reinsert_random, restore_schedule, uniform_plan
)

A, B, C = Placeholder('a1'), Placeholder('b2'), Placeholder('c3')


def test_uniform_plan_repeats_each_placeholder():
    schedule = build_sls(uniform_plan([A, B, C], 3), seed=0)
    assert len(schedule) == 9
    assert Counter(schedule.entries) == {A: 3, B: 3, C: 3}
    assert schedule.cursor == 0


def test_build_is_deterministic_per_seed():
    placeholders = [Placeholder(f"p{i}") for i in range(5)]
    plan = uniform_plan(placeholders, 4)
    assert build_sls(plan, 7).entries == build_sls(plan, 7).entries
    assert build_sls(plan, 7).entries != build_sls(plan, 8).entries


def test_capped_plan():
    plan = capped_plan({A: 10, B: 2}, cap=5)
    assert plan.freqs == {A: 5, B: 2}
    assert plan.mode == FrequencyMode.CAPPED
    assert label_probability(plan, A) == pytest.approx(5 / 7)


def test_capped_plan_rejects_zero_cap():
    with pytest.raises(PlanError):
        capped_plan({A: 3}, cap=0)


def test_default_plan_uses_smallest_count():
    plan = default_plan({A: 7, B: 3, C: 9})
    assert plan.freqs == {A: 3, B: 3, C: 3}
    assert plan.parameter == 3


def test_plan_from_config_modes():
    counts = {A: 4, B: 6}
    assert plan_from_config(counts, 'uniform', frequency=2).freqs == {A: 2, B: 2}
    assert plan_from_config(counts, 'capped_proportional', cap=5).freqs == {A: 4, B: 5}
    with pytest.raises(ConfigurationError):
        plan_from_config(counts, 'proportional')


@pytest.mark.parametrize('plan', [
    FrequencyPlan(freqs={}),
    FrequencyPlan(freqs={A: 0, B: 0}),
    FrequencyPlan(freqs={A: 2, B: 3}, mode=FrequencyMode.UNIFORM),
])
def test_invalid_plans_are_rejected(plan):
    with pytest.raises(PlanError):
        build_sls(plan, seed=0)


def test_unknown_placeholder_probability():
    with pytest.raises(UnknownPlaceholderError):
        label_probability(uniform_plan([A], 1), B)


def test_pop_front_advances_cursor():
    schedule = build_sls(uniform_plan([A, B, C], 3), seed=1)
    first = pop_front(schedule, 4)
    second = pop_front(schedule, 4)
    last = pop_front(schedule, 4)
    assert (len(first), len(second), len(last)) == (4, 4, 1)
    assert first + second + last == schedule.entries
    assert schedule.exhausted
    assert pop_front(schedule, 2) == []


def test_pop_front_rejects_non_positive_k():
    schedule = build_sls(uniform_plan([A], 2), seed=0)
    with pytest.raises(ContractViolation):
        pop_front(schedule, 0)


def test_reinsert_only_touches_remaining_entries():
    schedule = build_sls(uniform_plan([A, B, C], 3), seed=2)
    consumed = pop_front(schedule, 4)
    before = Counter(schedule.remaining)
    reinsert_random(schedule, [A, A], seed=5)
    assert len(schedule) == 11
    assert schedule.consumed == consumed
    assert Counter(schedule.remaining) == before + Counter({A: 2})
    assert schedule.reinserted == 2


def test_reinsert_into_exhausted_schedule_appends():
    schedule = build_sls(uniform_plan([A], 2), seed=0)
    pop_front(schedule, 2)
    reinsert_random(schedule, [A], seed=0)
    assert schedule.remaining == [A]


def test_reinserted_position_is_uniform_over_remaining_slots():
    extra = Placeholder('d4')
    positions = Counter()
    for seed in range(10000):
        schedule = build_sls(uniform_plan([A, B, C], 3), seed=0)
        pop_front(schedule, 4)
        reinsert_random(schedule, [extra], seed=seed)
        positions[schedule.entries.index(extra) - schedule.cursor] += 1
    observed = [positions[k] for k in range(6)]
    assert sum(observed) == 10000
    assert stats.chisquare(observed).pvalue > 1e-3


def test_drop_remaining():
    schedule = build_sls(uniform_plan([A, B], 3), seed=4)
    consumed = pop_front(schedule, 2)
    dropped = drop_remaining(schedule, A)
    assert dropped == 3 - consumed.count(A)
    assert A not in schedule.remaining
    assert schedule.consumed == consumed


def test_label_weights_match_plan():
    schedule = build_sls(capped_plan({A: 9, B: 1}, cap=3), seed=0)
    assert label_weights(schedule) == {A: pytest.approx(0.75), B: pytest.approx(0.25)}


def test_dump_and_restore_remaining(tmp_path):
    schedule = build_sls(uniform_plan([A, B, C], 2), seed=3)
    pop_front(schedule, 2)
    path = dump_schedule(schedule, tmp_path / 'sls.txt')
    restored = restore_schedule(path, seed=3)
    assert restored.entries == schedule.remaining
    assert restored.cursor == 0


def test_restore_rejects_malformed_tokens(tmp_path):
    path = tmp_path / 'sls.txt'
    path.write_text("a1\nb 2\n", encoding='utf-8')
    with pytest.raises(FormatError) as info:
        restore_schedule(path)
    assert info.value.offset == 3


def test_first_position_is_uniform_across_seeds():
    plan = uniform_plan([A, B, C], 2)
    heads = Counter(build_sls(plan, seed).entries[0] for seed in range(600))
    observed = [heads[p] for p in (A, B, C)]
    assert sum(observed) == 600
    assert stats.chisquare(observed).pvalue > 1e-3


def test_each_position_holds_label_with_plan_probability():
    plan = capped_plan({A: 4, B: 2}, cap=4)
    hits = sum(build_sls(plan, seed).entries[3] == A for seed in range(900))
    result = stats.binomtest(hits, 900, label_probability(plan, A))
    assert result.pvalue > 1e-3


def test_schedule_batches_have_lower_gradient_variance_than_iid_draws():
    label_means = np.array([-3.0, 0.5, 4.0])
    index = {A: 0, B: 1, C: 2}
    plan = uniform_plan([A, B, C], 10)
    rng = np.random.default_rng(0)
    trials, batch = 2000, 15

    def batch_gradient(labels):
        labels = np.asarray(labels)
        return float(np.mean(label_means[labels] + 0.1 * rng.standard_normal(len(labels))))

    def squared_error(values):
        return float(np.mean((np.asarray(values) - label_means.mean()) ** 2))

    stratified = [batch_gradient([index[p] for p in build_sls(plan, seed).entries[:batch]])
                  for seed in range(trials)]
    balanced = [batch_gradient(rng.integers(0, 3, size=batch)) for _ in range(trials)]
    skewed = [batch_gradient(rng.choice(3, size=batch, p=[0.6, 0.3, 0.1])) for _ in range(trials)]
    assert squared_error(stratified) < squared_error(balanced)
    assert squared_error(balanced) < squared_error(skewed)
