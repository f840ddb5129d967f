import numpy as np
import pytest

from app.errors import ContractViolation, DegenerateBatchError, ProtocolOrderError
from app.services.batchnorm import (
    BN_EPS, SumReducer, bn_backward_distributed, bn_forward_distributed
)
from app.services.model_core import mlp
from helpers import make_samples


def _centralized(x, gamma, beta, dy):
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    y = gamma * xhat + beta
    dxhat = dy * gamma
    m = x.shape[0]
    dx = inv_std / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return y, dx, mean, var


@pytest.mark.parametrize('sizes', [(3, 5, 2), (1, 1, 4), (6,)])
def test_distributed_batchnorm_matches_centralized(sizes):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(sum(sizes), 4)) * 3 + 1
    dy = rng.normal(size=x.shape)
    gamma = rng.uniform(0.5, 1.5, size=4)
    beta = rng.normal(size=4)
    bounds = np.cumsum((0,) + sizes)
    parts = [x[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    grads = [dy[a:b] for a, b in zip(bounds[:-1], bounds[1:])]

    reducer = SumReducer()
    outputs, stats, cache = bn_forward_distributed(parts, reducer, gamma, beta)
    dxs = bn_backward_distributed(grads, reducer, cache)

    y, dx, mean, var = _centralized(x, gamma, beta, dy)
    np.testing.assert_allclose(np.concatenate(outputs), y, atol=1e-8)
    np.testing.assert_allclose(np.concatenate(dxs), dx, atol=1e-8)
    np.testing.assert_allclose(stats.mean, mean, atol=1e-10)
    np.testing.assert_allclose(stats.variance, var, atol=1e-10)
    assert stats.count == sum(sizes)
    assert reducer.calls == 3


def test_distributed_batchnorm_on_feature_maps():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 2, 3, 3))
    parts = [x[:2], x[2:]]
    outputs, stats, _ = bn_forward_distributed(parts, SumReducer())
    whole = np.concatenate(outputs)
    # по каждому каналу выход нормирован по всем участникам сразу
    np.testing.assert_allclose(whole.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    assert stats.count == 5 * 9


def test_single_sample_global_batch_is_degenerate():
    with pytest.raises(DegenerateBatchError):
        bn_forward_distributed([np.ones((1, 3))], SumReducer())


def test_two_single_sample_participants_are_enough():
    outputs, stats, _ = bn_forward_distributed([np.zeros((1, 2)), np.ones((1, 2))], SumReducer())
    assert stats.count == 2
    np.testing.assert_allclose(outputs[0] + outputs[1], 0.0, atol=1e-10)


def test_backward_without_forward_is_an_order_error():
    with pytest.raises(ProtocolOrderError):
        bn_backward_distributed([np.ones((2, 3))], SumReducer(), None)


def test_backward_requires_gradient_per_participant():
    _, _, cache = bn_forward_distributed([np.eye(3), np.eye(3)], SumReducer())
    with pytest.raises(ContractViolation):
        bn_backward_distributed([np.ones((3, 3))], SumReducer(), cache)


def test_forward_requires_participants():
    with pytest.raises(ContractViolation):
        bn_forward_distributed([], SumReducer())


def test_model_gradients_split_across_clients_sum_to_centralized():
    model = mlp((4,), 3, hidden=6, norm='batch')
    params = model.init_params(4)
    batch = make_samples({0: 3, 1: 4, 2: 3}, seed=6)
    whole = model.grad_summed(params, batch, bn=SumReducer())
    results = model.grad_distributed(params, [batch[:3], batch[3:8], batch[8:]], SumReducer())
    total = results[0].grad + results[1].grad + results[2].grad
    np.testing.assert_allclose(total.flat(), whole.flat(), atol=1e-9)
    assert total.num_terms == 10


def test_running_statistics_follow_global_batch():
    model = mlp((4,), 3, hidden=6, norm='batch')
    params = model.init_params(0)
    batch = make_samples({0: 4, 1: 4}, seed=1)
    result = model.grad_distributed(params, [batch[:5], batch[5:]], SumReducer())[0]
    stats = result.bn_stats[2]
    updated = model.update_running_stats(params, result.bn_stats, momentum=0.5)
    np.testing.assert_allclose(updated.buffers[0], 0.5 * stats.mean)
    np.testing.assert_allclose(updated.buffers[1], 0.5 + 0.5 * stats.variance)
    np.testing.assert_array_equal(updated.flat(), params.flat())
