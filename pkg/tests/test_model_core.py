import math

import numpy as np
import pytest

from app.errors import ConfigurationError, ContractViolation, FormatError, NumericError
from app.models.data import Sample
from app.models.experiment import ModelSpec
from app.models.tensors import GradientSum, ModelParams
from app.services.batchnorm import SumReducer
from app.services.checkpoint import load_params, params_from_bytes, params_to_bytes, save_params
from app.services.model_core import build_model, logistic_regression, mlp, sgd_step, small_cnn
from helpers import make_samples


def _perturbed(params: ModelParams, tensor: int, position: tuple, delta: float) -> ModelParams:
    layers = [np.array(t) for t in params.layers]
    layers[tensor][position] += delta
    return params.replace(layers=layers)


def _numeric_grad(loss, params, tensor, position, h=1e-6):
    return (loss(_perturbed(params, tensor, position, h))
            - loss(_perturbed(params, tensor, position, -h))) / (2 * h)


@pytest.mark.parametrize('norm', ['none', 'group'])
def test_mlp_gradient_matches_finite_differences(norm):
    model = mlp((4,), 3, hidden=8, norm=norm, groups=2)
    params = model.init_params(3)
    batch = make_samples({0: 3, 1: 2, 2: 3}, dim=4, seed=5)
    grad = model.grad_summed(params, batch)

    def loss(p):
        return model.forward_loss(p, batch)[0]

    rng = np.random.default_rng(0)
    for tensor, g in enumerate(grad.grads):
        for _ in range(3):
            position = tuple(int(rng.integers(0, n)) for n in g.shape)
            expected = _numeric_grad(loss, params, tensor, position)
            assert g[position] == pytest.approx(expected, rel=1e-4, abs=1e-7)


def test_batchnorm_mlp_gradient_matches_finite_differences():
    model = mlp((4,), 3, hidden=6, norm='batch')
    params = model.init_params(1)
    batch = make_samples({0: 4, 1: 4, 2: 4}, dim=4, seed=2)
    grad = model.grad_summed(params, batch, bn=SumReducer())

    def loss(p):
        return model.forward_loss(p, batch, bn=SumReducer())[0]

    assert model.batch_norm_layers == [2]
    # gamma и beta идут сразу после весов первого Dense
    for tensor in (2, 3):
        for channel in range(6):
            expected = _numeric_grad(loss, params, tensor, (channel,))
            assert grad.grads[tensor][channel] == pytest.approx(expected, rel=1e-4, abs=1e-7)


def test_cnn_gradient_matches_finite_differences():
    model = small_cnn((1, 4, 4), 2, channels=2, hidden=4)
    params = model.init_params(0)
    rng = np.random.default_rng(1)
    batch = [Sample(features=rng.normal(size=(1, 4, 4)), label=i % 2, index=i) for i in range(3)]
    grad = model.grad_summed(params, batch)

    def loss(p):
        return model.forward_loss(p, batch)[0]

    conv_weight = grad.grads[0]
    for position in [(0, 0, 0, 0), (1, 0, 2, 1), (0, 0, 1, 1)]:
        expected = _numeric_grad(loss, params, 0, position)
        assert conv_weight[position] == pytest.approx(expected, rel=1e-4, abs=1e-7)


def test_loss_sum_matches_scalar_forward_pass():
    model = mlp((3,), 2, hidden=4)
    params = model.init_params(11)
    batch = make_samples({0: 2, 1: 1}, dim=3, seed=2)
    w1, b1, w2, b2 = params.layers

    expected = 0.0
    for sample in batch:
        hidden = []
        for j in range(4):
            z = b1[j]
            for i in range(3):
                z += sample.features[i] * w1[i, j]
            hidden.append(max(z, 0.0))
        logits = []
        for k in range(2):
            z = b2[k]
            for j in range(4):
                z += hidden[j] * w2[j, k]
            logits.append(z)
        expected += math.log(sum(math.exp(z) for z in logits)) - logits[sample.label]

    loss_sum, _ = model.forward_loss(params, batch)
    assert loss_sum == pytest.approx(expected, rel=1e-12)


def test_summed_gradient_is_additive_over_batches():
    model = mlp((4,), 3, hidden=5)
    params = model.init_params(0)
    batch = make_samples({0: 4, 1: 3, 2: 2}, seed=1)
    whole = model.grad_summed(params, batch)
    parts = model.grad_summed(params, batch[:4]) + model.grad_summed(params, batch[4:])
    np.testing.assert_allclose(whole.flat(), parts.flat(), atol=1e-12)
    assert whole.num_terms == 9


def test_forward_loss_rejects_empty_batch():
    model = logistic_regression((4,), 2)
    with pytest.raises(ContractViolation):
        model.forward_loss(model.init_params(0), [])


def test_empty_batch_gradient_is_zero():
    model = logistic_regression((4,), 2)
    grad = model.grad_summed(model.init_params(0), [])
    assert grad.num_terms == 0
    assert not np.any(grad.flat())


def test_batchnorm_model_requires_reducer():
    model = mlp((4,), 2, hidden=4, norm='batch')
    batch = make_samples({0: 2, 1: 2})
    with pytest.raises(ConfigurationError):
        model.grad_summed(model.init_params(0), batch)


def test_sgd_step_divides_by_normalizer():
    params = ModelParams(layers=(np.array([1.0, 2.0]),))
    grad = GradientSum(grads=(np.array([4.0, -2.0]),), num_terms=2)
    updated = sgd_step(params, grad, lr=0.5, normalizer=2)
    np.testing.assert_allclose(updated.layers[0], [0.0, 2.5])
    np.testing.assert_allclose(params.layers[0], [1.0, 2.0])


def test_sgd_step_rejects_zero_normalizer():
    params = ModelParams(layers=(np.zeros(2),))
    with pytest.raises(ContractViolation):
        sgd_step(params, GradientSum.zeros_like(params), 0.1, 0)


def test_sgd_step_rejects_shape_mismatch():
    params = ModelParams(layers=(np.zeros(2),))
    grad = GradientSum(grads=(np.zeros(3),))
    with pytest.raises(ConfigurationError):
        sgd_step(params, grad, 0.1, 1)


def test_sgd_step_reports_non_finite_parameters():
    params = ModelParams(layers=(np.zeros(2), np.zeros(1)))
    grad = GradientSum(grads=(np.zeros(2), np.array([np.inf])))
    with pytest.raises(NumericError) as info:
        sgd_step(params, grad, 0.1, 1)
    assert info.value.layer_index == 1


def test_model_params_are_read_only():
    params = ModelParams(layers=(np.zeros(3),))
    with pytest.raises(ValueError):
        params.layers[0][0] = 1.0


def test_init_params_is_deterministic():
    model = mlp((4,), 3)
    np.testing.assert_array_equal(model.init_params(7).flat(), model.init_params(7).flat())
    assert not np.array_equal(model.init_params(7).flat(), model.init_params(8).flat())


def test_param_count_excludes_buffers():
    model = mlp((4,), 3, hidden=6, norm='batch')
    params = model.init_params(0)
    assert params.param_count == 4 * 6 + 6 + 6 + 6 + 6 * 3 + 3
    assert len(params.buffers) == 2


def test_predict_uses_running_statistics():
    model = mlp((4,), 2, hidden=4, norm='batch')
    params = model.init_params(0)
    features = np.random.default_rng(0).normal(size=(1, 4))
    assert model.predict(params, features).shape == (1,)


def test_build_model_rejects_cnn_on_vectors():
    with pytest.raises(ConfigurationError):
        build_model(ModelSpec(kind='cnn'), (16,), 10)


def test_group_norm_requires_divisible_channels():
    with pytest.raises(ConfigurationError):
        mlp((4,), 2, hidden=6, norm='group', groups=4)


def test_checkpoint_round_trip(tmp_path):
    model = mlp((4,), 3, hidden=4, norm='batch')
    params = model.init_params(2)
    path = save_params(params, tmp_path / 'model.bin')
    loaded = load_params(path)
    np.testing.assert_array_equal(loaded.flat(), params.flat())
    assert len(loaded.buffers) == 2


def test_checkpoint_truncation_reports_offset():
    data = params_to_bytes(ModelParams(layers=(np.ones((2, 3)),)))
    with pytest.raises(FormatError) as info:
        params_from_bytes(data[:-5])
    assert info.value.offset > 0


def test_checkpoint_rejects_bad_magic():
    data = params_to_bytes(ModelParams(layers=(np.ones(2),)))
    with pytest.raises(FormatError):
        params_from_bytes(b'XXXX' + data[4:])
