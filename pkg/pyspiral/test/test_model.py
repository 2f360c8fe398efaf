# pylint: disable=missing-function-docstring
# pylint: disable=missing-module-docstring
# pylint: disable=redefined-outer-name

import numpy as np
import pytest

from pyspiral import primitives
from pyspiral.engine import ParamStore
from pyspiral.features import SerializedBatch, raw_features, serialize_batch
from pyspiral.model import (
    FcsNet,
    LstmNet,
    NetworkSpec,
    Prediction,
    build_network,
    count_params,
    param_breakdown,
)
from pyspiral.training import network_grad_check
from pyspiral.util import ValidationError

SMALL_WIDTHS = (8, 6, 6, 6, 8)


def small_spec(kind, seq_len=7, **kwargs):
    return NetworkSpec(kind, 5, classes=12, seq_len=seq_len, widths=SMALL_WIDTHS, **kwargs)


def icosahedron_batch(seq_len=7, seed=0):
    mesh = primitives.icosahedron()
    return serialize_batch(mesh, raw_features(mesh), seq_len, seed, augment=True)


def test_lstm_net_size():
    spec = NetworkSpec("lstm", input_dim=544, classes=6890)
    assert count_params(spec) == 2_675_706
    assert param_breakdown(spec) == {
        "fc_in": 8_720,
        "lstm1": 100_200,
        "lstm2": 280_800,
        "lstm3": 451_000,
        "fc_hidden": 64_256,
        "fc_out": 1_770_730,
    }


def test_fcs_net_size():
    spec = NetworkSpec("fcs-net", input_dim=544, classes=6890, seq_len=20)
    assert spec.kind == "fcs"
    assert count_params(spec) == 2_763_356
    assert param_breakdown(spec) == {
        "fc_in": 8_720,
        "fcs1": 32_100,
        "fcs2": 300_150,
        "fcs3": 600_200,
        "fc_hidden": 51_456,
        "fc_out": 1_770_730,
    }


def test_built_network_matches_count():
    spec = small_spec("lstm")
    model = build_network(spec, np.random.default_rng(0))
    assert isinstance(model, LstmNet)
    assert model.count_params() == count_params(spec) == count_params(model)


def test_spec_validation():
    with pytest.raises(ValidationError, match="unknown network kind"):
        NetworkSpec("gru", 3, 4)
    with pytest.raises(ValidationError, match="five positive"):
        NetworkSpec("lstm", 3, 4, widths=(1, 2, 3))
    with pytest.raises(ValidationError, match="sequence length"):
        NetworkSpec("fcs", 3, 4)
    with pytest.raises(ValidationError, match="dropout"):
        NetworkSpec("lstm", 3, 4, dropout=1.0)
    with pytest.raises(ValidationError, match="positive"):
        NetworkSpec("lstm", 0, 4)


def test_spec_dict():
    spec = small_spec("fcs", dropout=0.1, forget_bias=1.0)
    assert NetworkSpec.from_dict(spec.to_dict()) == spec
    assert spec.to_dict()["widths"] == list(SMALL_WIDTHS)
    assert NetworkSpec("lstm", 3, 4).widths == (16, 150, 200, 250, 256)


def test_build_initialization():
    model = build_network(small_spec("lstm", forget_bias=1.0), np.random.default_rng(1))
    np.testing.assert_array_equal(model.params["lstm2.b_f"], 1.0)
    np.testing.assert_array_equal(model.params["lstm2.b_i"], 0.0)
    np.testing.assert_array_equal(model.params["fc_out.b"], 0.0)
    assert np.abs(model.params["fc_in.W"]).max() <= np.sqrt(6.0 / 13.0)


def test_params_must_match_layout():
    spec = small_spec("lstm")
    model = build_network(spec, np.random.default_rng(0))
    with pytest.raises(ValidationError, match="parameter names"):
        FcsNet(small_spec("fcs"), model.params)
    bad = model.params.copy()
    bad["fc_out.b"] = np.zeros(3)
    with pytest.raises(ValidationError, match=r"fc_out.b: expected shape \(12,\)"):
        LstmNet(spec, bad)


@pytest.mark.parametrize("kind", ["lstm", "fcs"])
def test_forward_shapes(kind):
    model = build_network(small_spec(kind), np.random.default_rng(0))
    logits, _ = model.forward(icosahedron_batch())
    assert logits.shape == (12, 12)
    prediction = model.predict(icosahedron_batch(), keep_probabilities=True)
    assert prediction.targets.shape == (12,)
    np.testing.assert_allclose(prediction.probabilities.sum(axis=1), 1.0)
    assert model.predict(icosahedron_batch()).probabilities is None


@pytest.mark.parametrize("kind", ["lstm", "fcs"])
def test_padded_inputs_are_ignored(kind):
    mesh = primitives.tetrahedron()
    batch = serialize_batch(mesh, raw_features(mesh), 7, seed=3, augment=True)
    assert not batch.pad_mask.all()
    noisy = batch.inputs.copy()
    noisy[~batch.pad_mask] = np.random.default_rng(0).normal(size=noisy[~batch.pad_mask].shape)
    tampered = SerializedBatch(noisy, batch.pad_mask, batch.indices, batch.augmented)
    spec = NetworkSpec(kind, 5, classes=4, seq_len=7, widths=SMALL_WIDTHS)
    model = build_network(spec, np.random.default_rng(2))
    np.testing.assert_allclose(model.forward(tampered)[0], model.forward(batch)[0], atol=1e-12)


def test_lstm_rows_are_independent():
    model = build_network(small_spec("lstm"), np.random.default_rng(4))
    batch = icosahedron_batch()
    logits, _ = model.forward(batch)
    order = np.random.default_rng(5).permutation(12)
    permuted, _ = model.forward(batch.take(order))
    np.testing.assert_allclose(permuted, logits[order], atol=1e-12)
    single, _ = model.forward(batch.take([7]))
    np.testing.assert_allclose(single[0], logits[7], atol=1e-12)


def test_fcs_follows_row_order():
    model = build_network(small_spec("fcs"), np.random.default_rng(4))
    batch = icosahedron_batch()
    logits, _ = model.forward(batch)
    order = np.random.default_rng(5).permutation(12)
    permuted, _ = model.forward(batch.take(order))
    np.testing.assert_allclose(permuted, logits[order], atol=1e-12)
    labels = np.arange(12)
    loss, grads, _ = model.loss_and_grads(batch, labels)
    permuted_loss, permuted_grads, _ = model.loss_and_grads(batch.take(order), labels[order])
    assert permuted_loss == pytest.approx(loss, abs=1e-12)
    for name, grad in grads.items():
        np.testing.assert_allclose(permuted_grads[name], grad, atol=1e-10)


def test_fcs_needs_whole_mesh():
    model = build_network(small_spec("fcs"), np.random.default_rng(0))
    with pytest.raises(ValidationError, match="whole-mesh"):
        model.forward(icosahedron_batch().take([0, 1, 2]))
    with pytest.raises(ValidationError, match="sequences of 7 steps, got 9"):
        model.forward(icosahedron_batch(seq_len=9))


def test_input_dim_mismatch():
    model = build_network(NetworkSpec("lstm", 3, 12, widths=SMALL_WIDTHS), np.random.default_rng(0))
    with pytest.raises(ValidationError, match="3-dimensional steps, batch has 5"):
        model.forward(icosahedron_batch())


def test_label_checks():
    model = build_network(small_spec("lstm"), np.random.default_rng(0))
    with pytest.raises(ValidationError, match="expected 12 labels"):
        model.loss_and_grads(icosahedron_batch(), np.arange(5))
    with pytest.raises(ValidationError, match=r"labels must lie in \[0, 12\)"):
        model.loss_and_grads(icosahedron_batch(), np.arange(12) + 1)


def test_dropout_only_in_train_mode():
    model = build_network(small_spec("lstm", dropout=0.5), np.random.default_rng(0))
    batch = icosahedron_batch()
    eval_a, _ = model.forward(batch)
    eval_b, _ = model.forward(batch, train=False, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(eval_a, eval_b)
    train_a, _ = model.forward(batch, train=True, rng=np.random.default_rng(1))
    train_b, _ = model.forward(batch, train=True, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(train_a, train_b)
    assert not np.array_equal(train_a, eval_a)


def test_initial_loss_is_near_uniform():
    model = build_network(small_spec("lstm"), np.random.default_rng(0))
    loss, grads, probs = model.loss_and_grads(icosahedron_batch(), np.arange(12))
    assert abs(loss - np.log(12)) < 1.0
    assert isinstance(grads, ParamStore)
    assert list(grads) == list(model.params)
    assert probs.shape == (12, 12)


@pytest.mark.parametrize("kind", ["lstm", "fcs"])
@pytest.mark.parametrize("seed", range(20))
def test_network_gradients(kind, seed):
    report = network_grad_check(kind, seed)
    assert report.passed, "\n".join(report.lines())
    assert set(report.errors) >= {"fc_in.W", "fc_out.b"}


def test_prediction_agreement():
    a = Prediction(np.array([0, 1, 2, 3]))
    b = Prediction(np.array([0, 1, 0, 3]))
    assert a.agreement(b) == 0.75
