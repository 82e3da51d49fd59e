"""Tests for the minimal dense-network kernel.

The backward pass is validated against central finite differences of the
scalar training objective, for parameters and inputs alike; training and
checkpoint behavior are exercised on small hand-checkable problems.
"""

import numpy as np
import pytest

from vflab.nn import (
    LOG_FLOOR,
    DenseLayer,
    Model,
    ModelSpec,
    TrainingDivergedError,
    apply_gradients,
    backward,
    cross_entropy_with_grad,
    forward,
    init_model,
    load_model,
    save_model,
    softmax,
    softmax_rows,
    train_classifier,
)

# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------


def _objective(model, x, labels):
    """Mean cross-entropy of the model's softmax outputs: the quantity whose
    gradients the backward pass claims to compute."""
    probs = softmax_rows(forward(model, x))
    n = x.shape[0]
    return -float(np.mean(np.log(np.clip(probs[np.arange(n), labels], LOG_FLOOR, None))))


def _analytic_grads(model, x, labels):
    probs = softmax_rows(forward(model, x))
    n = x.shape[0]
    upstream = probs.copy()
    upstream[np.arange(n), labels] -= 1.0
    return backward(model, x, upstream / n)


def _numeric_param_grads(model, x, labels, h=1e-6):
    grads = []
    for layer in model.layers:
        for arr in (layer.weights, layer.biases):
            num = np.zeros_like(arr)
            flat = arr.reshape(-1)
            out = num.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                hi = _objective(model, x, labels)
                flat[i] = keep - h
                lo = _objective(model, x, labels)
                flat[i] = keep
                out[i] = (hi - lo) / (2.0 * h)
            grads.append(num)
    return grads


def _numeric_input_grad(model, x, labels, h=1e-6):
    num = np.zeros_like(x)
    flat = x.reshape(-1)
    out = num.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = _objective(model, x, labels)
        flat[i] = keep - h
        lo = _objective(model, x, labels)
        flat[i] = keep
        out[i] = (hi - lo) / (2.0 * h)
    return num


def _rel_err(analytic, numeric):
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


# ---------------------------------------------------------------------------


class TestStructures:
    def test_dense_layer_shape_check(self):
        DenseLayer(weights=np.zeros((3, 2)), biases=np.zeros(3))
        with pytest.raises(ValueError, match="biases"):
            DenseLayer(weights=np.zeros((3, 2)), biases=np.zeros(2))
        with pytest.raises(ValueError, match="2-D"):
            DenseLayer(weights=np.zeros(3), biases=np.zeros(3))

    def test_spec_validation(self):
        ModelSpec(kind="linear", input_dim=4, output_dim=3)
        ModelSpec(kind="mlp1", input_dim=4, output_dim=3, hidden_units=8)
        with pytest.raises(ValueError, match="kind"):
            ModelSpec(kind="cnn", input_dim=4, output_dim=3)
        with pytest.raises(ValueError, match="hidden_units"):
            ModelSpec(kind="mlp1", input_dim=4, output_dim=3)
        with pytest.raises(ValueError, match="no hidden_units"):
            ModelSpec(kind="linear", input_dim=4, output_dim=3, hidden_units=8)

    def test_init_respects_fan_in_bound(self):
        rng = np.random.default_rng(42)
        spec = ModelSpec(kind="mlp1", input_dim=16, output_dim=4, hidden_units=9)
        model = init_model(spec, rng)
        assert np.max(np.abs(model.layers[0].weights)) <= 1.0 / 4.0
        assert np.max(np.abs(model.layers[1].weights)) <= 1.0 / 3.0
        assert len(model.layers) == 2

    def test_init_is_seed_deterministic(self):
        spec = ModelSpec(kind="linear", input_dim=5, output_dim=3)
        a = init_model(spec, np.random.default_rng(7))
        b = init_model(spec, np.random.default_rng(7))
        np.testing.assert_array_equal(a.layers[0].weights, b.layers[0].weights)


class TestForward:
    def test_linear_matches_manual_product(self):
        rng = np.random.default_rng(42)
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=3)
        model = Model(
            spec=ModelSpec(kind="linear", input_dim=4, output_dim=3),
            layers=[DenseLayer(weights=w, biases=b)],
        )
        x = rng.normal(size=(5, 4))
        np.testing.assert_allclose(forward(model, x), x @ w.T + b, rtol=1e-15)

    def test_mlp_matches_manual_relu_chain(self):
        rng = np.random.default_rng(42)
        spec = ModelSpec(kind="mlp1", input_dim=4, output_dim=3, hidden_units=6)
        model = init_model(spec, rng)
        x = rng.normal(size=(5, 4))
        l1, l2 = model.layers
        hidden = np.maximum(x @ l1.weights.T + l1.biases, 0.0)
        np.testing.assert_allclose(forward(model, x), hidden @ l2.weights.T + l2.biases, rtol=1e-14)

    def test_single_sample_matches_batch_row(self):
        rng = np.random.default_rng(42)
        model = init_model(ModelSpec(kind="linear", input_dim=4, output_dim=3), rng)
        x = rng.normal(size=(2, 4))
        single = forward(model, x[0])
        assert single.shape == (3,)
        # batched and single-row matmuls may differ by an ulp
        np.testing.assert_allclose(single, forward(model, x)[0], rtol=1e-14)

    def test_rejects_wrong_width(self):
        model = init_model(ModelSpec(kind="linear", input_dim=4, output_dim=3), np.random.default_rng(0))
        with pytest.raises(ValueError, match="features"):
            forward(model, np.zeros(5))


class TestSoftmaxAndLoss:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(42)
        probs = softmax_rows(rng.normal(size=(10, 6)))
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(10), rtol=1e-12)
        assert np.all(probs > 0.0)

    def test_stable_for_large_logits(self):
        probs = softmax_rows(np.array([[1000.0, 1000.0, 999.0]]))
        assert np.all(np.isfinite(probs))
        np.testing.assert_allclose(probs[0, 0], probs[0, 1], rtol=1e-12)

    def test_softmax_returns_confidence_vector(self):
        c = softmax(np.array([0.0, 0.0]))
        np.testing.assert_allclose(c.values, [0.5, 0.5], rtol=1e-15)
        with pytest.raises(ValueError, match="1-D"):
            softmax(np.zeros((2, 2)))

    def test_cross_entropy_value_and_grad(self):
        from vflab.scores import ConfidenceVector

        probs = ConfidenceVector([0.2, 0.5, 0.3])
        loss, grad = cross_entropy_with_grad(probs, 1)
        np.testing.assert_allclose(loss, -np.log(0.5), rtol=1e-15)
        np.testing.assert_allclose(grad, [0.2, -0.5, 0.3], rtol=1e-15)

    def test_cross_entropy_floors_zero_probability(self):
        from vflab.scores import ConfidenceVector

        loss, _ = cross_entropy_with_grad(ConfidenceVector([0.0, 1.0]), 0)
        np.testing.assert_allclose(loss, -np.log(LOG_FLOOR), rtol=1e-15)

    def test_cross_entropy_label_range(self):
        from vflab.scores import ConfidenceVector

        with pytest.raises(ValueError, match="label"):
            cross_entropy_with_grad(ConfidenceVector([0.5, 0.5]), 2)


class TestBackward:
    def test_param_grads_match_finite_differences(self):
        """Analytic parameter gradients agree with central differences of the
        training objective on random instances of both model kinds."""
        rng = np.random.default_rng(42)
        for kind in ("linear", "mlp1"):
            for _ in range(10):
                d = int(rng.integers(2, 7))
                k = int(rng.integers(2, 5))
                hidden = int(rng.integers(2, 8)) if kind == "mlp1" else None
                spec = ModelSpec(kind=kind, input_dim=d, output_dim=k, hidden_units=hidden)
                model = init_model(spec, rng)
                x = rng.normal(size=(4, d))
                labels = rng.integers(0, k, size=4)
                bundle = _analytic_grads(model, x, labels)
                numeric = _numeric_param_grads(model, x, labels)
                analytic = [g for pair in bundle.layer_grads for g in pair]
                for a, n in zip(analytic, numeric, strict=True):
                    assert _rel_err(a, n) < 1e-6

    def test_input_grads_match_finite_differences(self):
        rng = np.random.default_rng(42)
        for kind in ("linear", "mlp1"):
            for _ in range(10):
                d = int(rng.integers(2, 7))
                k = int(rng.integers(2, 5))
                hidden = int(rng.integers(2, 8)) if kind == "mlp1" else None
                spec = ModelSpec(kind=kind, input_dim=d, output_dim=k, hidden_units=hidden)
                model = init_model(spec, rng)
                x = rng.normal(size=(3, d))
                labels = rng.integers(0, k, size=3)
                bundle = _analytic_grads(model, x, labels)
                numeric = _numeric_input_grad(model, x, labels)
                assert _rel_err(bundle.input_grad, numeric) < 1e-6

    def test_single_sample_input_grad_shape(self):
        rng = np.random.default_rng(42)
        model = init_model(ModelSpec(kind="linear", input_dim=4, output_dim=3), rng)
        bundle = backward(model, np.ones(4), np.array([0.1, -0.2, 0.1]))
        assert bundle.input_grad.shape == (4,)

    def test_upstream_shape_check(self):
        model = init_model(ModelSpec(kind="linear", input_dim=4, output_dim=3), np.random.default_rng(0))
        with pytest.raises(ValueError, match="upstream"):
            backward(model, np.ones((2, 4)), np.ones((2, 2)))

    def test_apply_gradients_steps_in_place(self):
        model = Model(
            spec=ModelSpec(kind="linear", input_dim=2, output_dim=2),
            layers=[DenseLayer(weights=np.ones((2, 2)), biases=np.zeros(2))],
        )
        apply_gradients(model, [(np.full((2, 2), 0.5), np.full(2, 0.25))], step_size=2.0)
        np.testing.assert_array_equal(model.layers[0].weights, np.zeros((2, 2)))
        np.testing.assert_array_equal(model.layers[0].biases, [-0.5, -0.5])


class TestTraining:
    def test_learns_separable_toy(self):
        """Two well-separated clusters: plain gradient descent must reach
        perfect training accuracy and report one accuracy per epoch."""
        rng = np.random.default_rng(42)
        x = np.concatenate([rng.normal(0.2, 0.03, (40, 2)), rng.normal(0.8, 0.03, (40, 2))])
        y = np.concatenate([np.zeros(40, dtype=int), np.ones(40, dtype=int)])
        model = init_model(ModelSpec(kind="linear", input_dim=2, output_dim=2), rng)
        trace = train_classifier(model, x, y, epochs=30, batch_size=16, step_size=0.5, shuffle_rng=rng)
        assert len(trace) == 30
        assert trace[-1] == 1.0

    def test_zero_epochs_leave_model_untouched(self):
        rng = np.random.default_rng(42)
        model = init_model(ModelSpec(kind="linear", input_dim=2, output_dim=2), rng)
        before = model.layers[0].weights.copy()
        trace = train_classifier(
            model, np.ones((4, 2)), np.zeros(4, dtype=int), epochs=0, batch_size=2,
            step_size=0.1, shuffle_rng=rng,
        )
        assert trace == []
        np.testing.assert_array_equal(model.layers[0].weights, before)

    def test_seeded_training_is_reproducible(self):
        rng = np.random.default_rng(42)
        x = rng.uniform(size=(32, 3))
        y = rng.integers(0, 2, size=32)
        runs = []
        for _ in range(2):
            model = init_model(ModelSpec(kind="linear", input_dim=3, output_dim=2), np.random.default_rng(1))
            train_classifier(model, x, y, epochs=3, batch_size=8, step_size=0.1,
                             shuffle_rng=np.random.default_rng(2))
            runs.append(model.layers[0].weights.copy())
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_divergence_raises(self):
        """Absurd inputs and step size overflow the weights; the loop must
        refuse to continue on a non-finite loss."""
        rng = np.random.default_rng(42)
        model = init_model(ModelSpec(kind="linear", input_dim=2, output_dim=2), rng)
        x = np.full((4, 2), 1e200)
        y = np.array([0, 1, 0, 1])
        with pytest.raises(TrainingDivergedError), np.errstate(over="ignore", invalid="ignore"):
            train_classifier(model, x, y, epochs=5, batch_size=4, step_size=1e200, shuffle_rng=rng)


class TestCheckpoints:
    def test_round_trip_is_exact(self, tmp_path):
        rng = np.random.default_rng(42)
        model = init_model(ModelSpec(kind="mlp1", input_dim=5, output_dim=3, hidden_units=4), rng)
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.spec == model.spec
        for mine, theirs in zip(model.layers, loaded.layers, strict=True):
            np.testing.assert_array_equal(mine.weights, theirs.weights)
            np.testing.assert_array_equal(mine.biases, theirs.biases)

    def test_rejects_foreign_payload(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "something-else", "version": 1, "model": {}}')
        with pytest.raises(ValueError, match="format"):
            load_model(path)
