"""Minimal dense-network kernel: explicit forward passes and hand-derived
gradients on numpy arrays.

Two architectures cover every model in this package: a bare linear map
W x + b, and a one-hidden-layer ReLU net W2 relu(W1 x + b1) + b2. Keeping
the math in plain numpy keeps runs bitwise reproducible from a seed and
makes every gradient directly checkable against finite differences.

Functions accept a single sample (d,) or a batch (n, d); parameter
gradients are summed over the batch, input gradients stay per-sample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .scores import ConfidenceVector

MODEL_FORMAT = "vflab-model"
MODEL_FORMAT_VERSION = 1

LOG_FLOOR = 1e-12


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ValueError(
                f"biases shape {self.biases.shape} does not match {self.weights.shape[0]} outputs"
            )


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description: kind 'linear' or 'mlp1' (one hidden ReLU layer)."""

    kind: str
    input_dim: int
    output_dim: int
    hidden_units: int | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "mlp1"):
            raise ValueError(f"kind must be 'linear' or 'mlp1', got {self.kind!r}")
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if self.kind == "mlp1" and (self.hidden_units is None or self.hidden_units < 1):
            raise ValueError("mlp1 requires hidden_units >= 1")
        if self.kind == "linear" and self.hidden_units is not None:
            raise ValueError("linear models take no hidden_units")


@dataclass
class Model:
    spec: ModelSpec
    layers: list[DenseLayer] = field(default_factory=list)


@dataclass
class GradientBundle:
    """Parameter gradients (one (dW, db) per layer, batch-summed) plus the
    gradient with respect to the input (same leading shape as the input)."""

    layer_grads: list[tuple[np.ndarray, np.ndarray]]
    input_grad: np.ndarray


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> DenseLayer:
    bound = 1.0 / np.sqrt(fan_in)
    return DenseLayer(
        weights=rng.uniform(-bound, bound, (fan_out, fan_in)),
        biases=rng.uniform(-bound, bound, fan_out),
    )


def init_model(spec: ModelSpec, rng: np.random.Generator) -> Model:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    if spec.kind == "linear":
        layers = [_init_layer(rng, spec.input_dim, spec.output_dim)]
    else:
        layers = [
            _init_layer(rng, spec.input_dim, spec.hidden_units),
            _init_layer(rng, spec.hidden_units, spec.output_dim),
        ]
    return Model(spec=spec, layers=layers)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"input must be 1-D or 2-D, got shape {x.shape}")


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Logits for ``x``: (K,) for a single sample, (n, K) for a batch."""
    xb, single = _as_batch(x)
    if xb.shape[1] != model.spec.input_dim:
        raise ValueError(f"expected {model.spec.input_dim} input features, got {xb.shape[1]}")
    if model.spec.kind == "linear":
        (layer,) = model.layers
        out = xb @ layer.weights.T + layer.biases
    else:
        l1, l2 = model.layers
        hidden = np.maximum(xb @ l1.weights.T + l1.biases, 0.0)
        out = hidden @ l2.weights.T + l2.biases
    return out[0] if single else out


def backward(model: Model, x: np.ndarray, upstream: np.ndarray) -> GradientBundle:
    """Backpropagate ``upstream`` (dLoss/dlogits) through the model at ``x``."""
    xb, single = _as_batch(x)
    ub, _ = _as_batch(upstream)
    if ub.shape != (xb.shape[0], model.spec.output_dim):
        raise ValueError(f"upstream shape {np.asarray(upstream).shape} does not match outputs")
    if model.spec.kind == "linear":
        (layer,) = model.layers
        d_w = ub.T @ xb
        d_b = ub.sum(axis=0)
        d_x = ub @ layer.weights
        grads = [(d_w, d_b)]
    else:
        l1, l2 = model.layers
        pre = xb @ l1.weights.T + l1.biases
        hidden = np.maximum(pre, 0.0)
        d_w2 = ub.T @ hidden
        d_b2 = ub.sum(axis=0)
        d_hidden = ub @ l2.weights
        d_pre = d_hidden * (pre > 0.0)
        d_w1 = d_pre.T @ xb
        d_b1 = d_pre.sum(axis=0)
        d_x = d_pre @ l1.weights
        grads = [(d_w1, d_b1), (d_w2, d_b2)]
    return GradientBundle(layer_grads=grads, input_grad=d_x[0] if single else d_x)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; safe for large logits."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits: np.ndarray) -> ConfidenceVector:
    """Softmax of one logit vector as a validated confidence vector."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"logits must be 1-D, got shape {z.shape}")
    return ConfidenceVector(softmax_rows(z))


def cross_entropy_with_grad(probs: ConfidenceVector, label: int) -> tuple[float, np.ndarray]:
    """Loss -ln p_label (probability floored at 1e-12) and its gradient with
    respect to the logits that produced ``probs``, which is probs - onehot."""
    if not (0 <= label < probs.k):
        raise ValueError(f"label {label} out of range for K={probs.k}")
    loss = -float(np.log(max(probs.values[label], LOG_FLOOR)))
    grad = probs.values.copy()
    grad[label] -= 1.0
    return loss, grad


def _cross_entropy_batch(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean loss over a batch and dLoss/dlogits already divided by the batch size."""
    n = probs.shape[0]
    picked = np.clip(probs[np.arange(n), labels], LOG_FLOOR, None)
    loss = -float(np.mean(np.log(picked)))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def apply_gradients(model: Model, grads: list[tuple[np.ndarray, np.ndarray]], step_size: float) -> None:
    """In-place gradient step; the caller owns any batch-size scaling."""
    for layer, (d_w, d_b) in zip(model.layers, grads, strict=True):
        layer.weights -= step_size * d_w
        layer.biases -= step_size * d_b


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss stops being finite."""


def train_classifier(
    model: Model,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int,
    batch_size: int,
    step_size: float,
    shuffle_rng: np.random.Generator,
) -> list[float]:
    """Plain mini-batch gradient descent on softmax cross-entropy.

    Mutates ``model`` in place and returns the per-epoch training accuracy.
    Zero epochs leave the model untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    trace: list[float] = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            probs = softmax_rows(forward(model, x[idx]))
            loss, d_logits = _cross_entropy_batch(probs, y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            bundle = backward(model, x[idx], d_logits)
            apply_gradients(model, bundle.layer_grads, step_size)
        preds = np.argmax(forward(model, x), axis=1)
        trace.append(float(np.mean(preds == y)))
    return trace


# --- checkpoints --------------------------------------------------------------


def model_to_dict(model: Model) -> dict:
    spec = model.spec
    return {
        "kind": spec.kind,
        "input_dim": spec.input_dim,
        "output_dim": spec.output_dim,
        "hidden_units": spec.hidden_units,
        "layers": [
            {"weights": layer.weights.tolist(), "biases": layer.biases.tolist()}
            for layer in model.layers
        ],
    }


def model_from_dict(payload: dict) -> Model:
    spec = ModelSpec(
        kind=payload["kind"],
        input_dim=payload["input_dim"],
        output_dim=payload["output_dim"],
        hidden_units=payload["hidden_units"],
    )
    layers = [
        DenseLayer(weights=np.array(entry["weights"]), biases=np.array(entry["biases"]))
        for entry in payload["layers"]
    ]
    return Model(spec=spec, layers=layers)


def save_model(model: Model, path: str | Path) -> None:
    """Versioned textual checkpoint; float64 values round-trip exactly."""
    doc = {"format": MODEL_FORMAT, "version": MODEL_FORMAT_VERSION, "model": model_to_dict(model)}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_model(path: str | Path) -> Model:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format: {doc.get('format')!r} v{doc.get('version')!r}")
    return model_from_dict(doc["model"])
