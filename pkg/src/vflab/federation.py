"""Single-process vertical federated learning: several parties hold disjoint
feature columns over shared samples, a coordinator aggregates their
per-party outputs, and only defended confidence scores are ever broadcast.

Two aggregation modes:

* ``sum``: every party emits K logits and the coordinator adds them up
  (the logistic-regression configuration). Only the active party's output
  layer carries a trainable bias; a shared bias is the only identifiable
  one under summation, and pinning the passive copies to zero makes the
  joint model parameter-for-parameter equal to its centralized
  counterpart.
* ``concat``: every party emits a small embedding, the coordinator
  concatenates them and applies its own linear head.

The active party (by convention index 0 unless stated otherwise) holds
the labels and plays the white-box adversary in the attack modules. All
randomness flows from explicit seeds; training twice with one seed gives
bitwise-identical parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .defenses import DefenseKind, defend
from .nn import (
    DenseLayer,
    Model,
    ModelSpec,
    TrainingDivergedError,
    _cross_entropy_batch,
    apply_gradients,
    backward,
    forward,
    init_model,
    model_from_dict,
    model_to_dict,
    softmax_rows,
)
from .scores import ConfidenceVector, TransformedScores

__all__ = [
    "AttackStrength",
    "FeatureSplit",
    "JointVflModel",
    "TrainConfig",
    "TrainingDivergedError",
    "VflModelSpec",
    "evaluate_accuracy",
    "infer",
    "joint_input_gradient",
    "joint_logits",
    "load_joint_model",
    "predict_confidences",
    "save_joint_model",
    "secure_channel",
    "split_features",
    "train_vfl",
]


def secure_channel(payload):
    """Boundary where encrypted transport would sit; in-process it is the
    identity. Every cross-party value moves through this seam."""
    return payload


@dataclass(frozen=True)
class AttackStrength:
    """Share of feature columns held by the active (adversarial) party."""

    fraction: float

    def __post_init__(self):
        if not (0.0 < self.fraction < 1.0):
            raise ValueError(f"fraction must lie strictly in (0, 1), got {self.fraction!r}")


@dataclass(frozen=True)
class FeatureSplit:
    """Disjoint per-party column index tuples covering all features."""

    party_slices: tuple[tuple[int, ...], ...]
    active_index: int = 0

    def __post_init__(self):
        if len(self.party_slices) < 2:
            raise ValueError("need at least 2 parties")
        if not (0 <= self.active_index < len(self.party_slices)):
            raise ValueError(f"active_index {self.active_index} out of range")
        slices = tuple(tuple(int(i) for i in s) for s in self.party_slices)
        seen: list[int] = []
        for i, s in enumerate(slices):
            if not s:
                raise ValueError(f"party {i} holds no features")
            seen.extend(s)
        if len(set(seen)) != len(seen):
            raise ValueError("party slices overlap")
        if set(seen) != set(range(len(seen))):
            raise ValueError("party slices must cover features 0..d-1 exactly")
        object.__setattr__(self, "party_slices", slices)

    @property
    def n_parties(self) -> int:
        return len(self.party_slices)

    @property
    def n_features(self) -> int:
        return sum(len(s) for s in self.party_slices)

    @property
    def active_columns(self) -> np.ndarray:
        return np.array(self.party_slices[self.active_index], dtype=np.int64)

    @property
    def passive_columns(self) -> np.ndarray:
        """All columns the adversary does not hold, ascending."""
        cols = [i for p, s in enumerate(self.party_slices) if p != self.active_index for i in s]
        return np.array(sorted(cols), dtype=np.int64)


def split_features(
    d: int,
    n_parties: int,
    strength: AttackStrength,
    seed: int,
    *,
    contiguous: bool = False,
) -> FeatureSplit:
    """Assign floor(strength * d) columns to the active party and divide the
    rest near-evenly among the passive parties.

    Columns are shuffled by ``seed`` first unless ``contiguous`` is set.
    Raises if any party would end up empty.
    """
    if n_parties < 2:
        raise ValueError(f"need at least 2 parties, got {n_parties}")
    if d < n_parties:
        raise ValueError(f"cannot split {d} features across {n_parties} parties")
    n_active = int(strength.fraction * d)
    if n_active < 1:
        raise ValueError(f"strength {strength.fraction} leaves the active party empty for d={d}")
    n_passive_total = d - n_active
    n_passive_parties = n_parties - 1
    if n_passive_total < n_passive_parties:
        raise ValueError(
            f"strength {strength.fraction} leaves {n_passive_total} features for "
            f"{n_passive_parties} passive parties"
        )

    columns = np.arange(d)
    if not contiguous:
        np.random.default_rng(seed).shuffle(columns)
    slices = [tuple(sorted(int(i) for i in columns[:n_active]))]
    base, extra = divmod(n_passive_total, n_passive_parties)
    cursor = n_active
    for p in range(n_passive_parties):
        size = base + (1 if p < extra else 0)
        slices.append(tuple(sorted(int(i) for i in columns[cursor : cursor + size])))
        cursor += size
    return FeatureSplit(party_slices=tuple(slices), active_index=0)


@dataclass(frozen=True)
class VflModelSpec:
    """Joint-model shape: per-party architecture plus the aggregation head.

    ``head='sum'`` adds per-party K-logit outputs; ``head='concat'``
    concatenates per-party embeddings of ``embed_dim`` and applies a
    linear coordinator head.
    """

    party_kind: str = "linear"
    head: str = "sum"
    hidden_units: int = 32
    embed_dim: int = 8

    def __post_init__(self):
        if self.party_kind not in ("linear", "mlp1"):
            raise ValueError(f"party_kind must be 'linear' or 'mlp1', got {self.party_kind!r}")
        if self.head not in ("sum", "concat"):
            raise ValueError(f"head must be 'sum' or 'concat', got {self.head!r}")
        if self.hidden_units < 1 or self.embed_dim < 1:
            raise ValueError("hidden_units and embed_dim must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    step_size: float = 0.3

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.step_size > 0.0:
            raise ValueError("step_size must be positive")


@dataclass
class JointVflModel:
    split: FeatureSplit
    spec: VflModelSpec
    parties: list[Model]
    head: DenseLayer | None  # None exactly when spec.head == 'sum'
    n_classes: int


def build_joint_model(
    split: FeatureSplit, spec: VflModelSpec, n_classes: int, rng: np.random.Generator
) -> JointVflModel:
    """Seeded joint-model init; sum mode zeroes passive output biases."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    out_dim = n_classes if spec.head == "sum" else spec.embed_dim
    parties = []
    if spec.head == "sum" and spec.party_kind == "linear":
        # Summed linear blocks compose one effective map over the joint
        # feature space, so initialize that map once and slice it per
        # party; the trained function is then independent of how the
        # passive columns are partitioned.
        bound = 1.0 / np.sqrt(split.n_features)
        joint_w = rng.uniform(-bound, bound, (n_classes, split.n_features))
        joint_b = rng.uniform(-bound, bound, n_classes)
        for p, cols in enumerate(split.party_slices):
            party_spec = ModelSpec(kind="linear", input_dim=len(cols), output_dim=n_classes)
            biases = joint_b.copy() if p == split.active_index else np.zeros(n_classes)
            layer = DenseLayer(weights=joint_w[:, cols].copy(), biases=biases)
            parties.append(Model(spec=party_spec, layers=[layer]))
        return JointVflModel(split=split, spec=spec, parties=parties, head=None, n_classes=n_classes)
    for cols in split.party_slices:
        party_spec = ModelSpec(
            kind=spec.party_kind,
            input_dim=len(cols),
            output_dim=out_dim,
            hidden_units=spec.hidden_units if spec.party_kind == "mlp1" else None,
        )
        parties.append(init_model(party_spec, rng))
    head = None
    if spec.head == "concat":
        total = spec.embed_dim * split.n_parties
        bound = 1.0 / np.sqrt(total)
        head = DenseLayer(
            weights=rng.uniform(-bound, bound, (n_classes, total)),
            biases=rng.uniform(-bound, bound, n_classes),
        )
    else:
        # one shared bias is identifiable under logit summation; the
        # active party keeps it, passive copies stay pinned at zero
        for p, model in enumerate(parties):
            if p != split.active_index:
                model.layers[-1].biases[:] = 0.0
    return JointVflModel(split=split, spec=spec, parties=parties, head=head, n_classes=n_classes)


def joint_logits(model: JointVflModel, x: np.ndarray) -> np.ndarray:
    """Coordinator-side logits for full feature rows (n, d) or one row (d,)."""
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    outputs = [
        secure_channel(forward(party, xb[:, cols]))
        for party, cols in zip(model.parties, model.split.party_slices)
    ]
    if model.spec.head == "sum":
        logits = np.sum(outputs, axis=0)
    else:
        logits = np.concatenate(outputs, axis=1) @ model.head.weights.T + model.head.biases
    return logits[0] if np.asarray(x).ndim == 1 else logits


def joint_input_gradient(model: JointVflModel, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """d(upstream . logits)/dx, per sample, assembled across parties."""
    xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
    ub = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    grad = np.zeros_like(xb)
    if model.spec.head == "sum":
        per_party = [ub] * model.split.n_parties
    else:
        d_embed = ub @ model.head.weights
        width = model.spec.embed_dim
        per_party = [d_embed[:, p * width : (p + 1) * width] for p in range(model.split.n_parties)]
    for party, cols, up in zip(model.parties, model.split.party_slices, per_party):
        grad[:, cols] = backward(party, xb[:, cols], secure_channel(up)).input_grad
    return grad[0] if np.asarray(x).ndim == 1 else grad


def train_vfl(
    dataset: Dataset,
    split: FeatureSplit,
    spec: VflModelSpec,
    config: TrainConfig,
    seed: int,
) -> tuple[JointVflModel, list[float]]:
    """Mini-batch gradient descent over all parties (and head) jointly.

    Seed discipline: ``SeedSequence(seed)`` spawns the init stream and the
    batch-shuffle stream, in that order. Returns the trained model and the
    per-epoch training-accuracy trace; zero epochs return the initial
    model unchanged. Raises TrainingDivergedError on a non-finite loss.
    """
    if split.n_features != dataset.n_features:
        raise ValueError(f"split covers {split.n_features} features, dataset has {dataset.n_features}")
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    model = build_joint_model(split, spec, dataset.n_classes, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)

    x_train, y_train = dataset.split("train")
    n = x_train.shape[0]
    active = split.active_index
    trace: list[float] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            parts = [xb[:, cols] for cols in split.party_slices]

            outputs = [secure_channel(forward(party, part)) for party, part in zip(model.parties, parts)]
            if model.spec.head == "sum":
                logits = np.sum(outputs, axis=0)
            else:
                embeddings = np.concatenate(outputs, axis=1)
                logits = embeddings @ model.head.weights.T + model.head.biases

            probs = softmax_rows(logits)
            loss, d_logits = _cross_entropy_batch(probs, yb)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")

            if model.spec.head == "sum":
                per_party = [d_logits] * split.n_parties
            else:
                d_embed = d_logits @ model.head.weights
                width = spec.embed_dim
                per_party = [d_embed[:, p * width : (p + 1) * width] for p in range(split.n_parties)]
                model.head.weights -= config.step_size * (d_logits.T @ embeddings)
                model.head.biases -= config.step_size * d_logits.sum(axis=0)

            for p, (party, part, up) in enumerate(zip(model.parties, parts, per_party)):
                bundle = backward(party, part, secure_channel(up))
                grads = bundle.layer_grads
                if model.spec.head == "sum" and p != active:
                    # keep the passive output-bias copies pinned at zero
                    d_w, _ = grads[-1]
                    grads = grads[:-1] + [(d_w, np.zeros_like(party.layers[-1].biases))]
                apply_gradients(party, grads, config.step_size)

        preds = np.argmax(joint_logits(model, x_train), axis=1)
        trace.append(float(np.mean(preds == y_train)))
    return model, trace


def predict_confidences(model: JointVflModel, x: np.ndarray) -> np.ndarray:
    """Undefended softmax confidences, one row per sample."""
    return softmax_rows(np.atleast_2d(joint_logits(model, x)))


def infer(
    model: JointVflModel,
    x_parts: list[np.ndarray],
    defense: DefenseKind,
    rng: np.random.Generator | None = None,
    *,
    midpoint: bool = False,
) -> TransformedScores:
    """One defended inference: per-party forwards, aggregation, softmax,
    defense. The defended release is the only value that leaves."""
    if len(x_parts) != model.split.n_parties:
        raise ValueError(f"expected {model.split.n_parties} feature slices, got {len(x_parts)}")
    x_full = np.empty(model.split.n_features)
    for cols, part in zip(model.split.party_slices, x_parts):
        part = np.asarray(part, dtype=np.float64)
        if part.shape != (len(cols),):
            raise ValueError(f"slice shape {part.shape} does not match {len(cols)} columns")
        x_full[list(cols)] = part
    logits = joint_logits(model, x_full)
    confidence = ConfidenceVector(softmax_rows(logits))
    return defend(confidence, defense, rng, midpoint=midpoint)


def evaluate_accuracy(
    model: JointVflModel,
    dataset: Dataset,
    split_name: str,
    defense: DefenseKind,
    rng: np.random.Generator | None = None,
) -> float:
    """Fraction of split rows whose defended-score argmax equals the label."""
    x, y = dataset.split(split_name)
    confidences = predict_confidences(model, x)
    hits = 0
    for row, label in zip(confidences, y):
        released = defend(ConfidenceVector(row), defense, rng)
        hits += int(np.argmax(released.values) == label)
    return hits / len(y)


# --- checkpoints --------------------------------------------------------------

JOINT_FORMAT = "vflab-joint-model"
JOINT_FORMAT_VERSION = 1


def save_joint_model(model: JointVflModel, path: str | Path) -> None:
    doc = {
        "format": JOINT_FORMAT,
        "version": JOINT_FORMAT_VERSION,
        "split": {
            "party_slices": [list(s) for s in model.split.party_slices],
            "active_index": model.split.active_index,
        },
        "spec": {
            "party_kind": model.spec.party_kind,
            "head": model.spec.head,
            "hidden_units": model.spec.hidden_units,
            "embed_dim": model.spec.embed_dim,
        },
        "n_classes": model.n_classes,
        "parties": [model_to_dict(party) for party in model.parties],
        "head_layer": None
        if model.head is None
        else {"weights": model.head.weights.tolist(), "biases": model.head.biases.tolist()},
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_joint_model(path: str | Path) -> JointVflModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != JOINT_FORMAT or doc.get("version") != JOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format: {doc.get('format')!r} v{doc.get('version')!r}")
    split = FeatureSplit(
        party_slices=tuple(tuple(s) for s in doc["split"]["party_slices"]),
        active_index=doc["split"]["active_index"],
    )
    spec = VflModelSpec(**doc["spec"])
    parties = [model_from_dict(entry) for entry in doc["parties"]]
    head = None
    if doc["head_layer"] is not None:
        head = DenseLayer(
            weights=np.array(doc["head_layer"]["weights"]),
            biases=np.array(doc["head_layer"]["biases"]),
        )
    return JointVflModel(split=split, spec=spec, parties=parties, head=head, n_classes=doc["n_classes"])
