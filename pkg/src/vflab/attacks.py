"""Feature-inference attacks run by the active party against broadcast scores.

The adversary is white-box: it owns the joint model, its own feature
slice, and the released score vector for each queried sample; it never
sees the passive parties' features. Two attacks:

* GIA: per-sample gradient descent on candidate passive features,
  minimizing || softmax(f(x_act, x_hat)) - observed ||^2, clamped to the
  feature box, best result over several random restarts. Accepted
  iterations never increase the loss (step backoff on failure).
* GRN: a conditional generator (one-hidden-layer net over the
  concatenation of the attacker's features and the observed scores) is
  trained to emit passive features whose induced scores match the
  observations, backpropagating through the frozen joint model. Its
  output is unconstrained; chasing unreachable score targets is allowed
  to push reconstructions far outside the box. Updates are clipped by
  global gradient norm so that chase stays numerically stable.

Both attacks are deterministic given their seeds. Reports quantify
reconstruction error against the true passive features, which only the
evaluation harness is allowed to see.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .federation import JointVflModel, joint_input_gradient, joint_logits
from .nn import Model, ModelSpec, backward, forward, init_model, softmax_rows


@dataclass(frozen=True)
class GiaConfig:
    step_size: float = 0.05
    max_iters: int = 2000
    tolerance: float = 1e-10  # stop once the best per-iteration improvement falls below this
    clamp: tuple[float, float] = (0.0, 1.0)
    restarts: int = 5

    def __post_init__(self):
        if not self.step_size > 0.0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tolerance > 0.0:
            raise ValueError("tolerance must be positive")
        if not self.clamp[0] < self.clamp[1]:
            raise ValueError(f"clamp range {self.clamp!r} is empty")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass(frozen=True)
class GrnConfig:
    hidden_units: int = 32
    epochs: int = 200
    batch_size: int = 32
    step_size: float = 0.05
    max_grad_norm: float = 1.0  # global-norm clip on generator updates
    seed: int = 0

    def __post_init__(self):
        if self.hidden_units < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("hidden_units, epochs, batch_size must be positive (epochs may be 0)")
        if not self.step_size > 0.0:
            raise ValueError("step_size must be positive")
        if not self.max_grad_norm > 0.0:
            raise ValueError("max_grad_norm must be positive")


@dataclass
class AttackReport:
    """Reconstructions plus error bookkeeping for one attack run."""

    reconstructed: np.ndarray  # (n, d_target)
    per_sample_sq_err: np.ndarray  # (n,) mean squared error per sample
    mse: float
    iterations: int
    wall_clock_s: float

    def to_dict(self) -> dict:
        return {
            "reconstructed": self.reconstructed.tolist(),
            "per_sample_sq_err": self.per_sample_sq_err.tolist(),
            "mse": self.mse,
            "iterations": self.iterations,
            "wall_clock_s": self.wall_clock_s,
        }


def random_guess_baseline(features: np.ndarray) -> float:
    """MSE of guessing 0.5 for every feature: mean over entries of (x - 0.5)^2.

    Equals 1/12 for Uniform[0, 1] features. Input must live in [0, 1].
    """
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty feature array")
    if np.min(x) < 0.0 or np.max(x) > 1.0:
        raise ValueError("features must lie in [0, 1]")
    return float(np.mean((x - 0.5) ** 2))


def _score_match(
    model: JointVflModel,
    x_act: np.ndarray,
    x_hat: np.ndarray,
    observed: np.ndarray,
    act_cols: np.ndarray,
    pas_cols: np.ndarray,
    need_grad: bool,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-sample loss ||softmax - observed||^2 and, optionally, its gradient
    with respect to the candidate passive features."""
    n = x_hat.shape[0]
    x_full = np.empty((n, model.split.n_features))
    x_full[:, act_cols] = x_act
    x_full[:, pas_cols] = x_hat
    scores = softmax_rows(joint_logits(model, x_full))
    residual = scores - observed
    loss = np.sum(residual * residual, axis=1)
    if not need_grad:
        return loss, None
    d_scores = 2.0 * residual
    # softmax Jacobian-vector product, rowwise
    d_logits = scores * (d_scores - np.sum(d_scores * scores, axis=1, keepdims=True))
    d_full = joint_input_gradient(model, x_full, d_logits)
    return loss, d_full[:, pas_cols]


def gia_attack(
    model: JointVflModel,
    x_act: np.ndarray,
    observed: np.ndarray,
    config: GiaConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, int]:
    """Reconstruct passive features for one batch of observed score vectors.

    ``x_act`` is (n, d_act) (or (d_act,) for one sample) and ``observed``
    is the matching batch of released scores. Per sample: projected
    gradient descent inside the clamp box with per-sample step backoff, so
    the accepted loss sequence never increases; the best restart wins.
    Returns the (n, d_pas) reconstruction and the iteration count.
    """
    single = np.asarray(x_act).ndim == 1
    x_act = np.atleast_2d(np.asarray(x_act, dtype=np.float64))
    observed = np.atleast_2d(np.asarray(observed, dtype=np.float64))
    n = x_act.shape[0]
    if observed.shape[0] != n:
        raise ValueError("x_act and observed disagree on the number of samples")
    act_cols = model.split.active_columns
    pas_cols = model.split.passive_columns
    if x_act.shape[1] != act_cols.size:
        raise ValueError(f"x_act has {x_act.shape[1]} columns, active party holds {act_cols.size}")
    lo, hi = config.clamp

    best_x = np.full((n, pas_cols.size), 0.5 * (lo + hi))
    best_loss = np.full(n, np.inf)
    iterations = 0
    for _ in range(config.restarts):
        x_hat = rng.uniform(lo, hi, (n, pas_cols.size))
        loss, _ = _score_match(model, x_act, x_hat, observed, act_cols, pas_cols, need_grad=False)
        loss = np.where(np.isfinite(loss), loss, np.inf)
        step = np.full(n, config.step_size)
        stalled = 0
        for _ in range(config.max_iters):
            _, grad = _score_match(model, x_act, x_hat, observed, act_cols, pas_cols, need_grad=True)
            candidate = np.clip(x_hat - step[:, None] * grad, lo, hi)
            cand_loss, _ = _score_match(model, x_act, candidate, observed, act_cols, pas_cols, need_grad=False)
            accepted = np.isfinite(cand_loss) & (cand_loss <= loss)
            x_hat = np.where(accepted[:, None], candidate, x_hat)
            improvement = np.where(accepted, loss - cand_loss, 0.0)
            loss = np.where(accepted, cand_loss, loss)
            step = np.where(accepted, step, step * 0.5)  # backoff on a failed step
            iterations += 1
            # a plateau must survive enough backoff halvings to be real
            stalled = stalled + 1 if improvement.max(initial=0.0) < config.tolerance else 0
            if stalled >= 30 or np.all(step < 1e-14):
                break
        better = loss < best_loss
        best_x = np.where(better[:, None], x_hat, best_x)
        best_loss = np.where(better, loss, best_loss)
    return (best_x[0], iterations) if single else (best_x, iterations)


def grn_attack(
    model: JointVflModel,
    fit_inputs: tuple[np.ndarray, np.ndarray],
    eval_inputs: tuple[np.ndarray, np.ndarray, np.ndarray],
    config: GrnConfig,
) -> tuple[Model, AttackReport]:
    """Train the conditional generator and report reconstruction error.

    ``fit_inputs`` is (x_act, observed) over the attacker's query
    collection; ``eval_inputs`` adds the true passive features for the
    held-out rows the report scores against. The generator is returned at
    its best epoch by training objective; a non-finite objective stops
    training early and keeps the best snapshot.
    """
    x_act_fit, observed_fit = (np.asarray(a, dtype=np.float64) for a in fit_inputs)
    x_act_eval, observed_eval, truth_eval = (np.asarray(a, dtype=np.float64) for a in eval_inputs)
    act_cols = model.split.active_columns
    pas_cols = model.split.passive_columns
    n_fit = x_act_fit.shape[0]

    init_ss, shuffle_ss = np.random.SeedSequence(config.seed).spawn(2)
    gen_spec = ModelSpec(
        kind="mlp1",
        input_dim=act_cols.size + model.n_classes,
        output_dim=pas_cols.size,
        hidden_units=config.hidden_units,
    )
    generator = init_model(gen_spec, np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)

    z_fit = np.concatenate([x_act_fit, observed_fit], axis=1)

    def objective() -> float:
        x_hat = forward(generator, z_fit)
        loss, _ = _score_match(model, x_act_fit, x_hat, observed_fit, act_cols, pas_cols, need_grad=False)
        return float(np.mean(loss))

    def snapshot() -> list[tuple[np.ndarray, np.ndarray]]:
        return [(layer.weights.copy(), layer.biases.copy()) for layer in generator.layers]

    best_params = snapshot()
    best_objective = objective()
    epochs_run = 0
    start = time.perf_counter()
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n_fit)
        for begin in range(0, n_fit, config.batch_size):
            idx = order[begin : begin + config.batch_size]
            zb = z_fit[idx]
            x_hat = forward(generator, zb)
            b = idx.size
            x_full = np.empty((b, model.split.n_features))
            x_full[:, act_cols] = x_act_fit[idx]
            x_full[:, pas_cols] = x_hat
            scores = softmax_rows(joint_logits(model, x_full))
            d_scores = 2.0 * (scores - observed_fit[idx]) / b
            d_logits = scores * (d_scores - np.sum(d_scores * scores, axis=1, keepdims=True))
            d_full = joint_input_gradient(model, x_full, d_logits)
            bundle = backward(generator, zb, d_full[:, pas_cols])
            grads = bundle.layer_grads
            total = np.sqrt(sum(np.sum(dw * dw) + np.sum(db * db) for dw, db in grads))
            if total > config.max_grad_norm:
                # unreachable targets make raw gradients arbitrarily large;
                # clipping keeps the chase numerically stable
                scale = config.max_grad_norm / total
                grads = [(dw * scale, db * scale) for dw, db in grads]
            for layer, (d_w, d_b) in zip(generator.layers, grads, strict=True):
                layer.weights -= config.step_size * d_w
                layer.biases -= config.step_size * d_b
        epochs_run += 1
        value = objective()
        if not np.isfinite(value):
            break  # diverged; keep the best snapshot
        if value < best_objective:
            best_objective = value
            best_params = snapshot()

    for layer, (w, b) in zip(generator.layers, best_params, strict=True):
        layer.weights = w
        layer.biases = b

    z_eval = np.concatenate([x_act_eval, observed_eval], axis=1)
    reconstructed = np.atleast_2d(forward(generator, z_eval))
    per_sample = np.mean((reconstructed - truth_eval) ** 2, axis=1)
    report = AttackReport(
        reconstructed=reconstructed,
        per_sample_sq_err=per_sample,
        mse=float(np.mean((reconstructed - truth_eval) ** 2)),
        iterations=epochs_run,
        wall_clock_s=time.perf_counter() - start,
    )
    return generator, report
