"""Measurement harness: paired-arm attack experiments, ablation grids over
noise budgets and party counts, and defense-latency benchmarks.

Every experiment runs its attack twice on one trained model: once against
undefended scores and once against the configured defense, with identical
sample selections and attack seeds, so any difference in reconstruction
error is attributable to the defense alone. Utility cost is the exact
accuracy difference between the arms; records with |delta| > 0.01 are
flagged, never dropped.

Outputs: one JSON document per experiment, plus aggregate CSVs (one row
per record) for the sweep tables and latency charts.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .attacks import AttackReport, GiaConfig, GrnConfig, gia_attack, grn_attack, random_guess_baseline
from .data import Dataset, load_csv, make_synthetic
from .defenses import (
    DefenseKind,
    GaussianDp,
    MonotoneEncode,
    NoDefense,
    PriveeDp,
    PriveeDpPlusPlus,
    PrivacyBudget,
    Round,
    defend,
)
from .federation import (
    AttackStrength,
    JointVflModel,
    TrainConfig,
    VflModelSpec,
    evaluate_accuracy,
    predict_confidences,
    split_features,
    train_vfl,
)
from .scores import ConfidenceVector, TransformKind

ACCURACY_BUDGET = 0.01


class ConfigError(ValueError):
    """Raised for invalid experiment configuration."""


def reconstruction_mse(truth: np.ndarray, estimate: np.ndarray) -> float:
    """Mean squared error over all samples and feature dims: (1/(n d)) sum (x_hat - x)^2."""
    truth = np.atleast_2d(np.asarray(truth, dtype=np.float64))
    estimate = np.atleast_2d(np.asarray(estimate, dtype=np.float64))
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch: truth {truth.shape} vs estimate {estimate.shape}")
    if truth.size == 0:
        raise ValueError("empty arrays")
    return float(np.mean((estimate - truth) ** 2))


# --- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class DataParams:
    kind: str = "synthetic"  # "synthetic" | "csv"
    csv_path: str | None = None
    classes: int = 8
    dims: int = 8
    samples: int = 480
    margin: float = 0.35
    spread: float = 0.10
    test_fraction: float = 0.25


@dataclass(frozen=True)
class ModelParams:
    party_kind: str = "linear"
    head: str = "sum"
    hidden_units: int = 32
    embed_dim: int = 8


@dataclass(frozen=True)
class DefenseParams:
    name: str = "privee_dp"  # none | privee_dp | privee_dppp | round | gaussian_dp | monotone
    epsilon: float = 0.1
    delta: float = 1e-5
    sensitivity: float = 1.0
    eps_min: float = 0.1
    eps_max: float = 1.0
    digits: int = 3
    key: int = 0x5EED
    transform: str = "reflection"  # identity | reflection


@dataclass(frozen=True)
class AttackParams:
    name: str = "gia"  # gia | grn
    gia_step: float = 0.05
    gia_iters: int = 2000
    gia_restarts: int = 5
    gia_tolerance: float = 1e-10
    grn_hidden: int = 32
    grn_epochs: int = 150
    grn_batch: int = 32
    grn_step: float = 0.05
    grn_clip: float = 1.0
    fit_samples: int = 256
    eval_samples: int = 48


@dataclass(frozen=True)
class TrainParams:
    epochs: int = 40
    batch_size: int = 32
    step_size: float = 0.3


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    data: DataParams = field(default_factory=DataParams)
    model: ModelParams = field(default_factory=ModelParams)
    defense: DefenseParams = field(default_factory=DefenseParams)
    attack: AttackParams = field(default_factory=AttackParams)
    train: TrainParams = field(default_factory=TrainParams)
    n_parties: int = 2
    strength: float = 0.5
    out: str | None = None


def ablation_config(seed: int) -> ExperimentConfig:
    """Default configuration for budget/party-count sweeps: a wider feature
    space (so ten parties still get non-empty slices) and the generator attack."""
    return ExperimentConfig(
        seed=seed,
        data=DataParams(dims=20, samples=640),
        attack=AttackParams(name="grn"),
    )


def make_defense(params: DefenseParams) -> DefenseKind:
    """Instantiate the defense a config names; raises ConfigError on bad names."""
    try:
        transform = TransformKind(params.transform)
    except ValueError as exc:
        raise ConfigError(f"unknown transform {params.transform!r}") from exc
    try:
        if params.name == "none":
            return NoDefense()
        if params.name == "privee_dp":
            return PriveeDp(
                budget=PrivacyBudget(params.epsilon, params.delta, params.sensitivity),
                transform=transform,
            )
        if params.name == "privee_dppp":
            return PriveeDpPlusPlus(
                eps_min=params.eps_min,
                eps_max=params.eps_max,
                delta=params.delta,
                sensitivity=params.sensitivity,
                transform=transform,
            )
        if params.name == "round":
            return Round(digits=params.digits)
        if params.name == "gaussian_dp":
            return GaussianDp(budget=PrivacyBudget(params.epsilon, params.delta, params.sensitivity))
        if params.name == "monotone":
            return MonotoneEncode(key=params.key)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown defense {params.name!r}")


def make_dataset(config: ExperimentConfig) -> Dataset:
    p = config.data
    if p.kind == "synthetic":
        return make_synthetic(
            p.classes, p.dims, p.samples, p.margin, config.seed,
            spread=p.spread, test_fraction=p.test_fraction,
        )
    if p.kind == "csv":
        if not p.csv_path:
            raise ConfigError("csv dataset needs csv_path")
        return load_csv(p.csv_path, test_fraction=p.test_fraction, seed=config.seed)
    raise ConfigError(f"unknown dataset kind {p.kind!r}")


# --- records -------------------------------------------------------------------


@dataclass
class ExperimentRecord:
    mse_no_defense: float
    mse_with_defense: float
    accuracy_no_defense: float
    accuracy_with_defense: float
    delta_accuracy: float
    defense_wall_clock_s: float
    accuracy_budget_exceeded: bool
    metadata: dict

    def __post_init__(self):
        expected = self.accuracy_with_defense - self.accuracy_no_defense
        if self.delta_accuracy != expected:
            raise ValueError(
                f"delta_accuracy {self.delta_accuracy!r} is not exactly "
                f"accuracy_with_defense - accuracy_no_defense = {expected!r}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(payload: dict) -> "ExperimentRecord":
        return ExperimentRecord(**payload)


def write_record(record: ExperimentRecord, path: str | Path) -> None:
    Path(path).write_text(json.dumps(record.to_dict(), indent=1))


def read_record(path: str | Path) -> ExperimentRecord:
    return ExperimentRecord.from_dict(json.loads(Path(path).read_text()))


RECORD_CSV_COLUMNS = [
    "epsilon",
    "n_parties",
    "strength",
    "defense",
    "attack",
    "seed",
    "mse_no_defense",
    "mse_with_defense",
    "accuracy_no_defense",
    "accuracy_with_defense",
    "delta_accuracy",
    "defense_wall_clock_s",
    "accuracy_budget_exceeded",
]


def records_to_csv(records: list[ExperimentRecord], path: str | Path) -> None:
    """Aggregate CSV, one row per record, written once after all runs finish."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_CSV_COLUMNS)
        for record in records:
            meta = record.metadata
            writer.writerow(
                [
                    meta.get("config", {}).get("defense", {}).get("epsilon"),
                    meta.get("config", {}).get("n_parties"),
                    meta.get("config", {}).get("strength"),
                    meta.get("config", {}).get("defense", {}).get("name"),
                    meta.get("config", {}).get("attack", {}).get("name"),
                    meta.get("config", {}).get("seed"),
                    repr(record.mse_no_defense),
                    repr(record.mse_with_defense),
                    repr(record.accuracy_no_defense),
                    repr(record.accuracy_with_defense),
                    repr(record.delta_accuracy),
                    repr(record.defense_wall_clock_s),
                    record.accuracy_budget_exceeded,
                ]
            )


# --- experiment ----------------------------------------------------------------


def _observed_scores(
    model: JointVflModel,
    rows: np.ndarray,
    defense: DefenseKind,
    rng: np.random.Generator,
) -> np.ndarray:
    """Defended releases for a batch of full feature rows, one per row."""
    confidences = predict_confidences(model, rows)
    return np.stack([defend(ConfidenceVector(c), defense, rng).values for c in confidences])


def _run_attack_arm(
    model: JointVflModel,
    dataset: Dataset,
    defense: DefenseKind,
    config: ExperimentConfig,
    attack_seed: int,
    defense_seed: int,
) -> AttackReport:
    """One attack under one defense; seeds shared across arms except the
    defense stream, which only the defended arm consumes."""
    a = config.attack
    x_test, _ = dataset.split("test")
    x_train, _ = dataset.split("train")
    eval_rows = x_test[: min(a.eval_samples, x_test.shape[0])]
    defense_rng = np.random.default_rng(defense_seed)
    act_cols = model.split.active_columns
    pas_cols = model.split.passive_columns

    if a.name == "gia":
        observed = _observed_scores(model, eval_rows, defense, defense_rng)
        gia_cfg = GiaConfig(
            step_size=a.gia_step, max_iters=a.gia_iters,
            tolerance=a.gia_tolerance, restarts=a.gia_restarts,
        )
        start = time.perf_counter()
        reconstructed, iters = gia_attack(
            model, eval_rows[:, act_cols], observed, gia_cfg, np.random.default_rng(attack_seed)
        )
        truth = eval_rows[:, pas_cols]
        per_sample = np.mean((reconstructed - truth) ** 2, axis=1)
        return AttackReport(
            reconstructed=reconstructed,
            per_sample_sq_err=per_sample,
            mse=reconstruction_mse(truth, reconstructed),
            iterations=iters,
            wall_clock_s=time.perf_counter() - start,
        )
    if a.name == "grn":
        fit_rows = x_train[: min(a.fit_samples, x_train.shape[0])]
        observed_fit = _observed_scores(model, fit_rows, defense, defense_rng)
        observed_eval = _observed_scores(model, eval_rows, defense, defense_rng)
        grn_cfg = GrnConfig(
            hidden_units=a.grn_hidden, epochs=a.grn_epochs,
            batch_size=a.grn_batch, step_size=a.grn_step,
            max_grad_norm=a.grn_clip, seed=attack_seed,
        )
        _, report = grn_attack(
            model,
            (fit_rows[:, act_cols], observed_fit),
            (eval_rows[:, act_cols], observed_eval, eval_rows[:, pas_cols]),
            grn_cfg,
        )
        return report
    raise ConfigError(f"unknown attack {a.name!r}")


def _defense_latency(
    model: JointVflModel, dataset: Dataset, defense: DefenseKind, config: ExperimentConfig, seed: int
) -> float:
    """Mean seconds per defend() call over the experiment's eval queries."""
    x_test, _ = dataset.split("test")
    rows = x_test[: min(config.attack.eval_samples, x_test.shape[0])]
    confidences = [ConfidenceVector(c) for c in predict_confidences(model, rows)]
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    for c in confidences:
        defend(c, defense, rng)
    return (time.perf_counter() - start) / len(confidences)


def run_experiment(config: ExperimentConfig) -> ExperimentRecord:
    """Train once, attack under both arms, and assemble the record.

    Arm discipline: the dataset, the feature split, the trained model, the
    evaluated rows, and the attack seed are identical across arms; only
    the defense applied to the broadcast scores differs.
    """
    if not 0.0 < config.strength < 1.0:
        raise ConfigError(f"strength must lie in (0, 1), got {config.strength}")
    if config.n_parties < 2:
        raise ConfigError(f"n_parties must be >= 2, got {config.n_parties}")
    defense = make_defense(config.defense)

    seed_seq = np.random.SeedSequence(config.seed)
    split_ss, train_ss, attack_ss, def_none_ss, def_arm_ss, acc_ss, lat_ss = seed_seq.spawn(7)
    attack_seed = int(attack_ss.generate_state(1)[0])

    dataset = make_dataset(config)
    split = split_features(
        dataset.n_features,
        config.n_parties,
        AttackStrength(config.strength),
        int(split_ss.generate_state(1)[0]),
    )
    spec = VflModelSpec(
        party_kind=config.model.party_kind,
        head=config.model.head,
        hidden_units=config.model.hidden_units,
        embed_dim=config.model.embed_dim,
    )
    train_cfg = TrainConfig(
        epochs=config.train.epochs, batch_size=config.train.batch_size, step_size=config.train.step_size
    )
    model, _ = train_vfl(dataset, split, spec, train_cfg, int(train_ss.generate_state(1)[0]))

    report_none = _run_attack_arm(
        model, dataset, NoDefense(), config, attack_seed, int(def_none_ss.generate_state(1)[0])
    )
    report_defended = _run_attack_arm(
        model, dataset, defense, config, attack_seed, int(def_arm_ss.generate_state(1)[0])
    )

    acc_seeds = acc_ss.generate_state(2)
    acc_none = evaluate_accuracy(model, dataset, "test", NoDefense(), np.random.default_rng(int(acc_seeds[0])))
    acc_defended = evaluate_accuracy(model, dataset, "test", defense, np.random.default_rng(int(acc_seeds[1])))
    latency = _defense_latency(model, dataset, defense, config, int(lat_ss.generate_state(1)[0]))

    delta = acc_defended - acc_none
    x_test, _ = dataset.split("test")
    pas_cols = model.split.passive_columns
    eval_rows = x_test[: min(config.attack.eval_samples, x_test.shape[0])]
    record = ExperimentRecord(
        mse_no_defense=report_none.mse,
        mse_with_defense=report_defended.mse,
        accuracy_no_defense=acc_none,
        accuracy_with_defense=acc_defended,
        delta_accuracy=delta,
        defense_wall_clock_s=latency,
        accuracy_budget_exceeded=abs(delta) > ACCURACY_BUDGET,
        metadata={
            "config": asdict(config),
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "random_guess_baseline": random_guess_baseline(eval_rows[:, pas_cols]),
            "attack_iterations": {
                "no_defense": report_none.iterations,
                "with_defense": report_defended.iterations,
            },
        },
    )
    if config.out:
        write_record(record, config.out)
    return record


# --- ablation grid -------------------------------------------------------------


def ablate(
    base: ExperimentConfig,
    epsilons: list[float],
    client_counts: list[int],
    out_csv: str | Path | None = None,
    max_workers: int | None = None,
) -> list[ExperimentRecord]:
    """Run the epsilon x client-count grid; every cell shares the base seed.

    Cells are independent jobs (each with its own random streams derived
    from the shared seed) and run concurrently; the CSV is written by this
    single caller after all cells complete. Row order follows the grid:
    epsilons outer, client counts inner.
    """
    if not epsilons or not client_counts:
        raise ConfigError("ablate needs at least one epsilon and one client count")
    cells = [
        replace(
            base,
            defense=replace(base.defense, epsilon=eps),
            n_parties=clients,
            out=None,
        )
        for eps in epsilons
        for clients in client_counts
    ]
    with ThreadPoolExecutor(max_workers=max_workers or min(8, len(cells))) as pool:
        records = list(pool.map(run_experiment, cells))
    if out_csv is not None:
        records_to_csv(records, out_csv)
    return records


# --- latency bench -------------------------------------------------------------


@dataclass(frozen=True)
class BenchPoint:
    kind: str
    k: int
    mean_s: float
    p95_s: float

    def __post_init__(self):
        if self.mean_s <= 0.0 or self.p95_s <= 0.0:
            raise ValueError("latencies must be positive")


DEFENSE_NAMES = ("none", "privee_dp", "privee_dppp", "round", "gaussian_dp", "monotone")


def bench_defense_scaling(
    kinds: list[str],
    class_counts: list[int],
    calls: int = 1000,
    seed: int = 0,
    out_csv: str | Path | None = None,
    warmup: int = 50,
) -> list[BenchPoint]:
    """Per-call defend() latency on random simplex vectors, outside any
    training loop: ``calls`` timed calls per (kind, K) after ``warmup``
    untimed ones, monotonic clock, mean and 95th percentile."""
    if calls < 1000:
        raise ConfigError(f"need at least 1000 timed calls for stable stats, got {calls}")
    points = []
    for name in kinds:
        defense = make_defense(DefenseParams(name=name))
        for k in class_counts:
            rng = np.random.default_rng(seed)
            vectors = [ConfidenceVector(rng.dirichlet(np.ones(k))) for _ in range(256)]
            noise_rng = np.random.default_rng(seed + 1)
            for i in range(warmup):
                defend(vectors[i % len(vectors)], defense, noise_rng)
            samples = np.empty(calls)
            for i in range(calls):
                vec = vectors[i % len(vectors)]
                t0 = time.perf_counter()
                defend(vec, defense, noise_rng)
                samples[i] = time.perf_counter() - t0
            points.append(
                BenchPoint(
                    kind=name,
                    k=k,
                    mean_s=float(np.mean(samples)),
                    p95_s=float(np.percentile(samples, 95)),
                )
            )
    if out_csv is not None:
        with Path(out_csv).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "k", "mean_s", "p95_s"])
            for point in points:
                writer.writerow([point.kind, point.k, repr(point.mean_s), repr(point.p95_s)])
    return points


def latency_slope(points: list[BenchPoint]) -> float:
    """Least-squares slope of log10(mean latency) against log10(K)."""
    if len(points) < 2:
        raise ValueError("need at least two points for a slope")
    x = np.log10([p.k for p in points])
    y = np.log10([p.mean_s for p in points])
    return float(np.polyfit(x, y, 1)[0])


# --- plots ---------------------------------------------------------------------


def plot_bench(points: list[BenchPoint], path: str | Path) -> None:
    """Static log-log latency chart, one line per defense kind."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted({p.kind for p in points}):
        own = [p for p in points if p.kind == name]
        ax.loglog([p.k for p in own], [p.mean_s for p in own], marker="o", label=name)
    ax.set_xlabel("classes K")
    ax.set_ylabel("mean defend() seconds")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_ablation(records: list[ExperimentRecord], path: str | Path) -> None:
    """Static chart of defended/undefended MSE against the epsilon knob."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    eps = [r.metadata["config"]["defense"]["epsilon"] for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogx(eps, [r.mse_with_defense for r in records], marker="o", label="defended")
    ax.semilogx(eps, [r.mse_no_defense for r in records], marker="s", label="undefended")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("reconstruction MSE")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
