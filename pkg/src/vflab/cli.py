"""Command-line entry point.

Subcommands: train (fit and checkpoint a joint model), attack (one
paired-arm experiment), bench (defense latency scaling), ablate
(epsilon x client-count grid), report (aggregate record JSONs to CSV).

Configuration comes from an optional JSON file (nested keys mirroring the
config dataclasses) plus flags; a flag always wins over the file. Exit
codes: 0 success, 2 configuration error, 3 training failure, 4 I/O
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .data import DataFormatError
from .federation import TrainConfig, TrainingDivergedError, AttackStrength, split_features, train_vfl, save_joint_model, VflModelSpec
from .harness import (
    AttackParams,
    ConfigError,
    DataParams,
    DefenseParams,
    ExperimentConfig,
    ModelParams,
    TrainParams,
    ablate,
    bench_defense_scaling,
    make_dataset,
    plot_ablation,
    plot_bench,
    read_record,
    records_to_csv,
    run_experiment,
    write_record,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_IO = 4


def _add_config_flags(parser: argparse.ArgumentParser, *, require_seed: bool) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON config file (flags override it)")
    parser.add_argument("--seed", type=int, required=require_seed, default=None)
    parser.add_argument("--out", type=Path, default=None)

    data = parser.add_argument_group("dataset")
    data.add_argument("--dataset-kind", choices=["synthetic", "csv"], default=None)
    data.add_argument("--csv-path", default=None)
    data.add_argument("--classes", type=int, default=None)
    data.add_argument("--dims", type=int, default=None)
    data.add_argument("--samples", type=int, default=None)
    data.add_argument("--margin", type=float, default=None)
    data.add_argument("--spread", type=float, default=None)
    data.add_argument("--test-fraction", type=float, default=None)

    model = parser.add_argument_group("model")
    model.add_argument("--party-kind", choices=["linear", "mlp1"], default=None)
    model.add_argument("--head", choices=["sum", "concat"], default=None)
    model.add_argument("--hidden-units", type=int, default=None)
    model.add_argument("--embed-dim", type=int, default=None)

    fed = parser.add_argument_group("federation")
    fed.add_argument("--n-parties", type=int, default=None)
    fed.add_argument("--strength", type=float, default=None)

    defense = parser.add_argument_group("defense")
    defense.add_argument(
        "--defense",
        choices=["none", "privee_dp", "privee_dppp", "round", "gaussian_dp", "monotone"],
        default=None,
    )
    defense.add_argument("--epsilon", type=float, default=None)
    defense.add_argument("--delta", type=float, default=None)
    defense.add_argument("--sensitivity", type=float, default=None)
    defense.add_argument("--eps-min", type=float, default=None)
    defense.add_argument("--eps-max", type=float, default=None)
    defense.add_argument("--digits", type=int, default=None)
    defense.add_argument("--key", type=int, default=None)
    defense.add_argument("--transform", choices=["identity", "reflection"], default=None)

    attack = parser.add_argument_group("attack")
    attack.add_argument("--attack", choices=["gia", "grn"], default=None)
    attack.add_argument("--gia-step", type=float, default=None)
    attack.add_argument("--gia-iters", type=int, default=None)
    attack.add_argument("--gia-restarts", type=int, default=None)
    attack.add_argument("--gia-tolerance", type=float, default=None)
    attack.add_argument("--grn-hidden", type=int, default=None)
    attack.add_argument("--grn-epochs", type=int, default=None)
    attack.add_argument("--grn-batch", type=int, default=None)
    attack.add_argument("--grn-step", type=float, default=None)
    attack.add_argument("--fit-samples", type=int, default=None)
    attack.add_argument("--eval-samples", type=int, default=None)

    train = parser.add_argument_group("training")
    train.add_argument("--train-epochs", type=int, default=None)
    train.add_argument("--batch-size", type=int, default=None)
    train.add_argument("--step-size", type=float, default=None)


_FLAG_MAP = {
    "data": {
        "kind": "dataset_kind",
        "csv_path": "csv_path",
        "classes": "classes",
        "dims": "dims",
        "samples": "samples",
        "margin": "margin",
        "spread": "spread",
        "test_fraction": "test_fraction",
    },
    "model": {
        "party_kind": "party_kind",
        "head": "head",
        "hidden_units": "hidden_units",
        "embed_dim": "embed_dim",
    },
    "defense": {
        "name": "defense",
        "epsilon": "epsilon",
        "delta": "delta",
        "sensitivity": "sensitivity",
        "eps_min": "eps_min",
        "eps_max": "eps_max",
        "digits": "digits",
        "key": "key",
        "transform": "transform",
    },
    "attack": {
        "name": "attack",
        "gia_step": "gia_step",
        "gia_iters": "gia_iters",
        "gia_restarts": "gia_restarts",
        "gia_tolerance": "gia_tolerance",
        "grn_hidden": "grn_hidden",
        "grn_epochs": "grn_epochs",
        "grn_batch": "grn_batch",
        "grn_step": "grn_step",
        "fit_samples": "fit_samples",
        "eval_samples": "eval_samples",
    },
    "train": {
        "epochs": "train_epochs",
        "batch_size": "batch_size",
        "step_size": "step_size",
    },
}

_SECTION_TYPES = {
    "data": DataParams,
    "model": ModelParams,
    "defense": DefenseParams,
    "attack": AttackParams,
    "train": TrainParams,
}


def build_experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge defaults, the optional JSON config file, and flags (flags win)."""
    file_cfg: dict = {}
    if args.config is not None:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise DataFormatError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")

    sections = {}
    for section, cls in _SECTION_TYPES.items():
        values = dict(file_cfg.get(section, {}))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
        for field_name, flag_name in _FLAG_MAP[section].items():
            flag_value = getattr(args, flag_name, None)
            if flag_value is not None:
                values[field_name] = flag_value
        try:
            sections[section] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad {section} configuration: {exc}") from exc

    seed = args.seed if args.seed is not None else file_cfg.get("seed")
    if seed is None:
        raise ConfigError("a seed is required (flag --seed or config key 'seed')")
    n_parties = args.n_parties if args.n_parties is not None else file_cfg.get("n_parties", 2)
    strength = args.strength if args.strength is not None else file_cfg.get("strength", 0.5)
    out = str(args.out) if args.out is not None else file_cfg.get("out")
    return ExperimentConfig(
        seed=int(seed),
        data=sections["data"],
        model=sections["model"],
        defense=sections["defense"],
        attack=sections["attack"],
        train=sections["train"],
        n_parties=int(n_parties),
        strength=float(strength),
        out=out,
    )


def _parse_float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad numeric list {text!r}") from exc


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def _cmd_train(args: argparse.Namespace) -> int:
    config = build_experiment_config(args)
    dataset = make_dataset(config)
    split = split_features(
        dataset.n_features,
        config.n_parties,
        AttackStrength(config.strength),
        config.seed,
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
    model, trace = train_vfl(dataset, split, spec, train_cfg, config.seed)
    if config.out:
        save_joint_model(model, config.out)
        print(f"checkpoint written to {config.out}")
    final = trace[-1] if trace else float("nan")
    print(f"train accuracy after {len(trace)} epochs: {final:.4f}")
    return EXIT_OK


def _cmd_attack(args: argparse.Namespace) -> int:
    config = build_experiment_config(args)
    record = run_experiment(config)
    print(f"mse_no_defense      {record.mse_no_defense:.6g}")
    print(f"mse_with_defense    {record.mse_with_defense:.6g}")
    print(f"accuracy_no_defense {record.accuracy_no_defense:.4f}")
    print(f"accuracy_defended   {record.accuracy_with_defense:.4f}")
    print(f"delta_accuracy      {record.delta_accuracy:+.4f}")
    if record.accuracy_budget_exceeded:
        print("warning: |delta_accuracy| exceeds the 0.01 budget")
    if config.out:
        print(f"record written to {config.out}")
    return EXIT_OK


def _cmd_bench(args: argparse.Namespace) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    class_counts = _parse_int_list(args.classes)
    points = bench_defense_scaling(kinds, class_counts, calls=args.calls, seed=args.seed, out_csv=args.out)
    for point in points:
        print(f"{point.kind:12s} K={point.k:<6d} mean={point.mean_s * 1e3:8.4f} ms  p95={point.p95_s * 1e3:8.4f} ms")
    if args.out:
        print(f"bench CSV written to {args.out}")
    if args.plot:
        plot_bench(points, args.plot)
        print(f"chart written to {args.plot}")
    return EXIT_OK


def _cmd_ablate(args: argparse.Namespace) -> int:
    config = build_experiment_config(args)
    epsilons = _parse_float_list(args.eps)
    clients = _parse_int_list(args.clients)
    records = ablate(config, epsilons, clients, out_csv=args.out)
    for record in records:
        meta = record.metadata["config"]
        print(
            f"eps={meta['defense']['epsilon']:<6g} parties={meta['n_parties']:<3d} "
            f"mse={record.mse_with_defense:.6g} (undefended {record.mse_no_defense:.6g}) "
            f"delta_acc={record.delta_accuracy:+.4f}"
        )
    if args.out:
        print(f"ablation CSV written to {args.out}")
    if args.plot:
        plot_ablation(records, args.plot)
        print(f"chart written to {args.plot}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    paths: list[Path] = []
    for entry in args.records:
        p = Path(entry)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.json")))
        else:
            paths.append(p)
    if not paths:
        raise DataFormatError("no record files found")
    records = [read_record(p) for p in paths]
    records_to_csv(records, args.out)
    print(f"aggregated {len(records)} records into {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vflab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a joint model and save a checkpoint")
    _add_config_flags(p_train, require_seed=False)
    p_train.set_defaults(func=_cmd_train)

    p_attack = sub.add_parser("attack", help="run one paired-arm attack experiment")
    _add_config_flags(p_attack, require_seed=True)
    p_attack.set_defaults(func=_cmd_attack)

    p_bench = sub.add_parser("bench", help="time defend() across class counts")
    p_bench.add_argument("--kinds", default="privee_dp", help="comma list of defense kinds")
    p_bench.add_argument("--classes", default="10,100,1000,10000", help="comma list of K values")
    p_bench.add_argument("--calls", type=int, default=1000)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", type=Path, default=None)
    p_bench.add_argument("--plot", type=Path, default=None, help="write a PNG chart here")
    p_bench.set_defaults(func=_cmd_bench)

    p_ablate = sub.add_parser("ablate", help="epsilon x client-count grid")
    _add_config_flags(p_ablate, require_seed=True)
    p_ablate.add_argument("--eps", default="0.05,0.07,0.1,0.5,0.9", help="comma list of epsilons")
    p_ablate.add_argument("--clients", default="2,5,10", help="comma list of party counts")
    p_ablate.add_argument("--plot", type=Path, default=None, help="write a PNG chart here")
    p_ablate.set_defaults(func=_cmd_ablate)

    p_report = sub.add_parser("report", help="aggregate record JSONs into a CSV")
    p_report.add_argument("--records", nargs="+", required=True, help="record files or directories")
    p_report.add_argument("--out", type=Path, required=True)
    p_report.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
