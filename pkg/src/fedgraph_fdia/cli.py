"""``fedgraph-fdia`` command line: gen-data, train, eval, compare.

Exit codes: 0 success, 2 configuration error, 3 I/O or dataset error,
4 numeric failure (non-finite loss), 5 checkpoint/dataset incompatibility.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

from .baselines import BaselineConfig, BaselineResult, fit_baseline
from .config import ConfigError, RunConfig, format_config, load_config
from .data import (
    DatasetError,
    ProfileError,
    build_dataset,
    dataset_digest,
    ingest_profiles,
    load_dataset,
    save_dataset,
    synthesize_profiles,
)
from .estimators import FedGraphDetector, federated_proba
from .evaluation import build_report, comparison_table, export_report, parse_report
from .federated.trainer import TrainingDivergedError, save_weights
from .grid import CaseParseError, GridValidationError, load_case, normalized_laplacian, partition_from_assignment
from .model import HybridConfig, ModelWeights
from .nn.checkpoint import CheckpointError, flatten, load_checkpoint, save_checkpoint, unflatten
from .preprocessing import BusWindowScaler

EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_COMPAT = 2, 3, 4, 5


class CompatibilityError(ValueError):
    pass


# ---------------------------------------------------------------- helpers


def generate_datasets(cfg: RunConfig):
    grid = load_case(cfg.case)
    if cfg.profile_source == "synthetic":
        length = (cfg.n_samples or 8752) + cfg.window - 1
        profile = synthesize_profiles(grid, length, seed=cfg.profile_seed)
    else:
        profile = ingest_profiles(cfg.profile_source, grid)
    train, test = build_dataset(grid, profile, cfg.window, cfg.attack, cfg.test_ratio,
                                cfg.data_seed, cfg.n_samples)
    return grid, train, test


def _load_split(data_dir, split):
    path = Path(data_dir) / split
    return load_dataset(path), dataset_digest(path)


def _check_grid(grid, ds, what):
    if ds.n_buses != grid.n_buses:
        raise CompatibilityError(f"{what} has {ds.n_buses} buses but grid {grid.name} has {grid.n_buses}")


def _write_manifest(out, cfg, extra):
    text = format_config(cfg)
    lines = [f"; {k} = {v}" for k, v in extra.items()]
    (out / "manifest.ini").write_text("\n".join(lines) + "\n" + text)


def _save_model(path, est: FedGraphDetector, digest):
    tensors = flatten({"fe": est.weights_.fe, "gcn": est.weights_.gcn,
                       "scaler": {"mean": est.scaler_.mean_, "scale": est.scaler_.scale_}})
    header = {"kind": "fedgraph-detector", "model": est.weights_.config.to_dict(), "grid": est.grid_.name,
              "n_buses": est.grid_.n_buses, "window": est.window_,
              "assignment": [int(a) for a in est.partition_.assignment],
              "dataset": digest, "round": est.server_.round, "threshold": est.threshold}
    save_checkpoint(path, tensors, header)


def _save_baseline(path, res: BaselineResult, scaler, digest, window, grid, threshold):
    tensors = flatten({"params": res.params, "scaler": {"mean": scaler.mean_, "scale": scaler.scale_}})
    save_checkpoint(path, tensors, {"kind": "baseline", "config": res.config.to_dict(), "dataset": digest,
                                    "window": window, "bus_labels": grid.labels, "threshold": threshold})


def _write_history(path, history, append=False):
    new = not (append and path.exists())
    with open(path, "a" if not new else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["round", "client", "loss"])
        for r, c, loss in history:
            w.writerow([r, c, repr(float(loss))])


def _detector(cfg: RunConfig, grid):
    t = cfg.train
    return FedGraphDetector(grid, cfg.num_clients, cfg.partition_seed, cfg.model.lstm_units,
                            cfg.model.gcn_units, t.rounds, t.lr_local, t.lr_server, t.gcn_lr,
                            t.gcn_optimizer, t.batch_size, t.local_epochs, t.participation, t.threads,
                            cfg.threshold, t.seed)


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: RunConfig, out: Path):
    grid, train, test = generate_datasets(cfg)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train")
    save_dataset(test, out / "test")
    _write_manifest(out, cfg, {"command": "gen-data", "train_samples": len(train), "test_samples": len(test)})
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")
    return 0


def cmd_train(cfg: RunConfig, data_dir: Path, out: Path, resume=False):
    grid = load_case(cfg.case)
    train, digest = _load_split(data_dir, "train")
    _check_grid(grid, train, "training split")
    out.mkdir(parents=True, exist_ok=True)
    est = _detector(cfg, grid)
    est.fit(train.windows, train.labels, checkpoint_dir=out / "checkpoints", resume=resume)
    _save_model(out / "model.ckpt", est, digest)
    for c in range(cfg.num_clients):
        save_weights(out / f"client{c}.ckpt", est.weights_, {"client": c, "round": est.server_.round})
    _write_history(out / "history.csv", est.history_, append=resume)
    _write_manifest(out, cfg, {"command": "train", "dataset": digest, "rounds_completed": est.server_.round})
    losses = est.round_losses_
    if losses:
        first, last = min(losses), max(losses)
        print(f"round {first} loss {losses[first]:.6f} -> round {last} loss {losses[last]:.6f}")
    return 0


def _load_scaler(group):
    scaler = BusWindowScaler()
    scaler.mean_, scaler.scale_ = group["mean"], group["scale"]
    scaler.n_buses_, scaler.n_features_ = scaler.mean_.shape
    return scaler


def evaluate_checkpoint(ckpt: Path, data_dir: Path, split="test"):
    """Report for a detector or baseline checkpoint (file, or a train output directory)."""
    path = ckpt / "model.ckpt" if ckpt.is_dir() else ckpt
    ds, digest = _load_split(data_dir, split)
    tensors, header = load_checkpoint(path)
    g = unflatten(tensors)
    n_buses, window = g["scaler"]["mean"].shape[0], header.get("window")
    if n_buses != ds.n_buses or window != ds.window:
        raise CompatibilityError(f"checkpoint expects {n_buses} buses and window {window}; "
                                 f"dataset has {ds.n_buses} buses and window {ds.window}")
    scaler = _load_scaler(g["scaler"])
    X = scaler.transform(ds.windows)
    if header.get("kind") == "fedgraph-detector":
        grid = load_case(header["grid"])
        if grid.n_buses != n_buses:
            raise CompatibilityError(f"grid {grid.name} does not match the checkpoint")
        weights = ModelWeights(g["fe"], g["gcn"], HybridConfig(**header["model"]))
        part = partition_from_assignment(grid, header["assignment"])
        proba = federated_proba(grid, part, weights, X, normalized_laplacian(grid))
        method, labels = "fedgraph", grid.labels
    elif header.get("kind") == "baseline":
        bcfg = BaselineConfig(**{**header["config"], "hidden": tuple(header["config"]["hidden"])})
        proba = BaselineResult(g["params"], {}, bcfg).predict_proba(X)
        method, labels = bcfg.kind, header["bus_labels"]
    else:
        raise CheckpointError(f"{path} is not a detector or baseline checkpoint")
    return build_report(proba, ds.labels, labels, header["threshold"], method=method, dataset=digest)


def cmd_eval(ckpt: Path, data_dir: Path, out: Path | None, split="test"):
    report = evaluate_checkpoint(ckpt, data_dir, split)
    out = out or (ckpt if ckpt.is_dir() else ckpt.parent)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"report-{report.method}-{split}.txt"
    export_report(report, path)
    a = report.aggregate
    print(f"{report.method}: F1 {100 * a['f1']:.2f}  DR {100 * a['dr']:.2f}  FR {100 * a['fr']:.2f}  -> {path}")
    return 0


def cmd_compare(cfg: RunConfig, data_dir: Path | None, out: Path, reports=()):
    out.mkdir(parents=True, exist_ok=True)
    loaded = []
    if reports:
        loaded = [parse_report(Path(p)) for p in reports]
    else:
        if data_dir is None:
            raise ConfigError("compare needs --data or --reports")
        grid = load_case(cfg.case)
        train, digest = _load_split(data_dir, "train")
        test, test_digest = _load_split(data_dir, "test")
        _check_grid(grid, train, "training split")
        for method in cfg.methods:
            if method == "fedgraph":
                est = _detector(cfg, grid).fit(train.windows, train.labels)
                _save_model(out / "fedgraph.ckpt", est, digest)
                report = est.evaluate(test.windows, test.labels, dataset=test_digest)
            else:
                scaler = BusWindowScaler().fit(train.windows)
                res = fit_baseline(scaler.transform(train.windows), train.labels, cfg.baseline(method))
                _save_baseline(out / f"{method}.ckpt", res, scaler, digest, train.window, grid, cfg.threshold)
                report = build_report(res.predict_proba(scaler.transform(test.windows)), test.labels,
                                      grid.labels, cfg.threshold, method=method, dataset=test_digest)
            export_report(report, out / f"report-{method}.txt")
            loaded.append(report)
    if len({r.dataset for r in loaded}) > 1:
        raise CompatibilityError("reports were computed on different datasets")
    table = comparison_table(loaded)
    (out / "comparison.txt").write_text(table)
    print(table, end="")
    return 0


# ---------------------------------------------------------------- entry point


def build_parser():
    p = argparse.ArgumentParser(prog="fedgraph-fdia", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, required=False, help="INI run configuration")
        sp.add_argument("--seed", type=int, help="override every seed in the config")
        sp.add_argument("--out", type=Path, help="output directory (default: [output] dir)")
        sp.add_argument("--threads", type=int, help="parallel client steps (default 1)")

    g = sub.add_parser("gen-data", help="generate train/test datasets")
    common(g)
    t = sub.add_parser("train", help="federated training of the graph detector")
    common(t)
    t.add_argument("--data", type=Path, required=True, help="dataset directory from gen-data")
    t.add_argument("--resume", action="store_true", help="continue from checkpoints in --out")
    e = sub.add_parser("eval", help="evaluate a trained model")
    common(e)
    e.add_argument("--checkpoint", type=Path, required=True,
                   help="train output directory or a checkpoint file written by compare")
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--split", choices=("test", "train"), default="test")
    c = sub.add_parser("compare", help="train and compare fedgraph with the baselines")
    common(c)
    c.add_argument("--data", type=Path)
    c.add_argument("--reports", nargs="*", default=(), help="tabulate existing report files instead")
    return p


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = replace(cfg, train=replace(cfg.train, threads=args.threads))
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        out = args.out or Path(cfg.out_dir)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, args.data, out, args.resume)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.data, args.out, args.split)
        return cmd_compare(cfg, args.data, out, args.reports)
    except (ConfigError, CaseParseError, GridValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CompatibilityError as exc:
        print(f"incompatible inputs: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (OSError, DatasetError, ProfileError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
