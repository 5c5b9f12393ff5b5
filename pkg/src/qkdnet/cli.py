"""``qkdnet`` command line.

Every subcommand reads and writes the JSON/CSV formats of the library. On
failure a one-line JSON object goes to stderr and the exit code tells the
failure class apart (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .analyzer import ATTACK_STRATEGIES, analyze, attack_simulation
from .channel import simulate_network
from .dataset import build_sample
from .estimator import QKDLinkPredictor
from .experiments import (
    TABLE2_COLUMNS,
    ConfigError,
    ExperimentConfig,
    load_config,
    run_sweep,
    write_csv,
)
from .optimizer import compare, optimize_topology
from .topology import NetworkTopology, generate_topology
from .training import cross_validate, write_training_log

EXIT_CODES = {
    "usage": 2,  # unknown flag, missing argument
    "config": 3,  # malformed config file
    "missing_file": 4,
    "invalid_input": 5,  # readable file with unusable content
    "internal": 1,
}

METRIC_COLUMNS = ("u", "v", "distance_km", "medium", "loss_db", "transmittance", "qber", "sifted_rate_bps",
                  "key_rate_bps", "pulses", "clicks", "dark_clicks", "sifted", "errors")


class CLIError(Exception):
    def __init__(self, kind, message):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", f"{self.prog}: {message}")


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _config(args) -> ExperimentConfig:
    return load_config(args.config) if args.config else ExperimentConfig()


def _seed(args, default):
    return default if args.seed is None else args.seed


def _load_topology(path, need_metrics=False):
    try:
        t = NetworkTopology.load(path)
    except FileNotFoundError:
        raise
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise CLIError("invalid_input", f"{path}: not a topology file ({exc})") from exc
    if need_metrics and t.num_edges and not t.metrics:
        raise CLIError("invalid_input", f"{path}: topology has no channel metrics; run 'simulate' first")
    return t


def write_metrics_csv(t: NetworkTopology, path):
    rows = []
    for (u, v) in t.edges:
        m = t.metrics.get((u, v))
        rows.append({"u": u, "v": v, **(m.edge_record() if m else {})})
    write_csv(path, rows, METRIC_COLUMNS)


# -- subcommands -------------------------------------------------------------

def cmd_generate(args):
    cfg = _config(args)
    topo_cfg = cfg.topology
    if args.nodes is not None:
        topo_cfg = replace(topo_cfg, num_nodes=args.nodes)
    topo_cfg = replace(topo_cfg, seed=_seed(args, topo_cfg.seed))
    t = generate_topology(topo_cfg)
    t.save(args.out)
    return {"nodes": t.num_nodes, "edges": t.num_edges, "out": str(args.out)}


def cmd_simulate(args):
    cfg = _config(args)
    t = _load_topology(args.topology)
    seed = _seed(args, t.meta.get("seed", 0))
    t = simulate_network(t, cfg.channel, seed)
    t.save(args.out)
    if args.metrics:
        write_metrics_csv(t, args.metrics)
    return {"edges": t.num_edges, "seed": seed, "out": str(args.out)}


def _predictor(cfg, seed, refit):
    m, tr = cfg.model, cfg.training
    return QKDLinkPredictor(
        hidden=m.hidden, heads=m.heads, dropout=m.dropout, leaky_relu_slope=m.leaky_relu_slope,
        layernorm_epsilon=m.layernorm_epsilon, symmetric_decoder=m.symmetric_decoder,
        dropout_per_row=m.dropout_per_row,
        epochs=tr.epochs, patience=tr.patience, k_folds=tr.k_folds, learning_rate=tr.learning_rate,
        weight_decay=tr.weight_decay, plateau_factor=tr.plateau_factor, plateau_patience=tr.plateau_patience,
        monitor=tr.monitor, resample_negatives=tr.resample_negatives,
        edge_feature_mask_rate=tr.edge_feature_mask_rate, early_stopping=not refit, random_state=seed,
    )


def cmd_train(args):
    cfg = _config(args)
    t = _load_topology(args.topology, need_metrics=True)
    seed = _seed(args, cfg.training.seed)
    est = _predictor(cfg, seed, args.refit).fit(build_sample(t))
    est.save(args.out)
    if args.log:
        write_training_log(args.log, [est.fold_result_])
    r = est.fold_result_
    return {"out": str(args.out), "epochs_run": r.epochs_run, "best_epoch": r.best_epoch,
            "val_auc": None if args.refit else r.val_auc, "val_ap": None if args.refit else r.val_ap}


def cmd_evaluate(args):
    cfg = _config(args)
    t = _load_topology(args.topology, need_metrics=True)
    seed = _seed(args, cfg.training.seed)
    tcfg = replace(cfg.training, seed=seed, k_folds=args.folds or cfg.training.k_folds)
    cv = cross_validate(build_sample(t), cfg.model, tcfg)
    summary = cv.summary()
    payload = {"meta": {"seed": seed, "model": asdict(cfg.model), "training": asdict(tcfg)}, "summary": summary,
               "folds": [{"fold": f.fold_id, "auc": f.val_auc, "ap": f.val_ap, "best_epoch": f.best_epoch}
                         for f in cv.folds]}
    if args.out:
        _dump(payload, args.out)
    if args.log:
        write_training_log(args.log, cv.folds)
    return summary


def cmd_analyze(args):
    t = _load_topology(args.topology)
    report = analyze(t)
    meta = {"source": Path(args.topology).name, "seed": t.meta.get("seed")}
    if args.out:
        report.save(args.out, meta=meta)
    return report.to_dict()


def cmd_attack(args):
    t = _load_topology(args.topology)
    seed = _seed(args, 0)
    curve = attack_simulation(t, args.strategy, args.fraction, seed=seed)
    rows = [asdict(p) for p in curve]
    if args.out:
        write_csv(args.out, rows, ["removed", "largest_component_fraction", "total_key_rate_bps"])
    return {"strategy": args.strategy, "steps": len(curve) - 1, "final": rows[-1]}


def cmd_optimize(args):
    cfg = _config(args)
    t = _load_topology(args.topology, need_metrics=True)
    seed = _seed(args, cfg.training.seed)
    sample = build_sample(t)
    if args.model:
        est = QKDLinkPredictor.load(args.model)
    else:
        est = _predictor(cfg, seed, refit=True).fit(sample)
    opt = optimize_topology(t, est, cfg.optimization, cfg.channel)
    opt.save(args.out)
    report = compare(t, opt)
    if args.report:
        report.save(args.report, meta={"seed": seed, "optimization": asdict(cfg.optimization)})
    print(report.summary_table(), file=sys.stderr)
    return report.deltas


def cmd_sweep(args):
    cfg = _config(args)
    if args.out:
        cfg = replace(cfg, output_dir=str(args.out))
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if args.no_train:
        cfg = replace(cfg, train=False)
    report = run_sweep(cfg)
    return {"output_dir": str(cfg.output_dir), "table2": report.table2()}


def _read_csv_table(path):
    import csv

    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _markdown(rows):
    head, *body = rows
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    lines += ["| " + " | ".join(_short(c) for c in r) + " |" for r in body]
    return "\n".join(lines)


def _short(cell):
    try:
        x = float(cell)
    except ValueError:
        return cell
    return f"{x:.4g}" if x != int(x) else str(int(x))


def cmd_report(args):
    src = Path(args.directory)
    t1, t2 = src / "tables1.csv", src / "tables2.csv"
    for p in (t1, t2):
        if not p.exists():
            raise FileNotFoundError(str(p))
    text = ("## Network characteristics\n\n" + _markdown(_read_csv_table(t1))
            + "\n\n## Link prediction\n\n" + _markdown(_read_csv_table(t2)) + "\n")
    out = Path(args.out) if args.out else src / "report.md"
    out.write_text(text)
    return {"out": str(out), "columns": ["Nodes", *TABLE2_COLUMNS]}


# -- parser ------------------------------------------------------------------

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config with nested module sections")
    common.add_argument("--seed", type=int, help="override the seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="qkdnet", description="QKD network simulation, link prediction and optimization.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("generate", parents=[common], help="generate a clustered topology")
    s.add_argument("--nodes", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", parents=[common], help="attach BB84 link metrics")
    s.add_argument("topology")
    s.add_argument("--out", required=True)
    s.add_argument("--metrics", help="also write per-link metrics CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", parents=[common], help="fit the link predictor and save a checkpoint")
    s.add_argument("topology")
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="training log CSV")
    s.add_argument("--refit", action="store_true", help="train on every link without a validation fold")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", parents=[common], help="K-fold cross-validation (AUC / AP)")
    s.add_argument("topology")
    s.add_argument("--out")
    s.add_argument("--log", help="training log CSV")
    s.add_argument("--folds", type=int)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("analyze", parents=[common], help="structural and spectral report")
    s.add_argument("topology")
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("attack", parents=[common], help="attack resilience curve")
    s.add_argument("topology")
    s.add_argument("--strategy", choices=ATTACK_STRATEGIES, default="degree_targeted")
    s.add_argument("--fraction", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("optimize", parents=[common], help="rebuild links from predicted scores")
    s.add_argument("topology")
    s.add_argument("--model", help="checkpoint from 'train'; refits on the topology if omitted")
    s.add_argument("--out", required=True)
    s.add_argument("--report", help="comparison JSON")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("sweep", parents=[common], help="node-count scaling sweep")
    s.add_argument("--out", help="output directory (overrides the config)")
    s.add_argument("--no-train", action="store_true", help="skip cross-validation")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", parents=[common], help="markdown tables from a sweep directory")
    s.add_argument("directory")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def _fail(kind, message):
    code = EXIT_CODES[kind]
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except CLIError as exc:
        return _fail(exc.kind, str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = args.func(args)
    except CLIError as exc:
        return _fail(exc.kind, str(exc))
    except ConfigError as exc:
        return _fail("config", str(exc))
    except FileNotFoundError as exc:
        return _fail("missing_file", f"file not found: {exc.filename or exc}")
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        return _fail("invalid_input", f"{type(exc).__name__}: {exc}")
    except Exception as exc:  # noqa: BLE001
        return _fail("internal", f"{type(exc).__name__}: {exc}")
    _dump(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
