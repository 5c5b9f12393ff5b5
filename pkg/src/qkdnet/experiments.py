"""Configuration loading and the node-count scaling sweep.

A sweep cell is one (size, seed) pair: generate, simulate, build the sample,
cross-validate and analyze. Cells fail independently; a size whose cells all
fail still gets a row, with empty aggregates.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .analyzer import TABLE1_COLUMNS, NetworkReport, analyze
from .channel import ChannelParams, simulate_network
from .dataset import build_sample
from .model import ModelConfig
from .optimizer import OptimizationConfig
from .topology import TopologyConfig, generate_topology
from .training import TrainConfig, cross_validate

logger = logging.getLogger(__name__)

TABLE2_COLUMNS = ("AUC (mean)", "AUC (std)", "AP (mean)", "AP (std)")
PLOT_FILES = ("training_loss.svg", "validation_auc.svg", "key_rate_vs_distance.svg", "qber_histogram.svg")


class ConfigError(ValueError):
    """A configuration file or section that cannot be turned into valid settings."""


def build_section(cls, data, section):
    """Instantiate dataclass ``cls`` from a dict, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"section {section!r}: unknown keys {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {section!r}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    node_counts: tuple = (10, 20, 50, 100, 250)
    seeds_per_size: int = 5
    base_seed: int = 0
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    optimization: OptimizationConfig = field(default_factory=OptimizationConfig)
    # fold count overrides per node count (JSON keys are strings)
    folds_by_size: dict = field(default_factory=lambda: {250: 2})
    train: bool = True
    output_dir: str = "results"

    def __post_init__(self):
        counts = tuple(int(n) for n in self.node_counts)
        if not counts:
            raise ConfigError("node_counts must be nonempty")
        if any(n < 1 for n in counts) or list(counts) != sorted(set(counts)):
            raise ConfigError("node_counts must be positive and strictly ascending")
        object.__setattr__(self, "node_counts", counts)
        if not isinstance(self.seeds_per_size, int) or self.seeds_per_size < 1:
            raise ConfigError("seeds_per_size must be a positive integer")
        object.__setattr__(self, "folds_by_size", {int(k): int(v) for k, v in self.folds_by_size.items()})

    def folds_for(self, num_nodes):
        return self.folds_by_size.get(num_nodes, self.training.k_folds)

    def seeds(self):
        return [self.base_seed + r for r in range(self.seeds_per_size)]

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        sections = {
            "topology": TopologyConfig, "channel": ChannelParams, "model": ModelConfig,
            "training": TrainConfig, "optimization": OptimizationConfig,
        }
        top = dict(data.get("experiment", {}))
        unknown = sorted(set(data) - set(sections) - {"experiment"})
        if unknown:
            raise ConfigError(f"unknown sections {unknown}")
        kwargs = {name: build_section(kind, data.get(name), name) for name, kind in sections.items()}
        scalar = {f.name for f in fields(cls)} - set(sections)
        bad = sorted(set(top) - scalar)
        if bad:
            raise ConfigError(f"section 'experiment': unknown keys {bad}")
        try:
            return cls(**top, **kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        experiment = {
            "node_counts": list(self.node_counts), "seeds_per_size": self.seeds_per_size,
            "base_seed": self.base_seed, "folds_by_size": {str(k): v for k, v in sorted(self.folds_by_size.items())},
            "train": self.train, "output_dir": str(self.output_dir),
        }
        return {
            "experiment": experiment,
            "topology": asdict(self.topology),
            "channel": asdict(self.channel),
            "model": asdict(self.model),
            "training": asdict(self.training),
            "optimization": asdict(self.optimization),
        }


def load_config(path) -> ExperimentConfig:
    """Read a JSON config; a missing file raises FileNotFoundError, bad content ConfigError."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data)


@dataclass
class CellResult:
    num_nodes: int
    seed: int
    network: NetworkReport | None = None
    cv: object = None
    links: list = field(default_factory=list)  # (distance_km, key_rate_bps, qber)
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class SizeRow:
    num_nodes: int
    cells: list

    def _ok(self):
        return [c for c in self.cells if c.ok]

    @property
    def failures(self):
        return [c for c in self.cells if not c.ok]

    def network_mean(self):
        ok = self._ok()
        if not ok:
            return None
        return {name: float(np.mean([getattr(c.network, name) for c in ok])) for name in ok[0].network.to_dict()}

    def metric(self, attr):
        """Mean and population std across seeds of each seed's CV mean."""
        vals = [getattr(c.cv, attr) for c in self._ok() if c.cv is not None]
        if not vals:
            return math.nan, math.nan
        return float(np.mean(vals)), float(np.std(vals))


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list

    def row(self, num_nodes) -> SizeRow:
        for r in self.rows:
            if r.num_nodes == num_nodes:
                return r
        raise KeyError(num_nodes)

    def table1(self):
        out = []
        for r in self.rows:
            mean = r.network_mean()
            rec = {"Nodes": r.num_nodes}
            for name, label in TABLE1_COLUMNS.items():
                rec[label] = mean[name] if mean else None
            out.append(rec)
        return out

    def table2(self):
        out = []
        for r in self.rows:
            auc_m, auc_s = r.metric("auc_mean")
            ap_m, ap_s = r.metric("ap_mean")
            out.append(dict(zip(("Nodes",) + TABLE2_COLUMNS, (r.num_nodes, auc_m, auc_s, ap_m, ap_s))))
        return out

    def cell_rows(self):
        for r in self.rows:
            for c in r.cells:
                rec = {"nodes": c.num_nodes, "seed": c.seed}
                rec.update(c.network.to_dict() if c.network else {})
                if c.cv is not None:
                    rec.update(c.cv.summary())
                rec["error"] = c.error or ""
                yield rec


def run_cell(cfg: ExperimentConfig, num_nodes, seed) -> CellResult:
    cell = CellResult(num_nodes, seed)
    try:
        topo = generate_topology(replace(cfg.topology, num_nodes=num_nodes, seed=seed))
        topo = simulate_network(topo, cfg.channel, seed)
        cell.network = analyze(topo)
        cell.links = [(m.distance_km, m.secure_key_rate_bps, m.qber) for _, m in sorted(topo.metrics.items())]
        if cfg.train:
            tcfg = replace(cfg.training, seed=seed, k_folds=cfg.folds_for(num_nodes))
            cell.cv = cross_validate(build_sample(topo), cfg.model, tcfg)
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
        logger.warning("cell n=%d seed=%d failed: %s", num_nodes, seed, exc)
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def run_sweep(cfg: ExperimentConfig, write=True) -> ExperimentReport:
    rows = []
    for n in cfg.node_counts:
        cells = [run_cell(cfg, n, s) for s in cfg.seeds()]
        rows.append(SizeRow(n, cells))
        logger.info("n=%d done (%d/%d cells ok)", n, len(rows[-1]._ok()), len(cells))
    report = ExperimentReport(cfg, rows)
    if write:
        write_report(report, cfg.output_dir)
    return report


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_csv(path, records, columns=None):
    records = list(records)
    if columns is None:
        columns = []
        for rec in records:
            columns.extend(k for k in rec if k not in columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow([_fmt(rec.get(c)) for c in columns])


def write_report(report: ExperimentReport, output_dir):
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "tables1.csv", report.table1(), ["Nodes", *TABLE1_COLUMNS.values()])
    write_csv(out / "tables2.csv", report.table2(), ["Nodes", *TABLE2_COLUMNS])
    write_csv(out / "cells.csv", report.cell_rows())
    (out / "config.json").write_text(json.dumps(report.config.to_dict(), indent=2, sort_keys=True) + "\n")
    write_plots(report, out)
    return out


def _legend(ax):
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8)


def write_plots(report: ExperimentReport, out: Path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "qkdnet"
    meta = {"Date": None}

    def first_fold(row):
        for c in row.cells:
            if c.ok and c.cv is not None and c.cv.folds:
                return c.cv.folds[0]
        return None

    fig, ax = plt.subplots(figsize=(6, 4))
    for row in report.rows:
        f = first_fold(row)
        if f is not None:
            ax.plot(range(1, len(f.train_loss_curve) + 1), f.train_loss_curve, label=f"{row.num_nodes} nodes")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    _legend(ax)
    fig.savefig(out / PLOT_FILES[0], format="svg", metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for row in report.rows:
        f = first_fold(row)
        if f is not None:
            ax.plot(range(1, len(f.val_auc_curve) + 1), f.val_auc_curve, label=f"{row.num_nodes} nodes")
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation AUC")
    _legend(ax)
    fig.savefig(out / PLOT_FILES[1], format="svg", metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for row in report.rows:
        links = [link for c in row.cells if c.ok for link in c.links]
        if links:
            d, r, _ = zip(*links)
            ax.scatter(d, r, s=4, alpha=0.5, label=f"{row.num_nodes} nodes")
    ax.set_xlabel("distance (km)")
    ax.set_ylabel("secure key rate (bits/s)")
    _legend(ax)
    fig.savefig(out / PLOT_FILES[2], format="svg", metadata=meta)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    qber = [link[2] for row in report.rows for c in row.cells if c.ok for link in c.links]
    ax.hist(qber, bins=40)
    ax.set_xlabel("QBER")
    ax.set_ylabel("links")
    fig.savefig(out / PLOT_FILES[3], format="svg", metadata=meta)
    plt.close(fig)
