"""K-fold training with AdamW, plateau LR halving and early stopping."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ._validation import check_positive_int, check_real
from .dataset import FeatureScaling, FoldSplit, GraphSample, build_batch, make_folds, non_edges
from .evaluation import MetricReport, metric_report
from .model import DTYPE, ModelConfig, ModelParams, bce_loss, forward, init_params

logger = logging.getLogger(__name__)

IMPROVEMENT_TOL = 1e-6


class TrainingDivergedError(FloatingPointError):
    def __init__(self, fold_id, epoch, loss):
        super().__init__(f"fold {fold_id}: non-finite training loss {loss} at epoch {epoch}")
        self.fold_id, self.epoch, self.loss = fold_id, epoch, loss


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    patience: int = 20
    k_folds: int = 5
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    monitor: str = "loss"  # or "auc"
    resample_negatives: bool = False
    # chance that a training positive is scored with the imputed edge features
    edge_feature_mask_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        check_positive_int(self.epochs, "epochs")
        check_positive_int(self.patience, "patience")
        check_positive_int(self.k_folds, "k_folds", minimum=2)
        check_real(self.learning_rate, "learning_rate", low=0, low_inclusive=False)
        check_real(self.weight_decay, "weight_decay", low=0)
        check_real(self.plateau_factor, "plateau_factor", low=0, high=1, low_inclusive=False, high_inclusive=False)
        check_positive_int(self.plateau_patience, "plateau_patience")
        check_real(self.edge_feature_mask_rate, "edge_feature_mask_rate", low=0, high=1)
        if self.monitor not in ("loss", "auc"):
            raise ValueError(f"monitor must be 'loss' or 'auc', got {self.monitor!r}")


@dataclass
class FoldResult:
    fold_id: int
    best_epoch: int
    train_loss_curve: list
    val_loss_curve: list
    val_auc_curve: list
    lr_curve: list
    val_auc: float
    val_ap: float
    best_params: ModelParams
    scaling: FeatureScaling
    stopped_early: bool = False

    @property
    def epochs_run(self):
        return len(self.train_loss_curve)


@dataclass
class CVResult:
    folds: list
    failures: list = field(default_factory=list)

    def _stat(self, attr, fn):
        vals = [getattr(f, attr) for f in self.folds]
        return float(fn(vals)) if vals else math.nan

    @property
    def auc_mean(self):
        return self._stat("val_auc", np.mean)

    @property
    def auc_std(self):
        return self._stat("val_auc", np.std)

    @property
    def ap_mean(self):
        return self._stat("val_ap", np.mean)

    @property
    def ap_std(self):
        return self._stat("val_ap", np.std)

    def summary(self):
        return {"auc_mean": self.auc_mean, "auc_std": self.auc_std, "ap_mean": self.ap_mean,
                "ap_std": self.ap_std, "folds": len(self.folds), "failed_folds": len(self.failures)}


class EarlyStopping:
    """Tracks the best monitored value; ``step`` returns True when training should stop.

    Epochs are counted from 1. A value counts as an improvement only when it
    beats the best so far by more than ``tol``.
    """

    def __init__(self, patience, tol=IMPROVEMENT_TOL, mode="min"):
        self.patience = patience
        self.tol = tol
        self.sign = 1.0 if mode == "min" else -1.0
        self.best = math.inf
        self.best_epoch = 0
        self.stale = 0

    def step(self, epoch, value):
        v = self.sign * value
        if v < self.best - self.tol:
            self.best = v
            self.best_epoch = epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience

    @property
    def improved_last(self):
        return self.stale == 0


def _fold_seed(seed, fold_id):
    return int(np.random.SeedSequence([int(seed), 7919, int(fold_id)]).generate_state(1, dtype=np.uint64)[0])


def train_fold(sample: GraphSample, split: FoldSplit, mcfg: ModelConfig, tcfg: TrainConfig,
               val_equals_train=False) -> FoldResult:
    """Train one fold from a fresh initialization and keep the best-validation parameters.

    ``val_equals_train`` evaluates on the training pairs themselves (used for
    overfitting sanity checks). A split without validation pairs trains for
    all ``tcfg.epochs`` and returns the final parameters.
    """
    seed = _fold_seed(tcfg.seed, split.fold_id)
    torch_gen = torch.Generator().manual_seed(seed % (2**63))
    rng = np.random.default_rng(seed)

    msg = split.message_edges
    scaling = FeatureScaling.fit(sample.node_features, sample.features_for(msg)[0])
    train_pairs, train_labels = split.train_pairs()
    if val_equals_train:
        val_pairs, val_labels = train_pairs, train_labels
        val_batch = build_batch(sample, scaling, msg, val_pairs, val_labels)
    else:
        val_pairs, val_labels = split.val_pairs()
        val_batch = build_batch(sample, scaling, msg, val_pairs, val_labels)
        # held-out candidates are scored like any unknown pair
        val_batch.query_has_edge[:] = False
    train_batch = build_batch(sample, scaling, msg, train_pairs, train_labels)
    has_val = len(val_pairs) > 0
    neg_pool = non_edges(sample.num_nodes, sample.pairs, split.val_negative) if tcfg.resample_negatives else None

    params0 = init_params(mcfg, seed)
    tensors = params0.to_torch(requires_grad=True)
    optimizer = torch.optim.AdamW(tensors.values(), lr=tcfg.learning_rate, weight_decay=tcfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer, mode="min", factor=tcfg.plateau_factor, patience=tcfg.plateau_patience,
        threshold=IMPROVEMENT_TOL, threshold_mode="abs",
    )
    stopper = EarlyStopping(tcfg.patience, mode="min" if tcfg.monitor == "loss" else "max")
    val_y = torch.as_tensor(np.asarray(val_labels, dtype=np.float64), dtype=DTYPE)
    train_y = torch.as_tensor(train_labels, dtype=DTYPE)

    best = params0
    train_curve, val_curve, auc_curve, lr_curve = [], [], [], []
    stopped = False
    for epoch in range(1, tcfg.epochs + 1):
        if neg_pool is not None and len(neg_pool):
            idx = rng.choice(len(neg_pool), size=len(split.train_negative), replace=len(neg_pool) < len(split.train_negative))
            train_pairs = np.concatenate([split.train_positive, neg_pool[np.sort(idx)]])
            train_batch = build_batch(sample, scaling, msg, train_pairs, train_labels)

        n_pos = len(split.train_positive)
        train_batch.query_has_edge[:n_pos] = rng.random(n_pos) >= tcfg.edge_feature_mask_rate
        optimizer.zero_grad()
        loss = bce_loss(forward(tensors, train_batch, mcfg, training=True, generator=torch_gen), train_y)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(split.fold_id, epoch, float(loss.detach()))
        loss.backward()
        optimizer.step()

        train_curve.append(float(loss.detach()))
        lr_curve.append(optimizer.param_groups[0]["lr"])
        if not has_val:
            scheduler.step(float(loss.detach()))
            continue

        with torch.no_grad():
            val_logits = forward(tensors, val_batch, mcfg, training=False)
            val_loss = float(bce_loss(val_logits, val_y))
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(split.fold_id, epoch, val_loss)
        val_auc = metric_report(val_logits.numpy(), val_labels).auc
        val_curve.append(val_loss)
        auc_curve.append(val_auc)
        scheduler.step(val_loss)

        should_stop = stopper.step(epoch, val_loss if tcfg.monitor == "loss" else val_auc)
        if stopper.improved_last:
            best = ModelParams.from_torch(tensors, mcfg)
        if should_stop:
            stopped = True
            break

    if not has_val:
        return FoldResult(
            fold_id=split.fold_id, best_epoch=len(train_curve), train_loss_curve=train_curve,
            val_loss_curve=[], val_auc_curve=[], lr_curve=lr_curve, val_auc=math.nan, val_ap=math.nan,
            best_params=ModelParams.from_torch(tensors, mcfg), scaling=scaling,
        )
    report = evaluate_pairs(best, sample, scaling, msg, val_pairs, val_labels, treat_all_unknown=not val_equals_train)
    return FoldResult(
        fold_id=split.fold_id,
        best_epoch=stopper.best_epoch,
        train_loss_curve=train_curve,
        val_loss_curve=val_curve,
        val_auc_curve=auc_curve,
        lr_curve=lr_curve,
        val_auc=report.auc,
        val_ap=report.ap,
        best_params=best,
        scaling=scaling,
        stopped_early=stopped,
    )


def evaluate_pairs(params, sample, scaling, message_pairs, pairs, labels, treat_all_unknown=True) -> MetricReport:
    batch = build_batch(sample, scaling, message_pairs, pairs, labels)
    if treat_all_unknown:
        batch.query_has_edge[:] = False
    with torch.no_grad():
        logits = forward(params.to_torch(), batch, params.config, training=False).numpy()
    return metric_report(logits, labels)


def cross_validate(sample: GraphSample, mcfg: ModelConfig, tcfg: TrainConfig, folds=None) -> CVResult:
    """Train ``tcfg.k_folds`` independent folds; failed folds are logged and kept aside."""
    if folds is None:
        folds = make_folds(sample, tcfg.k_folds, tcfg.seed)
    result = CVResult(folds=[])
    for split in folds:
        try:
            result.folds.append(train_fold(sample, split, mcfg, tcfg))
        except TrainingDivergedError as exc:
            logger.warning("%s", exc)
            result.failures.append(exc)
    if not result.folds and result.failures:
        raise result.failures[0]
    return result


def write_training_log(path, results):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "fold", "train_loss", "val_loss", "lr"])
        for r in results:
            for i, (tl, lr) in enumerate(zip(r.train_loss_curve, r.lr_curve), start=1):
                vl = repr(r.val_loss_curve[i - 1]) if i <= len(r.val_loss_curve) else ""
                writer.writerow([i, r.fold_id, repr(tl), vl, repr(lr)])
