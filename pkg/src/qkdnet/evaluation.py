"""Ranking metrics and pair scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from ._validation import check_binary_labels, check_finite_array


@dataclass(frozen=True)
class MetricReport:
    auc: float
    ap: float
    n_pos: int
    n_neg: int


@dataclass(frozen=True)
class LinkScore:
    u: int
    v: int
    logit: float

    @property
    def pair(self):
        return (self.u, self.v)

    @property
    def probability(self):
        return float(_sigmoid(self.logit))


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _prepare(scores, labels):
    scores = check_finite_array(scores, "scores", ndim=1)
    labels = check_binary_labels(labels)
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores but {len(labels)} labels")
    return scores, labels


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    scores, labels = _prepare(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    u_stat = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Step-wise area under the precision-recall curve.

    Items are ranked by descending score; equal scores keep their input order.
    """
    scores, labels = _prepare(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    return float(precision[hits == 1].sum() / n_pos)


def metric_report(scores, labels) -> MetricReport:
    labels = check_binary_labels(labels)
    return MetricReport(
        auc=auc(scores, labels),
        ap=average_precision(scores, labels),
        n_pos=int(labels.sum()),
        n_neg=int(len(labels) - labels.sum()),
    )


def score_pairs(params, sample, pairs, scaling, message_pairs=None) -> list[LinkScore]:
    """Eval-mode logits for ``pairs``.

    Message passing uses ``message_pairs`` (default: every link of ``sample``).
    Pairs that are message links use their own channel features, all others
    the imputed mean.
    """
    import torch

    from ._validation import check_pairs
    from .dataset import build_batch
    from .model import forward

    pairs = check_pairs(pairs, sample.num_nodes)
    if len(pairs) == 0:
        return []
    msg = sample.pairs if message_pairs is None else message_pairs
    batch = build_batch(sample, scaling, msg, pairs)
    with torch.no_grad():
        logits = forward(params.to_torch(), batch, params.config, training=False).numpy()
    return [LinkScore(int(u), int(v), float(s)) for (u, v), s in zip(pairs.tolist(), logits)]
