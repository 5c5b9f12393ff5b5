"""Model-guided link selection and baseline comparison.

The optimized topology keeps every node of the baseline and links each pair
within ``candidate_radius_km`` whose predicted link probability reaches
``score_threshold``. With a per-node degree budget, pairs are accepted
greedily by descending score (ties by pair id). Every retained link is then
simulated with the same per-pair random streams as the baseline, so a link
present in both topologies carries identical metrics.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._validation import check_positive_int, check_real
from .analyzer import NetworkReport, analyze
from .channel import ChannelParams, simulate_network
from .dataset import build_sample
from .topology import NetworkTopology, pairwise_distance_matrix

# Figures quoted for context only; the baseline behind them is not described.
REFERENCE_FIGURES = {
    "total_key_rate_bps": (27.1e3, 470e3),
    "avg_qber": (0.066, 0.060),
    "avg_distance_km": (7.13, 6.42),
}


@dataclass(frozen=True)
class OptimizationConfig:
    candidate_radius_km: float | None = None  # None -> twice the baseline link cap
    score_threshold: float = 0.5
    degree_budget: int | None = None
    objective: str = "max_total_key_rate"

    def __post_init__(self):
        if self.candidate_radius_km is not None:
            check_real(self.candidate_radius_km, "candidate_radius_km", low=0, low_inclusive=False)
        check_real(self.score_threshold, "score_threshold", low=0, high=1, low_inclusive=False, high_inclusive=False)
        if self.degree_budget is not None:
            check_positive_int(self.degree_budget, "degree_budget", minimum=0)
        if self.objective != "max_total_key_rate":
            raise ValueError(f"unsupported objective {self.objective!r}")

    def radius_for(self, t: NetworkTopology):
        if self.candidate_radius_km is not None:
            return self.candidate_radius_km
        if not np.isfinite(t.max_link_distance_km):
            raise ValueError("topology has no link cap; set candidate_radius_km explicitly")
        return 2.0 * t.max_link_distance_km


def candidate_pairs(t: NetworkTopology, radius_km):
    d = pairwise_distance_matrix(t)
    iu, iv = np.triu_indices(t.num_nodes, k=1)
    keep = d[iu, iv] <= radius_km
    return np.column_stack([iu[keep], iv[keep]]).astype(np.int64)


def select_links(pairs, probabilities, threshold, degree_budget=None, num_nodes=None):
    """Pairs with probability >= threshold, greedily respecting a degree budget."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    order = sorted(range(len(pairs)), key=lambda i: (-probabilities[i], pairs[i, 0], pairs[i, 1]))
    degree = np.zeros(num_nodes if num_nodes is not None else (pairs.max() + 1 if len(pairs) else 0), dtype=np.int64)
    chosen = []
    for i in order:
        if probabilities[i] < threshold:
            break
        u, v = pairs[i]
        if degree_budget is not None and (degree[u] >= degree_budget or degree[v] >= degree_budget):
            continue
        degree[u] += 1
        degree[v] += 1
        chosen.append((int(u), int(v)))
    return sorted(chosen)


def optimize_topology(t: NetworkTopology, predictor, ocfg: OptimizationConfig = OptimizationConfig(),
                      channel_params: ChannelParams | None = None, seed=None) -> NetworkTopology:
    """Rebuild the link set of ``t`` from ``predictor`` scores.

    ``predictor`` is a fitted :class:`~qkdnet.estimator.QKDLinkPredictor` (or
    anything with ``predict_proba(sample, pairs)``). ``t`` must carry channel
    metrics; its links form the message-passing context for scoring.
    """
    if channel_params is None:
        channel_params = ChannelParams(**t.meta["channel"]["params"]) if "channel" in t.meta else ChannelParams()
    if seed is None:
        seed = t.meta.get("channel", {}).get("seed", t.meta.get("seed", 0))
    sample = build_sample(t)
    radius = ocfg.radius_for(t)
    pairs = candidate_pairs(t, radius)
    probs = predictor.predict_proba(sample, pairs)[:, 1] if len(pairs) else np.zeros(0)
    links = select_links(pairs, probs, ocfg.score_threshold, ocfg.degree_budget, t.num_nodes)

    bare = NetworkTopology(
        positions=t.positions,
        edges=links,
        unit_to_km=t.unit_to_km,
        max_link_distance_km=radius,
        meta={k: v for k, v in t.meta.items() if k not in ("channel",)},
    )
    out = simulate_network(bare, channel_params, seed)
    out.meta["optimization"] = {**asdict(ocfg), "candidate_radius_km": radius, "candidates": int(len(pairs)),
                                "empty": len(links) == 0}
    return out


@dataclass
class ComparisonReport:
    baseline: NetworkReport
    optimized: NetworkReport
    deltas: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "baseline": self.baseline.to_dict(),
            "optimized": self.optimized.to_dict(),
            "deltas": self.deltas,
            "reference_figures": {k: {"baseline": a, "optimized": b} for k, (a, b) in REFERENCE_FIGURES.items()},
        }

    def save(self, path, meta=None):
        Path(path).write_text(json.dumps({"meta": meta or {}, **self.to_dict()}, indent=2) + "\n")

    def summary_table(self):
        rows = [f"{'metric':<26}{'baseline':>16}{'optimized':>16}{'delta':>16}{'ref. base':>12}{'ref. opt':>12}"]
        for name, delta in self.deltas.items():
            ref = REFERENCE_FIGURES.get(name)
            ref_cols = f"{ref[0]:>12.4g}{ref[1]:>12.4g}" if ref else f"{'':>12}{'':>12}"
            rows.append(f"{name:<26}{getattr(self.baseline, name):>16.6g}{getattr(self.optimized, name):>16.6g}"
                        f"{delta:>16.6g}{ref_cols}")
        return "\n".join(rows)


def compare(baseline: NetworkTopology, optimized: NetworkTopology) -> ComparisonReport:
    if baseline.num_nodes != optimized.num_nodes or not np.array_equal(baseline.positions, optimized.positions):
        raise ValueError("baseline and optimized topologies must share the same node set")
    b, o = analyze(baseline), analyze(optimized)
    deltas = {}
    for name, value in b.to_dict().items():
        if name == "num_nodes":
            continue
        deltas[name] = float(getattr(o, name) - value)
    return ComparisonReport(baseline=b, optimized=o, deltas=deltas)
