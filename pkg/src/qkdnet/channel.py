"""BB84 link simulation: channel loss, photon detection, QBER and key rates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from ._validation import check_positive_int, check_real

DB_PER_NEPER = 10.0 / math.log(10.0)
QBER_NO_KEY = 0.5


class Medium(str, Enum):
    FIBER = "fiber"
    FREE_SPACE = "free_space"


@dataclass(frozen=True)
class ChannelParams:
    wavelength_nm: float = 1550.0
    fiber_loss_db_per_km: float = 0.2
    detector_efficiency: float = 0.10
    dark_count_prob: float = 1e-6
    mean_photon_number: float = 0.1
    pulses_per_measurement: int = 10_000
    pulse_rate_hz: float = 1e6
    misalignment_error: float = 0.05
    free_space_probability: float = 0.2
    visibility_km: float = 20.0
    error_correction_efficiency: float = 1.1
    # fraction of sifted bits disclosed for parameter estimation and dropped from the key
    security_sample_fraction: float = 0.1

    def __post_init__(self):
        check_real(self.wavelength_nm, "wavelength_nm", low=0, low_inclusive=False)
        check_real(self.fiber_loss_db_per_km, "fiber_loss_db_per_km", low=0)
        check_real(self.detector_efficiency, "detector_efficiency", low=0, high=1, low_inclusive=False)
        check_real(self.dark_count_prob, "dark_count_prob", low=0, high=0.5, high_inclusive=False)
        check_real(self.mean_photon_number, "mean_photon_number", low=0, low_inclusive=False)
        check_positive_int(self.pulses_per_measurement, "pulses_per_measurement")
        check_real(self.pulse_rate_hz, "pulse_rate_hz", low=0, low_inclusive=False)
        check_real(self.misalignment_error, "misalignment_error", low=0, high=0.5, high_inclusive=False)
        check_real(self.free_space_probability, "free_space_probability", low=0, high=1)
        check_real(self.visibility_km, "visibility_km", low=0, low_inclusive=False)
        check_real(self.error_correction_efficiency, "error_correction_efficiency", low=1)
        check_real(
            self.security_sample_fraction, "security_sample_fraction",
            low=0, high=1, low_inclusive=False, high_inclusive=False,
        )

    @property
    def dark_count_total(self):
        # two detectors, one per bit value
        return 2.0 * self.dark_count_prob


@dataclass(frozen=True)
class ChannelMetrics:
    distance_km: float
    loss_db: float
    transmittance: float
    qber: float
    sifted_rate_bps: float
    secure_key_rate_bps: float
    medium: Medium
    pulses: int = 0
    clicks: int = 0
    dark_clicks: int = 0
    sifted: int = 0
    errors: int = 0

    @property
    def has_key(self):
        return self.sifted > 0 and self.secure_key_rate_bps > 0

    @property
    def dark_click_fraction(self):
        return self.dark_clicks / self.clicks if self.clicks else 0.0

    def edge_record(self):
        rec = asdict(self)
        rec["medium"] = Medium(self.medium).value
        rec["key_rate_bps"] = rec.pop("secure_key_rate_bps")
        return rec

    @classmethod
    def from_edge_record(cls, rec):
        fields = dict(
            distance_km=float(rec["distance_km"]),
            loss_db=float(rec["loss_db"]),
            transmittance=float(rec["transmittance"]),
            qber=float(rec["qber"]),
            sifted_rate_bps=float(rec["sifted_rate_bps"]),
            secure_key_rate_bps=float(rec["key_rate_bps"]),
            medium=Medium(rec["medium"]),
        )
        for name in ("pulses", "clicks", "dark_clicks", "sifted", "errors"):
            fields[name] = int(rec.get(name, 0))
        return cls(**fields)


def binary_entropy(p):
    """h2(p) in bits; 0 at the endpoints."""
    p = np.asarray(p, dtype=np.float64)
    inside = (p > 0) & (p < 1)
    q = np.where(inside, p, 0.5)
    out = np.where(inside, -q * np.log2(q) - (1 - q) * np.log2(1 - q), 0.0)
    return float(out) if out.ndim == 0 else out


def secure_fraction(qber, error_correction_efficiency=1.1):
    """Asymptotic BB84 fraction ``max(0, 1 - (1 + f) h2(Q))``."""
    return max(0.0, 1.0 - (1.0 + error_correction_efficiency) * binary_entropy(qber))


def kruse_attenuation_db_per_km(wavelength_nm, visibility_km):
    """Atmospheric attenuation from the Kruse visibility model."""
    if visibility_km > 50:
        q = 1.6
    elif visibility_km > 6:
        q = 1.3
    else:
        q = 0.585 * visibility_km ** (1.0 / 3.0)
    sigma_per_km = (3.91 / visibility_km) * (wavelength_nm / 550.0) ** (-q)
    return DB_PER_NEPER * sigma_per_km


def link_loss(distance_km, medium, p: ChannelParams) -> float:
    distance_km = check_real(distance_km, "distance_km")
    if distance_km < 0:
        raise ValueError(f"distance must be non-negative, got {distance_km}")
    if Medium(medium) is Medium.FIBER:
        return p.fiber_loss_db_per_km * distance_km
    return kruse_attenuation_db_per_km(p.wavelength_nm, p.visibility_km) * distance_km


def transmittance(loss_db):
    return 10.0 ** (-loss_db / 10.0)


def signal_detection_probability(distance_km, medium, p: ChannelParams) -> float:
    eta = transmittance(link_loss(distance_km, medium, p))
    return -math.expm1(-p.mean_photon_number * eta * p.detector_efficiency)


def detection_probability(distance_km, medium, p: ChannelParams) -> float:
    """Probability that at least one detector clicks on a pulse."""
    p_signal = signal_detection_probability(distance_km, medium, p)
    p_dark = p.dark_count_total
    return p_signal + p_dark - p_signal * p_dark


def error_probability(distance_km, medium, p: ChannelParams) -> float:
    p_signal = signal_detection_probability(distance_km, medium, p)
    p_click = detection_probability(distance_km, medium, p)
    if p_click == 0:
        return QBER_NO_KEY
    return (0.5 * p.dark_count_total + p.misalignment_error * p_signal) / p_click


def expected_metrics(distance_km, medium, p: ChannelParams) -> ChannelMetrics:
    """Infinite-pulse limit of :func:`simulate_bb84`."""
    loss = link_loss(distance_km, medium, p)
    p_click = detection_probability(distance_km, medium, p)
    qber = error_probability(distance_km, medium, p)
    sifted_rate = p.pulse_rate_hz * 0.5 * p_click
    secure = sifted_rate * (1 - p.security_sample_fraction) * secure_fraction(qber, p.error_correction_efficiency)
    return ChannelMetrics(
        distance_km=float(distance_km),
        loss_db=loss,
        transmittance=transmittance(loss),
        qber=qber,
        sifted_rate_bps=sifted_rate,
        secure_key_rate_bps=secure,
        medium=Medium(medium),
    )


def simulate_bb84(distance_km, medium, p: ChannelParams, seed) -> ChannelMetrics:
    """Monte-Carlo BB84 run over ``p.pulses_per_measurement`` weak coherent pulses.

    Each pulse carries a Poisson number of photons; each photon independently
    survives the channel and is detected with probability
    ``transmittance * detector_efficiency``. Dark counts are injected per pulse,
    both parties pick bases uniformly and only matching-basis clicks are kept.
    The QBER is the discordant fraction of that sifted sample. If nothing is
    sifted the link carries no key and the QBER is reported as 0.5.
    """
    medium = Medium(medium)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = p.pulses_per_measurement
    loss = link_loss(distance_km, medium, p)
    eta = transmittance(loss)
    survive = eta * p.detector_efficiency

    photons = rng.poisson(p.mean_photon_number, n)
    u_signal = rng.random(n)
    u_dark = rng.random(n)
    alice_basis = rng.integers(0, 2, n)
    bob_basis = rng.integers(0, 2, n)
    u_error = rng.random(n)

    # P(at least one of k photons detected) = 1 - (1 - survive)^k
    if survive < 1:
        signal = u_signal < -np.expm1(photons * np.log1p(-survive))
    else:
        signal = photons > 0
    dark = u_dark < p.dark_count_total
    click = signal | dark
    sifted = click & (alice_basis == bob_basis)
    err = sifted & (u_error < error_probability(distance_km, medium, p))

    n_click = int(click.sum())
    n_sifted = int(sifted.sum())
    n_err = int(err.sum())
    n_dark_only = int((dark & ~signal).sum())
    sifted_rate = p.pulse_rate_hz * n_sifted / n
    if n_sifted == 0:
        qber, secure = QBER_NO_KEY, 0.0
    else:
        qber = n_err / n_sifted
        secure = sifted_rate * (1 - p.security_sample_fraction) * secure_fraction(qber, p.error_correction_efficiency)
    return ChannelMetrics(
        distance_km=float(distance_km),
        loss_db=loss,
        transmittance=eta,
        qber=qber,
        sifted_rate_bps=sifted_rate,
        secure_key_rate_bps=secure,
        medium=medium,
        pulses=n,
        clicks=n_click,
        dark_clicks=n_dark_only,
        sifted=n_sifted,
        errors=n_err,
    )


def edge_rng(seed, u, v, stream):
    """Independent generator for one link, keyed by the unordered pair."""
    a, b = (u, v) if u < v else (v, u)
    return np.random.default_rng([int(seed), stream, int(a), int(b)])


_MEDIUM_STREAM = 1
_BB84_STREAM = 2


def assign_medium(edge, p: ChannelParams, seed) -> Medium:
    u, v = edge
    draw = edge_rng(seed, u, v, _MEDIUM_STREAM).random()
    return Medium.FREE_SPACE if draw < p.free_space_probability else Medium.FIBER


def simulate_network(topology, p: ChannelParams, seed):
    """Attach BB84 metrics to every link of ``topology`` (returns a new topology)."""
    from .topology import pairwise_distance

    metrics = {}
    for u, v in topology.edges:
        medium = assign_medium((u, v), p, seed)
        metrics[(u, v)] = simulate_bb84(
            pairwise_distance(topology, u, v), medium, p, edge_rng(seed, u, v, _BB84_STREAM)
        )
    out = topology.with_edges(topology.edges, metrics)
    out.meta["channel"] = {"seed": int(seed), "params": asdict(p)}
    return out
