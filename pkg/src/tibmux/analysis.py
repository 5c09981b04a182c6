"""Gaussian error model for binary signalling and Monte Carlo comparison tools."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import special, stats

from .link import LinkConfig, RunSummary, dbm_to_watts, encode_amplitude, run_link
from .walsh import realize_waveform, transitions_per_period, u_factor, walsh_code

__all__ = [
    "GaussianChannelMoments",
    "PredictionCurve",
    "PermutationResult",
    "GAIN_CALIBRATION_NOTE",
    "channel_moments",
    "infidelity_from_moments",
    "predicted_infidelity",
    "predicted_infidelity_for",
    "power_for_infidelity",
    "attenuation_for_infidelity",
    "binomial_ci",
    "code_u",
    "approximate_u",
    "prediction_curve",
    "permutation_sweep",
    "ComparisonRow",
    "compare_power_grid",
    "derived_seed",
]

GAIN_CALIBRATION_NOTE = (
    "Power is referred to the bridge input through gain_calibration_db, an "
    "uncalibrated receiver gain; absolute power placement holds only up to that constant."
)


@dataclass(frozen=True)
class GaussianChannelMoments:
    mean: float
    std_dev: float

    def __post_init__(self):
        if not self.std_dev > 0:
            raise ValueError("std_dev must be positive")


def channel_moments(config: LinkConfig, channel: int, u: float) -> GaussianChannelMoments:
    """Mean and spread of one channel's analog reconstruction.

    mean = |T|*A*U and variance = S*Z0*U/t_w, with S the noise density in W/Hz.
    """
    if not 0 < u <= 1:
        raise ValueError("u must lie in (0, 1]")
    mean = encode_amplitude(config.channels[channel], config) * u
    var = config.noise_density * config.line_impedance * u / config.walsh_period
    return GaussianChannelMoments(mean, math.sqrt(var))


def infidelity_from_moments(moments: GaussianChannelMoments) -> float:
    """Probability mass of the Gaussian below the 0 V threshold."""
    return 0.5 * special.erfc(moments.mean / (math.sqrt(2.0) * moments.std_dev))


def predicted_infidelity(
    signal_dbm: float,
    noise_dbm: float,
    bandwidth: float,
    walsh_period: float,
    u: float = 1.0,
    attenuation_db: float = 0.0,
) -> float:
    """Bit error rate ``erfc(sqrt(SNR * B_w * t_w * U / 2)) / 2``.

    ``signal_dbm`` and ``noise_dbm`` are both powers read in the resolution
    bandwidth ``bandwidth``. Underflows to 0 at very high SNR.
    """
    if not 0 < u <= 1:
        raise ValueError("u must lie in (0, 1]")
    if not walsh_period > 0:
        raise ValueError("walsh_period must be positive")
    snr = 10.0 ** ((signal_dbm - noise_dbm - attenuation_db) / 10.0)
    return float(0.5 * special.erfc(math.sqrt(snr * bandwidth * walsh_period * u / 2.0)))


def predicted_infidelity_for(config: LinkConfig, channel: int, u: float | None = None) -> float:
    """Prediction for one configured channel, with ``u`` defaulting to its waveform's U."""
    spec = config.channels[channel]
    if u is None:
        u = u_factor(config.waveforms[channel])
    if dbm_to_watts(spec.signal_spectral_density_dbm) == 0 or spec.transmission_magnitude == 0:
        return 0.5
    if dbm_to_watts(config.noise_spectral_density_dbm) == 0:
        return 0.0
    attenuation = config.attenuation_db + config.combiner_loss_db - 20.0 * math.log10(spec.transmission_magnitude)
    return predicted_infidelity(
        spec.signal_spectral_density_dbm,
        config.noise_spectral_density_dbm,
        config.resolution_bandwidth,
        config.walsh_period,
        u,
        attenuation,
    )


def _erfc_argument_squared(target: float) -> float:
    if not 0 < target < 0.5:
        raise ValueError("target infidelity must lie in (0, 0.5)")
    return float(special.erfcinv(2.0 * target)) ** 2


def power_for_infidelity(
    target: float,
    noise_dbm: float,
    bandwidth: float,
    walsh_period: float,
    u: float = 1.0,
    gain_calibration_db: float = 0.0,
) -> float:
    """Bridge-input power (W) at which the prediction equals ``target``."""
    snr = 2.0 * _erfc_argument_squared(target) / (bandwidth * walsh_period * u)
    signal_dbm = noise_dbm + 10.0 * math.log10(snr)
    return dbm_to_watts(signal_dbm - gain_calibration_db)


def attenuation_for_infidelity(config: LinkConfig, channel: int, target: float, u: float | None = None) -> float:
    """Value of ``config.attenuation_db`` that puts ``channel``'s prediction at ``target``."""
    spec = config.channels[channel]
    if u is None:
        u = u_factor(config.waveforms[channel])
    snr = 2.0 * _erfc_argument_squared(target) / (config.resolution_bandwidth * config.walsh_period * u)
    full = (spec.signal_spectral_density_dbm - config.noise_spectral_density_dbm
            + 20.0 * math.log10(spec.transmission_magnitude) - config.combiner_loss_db)
    return full - 10.0 * math.log10(snr)


def binomial_ci(faults: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Clopper-Pearson interval for a binomial proportion."""
    if not 0 <= faults <= trials or trials < 1:
        raise ValueError("need 0 <= faults <= trials and trials >= 1")
    alpha = 1.0 - level
    low = 0.0 if faults == 0 else float(stats.beta.ppf(alpha / 2, faults, trials - faults + 1))
    high = 1.0 if faults == trials else float(stats.beta.ppf(1 - alpha / 2, faults + 1, trials - faults))
    return low, high


def code_u(config: LinkConfig, code_index: int) -> float:
    w = realize_waveform(
        walsh_code(code_index, config.chip_count),
        config.walsh_period,
        config.switching_time,
        config.sample_interval,
        config.edge_model,
    )
    return u_factor(w)


def approximate_u(config: LinkConfig) -> float:
    """``1 - k*tau/t_w`` with ``k`` the mean transition count of the configured codes."""
    k = np.mean([transitions_per_period(walsh_code(ch.code_index, config.chip_count)) for ch in config.channels])
    return 1.0 - k * config.switching_time / config.walsh_period


@dataclass
class PredictionCurve:
    powers: np.ndarray
    infidelities: np.ndarray
    walsh_period: float
    gain_calibration_db: float
    u: float
    approximate: bool = False

    def metadata(self) -> dict:
        return {
            "walsh_period_ns": self.walsh_period * 1e9,
            "gain_calibration_db": self.gain_calibration_db,
            "u": self.u,
            "u_approximation": self.approximate,
            "note": GAIN_CALIBRATION_NOTE,
        }


def prediction_curve(
    config: LinkConfig,
    powers,
    gain_calibration_db: float = 0.0,
    approximate: bool = False,
) -> PredictionCurve:
    """Predicted infidelity versus bridge-input power.

    Each power (W) is referred to the receiver by ``gain_calibration_db``;
    noise, bandwidth, period and attenuation come from ``config``. U is the
    mean of the exact per-code U over the configured channels, or the
    transition-count estimate when ``approximate`` is set.
    """
    powers = np.asarray(powers, dtype=float)
    if powers.size == 0 or np.any(np.diff(powers) <= 0) or np.any(powers <= 0):
        raise ValueError("powers must be a non-empty, positive, increasing grid")
    if approximate:
        u = approximate_u(config)
    else:
        u = float(np.mean([code_u(config, ch.code_index) for ch in config.channels]))
    signal_dbm = 10.0 * np.log10(powers / 1e-3) + gain_calibration_db
    infid = np.array([
        predicted_infidelity(s, config.noise_spectral_density_dbm, config.resolution_bandwidth,
                             config.walsh_period, u, config.attenuation_db + config.combiner_loss_db)
        for s in signal_dbm
    ])
    return PredictionCurve(powers, infid, config.walsh_period, gain_calibration_db, u, approximate)


@dataclass
class PermutationResult:
    codes: tuple[int, int]
    summary: RunSummary


def derived_seed(seed: int, *key: int) -> int:
    """64-bit child seed for a sub-run, stable under reordering of the other runs."""
    state = np.random.SeedSequence(seed, spawn_key=key).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


# spawn-key prefixes, disjoint from the link's own bit and noise purposes
_PURPOSE_PERMUTATION = 2
_PURPOSE_COMPARE = 3


def permutation_sweep(
    config: LinkConfig,
    bit_count: int | None = None,
    codes=(1, 2, 3, 4),
    workers: int = 1,
) -> list[PermutationResult]:
    """Run every ordered assignment of two distinct codes to the two channels."""
    if len(config.channels) != 2:
        raise ValueError("permutation sweep needs exactly two channels")
    out = []
    for n, m in itertools.permutations(codes, 2):
        cfg = replace(config.with_codes(n, m), seed=derived_seed(config.seed, _PURPOSE_PERMUTATION, n, m))
        if bit_count is not None:
            cfg = replace(cfg, bit_count=bit_count)
        out.append(PermutationResult((n, m), run_link(cfg, workers=workers)))
    return out


@dataclass(frozen=True)
class ComparisonRow:
    power: float
    walsh_period: float
    channel: int
    code_index: int
    predicted: float
    observed: float
    faults: int
    ci95: tuple[float, float]


def compare_power_grid(
    config: LinkConfig,
    powers,
    walsh_periods,
    gain_calibration_db: float = 0.0,
    workers: int = 1,
    memory_budget: float | None = None,
) -> list[ComparisonRow]:
    """Monte Carlo infidelity next to the prediction over a power by period grid.

    Every channel is driven at the same bridge-input power, referred to the
    receiver by ``gain_calibration_db``. Each grid point gets its own seed
    derived from ``config.seed`` and its grid position.
    """
    powers = np.asarray(powers, dtype=float)
    if powers.size == 0 or np.any(powers <= 0):
        raise ValueError("powers must be a non-empty positive grid")
    rows = []
    for i, tw in enumerate(walsh_periods):
        for j, p in enumerate(powers):
            dbm = 10.0 * math.log10(p / 1e-3) + gain_calibration_db
            cfg = replace(
                config,
                walsh_period=float(tw),
                channels=tuple(replace(ch, signal_spectral_density_dbm=dbm) for ch in config.channels),
                seed=derived_seed(config.seed, _PURPOSE_COMPARE, i, j),
            )
            summary = run_link(cfg, workers=workers, memory_budget=memory_budget)
            for res in summary.channels:
                rows.append(ComparisonRow(
                    power=float(p),
                    walsh_period=float(tw),
                    channel=res.channel,
                    code_index=res.code_index,
                    predicted=res.predicted_infidelity,
                    observed=res.infidelity,
                    faults=res.faults,
                    ci95=res.ci95,
                ))
    return rows
