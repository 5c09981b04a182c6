"""Baseband Monte Carlo of Walsh code-domain multiplexing.

Each channel's bits become levels ``+/-A``, are chopped by the channel's
Walsh waveform, summed with the other channels, corrupted by white Gaussian
noise, and recovered by correlating each bit period against the channel's
own waveform. Decisions threshold at 0 V.

Randomness comes from one root seed split into Philox substreams keyed by
``(purpose, channel)`` for bits and ``(purpose, block)`` for noise, so the
result does not depend on how blocks are spread over workers.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .walsh import (
    EdgeModel,
    IndexRange,
    ShapeMismatch,
    WalshWaveform,
    realize_waveform,
    u_factor,
    walsh_code,
)

__all__ = [
    "BLOCK_BITS",
    "ConfigError",
    "MemoryBudgetExceeded",
    "ChannelSpec",
    "LinkConfig",
    "TrialRecord",
    "ChannelResult",
    "RunSummary",
    "dbm_to_watts",
    "substream",
    "generate_bits",
    "encode_amplitude",
    "noise_sigma",
    "modulate_channel",
    "combine_and_add_noise",
    "reconstruct_bit",
    "reconstruct_bits",
    "run_link",
    "load_link_config",
]

# Bits per noise substream; fixed so results are independent of worker count.
BLOCK_BITS = 64

PURPOSE_BITS = 0
PURPOSE_NOISE = 1


class ConfigError(ValueError):
    """Invalid or unparseable configuration."""


class MemoryBudgetExceeded(RuntimeError):
    """A single streaming block does not fit in the configured memory budget."""


def _ns(seconds: float) -> float:
    # 15 significant digits hide the last-ulp noise of the unit change; dividing by 1e9 on the way back keeps
    # s -> ns -> s a fixed point after the first round trip
    return float(f"{seconds * 1e9:.15g}")


def dbm_to_watts(dbm: float | None) -> float:
    if dbm is None or dbm == -math.inf:
        return 0.0
    return 10.0 ** (dbm / 10.0) * 1e-3


@dataclass(frozen=True)
class ChannelSpec:
    """One multiplexed channel.

    ``signal_spectral_density_dbm`` is the power of the channel's
    transmission peak as read in the resolution bandwidth (``S1`` or
    ``S2``). ``transmission_magnitude`` multiplies the amplitude on
    top of that and defaults to 1, i.e. the measured peak already includes
    the bridge transmission.
    """

    code_index: int
    transmission_magnitude: float = 1.0
    signal_spectral_density_dbm: float | None = -50.1
    delay: float = 0.0

    def __post_init__(self):
        if int(self.code_index) != self.code_index or self.code_index < 1:
            raise ConfigError(f"code_index must be an integer >= 1, got {self.code_index!r}")
        if not 0.0 <= self.transmission_magnitude <= 1.0:
            raise ConfigError("transmission_magnitude must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "code_index": int(self.code_index),
            "transmission_magnitude": self.transmission_magnitude,
            "signal_spectral_density_dbm": self.signal_spectral_density_dbm,
            "delay_ns": _ns(self.delay),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelSpec":
        data = _strict(data, {"code_index", "transmission_magnitude", "signal_spectral_density_dbm", "delay_ns"},
                       required={"code_index"}, where="channel")
        kwargs = {k: v for k, v in data.items() if k != "delay_ns"}
        if "delay_ns" in data:
            kwargs["delay"] = float(data["delay_ns"]) / 1e9
        return cls(**kwargs)


@dataclass(frozen=True)
class LinkConfig:
    """Full description of one multiplexing experiment (SI units throughout).

    ``chips`` is the chip count used to realise the Walsh waveforms; ``None``
    picks the smallest power of two above the largest code index.
    ``noise_spectral_density_dbm = None`` turns noise off.
    """

    channels: tuple[ChannelSpec, ...]
    walsh_period: float = 10e-6
    switching_time: float = 15e-9
    sample_interval: float = 2.5e-9
    noise_spectral_density_dbm: float | None = -90.4
    resolution_bandwidth: float = 50e3
    line_impedance: float = 50.0
    bit_count: int = 100_000
    seed: int = 0
    attenuation_db: float = 0.0
    combiner_loss_db: float = 0.0
    chips: int | None = None
    edge_model: EdgeModel = EdgeModel.BLANKING

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "edge_model", EdgeModel(self.edge_model))
        if not self.channels:
            raise ConfigError("at least one channel is required")
        codes = [ch.code_index for ch in self.channels]
        if len(set(codes)) != len(codes):
            raise ConfigError(f"code_index values must be distinct, got {codes}")
        if int(self.bit_count) != self.bit_count or self.bit_count < 1:
            raise ConfigError("bit_count must be a positive integer")
        if not (self.walsh_period > 0 and self.sample_interval > 0 and self.resolution_bandwidth > 0
                and self.line_impedance > 0 and self.switching_time >= 0):
            raise ConfigError("periods, bandwidth and impedance must be positive")
        if self.chips is not None and max(codes) >= self.chips:
            raise ConfigError(f"chips={self.chips} cannot carry code {max(codes)}")
        if self.walsh_period / self.sample_interval < 4 * self.chip_count * (1 - 1e-9):
            raise ConfigError("walsh_period / sample_interval must be at least 4 * chips")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")

    @property
    def chip_count(self) -> int:
        if self.chips is not None:
            return int(self.chips)
        top = max(ch.code_index for ch in self.channels)
        return 1 << max(1, top.bit_length())

    @cached_property
    def waveforms(self) -> tuple[WalshWaveform, ...]:
        return tuple(
            realize_waveform(
                walsh_code(ch.code_index, self.chip_count),
                self.walsh_period,
                self.switching_time,
                self.sample_interval,
                self.edge_model,
            )
            for ch in self.channels
        )

    @property
    def samples_per_bit(self) -> int:
        return self.waveforms[0].n_samples

    @property
    def noise_density(self) -> float:
        """Noise spectral density in W/Hz (power in the resolution bandwidth over that bandwidth)."""
        return dbm_to_watts(self.noise_spectral_density_dbm) / self.resolution_bandwidth

    def with_codes(self, *codes: int) -> "LinkConfig":
        channels = tuple(replace(ch, code_index=c) for ch, c in zip(self.channels, codes, strict=True))
        return replace(self, channels=channels)

    def to_dict(self) -> dict:
        return {
            "channels": [ch.to_dict() for ch in self.channels],
            "walsh_period_ns": _ns(self.walsh_period),
            "switching_time_ns": _ns(self.switching_time),
            "sample_interval_ns": _ns(self.sample_interval),
            "noise_spectral_density_dbm": self.noise_spectral_density_dbm,
            "resolution_bandwidth_hz": self.resolution_bandwidth,
            "line_impedance_ohm": self.line_impedance,
            "bit_count": int(self.bit_count),
            "seed": int(self.seed),
            "attenuation_db": self.attenuation_db,
            "combiner_loss_db": self.combiner_loss_db,
            "chips": self.chips,
            "edge_model": self.edge_model.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinkConfig":
        data = _strict(data, _LINK_KEYS, required={"channels"}, where="link config")
        if not isinstance(data["channels"], list):
            raise ConfigError("channels must be a list")
        kwargs = {"channels": tuple(ChannelSpec.from_dict(ch) for ch in data["channels"])}
        for key, value in data.items():
            if key == "channels":
                continue
            name, scale = _LINK_KEYS[key]
            kwargs[name] = value if scale is None or value is None else float(value) / scale
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


# JSON key -> (field, divisor to SI); dividing keeps s -> ns -> s a fixed point.
_LINK_KEYS = {
    "channels": ("channels", None),
    "walsh_period_ns": ("walsh_period", 1e9),
    "switching_time_ns": ("switching_time", 1e9),
    "sample_interval_ns": ("sample_interval", 1e9),
    "noise_spectral_density_dbm": ("noise_spectral_density_dbm", None),
    "resolution_bandwidth_hz": ("resolution_bandwidth", 1.0),
    "line_impedance_ohm": ("line_impedance", 1.0),
    "bit_count": ("bit_count", None),
    "seed": ("seed", None),
    "attenuation_db": ("attenuation_db", None),
    "combiner_loss_db": ("combiner_loss_db", None),
    "chips": ("chips", None),
    "edge_model": ("edge_model", None),
}


def _strict(data, allowed, required=(), where="config") -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {sorted(unknown)}")
    missing = set(required) - set(data)
    if missing:
        raise ConfigError(f"missing field(s) in {where}: {sorted(missing)}")
    return data


def load_link_config(path) -> LinkConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return LinkConfig.from_dict(data)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under root ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


def generate_bits(count: int, stream: np.random.Generator) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    return stream.integers(0, 2, size=count, dtype=np.uint8)


def encode_amplitude(spec: ChannelSpec, config: LinkConfig) -> float:
    """Received level ``|T_ch| * A`` for one channel, in volts.

    ``sqrt(Z0 * S1)`` with ``S1`` the peak power in the resolution bandwidth,
    scaled by the transmission magnitude, attenuation and combiner loss.
    """
    power = dbm_to_watts(spec.signal_spectral_density_dbm)
    loss = 10.0 ** (-(config.attenuation_db + config.combiner_loss_db) / 20.0)
    return spec.transmission_magnitude * math.sqrt(config.line_impedance * power) * loss


def noise_sigma(config: LinkConfig, dt: float) -> float:
    """Per-sample noise standard deviation ``sqrt(Z0 * S / dt)`` for white noise of density ``S``."""
    return math.sqrt(config.line_impedance * config.noise_density / dt)


def modulate_channel(levels, waveform: WalshWaveform, delay: float = 0.0) -> np.ndarray:
    """Concatenate ``level_k * W(t)`` over bits, delayed by a circular sample shift."""
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1:
        raise ShapeMismatch("levels must be one-dimensional")
    series = np.outer(levels, waveform.samples).ravel()
    shift = int(round(delay / waveform.dt))
    return np.roll(series, shift) if shift else series


def combine_and_add_noise(series_list, config: LinkConfig, stream: np.random.Generator | None, dt: float):
    """Pointwise sum of the channel series plus white noise sampled at ``dt``."""
    series_list = [np.asarray(s, dtype=float) for s in series_list]
    if len({s.shape for s in series_list}) != 1:
        raise ShapeMismatch("channel series must have equal lengths")
    total = np.sum(series_list, axis=0)
    sigma = noise_sigma(config, dt)
    if sigma > 0:
        total = total + sigma * stream.standard_normal(total.shape)
    return total


def reconstruct_bit(series, waveform: WalshWaveform, k: int) -> float:
    """Correlate bit period ``k`` (0-based) against ``waveform``, normalised by the period."""
    series = np.asarray(series, dtype=float)
    n = waveform.n_samples
    if not 0 <= k < series.size // n:
        raise IndexRange(f"bit {k} outside run of {series.size // n} bits")
    return float(series[k * n:(k + 1) * n] @ waveform.samples) / n


def reconstruct_bits(series, waveform: WalshWaveform) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    n = waveform.n_samples
    if series.size % n:
        raise ShapeMismatch("series length is not a whole number of bit periods")
    return series.reshape(-1, n) @ waveform.samples / n


@dataclass(frozen=True)
class TrialRecord:
    channel: int
    bit_index: int
    sent_bit: int
    analog_reconstruction: float
    decided_bit: int


@dataclass
class ChannelResult:
    channel: int
    code_index: int
    faults: int
    bit_count: int
    infidelity: float
    ci95: tuple[float, float]
    u: float
    predicted_infidelity: float

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "code_index": self.code_index,
            "faults": self.faults,
            "bit_count": self.bit_count,
            "infidelity": self.infidelity,
            "ci95": list(self.ci95),
            "u": self.u,
            "predicted_infidelity": self.predicted_infidelity,
        }


@dataclass
class RunSummary:
    config: LinkConfig
    channels: list[ChannelResult]
    wall_time: float
    blocks: int
    bits: np.ndarray | None = field(default=None, repr=False)
    reconstructions: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "channels": [ch.to_dict() for ch in self.channels],
            "blocks": self.blocks,
            "wall_time_s": self.wall_time,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def trial_records(self):
        if self.bits is None:
            raise ValueError("run was made without record_trials=True")
        for q in range(self.bits.shape[0]):
            for k in range(self.bits.shape[1]):
                a = float(self.reconstructions[q, k])
                yield TrialRecord(q, k, int(self.bits[q, k]), a, int(a > 0))

    def write_trials_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channel", "k", "sent", "analog", "decided"])
            for r in self.trial_records():
                writer.writerow([r.channel, r.bit_index, r.sent_bit, repr(r.analog_reconstruction), r.decided_bit])


class _Run:
    """Per-run state shared read-only by block workers."""

    def __init__(self, config: LinkConfig):
        self.config = config
        self.waveforms = config.waveforms
        self.spb = config.samples_per_bit
        self.total = config.bit_count * self.spb
        dt = self.waveforms[0].dt
        self.sigma = noise_sigma(config, dt)
        self.bits = np.stack([
            generate_bits(config.bit_count, substream(config.seed, PURPOSE_BITS, q))
            for q in range(len(config.channels))
        ])
        amps = np.array([encode_amplitude(ch, config) for ch in config.channels])
        self.levels = (2.0 * self.bits - 1.0) * amps[:, None]
        self.shifts = [int(round(ch.delay / dt)) % self.total for ch in config.channels]
        self.reference = np.stack([w.samples for w in self.waveforms], axis=1)

    def _segment(self, q: int, start: int, stop: int) -> np.ndarray:
        w = self.waveforms[q].samples
        shift = self.shifts[q]
        if shift == 0:
            return self.levels[q, start:stop, None] * w
        src = (np.arange(start * self.spb, stop * self.spb) - shift) % self.total
        return (self.levels[q, src // self.spb] * w[src % self.spb]).reshape(stop - start, self.spb)

    def block(self, b: int) -> np.ndarray:
        start = b * BLOCK_BITS
        stop = min(start + BLOCK_BITS, self.config.bit_count)
        trace = np.zeros((stop - start, self.spb))
        for q in range(len(self.waveforms)):
            trace += self._segment(q, start, stop)
        if self.sigma > 0:
            trace += self.sigma * substream(self.config.seed, PURPOSE_NOISE, b).standard_normal(trace.shape)
        return trace @ self.reference / self.spb


def run_link(
    config: LinkConfig,
    workers: int = 1,
    record_trials: bool = False,
    memory_budget: float | None = None,
) -> RunSummary:
    """Run the full multiplexing pipeline and count faults per channel.

    The trace is streamed in blocks of ``BLOCK_BITS`` bits. ``memory_budget``
    (bytes) bounds the working set of one block per worker; if a single
    block cannot fit, :class:`MemoryBudgetExceeded` is raised before any
    work is done.
    """
    from .analysis import binomial_ci, predicted_infidelity_for

    t0 = time.perf_counter()
    run = _Run(config)
    n_blocks = -(-config.bit_count // BLOCK_BITS)
    workers = max(1, int(workers))
    if memory_budget is not None:
        block_bytes = 8 * BLOCK_BITS * run.spb * (len(config.channels) + 2)
        if block_bytes * workers > memory_budget:
            raise MemoryBudgetExceeded(
                f"one block needs {block_bytes * workers} bytes with {workers} worker(s); budget is {memory_budget:.0f}"
            )
    if workers == 1:
        parts = [run.block(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run.block, range(n_blocks)))
    recon = np.concatenate(parts, axis=0).T  # (channel, bit)

    decided = recon > 0
    results = []
    for q, ch in enumerate(config.channels):
        faults = int(np.count_nonzero(decided[q] != run.bits[q].astype(bool)))
        u = u_factor(run.waveforms[q])
        results.append(ChannelResult(
            channel=q,
            code_index=ch.code_index,
            faults=faults,
            bit_count=config.bit_count,
            infidelity=faults / config.bit_count,
            ci95=binomial_ci(faults, config.bit_count),
            u=u,
            predicted_infidelity=predicted_infidelity_for(config, q, u),
        ))
    return RunSummary(
        config=config,
        channels=results,
        wall_time=time.perf_counter() - t0,
        blocks=n_blocks,
        bits=run.bits if record_trials else None,
        reconstructions=recon if record_trials else None,
    )
