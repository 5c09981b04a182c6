"""Sequency-ordered Walsh codes and their finite-bandwidth realizations."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DEFAULT_CHIPS",
    "EdgeModel",
    "WalshError",
    "BadLength",
    "IndexRange",
    "ResolutionTooCoarse",
    "ShapeMismatch",
    "WalshCode",
    "WalshWaveform",
    "walsh_code",
    "transitions_per_period",
    "transition_chips",
    "realize_waveform",
    "u_factor",
    "inner_product",
]

DEFAULT_CHIPS = 128

# Slack, in sample units, for deciding whether a sample midpoint sits on a window edge.
_EDGE_EPS = 1e-9


class WalshError(ValueError):
    pass


class BadLength(WalshError):
    pass


class IndexRange(WalshError, IndexError):
    pass


class ResolutionTooCoarse(WalshError):
    pass


class ShapeMismatch(WalshError):
    pass


class EdgeModel(str, enum.Enum):
    BLANKING = "blanking"
    LINEAR_RAMP = "linear_ramp"


@dataclass(frozen=True, eq=False)
class WalshCode:
    index: int
    chips: np.ndarray

    def __len__(self) -> int:
        return len(self.chips)

    def __eq__(self, other):
        if not isinstance(other, WalshCode):
            return NotImplemented
        return self.index == other.index and np.array_equal(self.chips, other.chips)

    def __hash__(self):
        return hash((self.index, self.chips.tobytes()))


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse(x: int, bits: int) -> int:
    return int(format(x, f"0{bits}b")[::-1], 2) if bits else 0


def walsh_code(index: int, chips: int = DEFAULT_CHIPS) -> WalshCode:
    """Walsh function with exactly ``index`` sign changes over ``chips`` chips.

    The natural-order Hadamard row is ``bitrev(gray(index))``; entry ``c`` of
    Hadamard row ``r`` is ``(-1)**popcount(r & c)``.
    """
    if not isinstance(chips, (int, np.integer)) or not _is_power_of_two(int(chips)):
        raise BadLength(f"chips must be a power of two, got {chips!r}")
    if not 0 <= index < chips:
        raise IndexRange(f"index {index} outside [0, {chips})")
    bits = int(chips).bit_length() - 1
    row = _bit_reverse(index ^ (index >> 1), bits)
    masked = np.arange(chips) & row
    parity = np.zeros(chips, dtype=np.int64)
    for b in range(bits):
        parity ^= (masked >> b) & 1
    return WalshCode(int(index), np.where(parity, -1, 1).astype(np.int8))


def transition_chips(code: WalshCode) -> np.ndarray:
    """Chip boundaries at which the code changes sign, with 0 marking the wraparound."""
    c = code.chips
    return np.flatnonzero(c != np.roll(c, 1))


def transitions_per_period(code: WalshCode) -> int:
    """Sign changes per period, counting the wrap from the last chip to the first."""
    return int(transition_chips(code).size)


@dataclass(frozen=True, eq=False)
class WalshWaveform:
    """Sampled realization of a Walsh code over one period.

    Sample ``i`` represents the cell centred at ``(i + 0.5) * dt`` where
    ``dt = period / len(samples)``.
    """

    code: WalshCode
    period: float
    switching_time: float
    sample_interval: float
    samples: np.ndarray
    edge_model: EdgeModel = EdgeModel.BLANKING

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)

    @property
    def dt(self) -> float:
        return self.period / self.samples.size

    def times(self) -> np.ndarray:
        return (np.arange(self.n_samples) + 0.5) * self.dt

    def write_csv(self, path) -> None:
        rows = ["time_ns,value"]
        rows += [f"{float(t * 1e9)!r},{float(v)!r}" for t, v in zip(self.times(), self.samples)]
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def realize_waveform(
    code: WalshCode,
    period: float,
    switching_time: float = 0.0,
    sample_interval: float | None = None,
    edge_model: EdgeModel | str = EdgeModel.BLANKING,
) -> WalshWaveform:
    """Sample ``code`` with finite switching edges.

    Every transition, including the wraparound at ``t = 0``, is replaced by a
    window of width ``switching_time`` centred on the chip boundary. The
    window is half-open, ``[t_c - tau/2, t_c + tau/2)``, so a grid whose
    spacing divides ``tau`` blanks exactly ``tau`` of signal. Blanking zeroes
    samples in the window; LinearRamp interpolates between the two levels.

    Raises
    ------
    ResolutionTooCoarse
        If ``sample_interval > switching_time / 2`` for a nonzero switching
        time, if the period holds fewer samples than chips, or if two
        transition windows overlap.
    """
    edge_model = EdgeModel(edge_model)
    n_chips = len(code)
    if sample_interval is None:
        sample_interval = period / n_chips
    if not period > 0 or not sample_interval > 0 or switching_time < 0:
        raise ResolutionTooCoarse("period and sample_interval must be positive, switching_time non-negative")
    if switching_time > 0 and sample_interval > switching_time / 2 * (1 + 1e-12):
        raise ResolutionTooCoarse(
            f"sample_interval {sample_interval:.3g} s exceeds half the switching time {switching_time:.3g} s"
        )
    n = int(round(period / sample_interval))
    if n < n_chips:
        raise ResolutionTooCoarse(f"{n} samples cannot resolve {n_chips} chips")

    pos = np.arange(n) + 0.5  # sample midpoints in units of dt
    chip_of_sample = np.minimum((pos * n_chips / n).astype(np.int64), n_chips - 1)
    samples = code.chips[chip_of_sample].astype(float)
    if switching_time == 0:
        return WalshWaveform(code, period, 0.0, sample_interval, samples, edge_model)

    half = switching_time / 2 / (period / n)
    centers = transition_chips(code) * (n / n_chips)
    if centers.size > 1:
        gaps = np.diff(np.concatenate([centers, [centers[0] + n]]))
        if np.min(gaps) < 2 * half - _EDGE_EPS:
            raise ResolutionTooCoarse("switching time exceeds the spacing between transitions")
    for c in centers:
        d = (pos - c + n / 2) % n - n / 2  # signed periodic distance to the edge
        inside = (d >= -half - _EDGE_EPS) & (d < half - _EDGE_EPS)
        if edge_model is EdgeModel.BLANKING:
            samples[inside] = 0.0
        else:
            after = float(code.chips[int(round(c * n_chips / n)) % n_chips])
            samples[inside] = after * d[inside] / half
    return WalshWaveform(code, period, float(switching_time), sample_interval, samples, edge_model)


def u_factor(waveform: WalshWaveform) -> float:
    """Mean square of the waveform over one period (1 for an ideal code)."""
    return float(np.mean(waveform.samples**2))


def inner_product(a: WalshWaveform, b: WalshWaveform) -> float:
    """Period-normalised overlap ``(1/t_w) * sum(a_i * b_i * dt)``."""
    if a.n_samples != b.n_samples or not np.isclose(a.dt, b.dt, rtol=1e-12, atol=0):
        raise ShapeMismatch(f"waveforms differ: {a.n_samples} vs {b.n_samples} samples")
    return float(np.mean(a.samples * b.samples))
