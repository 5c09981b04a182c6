"""Lumped-element model of the tunable inductor bridge (TIB).

Four SQUID-array inductors form a Wheatstone bridge between two matched
lines. One pair of arrays sees flux ``phi_sigma + phi_delta`` and the other
``phi_sigma - phi_delta``; the resulting imbalance sets the forward
transmission. Public flux arguments are in units of the flux quantum
``h/2e`` unless a function says otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import constants

__all__ = [
    "FLUX_QUANTUM",
    "REDUCED_FLUX_QUANTUM",
    "DB_FLOOR",
    "CURRENT_FLOOR_FRACTION",
    "DivergentInductance",
    "SearchFailed",
    "TibParams",
    "FluxBias",
    "TransmissionPoint",
    "OperatingPoints",
    "SweepMap",
    "squid_critical_current",
    "array_inductance",
    "arm_inductances",
    "bridge_transmission",
    "tib_transmission",
    "sweep_map",
    "find_operating_points",
]

FLUX_QUANTUM = constants.h / (2 * constants.e)
REDUCED_FLUX_QUANTUM = constants.hbar / (2 * constants.e)

# SQUID critical current is clamped at this fraction of its maximum 2*I0.
CURRENT_FLOOR_FRACTION = 1e-3
# |T|^2 display floor in dB; the balanced bridge has an exact zero.
DB_FLOOR = -80.0

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class DivergentInductance(ValueError):
    """Raised when a SQUID array is biased too close to frustration."""

    def __init__(self, message: str, arm: str | None = None):
        super().__init__(message)
        self.arm = arm


class SearchFailed(RuntimeError):
    """Raised when the operating-point search cannot bracket a maximum."""


@dataclass(frozen=True)
class TibParams:
    """Physical constants of one bridge.

    Attributes
    ----------
    junction_critical_current : float
        Critical current of a single Josephson junction, in amperes.
    squids_per_array : int
        Number of SQUIDs in series in each arm.
    geometric_inductance : float
        Flux-independent series inductance per array, in henries.
    line_impedance : float
        Characteristic impedance of the input and output lines, in ohms.
    """

    junction_critical_current: float = 6.5e-6
    squids_per_array: int = 20
    geometric_inductance: float = 0.0
    line_impedance: float = 50.0

    def __post_init__(self):
        if not self.junction_critical_current > 0:
            raise ValueError("junction_critical_current must be positive")
        if int(self.squids_per_array) != self.squids_per_array or self.squids_per_array < 1:
            raise ValueError("squids_per_array must be a positive integer")
        if not self.geometric_inductance >= 0:
            raise ValueError("geometric_inductance must be non-negative")
        if not self.line_impedance > 0:
            raise ValueError("line_impedance must be positive")

    @property
    def max_critical_current(self) -> float:
        return 2.0 * self.junction_critical_current

    @property
    def current_floor(self) -> float:
        return CURRENT_FLOOR_FRACTION * self.max_critical_current

    @property
    def min_inductance(self) -> float:
        """Array inductance at zero flux (the untuned, balanced value)."""
        return array_inductance(self, self.max_critical_current)


@dataclass(frozen=True)
class FluxBias:
    """Coil flux ``phi_sigma`` and bias-line flux ``phi_delta``, both in flux quanta."""

    phi_sigma: float
    phi_delta: float = 0.0

    def arm_fluxes(self) -> tuple[float, float]:
        return self.phi_sigma + self.phi_delta, self.phi_sigma - self.phi_delta


@dataclass(frozen=True)
class TransmissionPoint:
    frequency: float
    value: complex

    @property
    def power(self) -> float:
        return abs(self.value) ** 2

    @property
    def power_db(self) -> float:
        return _power_db(self.power)


@dataclass(frozen=True)
class OperatingPoints:
    """Bias settings for the three operation modes at one frequency.

    ``phi_delta_reflect`` is always 0: the bridge is balanced there.
    """

    frequency: float
    phi_delta_transmit: float
    phi_delta_invert: float
    phi_delta_reflect: float
    on_off_ratio_db: float
    phase_imbalance_deg: float
    transmit_power_db: float


def _power_db(power, floor_db: float = DB_FLOOR):
    floor = 10.0 ** (floor_db / 10.0)
    return 10.0 * np.log10(np.maximum(power, floor))


def squid_critical_current(i0, flux):
    """Critical current ``2*i0*|cos(flux / 2*phi0)|`` of a symmetric dc SQUID.

    ``flux`` is in webers here (not flux quanta); arrays are accepted.
    """
    return 2.0 * i0 * np.abs(np.cos(np.asarray(flux) / (2.0 * REDUCED_FLUX_QUANTUM)))


def array_inductance(params: TibParams, critical_current):
    """Series-array inductance ``L_geo + N_sq * phi0 / I_s``.

    Raises
    ------
    DivergentInductance
        If any critical current is at or below the clamp floor.
    """
    current = np.asarray(critical_current, dtype=float)
    if np.any(current <= params.current_floor):
        raise DivergentInductance(
            f"critical current at or below floor {params.current_floor:.3e} A"
        )
    result = params.geometric_inductance + params.squids_per_array * REDUCED_FLUX_QUANTUM / current
    return float(result) if result.ndim == 0 else result


def _clamped_arm(params: TibParams, flux_phi0):
    """Array inductance at ``flux_phi0`` with the critical current clamped; returns (l, clamped)."""
    current = squid_critical_current(params.junction_critical_current, np.asarray(flux_phi0) * FLUX_QUANTUM)
    clamped = current <= params.current_floor
    current = np.where(clamped, params.current_floor, current)
    inductance = params.geometric_inductance + params.squids_per_array * REDUCED_FLUX_QUANTUM / current
    return inductance, clamped


def arm_inductances(params: TibParams, bias: FluxBias) -> tuple[float, float]:
    """Inductances ``(l1, l2)`` of the two array pairs.

    ``l1`` is threaded by ``phi_sigma + phi_delta`` and ``l2`` by
    ``phi_sigma - phi_delta`` per SQUID.
    """
    out = []
    for arm, flux in zip(("l1", "l2"), bias.arm_fluxes()):
        current = squid_critical_current(params.junction_critical_current, flux * FLUX_QUANTUM)
        try:
            out.append(array_inductance(params, current))
        except DivergentInductance as exc:
            raise DivergentInductance(f"arm {arm} diverges at flux {flux:.6g} Phi0: {exc}", arm=arm) from None
    return out[0], out[1]


def bridge_transmission(l1, l2, frequency, z0=50.0):
    """Forward scattering parameter of the inductor bridge.

    ``T = i*w*(l1 - l2)*z0 / ((i*w*l1 + z0) * (i*w*l2 + z0))``, broadcast over
    array inputs. Odd under ``l1 <-> l2`` and zero when the bridge is balanced.
    """
    jw = 1j * 2.0 * np.pi * np.asarray(frequency, dtype=float)
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    result = jw * (l1 - l2) * z0 / ((jw * l1 + z0) * (jw * l2 + z0))
    return complex(result) if result.ndim == 0 else result


def tib_transmission(params: TibParams, bias: FluxBias, frequency: float) -> TransmissionPoint:
    l1, l2 = arm_inductances(params, bias)
    return TransmissionPoint(frequency, bridge_transmission(l1, l2, frequency, params.line_impedance))


def _clamped_transmission(params: TibParams, phi_sigma, phi_delta, frequency):
    phi_delta = np.asarray(phi_delta, dtype=float)
    l1, c1 = _clamped_arm(params, phi_sigma + phi_delta)
    l2, c2 = _clamped_arm(params, phi_sigma - phi_delta)
    return bridge_transmission(l1, l2, frequency, params.line_impedance), c1 | c2


@dataclass
class SweepMap:
    """|T|^2 in dB over a (frequency, phi_delta) grid at fixed ``phi_sigma``.

    Rows follow ``frequencies``, columns follow ``phi_deltas``.
    ``divergent`` marks cells where an arm's critical current was clamped;
    ``floored`` marks cells whose power fell below ``floor_db``.
    """

    params: TibParams
    phi_sigma: float
    frequencies: np.ndarray
    phi_deltas: np.ndarray
    power_db: np.ndarray
    divergent: np.ndarray
    floored: np.ndarray
    floor_db: float = DB_FLOOR
    normalized: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def clamped_fraction(self) -> float:
        return float(np.mean(self.divergent | self.floored))

    def metadata(self) -> dict:
        return {
            "params": asdict(self.params),
            "phi_sigma": self.phi_sigma,
            "frequency_hz": {"first": float(self.frequencies[0]), "last": float(self.frequencies[-1]),
                             "count": int(self.frequencies.size)},
            "phi_delta": {"first": float(self.phi_deltas[0]), "last": float(self.phi_deltas[-1]),
                          "count": int(self.phi_deltas.size)},
            "floor_db": self.floor_db,
            "normalized": self.normalized,
            "divergent_cells": int(self.divergent.sum()),
            "floored_cells": int(self.floored.sum()),
            "clamped_fraction": self.clamped_fraction,
            **self.extra,
        }

    def write_csv(self, path) -> None:
        path = Path(path)
        lines = ["frequency_ghz," + ",".join(repr(float(x)) for x in self.phi_deltas)]
        for f, row in zip(self.frequencies, self.power_db):
            lines.append(",".join([repr(float(f) / 1e9)] + [repr(float(v)) for v in row]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    def write_sidecar(self, path) -> None:
        Path(path).write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def sweep_map(
    params: TibParams,
    phi_sigma: float,
    frequencies,
    phi_deltas,
    floor_db: float = DB_FLOOR,
    normalize: bool = False,
) -> SweepMap:
    """Transmitted power over a frequency by bias-flux grid.

    Cells near frustration are computed with the clamped critical current
    and flagged instead of raising. With ``normalize`` each frequency row is
    divided by its own maximum before conversion to dB.
    """
    frequencies = np.atleast_1d(np.asarray(frequencies, dtype=float))
    phi_deltas = np.atleast_1d(np.asarray(phi_deltas, dtype=float))
    if frequencies.size == 0 or phi_deltas.size == 0:
        raise ValueError("frequency and phi_delta grids must be non-empty")
    t, divergent = _clamped_transmission(params, phi_sigma, phi_deltas[None, :], frequencies[:, None])
    divergent = np.broadcast_to(divergent, t.shape).copy()
    power = np.abs(t) ** 2
    if normalize:
        peak = power.max(axis=1, keepdims=True)
        power = np.divide(power, peak, out=np.zeros_like(power), where=peak > 0)
    floored = power < 10.0 ** (floor_db / 10.0)
    return SweepMap(
        params=params,
        phi_sigma=float(phi_sigma),
        frequencies=frequencies,
        phi_deltas=phi_deltas,
        power_db=_power_db(power, floor_db),
        divergent=divergent,
        floored=floored,
        floor_db=floor_db,
        normalized=normalize,
    )


def _golden_max(fn, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def find_operating_points(
    params: TibParams,
    phi_sigma: float,
    frequency: float,
    tol: float = 1e-6,
    coarse_points: int = 64,
    floor_db: float = DB_FLOOR,
) -> OperatingPoints:
    """Locate the transmit, invert and reflect biases at one frequency.

    A coarse scan over ``phi_delta`` in (0, 1/2) picks the brightest lobe,
    then golden-section search refines it to ``tol`` flux quanta. The invert
    point is the mirror image; the reflect point is the balanced bridge,
    whose exact null is replaced by ``floor_db`` in the on-off ratio.
    """
    if not frequency > 0:
        raise ValueError("frequency must be positive")

    def power(x):
        t, _ = _clamped_transmission(params, phi_sigma, x, frequency)
        return float(np.abs(t) ** 2)

    grid = np.linspace(0.0, 0.5, coarse_points + 1)
    scan = np.abs(_clamped_transmission(params, phi_sigma, grid, frequency)[0]) ** 2
    k = int(np.argmax(scan))
    if scan[k] <= 10.0 ** (floor_db / 10.0):
        raise SearchFailed(f"transmission map is flat at phi_sigma={phi_sigma}, f={frequency:.6g} Hz")
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, coarse_points)]
    x = _golden_max(power, lo, hi, tol)
    if x - tol <= 0.0 or x + tol >= 0.5:
        raise SearchFailed(f"maximum not bracketed inside (0, 1/2): phi_delta={x:.3g}")

    t_transmit = complex(_clamped_transmission(params, phi_sigma, x, frequency)[0])
    t_invert = complex(_clamped_transmission(params, phi_sigma, -x, frequency)[0])
    transmit_db = float(_power_db(abs(t_transmit) ** 2, floor_db))
    imbalance = math.degrees(np.angle(t_transmit / t_invert)) - 180.0
    imbalance = -((-imbalance + 180.0) % 360.0 - 180.0)  # wrap to (-180, 180]
    return OperatingPoints(
        frequency=float(frequency),
        phi_delta_transmit=x,
        phi_delta_invert=-x,
        phi_delta_reflect=0.0,
        on_off_ratio_db=transmit_db - floor_db,
        phase_imbalance_deg=imbalance + 0.0,
        transmit_power_db=transmit_db,
    )
