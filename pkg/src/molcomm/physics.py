"""Free-diffusion propagation: diffusion coefficient and first-passage statistics.

All lengths are in meters, times in seconds, diffusion coefficients in m^2/s.
Functions accept scalars or numpy arrays and return the same shape.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf, erfc

BOLTZMANN = 1.380649e-23  # J/K, exact SI value

# Past this argument erfc is below ~1e-629 and would only produce subnormal noise.
_ERFC_CUTOFF = 38.0


class InvalidEnvironment(ValueError):
    pass


class SizeRegime(enum.Enum):
    COMPARABLE = "comparable"  # messenger ~ fluid molecule, b = 4 eta zeta
    MUCH_LARGER = "much_larger"  # messenger >> fluid molecule, b = 6 eta zeta

    @property
    def drag_factor(self) -> float:
        return 4.0 if self is SizeRegime.COMPARABLE else 6.0


@dataclass(frozen=True)
class FluidEnvironment:
    temperature: float = 310.0
    viscosity: float = 1e-3
    stokes_radius: float = 1e-9
    size_regime: SizeRegime = SizeRegime.COMPARABLE
    boltzmann_constant: float = BOLTZMANN
    explicit_diffusion_coefficient: Optional[float] = None

    def __post_init__(self):
        for name in ("temperature", "viscosity", "stokes_radius"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidEnvironment(f"{name} must be positive, got {value!r}")
        d = self.explicit_diffusion_coefficient
        if d is not None and not (math.isfinite(d) and d > 0):
            raise InvalidEnvironment(
                f"explicit_diffusion_coefficient must be positive, got {d!r}"
            )

    @property
    def drag_constant(self) -> float:
        return self.size_regime.drag_factor * self.viscosity * self.stokes_radius


@dataclass(frozen=True)
class ChannelGeometry:
    """Link geometry and slot timing.

    ``transmit_offset`` is the start of the detection window measured from the
    release instant of the current slot, so every slot sees the same window.
    ``slot_index`` only labels a slot inside a frame.
    """

    distance: float
    slot_duration: float
    transmit_offset: float = 0.0
    slot_index: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.distance) and self.distance > 0):
            raise ValueError(f"distance must be positive, got {self.distance!r}")
        if not (math.isfinite(self.slot_duration) and self.slot_duration >= 0):
            raise ValueError(
                f"slot_duration must be nonnegative, got {self.slot_duration!r}"
            )
        if not (math.isfinite(self.transmit_offset) and self.transmit_offset >= 0):
            raise ValueError(
                f"transmit_offset must be nonnegative, got {self.transmit_offset!r}"
            )
        if self.slot_index < 0:
            raise ValueError("slot_index must be nonnegative")

    @property
    def window(self) -> tuple[float, float]:
        return self.transmit_offset, self.transmit_offset + self.slot_duration


def diffusion_coefficient(env: FluidEnvironment) -> float:
    """Stokes-Einstein diffusion coefficient k_B T / b, unless overridden."""
    if env.explicit_diffusion_coefficient is not None:
        return float(env.explicit_diffusion_coefficient)
    return env.boltzmann_constant * env.temperature / env.drag_constant


def _check_positive(r, D):
    if np.any(np.asarray(r) <= 0) or not np.all(np.isfinite(r)):
        raise ValueError("distance must be positive and finite")
    if np.any(np.asarray(D) <= 0) or not np.all(np.isfinite(D)):
        raise ValueError("diffusion coefficient must be positive and finite")


def _check_time(t):
    if np.any(np.asarray(t) < 0) or np.any(np.isnan(t)):
        raise ValueError("time must be nonnegative")


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def first_hit_pdf(r, D, t):
    """Density of the first time a 1D Brownian particle travels distance ``r``.

    f(t) = r / sqrt(4 pi D t^3) * exp(-r^2 / (4 D t)), with f(0) = 0.
    """
    _check_positive(r, D)
    _check_time(t)
    r, D, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r, D, t)))
    out = np.zeros(t.shape)
    pos = t > 0
    rp, Dp, tp = r[pos], D[pos], t[pos]
    out[pos] = rp / np.sqrt(4.0 * np.pi * Dp * tp**3) * np.exp(-(rp**2) / (4.0 * Dp * tp))
    return _scalar_or_array(out)


def first_hit_cdf(r, D, t):
    """P(first hit <= t) = erfc(r / sqrt(4 D t)); exactly 0 at t = 0."""
    _check_positive(r, D)
    _check_time(t)
    r, D, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (r, D, t)))
    out = np.zeros(t.shape)
    pos = t > 0
    with np.errstate(divide="ignore", over="ignore"):
        arg = r[pos] / np.sqrt(4.0 * D[pos] * t[pos])
    vals = erfc(arg)
    vals[arg > _ERFC_CUTOFF] = 0.0
    out[pos] = vals
    return _scalar_or_array(out)


def window_hit_probability(r, D, start, stop):
    """P(start < first hit <= stop) for a molecule released at time 0.

    Computed as erfc(a_stop) - erfc(a_start), or as erf(a_start) - erf(a_stop)
    when both CDF values are near 1 and the erfc difference would cancel.
    """
    _check_positive(r, D)
    _check_time(start)
    _check_time(stop)
    r, D, start, stop = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (r, D, start, stop))
    )
    if np.any(stop < start):
        raise ValueError("window must satisfy start <= stop")
    with np.errstate(divide="ignore", over="ignore"):
        a_start = np.where(start > 0, r / np.sqrt(4.0 * D * start), np.inf)
        a_stop = np.where(stop > 0, r / np.sqrt(4.0 * D * stop), np.inf)
    near_one = a_start < 0.5
    p = np.where(
        near_one,
        erf(np.where(near_one, a_start, 0.0)) - erf(a_stop),
        np.where(a_stop > _ERFC_CUTOFF, 0.0, erfc(a_stop))
        - np.where(a_start > _ERFC_CUTOFF, 0.0, erfc(a_start)),
    )
    p = np.where(stop == start, 0.0, p)
    return _scalar_or_array(np.clip(p, 0.0, 1.0))


def slot_hit_probability(geom: ChannelGeometry, D):
    """Probability that a molecule released at slot start lands in the detection window."""
    lo, hi = geom.window
    return window_hit_probability(geom.distance, D, lo, hi)
