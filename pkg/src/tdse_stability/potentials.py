"""Time-dependent real potentials with closed-form time derivatives and tails.

Every model exposes

* ``value(t, *coords)`` and ``dt_value(t, *coords)``,
* ``sup_dt(t)`` -- the sup over x of |dV/dt| (closed form, never a grid max),
* ``tail_integral(T)`` -- an upper bound for the integral of ``sup_dt`` over
  [T, inf); ``math.inf`` when that integral diverges,
* ``sup_value`` -- a bound for sup_{t,x} |V|.

Coordinates are passed one array per axis, so a 1-D model is called as
``V.value(t, x)`` and a 2-D model as ``V.value(t, x, y)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import SpectralGrid

DRIFT_KINDS = ("arctan_drift", "constant", "periodic")


@dataclass(frozen=True)
class DriftProfile:
    """Translation c(t) of a moving potential.

    ``arctan_drift``: c(t) = offset + v * arctan(t), integrable speed.
    ``constant``: c(t) = offset.
    ``periodic``: c(t) = offset + v * sin(omega t); the speed integral diverges.
    """

    kind: str
    velocity: tuple[float, ...]
    offset: tuple[float, ...] | None = None
    omega: float = 1.0

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}; expected one of {DRIFT_KINDS}")
        v = tuple(float(c) for c in np.atleast_1d(self.velocity))
        object.__setattr__(self, "velocity", v)
        off = (0.0,) * len(v) if self.offset is None else tuple(float(c) for c in np.atleast_1d(self.offset))
        if len(off) != len(v):
            raise ValueError("drift offset and velocity must have the same length")
        object.__setattr__(self, "offset", off)
        if self.kind == "periodic" and not self.omega > 0:
            raise ValueError("periodic drift needs omega > 0")

    @property
    def dim(self) -> int:
        return len(self.velocity)

    @property
    def speed_scale(self) -> float:
        return float(np.linalg.norm(self.velocity))

    def position(self, t: float) -> np.ndarray:
        v, off = np.asarray(self.velocity), np.asarray(self.offset)
        if self.kind == "arctan_drift":
            return off + v * math.atan(t)
        if self.kind == "periodic":
            return off + v * math.sin(self.omega * t)
        return off.copy()

    def velocity_at(self, t: float) -> np.ndarray:
        v = np.asarray(self.velocity)
        if self.kind == "arctan_drift":
            return v / (1.0 + t * t)
        if self.kind == "periodic":
            return v * self.omega * math.cos(self.omega * t)
        return np.zeros_like(v)

    def speed(self, t: float) -> float:
        return float(np.linalg.norm(self.velocity_at(t)))

    def drift_tail(self, T: float) -> float:
        """Integral of |c'| over [T, inf)."""
        if self.kind == "constant" or self.speed_scale == 0.0:
            return 0.0
        if self.kind == "arctan_drift":
            return self.speed_scale * (0.5 * math.pi - math.atan(T))
        return math.inf


class PotentialModel:
    kind: str = "abstract"
    dim: int | None = None

    def value(self, t, *coords):
        raise NotImplementedError

    def dt_value(self, t, *coords):
        raise NotImplementedError

    def sup_dt(self, t: float) -> float:
        raise NotImplementedError

    def tail_integral(self, T: float) -> float:
        raise NotImplementedError

    @property
    def sup_value(self) -> float:
        raise NotImplementedError

    @property
    def is_static(self) -> bool:
        return False

    @property
    def has_closed_form_tail(self) -> bool:
        return True

    @property
    def nonnegative(self) -> bool:
        return True

    def describe(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class ConstantPotential(PotentialModel):
    level: float = 0.0
    kind: str = field(default="static", init=False)

    def value(self, t, *coords):
        return np.full(np.broadcast(*coords).shape, self.level) if coords else self.level

    def dt_value(self, t, *coords):
        return np.zeros(np.broadcast(*coords).shape) if coords else 0.0

    def sup_dt(self, t):
        return 0.0

    def tail_integral(self, T):
        return 0.0

    @property
    def sup_value(self):
        return abs(self.level)

    @property
    def is_static(self):
        return True

    @property
    def nonnegative(self):
        return self.level >= 0

    def describe(self):
        return {"kind": self.kind, "level": self.level}


def _radius_sq(coords, shift=None) -> np.ndarray:
    r2 = 0.0
    for d, x in enumerate(coords):
        y = np.asarray(x, float) if shift is None else np.asarray(x, float) + shift[d]
        r2 = r2 + y * y
    return r2


@dataclass(frozen=True)
class MovingBump(PotentialModel):
    """V(t, x) = A / (1 + |x + c(t)|^2)^theta0."""

    amplitude: float
    shape_power: float
    drift: DriftProfile
    kind: str = field(default="moving_bump", init=False)

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError(f"moving_bump amplitude must be positive, got {self.amplitude}")
        if not self.shape_power > 0:
            raise ValueError(f"moving_bump shape_power must be positive, got {self.shape_power}")

    @property
    def dim(self):
        return self.drift.dim

    def _check(self, coords):
        if len(coords) != self.dim:
            raise ValueError(f"expected {self.dim} coordinate arrays, got {len(coords)}")

    def value(self, t, *coords):
        self._check(coords)
        r2 = _radius_sq(coords, self.drift.position(t))
        return self.amplitude * (1.0 + r2) ** (-self.shape_power)

    def dt_value(self, t, *coords):
        self._check(coords)
        c = self.drift.position(t)
        dc = self.drift.velocity_at(t)
        r2 = _radius_sq(coords, c)
        y_dot_dc = sum((np.asarray(x, float) + c[d]) * dc[d] for d, x in enumerate(coords))
        return -2.0 * self.amplitude * self.shape_power * y_dot_dc * (1.0 + r2) ** (-self.shape_power - 1.0)

    @property
    def gradient_sup(self) -> float:
        """sup_y |grad V0(y)|, attained at |y|^2 = 1/(2 theta0 + 1)."""
        q = self.shape_power
        r = 1.0 / math.sqrt(2.0 * q + 1.0)
        return 2.0 * self.amplitude * q * r * (1.0 + r * r) ** (-q - 1.0)

    def sup_dt(self, t):
        return self.gradient_sup * self.drift.speed(t)

    def tail_integral(self, T):
        tail = self.drift.drift_tail(T)
        return 0.0 if tail == 0.0 else self.gradient_sup * tail

    @property
    def sup_value(self):
        return self.amplitude

    @property
    def is_static(self):
        return self.drift.kind == "constant" or self.drift.speed_scale == 0.0

    def describe(self):
        return {
            "kind": self.kind,
            "amplitude": self.amplitude,
            "shape_power": self.shape_power,
            "drift": {
                "kind": self.drift.kind,
                "velocity": list(self.drift.velocity),
                "offset": list(self.drift.offset),
                "omega": self.drift.omega,
            },
            "gradient_sup": self.gradient_sup,
        }


@dataclass(frozen=True)
class InversePowerRegularized(PotentialModel):
    """Static A * (eps + |x - x0|^2)^(-theta0); a C^1 stand-in for A |x|^(-2 theta0)."""

    amplitude: float
    power: float
    smoothing: float
    dim: int = 1
    center: tuple[float, ...] | None = None
    kind: str = field(default="inverse_power_regularized", init=False)

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")
        if not self.power > 0:
            raise ValueError(f"power must be positive, got {self.power}")
        if not self.smoothing > 0:
            raise ValueError(
                f"smoothing must be positive (the singular limit is not C^1), got {self.smoothing}"
            )
        c = (0.0,) * self.dim if self.center is None else tuple(float(v) for v in self.center)
        if len(c) != self.dim:
            raise ValueError("center must have one entry per dimension")
        object.__setattr__(self, "center", c)

    def value(self, t, *coords):
        shift = [-c for c in self.center]
        return self.amplitude * (self.smoothing + _radius_sq(coords, shift)) ** (-self.power)

    def dt_value(self, t, *coords):
        return np.zeros(np.broadcast(*coords).shape) if coords else 0.0

    def sup_dt(self, t):
        return 0.0

    def tail_integral(self, T):
        return 0.0

    @property
    def sup_value(self):
        return self.amplitude * self.smoothing ** (-self.power)

    @property
    def is_static(self):
        return True

    def describe(self):
        return {
            "kind": self.kind,
            "amplitude": self.amplitude,
            "power": self.power,
            "smoothing": self.smoothing,
            "center": list(self.center),
        }


@dataclass(frozen=True)
class DecayingEnvelope(PotentialModel):
    """exp(-rate (t - s)) * base(t, x)."""

    base: PotentialModel
    rate: float
    s: float = 0.0
    kind: str = field(default="decaying_envelope", init=False)

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"envelope rate must be positive, got {self.rate}")

    @property
    def dim(self):
        return self.base.dim

    def _env(self, t):
        return math.exp(-self.rate * (t - self.s))

    def value(self, t, *coords):
        return self._env(t) * self.base.value(t, *coords)

    def dt_value(self, t, *coords):
        e = self._env(t)
        return e * (self.base.dt_value(t, *coords) - self.rate * self.base.value(t, *coords))

    def sup_dt(self, t):
        # exact for a static base, an upper bound otherwise
        return self._env(t) * (self.rate * self.base.sup_value + self.base.sup_dt(t))

    def tail_integral(self, T):
        base_tail = self.base.tail_integral(T)
        if math.isinf(base_tail):
            return math.inf
        # exp(-rate (tau - s)) <= exp(-rate (T - s)) for tau >= T
        return self._env(T) * (self.base.sup_value + base_tail)

    @property
    def sup_value(self):
        return self.base.sup_value

    @property
    def has_closed_form_tail(self):
        return self.base.has_closed_form_tail

    @property
    def nonnegative(self):
        return self.base.nonnegative

    def describe(self):
        return {"kind": self.kind, "rate": self.rate, "s": self.s, "base": self.base.describe()}


def moving_bump(amplitude: float, shape_power: float, drift: DriftProfile) -> MovingBump:
    return MovingBump(amplitude, shape_power, drift)


def inverse_power_regularized(
    amplitude: float, power: float, smoothing: float, dim: int = 1, center=None
) -> InversePowerRegularized:
    return InversePowerRegularized(amplitude, power, smoothing, dim, center)


def decaying_envelope(base: PotentialModel, rate: float, s: float = 0.0) -> DecayingEnvelope:
    return DecayingEnvelope(base, rate, s)


def eval_on_grid(model: PotentialModel, t: float, grid: SpectralGrid) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.broadcast_to(np.asarray(model.value(t, *grid.coords), float), grid.shape)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"potential {model.kind} is not finite on the grid at t={t}")
    return out


def dt_eval_on_grid(model: PotentialModel, t: float, grid: SpectralGrid) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.broadcast_to(np.asarray(model.dt_value(t, *grid.coords), float), grid.shape)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"time derivative of {model.kind} is not finite at t={t}")
    return out


def boundary_ratio(model: PotentialModel, t: float, grid: SpectralGrid) -> float:
    """max |V| on the box faces relative to max |V| on the grid."""
    field = np.abs(eval_on_grid(model, t, grid))
    peak = field.max()
    if peak == 0:
        return 0.0
    faces = [np.take(field, 0, axis=d).max() for d in range(grid.dim)]
    return float(max(faces) / peak)
