"""Control-problem constants, degradation speeds and the sediment-hydraulics builder.

The state lives on the normalized interval D = [0, 1].  In regime ``i`` the
state decreases with speed ``S(i, x) = S_i * 1{x > 0}``; optionally a table of
speeds sampled on a uniform grid replaces the constant ``S_i`` (the
``1{x > 0}`` factor is kept either way, so the depleted state is absorbing
for the uncontrolled dynamics).

Bed shear stress uses the Manning-derived exponent 7/10 on the channel slope
(water depth from ``q = h^{5/3} l^{1/2} B / n_M``, then ``tau = rho g h l``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .exceptions import ValidationError
from .markov import RegimeChain

__all__ = [
    "ModelSpec",
    "HydraulicParams",
    "DEFAULT_HYDRAULICS",
    "bed_shear_stress",
    "shields_number",
    "mpm_transport_rate",
    "regime_discharges",
    "build_sediment_model",
]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Constants of the impulse-control problem.

    Parameters
    ----------
    lam : float
        Observation rate (1/time).
    mu : float
        Execution-delay rate (1/time); must exceed ``lam``.
    delta : float
        Discount rate (1/time).
    c, d : float
        Proportional and fixed intervention costs.
    speeds : sequence of float
        Per-regime degradation speeds ``S_i >= 0``.
    speed_table : (I+1, K+1) array, optional
        Speeds sampled at ``K+1`` equidistant points of [0, 1]; linearly
        interpolated.  Overrides ``speeds`` where given.
    """

    lam: float
    mu: float
    delta: float
    c: float
    d: float
    speeds: tuple = (0.0,)
    speed_table: NDArray[np.float64] | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "speeds", tuple(float(s) for s in np.atleast_1d(self.speeds)))
        if self.speed_table is not None:
            tab = np.array(self.speed_table, dtype=np.float64)
            if tab.ndim != 2 or tab.shape[0] != len(self.speeds) or tab.shape[1] < 2:
                raise ValidationError("speed_table must have shape (regime_count, K+1) with K >= 1")
            tab.setflags(write=False)
            object.__setattr__(self, "speed_table", tab)
        self.validate()

    def validate(self) -> "ModelSpec":
        problems = []
        for name in ("lam", "mu", "delta", "c", "d"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                problems.append(f"{name} must be a finite number")
        if problems:
            raise ValidationError("; ".join(problems))
        if not self.lam > 0:
            problems.append(f"lam must be > 0 (got {self.lam:g})")
        if not self.mu > self.lam:
            problems.append(f"mu must exceed lam (got mu={self.mu:g}, lam={self.lam:g})")
        for name in ("delta", "c", "d"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0 (got {getattr(self, name):g})")
        s = np.asarray(self.speeds)
        if s.size == 0 or np.any(s < 0) or not np.all(np.isfinite(s)):
            problems.append("speeds must be finite and non-negative")
        if self.speed_table is not None and (
            np.any(self.speed_table < 0) or not np.all(np.isfinite(self.speed_table))
        ):
            problems.append("speed_table must be finite and non-negative")
        if problems:
            raise ValidationError("; ".join(problems))
        return self

    @property
    def regime_count(self) -> int:
        return len(self.speeds)

    @property
    def max_speed(self) -> float:
        if self.speed_table is not None:
            return float(max(self.speed_table.max(), max(self.speeds)))
        return float(max(self.speeds))

    @property
    def is_constant_speed(self) -> bool:
        return self.speed_table is None

    def speed(self, regime, x) -> NDArray[np.float64]:
        """Evaluate ``S(regime, x)`` with broadcasting; zero at ``x <= 0``."""
        regime = np.asarray(regime, dtype=np.int64)
        x = np.asarray(x, dtype=np.float64)
        if self.speed_table is None:
            base = np.asarray(self.speeds)[regime]
        else:
            tab = self.speed_table
            k = tab.shape[1] - 1
            pos = np.clip(x, 0.0, 1.0) * k
            j = np.minimum(pos.astype(np.int64), k - 1)
            w = pos - j
            base = (1.0 - w) * tab[regime, j] + w * tab[regime, j + 1]
        return np.where(x > 0, base, 0.0)

    def with_(self, **changes) -> "ModelSpec":
        """Copy with some constants replaced (validated)."""
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = {
            "control": {"lambda": self.lam, "mu": self.mu, "delta": self.delta, "c": self.c, "d": self.d},
            "speeds": list(self.speeds),
        }
        if self.speed_table is not None:
            out["speed_table"] = self.speed_table.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        ctl = data["control"]
        table = data.get("speed_table")
        return cls(
            lam=float(ctl["lambda"]),
            mu=float(ctl["mu"]),
            delta=float(ctl["delta"]),
            c=float(ctl["c"]),
            d=float(ctl["d"]),
            speeds=tuple(data["speeds"]),
            speed_table=None if table is None else np.asarray(table, dtype=np.float64),
        )

    def __eq__(self, other):
        if not isinstance(other, ModelSpec):
            return NotImplemented
        same_tab = (self.speed_table is None and other.speed_table is None) or (
            self.speed_table is not None
            and other.speed_table is not None
            and np.array_equal(self.speed_table, other.speed_table)
        )
        return (
            (self.lam, self.mu, self.delta, self.c, self.d, self.speeds)
            == (other.lam, other.mu, other.delta, other.c, other.d, other.speeds)
            and same_tab
        )

    __hash__ = None


@dataclass(frozen=True)
class HydraulicParams:
    """River-reach hydraulics, SI units throughout."""

    gravity: float = 9.81
    width: float = 25.0
    slope: float = 0.001
    manning: float = 0.03
    water_density: float = 1000.0
    soil_density: float = 2600.0
    grain_diameter: float = 5.0e-3
    max_storage: float = 100.0
    critical_shields: float = 0.047

    def __post_init__(self):
        bad = [k for k, v in asdict(self).items() if not (math.isfinite(v) and v > 0)]
        if bad:
            raise ValidationError(f"hydraulic parameters must be positive: {', '.join(bad)}")
        if not self.soil_density > self.water_density:
            raise ValidationError("soil density must exceed water density")

    @property
    def submerged_specific_gravity(self) -> float:
        return self.soil_density / self.water_density - 1.0

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_HYDRAULICS = HydraulicParams()


def bed_shear_stress(q, h: HydraulicParams) -> NDArray[np.float64] | float:
    """Bed shear stress (Pa) at discharge ``q`` (m³/s) from Manning's formula."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(q <= 0):
        raise ValidationError("discharge must be positive")
    tau = (
        h.water_density
        * h.gravity
        * h.manning ** 0.6
        * h.slope ** 0.7
        * h.width ** -0.6
        * q ** 0.6
    )
    return tau if tau.ndim else float(tau)


def shields_number(q, h: HydraulicParams):
    """Dimensionless bed shear stress ``tau / (rho sigma g gamma)``."""
    sigma = h.submerged_specific_gravity
    return bed_shear_stress(q, h) / (h.water_density * sigma * h.gravity * h.grain_diameter)


def mpm_transport_rate(q, h: HydraulicParams):
    """Normalized bedload transport rate (1/s) by Meyer-Peter-Müller.

    Zero whenever the Shields number does not exceed the critical value.
    """
    sigma = h.submerged_specific_gravity
    excess = np.maximum(np.asarray(shields_number(q, h)) - h.critical_shields, 0.0)
    rate = (
        8.0
        * h.width
        * h.grain_diameter ** 1.5
        * math.sqrt(h.gravity * sigma)
        * excess ** 1.5
        / h.max_storage
    )
    return rate if rate.ndim else float(rate)


def regime_discharges(regime_count: int) -> NDArray[np.float64]:
    """Discharge assigned to each flow regime, ``1.25 + 2.5 i`` (m³/s)."""
    return 1.25 + 2.5 * np.arange(regime_count)


def build_sediment_model(
    chain: RegimeChain, h: HydraulicParams, control: dict, time_unit_seconds: float = 1.0
) -> ModelSpec:
    """Per-regime speeds from regime discharges and hydraulics.

    ``control`` holds ``lambda``, ``mu``, ``delta``, ``c`` and ``d``.  The
    transport rate comes out per second; ``time_unit_seconds`` rescales it to
    the time unit of the control rates (86400 when those are per day).
    """
    chain.check()
    if not time_unit_seconds > 0:
        raise ValidationError("time_unit_seconds must be positive")
    speeds = time_unit_seconds * np.atleast_1d(mpm_transport_rate(regime_discharges(chain.regime_count), h))
    return ModelSpec(
        lam=float(control["lambda"]),
        mu=float(control["mu"]),
        delta=float(control["delta"]),
        c=float(control["c"]),
        d=float(control["d"]),
        speeds=tuple(np.atleast_1d(speeds)),
    )
