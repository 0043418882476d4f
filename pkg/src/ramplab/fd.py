"""Flow-density laws.

Two laws live here:

* :class:`ParabolicFD`, the quadratic ``q = a*rho**2 + b*rho`` that the adaptive
  estimator assumes at the bottleneck (``a < 0``, ``b > 0``).
* :class:`MetanetFDParams`, the exponential equilibrium-speed law used by the
  METANET simulator, ``V(rho) = v_free * exp(-(rho/rho_cr)**alpha / alpha)``.

Units: density in veh/km/lane, speed in km/h, flow in veh/h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

__all__ = [
    "ParabolicFD",
    "MetanetFDParams",
    "FD1",
    "FD2",
    "parabola_flow",
    "parabola_critical_point",
    "metanet_equilibrium_speed",
    "synth_fd_samples",
]

# Relative tolerance for rho_cr * V(rho_cr) == q_cap.
CAPACITY_CONSISTENCY_RTOL = 5e-3


@dataclass(frozen=True)
class ParabolicFD:
    """Concave parabola ``q = a*rho**2 + b*rho`` with an interior maximum."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not (self.a < 0 and self.b > 0):
            raise ValueError(f"ParabolicFD needs a < 0 and b > 0, got a={self.a}, b={self.b}")

    @classmethod
    def from_critical_point(cls, rho_star: float, q_star: float) -> "ParabolicFD":
        """Parabola whose maximum sits exactly at ``(rho_star, q_star)``."""
        if rho_star <= 0 or q_star <= 0:
            raise ValueError("critical point must be strictly positive")
        return cls(a=-q_star / rho_star**2, b=2.0 * q_star / rho_star)

    @property
    def critical_density(self) -> float:
        return -self.b / (2.0 * self.a)

    @property
    def capacity(self) -> float:
        return -self.b**2 / (4.0 * self.a)

    @property
    def jam_density(self) -> float:
        return -self.b / self.a


@dataclass(frozen=True)
class MetanetFDParams:
    """Per-phase parameters of the METANET equilibrium-speed law.

    ``rho_cr`` and ``rho_jam`` are per lane, ``q_cap`` is per-lane capacity.
    Construction checks that ``rho_cr * V(rho_cr)`` reproduces ``q_cap``.
    """

    v_free: float
    rho_cr: float
    alpha: float
    rho_jam: float
    q_cap: float
    v_min: float = 7.0

    def __post_init__(self) -> None:
        if not self.v_min < self.v_free:
            raise ValueError("v_min must be below v_free")
        if not 0 < self.rho_cr < self.rho_jam:
            raise ValueError("need 0 < rho_cr < rho_jam")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.q_cap <= 0:
            raise ValueError("q_cap must be positive")
        flow_at_cr = self.rho_cr * self.v_free * math.exp(-1.0 / self.alpha)
        if abs(flow_at_cr - self.q_cap) > CAPACITY_CONSISTENCY_RTOL * self.q_cap:
            raise ValueError(
                f"inconsistent FD: rho_cr*V(rho_cr)={flow_at_cr:.1f} veh/h/lane "
                f"but q_cap={self.q_cap}"
            )


# Phase parameters of the test stretch (the FD switches from FD1 to FD2).
FD1 = MetanetFDParams(v_free=107.0, rho_cr=29.0, alpha=2.2768, rho_jam=180.0, q_cap=2000.0)
FD2 = MetanetFDParams(v_free=107.0, rho_cr=26.0, alpha=2.2968, rho_jam=180.0, q_cap=1800.0)


def _check_density(rho) -> None:
    if (np.asarray(rho) < 0).any():
        raise ValueError("density must be non-negative")


def parabola_flow(fd: ParabolicFD, rho):
    """Flow on the parabola; accepts scalars or arrays."""
    _check_density(rho)
    return fd.a * np.square(rho) + fd.b * rho


def parabola_critical_point(fd: ParabolicFD) -> tuple[float, float]:
    """Return ``(critical density, capacity)`` of ``fd``."""
    return fd.critical_density, fd.capacity


def metanet_equilibrium_speed(fd: MetanetFDParams, rho):
    """Equilibrium speed ``V(rho)`` clamped below at ``fd.v_min``.

    Works elementwise on arrays; returns a float for scalar input.
    """
    _check_density(rho)
    rho = np.asarray(rho, dtype=float)
    v = fd.v_free * np.exp(-np.power(rho / fd.rho_cr, fd.alpha) / fd.alpha)
    v = np.maximum(v, fd.v_min)
    return float(v) if v.ndim == 0 else v


def synth_fd_samples(
    fd: ParabolicFD,
    densities: Iterable[float],
    noise_std: float = 0.0,
    seed: int | None = None,
) -> list[tuple[float, float]]:
    """Sample ``(rho, q)`` pairs from ``fd`` along a density trajectory.

    Flows carry multiplicative Gaussian noise ``q * (1 + eps)`` with
    ``eps ~ N(0, noise_std)``. The same ``seed`` always yields the same samples.
    """
    rho = np.asarray(list(densities), dtype=float)
    if rho.size == 0:
        return []
    if np.any(rho > fd.jam_density + 1e-12):
        raise ValueError("excitation densities must stay within [0, -b/a]")
    q = parabola_flow(fd, rho)
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        q = q * (1.0 + noise_std * rng.standard_normal(rho.size))
    return list(zip(rho.tolist(), q.tolist()))
