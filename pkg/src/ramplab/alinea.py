"""ALINEA integral ramp metering with anti-windup."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class AlineaState:
    """Integral regulator state.

    ``u_prev_bounded`` is always the last *applied* (saturated) command; feeding
    that back instead of the raw integrator value is what prevents wind-up.
    """

    u_prev_bounded: float
    K_A: float = 15.0
    u_min: float = 0.0
    u_max: float = 1800.0

    def __post_init__(self) -> None:
        if self.K_A <= 0:
            raise ValueError("K_A must be positive")
        if not self.u_min <= self.u_max:
            raise ValueError("u_min must not exceed u_max")
        if not self.u_min <= self.u_prev_bounded <= self.u_max:
            raise ValueError("initial command outside [u_min, u_max]")


def alinea_step(state: AlineaState, rho_meas: float, rho_setpoint: float) -> tuple[float, AlineaState]:
    """One ALINEA update; returns the saturated command and the new state.

    >>> u, s = alinea_step(AlineaState(800.0), rho_meas=30.0, rho_setpoint=33.0)
    >>> u
    845.0
    """
    if rho_meas < 0:
        raise ValueError("measured density must be non-negative")
    if rho_setpoint <= 0:
        raise ValueError("set-point must be positive")
    u_raw = state.u_prev_bounded + state.K_A * (rho_setpoint - rho_meas)
    u = min(max(u_raw, state.u_min), state.u_max)
    return u, AlineaState(u, state.K_A, state.u_min, state.u_max)


def applied_ramp_inflow(u: float, d_ramp: float, w_ramp: float, T: float) -> float:
    """Flow the ramp can actually discharge: ``min(u, d + w/T)``, floored at zero."""
    return max(0.0, min(u, d_ramp + w_ramp / T))
