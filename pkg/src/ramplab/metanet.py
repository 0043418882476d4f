"""Second-order METANET simulator for a single motorway stretch.

The stretch is a chain of cells fed by a mainstream origin (modelled as a
vertical queue) and one on-ramp. There are no off-ramps and the downstream end
is free: the virtual density past the last cell equals the last cell's density,
capped at the critical density so that a congested exit cell can always drain.
The upstream virtual speed equals the first cell's speed.

Densities are per lane (veh/km/lane), flows are cross-lane (veh/h), queues are
in vehicles and the time step ``T`` is in hours.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .fd import MetanetFDParams, metanet_equilibrium_speed

__all__ = [
    "CellGeometry",
    "Stretch",
    "GlobalModelParams",
    "NetworkState",
    "SimulationError",
    "uniform_stretch",
    "equilibrium_state",
    "origin_outflow",
    "queue_update",
    "step_network",
    "stored_vehicles",
]

RHO_FLOOR = 1e-6
QUEUE_TOL = 1e-9


class SimulationError(RuntimeError):
    """Raised when the network state stops being finite."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class CellGeometry:
    length: float  # km
    lanes: int = 2
    has_onramp: bool = False
    has_offramp: bool = False

    def __post_init__(self) -> None:
        if self.length <= 0:
            raise ValueError("cell length must be positive")
        if self.lanes < 1:
            raise ValueError("a cell needs at least one lane")


@dataclass(frozen=True)
class Stretch:
    """Ordered cells of the motorway, upstream first."""

    cells: tuple[CellGeometry, ...]

    def __post_init__(self) -> None:
        if not self.cells:
            raise ValueError("stretch has no cells")
        if sum(c.has_onramp for c in self.cells) > 1:
            raise ValueError("only one on-ramp is supported")
        if any(c.has_offramp for c in self.cells):
            raise ValueError("off-ramps are not supported")

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def lengths(self) -> np.ndarray:
        return np.array([c.length for c in self.cells], dtype=float)

    @property
    def lanes(self) -> np.ndarray:
        return np.array([c.lanes for c in self.cells], dtype=float)

    @property
    def onramp_index(self) -> int | None:
        """0-based index of the on-ramp cell, or ``None``."""
        for i, c in enumerate(self.cells):
            if c.has_onramp:
                return i
        return None


def uniform_stretch(n_cells: int = 20, length: float = 0.5, lanes: int = 2, onramp_cell: int | None = 15) -> Stretch:
    """Identical cells with the on-ramp at the 1-based cell ``onramp_cell``."""
    return Stretch(
        tuple(CellGeometry(length, lanes, has_onramp=(i + 1 == onramp_cell)) for i in range(n_cells))
    )


@dataclass(frozen=True)
class GlobalModelParams:
    T: float = 10.0 / 3600.0  # h
    tau: float = 20.0 / 3600.0  # h
    nu: float = 35.0  # km^2/h
    kappa: float = 13.0  # veh/km/lane
    delta: float = 0.8

    def __post_init__(self) -> None:
        for name in ("T", "tau", "nu", "kappa", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.T < self.tau * 1e3:
            raise ValueError("time step is implausibly large relative to tau")


@dataclass
class NetworkState:
    """Snapshot at step ``k``: per-cell density, speed, flow and origin queues."""

    rho: np.ndarray
    v: np.ndarray
    q: np.ndarray
    w_main: float = 0.0
    w_ramp: float = 0.0
    k: int = 0

    def copy(self) -> "NetworkState":
        return replace(self, rho=self.rho.copy(), v=self.v.copy(), q=self.q.copy())


def equilibrium_state(stretch: Stretch, fd: MetanetFDParams, rho: float) -> NetworkState:
    """Uniform state at equilibrium speed ``V(rho)`` with empty queues."""
    n = len(stretch)
    rho_arr = np.full(n, float(rho))
    v_arr = np.full(n, metanet_equilibrium_speed(fd, rho))
    return NetworkState(rho=rho_arr, v=v_arr, q=rho_arr * v_arr * stretch.lanes)


def stored_vehicles(state: NetworkState, stretch: Stretch) -> float:
    """Vehicles on the mainline (queues excluded)."""
    return float(np.sum(stretch.lengths * stretch.lanes * state.rho))


def origin_outflow(
    demand: float,
    queue: float,
    T: float,
    rho_downstream: float,
    fd: MetanetFDParams,
    lanes: float,
) -> float:
    """Flow leaving the mainstream origin, limited by availability and supply.

    ``min(d + w/T, lanes*q_cap, lanes*q_cap*(rho_jam - rho_down)/(rho_jam - rho_cr))``,
    never negative.
    """
    capacity = lanes * fd.q_cap
    supply = capacity * (fd.rho_jam - rho_downstream) / (fd.rho_jam - fd.rho_cr)
    return max(0.0, min(demand + queue / T, capacity, supply))


def queue_update(w: float, d: float, outflow: float, T: float) -> float:
    """Vertical queue ``w + T*(d - outflow)``.

    Raises ``ValueError`` if the caller let the outflow exceed what the queue
    and the demand could supply.
    """
    w_next = w + T * (d - outflow)
    if w_next < -QUEUE_TOL:
        raise ValueError(f"queue would become negative ({w_next:.3e} veh)")
    return max(w_next, 0.0)


def step_network(
    state: NetworkState,
    stretch: Stretch,
    params: GlobalModelParams,
    fd: MetanetFDParams,
    d_main: float,
    r: float = 0.0,
    d_ramp: float | None = None,
    cap_downstream: bool = True,
) -> NetworkState:
    """Advance the stretch by one step of length ``params.T``.

    ``d_main`` is the mainstream demand (veh/h), ``r`` the flow actually entering
    from the on-ramp and ``d_ramp`` the ramp demand driving the ramp queue; when
    ``d_ramp`` is omitted the ramp queue is left untouched.

    With ``cap_downstream`` the virtual density past the exit is
    ``min(rho_N, rho_cr)``; without it, plain ``rho_N``. The two agree in free
    flow. Uncapped, a dense wave reaching the exit can freeze there at
    ``v_min`` and grow into a gridlock that spans the whole stretch.
    """
    T = params.T
    L = stretch.lengths
    lam = stretch.lanes
    rho, v = state.rho, state.v
    q = rho * v * lam

    q_in = origin_outflow(d_main, state.w_main, T, rho[0], fd, lam[0])
    w_main = queue_update(state.w_main, d_main, q_in, T)

    ramp = np.zeros_like(rho)
    ramp_idx = stretch.onramp_index
    if ramp_idx is not None:
        ramp[ramp_idx] = r
    elif r:
        raise ValueError("ramp inflow given but the stretch has no on-ramp")
    w_ramp = state.w_ramp if d_ramp is None else queue_update(state.w_ramp, d_ramp, r, T)

    q_up = np.concatenate(([q_in], q[:-1]))
    rho_next = rho + T / (L * lam) * (q_up - q + ramp)

    v_up = np.concatenate(([v[0]], v[:-1]))
    rho_exit = min(rho[-1], fd.rho_cr) if cap_downstream else rho[-1]
    rho_down = np.concatenate((rho[1:], [rho_exit]))
    v_next = (
        v
        + T / params.tau * (metanet_equilibrium_speed(fd, rho) - v)
        + T / L * v * (v_up - v)
        - params.nu * T / (params.tau * L) * (rho_down - rho) / (rho + params.kappa)
        - params.delta * T / (L * lam) * ramp * v / (rho + params.kappa)
    )

    if not (np.isfinite(rho_next).all() and np.isfinite(v_next).all()):
        raise SimulationError("non-finite density or speed", state.k)

    rho_next = np.clip(rho_next, RHO_FLOOR, fd.rho_jam)
    v_next = np.clip(v_next, fd.v_min, fd.v_free)
    return NetworkState(
        rho=rho_next,
        v=v_next,
        q=rho_next * v_next * lam,
        w_main=w_main,
        w_ramp=w_ramp,
        k=state.k + 1,
    )
