"""Scenario harness: the test stretch, demand, control loop and metrics.

Named scenarios:

========  ==========================================================
S1        no metering, the ramp discharges up to its capacity
S2        ALINEA with known set-points 33 then 28 veh/km/lane
S3a/S3b   ALINEA with a constant set-point of 33 / 28
S4a/S4b   ALINEA fed by the adaptive estimator, started at 33 / 28
S5a/S5b   as S4 but started far off, at 40 / 20
custom    any combination, with the horizon/size checks relaxed
========  ==========================================================
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .alinea import AlineaState, alinea_step, applied_ramp_inflow
from .estimator import ReferenceModelParams, estimator_step, init_estimator
from .fd import FD1, FD2, MetanetFDParams
from .metanet import (
    GlobalModelParams,
    NetworkState,
    SimulationError,
    equilibrium_state,
    step_network,
    uniform_stretch,
)

__all__ = [
    "ConfigError",
    "DemandProfile",
    "ScenarioConfig",
    "RunResult",
    "SweepResult",
    "NoiseRow",
    "SCENARIO_IDS",
    "scenario_config",
    "demand_profile",
    "run_scenario",
    "run_suite",
    "tts",
    "improvement",
    "convergence_time",
    "empirical_critical",
    "Episode",
    "congestion_episodes",
    "sensitivity_sweep",
    "noise_experiment",
]

SCENARIO_IDS = ("S1", "S2", "S3a", "S3b", "S4a", "S4b", "S5a", "S5b", "custom")
CONTROL_MODES = ("none", "fixed", "adaptive")
HORIZON_H = 4.0


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class DemandProfile:
    """Mainstream step plus two trapezoidal ramp peaks, times in minutes."""

    main_high: float = 3200.0
    main_low: float = 1800.0
    main_drop_min: float = 180.0
    ramp_base: float = 200.0
    # (hold start, hold end, peak level)
    ramp_peaks: tuple[tuple[float, float, float], ...] = ((10.0, 40.0, 1100.0), (120.0, 165.0, 600.0))
    edge_min: float = 5.0
    horizon_min: float = 240.0

    def __call__(self, t: float) -> tuple[float, float]:
        if not 0.0 <= t <= self.horizon_min:
            raise ValueError(f"t={t} min outside the demand horizon [0, {self.horizon_min}]")
        d_main = self.main_high if t < self.main_drop_min else self.main_low
        d_ramp = self.ramp_base
        for start, end, peak in self.ramp_peaks:
            if start - self.edge_min <= t < start:
                d_ramp = self.ramp_base + (peak - self.ramp_base) * (t - start + self.edge_min) / self.edge_min
            elif start <= t <= end:
                d_ramp = peak
            elif end < t <= end + self.edge_min:
                d_ramp = peak - (peak - self.ramp_base) * (t - end) / self.edge_min
        return d_main, d_ramp


DEFAULT_DEMAND = DemandProfile()


def demand_profile(t: float) -> tuple[float, float]:
    """Default ``(d_main, d_ramp)`` in veh/h at minute ``t``.

    >>> demand_profile(25.0)
    (3200.0, 1100.0)
    """
    return DEFAULT_DEMAND(t)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "S4a"
    control: str = "adaptive"
    # network
    n_cells: int = 20
    cell_length: float = 0.5
    lanes: int = 2
    onramp_cell: int = 15  # 1-based; also the measured bottleneck cell
    T: float = 10.0 / 3600.0
    horizon_steps: int = 1440
    switch_step: int = 720
    fd_before: MetanetFDParams = FD1
    fd_after: MetanetFDParams = FD2
    model: GlobalModelParams = field(default_factory=GlobalModelParams)
    demand: DemandProfile = DEFAULT_DEMAND
    initial_density: float = 10.0
    cap_downstream: bool = True
    # controller
    K_A: float = 15.0
    u_min: float = 0.0
    u_max: float = 1800.0
    u_init: float = 1800.0
    ramp_capacity: float = 1800.0
    setpoints: tuple[float, float] = (33.0, 28.0)  # known set-points per FD phase
    # estimator
    rho_star_0: float = 33.0
    q_star_0: float = 4000.0
    Gamma_0: float = 20.0
    K_r: float = 10.0
    C_r: float = 2.0
    prescale: tuple[float, float] = (1.0, 1.0)
    # measurement noise
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIO_IDS:
            raise ConfigError("scenario", f"unknown id {self.scenario!r}")
        if self.control not in CONTROL_MODES:
            raise ConfigError("control", f"must be one of {CONTROL_MODES}")
        positive = ("cell_length", "T", "K_A", "Gamma_0", "K_r", "C_r", "rho_star_0", "q_star_0", "ramp_capacity")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        for name in ("n_cells", "lanes", "horizon_steps"):
            if not (isinstance(getattr(self, name), int) and getattr(self, name) >= 1):
                raise ConfigError(name, "must be a positive integer")
        if not 1 <= self.onramp_cell <= self.n_cells:
            raise ConfigError("onramp_cell", "must index a cell of the stretch")
        if not 0 <= self.switch_step <= self.horizon_steps:
            raise ConfigError("switch_step", "must lie within the horizon")
        if not self.u_min <= self.u_init <= self.u_max:
            raise ConfigError("u_init", "must lie within [u_min, u_max]")
        if len(self.setpoints) != 2 or not all(sp > 0 for sp in self.setpoints):
            raise ConfigError("setpoints", "need two positive set-points")
        if len(self.prescale) != 2 or not all(s > 0 for s in self.prescale):
            raise ConfigError("prescale", "need two positive divisors")
        if self.noise_std < 0:
            raise ConfigError("noise_std", "must be non-negative")
        if not self.initial_density >= 0:
            raise ConfigError("initial_density", "must be non-negative")
        if self.horizon_steps * self.T * 60.0 > self.demand.horizon_min + 1e-9:
            raise ConfigError("horizon_steps", "horizon exceeds the demand profile")
        if self.scenario != "custom":
            if not math.isclose(self.horizon_steps * self.T, HORIZON_H, rel_tol=1e-9):
                raise ConfigError("horizon_steps", f"horizon_steps*T must be {HORIZON_H} h")
            if self.switch_step != 720:
                raise ConfigError("switch_step", "must be 720")
            if self.n_cells != 20:
                raise ConfigError("n_cells", "must be 20")

    @property
    def stretch(self):
        return uniform_stretch(self.n_cells, self.cell_length, self.lanes, self.onramp_cell)

    @property
    def model_params(self) -> GlobalModelParams:
        return replace(self.model, T=self.T)

    @property
    def ref(self) -> ReferenceModelParams:
        return ReferenceModelParams(self.K_r, self.C_r)

    def fd_at(self, k: int) -> MetanetFDParams:
        return self.fd_before if k < self.switch_step else self.fd_after


_PRESETS: dict[str, dict] = {
    "S1": dict(control="none"),
    "S2": dict(control="fixed", setpoints=(33.0, 28.0)),
    "S3a": dict(control="fixed", setpoints=(33.0, 33.0)),
    "S3b": dict(control="fixed", setpoints=(28.0, 28.0)),
    "S4a": dict(control="adaptive", rho_star_0=33.0, q_star_0=4000.0),
    "S4b": dict(control="adaptive", rho_star_0=28.0, q_star_0=3600.0),
    "S5a": dict(control="adaptive", rho_star_0=40.0, q_star_0=4000.0),
    "S5b": dict(control="adaptive", rho_star_0=20.0, q_star_0=4000.0),
    "custom": dict(),
}


def scenario_config(scenario: str = "S4a", **overrides) -> ScenarioConfig:
    """Preset configuration for a named scenario, with optional overrides."""
    if scenario not in _PRESETS:
        raise ConfigError("scenario", f"unknown id {scenario!r}")
    return ScenarioConfig(scenario=scenario, **{**_PRESETS[scenario], **overrides})


@dataclass
class RunResult:
    """Trajectory and metrics of one run; every array has ``K + 1`` rows."""

    config: ScenarioConfig
    rho: np.ndarray  # (K+1, N) veh/km/lane
    v: np.ndarray  # (K+1, N) km/h
    q: np.ndarray  # (K+1, N) veh/h
    w_ramp: np.ndarray
    w_main: np.ndarray
    u_cmd: np.ndarray  # NaN when metering is off
    r_applied: np.ndarray
    rho_star_hat: np.ndarray  # set-point in use; NaN without control
    q_star_hat: np.ndarray  # NaN unless adaptive
    e: np.ndarray  # (K+1, 2) prediction error, NaN unless adaptive
    trace_gamma: np.ndarray  # NaN unless adaptive
    gamma: np.ndarray | None  # (K+1, 4, 4) gain history when adaptive
    tts: float
    balance_error: float
    improvement: float | None = None
    convergence_min: tuple[float | None, float | None] | None = None

    @property
    def t_min(self) -> np.ndarray:
        return np.arange(len(self.w_ramp)) * self.config.T * 60.0

    @property
    def adaptive(self) -> bool:
        return self.config.control == "adaptive"

    @property
    def peak_queue(self) -> float:
        return float(self.w_ramp.max())

    def measured(self) -> tuple[np.ndarray, np.ndarray]:
        """Noise-free density and flow at the bottleneck cell."""
        i = self.config.onramp_cell - 1
        return self.rho[:, i], self.q[:, i]


def tts(rho: np.ndarray, w_ramp, w_main, lengths, lanes, T: float) -> float:
    """Total time spent ``T * sum_k (sum_i L_i lam_i rho_i(k) + w_ramp(k) + w_main(k))``.

    Each row of ``rho`` is a state held for one step ``T``.

    >>> tts(np.full((1440, 20), 25.0), 0.0, 0.0, np.full(20, 0.5), np.full(20, 2), 1 / 360)
    2000.0
    """
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    stored = rho @ (np.asarray(lengths, dtype=float) * np.asarray(lanes, dtype=float))
    total = stored + np.broadcast_to(w_ramp, stored.shape) + np.broadcast_to(w_main, stored.shape)
    return float(T * np.sum(total))


def improvement(tts_base: float, tts_other: float) -> float:
    """TTS reduction relative to the baseline, in percent."""
    if not tts_base > 0:
        raise ValueError("baseline TTS must be positive")
    return 100.0 * (tts_base - tts_other) / tts_base


def convergence_time(
    series, target: float, tol: float, sustain: int | None = None, T: float = 10.0 / 3600.0
) -> float | None:
    """Minutes until ``series`` enters ``target +- tol`` and stays there.

    With ``sustain`` it must stay for that many consecutive steps; without it,
    until the end of the series. Returns ``None`` if that never happens.

    >>> convergence_time([0.0] * 900 + [1.0] * 100, 1.0, 0.1)
    150.0
    """
    x = np.asarray(series, dtype=float)
    inside = np.abs(x - target) <= tol
    n = len(x)
    if sustain is None:
        if n == 0 or not inside[-1]:
            return None
        outside = np.flatnonzero(~inside)
        first = 0 if outside.size == 0 else int(outside[-1]) + 1
        return first * T * 60.0
    if sustain < 1:
        raise ValueError("sustain must be at least one step")
    run = 0
    for i, ok in enumerate(inside):
        run = run + 1 if ok else 0
        if run >= sustain:
            return (i - sustain + 1) * T * 60.0
    return None


def empirical_critical(result: RunResult) -> tuple[float, float]:
    """Density at the highest measured flow of the bottleneck cell, per FD phase."""
    rho, q = result.measured()
    s = result.config.switch_step
    out = []
    for sl in (slice(0, s), slice(s, len(q))):
        i = int(np.argmax(q[sl]))
        out.append(float(rho[sl][i]))
    return out[0], out[1]


@dataclass(frozen=True)
class Episode:
    """One congestion episode at the bottleneck cell; times in minutes."""

    start_min: float
    end_min: float
    peak_density: float
    spill_cells: int  # longest run of slow cells directly upstream of the bottleneck


def congestion_episodes(
    result: RunResult, factor: float = 1.3, v_slow: float = 50.0, merge_gap_min: float = 15.0
) -> list[Episode]:
    """Periods where the bottleneck density exceeds ``factor`` times the nominal critical density.

    The threshold follows the FD in force at each step. Exceedances separated by
    less than ``merge_gap_min`` belong to the same episode, so a density that
    flickers around the threshold does not split one jam into several.
    """
    cfg = result.config
    i = cfg.onramp_cell - 1
    rho15 = result.rho[:, i]
    k = np.arange(len(rho15))
    thresh = np.where(k < cfg.switch_step, cfg.fd_before.rho_cr, cfg.fd_after.rho_cr) * factor
    hot = np.flatnonzero(rho15 > thresh)
    if hot.size == 0:
        return []
    dt = cfg.T * 60.0
    breaks = np.flatnonzero((np.diff(hot) - 1) * dt >= merge_gap_min)
    starts = np.concatenate(([hot[0]], hot[breaks + 1]))
    ends = np.concatenate((hot[breaks], [hot[-1]]))

    slow = result.v[:, :i][:, ::-1] < v_slow  # nearest upstream cell first
    run = np.where(slow.all(axis=1), i, np.argmin(slow, axis=1))
    return [
        Episode(float(a * dt), float(b * dt), float(rho15[a : b + 1].max()), int(run[a : b + 1].max()))
        for a, b in zip(starts, ends)
    ]


def run_scenario(config: ScenarioConfig, baseline_tts: float | None = None) -> RunResult:
    """Simulate one configuration over its horizon.

    At every step the bottleneck density and flow are measured (with optional
    multiplicative noise), the set-point is chosen, ALINEA computes the ramp
    command and the network advances. The last recorded row carries the
    decision that would apply at the end of the horizon.
    """
    cfg = config
    stretch = cfg.stretch
    params = cfg.model_params
    T = cfg.T
    K = cfg.horizon_steps
    N = cfg.n_cells
    ib = cfg.onramp_cell - 1
    rng = np.random.default_rng(cfg.seed)

    rho = np.empty((K + 1, N))
    v = np.empty((K + 1, N))
    q = np.empty((K + 1, N))
    w_ramp = np.empty(K + 1)
    w_main = np.empty(K + 1)
    u_cmd = np.full(K + 1, np.nan)
    r_applied = np.empty(K + 1)
    sp_hist = np.full(K + 1, np.nan)
    q_hat = np.full(K + 1, np.nan)
    e_hist = np.full((K + 1, 2), np.nan)
    tr_hist = np.full(K + 1, np.nan)
    gamma = np.empty((K + 1, 4, 4)) if cfg.control == "adaptive" else None

    state: NetworkState = equilibrium_state(stretch, cfg.fd_before, cfg.initial_density)
    ctl = AlineaState(cfg.u_init, cfg.K_A, cfg.u_min, cfg.u_max) if cfg.control != "none" else None
    est = (
        init_estimator(cfg.rho_star_0, cfg.q_star_0, cfg.Gamma_0, cfg.ref, cfg.prescale)
        if cfg.control == "adaptive"
        else None
    )
    inflow = outflow = 0.0

    for k in range(K + 1):
        d_main, d_ramp = cfg.demand(k * T * 60.0)
        rho[k], v[k], q[k] = state.rho, state.v, state.q
        w_ramp[k], w_main[k] = state.w_ramp, state.w_main

        rho_m, q_m = float(state.rho[ib]), float(state.q[ib])
        if cfg.noise_std > 0:
            eps = rng.normal(0.0, cfg.noise_std, 2)
            rho_m = max(rho_m * (1.0 + eps[0]), 0.0)
            q_m = max(q_m * (1.0 + eps[1]), 0.0)

        if cfg.control == "none":
            u = cfg.ramp_capacity
        else:
            if est is not None:
                est, sp, q_hat[k] = estimator_step(est, rho_m, q_m, T)
                e_hist[k] = est.e
                gamma[k] = est.Gamma
                tr_hist[k] = np.trace(est.Gamma)
            else:
                sp = cfg.setpoints[0] if k < cfg.switch_step else cfg.setpoints[1]
            sp_hist[k] = sp
            u, ctl = alinea_step(ctl, rho_m, sp)
            u_cmd[k] = u
        r = applied_ramp_inflow(min(u, cfg.ramp_capacity), d_ramp, state.w_ramp, T)
        r_applied[k] = r
        if k == K:
            break

        inflow += T * (d_main + d_ramp)
        outflow += T * float(state.q[-1])
        try:
            state = step_network(state, stretch, params, cfg.fd_at(k), d_main, r, d_ramp, cfg.cap_downstream)
        except ValueError as exc:
            raise SimulationError(str(exc), k) from exc

    lengths, lanes = stretch.lengths, stretch.lanes
    total_tts = tts(rho[:K], w_ramp[:K], w_main[:K], lengths, lanes, T)
    weights = lengths * lanes
    initial = float(rho[0] @ weights) + w_ramp[0] + w_main[0]
    final = float(rho[K] @ weights) + w_ramp[K] + w_main[K]
    balance = (final - initial) - (inflow - outflow)

    result = RunResult(
        config=cfg,
        rho=rho,
        v=v,
        q=q,
        w_ramp=w_ramp,
        w_main=w_main,
        u_cmd=u_cmd,
        r_applied=r_applied,
        rho_star_hat=sp_hist,
        q_star_hat=q_hat,
        e=e_hist,
        trace_gamma=tr_hist,
        gamma=gamma,
        tts=total_tts,
        balance_error=float(balance),
    )
    if baseline_tts is not None:
        result.improvement = improvement(baseline_tts, total_tts)
    if est is not None:
        result.convergence_min = _phase_convergence(result)
    return result


# Band and target used for the per-phase convergence times in summaries.
CONVERGENCE_TOL = 1.0


def _phase_convergence(result: RunResult) -> tuple[float | None, float | None]:
    cfg = result.config
    s = cfg.switch_step
    series = result.rho_star_hat
    return (
        convergence_time(series[:s], cfg.setpoints[0], CONVERGENCE_TOL, T=cfg.T),
        convergence_time(series[s:], cfg.setpoints[1], CONVERGENCE_TOL, T=cfg.T),
    )


def run_suite(ids: Sequence[str] = SCENARIO_IDS[:-1], **overrides) -> dict[str, RunResult]:
    """Run named scenarios with improvements measured against a same-build S1."""
    base = run_scenario(scenario_config("S1", **overrides))
    base.improvement = 0.0
    out = {}
    for sid in ids:
        out[sid] = base if sid == "S1" else run_scenario(scenario_config(sid, **overrides), base.tts)
    return out


@dataclass
class SweepResult:
    """Improvement grid, row-major over ``K_r`` (rows) and ``C_r`` (columns).

    Cells whose run failed hold NaN and are listed in ``failed``.
    """

    Kr_values: tuple[float, ...]
    Cr_values: tuple[float, ...]
    tts: np.ndarray
    improvement: np.ndarray
    baseline_tts: float
    failed: list[tuple[float, float, str]] = field(default_factory=list)

    def rows(self):
        for i, kr in enumerate(self.Kr_values):
            for j, cr in enumerate(self.Cr_values):
                yield kr, cr, float(self.tts[i, j]), float(self.improvement[i, j])


def _sweep_cell(args) -> tuple[float | None, str | None]:
    cfg = args
    try:
        return run_scenario(cfg).tts, None
    except (SimulationError, ArithmeticError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def sensitivity_sweep(
    base: ScenarioConfig,
    Kr_values: Sequence[float],
    Cr_values: Sequence[float],
    baseline_tts: float | None = None,
    workers: int | None = None,
) -> SweepResult:
    """TTS improvement of ``base`` for every ``(K_r, C_r)`` pair.

    The baseline is a same-build no-control run unless ``baseline_tts`` is
    given. Runs are independent and may be spread over ``workers`` processes;
    the result does not depend on the execution order.
    """
    Kr_values = tuple(float(x) for x in Kr_values)
    Cr_values = tuple(float(x) for x in Cr_values)
    for name, vals in (("K_r", Kr_values), ("C_r", Cr_values)):
        if not vals or any(not x > 0 for x in vals):
            raise ConfigError(name, "sweep values must be positive")
    if baseline_tts is None:
        baseline_tts = run_scenario(replace(base, control="none")).tts
    cfgs = [replace(base, K_r=kr, C_r=cr) for kr in Kr_values for cr in Cr_values]
    if workers is None or workers <= 1:
        outcomes = [_sweep_cell(c) for c in cfgs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_sweep_cell, cfgs, chunksize=4))
    shape = (len(Kr_values), len(Cr_values))
    tts_grid = np.full(shape, np.nan)
    failed = []
    for n, (value, err) in enumerate(outcomes):
        i, j = divmod(n, shape[1])
        if value is None:
            failed.append((Kr_values[i], Cr_values[j], err))
        else:
            tts_grid[i, j] = value
    imp = 100.0 * (baseline_tts - tts_grid) / baseline_tts
    return SweepResult(Kr_values, Cr_values, tts_grid, imp, baseline_tts, failed)


@dataclass(frozen=True)
class NoiseRow:
    noise_std: float
    mean: float  # terminal rho_star_hat across seeds
    std: float
    bias_pct: float  # (mean - reference) / reference * 100
    n_runs: int


def noise_experiment(
    base: ScenarioConfig,
    noise_stds: Sequence[float],
    seeds: Sequence[int],
    reference: float | None = None,
) -> list[NoiseRow]:
    """Terminal set-point estimate statistics under measurement noise.

    Noise is applied to the estimator and controller inputs only; the plant is
    untouched. ``reference`` defaults to the noise-free terminal estimate.
    """
    if base.control != "adaptive":
        raise ConfigError("control", "noise experiments need the adaptive estimator")
    if not seeds:
        raise ValueError("at least one seed is required")
    if reference is None:
        reference = float(run_scenario(replace(base, noise_std=0.0)).rho_star_hat[-1])
    rows = []
    for std in noise_stds:
        finals = np.array(
            [run_scenario(replace(base, noise_std=float(std), seed=int(s))).rho_star_hat[-1] for s in seeds]
        )
        mean = float(finals.mean())
        rows.append(
            NoiseRow(
                noise_std=float(std),
                mean=mean,
                std=float(finals.std()),
                bias_pct=100.0 * (mean - reference) / reference,
                n_runs=len(finals),
            )
        )
    return rows
