"""Command line front end: ``ramplab {run,sweep,compare,noise}``.

Configs and summaries are JSON, trajectories and tables are CSV. Every number
is written with 9 significant digits so repeated runs are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 simulation error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .estimator import EstimatorError
from .fd import MetanetFDParams
from .metanet import GlobalModelParams, SimulationError
from .scenarios import (
    SCENARIO_IDS,
    ConfigError,
    DemandProfile,
    RunResult,
    ScenarioConfig,
    noise_experiment,
    run_scenario,
    scenario_config,
    sensitivity_sweep,
)

__all__ = [
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_SIM",
    "config_to_dict",
    "config_from_dict",
    "parse_config",
    "emit_config",
    "summary_dict",
    "trajectory_columns",
    "write_trajectory",
    "read_trajectory",
    "write_plotdata",
    "compare_summaries",
    "parse_range",
    "main",
]

EXIT_OK, EXIT_CONFIG, EXIT_SIM = 0, 2, 3
SIG = 9

_NESTED = {"fd_before": MetanetFDParams, "fd_after": MetanetFDParams, "model": GlobalModelParams, "demand": DemandProfile}
_TUPLES = {"setpoints", "prescale"}
_FIELDS = {f.name for f in dataclasses.fields(ScenarioConfig)}


def fmt(x: float) -> str:
    """Fixed 9-significant-digit text for a number."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.{SIG}g}"


def _round(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None or isinstance(obj, (str, int)):
        return obj
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.generic):
        return _round(obj.item())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj: Any) -> str:
    return json.dumps(_round(obj), indent=2, sort_keys=True) + "\n"


# -- configs -----------------------------------------------------------------


def config_to_dict(cfg: ScenarioConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        val = getattr(cfg, f.name)
        if f.name in _NESTED:
            val = dataclasses.asdict(val)
        elif isinstance(val, tuple):
            val = list(val)
        out[f.name] = val
    return out


def _nested(name: str, raw: Any):
    cls = _NESTED[name]
    if not isinstance(raw, dict):
        raise ConfigError(name, "expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
    kwargs = dict(raw)
    if cls is DemandProfile and "ramp_peaks" in kwargs:
        kwargs["ramp_peaks"] = tuple(tuple(float(x) for x in p) for p in kwargs["ramp_peaks"])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from exc


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Validated config: the scenario preset overlaid with ``raw``.

    Unknown keys and invariant violations raise :class:`ConfigError` naming
    the field.
    """
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    for key in raw:
        if key not in _FIELDS:
            raise ConfigError(key, "unknown key")
    scenario = raw.get("scenario", "S4a")
    overrides = {}
    for key, val in raw.items():
        if key == "scenario":
            continue
        if key in _NESTED:
            val = _nested(key, val)
        elif key in _TUPLES:
            if not isinstance(val, (list, tuple)):
                raise ConfigError(key, "expected a list")
            val = tuple(float(x) for x in val)
        overrides[key] = val
    try:
        return scenario_config(scenario, **overrides)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(next(iter(overrides), "scenario"), str(exc)) from exc


def parse_config(path: str | os.PathLike | None) -> tuple[ScenarioConfig, dict]:
    """Read a JSON config file; returns the config and the raw overrides.

    A missing path or an empty file gives the default S4a configuration.
    """
    if path is None:
        return scenario_config("S4a"), {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from exc
    if not text.strip():
        return scenario_config("S4a"), {}
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    return config_from_dict(raw), raw


def emit_config(cfg: ScenarioConfig) -> str:
    """Full-precision JSON for ``cfg``; :func:`parse_config` reads it back exactly."""
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


# -- run outputs ---------------------------------------------------------------


def trajectory_columns(n_cells: int) -> list[str]:
    cells = range(1, n_cells + 1)
    return (
        ["k", "t_min"]
        + [f"rho_{i}" for i in cells]
        + [f"v_{i}" for i in cells]
        + [f"q_{i}" for i in cells]
        + ["w_ramp", "w_main", "u_cmd", "r_applied", "rho_star_hat", "q_star_hat", "e1", "e2", "trace_gamma"]
    )


def trajectory_matrix(result: RunResult) -> np.ndarray:
    K1 = len(result.w_ramp)
    return np.column_stack(
        [
            np.arange(K1, dtype=float),
            result.t_min,
            result.rho,
            result.v,
            result.q,
            result.w_ramp,
            result.w_main,
            result.u_cmd,
            result.r_applied,
            result.rho_star_hat,
            result.q_star_hat,
            result.e,
            result.trace_gamma,
        ]
    )


def write_trajectory(result: RunResult, path: str | os.PathLike) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trajectory_columns(result.config.n_cells))
    for row in trajectory_matrix(result):
        w.writerow([str(int(row[0]))] + [fmt(x) for x in row[1:]])
    Path(path).write_text(buf.getvalue())


def read_trajectory(path: str | os.PathLike) -> tuple[list[str], np.ndarray]:
    """Header and float matrix of a trajectory CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


def summary_dict(result: RunResult, overrides: dict | None = None) -> dict:
    cfg = result.config
    out = {
        "status": "ok",
        "scenario": cfg.scenario,
        "control": cfg.control,
        "tts_veh_h": result.tts,
        "improvement_pct": result.improvement,
        "peak_ramp_queue_veh": result.peak_queue,
        "balance_error_veh": result.balance_error,
        "horizon_steps": cfg.horizon_steps,
        "T_h": cfg.T,
        "config": config_to_dict(cfg),
        "overrides": overrides or {},
    }
    if result.adaptive:
        c1, c2 = result.convergence_min
        out["convergence_min"] = {"phase1": c1, "phase2": c2}
        out["final_rho_star_hat"] = float(result.rho_star_hat[-1])
        out["final_q_star_hat"] = float(result.q_star_hat[-1])
    return out


PLOT_COLUMNS = ["t_min", "rho_measured", "rho_star_hat", "q_star_hat", "u_cmd", "r_applied", "w_ramp", "v_min_upstream"]
EMIT_CHOICES = ("trajectory", "summary", "plotdata")


def write_plotdata(result: RunResult, path: str | os.PathLike) -> None:
    """Measured-cell series for plotting: density against its set-point and the ramp.

    ``v_min_upstream`` is the slowest speed over the cells upstream of the
    on-ramp, a quick view of spill-back.
    """
    i = result.config.onramp_cell - 1
    v_up = result.v[:, : i + 1].min(axis=1)
    cols = [result.t_min, result.rho[:, i], result.rho_star_hat, result.q_star_hat,
            result.u_cmd, result.r_applied, result.w_ramp, v_up]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for row in np.column_stack(cols):
        w.writerow([fmt(x) for x in row])
    Path(path).write_text(buf.getvalue())


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _ensure_dir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("out", f"cannot create {path}: {exc.strerror}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError("out", f"{path} is not writable")


# -- compare -------------------------------------------------------------------


def compare_summaries(base: dict, others: Sequence[dict]) -> list[tuple[str, float, float]]:
    """``(scenario, TTS, improvement %)`` rows against ``base``.

    Raises :class:`ConfigError` when the horizons differ.

    >>> [(sid, t, round(imp, 2)) for sid, t, imp in
    ...  compare_summaries({"tts_veh_h": 1741.0}, [{"scenario": "S2", "tts_veh_h": 1638.0}])]
    [('S2', 1638.0, 5.92)]
    """
    tb = float(base["tts_veh_h"])
    if not tb > 0:
        raise ConfigError("tts_veh_h", "baseline TTS must be positive")
    horizon = _horizon(base)
    rows = []
    for s in others:
        h = _horizon(s)
        if horizon is not None and h is not None and not math.isclose(h, horizon, rel_tol=1e-9):
            raise ConfigError("horizon", f"mismatched horizons: {horizon} h vs {h} h")
        t = float(s["tts_veh_h"])
        rows.append((str(s.get("scenario", "?")), t, 100.0 * (tb - t) / tb))
    return rows


def _horizon(summary: dict) -> float | None:
    if "horizon_steps" in summary and "T_h" in summary:
        return float(summary["horizon_steps"]) * float(summary["T_h"])
    return None


# -- argument handling ---------------------------------------------------------


def parse_range(text: str, name: str) -> list[float]:
    """Inclusive ``A:B:STEP`` grid.

    >>> parse_range("1:3:0.5", "K_r")
    [1.0, 1.5, 2.0, 2.5, 3.0]
    """
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError as exc:
        raise ConfigError(name, f"expected A:B:STEP, got {text!r}") from exc
    if not step > 0 or b < a:
        raise ConfigError(name, "need STEP > 0 and B >= A")
    n = int(math.floor((b - a) / step + 1e-9)) + 1
    return [float(fmt(a + i * step)) for i in range(n)]


def _float_list(text: str, name: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(name, f"expected comma-separated numbers, got {text!r}") from exc


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--scenario", help="scenario id(s), comma separated")
    common.add_argument("--seed", type=int, help="random seed override")

    p = argparse.ArgumentParser(prog="ramplab", description="Adaptive ramp-metering experiments")
    sub = p.add_subparsers(dest="verb", required=True)
    rn = sub.add_parser("run", parents=[common], help="simulate scenarios")
    rn.add_argument("--emit", default="trajectory,summary", help="any of trajectory,summary,plotdata")
    sw = sub.add_parser("sweep", parents=[common], help="K_r x C_r sensitivity grid")
    sw.add_argument("--kr-range", default="1:20:1")
    sw.add_argument("--cr-range", default="1:9:1")
    sw.add_argument("--workers", type=int, default=1)
    cp = sub.add_parser("compare", parents=[common], help="compare run summaries")
    cp.add_argument("baseline", help="baseline summary.json")
    cp.add_argument("others", nargs="+", help="summary.json files to compare")
    nz = sub.add_parser("noise", parents=[common], help="measurement-noise experiment")
    nz.add_argument("--noise-std", default="0,0.01,0.02,0.05")
    nz.add_argument("--n-seeds", type=int, default=20)
    return p


def _configs(args) -> list[tuple[ScenarioConfig, dict]]:
    cfg, raw = parse_config(args.config)
    ids = [s.strip() for s in args.scenario.split(",")] if args.scenario else [cfg.scenario]
    out = []
    for sid in ids:
        if sid not in SCENARIO_IDS:
            raise ConfigError("scenario", f"unknown id {sid!r}")
        r = {k: v for k, v in raw.items() if k != "scenario"}
        if args.seed is not None:
            r["seed"] = args.seed
        out.append((config_from_dict({**r, "scenario": sid}), r))
    return out


def _emit_flags(text: str) -> set[str]:
    flags = {x.strip() for x in text.split(",") if x.strip()}
    bad = flags - set(EMIT_CHOICES)
    if bad or not flags:
        raise ConfigError("emit", f"choose from {', '.join(EMIT_CHOICES)}")
    return flags


def cmd_run(args) -> int:
    jobs = _configs(args)
    emit = _emit_flags(args.emit)
    out = Path(args.out)
    _ensure_dir(out)
    code = EXIT_OK
    for cfg, raw in jobs:
        target = out if len(jobs) == 1 else out / cfg.scenario
        try:
            base = run_scenario(dataclasses.replace(cfg, control="none"))
            res = run_scenario(cfg, base.tts)
        except (SimulationError, EstimatorError) as exc:
            _write(target / "summary.json", dumps({"status": "failed", "scenario": cfg.scenario, "error": str(exc)}))
            print(f"{cfg.scenario}: simulation failed: {exc}", file=sys.stderr)
            code = EXIT_SIM
            continue
        target.mkdir(parents=True, exist_ok=True)
        if "trajectory" in emit:
            write_trajectory(res, target / "trajectory.csv")
        if "plotdata" in emit:
            write_plotdata(res, target / "plotdata.csv")
        if "summary" in emit:
            _write(target / "summary.json", dumps(summary_dict(res, raw)))
        print(f"{cfg.scenario}: TTS {fmt(res.tts)} veh.h, improvement {res.improvement:.2f}%")
    return code


def cmd_sweep(args) -> int:
    (cfg, _), *_ = _configs(args)
    _ensure_dir(Path(args.out))
    krs = parse_range(args.kr_range, "K_r")
    crs = parse_range(args.cr_range, "C_r")
    res = sensitivity_sweep(cfg, krs, crs, workers=args.workers)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["K_r", "C_r", "tts_veh_h", "improvement_pct", "status"])
    for kr, cr, t, imp in res.rows():
        w.writerow([fmt(kr), fmt(cr), fmt(t), fmt(imp), "ok" if math.isfinite(t) else "missing"])
    _write(Path(args.out) / "sweep.csv", buf.getvalue())
    print(f"sweep: {len(krs)}x{len(crs)} cells, {len(res.failed)} missing")
    return EXIT_SIM if res.failed else EXIT_OK


def cmd_compare(args) -> int:
    def load(p):
        try:
            return json.loads(Path(p).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("summary", f"cannot read {p}: {exc}") from exc

    base = load(args.baseline)
    rows = compare_summaries(base, [load(p) for p in args.others])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "tts_veh_h", "improvement_pct"])
    print(f"{'scenario':<10}{'TTS [veh.h]':>14}{'improvement':>14}")
    for sid, t, imp in rows:
        w.writerow([sid, fmt(t), fmt(imp)])
        print(f"{sid:<10}{t:>14.1f}{imp:>13.1f}%")
    _write(Path(args.out) / "compare.csv", buf.getvalue())
    return EXIT_OK


def cmd_noise(args) -> int:
    (cfg, _), *_ = _configs(args)
    _ensure_dir(Path(args.out))
    stds = _float_list(args.noise_std, "noise_std")
    if any(s < 0 for s in stds):
        raise ConfigError("noise_std", "must be non-negative")
    seed0 = cfg.seed if args.seed is None else args.seed
    rows = noise_experiment(cfg, stds, list(range(seed0, seed0 + args.n_seeds)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["noise_std", "mean_rho_star_hat", "std_rho_star_hat", "bias_pct", "n_runs"])
    for r in rows:
        w.writerow([fmt(r.noise_std), fmt(r.mean), fmt(r.std), fmt(r.bias_pct), r.n_runs])
    _write(Path(args.out) / "noise.csv", buf.getvalue())
    return EXIT_OK


_COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare, "noise": cmd_noise}


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, EstimatorError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM
