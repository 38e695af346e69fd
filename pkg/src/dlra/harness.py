"""Benchmark drivers behind the CLI: single runs, comparisons, convergence studies.

File outputs are UTF-8 CSV with a header row and full double precision
(17 significant digits); run metadata goes to a JSON sidecar. All randomness in
the synthetic problems flows from the run config's single seed.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .integrators import StepConfig, StepFailureError, Trajectory, integrate
from .lowrank import FactoredMatrix, frobenius_distance
from .odesolve import OdeMethod, solve_matrix_ode
from .planesource import PlanesourceProblem, cfl_step_size, initial_condition, scalar_flux
from .rhs import RhsOperator, SylvesterProblem, TangentialProblem

__all__ = [
    "RunConfig",
    "RunOutput",
    "UsageError",
    "make_sylvester_problem",
    "make_tangential_problem",
    "build_problem",
    "run",
    "compare",
    "convergence_study",
    "load_config_file",
]

PROBLEMS = ("planesource", "sylvester", "tangential")
INTEGRATORS = ("parallel", "parallel_serial_s11", "bug")


class UsageError(ValueError):
    """Invalid run configuration; the message names the offending key."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run description; defaults are the desk-scale benchmark run."""

    problem: str = "planesource"
    integrator: str = "parallel"
    theta_bar: float = 1e-2
    theta_mode: str = "relative"
    c_reject: float = 1.0
    r_max: int | None = None
    max_retries: int = 10
    substep_method: str = "euler"
    substep_count: int = 1
    eta_columns: int | str = "all"
    nx: int = 200
    nmoments: int = 100
    cfl: float = 0.99
    t_end: float = 1.0
    snapshot_times: tuple[float, ...] = (1.0,)
    h: float | None = None
    r0: int = 1
    seed: int = 0
    output_dir: str = "runs/out"

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise UsageError(f"problem: unknown value {self.problem!r}, expected one of {PROBLEMS}")
        if self.integrator not in INTEGRATORS:
            raise UsageError(
                f"integrator: unknown value {self.integrator!r}, expected one of {INTEGRATORS}"
            )
        if self.problem != "planesource" and self.h is None:
            raise UsageError("h: required for non-CFL problems")
        if self.t_end < 0:
            raise UsageError("t_end: must be nonnegative")
        for t_req in self.snapshot_times:
            if not (0.0 <= t_req <= self.t_end):
                raise UsageError(f"snapshot_times: {t_req} outside [0, {self.t_end}]")

    def step_config(self) -> StepConfig:
        return StepConfig(
            theta_bar=self.theta_bar,
            theta_mode=self.theta_mode,
            c_reject=self.c_reject,
            r_max=self.r_max,
            max_retries=self.max_retries,
            substep_method=self.substep_method,
            substep_count=self.substep_count,
            eta_columns=self.eta_columns,
        )


@dataclass
class RunOutput:
    config: RunConfig
    op: RhsOperator
    y0: FactoredMatrix
    y0_dense_full: np.ndarray | None
    h: float
    trajectory: Trajectory
    files: dict[str, Path] = field(default_factory=dict)


def make_sylvester_problem(
    m: int, n: int, seed: int, spectrum_len: int = 16, with_source: bool = True
) -> tuple[SylvesterProblem, np.ndarray]:
    """Seeded linear test problem plus a dense initial matrix with 10^-j spectrum."""
    rng = np.random.default_rng(seed)
    a_m = rng.standard_normal((m, m))
    a_n = rng.standard_normal((n, n))
    mat_m = 0.5 * (a_m - a_m.T) / np.sqrt(m) - 0.5 * np.eye(m)
    mat_n = 0.5 * (a_n - a_n.T) / np.sqrt(n) - 0.5 * np.eye(n)
    source = None
    if with_source:
        cu = np.linalg.qr(rng.standard_normal((m, 2)))[0]
        cv = np.linalg.qr(rng.standard_normal((n, 2)))[0]
        source = FactoredMatrix(cu, np.diag([0.1, 0.05]), cv)
    op = SylvesterProblem(M=mat_m, N=mat_n, C=source)

    k = min(spectrum_len, m, n)
    u0 = np.linalg.qr(rng.standard_normal((m, k)))[0]
    v0 = np.linalg.qr(rng.standard_normal((n, k)))[0]
    sigma = 10.0 ** -np.arange(k, dtype=float)
    y0_dense = (u0 * sigma) @ v0.T
    return op, y0_dense


def make_tangential_problem(m: int, n: int, r: int, seed: int,
                            singular_values: np.ndarray | None = None) -> TangentialProblem:
    return TangentialProblem.random(m, n, r, seed=seed, singular_values=singular_values)


def build_problem(config: RunConfig):
    """Instantiate (op, y0_lowrank, y0_dense_full_or_None, h, t0) from a config."""
    if config.problem == "planesource":
        prob = PlanesourceProblem(nx=config.nx, n_moments=config.nmoments, cfl=config.cfl)
        y0 = initial_condition(prob, r0=config.r0)
        h = cfl_step_size(prob) if config.h is None else config.h
        return prob, y0, y0.dense(), h, 0.0
    if config.problem == "sylvester":
        op, y0_dense = make_sylvester_problem(config.nx, config.nmoments, config.seed)
        y0 = FactoredMatrix.from_dense(y0_dense, max(config.r0, 1))
        return op, y0, y0_dense, config.h, 0.0
    op = make_tangential_problem(config.nx, config.nmoments, max(config.r0, 2), config.seed)
    y0 = op.exact(0.0)
    return op, y0, y0.dense(), config.h, 0.0


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_diagnostics_csv(path: Path, traj: Trajectory, cfg: RunConfig) -> None:
    header = ["step", "t", "rank", "eta", "reject_bound", "norm", "retries", "tail"]
    rows = []
    for i in range(len(traj.times)):
        bound = cfg.c_reject * traj.thetas[i] / traj.h if i > 0 else 0.0
        rows.append([
            i, traj.times[i], int(traj.ranks[i]), traj.etas[i], bound,
            traj.norms[i], int(traj.retries[i]), traj.tails[i],
        ])
    _write_csv(path, header, rows)


def run(config: RunConfig, runner=None) -> RunOutput:
    """Execute one integrator run and write diagnostics, flux snapshots, metadata.

    On a step failure the partial diagnostics are flushed before the error
    propagates.
    """
    op, y0, y0_dense, h, t0 = build_problem(config)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = config.step_config()

    wall_start = time.perf_counter()
    try:
        traj = integrate(
            op, y0, t0, config.t_end, h, cfg,
            stepper=config.integrator,
            snapshot_times=config.snapshot_times,
            runner=runner,
        )
    except StepFailureError as err:
        partial = err.diagnostics.get("partial_trajectory")
        if partial is not None:
            write_diagnostics_csv(out_dir / "diagnostics.csv", partial, config)
        raise
    wall = time.perf_counter() - wall_start

    files: dict[str, Path] = {}
    diag_path = out_dir / "diagnostics.csv"
    write_diagnostics_csv(diag_path, traj, config)
    files["diagnostics"] = diag_path

    if config.problem == "planesource":
        for t_req, (t_actual, y_snap) in sorted(traj.snapshots.items()):
            flux = scalar_flux(y_snap, op, time=t_actual)
            path = out_dir / f"flux_t{t_req:g}.csv"
            _write_csv(path, ["x", "phi"], [[x, p] for x, p in zip(op.x, flux.values)])
            files[f"flux_t{t_req:g}"] = path

    phase_totals: dict[str, float] = {}
    for timings in traj.step_timings:
        for key, val in timings.items():
            phase_totals[key] = phase_totals.get(key, 0.0) + val
    steps = max(traj.step_count, 1)
    meta = {
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in dataclasses.asdict(config).items()},
        "wall_seconds": wall,
        "steps": traj.step_count,
        "snapshot_times_actual": {f"{t_req:g}": t_act
                                  for t_req, (t_act, _) in sorted(traj.snapshots.items())},
        "partial_final_step": traj.partial_final_step,
        "final_rank": int(traj.ranks[-1]),
        "max_rank": int(traj.ranks.max()),
        "total_retries": int(traj.retries.sum()),
        "phase_seconds_total": phase_totals,
        "phase_seconds_mean": {k: v / steps for k, v in phase_totals.items()},
        "warnings": [[i, w] for i, w in traj.warnings],
    }
    meta_path = out_dir / "run_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    files["run_meta"] = meta_path

    return RunOutput(config=config, op=op, y0=y0, y0_dense_full=y0_dense, h=h,
                     trajectory=traj, files=files)


def _dense_states_at(op: RhsOperator, y0_dense: np.ndarray, times: list[float],
                     method: str, substeps_per_interval: int) -> dict[float, np.ndarray]:
    """March the full dense ODE through the given (sorted) times."""
    states: dict[float, np.ndarray] = {}
    t_prev = times[0]
    y = np.array(y0_dense, dtype=float, copy=True)
    states[t_prev] = y
    for t_next in times[1:]:
        if t_next > t_prev:
            y = solve_matrix_ode(op.dense_eval, y, t_prev, t_next,
                                 OdeMethod(method, substeps_per_interval))
        states[t_next] = y
        t_prev = t_next
    return states


def compare(config_a: RunConfig, config_b: RunConfig, metric: str = "flux_l2_rel",
            output_dir: str | None = None, oracle_substeps: int = 1) -> tuple[Path, list[dict]]:
    """Run two configs on the shared problem and report per-snapshot distances.

    flux_l2_rel: relative L2 distance of scalar fluxes (planesource only).
    dense_l2_rel: relative Frobenius distance of the solution matrices, plus
    each run's distance to a dense full-rank reference run.
    """
    if metric not in ("flux_l2_rel", "dense_l2_rel"):
        raise UsageError(f"metric: unknown value {metric!r}")
    if config_a.problem != config_b.problem:
        raise UsageError("problem: compared configs must share the problem")
    if config_a.snapshot_times != config_b.snapshot_times:
        raise UsageError("snapshot_times: compared configs must match")
    for key in ("nx", "nmoments", "cfl", "t_end", "seed", "r0"):
        if getattr(config_a, key) != getattr(config_b, key):
            raise UsageError(f"{key}: compared configs must match")
    if metric == "flux_l2_rel" and config_a.problem != "planesource":
        raise UsageError("metric: flux_l2_rel requires the planesource problem")

    out_a = run(config_a)
    out_b = run(config_b)

    oracle_states = None
    if metric == "dense_l2_rel":
        # March the dense reference over the run's own step boundaries so both
        # share the time discretization; only the rank treatment differs.
        method = config_a.substep_method
        oracle_states = _dense_states_at(out_a.op, out_a.y0_dense_full,
                                         [float(t) for t in out_a.trajectory.times],
                                         method, oracle_substeps)

    rows: list[dict] = []
    for t_req in sorted(out_a.trajectory.snapshots):
        t_a, ya = out_a.trajectory.snapshots[t_req]
        t_b, yb = out_b.trajectory.snapshots[t_req]
        if abs(t_a - t_b) > 1e-12:
            raise UsageError("snapshot_times: runs matched different step times")
        row = {"time": t_a}
        if metric == "flux_l2_rel":
            phi_a = scalar_flux(ya, out_a.op, t_a).values
            phi_b = scalar_flux(yb, out_b.op, t_b).values
            row["a_vs_b"] = float(np.linalg.norm(phi_a - phi_b)
                                  / max(np.linalg.norm(phi_b), 1e-300))
        else:
            row["a_vs_b"] = frobenius_distance(ya, yb) / max(yb.norm(), 1e-300)
            ref = oracle_states[t_a]
            ref_norm = max(float(np.linalg.norm(ref)), 1e-300)
            row["a_vs_oracle"] = float(np.linalg.norm(ya.dense() - ref)) / ref_norm
            row["b_vs_oracle"] = float(np.linalg.norm(yb.dense() - ref)) / ref_norm
        rows.append(row)

    out_dir = Path(output_dir if output_dir is not None else config_a.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"compare_{metric}.csv"
    header = list(rows[0].keys()) if rows else ["time", "a_vs_b"]
    _write_csv(path, header, [[row[k] for k in header] for row in rows])
    return path, rows


def convergence_study(base_config: RunConfig, h_list: list[float],
                      theta_rule: str = "fixed",
                      output_dir: str | None = None) -> tuple[Path, list[dict], dict]:
    """Global-error study over a strictly decreasing list of step sizes.

    theta_rule "fixed" reuses base_config.theta_bar for every h; "h_squared"
    sets an absolute tolerance theta_bar * h^2 so the truncation term vanishes
    one order faster than the step error. Errors are Frobenius distances to a
    dense reference at t_end (closed form for the prescribed-path problem, a
    fine RK4 dense run otherwise).
    """
    if theta_rule not in ("fixed", "h_squared"):
        raise UsageError(f"theta_rule: unknown value {theta_rule!r}")
    if any(h2 >= h1 for h1, h2 in zip(h_list, h_list[1:])):
        raise UsageError("h_list: must be strictly decreasing")
    if not h_list:
        raise UsageError("h_list: must be nonempty")

    op, y0, y0_dense, _, t0 = build_problem(base_config)
    t_end = base_config.t_end

    if base_config.problem == "tangential":
        reference = op.exact(t_end).dense()
    else:
        n_ref = max(64, int(round(4 * (t_end - t0) / min(h_list))))
        reference = solve_matrix_ode(op.dense_eval, y0_dense, t0, t_end,
                                     OdeMethod("rk4", n_ref))

    rows: list[dict] = []
    for h in h_list:
        if theta_rule == "h_squared":
            cfg_run = replace(base_config, h=h, theta_bar=base_config.theta_bar * h * h,
                              theta_mode="absolute")
        else:
            cfg_run = replace(base_config, h=h)
        traj = integrate(op, y0, t0, t_end, h, cfg_run.step_config(),
                         stepper=base_config.integrator, snapshot_times=(t_end,))
        _, y_end = traj.snapshots[t_end]
        err = float(np.linalg.norm(y_end.dense() - reference))
        rows.append({"h": h, "theta": cfg_run.theta_bar, "error": err,
                     "final_rank": int(traj.ranks[-1])})

    fits = {}
    if len(rows) >= 2:
        logs_h = np.log([row["h"] for row in rows])
        logs_e = np.log([max(row["error"], 1e-300) for row in rows])
        fits["order_all"] = float(np.polyfit(logs_h, logs_e, 1)[0])
        k = min(4, len(rows))
        fits["order_tail"] = float(np.polyfit(logs_h[-k:], logs_e[-k:], 1)[0])

    out_dir = Path(output_dir if output_dir is not None else base_config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "converge.csv"
    _write_csv(path, ["h", "theta", "error", "final_rank"],
               [[row["h"], row["theta"], row["error"], row["final_rank"]] for row in rows])
    (out_dir / "converge_meta.json").write_text(
        json.dumps({"theta_rule": theta_rule, "fits": fits}, indent=2) + "\n",
        encoding="utf-8",
    )
    return path, rows, fits


# ---------------------------------------------------------------------------
# config file parsing

_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in ("snapshot_times",):
        if not raw:
            return ()
        return tuple(float(tok) for tok in raw.split(",") if tok.strip())
    if key in ("r_max", "h"):
        return None if raw.lower() in ("none", "") else (
            int(raw) if key == "r_max" else float(raw))
    if key == "eta_columns":
        return raw if raw == "all" else int(raw)
    if key in ("theta_bar", "c_reject", "cfl", "t_end"):
        return float(raw)
    if key in ("max_retries", "substep_count", "nx", "nmoments", "r0", "seed"):
        return int(raw)
    return raw


def load_config_file(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Flat key=value config file; '#' starts a comment; CLI overrides win."""
    values: dict = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (tok.strip() for tok in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    if overrides:
        values.update(overrides)
    return RunConfig(**values)
