"""Rank-adaptive low-rank steppers and the outer time loop.

Three one-step maps share the same augmentation/truncation/rejection machinery:

* ``parallel_step``   - K, L and the r x r coefficient ODE run as three
  independent tasks; their results are merged into an augmented coefficient
  matrix whose new-new block is dropped.
* ``parallel_serial_s11_step`` - same, but the new-new block is filled with the
  first-order term h * (new-left)^T F(t0, Y0) (new-right), reusing the matrix
  that the rejection test needs anyway.
* ``bug_step``        - K and L run concurrently, then a serial Galerkin solve
  of the full augmented coefficient matrix.

A step is rejected (and restarted with the augmented bases) when truncation
kept every singular value of the augmented coefficient matrix, or when the
estimated normal component eta satisfies h*eta > c*theta.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .lowrank import (
    AugmentedBasis,
    FactoredMatrix,
    TruncationResult,
    assemble_truncated,
    orthonormalize_augment,
    truncate_svd,
)
from .odesolve import OdeMethod, solve_matrix_ode
from .rhs import RhsOperator

__all__ = [
    "StepConfig",
    "StepResult",
    "Trajectory",
    "StepFailureError",
    "k_step",
    "l_step",
    "s_step_parallel",
    "s_step_bug",
    "assemble_parallel_S1",
    "compute_eta",
    "check_rejection",
    "parallel_step",
    "parallel_serial_s11_step",
    "bug_step",
    "integrate",
    "STEPPERS",
]

THETA_MODES = ("absolute", "relative")


@dataclass(frozen=True)
class StepConfig:
    """Tolerances and policies for one adaptive step.

    theta_bar is the truncation tolerance; in "relative" mode the tolerance
    actually used is theta_bar * ||Sigma_hat||_F of the current attempt.
    c_reject is the constant in the rejection test h*eta > c*theta.
    r_max of None means min(m, n). eta_columns may be "all" or a column count
    for the cheaper eta estimate. rejection_enabled=False accepts every first
    attempt (used by one-step measurement experiments with theta = 0).
    """

    theta_bar: float = 1e-2
    theta_mode: str = "relative"
    c_reject: float = 10.0
    r_max: int | None = None
    max_retries: int = 10
    substep_method: str = "rk4"
    substep_count: int = 1
    eta_columns: int | str = "all"
    rejection_enabled: bool = True

    def __post_init__(self):
        if self.theta_bar < 0:
            raise ValueError("theta_bar must be nonnegative")
        if self.theta_mode not in THETA_MODES:
            raise ValueError(f"theta_mode must be one of {THETA_MODES}")
        if self.c_reject <= 0:
            raise ValueError("c_reject must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.substep_count < 1:
            raise ValueError("substep_count must be >= 1")
        if isinstance(self.eta_columns, str) and self.eta_columns != "all":
            raise ValueError("eta_columns must be an integer or 'all'")

    @property
    def ode_method(self) -> OdeMethod:
        return OdeMethod(self.substep_method, self.substep_count)


@dataclass(frozen=True)
class StepResult:
    """Outcome of one accepted step plus diagnostics of the attempts it took."""

    Y1: FactoredMatrix
    rank_out: int
    eta: float
    retries: int
    discarded_tail: float
    theta_used: float
    # (criterion1, criterion2) for each rejected attempt, in order.
    accepted_rank_doubling: tuple[tuple[bool, bool], ...] = ()
    eta_is_estimate: bool = False
    warnings: tuple[str, ...] = ()
    timings: dict[str, float] = field(default_factory=dict)


class StepFailureError(RuntimeError):
    """Raised when the retry budget is exhausted with a criterion still firing."""

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class Trajectory:
    """Per-step diagnostic series (entry 0 is the initial state) plus snapshots."""

    times: np.ndarray
    ranks: np.ndarray
    etas: np.ndarray
    norms: np.ndarray
    retries: np.ndarray
    tails: np.ndarray
    thetas: np.ndarray
    h: float
    stepper: str
    partial_final_step: bool = False
    snapshots: dict[float, tuple[float, FactoredMatrix]] = field(default_factory=dict)
    warnings: list[tuple[int, str]] = field(default_factory=list)
    step_timings: list[dict[str, float]] = field(default_factory=list)

    @property
    def step_count(self) -> int:
        return len(self.times) - 1


# ---------------------------------------------------------------------------
# substeps

def k_step(op: RhsOperator, y0: FactoredMatrix, t0: float, t1: float,
           cfg: StepConfig) -> tuple[np.ndarray, AugmentedBasis]:
    """Left-factor update: solve dK/dt = F(t, K V0^T) V0, then augment (U0, K1)."""
    if t1 <= t0:
        raise ValueError("t1 must be > t0")
    v0 = y0.V
    k1 = solve_matrix_ode(
        lambda t, k: op.apply_corange(t, k, v0), y0.U @ y0.S, t0, t1, cfg.ode_method
    )
    return k1, orthonormalize_augment(y0.U, k1)


def l_step(op: RhsOperator, y0: FactoredMatrix, t0: float, t1: float,
           cfg: StepConfig) -> tuple[np.ndarray, AugmentedBasis]:
    """Right-factor update: solve dL/dt = F(t, U0 L^T)^T U0, then augment (V0, L1)."""
    if t1 <= t0:
        raise ValueError("t1 must be > t0")
    u0 = y0.U
    l1 = solve_matrix_ode(
        lambda t, l: op.apply_range(t, u0, l), y0.V @ y0.S.T, t0, t1, cfg.ode_method
    )
    return l1, orthonormalize_augment(y0.V, l1)


def s_step_parallel(op: RhsOperator, y0: FactoredMatrix, t0: float, t1: float,
                    cfg: StepConfig) -> np.ndarray:
    """Coefficient update in the fixed bases: dS/dt = U0^T F(t, U0 S V0^T) V0."""
    if t1 <= t0:
        raise ValueError("t1 must be > t0")
    u0, v0 = y0.U, y0.V
    return solve_matrix_ode(
        lambda t, s: op.galerkin(t, u0, s, v0), y0.S, t0, t1, cfg.ode_method
    )


def s_step_bug(op: RhsOperator, y0: FactoredMatrix, u_hat: AugmentedBasis,
               v_hat: AugmentedBasis, t0: float, t1: float, cfg: StepConfig) -> np.ndarray:
    """Galerkin coefficient update in the augmented bases.

    The initial value is the projected state U_hat^T Y0 V_hat, which equals
    blockdiag(S0, 0) because the augmented bases keep the old basis in their
    leading columns; projecting therefore does not change the starting matrix.
    """
    if t1 <= t0:
        raise ValueError("t1 must be > t0")
    p, q = y0.S.shape
    s0 = np.zeros((u_hat.width, v_hat.width))
    s0[:p, :q] = y0.S
    bu, bv = u_hat.B_hat, v_hat.B_hat
    return solve_matrix_ode(
        lambda t, s: op.galerkin(t, bu, s, bv), s0, t0, t1, cfg.ode_method
    )


def assemble_parallel_S1(s_bar: np.ndarray, s1k: np.ndarray, s1l: np.ndarray) -> np.ndarray:
    """Augmented coefficient matrix [[S_bar, S1L], [S1K, 0]].

    The zero block is the new-left/new-right coupling, which is first order in
    the step size times the normal component and is dropped by construction.
    """
    s_bar = np.atleast_2d(np.asarray(s_bar, dtype=float))
    s1k = np.atleast_2d(np.asarray(s1k, dtype=float))
    s1l = np.atleast_2d(np.asarray(s1l, dtype=float))
    p, q = s_bar.shape
    if s1k.shape[1] != q:
        raise ValueError(f"S1K has {s1k.shape[1]} columns, expected {q}")
    if s1l.shape[0] != p:
        raise ValueError(f"S1L has {s1l.shape[0]} rows, expected {p}")
    out = np.zeros((p + s1k.shape[0], q + s1l.shape[1]))
    out[:p, :q] = s_bar
    out[:p, q:] = s1l
    out[p:, :q] = s1k
    return out


# ---------------------------------------------------------------------------
# probe completion

PROBE_CAP = 4


def _complete_with_probes(aug: AugmentedBasis, anchor: np.ndarray) -> AugmentedBasis:
    """Fill zero-padded augmentation columns with deterministic probe directions.

    Probes are canonical basis vectors ordered by the anchor's row energy
    (largest first), orthonormalized against the existing basis and sign-fixed.
    They carry no coefficient content; they only widen the span so the
    rejection test can see normal components of the vector field and a
    restarted step can leave a symmetry-locked subspace. Row energies are
    invariant under regauging, so the added span is gauge-independent. A few
    probes suffice for detection, so at most PROBE_CAP are added per side.
    """
    missing = min(aug.width - aug.effective_rank, PROBE_CAP)
    if missing == 0:
        return aug
    m = aug.B_hat.shape[0]
    energy = np.einsum("ij,ij->i", anchor, anchor)
    # Neighborhood smoothing: banded couplings (stencils, moment recurrences)
    # deposit content into adjacent rows, so probe where mass will appear next.
    smoothed = energy.copy()
    smoothed[:-1] += energy[1:]
    smoothed[1:] += energy[:-1]
    order = np.argsort(-smoothed, kind="stable")
    basis = aug.B_hat[:, : aug.effective_rank]
    # Cheap screen: the residual of canonical candidate e_j against the basis
    # is 1 - ||basis[j, :]||^2, so clearly-spanned candidates are skipped
    # without any projection work.
    in_span = np.einsum("ij,ij->i", basis, basis)
    added: list[np.ndarray] = []
    work = basis
    for idx in order:
        if len(added) == missing:
            break
        if 1.0 - in_span[idx] <= 1e-8:
            continue
        v = np.zeros(m)
        v[idx] = 1.0
        for _ in range(2):
            v -= work @ (work.T @ v)
        nrm = np.linalg.norm(v)
        if nrm <= 1e-6:
            continue
        v /= nrm
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        added.append(v)
        work = np.column_stack([work, v])
    if not added:
        return aug
    b_hat = aug.B_hat.copy()
    for i, v in enumerate(added):
        b_hat[:, aug.effective_rank + i] = v
    return AugmentedBasis(
        B_hat=b_hat,
        old_rank=aug.old_rank,
        effective_rank=aug.effective_rank + len(added),
    )


# ---------------------------------------------------------------------------
# rejection machinery

def _eta_matrix(op: RhsOperator, t0: float, u0: np.ndarray, s0: np.ndarray,
                v0: np.ndarray, u_cols: np.ndarray, v_cols: np.ndarray) -> np.ndarray:
    """(new-left)^T F(t0, Y0) (new-right) for the given new-direction columns."""
    y0 = FactoredMatrix(u0, s0, v0)
    fac = op.low_rank_factors(t0, y0)
    if fac is not None:
        g, h = fac
        return (u_cols.T @ g) @ (v_cols.T @ h).T
    # One structured evaluation with the augmented bases; the padded coefficient
    # keeps the represented matrix equal to Y0, and the new-new block of the
    # projected field is exactly the matrix we need.
    p, q = s0.shape
    u_aug = np.column_stack([u0, u_cols])
    v_aug = np.column_stack([v0, v_cols])
    s_pad = np.zeros((u_aug.shape[1], v_aug.shape[1]))
    s_pad[:p, :q] = s0
    return op.galerkin(t0, u_aug, s_pad, v_aug)[p:, q:]


def compute_eta(op: RhsOperator, t0: float, y0: FactoredMatrix, u_tilde: np.ndarray,
                v_tilde: np.ndarray, cfg: StepConfig) -> float:
    """Normal-component proxy ||(new-left)^T F(t0, Y0) (new-right)||_F.

    With eta_columns < the new-direction count only the leading columns enter,
    giving the cheaper estimate; zero (padded) columns contribute nothing.
    """
    if cfg.eta_columns != "all":
        j = int(cfg.eta_columns)
        u_tilde = u_tilde[:, : min(j, u_tilde.shape[1])]
        v_tilde = v_tilde[:, : min(j, v_tilde.shape[1])]
    if u_tilde.shape[1] == 0 or v_tilde.shape[1] == 0:
        return 0.0
    mat = _eta_matrix(op, t0, y0.U, y0.S, y0.V, u_tilde, v_tilde)
    return float(np.linalg.norm(mat))


def _eta_is_estimate(cfg: StepConfig, new_width: int) -> bool:
    return cfg.eta_columns != "all" and int(cfg.eta_columns) < new_width


def check_rejection(r1: int, r_hat: int, h: float, eta: float, theta: float,
                    cfg: StepConfig) -> str:
    """Accept/reject decision: reject when nothing was truncated or h*eta > c*theta."""
    if r1 == r_hat or h * eta > cfg.c_reject * theta:
        return "reject_augment"
    return "accept"


# ---------------------------------------------------------------------------
# concurrent task execution

_EXECUTOR: ThreadPoolExecutor | None = None


def _default_runner(tasks: dict[str, Callable[[], Any]]) -> dict[str, Any]:
    """Run independent tasks on a shared thread pool; join in fixed key order."""
    global _EXECUTOR
    if _EXECUTOR is None:
        _EXECUTOR = ThreadPoolExecutor(max_workers=4)
    futures = {name: _EXECUTOR.submit(fn) for name, fn in tasks.items()}
    return {name: futures[name].result() for name in tasks}


def serial_runner(order: tuple[str, ...] | None = None):
    """Runner executing tasks sequentially in a forced order (for order tests)."""

    def run(tasks: dict[str, Callable[[], Any]]) -> dict[str, Any]:
        names = order if order is not None else tuple(tasks)
        if set(names) != set(tasks):
            raise ValueError(f"order {names} does not match tasks {tuple(tasks)}")
        return {name: tasks[name]() for name in names}

    return run


# ---------------------------------------------------------------------------
# adaptive one-step drivers

def _timed(fn):
    def wrapped():
        tic = time.perf_counter()
        out = fn()
        return out, time.perf_counter() - tic

    return wrapped


def _theta_for(cfg: StepConfig, s_hat: np.ndarray) -> float:
    if cfg.theta_mode == "relative":
        return cfg.theta_bar * float(np.linalg.norm(s_hat))
    return cfg.theta_bar


def _adaptive_step(op: RhsOperator, y0: FactoredMatrix, t0: float, t1: float,
                   cfg: StepConfig, build_attempt, stepper_name: str) -> StepResult:
    t_total = time.perf_counter()
    h = t1 - t0
    if h <= 0:
        raise ValueError("t1 must be > t0")
    u0 = np.asarray(y0.U, dtype=float)
    s0 = np.asarray(y0.S, dtype=float)
    v0 = np.asarray(y0.V, dtype=float)
    m, n = u0.shape[0], v0.shape[0]
    r_max = min(cfg.r_max, min(m, n)) if cfg.r_max is not None else min(m, n)

    retries = 0
    fired: list[tuple[bool, bool]] = []
    warnings: list[str] = []
    while True:
        u_hat, v_hat, s_hat, eta_mat, timings = build_attempt(u0, s0, v0)
        theta = _theta_for(cfg, s_hat)
        trunc = truncate_svd(s_hat, theta, r_floor=1)
        if eta_mat is not None:
            eta = float(np.linalg.norm(eta_mat))
            estimate = False
        else:
            tic = time.perf_counter()
            eta = compute_eta(op, t0, FactoredMatrix(u0, s0, v0),
                              u_hat.B_tilde, v_hat.B_tilde, cfg)
            timings["eta"] = time.perf_counter() - tic
            estimate = _eta_is_estimate(cfg, u_hat.B_tilde.shape[1])

        r_hat = min(s_hat.shape)
        crit1 = trunc.rank == r_hat
        crit2 = h * eta > cfg.c_reject * theta
        if cfg.rejection_enabled and (crit1 or crit2):
            p, q = u0.shape[1], v0.shape[1]
            new_p = min(u_hat.effective_rank, max(r_max, p))
            new_q = min(v_hat.effective_rank, max(r_max, q))
            if new_p == p and new_q == q:
                warnings.append(
                    "rejection criterion firing but bases cannot grow "
                    f"(rank {p}/{q}, r_max {r_max}); step accepted"
                )
            elif retries >= cfg.max_retries:
                raise StepFailureError(
                    f"{stepper_name}: retry budget {cfg.max_retries} exhausted at "
                    f"t0 = {t0} (rank {p}, eta = {eta:.3e}, theta = {theta:.3e})",
                    diagnostics={
                        "t0": t0, "h": h, "rank": p, "eta": eta, "theta": theta,
                        "retries": retries, "criteria": (crit1, crit2),
                    },
                )
            else:
                fired.append((crit1, crit2))
                retries += 1
                s_new = np.zeros((new_p, new_q))
                s_new[:p, :q] = s0
                u0 = u_hat.B_hat[:, :new_p].copy()
                v0 = v_hat.B_hat[:, :new_q].copy()
                s0 = s_new
                continue

        if trunc.rank > r_max:
            trunc = truncate_svd(s_hat, theta, r_floor=1, r_cap=r_max)
            warnings.append(
                f"truncation rank capped at r_max = {r_max}; "
                f"tail {trunc.discarded_tail:.3e} may exceed theta {theta:.3e}"
            )
        tic = time.perf_counter()
        y1 = assemble_truncated(u_hat, v_hat, trunc)
        timings["assemble"] = time.perf_counter() - tic
        timings["total"] = time.perf_counter() - t_total
        return StepResult(
            Y1=y1,
            rank_out=trunc.rank,
            eta=eta,
            retries=retries,
            discarded_tail=trunc.discarded_tail,
            theta_used=theta,
            accepted_rank_doubling=tuple(fired),
            eta_is_estimate=estimate,
            warnings=tuple(warnings),
            timings=timings,
        )


def _make_parallel_builder(op, t0, t1, cfg, runner, fill_s11: bool):
    runner = runner or _default_runner

    def build(u0, s0, v0):
        y = FactoredMatrix(u0, s0, v0)
        tasks = {
            "k": _timed(lambda: k_step(op, y, t0, t1, cfg)),
            "l": _timed(lambda: l_step(op, y, t0, t1, cfg)),
            "s": _timed(lambda: s_step_parallel(op, y, t0, t1, cfg)),
        }
        out = runner(tasks)
        (k1, u_hat), tk = out["k"]
        (l1, v_hat), tl = out["l"]
        s_bar, ts = out["s"]
        u_hat = _complete_with_probes(u_hat, k1)
        v_hat = _complete_with_probes(v_hat, l1)
        s1k = u_hat.B_tilde.T @ k1
        s1l = l1.T @ v_hat.B_tilde
        s_hat = assemble_parallel_S1(s_bar, s1k, s1l)
        eta_mat = None
        if fill_s11:
            eta_mat = _eta_matrix(op, t0, u0, s0, v0, u_hat.B_tilde, v_hat.B_tilde)
            p, q = s_bar.shape
            s_hat[p:, q:] = (t1 - t0) * eta_mat
        return u_hat, v_hat, s_hat, eta_mat, {"k": tk, "l": tl, "s": ts}

    return build


def parallel_step(op: RhsOperator, y0: FactoredMatrix, t0: float, t1: float,
                  cfg: StepConfig, runner=None) -> StepResult:
    """One step with K, L and the coefficient ODE solved as independent tasks.

    The results are merged into the augmented coefficient matrix with a zero
    new-new block, truncated to tolerance, and the step is retried with the
    augmented bases whenever a rejection criterion fires.
    """
    build = _make_parallel_builder(op, t0, t1, cfg, runner, fill_s11=False)
    return _adaptive_step(op, y0, t0, t1, cfg, build, "parallel_step")


def parallel_serial_s11_step(op: RhsOperator, y0: FactoredMatrix, t0: float,
                             t1: float, cfg: StepConfig, runner=None) -> StepResult:
    """Variant of parallel_step filling the new-new coefficient block.

    The block is h * (new-left)^T F(t0, Y0) (new-right) - the same matrix the
    rejection test computes, so eta comes for free and is never an estimate.
    """
    build = _make_parallel_builder(op, t0, t1, cfg, runner, fill_s11=True)
    return _adaptive_step(op, y0, t0, t1, cfg, build, "parallel_serial_s11_step")


def bug_step(op: RhsOperator, y0: FactoredMatrix, t0: float, t1: float,
             cfg: StepConfig, runner=None) -> StepResult:
    """One step of the rank-adaptive basis-update & Galerkin integrator.

    K and L run concurrently; the augmented Galerkin coefficient solve is
    serial. Truncation and the rejection policy match parallel_step.
    """
    runner = runner or _default_runner

    def build(u0, s0, v0):
        y = FactoredMatrix(u0, s0, v0)
        tasks = {
            "k": _timed(lambda: k_step(op, y, t0, t1, cfg)),
            "l": _timed(lambda: l_step(op, y, t0, t1, cfg)),
        }
        out = runner(tasks)
        (k1, u_hat), tk = out["k"]
        (l1, v_hat), tl = out["l"]
        u_hat = _complete_with_probes(u_hat, k1)
        v_hat = _complete_with_probes(v_hat, l1)
        tic = time.perf_counter()
        s_hat = s_step_bug(op, y, u_hat, v_hat, t0, t1, cfg)
        ts = time.perf_counter() - tic
        return u_hat, v_hat, s_hat, None, {"k": tk, "l": tl, "s": ts}

    return _adaptive_step(op, y0, t0, t1, cfg, build, "bug_step")


STEPPERS: dict[str, Callable[..., StepResult]] = {
    "parallel": parallel_step,
    "parallel_serial_s11": parallel_serial_s11_step,
    "bug": bug_step,
}


# ---------------------------------------------------------------------------
# outer loop

def integrate(op: RhsOperator, y0: FactoredMatrix, t0: float, t_end: float,
              h: float, cfg: StepConfig, stepper: str = "parallel",
              snapshot_times: tuple[float, ...] = (), runner=None) -> Trajectory:
    """Run the chosen stepper from t0 to t_end with fixed step h.

    A trailing partial step is taken (and flagged) when h does not divide the
    interval. Snapshots are stored at the completed step nearest each requested
    time, together with the actual step time. Every accepted step is checked
    for truncation control (discarded tail <= theta) unless the rank cap bound.
    """
    if stepper not in STEPPERS:
        raise ValueError(f"unknown stepper {stepper!r}, expected one of {tuple(STEPPERS)}")
    if h <= 0:
        raise ValueError("h must be positive")
    if t_end < t0:
        raise ValueError("t_end must be >= t0")
    step_fn = STEPPERS[stepper]

    span = t_end - t0
    n_full = int(np.floor(span / h + 1e-9))
    boundaries = [t0 + k * h for k in range(n_full + 1)]
    boundaries[-1] = min(boundaries[-1], t_end)
    partial = (t_end - boundaries[-1]) > 1e-9 * max(h, 1.0)
    if partial:
        boundaries.append(t_end)
    elif n_full > 0:
        boundaries[-1] = t_end

    snap_map: dict[int, list[float]] = {}
    barr = np.asarray(boundaries)
    for t_req in snapshot_times:
        idx = int(np.argmin(np.abs(barr - t_req)))
        snap_map.setdefault(idx, []).append(float(t_req))

    times = [t0]
    ranks = [y0.rank]
    etas = [0.0]
    norms = [y0.norm()]
    retries = [0]
    tails = [0.0]
    thetas = [0.0]
    step_warnings: list[tuple[int, str]] = []
    step_timings: list[dict[str, float]] = []
    snapshots: dict[float, tuple[float, FactoredMatrix]] = {}
    for t_req in snap_map.get(0, []):
        snapshots[t_req] = (t0, y0)

    def build_trajectory(partial_flag: bool) -> Trajectory:
        return Trajectory(
            times=np.asarray(times),
            ranks=np.asarray(ranks, dtype=int),
            etas=np.asarray(etas),
            norms=np.asarray(norms),
            retries=np.asarray(retries, dtype=int),
            tails=np.asarray(tails),
            thetas=np.asarray(thetas),
            h=h,
            stepper=stepper,
            partial_final_step=partial_flag,
            snapshots=snapshots,
            warnings=step_warnings,
            step_timings=step_timings,
        )

    y = y0
    for i in range(1, len(boundaries)):
        try:
            res = step_fn(op, y, boundaries[i - 1], boundaries[i], cfg, runner=runner)
        except StepFailureError as err:
            err.diagnostics["step_index"] = i
            err.diagnostics["partial_trajectory"] = build_trajectory(False)
            raise StepFailureError(
                f"step {i} (t = {boundaries[i - 1]:.6g} -> {boundaries[i]:.6g}) failed: {err}",
                diagnostics=err.diagnostics,
            ) from err
        rank_capped = any("capped" in w for w in res.warnings)
        if res.discarded_tail > res.theta_used * (1 + 1e-12) + 1e-300 and not rank_capped:
            raise RuntimeError(
                f"truncation control violated at step {i}: "
                f"tail {res.discarded_tail:.3e} > theta {res.theta_used:.3e}"
            )
        y = res.Y1
        times.append(boundaries[i])
        ranks.append(res.rank_out)
        etas.append(res.eta)
        norms.append(y.norm())
        retries.append(res.retries)
        tails.append(res.discarded_tail)
        thetas.append(res.theta_used)
        step_timings.append(dict(res.timings))
        for w in res.warnings:
            step_warnings.append((i, w))
        for t_req in snap_map.get(i, []):
            snapshots[t_req] = (boundaries[i], y)

    return build_trajectory(partial)
