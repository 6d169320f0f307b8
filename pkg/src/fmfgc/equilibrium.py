"""Outer equilibrium iteration.

Damped Picard sweeps couple the three building blocks: per-slice control
fixed points, the backward value solve, and the forward density solve.
The loop runs through an ascending scaling schedule, each stage warm
starting from the previous one; the zero stage is analytic (zero value
function, pure fractional heat flow).  If fixed damping stops making
progress the loop falls back to fictitious-play averaging.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FmfgcError
from .fokker_planck import FpSolution, duality_residual, solve_forward
from .hjb import HjbSolution, solve_backward
from .measures import (
    GridMeasure,
    JointControlMeasure,
    MeasurePath,
    lambda_q,
    monotonicity_pairing,
    wasserstein_1d,
)
from .models import coerce_theta
from .mu_solver import MuSolveConfig, moment_certificate, solve_mu
from .spectral import SpectralGrid, TimeGrid


@dataclass(frozen=True)
class LoopConfig:
    tolerance: float = 1e-6
    max_sweeps: int = 80
    damping: float = 1.0
    theta_schedule: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    stall_window: int = 10
    mu_config: MuSolveConfig = field(default_factory=lambda: MuSolveConfig(1e-12))

    def __post_init__(self):
        if not self.tolerance > 0.0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        sched = tuple(self.theta_schedule)
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError(f"scaling schedule must ascend, got {sched}")
        if sched and not (0.0 <= sched[0] and sched[-1] <= 1.0):
            raise ValueError(f"scaling schedule must stay in [0, 1], got {sched}")
        if self.stall_window < 2:
            raise ValueError(f"stall_window must be >= 2, got {self.stall_window}")


@dataclass(frozen=True)
class SweepMetrics:
    sweep: int
    theta: float
    delta: float
    u_change: float
    m_change: float
    duality: float

    @property
    def defect(self) -> float:
        return max(self.u_change, self.m_change)


@dataclass
class EquilibriumSolution:
    theta: float
    u_sol: HjbSolution
    m_sol: FpSolution
    m_path: list[GridMeasure] = field(repr=False)
    mu_path: MeasurePath = field(repr=False)
    u_terminal: np.ndarray = field(repr=False)
    history: list[SweepMetrics] = field(repr=False)
    converged: bool = False
    sweeps: int = 0
    baseline_mu: MeasurePath | None = field(default=None, repr=False)

    @property
    def grid(self):
        return self.u_sol.grid

    @property
    def time_grid(self) -> TimeGrid:
        return self.u_sol.time_grid


def _density_w1(a: GridMeasure, b: GridMeasure) -> float:
    """Loop metric between density slices.

    True circle W1 in one dimension; in two dimensions the max over the
    two coordinate-marginal distances (cheap, vanishes with the defect)."""
    grid = a.grid
    if grid.dim == 1:
        return wasserstein_1d(a, b, r=1.0)
    line = SpectralGrid(dim=1, n=grid.n, s=grid.s)
    out = 0.0
    for axis in range(2):
        other = 1 - axis
        ma = GridMeasure(line, np.sum(a.values, axis=other) * grid.dx)
        mb = GridMeasure(line, np.sum(b.values, axis=other) * grid.dx)
        out = max(out, wasserstein_1d(ma, mb, r=1.0))
    return out


def analytic_base(model, m0: GridMeasure, u_terminal: np.ndarray, tg: TimeGrid,
                   theta: float = 0.0) -> EquilibriumSolution:
    """The scaling-zero solution: u = 0, m = fractional heat flow, alpha = 0."""
    grid = m0.grid
    zero_b = np.zeros((tg.n_steps + 1, grid.dim) + grid.shape)
    m_sol = solve_forward(zero_b, m0, tg)
    zero_alpha = np.zeros((grid.dim,) + grid.shape)
    mu_path = MeasurePath(
        tg, [JointControlMeasure(d, zero_alpha) for d in m_sol.densities]
    )
    u_sol = solve_backward(model, mu_path, u_terminal, theta=0.0)
    return EquilibriumSolution(
        theta=theta,
        u_sol=u_sol,
        m_sol=m_sol,
        m_path=list(m_sol.densities),
        mu_path=mu_path,
        u_terminal=np.asarray(u_terminal, dtype=float),
        history=[],
        converged=True,
        sweeps=0,
    )


def picard_iterate(
    state: EquilibriumSolution, model, cfg: LoopConfig, delta: float | None = None
) -> EquilibriumSolution:
    """One sweep: controls, backward value, forward density, damped merge."""
    delta = cfg.damping if delta is None else delta
    scaled = coerce_theta(model, state.theta)
    tg = state.time_grid
    grid = state.grid
    n = tg.n_steps
    try:
        mu_path = MeasurePath(
            tg,
            [
                solve_mu(
                    state.m_path[j],
                    state.u_sol.du[j],
                    scaled,
                    cfg.mu_config,
                    initial_alpha=state.mu_path[j].alpha,
                )
                for j in range(n + 1)
            ],
        )
        u_new = solve_backward(scaled, mu_path, state.u_terminal)
        b_path = np.stack(
            [-scaled.grad_p_field(u_new.du[j], mu_path[j]) for j in range(n + 1)]
        )
        m_new = solve_forward(b_path, state.m_path[0], tg)
    except FmfgcError as err:
        err.sweep_index = state.sweeps
        raise

    u_change = float(np.max(np.abs(u_new.u - state.u_sol.u)))
    m_change = max(
        _density_w1(state.m_path[j], m_new[j]) for j in range(n + 1)
    )
    if delta == 1.0:
        merged = list(m_new.densities)
    else:
        merged = [
            GridMeasure(
                grid,
                (1.0 - delta) * old.values + delta * new.values,
            )
            for old, new in zip(state.m_path, m_new.densities)
        ]
    duality = duality_residual(u_new, m_new, mu_path, scaled, None)
    metrics = SweepMetrics(
        sweep=state.sweeps + 1,
        theta=state.theta,
        delta=delta,
        u_change=u_change,
        m_change=m_change,
        duality=duality,
    )
    return EquilibriumSolution(
        theta=state.theta,
        u_sol=u_new,
        m_sol=m_new,
        m_path=merged,
        mu_path=mu_path,
        u_terminal=state.u_terminal,
        history=state.history + [metrics],
        converged=metrics.defect <= cfg.tolerance,
        sweeps=state.sweeps + 1,
        baseline_mu=state.baseline_mu,
    )


class MetricsWriter:
    """Streaming CSV sink for per-sweep metrics; flushes every row."""

    FIELDS = ("sweep", "theta", "delta", "u_change", "m_change", "duality")

    def __init__(self, stream):
        self._writer = csv.writer(stream)
        self._stream = stream
        self._writer.writerow(self.FIELDS)
        stream.flush()

    def write(self, metrics: SweepMetrics) -> None:
        self._writer.writerow(
            [
                metrics.sweep,
                f"{metrics.theta:.6g}",
                f"{metrics.delta:.6g}",
                f"{metrics.u_change:.12e}",
                f"{metrics.m_change:.12e}",
                f"{metrics.duality:.12e}",
            ]
        )
        self._stream.flush()


def _run_stage(
    state: EquilibriumSolution,
    model,
    cfg: LoopConfig,
    sink: MetricsWriter | None,
) -> EquilibriumSolution:
    """Iterate one scaling stage to tolerance or sweep budget."""
    fictitious_from: int | None = None
    for k in range(cfg.max_sweeps):
        if fictitious_from is None:
            delta = cfg.damping
        else:
            delta = 1.0 / (k - fictitious_from + 2.0)
        state = picard_iterate(state, model, cfg, delta)
        if sink is not None:
            sink.write(state.history[-1])
        if state.converged:
            return state
        stage = [m for m in state.history if m.theta == state.theta]
        if (
            fictitious_from is None
            and len(stage) >= cfg.stall_window
            and stage[-1].defect >= stage[-cfg.stall_window].defect
        ):
            fictitious_from = k + 1
    return state


def _package(state: EquilibriumSolution, model, cfg: LoopConfig) -> EquilibriumSolution:
    """Re-solve the control path against the final value gradient so the
    packaged triple satisfies the slice fixed point to the mu tolerance."""
    scaled = coerce_theta(model, state.theta)
    tg = state.time_grid
    n = tg.n_steps
    mu_path = MeasurePath(
        tg,
        [
            solve_mu(
                state.m_path[j],
                state.u_sol.du[j],
                scaled,
                cfg.mu_config,
                initial_alpha=state.mu_path[j].alpha,
            )
            for j in range(n + 1)
        ],
    )
    interim = replace(state, mu_path=mu_path)
    m_sol = solve_forward(equilibrium_drift(interim, model), state.m_path[0], tg)
    return replace(interim, m_sol=m_sol)


def equilibrium_drift(state: EquilibriumSolution, model) -> np.ndarray:
    """Optimal drift path -D_pH(Du, mu) on the state's time grid.

    This is the vector field that both the forward density solve and the
    particle simulation advect by; shape (n_steps + 1, dim, *grid.shape).
    """
    scaled = coerce_theta(model, state.theta)
    n = state.time_grid.n_steps
    return np.stack(
        [
            -scaled.grad_p_field(state.u_sol.du[j], state.mu_path[j])
            for j in range(n + 1)
        ]
    )


def solve_equilibrium(
    model,
    m0: GridMeasure,
    u_terminal: np.ndarray,
    time_grid: TimeGrid,
    theta_target: float = 1.0,
    cfg: LoopConfig | None = None,
    metrics_stream=None,
    warm_start: EquilibriumSolution | None = None,
) -> EquilibriumSolution:
    """Continuation solve up to theta_target.

    Returns the final state; on non-convergence the state comes back with
    ``converged`` false and the full history intact rather than raising.
    With ``warm_start`` the first stage begins from that state instead of
    the analytic zero-scaling base.
    """
    cfg = cfg or LoopConfig()
    if not 0.0 < theta_target <= 1.0:
        raise ValueError(f"theta_target must lie in (0, 1], got {theta_target}")
    return _continuation(
        model, m0, u_terminal, theta_target, cfg, metrics_stream, warm_start,
        time_grid,
    )[-1]


def sweep_theta(
    model,
    m0: GridMeasure,
    u_terminal: np.ndarray,
    time_grid: TimeGrid,
    cfg: LoopConfig | None = None,
    metrics_stream=None,
) -> list[EquilibriumSolution]:
    """Run the whole schedule and keep every stage's final state."""
    cfg = cfg or LoopConfig()
    target = cfg.theta_schedule[-1] if cfg.theta_schedule else 1.0
    if target == 0.0:
        raise ValueError("scaling schedule must end above 0")
    return _continuation(
        model, m0, u_terminal, target, cfg, metrics_stream, None, time_grid
    )


def _continuation(
    model,
    m0: GridMeasure,
    u_terminal: np.ndarray,
    theta_target: float,
    cfg: LoopConfig,
    metrics_stream,
    warm_start: EquilibriumSolution | None,
    time_grid: TimeGrid,
) -> list[EquilibriumSolution]:
    sink = MetricsWriter(metrics_stream) if metrics_stream is not None else None
    stages = [t for t in cfg.theta_schedule if 0.0 < t < theta_target]
    stages.append(theta_target)

    finals: list[EquilibriumSolution] = []
    if warm_start is not None:
        state = warm_start
    else:
        state = analytic_base(model, m0, u_terminal, time_grid)
        if 0.0 in cfg.theta_schedule:
            finals.append(state)

    for theta in stages:
        state = EquilibriumSolution(
            theta=theta,
            u_sol=state.u_sol,
            m_sol=state.m_sol,
            m_path=state.m_path,
            mu_path=state.mu_path,
            u_terminal=state.u_terminal,
            history=state.history,
            converged=False,
            sweeps=state.sweeps,
            baseline_mu=state.mu_path,
        )
        state = _run_stage(state, model, cfg, sink)
        state = _package(state, model, cfg)
        finals.append(state)
    return finals


@dataclass(frozen=True)
class EquilibriumCertificate:
    duality: float
    exploitability: float
    monotonicity_min: float
    lambda_sup: float
    moments_ok: bool

    @property
    def monotone_ok(self) -> bool:
        return self.monotonicity_min >= -1e-10


def equilibrium_certificate(sol: EquilibriumSolution, model) -> EquilibriumCertificate:
    """Post-solve checks: duality defect, control fixed-point residual,
    monotonicity pairings against the stage's starting path, moments."""
    scaled = coerce_theta(model, sol.theta)
    tg = sol.time_grid
    n = tg.n_steps

    duality = duality_residual(sol.u_sol, sol.m_sol, sol.mu_path, scaled, None)

    exploit = 0.0
    lam_sup = 0.0
    moments_ok = True
    for j in range(n + 1):
        mu = sol.mu_path[j]
        du = sol.u_sol.du[j]
        defect = mu.alpha + scaled.grad_p_field(du, mu)
        exploit = max(exploit, float(np.max(np.abs(defect))))
        lam_sup = max(lam_sup, lambda_q(mu, scaled.q_tilde))
        moments_ok = moments_ok and moment_certificate(mu, du, scaled).ok

    mono_min = np.inf
    if sol.baseline_mu is not None and sol.theta > 0.0:
        stride = max(1, n // 8)
        for j in range(0, n + 1, stride):
            pairing = monotonicity_pairing(
                scaled, sol.mu_path[j], sol.baseline_mu[j]
            )
            mono_min = min(mono_min, pairing)
    if not np.isfinite(mono_min):
        mono_min = 0.0

    return EquilibriumCertificate(
        duality=duality,
        exploitability=exploit,
        monotonicity_min=float(mono_min),
        lambda_sup=lam_sup,
        moments_ok=moments_ok,
    )
