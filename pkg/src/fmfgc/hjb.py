"""Backward value-function solver.

Exponential Euler in time: the fractional diffusion is applied through the
exact spectral semigroup, the Hamiltonian is explicit and evaluated at the
later time level.  One step reads

    u(t) = T(dt) u_next - dt * T(dt) H(x, Du_next, mu_next)

which is first order in time and unconditionally stable in the diffusion
part; the explicit transport term carries the usual advective restriction
|D_p H| dt <= dx.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUpError, CflError
from .measures import JointControlMeasure, MeasurePath
from .models import coerce_theta
from .spectral import SpectralGrid, TimeGrid


@dataclass
class HjbDiagnostics:
    sup_u: float
    sup_du: float
    semiconcavity: float
    holder_du: float
    holder_exponent: float


@dataclass
class HjbSolution:
    time_grid: TimeGrid
    grid: SpectralGrid
    theta: float
    u: np.ndarray  # (n_steps + 1, *grid.shape)
    du: np.ndarray  # (n_steps + 1, dim, *grid.shape)
    diagnostics: HjbDiagnostics | None = None

    def level(self, j: int) -> np.ndarray:
        return self.u[j]


def hjb_step(
    u_next: np.ndarray,
    mu_next: JointControlMeasure,
    model,
    dt: float,
    du_next: np.ndarray | None = None,
    time_index: int | None = None,
) -> np.ndarray:
    """One backward step; model must provide hamiltonian_field."""
    if not dt > 0.0:
        raise ValueError(f"time step must be positive, got {dt}")
    grid = mu_next.grid
    u_next = grid.check_scalar(u_next)
    if du_next is None:
        du_next = grid.gradient(u_next)
    h = model.hamiltonian_field(du_next, mu_next)
    if not np.all(np.isfinite(h)):
        raise BlowUpError(
            "Hamiltonian evaluation produced a non-finite value"
            + ("" if time_index is None else f" at time level {time_index}"),
            time_index=time_index,
        )
    return grid.semigroup_apply(u_next, dt) - dt * grid.semigroup_apply(h, dt)


def solve_backward(
    model,
    mu_path: MeasurePath,
    u_terminal: np.ndarray,
    theta: float | None = None,
) -> HjbSolution:
    """March u from the terminal condition theta * u_terminal down to t = 0.

    mu_path supplies the joint measure at every time node; the advective
    speed is checked against dx at each level and a violation reports the
    number of time steps that would satisfy the restriction.
    """
    scaled = coerce_theta(model, theta)
    grid = mu_path.grid
    tg = mu_path.time_grid
    dt, dx = tg.dt, grid.dx
    u_terminal = grid.check_scalar(u_terminal)

    n = tg.n_steps
    u = np.empty((n + 1,) + grid.shape)
    du = np.empty((n + 1, grid.dim) + grid.shape)
    u[n] = scaled.theta * u_terminal
    du[n] = grid.gradient(u[n])
    for j in range(n - 1, -1, -1):
        mu_next = mu_path.slices[j + 1]
        speed = float(np.max(np.abs(scaled.grad_p_field(du[j + 1], mu_next))))
        if speed * dt > dx * (1.0 + 1e-12):
            required = int(np.ceil(speed * tg.horizon / dx))
            raise CflError(
                f"advective speed {speed:.3g} violates |D_p H| dt <= dx; "
                f"need at least n_t = {required} time steps",
                required_steps=required,
            )
        u[j] = hjb_step(u[j + 1], mu_next, scaled, dt, du_next=du[j + 1], time_index=j)
        if not np.all(np.isfinite(u[j])):
            raise BlowUpError(
                f"value function lost finiteness at time level {j}", time_index=j
            )
        du[j] = grid.gradient(u[j])
    return HjbSolution(time_grid=tg, grid=grid, theta=scaled.theta, u=u, du=du)


def centered_curvature(f: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Per-axis centered second difference over dx^2, shape (dim, *shape)."""
    f = grid.check_scalar(f)
    out = np.empty((grid.dim,) + grid.shape)
    for axis in range(grid.dim):
        out[axis] = (np.roll(f, -1, axis) - 2.0 * f + np.roll(f, 1, axis)) / grid.dx**2
    return out


HOLDER_EXPONENT = 0.3


def hjb_diagnostics(sol: HjbSolution) -> HjbDiagnostics:
    """Sup norms, the one-scale semiconcavity statistic, and a sampled
    Hoelder seminorm of the gradient; cached on the solution."""
    if sol.diagnostics is not None:
        return sol.diagnostics
    grid = sol.grid
    sup_u = float(np.max(np.abs(sol.u)))
    sup_du = float(np.max(np.abs(sol.du)))
    semiconcavity = max(
        float(np.max(centered_curvature(sol.u[j], grid)))
        for j in range(sol.u.shape[0])
    )
    stride = max(1, sol.time_grid.n_steps // 8)
    holder = 0.0
    for j in range(0, sol.u.shape[0], stride):
        for axis in range(grid.dim):
            holder = max(holder, grid.holder_seminorm(sol.du[j, axis], HOLDER_EXPONENT))
    sol.diagnostics = HjbDiagnostics(
        sup_u=sup_u,
        sup_du=sup_du,
        semiconcavity=semiconcavity,
        holder_du=holder,
        holder_exponent=HOLDER_EXPONENT,
    )
    return sol.diagnostics
