import numpy as np
import pytest

from fmfgc.errors import BlowUpError, CflError
from fmfgc.hjb import centered_curvature, hjb_diagnostics, hjb_step, solve_backward
from fmfgc.measures import GridMeasure, JointControlMeasure, MeasurePath
from fmfgc.models import QuadraticModel
from fmfgc.spectral import SpectralGrid, TimeGrid

from helpers import band_limited_field, smooth_density


class PlainH:
    """H = |p|^2 / 2 with no measure coupling."""

    C0 = 2.0
    q = 2.0
    q_tilde = 2.0

    def hamiltonian_field(self, p, mu):
        return 0.5 * np.sum(np.asarray(p, dtype=float) ** 2, axis=0)

    def grad_p_field(self, p, mu):
        return np.asarray(p, dtype=float)


class ZeroH(PlainH):
    def hamiltonian_field(self, p, mu):
        return np.zeros(mu.grid.shape)

    def grad_p_field(self, p, mu):
        return np.zeros_like(np.asarray(p, dtype=float))


class NonFiniteH(ZeroH):
    def hamiltonian_field(self, p, mu):
        out = np.zeros(mu.grid.shape)
        out.flat[0] = np.inf
        return out


def uniform_mu(grid):
    m = GridMeasure.uniform(grid)
    return JointControlMeasure(m, np.zeros((grid.dim,) + grid.shape))


def constant_path(time_grid, mu):
    return MeasurePath(time_grid, [mu] * (time_grid.n_steps + 1))


@pytest.fixture
def grid():
    return SpectralGrid(dim=1, n=64, s=0.75)


def test_step_zero_hamiltonian_is_semigroup(grid):
    rng = np.random.default_rng(0)
    u_next = band_limited_field(grid, rng)
    mu = uniform_mu(grid)
    out = hjb_step(u_next, mu, ZeroH(), dt=0.02)
    assert np.array_equal(out, grid.semigroup_apply(u_next, 0.02))


def test_step_constant_state(grid):
    # Uniform m makes the convolution potential the constant kernel mean 1,
    # so H(x, 0, mu) = -1 and constants shift by +dt.
    model = QuadraticModel(coupling_beta=0.4)
    mu = uniform_mu(grid)
    u_next = np.full(grid.shape, 1.7)
    out = hjb_step(u_next, mu, model, dt=0.03)
    assert np.max(np.abs(out - (1.7 + 0.03))) < 1e-13


def test_step_richardson_second_order_local(grid):
    # dt must resolve the stiffest mode of the Hamiltonian field, otherwise
    # the semigroup damping hides the quadratic local error.
    rng = np.random.default_rng(1)
    u_next = 0.3 * band_limited_field(grid, rng, max_mode=2)
    mu = uniform_mu(grid)
    model = PlainH()

    def defect(dt):
        one = hjb_step(u_next, mu, model, dt)
        half = hjb_step(hjb_step(u_next, mu, model, dt / 2), mu, model, dt / 2)
        return np.max(np.abs(one - half))

    ratio = defect(1e-3) / defect(5e-4)
    assert 3.2 < ratio < 4.8


def test_step_rejects_bad_dt(grid):
    with pytest.raises(ValueError):
        hjb_step(np.zeros(grid.shape), uniform_mu(grid), ZeroH(), dt=0.0)


def test_solve_terminal_exact(grid):
    model = QuadraticModel(coupling_beta=0.3)
    rng = np.random.default_rng(2)
    m = GridMeasure(grid, smooth_density(grid, rng))
    mu = JointControlMeasure(m, np.zeros((1, grid.n)))
    tg = TimeGrid(horizon=0.5, n_steps=80)
    u_t = 0.1 * np.cos(2 * np.pi * grid.nodes()[0])
    sol = solve_backward(model, constant_path(tg, mu), u_t, theta=0.7)
    assert np.array_equal(sol.u[-1], 0.7 * u_t)
    assert sol.u.shape == (81, 64)
    assert sol.du.shape == (81, 1, 64)
    assert np.all(np.isfinite(sol.u))


def test_solve_theta_zero_identically_zero(grid):
    model = QuadraticModel(coupling_beta=0.3)
    mu = uniform_mu(grid)
    tg = TimeGrid(horizon=1.0, n_steps=50)
    u_t = 0.3 * np.cos(2 * np.pi * grid.nodes()[0])
    sol = solve_backward(model, constant_path(tg, mu), u_t, theta=0.0)
    assert np.all(sol.u == 0.0)
    diag = hjb_diagnostics(sol)
    assert diag.sup_u == 0.0
    assert diag.sup_du == 0.0
    assert diag.semiconcavity == 0.0
    assert diag.holder_du == 0.0


def test_solve_self_convergence_first_order():
    grid = SpectralGrid(dim=1, n=32, s=0.75)
    model = QuadraticModel(coupling_beta=0.3, kernel_decay=2.0)
    rng = np.random.default_rng(3)
    m = GridMeasure(grid, smooth_density(grid, rng))
    alpha = np.stack([0.2 * band_limited_field(grid, rng, max_mode=3)])
    mu = JointControlMeasure(m, alpha)
    u_t = 0.2 * np.cos(2 * np.pi * grid.nodes()[0])

    def at_zero(n_steps):
        tg = TimeGrid(horizon=0.5, n_steps=n_steps)
        return solve_backward(model, constant_path(tg, mu), u_t, theta=1.0).u[0]

    coarse, mid, fine = at_zero(50), at_zero(100), at_zero(200)
    d1 = np.max(np.abs(coarse - mid))
    d2 = np.max(np.abs(mid - fine))
    assert d1 / d2 >= 1.8


def test_solve_linearized_single_mode():
    # With H = |p|^2/2 the scheme is exact for the linear part, so the error
    # against the per-mode decay e^{-(T-t) lambda} is purely the quadratic
    # remainder and shrinks like amplitude^2.
    grid = SpectralGrid(dim=1, n=64, s=0.75)
    model = PlainH()
    mu = uniform_mu(grid)
    tg = TimeGrid(horizon=0.25, n_steps=200)
    lam = (2 * np.pi) ** (2 * 0.75)
    x = grid.nodes()[0]

    def error(eps):
        sol = solve_backward(model, constant_path(tg, mu), eps * np.cos(2 * np.pi * x))
        exact = eps * np.exp(-tg.horizon * lam) * np.cos(2 * np.pi * x)
        return np.max(np.abs(sol.u[0] - exact))

    e1, e2 = error(1e-3), error(5e-4)
    assert e1 < 20 * (1e-3) ** 2
    assert 3.2 < e1 / e2 < 4.8


def test_solve_cfl_error(grid):
    model = QuadraticModel(coupling_beta=0.3)
    mu = uniform_mu(grid)
    tg = TimeGrid(horizon=1.0, n_steps=20)
    u_t = 5.0 * np.cos(2 * np.pi * grid.nodes()[0])
    with pytest.raises(CflError) as info:
        solve_backward(model, constant_path(tg, mu), u_t, theta=1.0)
    assert info.value.required_steps > 1000
    assert "n_t" in str(info.value)


def test_solve_blowup_error(grid):
    mu = uniform_mu(grid)
    tg = TimeGrid(horizon=0.5, n_steps=10)
    u_t = 0.1 * np.cos(2 * np.pi * grid.nodes()[0])
    with pytest.raises(BlowUpError) as info:
        solve_backward(NonFiniteH(), constant_path(tg, mu), u_t)
    assert info.value.time_index == 9


def test_comparison_envelope_zero_hamiltonian(grid):
    x = grid.nodes()[0]
    u_t = 0.3 * np.cos(2 * np.pi * x) + 0.1 * np.sin(4 * np.pi * x)
    mu = uniform_mu(grid)
    tg = TimeGrid(horizon=0.5, n_steps=40)
    sol = solve_backward(ZeroH(), constant_path(tg, mu), u_t)
    hi, lo = np.max(u_t), np.min(u_t)
    for j in range(tg.n_steps + 1):
        assert np.max(sol.u[j]) <= hi + 1e-12
        assert np.min(sol.u[j]) >= lo - 1e-12


def test_curvature_matches_analytic(grid):
    x = grid.nodes()[0]
    u = np.cos(2 * np.pi * x)
    curv = centered_curvature(u, grid)
    exact = -4 * np.pi**2 * np.cos(2 * np.pi * x)
    assert np.max(np.abs(curv[0] - exact)) < 0.05
    assert curv[0, 0] < 0.0  # negative curvature at the crest


def test_diagnostics_zero_h_solution(grid):
    x = grid.nodes()[0]
    u_t = 0.2 * np.cos(2 * np.pi * x)
    mu = uniform_mu(grid)
    tg = TimeGrid(horizon=0.5, n_steps=40)
    sol = solve_backward(ZeroH(), constant_path(tg, mu), u_t)
    diag = hjb_diagnostics(sol)
    assert diag.sup_u == pytest.approx(0.2, abs=1e-12)
    assert diag.sup_du == pytest.approx(0.4 * np.pi, rel=1e-10)
    assert diag.semiconcavity == pytest.approx(0.2 * 4 * np.pi**2, rel=0.02)
    assert 0.0 < diag.holder_du < np.inf
    assert hjb_diagnostics(sol) is diag
