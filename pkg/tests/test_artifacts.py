"""Binary field format, CSV traces, and run output emission."""

import numpy as np
import pytest

from fmfgc.artifacts import (
    DIAGNOSTICS_HEADER,
    MAGIC,
    emit_artifacts,
    emit_simulation,
    emit_theta_table,
    read_csv,
    read_field,
    write_csv,
    write_field,
)
from fmfgc.equilibrium import LoopConfig, solve_equilibrium, sweep_theta
from fmfgc.errors import FormatError
from fmfgc.fokker_planck import initial_density
from fmfgc.manifest import parse_config
from fmfgc.models import QuadraticModel
from fmfgc.particles import holder_wasserstein_check, simulate_sde
from fmfgc.spectral import SpectralGrid, TimeGrid

TINY_CONFIG = "\n".join(
    [
        "[scenario]",
        "name = tiny",
        "[grid]",
        "n = 16",
        "n_t = 32",
        "[particles]",
        "count = 200",
        "store_stride = 1",
    ]
)


@pytest.fixture(scope="module")
def tiny_solution():
    mf = parse_config(TINY_CONFIG)
    grid = mf.spatial_grid()
    tg = mf.time_grid()
    m0 = mf.initial_measure(grid)
    sol = solve_equilibrium(
        mf.model(), m0, mf.terminal_condition(grid), tg, cfg=mf.loop_config()
    )
    assert sol.converged
    return mf, sol


@pytest.mark.parametrize(
    "shape", [(), (5,), (3, 4), (2, 3, 5)], ids=["scalar", "1d", "2d", "3d"]
)
def test_field_round_trip_bit_identical(tmp_path, shape):
    rng = np.random.default_rng(12)
    arr = rng.standard_normal(shape)
    path = write_field(tmp_path / "f.bin", arr)
    back = read_field(path)
    assert back.shape == arr.shape
    assert back.dtype == np.float64
    assert np.array_equal(back.view(np.uint64), arr.view(np.uint64))


def test_field_round_trip_awkward_values(tmp_path):
    arr = np.array([0.1, 1.0 / 3.0, -0.0, 5e-324, 1e308, 0.0])
    back = read_field(write_field(tmp_path / "f.bin", arr))
    assert np.array_equal(back.view(np.uint64), arr.view(np.uint64))


def test_field_layout(tmp_path):
    arr = np.arange(12.0).reshape(3, 4)
    data = write_field(tmp_path / "f.bin", arr).read_bytes()
    assert data[: len(MAGIC)] == MAGIC
    assert len(data) == len(MAGIC) + 4 + 4 * 2 + 8 * 12
    assert np.frombuffer(data, dtype="<u4", count=1, offset=len(MAGIC))[0] == 2


def test_read_rejects_short_header(tmp_path):
    p = tmp_path / "f.bin"
    p.write_bytes(MAGIC[:5])
    with pytest.raises(FormatError, match="expected at least 12 header bytes, found 5"):
        read_field(p)


def test_read_rejects_bad_magic(tmp_path):
    p = write_field(tmp_path / "f.bin", np.zeros(3))
    data = bytearray(p.read_bytes())
    data[0] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="bad magic"):
        read_field(p)


def test_read_rejects_truncated_shape(tmp_path):
    p = write_field(tmp_path / "f.bin", np.zeros((3, 4)))
    p.write_bytes(p.read_bytes()[:14])
    with pytest.raises(FormatError, match="header for rank 2"):
        read_field(p)


def test_read_rejects_truncated_payload(tmp_path):
    p = write_field(tmp_path / "f.bin", np.zeros((4, 4)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(
        FormatError, match=r"expected 128 payload bytes for shape \(4, 4\), found 120"
    ):
        read_field(p)


def test_read_rejects_trailing_garbage(tmp_path):
    p = write_field(tmp_path / "f.bin", np.zeros(4))
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(FormatError, match="expected 32 payload bytes"):
        read_field(p)


def test_csv_round_trip(tmp_path):
    rows = [["0", "1.5"], ["1", "2.5"]]
    p = write_csv(tmp_path / "t.csv", ["idx", "val"], rows)
    header, body = read_csv(p)
    assert header == ["idx", "val"]
    assert body == rows


def test_read_csv_rejects_empty(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(FormatError, match="empty CSV"):
        read_csv(p)


def test_emit_artifacts_file_set(tmp_path, tiny_solution):
    mf, sol = tiny_solution
    paths = emit_artifacts(sol, mf, tmp_path)
    assert sorted(paths) == ["alpha", "diagnostics", "iterations", "m", "manifest", "u"]

    u = read_field(paths["u"])
    m = read_field(paths["m"])
    alpha = read_field(paths["alpha"])
    assert u.shape == (mf.n_t + 1, mf.n)
    assert m.shape == (mf.n_t + 1, mf.n)
    assert alpha.shape == (mf.n_t + 1, 1, mf.n)
    # stored density slices are normalized probability densities
    assert np.all(np.abs(np.mean(m, axis=1) - 1.0) < 1e-10)

    assert parse_config(paths["manifest"].read_text()) == mf


def test_emit_artifacts_diagnostics_rows(tmp_path, tiny_solution):
    mf, sol = tiny_solution
    paths = emit_artifacts(sol, mf, tmp_path)
    header, rows = read_csv(paths["diagnostics"])
    assert header == DIAGNOSTICS_HEADER
    assert len(rows) == mf.n_t + 1
    assert [r[0] for r in rows] == [str(j) for j in range(mf.n_t + 1)]
    # mass column round trips through repr at full precision
    assert all(abs(float(r[2]) - 1.0) < 1e-12 for r in rows)

    header, rows = read_csv(paths["iterations"])
    assert header == ["sweep", "theta", "delta", "u_change", "m_change", "duality"]
    assert len(rows) == len(sol.history)


def test_emit_theta_table(tmp_path):
    mf = parse_config(TINY_CONFIG)
    grid = mf.spatial_grid()
    cfg = LoopConfig(theta_schedule=(0.5, 1.0))
    stages = sweep_theta(
        mf.model(), mf.initial_measure(grid), mf.terminal_condition(grid),
        mf.time_grid(), cfg=cfg,
    )
    path = emit_theta_table(stages, tmp_path)
    header, rows = read_csv(path)
    assert header[:2] == ["theta", "u_sup"]
    assert [float(r[0]) for r in rows] == [0.5, 1.0]
    assert all(r[5] == "1" for r in rows)


def test_emit_simulation_with_report(tmp_path):
    grid = SpectralGrid(dim=1, n=16, s=0.75)
    tg = TimeGrid(horizon=0.2, n_steps=16)
    path_obj = simulate_sde(None, initial_density(grid, "vonmises"), 200, tg, seed=4)
    report = holder_wasserstein_check(path_obj, b_sup=0.0)
    paths = emit_simulation(path_obj, report, tmp_path)
    assert sorted(paths) == ["holder", "holder_summary", "positions", "sample_times"]
    assert read_field(paths["positions"]).shape == path_obj.positions.shape
    header, rows = read_csv(paths["holder"])
    assert header == ["gap", "w1"]
    assert len(rows) == len(report.gaps)
    header, rows = read_csv(paths["holder_summary"])
    assert header[0] == "noise_floor"
    assert len(rows) == 1


def test_emit_simulation_without_report(tmp_path):
    grid = SpectralGrid(dim=1, n=16, s=0.75)
    tg = TimeGrid(horizon=0.1, n_steps=4)
    path_obj = simulate_sde(None, initial_density(grid, "uniform"), 50, tg, seed=1)
    paths = emit_simulation(path_obj, None, tmp_path)
    assert sorted(paths) == ["positions", "sample_times"]
    assert not (tmp_path / "holder.csv").exists()
