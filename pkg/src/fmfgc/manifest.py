"""Run configuration: parsing, validation, and the resolved manifest.

Configs are sectioned INI-style text.  Parsing is strict: unknown sections
or keys are errors, duplicates are errors, and every range violation names
the offending key.  A parsed manifest is fully resolved (all defaults
filled in) and serializes back to text losslessly, so the copy echoed into
an output directory reproduces the run byte for byte.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .equilibrium import LoopConfig
from .errors import ConfigError
from .fokker_planck import initial_density
from .measures import GridMeasure
from .models import QuadraticModel
from .spectral import SpectralGrid, TimeGrid

#: Section -> key -> default (as text).  ``None`` marks a value that is
#: derived from other keys when absent; the echoed manifest always records
#: the resolved number.
SCHEMA: dict[str, dict[str, str | None]] = {
    "scenario": {"name": "benchmark", "outdir": "runs/benchmark", "seed": "1234"},
    "grid": {"dim": "1", "n": "128", "n_t": "200", "s": "0.75", "horizon": "1.0"},
    "model": {
        "coupling_beta": "0.3",
        "kernel_decay": "1.0",
        "c0": None,
        "q": None,
    },
    "initial": {"density": "vonmises", "terminal_amplitude": "0.15"},
    "particles": {"count": "100000", "store_stride": "0"},
    "loop": {
        "tolerance": "1e-6",
        "max_sweeps": "80",
        "damping": "1.0",
        "stall_window": "10",
        "theta": "1.0",
        "theta_schedule": "0.0, 0.25, 0.5, 0.75, 1.0",
    },
}

DENSITY_PRESETS = ("uniform", "vonmises", "twobump")


@dataclass(frozen=True)
class RunManifest:
    """Fully resolved run description; every field validated on creation."""

    name: str
    outdir: str
    seed: int
    dim: int
    n: int
    n_t: int
    s: float
    horizon: float
    coupling_beta: float
    kernel_decay: float
    c0: float
    q: float
    density: str
    terminal_amplitude: float
    particle_count: int
    store_stride: int
    tolerance: float
    max_sweeps: int
    damping: float
    stall_window: int
    theta: float
    theta_schedule: tuple[float, ...]

    # -- builders -------------------------------------------------------

    def spatial_grid(self) -> SpectralGrid:
        return SpectralGrid(dim=self.dim, n=self.n, s=self.s)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(horizon=self.horizon, n_steps=self.n_t)

    def model(self) -> QuadraticModel:
        return QuadraticModel(
            coupling_beta=self.coupling_beta,
            kernel_decay=self.kernel_decay,
            dim=self.dim,
        )

    def initial_measure(self, grid: SpectralGrid | None = None) -> GridMeasure:
        return initial_density(grid or self.spatial_grid(), self.density)

    def terminal_condition(self, grid: SpectralGrid | None = None) -> np.ndarray:
        """Terminal value: amplitude times a product of one-period cosines."""
        grid = grid or self.spatial_grid()
        nodes = grid.nodes()
        out = np.full(grid.shape, self.terminal_amplitude)
        for axis in range(grid.dim):
            out = out * np.cos(2.0 * np.pi * nodes[axis])
        return out

    def loop_config(self) -> LoopConfig:
        return LoopConfig(
            tolerance=self.tolerance,
            max_sweeps=self.max_sweeps,
            damping=self.damping,
            theta_schedule=self.theta_schedule,
            stall_window=self.stall_window,
        )

    def resolved_stride(self) -> int:
        """Auto store stride: coarsest divisor of n_t keeping >= 8 gaps."""
        if self.store_stride > 0:
            return self.store_stride
        for stride in range(self.n_t // 8, 0, -1):
            if self.n_t % stride == 0:
                return stride
        return 1

    def with_overrides(
        self,
        outdir: str | None = None,
        seed: int | None = None,
        theta: float | None = None,
    ) -> "RunManifest":
        updated = replace(
            self,
            outdir=self.outdir if outdir is None else outdir,
            seed=self.seed if seed is None else seed,
            theta=self.theta if theta is None else theta,
        )
        _validate(updated)
        return updated

    # -- serialization --------------------------------------------------

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser["scenario"] = {
            "name": self.name,
            "outdir": self.outdir,
            "seed": str(self.seed),
        }
        parser["grid"] = {
            "dim": str(self.dim),
            "n": str(self.n),
            "n_t": str(self.n_t),
            "s": repr(self.s),
            "horizon": repr(self.horizon),
        }
        parser["model"] = {
            "coupling_beta": repr(self.coupling_beta),
            "kernel_decay": repr(self.kernel_decay),
            "c0": repr(self.c0),
            "q": repr(self.q),
        }
        parser["initial"] = {
            "density": self.density,
            "terminal_amplitude": repr(self.terminal_amplitude),
        }
        parser["particles"] = {
            "count": str(self.particle_count),
            "store_stride": str(self.store_stride),
        }
        parser["loop"] = {
            "tolerance": repr(self.tolerance),
            "max_sweeps": str(self.max_sweeps),
            "damping": repr(self.damping),
            "stall_window": str(self.stall_window),
            "theta": repr(self.theta),
            "theta_schedule": ", ".join(repr(t) for t in self.theta_schedule),
        }
        out = io.StringIO()
        parser.write(out)
        return out.getvalue()


def _to_int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key} must be an integer, got {raw!r}") from None


def _to_float(section: str, key: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key} must be a number, got {raw!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{section}.{key} must be finite, got {raw!r}")
    return value


def _validate(mf: RunManifest) -> None:
    if not mf.name:
        raise ConfigError("scenario.name must be nonempty")
    if not mf.outdir:
        raise ConfigError("scenario.outdir must be nonempty")
    if not 0 <= mf.seed < 2**64:
        raise ConfigError(f"scenario.seed must fit in u64, got {mf.seed}")
    if mf.dim not in (1, 2):
        raise ConfigError(f"grid.dim must be 1 or 2, got {mf.dim}")
    if mf.n < 8 or mf.n & (mf.n - 1):
        raise ConfigError(f"grid.n must be a power of two >= 8, got {mf.n}")
    if mf.n_t < 1:
        raise ConfigError(f"grid.n_t must be at least 1, got {mf.n_t}")
    if not 0.5 < mf.s < 1.0:
        raise ConfigError(f"grid.s out of range: s ∈ (1/2, 1) required, got {mf.s}")
    if not mf.horizon > 0.0:
        raise ConfigError(f"grid.horizon must be positive, got {mf.horizon}")
    if not 0.0 < mf.coupling_beta < 1.0:
        raise ConfigError(
            f"model.coupling_beta must lie in (0, 1), got {mf.coupling_beta}"
        )
    if not mf.kernel_decay > 0.0:
        raise ConfigError(f"model.kernel_decay must be positive, got {mf.kernel_decay}")
    derived = QuadraticModel(
        coupling_beta=mf.coupling_beta, kernel_decay=mf.kernel_decay, dim=mf.dim
    )
    if abs(mf.c0 - derived.C0) > 1e-9 * max(1.0, derived.C0):
        raise ConfigError(
            f"model.c0 is derived from coupling_beta and kernel_decay "
            f"({derived.C0!r}); remove it or match, got {mf.c0!r}"
        )
    if mf.q != derived.q:
        raise ConfigError(
            f"model.q is fixed by the quadratic cost ({derived.q!r}), got {mf.q!r}"
        )
    if mf.density not in DENSITY_PRESETS:
        raise ConfigError(
            f"initial.density must be one of {DENSITY_PRESETS}, got {mf.density!r}"
        )
    if abs(mf.terminal_amplitude) > 100.0:
        raise ConfigError(
            f"initial.terminal_amplitude out of range [-100, 100], "
            f"got {mf.terminal_amplitude}"
        )
    if mf.particle_count < 1:
        raise ConfigError(f"particles.count must be at least 1, got {mf.particle_count}")
    if mf.store_stride < 0 or (
        mf.store_stride > 0 and mf.n_t % mf.store_stride != 0
    ):
        raise ConfigError(
            f"particles.store_stride must be 0 (auto) or a divisor of grid.n_t, "
            f"got {mf.store_stride}"
        )
    if not mf.tolerance > 0.0:
        raise ConfigError(f"loop.tolerance must be positive, got {mf.tolerance}")
    if mf.max_sweeps < 1:
        raise ConfigError(f"loop.max_sweeps must be at least 1, got {mf.max_sweeps}")
    if not 0.0 < mf.damping <= 1.0:
        raise ConfigError(f"loop.damping must lie in (0, 1], got {mf.damping}")
    if mf.stall_window < 2:
        raise ConfigError(f"loop.stall_window must be at least 2, got {mf.stall_window}")
    if not 0.0 <= mf.theta <= 1.0:
        raise ConfigError(f"loop.theta must lie in [0, 1], got {mf.theta}")
    schedule = mf.theta_schedule
    if not schedule:
        raise ConfigError("loop.theta_schedule must be nonempty")
    if any(not 0.0 <= t <= 1.0 for t in schedule):
        raise ConfigError(f"loop.theta_schedule entries must lie in [0, 1], got {schedule}")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ConfigError(f"loop.theta_schedule must be strictly increasing, got {schedule}")


def parse_config(text: str) -> RunManifest:
    """Parse and fully validate a config; returns the resolved manifest."""
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None

    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser.options(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")

    def fetch(section: str, key: str) -> str | None:
        if parser.has_option(section, key):
            return parser.get(section, key)
        return SCHEMA[section][key]

    raw_schedule = fetch("loop", "theta_schedule")
    try:
        schedule = tuple(float(tok) for tok in raw_schedule.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(
            f"loop.theta_schedule must be comma-separated numbers, got {raw_schedule!r}"
        ) from None

    beta = _to_float("model", "coupling_beta", fetch("model", "coupling_beta"))
    decay = _to_float("model", "kernel_decay", fetch("model", "kernel_decay"))
    dim = _to_int("grid", "dim", fetch("grid", "dim"))
    if not 0.0 < beta < 1.0:
        raise ConfigError(f"model.coupling_beta must lie in (0, 1), got {beta}")
    if not decay > 0.0:
        raise ConfigError(f"model.kernel_decay must be positive, got {decay}")
    if dim not in (1, 2):
        raise ConfigError(f"grid.dim must be 1 or 2, got {dim}")
    derived = QuadraticModel(coupling_beta=beta, kernel_decay=decay, dim=dim)
    raw_c0 = fetch("model", "c0")
    raw_q = fetch("model", "q")

    mf = RunManifest(
        name=fetch("scenario", "name"),
        outdir=fetch("scenario", "outdir"),
        seed=_to_int("scenario", "seed", fetch("scenario", "seed")),
        dim=dim,
        n=_to_int("grid", "n", fetch("grid", "n")),
        n_t=_to_int("grid", "n_t", fetch("grid", "n_t")),
        s=_to_float("grid", "s", fetch("grid", "s")),
        horizon=_to_float("grid", "horizon", fetch("grid", "horizon")),
        coupling_beta=beta,
        kernel_decay=decay,
        c0=derived.C0 if raw_c0 is None else _to_float("model", "c0", raw_c0),
        q=derived.q if raw_q is None else _to_float("model", "q", raw_q),
        density=fetch("initial", "density"),
        terminal_amplitude=_to_float(
            "initial", "terminal_amplitude", fetch("initial", "terminal_amplitude")
        ),
        particle_count=_to_int("particles", "count", fetch("particles", "count")),
        store_stride=_to_int("particles", "store_stride", fetch("particles", "store_stride")),
        tolerance=_to_float("loop", "tolerance", fetch("loop", "tolerance")),
        max_sweeps=_to_int("loop", "max_sweeps", fetch("loop", "max_sweeps")),
        damping=_to_float("loop", "damping", fetch("loop", "damping")),
        stall_window=_to_int("loop", "stall_window", fetch("loop", "stall_window")),
        theta=_to_float("loop", "theta", fetch("loop", "theta")),
        theta_schedule=schedule,
    )
    _validate(mf)
    return mf


def default_manifest() -> RunManifest:
    """The documented benchmark scenario."""
    return parse_config("[scenario]\nname = benchmark\n")
