"""Grids, polynomial-plus-drive potentials, and physical model parameters.

All solvers in the package share these definitions.  Potentials are
polynomials of degree at most six with an optional sinusoidal dipole drive,

    V(x, t) = sum_j c_j x**j + drive_amp * x * cos(drive_omega * t),

so forces and their derivatives are exact (no series truncation anywhere),
and position grids carry their discrete-Fourier momentum dual so spectral
propagators and Wigner transforms use a single convention.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from numpy.polynomial import polynomial as npoly

__all__ = [
    "SpatialGrid",
    "PhaseSpaceGrid",
    "PhaseSpaceField",
    "PotentialSpec",
    "ModelSpec",
    "duffing_spec",
    "force_and_derivatives",
    "model_to_section",
    "model_from_section",
    "MODEL_SECTION_KEYS",
]

MAX_POLY_DEGREE = 6


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform 1-D position grid and its FFT-conjugate momentum grid.

    Parameters
    ----------
    x_min, x_max : float
        Position range; samples sit at ``x_min + i*dx``, ``i = 0..n-1``.
    n : int
        Sample count; a power of two, at least 16.
    hbar : float
        Sets the momentum dual ``dp = 2*pi*hbar/(n*dx)``.  May be zero for
        purely classical use (momentum samples are then unavailable, but
        wavenumbers remain valid).
    """

    x_min: float
    x_max: float
    n: int
    hbar: float = 1.0

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.n) or self.n < 16:
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if self.hbar < 0:
            raise ValueError("hbar must be nonnegative")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n

    @property
    def dp(self) -> float:
        return 2.0 * np.pi * self.hbar / (self.n * self.dx)

    @cached_property
    def x(self) -> np.ndarray:
        return _readonly(self.x_min + self.dx * np.arange(self.n))

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order (independent of hbar)."""
        return _readonly(2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx))

    @cached_property
    def p(self) -> np.ndarray:
        """Momentum samples in FFT order, spanning [-pi*hbar/dx, pi*hbar/dx)."""
        if self.hbar == 0:
            raise ValueError("momentum grid undefined at hbar=0; use wavenumbers")
        return _readonly(self.hbar * self.k)

    def boundary_width(self, fraction: float = 0.05) -> int:
        """Number of cells on each edge counted as the boundary zone."""
        return max(1, int(round(fraction * self.n)))


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """(x, p) grid for Wigner functions and classical distributions."""

    spatial: SpatialGrid
    p_min: float
    p_max: float
    n_p: int

    def __post_init__(self) -> None:
        if not _is_power_of_two(self.n_p):
            raise ValueError(f"n_p must be a power of two, got {self.n_p}")
        if not self.p_max > self.p_min:
            raise ValueError("p_max must exceed p_min")
        if self.dx * self.dp <= 0:
            raise ValueError("cell area must be positive")

    @property
    def dx(self) -> float:
        return self.spatial.dx

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @cached_property
    def x(self) -> np.ndarray:
        return self.spatial.x

    @cached_property
    def p(self) -> np.ndarray:
        return _readonly(self.p_min + self.dp * np.arange(self.n_p))

    @cached_property
    def kx(self) -> np.ndarray:
        return self.spatial.k

    @cached_property
    def kp(self) -> np.ndarray:
        """Wavenumbers dual to the momentum axis (units 1/momentum)."""
        return _readonly(2.0 * np.pi * np.fft.fftfreq(self.n_p, d=self.dp))

    @classmethod
    def wigner_dual(cls, spatial: SpatialGrid) -> "PhaseSpaceGrid":
        """Natural Wigner grid of a position grid: n_p = n momentum samples
        with spacing pi*hbar/(n*dx), centered on zero."""
        if spatial.hbar <= 0:
            raise ValueError("Wigner dual requires hbar > 0")
        dp = np.pi * spatial.hbar / (spatial.n * spatial.dx)
        half = spatial.n // 2
        return cls(spatial=spatial, p_min=-half * dp, p_max=(spatial.n - half) * dp,
                   n_p=spatial.n)


@dataclass
class PhaseSpaceField:
    """Real-valued function sampled on a PhaseSpaceGrid, values[i, j] at
    (x_i, p_j)."""

    grid: PhaseSpaceGrid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.spatial.n, self.grid.n_p):
            raise ValueError(
                f"values shape {self.values.shape} does not match grid "
                f"({self.grid.spatial.n}, {self.grid.n_p})")

    @property
    def cell_area(self) -> float:
        return self.grid.dx * self.grid.dp

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def x_marginal(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.grid.dp

    def p_marginal(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.grid.dx

    def normalize(self) -> "PhaseSpaceField":
        self.values = self.values / self.mass()
        return self

    def copy(self) -> "PhaseSpaceField":
        return PhaseSpaceField(self.grid, self.values.copy(), self.t)


@dataclass(frozen=True)
class PotentialSpec:
    """Polynomial potential with an optional dipole drive.

    ``coeffs`` are ascending powers of x for the static part (degree <= 6);
    the drive adds ``drive_amp * x * cos(drive_omega * t)``.
    """

    coeffs: tuple[float, ...]
    drive_amp: float = 0.0
    drive_omega: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if len(self.coeffs) == 0 or len(self.coeffs) - 1 > MAX_POLY_DEGREE:
            raise ValueError(f"static polynomial degree must be <= {MAX_POLY_DEGREE}")
        if not all(np.isfinite(self.coeffs)):
            raise ValueError("potential coefficients must be finite")
        if not (np.isfinite(self.drive_amp) and np.isfinite(self.drive_omega)):
            raise ValueError("drive parameters must be finite")
        if self.drive_omega < 0:
            raise ValueError("drive_omega must be nonnegative")

    @cached_property
    def _dcoeffs(self) -> tuple[np.ndarray, ...]:
        # static-part derivative coefficient tables, orders 0..3
        tables = [np.asarray(self.coeffs, dtype=float)]
        for _ in range(3):
            tables.append(npoly.polyder(tables[-1]))
        return tuple(tables)

    @property
    def drive_period(self) -> float:
        """2*pi/drive_omega; falls back to 1.0 when there is no drive, so
        period-based bookkeeping stays well-defined."""
        return 2.0 * np.pi / self.drive_omega if self.drive_omega > 0 else 1.0

    def value(self, x, t: float):
        v = npoly.polyval(x, self._dcoeffs[0])
        if self.drive_amp != 0.0:
            v = v + self.drive_amp * np.cos(self.drive_omega * t) * x
        return v

    def dv(self, x, t: float, order: int = 1):
        """order-th spatial derivative of V at (x, t), exact."""
        if not 1 <= order <= 3:
            raise ValueError("order must be 1, 2, or 3")
        d = npoly.polyval(x, self._dcoeffs[order])
        if order == 1 and self.drive_amp != 0.0:
            d = d + self.drive_amp * np.cos(self.drive_omega * t)
        return d

    def force(self, x, t: float):
        return -self.dv(x, t, 1)


def force_and_derivatives(spec: PotentialSpec, x, t: float):
    """Return (F, dF/dx, d2F/dx2) at (x, t), exact polynomial derivatives."""
    return (-spec.dv(x, t, 1), -spec.dv(x, t, 2), -spec.dv(x, t, 3))


@dataclass(frozen=True)
class ModelSpec:
    """Full physical configuration: potential, mass, hbar, measurement
    strength k, and environmental momentum diffusion D."""

    potential: PotentialSpec
    mass: float = 1.0
    hbar: float = 1.0
    k: float = 0.0
    D: float = 0.0

    def __post_init__(self) -> None:
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        for name in ("hbar", "k", "D"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def backaction_diffusion(self) -> float:
        """Momentum diffusion from measurement backaction, exactly hbar**2 * k."""
        return self.hbar ** 2 * self.k

    @property
    def drive_period(self) -> float:
        return self.potential.drive_period

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)


def duffing_spec(hbar: float = 1.0, k: float = 0.0, D: float = 0.0) -> ModelSpec:
    """Driven double-well quartic oscillator used throughout:
    V(x,t) = 0.5 x^4 - 10 x^2 + 10 x cos(6.07 t), m = 1."""
    pot = PotentialSpec(coeffs=(0.0, 0.0, -10.0, 0.0, 0.5),
                        drive_amp=10.0, drive_omega=6.07)
    return ModelSpec(potential=pot, mass=1.0, hbar=hbar, k=k, D=D)


MODEL_SECTION_KEYS = (
    "mass", "hbar", "k", "D", "coeffs", "drive_amp", "drive_omega",
    "x_min", "x_max", "n", "p_min", "p_max", "n_p",
)


def model_to_section(model: ModelSpec, grid: SpatialGrid,
                     phase: PhaseSpaceGrid | None = None) -> dict:
    """Flatten a model plus its grids into one key-value config section."""
    if grid.hbar != model.hbar:
        raise ValueError("grid hbar does not match model hbar")
    phase = phase if phase is not None else PhaseSpaceGrid.wigner_dual(grid)
    return {
        "mass": model.mass,
        "hbar": model.hbar,
        "k": model.k,
        "D": model.D,
        "coeffs": list(model.potential.coeffs),
        "drive_amp": model.potential.drive_amp,
        "drive_omega": model.potential.drive_omega,
        "x_min": grid.x_min,
        "x_max": grid.x_max,
        "n": grid.n,
        "p_min": phase.p_min,
        "p_max": phase.p_max,
        "n_p": phase.n_p,
    }


def model_from_section(section: dict) -> tuple[ModelSpec, SpatialGrid, PhaseSpaceGrid]:
    """Inverse of model_to_section; rejects unknown keys."""
    unknown = set(section) - set(MODEL_SECTION_KEYS)
    if unknown:
        raise ValueError(f"unknown model keys: {sorted(unknown)}")
    missing = set(MODEL_SECTION_KEYS) - set(section)
    if missing:
        raise ValueError(f"missing model keys: {sorted(missing)}")
    pot = PotentialSpec(coeffs=tuple(section["coeffs"]),
                        drive_amp=float(section["drive_amp"]),
                        drive_omega=float(section["drive_omega"]))
    model = ModelSpec(potential=pot, mass=float(section["mass"]),
                      hbar=float(section["hbar"]), k=float(section["k"]),
                      D=float(section["D"]))
    grid = SpatialGrid(x_min=float(section["x_min"]), x_max=float(section["x_max"]),
                       n=int(section["n"]), hbar=model.hbar)
    phase = PhaseSpaceGrid(spatial=grid, p_min=float(section["p_min"]),
                           p_max=float(section["p_max"]), n_p=int(section["n_p"]))
    return model, grid, phase
