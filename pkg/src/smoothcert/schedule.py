"""Discretized diffusion time grid, forward noising, and adjacent-pair sampling.

The grid follows the rho-warped form used across the EDM/consistency-model
lineage: ``t_i = (t_min^(1/rho) + (i/N) * (T^(1/rho) - t_min^(1/rho)))^rho``
with endpoints pinned to ``t_min`` and ``T``. Time and noise level are the
same quantity here, so a smoothing noise level maps to the encoder's time
input via the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import gaussian

__all__ = [
    "NoiseSchedule",
    "TrajectoryPair",
    "CurriculumState",
    "ScheduleConfig",
    "discretize",
    "forward_sample",
    "adjacent_pair",
    "sigma_to_time",
    "curriculum_intervals",
]


@dataclass(frozen=True)
class ScheduleConfig:
    """Grid endpoints, warp, and the interval-count curriculum."""

    t_max: float = 80.0
    t_min: float = 0.002
    rho: float = 7.0
    n_start: int = 20
    n_end: int = 80

    def grid_at(self, k: int, total: int) -> "NoiseSchedule":
        n = curriculum_intervals(CurriculumState(self.n_start, self.n_end, k=k, total=total))
        return discretize(self.t_max, self.t_min, n, self.rho)


@dataclass(frozen=True)
class NoiseSchedule:
    """Ascending time grid t_0 < ... < t_N with t_0 = t_min and t_N = T."""

    t_max: float
    t_min: float
    num_intervals: int
    rho: float
    grid: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.grid.shape != (self.num_intervals + 1,):
            raise ValueError("grid length must be num_intervals + 1")
        if not np.all(np.diff(self.grid) > 0):
            raise ValueError("grid must be strictly increasing")


@dataclass(frozen=True)
class TrajectoryPair:
    """Two temporally adjacent points on one deterministic denoising trajectory.

    Both members are built from a single shared Gaussian draw ``eps``:
    ``x_tn = x0 + t_n * eps`` and ``x_tn_minus1 = x_tn + (t_{n-1} - t_n) * eps``.
    """

    x_tn: np.ndarray
    x_tn_minus1: np.ndarray
    n: int
    t_n: float
    t_n_minus1: float
    eps: np.ndarray


@dataclass(frozen=True)
class CurriculumState:
    """Interval-count ramp over training: N(0)=n_start, N(K)=n_end, monotone."""

    n_start: int = 20
    n_end: int = 80
    k: int = 0
    total: int = 1

    def __post_init__(self):
        if self.n_start < 1 or self.n_end < self.n_start:
            raise ValueError("need 1 <= n_start <= n_end")
        if self.k < 0 or self.total < 0:
            raise ValueError("negative iteration counts")


def discretize(t_max: float = 80.0, t_min: float = 0.002, num_intervals: int = 18, rho: float = 7.0) -> NoiseSchedule:
    """Build the warped time grid; endpoints land on t_min and t_max exactly."""
    if not (0.0 < t_min < t_max):
        raise ValueError(f"need 0 < t_min < t_max, got ({t_min}, {t_max})")
    if num_intervals < 1:
        raise ValueError("num_intervals must be >= 1")
    n = int(num_intervals)
    i = np.arange(n + 1, dtype=np.float64)
    lo = t_min ** (1.0 / rho)
    hi = t_max ** (1.0 / rho)
    grid = (lo + (i / n) * (hi - lo)) ** rho
    # pin endpoints exactly despite rounding in the power chain
    grid[0] = t_min
    grid[-1] = t_max
    return NoiseSchedule(t_max=float(t_max), t_min=float(t_min), num_intervals=n, rho=float(rho), grid=grid)


def forward_sample(x0: np.ndarray, t: float, eps: np.ndarray) -> np.ndarray:
    """Noisy sample x0 + t * eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    if t < 0:
        raise ValueError("t must be >= 0")
    return x0 + t * eps


def adjacent_pair(x0: np.ndarray, n: int, schedule: NoiseSchedule, rng: np.random.Generator) -> TrajectoryPair:
    """Draw one shared eps and form the (x_{t_n}, x_{t_{n-1}}) positive pair.

    The earlier point is the one-step update from the later one with the same
    eps, so ``x_tn_minus1 == x_tn + (t_{n-1} - t_n) * eps`` holds bit-exactly
    by construction.
    """
    if not (1 <= n <= schedule.num_intervals):
        raise IndexError(f"n={n} outside 1..{schedule.num_intervals}")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = gaussian(rng, x0.shape)
    t_n = float(schedule.grid[n])
    t_nm1 = float(schedule.grid[n - 1])
    x_tn = forward_sample(x0, t_n, eps)
    x_tnm1 = x_tn + (t_nm1 - t_n) * eps
    return TrajectoryPair(x_tn=x_tn, x_tn_minus1=x_tnm1, n=int(n), t_n=t_n, t_n_minus1=t_nm1, eps=eps)


def sigma_to_time(sigma: float) -> float:
    """Noise level and time coincide under this forward parameterization."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    return float(sigma)


def curriculum_intervals(state: CurriculumState) -> int:
    """Plateaued doubling ramp from n_start to n_end across training.

    Levels double from n_start and are capped at n_end; training time is cut
    into equal segments, one per level. Only the endpoints and monotonicity
    are contractual.
    """
    if state.k > state.total:
        raise ValueError(f"k={state.k} beyond total={state.total}")
    if state.k >= state.total:
        return state.n_end
    levels = [state.n_start]
    while levels[-1] < state.n_end:
        levels.append(min(levels[-1] * 2, state.n_end))
    idx = int(len(levels) * state.k / state.total) if state.total else 0
    return levels[min(idx, len(levels) - 1)]
