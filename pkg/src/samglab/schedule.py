"""Timestep discretizations for the DDIM and Euler solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    """Cumulative signal schedule; index 0 is clean data, index ``steps`` is noise."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.array(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or ab.size < 2:
            raise ScheduleError("alpha_bar needs at least two entries")
        if ab[0] != 1.0:
            raise ScheduleError(f"alpha_bar[0] must be 1, got {ab[0]}")
        if not np.all((ab > 0) & (ab <= 1)):
            raise ScheduleError("alpha_bar values must lie in (0, 1]")
        if not np.all(np.diff(ab) < 0):
            raise ScheduleError("alpha_bar must be strictly decreasing")
        ab.setflags(write=False)
        object.__setattr__(self, "alpha_bar", ab)

    @property
    def steps(self) -> int:
        return self.alpha_bar.size - 1

    def at(self, t: int) -> float:
        if isinstance(t, bool) or int(t) != t or not 0 <= t <= self.steps:
            raise ScheduleError(f"step {t} outside [0, {self.steps}]")
        return float(self.alpha_bar[int(t)])

    def timesteps(self, n: int) -> np.ndarray:
        """``n + 1`` uniformly spaced schedule indices from ``steps`` down to 0."""
        if n < 1 or n > self.steps:
            raise ScheduleError(f"cannot take {n} sampler steps from a {self.steps}-step schedule")
        return np.floor(np.linspace(self.steps, 0, n + 1) + 0.5).astype(int)


def linear_beta_schedule(n: int, beta_start: float = 1e-4,
                         beta_end: float = 0.02) -> DiffusionSchedule:
    if n < 1:
        raise ScheduleError(f"steps must be positive, got {n}")
    if not 0 < beta_start <= beta_end < 1:
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, n)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return DiffusionSchedule(alpha_bar)


@dataclass(frozen=True)
class FlowGrid:
    """Uniform flow-time grid from 1 (noise) to 0 (data)."""

    steps: int

    def __post_init__(self):
        if isinstance(self.steps, bool) or int(self.steps) != self.steps or self.steps < 1:
            raise ScheduleError(f"steps must be a positive integer, got {self.steps}")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(1.0, 0.0, self.steps + 1)

    @property
    def dt(self) -> float:
        return 1.0 / self.steps


def tweedie_coefficient(s: DiffusionSchedule, t: int, channels: int) -> float:
    """``C (1 - abar_t) / abar_t``: squared step length per unit energy per unit scale."""
    if t < 1:
        raise ScheduleError(f"step {t} outside [1, {s.steps}]")
    ab = s.at(t)
    return channels * (1.0 - ab) / ab


def flow_coefficient(dt: float, channels: int) -> float:
    if not dt > 0:
        raise ScheduleError(f"dt must be positive, got {dt}")
    return channels * dt * dt
