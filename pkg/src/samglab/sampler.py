"""Deterministic solver loop: DDIM for diffusion models, Euler for flows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .field import as_field
from .guidance import GuidanceConfig, GuidanceTrace, guide
from .schedule import DiffusionSchedule, FlowGrid, ScheduleError


class SamplerError(RuntimeError):
    pass


@dataclass
class Trajectory:
    seed: int
    states: list[np.ndarray]
    steps: list  # schedule index (DDIM) or flow time (Euler) of each state
    trace: GuidanceTrace = field(default_factory=GuidanceTrace)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def ddim_step(z, eps, t: int, t_prev: int, s: DiffusionSchedule) -> np.ndarray:
    """Deterministic (eta = 0) DDIM update from step ``t`` to ``t_prev``."""
    if not t > t_prev >= 0:
        raise ScheduleError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    ab, ab_prev = s.at(t), s.at(t_prev)
    return ddim_update(as_field(z), as_field(eps), ab, ab_prev)


def ddim_update(z, eps, ab: float, ab_prev: float) -> np.ndarray:
    z0_hat = (z - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
    return np.sqrt(ab_prev) * z0_hat + np.sqrt(1.0 - ab_prev) * eps


def euler_step(z, v, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ScheduleError(f"dt must be positive, got {dt}")
    return as_field(z) - dt * as_field(v)


def initial_noise(shape, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def run_sampler(model, solver: Union[DiffusionSchedule, FlowGrid],
                guidance: GuidanceConfig, steps: int, seed: int) -> Trajectory:
    """Run one guided reverse trajectory from standard-normal noise.

    ``model`` must expose ``shape`` and either ``eps(z, t, schedule, conditional)``
    (diffusion) or ``velocity(z, t, conditional)`` (flow). Each step makes
    exactly one unconditional and one conditional call.
    """
    z = initial_noise(model.shape, seed)
    traj = Trajectory(seed=seed, states=[z], steps=[])

    if isinstance(solver, DiffusionSchedule):
        ts = [int(t) for t in solver.timesteps(steps)]
        traj.steps.append(ts[0])
        for t, t_prev in zip(ts[:-1], ts[1:]):
            eps_u = model.eps(z, t, solver, False)
            eps_c = model.eps(z, t, solver, True)
            eps, rec = guide(eps_u, eps_c, guidance, t)
            traj.trace.append(rec)
            z = ddim_update(z, eps, solver.at(t), solver.at(t_prev))
            _check_finite(z, t)
            traj.states.append(z)
            traj.steps.append(t_prev)
    elif isinstance(solver, FlowGrid):
        if steps != solver.steps:
            solver = FlowGrid(steps)
        times = solver.times
        traj.steps.append(float(times[0]))
        for t, t_next in zip(times[:-1], times[1:]):
            v_u = model.velocity(z, float(t), False)
            v_c = model.velocity(z, float(t), True)
            v, rec = guide(v_u, v_c, guidance, float(t))
            traj.trace.append(rec)
            z = z - (t - t_next) * v
            _check_finite(z, t)
            traj.states.append(z)
            traj.steps.append(float(t_next))
    else:
        raise SamplerError(f"unsupported solver {type(solver).__name__}")
    return traj


def _check_finite(z: np.ndarray, t) -> None:
    if not np.all(np.isfinite(z)):
        raise SamplerError(f"non-finite latent produced at timestep {t}")
