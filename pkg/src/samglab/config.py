"""Experiment configuration read from a TOML file.

Every section is optional; omitted keys fall back to the defaults below,
which describe the 16x16, C=4, K=4 disk-mask testbed.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .guidance import GuidanceConfig, GuidanceError
from .schedule import DiffusionSchedule, FlowGrid, ScheduleError, linear_beta_schedule
from .scoremodel import MASKS, ConditionField, ModelError, PixelGMM, Testbed

OUT_ENV = "SAMGLAB_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: PixelGMM
    condition: ConditionField
    family: str = "ddim"
    steps: int = 50
    schedule_steps: int = 50
    beta_start: float = 1e-3
    beta_end: float = 0.25
    guidance: list[GuidanceConfig] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0])
    out: Path = Path("samglab-out")
    threads: int = 1
    mask_threshold: float = 0.5
    energy: dict = field(default_factory=dict)
    ablate: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)

    @property
    def testbed(self) -> Testbed:
        return Testbed(self.model, self.condition)

    @property
    def solver(self):
        if self.family == "euler":
            return FlowGrid(self.steps)
        return linear_beta_schedule(self.schedule_steps, self.beta_start, self.beta_end)


DEFAULTS: dict[str, Any] = {
    "model": {"preset": "orthogonal", "channels": 4, "components": 4, "scale": 2.0,
              "sigma0": 0.1},
    "condition": {"height": 16, "width": 16, "mask": "disk", "radius": 5.0,
                  "inside": 0.6, "outside": 0.0, "target": 0},
    "solver": {"family": "ddim", "steps": 50, "schedule_steps": 50,
               "beta_start": 1e-3, "beta_end": 0.25},
    "guidance": [
        {"mode": "uniform", "omega": 2.0},
        {"mode": "uniform", "omega": 8.0},
        {"mode": "samg", "omega_min": 2.0, "omega_max": 8.0, "kernel": 1},
    ],
    "run": {"seeds": "0..63", "threads": 1, "mask_threshold": 0.5},
}


def parse_seeds(spec) -> list[int]:
    """Accept ``"a..b"`` (inclusive), a single int, or a list of ints."""
    if isinstance(spec, bool):
        raise ConfigError(f"invalid seeds {spec!r}")
    if isinstance(spec, int):
        return [spec]
    if isinstance(spec, (list, tuple)):
        return [int(s) for s in spec]
    text = str(spec).strip()
    if ".." in text:
        a, b = text.split("..", 1)
        try:
            lo, hi = int(a), int(b)
        except ValueError:
            raise ConfigError(f"invalid seed range {text!r}") from None
        if hi < lo:
            raise ConfigError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(text)]
    except ValueError:
        raise ConfigError(f"invalid seeds {text!r}") from None


def _merged(raw: dict, key: str) -> dict:
    out = dict(DEFAULTS.get(key, {}))
    section = raw.get(key, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{key}] must be a table")
    out.update(section)
    return out


def _build_model(sec: dict) -> PixelGMM:
    if "means" in sec:
        means = np.asarray(sec["means"], dtype=np.float64)
    elif sec.get("preset", "orthogonal") == "orthogonal":
        c, k = int(sec["channels"]), int(sec["components"])
        if k > c:
            raise ConfigError(f"model: orthogonal preset needs components <= channels, got {k} > {c}")
        means = float(sec["scale"]) * np.eye(k, c)
    else:
        raise ConfigError(f"model.preset: unknown preset {sec['preset']!r}")
    return PixelGMM(means, float(sec["sigma0"]), sec.get("weights"))


def _build_condition(sec: dict) -> ConditionField:
    h, w = int(sec["height"]), int(sec["width"])
    mask = sec["mask"]
    if isinstance(mask, str):
        gen = MASKS.get(mask)
        if gen is None:
            raise ConfigError(f"condition.mask: unknown generator {mask!r}; "
                              f"expected one of {sorted(MASKS)}")
        kwargs = {"inside": float(sec.get("inside", 1.0)),
                  "outside": float(sec.get("outside", 0.0))}
        if mask == "disk":
            kwargs["radius"] = float(sec["radius"])
            if "center" in sec:
                kwargs["center"] = tuple(sec["center"])
        elif mask == "half":
            kwargs["axis"] = int(sec.get("axis", 1))
        else:
            kwargs.update(period=int(sec.get("period", 4)), stripe=int(sec.get("stripe", 2)),
                          axis=int(sec.get("axis", 1)))
        grid = gen(h, w, **kwargs)
    else:
        grid = np.asarray(mask, dtype=np.float64)
        if grid.shape != (h, w):
            raise ConfigError(f"condition.mask: grid shape {grid.shape} != ({h}, {w})")
    return ConditionField(grid, np.asarray(sec.get("target", 0)))


def _build_guidance(items) -> list[GuidanceConfig]:
    if not isinstance(items, list):
        raise ConfigError("guidance must be an array of tables ([[guidance]])")
    out = []
    for i, item in enumerate(items):
        try:
            out.append(GuidanceConfig(**item))
        except TypeError as exc:
            raise ConfigError(f"guidance[{i}]: {exc}") from None
        except GuidanceError as exc:
            raise ConfigError(f"guidance[{i}]: {exc}") from None
    return out


def build_config(raw: dict, out: Optional[str] = None) -> ExperimentConfig:
    try:
        model = _build_model(_merged(raw, "model"))
    except (ModelError, KeyError, ValueError) as exc:
        raise ConfigError(f"[model] {exc}") from None
    try:
        condition = _build_condition(_merged(raw, "condition"))
        condition.check(model)
    except (ModelError, KeyError, ValueError) as exc:
        raise ConfigError(f"[condition] {exc}") from None
    solver = _merged(raw, "solver")
    if solver["family"] not in ("ddim", "euler"):
        raise ConfigError(f"solver.family: expected 'ddim' or 'euler', got {solver['family']!r}")
    run = _merged(raw, "run")
    cfg = ExperimentConfig(
        model=model,
        condition=condition,
        family=solver["family"],
        steps=int(solver["steps"]),
        schedule_steps=int(solver["schedule_steps"]),
        beta_start=float(solver["beta_start"]),
        beta_end=float(solver["beta_end"]),
        guidance=_build_guidance(raw.get("guidance", DEFAULTS["guidance"])),
        seeds=parse_seeds(run["seeds"]),
        out=Path(out or run.get("out") or os.environ.get(OUT_ENV, "samglab-out")),
        threads=int(run["threads"]),
        mask_threshold=float(run["mask_threshold"]),
        energy=dict(raw.get("energy", {})),
        ablate=dict(raw.get("ablate", {})),
        verify=dict(raw.get("verify", {})),
    )
    try:
        s = cfg.solver
        if isinstance(s, DiffusionSchedule):
            s.timesteps(cfg.steps)
    except ScheduleError as exc:
        raise ConfigError(f"[solver] {exc}") from None
    return cfg


def load_config(path=None, out: Optional[str] = None) -> ExperimentConfig:
    if path is None:
        return build_config({}, out)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return build_config(raw, out)
