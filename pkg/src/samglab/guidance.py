"""Classifier-free guidance (CFG) and its per-pixel scaled variant (SAMG).

Both modes share the delta score ``eps_c - eps_u``. SAMG replaces the global
scale with a per-pixel map that is affinely anti-correlated with the
normalized guidance energy: pixels where the delta score is largest receive
``omega_min`` and quiet pixels receive ``omega_max``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .field import (FieldError, as_field, box_smooth, broadcast_scale,
                    channel_mean_square, minmax_normalize, write_pgm)


class GuidanceError(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceConfig:
    mode: str = "uniform"
    omega: float = 1.0
    omega_min: float = 1.0
    omega_max: float = 1.0
    kernel: int = 1
    tau: float = 1e-8

    def __post_init__(self):
        if self.mode == "uniform":
            if not self.omega > 0:
                raise GuidanceError(f"omega must be positive, got {self.omega}")
        elif self.mode == "samg":
            if not 0 < self.omega_min <= self.omega_max:
                raise GuidanceError(
                    f"need 0 < omega_min <= omega_max, got [{self.omega_min}, {self.omega_max}]")
            if not self.tau > 0:
                raise GuidanceError(f"tau must be positive, got {self.tau}")
            if int(self.kernel) != self.kernel or self.kernel < 1 or self.kernel % 2 == 0:
                raise GuidanceError(f"kernel must be a positive odd integer, got {self.kernel}")
        else:
            raise GuidanceError(f"unknown guidance mode {self.mode!r}")

    @classmethod
    def uniform(cls, omega: float) -> "GuidanceConfig":
        return cls(mode="uniform", omega=omega)

    @classmethod
    def samg(cls, omega_min: float, omega_max: float, kernel: int = 1,
             tau: float = 1e-8) -> "GuidanceConfig":
        return cls(mode="samg", omega_min=omega_min, omega_max=omega_max,
                   kernel=kernel, tau=tau)

    @property
    def label(self) -> str:
        if self.mode == "uniform":
            return f"CFG {self.omega:g}"
        return f"SAMG[{self.omega_min:g},{self.omega_max:g}] k={self.kernel}"


@dataclass
class TraceRecord:
    t: float
    energy: np.ndarray
    normalized: Optional[np.ndarray]
    omega: np.ndarray

    def summary(self) -> dict:
        return {
            "t": self.t,
            "E_min": float(self.energy.min()),
            "E_max": float(self.energy.max()),
            "E_mean": float(self.energy.mean()),
            "omega_min": float(self.omega.min()),
            "omega_max": float(self.omega.max()),
            "omega_mean": float(self.omega.mean()),
        }


TRACE_COLUMNS = ("t", "E_min", "E_max", "E_mean", "omega_min", "omega_max", "omega_mean")


@dataclass
class GuidanceTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
            w.writeheader()
            for rec in self.records:
                w.writerow({k: repr(v) if isinstance(v, float) else v
                            for k, v in rec.summary().items()})

    def write_pgms(self, out_dir, prefix: str = "") -> list[tuple[Path, Path]]:
        """Dump ``E_t`` and ``Omega_map`` per recorded step; returns the paths."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, rec in enumerate(self.records):
            e_path = out_dir / f"{prefix}energy_{i:04d}.pgm"
            o_path = out_dir / f"{prefix}omega_{i:04d}.pgm"
            write_pgm(e_path, rec.energy)
            write_pgm(o_path, rec.omega)
            paths.append((e_path, o_path))
        return paths


def delta_score(eps_c, eps_u) -> np.ndarray:
    eps_c, eps_u = as_field(eps_c), as_field(eps_u)
    if eps_c.shape != eps_u.shape:
        raise FieldError(f"shape mismatch {eps_c.shape} vs {eps_u.shape}")
    return eps_c - eps_u


def apply_cfg(eps_u, delta, omega: float) -> np.ndarray:
    return as_field(eps_u) + omega * as_field(delta)


def build_omega_map(energy, cfg: GuidanceConfig,
                    return_normalized: bool = False):
    """Per-pixel scale ``omega_max - E_hat * (omega_max - omega_min)``.

    The raw energy is box-smoothed first when ``cfg.kernel > 1``.
    """
    if cfg.mode != "samg":
        raise GuidanceError("build_omega_map needs a samg config")
    e = box_smooth(energy, cfg.kernel)
    e_hat = minmax_normalize(e, cfg.tau)
    omega = cfg.omega_max - e_hat * (cfg.omega_max - cfg.omega_min)
    # guards the affine map against rounding just past either bound
    omega = np.clip(omega, cfg.omega_min, cfg.omega_max)
    if return_normalized:
        return omega, e_hat
    return omega


def apply_samg(eps_u, delta, cfg: GuidanceConfig, t: float = 0.0):
    """SAMG-modulated prediction and the trace record for this step."""
    eps_u = as_field(eps_u)
    energy = channel_mean_square(delta)
    omega, e_hat = build_omega_map(energy, cfg, return_normalized=True)
    out = eps_u + broadcast_scale(delta, omega)
    return out, TraceRecord(t=t, energy=energy, normalized=e_hat, omega=omega)


def guide(eps_u, eps_c, cfg: GuidanceConfig, t: float = 0.0):
    """Combine unconditional and conditional predictions under ``cfg``."""
    delta = delta_score(eps_c, eps_u)
    if cfg.mode == "samg":
        return apply_samg(eps_u, delta, cfg, t)
    energy = channel_mean_square(delta)
    rec = TraceRecord(t=t, energy=energy, normalized=None,
                      omega=np.full(energy.shape, float(cfg.omega)))
    return apply_cfg(eps_u, delta, cfg.omega), rec


def taylor_bound_constants(eta0: float) -> tuple[float, float]:
    """Tangent line ``C1 - C2 E`` of ``E**-0.5`` at ``eta0``."""
    if not eta0 > 0:
        raise GuidanceError(f"eta0 must be positive, got {eta0}")
    return 1.5 * eta0 ** -0.5, 0.5 * eta0 ** -1.5
