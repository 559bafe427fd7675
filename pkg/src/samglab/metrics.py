"""Desk-scale sample quality metrics against the analytic testbed.

Off-manifold distance is the distance from a pixel to its nearest mixture
mean, in units of ``sigma0``. Alignment asks whether that nearest mean is the
pixel's condition target, counted only where the mask exceeds a threshold.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .field import as_field
from .scoremodel import ConditionField, PixelGMM

AGGREGATE_COLUMNS = ("mean_distance", "p95_distance", "off_manifold_rate", "alignment_rate")


@dataclass
class SampleEvaluation:
    distance: np.ndarray  # (H, W), sigma0 units
    nearest: np.ndarray  # (H, W) component index
    aligned: np.ndarray  # (n_masked,) bool
    mean_distance: float
    p95_distance: float
    off_manifold_rate: float
    alignment_rate: float

    def aggregates(self) -> dict:
        return {k: getattr(self, k) for k in AGGREGATE_COLUMNS}


def nearest_means(z0: np.ndarray, m: PixelGMM) -> tuple[np.ndarray, np.ndarray]:
    """Nearest component (ties go to the lowest index) and distance in sigma0 units."""
    z0 = as_field(z0, channels=m.channels)
    pts = z0.reshape(z0.shape[0], -1).T
    d = np.linalg.norm(pts[:, None, :] - m.means[None, :, :], axis=-1)
    idx = np.argmin(d, axis=1)  # argmin returns the first minimum
    dist = d[np.arange(d.shape[0]), idx] / m.sigma0
    return idx.reshape(z0.shape[1:]), dist.reshape(z0.shape[1:])


def evaluate_sample(z0, m: PixelGMM, cond: ConditionField, mask_threshold: float = 0.5,
                    off_threshold: float = 3.0) -> SampleEvaluation:
    nearest, dist = nearest_means(z0, m)
    if cond.shape != nearest.shape:
        raise ValueError(f"condition {cond.shape} does not match sample {nearest.shape}")
    sel = cond.mask > mask_threshold
    aligned = nearest[sel] == cond.target[sel]
    return SampleEvaluation(
        distance=dist,
        nearest=nearest,
        aligned=aligned,
        mean_distance=float(dist.mean()),
        p95_distance=float(np.percentile(dist, 95)),
        off_manifold_rate=float(np.mean(dist > off_threshold)),
        alignment_rate=float(aligned.mean()) if aligned.size else float("nan"),
    )


def pool(evals: list[SampleEvaluation], off_threshold: float = 3.0) -> dict:
    """Aggregate a batch of evaluations over every pixel of every sample."""
    dist = np.concatenate([e.distance.ravel() for e in evals])
    aligned = np.concatenate([e.aligned for e in evals])
    return {
        "mean_distance": float(dist.mean()),
        "p95_distance": float(np.percentile(dist, 95)),
        "off_manifold_rate": float(np.mean(dist > off_threshold)),
        "alignment_rate": float(aligned.mean()) if aligned.size else float("nan"),
    }


@dataclass
class ParetoRow:
    label: str
    alignment_rate: float
    mean_distance: float
    dominated: bool = False
    dominated_by: str = ""
    high_energy_distance: float = float("nan")


def pareto_table(results) -> list[ParetoRow]:
    """Sort configs by alignment (best first) and flag strictly dominated ones.

    ``results`` is a sequence of ``(label, aggregates)`` pairs. A row is
    dominated when another row has strictly higher alignment and strictly
    lower mean distance.
    """
    rows = [ParetoRow(str(label), float(agg["alignment_rate"]), float(agg["mean_distance"]))
            for label, agg in results]
    if len(rows) < 2:
        raise ValueError("pareto_table needs at least two configs")
    for row in rows:
        for other in rows:
            if (other.alignment_rate > row.alignment_rate
                    and other.mean_distance < row.mean_distance):
                row.dominated = True
                row.dominated_by = other.label
                break
    rows.sort(key=lambda r: (-r.alignment_rate, r.mean_distance))
    return rows


def write_pareto_csv(path, rows: list[ParetoRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(asdict(rows[0])))
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))
