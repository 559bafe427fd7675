"""Analytic per-pixel Gaussian-mixture data models.

Every pixel is an independent draw from a mixture of isotropic Gaussians in
``R^C``. Under the forward corruption ``z_t = sqrt(abar) z_0 + sqrt(1 - abar) eps``
the marginal stays a mixture with means ``sqrt(abar) mu_k`` and variance
``abar sigma0^2 + 1 - abar``, so the score, its Hessian and the optimal noise
and velocity predictions are all closed form.

The ``mixture_*`` and ``gmm_*`` functions work on point arrays of shape
``(P, C)`` and per-point weights ``(P, K)`` (or shared ``(K,)``); the
field-level functions reshape latent fields into that layout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .field import as_field
from .schedule import DiffusionSchedule


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class PixelGMM:
    means: np.ndarray  # (K, C)
    sigma0: float
    weights: Optional[np.ndarray] = None  # (K,), uniform when omitted

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None]
        if means.ndim != 2 or 0 in means.shape:
            raise ModelError(f"means must be (K, C), got shape {means.shape}")
        if not self.sigma0 > 0:
            raise ModelError(f"sigma0 must be positive, got {self.sigma0}")
        k = means.shape[0]
        if self.weights is None:
            w = np.full(k, 1.0 / k)
        else:
            w = np.array(self.weights, dtype=np.float64)
        if w.shape != (k,) or np.any(w <= 0):
            raise ModelError("weights must be K positive reals")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ModelError(f"weights must sum to 1, got {w.sum()!r}")
        means.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "sigma0", float(self.sigma0))

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def channels(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class ConditionField:
    """Spatial condition: a strength mask in [0, 1] and a target component per pixel."""

    mask: np.ndarray  # (H, W)
    target: np.ndarray  # (H, W) ints

    def __post_init__(self):
        mask = np.clip(np.array(self.mask, dtype=np.float64), 0.0, 1.0)
        if mask.ndim != 2 or 0 in mask.shape or not np.all(np.isfinite(mask)):
            raise ModelError(f"mask must be a finite (H, W) grid, got shape {mask.shape}")
        target = np.asarray(self.target)
        if target.ndim == 0:
            target = np.full(mask.shape, int(target))
        if target.shape != mask.shape:
            raise ModelError(f"target shape {target.shape} != mask shape {mask.shape}")
        if not np.issubdtype(target.dtype, np.integer):
            if np.any(target != np.round(target)):
                raise ModelError("target indices must be integers")
        target = target.astype(np.int64)
        if np.any(target < 0):
            raise ModelError("target indices must be non-negative")
        mask.setflags(write=False)
        target.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "target", target)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def check(self, m: PixelGMM) -> None:
        if self.target.max() >= m.n_components:
            raise ModelError(
                f"target index {self.target.max()} invalid for {m.n_components} components")

    def mixture_weights(self, base: np.ndarray) -> np.ndarray:
        """Per-pixel conditional weights ``(1 - M) base + M onehot(k*)``, shape (H*W, K)."""
        k = base.shape[0]
        m = self.mask.reshape(-1, 1)
        onehot = np.eye(k)[self.target.reshape(-1)]
        return (1.0 - m) * base[None, :] + m * onehot


# -- mask generators --------------------------------------------------------

def disk_mask(height: int, width: int, radius: float, center=None,
              inside: float = 1.0, outside: float = 0.0) -> np.ndarray:
    cy, cx = center if center is not None else ((height - 1) / 2, (width - 1) / 2)
    yy, xx = np.mgrid[0:height, 0:width]
    inside_px = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    return np.where(inside_px, inside, outside).astype(np.float64)


def half_mask(height: int, width: int, axis: int = 1,
              inside: float = 1.0, outside: float = 0.0) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    coord, size = (xx, width) if axis == 1 else (yy, height)
    return np.where(coord < size / 2, inside, outside).astype(np.float64)


def stripes_mask(height: int, width: int, period: int = 4, stripe: int = 2,
                 axis: int = 1, inside: float = 1.0,
                 outside: float = 0.0) -> np.ndarray:
    if period < 1 or not 0 <= stripe <= period:
        raise ModelError(f"invalid stripes period={period} stripe={stripe}")
    yy, xx = np.mgrid[0:height, 0:width]
    coord = xx if axis == 1 else yy
    return np.where(coord % period < stripe, inside, outside).astype(np.float64)


MASKS = {"disk": disk_mask, "half": half_mask, "stripes": stripes_mask}


# -- point-level closed forms ---------------------------------------------

def _log_weights(weights: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(weights)


def mixture_terms(points: np.ndarray, means: np.ndarray, weights: np.ndarray,
                  var: float) -> tuple[np.ndarray, np.ndarray]:
    """Log density and responsibilities of an isotropic Gaussian mixture.

    ``means`` are the (already scaled) component centres and ``var`` the shared
    per-coordinate variance. Returns ``(log_p (P,), resp (P, K))``.
    """
    if not var > 0:
        raise ModelError(f"degenerate mixture variance {var}")
    c = points.shape[1]
    d2 = np.sum((points[:, None, :] - means[None, :, :]) ** 2, axis=-1)
    logc = _log_weights(weights) - d2 / (2.0 * var) - 0.5 * c * np.log(2.0 * np.pi * var)
    top = np.max(logc, axis=1, keepdims=True)
    ex = np.exp(logc - top)
    tot = ex.sum(axis=1, keepdims=True)
    return (top + np.log(tot))[:, 0], ex / tot


def _marginal(means, sigma0, alpha_bar):
    a = np.sqrt(alpha_bar)
    return a, a * means, alpha_bar * sigma0 ** 2 + (1.0 - alpha_bar)


def mixture_log_density(points, means, weights, sigma0, alpha_bar) -> np.ndarray:
    _, centres, var = _marginal(means, sigma0, alpha_bar)
    return mixture_terms(points, centres, weights, var)[0]


def mixture_score(points, means, weights, sigma0, alpha_bar) -> np.ndarray:
    """Gradient of the marginal log density, shape (P, C)."""
    _, centres, var = _marginal(means, sigma0, alpha_bar)
    _, r = mixture_terms(points, centres, weights, var)
    return (r @ centres - points) / var


def mixture_hessian(points, means, weights, sigma0, alpha_bar) -> np.ndarray:
    """Hessian of the marginal log density, shape (P, C, C).

    ``-I/var + Cov_r[centres] / var^2`` with ``Cov_r`` the responsibility-weighted
    covariance of the scaled means.
    """
    _, centres, var = _marginal(means, sigma0, alpha_bar)
    _, r = mixture_terms(points, centres, weights, var)
    c = points.shape[1]
    mean = r @ centres
    second = np.einsum("pk,ki,kj->pij", r, centres, centres)
    cov = second - mean[:, :, None] * mean[:, None, :]
    return -np.eye(c)[None] / var + cov / var ** 2


def gmm_eps(points, means, weights, sigma0, alpha_bar) -> np.ndarray:
    """Optimal noise prediction ``-sqrt(1 - abar) * score``."""
    return -np.sqrt(1.0 - alpha_bar) * mixture_score(points, means, weights, sigma0, alpha_bar)


def gmm_velocity(points, means, weights, sigma0, t: float) -> np.ndarray:
    """Optimal rectified-flow velocity ``E[eps - z0 | z_t]`` at flow time ``t``.

    Convention: ``z_t = (1 - t) z0 + t eps``. Simplifies to ``(z - E[z0 | z_t]) / t``.
    """
    if not 0 < t <= 1:
        raise ModelError(f"flow time must lie in (0, 1], got {t}")
    s = 1.0 - t
    var = s * s * sigma0 ** 2 + t * t
    _, r = mixture_terms(points, s * means, weights, var)
    gain = s * sigma0 ** 2 / var
    # E[z0 | z_t, k] = mu_k + gain (z - s mu_k)
    post = (1.0 - gain * s) * (r @ means) + gain * points
    return (points - post) / t


# -- field-level API --------------------------------------------------------

def _pixels(z: np.ndarray) -> np.ndarray:
    return z.reshape(z.shape[0], -1).T


def _unpixels(p: np.ndarray, shape) -> np.ndarray:
    return np.ascontiguousarray(p.T.reshape(shape))


def _query(m: PixelGMM, z, condition: Optional[ConditionField]):
    z = as_field(z, channels=m.channels)
    if condition is None:
        return z, m.weights
    if condition.shape != z.shape[1:]:
        raise ModelError(f"condition {condition.shape} does not match field {z.shape[1:]}")
    condition.check(m)
    return z, condition.mixture_weights(m.weights)


def marginal_params(m: PixelGMM, s: DiffusionSchedule, t: int) -> tuple[np.ndarray, float]:
    """Scaled means and per-coordinate variance of the noisy marginal at step ``t``."""
    _, centres, var = _marginal(m.means, m.sigma0, s.at(t))
    return centres, float(var)


def eps_prediction(m: PixelGMM, z, t: int, s: DiffusionSchedule,
                   condition: Optional[ConditionField] = None) -> np.ndarray:
    z, w = _query(m, z, condition)
    out = gmm_eps(_pixels(z), m.means, w, m.sigma0, s.at(t))
    return _unpixels(out, z.shape)


def velocity_prediction(m: PixelGMM, z, t: float,
                        condition: Optional[ConditionField] = None) -> np.ndarray:
    z, w = _query(m, z, condition)
    out = gmm_velocity(_pixels(z), m.means, w, m.sigma0, t)
    return _unpixels(out, z.shape)


def log_density(m: PixelGMM, z, t: int, s: DiffusionSchedule,
                condition: Optional[ConditionField] = None) -> np.ndarray:
    """Per-pixel log marginal density, shape (H, W)."""
    z, w = _query(m, z, condition)
    out = mixture_log_density(_pixels(z), m.means, w, m.sigma0, s.at(t))
    return out.reshape(z.shape[1:])


def score_hessian(m: PixelGMM, z, t: int, s: DiffusionSchedule,
                  condition: Optional[ConditionField] = None) -> np.ndarray:
    """Per-pixel Hessian of the log marginal density, shape (H, W, C, C)."""
    z, w = _query(m, z, condition)
    out = mixture_hessian(_pixels(z), m.means, w, m.sigma0, s.at(t))
    return out.reshape(z.shape[1:] + out.shape[1:])


@dataclass(frozen=True)
class Testbed:
    """A GMM data model paired with a spatial condition; the sampler's model."""

    gmm: PixelGMM
    condition: ConditionField

    def __post_init__(self):
        self.condition.check(self.gmm)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.gmm.channels,) + self.condition.shape

    def eps(self, z, t: int, s: DiffusionSchedule, conditional: bool) -> np.ndarray:
        return eps_prediction(self.gmm, z, t, s, self.condition if conditional else None)

    def velocity(self, z, t: float, conditional: bool) -> np.ndarray:
        return velocity_prediction(self.gmm, z, t, self.condition if conditional else None)
