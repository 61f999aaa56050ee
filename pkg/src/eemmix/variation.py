"""Procedural and measurement variation under the multiplicative model.

Replicate ``i`` of a sample is modeled as ``y[i, j] = a[i] * mu[j] * e[i, j]``
with ``a`` and ``e`` both centered at one. This module estimates the scale
factors ``a``, their spread ``sigma_a``, the residual spread ``sigma_e``, and
the implied signal-to-noise ratio.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import ReplicateSet, ValidationError

log = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class ScaleEstimates:
    a_hat: np.ndarray
    sigma_a_hat: float
    excluded_pixels: int = 0


@dataclass(frozen=True, eq=False)
class NoiseEstimates:
    residuals: np.ndarray  # (n, p); NaN on excluded pixels
    sigma_e_hat: float
    excluded_pixels: int
    dof: str = "model"

    @property
    def sigma_e2_hat(self) -> float:
        return self.sigma_e_hat ** 2


@dataclass(frozen=True, eq=False)
class SampleVariationReport:
    sample_id: str
    correlations: np.ndarray
    scale: ScaleEstimates
    noise: NoiseEstimates
    snr: float


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return float("nan")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def replicate_correlations(rset: ReplicateSet) -> np.ndarray:
    """Across-pixel Pearson correlation of each replicate with the sample mean.

    Undefined correlations (a constant replicate or constant mean) are NaN.
    """
    y = rset.matrix
    if y.shape[1] < 2:
        raise ValidationError("need at least two pixels for a correlation")
    mean = y.mean(axis=0)
    return np.array([_pearson(row, mean) for row in y])


def _usable(mean: np.ndarray, floor: float) -> np.ndarray:
    return mean > floor


def estimate_scale_factors(rset: ReplicateSet, floor: float = DEFAULT_FLOOR) -> ScaleEstimates:
    """Per-replicate scale factors ``a_hat[i] = mean_j(y[i, j] / ybar[j])``.

    Pixels whose replicate average does not exceed ``floor`` are left out of
    the average and counted in ``excluded_pixels``. ``sigma_a_hat`` is the
    sample standard deviation (n - 1 denominator) of ``a_hat``.
    """
    if rset.n < 2:
        raise ValidationError(f"sample {rset.sample_id!r}: need n >= 2 replicates")
    y = rset.matrix
    mean = y.mean(axis=0)
    keep = _usable(mean, floor)
    if not keep.any():
        raise ValidationError(f"sample {rset.sample_id!r}: no usable pixels")
    a_hat = (y[:, keep] / mean[keep]).mean(axis=1)
    return ScaleEstimates(a_hat, float(np.std(a_hat, ddof=1)), int((~keep).sum()))


def pool_sigma_a(estimates: Iterable[ScaleEstimates | float]) -> float:
    """Root-mean-square of per-sample ``sigma_a_hat`` values."""
    values = [e.sigma_a_hat if isinstance(e, ScaleEstimates) else float(e)
              for e in estimates]
    if not values:
        raise ValidationError("cannot pool an empty list of estimates")
    return float(np.sqrt(np.mean(np.square(values))))


def residual_sd(residuals, dof: str = "naive") -> float:
    """Spread of multiplicative residuals, centered at their sample mean.

    ``dof="naive"`` divides the sum of squares by ``count - 1``. ``dof="model"``
    divides by ``(n - 1) * (p - 1)``, the residual degrees of freedom left
    after fitting one mean per pixel and one scale per replicate; it removes
    the ``sqrt((n - 1) / n)`` shrinkage of the naive version.
    """
    r = np.asarray(residuals, dtype=float)
    if dof == "naive":
        r = r[np.isfinite(r)]
        if r.size < 2:
            raise ValidationError("need at least two residuals")
        return float(np.std(r, ddof=1))
    if dof == "model":
        r = np.atleast_2d(r)
        r = r[:, np.all(np.isfinite(r), axis=0)]
        n_rep, p = r.shape
        if n_rep < 2 or p < 2:
            raise ValidationError("need at least two replicates and two pixels")
        ss = float(np.sum((r - r.mean()) ** 2))
        return float(np.sqrt(ss / ((n_rep - 1) * (p - 1))))
    raise ValueError(f"unknown dof mode {dof!r}")


def estimate_sigma_e(rset: ReplicateSet, scale: ScaleEstimates,
                     floor: float = DEFAULT_FLOOR, dof: str = "model") -> NoiseEstimates:
    """Measurement variation from residuals ``y[i, j] / (a_hat[i] * mu_hat[j])``."""
    a_hat = np.asarray(scale.a_hat, dtype=float)
    if a_hat.shape != (rset.n,):
        raise ValidationError("scale estimates do not match the replicate count")
    if np.any(a_hat <= 0):
        raise ValidationError("scale factors must be positive")
    y = rset.matrix
    mu_hat = y.mean(axis=0)
    keep = _usable(mu_hat, floor)
    if not keep.any():
        raise ValidationError(f"sample {rset.sample_id!r}: no usable pixels")
    residuals = np.full(y.shape, np.nan)
    residuals[:, keep] = y[:, keep] / (a_hat[:, None] * mu_hat[keep])
    sd = residual_sd(residuals[:, keep], dof=dof)
    return NoiseEstimates(residuals, sd, int((~keep).sum()), dof)


def variance_factor(sigma_a2: float, sigma_e2: float) -> float:
    """``Var(y) / mu**2 = (sigma_a2 + 1) * (sigma_e2 + 1) - 1``."""
    # expanded form avoids cancellation for tiny variances
    return sigma_a2 + sigma_e2 + sigma_a2 * sigma_e2


def snr(sigma_a2: float, sigma_e2: float) -> float:
    """Signal-to-noise ratio ``mu**2 / Var(y)`` implied by the two variances."""
    if sigma_a2 < 0 or sigma_e2 < 0:
        raise ValidationError("variances must be non-negative")
    if sigma_a2 == 0 and sigma_e2 == 0:
        raise ValidationError("zero noise model")
    return 1.0 / variance_factor(sigma_a2, sigma_e2)


def mean_sd_curve(rset: ReplicateSet, bins: int = 50) -> np.ndarray:
    """Binned replicate standard deviation against replicate mean.

    Pixels are sorted by their across-replicate mean and split into ``bins``
    groups of (nearly) equal count. Returns an array of shape ``(bins, 2)``
    holding the average mean and the average standard deviation of each bin.
    """
    if rset.n < 2:
        raise ValidationError("need n >= 2 replicates")
    y = rset.matrix
    p = y.shape[1]
    if bins < 1 or bins > p:
        raise ValidationError(f"bins must be in [1, {p}], got {bins}")
    mean = y.mean(axis=0)
    sd = y.std(axis=0, ddof=1)
    order = np.argsort(mean, kind="stable")
    rows = [(mean[idx].mean(), sd[idx].mean()) for idx in np.array_split(order, bins)]
    return np.array(rows)


def curve_slope(curve: np.ndarray) -> float:
    """Least-squares slope through the origin of bin sd on bin mean."""
    m, s = curve[:, 0], curve[:, 1]
    denom = float(m @ m)
    return float(m @ s) / denom if denom > 0 else float("nan")


def analyze_samples(sets: Sequence[ReplicateSet], floor: float = DEFAULT_FLOOR,
                    dof: str = "model",
                    sigma_a_pooled: float | None = None) -> tuple[list[SampleVariationReport], float]:
    """Variation reports for every sample plus the pooled ``sigma_a``.

    Each sample's SNR combines the pooled ``sigma_a**2`` with that sample's own
    ``sigma_e**2``.
    """
    scales = [estimate_scale_factors(s, floor) for s in sets]
    pooled = pool_sigma_a(scales) if sigma_a_pooled is None else float(sigma_a_pooled)
    reports = []
    for rset, scale in zip(sets, scales):
        noise = estimate_sigma_e(rset, scale, floor, dof)
        try:
            ratio = snr(pooled ** 2, noise.sigma_e2_hat)
        except ValidationError:
            ratio = float("inf")
        if scale.excluded_pixels:
            log.info("sample %s: %d low-signal pixels excluded",
                     rset.sample_id, scale.excluded_pixels)
        reports.append(SampleVariationReport(
            rset.sample_id, replicate_correlations(rset), scale, noise, ratio))
    return reports, pooled
