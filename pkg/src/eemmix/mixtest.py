"""Pixelwise z-tests of the linear mixing hypothesis with BH FDR control.

For each pixel ``j`` the mixture mean ``mu_hat[j]`` is compared with the
abundance-weighted endmember means ``theta_hat[j] @ b``. The standard error
of the difference follows from the multiplicative model: each average of
``n`` replicates has variance ``mean**2 * ((sa2 + 1) * (se2 + 1) - 1) / n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ReplicateSet, ValidationError, check_same_layout, devectorize, pixel_mean
from .normal import two_sided_p
from .variation import DEFAULT_FLOOR, variance_factor

LOWER, NONE, HIGHER = "lower", "none", "higher"


@dataclass(frozen=True, eq=False)
class TestInputs:
    """Mixture and endmember replicates with the variance parameters to plug in."""

    __test__ = False  # not a pytest class

    mixture: ReplicateSet
    endmembers: Sequence[ReplicateSet]
    sigma_a2: float
    sigma_e2_mixture: float
    sigma_e2_endmembers: Sequence[float]
    weights: np.ndarray | None = None

    def __post_init__(self):
        ends = tuple(self.endmembers)
        object.__setattr__(self, "endmembers", ends)
        object.__setattr__(self, "sigma_e2_endmembers",
                           tuple(float(v) for v in self.sigma_e2_endmembers))
        b = self.mixture.weights if self.weights is None else self.weights
        if b is None:
            raise ValidationError(f"mixture {self.mixture.sample_id!r} has no weights")
        b = np.asarray(b, dtype=float)
        if b.shape != (len(ends),):
            raise ValidationError(f"{b.size} weights for {len(ends)} endmembers")
        if len(self.sigma_e2_endmembers) != len(ends):
            raise ValidationError("one sigma_e2 per endmember required")
        if self.sigma_a2 < 0 or self.sigma_e2_mixture < 0 or min(self.sigma_e2_endmembers) < 0:
            raise ValidationError("variances must be non-negative")
        object.__setattr__(self, "weights", b)
        check_same_layout([self.mixture, *ends])


@dataclass(frozen=True)
class PixelTestResult:
    pixel: tuple[float, float]
    mu_hat: float
    theta_dot_b: float
    sigma_j_hat: float
    z: float
    p_value: float
    rejected: bool
    deviation_sign: str
    testable: bool = True


def sigma_j_hat(mu_hat, theta_hat, b, n, sigma_a2, sigma_e2_mix, sigma_e2_end, n_end=None):
    """Plug-in standard error of ``mu_hat - theta_hat @ b``.

    Vectorized over pixels: ``mu_hat`` has shape ``(p,)`` (or is a scalar) and
    ``theta_hat`` has shape ``(p, s)`` (or ``(s,)``). ``n_end`` gives the
    endmember replicate counts when they differ from ``n``.
    """
    mu_hat = np.asarray(mu_hat, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    b = np.asarray(b, dtype=float)
    sigma_e2_end = np.asarray(sigma_e2_end, dtype=float)
    n_end = np.full(b.shape, n, dtype=float) if n_end is None else np.asarray(n_end, float)
    if n < 1 or np.any(n_end < 1):
        raise ValidationError("replicate counts must be >= 1")
    v_y = mu_hat ** 2 * variance_factor(sigma_a2, sigma_e2_mix) / n
    v_x = theta_hat ** 2 * variance_factor(sigma_a2, sigma_e2_end) / n_end
    return np.sqrt(v_y + v_x @ (b ** 2))


def z_and_p(mu_hat, theta_hat, b, sigma_j):
    """z-statistic and two-sided normal p-value; NaN where ``sigma_j`` is zero."""
    diff = np.asarray(mu_hat, float) - np.asarray(theta_hat, float) @ np.asarray(b, float)
    sigma_j = np.asarray(sigma_j, dtype=float)
    ok = sigma_j > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ok, diff / np.where(ok, sigma_j, 1.0), np.nan)
    p = np.where(ok, two_sided_p(np.where(ok, z, 0.0)), np.nan)
    if z.ndim == 0:
        return float(z), float(p)
    return z, p


def benjamini_hochberg(p_values, alpha: float = 0.05):
    """Benjamini-Hochberg step-up procedure.

    Returns ``(threshold, rejected)``. ``threshold`` is the largest sorted
    p-value ``p_(k)`` with ``p_(k) <= k * alpha / m``; every p-value at or below
    it is rejected, ties included. With no such ``k`` the threshold is 0 and
    nothing is rejected.
    """
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError("need a non-empty sequence of p-values")
    if not np.all((p >= 0) & (p <= 1)):
        raise ValidationError("p-values must lie in [0, 1]")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    m = p.size
    ordered = np.sort(p, kind="stable")
    below = np.flatnonzero(ordered <= alpha * np.arange(1, m + 1) / m)
    if below.size == 0:
        return 0.0, np.zeros(m, dtype=bool)
    threshold = float(ordered[below[-1]])
    return threshold, p <= threshold


@dataclass(frozen=True, eq=False)
class MixtestResult:
    """Per-pixel arrays for one mixture plus the BH outcome."""

    mixture_id: str
    alpha: float
    pixel_index: np.ndarray
    mu_hat: np.ndarray
    theta_dot_b: np.ndarray
    sigma_j: np.ndarray
    z: np.ndarray
    p_value: np.ndarray
    testable: np.ndarray
    rejected: np.ndarray
    threshold: float
    template: object  # VectorizedEem carrying the grid layout

    @property
    def sign(self) -> np.ndarray:
        """-1 significantly lower, +1 significantly higher, 0 otherwise."""
        return np.where(self.rejected, np.sign(np.nan_to_num(self.z)), 0).astype(int)

    @property
    def n_testable(self) -> int:
        return int(self.testable.sum())

    @property
    def n_rejected(self) -> int:
        return int(self.rejected.sum())

    @property
    def rejection_fraction(self) -> float:
        return self.n_rejected / self.n_testable if self.n_testable else float("nan")

    def records(self) -> list[PixelTestResult]:
        names = {-1: LOWER, 0: NONE, 1: HIGHER}
        out = []
        for k in range(self.pixel_index.shape[0]):
            out.append(PixelTestResult(
                (float(self.pixel_index[k, 0]), float(self.pixel_index[k, 1])),
                float(self.mu_hat[k]), float(self.theta_dot_b[k]), float(self.sigma_j[k]),
                float(self.z[k]), float(self.p_value[k]), bool(self.rejected[k]),
                names[int(self.sign[k])], bool(self.testable[k])))
        return out

    def sign_grid(self) -> np.ndarray:
        """Deviation sign on the emission x excitation grid, NaN off-mask."""
        return devectorize(self.template.with_values(self.sign.astype(float))).intensities

    def logp_table(self) -> np.ndarray:
        """Rows of (mixture mean fluorescence, log10 p) over testable pixels."""
        keep = self.testable
        with np.errstate(divide="ignore"):
            logp = np.log10(self.p_value[keep])
        return np.column_stack([self.mu_hat[keep], logp])


def run_mixtest(inputs: TestInputs, alpha: float = 0.05,
                floor: float = DEFAULT_FLOOR) -> MixtestResult:
    """Test every pixel of one mixture and apply BH across the testable pixels.

    A pixel is untestable when its plug-in standard error is zero (all
    variance terms vanish there) or its mixture average does not exceed
    ``floor``. Untestable pixels get NaN z and p and are excluded from the
    BH denominator.
    """
    mix = pixel_mean(inputs.mixture)
    theta = np.column_stack([pixel_mean(e).values for e in inputs.endmembers])
    b = inputs.weights
    sig = sigma_j_hat(mix.values, theta, b, inputs.mixture.n, inputs.sigma_a2,
                      inputs.sigma_e2_mixture, inputs.sigma_e2_endmembers,
                      n_end=[e.n for e in inputs.endmembers])
    z, p = z_and_p(mix.values, theta, b, sig)
    z, p = np.atleast_1d(z).copy(), np.atleast_1d(p).copy()
    low = mix.values <= floor
    z[low] = np.nan
    p[low] = np.nan
    testable = np.isfinite(z)
    rejected = np.zeros(z.shape, dtype=bool)
    threshold = 0.0
    if testable.any():
        threshold, rej = benjamini_hochberg(p[testable], alpha)
        rejected[testable] = rej
    return MixtestResult(inputs.mixture.sample_id, alpha, mix.pixel_index, mix.values,
                         theta @ b, sig, z, p, testable, rejected, threshold, mix)
