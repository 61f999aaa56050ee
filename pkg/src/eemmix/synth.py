"""Synthetic EEM replicates drawn from the multiplicative model.

Replicate ``i`` of a sample with noiseless EEM ``mu`` is
``y[i, j] = a[i] * mu[j] * e[i, j]`` where ``a[i]`` (one per replicate) and
``e[i, j]`` (one per pixel) are independent, positive, mean-one draws with
standard deviations ``sigma_a`` and ``sigma_e``.

Random streams come from numpy's PCG64 generator. Replicate ``i`` of a
sample seeded with ``seed`` draws from ``SeedSequence(seed, spawn_key=(i,))``,
so output does not depend on generation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .core import (
    STUDY_DESIGN,
    STUDY_EMISSION,
    STUDY_EXCITATION,
    EemGrid,
    MixtureDesign,
    ReplicateSet,
    StrictlyLonger,
    ValidationError,
    VectorizedEem,
    WavelengthAxis,
    build_mask,
    vectorize,
)

LAWS = ("lognormal", "truncated-normal")


@dataclass(frozen=True)
class NoiseSpec:
    sigma_a: float
    sigma_e: float
    law: str = "lognormal"
    seed: int = 0

    def __post_init__(self):
        if self.sigma_a < 0 or self.sigma_e < 0:
            raise ValidationError("noise standard deviations must be non-negative")
        if self.law not in LAWS:
            raise ValidationError(f"unknown noise law {self.law!r}; expected one of {LAWS}")
        if self.law == "truncated-normal" and max(self.sigma_a, self.sigma_e) >= 1:
            raise ValidationError("a mean-one normal truncated at zero needs sd < 1")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError("seed must be a 64-bit unsigned integer")


def derive_seed(seed: int, key: int) -> int:
    """Stable 64-bit child seed, used to give each sample of a scene its own stream."""
    return int(np.random.SeedSequence([int(seed), int(key)]).generate_state(1, np.uint64)[0])


def replicate_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(i,))))


@lru_cache(maxsize=64)
def _truncnorm_params(sigma: float) -> tuple[float, float]:
    """(loc, scale) of a normal that, truncated to (0, inf), has mean 1 and sd sigma."""

    def moments(params):
        loc, log_scale = params
        scale = np.exp(log_scale)
        mean, var = stats.truncnorm.stats(-loc / scale, np.inf, loc=loc, scale=scale,
                                          moments="mv")
        return [float(mean) - 1.0, np.sqrt(float(var)) - sigma]

    sol = optimize.root(moments, [1.0, np.log(sigma)], method="hybr", tol=1e-14)
    if not sol.success:
        raise ValidationError(f"cannot parameterize truncated normal with sd {sigma}")
    return float(sol.x[0]), float(np.exp(sol.x[1]))


def draw_multiplicative(rng: np.random.Generator, sigma: float, size, law: str = "lognormal"):
    """Positive draws with mean 1 and standard deviation ``sigma``."""
    if sigma == 0:
        return np.ones(size)
    if law == "lognormal":
        omega2 = np.log1p(sigma ** 2)
        return np.exp(rng.normal(-omega2 / 2.0, np.sqrt(omega2), size))
    if law == "truncated-normal":
        loc, scale = _truncnorm_params(float(sigma))
        return stats.truncnorm.rvs(-loc / scale, np.inf, loc=loc, scale=scale,
                                   size=size, random_state=rng)
    raise ValidationError(f"unknown noise law {law!r}")


def draw_factors(p: int, n: int, spec: NoiseSpec) -> tuple[np.ndarray, np.ndarray]:
    """Scale factors ``a`` (shape ``(n,)``) and pixel noise ``e`` (shape ``(n, p)``)."""
    a = np.empty(n)
    e = np.empty((n, p))
    for i in range(n):
        rng = replicate_rng(spec.seed, i)
        a[i] = draw_multiplicative(rng, spec.sigma_a, 1, spec.law)[0]
        e[i] = draw_multiplicative(rng, spec.sigma_e, p, spec.law)
    return a, e


def generate_replicates(mu: VectorizedEem, n: int, spec: NoiseSpec,
                        sample_id: str = "synthetic", weights=None) -> ReplicateSet:
    """``n`` replicates of the noiseless EEM ``mu`` under ``spec``."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    values = np.asarray(mu.values)
    if np.any(values < 0):
        raise ValidationError("noiseless EEM must be non-negative")
    a, e = draw_factors(values.size, n, spec)
    return ReplicateSet.from_matrix(sample_id, a[:, None] * values[None, :] * e, mu, weights)


@dataclass(frozen=True, eq=False)
class Scene:
    """Endmember and mixture replicate sets plus the noiseless EEMs behind them."""

    design: MixtureDesign
    endmembers: tuple[ReplicateSet, ...]
    mixtures: dict[str, ReplicateSet]
    mu: dict[str, VectorizedEem] = field(default_factory=dict)

    @property
    def samples(self) -> list[ReplicateSet]:
        return [*self.endmembers, *self.mixtures.values()]


def generate_mixture_scene(design: MixtureDesign, endmember_mus: Sequence[VectorizedEem],
                           n: int, specs: NoiseSpec | Mapping[str, NoiseSpec],
                           perturbations: Mapping[str, np.ndarray] | None = None) -> Scene:
    """Endmember replicates plus mixture replicates whose noiseless EEM is ``Theta @ b``.

    ``specs`` is either one spec shared by all samples (each sample then gets a
    seed derived from it by position) or a mapping from sample id to spec.
    ``perturbations`` maps a mixture id to a vector (QSU) added to its
    noiseless EEM before noise is applied, for planting violations.
    """
    endmember_mus = list(endmember_mus)
    if len(endmember_mus) != design.s:
        raise ValidationError(f"{len(endmember_mus)} endmember EEMs for {design.s} endmembers")
    p = endmember_mus[0].p
    for mu in endmember_mus[1:]:
        if mu.p != p or not np.array_equal(mu.mask, endmember_mus[0].mask):
            raise ValidationError("endmember EEMs have different layouts")
    perturbations = dict(perturbations or {})
    ids = list(design.endmember_ids) + list(design.mixtures)
    if isinstance(specs, NoiseSpec):
        base = specs
        specs = {sid: NoiseSpec(base.sigma_a, base.sigma_e, base.law, derive_seed(base.seed, k))
                 for k, sid in enumerate(ids)}
    missing = [sid for sid in ids if sid not in specs]
    if missing:
        raise ValidationError(f"no noise spec for samples {missing}")

    theta = np.column_stack([mu.values for mu in endmember_mus])
    mus = dict(zip(design.endmember_ids, endmember_mus))
    for mid, b in design.mixtures.items():
        values = theta @ np.asarray(b)
        if mid in perturbations:
            delta = np.asarray(perturbations[mid], dtype=float)
            if delta.shape != values.shape:
                raise ValidationError(f"perturbation for {mid!r} has wrong length")
            values = values + delta
        mus[mid] = endmember_mus[0].with_values(values)

    ends = tuple(generate_replicates(mus[sid], n, specs[sid], sid)
                 for sid in design.endmember_ids)
    mixes = {mid: generate_replicates(mus[mid], n, specs[mid], mid, weights=b)
             for mid, b in design.mixtures.items()}
    return Scene(design, ends, mixes, mus)


# Squared measurement variation per sample, matching the study's noise levels
# (SNR about 6 for groundwater, 150-280 elsewhere under sigma_a = 0.04).
STUDY_SIGMA_E2 = {
    "s1": 0.155, "s2": 0.002, "s3": 0.003,
    "m1": 0.002, "m2": 0.004, "m3": 0.005, "m4": 0.003,
    "m5": 0.002, "m6": 0.004, "m7": 0.003,
}


# Peak shapes loosely follow common DOM fluorophores: a UV humic peak,
# a visible humic peak and a tryptophan-like protein peak.
_PEAKS = {
    "groundwater": [(250.0, 440.0, 0.1), (330.0, 430.0, 0.05)],
    "streamwater": [(255.0, 450.0, 9.0), (335.0, 440.0, 5.0), (275.0, 340.0, 1.0)],
    "wastewater": [(255.0, 430.0, 6.0), (345.0, 425.0, 3.5), (280.0, 345.0, 10.0)],
}


def peak_eem(excitation: WavelengthAxis, emission: WavelengthAxis, peaks, baseline=0.02,
             rule=StrictlyLonger(), width=(25.0, 45.0)) -> VectorizedEem:
    """Noiseless EEM built from Gaussian peaks ``(ex_nm, em_nm, height_qsu)``.

    A small positive ``baseline`` keeps every valid pixel strictly positive.
    """
    ex = excitation.values[np.newaxis, :]
    em = emission.values[:, np.newaxis]
    grid = np.full((emission.count, excitation.count), float(baseline))
    for ex0, em0, height in peaks:
        grid = grid + height * np.exp(-0.5 * (((ex - ex0) / width[0]) ** 2
                                               + ((em - em0) / width[1]) ** 2))
    mask = build_mask(excitation, emission, rule)
    return vectorize(EemGrid(excitation, emission, np.where(mask, grid, np.nan), mask))


def synthetic_endmembers(excitation: WavelengthAxis, emission: WavelengthAxis,
                         rule=StrictlyLonger()) -> list[VectorizedEem]:
    """Groundwater-, streamwater- and wastewater-like noiseless EEMs.

    The groundwater EEM stays below 0.2 QSU, the other two reach about 10 QSU.
    """
    return [peak_eem(excitation, emission, _PEAKS[name],
                     baseline=0.01 if name == "groundwater" else 0.05, rule=rule)
            for name in ("groundwater", "streamwater", "wastewater")]


def study_like_scene(n: int = 3, sigma_a: float = 0.04, sigma_e: float = 0.01, seed: int = 0,
                     law: str = "lognormal", design: MixtureDesign = STUDY_DESIGN,
                     sigma_e_overrides: Mapping[str, float] | None = None,
                     excitation: WavelengthAxis = STUDY_EXCITATION,
                     emission: WavelengthAxis = STUDY_EMISSION,
                     perturbations=None) -> Scene:
    """Scene on the study's wavelength grid using :func:`synthetic_endmembers`.

    Every sample uses ``sigma_e`` unless listed in ``sigma_e_overrides``.
    """
    mus = synthetic_endmembers(excitation, emission)
    overrides = dict(sigma_e_overrides or {})
    ids = list(design.endmember_ids) + list(design.mixtures)
    specs = {sid: NoiseSpec(sigma_a, float(overrides.get(sid, sigma_e)), law,
                            derive_seed(seed, k))
             for k, sid in enumerate(ids)}
    return generate_mixture_scene(design, mus, n, specs, perturbations)


def flat_axes(p_ex: int, p_em: int) -> tuple[WavelengthAxis, WavelengthAxis]:
    """Axes for an arbitrary-size synthetic grid meant for use with ``AllPixels``."""
    return WavelengthAxis(200.0, 1.0, p_ex), WavelengthAxis(200.0, 1.0, p_em)
