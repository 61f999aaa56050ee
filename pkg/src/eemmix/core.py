"""EEM data model: wavelength axes, grids, masks, vectorization, replicate sets."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence, Union

import numpy as np


class ValidationError(ValueError):
    """Raised when input data violates a structural requirement."""


@dataclass(frozen=True)
class WavelengthAxis:
    """Evenly spaced wavelength axis in nanometers."""

    start: float
    step: float
    count: int

    def __post_init__(self):
        if not self.step > 0:
            raise ValidationError(f"axis step must be positive, got {self.step}")
        if int(self.count) != self.count or self.count < 1:
            raise ValidationError(f"axis count must be a positive integer, got {self.count}")

    @property
    def values(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)

    @classmethod
    def from_values(cls, values, rtol=1e-9) -> "WavelengthAxis":
        """Recover an axis from explicit wavelengths, which must be evenly spaced."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValidationError("axis needs at least one wavelength")
        if values.size == 1:
            return cls(float(values[0]), 1.0, 1)
        diffs = np.diff(values)
        if np.any(diffs <= 0):
            raise ValidationError("axis not ascending")
        step = (values[-1] - values[0]) / (values.size - 1)
        if not np.allclose(diffs, step, rtol=rtol, atol=rtol * abs(step)):
            raise ValidationError("axis not evenly spaced")
        return cls(float(values[0]), float(step), int(values.size))


# Mask rules. A rule is a small frozen object with a ``valid(ex, em)`` method
# that broadcasts over wavelength arrays.

@dataclass(frozen=True)
class StrictlyLonger:
    """Emission wavelength strictly longer than excitation wavelength."""

    def valid(self, ex, em):
        return em > ex

    def __str__(self):
        return "strictly_longer"


@dataclass(frozen=True)
class OffsetBand:
    """Emission longer than excitation plus ``offset`` nm (scatter exclusion)."""

    offset: float

    def valid(self, ex, em):
        return em > ex + self.offset

    def __str__(self):
        return f"offset_band:{self.offset!r}"


@dataclass(frozen=True)
class AllPixels:
    """Every pixel valid; used for synthetic, non-physical grids."""

    def valid(self, ex, em):
        return np.ones(np.broadcast(ex, em).shape, dtype=bool)

    def __str__(self):
        return "all"


MaskRule = Union[StrictlyLonger, OffsetBand, AllPixels]


def parse_mask_rule(text: str) -> MaskRule:
    """Parse ``strictly_longer``, ``offset_band:<nm>`` or ``all``."""
    text = text.strip().lower()
    if text == "strictly_longer":
        return StrictlyLonger()
    if text == "all":
        return AllPixels()
    if text.startswith("offset_band:"):
        try:
            return OffsetBand(float(text.split(":", 1)[1]))
        except ValueError:
            pass
    raise ValidationError(f"unknown mask rule {text!r}")


def build_mask(excitation: WavelengthAxis, emission: WavelengthAxis,
               rule: MaskRule = StrictlyLonger()) -> np.ndarray:
    """Boolean validity mask of shape (emission.count, excitation.count)."""
    ex = excitation.values[np.newaxis, :]
    em = emission.values[:, np.newaxis]
    return np.asarray(rule.valid(ex, em), dtype=bool)


@dataclass(frozen=True, eq=False)
class EemGrid:
    """Fluorescence intensities (QSU) on an emission x excitation grid.

    ``intensities`` and ``mask`` have shape ``(emission.count,
    excitation.count)``. Pixels where ``mask`` is False may hold NaN.
    """

    excitation: WavelengthAxis
    emission: WavelengthAxis
    intensities: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.intensities, dtype=float)
        mask = np.array(self.mask, dtype=bool)
        shape = (self.emission.count, self.excitation.count)
        if values.shape != shape or mask.shape != shape:
            raise ValidationError(
                f"grid shape {values.shape} / mask shape {mask.shape} "
                f"do not match axes {shape}")
        if not np.all(np.isfinite(values[mask])):
            raise ValidationError("non-finite intensity on a valid pixel")
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "intensities", values)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self):
        return self.intensities.shape

    def same_layout(self, other: "EemGrid") -> bool:
        return (self.excitation == other.excitation
                and self.emission == other.emission
                and np.array_equal(self.mask, other.mask))


@dataclass(frozen=True, eq=False)
class VectorizedEem:
    """Masked-valid pixels of an EEM flattened excitation-major.

    Pixels are ordered by increasing excitation, then increasing emission.
    The axes and mask of the source grid are kept so the vector can be
    mapped back with :func:`devectorize`.
    """

    values: np.ndarray
    pixel_index: np.ndarray  # (p, 2) array of (excitation nm, emission nm)
    excitation: WavelengthAxis
    emission: WavelengthAxis
    mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        index = np.array(self.pixel_index, dtype=float).reshape(-1, 2)
        if values.ndim != 1 or values.shape[0] != index.shape[0]:
            raise ValidationError("values and pixel_index lengths differ")
        values.flags.writeable = False
        index.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "pixel_index", index)

    def __len__(self):
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return len(self)

    def with_values(self, values) -> "VectorizedEem":
        return VectorizedEem(values, self.pixel_index, self.excitation,
                             self.emission, self.mask)


def pixel_index(excitation: WavelengthAxis, emission: WavelengthAxis,
                mask: np.ndarray) -> np.ndarray:
    ex, em = np.meshgrid(excitation.values, emission.values)
    keep = mask.ravel(order="F")
    return np.column_stack([ex.ravel(order="F")[keep], em.ravel(order="F")[keep]])


def vectorize(grid: EemGrid) -> VectorizedEem:
    """Flatten the valid pixels of ``grid`` in excitation-major order."""
    keep = grid.mask.ravel(order="F")
    values = grid.intensities.ravel(order="F")[keep]
    if not np.all(np.isfinite(values)):
        raise ValidationError("non-finite intensity on a valid pixel")
    return VectorizedEem(values, pixel_index(grid.excitation, grid.emission, grid.mask),
                         grid.excitation, grid.emission, grid.mask)


def devectorize(vec: VectorizedEem) -> EemGrid:
    """Inverse of :func:`vectorize`; masked-out pixels become NaN."""
    shape = (vec.emission.count, vec.excitation.count)
    flat = np.full(shape[0] * shape[1], np.nan)
    flat[vec.mask.ravel(order="F")] = vec.values
    return EemGrid(vec.excitation, vec.emission,
                   flat.reshape(shape, order="F"), vec.mask)


@dataclass(frozen=True, eq=False)
class ReplicateSet:
    """Replicate EEMs of one water sample, with optional known abundances."""

    sample_id: str
    replicates: Sequence[EemGrid]
    weights: np.ndarray | None = None

    def __post_init__(self):
        reps = tuple(self.replicates)
        if not reps:
            raise ValidationError(f"sample {self.sample_id!r} has no replicates")
        first = reps[0]
        for k, grid in enumerate(reps[1:], start=2):
            if not first.same_layout(grid):
                raise ValidationError(
                    f"sample {self.sample_id!r}: replicate {k} axes/mask differ from replicate 1")
        object.__setattr__(self, "replicates", reps)
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            if w.ndim != 1 or np.any(w < 0) or np.any(w > 1):
                raise ValidationError(
                    f"sample {self.sample_id!r}: weights must lie in [0, 1]")
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return len(self.replicates)

    @property
    def layout(self) -> EemGrid:
        return self.replicates[0]

    @cached_property
    def vectors(self) -> tuple[VectorizedEem, ...]:
        return tuple(vectorize(g) for g in self.replicates)

    @cached_property
    def matrix(self) -> np.ndarray:
        """Replicate-by-pixel array of shape (n, p)."""
        m = np.vstack([v.values for v in self.vectors]) if self.vectors[0].p else \
            np.empty((self.n, 0))
        m.flags.writeable = False
        return m

    @classmethod
    def from_matrix(cls, sample_id: str, matrix, template: VectorizedEem,
                    weights=None) -> "ReplicateSet":
        grids = [devectorize(template.with_values(row)) for row in np.atleast_2d(matrix)]
        return cls(sample_id, grids, weights)


def check_same_layout(sets: Sequence[ReplicateSet]) -> None:
    first = sets[0].layout
    for s in sets[1:]:
        if not first.same_layout(s.layout):
            raise ValidationError(
                f"sample {s.sample_id!r} axes/mask differ from sample {sets[0].sample_id!r}")


def pixel_mean(rset: ReplicateSet) -> VectorizedEem:
    """Across-replicate average at each valid pixel."""
    # explicit sum in replicate order keeps the result reproducible
    total = np.zeros(rset.vectors[0].p)
    for v in rset.vectors:
        total = total + v.values
    return rset.vectors[0].with_values(total / rset.n)


@dataclass(frozen=True)
class MixtureDesign:
    """Endmember identities and the abundance vector of each mixture."""

    endmember_ids: tuple[str, ...]
    mixtures: Mapping[str, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        ids = tuple(self.endmember_ids)
        object.__setattr__(self, "endmember_ids", ids)
        mixes = {}
        for mid, b in dict(self.mixtures).items():
            b = tuple(float(x) for x in b)
            if len(b) != len(ids):
                raise ValidationError(
                    f"mixture {mid!r}: {len(b)} weights for {len(ids)} endmembers")
            if any(x < 0 for x in b):
                raise ValidationError(f"mixture {mid!r}: negative weight")
            mixes[mid] = b
        object.__setattr__(self, "mixtures", mixes)

    @property
    def s(self) -> int:
        return len(self.endmember_ids)


# Mixture weights of the study design (groundwater, streamwater, wastewater).
STUDY_DESIGN = MixtureDesign(
    ("s1", "s2", "s3"),
    {
        "m1": (0.00, 0.50, 0.50),
        "m2": (0.50, 0.50, 0.00),
        "m3": (0.50, 0.00, 0.50),
        "m4": (0.25, 0.25, 0.50),
        "m5": (0.25, 0.50, 0.25),
        "m6": (0.50, 0.25, 0.25),
        "m7": (0.33, 0.33, 0.33),
    },
)

STUDY_EXCITATION = WavelengthAxis(240.0, 5.0, 43)
STUDY_EMISSION = WavelengthAxis(300.0, 2.0, 151)
