"""Abundance estimation over every combination of replicate EEMs."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ReplicateSet, ValidationError, check_same_layout
from .nnls import nnls_solve

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class UnmixRun:
    """NNLS estimates for each (mixture replicate, endmember replicates) combo.

    ``indices[c]`` holds the zero-based replicate index of the mixture followed
    by one index per endmember; ``b_hat[c]`` is NaN for failed solves.
    """

    mixture_id: str
    endmember_ids: tuple[str, ...]
    indices: np.ndarray
    b_hat: np.ndarray
    ok: np.ndarray
    errors: dict = field(default_factory=dict)
    truth: np.ndarray | None = None
    total_combos: int = 0

    @property
    def n_failed(self) -> int:
        return int((~self.ok).sum())


@dataclass(frozen=True)
class SummaryRow:
    endmember_id: str
    truth: float
    mean: float
    sd: float
    bias: float
    count: int


def _combo_indices(counts, max_combos, seed):
    total = int(np.prod(counts))
    if max_combos is None or max_combos >= total:
        return np.array(list(itertools.product(*[range(c) for c in counts])), dtype=int), total
    rng = np.random.default_rng(seed)
    flat = np.sort(rng.choice(total, size=max_combos, replace=False))
    return np.column_stack(np.unravel_index(flat, counts)).astype(int), total


def unmix_all_combos(mixture: ReplicateSet, endmembers: Sequence[ReplicateSet],
                     tol: float = 1e-10, max_combos: int | None = None,
                     seed: int = 0) -> UnmixRun:
    """Regress each mixture replicate on each choice of endmember replicates.

    Combinations are enumerated lexicographically over (mixture replicate,
    endmember 1 replicate, ..., endmember s replicate). With ``max_combos``
    set below the full count, a seeded uniform subset is used instead, still
    in lexicographic order.
    """
    endmembers = tuple(endmembers)
    if not endmembers:
        raise ValidationError("need at least one endmember")
    check_same_layout([mixture, *endmembers])
    counts = [mixture.n] + [e.n for e in endmembers]
    indices, total = _combo_indices(counts, max_combos, seed)
    s = len(endmembers)
    b_hat = np.full((len(indices), s), np.nan)
    ok = np.zeros(len(indices), dtype=bool)
    errors = {}
    ymat = mixture.matrix
    xmats = [e.matrix for e in endmembers]
    for c, idx in enumerate(indices):
        X = np.column_stack([xmats[k][idx[k + 1]] for k in range(s)])
        try:
            sol = nnls_solve(X, ymat[idx[0]], tol=tol)
        except ValidationError as exc:
            errors[c] = str(exc)
            continue
        if not sol.converged:
            errors[c] = f"not converged after {sol.iterations} iterations"
            continue
        b_hat[c] = sol.b_hat
        ok[c] = True
    if errors:
        log.warning("mixture %s: %d of %d solves failed", mixture.sample_id,
                    len(errors), len(indices))
    return UnmixRun(mixture.sample_id, tuple(e.sample_id for e in endmembers), indices,
                    b_hat, ok, errors, mixture.weights, total)


def summarize_run(run: UnmixRun, truth=None) -> list[SummaryRow]:
    """Mean and sd (n - 1 denominator) of each coefficient over successful combos."""
    est = run.b_hat[run.ok]
    if est.shape[0] == 0:
        raise ValidationError(f"mixture {run.mixture_id!r}: no successful combos")
    if truth is None:
        truth = run.truth
    truth = np.full(est.shape[1], np.nan) if truth is None else np.asarray(truth, float)
    mean = est.mean(axis=0)
    sd = est.std(axis=0, ddof=1) if est.shape[0] > 1 else np.full(est.shape[1], np.nan)
    return [SummaryRow(run.endmember_ids[k], float(truth[k]), float(mean[k]), float(sd[k]),
                       float(abs(mean[k] - truth[k])), int(est.shape[0]))
            for k in range(est.shape[1])]
