"""Non-negative least squares by the Lawson-Hanson active-set method."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ValidationError


@dataclass(frozen=True, eq=False)
class NnlsSolution:
    """Result of :func:`nnls_solve`.

    Attributes
    ----------
    b_hat : ndarray, shape (s,)
        Non-negative coefficient vector.
    residual_norm : float
        Euclidean norm of ``y - X @ b_hat``.
    gradient : ndarray, shape (s,)
        Dual vector ``X.T @ (y - X @ b_hat)``. At the optimum it is
        non-positive everywhere and zero on the positive coefficients.
    iterations : int
        Number of variables brought into the passive set.
    converged : bool
        False when ``max_iter`` ran out before the KKT conditions were met.
    tol : float
        The gradient tolerance actually applied (scaled to the data).
    """

    b_hat: np.ndarray
    residual_norm: float
    gradient: np.ndarray
    iterations: int
    converged: bool
    tol: float

    @property
    def objective(self) -> float:
        return self.residual_norm ** 2


def _kkt_tolerance(X, y, tol):
    # w_k = x_k . r carries rounding error proportional to |x_k| |y|
    scale = float(np.max(np.linalg.norm(X, axis=0))) * float(np.linalg.norm(y))
    return tol * max(1.0, scale)


def nnls_solve(X, y, tol: float = 1e-10, max_iter: int | None = None) -> NnlsSolution:
    """Minimize ``||y - X b||`` subject to ``b >= 0``.

    Parameters
    ----------
    X : array_like, shape (p, s)
    y : array_like, shape (p,)
    tol : float
        KKT tolerance on the gradient, relative to ``max_k |X[:, k]| * |y|``
        when that product exceeds one.
    max_iter : int, optional
        Cap on the number of outer (variable-entering) iterations, default
        ``10 * s``. When reached, the current feasible iterate is returned
        with ``converged=False``.

    Notes
    -----
    The entering variable is the one with the largest gradient, ties going to
    the lowest column index. Subproblems are solved with an SVD-based least
    squares solve, which returns the minimum-norm solution when the passive
    columns are rank deficient.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"shape mismatch: X {X.shape}, y {y.shape}")
    p, s = X.shape
    if s < 1:
        raise ValidationError("X needs at least one column")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("non-finite entries in X or y")
    if max_iter is None:
        max_iter = 10 * s
    tol_eff = _kkt_tolerance(X, y, tol)

    b = np.zeros(s)
    passive = np.zeros(s, dtype=bool)
    blocked = np.zeros(s, dtype=bool)
    w = X.T @ y
    iterations = 0
    converged = False

    while True:
        candidates = ~passive & ~blocked & (w > tol_eff)
        if not candidates.any():
            # blocked variables with a positive gradient mean we stalled
            converged = not np.any(~passive & blocked & (w > tol_eff))
            break
        if iterations >= max_iter:
            break
        t = int(np.argmax(np.where(candidates, w, -np.inf)))
        passive[t] = True
        iterations += 1

        first = True
        while True:
            z = np.zeros(s)
            z[passive] = np.linalg.lstsq(X[:, passive], y, rcond=None)[0]
            if np.all(z[passive] > 0):
                b = z
                blocked[:] = False
                break
            if first and z[t] <= 0:
                # entering variable cannot move off zero (round-off); skip it
                passive[t] = False
                blocked[t] = True
                break
            first = False
            hit = passive & (z <= 0)
            ratios = np.full(s, np.inf)
            ratios[hit] = b[hit] / (b[hit] - z[hit])
            k = int(np.argmin(ratios))
            b = b + ratios[k] * (z - b)
            b[k] = 0.0
            passive &= b > 0
            b[~passive] = 0.0
            blocked[:] = False

        w = X.T @ (y - X @ b)

    r = y - X @ b
    return NnlsSolution(b, float(np.linalg.norm(r)), w, iterations, converged, tol_eff)
