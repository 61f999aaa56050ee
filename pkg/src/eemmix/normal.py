"""Standard normal distribution functions.

Built on ``scipy.special.erfc``, which keeps full relative precision deep in
the tails, unlike ``1 - erf``.
"""

import numpy as np
from scipy.special import erfc

_SQRT2 = np.sqrt(2.0)


def norm_cdf(z):
    """Standard normal CDF."""
    return 0.5 * erfc(-np.asarray(z, dtype=float) / _SQRT2)


def two_sided_p(z):
    """``2 * Phi(-|z|)``, the two-sided tail probability of ``z``."""
    return erfc(np.abs(np.asarray(z, dtype=float)) / _SQRT2)
