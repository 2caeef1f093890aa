import os

import numpy as np
import pytest
import scipy.signal
from hypothesis import HealthCheck, settings

from retrofitctl.statespace import Realization

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", deadline=None, max_examples=150)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def tf_oracle(G: Realization, s: complex) -> np.ndarray:
    """Transfer value through numerator/denominator polynomials (scipy), independent of freq_eval."""
    p, m = G.shape
    if G.n == 0:
        return G.D.astype(complex)
    out = np.empty((p, m), dtype=complex)
    for j in range(m):
        num, den = scipy.signal.ss2tf(G.A, G.B, G.C, G.D, input=j)
        out[:, j] = [np.polyval(row, s) for row in np.atleast_2d(num)]
        out[:, j] /= np.polyval(den, s)
    return out


def random_realization(rng: np.random.Generator, n: int, p: int, m: int,
                       stable: bool = True, proper: bool = True) -> Realization:
    A = rng.standard_normal((n, n))
    if stable and n:
        A -= (np.max(np.linalg.eigvals(A).real) + 0.5) * np.eye(n)
    D = rng.standard_normal((p, m)) if proper else np.zeros((p, m))
    return Realization(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)), D)


def bezout_subject(seed: int) -> Realization:
    """Seeded system for the factorization suites: ``n <= 10`` states, mostly unstable.

    ``A = randn / sqrt(n) - 0.5 I`` puts the spectrum in a disc of radius about
    one centred at -0.5, so roughly 70 % of draws have right half-plane poles.
    """
    rng = np.random.default_rng(seed)
    n, p, m = int(rng.integers(1, 11)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    A = rng.standard_normal((n, n)) / np.sqrt(n) - 0.5 * np.eye(n)
    return Realization(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)),
                       rng.standard_normal((p, m)))


def first_order(pole: float, gain: float = 1.0) -> Realization:
    """``gain / (s - pole)``."""
    return Realization([[pole]], [[1.0]], [[gain]], [[0.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
