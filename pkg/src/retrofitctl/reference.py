"""Reference plants and seeded random plant generators.

``stable_4`` and ``unstable_4`` are 4-state subsystems with one
interconnection input, two measurements and relative degrees ``(2, 1)`` in
their natural output order, so the rectifier has to swap the outputs.
``counterexample_2`` pairs a 2-state plant with a controller that stabilizes
``G_yu`` in isolation but violates ``K G_yv = 0``; a static environment gain
of ``CEX_DESTABILIZING_GAIN`` is admissible without the controller and
destabilizing with it.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .geometry import Plant
from .statespace import Realization

#: strongest destabilizing gain of the sweep k = -10, -9.99, ..., 10.  Without
#: the controller the loop is stable for k < 2; with ``u = -2 y`` it is unstable
#: for k > 4/3.  At k = 1.54 the two abscissas are -0.23 and about +0.23.
CEX_DESTABILIZING_GAIN = 1.54


def stable_4() -> Plant:
    A = np.array([
        [-1.0, 1.0, 0.0, 0.0],
        [0.0, -2.0, 1.0, 0.0],
        [0.5, 0.0, -3.0, 1.0],
        [0.0, 0.3, 0.0, -1.5],
    ])
    L = np.array([[0.0], [0.0], [1.0], [0.0]])
    B = np.array([[0.0], [1.0], [0.0], [1.0]])
    Gamma = np.array([[1.0, 0.0, 0.0, 0.0]])
    C = np.array([
        [0.0, 1.0, 0.0, 0.0],  # relative degree 2 from v
        [0.0, 0.0, 1.0, 0.5],  # relative degree 1 from v
    ])
    return Plant(A, L, B, Gamma, C)


def unstable_4() -> Plant:
    """Same structure as :func:`stable_4` with an open-loop eigenvalue in the right half-plane.

    The unstable mode lives in the measured state ``x2``, so it is visible in
    both reduced models and the internal controller has to stabilize it.
    """
    plant = stable_4()
    A = np.array(plant.A)
    A[1, 1] = 0.5
    return Plant(A, plant.L, plant.B, plant.Gamma, plant.C)


def counterexample_2() -> tuple[Plant, Realization]:
    """Plant and naive static controller ``u = -2 y`` that stabilizes ``G_yu`` but is not a retrofit.

    ``v`` and ``w`` act on ``x1``, ``u`` and ``y`` on ``x2``; the two states
    are coupled by a rotation, so ``K G_yv`` is nonzero.
    """
    A = np.array([[-1.0, 1.0], [-1.0, -1.0]])
    L = np.array([[1.0], [0.0]])
    B = np.array([[0.0], [1.0]])
    Gamma = np.array([[1.0, 0.0]])
    C = np.array([[0.0, 1.0]])
    return Plant(A, L, B, Gamma, C), Realization.gain([[-2.0]])


def unreachable_mode_3() -> Plant:
    """Plant whose rectifier carries an unstable mode that ``u`` cannot reach.

    State ``(a, b, c)``: ``a' = 0.5 a + c`` is driven only through the fast
    measurement ``c``, while ``u`` acts on ``b``.  Every output-rectifying
    controller other than zero has an unstable ``Q``.
    """
    A = np.array([[0.5, 0.0, 1.0], [0.0, -1.0, 0.0], [0.0, 1.0, -1.0]])
    L = np.array([[0.0], [0.0], [1.0]])
    B = np.array([[0.0], [1.0], [0.0]])
    Gamma = np.array([[1.0, 0.0, 0.0]])
    C = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    return Plant(A, L, B, Gamma, C)


def _orthogonal_to(M: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    basis = scipy.linalg.null_space(M.T) if M.size else np.eye(M.shape[0])
    return basis @ rng.standard_normal(basis.shape[1])


def random_plant(seed: int, n: int | None = None, structured: bool | None = None,
                 unstable: bool = False) -> Plant:
    """Seeded random plant satisfying the relative-degree ordering (up to an output transform).

    Structured plants give each leading output a prescribed relative degree
    and place the trailing outputs strictly higher; unstructured ones use
    generic measurement rows, which produces a tie resolved by rotation.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9)) if n is None else n
    m = int(rng.integers(1, 3)) if n >= 4 else 1
    p = m + int(rng.integers(1, 3))
    q = int(rng.integers(1, 3))
    w = int(rng.integers(1, 3))
    structured = bool(rng.integers(0, 2)) if structured is None else structured
    A = rng.standard_normal((n, n))
    shift = -0.3 if unstable else 0.5
    A -= (np.max(np.linalg.eigvals(A).real) + shift) * np.eye(n)
    L = rng.standard_normal((n, m))
    B = rng.standard_normal((n, q))
    Gamma = rng.standard_normal((w, n))
    if not structured:
        C = rng.standard_normal((p, n))
        return Plant(A, L, B, Gamma, C)
    krylov = [L]
    for _ in range(n):
        krylov.append(A @ krylov[-1])
    max_lead = max(1, min(3, (n - 1) // m))
    degrees = sorted(int(d) for d in rng.integers(1, max_lead + 1, size=m))
    rows = [_orthogonal_to(np.hstack(krylov[: d - 1]) if d > 1 else np.zeros((n, 0)), rng)
            for d in degrees]
    top = degrees[-1]
    for _ in range(p - m):
        rows.append(_orthogonal_to(np.hstack(krylov[:top]), rng))
    C = np.array(rows)
    C = C[rng.permutation(p)]
    return Plant(A, L, B, Gamma, C)
