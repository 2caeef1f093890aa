"""Finite-dimensional continuous-time LTI systems in state-space form.

Every transfer matrix in the package is carried as a realization
``G(s) = C (sI - A)^{-1} B + D``.  Interconnections (series, parallel,
feedback, linear fractional transformations) are formed directly on the
matrices, so derived realizations are generally non-minimal;
:func:`minimal_reduce` strips uncontrollable and unobservable parts when a
stability verdict on the transfer matrix itself is needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionError, EvaluationAtPole, IllPosedLoop, SamplingError

#: reciprocal condition number below which ``I - D_K D_G`` counts as singular
WELL_POSED_RCOND = 1e-12
DEFAULT_RANK_TOL = 1e-9

__all__ = [
    "Realization",
    "StabilityVerdict",
    "ZeroTest",
    "series",
    "parallel_sum",
    "feedback",
    "lft",
    "select_io",
    "is_hurwitz",
    "minimal_reduce",
    "freq_eval",
    "freq_response",
    "freq_residual",
    "is_zero_system",
    "sample_points",
]


def _as_matrix(value: ArrayLike, rows: int | None = None, cols: int | None = None) -> NDArray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if rows in (None, 1) else arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    if arr.size == 0:
        arr = arr.reshape(rows if rows is not None else arr.shape[0],
                          cols if cols is not None else arr.shape[1])
    return arr


@dataclass(frozen=True, eq=False)
class Realization:
    """State-space quadruple ``(A, B, C, D)``.

    ``n = 0`` is allowed and denotes the static gain ``D``.  Instances are
    immutable; the matrices are copied and marked read-only on construction.
    """

    A: NDArray
    B: NDArray
    C: NDArray
    D: NDArray

    def __post_init__(self) -> None:
        D = _as_matrix(self.D)
        p, m = D.shape
        A = _as_matrix(self.A)
        n = A.shape[0] if A.size else 0
        A = A.reshape(n, n) if A.size == 0 else A
        B = _as_matrix(self.B, rows=n, cols=m)
        C = _as_matrix(self.C, rows=p, cols=n)
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape != (n, m):
            raise DimensionError(f"B has shape {B.shape}, expected {(n, m)}")
        if C.shape != (p, n):
            raise DimensionError(f"C has shape {C.shape}, expected {(p, n)}")
        for name, mat in zip("ABCD", (A, B, C, D)):
            mat = np.array(mat, dtype=float, copy=True)
            mat.setflags(write=False)
            object.__setattr__(self, name, mat)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        """``(outputs, inputs)`` like a transfer matrix."""
        return self.D.shape

    def __call__(self, s: complex) -> NDArray:
        return freq_eval(self, s)

    def __repr__(self) -> str:
        p, m = self.shape
        return f"Realization(n={self.n}, inputs={m}, outputs={p})"

    def __neg__(self) -> "Realization":
        return Realization(self.A, self.B, -self.C, -self.D)

    def __mul__(self, other: "Realization") -> "Realization":
        return series(self, other)

    def __add__(self, other: "Realization") -> "Realization":
        return parallel_sum(self, other, +1)

    def __sub__(self, other: "Realization") -> "Realization":
        return parallel_sum(self, other, -1)

    @classmethod
    def gain(cls, D: ArrayLike) -> "Realization":
        D = _as_matrix(D)
        return cls(np.zeros((0, 0)), np.zeros((0, D.shape[1])), np.zeros((D.shape[0], 0)), D)

    @classmethod
    def zero(cls, outputs: int, inputs: int) -> "Realization":
        return cls.gain(np.zeros((outputs, inputs)))

    @classmethod
    def identity(cls, size: int) -> "Realization":
        return cls.gain(np.eye(size))


@dataclass(frozen=True)
class StabilityVerdict:
    is_hurwitz: bool
    spectral_abscissa: float
    eigenvalues: tuple[complex, ...]

    def __bool__(self) -> bool:
        return self.is_hurwitz


class ZeroTest(NamedTuple):
    is_zero: bool
    residual: float


def _check_same_shape(G1: Realization, G2: Realization) -> None:
    if G1.shape != G2.shape:
        raise DimensionError(f"transfer shapes differ: {G1.shape} vs {G2.shape}")


def series(G1: Realization, G2: Realization) -> Realization:
    """Realize the product ``G1 G2`` (``G2`` acts first).

    The state is ordered ``(x1, x2)``.
    """
    if G1.n_inputs != G2.n_outputs:
        raise DimensionError(
            f"cannot form G1*G2: G1 has {G1.n_inputs} inputs, G2 has {G2.n_outputs} outputs"
        )
    n1, n2 = G1.n, G2.n
    A = np.block([[G1.A, G1.B @ G2.C], [np.zeros((n2, n1)), G2.A]])
    B = np.vstack([G1.B @ G2.D, G2.B])
    C = np.hstack([G1.C, G1.D @ G2.C])
    return Realization(A, B, C, G1.D @ G2.D)


def parallel_sum(G1: Realization, G2: Realization, sign: int = 1) -> Realization:
    """Realize ``G1 + sign * G2``."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    _check_same_shape(G1, G2)
    n1, n2 = G1.n, G2.n
    A = np.block([[G1.A, np.zeros((n1, n2))], [np.zeros((n2, n1)), G2.A]])
    B = np.vstack([G1.B, G2.B])
    C = np.hstack([G1.C, sign * G2.C])
    return Realization(A, B, C, G1.D + sign * G2.D)


def _solve_loop(D_a: NDArray, D_b: NDArray) -> NDArray:
    """Return ``(I - D_a D_b)^{-1}`` after checking well-posedness."""
    M = np.eye(D_a.shape[0]) - D_a @ D_b
    if M.size == 0:
        return M
    rcond = 1.0 / np.linalg.cond(M, 1) if np.all(np.isfinite(M)) else 0.0
    if not np.isfinite(rcond) or rcond <= WELL_POSED_RCOND:
        raise IllPosedLoop(f"loop is ill-posed: rcond(I - D_K D_G) = {rcond:.3e}")
    return np.linalg.inv(M)


def lft(J: Realization, Q: Realization, n_meas: int, n_ctrl: int) -> Realization:
    """Lower linear fractional transformation ``F_l(J, Q)``.

    ``J`` maps ``(w, u2) -> (z, y2)`` where ``y2`` has ``n_meas`` rows and
    ``u2`` has ``n_ctrl`` columns; ``Q`` closes ``u2 = Q y2``.  Returns the map
    ``w -> z``, i.e. ``J11 + J12 Q (I - J22 Q)^{-1} J21``.  States are
    ordered ``(xJ, xQ)``.
    """
    nz = J.n_outputs - n_meas
    nw = J.n_inputs - n_ctrl
    if nz < 0 or nw < 0 or Q.shape != (n_ctrl, n_meas):
        raise DimensionError("LFT partition does not match the closing system")
    B1, B2 = J.B[:, :nw], J.B[:, nw:]
    C1, C2 = J.C[:nz], J.C[nz:]
    D11, D12 = J.D[:nz, :nw], J.D[:nz, nw:]
    D21, D22 = J.D[nz:, :nw], J.D[nz:, nw:]
    E = _solve_loop(Q.D, D22)  # u2 = E (CQ xQ + DQ C2 xJ + DQ D21 w)
    u_x = E @ np.hstack([Q.D @ C2, Q.C])
    u_w = E @ Q.D @ D21
    y_x = np.hstack([C2, np.zeros((n_meas, Q.n))]) + D22 @ u_x
    y_w = D21 + D22 @ u_w
    A = np.block([[J.A, np.zeros((J.n, Q.n))], [np.zeros((Q.n, J.n)), Q.A]])
    A = A + np.vstack([B2 @ u_x, Q.B @ y_x])
    B = np.vstack([B1 + B2 @ u_w, Q.B @ y_w])
    C = np.hstack([C1, np.zeros((nz, Q.n))]) + D12 @ u_x
    D = D11 + D12 @ u_w
    return Realization(A, B, C, D)


def feedback(G: Realization, K: Realization) -> Realization:
    """Positive-feedback loop map ``(I - K G)^{-1} K``.

    With ``u = K (e + y)`` and ``y = G u`` this is the transfer ``e -> u``.
    States are ordered ``(xG, xK)``.  Raises :class:`IllPosedLoop` when
    ``I - D_K D_G`` is numerically singular.
    """
    if K.n_inputs != G.n_outputs or K.n_outputs != G.n_inputs:
        raise DimensionError(f"loop mismatch: G is {G.shape}, K is {K.shape}")
    E = _solve_loop(K.D, G.D)
    u_x = E @ np.hstack([K.D @ G.C, K.C])
    u_e = E @ K.D
    y_x = np.hstack([G.C, np.zeros((G.n_outputs, K.n))]) + G.D @ u_x
    y_e = G.D @ u_e
    A = np.block([[G.A, np.zeros((G.n, K.n))], [np.zeros((K.n, G.n)), K.A]])
    A = A + np.vstack([G.B @ u_x, K.B @ y_x])
    B = np.vstack([G.B @ u_e, K.B @ (np.eye(G.n_outputs) + y_e)])
    return Realization(A, B, u_x, u_e)


def select_io(G: Realization, row_selector: ArrayLike | None = None,
              col_selector: ArrayLike | None = None) -> Realization:
    """Return ``R G S`` for constant matrices ``R`` (rows) and ``S`` (columns)."""
    R = np.eye(G.n_outputs) if row_selector is None else _as_matrix(row_selector)
    S = np.eye(G.n_inputs) if col_selector is None else _as_matrix(col_selector)
    if R.shape[1] != G.n_outputs or S.shape[0] != G.n_inputs:
        raise DimensionError(
            f"selectors {R.shape} / {S.shape} do not fit a {G.shape} system"
        )
    return Realization(G.A, G.B @ S, R @ G.C, R @ G.D @ S)


def is_hurwitz(G: Realization | NDArray) -> StabilityVerdict:
    """Eigenvalue test on the state matrix (of the given, possibly non-minimal, realization)."""
    A = G.A if isinstance(G, Realization) else np.asarray(G, dtype=float)
    if A.size == 0:
        return StabilityVerdict(True, -np.inf, ())
    try:
        eigs = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ArithmeticError(f"eigenvalue computation failed: {exc}") from exc
    if not np.all(np.isfinite(eigs)):
        raise ArithmeticError("eigenvalue computation returned non-finite values")
    abscissa = float(np.max(eigs.real))
    return StabilityVerdict(bool(abscissa < 0), abscissa, tuple(complex(e) for e in eigs))


def _reachable_basis(A: NDArray, B: NDArray, rank_tol: float) -> NDArray:
    """Orthonormal basis of the smallest A-invariant subspace containing im B.

    Block Arnoldi with re-orthogonalisation; a direction is kept when its
    singular value exceeds ``rank_tol * max(||A||, ||B||)``.
    """
    n = A.shape[0]
    basis = np.zeros((n, 0))
    if n == 0 or B.shape[1] == 0:
        return basis
    scale = max(np.linalg.norm(A, 2), np.linalg.norm(B, 2))
    if scale == 0.0:
        return basis
    threshold = rank_tol * scale
    block = B
    while basis.shape[1] < n:
        for _ in range(2):
            block = block - basis @ (basis.T @ block)
        U, sv, _ = np.linalg.svd(block, full_matrices=False)
        rank = int(np.sum(sv > threshold))
        rank = min(rank, n - basis.shape[1])
        if rank == 0:
            break
        new = U[:, :rank]
        basis = np.hstack([basis, new])
        block = A @ new
    return basis


def minimal_reduce(G: Realization, rank_tol: float = DEFAULT_RANK_TOL,
                   return_error: bool = False):
    """Remove uncontrollable and unobservable dynamics.

    Parameters
    ----------
    G : Realization
    rank_tol : float
        Relative rank threshold for the orthogonal Krylov staircases.
    return_error : bool
        If true, also return the largest relative frequency-response
        discrepancy between ``G`` and the reduced realization over a handful
        of regular sample points.

    Returns
    -------
    Realization, or ``(Realization, float)`` when ``return_error`` is set.
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    V = _reachable_basis(G.A, G.B, rank_tol)
    A1, B1, C1 = V.T @ G.A @ V, V.T @ G.B, G.C @ V
    W = _reachable_basis(A1.T, C1.T, rank_tol)
    reduced = Realization(W.T @ A1 @ W, W.T @ B1, C1 @ W, G.D)
    if not return_error:
        return reduced
    poles = np.concatenate([is_hurwitz(G).eigenvalues, is_hurwitz(reduced).eigenvalues])
    points = sample_points(8, poles=np.asarray(poles, dtype=complex))
    return reduced, freq_residual(G, reduced, points)


def freq_eval(G: Realization, s: complex) -> NDArray:
    """Evaluate ``C (sI - A)^{-1} B + D`` at a single complex point."""
    if G.n == 0:
        return G.D.astype(complex)
    M = s * np.eye(G.n) - G.A
    rcond = 1.0 / np.linalg.cond(M, 1)
    if not np.isfinite(rcond) or rcond < 1e-14:
        raise EvaluationAtPole(f"s = {s} is (numerically) a pole: rcond = {rcond:.2e}")
    return G.C @ np.linalg.solve(M, G.B.astype(complex)) + G.D


def freq_response(G: Realization, points: ArrayLike) -> NDArray:
    """Stack of ``G(s)`` for each point; shape ``(len(points), p, m)``."""
    return np.array([freq_eval(G, s) for s in np.atleast_1d(points)])


def _relative_gap(X: NDArray, Y: NDArray) -> float:
    gap = np.linalg.norm(X - Y)
    denom = max(np.linalg.norm(X), np.linalg.norm(Y))
    return float(gap / denom) if denom > 1e-14 else float(gap)


def freq_residual(G1: Realization, G2: Realization, points: ArrayLike) -> float:
    """Largest relative Frobenius discrepancy ``||G1(s) - G2(s)||`` over ``points``.

    The discrepancy is measured relative to the larger of the two norms at
    each point; where both are below 1e-14 the absolute gap is used.
    """
    _check_same_shape(G1, G2)
    return max(
        (_relative_gap(freq_eval(G1, s), freq_eval(G2, s)) for s in np.atleast_1d(points)),
        default=0.0,
    )


def sample_points(count: int, poles: ArrayLike = (), seed: int = 0,
                  min_distance: float = 1e-6) -> NDArray:
    """Deterministic regular evaluation points.

    Alternates positive reals and imaginary-axis points on logarithmic grids,
    then off-axis points in the right half-plane, skipping anything closer than
    ``min_distance * (1 + |s|)`` to a listed pole.
    """
    poles = np.asarray(poles, dtype=complex).ravel()
    rng = np.random.default_rng(seed)
    half = max(1, (count + 1) // 2)
    real = np.logspace(-1, 1.3, half)
    imag = 1j * np.logspace(-1.2, 1.5, half)
    base = np.empty(2 * half, dtype=complex)
    base[0::2], base[1::2] = real, imag

    def _regular(s):
        return poles.size == 0 or np.min(np.abs(poles - s)) > min_distance * (1 + abs(s))

    chosen = [s for s in base if _regular(s)]
    attempts = 0
    while len(chosen) < count:
        attempts += 1
        if attempts > 100 * count:
            raise SamplingError("could not find enough evaluation points away from poles")
        s = complex(rng.uniform(0.05, 5.0), rng.uniform(-10.0, 10.0))
        if _regular(s):
            chosen.append(s)
    return np.array(chosen[:count], dtype=complex)


def is_zero_system(G: Realization, tol: float = 1e-8, scale: float | None = None) -> ZeroTest:
    """Decide ``G == 0`` by evaluation at ``max(n + 2, 8)`` regular points.

    Each entry of ``G`` is rational with denominator degree at most ``n``, so
    it cannot vanish at ``n + 1`` distinct regular points unless it is
    identically zero.  The residual is the largest ``||G(s)||_F`` divided by
    ``scale`` (default ``max(1, ||D|| + ||C|| ||B||)``).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if scale is None:
        scale = max(1.0, np.linalg.norm(G.D) + np.linalg.norm(G.C) * np.linalg.norm(G.B))
    points = sample_points(max(G.n + 2, 8), poles=is_hurwitz(G).eigenvalues)
    residual = max(np.linalg.norm(freq_eval(G, s)) for s in points) / scale
    return ZeroTest(bool(residual < tol), float(residual))
