"""Doubly coprime factorization, Youla parameterization and environment sampling.

Conventions follow positive feedback throughout: a controller ``K`` closes
``u = K y`` around ``y = G u`` and the loop map is ``(I - K G)^{-1} K``.
For ``G = [A, B; C, D]`` with ``A + B F`` and ``A + H C`` Hurwitz the
factors are the usual observer-based ones::

    M_r = [A+BF | B ; F | I]          U_r = [A+BF | -H ; F | 0]
    N_r = [A+BF | B ; C+DF | D]       V_r = [A+BF | -H ; C+DF | I]
    V_l = [A+HC | -(B+HD) ; F | I]    U_l = [A+HC | -H ; F | 0]
    N_l = [A+HC | B+HD ; C | D]       M_l = [A+HC | H ; C | I]
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .errors import IllPosedLoop, SamplingError, SynthesisError
from .statespace import (
    Realization,
    feedback,
    is_hurwitz,
    lft,
    parallel_sum,
    sample_points,
    series,
)

log = logging.getLogger(__name__)

DEFAULT_MARGIN = 0.1
ENV_SHIFT_MARGIN = 0.5
CARE_REFINE_THRESHOLD = 1e-9


@dataclass(frozen=True, eq=False)
class CoprimeFactors:
    N_r: Realization
    M_r: Realization
    U_r: Realization
    V_r: Realization
    N_l: Realization
    M_l: Realization
    U_l: Realization
    V_l: Realization
    F: NDArray | None
    H: NDArray | None
    subject: Realization

    @property
    def is_trivial(self) -> bool:
        """True for the ``N = G, M = I, U = 0, V = I`` factorization of a stable subject."""
        return self.F is None

    def factors(self) -> dict[str, Realization]:
        return {name: getattr(self, name)
                for name in ("N_r", "M_r", "U_r", "V_r", "N_l", "M_l", "U_l", "V_l")}


@dataclass(frozen=True, eq=False)
class EnvironmentSample:
    Qbar: Realization
    Gbar: Realization
    seed: int


def _uncontrollable_unstable_modes(A: NDArray, B: NDArray, tol: float, shift: float = 0.0):
    """Eigenvalues with ``Re >= -shift`` failing the PBH rank test for ``(A, B)``."""
    n = A.shape[0]
    scale = max(1.0, np.linalg.norm(A, 2), np.linalg.norm(B, 2) if B.size else 0.0)
    bad = []
    for lam in np.linalg.eigvals(A):
        if lam.real < -shift:
            continue
        pencil = np.hstack([A - lam * np.eye(n), B.astype(complex)])
        smallest = np.linalg.svd(pencil, compute_uv=False)[-1] if n else np.inf
        if smallest <= tol * scale:
            bad.append(complex(lam))
    return bad


def is_stabilizable(A: ArrayLike, B: ArrayLike, tol: float = 1e-9) -> bool:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    return not _uncontrollable_unstable_modes(A, B, tol)


def is_detectable(A: ArrayLike, C: ArrayLike, tol: float = 1e-9) -> bool:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    return not _uncontrollable_unstable_modes(A.T, C.T, tol)


def solve_care(A: NDArray, B: NDArray) -> NDArray:
    """Stabilizing solution of ``A'X + XA - XBB'X + I = 0``.

    Uses the ordered real Schur form of the Hamiltonian matrix, followed by
    Newton-Kleinman sweeps when the Riccati residual exceeds 1e-9.
    """
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    G = B @ B.T
    Q = np.eye(n)
    H = np.block([[A, -G], [-Q, -A.T]])
    T, Z, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise SynthesisError(
            f"Hamiltonian has {sdim} stable eigenvalues instead of {n}; "
            "pair is not stabilizable or has imaginary-axis modes"
        )
    U11, U21 = Z[:n, :n], Z[n:, :n]
    X = np.linalg.solve(U11.T, U21.T).T
    X = 0.5 * (X + X.T)

    def residual(X):
        R = A.T @ X + X @ A - X @ G @ X + Q
        return np.linalg.norm(R) / max(1.0, np.linalg.norm(X))

    for _ in range(20):
        if residual(X) <= CARE_REFINE_THRESHOLD:
            break
        Acl = A - G @ X
        if not is_hurwitz(Acl):
            break
        X_new = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + X @ G @ X))
        X = 0.5 * (X_new + X_new.T)
    return X


def stabilizing_gain(A: ArrayLike, B: ArrayLike, margin: float = DEFAULT_MARGIN,
                     tol: float = 1e-9) -> NDArray:
    """Return ``F`` with ``A + B F`` Hurwitz, via an LQR design with unit weights.

    The plain Riccati gain ``F = -B'X`` is returned when it already achieves a
    spectral abscissa of at most ``-margin``.  Otherwise the design is
    repeated on ``A + margin I``; if that shifted pair is not stabilizable the
    plain gain is kept and a warning is logged.

    Raises
    ------
    SynthesisError
        If ``(A, B)`` is not stabilizable; the message names the offending
        eigenvalue.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0] if A.size else 0
    B = np.asarray(B, dtype=float)
    if n == 0:
        return np.zeros((B.shape[-1] if B.ndim == 2 else 0, 0))
    B = B.reshape(n, -1)
    bad = _uncontrollable_unstable_modes(A, B, tol)
    if bad:
        raise SynthesisError(
            f"pair is not stabilizable: eigenvalue {bad[0]:.6g} is uncontrollable"
        )
    F = -B.T @ solve_care(A, B)
    abscissa = is_hurwitz(A + B @ F).spectral_abscissa
    if abscissa <= -margin or margin <= 0:
        return F
    shifted = A + margin * np.eye(n)
    if _uncontrollable_unstable_modes(shifted, B, tol):
        log.warning("margin %.3g unattainable (uncontrollable slow modes); abscissa %.3g",
                    margin, abscissa)
        return F
    return -B.T @ solve_care(shifted, B)


def trivial_factors(G: Realization) -> CoprimeFactors:
    """Factorization ``N = G, M = I, U = 0, V = I`` of a stable ``G``."""
    p, m = G.shape
    I_m, I_p = Realization.identity(m), Realization.identity(p)
    return CoprimeFactors(
        N_r=G, M_r=I_m, U_r=Realization.zero(m, p), V_r=I_p,
        N_l=G, M_l=I_p, U_l=Realization.zero(m, p), V_l=I_m,
        F=None, H=None, subject=G,
    )


def doubly_coprime(G: Realization, margin: float = DEFAULT_MARGIN,
                   tol: float = 1e-9) -> CoprimeFactors:
    """Observer-based doubly coprime factorization of ``G``.

    Requires ``(A, B)`` stabilizable and ``(C, A)`` detectable.
    """
    A, B, C, D = G.A, G.B, G.C, G.D
    try:
        F = stabilizing_gain(A, B, margin, tol)
    except SynthesisError as exc:
        raise SynthesisError(f"cannot factorize: (A, B) {exc}") from exc
    try:
        H = stabilizing_gain(A.T, C.T, margin, tol).T
    except SynthesisError as exc:
        raise SynthesisError(f"cannot factorize: (C, A) not detectable; {exc}") from exc
    p, m = G.shape
    Af, Ah = A + B @ F, A + H @ C
    CF = C + D @ F
    BH = B + H @ D
    return CoprimeFactors(
        M_r=Realization(Af, B, F, np.eye(m)),
        N_r=Realization(Af, B, CF, D),
        U_r=Realization(Af, -H, F, np.zeros((m, p))),
        V_r=Realization(Af, -H, CF, np.eye(p)),
        V_l=Realization(Ah, -BH, F, np.eye(m)),
        U_l=Realization(Ah, -H, F, np.zeros((m, p))),
        N_l=Realization(Ah, BH, C, D),
        M_l=Realization(Ah, H, C, np.eye(p)),
        F=F, H=H, subject=G,
    )


def _bezout_points(f: CoprimeFactors, count: int) -> NDArray:
    poles = [e for fac in f.factors().values() for e in is_hurwitz(fac).eigenvalues]
    return sample_points(count, poles=poles)


def verify_bezout(f: CoprimeFactors, n_points: int = 32) -> float:
    """Largest ``||[V_l, -U_l; -N_l, M_l](s) [M_r, U_r; N_r, V_r](s) - I||_F``."""
    worst = 0.0
    for s in _bezout_points(f, n_points):
        left = np.block([[f.V_l(s), -f.U_l(s)], [-f.N_l(s), f.M_l(s)]])
        right = np.block([[f.M_r(s), f.U_r(s)], [f.N_r(s), f.V_r(s)]])
        worst = max(worst, float(np.linalg.norm(left @ right - np.eye(left.shape[0]))))
    return worst


def youla_controller(f: CoprimeFactors, Q: Realization) -> Realization:
    """Realize ``K = (U_r + M_r Q)(V_r + N_r Q)^{-1}``.

    For state-space factors the controller is the lower LFT of the standard
    observer-based generator with ``Q``, whose loop with the subject has
    state matrix eigenvalues ``eig(A+BF) u eig(A+HC) u eig(A_Q)`` (no hidden
    unstable modes).  For trivial factors ``K = Q (I + G Q)^{-1}``.
    """
    G = f.subject
    p, m = G.shape
    if Q.shape != (m, p):
        raise ValueError(f"Youla parameter must be {m}x{p}, got {Q.shape[0]}x{Q.shape[1]}")
    if f.is_trivial:
        return feedback(-G, Q)
    A, B, C, D = G.A, G.B, G.C, G.D
    F, H = f.F, f.H
    J = Realization(
        A + B @ F + H @ C + H @ D @ F,
        np.hstack([-H, B + H @ D]),
        np.vstack([F, -(C + D @ F)]),
        np.block([[np.zeros((m, p)), np.eye(m)], [np.eye(p), -D]]),
    )
    return lft(J, Q, n_meas=p, n_ctrl=m)


def mfrak(f: CoprimeFactors, Qbar: Realization) -> Realization:
    """``U_r M_l + M_r Qbar M_l``, equal to ``Gbar (I - G Gbar)^{-1}`` for the environment."""
    return series(parallel_sum(f.U_r, series(f.M_r, Qbar), +1), f.M_l)


def random_stable(order: int, outputs: int, inputs: int, rng: np.random.Generator,
                  margin: float = ENV_SHIFT_MARGIN) -> Realization:
    """Random stable system: Gaussian matrices with ``A`` shifted to abscissa ``-margin``."""
    A = rng.standard_normal((order, order))
    if order:
        A -= (is_hurwitz(A).spectral_abscissa + margin) * np.eye(order)
    B = rng.standard_normal((order, inputs))
    C = rng.standard_normal((outputs, order))
    D = rng.standard_normal((outputs, inputs))
    return Realization(A, B, C, D)


def sample_environment(f_of_Gwv: CoprimeFactors, order: int, seed: int,
                       max_attempts: int = 10) -> EnvironmentSample:
    """Draw an admissible environment through its Youla parameter.

    ``Qbar`` is a random stable system of the given order; the environment is
    ``Gbar = youla_controller(f, Qbar)``.  Deterministic in ``seed``.
    """
    if order < 0:
        raise ValueError("order must be nonnegative")
    Gwv = f_of_Gwv.subject
    w_dim, v_dim = Gwv.shape
    rng = np.random.default_rng(seed)
    last_error = None
    for _ in range(max_attempts):
        Qbar = random_stable(order, v_dim, w_dim, rng)
        try:
            Gbar = youla_controller(f_of_Gwv, Qbar)
            loop = feedback(Gwv, Gbar)
        except IllPosedLoop as exc:
            last_error = exc
            continue
        verdict = is_hurwitz(loop)
        if not verdict:
            raise SamplingError(
                f"sampled environment does not stabilize G_wv (abscissa {verdict.spectral_abscissa:.3g})"
            )
        return EnvironmentSample(Qbar=Qbar, Gbar=Gbar, seed=seed)
    raise SamplingError(f"no well-posed environment after {max_attempts} draws: {last_error}")
