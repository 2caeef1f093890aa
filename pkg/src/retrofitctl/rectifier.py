"""Rectifier construction: the annihilator of G_yv and the reduced model seen by the internal controller.

With the outputs reordered so that ``Pbar T y`` are the ``m`` lowest-degree
measurements, the rectifier removes the influence of ``v`` from the
remaining measurements ``P T y``::

    Xi = (P - Ghat_yv Pbar) T,        Xi G_yv = 0,
    Ghat_yu = Xi G_yu.

``Ghat_yv`` is defined through the improper operator
``[Ahat | Sbar A S_dagger ; Chat | 0] D_xi`` (``D_xi`` stacks powers of
``s``); it is folded into a proper realization with the shift identity
``(sI - A)^{-1} s = I + A (sI - A)^{-1}``.  Improper objects such as the left
inverse of ``G_yv`` are only ever evaluated pointwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import AssumptionViolation, EvaluationAtPole, NumericalDegeneracy
from .geometry import (
    DEFAULT_TOL,
    NormalFormCoords,
    Plant,
    arrange_outputs,
    build_coords,
)
from .statespace import (
    DEFAULT_RANK_TOL,
    Realization,
    freq_eval,
    freq_residual,
    is_hurwitz,
    minimal_reduce,
    sample_points,
    series,
)

PROPERNESS_TOL = 1e-8
PATH_AGREEMENT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class RectifiedModel:
    """Everything the internal-controller design needs.

    ``xi`` acts on the measurement ``y`` in its original ordering (the
    output transform ``T`` is folded in); ``ghat_yv`` and ``ghat_yu`` act in
    the reordered output space.
    """

    plant: Plant
    coords: NormalFormCoords
    ghat_yv: Realization
    xi: Realization
    ghat_yu: Realization
    ghat_yu_formula: Realization
    degree_data: dict = field(repr=False)

    @property
    def T(self) -> NDArray:
        return self.coords.T

    @property
    def r(self) -> tuple[int, ...]:
        return self.coords.r

    def rectifier(self) -> Realization:
        """``R = [I, -Ghat_yv]`` acting on ``(P T y, Pbar T y)``."""
        G = self.ghat_yv
        k = G.n_outputs
        return Realization(G.A, np.hstack([np.zeros((G.n, k)), -G.B]), G.C,
                           np.hstack([np.eye(k), -G.D]))


def _normal_form_blocks(coords: NormalFormCoords, plant: Plant):
    Ahat = coords.Sbar @ plant.A @ coords.Sbar_dagger
    Chat = coords.P @ coords.T @ plant.C @ coords.Sbar_dagger
    return Ahat, Chat


def fold_polynomial_input(Ahat: NDArray, Chat: NDArray, coeffs: list[NDArray],
                          tol: float = PROPERNESS_TOL) -> tuple[NDArray, NDArray]:
    """Proper realization of ``Chat (sI - Ahat)^{-1} sum_d coeffs[d] s^d``.

    Returns ``(B, D)`` with ``B = sum_d Ahat^d b_d`` and
    ``D = sum_{d>=1} Chat Ahat^{d-1} b_d``.  The coefficients of ``s^k`` for
    ``k >= 1`` must vanish; otherwise :class:`NumericalDegeneracy` is raised.
    """
    nz = Ahat.shape[0]
    cols = coeffs[0].shape[1] if coeffs else 0
    powers = [np.eye(nz)]
    for _ in range(len(coeffs)):
        powers.append(Ahat @ powers[-1])
    B = sum((powers[d] @ b for d, b in enumerate(coeffs)), np.zeros((nz, cols)))
    D = sum((Chat @ powers[d - 1] @ coeffs[d] for d in range(1, len(coeffs))),
            np.zeros((Chat.shape[0], cols)))
    scale = max(1.0, np.linalg.norm(Chat) * max((np.linalg.norm(b) for b in coeffs), default=0.0)
                * max(1.0, np.linalg.norm(Ahat)) ** max(len(coeffs) - 1, 0))
    for k in range(1, len(coeffs)):
        leftover = sum((Chat @ powers[d - 1 - k] @ coeffs[d] for d in range(k + 1, len(coeffs))),
                       np.zeros((Chat.shape[0], cols)))
        if np.linalg.norm(leftover) > tol * scale:
            raise NumericalDegeneracy(
                f"polynomial part of degree {k} does not vanish "
                f"(norm {np.linalg.norm(leftover):.3e}); relative-degree data is inconsistent"
            )
    return B, D


def build_ghat_yv(coords: NormalFormCoords, plant: Plant) -> Realization:
    """Realize ``Ghat_yv`` from the normal-form blocks."""
    Ahat, Chat = _normal_form_blocks(coords, plant)
    E = coords.Sbar @ plant.A @ coords.S_dagger
    m = len(coords.r)
    offsets = coords.block_offsets()
    coeffs = []
    for d in range(max(coords.r, default=0)):
        b = np.zeros((coords.nz, m))
        for i, (ri, off) in enumerate(zip(coords.r, offsets)):
            if d < ri:
                b[:, i] = E[:, off + d]
        coeffs.append(b)
    B, D = fold_polynomial_input(Ahat, Chat, coeffs)
    return Realization(Ahat, B, Chat, D)


def build_xi(ghat_yv: Realization, coords: NormalFormCoords) -> Realization:
    """``Xi = (P - Ghat_yv Pbar) T`` as a single realization on the original outputs."""
    T, P, Pbar = coords.T, coords.P, coords.Pbar
    return Realization(ghat_yv.A, -ghat_yv.B @ Pbar @ T, ghat_yv.C,
                       (P - ghat_yv.D @ Pbar) @ T)


def left_inverse_eval(coords: NormalFormCoords, plant: Plant, s: complex) -> NDArray:
    """Pointwise value of the left inverse ``(Pbar T G_yv(s))^{-1} Pbar T``."""
    G = coords.Pbar @ coords.T @ freq_eval(plant.G_yv, s)
    if G.size and 1.0 / np.linalg.cond(G) < 1e-13:
        raise EvaluationAtPole(f"Pbar G_yv({s}) is singular")
    return np.linalg.solve(G, coords.Pbar @ coords.T)


def toeplitz_blocks(coords: NormalFormCoords, plant: Plant) -> list[NDArray]:
    """Strictly lower block-Toeplitz ``Z_i`` built from ``c_i A^k B``, one per leading output."""
    C = coords.T @ plant.C
    q = plant.q
    blocks = []
    for i, ri in enumerate(coords.r):
        markov = []
        row = C[i]
        for _ in range(max(ri - 1, 0)):
            markov.append(row @ plant.B)
            row = row @ plant.A
        Z = np.zeros((ri, ri * q))
        for j in range(ri):
            for k in range(j):
                Z[j, k * q:(k + 1) * q] = markov[j - 1 - k]
        blocks.append(Z)
    return blocks


def ghat_yu_formula(coords: NormalFormCoords, plant: Plant) -> Realization:
    """Explicit realization ``[Ahat | Sbar ; Chat | 0] (B - A S_dagger col(Z_i Dhat_i))``.

    ``Z_i Dhat_i`` is a polynomial in ``s``; its coefficient of ``s^d`` in row
    ``j`` of block ``i`` is ``c_i A^{j-1-d} B``.
    """
    Ahat, Chat = _normal_form_blocks(coords, plant)
    C = coords.T @ plant.C
    q = plant.q
    k = sum(coords.r)
    offsets = coords.block_offsets()
    degree = max((ri - 1 for ri in coords.r), default=0)
    Z = [np.zeros((k, q)) for _ in range(max(degree, 1))]
    for i, (ri, off) in enumerate(zip(coords.r, offsets)):
        for j in range(ri):
            for d in range(j):
                Z[d][off + j] = C[i] @ np.linalg.matrix_power(plant.A, j - 1 - d) @ plant.B
    mix = coords.Sbar @ plant.A @ coords.S_dagger
    coeffs = [coords.Sbar @ plant.B - mix @ Z[0]] + [-mix @ Zd for Zd in Z[1:]]
    B, D = fold_polynomial_input(Ahat, Chat, coeffs)
    return Realization(Ahat, B, Chat, D)


def build_ghat_yu(rect: RectifiedModel | tuple, plant: Plant,
                  rank_tol: float = DEFAULT_RANK_TOL, n_points: int = 32) -> Realization:
    """Reduced model ``Ghat_yu = minimal(Xi G_yu)``, cross-checked against the explicit formula.

    ``rect`` may be a :class:`RectifiedModel` or a ``(coords, xi)`` pair.
    """
    coords, xi = (rect.coords, rect.xi) if isinstance(rect, RectifiedModel) else rect
    cascade = minimal_reduce(series(xi, plant.G_yu), rank_tol)
    formula = ghat_yu_formula(coords, plant)
    poles = list(is_hurwitz(cascade).eigenvalues) + list(is_hurwitz(formula).eigenvalues)
    gap = freq_residual(cascade, formula, sample_points(n_points, poles=poles, seed=1))
    if gap > PATH_AGREEMENT_TOL:
        raise NumericalDegeneracy(
            f"cascade and explicit reduced models disagree (relative gap {gap:.3e})"
        )
    return cascade


def rectify(plant: Plant, tol: float = DEFAULT_TOL,
            rank_tol: float = DEFAULT_RANK_TOL) -> RectifiedModel:
    """Run the full rectifier construction for ``plant``.

    Raises
    ------
    AssumptionViolation
        If ``m >= p`` or the relative-degree structure is unsuitable.
    """
    if plant.m >= plant.p:
        raise AssumptionViolation(
            f"rectifier synthesis requires m < p (m={plant.m}, p={plant.p}); "
            "with m >= p only the zero controller annihilates G_yv"
        )
    profile = arrange_outputs(plant, tol)
    coords = build_coords(plant, profile)
    ghat_yv = build_ghat_yv(coords, plant)
    xi = build_xi(ghat_yv, coords)
    ghat_yu = build_ghat_yu((coords, xi), plant, rank_tol)
    formula = ghat_yu_formula(coords, plant)
    degree_data = {"r": coords.r, "Z": toeplitz_blocks(coords, plant),
                   "profile": profile}
    return RectifiedModel(plant, coords, ghat_yv, xi, ghat_yu, formula, degree_data)


def joint_reduced_model(rect: RectifiedModel) -> Realization:
    """``[Ghat_yv, Ghat_yu]`` on the shared rectifier state, minimally reduced.

    Unstable modes of this realization that ``u`` cannot reach would survive
    in ``Qhat Ghat_yv`` for every internal controller.
    """
    G, F = rect.ghat_yv, rect.ghat_yu_formula
    joint = Realization(G.A, np.hstack([G.B, F.B]), G.C, np.hstack([G.D, F.D]))
    return minimal_reduce(joint)
