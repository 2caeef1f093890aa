"""Relative degree, output reordering and normal-form coordinates of the v -> y channel.

The subsystem of interest is

    dx/dt = A x + L v + B u,    w = Gamma x,    y = C x

with interconnection input ``v`` (dimension ``m``), control input ``u``
(``q``), interconnection output ``w`` and measurement ``y`` (``p``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .errors import AssumptionViolation, CoordinateError, DimensionError
from .statespace import Realization

DEFAULT_TOL = 1e-9
MAX_COORD_CONDITION = 1e12


def _mat(x: ArrayLike, rows: int | None = None, cols: int | None = None) -> NDArray:
    arr = np.array(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(rows if rows is not None else 1, -1) if cols is None else arr.reshape(-1, cols)
    if arr.ndim == 0 or arr.ndim > 2:
        arr = np.atleast_2d(arr)
    if arr.size == 0 and rows is not None and cols is not None:
        arr = arr.reshape(rows, cols)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Plant:
    A: NDArray
    L: NDArray
    B: NDArray
    Gamma: NDArray
    C: NDArray

    def __post_init__(self) -> None:
        A = _mat(self.A)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got {A.shape}")
        L = _mat(self.L, rows=n) if np.size(self.L) else _mat(self.L, n, 0)
        B = _mat(self.B, rows=n) if np.size(self.B) else _mat(self.B, n, 0)
        Gamma = _mat(self.Gamma, cols=n) if np.size(self.Gamma) else _mat(self.Gamma, 0, n)
        C = _mat(self.C, cols=n) if np.size(self.C) else _mat(self.C, 0, n)
        for name, mat, axis in (("L", L, 0), ("B", B, 0), ("Gamma", Gamma, 1), ("C", C, 1)):
            if mat.shape[axis] != n:
                raise DimensionError(f"{name} has shape {mat.shape}, incompatible with n={n}")
        for name, mat in zip(("A", "L", "B", "Gamma", "C"), (A, L, B, Gamma, C)):
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, mat)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        """Dimension of the interconnection input ``v``."""
        return self.L.shape[1]

    @property
    def q(self) -> int:
        """Dimension of the control input ``u``."""
        return self.B.shape[1]

    @property
    def p(self) -> int:
        """Dimension of the measurement ``y``."""
        return self.C.shape[0]

    @property
    def w_dim(self) -> int:
        return self.Gamma.shape[0]

    def _channel(self, out: NDArray, inp: NDArray) -> Realization:
        return Realization(self.A, inp, out, np.zeros((out.shape[0], inp.shape[1])))

    @property
    def G_yv(self) -> Realization:
        return self._channel(self.C, self.L)

    @property
    def G_yu(self) -> Realization:
        return self._channel(self.C, self.B)

    @property
    def G_wv(self) -> Realization:
        return self._channel(self.Gamma, self.L)

    @property
    def G_wu(self) -> Realization:
        return self._channel(self.Gamma, self.B)

    def full(self) -> Realization:
        """The whole subsystem ``(v, u) -> (w, y)``."""
        return self._channel(np.vstack([self.Gamma, self.C]), np.hstack([self.L, self.B]))


@dataclass(frozen=True, eq=False)
class RelativeDegreeProfile:
    """Relative degrees of the rows of ``T C`` with respect to ``v``.

    ``markov[k]`` holds ``T C A^k L`` for ``k = 0..n-1``.  Rows with no
    nonzero Markov parameter are ``capped`` and carry ``r = n + 1``.
    """

    r: tuple[int, ...]
    capped: tuple[bool, ...]
    leading: NDArray
    T: NDArray
    m: int
    tol: float
    markov: NDArray = field(repr=False)
    outputs: NDArray = field(repr=False)
    norm_L: float = field(repr=False)
    norm_A: float = field(repr=False)
    norm_C: float = field(repr=False)

    @property
    def decoupling_rows(self) -> NDArray:
        """``col(c_i A^{r_i - 1} L)`` over the first ``m`` rows."""
        return self.leading[: self.m]

    @property
    def p(self) -> int:
        return len(self.r)


def _markov_threshold(row_norm: float, norm_L: float, norm_A: float, k: int, tol: float) -> float:
    return tol * row_norm * norm_L * max(1.0, norm_A ** k)


def _profile(markov: NDArray, outputs: NDArray, norm_L: float, norm_A: float, norm_C: float,
             tol: float, T: NDArray, m: int) -> RelativeDegreeProfile:
    n_steps, p = markov.shape[0], markov.shape[1]
    r, capped = [], []
    leading = np.zeros((p, markov.shape[2]))
    for i in range(p):
        row_norm = np.linalg.norm(outputs[i])
        # rows that are roundoff residue of an output transform count as zero
        live = row_norm > tol * norm_C
        for k in range(n_steps if live else 0):
            if np.linalg.norm(markov[k, i]) > _markov_threshold(row_norm, norm_L, norm_A, k, tol):
                r.append(k + 1)
                capped.append(False)
                leading[i] = markov[k, i]
                break
        else:
            r.append(n_steps + 1)
            capped.append(True)
    return RelativeDegreeProfile(tuple(r), tuple(capped), leading, T, m, tol,
                                 markov, outputs, norm_L, norm_A, norm_C)


def relative_degree(plant: Plant, tol: float = DEFAULT_TOL,
                    T: ArrayLike | None = None) -> RelativeDegreeProfile:
    """Relative degree of each measurement row (optionally after an output transform ``T``).

    A Markov parameter ``c_i A^k L`` counts as zero when its norm is at most
    ``tol * ||c_i|| * ||L|| * max(1, ||A||^k)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    T = np.eye(plant.p) if T is None else np.asarray(T, dtype=float)
    outputs = T @ plant.C
    markov = np.zeros((plant.n, plant.p, plant.m))
    power = plant.L.copy()
    for k in range(plant.n):
        markov[k] = outputs @ power
        power = plant.A @ power
    norm_L = np.linalg.norm(plant.L, 2) if plant.L.size else 0.0
    norm_A = np.linalg.norm(plant.A, 2) if plant.A.size else 0.0
    norm_C = np.linalg.norm(plant.C, 2) if plant.C.size else 0.0
    return _profile(markov, outputs, norm_L, norm_A, norm_C, tol, T, plant.m)


def _transformed(profile: RelativeDegreeProfile, T: NDArray) -> RelativeDegreeProfile:
    markov = np.einsum("ij,kjl->kil", T, profile.markov)
    return _profile(markov, T @ profile.outputs, profile.norm_L, profile.norm_A,
                    profile.norm_C, profile.tol, T @ profile.T, profile.m)


def _is_injective(M: NDArray, tol: float) -> bool:
    if M.shape[1] == 0:
        return True
    if M.shape[0] < M.shape[1]:
        return False
    sv = np.linalg.svd(M, compute_uv=False)
    return bool(sv[-1] > tol * max(1.0, sv[0]))


def _sorting_permutation(r: tuple[int, ...]) -> NDArray:
    order = np.argsort(np.asarray(r), kind="stable")
    return np.eye(len(r))[order]


def reorder_transform(profile: RelativeDegreeProfile) -> NDArray:
    """Output transform making the first ``m`` rows the unique lowest-degree block.

    Sorts rows by relative degree; if the tie at position ``m`` straddles the
    split, the tie block is rotated by the transposed left singular vectors of
    its stacked leading Markov rows, so that only as many rows as are needed
    keep degree ``r_m`` and the rest move to higher degree.  Rows past ``m``
    are finally re-sorted.

    Raises
    ------
    AssumptionViolation
        If no such transform exists (the low-degree part is not left invertible).
    """
    m, p, tol = profile.m, profile.p, profile.tol
    if m > p:
        raise AssumptionViolation(f"need at least as many outputs as interconnection inputs (m={m}, p={p})")
    perm = _sorting_permutation(profile.r)
    sorted_profile = _transformed(profile, perm)
    T = perm
    r = sorted_profile.r
    if m == 0:
        return T
    if m < p and r[m - 1] == r[m] and not sorted_profile.capped[m - 1]:
        tie = [k for k in range(p) if r[k] == r[m - 1]]
        lo, hi = tie[0], tie[-1] + 1
        head = sorted_profile.leading[:lo]
        block = sorted_profile.leading[lo:hi]
        U, sv, Vh = np.linalg.svd(block)
        needed = m - lo
        rank = int(np.sum(sv > tol * max(1.0, sv[0] if sv.size else 0.0)))
        if rank != needed:
            raise AssumptionViolation(
                f"tie block at relative degree {r[m - 1]} has leading rank {rank}, "
                f"but exactly {needed} independent rows are required"
            )
        rotation = U.T
        signs = np.sign(rotation[np.arange(len(rotation)), np.argmax(np.abs(rotation), axis=1)])
        rotation = rotation * signs[:, None]
        if not _is_injective(np.vstack([head, (rotation @ block)[:needed]]), tol):
            raise AssumptionViolation("no tie resolution makes the decoupling rows injective")
        T_tie = scipy.linalg.block_diag(np.eye(lo), rotation, np.eye(p - hi))
        T = T_tie @ T
        rotated = _transformed(profile, T)
        tail = _sorting_permutation(rotated.r[m:])
        T = scipy.linalg.block_diag(np.eye(m), tail) @ T
    return T


def check_assumption(profile: RelativeDegreeProfile) -> None:
    """Raise :class:`AssumptionViolation` unless the profile is ordered with a strict gap at ``m``."""
    m, r = profile.m, profile.r
    if list(r) != sorted(r):
        raise AssumptionViolation(f"relative degrees {r} are not ascending")
    if any(profile.capped[:m]):
        raise AssumptionViolation("an output among the first m is unaffected by v")
    if m < profile.p and not r[m - 1] < r[m]:
        raise AssumptionViolation(f"no strict gap r_m < r_(m+1): r = {r}, m = {m}")
    if not _is_injective(profile.decoupling_rows, profile.tol):
        raise AssumptionViolation("decoupling rows of the first m outputs are not injective")


def arrange_outputs(plant: Plant, tol: float = DEFAULT_TOL) -> RelativeDegreeProfile:
    """Relative-degree profile after the reordering transform, with the ordering asserted."""
    raw = relative_degree(plant, tol)
    T = reorder_transform(raw)
    profile = relative_degree(plant, tol, T)
    check_assumption(profile)
    return profile


@dataclass(frozen=True, eq=False)
class NormalFormCoords:
    """Coordinates ``xi = S x`` (output derivatives) and ``z = Sbar x`` with ``Sbar L = 0``.

    ``[S; Sbar]^{-1} = [S_dagger, Sbar_dagger]``.  ``P`` and ``Pbar`` select
    the trailing ``p - m`` and leading ``m`` entries of the reordered output
    ``T y``.
    """

    S: NDArray
    Sbar: NDArray
    S_dagger: NDArray
    Sbar_dagger: NDArray
    P: NDArray
    Pbar: NDArray
    T: NDArray
    r: tuple[int, ...]
    condition: float

    @property
    def nz(self) -> int:
        return self.Sbar.shape[0]

    def block_offsets(self) -> list[int]:
        return list(np.cumsum((0,) + self.r[:-1])) if self.r else []


def _orth_rows(M: NDArray, tol: float) -> NDArray:
    """Orthonormal basis (as rows) of the row span of ``M``."""
    if M.size == 0:
        return np.zeros((0, M.shape[1]))
    U, sv, Vh = np.linalg.svd(M, full_matrices=False)
    rank = int(np.sum(sv > tol * max(1.0, sv[0])))
    return Vh[:rank]


def build_coords(plant: Plant, profile: RelativeDegreeProfile) -> NormalFormCoords:
    """Construct ``S``, ``Sbar`` and their inverse blocks.

    ``Sbar`` is an orthonormal basis inside ``ker L^T`` that contains the rows
    of ``P T C`` (so that ``P T C S_dagger = 0``) and completes ``S`` to an
    invertible matrix.
    """
    n, m, p = plant.n, plant.m, plant.p
    check_assumption(profile)
    C = profile.T @ plant.C
    r = tuple(profile.r[:m])
    rows = []
    for i in range(m):
        row = C[i]
        for _ in range(r[i]):
            rows.append(row)
            row = row @ plant.A
    S = np.array(rows).reshape(len(rows), n)
    nz = n - S.shape[0]
    if nz < 0:
        raise CoordinateError("sum of relative degrees exceeds the state dimension")

    kernel = scipy.linalg.null_space(plant.L.T) if m else np.eye(n)
    seeds = _orth_rows(C[m:], profile.tol)
    if seeds.shape[0] > nz:
        raise CoordinateError("trailing outputs are not independent of the derivative coordinates")
    taken = _orth_rows(np.vstack([S, seeds]), profile.tol)
    residual = kernel - taken.T @ (taken @ kernel)
    _, _, Vh = np.linalg.svd(residual, full_matrices=True)
    extra = (kernel @ Vh[: nz - seeds.shape[0]].T).T
    Sbar = np.vstack([seeds, extra])
    if nz:
        Sbar = np.linalg.qr(Sbar.T)[0].T
    else:
        Sbar = np.zeros((0, n))

    stacked = np.vstack([S, Sbar])
    condition = float(np.linalg.cond(stacked)) if n else 1.0
    if not np.isfinite(condition) or condition > MAX_COORD_CONDITION:
        raise CoordinateError(f"[S; Sbar] is numerically singular (condition {condition:.3e})")
    inverse = np.linalg.inv(stacked) if n else np.zeros((0, 0))
    k = S.shape[0]
    P = np.hstack([np.zeros((p - m, m)), np.eye(p - m)])
    Pbar = np.hstack([np.eye(m), np.zeros((m, p - m))])
    return NormalFormCoords(S, Sbar, inverse[:, :k], inverse[:, k:], P, Pbar,
                            profile.T, r, condition)


def normal_form(plant: Plant, coords: NormalFormCoords) -> Realization:
    """The plant's v-channel in ``(z, xi)`` coordinates, outputs ``Pbar T y``.

    Useful for checking that the ``z`` rows of the input map vanish.
    """
    Tinv = np.linalg.inv(np.vstack([coords.Sbar, coords.S])) if plant.n else np.zeros((0, 0))
    Tfwd = np.vstack([coords.Sbar, coords.S])
    C = coords.Pbar @ coords.T @ plant.C
    return Realization(Tfwd @ plant.A @ Tinv, Tfwd @ plant.L, C @ Tinv,
                       np.zeros((plant.m, plant.m)))
