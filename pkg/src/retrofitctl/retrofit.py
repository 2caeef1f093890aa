"""Retrofit controller synthesis and verification.

A controller ``K: y -> u`` attached to a subsystem embedded in an unknown
environment is a retrofit controller when the whole network stays
internally stable for every environment that stabilized it beforehand.
With coprime factors of ``G_wv`` and

    Gt_yu = G_yu + G_yv U_r M_l G_wu,      Qt = (I - K Gt_yu)^{-1} K,

this holds exactly when ``Qt`` is stable and ``G_wu Qt G_yv = 0``.  The
synthesized controllers are output-rectifying: ``K = Khat Xi`` with
``K G_yv = 0``, which makes both conditions independent of the environment.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .coprime import (
    DEFAULT_MARGIN,
    CoprimeFactors,
    doubly_coprime,
    is_stabilizable,
    sample_environment,
    youla_controller,
)
from .errors import IllPosedLoop, SamplingError, SynthesisError
from .geometry import DEFAULT_TOL, Plant
from .rectifier import RectifiedModel, joint_reduced_model, rectify
from .sim import close_loop
from .statespace import (
    DEFAULT_RANK_TOL,
    Realization,
    StabilityVerdict,
    feedback,
    freq_eval,
    freq_residual,
    is_hurwitz,
    is_zero_system,
    lft,
    minimal_reduce,
    parallel_sum,
    sample_points,
    series,
)

log = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-7
FACTOR_AGREEMENT_TOL = 1e-9
Q_IDENTITY_TOL = 1e-8
DEFAULT_ORDERS = (0, 1, 2, 3, 4)


class TrialResult(NamedTuple):
    seed: int
    abscissa: float
    order: int
    error: str | None = None

    @property
    def stable(self) -> bool:
        return self.error is None and self.abscissa < 0


@dataclass(frozen=True, eq=False)
class RetrofitVerdict:
    constraint_residual: float
    qtilde_stable: StabilityVerdict
    mwv_invariance_residual: float
    monte_carlo: list[TrialResult]
    tol: float

    @property
    def worst_abscissa(self) -> float:
        return max((t.abscissa for t in self.monte_carlo), default=-np.inf)

    @property
    def overall(self) -> bool:
        return (self.constraint_residual < self.tol and self.qtilde_stable.is_hurwitz
                and all(t.stable for t in self.monte_carlo))


@dataclass(frozen=True, eq=False)
class OutputRectifyingVerdict:
    constraint_residual: float
    q_stable: StabilityVerdict
    tol: float

    @property
    def passed(self) -> bool:
        return self.constraint_residual < self.tol and self.q_stable.is_hurwitz


@dataclass(frozen=True, eq=False)
class RetrofitController:
    """Assembled controller ``K = Khat Xi`` with the quantities that certify it."""

    Khat: Realization
    rect: RectifiedModel
    K: Realization
    Qhat: Realization
    Q: Realization
    diagnostics: dict = field(default_factory=dict)


def build_gtilde_yu(plant: Plant, f_wv: CoprimeFactors) -> Realization:
    """``G_yu + G_yv U_r M_l G_wu``: the plant seen by ``K`` once the environment loop is factored out."""
    if f_wv.subject.shape != plant.G_wv.shape:
        raise ValueError(f"factors are for a {f_wv.subject.shape} system, G_wv is {plant.G_wv.shape}")
    coupling = series(plant.G_yv, series(series(f_wv.U_r, f_wv.M_l), plant.G_wu))
    return parallel_sum(plant.G_yu, coupling)


def _trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def _run_trial(plant: Plant, f_wv: CoprimeFactors, K: Realization, seed: int, order: int) -> TrialResult:
    try:
        env = sample_environment(f_wv, order, seed)
        verdict = close_loop(plant, env, K).stability()
    except (IllPosedLoop, SamplingError) as exc:
        return TrialResult(seed, float("nan"), order, str(exc))
    return TrialResult(seed, verdict.spectral_abscissa, order)


def monte_carlo(plant: Plant, f_wv: CoprimeFactors, K: Realization, n_trials: int, seed: int,
                orders: tuple[int, ...] = DEFAULT_ORDERS, workers: int = 1) -> list[TrialResult]:
    """Closed-loop spectral abscissas over sampled admissible environments.

    Trial ``i`` uses environment order ``orders[i % len(orders)]`` and a seed
    derived from ``(seed, i)``; results come back in trial order whatever
    the number of workers.
    """
    jobs = [(_trial_seed(seed, i), orders[i % len(orders)]) for i in range(n_trials)]
    if workers <= 1:
        return [_run_trial(plant, f_wv, K, s, o) for s, o in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: _run_trial(plant, f_wv, K, *job), jobs))


def _points_avoiding(*systems: Realization, count: int = 32) -> NDArray:
    poles = [e for G in systems for e in is_hurwitz(G).eigenvalues]
    return sample_points(count, poles=poles)


def check_retrofit(K: Realization, plant: Plant, f_wv: CoprimeFactors, tol: float = CONSTRAINT_TOL,
                   n_trials: int = 200, seed: int = 0, orders: tuple[int, ...] = DEFAULT_ORDERS,
                   workers: int = 1, rank_tol: float = DEFAULT_RANK_TOL) -> RetrofitVerdict:
    """Algebraic retrofit test plus a Monte Carlo sweep over admissible environments."""
    gtilde = build_gtilde_yu(plant, f_wv)
    qtilde = minimal_reduce(feedback(gtilde, K), rank_tol)
    constraint = is_zero_system(series(plant.G_wu, series(qtilde, plant.G_yv)), tol)
    mwv = parallel_sum(plant.G_wv, series(plant.G_wu, series(qtilde, plant.G_yv)))
    invariance = freq_residual(mwv, plant.G_wv, _points_avoiding(mwv, plant.G_wv))
    trials = monte_carlo(plant, f_wv, K, n_trials, seed, orders, workers)
    verdict = RetrofitVerdict(constraint.residual, is_hurwitz(qtilde), invariance, trials, tol)
    log.info("retrofit check: residual %.3e, Qt abscissa %.3g, worst trial abscissa %.3g",
             verdict.constraint_residual, verdict.qtilde_stable.spectral_abscissa,
             verdict.worst_abscissa)
    return verdict


def check_output_rectifying(K: Realization, plant: Plant, tol: float = CONSTRAINT_TOL,
                            rank_tol: float = DEFAULT_RANK_TOL) -> OutputRectifyingVerdict:
    """Test ``K G_yv = 0`` and stability of ``(I - K G_yu)^{-1} K``."""
    residual = is_zero_system(series(K, plant.G_yv), tol).residual
    Q = minimal_reduce(feedback(plant.G_yu, K), rank_tol)
    return OutputRectifyingVerdict(residual, is_hurwitz(Q), tol)


def synthesize_internal(ghat_yu: Realization, margin: float = DEFAULT_MARGIN,
                        tol: float = 1e-9) -> Realization:
    """Observer-based controller stabilizing the reduced model.

    This is the central Youla controller (zero parameter) of the minimal
    reduced model: state feedback from the Riccati gain of ``(Ahat, Bhat)``
    and an observer from the gain of ``(Ahat^T, Chat^T)``.
    """
    G = minimal_reduce(ghat_yu)
    try:
        factors = doubly_coprime(G, margin, tol)
    except SynthesisError as exc:
        raise SynthesisError(
            f"internal-controller synthesis requires a stabilizable and detectable reduced model: {exc}"
        ) from exc
    return youla_controller(factors, Realization.zero(G.n_inputs, G.n_outputs))


def _selectors(rect: RectifiedModel) -> tuple[NDArray, NDArray]:
    coords = rect.coords
    return coords.P @ coords.T, coords.Pbar @ coords.T


def reduced_loop(rect: RectifiedModel, Khat: Realization) -> Realization:
    """Internal loop on the joint reduced model, mapping ``(e, v) -> u``.

    With ``y = Ghat_yv v + Ghat_yu u + e`` and ``u = Khat y`` on the shared
    rectifier state, the ``e`` block is ``Qhat`` and the ``v`` block is
    ``Qhat Ghat_yv``.  When ``Khat`` stabilizes the joint model the state
    matrix is Hurwitz, so stability of both blocks does not depend on a
    numerical pole-zero cancellation.
    """
    joint = joint_reduced_model(rect)
    k = joint.n_outputs
    m = rect.ghat_yv.n_inputs
    q = joint.n_inputs - m
    generator = Realization(
        joint.A,
        np.hstack([np.zeros((joint.n, k)), joint.B]),
        np.vstack([np.zeros((q, joint.n)), joint.C]),
        np.block([[np.zeros((q, k + m)), np.eye(q)],
                  [np.eye(k), joint.D]]),
    )
    return lft(generator, Khat, n_meas=k, n_ctrl=q)


def assemble(Khat: Realization, rect: RectifiedModel, rank_tol: float = DEFAULT_RANK_TOL,
             tol: float = CONSTRAINT_TOL, n_points: int = 32) -> RetrofitController:
    """Form ``K = Khat Xi`` and verify every certificate.

    ``Qhat``, ``Qhat Ghat_yv`` and ``Q = Qhat P T - Qhat Ghat_yv Pbar T`` are
    realized on the internal loop of :func:`reduced_loop` and each is checked
    pointwise against the direct cascade built from ``K`` and the plant.
    Their stability is read off the loop matrix, which avoids relying on
    ``minimal_reduce`` to find a pole-zero cancellation.

    Raises
    ------
    SynthesisError
        If any certificate fails; the message lists all failures.
    """
    plant = rect.plant
    k_in = rect.ghat_yu.n_outputs
    if Khat.shape != (plant.q, k_in):
        raise ValueError(f"internal controller must be {plant.q}x{k_in}, got {Khat.shape}")
    cascade = series(Khat, rect.xi)
    K = minimal_reduce(cascade, rank_tol)
    PT, PbarT = _selectors(rect)
    loop = reduced_loop(rect, Khat)
    B_e, B_v = loop.B[:, :k_in], loop.B[:, k_in:]
    D_e, D_v = loop.D[:, :k_in], loop.D[:, k_in:]
    Qhat = Realization(loop.A, B_e, loop.C, D_e)
    Qhat_gyv = Realization(loop.A, B_v, loop.C, D_v)
    Q = Realization(loop.A, B_e @ PT - B_v @ PbarT, loop.C, D_e @ PT - D_v @ PbarT)

    direct_Q = feedback(plant.G_yu, K)
    direct_Qhat = feedback(rect.ghat_yu, Khat)
    points = _points_avoiding(K, cascade, Q, direct_Q, Qhat, direct_Qhat, rect.ghat_yv,
                              count=n_points)
    factor_gap = freq_residual(K, cascade, points)
    identity_gap = 0.0
    for s in points:
        Qh = freq_eval(direct_Qhat, s)
        identity_gap = max(
            identity_gap,
            _relative(freq_eval(Q, s), freq_eval(direct_Q, s)),
            _relative(freq_eval(Qhat, s), Qh),
            _relative(freq_eval(Qhat_gyv, s), Qh @ freq_eval(rect.ghat_yv, s)),
        )
    annihilation = is_zero_system(series(K, plant.G_yv), tol)
    diagnostics = {
        "factor_gap": factor_gap,
        "q_identity_gap": identity_gap,
        "kgyv_residual": annihilation.residual,
        "qhat": _loop_stability(Qhat, rank_tol),
        "qhat_gyv": _loop_stability(Qhat_gyv, rank_tol),
        "q": _loop_stability(Q, rank_tol),
    }
    failures = []
    if factor_gap > FACTOR_AGREEMENT_TOL:
        failures.append(f"reduced K differs from Khat Xi (gap {factor_gap:.3e})")
    if not annihilation.is_zero:
        failures.append(f"K G_yv is not zero (residual {annihilation.residual:.3e})")
    for key, label in (("qhat", "Qhat"), ("qhat_gyv", "Qhat Ghat_yv"), ("q", "Q")):
        if not diagnostics[key]:
            failures.append(f"{label} unstable (abscissa {diagnostics[key].spectral_abscissa:.3g})")
    if identity_gap > Q_IDENTITY_TOL:
        failures.append(f"loop realizations differ from the direct cascades (gap {identity_gap:.3e})")
    if failures:
        raise SynthesisError("assembled controller failed certification: " + "; ".join(failures))
    return RetrofitController(Khat, rect, K, Qhat, Q, diagnostics)


def _loop_stability(G: Realization, rank_tol: float) -> StabilityVerdict:
    # a Hurwitz loop matrix settles it; otherwise the unstable modes may be hidden
    verdict = is_hurwitz(G)
    return verdict if verdict.is_hurwitz else is_hurwitz(minimal_reduce(G, rank_tol))


def _relative(X: NDArray, Y: NDArray) -> float:
    scale = max(np.linalg.norm(X), np.linalg.norm(Y))
    return 0.0 if scale < 1e-14 else float(np.linalg.norm(X - Y) / scale)


def check_reduced_model(rect: RectifiedModel, tol: float = 1e-9) -> None:
    """Every unstable mode of the joint reduced model must be reachable from ``u``.

    Otherwise that mode survives in ``Qhat Ghat_yv`` whatever ``Khat`` is.
    """
    joint = joint_reduced_model(rect)
    n_v = rect.ghat_yv.n_inputs
    if not is_stabilizable(joint.A, joint.B[:, n_v:], tol):
        raise SynthesisError(
            "internal-controller synthesis requires a stabilizable and detectable reduced model: "
            "an unstable rectifier mode cannot be reached from u"
        )


def synthesize(plant: Plant, tol: float = DEFAULT_TOL, margin: float = DEFAULT_MARGIN,
               rank_tol: float = DEFAULT_RANK_TOL) -> RetrofitController:
    """Rectify, design the internal controller and assemble the certified retrofit controller."""
    rect = rectify(plant, tol, rank_tol)
    check_reduced_model(rect)
    Khat = synthesize_internal(rect.ghat_yu, margin)
    return assemble(Khat, rect, rank_tol)


class SweepResult(NamedTuple):
    gains: NDArray
    open_abscissa: NDArray
    abscissa: NDArray
    margin: float

    @property
    def admissible(self) -> NDArray:
        return self.open_abscissa < -self.margin

    @property
    def destabilizing(self) -> NDArray:
        """Gains admissible without the controller whose loop is unstable with it."""
        return self.gains[self.admissible & (self.abscissa > 0)]

    def strongest(self) -> float | None:
        """Destabilizing gain that is furthest from both stability boundaries."""
        mask = self.admissible & (self.abscissa > 0)
        if not mask.any():
            return None
        score = np.minimum(-self.open_abscissa, self.abscissa)
        score[~mask] = -np.inf
        return float(self.gains[int(np.argmax(score))])


def gain_sweep(plant: Plant, K: Realization, gains: ArrayLike | None = None,
               direction: ArrayLike | None = None, margin: float = 1e-6) -> SweepResult:
    """Search static environments ``Gbar = k E`` for one that ``K`` destabilizes.

    ``E`` defaults to the ``m x w`` matrix with ones on the diagonal and the
    gains to ``-10, -9.99, ..., 10``.  A gain is admissible when the loop
    without the controller has spectral abscissa below ``-margin``.
    """
    if gains is None:
        gains = np.round(np.linspace(-10.0, 10.0, 2001), 10)
    gains = np.asarray(gains, dtype=float)
    E = np.eye(plant.m, plant.w_dim) if direction is None else np.asarray(direction, dtype=float)
    zero = Realization.zero(plant.q, plant.p)
    open_abscissa = np.empty(len(gains))
    abscissa = np.empty(len(gains))
    for i, k in enumerate(gains):
        env = Realization.gain(k * E)
        open_abscissa[i] = close_loop(plant, env, zero).stability().spectral_abscissa
        abscissa[i] = close_loop(plant, env, K).stability().spectral_abscissa
    return SweepResult(gains, open_abscissa, abscissa, margin)
