"""Closed-loop assembly of plant, environment and controller, and RK4 simulation.

The interconnection carries four perturbation inputs and exposes four
signal outputs::

    v = Gbar (w + d_w) + d_v        u = K (y + d_y) + d_u
    x' = A x + L v + B u,           y = C x,   w = Gamma x

The plant is strictly proper, so the loop is always well-posed.  The state is
ordered ``(x_plant, x_env, x_ctrl)``, inputs ``(d_u, d_y, d_v, d_w)`` and
outputs ``(u, y, v, w)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .coprime import EnvironmentSample
from .errors import DimensionError, SimulationDivergence
from .geometry import Plant
from .statespace import Realization, StabilityVerdict, is_hurwitz

INPUT_CHANNELS = ("d_u", "d_y", "d_v", "d_w")
OUTPUT_CHANNELS = ("u", "y", "v", "w")


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """Full interconnection with its channel and state partitions."""

    realization: Realization
    n_plant: int
    n_env: int
    n_ctrl: int
    dims: dict[str, int]

    def _slices(self, names: tuple[str, ...], sizes: list[int]) -> dict[str, slice]:
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        return {name: slice(offsets[i], offsets[i + 1]) for i, name in enumerate(names)}

    @property
    def input_slices(self) -> dict[str, slice]:
        d = self.dims
        return self._slices(INPUT_CHANNELS, [d["u"], d["y"], d["v"], d["w"]])

    @property
    def output_slices(self) -> dict[str, slice]:
        d = self.dims
        return self._slices(OUTPUT_CHANNELS, [d["u"], d["y"], d["v"], d["w"]])

    @property
    def state_slices(self) -> dict[str, slice]:
        return self._slices(("plant", "env", "ctrl"), [self.n_plant, self.n_env, self.n_ctrl])

    def stability(self) -> StabilityVerdict:
        return is_hurwitz(self.realization)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: NDArray
    states: NDArray
    inputs: NDArray
    outputs: NDArray

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


def close_loop(plant: Plant, env: EnvironmentSample | Realization, K: Realization) -> ClosedLoop:
    """Stack plant, environment ``Gbar: w -> v`` and controller ``K: y -> u``."""
    Gbar = env.Gbar if isinstance(env, EnvironmentSample) else env
    if Gbar.shape != (plant.m, plant.w_dim):
        raise DimensionError(f"environment must map w ({plant.w_dim}) to v ({plant.m}), got {Gbar.shape}")
    if K.shape != (plant.q, plant.p):
        raise DimensionError(f"controller must map y ({plant.p}) to u ({plant.q}), got {K.shape}")
    A, L, B, Gam, C = plant.A, plant.L, plant.B, plant.Gamma, plant.C
    n, ne, nk = plant.n, Gbar.n, K.n
    m, q, p, nw = plant.m, plant.q, plant.p, plant.w_dim

    # static parts of v and u in terms of the stacked state and the perturbations
    v_x = np.hstack([Gbar.D @ Gam, Gbar.C, np.zeros((m, nk))])
    u_x = np.hstack([K.D @ C, np.zeros((q, ne)), K.C])
    v_d = np.hstack([np.zeros((m, q)), np.zeros((m, p)), np.eye(m), Gbar.D])
    u_d = np.hstack([np.eye(q), K.D, np.zeros((q, m)), np.zeros((q, nw))])

    Acl = np.zeros((n + ne + nk, n + ne + nk))
    Acl[:n, :n] = A
    Acl[:n] += L @ v_x + B @ u_x
    Acl[n:n + ne, :n] = Gbar.B @ Gam
    Acl[n:n + ne, n:n + ne] = Gbar.A
    Acl[n + ne:, :n] = K.B @ C
    Acl[n + ne:, n + ne:] = K.A

    Bcl = np.zeros((n + ne + nk, q + p + m + nw))
    Bcl[:n] = L @ v_d + B @ u_d
    Bcl[n:n + ne, q + p + m:] = Gbar.B
    Bcl[n + ne:, q:q + p] = K.B

    y_x = np.hstack([C, np.zeros((p, ne + nk))])
    w_x = np.hstack([Gam, np.zeros((nw, ne + nk))])
    Ccl = np.vstack([u_x, y_x, v_x, w_x])
    Dcl = np.vstack([u_d, np.zeros((p, Bcl.shape[1])), v_d, np.zeros((nw, Bcl.shape[1]))])
    dims = {"u": q, "y": p, "v": m, "w": nw}
    return ClosedLoop(Realization(Acl, Bcl, Ccl, Dcl), n, ne, nk, dims)


InputSpec = Callable[[float], ArrayLike] | ArrayLike | None


def _input_function(inputs: InputSpec, n_inputs: int, times: NDArray) -> Callable[[int, float], NDArray]:
    if inputs is None:
        zero = np.zeros(n_inputs)
        return lambda k, t: zero
    if callable(inputs):
        def evaluate(k: int, t: float) -> NDArray:
            value = np.asarray(inputs(t), dtype=float).reshape(-1)
            if value.shape != (n_inputs,):
                raise DimensionError(f"input function returned shape {value.shape}, expected ({n_inputs},)")
            return value
        return evaluate
    samples = np.asarray(inputs, dtype=float)
    if samples.ndim == 1 and n_inputs == 1:
        samples = samples[:, None]
    if samples.ndim != 2 or samples.shape[1] != n_inputs or samples.shape[0] < len(times) - 1:
        raise DimensionError(
            f"sampled inputs must have shape (>= {len(times) - 1}, {n_inputs}), got {samples.shape}"
        )
    last = samples.shape[0] - 1
    # zero-order hold: the sample at step k is held over [t_k, t_{k+1})
    return lambda k, t: samples[min(k, last)]


def simulate(cl: ClosedLoop | Realization, x0: ArrayLike | None = None, inputs: InputSpec = None,
             dt: float = 1e-3, t_final: float = 1.0) -> Trajectory:
    """Fixed-step classical RK4 for ``x' = A x + B d(t)``.

    ``inputs`` may be ``None`` (zero), a callable of ``t`` evaluated at the
    RK4 stages, or an array of samples held constant between grid points.
    ``t_final`` must be an integer multiple of ``dt``.

    Raises
    ------
    SimulationDivergence
        At the first step whose state is not finite.
    """
    if not dt > 0 or not t_final > 0:
        raise ValueError("dt and t_final must be positive")
    steps = int(round(t_final / dt))
    if steps < 1 or abs(steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final={t_final} is not a multiple of dt={dt}")
    G = cl.realization if isinstance(cl, ClosedLoop) else cl
    A, B, C, D = G.A, G.B, G.C, G.D
    x = np.zeros(G.n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1).copy()
    if x.shape != (G.n,):
        raise DimensionError(f"x0 must have {G.n} entries, got {x.shape[0]}")
    times = dt * np.arange(steps + 1)
    d_of = _input_function(inputs, G.n_inputs, times)
    held = not callable(inputs)

    states = np.empty((steps + 1, G.n))
    ins = np.empty((steps + 1, G.n_inputs))
    states[0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            t = times[k]
            d0 = d_of(k, t)
            if held:
                dm = d1 = d0
            else:
                dm, d1 = d_of(k, t + 0.5 * dt), d_of(k, t + dt)
            k1 = A @ x + B @ d0
            k2 = A @ (x + 0.5 * dt * k1) + B @ dm
            k3 = A @ (x + 0.5 * dt * k2) + B @ dm
            k4 = A @ (x + dt * k3) + B @ d1
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise SimulationDivergence(
                    f"state became non-finite at t={times[k + 1]:.6g}", time=float(times[k + 1])
                )
            ins[k] = d0
            states[k + 1] = x
        ins[steps] = d_of(steps, times[steps])
    outputs = states @ C.T + ins @ D.T
    return Trajectory(times, states, ins, outputs)
