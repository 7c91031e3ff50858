"""Time steppers and trajectory rollout for the closed model + contact system."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, layout
from .contact import REPORT_MU, ContactParams, Terrain, friction_cone_margin
from .model import BodyParams

DEFAULT_DT = 1e-3  # >=10x below the contact spring period for default k1, m


class SimulationAbort(RuntimeError):
    """Raised when a step produces a non-finite state; carries a dump."""

    def __init__(self, step: int, t: float, state: np.ndarray):
        self.step = step
        self.t = t
        self.state = np.array(state)
        super().__init__(
            f"non-finite state after step {step} (t={t:.6g}); "
            f"last finite state: {np.array2string(self.state, precision=6)}"
        )


@dataclass
class Trajectory:
    """Logged rollout: states at step times, applied inputs per step,
    per-foot GRFs and energies at every logged state."""

    times: np.ndarray
    states: np.ndarray          # (n+1, 42)
    inputs: np.ndarray          # (n, 27) as applied (closed-loop GRFs included)
    grf_world: np.ndarray       # (n+1, 4, 3)
    grf_terrain: np.ndarray     # (n+1, 4, 3)
    energies: np.ndarray        # (n+1, 2) kinetic, potential
    events: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        if len(self.inputs) != len(self.states) - 1:
            raise ValueError("inputs length must be states length - 1")

    @property
    def kinetic(self):
        return self.energies[:, 0]

    @property
    def potential(self):
        return self.energies[:, 1]


def _single_step(x, u, dt, params, method):
    u_sched = np.vstack([u, u])
    states, _, _, _, bad = kernels.rollout(
        np.asarray(x, dtype=float), u_sched, dt, method, False,
        *params.kernel_args(), 0.0, *ContactParams().kernel_args())
    if bad >= 0:
        raise SimulationAbort(bad, bad * dt, states[bad])
    return states[1]


def euler_step(x, u, dt, params: BodyParams):
    """x + dt * f(x, u) with the rotation block re-orthonormalized."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    return _single_step(x, u, dt, params, 0)


def rk4_step(x, u, dt, params: BodyParams):
    """Classical 4th-order step (input held constant), rotation re-orthonormalized."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    return _single_step(x, u, dt, params, 1)


def rollout(x0, input_schedule, dt, T, params: BodyParams,
            terrain: Terrain | None = None,
            contact_params: ContactParams | None = None,
            method: str = "euler",
            contact_mode: str = "closed",
            stance_schedule=None,
            cone_mu: float = REPORT_MU) -> Trajectory:
    """Integrate the closed system over [0, T] and log everything.

    input_schedule is a callable t -> flat input (27,) defined on [0, T];
    in closed mode the contact law overrides its GRF slots from the
    current foot state each evaluation. Friction-cone violations and
    unscheduled swing-foot touchdowns are recorded as events, not errors.
    """
    terrain = terrain or Terrain(0.0)
    contact_params = contact_params or ContactParams()
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be an integral number of steps")
    if n < 1:
        raise ValueError("need at least one step")
    times = np.arange(n + 1) * dt
    U_sched = np.empty((n + 1, layout.NU))
    for k, t in enumerate(times):
        U_sched[k] = input_schedule(min(t, T))
    closed = contact_mode == "closed"
    if contact_mode not in ("closed", "open"):
        raise ValueError("contact_mode must be 'closed' or 'open'")

    method_id = {"euler": 0, "rk4": 1}[method]
    states, grf_w, grf_t, energies, bad = kernels.rollout(
        np.asarray(x0, dtype=float), U_sched, dt, method_id, closed,
        *params.kernel_args(), terrain.slope, *contact_params.kernel_args())
    if bad >= 0:
        raise SimulationAbort(bad, times[bad], states[bad])

    inputs = U_sched[:-1].copy()
    if closed:
        inputs[:, layout.UG] = grf_w[:-1].reshape(n, 12)

    events = []
    margins = np.array([[friction_cone_margin(grf_t[k, i], cone_mu) for i in range(4)]
                        for k in range(n + 1)])
    loaded = grf_t[:, :, 2] > 0.0
    viol = loaded & (margins < 0.0)
    for k, i in zip(*np.nonzero(viol)):
        events.append({"type": "cone_violation", "step": int(k), "foot": int(i),
                       "margin": float(margins[k, i])})
    if stance_schedule is not None:
        planned = np.array([stance_schedule(t) for t in times], dtype=bool)
        unplanned = loaded & ~planned
        for k, i in zip(*np.nonzero(unplanned)):
            events.append({"type": "unplanned_touchdown", "step": int(k), "foot": int(i),
                           "normal_force": float(grf_t[k, i, 2])})

    return Trajectory(times, states, inputs, grf_w, grf_t, energies, events)
