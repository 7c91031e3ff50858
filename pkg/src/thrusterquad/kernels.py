"""Kernel backend selection.

Imports the compiled extension when present, otherwise the pure-NumPy
fallback. Set THRUSTERQUAD_PURE=1 to force the fallback (used by the
benchmark and the backend-agreement tests).
"""

import os

if os.environ.get("THRUSTERQUAD_PURE", "") not in ("", "0"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND

foot_positions = _impl.foot_positions
foot_positions_batch = _impl.foot_positions_batch
foot_velocities = _impl.foot_velocities
foot_velocities_batch = _impl.foot_velocities_batch
dynamics = _impl.dynamics
dynamics_batch = _impl.dynamics_batch
dynamics_jacobians = _impl.dynamics_jacobians
dynamics_jacobians_batch = _impl.dynamics_jacobians_batch
contact_forces = _impl.contact_forces
contact_forces_batch = _impl.contact_forces_batch
rollout = _impl.rollout
qn_update = _impl.qn_update
