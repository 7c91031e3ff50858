"""Reduced-order thruster-assisted quadruped: dynamics, compliant ground
contact, forward simulation and direct-collocation gait planning on
inclines up to 45 degrees."""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
