"""Flat state/input vector layout shared by every module.

State (dim 42): [q_L, dq_L, r_b, p_b, omega_b, v_b] where q_L stacks
(phi_i, gamma_i, r_i) per leg for legs 0..3, r_b stacks the three columns
of the body rotation matrix, omega_b is body-frame angular velocity and
v_b the world-frame COM velocity.

Input (dim 27): [u_L, u_g, u_T] with u_L the 12 joint accelerations,
u_g the four world-frame foot forces (x, y, z per foot), u_T the
world-frame thruster force at the COM.

The compiled kernels hard-code these offsets; tests cross-check them.
"""

N_LEGS = 4

NQ = 12          # leg joint coordinates
NX = 42          # full state
NU = 27          # full input

Q = slice(0, 12)
DQ = slice(12, 24)
RB = slice(24, 33)
PB = slice(33, 36)
OM = slice(36, 39)
VB = slice(39, 42)

UL = slice(0, 12)
UG = slice(12, 24)
UT = slice(24, 27)


def leg_q(i):
    """Slice of q_L holding (phi, gamma, r) for leg i."""
    return slice(3 * i, 3 * i + 3)


def foot_u(i):
    """Slice of the input vector holding the world GRF of foot i."""
    return slice(12 + 3 * i, 12 + 3 * i + 3)


def rotation_from_state(x):
    """Body rotation matrix from the flat state (columns stacked in r_b)."""
    return x[RB].reshape(3, 3).T


def rotation_to_state(x, R):
    """Write rotation matrix R into the flat state in column order."""
    x[RB] = R.T.reshape(9)
