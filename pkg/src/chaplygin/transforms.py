"""Coordinate transformations q -> z -> w for the Chaplygin sleigh.

The configuration q = (x, y, theta) is first rotated into the body-aligned
chart

    z1 = theta
    z2 = x cos(theta) + y sin(theta)
    z3 = x sin(theta) - y cos(theta)

and then mapped into the chart in which the regulation law is a quadratic
potential,

    w1 = z1
    w2 = z2 / z1 - 2 z3 / z1^2
    w3 = 2 z3 / z1^2.

The second map is undefined on the plane z1 = 0.  Its inverse

    z1 = w1,   z2 = w1 (w2 + w3),   z3 = w1^2 w3 / 2

is smooth everywhere and collapses the entire plane {w1 = 0} onto z = 0,
which is what makes regulating w1 alone sufficient to drive q to the origin.

All w-chart evaluations guard |w1| (equivalently |theta|) against
``EPS_SING``: exact closed-loop solutions never reach w1 = 0, but a
floating-point state may land arbitrarily close, and failing loudly beats
returning overflowed garbage.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "EPS_SING",
    "SingularityError",
    "q_to_z",
    "z_to_q",
    "z_to_w",
    "w_to_z",
    "input_matrix_z",
    "annihilator_z",
    "input_matrix_w",
    "velocity_to_momentum_gradient",
    "jacobian_q_to_z",
    "jacobian_z_to_w",
    "jacobian_w_to_z",
]

# Absolute guard on |z1| and |w1| below which w-chart quantities refuse to
# evaluate.  Kept far below any heading reachable by a regulated run, but
# far above the underflow regime of 1/w1^2.
EPS_SING = 1e-9


class SingularityError(ValueError):
    """Raised when a w-chart quantity is evaluated too close to w1 = 0."""

    def __init__(self, value: float, what: str = "w1"):
        self.value = float(value)
        self.what = what
        super().__init__(
            f"{what} = {value!r} is within {EPS_SING:g} of the singular plane"
        )


def _guard(value: float, what: str) -> float:
    value = float(value)
    if abs(value) < EPS_SING:
        raise SingularityError(value, what)
    return value


# Scalar cores shared with the integrator hot loop. ---------------------------

def _z_core(x: float, y: float, c: float, s: float) -> tuple[float, float]:
    """(z2, z3) given cos(theta), sin(theta)."""
    return x * c + y * s, x * s - y * c


def _w_core(z1: float, z2: float, z3: float) -> tuple[float, float]:
    """(w2, w3) for z1 != 0 (caller guards)."""
    iz = 1.0 / z1
    w3 = 2.0 * z3 * iz * iz
    return z2 * iz - w3, w3


# Public array API. -----------------------------------------------------------

def q_to_z(q) -> np.ndarray:
    """Map configuration (x, y, theta) to the body-aligned chart z."""
    x, y, th = (float(v) for v in np.asarray(q, dtype=float))
    c, s = math.cos(th), math.sin(th)
    z2, z3 = _z_core(x, y, c, s)
    return np.array([th, z2, z3])


def z_to_q(z) -> np.ndarray:
    """Invert :func:`q_to_z`.  The rotation block is orthogonal, so

        x = z2 cos(z1) + z3 sin(z1),  y = z2 sin(z1) - z3 cos(z1),  theta = z1.
    """
    z1, z2, z3 = (float(v) for v in np.asarray(z, dtype=float))
    c, s = math.cos(z1), math.sin(z1)
    return np.array([z2 * c + z3 * s, z2 * s - z3 * c, z1])


def z_to_w(z) -> np.ndarray:
    """Map z to the regulation chart w.  Raises SingularityError at z1 ~ 0."""
    z1, z2, z3 = (float(v) for v in np.asarray(z, dtype=float))
    _guard(z1, "z1")
    w2, w3 = _w_core(z1, z2, z3)
    return np.array([z1, w2, w3])


def w_to_z(w) -> np.ndarray:
    """Smooth inverse of :func:`z_to_w`; maps the whole plane w1 = 0 to z = 0."""
    w1, w2, w3 = (float(v) for v in np.asarray(w, dtype=float))
    return np.array([w1, w1 * (w2 + w3), 0.5 * w1 * w1 * w3])


def input_matrix_z(z) -> np.ndarray:
    """Input matrix of the z-chart dynamics, (dz/dq) Q(q) at q = z_to_q(z):

        [[0, 1], [1, -z3], [0, z2]].
    """
    _, z2, z3 = (float(v) for v in np.asarray(z, dtype=float))
    return np.array([[0.0, 1.0], [1.0, -z3], [0.0, z2]])


def annihilator_z(z) -> np.ndarray:
    """Full-rank left annihilator of :func:`input_matrix_z`: [-z2, 0, 1]."""
    _, z2, _ = (float(v) for v in np.asarray(z, dtype=float))
    return np.array([-z2, 0.0, 1.0])


def input_matrix_w(w) -> np.ndarray:
    """Input matrix of the w-chart dynamics, (dw/dz) Q_z(z) at z = w_to_z(w):

        [[0,    1                            ],
         [1/w1, -(3 w2 + w3 + w1^2 w3 / 2)/w1],
         [0,    2 w2 / w1                    ]].

    This is the exact chain-rule product; it matches finite-difference
    Jacobians of the composed maps (see the oracle tests).
    """
    w1, w2, w3 = (float(v) for v in np.asarray(w, dtype=float))
    _guard(w1, "w1")
    iw = 1.0 / w1
    return np.array([
        [0.0, 1.0],
        [iw, -(3.0 * w2 + w3 + 0.5 * w1 * w1 * w3) * iw],
        [0.0, 2.0 * w2 * iw],
    ])


def velocity_to_momentum_gradient(z, z_dot) -> np.ndarray:
    """Reconstruct grad_p H = M^-1 p from configuration rates alone:

        grad = [[z3, 1], [1, 0]] (zdot1, zdot2).

    Only the first two components of ``z_dot`` are used.  No mass data enters,
    which is what makes the velocity form of the control law robust to the
    inertia parameters.
    """
    _, _, z3 = (float(v) for v in np.asarray(z, dtype=float))
    zd = np.asarray(z_dot, dtype=float)
    zd1, zd2 = float(zd[0]), float(zd[1])
    return np.array([z3 * zd1 + zd2, zd1])


# Analytic Jacobians (used by the matching oracle and diagnostics). -----------

def jacobian_q_to_z(q) -> np.ndarray:
    """d(q_to_z)/dq, a 3x3 matrix."""
    x, y, th = (float(v) for v in np.asarray(q, dtype=float))
    c, s = math.cos(th), math.sin(th)
    z2, z3 = _z_core(x, y, c, s)
    return np.array([
        [0.0, 0.0, 1.0],
        [c, s, -z3],
        [s, -c, z2],
    ])


def jacobian_z_to_w(z) -> np.ndarray:
    """d(z_to_w)/dz, a 3x3 matrix.  Raises SingularityError at z1 ~ 0."""
    z1, z2, z3 = (float(v) for v in np.asarray(z, dtype=float))
    _guard(z1, "z1")
    iz = 1.0 / z1
    iz2 = iz * iz
    iz3 = iz2 * iz
    return np.array([
        [1.0, 0.0, 0.0],
        [-z2 * iz2 + 4.0 * z3 * iz3, iz, -2.0 * iz2],
        [-4.0 * z3 * iz3, 0.0, 2.0 * iz2],
    ])


def jacobian_w_to_z(w) -> np.ndarray:
    """d(w_to_z)/dw, a 3x3 matrix, smooth everywhere."""
    w1, w2, w3 = (float(v) for v in np.asarray(w, dtype=float))
    return np.array([
        [1.0, 0.0, 0.0],
        [w2 + w3, w1, w1],
        [w1 * w3, 0.0, 0.5 * w1 * w1],
    ])
