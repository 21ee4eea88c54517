"""Discontinuous energy-shaping and damping-injection regulation law.

In the w chart the law is

    u(w, v) = -Q_w(w)^T L w - Dhat v - diag(0, k / w1^2) v,    v = grad_p H,

with L = diag(l1, l2, l3) > 0, Dhat symmetric positive definite and k > 0.
The first term shapes the closed-loop energy to

    H_d = 1/2 p^T M^-1 p + 1/2 w^T L w,

the remaining terms inject damping; the singular gain k / w1^2 is what
prevents solutions from reaching the plane w1 = 0 in finite time.  The law
is undefined on that plane, so every evaluation guards |w1|.

Two equivalent evaluations are provided:

* momentum form: v = M^-1 p, computed from the plant mass matrix;
* velocity form: v reconstructed from measured configuration rates as
  (xdot cos th + ydot sin th, thdot), which uses no inertia data at all.

The velocity form is the default; it is also insensitive to the open-loop
damping model, which the law never reads in either form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, QState, gyroscopic_matrix, plant_velocity
from .transforms import (
    EPS_SING,
    SingularityError,
    input_matrix_w,
    q_to_z,
    velocity_to_momentum_gradient,
    w_to_z,
    z_to_q,
    z_to_w,
)

__all__ = [
    "ControllerParams",
    "control",
    "control_from_q",
    "closed_loop_energy",
    "dissipation_rate",
    "closed_loop_rhs_w",
]

_FORMS = ("velocity", "momentum")


@dataclass(frozen=True, eq=False)
class ControllerParams:
    """Gains of the regulation law.

    gains : the diagonal (l1, l2, l3) of L, each > 0
    k     : singular damping gain, > 0
    d_hat : injected damping, symmetric positive definite 2x2
            (a 2-sequence is taken as a diagonal)
    form  : "velocity" (mass-matrix-free, default) or "momentum"
    """

    gains: tuple[float, float, float] = (2.0, 0.5, 0.8)
    k: float = 0.1
    d_hat: np.ndarray = field(default_factory=lambda: np.diag([4.0, 8.0]))
    form: str = "velocity"

    def __post_init__(self):
        gains = tuple(float(g) for g in np.asarray(self.gains, dtype=float).ravel())
        if len(gains) != 3 or not all(g > 0.0 for g in gains):
            raise ValueError("gains must be three positive numbers")
        object.__setattr__(self, "gains", gains)
        if not float(self.k) > 0.0:
            raise ValueError("k must be > 0")
        object.__setattr__(self, "k", float(self.k))
        d = np.asarray(self.d_hat, dtype=float)
        if d.shape == (2,):
            d = np.diag(d)
        if d.shape != (2, 2):
            raise ValueError("d_hat must be 2x2 (or a 2-sequence diagonal)")
        if abs(d[0, 1] - d[1, 0]) > 1e-12 * max(1.0, float(np.abs(d).max())):
            raise ValueError("d_hat must be symmetric")
        if not (d[0, 0] > 0.0 and np.linalg.det(d) > 0.0):
            raise ValueError("d_hat must be positive definite")
        d.setflags(write=False)
        object.__setattr__(self, "d_hat", d)
        if self.form not in _FORMS:
            raise ValueError(f"form must be one of {_FORMS}")


def _control_core(w1, w2, w3, g1, g2, l1, l2, l3, k, dh11, dh12, dh21, dh22):
    """Scalar evaluation of the law; caller guards w1.  Shared with the
    integrator hot loop so there is a single source of truth for the
    formula."""
    iw = 1.0 / w1
    lw2 = l2 * w2
    q22 = -(3.0 * w2 + w3 + 0.5 * w1 * w1 * w3) * iw
    u1 = -lw2 * iw - (dh11 * g1 + dh12 * g2)
    u2 = (-(l1 * w1 + q22 * lw2 + 2.0 * w2 * iw * (l3 * w3))
          - (dh21 * g1 + (dh22 + k * iw * iw) * g2))
    return u1, u2


def control(w, grad_p, params: ControllerParams) -> np.ndarray:
    """Evaluate u = -Q_w^T L w - (Dhat + diag(0, k/w1^2)) grad_p."""
    w1, w2, w3 = (float(v) for v in np.asarray(w, dtype=float))
    if abs(w1) < EPS_SING:
        raise SingularityError(w1, "w1")
    g1, g2 = (float(v) for v in np.asarray(grad_p, dtype=float))
    l1, l2, l3 = params.gains
    d = params.d_hat
    u1, u2 = _control_core(w1, w2, w3, g1, g2, l1, l2, l3, params.k,
                           d[0, 0], d[0, 1], d[1, 0], d[1, 1])
    return np.array([u1, u2])


def control_from_q(state: QState, params: ControllerParams,
                   model: ModelParams | None = None, *,
                   form: str | None = None, velocity=None) -> np.ndarray:
    """Evaluate the law from the smooth global state.

    form "momentum" computes grad_p H = M^-1 p from ``model``.

    form "velocity" reconstructs grad_p H from configuration rates and never
    reads the mass or damping data.  Pass the measured rates as ``velocity``
    (a 3-vector qdot); if omitted they are synthesized from ``model``, which
    then acts as the plant, not as controller knowledge.
    """
    form = form or params.form
    if form not in _FORMS:
        raise ValueError(f"form must be one of {_FORMS}")
    z = q_to_z(state.q)
    w = z_to_w(z)
    if form == "momentum":
        if model is None:
            raise ValueError("momentum form requires the plant model")
        grad = np.array([state.p1 / model.m, state.p2 / model.m2])
    else:
        if velocity is None:
            if model is None:
                raise ValueError("velocity form needs measured rates "
                                 "(or a plant model to synthesize them)")
            velocity = plant_velocity(state, model)
        qdot = np.asarray(velocity, dtype=float)
        # zdot1 = thdot, zdot2 = xdot cos th + ydot sin th - z3 thdot
        c, s = math.cos(state.theta), math.sin(state.theta)
        zdot = np.array([qdot[2], qdot[0] * c + qdot[1] * s - z[2] * qdot[2]])
        grad = velocity_to_momentum_gradient(z, zdot)
    return control(w, grad, params)


def closed_loop_energy(w, p, params: ControllerParams,
                       model: ModelParams) -> float:
    """Shaped energy H_d = p^T M^-1 p / 2 + w^T L w / 2."""
    w = np.asarray(w, dtype=float)
    p = np.asarray(p, dtype=float)
    l1, l2, l3 = params.gains
    kinetic = 0.5 * (p[0] ** 2 / model.m + p[1] ** 2 / model.m2)
    potential = 0.5 * (l1 * w[0] ** 2 + l2 * w[1] ** 2 + l3 * w[2] ** 2)
    return kinetic + potential


def dissipation_rate(w, p, params: ControllerParams,
                     model: ModelParams) -> float:
    """Analytic Hd_dot = -v^T (D + Dhat + diag(0, k/w1^2)) v, v = M^-1 p.

    Non-positive everywhere the law is defined, strictly negative for p != 0.
    """
    w = np.asarray(w, dtype=float)
    p = np.asarray(p, dtype=float)
    w1 = float(w[0])
    if abs(w1) < EPS_SING:
        raise SingularityError(w1, "w1")
    v = np.array([p[0] / model.m, p[1] / model.m2])
    q = z_to_q(w_to_z(w))
    d_total = model.damping.matrix(q, p) + params.d_hat
    rate = -(v @ d_total @ v) - params.k / w1**2 * v[1] ** 2
    return float(rate)


def closed_loop_rhs_w(w, p, params: ControllerParams,
                      model: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Target closed-loop vector field in the w chart,

        wdot = Q_w(w) grad_p H_d
        pdot = -Q_w(w)^T grad_w H_d + (J(p) - D_d) grad_p H_d

    with grad_w H_d = L w, grad_p H_d = M^-1 p and
    D_d = D + Dhat + diag(0, k/w1^2).  This is the matching oracle for the
    open-loop system in feedback with :func:`control`; it is not used for
    simulation.
    """
    w = np.asarray(w, dtype=float)
    p = np.asarray(p, dtype=float)
    w1 = float(w[0])
    if abs(w1) < EPS_SING:
        raise SingularityError(w1, "w1")
    qw = input_matrix_w(w)
    v = np.array([p[0] / model.m, p[1] / model.m2])
    lw = np.array(params.gains) * w
    q = z_to_q(w_to_z(w))
    d_total = model.damping.matrix(q, p) + params.d_hat
    d_total = d_total + np.diag([0.0, params.k / w1**2])
    j = gyroscopic_matrix(p, model)
    wdot = qw @ v
    pdot = -qw.T @ lw + (j - d_total) @ v
    return wdot, pdot
