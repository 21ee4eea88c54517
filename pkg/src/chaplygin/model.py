"""Open-loop Chaplygin sleigh in reduced port-Hamiltonian form.

State is (q, p) with configuration q = (x, y, theta) and reduced momentum
p = (p1, p2).  The dynamics are

    qdot = Q(q) M^-1 p
    pdot = (J(p) - D(q, p)) M^-1 p + u
    H(p) = 1/2 p^T M^-1 p

with

    Q(q) = [[cos th, 0], [sin th, 0], [0, 1]]
    J(p) = [[0, a p2], [-a p2, 0]],   a = m l / (J + m l^2)
    M    = diag(m, J + m l^2).

The Hamiltonian carries no configuration dependence, so qdot depends on p
only.  The structure of Q(q) encodes the blade's no-slip condition: every
solution satisfies xdot sin(th) - ydot cos(th) = 0 identically, which is
exposed here as a diagnostic residual.  Setting l = 0 gives the knife-edge
system.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DampingModel",
    "ZeroDamping",
    "ConstantDamping",
    "CoulombApproxDamping",
    "ModelParams",
    "QState",
    "mass_matrix",
    "input_matrix_q",
    "gyroscopic_matrix",
    "open_loop_rhs",
    "passive_output",
    "hamiltonian",
    "plant_velocity",
    "constraint_residual",
]


class DampingModel(ABC):
    """Velocity-level damping D(q, p), symmetric positive semidefinite.

    The interface admits configuration dependence; the shipped models depend
    on p only, matching the friction laws they approximate.
    """

    @abstractmethod
    def matrix(self, q, p) -> np.ndarray:
        """Evaluate the 2x2 damping matrix at (q, p)."""

    def scalar_entries_fn(self):
        """Return ``fn(x, y, th, p1, p2) -> (d11, d12, d21, d22)``.

        Generic fallback through :meth:`matrix`; subclasses override with
        allocation-free scalar paths for the integrator hot loop.
        """
        matrix = self.matrix

        def entries(x, y, th, p1, p2):
            d = matrix(np.array([x, y, th]), np.array([p1, p2]))
            return float(d[0, 0]), float(d[0, 1]), float(d[1, 0]), float(d[1, 1])

        return entries


@dataclass(frozen=True)
class ZeroDamping(DampingModel):
    """No open-loop damping."""

    def matrix(self, q, p) -> np.ndarray:
        return np.zeros((2, 2))

    def scalar_entries_fn(self):
        return lambda x, y, th, p1, p2: (0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ConstantDamping(DampingModel):
    """Constant diagonal damping diag(d1, d2), d1, d2 >= 0."""

    d1: float
    d2: float

    def __post_init__(self):
        if not (self.d1 >= 0.0 and self.d2 >= 0.0):
            raise ValueError("constant damping entries must be >= 0")

    def matrix(self, q, p) -> np.ndarray:
        return np.diag([self.d1, self.d2])

    def scalar_entries_fn(self):
        d1, d2 = float(self.d1), float(self.d2)
        return lambda x, y, th, p1, p2: (d1, 0.0, 0.0, d2)


@dataclass(frozen=True)
class CoulombApproxDamping(DampingModel):
    """Smooth Coulomb-friction approximation diag(1/sqrt(eps + p_i^2))."""

    epsilon: float = 0.1

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be > 0")

    def matrix(self, q, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.diag(1.0 / np.sqrt(self.epsilon + p**2))

    def scalar_entries_fn(self):
        eps = float(self.epsilon)

        def entries(x, y, th, p1, p2):
            return (1.0 / math.sqrt(eps + p1 * p1), 0.0,
                    0.0, 1.0 / math.sqrt(eps + p2 * p2))

        return entries


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the sleigh.

    m : mass (kg), > 0
    J : rotational inertia about the center of mass (kg m^2), >= 0
    l : offset of the center of mass from the contact point (m), >= 0
    damping : open-loop damping model

    The reduced mass matrix diag(m, J + m l^2) must be positive definite.
    l = 0 reduces the model to the knife-edge system.
    """

    m: float
    J: float
    l: float = 0.0
    damping: DampingModel = ZeroDamping()

    def __post_init__(self):
        if not self.m > 0.0:
            raise ValueError("m must be > 0")
        if not self.J >= 0.0:
            raise ValueError("J must be >= 0")
        if not self.l >= 0.0:
            raise ValueError("l must be >= 0")
        if not self.J + self.m * self.l**2 > 0.0:
            raise ValueError("J + m*l^2 must be > 0")
        if not isinstance(self.damping, DampingModel):
            raise TypeError("damping must be a DampingModel")

    @property
    def m2(self) -> float:
        """Second mass-matrix entry J + m l^2."""
        return self.J + self.m * self.l**2


@dataclass(frozen=True)
class QState:
    """Smooth global state (x, y, theta, p1, p2).  All components finite."""

    x: float
    y: float
    theta: float
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "theta", "p1", "p2"):
            if not math.isfinite(float(getattr(self, name))):
                raise ValueError(f"QState.{name} must be finite")

    @property
    def q(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @property
    def p(self) -> np.ndarray:
        return np.array([self.p1, self.p2])

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.p1, self.p2])

    @classmethod
    def from_vector(cls, vec) -> "QState":
        x, y, th, p1, p2 = (float(v) for v in np.asarray(vec, dtype=float))
        return cls(x, y, th, p1, p2)


def mass_matrix(params: ModelParams) -> np.ndarray:
    """Reduced mass matrix diag(m, J + m l^2)."""
    return np.diag([params.m, params.m2])


def input_matrix_q(q) -> np.ndarray:
    """Kinematic input matrix Q(q) = [[cos th, 0], [sin th, 0], [0, 1]]."""
    th = float(np.asarray(q, dtype=float)[2])
    return np.array([[math.cos(th), 0.0], [math.sin(th), 0.0], [0.0, 1.0]])


def gyroscopic_matrix(p, params: ModelParams) -> np.ndarray:
    """Skew momentum coupling J(p) = [[0, a p2], [-a p2, 0]], a = m l / m2."""
    p2 = float(np.asarray(p, dtype=float)[1])
    a = params.m * params.l / params.m2
    return np.array([[0.0, a * p2], [-a * p2, 0.0]])


def passive_output(state: QState, params: ModelParams) -> np.ndarray:
    """Passive output y = grad_p H = M^-1 p."""
    return np.array([state.p1 / params.m, state.p2 / params.m2])


def hamiltonian(state: QState, params: ModelParams) -> float:
    """Kinetic energy H = p^T M^-1 p / 2."""
    return 0.5 * (state.p1**2 / params.m + state.p2**2 / params.m2)


def plant_velocity(state: QState, params: ModelParams) -> np.ndarray:
    """Configuration rates qdot = Q(q) M^-1 p of the physical plant."""
    v1 = state.p1 / params.m
    c, s = math.cos(state.theta), math.sin(state.theta)
    return np.array([c * v1, s * v1, state.p2 / params.m2])


def open_loop_rhs(state: QState, u, params: ModelParams) -> np.ndarray:
    """Time derivative (qdot, pdot) of the open-loop system under input u.

    Returns a 5-vector ordered like :meth:`QState.as_vector`.  Non-finite
    inputs are rejected.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (2,) or not np.all(np.isfinite(u)):
        raise ValueError("u must be a finite 2-vector")
    v1 = state.p1 / params.m
    v2 = state.p2 / params.m2
    c, s = math.cos(state.theta), math.sin(state.theta)
    d = params.damping.matrix(state.q, state.p)
    a = params.m * params.l / params.m2
    gp = a * state.p2
    p1dot = gp * v2 - (d[0, 0] * v1 + d[0, 1] * v2) + u[0]
    p2dot = -gp * v1 - (d[1, 0] * v1 + d[1, 1] * v2) + u[1]
    return np.array([c * v1, s * v1, v2, p1dot, p2dot])


def constraint_residual(state: QState, params: ModelParams) -> float:
    """No-slip residual xdot sin(th) - ydot cos(th); zero for the reduced model."""
    xdot, ydot, _ = plant_velocity(state, params)
    return xdot * math.sin(state.theta) - ydot * math.cos(state.theta)
