"""Numerical verification of the closed loop's claimed stability structure.

Each check returns a :class:`VerificationReport` with a worst-case margin and,
on failure, a witness sample.  The checks are sampled or trajectory-based
evidence, not proofs:

* integral inequality used by the non-escape argument (trapezoidal, same
  grid on both sides);
* positive invariance of the region U = {w1 != 0}, observed as
  min |w1(t)| > 0 along recorded runs;
* absence of interior equilibria of the shaped-energy dissipation identity,
  via a least-squares search over the annihilator multiplier;
* matching of the open loop in feedback against the target closed-loop
  port-Hamiltonian field, pushed forward through the chart Jacobians;
* per-run energy audits (monotone shaped energy, analytic vs numeric rate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .controller import (
    ControllerParams,
    closed_loop_rhs_w,
    control_from_q,
)
from .integrator import Trajectory
from .model import ModelParams, QState, open_loop_rhs
from .transforms import jacobian_q_to_z, jacobian_z_to_w, w_to_z, z_to_q

__all__ = [
    "VerificationReport",
    "ResidualSystem",
    "ConvergenceMetrics",
    "finite_difference_jacobian",
    "finite_difference_gradient",
    "check_schwarz",
    "schwarz_sweep",
    "check_invariance_of_U",
    "equilibrium_residual",
    "equilibrium_residual_search",
    "check_matching",
    "check_dissipation",
    "check_rate_agreement",
    "convergence_metrics",
]

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


@dataclass
class VerificationReport:
    """Outcome of one numerical check.

    margin is oriented so that larger is safer; the pass/fail cut sits at the
    check's tolerance, recorded in details.  A failing report always carries
    the witness at which the worst margin was attained.
    """

    name: str
    passed: bool
    margin: float
    witness: Optional[dict] = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.passed and self.witness is None:
            raise ValueError("a failing report must carry a witness")

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": bool(self.passed),
            "margin": float(self.margin),
            "witness": _jsonable(self.witness),
            "details": _jsonable(self.details),
        }


@dataclass
class ResidualSystem:
    """Least-squares residual of the interior-equilibrium condition at w.

    The condition L w = (d(w->z)/dw)^T [-z2, 0, 1]^T a, with scalar a free,
    reduces to L w = a (-w1 w2, 0, w1^2 / 2); ``multiplier`` is the a that
    minimizes the residual norm.
    """

    w: np.ndarray
    residual: np.ndarray
    multiplier: float

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))


@dataclass
class ConvergenceMetrics:
    """Per-run regulation summary used by the batch driver."""

    initial_q_norm: float
    final_q_norm: float
    decay_ratio: float
    initial_H_d: float
    final_H_d: float
    energy_ratio: float
    H_d_monotone: bool
    max_audit_violation: float
    sup_wp_norm: float
    min_abs_w1: float
    status: str

    def as_dict(self) -> dict:
        return {k: _jsonable(v) for k, v in self.__dict__.items()}


# Finite-difference oracles. ----------------------------------------------------

def finite_difference_jacobian(f: Callable[[np.ndarray], np.ndarray],
                               x, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian with per-component step
    h_j = rel_step * max(1, |x_j|)."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (np.asarray(f(xp), dtype=float)
                     - np.asarray(f(xm), dtype=float)) / (2.0 * h)
    return jac


def finite_difference_gradient(f: Callable[[np.ndarray], float],
                               x, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    return finite_difference_jacobian(lambda v: np.array([f(v)]), x,
                                      rel_step)[0]


# Integral inequality. ----------------------------------------------------------

def check_schwarz(x, f, tol: float = 1e-12) -> VerificationReport:
    """Check -(integral f)^2 / (x2 - x1) >= -(integral f^2) on one grid.

    Both sides use the trapezoidal rule on the same grid, so the inequality
    is a weighted Cauchy-Schwarz statement and can only fail by roundoff;
    tol bounds the accepted roundoff, relative to the right-hand side scale.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    if x.ndim != 1 or x.size < 2 or np.any(np.diff(x) <= 0.0):
        raise ValueError("need a strictly increasing grid with >= 2 points")
    if f.shape != x.shape:
        raise ValueError("f must be sampled on the grid")
    span = x[-1] - x[0]
    lhs = -(_trapezoid(f, x) ** 2) / span
    rhs = -_trapezoid(f * f, x)
    scale = max(1.0, abs(rhs))
    margin = (lhs - rhs) / scale
    passed = margin >= -tol
    witness = None if passed else {"x": x, "f": f, "lhs": lhs, "rhs": rhs}
    return VerificationReport(
        name="schwarz_integral_inequality", passed=passed, margin=float(margin),
        witness=witness, details={"lhs": float(lhs), "rhs": float(rhs),
                                  "tol": tol})


def schwarz_sweep(n_functions: int = 1000, seed: int = 0,
                  tol: float = 1e-12) -> VerificationReport:
    """Run :func:`check_schwarz` on randomized piecewise-linear samples.

    Every tenth function is constant to exercise the equality case.
    """
    rng = np.random.default_rng(seed)
    worst = math.inf
    witness = None
    for i in range(n_functions):
        n_pts = int(rng.integers(2, 64))
        start = rng.uniform(-5.0, 5.0)
        x = start + np.concatenate(
            ([0.0], np.cumsum(rng.uniform(0.01, 1.0, n_pts - 1))))
        if i % 10 == 0:
            f = np.full(n_pts, rng.uniform(-3.0, 3.0))
        else:
            f = rng.uniform(-3.0, 3.0, n_pts)
        rep = check_schwarz(x, f, tol=tol)
        if rep.margin < worst:
            worst = rep.margin
            witness = {"index": i, "x": x, "f": f}
    passed = worst >= -tol
    return VerificationReport(
        name="schwarz_sweep", passed=passed, margin=float(worst),
        witness=None if passed else witness,
        details={"n_functions": n_functions, "seed": seed, "tol": tol})


# Invariance of U. ---------------------------------------------------------------

def check_invariance_of_U(traj: Trajectory) -> VerificationReport:
    """Positive invariance of {w1 != 0} observed along one recorded run."""
    w1 = traj.w[:, 0]
    idx = int(np.argmin(np.abs(w1)))
    min_w1 = float(abs(w1[idx]))
    passed = min_w1 > 0.0
    witness = None if passed else {"t": float(traj.t[idx]), "index": idx}
    return VerificationReport(
        name="invariance_of_U", passed=passed, margin=min_w1, witness=witness,
        details={"t_at_min": float(traj.t[idx]),
                 "status": traj.stats.status})


# Interior equilibria of the dissipation identity. -------------------------------

def _residual_direction(w1, w2):
    """Direction (d(w->z)/dw)^T [-z2, 0, 1]^T = (-w1 w2, 0, w1^2 / 2)."""
    return np.stack([-w1 * w2, np.zeros_like(w1), 0.5 * w1 * w1], axis=-1)


def equilibrium_residual(w, gains) -> ResidualSystem:
    """Least-squares residual of the interior-equilibrium condition at w."""
    w = np.asarray(w, dtype=float)
    lw = np.asarray(gains, dtype=float) * w
    v = _residual_direction(w[0], w[1])
    vv = float(v @ v)
    a = float(v @ lw) / vv if vv > 0.0 else 0.0
    return ResidualSystem(w=w, residual=lw - a * v, multiplier=a)


def equilibrium_residual_search(gains, n_samples: int = 100_000,
                                seed: int = 0, w1_min: float = 0.01,
                                box: float = 5.0,
                                tol: float = 1e-6) -> VerificationReport:
    """Search {|w1| > w1_min} for near-solutions of the equilibrium condition.

    Passes when no sampled residual norm falls below tol, i.e. no interior
    point masquerades as a rest point of the shaped energy.
    """
    rng = np.random.default_rng(seed)
    sign = np.where(rng.random(n_samples) < 0.5, -1.0, 1.0)
    w1 = sign * rng.uniform(w1_min, box, n_samples)
    w2 = rng.uniform(-box, box, n_samples)
    w3 = rng.uniform(-box, box, n_samples)
    g = np.asarray(gains, dtype=float)

    lw = np.stack([g[0] * w1, g[1] * w2, g[2] * w3], axis=-1)
    v = _residual_direction(w1, w2)
    vv = np.einsum("ni,ni->n", v, v)
    a = np.einsum("ni,ni->n", v, lw) / vv
    res = lw - a[:, None] * v
    norms = np.linalg.norm(res, axis=1)

    idx = int(np.argmin(norms))
    worst = float(norms[idx])
    passed = worst > tol
    witness = None if passed else {
        "w": np.array([w1[idx], w2[idx], w3[idx]]),
        "residual_norm": worst, "multiplier": float(a[idx])}
    return VerificationReport(
        name="equilibrium_residual_search", passed=passed, margin=worst,
        witness=witness,
        details={"n_samples": n_samples, "seed": seed, "w1_min": w1_min,
                 "box": box, "tol": tol,
                 "witness_w": _jsonable(np.array([w1[idx], w2[idx], w3[idx]]))})


# Matching oracle. ----------------------------------------------------------------

def check_matching(model: ModelParams, ctrl: ControllerParams,
                   n_samples: int = 1000, seed: int = 0,
                   w1_min: float = 0.01, tol: float = 1e-9,
                   ctrl_closed_loop: Optional[ControllerParams] = None) -> VerificationReport:
    """Compare open loop + feedback, pushed into the w chart, against the
    target closed-loop port-Hamiltonian field.

    The open-loop side integrates nothing: it evaluates the (q, p) field
    under the feedback law and pushes the configuration rate forward through
    the analytic chart Jacobians.  ``ctrl_closed_loop`` lets a test feed a
    deliberately mismatched target to confirm the check's sensitivity.
    """
    rng = np.random.default_rng(seed)
    target = ctrl_closed_loop if ctrl_closed_loop is not None else ctrl
    worst = 0.0
    witness = None
    for _ in range(n_samples):
        w1 = (1.0 if rng.random() < 0.5 else -1.0) * rng.uniform(w1_min, 2.5)
        w = np.array([w1, rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)])
        p = rng.uniform(-2.0, 2.0, 2)
        z = w_to_z(w)
        q = z_to_q(z)
        state = QState(q[0], q[1], q[2], p[0], p[1])

        u = control_from_q(state, ctrl, model, form="momentum")
        ydot = open_loop_rhs(state, u, model)
        zdot = jacobian_q_to_z(q) @ ydot[:3]
        wdot = jacobian_z_to_w(z) @ zdot

        wdot_cl, pdot_cl = closed_loop_rhs_w(w, p, target, model)
        ref = max(1.0, float(np.abs(wdot_cl).max()), float(np.abs(pdot_cl).max()))
        dev = max(float(np.abs(wdot - wdot_cl).max()),
                  float(np.abs(ydot[3:] - pdot_cl).max())) / ref
        if dev > worst:
            worst = dev
            witness = {"w": w, "p": p, "deviation": dev}
    passed = worst < tol
    return VerificationReport(
        name="closed_loop_matching", passed=passed, margin=float(worst),
        witness=None if passed else witness,
        details={"n_samples": n_samples, "seed": seed, "tol": tol,
                 "damping": type(model.damping).__name__})


# Trajectory energy audits. -------------------------------------------------------

def check_dissipation(traj: Trajectory) -> VerificationReport:
    """Monotone non-increase of H_d between recorded rows, within the
    integrator's audit tolerance 10 (abs_tol + rel_tol H_d)."""
    diffs = np.diff(traj.H_d)
    tols = traj.audit_tolerances()
    violation = diffs - tols
    idx = int(np.argmax(violation))
    worst = float(violation[idx])
    passed = worst <= 0.0
    witness = None if passed else {"t": float(traj.t[idx + 1]),
                                   "delta_H_d": float(diffs[idx])}
    return VerificationReport(
        name="shaped_energy_dissipation", passed=passed, margin=-worst,
        witness=witness,
        details={"worst_increase": float(diffs.max()),
                 "n_rows": len(traj)})


def check_rate_agreement(traj: Trajectory, rel_tol: float = 0.05,
                         abs_tol: float = 1e-6) -> VerificationReport:
    """Trapezoidal integral of the analytic Hd_dot vs the recorded change in
    H_d over each recording interval.

    Applies to segments the grid resolves; intervals where the analytic rate
    itself swings by more than its own magnitude are skipped (the quadrature
    is meaningless there, not the dynamics).
    """
    dt = np.diff(traj.t)
    d_hd = np.diff(traj.H_d)
    r0, r1 = traj.Hd_dot[:-1], traj.Hd_dot[1:]
    trap = 0.5 * (r0 + r1) * dt
    smooth = np.abs(r1 - r0) <= np.maximum(np.abs(r0), np.abs(r1)) + 1e-12
    err = np.abs(trap - d_hd)
    tol = np.maximum(abs_tol, rel_tol * np.abs(d_hd))
    margin = tol - err
    margin_s = np.where(smooth, margin, np.inf)
    idx = int(np.argmin(margin_s))
    worst = float(margin_s[idx]) if np.isfinite(margin_s[idx]) else float("inf")
    passed = worst >= 0.0
    witness = None if passed else {
        "t": float(traj.t[idx]), "delta_H_d": float(d_hd[idx]),
        "trapezoid": float(trap[idx])}
    return VerificationReport(
        name="energy_rate_agreement", passed=passed, margin=worst,
        witness=witness,
        details={"n_segments": int(len(dt)),
                 "n_smooth": int(np.count_nonzero(smooth)),
                 "rel_tol": rel_tol, "abs_tol": abs_tol})


def convergence_metrics(traj: Trajectory) -> ConvergenceMetrics:
    """Regulation summary: decay of ||q||, decay of H_d, boundedness of
    (w, p), monotonicity audit."""
    q0n = float(np.linalg.norm(traj.q[0]))
    qfn = float(np.linalg.norm(traj.q[-1]))
    diffs = np.diff(traj.H_d)
    tols = traj.audit_tolerances()
    max_violation = float((diffs - tols).max()) if diffs.size else 0.0

    wp = np.concatenate([traj.w, traj.p], axis=1)
    finite = np.isfinite(wp)
    sup_wp = float(np.sqrt(np.where(finite, wp, 0.0) ** 2 @ np.ones(5)).max())

    return ConvergenceMetrics(
        initial_q_norm=q0n,
        final_q_norm=qfn,
        decay_ratio=qfn / q0n if q0n > 0.0 else (0.0 if qfn == 0.0 else math.inf),
        initial_H_d=float(traj.H_d[0]),
        final_H_d=float(traj.H_d[-1]),
        energy_ratio=float(traj.H_d[-1] / traj.H_d[0]) if traj.H_d[0] > 0.0 else 0.0,
        H_d_monotone=max_violation <= 0.0,
        max_audit_violation=max_violation,
        sup_wp_norm=sup_wp,
        min_abs_w1=float(traj.stats.min_abs_w1),
        status=traj.stats.status,
    )
