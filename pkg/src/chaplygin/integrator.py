"""Adaptive Dormand-Prince 5(4) integration of the (controlled) sleigh.

Integration always happens in the smooth global chart (q, p); the w chart is
evaluated only for the control law and for recording, never integrated.  The
damping-injection gain k / w1^2 makes the closed loop arbitrarily stiff near
the plane theta = 0, which an explicit pair handles by step rejection; that
is adequate because regulated trajectories keep |theta| bounded away from
zero, and a trajectory that does drive the step below ``dt_min`` is reported
as a step underflow with the offending state attached.

Trial stages that land past the singular plane (or overflow) are treated as
failed steps and retried smaller, so a rejected probe across theta = 0 does
not abort an otherwise healthy run.

Recording is dense: accepted steps are interpolated with the pair's own
quartic interpolant onto a fixed grid, so the output sampling is independent
of the adaptive steps.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .controller import ControllerParams, _control_core
from .model import ModelParams, QState
from .transforms import EPS_SING, SingularityError, _w_core, _z_core

__all__ = [
    "EPS_INIT",
    "IntegratorConfig",
    "StepStats",
    "Trajectory",
    "SimulationError",
    "InitialSingularityError",
    "StepUnderflowError",
    "NonFiniteError",
    "simulate",
    "batch_simulate",
]

# Initial headings closer to the singular plane than this are refused:
# they are formally admissible but produce enormous shaped energy and
# correspondingly wild transients, so they are almost always a config error.
EPS_INIT = 1e-3


class SimulationError(RuntimeError):
    """A simulation that could not be carried to its configured end."""

    def __init__(self, message: str, t: float = float("nan"), state=None):
        super().__init__(message)
        self.t = t
        self.state = None if state is None else tuple(state)


class InitialSingularityError(SimulationError):
    """Initial heading within EPS_INIT of the singular plane theta = 0."""


class StepUnderflowError(SimulationError):
    """The error-controlled step fell below dt_min."""


class NonFiniteError(SimulationError):
    """The integrated state diverged to a non-finite value."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Step control and recording parameters.

    stop_tol > 0 ends a run early (and successfully) once
    ||q|| + ||p|| < stop_tol; zero disables early stopping, which is the
    shipped default for fixed-horizon benchmark runs.
    """

    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    dt_init: float = 1e-3
    dt_min: float = 1e-12
    dt_max: float = 0.5
    t_final: float = 100.0
    stop_tol: float = 0.0
    record_interval: float = 0.02

    def __post_init__(self):
        if not (self.rel_tol > 0.0 and self.abs_tol > 0.0):
            raise ValueError("tolerances must be > 0")
        if not (0.0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if not self.t_final > 0.0:
            raise ValueError("t_final must be > 0")
        if not self.record_interval > 0.0:
            raise ValueError("record_interval must be > 0")
        if self.stop_tol < 0.0:
            raise ValueError("stop_tol must be >= 0")


@dataclass
class StepStats:
    n_accepted: int
    n_rejected: int
    n_rhs: int
    status: str  # "completed" | "early_stop"
    t_end: float
    min_abs_w1: float


@dataclass(eq=False)
class Trajectory:
    """Recorded run: one row per recording time, strictly increasing t.

    Columns follow the trajectory CSV schema; ``min_abs_w1`` is the running
    minimum of |w1| = |theta| up to each row.  For uncontrolled runs
    (``ctrl is None``) the w columns are NaN wherever |theta| < EPS_SING,
    u is zero and H_d coincides with H.
    """

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    z: np.ndarray
    w: np.ndarray
    u: np.ndarray
    H: np.ndarray
    H_d: np.ndarray
    Hd_dot: np.ndarray
    min_abs_w1: np.ndarray
    constraint_residual: np.ndarray
    stats: StepStats
    cfg: IntegratorConfig
    model: ModelParams
    ctrl: Optional[ControllerParams]

    def __len__(self) -> int:
        return self.t.shape[0]

    def audit_tolerances(self) -> np.ndarray:
        """Per-step monotonicity allowance 10 (abs_tol + rel_tol H_d(t_i))."""
        return 10.0 * (self.cfg.abs_tol + self.cfg.rel_tol * self.H_d[:-1])


RunResult = Union[Trajectory, SimulationError]


# Dormand-Prince 5(4) tableau. -------------------------------------------------

_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = (9017 / 3168, -355 / 33, 46732 / 5247,
                                49 / 176, -5103 / 18656)
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (71 / 57600, -71 / 16695, 71 / 1920,
                                -17253 / 339200, 22 / 525, -1 / 40)
# Quartic interpolant weights (continuous extension of the pair).
_D1 = -12715105075 / 11282082432
_D3 = 87487479700 / 32700410799
_D4 = -10690763975 / 1880347072
_D5 = 701980252875 / 199316789632
_D6 = -1453857185 / 822651844
_D7 = 69997945 / 29380423

# PI step controller (stabilized for mildly stiff rejection patterns).
_SAFETY = 0.9
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
_FAC_MIN = 0.2   # max shrink per step
_FAC_MAX = 10.0  # max growth per step

_STAGE_ERRORS = (SingularityError, OverflowError, ValueError, ZeroDivisionError)


def _make_rhs(model: ModelParams, ctrl: Optional[ControllerParams]):
    """Fused scalar right-hand side (x, y, th, p1, p2) -> 5-tuple.

    Composed from the same scalar cores the public API uses, so the hot loop
    has no second copy of any formula.
    """
    m1 = float(model.m)
    m2 = float(model.m2)
    aj = float(model.m * model.l / m2)
    dampf = model.damping.scalar_entries_fn()

    if ctrl is None:
        def rhs(x, y, th, p1, p2):
            c = math.cos(th)
            s = math.sin(th)
            v1 = p1 / m1
            v2 = p2 / m2
            d11, d12, d21, d22 = dampf(x, y, th, p1, p2)
            gp = aj * p2
            return (c * v1, s * v1, v2,
                    gp * v2 - (d11 * v1 + d12 * v2),
                    -gp * v1 - (d21 * v1 + d22 * v2))

        return rhs

    l1, l2, l3 = ctrl.gains
    k = ctrl.k
    dh = ctrl.d_hat
    dh11, dh12 = float(dh[0, 0]), float(dh[0, 1])
    dh21, dh22 = float(dh[1, 0]), float(dh[1, 1])
    vel_form = ctrl.form == "velocity"

    def rhs(x, y, th, p1, p2):
        if -EPS_SING < th < EPS_SING:
            raise SingularityError(th, "theta")
        c = math.cos(th)
        s = math.sin(th)
        v1 = p1 / m1
        v2 = p2 / m2
        xd = c * v1
        yd = s * v1
        if vel_form:
            g1 = xd * c + yd * s
            g2 = v2
        else:
            g1 = v1
            g2 = v2
        z2, z3 = _z_core(x, y, c, s)
        w2, w3 = _w_core(th, z2, z3)
        u1, u2 = _control_core(th, w2, w3, g1, g2,
                               l1, l2, l3, k, dh11, dh12, dh21, dh22)
        d11, d12, d21, d22 = dampf(x, y, th, p1, p2)
        gp = aj * p2
        return (xd, yd, v2,
                gp * v2 - (d11 * v1 + d12 * v2) + u1,
                -gp * v1 - (d21 * v1 + d22 * v2) + u2)

    return rhs


def _try_step(rhs, y, k1, h, rel_tol, abs_tol):
    """One trial step from y with slope k1 = f(y).

    Returns (y1, k7, err, dense_ks); raises one of _STAGE_ERRORS if a stage
    cannot be evaluated (caller rejects the step).
    """
    y0, y1_, y2_, y3_, y4_ = y
    f10, f11, f12, f13, f14 = k1

    k2 = rhs(y0 + h * _A21 * f10, y1_ + h * _A21 * f11, y2_ + h * _A21 * f12,
             y3_ + h * _A21 * f13, y4_ + h * _A21 * f14)
    f20, f21, f22, f23, f24 = k2

    k3 = rhs(y0 + h * (_A31 * f10 + _A32 * f20),
             y1_ + h * (_A31 * f11 + _A32 * f21),
             y2_ + h * (_A31 * f12 + _A32 * f22),
             y3_ + h * (_A31 * f13 + _A32 * f23),
             y4_ + h * (_A31 * f14 + _A32 * f24))
    f30, f31, f32, f33, f34 = k3

    k4 = rhs(y0 + h * (_A41 * f10 + _A42 * f20 + _A43 * f30),
             y1_ + h * (_A41 * f11 + _A42 * f21 + _A43 * f31),
             y2_ + h * (_A41 * f12 + _A42 * f22 + _A43 * f32),
             y3_ + h * (_A41 * f13 + _A42 * f23 + _A43 * f33),
             y4_ + h * (_A41 * f14 + _A42 * f24 + _A43 * f34))
    f40, f41, f42, f43, f44 = k4

    k5 = rhs(y0 + h * (_A51 * f10 + _A52 * f20 + _A53 * f30 + _A54 * f40),
             y1_ + h * (_A51 * f11 + _A52 * f21 + _A53 * f31 + _A54 * f41),
             y2_ + h * (_A51 * f12 + _A52 * f22 + _A53 * f32 + _A54 * f42),
             y3_ + h * (_A51 * f13 + _A52 * f23 + _A53 * f33 + _A54 * f43),
             y4_ + h * (_A51 * f14 + _A52 * f24 + _A53 * f34 + _A54 * f44))
    f50, f51, f52, f53, f54 = k5

    k6 = rhs(y0 + h * (_A61 * f10 + _A62 * f20 + _A63 * f30 + _A64 * f40 + _A65 * f50),
             y1_ + h * (_A61 * f11 + _A62 * f21 + _A63 * f31 + _A64 * f41 + _A65 * f51),
             y2_ + h * (_A61 * f12 + _A62 * f22 + _A63 * f32 + _A64 * f42 + _A65 * f52),
             y3_ + h * (_A61 * f13 + _A62 * f23 + _A63 * f33 + _A64 * f43 + _A65 * f53),
             y4_ + h * (_A61 * f14 + _A62 * f24 + _A63 * f34 + _A64 * f44 + _A65 * f54))
    f60, f61, f62, f63, f64 = k6

    n0 = y0 + h * (_B1 * f10 + _B3 * f30 + _B4 * f40 + _B5 * f50 + _B6 * f60)
    n1 = y1_ + h * (_B1 * f11 + _B3 * f31 + _B4 * f41 + _B5 * f51 + _B6 * f61)
    n2 = y2_ + h * (_B1 * f12 + _B3 * f32 + _B4 * f42 + _B5 * f52 + _B6 * f62)
    n3 = y3_ + h * (_B1 * f13 + _B3 * f33 + _B4 * f43 + _B5 * f53 + _B6 * f63)
    n4 = y4_ + h * (_B1 * f14 + _B3 * f34 + _B4 * f44 + _B5 * f54 + _B6 * f64)
    y_new = (n0, n1, n2, n3, n4)

    k7 = rhs(n0, n1, n2, n3, n4)
    f70, f71, f72, f73, f74 = k7

    err = 0.0
    for yi, ni, e in (
        (y0, n0, f10 * _E1 + f30 * _E3 + f40 * _E4 + f50 * _E5 + f60 * _E6 + f70 * _E7),
        (y1_, n1, f11 * _E1 + f31 * _E3 + f41 * _E4 + f51 * _E5 + f61 * _E6 + f71 * _E7),
        (y2_, n2, f12 * _E1 + f32 * _E3 + f42 * _E4 + f52 * _E5 + f62 * _E6 + f72 * _E7),
        (y3_, n3, f13 * _E1 + f33 * _E3 + f43 * _E4 + f53 * _E5 + f63 * _E6 + f73 * _E7),
        (y4_, n4, f14 * _E1 + f34 * _E3 + f44 * _E4 + f54 * _E5 + f64 * _E6 + f74 * _E7),
    ):
        sc = abs_tol + rel_tol * max(abs(yi), abs(ni))
        r = h * e / sc
        err += r * r
    err = math.sqrt(err / 5.0)
    return y_new, k7, err, (k1, k3, k4, k5, k6, k7)


def _dense_coeffs(y, y_new, ks, h):
    """Interpolation coefficients for one accepted step, per component."""
    k1, k3, k4, k5, k6, k7 = ks
    coeffs = []
    for i in range(5):
        r1 = y[i]
        r2 = y_new[i] - y[i]
        r3 = h * k1[i] - r2
        r4 = r2 - h * k7[i] - r3
        r5 = h * (_D1 * k1[i] + _D3 * k3[i] + _D4 * k4[i]
                  + _D5 * k5[i] + _D6 * k6[i] + _D7 * k7[i])
        coeffs.append((r1, r2, r3, r4, r5))
    return coeffs


def _dense_eval(coeffs, theta):
    om = 1.0 - theta
    return tuple(
        r1 + theta * (r2 + om * (r3 + theta * (r4 + om * r5)))
        for (r1, r2, r3, r4, r5) in coeffs
    )


def simulate(initial: QState, model: ModelParams,
             ctrl: Optional[ControllerParams], cfg: IntegratorConfig) -> Trajectory:
    """Integrate the (controlled) sleigh over [0, t_final].

    Raises InitialSingularityError when a controlled run starts with
    |theta(0)| <= EPS_INIT, StepUnderflowError when error control drives the
    step below cfg.dt_min, and NonFiniteError on divergence.
    """
    if not isinstance(initial, QState):
        initial = QState.from_vector(np.asarray(initial, dtype=float))
    if ctrl is not None and abs(initial.theta) <= EPS_INIT:
        raise InitialSingularityError(
            f"|theta(0)| = {abs(initial.theta):.3e} <= {EPS_INIT:g}: "
            "initial heading too close to the singular plane",
            t=0.0, state=tuple(initial.as_vector()))

    rhs = _make_rhs(model, ctrl)
    t_final = cfg.t_final
    dt = cfg.record_interval
    rel_tol, abs_tol = cfg.rel_tol, cfg.abs_tol

    y = tuple(float(v) for v in initial.as_vector())
    t = 0.0
    k1 = rhs(*y)
    n_rhs = 1
    n_acc = 0
    n_rej = 0

    rows_t = [0.0]
    rows_y = [y]
    run_min = abs(y[2])
    rows_min = [run_min]

    rec_idx = 1  # next record grid index; grid time = rec_idx * dt
    status = "completed"
    t_eps = 1e-12

    h = min(cfg.dt_init, t_final)
    facold = 1e-4
    rejected_prev = False

    while t < t_final - t_eps * max(1.0, t_final):
        if h > cfg.dt_max:
            h = cfg.dt_max
        last = False
        if t + h >= t_final:
            h = t_final - t
            last = True

        try:
            y_new, k7, err, ks = _try_step(rhs, y, k1, h, rel_tol, abs_tol)
            n_rhs += 6
            if err != err:  # NaN: treat as an unacceptably large error
                err = float("inf")
        except _STAGE_ERRORS:
            n_rhs += 6  # upper bound; some stages may not have run
            err = float("inf")
            y_new = None

        if err > 1.0:
            n_rej += 1
            if err == float("inf"):
                h_new = h * _FAC_MIN
            else:
                h_new = h / min(1.0 / _FAC_MIN, (err ** _EXPO) / _SAFETY)
            if h_new < cfg.dt_min:
                raise StepUnderflowError(
                    f"step size {h_new:.3e} fell below dt_min = {cfg.dt_min:g} "
                    f"at t = {t:.6g}", t=t, state=y)
            h = h_new
            rejected_prev = True
            continue

        # Accepted.
        n_acc += 1
        t_new = t + h if not last else t_final
        if not all(math.isfinite(v) for v in y_new):
            raise NonFiniteError(
                f"non-finite state at t = {t_new:.6g}", t=t_new, state=y_new)

        # Record grid points inside (t, t_new].
        coeffs = None
        while True:
            t_rec = rec_idx * dt
            if t_rec > t_new + t_eps * max(1.0, t_new) or t_rec > t_final:
                break
            if abs(t_rec - t_new) <= t_eps * max(1.0, t_new):
                y_rec = y_new
            else:
                if coeffs is None:
                    coeffs = _dense_coeffs(y, y_new, ks, h)
                y_rec = _dense_eval(coeffs, (t_rec - t) / h)
            run_min = min(run_min, abs(y_rec[2]))
            rows_t.append(t_rec)
            rows_y.append(y_rec)
            rows_min.append(run_min)
            rec_idx += 1

        run_min = min(run_min, abs(y_new[2]))
        t = t_new
        y = y_new
        k1 = k7  # first-same-as-last

        if cfg.stop_tol > 0.0:
            qn = math.sqrt(y[0] ** 2 + y[1] ** 2 + y[2] ** 2)
            pn = math.sqrt(y[3] ** 2 + y[4] ** 2)
            if qn + pn < cfg.stop_tol:
                status = "early_stop"
                break

        # PI step-size update.
        fac11 = err ** _EXPO
        fac = fac11 / (facold ** _BETA)
        fac = max(1.0 / _FAC_MAX, min(1.0 / _FAC_MIN, fac / _SAFETY))
        h_new = h / fac
        if rejected_prev:
            h_new = min(h_new, h)
            rejected_prev = False
        facold = max(err, 1e-4)
        h = h_new

    # Exact final row (end of horizon or early stop) if not already recorded.
    if t - rows_t[-1] > t_eps * max(1.0, t):
        run_min = min(run_min, abs(y[2]))
        rows_t.append(t)
        rows_y.append(y)
        rows_min.append(run_min)

    stats = StepStats(n_accepted=n_acc, n_rejected=n_rej, n_rhs=n_rhs,
                      status=status, t_end=t, min_abs_w1=run_min)
    return _assemble(np.array(rows_t), np.array(rows_y), np.array(rows_min),
                     stats, cfg, model, ctrl)


def _assemble(t, Y, row_min, stats, cfg, model, ctrl) -> Trajectory:
    """Vectorized diagnostics pass over the recorded rows."""
    q = Y[:, :3]
    p = Y[:, 3:]
    x, yy, th = q[:, 0], q[:, 1], q[:, 2]
    p1, p2 = p[:, 0], p[:, 1]
    c, s = np.cos(th), np.sin(th)
    v1 = p1 / model.m
    v2 = p2 / model.m2

    z2 = x * c + yy * s
    z3 = x * s - yy * c
    z = np.column_stack([th, z2, z3])

    ok = np.abs(th) >= EPS_SING
    with np.errstate(divide="ignore", invalid="ignore"):
        iw = np.where(ok, 1.0 / np.where(ok, th, 1.0), np.nan)
    w3 = 2.0 * z3 * iw * iw
    w2 = z2 * iw - w3
    w = np.column_stack([th, w2, w3])

    H = 0.5 * (p1 * v1 + p2 * v2)
    xd = c * v1
    yd = s * v1
    resid = xd * s - yd * c

    damping = np.empty((len(t), 2, 2))
    for i in range(len(t)):
        damping[i] = model.damping.matrix(q[i], p[i])
    vv = np.column_stack([v1, v2])
    base_rate = -np.einsum("ni,nij,nj->n", vv, damping, vv)

    if ctrl is None:
        u = np.zeros((len(t), 2))
        H_d = H.copy()
        Hd_dot = base_rate
    else:
        l1, l2, l3 = ctrl.gains
        dh = ctrl.d_hat
        if ctrl.form == "velocity":
            g1 = xd * c + yd * s
        else:
            g1 = v1
        g2 = v2
        lw2 = l2 * w2
        q22 = -(3.0 * w2 + w3 + 0.5 * th * th * w3) * iw
        u1 = -lw2 * iw - (dh[0, 0] * g1 + dh[0, 1] * g2)
        u2 = (-(l1 * th + q22 * lw2 + 2.0 * w2 * iw * (l3 * w3))
              - (dh[1, 0] * g1 + (dh[1, 1] + ctrl.k * iw * iw) * g2))
        u = np.column_stack([u1, u2])
        H_d = H + 0.5 * (l1 * th**2 + l2 * w2**2 + l3 * w3**2)
        Hd_dot = (base_rate - (dh[0, 0] * v1**2 + (dh[0, 1] + dh[1, 0]) * v1 * v2
                               + dh[1, 1] * v2**2)
                  - ctrl.k * (iw * v2) ** 2)

    return Trajectory(t=t, q=q, p=p, z=z, w=w, u=u, H=H, H_d=H_d,
                      Hd_dot=Hd_dot, min_abs_w1=row_min,
                      constraint_residual=resid, stats=stats, cfg=cfg,
                      model=model, ctrl=ctrl)


def _run_shielded(args) -> RunResult:
    initial, model, ctrl, cfg = args
    try:
        return simulate(initial, model, ctrl, cfg)
    except SimulationError as err:
        return err


def batch_simulate(initials, model: ModelParams,
                   ctrl: Optional[ControllerParams], cfg: IntegratorConfig,
                   jobs: int = 1) -> list[RunResult]:
    """Run independent simulations for each initial state.

    Per-run failures are returned in place (as SimulationError instances)
    rather than aborting the batch; output order follows input order and is
    identical for serial and parallel execution.
    """
    tasks = [(initial, model, ctrl, cfg) for initial in initials]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_shielded, tasks))
    return [_run_shielded(task) for task in tasks]
