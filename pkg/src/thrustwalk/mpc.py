"""Box-constrained linear MPC over propeller speeds.

The state is ``x = [theta; omega]`` (Euler angles and body rates).  Thrust is
quadratic in propeller speed, so the model is linearized about nominal speeds
``v0`` and the decision variable is the speed deviation ``dv = v - v0``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .dynamics import ThrusterCommand
from .qp import QpResult, solve_box_qp


@dataclass(frozen=True, eq=False)
class MpcConfig:
    H: int = 10
    dt: float = 0.01
    Q: np.ndarray = field(default_factory=lambda: np.diag([400.0, 200.0, 1.0, 4.0, 2.0, 0.1]))
    R: np.ndarray = field(default_factory=lambda: 1.0 * np.eye(4))
    u_max: float = 1.0
    omega_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v0: np.ndarray = field(default_factory=lambda: np.full(4, 0.3))
    theta0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    # multiplier on the learned residual before it enters the reference;
    # -1 shifts the reference against the predicted drift so it is compensated
    residual_sign: float = -1.0

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("Q", np.asarray(self.Q, dtype=float).reshape(6, 6))
        set_("R", np.asarray(self.R, dtype=float).reshape(4, 4))
        set_("omega_d", np.asarray(self.omega_d, dtype=float).reshape(3))
        set_("v0", np.asarray(self.v0, dtype=float).reshape(4))
        set_("theta0", np.asarray(self.theta0, dtype=float).reshape(3))
        if self.H < 1:
            raise ValueError("horizon must be at least one step")
        if self.dt <= 0 or self.u_max <= 0:
            raise ValueError("dt and u_max must be positive")
        if np.min(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))) < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (self.R + self.R.T))) <= 0:
            raise ValueError("R must be positive definite")
        if np.any(self.v0 < 0) or np.any(self.v0 > self.u_max):
            raise ValueError("operating speeds must lie in [0, u_max]")


def operating_speeds(model, fraction=0.3, floor=0.05):
    """Equal speeds (zero net moment for a symmetric layout) above the floor."""
    return np.full(4, max(fraction, floor) * model.u_max)


@dataclass(frozen=True, eq=False)
class LinearModel:
    A_c: np.ndarray
    B_c: np.ndarray
    A_d: np.ndarray
    B_d: np.ndarray


def linearize(model, cfg):
    A_c = np.zeros((6, 6))
    A_c[0:3, 3:6] = np.eye(3)
    B_c = np.zeros((6, 4))
    for i in range(4):
        B_c[3:6, i] = model.inertia_inv @ np.cross(model.r[i], model.e_hat[i]) * (2.0 * model.c_f * cfg.v0[i])
    return A_c, B_c


def discretize(A_c, B_c, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    return np.eye(A_c.shape[0]) + A_c * dt, B_c * dt


def linear_model(model, cfg):
    A_c, B_c = linearize(model, cfg)
    A_d, B_d = discretize(A_c, B_c, cfg.dt)
    return LinearModel(A_c, B_c, A_d, B_d)


def build_prediction(A_d, B_d, H):
    """Condensed operators with ``x_{1..H} = A_qp x0 + B_qp u_{0..H-1}``."""
    if H < 1:
        raise ValueError("horizon must be at least one step")
    nx, nu = B_d.shape
    A_qp = np.zeros((nx * H, nx))
    B_qp = np.zeros((nx * H, nu * H))
    powers = [np.eye(nx)]
    for _ in range(H):
        powers.append(A_d @ powers[-1])
    for k in range(1, H + 1):
        A_qp[(k - 1) * nx:k * nx] = powers[k]
        for j in range(k):
            B_qp[(k - 1) * nx:k * nx, j * nu:(j + 1) * nu] = powers[k - 1 - j] @ B_d
    return A_qp, B_qp


def build_reference(theta0, omega_d, omega_dot_residual, dt, H):
    """Stacked reference x_r,k = [theta0 + k dt (omega_d + k dt a); omega_d + k dt a], k = 1..H."""
    theta0 = np.asarray(theta0, dtype=float)
    omega_d = np.asarray(omega_d, dtype=float)
    a = np.asarray(omega_dot_residual, dtype=float)
    k = np.arange(1, H + 1)[:, None] * dt
    rate = omega_d + k * a
    x_r = np.hstack([theta0 + k * rate, rate]).ravel()
    return x_r


@dataclass(eq=False)
class MpcProblem:
    A_qp: np.ndarray
    B_qp: np.ndarray
    x0: np.ndarray
    x_r: np.ndarray
    Q_bar: np.ndarray
    R_bar: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def hessian(self):
        return 2.0 * (self.B_qp.T @ self.Q_bar @ self.B_qp + self.R_bar)

    def linear_term(self):
        return 2.0 * self.B_qp.T @ self.Q_bar @ (self.A_qp @ self.x0 - self.x_r)

    def objective(self, u):
        e = self.A_qp @ self.x0 + self.B_qp @ u - self.x_r
        return float(e @ self.Q_bar @ e + u @ self.R_bar @ u)


def build_problem(lin, cfg, x0, x_r):
    A_qp, B_qp = build_prediction(lin.A_d, lin.B_d, cfg.H)
    Q_bar = block_diag(*[cfg.Q] * cfg.H)
    R_bar = block_diag(*[cfg.R] * cfg.H)
    lb = np.tile(-cfg.v0, cfg.H)
    ub = np.tile(cfg.u_max - cfg.v0, cfg.H)
    return MpcProblem(A_qp, B_qp, np.asarray(x0, dtype=float), x_r, Q_bar, R_bar, lb, ub)


def solve_qp(problem, u0=None):
    """Minimize the condensed tracking cost subject to the box; see :mod:`qp`."""
    res = solve_box_qp(problem.hessian(), problem.linear_term(), problem.lb, problem.ub, u0=u0)
    # report the objective as written (with the constant term), not the reduced form
    return res._replace(cost=problem.objective(res.u))


class ThrusterMpc:
    """Caches the LTI prediction matrices and Hessian between ticks."""

    def __init__(self, model, cfg):
        self.model = model
        self.cfg = cfg
        self.lin = linear_model(model, cfg)
        self.template = build_problem(self.lin, cfg, np.zeros(6), np.zeros(6 * cfg.H))
        self.P = self.template.hessian()
        self._P_inv = np.linalg.inv(self.P)
        self._g_op = 2.0 * self.template.B_qp.T @ self.template.Q_bar
        self.last = None
        self.last_command = ThrusterCommand(cfg.v0.copy())

    def problem(self, x0, residual):
        cfg = self.cfg
        x_r = build_reference(cfg.theta0, cfg.omega_d, cfg.residual_sign * np.asarray(residual), cfg.dt, cfg.H)
        p = self.template
        return MpcProblem(p.A_qp, p.B_qp, np.asarray(x0, dtype=float), x_r, p.Q_bar, p.R_bar, p.lb, p.ub)

    def solve(self, x0, residual=np.zeros(3)):
        prob = self.problem(x0, residual)
        g = self._g_op @ (prob.A_qp @ prob.x0 - prob.x_r)
        res = solve_box_qp(self.P, g, prob.lb, prob.ub, u0=-self._P_inv @ g)
        res = res._replace(cost=prob.objective(res.u))
        self.last = res
        return res

    def step(self, state, residual=None):
        """Thruster command for ``state``; ``residual=None`` is the nominal baseline."""
        res = self.solve(state.mpc_state(), np.zeros(3) if residual is None else residual)
        if not res.converged:
            # soft failure: hold the previous command
            return self.last_command
        v = np.clip(self.cfg.v0 + res.u[:4], 0.0, self.cfg.u_max)
        self.last_command = ThrusterCommand(v)
        return self.last_command


def mpc_step(state, crd_out, model, cfg, d=None, mpc=None):
    """One MPC tick; ``crd_out`` of ``None`` gives the nominal-only controller."""
    from .crd import residual_from_outputs

    mpc = ThrusterMpc(model, cfg) if mpc is None else mpc
    residual = None
    if crd_out is not None:
        if d is None:
            raise ValueError("moment arms d are required with a CRD output")
        residual = residual_from_outputs(crd_out, d, model.inertia)
    return mpc.step(state, residual)


__all__ = [
    "LinearModel", "MpcConfig", "MpcProblem", "QpResult", "ThrusterMpc", "build_prediction", "build_problem",
    "build_reference", "discretize", "linear_model", "linearize", "mpc_step", "operating_speeds", "solve_qp",
]
