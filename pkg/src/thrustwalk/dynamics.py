"""Floating-base plant: thrust model, nominal angular dynamics, compliant
ground contact and the semi-implicit Euler integrator."""

from dataclasses import dataclass, field

import numpy as np

from .kinematics import chain_fk, chain_jacobian, knee_position
from .rotation import quat_from_rotvec, quat_mul, quat_normalize, quat_to_euler, quat_to_matrix, rotvec_matrix

ROT_ITERS = 8  # fixed-point iterations for the implicit rotation increment


class SimulationDiverged(RuntimeError):
    def __init__(self, step_index, t=None, reason="non-finite state"):
        msg = f"simulation diverged at step {step_index}: {reason}"
        super().__init__(msg)
        self.step_index = step_index
        self.t = t
        self.reason = reason


@dataclass(frozen=True, eq=False)
class BodyState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def euler(self):
        return quat_to_euler(self.orientation)

    @property
    def rotation(self):
        return quat_to_matrix(self.orientation)

    def mpc_state(self):
        """The thruster-controller state ``[theta; omega]``."""
        return np.concatenate([self.euler, self.omega])


@dataclass(frozen=True, eq=False)
class ThrusterCommand:
    v: np.ndarray

    @classmethod
    def zeros(cls):
        return cls(np.zeros(4))

    def validate(self, model):
        v = np.asarray(self.v)
        if v.shape != (4,) or np.any(v < 0) or np.any(v > model.u_max):
            raise ValueError(f"thruster speeds must lie in [0, {model.u_max}]: {v}")


@dataclass(frozen=True, eq=False)
class ContactInfo:
    in_contact: np.ndarray  # (4,) bool
    F: np.ndarray  # (4, 3) inertial frame
    d: np.ndarray  # (4, 3) CoM -> foot, body frame
    penetration: np.ndarray  # (4,)

    @classmethod
    def empty(cls):
        return cls(np.zeros(4, dtype=bool), np.zeros((4, 3)), np.zeros((4, 3)), np.zeros(4))


def thrust_force(v_i, model, i):
    """Body-frame thrust of propeller ``i`` spinning at ``v_i``."""
    if v_i < 0:
        raise ValueError(f"propeller speed must be nonnegative, got {v_i}")
    return model.c_f * v_i * v_i * model.e_hat[i]


def thrust_torque(v, model, r=None):
    r = model.r if r is None else r
    f = model.c_f * (np.asarray(v) ** 2)[:, None] * model.e_hat
    return np.cross(r, f).sum(axis=0)


def nominal_angular_accel(model, cmd):
    v = np.asarray(cmd.v if isinstance(cmd, ThrusterCommand) else cmd, dtype=float)
    if np.any(v < 0):
        raise ValueError("propeller speeds must be nonnegative")
    return model.inertia_inv @ thrust_torque(v, model)


def contact_forces(state, foot_positions, foot_velocities, cfg):
    """Spring-damper ground at z = 0 with a viscous friction clamped to the cone."""
    foot_positions = np.asarray(foot_positions, dtype=float)
    foot_velocities = np.asarray(foot_velocities, dtype=float)
    R = state.rotation
    d = (foot_positions - state.position) @ R  # rows: R^T (p - c)
    in_contact = foot_positions[:, 2] < 0.0
    F = np.zeros((4, 3))
    pen = np.zeros(4)
    k, b, mu = cfg.ground_stiffness, cfg.ground_damping, cfg.friction_mu
    for i in np.flatnonzero(in_contact):
        z = foot_positions[i, 2]
        vel = foot_velocities[i]
        pen[i] = -z
        fn = max(0.0, -k * z - b * vel[2])
        ft = -b * vel[:2]
        mag = float(np.hypot(ft[0], ft[1]))
        limit = mu * fn
        if mag > limit:
            ft = ft * (limit / mag) if mag > 0 else ft * 0.0
        F[i] = (ft[0], ft[1], fn)
    return ContactInfo(in_contact, F, d, pen)


def contact_torque(info, R):
    """Body-frame moment of the ground forces about the CoM."""
    return np.cross(info.d, info.F @ R).sum(axis=0)


def true_residual_accel(info, model, R=None):
    """I^-1 sum(d_i x F_i) with forces rotated into the body frame.

    ``R`` is the body-to-inertial rotation; identity when omitted, which is
    the case for forces already expressed in body axes.
    """
    R = np.eye(3) if R is None else R
    return model.inertia_inv @ contact_torque(info, R)


class Simulator:
    """Single-body plant with massless, servo-tracked legs.

    The trunk is integrated with semi-implicit Euler; joint angles follow a
    rate-limited first-order servo toward the commanded targets.
    """

    def __init__(self, model, cfg, state, q, push=None):
        self.model = model
        self.cfg = cfg
        self.state = state
        self.q = np.array(q, dtype=float).reshape(4, 3)
        self.qd = np.zeros((4, 3))
        self.t = 0.0
        self.step_index = 0
        self.push = push
        self.contact = ContactInfo.empty()
        self.omega_dot = np.zeros(3)
        self.thrust = np.zeros(4)
        self.external_force = np.zeros(3)

    # leg geometry in the body frame
    def feet_body(self, q=None):
        q = self.q if q is None else q
        m = self.model
        return np.array([m.hip_offsets[i] + chain_fk(q[i], m.l_upper, m.l_lower) for i in range(4)])

    def knees_body(self, q=None):
        q = self.q if q is None else q
        m = self.model
        return np.array([m.hip_offsets[i] + knee_position(q[i], m.l_upper) for i in range(4)])

    def feet_world(self):
        R = self.state.rotation
        return self.state.position + self.feet_body() @ R.T

    def _servo(self, targets):
        cfg, m = self.cfg, self.model
        qd = (targets - self.q) / cfg.servo_tau
        qd = np.clip(qd, -cfg.servo_rate_limit, cfg.servo_rate_limit)
        # never overshoot the target within one step
        qd = np.where(np.abs(qd) * cfg.dt_sim > np.abs(targets - self.q), (targets - self.q) / cfg.dt_sim, qd)
        q_new = np.clip(self.q + qd * cfg.dt_sim, m.q_min, m.q_max)
        self.qd = (q_new - self.q) / cfg.dt_sim
        self.q = q_new

    def step(self, cmd, joint_targets):
        m, cfg = self.model, self.cfg
        dt = cfg.dt_sim
        v_cmd = np.clip(np.asarray(cmd.v if isinstance(cmd, ThrusterCommand) else cmd, dtype=float), 0.0, m.u_max)

        # forces are evaluated at the pre-step state; legs move afterwards
        s = self.state
        R = s.rotation
        feet_b = self.feet_body()
        feet_vb = np.array([chain_jacobian(self.q[i], m.l_upper, m.l_lower) @ self.qd[i] for i in range(4)])
        feet_w = s.position + feet_b @ R.T
        vel_w = s.velocity + (np.cross(s.omega, feet_b) + feet_vb) @ R.T
        info = contact_forces(s, feet_w, vel_w, cfg)

        f_body = m.c_f * (v_cmd**2)[:, None] * m.e_hat
        tau = np.cross(self.knees_body(), f_body).sum(axis=0) + contact_torque(info, R)
        ext = self.push.force(self.t) if self.push is not None else np.zeros(3)
        force = R @ f_body.sum(axis=0) + info.F.sum(axis=0) + ext
        force[2] -= m.mass * m.gravity

        L = m.inertia @ s.omega
        self.omega_dot = m.inertia_inv @ (tau - np.cross(s.omega, L))
        # body-frame momentum is counter-rotated by the same increment the
        # orientation takes, so world-frame momentum only changes by tau dt
        L_kick = L + tau * dt
        omega = s.omega
        for _ in range(ROT_ITERS):
            nxt = m.inertia_inv @ (rotvec_matrix(-omega * dt) @ L_kick)
            done = np.max(np.abs(nxt - omega)) <= 1e-14 * (1.0 + np.max(np.abs(nxt)))
            omega = nxt
            if done:
                break
        velocity = s.velocity + force * (dt / m.mass)
        position = s.position + velocity * dt
        orientation = quat_normalize(quat_mul(s.orientation, quat_from_rotvec(omega * dt)))

        self._servo(np.asarray(joint_targets, dtype=float).reshape(4, 3))
        self.contact = info
        self.thrust = v_cmd
        self.external_force = ext
        self.t = (self.step_index + 1) * dt
        self.step_index += 1
        if not (np.all(np.isfinite(position)) and np.all(np.isfinite(velocity)) and np.all(np.isfinite(omega))
                and np.all(np.isfinite(orientation))):
            raise SimulationDiverged(self.step_index, self.t)
        self.state = BodyState(position, velocity, orientation, omega)
        return self.state


@dataclass(frozen=True)
class Push:
    """Constant external force on the trunk during ``[start, start + duration)``."""

    magnitude: float
    start: float
    duration: float
    axis: str = "y"

    @property
    def end(self):
        return self.start + self.duration

    def direction(self):
        sign = -1.0 if self.axis.startswith("-") else 1.0
        idx = "xyz".index(self.axis[-1])
        e = np.zeros(3)
        e[idx] = sign
        return e

    def force(self, t):
        if self.start <= t < self.end:
            return self.magnitude * self.direction()
        return np.zeros(3)
