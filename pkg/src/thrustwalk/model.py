"""Robot and simulator parameter sets.

None of the numbers here are measured values of a real platform.  They are
desk-scale choices sized so that total maximum thrust is about 1.8x the
robot's weight.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .kinematics import knee_position, leg_ik

LEG_NAMES = ("FL", "FR", "RL", "RR")
# +1 for left legs, -1 for right legs
LEG_SIDE = np.array([1.0, -1.0, 1.0, -1.0])
LEG_FORE = np.array([1.0, 1.0, -1.0, -1.0])
# knee bend direction: front knees point back, rear knees point forward
KNEE_DIR = np.array([1.0, 1.0, -1.0, -1.0])

THRUST_TO_WEIGHT = 1.8


def _as_array(x, shape):
    a = np.array(x, dtype=float)
    if a.shape != shape:
        raise ValueError(f"expected shape {shape}, got {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class RobotModel:
    mass: float
    inertia: np.ndarray
    r: np.ndarray  # (4, 3) CoM -> propeller, body frame
    e_hat: np.ndarray  # (4, 3) unit thrust directions, body frame
    hip_offsets: np.ndarray  # (4, 3)
    l_upper: float
    l_lower: float
    c_f: float
    u_max: float
    gravity: float = 9.81
    q_min: np.ndarray = field(default_factory=lambda: np.array([-1.0, -1.8, -2.8]))
    q_max: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.8, 2.8]))

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("inertia", _as_array(self.inertia, (3, 3)))
        set_("r", _as_array(self.r, (4, 3)))
        set_("e_hat", _as_array(self.e_hat, (4, 3)))
        set_("hip_offsets", _as_array(self.hip_offsets, (4, 3)))
        set_("q_min", _as_array(self.q_min, (3,)))
        set_("q_max", _as_array(self.q_max, (3,)))
        if not np.allclose(self.inertia, self.inertia.T, atol=1e-12):
            raise ValueError("inertia must be symmetric")
        if np.min(np.linalg.eigvalsh(self.inertia)) <= 0.0:
            raise ValueError("inertia must be positive definite")
        if np.max(np.abs(np.linalg.norm(self.e_hat, axis=1) - 1.0)) > 1e-12:
            raise ValueError("thrust directions must be unit vectors")
        if self.mass <= 0 or self.c_f <= 0 or self.u_max <= 0:
            raise ValueError("mass, c_f and u_max must be positive")
        if self.l_upper <= 0 or self.l_lower <= 0:
            raise ValueError("link lengths must be positive")
        set_("inertia_inv", np.linalg.inv(self.inertia))

    @property
    def weight(self):
        return self.mass * self.gravity

    @property
    def max_total_thrust(self):
        return 4 * self.c_f * self.u_max**2


@dataclass(frozen=True)
class SimConfig:
    dt_sim: float = 1e-3
    ground_stiffness: float = 6.96e3
    ground_damping: float = 184.8
    friction_mu: float = 0.8
    servo_tau: float = 0.015  # first-order joint servo time constant (s)
    servo_rate_limit: float = 25.0  # rad/s

    def __post_init__(self):
        if self.dt_sim <= 0:
            raise ValueError("dt_sim must be positive")
        if self.ground_stiffness <= 0:
            raise ValueError("ground_stiffness must be positive")
        if self.ground_damping < 0 or self.friction_mu < 0:
            raise ValueError("ground_damping and friction_mu must be nonnegative")
        if self.servo_tau <= 0 or self.servo_rate_limit <= 0:
            raise ValueError("servo parameters must be positive")


def thrust_directions(tilt):
    """Thrust axes in the sagittal plane: front legs lean forward, rear legs back.

    ``tilt`` is measured from body z.  Horizontal components cancel at equal
    speeds, and diagonal speed differences give a yaw moment.
    """
    s, c = math.sin(tilt), math.cos(tilt)
    return np.array([[fore * s, 0.0, c] for fore in LEG_FORE])


def ik_seed(leg):
    """Bent-knee seed on the leg's knee branch."""
    return np.array([0.0, -0.6 * KNEE_DIR[leg], 1.2 * KNEE_DIR[leg]])


def standing_posture(model, stand_height, foot_lateral=0.0):
    """Joint angles that put each foot ``stand_height`` below its hip."""
    qs = []
    for i in range(4):
        p = np.array([0.0, LEG_SIDE[i] * foot_lateral, -stand_height])
        qs.append(leg_ik(p, ik_seed(i), model).q)
    return np.array(qs)


def default_model(
    mass=3.0,
    inertia=(0.0276, 0.0552, 0.0696),
    half_length=0.18,
    half_width=0.10,
    l_upper=0.18,
    l_lower=0.18,
    thrust_tilt=math.radians(20.0),
    u_max=1.0,
    stand_height=0.26,
    gravity=9.81,
):
    """Desk-scale quadruped with a thruster at each knee.

    ``c_f`` is derived from the thrust-to-weight ratio; thruster positions are
    the knee locations in the nominal standing posture.
    """
    hips = np.array([[LEG_FORE[i] * half_length, LEG_SIDE[i] * half_width, 0.0] for i in range(4)])
    c_f = THRUST_TO_WEIGHT * mass * gravity / (4 * u_max**2)
    proto = RobotModel(
        mass=mass,
        inertia=np.diag(inertia),
        r=hips,
        e_hat=thrust_directions(thrust_tilt),
        hip_offsets=hips,
        l_upper=l_upper,
        l_lower=l_lower,
        c_f=c_f,
        u_max=u_max,
        gravity=gravity,
    )
    q0 = standing_posture(proto, stand_height)
    r = np.array([hips[i] + knee_position(q0[i], l_upper) for i in range(4)])
    return RobotModel(
        mass=mass,
        inertia=np.diag(inertia),
        r=r,
        e_hat=proto.e_hat,
        hip_offsets=hips,
        l_upper=l_upper,
        l_lower=l_lower,
        c_f=c_f,
        u_max=u_max,
        gravity=gravity,
    )
