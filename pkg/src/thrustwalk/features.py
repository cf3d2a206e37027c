"""Per-leg 21-entry input vectors for the residual network."""

import numpy as np

FEATURE_NAMES = (
    "q_h", "q_s", "q_k",
    "qd_h", "qd_s", "qd_k",
    "foot_x", "foot_y", "foot_z",
    "prop_x", "prop_y", "prop_z",
    "roll", "pitch", "yaw",
    "omega_x", "omega_y", "omega_z",
    "vel_x", "vel_y",
    "thrust",
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 21


def leg_features(state, q, qd, feet_body, knees_body, thrust):
    """(4, 21) feature block; base velocity is the body-frame planar part."""
    euler = state.euler
    v_body = state.rotation.T @ state.velocity
    base = np.concatenate([euler, state.omega, v_body[:2]])
    out = np.empty((4, N_FEATURES))
    for i in range(4):
        out[i, 0:3] = q[i]
        out[i, 3:6] = qd[i]
        out[i, 6:9] = feet_body[i]
        out[i, 9:12] = knees_body[i]
        out[i, 12:20] = base
        out[i, 20] = thrust[i]
    return out


def simulator_features(sim, thrust):
    return leg_features(sim.state, sim.q, sim.qd, sim.feet_body(), sim.knees_body(), thrust)
