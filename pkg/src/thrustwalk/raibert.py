"""Raibert-style gait generation and position-based leg control."""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .kinematics import leg_ik
from .model import LEG_FORE, LEG_SIDE, ik_seed


@dataclass(frozen=True, eq=False)
class RaibertConfig:
    T: float = 1.0 / 1.5
    k: float = 0.03
    v_d: np.ndarray = field(default_factory=lambda: np.array([0.1, 0.0]))
    # (k_pitch, k_roll); pitch is nose-down positive, so its gain is negative
    K_ori: np.ndarray = field(default_factory=lambda: np.diag([-0.8, 0.8]))
    p_ref: np.ndarray = field(default_factory=lambda: nominal_foot_positions())
    step_height: float = 0.05
    duty: float = 0.5
    phase_offsets: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.5, 0.5, 0.0]))
    stand_height: float = 0.26
    max_step: float = 0.12  # bound on |p_d - p_ref| per axis (m)

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("v_d", np.asarray(self.v_d, dtype=float).reshape(2))
        set_("K_ori", np.asarray(self.K_ori, dtype=float).reshape(2, 2))
        set_("p_ref", np.asarray(self.p_ref, dtype=float).reshape(4, 2))
        set_("phase_offsets", np.asarray(self.phase_offsets, dtype=float).reshape(4))
        if self.T <= 0:
            raise ValueError("gait period must be positive")
        if not 0.0 < self.duty < 1.0:
            raise ValueError("duty must lie in (0, 1)")
        if self.K_ori[0, 1] != 0.0 or self.K_ori[1, 0] != 0.0:
            raise ValueError("K_ori must be diagonal")
        if np.any(self.phase_offsets < 0) or np.any(self.phase_offsets >= 1):
            raise ValueError("phase offsets must lie in [0, 1)")


def nominal_foot_positions(half_length=0.18, half_width=0.13):
    return np.array([[LEG_FORE[i] * half_length, LEG_SIDE[i] * half_width] for i in range(4)])


def gait_config(gait="trot", narrowing=0.3, **kw):
    """Trot (standard width) or cat gait (feet pulled toward the midline)."""
    p_ref = nominal_foot_positions()
    if gait == "cat":
        p_ref[:, 1] *= narrowing
    elif gait != "trot":
        raise ValueError(f"unknown gait {gait!r}")
    return RaibertConfig(p_ref=p_ref, **kw)


class GaitPhase(NamedTuple):
    stance: np.ndarray
    phase: np.ndarray


def gait_phase(t, cfg):
    if t < 0:
        raise ValueError("time must be nonnegative")
    frac = np.mod(t / cfg.T + cfg.phase_offsets, 1.0)
    stance = frac < cfg.duty
    phase = np.where(stance, frac / cfg.duty, (frac - cfg.duty) / (1.0 - cfg.duty))
    return GaitPhase(stance, np.clip(phase, 0.0, np.nextafter(1.0, 0.0)))


def swing_target(cfg, leg, v):
    """Raibert foot placement p_ref + v T/2 + k (v - v_d), body frame."""
    v = np.asarray(v, dtype=float)
    return cfg.p_ref[leg] + v * (cfg.T / 2.0) + cfg.k * (v - cfg.v_d)


def stance_height_adjust(p, K_ori, e):
    return float(np.asarray(p, dtype=float) @ np.asarray(K_ori, dtype=float) @ np.asarray(e, dtype=float))


def swing_trajectory(p_start, p_d, phase, step_height, z_ground=None):
    """Cycloidal xy blend to the touchdown point with a sine height bump.

    ``z_ground`` defaults to the lift-off height.
    """
    p_start = np.asarray(p_start, dtype=float)
    z_ground = p_start[2] if z_ground is None else z_ground
    if phase <= 0.0:
        return p_start.copy()
    if phase >= 1.0:
        return np.array([p_d[0], p_d[1], z_ground])
    s = (2 * math.pi * phase - math.sin(2 * math.pi * phase)) / (2 * math.pi)
    xy = p_start[:2] + (np.asarray(p_d, dtype=float) - p_start[:2]) * s
    z = p_start[2] + (z_ground - p_start[2]) * s + step_height * math.sin(math.pi * phase)
    return np.array([xy[0], xy[1], z])


class LeggedController:
    """Stateful wrapper holding the per-leg lift-off and stance anchors."""

    def __init__(self, cfg, model, dt):
        self.cfg = cfg
        self.model = model
        self.dt = dt
        h = cfg.stand_height
        self.targets = np.array([[p[0], p[1], -h] for p in cfg.p_ref])
        self.swing_start = self.targets.copy()
        self.prev_stance = None
        self.q = np.array([leg_ik(self.targets[i] - model.hip_offsets[i], ik_seed(i), model).q
                           for i in range(4)])

    def nominal_posture(self):
        return self.q.copy()

    def step(self, state, t):
        return legged_control_step(state, self, t)


def legged_control_step(state, ctrl, t):
    """Joint targets for all legs at time ``t``; updates ``ctrl`` anchors."""
    cfg, model = ctrl.cfg, ctrl.model
    gp = gait_phase(t, cfg)
    R = state.rotation
    v_body = (R.T @ state.velocity)[:2]
    roll, pitch, _ = state.euler
    e = np.array([pitch, roll])
    z_ground = -cfg.stand_height
    prev = gp.stance if ctrl.prev_stance is None else ctrl.prev_stance
    for i in range(4):
        if gp.stance[i]:
            if not prev[i]:
                ctrl.targets[i, 2] = z_ground
            ctrl.targets[i, :2] -= v_body * ctrl.dt
            ctrl.targets[i, 2] = z_ground + stance_height_adjust(ctrl.targets[i, :2], cfg.K_ori, e)
        else:
            if prev[i]:
                ctrl.swing_start[i] = ctrl.targets[i].copy()
            p_d = cfg.p_ref[i] + np.clip(swing_target(cfg, i, v_body) - cfg.p_ref[i], -cfg.max_step, cfg.max_step)
            ctrl.targets[i] = swing_trajectory(ctrl.swing_start[i], p_d, gp.phase[i], cfg.step_height, z_ground)
    ctrl.prev_stance = gp.stance.copy()
    for i in range(4):
        ctrl.q[i] = leg_ik(ctrl.targets[i] - model.hip_offsets[i], ctrl.q[i], model).q
    return ctrl.q.copy()
