"""Closed loop: plant + Raibert leg controller + thruster MPC (+ optional CRD)."""

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import BodyState, SimulationDiverged, Simulator, nominal_angular_accel
from .features import simulator_features
from .kinematics import IKError
from .mpc import ThrusterMpc
from .raibert import LeggedController
from .rotation import euler_to_quat

# trunk tilt treated as a fall
FALL_ANGLE = math.radians(60.0)


@dataclass
class TickRecord:
    """What the controller saw and what the plant did over one control tick."""

    t: float
    features: np.ndarray  # (4, 21)
    d: np.ndarray  # (4, 3)
    omega_dot: np.ndarray  # plant angular acceleration at the tick
    omega_dot_fd: np.ndarray  # finite-difference estimate
    omega_dot_tick: np.ndarray  # mean over the control tick, (omega_end - omega_start) / tick
    omega_dot_nominal: np.ndarray
    contact: np.ndarray  # (4,) bool
    thrust: np.ndarray


class ClosedLoop:
    def __init__(self, model, sim_cfg, gait_cfg, mpc_cfg, crd=None, push=None,
                 offset=(0.0, 0.0), ctrl_dt=0.01, log=None):
        self.model = model
        self.crd = crd
        ratio = ctrl_dt / sim_cfg.dt_sim
        self.substeps = int(round(ratio))
        if self.substeps < 1 or abs(ratio - self.substeps) > 1e-9:
            raise ValueError("control period must be a multiple of the simulation step")
        self.ctrl_dt = self.substeps * sim_cfg.dt_sim
        self.legs = LeggedController(gait_cfg, model, self.ctrl_dt)
        self.mpc = ThrusterMpc(model, mpc_cfg)
        q0 = self.legs.nominal_posture()
        state = BodyState(
            position=np.array([offset[0], offset[1], gait_cfg.stand_height]),
            orientation=euler_to_quat(np.zeros(3)),
        )
        self.sim = Simulator(model, sim_cfg, state, q0, push=push)
        self.command = self.mpc.last_command
        self.joint_targets = q0
        self.log = log
        self.residual = np.zeros(3)
        self.ticks = []
        self.fallen = False
        self._omega_lag = np.zeros(3)

    def control_tick(self):
        sim = self.sim
        feats = simulator_features(sim, self.command.v)
        d = sim.feet_body()
        residual = None
        if self.crd is not None:
            residual = self.crd.residual(feats, d)
        self.residual = np.zeros(3) if residual is None else residual
        self.command = self.mpc.step(sim.state, residual)
        self.joint_targets = self.legs.step(sim.state, sim.t)
        return feats, d

    def run(self, duration, record=False):
        """Advance ``duration`` seconds; raises SimulationDiverged on blow-up or fall."""
        sim = self.sim
        dt = sim.cfg.dt_sim
        n_ticks = int(round(duration / self.ctrl_dt))
        for _ in range(n_ticks):
            try:
                feats, d = self.control_tick()
            except IKError as exc:
                # the trunk is past the point where the legs can follow
                self.fallen = True
                raise SimulationDiverged(sim.step_index, sim.t, reason=f"leg targets unreachable ({exc})") from exc
            tick_t = sim.t
            omega_start = sim.state.omega.copy()
            omegas = [self._omega_lag, sim.state.omega.copy()]
            for j in range(self.substeps):
                self._omega_lag = sim.state.omega.copy()
                sim.step(self.command, self.joint_targets)
                if j == 0:
                    od = sim.omega_dot.copy()
                    contact = sim.contact.in_contact.copy()
                if j < 2:
                    omegas.append(sim.state.omega.copy())
                if self.log is not None:
                    self.log.append(self, sim)
                self._check_fall()
            if record:
                # two-tap average of central differences at t and t + dt
                w = omegas
                fd = 0.5 * ((w[2] - w[0]) + (w[-1] - w[1])) / (2 * dt) if len(w) == 4 else (w[2] - w[1]) / dt
                self.ticks.append(TickRecord(
                    t=tick_t, features=feats, d=d, omega_dot=od, omega_dot_fd=fd,
                    omega_dot_tick=(sim.state.omega - omega_start) / self.ctrl_dt,
                    omega_dot_nominal=nominal_angular_accel(self.model, self.command.v),
                    contact=contact, thrust=self.command.v.copy(),
                ))
        return self.ticks

    def _check_fall(self):
        roll, pitch, _ = self.sim.state.euler
        if abs(roll) > FALL_ANGLE or abs(pitch) > FALL_ANGLE or self.sim.state.position[2] < 0.05:
            self.fallen = True
            raise SimulationDiverged(self.sim.step_index, self.sim.t, reason="trunk fell")
