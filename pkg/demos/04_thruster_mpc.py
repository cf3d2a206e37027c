"""
Thruster MPC
============

Linearized attitude dynamics around equal propeller speeds, condensed over a
ten-step horizon and solved as a box-constrained QP.
"""

import time

import numpy as np

from thrustwalk.dynamics import BodyState, nominal_angular_accel
from thrustwalk.model import default_model
from thrustwalk.mpc import MpcConfig, ThrusterMpc, build_reference, linearize
from thrustwalk.rotation import euler_to_quat

model, cfg = default_model(), MpcConfig()
A_c, B_c = linearize(model, cfg)
print("input matrix (angular rows)\n", B_c[3:].round(2))

# the residual shifts the reference along the horizon
x_r = build_reference(np.zeros(3), np.zeros(3), np.array([10.0, 0.0, 0.0]), cfg.dt, 3).reshape(3, 6)
print("reference with a 10 rad/s^2 roll residual\n", x_r.round(4))

mpc = ThrusterMpc(model, cfg)
state = BodyState(position=np.array([0.0, 0.0, 0.26]), orientation=euler_to_quat(np.array([0.08, 0.0, 0.0])))
t0 = time.perf_counter()
cmd = mpc.step(state)
dt = time.perf_counter() - t0
print("rolled 0.08 rad -> speeds", cmd.v.round(3), f"({1e3 * dt:.2f} ms)")
print("resulting angular acceleration", nominal_angular_accel(model, cmd.v).round(2))
print("QP iterations", mpc.last.iterations, "KKT residual", mpc.last.kkt_residual)
