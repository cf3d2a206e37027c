"""
Trunk dynamics, thrusters and ground contact
============================================

The plant is a single rigid trunk with four massless legs. Each knee carries
a propeller whose thrust is c_f v^2 along a fixed body-frame direction.
"""

from dataclasses import replace

import numpy as np

from thrustwalk.dynamics import BodyState, Simulator, ThrusterCommand, nominal_angular_accel
from thrustwalk.model import SimConfig, default_model, standing_posture
from thrustwalk.rotation import euler_to_quat

model = default_model()
print("mass", model.mass, "kg, inertia diag", np.diag(model.inertia))
print("thrust directions (body frame)\n", model.e_hat.round(3))

# angular acceleration produced by the thrusters alone
v = np.array([0.6, 0.2, 0.6, 0.2])  # left side spins faster
print("nominal angular acceleration", nominal_angular_accel(model, v).round(3))

# free rotation without gravity conserves angular momentum
free = replace(model, gravity=0.0)
q0 = standing_posture(free, 0.26)
state = BodyState(position=np.array([0.0, 0.0, 5.0]), orientation=euler_to_quat(np.zeros(3)),
                  omega=np.array([1.2, -0.7, 2.5]))
sim = Simulator(free, SimConfig(), state, q0)
L0 = sim.state.rotation @ free.inertia @ sim.state.omega
for _ in range(1000):
    sim.step(ThrusterCommand.zeros(), q0)
L1 = sim.state.rotation @ free.inertia @ sim.state.omega
print("relative momentum drift after 1 s", np.linalg.norm(L1 - L0) / np.linalg.norm(L0))

# dropped onto the spring-damper ground the trunk settles on its feet
state = BodyState(position=np.array([0.0, 0.0, 0.27]), orientation=euler_to_quat(np.zeros(3)))
sim = Simulator(model, SimConfig(), state, q0)
for _ in range(1500):
    sim.step(ThrusterCommand.zeros(), q0)
F = sim.contact.F
print("resting height", round(sim.state.position[2], 4), "m")
print("vertical ground reaction", F[:, 2].round(2), "sum", F[:, 2].sum().round(2),
      "weight", round(model.mass * model.gravity, 2))
