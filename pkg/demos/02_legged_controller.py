"""
Raibert-style trot
==================

Gait timing, foot placement and the stance-height attitude correction.
"""

import numpy as np

from thrustwalk.raibert import gait_config, gait_phase, stance_height_adjust, swing_target

cfg = gait_config("trot")
print("period", round(cfg.T, 4), "s, duty", cfg.duty, "offsets", cfg.phase_offsets)

# diagonal pairs share a phase
for t in np.linspace(0.0, cfg.T, 5):
    ph = gait_phase(t, cfg)
    print(f"t={t:.3f}  stance {ph.stance.astype(int)}  phase {ph.phase.round(2)}")

# foot placement moves with the body velocity error
for vx in (0.0, 0.1, 0.3):
    print("v_x", vx, "-> FL target", swing_target(cfg, 0, np.array([vx, 0.0])).round(4))

# a positive roll error raises the feet on one side and lowers the other
for leg in range(4):
    dz = stance_height_adjust(cfg.p_ref[leg], cfg.K_ori, np.array([0.0, 0.05]))
    print("leg", leg, "stance dz", round(dz, 5))

# the cat gait pulls the feet toward the midline
cat = gait_config("cat")
print("trot foot y", cfg.p_ref[:, 1], "cat foot y", cat.p_ref[:, 1].round(3))
