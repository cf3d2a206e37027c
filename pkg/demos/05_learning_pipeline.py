"""
Collect, train, evaluate
========================

A short version of the offline pipeline: nominal-controller rollouts with
random pushes, training with the composite loss, held-out RMSE.
"""

import numpy as np

from thrustwalk.config import validate_config
from thrustwalk.trainer import collect, contact_accuracy, evaluate_rmse, train

cfg = validate_config({
    "scenario": "collect",
    "collect": {"n_rollouts": 10, "rollout_duration": 5.0},
    "train": {"epochs": 60},
})
# a tenth of the default dataset, so the numbers are noisier than a full run
model = cfg.robot_model()
ds = collect(cfg.collect_config(), model=model, sim_cfg=cfg.sim_config(), mpc_cfg=cfg.mpc_config(),
             gait_cfg=cfg.gait_config())
print(len(ds), "samples,", len(ds.held_out_idx), "held out")

res = train(ds, cfg.train_config(), model.inertia)
print("loss per epoch", np.round([h[0] for h in res.history[::10]], 2))

held = ds.held_out()
rep = evaluate_rmse(res.params, held, model.inertia)
for axis, n, a in zip(("roll", "pitch", "yaw"), rep.nominal, rep.augmented):
    print(f"{axis:5s} RMSE nominal {n:7.3f}  augmented {a:7.3f}")
print("contact accuracy", round(contact_accuracy(res.params, held), 3))
