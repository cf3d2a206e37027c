"""
Push recovery A/B
=================

Both controllers see the same 15 N lateral push at t = 2 s. Weights come from
``thrustwalk train``; pass their path as the first argument.
"""

import sys

from thrustwalk.config import validate_config
from thrustwalk.experiments import run_ab

weights = sys.argv[1] if len(sys.argv) > 1 else "runs/train/weights.npz"
cfg = validate_config({"scenario": "push-recovery", "weights": weights})
res = run_ab(cfg, "runs/push_ab")
for name, r in (("nominal", res.nominal), ("crd", res.augmented)):
    rep = r.report
    print(f"{name:8s} recovered {rep.recovered} at {rep.recovery_time}  max roll {rep.max_abs_roll_deg:.1f} deg"
          f"  mean thrust {rep.mean_thruster_force:.2f} N")
