"""Experiment configuration: YAML files validated against a strict schema."""

import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .crd import LAYER_SHAPES


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = errors
        super().__init__("invalid configuration:\n" + "\n".join(f"  {e}" for e in errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RobotSpec(_Strict):
    mass: float = Field(3.0, gt=0)
    inertia: tuple[float, float, float] = (0.0276, 0.0552, 0.0696)
    thrust_tilt_deg: float = Field(20.0, ge=0, lt=90)
    u_max: float = Field(1.0, gt=0)
    stand_height: float = Field(0.26, gt=0)


class SimSpec(_Strict):
    dt: float = Field(1e-3, gt=0)
    ground_stiffness: float = Field(6.96e3, gt=0)
    ground_damping: float = Field(184.8, ge=0)
    friction_mu: float = Field(0.8, gt=0)


class GaitSpec(_Strict):
    gait: Literal["trot", "cat"] = "trot"
    narrowing: float = Field(0.3, gt=0, le=1)
    period: float = Field(1.0 / 1.5, gt=0)
    k: float = 0.03
    v_d: tuple[float, float] = (0.1, 0.0)


class PushSpec(_Strict):
    magnitude: float = Field(15.0, ge=0)
    start: float = Field(2.0, ge=0)
    duration: float = Field(0.5, ge=0)
    axis: Literal["x", "y", "z", "-x", "-y", "-z"] = "y"


class MpcSpec(_Strict):
    horizon: int = Field(10, ge=1)
    dt: float = Field(0.01, gt=0)
    q_diag: tuple[float, float, float, float, float, float] = (400.0, 200.0, 1.0, 4.0, 2.0, 0.1)
    r_diag: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    operating_fraction: float = Field(0.3, gt=0, le=1)
    residual_sign: float = -1.0


class CollectSpec(_Strict):
    n_rollouts: int = Field(24, ge=1)
    rollout_duration: float = Field(6.0, gt=0)
    position_offset_range: tuple[float, float] = (-0.02, 0.02)
    push_magnitude_range: tuple[float, float] = (5.0, 20.0)
    push_duration_range: tuple[float, float] = (0.2, 0.8)
    push_start_range: tuple[float, float] = (1.0, 3.0)
    held_out_fraction: float = Field(0.2, ge=0, lt=1)
    target_source: Literal["tick", "sim", "fd"] = "tick"

    @model_validator(mode="after")
    def _ranges(self):
        bad = [n for n in ("position_offset_range", "push_magnitude_range", "push_duration_range",
                           "push_start_range") if getattr(self, n)[0] > getattr(self, n)[1]]
        if bad:
            raise ValueError(f"lower bound exceeds upper bound in {', '.join(bad)}")
        return self


class TrainSpec(_Strict):
    alpha: float = Field(0.3, ge=0, le=1)
    learning_rate: float = Field(1e-3, gt=0)
    batch_size: int = Field(256, ge=1)
    epochs: int = Field(200, ge=0)
    freeze: tuple[str, ...] = ()
    optimizer: Literal["adam", "momentum"] = "adam"
    contact_warmup_epochs: int = Field(10, ge=0)
    contact_calibration_epochs: int = Field(10, ge=0)

    @model_validator(mode="after")
    def _layers(self):
        unknown = [n for n in self.freeze if n not in LAYER_SHAPES]
        if unknown:
            raise ValueError(f"unknown layer(s) in freeze: {', '.join(unknown)}")
        return self


SCENARIOS = ("collect", "train", "eval-rmse", "push-recovery", "cat-gait", "normal-gait")
RUN_SCENARIOS = ("push-recovery", "cat-gait", "normal-gait")


class ExperimentConfig(_Strict):
    scenario: Literal["collect", "train", "eval-rmse", "push-recovery", "cat-gait", "normal-gait"] = "push-recovery"
    controller: Literal["nominal", "crd-augmented"] = "nominal"
    seed: int = Field(0, ge=0, lt=2**64)
    duration: float = Field(6.0, gt=0)
    out: str = "runs"
    weights: Optional[str] = None
    dataset: Optional[str] = None
    control_dt: float = Field(0.01, gt=0)
    recovery_threshold_deg: float = Field(5.0, gt=0)
    recovery_deadline: float = Field(2.0, gt=0)  # pass if recovered within this long after the push
    divergence_is_error: bool = False
    # random base offset at reset, drawn from the run seed
    position_offset_range: tuple[float, float] = (0.0, 0.0)
    push: Optional[PushSpec] = None
    robot: RobotSpec = RobotSpec()
    sim: SimSpec = SimSpec()
    gait: GaitSpec = GaitSpec()
    mpc: MpcSpec = MpcSpec()
    collect: CollectSpec = CollectSpec()
    train: TrainSpec = TrainSpec()

    @model_validator(mode="after")
    def _scenario_fields(self):
        if self.scenario == "push-recovery" and self.push is None:
            object.__setattr__(self, "push", PushSpec())
        if self.scenario == "cat-gait" and self.gait.gait != "cat":
            object.__setattr__(self, "gait", self.gait.model_copy(update={"gait": "cat"}))
        if self.scenario in ("push-recovery", "normal-gait") and self.gait.gait != "trot":
            raise ValueError(f"scenario {self.scenario} runs the trot gait")
        if self.scenario == "eval-rmse" and self.weights is None:
            raise ValueError("eval-rmse needs a weight file")
        lo, hi = self.position_offset_range
        if lo > hi:
            raise ValueError("position_offset_range: lower bound exceeds upper bound")
        return self

    def hash(self):
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **kw):
        """Re-validated copy with top-level fields replaced (None values ignored)."""
        data = self.model_dump(mode="python")
        data.update({k: v for k, v in kw.items() if v is not None})
        return validate_config(data)

    # builders for the library objects

    def robot_model(self):
        from .model import default_model
        r = self.robot
        return default_model(mass=r.mass, inertia=r.inertia, thrust_tilt=math.radians(r.thrust_tilt_deg),
                             u_max=r.u_max, stand_height=r.stand_height)

    def sim_config(self):
        from .model import SimConfig
        s = self.sim
        return SimConfig(dt_sim=s.dt, ground_stiffness=s.ground_stiffness, ground_damping=s.ground_damping,
                         friction_mu=s.friction_mu)

    def gait_config(self):
        from .raibert import gait_config
        g = self.gait
        return gait_config(g.gait, narrowing=g.narrowing, T=g.period, k=g.k, v_d=np.array(g.v_d),
                           stand_height=self.robot.stand_height)

    def mpc_config(self, model=None):
        from .mpc import MpcConfig
        m = self.mpc
        return MpcConfig(H=m.horizon, dt=self.control_dt, Q=np.diag(m.q_diag), R=np.diag(m.r_diag),
                         u_max=self.robot.u_max, v0=np.full(4, m.operating_fraction * self.robot.u_max),
                         residual_sign=m.residual_sign)

    def push_spec(self):
        from .dynamics import Push
        p = self.push
        return None if p is None else Push(p.magnitude, p.start, p.duration, p.axis)

    def collect_config(self):
        from .trainer import CollectConfig
        c = self.collect
        return CollectConfig(n_rollouts=c.n_rollouts, rollout_duration=c.rollout_duration, seed=self.seed,
                             position_offset_range=c.position_offset_range,
                             push_magnitude_range=c.push_magnitude_range,
                             push_duration_range=c.push_duration_range, push_start_range=c.push_start_range,
                             gait=self.gait.gait, held_out_fraction=c.held_out_fraction,
                             target_source=c.target_source)

    def train_config(self):
        from .trainer import TrainConfig
        t = self.train
        return TrainConfig(alpha=t.alpha, learning_rate=t.learning_rate, batch_size=t.batch_size,
                           epochs=t.epochs, seed=self.seed, freeze=t.freeze, optimizer=t.optimizer,
                           contact_warmup_epochs=t.contact_warmup_epochs,
                           contact_calibration_epochs=t.contact_calibration_epochs)


def _format_errors(exc):
    out = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{loc}: {e['msg']}")
    return out


def validate_config(data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(["<root>: expected a mapping"])
    if set(data) == {"config_hash", "config"}:
        # a config written next to run outputs
        data = data["config"]
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_config(path):
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    return validate_config(data)


def dump_config(cfg, path):
    """Resolved config plus its hash, written next to run outputs."""
    data = cfg.model_dump(mode="json")
    data_out = {"config_hash": cfg.hash(), "config": data}
    Path(path).write_text(yaml.safe_dump(data_out, sort_keys=False))
