"""Offline pipeline: rollout collection, dataset files, training, evaluation."""

import csv
import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .crd import (LAYER_SHAPES, Batch, NetworkParams, TrainingError, check_alpha, forward,
                  loss_and_grad, residual_from_outputs)
from .dynamics import Push, SimulationDiverged
from .features import FEATURE_NAMES, N_FEATURES
from .loop import ClosedLoop
from .model import SimConfig, default_model
from .mpc import MpcConfig
from .raibert import gait_config

log = logging.getLogger(__name__)

AXES = ("roll", "pitch", "yaw")
TARGET_SOURCES = ("tick", "sim", "fd")


def _check_range(name, r):
    lo, hi = r
    if lo > hi:
        raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")


@dataclass(frozen=True)
class CollectConfig:
    n_rollouts: int = 24
    rollout_duration: float = 6.0
    seed: int = 0
    position_offset_range: tuple = (-0.02, 0.02)
    push_magnitude_range: tuple = (5.0, 20.0)
    push_duration_range: tuple = (0.2, 0.8)
    push_start_range: tuple = (1.0, 3.0)
    gait: str = "trot"
    held_out_fraction: float = 0.2
    # "tick": mean angular acceleration over the control tick; "sim": the
    # simulator's own value at the tick; "fd": filtered central differences
    target_source: str = "tick"

    def __post_init__(self):
        if self.n_rollouts < 1:
            raise ValueError("n_rollouts must be at least 1")
        if self.rollout_duration <= 0:
            raise ValueError("rollout_duration must be positive")
        for name in ("position_offset_range", "push_magnitude_range", "push_duration_range",
                     "push_start_range"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
            _check_range(name, getattr(self, name))
        if self.gait not in ("trot", "cat"):
            raise ValueError(f"unknown gait {self.gait!r}")
        if not 0.0 <= self.held_out_fraction < 1.0:
            raise ValueError("held_out_fraction must lie in [0, 1)")
        if self.target_source not in TARGET_SOURCES:
            raise ValueError(f"target_source must be one of {TARGET_SOURCES}")

    def hash(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(eq=False)
class Dataset:
    rollout_id: np.ndarray  # (N,)
    t: np.ndarray  # (N,)
    features: np.ndarray  # (N, 4, 21)
    d: np.ndarray  # (N, 4, 3)
    target: np.ndarray  # (N, 3) true minus nominal angular acceleration
    contact: np.ndarray  # (N, 4) bool
    held_out_start: int = 0  # samples from this index on form the held-out split
    pushes: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    def __post_init__(self):
        n = len(self.t)
        if not 0 <= self.held_out_start <= n:
            raise ValueError("split boundary outside the dataset")
        if n and self.held_out_start not in (0, n):
            # a rollout may not straddle the boundary
            if self.rollout_id[self.held_out_start - 1] == self.rollout_id[self.held_out_start]:
                raise ValueError("a rollout spans both splits")

    @property
    def train_idx(self):
        return np.arange(self.held_out_start)

    @property
    def held_out_idx(self):
        return np.arange(self.held_out_start, len(self))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.rollout_id[idx], self.t[idx], self.features[idx], self.d[idx],
                       self.target[idx], self.contact[idx], held_out_start=len(idx))

    def train(self):
        return self.subset(self.train_idx)

    def held_out(self):
        return self.subset(self.held_out_idx)

    def batch(self, idx=None):
        if idx is None:
            idx = slice(None)
        return Batch(self.features[idx], self.d[idx], self.target[idx],
                     self.contact[idx].astype(float))

    def equal(self, other):
        return (len(self) == len(other) and self.held_out_start == other.held_out_start
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("rollout_id", "t", "features", "d", "target", "contact")))

    @classmethod
    def concat(cls, parts, n_held_out_rollouts=0):
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("no samples collected")
        cat = lambda k: np.concatenate([getattr(p, k) for p in parts])  # noqa: E731
        rid = cat("rollout_id")
        ids = np.unique(rid)
        if n_held_out_rollouts >= len(ids):
            n_held_out_rollouts = len(ids) - 1
        start = len(rid)
        if n_held_out_rollouts > 0:
            start = int(np.searchsorted(rid, ids[-n_held_out_rollouts]))
        return cls(rid, cat("t"), cat("features"), cat("d"), cat("target"), cat("contact"), start)


def rollout_perturbation(cfg, rollout):
    """Offset and push for one rollout, drawn from its own seeded stream."""
    rng = np.random.default_rng([cfg.seed, rollout])
    offset = rng.uniform(*cfg.position_offset_range, size=2)
    magnitude = rng.uniform(*cfg.push_magnitude_range)
    duration = rng.uniform(*cfg.push_duration_range)
    start = rng.uniform(*cfg.push_start_range)
    axis = "y" if rng.random() < 0.5 else "-y"
    return offset, Push(magnitude, start, duration, axis)


def collect_rollout(cfg, rollout, model=None, sim_cfg=None, mpc_cfg=None, gait_cfg=None):
    model = model or default_model()
    offset, push = rollout_perturbation(cfg, rollout)
    loop = ClosedLoop(model, sim_cfg or SimConfig(), gait_cfg or gait_config(cfg.gait),
                      mpc_cfg or MpcConfig(), push=push, offset=offset)
    ticks = loop.run(cfg.rollout_duration, record=True)
    attr = {"tick": "omega_dot_tick", "sim": "omega_dot", "fd": "omega_dot_fd"}[cfg.target_source]
    od = np.array([getattr(r, attr) for r in ticks])
    nominal = np.array([r.omega_dot_nominal for r in ticks])
    n = len(ticks)
    return Dataset(
        rollout_id=np.full(n, rollout, dtype=np.int64),
        t=np.array([r.t for r in ticks]),
        features=np.array([r.features for r in ticks]),
        d=np.array([r.d for r in ticks]),
        target=od - nominal,
        contact=np.array([r.contact for r in ticks], dtype=bool),
        held_out_start=n,
        pushes=[push],
    )


def collect(cfg, model=None, sim_cfg=None, mpc_cfg=None, gait_cfg=None):
    """Nominal-controller rollouts; the last rollouts form the held-out split."""
    parts, pushes = [], []
    for r in range(cfg.n_rollouts):
        try:
            part = collect_rollout(cfg, r, model, sim_cfg, mpc_cfg, gait_cfg)
        except SimulationDiverged as exc:
            log.warning("rollout %d discarded: %s", r, exc)
            continue
        parts.append(part)
        pushes.extend(part.pushes)
    n_held = int(round(cfg.held_out_fraction * len(parts)))
    if cfg.held_out_fraction > 0 and len(parts) > 1:
        n_held = max(n_held, 1)
    ds = Dataset.concat(parts, n_held)
    ds.pushes = pushes
    return ds


# dataset files

def dataset_columns():
    cols = ["rollout_id", "t"]
    cols += [f"leg{i}_{n}" for i in range(4) for n in FEATURE_NAMES]
    cols += [f"d{i}_{a}" for i in range(4) for a in "xyz"]
    cols += [f"target_{a}" for a in AXES]
    cols += [f"contact{i}" for i in range(4)]
    return cols


class DatasetSchemaError(ValueError):
    pass


def _file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_dataset(ds, path, seed=None, config_hash=None):
    """CSV with 17 significant digits plus a ``.manifest.json`` sidecar."""
    path = Path(path)
    n = len(ds)
    table = np.column_stack([
        ds.rollout_id.astype(float), ds.t, ds.features.reshape(n, -1), ds.d.reshape(n, -1),
        ds.target, ds.contact.astype(float),
    ])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(dataset_columns())
        for row in table:
            w.writerow([f"{x:.17g}" for x in row])
    manifest = {
        "seed": seed, "config_hash": config_hash, "n_samples": n,
        "held_out_start": int(ds.held_out_start), "data_sha256": _file_hash(path),
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2))


def manifest_path(path):
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def read_dataset(path):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetSchemaError(f"{path}: empty file")
        expected = dataset_columns()
        missing = [c for c in expected if c not in header]
        if missing:
            raise DatasetSchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        if header != expected:
            raise DatasetSchemaError(f"{path}: unexpected column layout")
        rows = [[float(x) for x in row] for row in reader]
    table = np.array(rows, dtype=float).reshape(-1, len(expected))
    n = table.shape[0]
    c = 2
    features = table[:, c:c + 4 * N_FEATURES].reshape(n, 4, N_FEATURES)
    c += 4 * N_FEATURES
    d = table[:, c:c + 12].reshape(n, 4, 3)
    c += 12
    target = table[:, c:c + 3]
    contact = table[:, c + 3:c + 7] > 0.5
    held_out_start = n
    mpath = manifest_path(path)
    if mpath.exists():
        manifest = json.loads(mpath.read_text())
        actual = _file_hash(path)
        if manifest.get("data_sha256") != actual:
            warnings.warn(f"{path}: manifest hash {manifest.get('data_sha256')} does not match "
                          f"data hash {actual}", stacklevel=2)
        held_out_start = int(manifest.get("held_out_start", n))
    return Dataset(table[:, 0].astype(np.int64), table[:, 1], features, d, target, contact,
                   held_out_start)


# training

@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.3
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0
    freeze: tuple = ()
    optimizer: str = "adam"  # or "momentum"
    momentum: float = 0.9
    # epochs on the contact term alone before the composite loss, for a fresh
    # network; keeps the gate from being captured by the much larger force term
    contact_warmup_epochs: int = 10
    # closing epochs on the contact term with every layer but the contact head
    # frozen; re-aligns the gate with the labels without touching the force path
    contact_calibration_epochs: int = 10

    def __post_init__(self):
        check_alpha(self.alpha)
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if (self.batch_size < 1 or self.epochs < 0 or self.contact_warmup_epochs < 0
                or self.contact_calibration_epochs < 0):
            raise ValueError("batch_size must be >= 1 and epoch counts >= 0")
        object.__setattr__(self, "freeze", tuple(self.freeze))
        for name in self.freeze:
            if name not in LAYER_SHAPES:
                raise ValueError(f"unknown layer {name!r} in freeze mask")
        if self.optimizer not in ("adam", "momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    params: NetworkParams
    history: list  # per epoch: (loss, l_grf, l_contact) on the training split


def feature_stats(features):
    flat = features.reshape(-1, N_FEATURES)
    return flat.mean(axis=0), flat.std(axis=0)


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.k = {}, {}, 0

    def update(self, arrays, grads, skip):
        self.k += 1
        for key, a in arrays:
            if key.split(".")[0] in skip:
                continue
            g = grads[key]
            m = self.m[key] = self.b1 * self.m.get(key, 0.0) + (1 - self.b1) * g
            v = self.v[key] = self.b2 * self.v.get(key, 0.0) + (1 - self.b2) * g * g
            mh = m / (1 - self.b1 ** self.k)
            vh = v / (1 - self.b2 ** self.k)
            a -= self.lr * mh / (np.sqrt(vh) + self.eps)


class _Momentum:
    def __init__(self, lr, mu):
        self.lr, self.mu, self.vel = lr, mu, {}

    def update(self, arrays, grads, skip):
        for key, a in arrays:
            if key.split(".")[0] in skip:
                continue
            v = self.vel[key] = self.mu * self.vel.get(key, 0.0) - self.lr * grads[key]
            a += v


def train(dataset, cfg, inertia, init=None):
    """Mini-batch training on the training split.

    A fresh network takes its normalization statistics from the training
    features; a supplied ``init`` keeps its own.
    """
    data = dataset.train()
    if len(data) == 0:
        raise ValueError("training split is empty")
    fresh = init is None
    if fresh:
        mean, std = feature_stats(data.features)
        params = NetworkParams.init(cfg.seed, mean, std)
    else:
        params = init.copy()
    if cfg.epochs == 0:
        return TrainResult(params, [])
    rng = np.random.default_rng(cfg.seed)
    head_trainable = "contact_head" not in cfg.freeze
    warmup = cfg.contact_warmup_epochs if fresh and head_trainable else 0
    calib = cfg.contact_calibration_epochs if head_trainable and cfg.alpha > 0 else 0
    history = []
    if warmup:
        _run_epochs(params, data, inertia, cfg, rng, 1.0, warmup, history, cfg.freeze)
    _run_epochs(params, data, inertia, cfg, rng, cfg.alpha, cfg.epochs, history, cfg.freeze, offset=warmup)
    if calib:
        others = tuple(k for k in LAYER_SHAPES if k != "contact_head")
        _run_epochs(params, data, inertia, cfg, rng, 1.0, calib, history, others,
                    offset=warmup + cfg.epochs)
    return TrainResult(params, history[warmup:warmup + cfg.epochs])


def _run_epochs(params, data, inertia, cfg, rng, alpha, epochs, history, frozen, offset=0):
    if cfg.optimizer == "adam":
        opt = _Adam(cfg.learning_rate)
    else:
        opt = _Momentum(cfg.learning_rate, cfg.momentum)
    n = len(data)
    for epoch in range(offset, offset + epochs):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                _, _, grads = loss_and_grad(params, data.batch(idx), alpha, inertia, frozen)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            opt.update(list(params.arrays()), grads, set(frozen))
        loss, (lg, lc), _ = loss_and_grad(params, data.batch(), cfg.alpha, inertia, compute_grad=False)
        history.append((loss, lg, lc))


# evaluation

@dataclass
class RmseReport:
    nominal: np.ndarray  # per axis roll/pitch/yaw
    augmented: np.ndarray

    @property
    def relative_improvement(self):
        return 1.0 - self.augmented / np.where(self.nominal > 0, self.nominal, 1.0)

    def as_dict(self):
        return {"nominal": dict(zip(AXES, map(float, self.nominal))),
                "augmented": dict(zip(AXES, map(float, self.augmented)))}


def predicted_residuals(params, dataset, inertia):
    return residual_from_outputs(forward(params, dataset.features), dataset.d, inertia)


def evaluate_rmse(params, dataset, inertia, residual=None):
    """Per-axis RMSE of nominal and CRD-augmented angular acceleration.

    With ``omega_dot_true = nominal + target`` the nominal error is ``-target``
    and the augmented error is ``residual - target``.
    """
    if len(dataset) == 0:
        raise ValueError("empty split")
    if residual is None:
        residual = predicted_residuals(params, dataset, inertia)
    nominal = np.sqrt(np.mean(dataset.target ** 2, axis=0))
    augmented = np.sqrt(np.mean((residual - dataset.target) ** 2, axis=0))
    return RmseReport(nominal, augmented)


def contact_accuracy(params, dataset):
    C = forward(params, dataset.features).C
    return float(np.mean((C > 0.5) == dataset.contact))
