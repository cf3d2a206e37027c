"""Contact residual dynamics network.

One MLP (21 -> 64 -> 128 -> 512 -> 64) is shared by the four legs.  Its last
hidden layer feeds a linear 3-unit force head and a sigmoid contact head, and
the per-leg outputs combine into an angular-acceleration residual

    I^-1 sum_i C_i (d_i x F_i).

Gradients are computed by hand in float64.
"""

import zipfile
from dataclasses import dataclass

import numpy as np

from .features import N_FEATURES

LAYER_SHAPES = {
    "hidden1": (N_FEATURES, 64),
    "hidden2": (64, 128),
    "hidden3": (128, 512),
    "hidden4": (512, 64),
    "force_head": (64, 3),
    "contact_head": (64, 1),
}
HIDDEN = ("hidden1", "hidden2", "hidden3", "hidden4")
BCE_EPS = 1e-7

WEIGHTS_MAGIC = "CRDNET"
WEIGHTS_VERSION = 1


class WeightFileError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(eq=False)
class NetworkParams:
    weights: dict  # name -> (fan_in, fan_out)
    biases: dict  # name -> (fan_out,)
    feature_mean: np.ndarray
    feature_std: np.ndarray

    def __post_init__(self):
        for name, shape in LAYER_SHAPES.items():
            W = self.weights.get(name)
            b = self.biases.get(name)
            if W is None or b is None:
                raise ValueError(f"missing layer {name!r}")
            if W.shape != shape or b.shape != (shape[1],):
                raise ValueError(f"layer {name!r}: expected weight {shape} and bias ({shape[1]},), "
                                 f"got {W.shape} and {b.shape}")
        if self.feature_mean.shape != (N_FEATURES,) or self.feature_std.shape != (N_FEATURES,):
            raise ValueError("normalization statistics must have one entry per feature")

    @classmethod
    def init(cls, seed=0, feature_mean=None, feature_std=None):
        """He-initialized weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = {}, {}
        for name, (n_in, n_out) in LAYER_SHAPES.items():
            scale = np.sqrt(2.0 / n_in) if name in HIDDEN else np.sqrt(1.0 / n_in)
            weights[name] = rng.normal(0.0, scale, size=(n_in, n_out))
            biases[name] = np.zeros(n_out)
        mean = np.zeros(N_FEATURES) if feature_mean is None else np.asarray(feature_mean, dtype=float)
        std = np.ones(N_FEATURES) if feature_std is None else np.asarray(feature_std, dtype=float)
        return cls(weights, biases, mean, std)

    @classmethod
    def zeros(cls):
        return cls({n: np.zeros(s) for n, s in LAYER_SHAPES.items()},
                   {n: np.zeros(s[1]) for n, s in LAYER_SHAPES.items()},
                   np.zeros(N_FEATURES), np.ones(N_FEATURES))

    def copy(self):
        return NetworkParams({k: v.copy() for k, v in self.weights.items()},
                             {k: v.copy() for k, v in self.biases.items()},
                             self.feature_mean.copy(), self.feature_std.copy())

    def arrays(self):
        """(key, array) pairs for every trainable tensor, in layer order."""
        for name in LAYER_SHAPES:
            yield f"{name}.weight", self.weights[name]
            yield f"{name}.bias", self.biases[name]

    def n_params(self):
        return sum(a.size for _, a in self.arrays())

    def equal(self, other):
        pairs = zip(self.arrays(), other.arrays())
        return (all(k1 == k2 and np.array_equal(a, b) for (k1, a), (k2, b) in pairs)
                and np.array_equal(self.feature_mean, other.feature_mean)
                and np.array_equal(self.feature_std, other.feature_std))


@dataclass(eq=False)
class CrdOutput:
    F: np.ndarray  # (..., 4, 3) body-frame forces
    C: np.ndarray  # (..., 4) contact probabilities


def _normalize(params, features):
    std = np.where(params.feature_std > 1e-12, params.feature_std, 1.0)
    return (features - params.feature_mean) / std


def _sigmoid(z):
    # stable for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_cache(params, features):
    features = np.asarray(features, dtype=float)
    if features.shape[-2:] != (4, N_FEATURES):
        raise ValueError(f"features must have shape (..., 4, {N_FEATURES}), got {features.shape}")
    lead = features.shape[:-2]
    x = _normalize(params, features).reshape(-1, N_FEATURES)
    acts = [x]
    for name in HIDDEN:
        x = np.maximum(x @ params.weights[name] + params.biases[name], 0.0)
        acts.append(x)
    F = x @ params.weights["force_head"] + params.biases["force_head"]
    z = (x @ params.weights["contact_head"] + params.biases["contact_head"])[:, 0]
    C = _sigmoid(z)
    return lead, acts, F, C


def forward(params, features):
    """Per-leg forces and contact probabilities for ``(..., 4, 21)`` features."""
    lead, _, F, C = _forward_cache(params, features)
    return CrdOutput(F.reshape(*lead, 4, 3), C.reshape(*lead, 4))


def residual_from_outputs(out, d, inertia):
    """Gated moment sum mapped through the inverse inertia; broadcasts over a batch."""
    d = np.asarray(d, dtype=float)
    torque = (out.C[..., None] * np.cross(d, out.F)).sum(axis=-2)
    return np.linalg.solve(np.asarray(inertia, dtype=float), torque.T).T if torque.ndim > 1 else \
        np.linalg.solve(np.asarray(inertia, dtype=float), torque)


def loss_grf(predicted, target):
    e = np.atleast_2d(np.asarray(predicted, dtype=float) - np.asarray(target, dtype=float))
    return float(np.mean(np.sum(e * e, axis=-1)))


def loss_contact(C_nn, C_gt):
    C = np.clip(np.atleast_2d(np.asarray(C_nn, dtype=float)), BCE_EPS, 1.0 - BCE_EPS)
    y = np.atleast_2d(np.asarray(C_gt, dtype=float))
    bce = -(y * np.log(C) + (1.0 - y) * np.log(1.0 - C))
    return float(np.mean(np.mean(bce, axis=-1)))


def check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"loss weight alpha must lie in [0, 1], got {alpha}")


def total_loss(alpha, l_grf, l_contact):
    check_alpha(alpha)
    return (1.0 - alpha) * l_grf + alpha * l_contact


@dataclass(eq=False)
class Batch:
    features: np.ndarray  # (B, 4, 21)
    d: np.ndarray  # (B, 4, 3)
    target: np.ndarray  # (B, 3)
    contact: np.ndarray  # (B, 4)

    def __len__(self):
        return self.target.shape[0]


def loss_and_grad(params, batch, alpha, inertia, frozen=(), compute_grad=True):
    """Composite loss on a batch and its gradient for every trainable tensor.

    Returns ``(loss, parts, grads)`` with ``parts = (l_grf, l_contact)`` and
    ``grads`` keyed like :meth:`NetworkParams.arrays`; frozen layers get zeros.
    """
    check_alpha(alpha)
    B = len(batch)
    if B == 0:
        raise ValueError("empty batch")
    inertia_inv = np.linalg.inv(np.asarray(inertia, dtype=float))
    _, acts, F, C = _forward_cache(params, batch.features)
    d = batch.d.reshape(-1, 3)
    dxF = np.cross(d, F)
    torque = (C[:, None] * dxF).reshape(B, 4, 3).sum(axis=1)
    pred = torque @ inertia_inv.T
    err = pred - batch.target
    l_grf = float(np.mean(np.sum(err * err, axis=1)))

    y = batch.contact.reshape(-1).astype(float)
    Cc = np.clip(C, BCE_EPS, 1.0 - BCE_EPS)
    l_con = float(np.mean(-(y * np.log(Cc) + (1.0 - y) * np.log(1.0 - Cc))))
    loss = (1.0 - alpha) * l_grf + alpha * l_con
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss ({loss})")
    if not compute_grad:
        return loss, (l_grf, l_con), None

    g_pred = (1.0 - alpha) * 2.0 * err / B
    g_tau = np.repeat(g_pred @ inertia_inv, 4, axis=0)  # per leg row
    g_F = C[:, None] * np.cross(g_tau, d)
    g_C = np.sum(g_tau * dxF, axis=1)
    inside = (C > BCE_EPS) & (C < 1.0 - BCE_EPS)
    g_C += np.where(inside, alpha * (Cc - y) / (Cc * (1.0 - Cc)) / (4 * B), 0.0)
    g_z = g_C * C * (1.0 - C)

    grads = {}
    h = acts[-1]
    grads["force_head.weight"] = h.T @ g_F
    grads["force_head.bias"] = g_F.sum(axis=0)
    grads["contact_head.weight"] = h.T @ g_z[:, None]
    grads["contact_head.bias"] = np.array([g_z.sum()])
    g_h = g_F @ params.weights["force_head"].T + np.outer(g_z, params.weights["contact_head"][:, 0])
    for k in range(len(HIDDEN) - 1, -1, -1):
        name = HIDDEN[k]
        g_pre = g_h * (acts[k + 1] > 0.0)
        grads[f"{name}.weight"] = acts[k].T @ g_pre
        grads[f"{name}.bias"] = g_pre.sum(axis=0)
        if k > 0:
            g_h = g_pre @ params.weights[name].T
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {key}")
    for name in frozen:
        if name not in LAYER_SHAPES:
            raise ValueError(f"unknown layer {name!r}")
        grads[f"{name}.weight"] = np.zeros_like(grads[f"{name}.weight"])
        grads[f"{name}.bias"] = np.zeros_like(grads[f"{name}.bias"])
    return loss, (l_grf, l_con), grads


def backward(params, batch, alpha, inertia, frozen=()):
    """Gradients of the composite loss (see :func:`loss_and_grad`)."""
    return loss_and_grad(params, batch, alpha, inertia, frozen)[2]


def save_weights(params, path):
    data = {"magic": np.array(WEIGHTS_MAGIC), "version": np.array(WEIGHTS_VERSION),
            "layers": np.array(list(LAYER_SHAPES)),
            "feature_mean": params.feature_mean, "feature_std": params.feature_std}
    for key, arr in params.arrays():
        data[key] = np.ascontiguousarray(arr, dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, **data)


def load_weights(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            files = set(z.files)
            if "magic" not in files or str(z["magic"]) != WEIGHTS_MAGIC:
                raise WeightFileError(f"{path}: not a CRD weight file")
            if int(z["version"]) != WEIGHTS_VERSION:
                raise WeightFileError(f"{path}: unsupported version {int(z['version'])}")
            weights, biases = {}, {}
            for name, shape in LAYER_SHAPES.items():
                for part, store, want in (("weight", weights, shape), ("bias", biases, (shape[1],))):
                    key = f"{name}.{part}"
                    if key not in files:
                        raise WeightFileError(f"{path}: missing {key}")
                    arr = z[key]
                    if arr.shape != want:
                        raise WeightFileError(f"{path}: {key} has shape {arr.shape}, expected {want}")
                    store[name] = arr.astype(np.float64)
            mean, std = z["feature_mean"], z["feature_std"]
    except (zipfile.BadZipFile, EOFError, OSError, KeyError) as exc:
        raise WeightFileError(f"{path}: corrupt weight file ({exc})") from exc
    except ValueError as exc:
        if isinstance(exc, WeightFileError):
            raise
        raise WeightFileError(f"{path}: corrupt weight file ({exc})") from exc
    try:
        return NetworkParams(weights, biases, mean.astype(np.float64), std.astype(np.float64))
    except ValueError as exc:
        raise WeightFileError(f"{path}: {exc}") from exc


class CrdPredictor:
    """Online residual estimate for the MPC reference."""

    def __init__(self, params, inertia):
        self.params = params
        self.inertia = np.asarray(inertia, dtype=float)

    def outputs(self, features):
        return forward(self.params, features)

    def residual(self, features, d):
        return residual_from_outputs(self.outputs(features), d, self.inertia)
