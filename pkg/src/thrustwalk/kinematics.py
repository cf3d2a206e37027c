"""Analytic kinematics of the 3-DOF legs (hip frontal, hip sagittal, knee).

Axis convention, hip frame: x forward, y left, z up.  The sagittal chain lies
in a plane that the hip frontal joint ``q_h`` rotates about the x axis.  With
all joints at zero the leg hangs straight down; positive ``q_s``/``q_k`` swing
the distal links forward.
"""

import math
from typing import NamedTuple

import numpy as np

IK_TOL = 1e-6
IK_MAX_ITER = 50
IK_DAMPING = 1e-4


class IKError(RuntimeError):
    def __init__(self, residual, iterations):
        super().__init__(f"leg IK did not converge: residual {residual:.3e} m after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


class IKSolution(NamedTuple):
    q: np.ndarray
    reachable: bool
    iterations: int
    residual: float


def chain_fk(q, l_upper, l_lower):
    """Foot position of the chain in the hip frame."""
    qh, qs, qk = q
    xs = l_upper * np.sin(qs) + l_lower * np.sin(qs + qk)
    zs = -l_upper * np.cos(qs) - l_lower * np.cos(qs + qk)
    return np.array([xs, -np.sin(qh) * zs, np.cos(qh) * zs])


def knee_position(q, l_upper):
    qh, qs, _ = q
    zs = -l_upper * np.cos(qs)
    return np.array([l_upper * np.sin(qs), -np.sin(qh) * zs, np.cos(qh) * zs])


def chain_jacobian(q, l_upper, l_lower):
    qh, qs, qk = q
    s1, c1 = np.sin(qs), np.cos(qs)
    s12, c12 = np.sin(qs + qk), np.cos(qs + qk)
    sh, ch = np.sin(qh), np.cos(qh)
    xs = l_upper * s1 + l_lower * s12
    zs = -l_upper * c1 - l_lower * c12
    dx_s, dx_k = l_upper * c1 + l_lower * c12, l_lower * c12
    dz_s, dz_k = xs, l_lower * s12
    return np.array([
        [0.0, dx_s, dx_k],
        [-ch * zs, -sh * dz_s, -sh * dz_k],
        [-sh * zs, ch * dz_s, ch * dz_k],
    ])


def leg_fk(q, model, leg=0):
    """Foot position in the hip frame of ``leg`` (all legs share the geometry)."""
    return chain_fk(q, model.l_upper, model.l_lower)


def leg_jacobian(q, model, leg=0):
    return chain_jacobian(q, model.l_upper, model.l_lower)


def clamp_to_workspace(p, model, margin=1e-9):
    """Scale ``p`` radially into the reachable shell; returns (point, was_reachable)."""
    p = np.asarray(p, dtype=float)
    r = float(np.linalg.norm(p))
    r_min = abs(model.l_upper - model.l_lower) + margin
    r_max = model.l_upper + model.l_lower
    if r_min <= r <= r_max:
        return p, True
    if r < 1e-12:
        return np.array([0.0, 0.0, -r_min]), False
    return p * (min(max(r, r_min), r_max) / r), False


def closed_form_ik(p, model, knee_sign=1.0):
    """Closed-form joint angles for ``p`` with the knee bent toward ``knee_sign``.

    Returns the in-limit candidate (foot below or above the hip) or None.
    """
    x, y, z = np.asarray(p, dtype=float)
    l1, l2 = model.l_upper, model.l_lower
    rho_yz = math.hypot(y, z)
    for zs in (-rho_yz, rho_yz):
        if abs(zs) < 1e-12:
            qh = 0.0
        else:
            qh = math.atan2(-y / zs, z / zs)
        c = (x * x + zs * zs - l1 * l1 - l2 * l2) / (2 * l1 * l2)
        qk = math.copysign(math.acos(min(1.0, max(-1.0, c))), knee_sign)
        a, b = l1 + l2 * math.cos(qk), l2 * math.sin(qk)
        qs = math.atan2(x, -zs) - math.atan2(b, a)
        qs = (qs + math.pi) % (2 * math.pi) - math.pi
        q = np.array([qh, qs, qk])
        if np.all(q >= model.q_min) and np.all(q <= model.q_max):
            return q
    return None


def leg_ik(p_target, q_seed, model, leg=0, tol=IK_TOL, max_iter=IK_MAX_ITER, damping=IK_DAMPING):
    """Damped least-squares Newton iteration for the foot position.

    Unreachable targets are projected onto the workspace and solved with
    ``reachable=False``.  If the iteration from ``q_seed`` does not converge it
    (or stalls on a joint limit) it is restarted once from the closed-form
    solution on the seed's knee branch; :class:`IKError` is raised if that
    fails too.
    """
    q_seed = np.asarray(q_seed, dtype=float)
    target, in_shell = clamp_to_workspace(p_target, model)
    try:
        sol = _dls(p_target, q_seed, model, tol, max_iter, damping)
        if sol.reachable or not in_shell:
            return sol
    except IKError:
        sol = None
    q0 = closed_form_ik(target, model, knee_sign=1.0 if q_seed[2] >= 0 else -1.0)
    if q0 is None:
        if sol is None:
            raise IKError(float(np.linalg.norm(target - chain_fk(q_seed, model.l_upper, model.l_lower))),
                          max_iter)
        return sol
    retry = _dls(p_target, q0, model, tol, max_iter, damping)
    if sol is not None and sol.residual < retry.residual:
        return sol
    return retry


def _dls(p_target, q_seed, model, tol, max_iter, damping):
    target, reachable = clamp_to_workspace(p_target, model)
    q = np.clip(np.asarray(q_seed, dtype=float).copy(), model.q_min, model.q_max)
    l1, l2 = model.l_upper, model.l_lower
    err = target - chain_fk(q, l1, l2)
    res = float(np.linalg.norm(err))
    it = 0
    while res >= tol:
        if it >= max_iter:
            raise IKError(res, it)
        J = chain_jacobian(q, l1, l2)
        dq = np.linalg.solve(J.T @ J + damping**2 * np.eye(3), J.T @ err)
        step = float(np.linalg.norm(dq))
        if step > 0.5:
            dq *= 0.5 / step
        q_new = np.clip(q + dq, model.q_min, model.q_max)
        err_new = target - chain_fk(q_new, l1, l2)
        res_new = float(np.linalg.norm(err_new))
        it += 1
        pinned = np.any((q_new <= model.q_min) | (q_new >= model.q_max))
        if pinned and res_new >= res - 1e-12:
            # stalled against a joint limit: best reachable pose
            return IKSolution(q if res <= res_new else q_new, False, it, min(res, res_new))
        q, err, res = q_new, err_new, res_new
    return IKSolution(q, reachable, it, res)
