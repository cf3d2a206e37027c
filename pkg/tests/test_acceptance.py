"""Acceptance suite: each test prints one ACCEPTANCE pass/fail line."""

import math
import time
from dataclasses import replace
from typing import NamedTuple

import numpy as np
import pytest
from conftest import teacher_dataset

from thrustwalk.crd import NetworkParams, loss_and_grad, save_weights
from thrustwalk.dynamics import BodyState, Simulator, ThrusterCommand
from thrustwalk.experiments import LEGS, LOG_COLUMNS, run_ab
from thrustwalk.model import SimConfig, default_model, standing_posture
from thrustwalk.mpc import (MpcConfig, MpcProblem, ThrusterMpc, build_prediction, discretize,
                            linearize, solve_qp)
from thrustwalk.rotation import euler_to_quat
from thrustwalk.trainer import (TrainConfig, collect, collect_rollout, contact_accuracy, evaluate_rmse,
                                train)
from thrustwalk.config import validate_config
from test_crd import random_batch

INERTIA = np.diag([0.023, 0.046, 0.058])


# 1

def test_gradient_correctness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    p = NetworkParams.init(11, rng.normal(size=21), rng.uniform(0.5, 2.0, size=21))
    for name in p.biases:
        p.biases[name] = rng.normal(scale=0.1, size=p.biases[name].shape)
    batch = random_batch(rng, B=16)
    _, _, grads = loss_and_grad(p, batch, 0.3, INERTIA)
    arrays = dict(p.arrays())
    keys = list(arrays)
    sizes = np.array([arrays[k].size for k in keys])
    flat = rng.choice(sizes.sum(), size=100, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    h = 1e-5
    errors = []
    for f in flat:
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        arr = arrays[keys[k]]
        idx = np.unravel_index(f - offsets[k], arr.shape)
        orig = arr[idx]
        arr[idx] = orig + h
        lp = loss_and_grad(p, batch, 0.3, INERTIA, compute_grad=False)[0]
        arr[idx] = orig - h
        lm = loss_and_grad(p, batch, 0.3, INERTIA, compute_grad=False)[0]
        arr[idx] = orig
        fd, an = (lp - lm) / (2 * h), grads[keys[k]][idx]
        errors.append(abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    elapsed = time.perf_counter() - t0
    worst = max(errors)
    ok = worst < 1e-5 and elapsed < 30.0
    criterion(1, ok, f"max relative error {worst:.2e} over 100 parameters, {elapsed:.1f} s")
    assert ok


# 2

def single_input_problem(rng, model, cfg):
    """H=2 problem with one thruster free, so a 2-D grid covers the box."""
    A_c, B_c = linearize(model, cfg)
    A_d, B_d = discretize(A_c, B_c, cfg.dt)
    i = int(rng.integers(4))
    A_qp, B_qp = build_prediction(A_d, B_d[:, [i]], 2)
    x0 = np.concatenate([rng.normal(scale=0.05, size=3), rng.normal(scale=0.5, size=3)])
    x_r = np.concatenate([rng.normal(scale=0.05, size=3), rng.normal(scale=0.5, size=3)] * 2)
    Q = np.diag(rng.uniform(1.0, 400.0, size=6))
    R = np.diag(rng.uniform(0.01, 1.0, size=1))
    lb = np.full(2, -cfg.v0[i])
    ub = np.full(2, cfg.u_max - cfg.v0[i])
    return MpcProblem(A_qp, B_qp, x0, x_r, np.kron(np.eye(2), Q), np.kron(np.eye(2), R), lb, ub)


def test_qp_oracle(criterion):
    rng = np.random.default_rng(7)
    model, cfg = default_model(), MpcConfig()
    step = 0.01 * cfg.u_max
    worst_gap, worst_dist_excess, worst_kkt, worst_interior, n_interior = 0.0, 0.0, 0.0, 0.0, 0
    for _ in range(50):
        prob = single_input_problem(rng, model, cfg)
        sol = solve_qp(prob)
        worst_kkt = max(worst_kkt, sol.kkt_residual)
        grid = [np.arange(lo, hi + 1e-12, step) for lo, hi in zip(prob.lb, prob.ub)]
        U = np.array(np.meshgrid(*grid, indexing="ij")).reshape(2, -1).T
        E = (prob.A_qp @ prob.x0)[None, :] + U @ prob.B_qp.T - prob.x_r[None, :]
        J = np.einsum("ij,jk,ik->i", E, prob.Q_bar, E) + np.einsum("ij,jk,ik->i", U, prob.R_bar, U)
        k = int(np.argmin(J))
        J_star = prob.objective(sol.u)
        worst_gap = max(worst_gap, J_star - J[k])
        lam_min = np.linalg.eigvalsh(prob.hessian()).min()
        bound = math.sqrt(2 * max(J[k] - J_star, 0.0) / lam_min)
        worst_dist_excess = max(worst_dist_excess, np.max(np.abs(sol.u - U[k])) - bound)
        B, Qb = prob.B_qp, prob.Q_bar
        u_free = -np.linalg.solve(B.T @ Qb @ B + prob.R_bar, B.T @ Qb @ (prob.A_qp @ prob.x0 - prob.x_r))
        if np.all(u_free > prob.lb) and np.all(u_free < prob.ub):
            n_interior += 1
            worst_interior = max(worst_interior, np.max(np.abs(sol.u - u_free)))
    # H = 10 timing on the controller's own problem
    mpc = ThrusterMpc(model, cfg)
    times = []
    for _ in range(200):
        x0 = np.concatenate([rng.normal(scale=0.1, size=3), rng.normal(scale=1.0, size=3)])
        r = rng.normal(scale=10.0, size=3)
        t = time.perf_counter()
        mpc.solve(x0, r)
        times.append(time.perf_counter() - t)
    median_ms = 1e3 * float(np.median(times))
    ok = (worst_gap <= 1e-12 and worst_dist_excess <= 1e-9 and worst_kkt < 1e-6 and worst_interior < 1e-8
          and n_interior > 0 and median_ms < 1.0)
    criterion(2, ok, f"grid gap {worst_gap:.1e}, kkt {worst_kkt:.1e}, interior err {worst_interior:.1e} "
                     f"({n_interior}/50 interior), H=10 median {median_ms:.3f} ms")
    assert ok


# 3

def test_prediction_oracle(criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        H = int(rng.integers(1, 21))
        A = np.eye(6) + 0.1 * rng.normal(size=(6, 6))
        B = rng.normal(size=(6, 4))
        x0, us = rng.normal(size=6), rng.normal(size=(H, 4))
        A_qp, B_qp = build_prediction(A, B, H)
        stacked = A_qp @ x0 + B_qp @ us.ravel()
        x, steps = x0, []
        for u in us:
            x = A @ x + B @ u
            steps.append(x)
        ref = np.concatenate(steps)
        worst = max(worst, float(np.max(np.abs(stacked - ref) / np.maximum(1.0, np.abs(ref)))))
    ok = worst <= 1e-12
    criterion(3, ok, f"max error {worst:.1e} over 100 systems, H <= 20")
    assert ok


# 4 (the trained weights feed 5 and 9)

@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    cfg = validate_config({"scenario": "collect"})
    model = cfg.robot_model()
    t0 = time.perf_counter()
    ds = collect(cfg.collect_config(), model=model, sim_cfg=cfg.sim_config(), mpc_cfg=cfg.mpc_config(),
                 gait_cfg=cfg.gait_config())
    t_collect = time.perf_counter() - t0
    res = train(ds, cfg.train_config(), model.inertia)
    elapsed = time.perf_counter() - t0
    held = ds.held_out()
    report = evaluate_rmse(res.params, held, model.inertia)
    weights = tmp_path_factory.mktemp("weights") / "weights.npz"
    save_weights(res.params, weights)
    return dict(cfg=cfg, model=model, dataset=ds, params=res.params, report=report, weights=weights,
                elapsed=elapsed, t_collect=t_collect, accuracy=contact_accuracy(res.params, held))


def test_residual_learning_ordering(criterion, pipeline):
    rep = pipeline["report"]
    gain = rep.relative_improvement
    ok = bool(np.all(rep.augmented < rep.nominal) and np.argmax(gain) == 0 and pipeline["elapsed"] <= 900)
    criterion(4, ok, "held-out RMSE nominal/augmented "
              + ", ".join(f"{a} {n:.2f}/{g:.2f}" for a, n, g in zip(("roll", "pitch", "yaw"), rep.nominal,
                                                                     rep.augmented))
              + f"; relative gain {np.round(gain, 3).tolist()}; pipeline {pipeline['elapsed']:.0f} s")
    assert ok


def test_contact_accuracy_held_out(pipeline):
    assert pipeline["accuracy"] > 0.95


# 5 and 9: paired A/B runs with the trained weights

class AB(NamedTuple):
    cfg: object
    result: object
    seconds: float


def ab_run(cfg, out):
    t0 = time.perf_counter()
    res = run_ab(cfg, out)
    return AB(cfg, res, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def push_ab(pipeline, tmp_path_factory):
    cfg = validate_config({"scenario": "push-recovery", "weights": str(pipeline["weights"])})
    return ab_run(cfg, tmp_path_factory.mktemp("push"))


@pytest.fixture(scope="session")
def gait_ab(pipeline, tmp_path_factory):
    cfg = validate_config({"scenario": "normal-gait", "weights": str(pipeline["weights"])})
    return ab_run(cfg, tmp_path_factory.mktemp("gait"))


def test_push_recovery(criterion, push_ab):
    res, elapsed = push_ab.result, push_ab.seconds
    s = res.summary()
    n, a = s["nominal"], s["augmented"]
    ok = s["augmented_recovers_faster"] and elapsed / 2 < 120.0
    criterion(5, ok, f"recovery time nominal {n['recovery_time']} (diverged {n['diverged']}), "
                     f"augmented {a['recovery_time']} (diverged {a['diverged']}); "
                     f"{elapsed / 2:.0f} s per scenario")
    assert ok


# 6

@pytest.fixture(scope="session")
def zero_ab(tmp_path_factory):
    d = tmp_path_factory.mktemp("zero")
    save_weights(NetworkParams.zeros(), d / "zero.npz")
    cfg = validate_config({"scenario": "normal-gait", "duration": 10.0, "weights": str(d / "zero.npz")})
    return ab_run(cfg, d / "ab")


def test_zero_residual_equivalence(criterion, zero_ab):
    n, a = zero_ab.result.nominal.log.table(), zero_ab.result.augmented.log.table()
    cols = [LOG_COLUMNS.index(f"thrust_{leg}") for leg in LEGS]
    ok = n.shape == a.shape and n[:, cols].tobytes() == a[:, cols].tobytes() and n[-1, 0] >= 10.0 - 1e-9
    criterion(6, ok, f"{n.shape[0]} steps, thruster commands bitwise identical: {ok}")
    assert ok


# 9

def test_thruster_effort_ordering(criterion, gait_ab):
    res = gait_ab.result
    fn, fa = res.nominal.report.mean_thruster_force, res.augmented.report.mean_thruster_force
    ok = fa <= fn and not res.augmented.report.diverged
    criterion(9, ok, f"mean thruster force nominal {fn:.4f} N, augmented {fa:.4f} N")
    assert ok


# 10

def test_transfer_freeze(criterion):
    ds = teacher_dataset(n=256)
    init = NetworkParams.init(5)
    cfg = TrainConfig(epochs=30, batch_size=32, freeze=("contact_head",))
    res = train(ds, cfg, INERTIA, init=init)
    unchanged = all(getattr(res.params, part)["contact_head"].tobytes() == getattr(init, part)["contact_head"].tobytes()
                    for part in ("weights", "biases"))
    l0 = loss_and_grad(init, ds.batch(), 0.0, INERTIA, compute_grad=False)[1][0]
    l1 = loss_and_grad(res.params, ds.batch(), 0.0, INERTIA, compute_grad=False)[1][0]
    ok = unchanged and l1 <= 0.5 * l0
    criterion(10, ok, f"contact head bitwise unchanged: {unchanged}; L_GRF {l0:.3g} -> {l1:.3g}")
    assert ok


# 7

def free_rotation_drift():
    m = replace(default_model(), gravity=0.0)
    q0 = standing_posture(m, 0.26)
    state = BodyState(position=np.array([0.0, 0.0, 5.0]), orientation=euler_to_quat(np.array([0.3, -0.2, 0.1])),
                      omega=np.array([1.2, -0.7, 2.5]))
    sim = Simulator(m, SimConfig(), state, q0)

    def world_momentum():
        return sim.state.rotation @ (m.inertia @ sim.state.omega)

    L0 = world_momentum()
    for _ in range(1000):
        sim.step(ThrusterCommand.zeros(), q0)
    return float(np.linalg.norm(world_momentum() - L0) / np.linalg.norm(L0))


def contact_violations(table, mu):
    bad = 0
    for leg in LEGS:
        F = table[:, [LOG_COLUMNS.index(f"grf_{leg}_{a}") for a in "xyz"]]
        c = table[:, LOG_COLUMNS.index(f"contact_{leg}")]
        fn, ft = F[:, 2], np.hypot(F[:, 0], F[:, 1])
        bad += int(np.count_nonzero(fn < 0))
        bad += int(np.count_nonzero(ft > mu * fn * (1 + 1e-12) + 1e-12))
        bad += int(np.count_nonzero((c == 0) & np.any(F != 0, axis=1)))
    return bad


def all_runs(push_ab, gait_ab, zero_ab):
    return {"push": push_ab, "gait": gait_ab, "zero": zero_ab}


def test_physics_invariants(criterion, push_ab, gait_ab, zero_ab):
    drift = free_rotation_drift()
    mu = SimConfig().friction_mu
    n_steps, bad = 0, 0
    for ab in all_runs(push_ab, gait_ab, zero_ab).values():
        for r in (ab.result.nominal, ab.result.augmented):
            table = r.log.table()
            n_steps += table.shape[0]
            bad += contact_violations(table, mu)
    ok = drift < 1e-3 and bad == 0
    criterion(7, ok, f"momentum drift {100 * drift:.2e} % over 1000 steps; "
                     f"{bad} contact violations in {n_steps} logged steps")
    assert ok


# 8

def test_determinism(criterion, pipeline, push_ab, gait_ab, zero_ab, tmp_path):
    mismatches = []
    for name, first in all_runs(push_ab, gait_ab, zero_ab).items():
        again = ab_run(first.cfg, tmp_path / name).result
        for x, y in ((first.result.nominal, again.nominal), (first.result.augmented, again.augmented)):
            for f in ("log.csv", "metrics.json"):
                if (x.out_dir / f).read_bytes() != (y.out_dir / f).read_bytes():
                    mismatches.append(f"{name}/{x.out_dir.name}/{f}")
    # the pipeline: every rollout is a pure function of (seed, rollout index)
    cfg, ds = pipeline["cfg"], pipeline["dataset"]
    for r in (int(ds.rollout_id[0]), int(ds.rollout_id[-1])):
        part = collect_rollout(cfg.collect_config(), r, pipeline["model"], cfg.sim_config(), cfg.mpc_config(),
                               cfg.gait_config())
        sel = ds.rollout_id == r
        if part.features.tobytes() != ds.features[sel].tobytes() or part.target.tobytes() != ds.target[sel].tobytes():
            mismatches.append(f"rollout {r}")
    ok = not mismatches
    criterion(8, ok, "byte-identical reruns of every scenario log/report and sampled rollouts"
              if ok else f"mismatches: {mismatches}")
    assert ok
