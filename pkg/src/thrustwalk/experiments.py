"""Scenario runner, trajectory logs and metrics."""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RUN_SCENARIOS, dump_config
from .crd import CrdPredictor, load_weights
from .dynamics import SimulationDiverged, nominal_angular_accel
from .loop import ClosedLoop

LEGS = ("FL", "FR", "RL", "RR")


def log_columns():
    cols = ["t"]
    cols += [f"pos_{a}" for a in "xyz"]
    cols += ["roll", "pitch", "yaw"]
    cols += [f"omega_{a}" for a in "xyz"]
    cols += [f"omega_dot_{a}" for a in "xyz"]
    cols += [f"contact_{leg}" for leg in LEGS]
    cols += [f"grf_{leg}_{a}" for leg in LEGS for a in "xyz"]
    cols += [f"thrust_{leg}" for leg in LEGS]
    cols += [f"q_{leg}_{j}" for leg in LEGS for j in ("hip", "shoulder", "knee")]
    # controller side
    cols += [f"omega_dot_nominal_{a}" for a in "xyz"]
    cols += [f"residual_{a}" for a in "xyz"]
    cols += ["qp_converged", "qp_iterations", "qp_kkt"]
    return cols


LOG_COLUMNS = log_columns()


class LogError(ValueError):
    pass


class TrajectoryLog:
    """One row per simulation step, columns as in ``LOG_COLUMNS``."""

    def __init__(self):
        self.rows = []

    def append(self, loop, sim):
        s = sim.state
        qp = loop.mpc.last
        row = np.concatenate([
            [sim.t], s.position, s.euler, s.omega, sim.omega_dot,
            sim.contact.in_contact.astype(float), sim.contact.F.reshape(-1),
            sim.thrust, sim.q.reshape(-1),
            nominal_angular_accel(loop.model, sim.thrust), loop.residual,
            [float(qp.converged) if qp else 1.0, float(qp.iterations) if qp else 0.0,
             float(qp.kkt_residual) if qp else 0.0],
        ])
        self.rows.append(row)

    def table(self):
        if not self.rows:
            return np.zeros((0, len(LOG_COLUMNS)))
        return np.vstack(self.rows)

    def write(self, path):
        write_log(self.table(), path)


def write_log(table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for row in table:
            w.writerow([f"{x:.17g}" for x in row])


def read_log(path, required=LOG_COLUMNS):
    """Columns of a log CSV as a dict of arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None) or []
        rows = [[float(x) for x in r] for r in reader]
    missing = [c for c in required if c not in header]
    if missing:
        raise LogError(f"{path}: missing column(s) {', '.join(missing)}")
    table = np.array(rows, dtype=float).reshape(-1, len(header))
    return {c: table[:, i] for i, c in enumerate(header)}


def as_columns(table):
    return {c: table[:, i] for i, c in enumerate(LOG_COLUMNS)}


@dataclass
class MetricsReport:
    omega_dot_rmse_nominal: list
    omega_dot_rmse_augmented: list
    roll_rmse: float
    recovered: bool
    recovery_time: float | None
    mean_thruster_force: float
    diverged: bool = False
    divergence_time: float | None = None
    max_abs_roll_deg: float = 0.0
    config_hash: str = ""
    passed: bool | None = None
    criteria: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


METRIC_COLUMNS = ("t", "roll", "omega_dot_x", "omega_dot_y", "omega_dot_z", "thrust_FL", "thrust_FR",
                  "thrust_RL", "thrust_RR", "omega_dot_nominal_x", "omega_dot_nominal_y",
                  "omega_dot_nominal_z", "residual_x", "residual_y", "residual_z")


def recovery_time(t, roll, after, threshold, window):
    """First time >= ``after`` from which |roll| stays below ``threshold`` for ``window`` seconds.

    The window has to be covered by the log; returns None otherwise.
    """
    ok = np.abs(roll) < threshold
    idx = np.nonzero(t >= after - 1e-12)[0]
    if idx.size == 0:
        return None
    t_end = t[-1]
    # index of the next sample that breaks the run of ok samples
    n = len(t)
    next_bad = np.empty(n, dtype=int)
    nb = n
    for i in range(n - 1, -1, -1):
        if not ok[i]:
            nb = i
        next_bad[i] = nb
    for i in idx:
        if not ok[i]:
            continue
        if t[i] + window > t_end + 1e-12:
            return None
        j = next_bad[i]
        if j == n or t[j] >= t[i] + window - 1e-12:
            return float(t[i])
    return None


def compute_metrics(cols, c_f, push_end=0.0, gait_period=1.0 / 1.5, threshold_deg=5.0,
                    diverged=False, divergence_time=None, config_hash=""):
    """Metrics over a complete log given as a dict of columns."""
    missing = [c for c in METRIC_COLUMNS if c not in cols]
    if missing:
        raise LogError(f"log is missing column(s) {', '.join(missing)}")
    t = np.asarray(cols["t"])
    if t.size == 0:
        raise LogError("log is empty")
    roll = np.asarray(cols["roll"])
    od = np.column_stack([cols[f"omega_dot_{a}"] for a in "xyz"])
    nom = np.column_stack([cols[f"omega_dot_nominal_{a}"] for a in "xyz"])
    res = np.column_stack([cols[f"residual_{a}"] for a in "xyz"])
    v = np.column_stack([cols[f"thrust_{leg}"] for leg in LEGS])
    rmse_nom = np.sqrt(np.mean((od - nom) ** 2, axis=0))
    rmse_aug = np.sqrt(np.mean((od - nom - res) ** 2, axis=0))
    t_rec = None if diverged else recovery_time(t, roll, push_end, math.radians(threshold_deg), gait_period)
    return MetricsReport(
        omega_dot_rmse_nominal=[float(x) for x in rmse_nom],
        omega_dot_rmse_augmented=[float(x) for x in rmse_aug],
        roll_rmse=float(np.sqrt(np.mean(roll ** 2))),
        recovered=t_rec is not None,
        recovery_time=t_rec,
        mean_thruster_force=float(np.mean(np.sum(c_f * v ** 2, axis=1))),
        diverged=diverged,
        divergence_time=divergence_time,
        max_abs_roll_deg=float(np.degrees(np.max(np.abs(roll)))),
        config_hash=config_hash,
    )


@dataclass
class ScenarioResult:
    log: TrajectoryLog
    report: MetricsReport
    out_dir: Path | None = None


def build_predictor(cfg, model):
    if cfg.controller != "crd-augmented":
        return None
    if cfg.weights is None or not Path(cfg.weights).exists():
        raise FileNotFoundError(f"weight file not found: {cfg.weights}")
    return CrdPredictor(load_weights(cfg.weights), model.inertia)


def run_scenario(cfg, out_dir=None, predictor=None):
    """Closed-loop run for a push-recovery / cat-gait / normal-gait config."""
    if cfg.scenario not in RUN_SCENARIOS:
        raise ValueError(f"scenario {cfg.scenario!r} is not a closed-loop run")
    model = cfg.robot_model()
    if predictor is None:
        predictor = build_predictor(cfg, model)
    elif cfg.controller == "nominal":
        predictor = None
    rng = np.random.default_rng(cfg.seed)
    offset = rng.uniform(*cfg.position_offset_range, size=2)
    push = cfg.push_spec()
    log = TrajectoryLog()
    loop = ClosedLoop(model, cfg.sim_config(), cfg.gait_config(), cfg.mpc_config(), crd=predictor,
                      push=push, offset=offset, ctrl_dt=cfg.control_dt, log=log)
    diverged, t_div = False, None
    try:
        loop.run(cfg.duration)
    except SimulationDiverged as exc:
        diverged, t_div = True, exc.t
    report = compute_metrics(
        as_columns(log.table()), model.c_f, push_end=push.end if push else 0.0,
        gait_period=cfg.gait.period, threshold_deg=cfg.recovery_threshold_deg,
        diverged=diverged, divergence_time=t_div, config_hash=cfg.hash(),
    )
    report.criteria = scenario_criteria(cfg, report)
    report.passed = all(report.criteria.values())
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log.write(out_dir / "log.csv")
        (out_dir / "metrics.json").write_text(report.to_json())
        dump_config(cfg, out_dir / "config.yaml")
    return ScenarioResult(log, report, out_dir)


def scenario_criteria(cfg, report):
    crit = {"no_divergence": not report.diverged}
    if cfg.scenario == "push-recovery":
        push_end = cfg.push.start + cfg.push.duration
        crit["recovered"] = report.recovered
        crit["recovered_within_deadline"] = (report.recovered
                                             and report.recovery_time <= push_end + cfg.recovery_deadline)
    return crit


@dataclass
class ABResult:
    nominal: ScenarioResult
    augmented: ScenarioResult

    def summary(self):
        n, a = self.nominal.report, self.augmented.report
        inf = float("inf")
        tn = n.recovery_time if n.recovered else inf
        ta = a.recovery_time if a.recovered else inf
        return {
            "config_hash": n.config_hash,
            "nominal": {"recovered": n.recovered, "recovery_time": n.recovery_time, "diverged": n.diverged,
                        "mean_thruster_force": n.mean_thruster_force, "roll_rmse": n.roll_rmse},
            "augmented": {"recovered": a.recovered, "recovery_time": a.recovery_time, "diverged": a.diverged,
                          "mean_thruster_force": a.mean_thruster_force, "roll_rmse": a.roll_rmse},
            "augmented_recovers_faster": bool(a.recovered and ta < tn),
            "augmented_uses_less_thrust": bool(a.mean_thruster_force <= n.mean_thruster_force),
        }


def run_ab(cfg, out_dir=None, predictor=None):
    """Nominal and CRD-augmented runs of one config; the push and offset are shared."""
    sub = (lambda name: None) if out_dir is None else (lambda name: Path(out_dir) / name)
    nom = run_scenario(cfg.with_overrides(controller="nominal"), sub("nominal"))
    aug = run_scenario(cfg.with_overrides(controller="crd-augmented"), sub("crd"), predictor=predictor)
    res = ABResult(nom, aug)
    if out_dir is not None:
        (Path(out_dir) / "ab_summary.json").write_text(json.dumps(res.summary(), indent=2, sort_keys=True))
    return res
