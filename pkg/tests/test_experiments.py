import json
import math

import numpy as np
import pytest
import yaml

from thrustwalk.cli import EXIT_DIVERGED, EXIT_ERROR, EXIT_INVALID, EXIT_OK, main
from thrustwalk.config import ConfigError, load_config, validate_config
from thrustwalk.crd import NetworkParams, load_weights, save_weights
from thrustwalk.experiments import (LOG_COLUMNS, METRIC_COLUMNS, LogError, compute_metrics, read_log,
                                    recovery_time, run_ab, run_scenario)
from thrustwalk.model import default_model


def synthetic_log(n=2001, dt=1e-3, roll=None, thrust=None):
    t = np.arange(n) * dt
    cols = {c: np.zeros(n) for c in LOG_COLUMNS}
    cols["t"] = t
    if roll is not None:
        cols["roll"] = roll(t)
    if thrust is not None:
        for leg in ("FL", "FR", "RL", "RR"):
            cols[f"thrust_{leg}"] = np.full(n, thrust)
    return cols


class TestConfig:
    def test_minimal(self):
        cfg = validate_config({"scenario": "normal-gait"})
        assert cfg.duration == 6.0 and cfg.controller == "nominal" and cfg.mpc.horizon == 10
        assert cfg.hash() == validate_config({"scenario": "normal-gait"}).hash()

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("")
        assert load_config(path).scenario == "push-recovery"

    def test_push_defaults(self):
        p = validate_config({"scenario": "push-recovery"}).push
        assert (p.magnitude, p.start, p.duration) == (15.0, 2.0, 0.5)

    def test_negative_duration_names_field(self):
        with pytest.raises(ConfigError, match="duration"):
            validate_config({"duration": -1.0})

    def test_every_error_listed(self):
        with pytest.raises(ConfigError) as exc:
            validate_config({"duration": -1.0, "seed": -3, "mpc": {"horizon": 0}})
        msg = str(exc.value)
        assert "duration" in msg and "seed" in msg and "horizon" in msg

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="colour"):
            validate_config({"colour": "red"})
        with pytest.raises(ConfigError, match="speed"):
            validate_config({"robot": {"speed": 1}})

    def test_same_file_same_hash(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump({"scenario": "cat-gait", "seed": 3, "duration": 2.0}))
        assert load_config(path).hash() == load_config(path).hash()
        assert load_config(path).hash() != validate_config({"scenario": "cat-gait", "seed": 4}).hash()

    def test_cat_gait_forces_gait(self):
        assert validate_config({"scenario": "cat-gait"}).gait.gait == "cat"

    def test_eval_rmse_needs_weights(self):
        with pytest.raises(ConfigError):
            validate_config({"scenario": "eval-rmse"})


class TestMetrics:
    def test_zero_roll(self):
        rep = compute_metrics(synthetic_log(), 1.0, push_end=0.5, gait_period=0.5)
        assert rep.roll_rmse == 0.0 and rep.recovered and rep.recovery_time == pytest.approx(0.5)

    def test_thrusters_off(self):
        assert compute_metrics(synthetic_log(), 0.01).mean_thruster_force == 0.0

    def test_thrust_sum(self):
        rep = compute_metrics(synthetic_log(thrust=0.5), 2.0)
        assert rep.mean_thruster_force == pytest.approx(4 * 2.0 * 0.25)

    def test_sinusoid_rmse(self):
        A = 0.2
        cols = synthetic_log(n=100001, dt=1e-4, roll=lambda t: A * np.sin(2 * np.pi * 2.0 * t))
        # whole number of periods so the discrete mean of sin^2 is exactly 1/2
        cols = {k: v[:-1] for k, v in cols.items()}
        assert compute_metrics(cols, 1.0).roll_rmse == pytest.approx(A / math.sqrt(2), abs=1e-6)

    def test_recovery_after_push(self):
        roll = lambda t: np.where(t < 1.2, 0.3, 0.0)  # noqa: E731
        rep = compute_metrics(synthetic_log(roll=roll), 1.0, push_end=1.0, gait_period=0.5)
        assert rep.recovery_time == pytest.approx(1.2) and rep.recovery_time >= 1.0

    def test_no_recovery_when_window_not_covered(self):
        roll = lambda t: np.where(t < 1.8, 0.3, 0.0)  # noqa: E731
        assert not compute_metrics(synthetic_log(roll=roll), 1.0, push_end=1.0, gait_period=0.5).recovered

    def test_recovery_time_requires_sustained(self):
        t = np.arange(0, 3, 0.01)
        roll = np.zeros_like(t)
        roll[121:130] = 1.0
        assert recovery_time(t, roll, 1.0, 0.1, 0.4) == t[130]

    def test_omega_dot_rmse(self):
        cols = synthetic_log()
        cols["omega_dot_x"] = np.full(len(cols["t"]), 3.0)
        cols["residual_x"] = np.full(len(cols["t"]), 1.0)
        rep = compute_metrics(cols, 1.0)
        assert rep.omega_dot_rmse_nominal[0] == pytest.approx(3.0)
        assert rep.omega_dot_rmse_augmented[0] == pytest.approx(2.0)

    def test_truncated_log(self):
        cols = synthetic_log()
        del cols["thrust_RR"]
        with pytest.raises(LogError, match="thrust_RR"):
            compute_metrics(cols, 1.0)


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = validate_config({"scenario": "push-recovery", "duration": 3.0, "seed": 2,
                           "position_offset_range": (-0.01, 0.01)})
    return cfg, run_scenario(cfg, out)


class TestRunScenario:
    def test_outputs(self, short_run):
        cfg, res = short_run
        for name in ("log.csv", "metrics.json", "config.yaml"):
            assert (res.out_dir / name).exists()
        assert load_config(res.out_dir / "config.yaml").hash() == cfg.hash()
        report = json.loads((res.out_dir / "metrics.json").read_text())
        assert report["config_hash"] == cfg.hash() and "criteria" in report

    def test_metrics_recomputed_from_csv(self, short_run):
        cfg, res = short_run
        cols = read_log(res.out_dir / "log.csv")
        t, roll = cols["t"], cols["roll"]
        push_end = cfg.push.start + cfg.push.duration
        # independent recomputation
        c_f = default_model().c_f
        v = np.column_stack([cols[f"thrust_{leg}"] for leg in ("FL", "FR", "RL", "RR")])
        force = float(np.mean((c_f * v * v).sum(axis=1)))
        ok = np.abs(roll) < math.radians(cfg.recovery_threshold_deg)
        t_rec = None
        for i in np.nonzero(t >= push_end)[0]:
            win = (t >= t[i]) & (t < t[i] + cfg.gait.period - 1e-12)
            if t[i] + cfg.gait.period <= t[-1] + 1e-12 and ok[win].all():
                t_rec = t[i]
                break
        report = json.loads((res.out_dir / "metrics.json").read_text())
        assert abs(report["mean_thruster_force"] - force) <= 1e-9
        assert abs(report["roll_rmse"] - math.sqrt(np.mean(roll ** 2))) <= 1e-9
        if t_rec is None:
            assert not report["recovered"]
        else:
            assert abs(report["recovery_time"] - t_rec) <= 1e-9
        for k, a in enumerate("xyz"):
            err = cols[f"omega_dot_{a}"] - cols[f"omega_dot_nominal_{a}"]
            assert abs(report["omega_dot_rmse_nominal"][k] - math.sqrt(np.mean(err ** 2))) <= 1e-9

    def test_csv_matches_memory(self, short_run):
        _, res = short_run
        cols = read_log(res.out_dir / "log.csv")
        assert np.array_equal(np.column_stack([cols[c] for c in LOG_COLUMNS]), res.log.table())

    def test_missing_weights(self, tmp_path):
        cfg = validate_config({"scenario": "normal-gait", "controller": "crd-augmented",
                               "weights": str(tmp_path / "none.npz")})
        with pytest.raises(FileNotFoundError):
            run_scenario(cfg)

    def test_divergence_reported(self):
        cfg = validate_config({"scenario": "push-recovery", "duration": 3.0,
                               "push": {"magnitude": 400.0, "start": 0.5, "duration": 0.5}})
        rep = run_scenario(cfg).report
        assert rep.diverged and rep.divergence_time is not None and not rep.passed

    def test_read_log_missing_column(self, tmp_path):
        path = tmp_path / "log.csv"
        path.write_text("t,roll\n0,0\n")
        with pytest.raises(LogError, match="pos_x"):
            read_log(path)

    def test_metric_columns_logged(self):
        assert set(METRIC_COLUMNS) <= set(LOG_COLUMNS)


def test_zero_network_ab_identical(tmp_path):
    w = tmp_path / "zero.npz"
    save_weights(NetworkParams.zeros(), w)
    cfg = validate_config({"scenario": "push-recovery", "duration": 3.0, "weights": str(w)})
    res = run_ab(cfg, tmp_path / "ab")
    n, a = res.nominal.log.table(), res.augmented.log.table()
    thrust = [LOG_COLUMNS.index(f"thrust_{leg}") for leg in ("FL", "FR", "RL", "RR")]
    assert n[:, thrust].tobytes() == a[:, thrust].tobytes()
    summary = json.loads((tmp_path / "ab" / "ab_summary.json").read_text())
    assert summary["augmented_uses_less_thrust"]


class TestCli:
    def write_cfg(self, path, **kw):
        base = {"duration": 1.0, "collect": {"n_rollouts": 2, "rollout_duration": 1.0},
                "train": {"epochs": 1, "batch_size": 64, "contact_warmup_epochs": 0,
                          "contact_calibration_epochs": 0}}
        base.update(kw)
        path.write_text(yaml.safe_dump(base))
        return str(path)

    def test_pipeline(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path / "c.yaml")
        assert main(["collect", "--config", cfg, "--out", str(tmp_path / "data"), "--seed", "1"]) == EXIT_OK
        ds = tmp_path / "data" / "dataset.csv"
        assert ds.exists() and (tmp_path / "data" / "dataset.csv.manifest.json").exists()
        assert main(["train", "--config", cfg, "--dataset", str(ds), "--out", str(tmp_path / "tr")]) == EXIT_OK
        w = tmp_path / "tr" / "weights.npz"
        load_weights(w)
        assert len(json.loads((tmp_path / "tr" / "history.json").read_text())) == 1
        assert main(["eval-rmse", "--config", cfg, "--dataset", str(ds), "--weights", str(w),
                     "--out", str(tmp_path / "ev")]) == EXIT_OK
        rmse = json.loads((tmp_path / "ev" / "rmse.json").read_text())
        assert set(rmse["nominal"]) == {"roll", "pitch", "yaw"}
        assert main(["run", "--config", cfg, "--controller", "crd", "--weights", str(w),
                     "--out", str(tmp_path / "run")]) == EXIT_OK
        saved = load_config(tmp_path / "run" / "config.yaml")
        assert saved.controller == "crd-augmented" and saved.weights == str(w)

    def test_seed_flag(self, tmp_path):
        cfg = self.write_cfg(tmp_path / "c.yaml", scenario="normal-gait")
        assert main(["run", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "r")]) == EXIT_OK
        assert load_config(tmp_path / "r" / "config.yaml").seed == 7

    def test_invalid_config(self, tmp_path, capsys):
        cfg = self.write_cfg(tmp_path / "c.yaml", duration=-2.0)
        assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == EXIT_INVALID
        assert "duration" in capsys.readouterr().err

    def test_missing_weights(self, tmp_path):
        cfg = self.write_cfg(tmp_path / "c.yaml", scenario="normal-gait")
        rc = main(["run", "--config", cfg, "--controller", "crd", "--weights", str(tmp_path / "x.npz"),
                   "--out", str(tmp_path)])
        assert rc == EXIT_ERROR

    def test_divergence_as_error(self, tmp_path):
        cfg = self.write_cfg(tmp_path / "c.yaml", duration=2.0, divergence_is_error=True,
                             push={"magnitude": 400.0, "start": 0.5, "duration": 0.5})
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "r")]) == EXIT_DIVERGED
        cfg = self.write_cfg(tmp_path / "d.yaml", duration=2.0,
                             push={"magnitude": 400.0, "start": 0.5, "duration": 0.5})
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "s")]) == EXIT_OK

    def test_run_rejects_offline_scenario(self, tmp_path):
        cfg = self.write_cfg(tmp_path / "c.yaml", scenario="collect")
        assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == EXIT_INVALID

    def test_requires_subcommand(self):
        with pytest.raises(SystemExit):
            main([])
