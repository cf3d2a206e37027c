"""Command-line entry points: collect, train, eval-rmse, run."""

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RUN_SCENARIOS, ConfigError, dump_config, load_config, validate_config
from .crd import WeightFileError, load_weights, save_weights
from .trainer import (DatasetSchemaError, collect, contact_accuracy, evaluate_rmse, read_dataset, train,
                      write_dataset)

EXIT_OK, EXIT_ERROR, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3


def _resolve(args, scenario_default=None):
    """Config file (or defaults) with command-line overrides, validated once."""
    data = load_config(args.config).model_dump(mode="python") if args.config else {}
    if scenario_default and not args.config:
        data["scenario"] = scenario_default
    over = {"seed": args.seed, "out": args.out}
    if getattr(args, "controller", None):
        over["controller"] = "crd-augmented" if args.controller == "crd" else "nominal"
    over["weights"] = getattr(args, "weights", None)
    over["dataset"] = getattr(args, "dataset", None)
    data.update({k: v for k, v in over.items() if v is not None})
    return validate_config(data)


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_collect(args):
    cfg = _resolve(args, "collect")
    out = _out_dir(cfg)
    model = cfg.robot_model()
    ds = collect(cfg.collect_config(), model=model, sim_cfg=cfg.sim_config(), mpc_cfg=cfg.mpc_config(),
                 gait_cfg=cfg.gait_config())
    path = out / "dataset.csv"
    write_dataset(ds, path, seed=cfg.seed, config_hash=cfg.hash())
    dump_config(cfg, out / "config.yaml")
    print(f"wrote {len(ds)} samples ({len(ds.train_idx)} train, {len(ds.held_out_idx)} held out) to {path}")
    return EXIT_OK


def cmd_train(args):
    cfg = _resolve(args, "train")
    if cfg.dataset is None:
        raise ConfigError(["dataset: a dataset file is required (--dataset or config)"])
    out = _out_dir(cfg)
    model = cfg.robot_model()
    ds = read_dataset(cfg.dataset)
    init = load_weights(cfg.weights) if cfg.weights else None
    res = train(ds, cfg.train_config(), model.inertia, init=init)
    save_weights(res.params, out / "weights.npz")
    history = [{"loss": a, "l_grf": b, "l_contact": c} for a, b, c in res.history]
    (out / "history.json").write_text(json.dumps(history, indent=1))
    dump_config(cfg, out / "config.yaml")
    last = res.history[-1] if res.history else None
    print(f"wrote {out / 'weights.npz'}" + (f"; final loss {last[0]:.6g}" if last else ""))
    return EXIT_OK


def cmd_eval_rmse(args):
    cfg = _resolve(args, "eval-rmse")
    if cfg.dataset is None or cfg.weights is None:
        raise ConfigError(["dataset and weights are both required for eval-rmse"])
    out = _out_dir(cfg)
    model = cfg.robot_model()
    ds = read_dataset(cfg.dataset)
    part = ds.held_out() if len(ds.held_out_idx) else ds
    params = load_weights(cfg.weights)
    rep = evaluate_rmse(params, part, model.inertia)
    result = rep.as_dict()
    result["relative_improvement"] = dict(zip(("roll", "pitch", "yaw"), map(float, rep.relative_improvement)))
    result["contact_accuracy"] = contact_accuracy(params, part)
    result["passed"] = bool(all(rep.augmented < rep.nominal))
    result["config_hash"] = cfg.hash()
    (out / "rmse.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    dump_config(cfg, out / "config.yaml")
    for axis in ("roll", "pitch", "yaw"):
        print(f"{axis:5s} nominal {result['nominal'][axis]:.4f}  augmented {result['augmented'][axis]:.4f}")
    return EXIT_OK


def cmd_run(args):
    from .experiments import run_ab, run_scenario

    cfg = _resolve(args)
    if cfg.scenario not in RUN_SCENARIOS:
        raise ConfigError([f"scenario: 'run' needs one of {', '.join(RUN_SCENARIOS)}, got {cfg.scenario!r}"])
    out = _out_dir(cfg)
    if args.ab:
        res = run_ab(cfg, out)
        print(json.dumps(res.summary(), indent=2, sort_keys=True))
        diverged = res.nominal.report.diverged or res.augmented.report.diverged
    else:
        res = run_scenario(cfg, out)
        print(res.report.to_json())
        diverged = res.report.diverged
    if diverged and cfg.divergence_is_error:
        return EXIT_DIVERGED
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="thrustwalk", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        return sp

    sp = common(sub.add_parser("collect", help="collect a training dataset"))
    sp.set_defaults(func=cmd_collect)
    sp = common(sub.add_parser("train", help="train the residual network"))
    sp.add_argument("--dataset")
    sp.add_argument("--weights", help="initial weights (optional)")
    sp.set_defaults(func=cmd_train)
    sp = common(sub.add_parser("eval-rmse", help="held-out angular-acceleration RMSE"))
    sp.add_argument("--dataset")
    sp.add_argument("--weights")
    sp.set_defaults(func=cmd_eval_rmse)
    sp = common(sub.add_parser("run", help="closed-loop scenario"))
    sp.add_argument("--controller", choices=("nominal", "crd"))
    sp.add_argument("--weights")
    sp.add_argument("--ab", action="store_true", help="run nominal and crd with the same disturbance")
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, WeightFileError, DatasetSchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
