"""Command-line entry point: ``tsap <subcommand> --config cfg.json --out DIR``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import read_csv, write_csv
from .detector import load_detector
from .experiment import (
    ConfigError,
    ExperimentConfig,
    StageError,
    evaluate,
    load_phi,
    run_experiment,
    stage_generate,
    stage_pretrain,
    tune_runs,
)
from .inject import AnomalyType

log = logging.getLogger("tsap")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else None
    if cfg is None:
        raise ConfigError("--config is required")
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.scale is not None:
        over["scale"] = args.scale
        if args.scale == "paper":
            over["K"] = 2700
    cfg = cfg.with_overrides(**over)
    st = {}
    if args.loss is not None:
        st["loss"] = args.loss
    if args.no_second_order:
        st["second_order"] = False
    if args.no_normalize:
        st["normalize"] = False
    if args.freeze_a:
        st["freeze_a"] = True
    if st:
        cfg = replace(cfg, selftune=replace(cfg.selftune, **st))
    return cfg


def _out(args, cfg: ExperimentConfig) -> Path:
    out = Path(args.out or cfg.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> None:
    cfg = _load_config(args)
    out = _out(args, cfg)
    write_csv(stage_generate(cfg), out)
    print(out)


def cmd_pretrain(args) -> None:
    cfg = _load_config(args)
    out = _out(args, cfg)
    types = [args.type] if args.type else cfg.candidates
    for t in types:
        print(stage_pretrain(cfg, t, out))


def _tune(args, cfg: ExperimentConfig):
    out = _out(args, cfg)
    split = read_csv(args.data) if args.data else stage_generate(cfg)
    phi_dir = args.phi_dir or cfg.phi_dir or out
    try:
        runs = tune_runs(cfg, split, phi_dir)
    except FileNotFoundError as exc:
        raise StageError("self-tune", str(exc)) from None
    return out, split, runs


def cmd_self_tune(args) -> None:
    cfg = _load_config(args)
    cfg = replace(cfg, candidates=[cfg.task.anomaly_type.value])
    out, split, runs = _tune(args, cfg)
    _report(out, cfg, split, runs)


def cmd_select_type(args) -> None:
    cfg = _load_config(args)
    if args.candidates:
        cfg = replace(cfg, candidates=[AnomalyType.parse(c).value for c in args.candidates])
    out, split, runs = _tune(args, cfg)
    _report(out, cfg, split, runs)


def _report(out: Path, cfg: ExperimentConfig, split, runs) -> None:
    from .detector import save_detector

    det = cfg.detector()
    for name, res in runs:
        (out / f"{name}_trajectory.csv").write_text(res.trajectory.to_csv())
    name, best = min(runs, key=lambda nr: nr[1].trajectory.smoothed_l_val(cfg.selftune.smooth_window))
    save_detector(out / "theta.npz", det, best.theta, {"anomaly_type": best.anomaly_type.value})
    summary = {"selected_run": name, "type": best.anomaly_type.value, "a": best.a,
               "score": best.trajectory.smoothed_l_val(cfg.selftune.smooth_window), "seed": cfg.seed,
               "config_hash": cfg.digest(), **evaluate(det, best.theta, split)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))


def cmd_evaluate(args) -> None:
    """Score a saved detector on a saved dataset, or run the whole pipeline."""
    cfg = _load_config(args)
    if args.theta:
        if not args.data:
            raise StageError("evaluate", "--theta needs --data")
        split = read_csv(args.data)
        det = cfg.detector()
        try:
            theta = load_detector(args.theta, det)
        except (FileNotFoundError, ValueError) as exc:
            raise StageError("evaluate", str(exc)) from None
        print(json.dumps(evaluate(det, theta, split), sort_keys=True))
        return
    out = run_experiment(cfg, args.out)
    print((out / "summary.json").read_text(), end="")


ABLATIONS = {
    "tuned": {},
    "random": {"random_a": True, "freeze_a": True},
    "pointwise": {"loss": "pointwise"},
    "first_order": {"second_order": False},
    "no_normalize": {"normalize": False},
}


def cmd_ablate(args) -> None:
    """Paired runs of the default tuner and its ablations over several seeds."""
    cfg = _load_config(args)
    out = _out(args, cfg)
    variants = args.variants or list(ABLATIONS)
    rows = ["variant,seed,a_level,a_length,score,auroc,best_f1,a_var_last50"]
    for seed in range(cfg.seed, cfg.seed + args.seeds):
        base = cfg.with_overrides(seed=seed)
        split = stage_generate(base)
        phi_dir = args.phi_dir or cfg.phi_dir or out
        for t in base.candidates:
            try:
                load_phi(base, t, phi_dir)
            except FileNotFoundError:
                stage_pretrain(base, t, phi_dir)
        for v in variants:
            if v not in ABLATIONS:
                raise ConfigError(f"unknown ablation {v!r}; choose from {sorted(ABLATIONS)}")
            vcfg = base.with_overrides(**ABLATIONS[v])
            vcfg = replace(vcfg, candidates=[vcfg.task.anomaly_type.value])
            name, res = tune_runs(vcfg, split, phi_dir)[0]
            (out / f"{v}_seed{seed}_trajectory.csv").write_text(res.trajectory.to_csv())
            m = evaluate(vcfg.detector(), res.theta, split)
            lv = res.trajectory.column("a_level")
            rows.append(",".join([v, str(seed), repr(res.a.get("level", float("nan"))),
                                  repr(res.a.get("length", float("nan"))),
                                  repr(res.trajectory.smoothed_l_val(vcfg.selftune.smooth_window)),
                                  repr(m["auroc"]), repr(m["best_f1"]), repr(float(np.var(lv[-50:])))]))
    (out / "ablation.csv").write_text("\n".join(rows) + "\n")
    print(out / "ablation.csv")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsap", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment config (JSON)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--scale", choices=["desk", "paper"])
        sp.add_argument("--loss", choices=["wasserstein", "pointwise"])
        sp.add_argument("--no-second-order", action="store_true")
        sp.add_argument("--no-normalize", action="store_true")
        sp.add_argument("--freeze-a", action="store_true")
        return sp

    common(sub.add_parser("gen-data", help="write a synthetic task as CSV")).set_defaults(func=cmd_gen_data)
    sp = common(sub.add_parser("pretrain-faug", help="pretrain one augmenter per candidate type"))
    sp.add_argument("--type", help="pretrain only this anomaly type")
    sp.set_defaults(func=cmd_pretrain)
    for name, fn, text in (("self-tune", cmd_self_tune, "tune the task's anomaly type"),
                           ("select-type", cmd_select_type, "tune every candidate type and pick one")):
        sp = common(sub.add_parser(name, help=text))
        sp.add_argument("--phi-dir", help="directory with pretrained augmenters")
        sp.add_argument("--data", help="dataset directory written by gen-data")
        if name == "select-type":
            sp.add_argument("--candidates", nargs="+")
        sp.set_defaults(func=fn)
    sp = common(sub.add_parser("evaluate", help="run the full pipeline, or score a saved detector"))
    sp.add_argument("--theta", help="saved detector parameters")
    sp.add_argument("--data", help="dataset directory written by gen-data")
    sp.set_defaults(func=cmd_evaluate)
    sp = common(sub.add_parser("ablate", help="paired ablation runs"))
    sp.add_argument("--seeds", type=int, default=3)
    sp.add_argument("--variants", nargs="+")
    sp.add_argument("--phi-dir")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage_of = {"gen-data": "generate", "pretrain-faug": "pretrain", "self-tune": "self-tune",
                "select-type": "self-tune", "evaluate": "evaluate", "ablate": "ablate"}
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: [config] {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every failure gets a stage tag
        print(f"error: [{stage_of[args.command]}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
