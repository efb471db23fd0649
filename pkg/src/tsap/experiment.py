"""Experiment configuration and the generate -> pretrain -> self-tune -> evaluate pipeline."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import jsonschema
import numpy as np

from .arch import desk_detector_arch, desk_faug_arch, paper_detector_arch, paper_faug_arch
from .data import DatasetSplit, TaskProfile, build_task, generate_normal, read_csv, write_csv
from .detector import Detector, save_detector
from .faug import Augmenter, PretrainConfig, load_faug, pretrain_faug, save_faug
from .inject import AnomalyType, HyperDomain, desk_domain, paper_domain
from .metrics import auroc, best_f1
from .ot import SinkhornConfig
from .selftune import SelfTuneConfig, TuneResult, self_tune

log = logging.getLogger(__name__)

SCALES = ("desk", "paper")
DESK_LR_A = 0.01

_MODE = {
    "oneOf": [
        {"type": "null"},
        {"type": "object", "properties": {"fixed": {"type": "number"}}, "required": ["fixed"],
         "additionalProperties": False},
        {"type": "object", "properties": {"random": {"type": "array", "items": {"type": "number"},
                                                     "minItems": 2, "maxItems": 2}},
         "required": ["random"], "additionalProperties": False},
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["task"],
    "properties": {
        "task": {
            "type": "object",
            "additionalProperties": False,
            "required": ["anomaly_type"],
            "properties": {
                "anomaly_type": {"type": "string"},
                "level": _MODE,
                "location": _MODE,
                "length": _MODE,
                "ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "family": {"enum": ["ecg", "gait"]},
            },
        },
        "scale": {"enum": list(SCALES)},
        "K": {"type": "integer", "minimum": 16},
        "n_trn": {"type": "integer", "minimum": 2},
        "n_test": {"type": "integer", "minimum": 4},
        "n_faug": {"type": "integer", "minimum": 2},
        "val_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "candidates": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "a_inits": {"type": "array", "items": {"type": "object", "additionalProperties": {"type": "number"}}},
        "random_a": {"type": "boolean"},
        "phi_dir": {"type": ["string", "null"]},
        "out": {"type": ["string", "null"]},
        "faug": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 2},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "selftune": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "T": {"type": "integer", "minimum": 1},
                "L": {"type": "integer", "minimum": 1},
                "lr_a": {"type": "number", "exclusiveMinimum": 0},
                "lr_theta": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": {"type": "integer", "minimum": 2},
                "warm_epochs": {"type": "integer", "minimum": 0},
                "mixing": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "second_order": {"type": "boolean"},
                "normalize": {"type": "boolean"},
                "loss": {"enum": ["wasserstein", "pointwise"]},
                "freeze_a": {"type": "boolean"},
                "tuned": {"type": "array", "items": {"enum": ["level", "length"]}},
                "residual": {"type": "boolean"},
                "smooth_window": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "sinkhorn": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "p": {"type": "number", "exclusiveMinimum": 0},
                        "epsilon": {"type": "number", "exclusiveMinimum": 0},
                        "max_iter": {"type": "integer", "minimum": 1},
                        "tol": {"type": "number", "minimum": 0},
                        "scaling": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    },
                },
            },
        },
    },
}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    task: TaskProfile
    scale: str = "desk"
    K: int = 256
    n_trn: int = 256
    n_test: int = 200
    n_faug: int = 256
    val_fraction: float = 0.5
    seed: int = 0
    candidates: list = field(default_factory=list)
    a_inits: list = field(default_factory=list)
    random_a: bool = False
    phi_dir: str | None = None
    out: str | None = None
    faug: PretrainConfig = field(default_factory=PretrainConfig)
    selftune: SelfTuneConfig = field(default_factory=SelfTuneConfig)

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}")
        if not self.candidates:
            self.candidates = [self.task.anomaly_type.value]
        self.candidates = [AnomalyType.parse(c).value for c in self.candidates]
        if self.scale == "paper" and self.K != 2700:
            raise ConfigError("paper scale uses series of length 2700")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(d, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {path}: {exc.message}") from None
        d = dict(d)
        scale = d.get("scale", "desk")
        st = dict(d.pop("selftune", {}))
        if scale == "paper":
            d.setdefault("K", 2700)
            d["faug"] = {"epochs": 500, **d.get("faug", {})}
        else:
            # a moves in unit coordinates; 1e-3 per step cannot cross the box in 100 epochs
            st.setdefault("lr_a", DESK_LR_A)
        try:
            task = TaskProfile.from_dict(d.pop("task"))
        except ValueError as exc:
            raise ConfigError(f"invalid task: {exc}") from None
        faug = PretrainConfig(**d.pop("faug", {}))
        if "sinkhorn" in st:
            st["sinkhorn"] = SinkhornConfig(**st["sinkhorn"])
        try:
            selftune = SelfTuneConfig(**st)
        except ValueError as exc:
            raise ConfigError(f"invalid selftune section: {exc}") from None
        return cls(task=task, faug=faug, selftune=selftune, **d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("scale", "K", "n_trn", "n_test", "n_faug", "val_fraction", "seed",
                                           "candidates", "a_inits", "random_a", "phi_dir", "out")}
        d["task"] = self.task.to_dict()
        d["faug"] = asdict(self.faug)
        d["selftune"] = self.selftune.to_dict()
        return d

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "ExperimentConfig":
        st_keys = {f for f in SelfTuneConfig.__dataclass_fields__}
        top = {k: v for k, v in kw.items() if k not in st_keys}
        st = {k: v for k, v in kw.items() if k in st_keys}
        cfg = replace(self, **top)
        if st:
            cfg = replace(cfg, selftune=replace(self.selftune, **st))
        return cfg

    # -- derived pieces ------------------------------------------------------
    def domain(self, anomaly_type) -> HyperDomain:
        if self.scale == "paper":
            dataset = "mocap" if self.task.family == "gait" else "physionet"
            return paper_domain(anomaly_type, dataset)
        return desk_domain(anomaly_type, self.task.family, self.K)

    def augmenter(self, anomaly_type) -> Augmenter:
        arch = paper_faug_arch(self.K) if self.scale == "paper" else desk_faug_arch(self.K)
        return Augmenter(arch, self.domain(anomaly_type))

    def detector(self) -> Detector:
        return Detector(paper_detector_arch(self.K) if self.scale == "paper" else desk_detector_arch(self.K))

    def inits(self, anomaly_type) -> list[dict]:
        """Starting points; defaults to the box midpoint of each tuned field."""
        if self.random_a:
            dom = self.domain(anomaly_type)
            rng = np.random.default_rng([self.seed, 11])
            return [{f: float(rng.uniform(*dom.bounds(f))) for f in self.selftune.tuned}]
        if self.a_inits:
            return [dict(a) for a in self.a_inits]
        dom = self.domain(anomaly_type)
        return [{f: float(np.mean(dom.bounds(f))) for f in self.selftune.tuned}]


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_generate(cfg: ExperimentConfig) -> DatasetSplit:
    return build_task(cfg.task, cfg.n_trn, cfg.n_test, cfg.K, cfg.seed, cfg.val_fraction)


def faug_training_data(cfg: ExperimentConfig) -> np.ndarray:
    """Normal-only series for augmenter pretraining, independent of the task split."""
    return generate_normal(cfg.n_faug, cfg.K, cfg.task.family, cfg.faug.seed + 1000)


def phi_path(directory, anomaly_type) -> Path:
    return Path(directory) / f"phi_{AnomalyType.parse(anomaly_type).value}.npz"


def stage_pretrain(cfg: ExperimentConfig, anomaly_type, directory) -> Path:
    model = cfg.augmenter(anomaly_type)
    res = pretrain_faug(faug_training_data(cfg), model.domain, cfg.faug, model.arch)
    return save_faug(phi_path(directory, anomaly_type), model, res.params)


def load_phi(cfg: ExperimentConfig, anomaly_type, directory):
    path = phi_path(directory, anomaly_type)
    if not path.exists():
        raise FileNotFoundError(f"no pretrained augmenter for {AnomalyType.parse(anomaly_type).value} at {path}")
    model = cfg.augmenter(anomaly_type)
    return model, load_faug(path, model)


def tune_runs(cfg: ExperimentConfig, split: DatasetSplit, phi_dir) -> list[tuple[str, TuneResult]]:
    det = cfg.detector()
    runs = []
    for atype in cfg.candidates:
        model, phi = load_phi(cfg, atype, phi_dir)
        for i, a0 in enumerate(cfg.inits(atype)):
            st = replace(cfg.selftune, seed=cfg.selftune.seed + cfg.seed * 1000 + i)
            res = self_tune(split.X_trn, split.X_val, model, phi, det, a0, st, y_val=split.y_val)
            runs.append((f"{atype}_init{i}", res))
    return runs


def evaluate(det: Detector, theta, split: DatasetSplit) -> dict:
    scores = det.score(theta, split.X_test)
    return {"auroc": auroc(scores, split.y_test), "best_f1": best_f1(scores, split.y_test)}


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")


def write_panels(directory: Path, runs: list[tuple[str, TuneResult]]) -> None:
    """One CSV per figure panel with a column per run."""
    if not runs:
        return
    names = [n for n, _ in runs]
    epochs = runs[0][1].trajectory.column("epoch").astype(int)
    for panel, col in (("panel_a.csv", "a_level"), ("panel_lval.csv", "l_val"), ("panel_auroc.csv", "auroc_val")):
        lines = ["epoch," + ",".join(names)]
        cols = [r.trajectory.column(col) for _, r in runs]
        for i, e in enumerate(epochs):
            lines.append(f"{e}," + ",".join(repr(float(c[i])) if i < len(c) else "" for c in cols))
        (directory / panel).write_text("\n".join(lines) + "\n")


def _clean(x: float):
    return None if isinstance(x, float) and math.isnan(x) else x


def run_experiment(cfg: ExperimentConfig, out=None) -> Path:
    """Run the full pipeline and write all artefacts to the run directory.

    Stage failures are recorded in ``manifest.json`` and re-raised as
    :class:`StageError`.
    """
    out = Path(out or cfg.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg.to_dict(), "config_hash": cfg.digest(), "stages": {}}
    _dump(out / "config.json", cfg.to_dict())
    stage = "generate"
    try:
        split = stage_generate(cfg)
        write_csv(split, out / "data")
        manifest["stages"]["generate"] = "ok"

        stage = "pretrain"
        phi_dir = Path(cfg.phi_dir) if cfg.phi_dir else out
        if cfg.phi_dir is None:
            for atype in cfg.candidates:
                stage_pretrain(cfg, atype, out)
            manifest["stages"]["pretrain"] = "ok"
        else:
            manifest["stages"]["pretrain"] = f"reused {phi_dir}"

        stage = "self-tune"
        runs = tune_runs(cfg, split, phi_dir)
        (out / "runs").mkdir(exist_ok=True)
        for name, res in runs:
            (out / "runs" / f"{name}_trajectory.csv").write_text(res.trajectory.to_csv())
        write_panels(out, runs)
        manifest["stages"]["self-tune"] = "ok"

        stage = "evaluate"
        det = cfg.detector()
        best_name, best = min(runs, key=lambda nr: nr[1].trajectory.smoothed_l_val(cfg.selftune.smooth_window))
        save_detector(out / "theta.npz", det, best.theta, {"anomaly_type": best.anomaly_type.value})
        per_run = []
        for name, res in runs:
            m = evaluate(det, res.theta, split)
            per_run.append({"run": name, "type": res.anomaly_type.value, "a_init": res.a_init,
                            "a_final": {k: _clean(v) for k, v in res.a.items()},
                            "score": res.trajectory.smoothed_l_val(cfg.selftune.smooth_window), **m})
        summary = {"selected_run": best_name, "type": best.anomaly_type.value,
                   "a": {k: _clean(v) for k, v in best.a.items()},
                   "score": best.trajectory.smoothed_l_val(cfg.selftune.smooth_window),
                   "seed": cfg.seed, "config_hash": cfg.digest(), **evaluate(det, best.theta, split),
                   "runs": per_run}
        _dump(out / "summary.json", summary)
        manifest["stages"]["evaluate"] = "ok"
    except Exception as exc:
        manifest["error"] = {"stage": stage, "message": str(exc), "kind": type(exc).__name__}
        _dump(out / "manifest.json", manifest)
        raise StageError(stage, str(exc)) from exc
    _dump(out / "manifest.json", manifest)
    return out


def load_split(directory) -> DatasetSplit:
    return read_csv(directory)
