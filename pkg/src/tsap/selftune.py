"""Self-tuning of augmentation hyperparameters.

Each epoch alternates a detection phase (a few Adam steps on the detector
with the augmentation held fixed) with an alignment phase (one Adam step on
the tuned augmentation hyperparameters, driven by the transport distance
between a train/augmented reference set and the unlabelled validation set).
The alignment gradient flows through the augmenter directly and, when
``second_order`` is on, through the recorded detector updates as well.

Tuned hyperparameters are optimised in the domain-normalised coordinates
the augmenter consumes, so ``u = 0`` and ``u = 1`` are the box edges.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .detector import Detector, detect_step, dropout_rng
from .faug import Augmenter
from .inject import HYPER_FIELDS, AnomalyType, HyperDomain
from .metrics import UndefinedMetricError, auroc
from .ot import SinkhornConfig, normalize_embeddings, pointwise_loss, sinkhorn_distance
from .tensor import (
    AdamState,
    NonFiniteError,
    ParamSet,
    Tensor,
    add,
    adam_step,
    concat,
    getitem,
    grad,
    no_grad,
    stack,
    sub,
)

log = logging.getLogger(__name__)

LOSSES = ("wasserstein", "pointwise")


@dataclass
class SelfTuneConfig:
    T: int = 100
    L: int = 5
    lr_a: float = 0.001
    lr_theta: float = 0.002
    batch_size: int = 64
    warm_epochs: int = 3
    mixing: float = 0.15
    second_order: bool = True
    normalize: bool = True
    loss: str = "wasserstein"
    freeze_a: bool = False
    tuned: tuple = ("level",)
    residual: bool = True
    smooth_window: int = 10
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.sinkhorn, dict):
            self.sinkhorn = SinkhornConfig(**self.sinkhorn)
        self.tuned = tuple(self.tuned)
        if self.T < 1 or self.L < 1:
            raise ValueError("T and L must be at least 1")
        if not 0.0 <= self.mixing < 1.0:
            raise ValueError("mixing rate must lie in [0, 1)")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        bad = [f for f in self.tuned if f not in ("length", "level")]
        if bad:
            raise ValueError(f"only length and level can be tuned, got {bad}")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tuned"] = list(self.tuned)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class EpochRecord:
    epoch: int
    a_level: float
    a_length: float
    l_trn: float
    l_val: float
    auroc_val: float


@dataclass
class TuneTrajectory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("trajectory epochs must increase")
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def smoothed_l_val(self, window: int = 10) -> float:
        v = self.column("l_val")
        return float(np.mean(v[-window:])) if len(v) else math.nan

    def to_csv(self) -> str:
        cols = ("epoch", "a_level", "a_length", "l_trn", "l_val", "auroc_val")
        lines = [",".join(cols)]
        for r in self.records:
            lines.append(f"{r.epoch}," + ",".join(repr(float(getattr(r, c))) for c in cols[1:]))
        return "\n".join(lines) + "\n"


class HyperGradientError(NonFiniteError):
    def __init__(self, message: str, trajectory: TuneTrajectory):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class TuneResult:
    theta: ParamSet
    a: dict
    trajectory: TuneTrajectory
    anomaly_type: AnomalyType
    a_init: dict

    @property
    def score(self) -> float:
        return self.trajectory.smoothed_l_val()


# ---------------------------------------------------------------------------
# alignment loss
# ---------------------------------------------------------------------------

def validation_loss(Z_trn, Z_aug, Z_val, cfg: SelfTuneConfig, rng: np.random.Generator | None = None) -> Tensor:
    """Distance between a mixed train/augmented reference set and Z_val.

    The reference set has as many rows as Z_val: ceil(mixing * n) drawn from
    Z_aug and the rest from Z_trn, without replacement.
    """
    rng = rng or np.random.default_rng(0)
    n = Z_val.shape[0]
    n_aug = math.ceil(cfg.mixing * n) if cfg.mixing > 0 else 0
    n_trn = n - n_aug
    if Z_trn.shape[0] < n_trn or (n_aug and Z_aug.shape[0] < n_aug):
        raise ValueError("not enough train or augmented embeddings for the reference set")
    parts = [getitem(Z_trn, np.sort(rng.choice(Z_trn.shape[0], n_trn, replace=False)))]
    if n_aug:
        parts.append(getitem(Z_aug, np.sort(rng.choice(Z_aug.shape[0], n_aug, replace=False))))
    ref = concat(parts, axis=0) if len(parts) > 1 else parts[0]
    val = Z_val
    if cfg.normalize:
        ref, val = normalize_embeddings(ref), normalize_embeddings(val)
    if cfg.loss == "pointwise":
        return pointwise_loss(ref, val)
    return sinkhorn_distance(ref, val, cfg.sinkhorn)


# ---------------------------------------------------------------------------
# augmentation as a function of the tuned coordinates
# ---------------------------------------------------------------------------

class AugmentationSource:
    """Produces augmented training series as a differentiable function of u.

    The augmenter is frozen, so the encoder features and plain
    reconstructions of every training series are computed once.
    """

    def __init__(self, model: Augmenter, phi: ParamSet, X_trn: np.ndarray, residual: bool = True):
        self.model = model
        self.domain = model.domain
        self.phi = phi.detached(requires_grad=False)
        self.X = np.asarray(X_trn, dtype=np.float64)
        self.residual = residual
        with no_grad():
            self.Z = model.encode(self.phi, self.X, train=False).data
            self.R = model.decode(self.phi, Tensor(self.Z), train=False).data

    def hyper_matrix(self, u: dict, n: int, rng: np.random.Generator) -> Tensor:
        """(n, 3) normalised hyperparameters: tuned columns share u, others are drawn."""
        d = self.domain
        lo, hi = d.lower(), d.upper()
        span = np.where(hi > lo, hi - lo, 1.0)
        raw = {name: rng.uniform(*d.bounds(name), size=n) for name in HYPER_FIELDS}
        for name, t in u.items():
            raw[name] = np.full(n, lo[HYPER_FIELDS.index(name)] + float(t.data) * span[HYPER_FIELDS.index(name)])
        if d.anomaly_type is not AnomalyType.EXTREMUM:
            raw["location"] = np.minimum(raw["location"], np.maximum(1.0 - raw["length"], 0.0))
        cols = []
        for j, name in enumerate(HYPER_FIELDS):
            if name in u:
                cols.append(add(Tensor(np.zeros(n)), u[name]))
            else:
                cols.append(Tensor((raw[name] - lo[j]) / span[j]))
        return stack(cols, axis=1)

    def augment(self, idx: np.ndarray, u: dict, rng: np.random.Generator) -> Tensor:
        a_norm = self.hyper_matrix(u, len(idx), rng)
        z = add(Tensor(self.Z[idx]), self.model.hyper_embed(self.phi, a_norm))
        rec = self.model.decode(self.phi, z, train=False)
        if self.residual:
            return add(Tensor(self.X[idx]), sub(rec, Tensor(self.R[idx])))
        return rec


def to_unit(domain: HyperDomain, name: str, value: float) -> float:
    lo, hi = domain.bounds(name)
    return 0.0 if hi <= lo else (value - lo) / (hi - lo)


def from_unit(domain: HyperDomain, name: str, u: float) -> float:
    lo, hi = domain.bounds(name)
    return lo + u * (hi - lo)


def _u_tensors(u: dict) -> dict:
    return {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in u.items()}


def alignment_step(u: dict, grads: dict, state: AdamState) -> dict:
    """Adam step on the tuned coordinates, then projection onto [0, 1]."""
    params = {k: Tensor(np.array(v, dtype=np.float64)) for k, v in u.items()}
    new = adam_step(params, grads, state)
    return {k: float(np.clip(new[k].data, 0.0, 1.0)) for k in u}


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

def _batches(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    return np.sort(rng.choice(n, size=min(size, n), replace=False))


def alignment_loss(source: AugmentationSource, detector: Detector, theta: ParamSet, opt_theta: AdamState,
                   ut: dict, X_trn: np.ndarray, X_val: np.ndarray, cfg: SelfTuneConfig, t: int):
    """One epoch's two phases as a function of the tuned coordinates ``ut``.

    Runs ``cfg.L`` detector steps from ``theta`` (recorded when the indirect
    path is wanted), then evaluates L_val on the updated detector.  Returns
    ``(l_val, theta_t, inner_losses)``; ``opt_theta`` and the batchnorm
    buffers of ``theta`` are advanced in place.
    """
    rng = np.random.default_rng([cfg.seed, 1, t])
    n = len(X_trn)
    half = max(1, cfg.batch_size // 2)
    track = cfg.second_order and not cfg.freeze_a
    theta_t = theta.detached(requires_grad=True)
    inner_losses = []
    # phase (i): L detector steps
    for step in range(cfg.L):
        idx_trn = _batches(rng, n, half)
        idx_aug = _batches(rng, n, half)
        if track:
            x_aug = source.augment(idx_aug, ut, rng)
        else:
            with no_grad():
                x_aug = source.augment(idx_aug, ut, rng)
        theta_t, loss = detect_step(detector, theta_t, opt_theta, X_trn[idx_trn], x_aug,
                                    dropout_rng(cfg.seed, t, step), differentiable=track)
        inner_losses.append(loss.item())

    # phase (ii): alignment loss on the updated detector, evaluation mode
    n_val = len(X_val)
    n_aug = math.ceil(cfg.mixing * n_val) if cfg.mixing > 0 else 0
    idx_ref = _batches(rng, n, n_val - n_aug)
    idx_aug = _batches(rng, n, n_aug) if n_aug else np.array([], dtype=int)
    theta_eval = theta_t if cfg.second_order else theta_t.detached(requires_grad=False)
    Z_trn = detector.embed(theta_eval, X_trn[idx_ref], train=False)
    Z_val = detector.embed(theta_eval, X_val, train=False)
    Z_aug = detector.embed(theta_eval, source.augment(idx_aug, ut, rng), train=False) if n_aug else Z_trn
    return validation_loss(Z_trn, Z_aug, Z_val, cfg, rng), theta_t, inner_losses


def self_tune(X_trn: np.ndarray, X_val: np.ndarray, augmenter: Augmenter, phi: ParamSet, detector: Detector,
              a_init: dict, cfg: SelfTuneConfig, y_val: np.ndarray | None = None,
              theta: ParamSet | None = None) -> TuneResult:
    """Alternate detection and alignment phases for ``cfg.T`` epochs.

    ``a_init`` maps hyperparameter names to starting values in real units;
    fields in ``cfg.tuned`` are optimised, the rest stay randomised per batch.
    ``y_val`` is only used to log validation AUROC in the trajectory.
    """
    X_trn = np.asarray(X_trn, dtype=np.float64)
    X_val = np.asarray(X_val, dtype=np.float64)
    domain = augmenter.domain
    missing = [f for f in cfg.tuned if f not in a_init]
    if missing:
        raise ValueError(f"a_init lacks tuned fields {missing}")
    u = {f: float(np.clip(to_unit(domain, f, a_init[f]), 0.0, 1.0)) for f in cfg.tuned}
    source = AugmentationSource(augmenter, phi, X_trn, cfg.residual)
    theta = theta.copy() if theta is not None else detector.init_params(cfg.seed)
    opt_theta = AdamState(lr=cfg.lr_theta)
    opt_a = AdamState(lr=cfg.lr_a)
    half = max(1, cfg.batch_size // 2)
    n = len(X_trn)
    traj = TuneTrajectory()

    def real(name: str, default: float = math.nan) -> float:
        return from_unit(domain, name, u[name]) if name in u else default

    # warm start: detector only, augmentation at the initial hyperparameters
    for epoch in range(cfg.warm_epochs):
        rng = np.random.default_rng([cfg.seed, 0, epoch])
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, half)):
            idx = np.sort(order[start:start + half])
            if len(idx) < 2:
                continue
            with no_grad():
                x_aug = source.augment(_batches(rng, n, len(idx)), _u_tensors(u), rng).data
            theta, _ = detect_step(detector, theta, opt_theta, X_trn[idx], x_aug,
                                   dropout_rng(cfg.seed, epoch, b, phase=1))

    for t in range(1, cfg.T + 1):
        ut = _u_tensors(u)
        l_val, theta_t, inner_losses = alignment_loss(source, detector, theta, opt_theta, ut, X_trn, X_val, cfg, t)
        a_used = {"level": real("level", a_init.get("level", math.nan)),
                  "length": real("length", a_init.get("length", math.nan))}
        if not cfg.freeze_a and u:
            g = grad(l_val, ut)
            bad = [k for k, v in g.items() if not np.all(np.isfinite(v.data))]
            if bad:
                raise HyperGradientError(f"non-finite hypergradient at epoch {t} for {bad}", traj)
            u = alignment_step(u, g, opt_a)
        theta = ParamSet({k: Tensor(v.data.copy(), requires_grad=True) for k, v in theta_t.params.items()},
                         theta_t.buffers, theta_t.seed)
        opt_theta.detach()

        auc = math.nan
        if y_val is not None:
            try:
                auc = auroc(detector.score(theta, X_val), y_val)
            except UndefinedMetricError:
                pass
        traj.append(EpochRecord(t, a_used["level"], a_used["length"], float(np.mean(inner_losses)),
                                float(l_val.data), auc))
        if t % 10 == 0 or t == cfg.T:
            log.info("epoch %d a=%s l_trn=%.4f l_val=%.5f auroc_val=%.3f", t,
                     {k: round(real(k), 4) for k in u}, traj.records[-1].l_trn, traj.records[-1].l_val, auc)

    a_final = dict(a_init)
    a_final.update({k: real(k) for k in u})
    return TuneResult(theta, a_final, traj, domain.anomaly_type, dict(a_init))


def select_type(X_trn, X_val, candidates: dict, detector: Detector, a_inits: dict, cfg: SelfTuneConfig,
                y_val=None) -> tuple[TuneResult, list[TuneResult]]:
    """Tune every (type, init) pair and keep the run with the lowest smoothed L_val.

    ``candidates`` maps anomaly types to ``(Augmenter, phi)``; ``a_inits`` maps
    the same types to lists of initial hyperparameter dicts.
    """
    runs, failures = [], []
    for atype, (aug, phi) in candidates.items():
        for i, a0 in enumerate(a_inits[atype]):
            run_cfg = replace(cfg, seed=cfg.seed + i)
            try:
                runs.append(self_tune(X_trn, X_val, aug, phi, detector, a0, run_cfg, y_val))
            except (NonFiniteError, FloatingPointError) as exc:
                log.warning("run %s init %s failed: %s", AnomalyType.parse(atype).value, a0, exc)
                failures.append((atype, a0, exc))
    if not runs:
        raise RuntimeError(f"all {len(failures)} self-tuning runs failed")
    best = min(runs, key=lambda r: r.trajectory.smoothed_l_val(cfg.smooth_window))
    return best, runs
