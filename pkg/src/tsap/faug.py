"""Differentiable augmentation model: a convolutional encoder-decoder whose
latent feature map is shifted by an embedding of the augmentation
hyperparameters.

One model is trained per anomaly type.  The hyperparameter input is the
(location, length, level) triple min-max normalised by the type's domain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .arch import FaugArch, desk_faug_arch
from .inject import AnomalyType, HyperDomain, inject, sample_params
from .serialize import load_params, save_params
from .tensor import (
    AdamState,
    NonFiniteError,
    ParamSet,
    Tensor,
    adam_step,
    add,
    batchnorm1d,
    concat,
    conv1d,
    conv1d_transposed,
    grad,
    getitem,
    linear,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sub,
    uniform_init,
)

log = logging.getLogger(__name__)


class Augmenter:
    def __init__(self, arch: FaugArch, domain: HyperDomain):
        self.arch = arch
        self.domain = domain

    @property
    def anomaly_type(self) -> AnomalyType:
        return self.domain.anomaly_type

    def manifest(self) -> dict:
        d = self.domain
        return {"kind": "faug", "arch": self.arch.to_dict(), "anomaly_type": d.anomaly_type.value,
                "domain": {"location": list(d.location), "length": list(d.length), "level": list(d.level)}}

    def init_params(self, seed: int) -> ParamSet:
        rng = np.random.default_rng(seed)
        params, buffers = {}, {}
        cin = 1
        for i, c in enumerate(self.arch.encoder):
            params[f"enc.{i}.w"] = uniform_init(rng, (c.out_channels, cin, c.kernel), cin * c.kernel)
            params[f"enc.{i}.b"] = uniform_init(rng, (c.out_channels,), cin * c.kernel)
            if c.batchnorm:
                params[f"enc.{i}.bn.g"] = Tensor(np.ones(c.out_channels), requires_grad=True)
                params[f"enc.{i}.bn.b"] = Tensor(np.zeros(c.out_channels), requires_grad=True)
                buffers[f"enc.{i}.bn.mean"] = np.zeros(c.out_channels)
                buffers[f"enc.{i}.bn.var"] = np.ones(c.out_channels)
            cin = c.out_channels
        for j, ((ci, co), c) in enumerate(zip(self.arch.decoder_channels(), reversed(self.arch.encoder))):
            params[f"dec.{j}.w"] = uniform_init(rng, (ci, co, c.kernel), co * c.kernel)
            params[f"dec.{j}.b"] = uniform_init(rng, (co,), co * c.kernel)
            if j < len(self.arch.encoder) - 1:
                params[f"dec.{j}.bn.g"] = Tensor(np.ones(co), requires_grad=True)
                params[f"dec.{j}.bn.b"] = Tensor(np.zeros(co), requires_grad=True)
                buffers[f"dec.{j}.bn.mean"] = np.zeros(co)
                buffers[f"dec.{j}.bn.var"] = np.ones(co)
        h = self.arch.mlp_hidden
        params["mlp.0.w"] = uniform_init(rng, (h, self.arch.n_hyper), self.arch.n_hyper)
        params["mlp.0.b"] = uniform_init(rng, (h,), self.arch.n_hyper)
        # zero output layer: an untrained model applies the identity augmentation
        params["mlp.1.w"] = Tensor(np.zeros((self.arch.latent_dim, h)), requires_grad=True)
        params["mlp.1.b"] = Tensor(np.zeros(self.arch.latent_dim), requires_grad=True)
        return ParamSet(params, buffers, seed)

    # -- forward pieces ------------------------------------------------------
    def encode(self, ps: ParamSet, x, train: bool = False) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 2:
            x = reshape(x, (x.shape[0], 1, x.shape[1]))
        if x.shape[-1] != self.arch.K:
            raise ValueError(f"augmenter expects series of length {self.arch.K}, got {x.shape[-1]}")
        h = x
        for i, c in enumerate(self.arch.encoder):
            h = conv1d(h, ps[f"enc.{i}.w"], ps[f"enc.{i}.b"], c.stride, c.dilation)
            if c.relu:
                h = relu(h)
            if c.batchnorm:
                h = batchnorm1d(h, ps[f"enc.{i}.bn.g"], ps[f"enc.{i}.bn.b"], ps.buffers[f"enc.{i}.bn.mean"],
                                ps.buffers[f"enc.{i}.bn.var"], train)
        return h

    def hyper_embed(self, ps: ParamSet, a_norm) -> Tensor:
        a_norm = a_norm if isinstance(a_norm, Tensor) else Tensor(a_norm)
        h = relu(linear(a_norm, ps["mlp.0.w"], ps["mlp.0.b"]))
        z = linear(h, ps["mlp.1.w"], ps["mlp.1.b"])
        return reshape(z, (a_norm.shape[0],) + self.arch.latent_shape)

    def decode(self, ps: ParamSet, z: Tensor, train: bool = False) -> Tensor:
        h = z
        n = len(self.arch.encoder)
        for j, (c, pad) in enumerate(zip(reversed(self.arch.encoder), self.arch.output_paddings())):
            h = conv1d_transposed(h, ps[f"dec.{j}.w"], ps[f"dec.{j}.b"], c.stride, pad, c.dilation)
            if j < n - 1:
                h = relu(h)
                h = batchnorm1d(h, ps[f"dec.{j}.bn.g"], ps[f"dec.{j}.bn.b"], ps.buffers[f"dec.{j}.bn.mean"],
                                ps.buffers[f"dec.{j}.bn.var"], train)
        return reshape(h, (h.shape[0], h.shape[2]))

    def forward(self, ps: ParamSet, x, a_norm, train: bool = False) -> tuple[Tensor, Tensor]:
        """Reconstruction of x and of its augmented version under a_norm."""
        z = self.encode(ps, x, train)
        za = self.hyper_embed(ps, a_norm)
        if za.shape != z.shape:
            raise ValueError(f"hyperparameter embedding {za.shape} does not match feature map {z.shape}")
        B = z.shape[0]
        out = self.decode(ps, concat([z, add(z, za)], axis=0), train)
        return getitem(out, slice(0, B)), getitem(out, slice(B, 2 * B))

    def normalize(self, values) -> np.ndarray:
        return self.domain.normalize(np.atleast_2d(values))


def faug_forward(model: Augmenter, ps: ParamSet, x, a) -> tuple[np.ndarray, np.ndarray]:
    """(reconstruction, augmented reconstruction) of one series under AugParams ``a``."""
    if a.anomaly_type is not model.anomaly_type:
        raise ValueError(f"augmenter is for {model.anomaly_type.value}, got {a.anomaly_type.value}")
    values = np.asarray(getattr(x, "values", x), dtype=np.float64)
    with no_grad():
        rec_trn, rec_aug = model.forward(ps, values[None], model.normalize(a.vector()), train=False)
    return rec_trn.data[0], rec_aug.data[0]


def augment_residual(x, rec_trn, rec_aug) -> Tensor:
    """x + (rec_aug - rec_trn): apply only the learned change to the raw series."""
    return add(x, sub(rec_aug, rec_trn))


def reconstruction_loss(rec_trn, x, rec_aug, x_aug) -> Tensor:
    """Mean squared error of both reconstructions, summed."""
    d1 = sub(rec_trn, x)
    d2 = sub(rec_aug, x_aug)
    return add(mean(mul(d1, d1)), mean(mul(d2, d2)))


@dataclass
class PretrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.002
    seed: int = 0


@dataclass
class PretrainResult:
    params: ParamSet
    losses: list[float] = field(default_factory=list)


def sample_batch_params(domain: HyperDomain, n: int, rng: np.random.Generator):
    return [sample_params(domain, rng) for _ in range(n)]


def pretrain_faug(X_trn: np.ndarray, domain: HyperDomain, cfg: PretrainConfig = PretrainConfig(),
                  arch: FaugArch | None = None, params: ParamSet | None = None) -> PretrainResult:
    """Fit the augmenter to reproduce g(x; a) for a drawn uniformly per series and batch."""
    X_trn = np.asarray(X_trn, dtype=np.float64)
    arch = arch or desk_faug_arch(X_trn.shape[1])
    model = Augmenter(arch, domain)
    ps = params or model.init_params(cfg.seed)
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    losses = []
    n = len(X_trn)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            xb = X_trn[idx]
            aps = sample_batch_params(domain, len(idx), rng)
            target = np.stack([inject(x, a) for x, a in zip(xb, aps)])
            a_norm = domain.normalize(np.stack([a.vector() for a in aps]))
            rec_trn, rec_aug = model.forward(ps, xb, a_norm, train=True)
            loss = reconstruction_loss(rec_trn, Tensor(xb), rec_aug, Tensor(target))
            if not np.isfinite(loss.data):
                raise NonFiniteError(f"augmenter loss diverged at epoch {epoch}")
            grads = grad(loss, ps.params)
            ps = ps.with_params(adam_step(ps.params, grads, state))
            total += loss.item() * len(idx)
            count += len(idx)
        losses.append(total / max(count, 1))
        if epoch % 10 == 0 or epoch == cfg.epochs - 1:
            log.info("faug %s epoch %d loss %.5f", domain.anomaly_type.value, epoch, losses[-1])
    return PretrainResult(ps, losses)


def evaluate_faug(model: Augmenter, ps: ParamSet, X: np.ndarray, rng: np.random.Generator,
                  residual: bool = False) -> dict:
    """Held-out reconstruction error of g(x, a) against a predict-the-mean baseline."""
    aps = sample_batch_params(model.domain, len(X), rng)
    target = np.stack([inject(x, a) for x, a in zip(X, aps)])
    a_norm = model.domain.normalize(np.stack([a.vector() for a in aps]))
    with no_grad():
        rec_trn, rec_aug = model.forward(ps, X, a_norm, train=False)
    pred = augment_residual(Tensor(X), rec_trn, rec_aug).data if residual else rec_aug.data
    mse = np.mean((pred - target) ** 2, axis=1)
    var = np.var(target, axis=1)
    return {"mse": mse, "target_var": var, "rec_mse": float(np.mean((rec_trn.data - X) ** 2))}


def save_faug(path, model: Augmenter, ps: ParamSet):
    return save_params(path, ps, model.manifest())


def load_faug(path, model: Augmenter) -> ParamSet:
    ps, _ = load_params(path, model.manifest())
    return ps
