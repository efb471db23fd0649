"""Detector: convolutional embedding encoder plus a linear discriminator head."""

from __future__ import annotations

import logging

import numpy as np

from .arch import DetectorArch
from .serialize import load_params, save_params
from .tensor import (
    AdamState,
    NonFiniteError,
    ParamSet,
    Tensor,
    adam_step,
    avgpool1d,
    batchnorm1d,
    concat,
    conv1d,
    dropout,
    grad,
    linear,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softplus,
    sub,
    uniform_init,
)

log = logging.getLogger(__name__)


class Detector:
    def __init__(self, arch: DetectorArch):
        self.arch = arch

    def manifest(self) -> dict:
        return {"kind": "detector", "arch": self.arch.to_dict()}

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
        f, d = self.arch.flat_features, self.arch.embed_dim
        params["proj.w"] = uniform_init(rng, (d, f), f)
        params["proj.b"] = uniform_init(rng, (d,), f)
        params["head.w"] = uniform_init(rng, (1, d), d)
        params["head.b"] = uniform_init(rng, (1,), d)
        return ParamSet(params, buffers, seed)

    def embed(self, ps: ParamSet, x, train: bool = False) -> Tensor:
        """(n, K) series to (n, embed_dim) embeddings."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if x.ndim != 2 or x.shape[1] != self.arch.K:
            raise ValueError(f"detector expects (n, {self.arch.K}) input, got {x.shape}")
        h = reshape(x, (x.shape[0], 1, x.shape[1]))
        for i, c in enumerate(self.arch.encoder):
            h = conv1d(h, ps[f"enc.{i}.w"], ps[f"enc.{i}.b"], c.stride, c.dilation)
            if c.relu:
                h = relu(h)
            if c.batchnorm:
                h = batchnorm1d(h, ps[f"enc.{i}.bn.g"], ps[f"enc.{i}.bn.b"], ps.buffers[f"enc.{i}.bn.mean"],
                                ps.buffers[f"enc.{i}.bn.var"], train)
        h = avgpool1d(h, self.arch.pool_kernel, self.arch.pool_stride)
        h = reshape(h, (h.shape[0], self.arch.flat_features))
        return linear(h, ps["proj.w"], ps["proj.b"])

    def head(self, ps: ParamSet, z, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        z = dropout(z, 1.0 - self.arch.dropout, rng, train)
        out = linear(z, ps["head.w"], ps["head.b"])
        return reshape(out, (out.shape[0],))

    def logits(self, ps: ParamSet, x, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return self.head(ps, self.embed(ps, x, train), train, rng)

    def score(self, ps: ParamSet, X) -> np.ndarray:
        """Anomaly scores in (0, 1); evaluation mode, no graph."""
        with no_grad():
            return sigmoid(self.logits(ps, X, train=False)).data.copy()


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits), in a form that never overflows."""
    y = np.asarray(labels, dtype=np.float64)
    # -[y log s(l) + (1-y) log(1-s(l))] = softplus(l) - y*l
    return mean(sub(softplus(logits), mul(Tensor(y), logits)))


def detection_loss(model: Detector, ps: ParamSet, x_trn, x_aug, train: bool = True,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Cross-entropy with normal series labelled 0 and augmented series labelled 1."""
    x_trn = x_trn if isinstance(x_trn, Tensor) else Tensor(np.asarray(x_trn, dtype=np.float64))
    x_aug = x_aug if isinstance(x_aug, Tensor) else Tensor(np.asarray(x_aug, dtype=np.float64))
    x = concat([x_trn, x_aug], axis=0)
    labels = np.concatenate([np.zeros(x_trn.shape[0]), np.ones(x_aug.shape[0])])
    return bce_with_logits(model.logits(ps, x, train, rng), labels)


def detect_step(model: Detector, ps: ParamSet, state: AdamState, x_trn, x_aug, rng=None,
                differentiable: bool = False) -> tuple[ParamSet, Tensor]:
    """One Adam step on the detection loss.

    With ``differentiable=True`` the update is recorded so later losses can be
    differentiated back through it (and through ``x_aug``).
    """
    loss = detection_loss(model, ps, x_trn, x_aug, True, rng)
    if not np.isfinite(loss.data):
        raise NonFiniteError("detection loss is not finite")
    grads = grad(loss, ps.params, create_graph=differentiable)
    return ps.with_params(adam_step(ps.params, grads, state, differentiable)), loss


def dropout_rng(seed: int, epoch: int, batch: int, phase: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, phase, epoch, batch, 7])


def detect_epoch(model: Detector, ps: ParamSet, state: AdamState, X_trn: np.ndarray, X_aug: np.ndarray,
                 batch_size: int = 64, seed: int = 0, epoch: int = 0) -> tuple[ParamSet, float]:
    """One shuffled pass of plain (non-recorded) detection training."""
    X_trn = np.asarray(X_trn, dtype=np.float64)
    X_aug = np.asarray(X_aug, dtype=np.float64)
    order = np.random.default_rng([seed, epoch, 3]).permutation(len(X_trn))
    losses = []
    half = max(1, batch_size // 2)
    for b, start in enumerate(range(0, len(order), half)):
        idx = order[start:start + half]
        ps, loss = detect_step(model, ps, state, X_trn[idx], X_aug[idx], dropout_rng(seed, epoch, b))
        losses.append(loss.item())
    return ps, float(np.mean(losses))


def save_detector(path, model: Detector, ps: ParamSet, extra: dict | None = None):
    return save_params(path, ps, {**model.manifest(), **(extra or {})})


def load_detector(path, model: Detector) -> ParamSet:
    ps, _ = load_params(path, model.manifest())
    return ps
