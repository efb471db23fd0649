"""Distribution-alignment losses between sets of embeddings.

The main entry point is :func:`sinkhorn_distance`, an entropic approximation
of the order-p optimal transport cost between two uniform empirical measures,
computed with log-domain Sinkhorn iterations.  Gradients are obtained by
differentiating through the unrolled iterations.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .tensor import (
    Tensor,
    add,
    as_tensor,
    div,
    exp,
    is_grad_enabled,
    logsumexp,
    mean,
    mul,
    power,
    reshape,
    sqrt,
    sub,
    tsum,
)

log = logging.getLogger(__name__)

EXACT_OT_MAX_POINTS = 12


class DegenerateEmbeddingError(ValueError):
    """An embedding row has (numerically) zero norm and cannot be normalised."""


@dataclass
class EmbeddingSet:
    z: Tensor
    normalized: bool = False

    def __post_init__(self):
        self.z = as_tensor(self.z)
        if self.z.ndim != 2 or self.z.shape[0] < 1:
            raise ValueError(f"embedding set must be a non-empty (n, d) matrix, got {self.z.shape}")

    @property
    def n(self) -> int:
        return self.z.shape[0]


def _matrix(x) -> Tensor:
    if isinstance(x, EmbeddingSet):
        return x.z
    t = as_tensor(x)
    if t.ndim == 1:
        t = reshape(t, (-1, 1))
    if t.ndim != 2 or t.shape[0] < 1:
        raise ValueError(f"expected a non-empty (n, d) matrix, got shape {t.shape}")
    return t


@dataclass(frozen=True)
class SinkhornConfig:
    p: float = 2.0
    epsilon: float = 0.05
    max_iter: int = 200
    tol: float = 1e-6
    scaling: float | None = 0.5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.p <= 0:
            raise ValueError("p must be positive")
        if self.scaling is not None and not 0 < self.scaling < 1:
            raise ValueError("scaling must lie in (0, 1)")


def epsilon_schedule(cmax: float, cfg: SinkhornConfig) -> list[float]:
    """Annealed regularisation levels, one Sinkhorn sweep each, ending at cfg.epsilon.

    Starting from the cost scale and shrinking geometrically gives warm-started
    potentials; the final level is then iterated to the tolerance.
    """
    if cfg.scaling is None:
        return []
    out = []
    e = max(cmax, cfg.epsilon)
    while e > cfg.epsilon:
        out.append(e)
        e *= cfg.scaling
    return out[: max(cfg.max_iter - 1, 0)]


@dataclass
class SinkhornResult:
    cost: Tensor
    plan: np.ndarray
    iterations: int
    converged: bool
    marginal_error: float


def normalize_embeddings(z, eps: float = 1e-12):
    """Rescale every row to unit Euclidean norm (differentiable)."""
    wrap = isinstance(z, EmbeddingSet)
    m = _matrix(z)
    norms = np.sqrt((m.data ** 2).sum(axis=1))
    if np.any(norms < eps):
        bad = np.flatnonzero(norms < eps)
        raise DegenerateEmbeddingError(
            f"{len(bad)} embedding row(s) have norm below {eps} (first: row {bad[0]}); "
            "the encoder has collapsed"
        )
    out = div(m, sqrt(tsum(mul(m, m), axis=1, keepdims=True)))
    return EmbeddingSet(out, normalized=True) if wrap else out


def cost_matrix(A, B, p: float = 2.0) -> Tensor:
    """C[i, j] = ||a_i - b_j||_2 ** p."""
    A, B = _matrix(A), _matrix(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    n, d = A.shape
    m = B.shape[0]
    diff = sub(reshape(A, (n, 1, d)), reshape(B, (1, m, d)))
    sq = tsum(mul(diff, diff), axis=2)
    if p == 2:
        return sq
    dist = sqrt(sq)
    return dist if p == 1 else power(dist, p)


def _lse_np(x: np.ndarray, axis: int) -> np.ndarray:
    mx = np.max(x, axis=axis, keepdims=True)
    return (mx + np.log(np.exp(x - mx).sum(axis=axis, keepdims=True))).squeeze(axis)


def _marginal_error(logp: np.ndarray) -> float:
    """Largest deviation of either marginal of exp(logp) from uniform."""
    P = np.exp(logp)
    n, m = P.shape
    return float(max(np.abs(P.sum(axis=1) - 1.0 / n).max(), np.abs(P.sum(axis=0) - 1.0 / m).max()))


def _sinkhorn_numpy(C: np.ndarray, cfg: SinkhornConfig):
    n, m = C.shape
    la, lb = -math.log(n), -math.log(m)
    stages = epsilon_schedule(float(C.max()), cfg)
    f = np.zeros(n)
    g = np.zeros(m)
    err = np.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        eps = stages[it - 1] if it <= len(stages) else cfg.epsilon
        ft = -eps * _lse_np((g[None, :] - C) / eps + lb, axis=1)
        gt = -eps * _lse_np((f[:, None] - C) / eps + la, axis=0)
        f, g = 0.5 * (f + ft), 0.5 * (g + gt)
        if it <= len(stages):
            continue
        err = _marginal_error((f[:, None] + g[None, :] - C) / eps + la + lb)
        if err < cfg.tol:
            break
    eps = cfg.epsilon
    plan = np.exp((f[:, None] + g[None, :] - C) / eps + la + lb)
    return plan, it, err


def sinkhorn(A, B, cfg: SinkhornConfig = SinkhornConfig()) -> SinkhornResult:
    """Entropic OT between the rows of A and B with uniform weights.

    Returns the transport cost <P, C> of the entropic plan P along with the
    plan and convergence diagnostics.  Both dual potentials are updated from
    the previous iterate and averaged with it, so exchanging A and B yields
    exactly the transposed iterates and the cost is symmetric at every
    iteration count.  The loop stops once both marginal errors drop below
    ``cfg.tol`` (set ``tol=0`` for a fixed iteration count).
    """
    C = cost_matrix(A, B, cfg.p)
    n, m = C.shape
    if not C.requires_grad or not is_grad_enabled():
        plan, it, err = _sinkhorn_numpy(C.data, cfg)
        cost = Tensor(np.sum(plan * C.data))
    else:
        la, lb = -math.log(n), -math.log(m)
        stages = epsilon_schedule(float(C.data.max()), cfg)
        f = Tensor(np.zeros((n, 1)))
        g = Tensor(np.zeros((1, m)))
        err = np.inf
        it = 0
        negC, neg_eps = None, None
        for it in range(1, cfg.max_iter + 1):
            eps = stages[it - 1] if it <= len(stages) else cfg.epsilon
            if eps != neg_eps:
                negC, neg_eps = mul(C, -1.0 / eps), eps
            ft = mul(-eps, add(logsumexp(add(negC, mul(g, 1.0 / eps)), axis=1, keepdims=True), lb))
            gt = mul(-eps, add(logsumexp(add(negC, mul(f, 1.0 / eps)), axis=0, keepdims=True), la))
            f, g = mul(add(f, ft), 0.5), mul(add(g, gt), 0.5)
            if it <= len(stages):
                continue
            err = _marginal_error((f.data + g.data - C.data) / eps + la + lb)
            if err < cfg.tol:
                break
        inv_eps = 1.0 / cfg.epsilon
        P = exp(add(mul(sub(add(f, g), C), inv_eps), la + lb))
        plan = P.data
        cost = tsum(mul(P, C))
    if not np.isfinite(cost.data):
        raise FloatingPointError("Sinkhorn produced a non-finite cost")
    converged = bool(err < cfg.tol) if cfg.tol > 0 else True
    return SinkhornResult(cost, plan, it, converged, float(err))


def sinkhorn_distance(A, B, cfg: SinkhornConfig = SinkhornConfig()) -> Tensor:
    """Differentiable entropic approximation of W_p^p between two embedding sets."""
    res = sinkhorn(A, B, cfg)
    if not res.converged:
        log.warning("Sinkhorn stopped after %d iterations with marginal error %.3g",
                    res.iterations, res.marginal_error)
    return res.cost


def exact_ot(A, B, p: float = 2.0) -> float:
    """Exact OT cost between two equal-size uniform empirical measures.

    For equal uniform weights an optimal coupling is a permutation, so this is
    the assignment problem.
    """
    A, B = _matrix(A), _matrix(B)
    n = A.shape[0]
    if B.shape[0] != n:
        raise ValueError("exact_ot requires equally sized point sets")
    if n > EXACT_OT_MAX_POINTS:
        raise ValueError(f"exact_ot is limited to {EXACT_OT_MAX_POINTS} points, got {n}")
    C = cost_matrix(Tensor(A.data), Tensor(B.data), p).data
    rows, cols = linear_sum_assignment(C)
    return float(C[rows, cols].sum() / n)


def brute_force_ot(A, B, p: float = 2.0) -> float:
    """Minimum over all permutations; factorial cost, meant for tests."""
    C = cost_matrix(Tensor(_matrix(A).data), Tensor(_matrix(B).data), p).data
    n = C.shape[0]
    idx = np.arange(n)
    return min(C[idx, list(perm)].sum() for perm in itertools.permutations(range(n))) / n


def pointwise_loss(A, B) -> Tensor:
    """Squared Euclidean distance between the row means of A and B."""
    A, B = _matrix(A), _matrix(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    diff = sub(mean(A, axis=0), mean(B, axis=0))
    return tsum(mul(diff, diff))
