"""Training losses: reconstruction, hard (late-prediction), soft, and unseen terms.

Per-scene losses are summed over pixels and averaged over the batch. Inputs
with a leading batch axis are treated as a batch of scenes; 2-d inputs as a
single scene. Ground truth ``E`` and mask ``M`` are constants.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    beta: float = 100.0
    gamma_h: float = 1000.0
    gamma_u: float = 1000.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")


def _as_tensor(P):
    return P if isinstance(P, Tensor) else Tensor(np.asarray(P, dtype=float))


def _const(x, like: Tensor):
    arr = np.asarray(x, dtype=like.dtype)
    if arr.shape != like.shape:
        try:
            arr = arr.reshape(like.shape)
        except ValueError:
            raise ValueError(f"shape mismatch: {arr.shape} vs {like.shape}") from None
    return arr


def _reduce(x: Tensor, per_pixel=False) -> Tensor:
    if x.ndim <= 2:
        return x.mean() if per_pixel else x.sum()
    axes = tuple(range(1, x.ndim))
    per_scene = x.mean(axis=axes) if per_pixel else x.sum(axis=axes)
    return per_scene.mean()


def rec_loss(P, E, per_pixel=False) -> Tensor:
    P = _as_tensor(P)
    d = P - _const(E, P)
    return _reduce(d * d, per_pixel)


def hard_exact(P, E) -> int:
    P, E = np.asarray(P), np.asarray(E)
    if P.shape != E.shape:
        raise ValueError(f"shape mismatch: {P.shape} vs {E.shape}")
    return int(np.count_nonzero(P > E))


def unseen_exact(P, E, M) -> int:
    P, E, M = np.asarray(P), np.asarray(E), np.asarray(M)
    return int(np.count_nonzero((P > E) & (M != 0)))


def _late(P: Tensor, E, beta) -> Tensor:
    return tn.sigmoid((P - _const(E, P)) * float(beta))


def hard_smooth(P, E, beta=100.0, per_pixel=False) -> Tensor:
    P = _as_tensor(P)
    return _reduce(_late(P, E, beta), per_pixel)


def soft_loss(P, per_pixel=False) -> Tensor:
    P = _as_tensor(P)
    return -_reduce(P, per_pixel)


def unseen_loss(P, E, M, beta=100.0, per_pixel=False) -> Tensor:
    P = _as_tensor(P)
    return _reduce(_late(P, E, beta) * _const(M, P), per_pixel)


@dataclass
class LossTerms:
    """Weighted terms as logged; ``total`` carries the graph."""

    total: Tensor
    rec: float
    hard: float
    soft: float
    unseen: float


def total_loss(P, E, M, weights: LossWeights = LossWeights(), no_hard=False, no_soft=False,
               no_unseen=False, per_pixel=False) -> LossTerms:
    """L = L_rec + gamma_h L_h + L_s + gamma_u L_u with ablation switches."""
    P = _as_tensor(P)
    terms = [rec_loss(P, E, per_pixel)]
    hard = soft = unseen = None
    if not no_hard:
        hard = hard_smooth(P, E, weights.beta, per_pixel) * weights.gamma_h
        terms.append(hard)
    if not no_soft:
        soft = soft_loss(P, per_pixel)
        terms.append(soft)
    if not no_unseen:
        unseen = unseen_loss(P, E, M, weights.beta, per_pixel) * weights.gamma_u
        terms.append(unseen)
    total = terms[0]
    for t in terms[1:]:
        total = total + t

    def val(t):
        return 0.0 if t is None else float(t.data)

    return LossTerms(total, val(terms[0]), val(hard), val(soft), val(unseen))
