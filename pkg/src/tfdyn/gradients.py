"""Closed-form logistic loss and gradients, plus a finite-difference oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import ModelParams
from .sequences import TaskDataset


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    per_length: dict[int, float]
    cot_component: float = 0.0
    reg_component: float = 0.0


@dataclass(frozen=True, eq=False)
class GradientPair:
    grad_u: np.ndarray
    grad_W: np.ndarray


def j_prime(y: int, logit: float) -> float:
    """Derivative of log(1 + exp(-x)) at x = y * logit, i.e. -1 / (1 + exp(y * logit))."""
    return _kernels._j_prime(y * logit)


def logistic(z: float) -> float:
    """log(1 + exp(-z))."""
    return _kernels._softplus_neg(z)


def _evaluate(params: ModelParams, dataset: TaskDataset):
    if params.d != dataset.d:
        raise ValueError(f"model d={params.d} does not match dataset d={dataset.d}")
    return _kernels.loss_and_grads(dataset.idx, dataset.lengths, dataset.labels, dataset.weights,
                                   dataset.group_starts, params.u, params.W, params.lam)


def _breakdown(dataset: TaskDataset, loss_groups) -> LossBreakdown:
    starts = dataset.group_starts
    per_length = {int(dataset.lengths[starts[g]]): float(loss_groups[g]) for g in range(len(loss_groups))}
    total = 0.0
    for v in loss_groups:
        total += v
    cot = reg = 0.0
    if dataset.l0 is not None:
        for L, v in per_length.items():
            if L >= dataset.l0:
                cot += v
            else:
                reg += v
    return LossBreakdown(total, per_length, cot, reg)


def loss_and_gradients(params: ModelParams, dataset: TaskDataset) -> tuple[LossBreakdown, GradientPair]:
    groups, gu, gW = _evaluate(params, dataset)
    return _breakdown(dataset, groups), GradientPair(gu, gW)


def logistic_loss(params: ModelParams, dataset: TaskDataset) -> LossBreakdown:
    """sum_L 1/|I_L| sum_{n in I_L} log(1 + exp(-y_n T(X_n)))."""
    return loss_and_gradients(params, dataset)[0]


def grad_u(params: ModelParams, dataset: TaskDataset) -> np.ndarray:
    return _evaluate(params, dataset)[1]


def grad_W(params: ModelParams, dataset: TaskDataset) -> np.ndarray:
    return _evaluate(params, dataset)[2]


def _example_loss(u, W, lam, I, y) -> float:
    scores = W[I, I[-1]] / lam
    e = np.exp(scores - scores.max())
    phi = e / e.sum()
    return logistic(y * float(phi @ u[I]))


def fd_gradient(params: ModelParams, dataset: TaskDataset, h: float = 1e-5) -> GradientPair:
    """Central differences of the loss, one coordinate at a time.

    The loss is re-evaluated per example from scratch (no shared code with
    the gradient kernels).  Per-example differences are taken before
    summing, so rounding error scales with each example's own loss rather
    than the total.  Coordinates of ``W`` that no sequence touches are
    exactly zero and are not probed.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    d, lam = params.d, params.lam
    rows = [dataset.idx[i, :dataset.lengths[i]] for i in range(len(dataset))]
    users: dict[int, list[int]] = {}
    for i, I in enumerate(rows):
        for k in set(I.tolist()):
            users.setdefault(k, []).append(i)

    def central(i, up, Wp, um, Wm):
        I, y = rows[i], dataset.labels[i]
        return dataset.weights[i] * (_example_loss(up, Wp, lam, I, y) - _example_loss(um, Wm, lam, I, y))

    u0, W0 = params.u, params.W
    gu = np.zeros(d)
    for k, ex in users.items():
        up, um = u0.copy(), u0.copy()
        up[k] += h
        um[k] -= h
        gu[k] = sum(central(i, up, W0, um, W0) for i in ex) / (2 * h)

    gW = np.zeros((d, d))
    entries: dict[tuple[int, int], list[int]] = {}
    for i, I in enumerate(rows):
        for r in set(I.tolist()):
            entries.setdefault((r, int(I[-1])), []).append(i)
    for (r, c), ex in sorted(entries.items()):
        Wp, Wm = W0.copy(), W0.copy()
        Wp[r, c] += h
        Wm[r, c] -= h
        gW[r, c] = sum(central(i, u0, Wp, u0, Wm) for i in ex) / (2 * h)
    return GradientPair(gu, gW)


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """max_k |a_k - n_k| / max(|a_k|, |n_k|, floor)."""
    a = np.asarray(analytic).ravel()
    n = np.asarray(numeric).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradient_norm_bounds(params: ModelParams, dataset: TaskDataset, grads: GradientPair) -> dict:
    """Check ||grad_u|| <= L_max and ||grad_W||_F <= ||u|| L_max / lambda."""
    lmax = dataset.max_length
    nu = float(np.linalg.norm(grads.grad_u))
    nW = float(np.linalg.norm(grads.grad_W))
    bW = float(np.linalg.norm(params.u)) * lmax / params.lam
    return {"grad_u_norm": nu, "grad_u_bound": float(lmax), "grad_W_norm": nW, "grad_W_bound": bW,
            "ok": nu <= lmax and nW <= bW * (1 + 1e-12) + 1e-300}

