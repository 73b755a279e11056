"""Hard-margin (homogeneous) max-margin separator of attention-pooled sequences.

The solver is dual coordinate ascent on

    max_{alpha >= 0}  sum_n alpha_n - 1/2 || sum_n alpha_n y_n v_n ||^2

and stops on a KKT certificate.  ``support_subset_oracle`` solves the same
problem by brute force for small instances and shares no code with it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, nnls

from . import _kernels
from .model import ModelParams
from .sequences import TaskDataset, ValidationError


class NotSeparableError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PooledDataset:
    points: np.ndarray
    labels: np.ndarray
    step: int | None = None
    task: str | None = None
    sequences: tuple[str, ...] = field(default=(), repr=False)

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, keep) -> "PooledDataset":
        keep = list(keep)
        seqs = tuple(self.sequences[i] for i in keep) if self.sequences else ()
        return PooledDataset(self.points[keep], self.labels[keep], self.step, self.task, seqs)


@dataclass(frozen=True, eq=False)
class MarginSolution:
    u_star: np.ndarray
    alpha: np.ndarray
    support: tuple[int, ...]
    kkt: dict
    dual_objective: float
    primal_objective: float
    iterations: int = 0

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.u_star))

    @property
    def margin(self) -> float:
        return 1.0 / self.norm

    @property
    def duality_gap(self) -> float:
        return self.primal_objective - self.dual_objective

    def to_json(self) -> dict:
        return {
            "u_star": self.u_star.tolist(),
            "margin": self.margin,
            "support_indices": list(self.support),
            "kkt": dict(self.kkt),
        }


def pool_dataset(params: ModelParams, dataset: TaskDataset, step: int | None = None) -> PooledDataset:
    """One point per example: sum_l x_l phi_l under ``params``' attention."""
    if params.d != dataset.d:
        raise ValidationError(f"model d={params.d} does not match dataset d={dataset.d}")
    phi = _kernels.attention(dataset.idx, dataset.lengths, params.W, params.lam)
    V = np.zeros((len(dataset), dataset.d))
    for i in range(len(dataset)):
        L = dataset.lengths[i]
        V[i, dataset.idx[i, :L]] += phi[i, :L]
    return PooledDataset(V, np.array(dataset.labels), step, dataset.task, tuple(dataset.sequences))


def signed_margins(u, pooled: PooledDataset) -> np.ndarray:
    return pooled.labels * (pooled.points @ np.asarray(u, dtype=np.float64))


def is_separable_by(u, pooled: PooledDataset) -> tuple[bool, float]:
    m = signed_margins(u, pooled)
    lo = float(m.min())
    return lo > 0.0, lo


def kkt_residuals(u, alpha, pooled: PooledDataset) -> dict:
    """KKT residuals of (u, alpha), scale-normalized.

    feasibility      max(0, 1 - min_n y_n <u, v_n>)
    stationarity     ||u - sum_n alpha_n y_n v_n|| / max(1, ||u||)
    complementarity  max_n alpha_n |y_n <u, v_n> - 1| / max(1, sum_n alpha_n)
    duality_gap      |1/2 ||u||^2 - (sum alpha - 1/2 ||w||^2)| / max(1, 1/2 ||u||^2)

    The unnormalized values are included with an ``_abs`` suffix.  At the
    optimum sum_n alpha_n = ||u||^2, so the normalizations are the natural
    scale of each quantity; for badly conditioned instances (||u|| in the
    thousands) the absolute complementarity cannot go below ~1e-7 in
    double precision.
    """
    u = np.asarray(u, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    m = signed_margins(u, pooled)
    w = (alpha * pooled.labels) @ pooled.points
    nu = float(np.linalg.norm(u))
    stat = float(np.linalg.norm(u - w))
    comp = float(np.max(alpha * np.abs(m - 1.0))) if len(m) else 0.0
    primal = 0.5 * nu * nu
    dual = float(alpha.sum() - 0.5 * (w @ w))
    gap = abs(primal - dual)
    return {
        "feasibility": float(max(0.0, 1.0 - m.min())),
        "stationarity": stat / max(1.0, nu),
        "complementarity": comp / max(1.0, float(alpha.sum())),
        "duality_gap": gap / max(1.0, primal),
        "stationarity_abs": stat,
        "complementarity_abs": comp,
        "duality_gap_abs": gap,
    }


CERTIFIED_KEYS = ("feasibility", "stationarity", "complementarity", "duality_gap")


def certified(kkt: dict, tol: float) -> bool:
    return all(kkt[k] <= tol for k in CERTIFIED_KEYS)


def _solution(u, alpha, pooled, iterations, kkt=None) -> MarginSolution:
    kkt = kkt_residuals(u, alpha, pooled) if kkt is None else kkt
    w = (alpha * pooled.labels) @ pooled.points
    dual = float(alpha.sum() - 0.5 * (w @ w))
    primal = float(0.5 * (u @ u))
    support = tuple(int(i) for i in np.nonzero(alpha > 0)[0])
    return MarginSolution(np.asarray(u, dtype=np.float64), alpha, support, kkt, dual, primal, iterations)


def _polish(pooled: PooledDataset, S: np.ndarray):
    """Re-solve exactly with the constraints in ``S`` held active.

    u is the least-norm solution of y_S <u, v_S> = 1 and alpha_S >= 0 the
    NNLS fit of sum_S alpha_s y_s v_s = u.
    """
    A = pooled.labels[S, None] * pooled.points[S]
    u, *_ = np.linalg.lstsq(A, np.ones(S.size), rcond=None)
    a_S, _ = nnls(A.T, u, maxiter=50 * S.size)
    out = np.zeros(len(pooled))
    out[S] = a_S
    return u, out


def _feasible_start(pooled: PooledDataset, w: np.ndarray):
    """A point with all margins >= 1: the DCA iterate rescaled, else an LP witness."""
    m = signed_margins(w, pooled)
    if m.min() > 0:
        return w / m.min()
    A = pooled.labels[:, None] * pooled.points
    n, d = A.shape
    c = np.zeros(d + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.hstack([-A, np.ones((n, 1))]), b_ub=np.zeros(n),
                  bounds=[(-1.0, 1.0)] * d + [(None, 1.0)], method="highs")
    if res.status != 0 or -res.fun <= 0:
        raise NotSeparableError("no separating direction (LP margin is not positive)")
    u = res.x[:d]
    m = signed_margins(u, pooled)
    if m.min() <= 0:
        raise NotSeparableError(f"LP witness does not separate (min margin {m.min():.3g})")
    return u / m.min()


def _least_distance(pooled: PooledDataset, scale: float):
    """min ||u|| s.t. y_n <u, v_n> >= 1 as least-distance programming.

    Lawson-Hanson: with E = [A^T; c 1^T] and f = e_{d+1}, the NNLS residual
    r = E beta - f gives the solution for right-hand side c as -r[:d] / r[d].
    Choosing c ~ 1/||u*|| keeps r[d] of order one; with c = 1 it would be
    ~1/||u*||^2 and lose most of its digits to cancellation.
    """
    A = pooled.labels[:, None] * pooled.points
    n, d = A.shape
    E = np.vstack([A.T, np.full(n, scale)])
    f = np.zeros(d + 1)
    f[-1] = 1.0
    beta, _ = nnls(E, f, maxiter=100 * (n + d))
    r = E @ beta - f
    if abs(r[-1]) < 1e-14:
        raise NotSeparableError("least-distance residual vanished: constraints are infeasible")
    return -r[:d] / (r[-1] * scale), beta


def solve_max_margin(pooled: PooledDataset, tol: float = 1e-8, max_updates: int = 10**7,
                     check_every: int = 20, divergence: float = 1e9) -> MarginSolution:
    """min ||u|| s.t. y_n <u, v_n> >= 1 for all n, certified to ``tol``.

    Dual coordinate ascent.  After every ``check_every`` sweeps the
    iterate is checked, and so is a least-norm re-solve on the current dual
    support.  KKT conditions are sufficient here, so any candidate that
    passes the check is the optimum to within ``tol``.

    Nearly degenerate instances (||u*|| in the 1e4-1e5 range) can exhaust
    the update budget or push the duals past ``divergence`` while still
    being separable.  In that case the support is recovered by a rescaled
    least-distance NNLS solve and the re-solved candidate must pass the
    same KKT test.  Raises
    ``NotSeparableError`` when neither route yields a certificate.
    """
    V = np.ascontiguousarray(pooled.points, dtype=np.float64)
    y = np.ascontiguousarray(pooled.labels, dtype=np.float64)
    n = V.shape[0]
    if n == 0:
        raise ValidationError("empty pooled dataset")
    sqn = np.einsum("ij,ij->i", V, V)
    if np.any(sqn == 0.0):
        raise NotSeparableError("a zero point cannot satisfy y <u, v> >= 1")
    alpha = np.zeros(n)
    w = np.zeros(V.shape[1])
    updates = 0
    reason = f"no KKT certificate at tol={tol} within {max_updates} updates"
    while updates < max_updates:
        _kernels.dca_sweeps(V, y, sqn, alpha, w, check_every)
        updates += check_every * n
        w[:] = (alpha * y) @ V
        if alpha.max() > divergence:
            reason = f"dual variables diverged (max alpha {alpha.max():.3g}) after {updates} updates"
            break
        kkt = kkt_residuals(w, alpha, pooled)
        if certified(kkt, tol):
            return _solution(w.copy(), alpha.copy(), pooled, updates, kkt)
        S = np.nonzero(alpha > 0)[0]
        if S.size:
            u_p, a_p = _polish(pooled, S)
            kkt_p = kkt_residuals(u_p, a_p, pooled)
            if certified(kkt_p, tol):
                return _solution(u_p, a_p, pooled, updates, kkt_p)
    try:
        start = _feasible_start(pooled, w)
        _, beta = _least_distance(pooled, 1.0 / np.linalg.norm(start))
    except NotSeparableError as exc:
        raise NotSeparableError(f"{reason}; {exc}") from exc
    S = np.nonzero(beta > 0)[0]
    if S.size:
        u_p, a_p = _polish(pooled, S)
        kkt = kkt_residuals(u_p, a_p, pooled)
        if certified(kkt, tol):
            return _solution(u_p, a_p, pooled, updates, kkt)
    raise NotSeparableError(f"{reason}; least-distance fallback gave no certificate")


def support_subset_oracle(pooled: PooledDataset, max_points: int = 12, eps: float = 1e-9) -> MarginSolution:
    """Brute force: least-norm solution of y_S <u, v_S> = 1 over every
    candidate support set S with |S| <= d + 1, keeping the feasible one of
    smallest norm."""
    n, d = pooled.points.shape
    if n > max_points:
        raise ValidationError(f"oracle limited to {max_points} points, got {n}")
    A_all = pooled.labels[:, None] * pooled.points
    best = None
    for k in range(1, min(n, d + 1) + 1):
        for S in itertools.combinations(range(n), k):
            A = A_all[list(S)]
            u, *_ = np.linalg.lstsq(A, np.ones(k), rcond=None)
            if np.max(np.abs(A @ u - 1.0)) > eps:
                continue
            if np.min(A_all @ u) < 1.0 - eps:
                continue
            nu = float(u @ u)
            if best is None or nu < best[0] - 1e-14:
                best = (nu, u, S)
    if best is None:
        raise NotSeparableError("no feasible support subset")
    _, u, S = best
    A = A_all[list(S)]
    a_S = np.linalg.lstsq(A @ A.T, np.ones(len(S)), rcond=None)[0]
    alpha = np.zeros(n)
    alpha[list(S)] = a_S
    return _solution(u, alpha, pooled, 0)


def alignment(u, u_star) -> float:
    """Cosine of the angle between ``u`` and ``u_star``."""
    u = np.asarray(u, dtype=np.float64)
    u_star = np.asarray(u_star, dtype=np.float64)
    nu, ns = np.linalg.norm(u), np.linalg.norm(u_star)
    if nu == 0 or ns == 0:
        raise ValidationError("alignment undefined for a zero vector")
    return float(u @ u_star / (nu * ns))


def canonical_separator(d: int) -> np.ndarray:
    """E_1^a + E_1^b - E_2^a - E_2^b."""
    u = np.zeros(d)
    u[[0, 1]] = 1.0
    u[[2, 3]] = -1.0
    return u
