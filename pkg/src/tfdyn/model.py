"""One-layer softmax-attention transformer with reparameterized (u, W)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sequences import ValidationError, check_sequence, embed, token_index


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Linear layer ``u`` (d,), attention matrix ``W`` (d, d), softmax scale ``lam``."""

    u: np.ndarray
    W: np.ndarray
    lam: float

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        W = np.asarray(self.W, dtype=np.float64)
        if u.ndim != 1 or W.shape != (u.shape[0], u.shape[0]):
            raise ValidationError(f"inconsistent shapes u{u.shape} W{W.shape}")
        if not self.lam > 0:
            raise ValidationError(f"lambda must be positive, got {self.lam}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def d(self) -> int:
        return self.u.shape[0]

    @classmethod
    def zeros(cls, d: int, lam: float) -> "ModelParams":
        return cls(np.zeros(d), np.zeros((d, d)), lam)

    def with_u(self, u) -> "ModelParams":
        return ModelParams(u, self.W, self.lam)


@dataclass(frozen=True)
class AttentionOutput:
    weights: np.ndarray
    pooled: np.ndarray
    logit: float


def _as_matrix(params: ModelParams, X) -> np.ndarray:
    if isinstance(X, str):
        return embed(X, params.d)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != params.d:
        raise ValidationError(f"embedded sequence must be {params.d} x L, got {X.shape}")
    return X


def softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max())
    return e / e.sum()


def attention_weights(params: ModelParams, X) -> np.ndarray:
    """Softmax over positions of <x_l, W x_L> / lambda.

    ``X`` is either a sequence string or a ``d x L`` embedding.
    """
    X = _as_matrix(params, X)
    return softmax(X.T @ (params.W @ X[:, -1]) / params.lam)


def attend(params: ModelParams, X) -> AttentionOutput:
    X = _as_matrix(params, X)
    phi = attention_weights(params, X)
    pooled = X @ phi
    return AttentionOutput(phi, pooled, float(params.u @ pooled))


def forward(params: ModelParams, X) -> float:
    return attend(params, X).logit


def predict(params: ModelParams, X) -> int:
    """Sign of the output; an exact zero counts as +1."""
    return 1 if forward(params, X) >= 0.0 else -1


def _check_position(params: ModelParams, position: int):
    if not 1 <= position or 2 * position > params.d:
        raise ValidationError(f"position {position} outside 1..{params.d // 2}")


def token_score(params: ModelParams, position: int, w: str) -> float:
    """<u, E_position^w>."""
    _check_position(params, position)
    return float(params.u[token_index(position, w)])


def attention_score(params: ModelParams, position: int, w: str, last_position: int, w_last: str) -> float:
    """Raw bilinear score <E_position^w, W E_last^w_last>."""
    _check_position(params, position)
    _check_position(params, last_position)
    return float(params.W[token_index(position, w), token_index(last_position, w_last)])


# ---------------------------------------------------------------- checkpoints

def checkpoint_dict(params: ModelParams, step: int, task: str) -> dict:
    return {
        "d": params.d,
        "lambda": params.lam,
        "u": params.u.tolist(),
        "W": params.W.ravel().tolist(),
        "step": int(step),
        "task": task,
    }


def save_checkpoint(path, params: ModelParams, step: int, task: str) -> Path:
    # json writes floats via repr, which round-trips doubles exactly
    path = Path(path)
    path.write_text(json.dumps(checkpoint_dict(params, step, task)) + "\n")
    return path


def params_from_dict(obj: dict) -> tuple[ModelParams, int, str]:
    try:
        d = int(obj["d"])
        u = np.array(obj["u"], dtype=np.float64)
        W = np.array(obj["W"], dtype=np.float64).reshape(d, d)
        params = ModelParams(u, W, float(obj["lambda"]))
        return params, int(obj["step"]), str(obj["task"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed checkpoint: {exc}") from exc


def load_checkpoint(path) -> tuple[ModelParams, int, str]:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    params, step, task = params_from_dict(obj)
    for v in (*params.u, *params.W.ravel()):
        if not math.isfinite(v):
            raise ValidationError(f"{path}: non-finite parameter")
    return params, step, task


def max_supported_length(params: ModelParams) -> int:
    return params.d // 2


def check_fits(params: ModelParams, seq: str):
    check_sequence(seq)
    if len(seq) > max_supported_length(params):
        raise ValidationError(f"length-{len(seq)} sequence exceeds model capacity {max_supported_length(params)}")
