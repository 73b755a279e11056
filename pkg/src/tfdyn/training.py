"""Two-phase (and vanilla) full-batch gradient descent from zero initialization."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import diagnostics
from .gradients import loss_and_gradients, logistic_loss
from .maxmargin import MarginSolution, NotSeparableError, pool_dataset, solve_max_margin
from .model import ModelParams, save_checkpoint
from .sequences import EVEN_PAIRS, PARITY_COT, TaskDataset, ValidationError, build_dataset, default_dim

log = logging.getLogger(__name__)

TWO_PHASE = "two_phase"
VANILLA = "vanilla"
DIVERGENCE_LIMIT = 1e6

CONFIG_KEYS = ("task", "l_max", "l0", "eta", "lambda", "t0", "total_steps", "schedule",
               "snapshot_every", "out_dir")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    task: str
    l_max: int = 6
    l0: int = 4
    eta: float = 0.1
    lam: float = 2.0
    t0: int = 100
    total_steps: int = 5000
    schedule: str = TWO_PHASE
    snapshot_every: int = 10
    out_dir: str | None = None

    def __post_init__(self):
        if self.task not in (EVEN_PAIRS, PARITY_COT):
            raise ValidationError(f"task: expected 'even_pairs' or 'parity_cot', got {self.task!r}")
        if self.schedule not in (TWO_PHASE, VANILLA):
            raise ValidationError(f"schedule: expected 'two_phase' or 'vanilla', got {self.schedule!r}")
        checks = [
            ("eta", self.eta > 0, "must be positive"),
            ("lambda", self.lam > 0, "must be positive"),
            ("t0", 0 <= self.t0 <= self.total_steps, "must satisfy 0 <= t0 <= total_steps"),
            ("total_steps", self.total_steps >= 0, "must be >= 0"),
            ("snapshot_every", self.snapshot_every >= 1, "must be >= 1"),
            ("l_max", self.l_max >= 1, "must be >= 1"),
            ("l0", self.l0 >= 2, "must be >= 2"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ValidationError(f"{key}: {msg}")

    @property
    def d(self) -> int:
        return default_dim(self.task, l_max=self.l_max, l0=self.l0)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return {k: out[k] for k in CONFIG_KEYS}

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        unknown = set(obj) - set(CONFIG_KEYS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "task" not in obj:
            raise ValidationError("missing required key 'task'")
        kw = {("lam" if k == "lambda" else k): v for k, v in obj.items() if v is not None}
        types = {"l_max": int, "l0": int, "t0": int, "total_steps": int, "snapshot_every": int,
                 "eta": float, "lam": float, "task": str, "schedule": str, "out_dir": str}
        for k, v in kw.items():
            want = types[k]
            if want is int and (isinstance(v, bool) or not isinstance(v, int)):
                raise ValidationError(f"{'lambda' if k == 'lam' else k}: expected integer, got {v!r}")
            if want is float and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise ValidationError(f"{'lambda' if k == 'lam' else k}: expected number, got {v!r}")
            if want is str and not isinstance(v, str):
                raise ValidationError(f"{k}: expected string, got {v!r}")
            if want is float:
                kw[k] = float(v)
        return cls(**kw)

    def dataset(self) -> TaskDataset:
        return build_dataset(self.task, l_max=self.l_max, l0=self.l0)


@dataclass
class Trajectory:
    config: TrainConfig
    records: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    u_star: MarginSolution | None = None
    notes: list = field(default_factory=list)

    @property
    def steps(self) -> list[int]:
        return [r.t for r in self.records]

    def record_at(self, t: int):
        for r in self.records:
            if r.t == t:
                return r
        raise KeyError(t)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def init_params(config: TrainConfig) -> ModelParams:
    return ModelParams.zeros(config.d, config.lam)


def w_step_size(config: TrainConfig, t: int) -> float:
    """Learning rate on W at step index t: eta*lambda during phase 1 of two_phase, else eta."""
    if config.schedule == TWO_PHASE and t < config.t0:
        return config.eta * config.lam
    return config.eta


def apply_update(params: ModelParams, grads, config: TrainConfig, t: int) -> ModelParams:
    u = params.u - config.eta * grads.grad_u
    W = params.W - w_step_size(config, t) * grads.grad_W
    return ModelParams(u, W, params.lam)


def step(params: ModelParams, dataset: TaskDataset, config: TrainConfig, t: int) -> ModelParams:
    """theta_{t+1} from theta_t."""
    if t < 0:
        raise ValidationError("step index must be >= 0")
    _, grads = loss_and_gradients(params, dataset)
    return apply_update(params, grads, config, t)


def parity_loss_components(params: ModelParams, dataset: TaskDataset) -> tuple[float, float]:
    """(CoT loss over lengths >= L0, regularizing even-pairs loss over lengths < L0)."""
    if dataset.l0 is None:
        raise ValidationError("parity loss split needs a parity_cot dataset")
    b = logistic_loss(params, dataset)
    return b.cot_component, b.reg_component


def snapshot_steps(config: TrainConfig) -> list[int]:
    s = set(range(0, config.total_steps + 1, config.snapshot_every))
    s.update({0, config.t0, config.total_steps})
    return sorted(s)


def _solve_reference(params, dataset, t0, traj: Trajectory):
    pooled = pool_dataset(params, dataset, step=t0)
    try:
        return solve_max_margin(pooled)
    except NotSeparableError as exc:
        traj.notes.append(f"max-margin solve at t0={t0} failed: {exc}")
        log.warning("max-margin solve at t0=%d failed: %s", t0, exc)
        return None


def train(config: TrainConfig, out_dir=None, write: bool | None = None) -> Trajectory:
    """Run ``total_steps`` GD steps from zero and record every snapshot.

    When an output directory is given (argument or ``config.out_dir``),
    writes ``config-as-run.json``, ``metrics.csv``, ``ckpt_<step>.json`` and
    ``u_star.json``.
    """
    out_dir = out_dir if out_dir is not None else config.out_dir
    if write is None:
        write = out_dir is not None
    dataset = config.dataset()
    params = init_params(config)
    snaps = set(snapshot_steps(config))
    traj = Trajectory(config)
    W_t0 = None
    for t in range(config.total_steps + 1):
        loss, grads = loss_and_gradients(params, dataset)
        if not math.isfinite(loss.total) or loss.total > DIVERGENCE_LIMIT:
            raise TrainingDiverged(f"loss {loss.total!r} at step {t} "
                                   f"(eta={config.eta}, lambda={config.lam}, schedule={config.schedule})")
        if t == config.t0:
            W_t0 = params.W.copy()
            traj.u_star = _solve_reference(params, dataset, t, traj)
        if t in snaps:
            u_star = traj.u_star.u_star if traj.u_star is not None else None
            traj.records.append(diagnostics.record(params, t, dataset, u_star=u_star, W_t0=W_t0, loss=loss))
            traj.checkpoints[t] = params
        if t < config.total_steps:
            params = apply_update(params, grads, config, t)
    if write:
        write_run(traj, out_dir)
    return traj


def write_run(traj: Trajectory, out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config-as-run.json").write_text(json.dumps(replace(traj.config, out_dir=str(out)).to_dict(),
                                                           indent=2, sort_keys=True) + "\n")
        diagnostics.export_csv(traj, out / "metrics.csv")
        for t, p in traj.checkpoints.items():
            save_checkpoint(out / f"ckpt_{t}.json", p, t, traj.config.task)
        if traj.u_star is not None:
            (out / "u_star.json").write_text(json.dumps(traj.u_star.to_json()) + "\n")
    except OSError as exc:
        raise OSError(f"writing run to {out}: {exc}") from exc
    return out


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"reading config {path}: {exc}") from exc
    if not text.strip():
        raise ValidationError(f"{path}: empty config, missing required key 'task'")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return TrainConfig.from_dict(obj)


def load_run(run_dir) -> Trajectory:
    """Rebuild a Trajectory from a directory written by ``write_run``."""
    from .model import load_checkpoint

    run = Path(run_dir)
    if not run.is_dir():
        raise ValidationError(f"{run}: not a run directory")
    config = load_config(run / "config-as-run.json")
    traj = Trajectory(config, records=diagnostics.read_csv(run / "metrics.csv"))
    for p in run.glob("ckpt_*.json"):
        params, step, _ = load_checkpoint(p)
        traj.checkpoints[step] = params
    us = run / "u_star.json"
    if us.exists():
        obj = json.loads(us.read_text())
        u = np.array(obj["u_star"], dtype=np.float64)
        traj.u_star = MarginSolution(u, np.zeros(0), tuple(obj.get("support_indices", ())), obj.get("kkt", {}),
                                     float("nan"), float(0.5 * u @ u))
    return traj
