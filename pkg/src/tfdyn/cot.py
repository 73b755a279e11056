"""Parity by chain of thought: the sliding-window reduction to even pairs and
full autoregressive generation with a teacher-forced model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .model import ModelParams, check_fits, predict
from .sequences import ValidationError, check_sequence, embed, label_to_token, parity_label


@dataclass(frozen=True)
class CoTStep:
    window: str
    output: int
    appended: str


@dataclass(frozen=True)
class CoTRun:
    sequence: str
    steps: tuple[CoTStep, ...]
    prediction: int

    @property
    def generated(self) -> str:
        return "".join(s.appended for s in self.steps)


class IdealComparator:
    """+1 iff the first and last tokens agree."""

    name = "ideal"

    def __call__(self, seq: str) -> int:
        check_sequence(seq)
        return 1 if seq[0] == seq[-1] else -1

    def check_window(self, seq: str):
        pass


class ModelComparator:
    """Delegates to the sign of a trained model's output."""

    name = "model"

    def __init__(self, params: ModelParams):
        self.params = params

    def __call__(self, seq: str) -> int:
        self.check_window(seq)
        return predict(self.params, seq)

    def check_window(self, seq: str):
        check_fits(self.params, seq)


Comparator = Union[IdealComparator, ModelComparator, Callable[[str], int]]


def greedy_token_of(prediction: int) -> str:
    return label_to_token(prediction)


def truncated_cot_infer(comparator: Comparator, seq: str) -> CoTRun:
    """Slide a length-L window L-1 times, appending the comparator's verdict.

    The window is re-embedded from scratch every iteration, so its tokens
    always sit at positions 1..L.
    """
    check_sequence(seq)
    L = len(seq)
    if L < 2:
        raise ValidationError("truncated CoT needs a sequence of length >= 2")
    check = getattr(comparator, "check_window", None)
    if check is not None:
        check(seq)
    window = seq
    steps = []
    y = 0
    for _ in range(L - 1):
        y = int(comparator(window))
        if y not in (1, -1):
            raise ValidationError(f"comparator returned {y!r}, expected +1 or -1")
        w = greedy_token_of(y)
        steps.append(CoTStep(window, y, w))
        window = window[1:] + w
    return CoTRun(seq, tuple(steps), y)


def window_positions(window: str, d: int) -> list[int]:
    """1-based positions of the nonzero embedding coordinates of ``window``."""
    X = embed(window, d)
    rows = np.nonzero(X)[0]
    return sorted({int(r) // 2 + 1 for r in rows})


def autoregressive_cot_infer(params: ModelParams, seq: str, l0: int) -> CoTRun:
    """Generate L0-1 tokens, each the model's label for the growing sequence."""
    check_sequence(seq)
    if l0 < 2:
        raise ValidationError(f"l0 must be >= 2, got {l0}")
    if len(seq) != l0:
        raise ValidationError(f"autoregressive CoT expects a length-{l0} input, got length {len(seq)}")
    if params.d < 2 * (2 * l0 - 1):
        raise ValidationError(f"d={params.d} cannot embed length {2 * l0 - 1}; need d >= {2 * (2 * l0 - 1)}")
    cur = seq
    steps = []
    y = 0
    for _ in range(l0 - 1):
        y = predict(params, cur)
        w = greedy_token_of(y)
        steps.append(CoTStep(cur, y, w))
        cur = cur + w
    return CoTRun(seq, tuple(steps), y)


def automaton_parity(seq: str) -> int:
    """Two-state automaton: s_1 = w_1, s_{t+1} = a iff s_t == w_{t+1}."""
    check_sequence(seq)
    s = seq[0]
    for w in seq[1:]:
        s = "a" if s == w else "b"
    return 1 if s == "a" else -1


@dataclass(frozen=True)
class InferenceRow:
    sequence: str
    prediction: int
    truth: int

    @property
    def correct(self) -> bool:
        return self.prediction == self.truth


def evaluate(runs) -> tuple[list[InferenceRow], float]:
    rows = [InferenceRow(r.sequence, r.prediction, parity_label(r.sequence)) for r in runs]
    acc = sum(r.correct for r in rows) / len(rows) if rows else float("nan")
    return rows, acc
