"""Binary sequences over {a, b}, one-hot positional embeddings and task labels.

Sequences are plain ``str`` objects such as ``"abba"``.  Position ``l``
(1-based) holding token ``a`` embeds to ``e_{2l-1}``, token ``b`` to
``e_{2l}``; in 0-based array coordinates that is index ``2(l-1)`` for ``a``
and ``2(l-1) + 1`` for ``b``.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

TOKENS = ("a", "b")
MAX_SEQ_LEN = 32

EVEN_PAIRS = "even_pairs"
PARITY_COT = "parity_cot"

TAG_EVEN_PAIRS = "even_pairs"
TAG_COT_REG = "cot_reg"
TAG_COT_STEP = "cot_step"


class ValidationError(ValueError):
    """Raised for out-of-range lengths, dimensions or malformed sequences."""


def flip(w: str) -> str:
    if w not in TOKENS:
        raise ValidationError(f"not a token: {w!r}")
    return "b" if w == "a" else "a"


def check_sequence(seq: str, max_len: int = MAX_SEQ_LEN) -> str:
    if not seq:
        raise ValidationError("sequence must be nonempty")
    if len(seq) > max_len:
        raise ValidationError(f"sequence length {len(seq)} exceeds maximum {max_len}")
    bad = set(seq) - set(TOKENS)
    if bad:
        raise ValidationError(f"sequence {seq!r} has tokens outside {{a,b}}: {sorted(bad)}")
    return seq


def enumerate_sequences(L: int, max_len: int = MAX_SEQ_LEN) -> list[str]:
    """All 2**L sequences of length ``L`` in lexicographic order (a < b)."""
    if not 1 <= L <= max_len:
        raise ValidationError(f"length {L} outside 1..{max_len}")
    return ["".join(p) for p in itertools.product(TOKENS, repeat=L)]


def token_index(position: int, w: str) -> int:
    """0-based coordinate of E_position^w."""
    if position < 1:
        raise ValidationError(f"positions are 1-based, got {position}")
    if w not in TOKENS:
        raise ValidationError(f"not a token: {w!r}")
    return 2 * (position - 1) + (w == "b")


def embedding_vector(position: int, w: str, d: int) -> np.ndarray:
    if 2 * position > d:
        raise ValidationError(f"position {position} does not fit in dimension {d}")
    e = np.zeros(d)
    e[token_index(position, w)] = 1.0
    return e


def token_indices(seq: str) -> np.ndarray:
    return np.array([token_index(i + 1, w) for i, w in enumerate(seq)], dtype=np.int64)


def embed(seq: str, d: int) -> np.ndarray:
    """Embed ``seq`` as a ``d x L`` matrix whose columns are one-hot vectors."""
    check_sequence(seq)
    if 2 * len(seq) > d:
        raise ValidationError(f"length-{len(seq)} sequence needs d >= {2 * len(seq)}, got d={d}")
    X = np.zeros((d, len(seq)))
    X[token_indices(seq), np.arange(len(seq))] = 1.0
    return X


def substring_pattern_count(seq: str, patterns) -> int:
    """Total number of contiguous occurrences of every pattern in ``seq``."""
    total = 0
    for p in patterns:
        k = len(p)
        total += sum(seq[i:i + k] == p for i in range(len(seq) - k + 1))
    return total


def even_pairs_label(seq: str) -> int:
    # Equivalent to counting ab/ba substrings mod 2.
    check_sequence(seq)
    return 1 if seq[0] == seq[-1] else -1


def parity_label(seq: str) -> int:
    check_sequence(seq)
    return 1 if seq.count("b") % 2 == 0 else -1


def cot_step_label(seq: str, L0: int) -> int:
    """+1 iff the token at position L - L0 + 1 equals the last token."""
    check_sequence(seq)
    L = len(seq)
    if L < L0:
        raise ValidationError(f"CoT step label needs length >= L0={L0}, got {L}")
    return 1 if seq[L - L0] == seq[-1] else -1


def label_to_token(y: int) -> str:
    if y not in (1, -1):
        raise ValidationError(f"label must be +1 or -1, got {y}")
    return "a" if y == 1 else "b"


def token_to_label(w: str) -> int:
    if w not in TOKENS:
        raise ValidationError(f"not a token: {w!r}")
    return 1 if w == "a" else -1


@dataclass(frozen=True)
class CoTTrace:
    base: str
    steps: tuple[str, ...]      # X^1 .. X^{L0-1}
    appended: tuple[str, ...]   # w_{L0+1} .. w_{2L0-1}

    @property
    def final_token(self) -> str:
        return self.appended[-1]

    @property
    def full(self) -> str:
        return self.base + "".join(self.appended)


def cot_trace(seq: str, L0: int | None = None) -> CoTTrace:
    """Teacher chain-of-thought for the parity of ``seq``.

    At step t the current sequence X^t is extended with ``a`` when its
    tokens at positions t and L0 + t - 1 agree, ``b`` otherwise.
    """
    check_sequence(seq)
    if L0 is None:
        L0 = len(seq)
    if len(seq) != L0 or L0 < 2:
        raise ValidationError(f"CoT trace needs a base sequence of length L0 >= 2, got {len(seq)} (L0={L0})")
    cur = seq
    steps, appended = [], []
    for t in range(1, L0):
        steps.append(cur)
        w = "a" if cur[t - 1] == cur[L0 + t - 2] else "b"
        appended.append(w)
        cur = cur + w
    return CoTTrace(seq, tuple(steps), tuple(appended))


@dataclass(frozen=True)
class LabeledExample:
    sequence: str
    label: int
    weight: float
    task_tag: str


@dataclass(frozen=True, eq=False)
class TaskDataset:
    """Exhaustively enumerated, weighted, labeled sequences for one task.

    Examples are grouped by length (ascending) and lexicographic within each
    length.  ``idx`` holds 0-based embedding coordinates padded with -1.
    """

    task: str
    d: int
    l_max: int | None
    l0: int | None
    examples: tuple[LabeledExample, ...]
    idx: np.ndarray = field(repr=False)
    lengths: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    group_starts: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def max_length(self) -> int:
        return int(self.lengths.max())

    @property
    def sequences(self) -> list[str]:
        return [ex.sequence for ex in self.examples]

    @property
    def tags(self) -> list[str]:
        return [ex.task_tag for ex in self.examples]

    def by_length(self) -> dict[int, list[LabeledExample]]:
        out: dict[int, list[LabeledExample]] = {}
        for ex in self.examples:
            out.setdefault(len(ex.sequence), []).append(ex)
        return out

    def subset(self, keep) -> "TaskDataset":
        """Dataset restricted to examples whose index is in ``keep``.

        Weights are recomputed as 1/|I_L| from the retained examples.
        """
        keep = sorted(set(int(i) for i in keep))
        exs = [self.examples[i] for i in keep]
        return _assemble(self.task, self.d, self.l_max, self.l0,
                         [(e.sequence, e.label, e.task_tag) for e in exs])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["length", "sequence", "label", "weight", "task_tag"])
        for ex in self.examples:
            w.writerow([len(ex.sequence), ex.sequence, ex.label, repr(ex.weight), ex.task_tag])
        return buf.getvalue()


def _assemble(task, d, l_max, l0, rows) -> TaskDataset:
    rows = sorted(rows, key=lambda r: (len(r[0]), r[0]))
    counts: dict[int, int] = {}
    for seq, _, _ in rows:
        counts[len(seq)] = counts.get(len(seq), 0) + 1
    examples = tuple(LabeledExample(s, y, 1.0 / counts[len(s)], tag) for s, y, tag in rows)
    n = len(examples)
    width = max((len(s) for s, _, _ in rows), default=1)
    idx = np.full((n, width), -1, dtype=np.int64)
    for i, ex in enumerate(examples):
        idx[i, :len(ex.sequence)] = token_indices(ex.sequence)
    lengths = np.array([len(ex.sequence) for ex in examples], dtype=np.int64)
    starts = [0] + [i for i in range(1, n) if lengths[i] != lengths[i - 1]] + [n]
    for arr in (idx, lengths):
        arr.setflags(write=False)
    labels = np.array([ex.label for ex in examples], dtype=np.float64)
    weights = np.array([ex.weight for ex in examples], dtype=np.float64)
    group_starts = np.array(starts, dtype=np.int64)
    for arr in (labels, weights, group_starts):
        arr.setflags(write=False)
    return TaskDataset(task, d, l_max, l0, examples, idx, lengths, labels, weights, group_starts)


def default_dim(task: str, l_max: int | None = None, l0: int | None = None) -> int:
    if task == EVEN_PAIRS:
        return 2 * l_max
    if task == PARITY_COT:
        # CoT inputs reach length 2*L0 - 1.
        return 2 * (2 * l0 - 1)
    raise ValidationError(f"unknown task {task!r}")


def build_even_pairs_dataset(l_max: int, d: int | None = None) -> TaskDataset:
    if l_max < 1:
        raise ValidationError(f"l_max must be >= 1, got {l_max}")
    d = default_dim(EVEN_PAIRS, l_max=l_max) if d is None else d
    if d < 2 * l_max:
        raise ValidationError(f"even pairs with l_max={l_max} needs d >= {2 * l_max}, got {d}")
    rows = [(s, even_pairs_label(s), TAG_EVEN_PAIRS)
            for L in range(1, l_max + 1) for s in enumerate_sequences(L)]
    return _assemble(EVEN_PAIRS, d, l_max, None, rows)


def build_parity_cot_dataset(l0: int, d: int | None = None) -> TaskDataset:
    """Lengths < L0 carry even-pairs labels; lengths L0..2L0-1 carry CoT step labels."""
    if l0 < 2:
        raise ValidationError(f"L0 must be >= 2, got {l0}")
    top = 2 * l0 - 1
    d = default_dim(PARITY_COT, l0=l0) if d is None else d
    if d < 2 * top:
        raise ValidationError(f"parity CoT with L0={l0} needs d >= {2 * top}, got {d}")
    rows = []
    for L in range(1, top + 1):
        for s in enumerate_sequences(L):
            if L < l0:
                rows.append((s, even_pairs_label(s), TAG_COT_REG))
            else:
                rows.append((s, cot_step_label(s, l0), TAG_COT_STEP))
    return _assemble(PARITY_COT, d, None, l0, rows)


def build_dataset(task: str, l_max: int | None = None, l0: int | None = None, d: int | None = None) -> TaskDataset:
    if task == EVEN_PAIRS:
        return build_even_pairs_dataset(l_max, d)
    if task == PARITY_COT:
        return build_parity_cot_dataset(l0, d)
    raise ValidationError(f"unknown task {task!r}")
