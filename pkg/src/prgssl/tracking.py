"""Label bank and rolling window of per-batch class-transition counts."""

from collections import deque
from typing import Optional

import numpy as np

from .errors import EmptyWindowError, InvalidParameterError

UNASSIGNED = -1


class LabelBank:
    """Last hard class prediction for every unlabeled sample.

    Slots start unassigned; a sample's first prediction is recorded without
    counting a transition.
    """

    def __init__(self, size: int, k: int):
        if size < 0 or k < 2:
            raise InvalidParameterError("bank needs size >= 0 and k >= 2")
        self.k = k
        self.slots = np.full(size, UNASSIGNED, dtype=np.int64)

    def __len__(self):
        return len(self.slots)

    def __getitem__(self, idx):
        return int(self.slots[idx])

    def assigned(self, idx) -> bool:
        return self.slots[idx] != UNASSIGNED

    def observe(self, idx: int, predicted: int) -> Optional[tuple]:
        if not 0 <= idx < len(self.slots):
            raise IndexError(f"sample index {idx} outside bank of size {len(self.slots)}")
        if not 0 <= predicted < self.k:
            raise InvalidParameterError(f"class {predicted} outside [0, {self.k})")
        prev = int(self.slots[idx])
        if prev == predicted:
            return None
        self.slots[idx] = predicted
        if prev == UNASSIGNED:
            return None
        return prev, int(predicted)

    def copy(self) -> "LabelBank":
        out = LabelBank(len(self.slots), self.k)
        out.slots = self.slots.copy()
        return out


def finalize_batch(events, predictions, k: int):
    """Per-batch transition matrix and prediction tally.

    ``events`` is a sequence of ``(from, to)`` pairs with ``from != to``.
    """
    counts = np.zeros((k, k), dtype=np.int64)
    for i, j in events:
        if not (0 <= i < k and 0 <= j < k):
            raise InvalidParameterError(f"transition ({i}, {j}) outside [0, {k})")
        if i == j:
            raise InvalidParameterError("self-transitions are never counted")
        counts[i, j] += 1
    preds = np.asarray(predictions, dtype=np.int64)
    if preds.size and (preds.min() < 0 or preds.max() >= k):
        raise InvalidParameterError("prediction outside class range")
    tally = np.bincount(preds, minlength=k).astype(np.int64)
    return counts, tally


class TrackingWindow:
    """Ring buffers of the last ``capacity`` batch matrices and prediction tallies."""

    def __init__(self, capacity: int, k: int):
        if capacity < 1:
            raise InvalidParameterError("window capacity N_B must be >= 1")
        self.capacity = capacity
        self.k = k
        self.matrices = deque(maxlen=capacity)
        self.pred_counts = deque(maxlen=capacity)

    def __len__(self):
        return len(self.matrices)

    def push(self, matrix, tally):
        matrix = np.asarray(matrix, dtype=np.int64)
        if matrix.shape != (self.k, self.k) or np.any(np.diag(matrix)):
            raise InvalidParameterError("batch matrix must be k x k with zero diagonal")
        self.matrices.append(matrix)
        self.pred_counts.append(np.asarray(tally, dtype=np.int64))

    def summed_matrix(self) -> np.ndarray:
        if not self.matrices:
            raise EmptyWindowError("tracking window is empty")
        return np.sum(self.matrices, axis=0)

    def averaged_matrix(self) -> np.ndarray:
        # divide by the stored count so early estimates are scale-correct
        return self.summed_matrix() / len(self.matrices)

    def averaged_counts(self) -> np.ndarray:
        if not self.pred_counts:
            raise EmptyWindowError("tracking window is empty")
        return np.sum(self.pred_counts, axis=0) / len(self.pred_counts)

    def copy(self) -> "TrackingWindow":
        out = TrackingWindow(self.capacity, self.k)
        out.matrices.extend(m.copy() for m in self.matrices)
        out.pred_counts.extend(c.copy() for c in self.pred_counts)
        return out


def averaged_matrix(window: TrackingWindow) -> np.ndarray:
    return window.averaged_matrix()


def averaged_counts(window: TrackingWindow) -> np.ndarray:
    return window.averaged_counts()


def symmetry_score(C) -> float:
    """|C - C^T|_1 / |C|_1; reported only, the matrix is not expected to be symmetric."""
    C = np.asarray(C, dtype=float)
    total = np.abs(C).sum()
    if total == 0:
        return 0.0
    return float(np.abs(C - C.T).sum() / total)


def write_matrix_csv(path, M):
    M = np.asarray(M, dtype=float)
    with open(path, "w") as fh:
        for row in M:
            fh.write(",".join(f"{v:.6f}" for v in row) + "\n")
