"""Containers shared by the data, model and experiment layers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TaskLayout:
    """Ordered GPSR tasks, each a (task id, class count) pair.

    Task ``r`` owns the contiguous logit columns ``offsets[r]:offsets[r] + m_r``.
    """

    tasks: tuple

    def __post_init__(self):
        tasks = tuple((str(t), int(m)) for t, m in self.tasks)
        if not tasks:
            raise ValueError("task layout needs at least one task")
        for tid, m in tasks:
            if m < 2:
                raise ValueError(f"task {tid!r} has {m} classes; need >= 2")
        object.__setattr__(self, "tasks", tasks)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def counts(self) -> np.ndarray:
        return np.array([m for _, m in self.tasks], dtype=np.int64)

    @property
    def offsets(self) -> np.ndarray:
        c = self.counts
        return np.concatenate([[0], np.cumsum(c)[:-1]]).astype(np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def column_task(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_tasks), self.counts)

    def to_list(self):
        return [[t, m] for t, m in self.tasks]


@dataclass
class EncodedSequence:
    """One admission encoded on its prediction grid.

    ``gpsr[t, r]`` is the class index of task ``r`` at the horizon of step
    ``t``; ``mask[t]`` is False for steps that carry no label and no loss.
    """

    admission_id: str
    times: np.ndarray
    inputs: np.ndarray
    labels: np.ndarray
    gpsr: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.gpsr = np.asarray(self.gpsr, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        T = len(self.times)
        if self.inputs.shape[0] != T or self.labels.shape != (T,) or self.mask.shape != (T,):
            raise ValueError(f"sequence {self.admission_id}: step arrays disagree on length {T}")
        if self.gpsr.ndim != 2 or self.gpsr.shape[0] != T:
            raise ValueError(f"sequence {self.admission_id}: gpsr targets must be (T, n_tasks)")
        if T > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError(f"sequence {self.admission_id}: times must strictly increase")

    def __len__(self):
        return len(self.times)

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    @property
    def n_pos(self) -> int:
        return int(((self.labels == 1) & self.mask).sum())

    @property
    def n_neg(self) -> int:
        return int(((self.labels == 0) & self.mask).sum())

    def replace(self, **changes) -> "EncodedSequence":
        fields = dict(
            admission_id=self.admission_id, times=self.times, inputs=self.inputs,
            labels=self.labels, gpsr=self.gpsr, mask=self.mask,
        )
        fields.update(changes)
        return EncodedSequence(**fields)

    def equals(self, other: "EncodedSequence") -> bool:
        return (
            self.admission_id == other.admission_id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.gpsr, other.gpsr)
            and np.array_equal(self.mask, other.mask)
        )
