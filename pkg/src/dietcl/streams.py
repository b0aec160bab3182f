"""Class-incremental task streams with disjoint label sets."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dietcl.errors import InputError, ParseError, SchemaError


@dataclass(frozen=True)
class Sample:
    id: int
    features: tuple
    label: int


@dataclass(frozen=True)
class Split:
    """A labelled set stored column-wise: features ``x``, labels ``y``, stable ``ids``."""

    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(len(self.y), -1)
        y = np.array(self.y, dtype=int)
        ids = np.array(self.ids, dtype=int)
        if not (len(x) == len(y) == len(ids)):
            raise InputError("x, y and ids must have the same length")
        if len(np.unique(ids)) != len(ids):
            raise InputError("sample ids must be unique within a split")
        if not np.isfinite(x).all():
            raise InputError("features must be finite")
        for arr in (x, y, ids):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, index) -> "Split":
        index = np.asarray(index, dtype=int)
        return Split(self.x[index], self.y[index], self.ids[index])

    def samples(self) -> list[Sample]:
        return [Sample(int(i), tuple(map(float, f)), int(c)) for i, f, c in zip(self.ids, self.x, self.y)]

    @classmethod
    def empty(cls, dim: int) -> "Split":
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=int), np.zeros(0, dtype=int))


@dataclass(frozen=True)
class Task:
    index: int  # 1-based
    train: Split
    test: Split
    classes: frozenset

    def __post_init__(self):
        if len(self.train) == 0:
            raise InputError(f"task {self.index} has an empty training set")
        for split in (self.train, self.test):
            if not set(np.unique(split.y).tolist()) <= self.classes:
                raise InputError(f"task {self.index} has labels outside its class set")

    @property
    def sorted_classes(self) -> list[int]:
        return sorted(self.classes)


@dataclass(frozen=True)
class TaskStream:
    tasks: tuple
    total_classes: int
    feature_dim: int

    def __post_init__(self):
        seen = set()
        for task in self.tasks:
            if seen & task.classes:
                raise InputError(f"task {task.index} reuses classes {sorted(seen & task.classes)}")
            seen |= task.classes
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    def to_bytes(self) -> bytes:
        """Canonical serialization, used for determinism checks and run ids."""
        parts = [f"{self.total_classes},{self.feature_dim},{len(self.tasks)}".encode()]
        for task in self.tasks:
            parts.append(f"task{task.index}:{sorted(task.classes)}".encode())
            for split in (task.train, task.test):
                parts += [split.x.astype("<f8").tobytes(), split.y.astype("<i8").tobytes(),
                          split.ids.astype("<i8").tobytes()]
        return b"|".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def make_gaussian_stream(num_tasks, classes_per_task, train_per_class, test_per_class, dim,
                         class_separation=3.0, noise_sigma=1.0, seed=0) -> TaskStream:
    """Isotropic Gaussian blobs whose means sit on a sphere of radius ``class_separation``.

    Class ids are consecutive in task order; train and test ids are unique
    across the whole stream.
    """
    for name, v in [("num_tasks", num_tasks), ("classes_per_task", classes_per_task),
                    ("train_per_class", train_per_class), ("test_per_class", test_per_class)]:
        if int(v) < 1:
            raise InputError(f"{name} must be >= 1")
    if dim < 2:
        raise InputError("dim must be >= 2")
    if noise_sigma < 0:
        raise InputError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    total = num_tasks * classes_per_task
    means = rng.standard_normal((total, dim))
    means *= class_separation / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(c, count):
        return means[c] + noise_sigma * rng.standard_normal((count, dim))

    tasks, next_train, next_test = [], 0, 0
    for t in range(num_tasks):
        classes = list(range(t * classes_per_task, (t + 1) * classes_per_task))
        train_x = np.vstack([draw(c, train_per_class) for c in classes])
        test_x = np.vstack([draw(c, test_per_class) for c in classes])
        train_y = np.repeat(classes, train_per_class)
        test_y = np.repeat(classes, test_per_class)
        train = Split(train_x, train_y, np.arange(next_train, next_train + len(train_y)))
        test = Split(test_x, test_y, np.arange(next_test, next_test + len(test_y)))
        next_train += len(train_y)
        next_test += len(test_y)
        tasks.append(Task(t + 1, train, test, frozenset(classes)))
    return TaskStream(tuple(tasks), total, dim)


def split_dataset(samples: Split, classes_per_task: int, class_order_seed=0,
                  test: Split | None = None) -> TaskStream:
    """Shuffle the class order and cut it into consecutive groups of ``classes_per_task``.

    Labels keep their original ids; each sample stays in the split it came from.
    """
    classes = np.unique(samples.y if test is None else np.concatenate([samples.y, test.y]))
    if classes_per_task < 1 or len(classes) % classes_per_task:
        raise InputError(f"{len(classes)} classes are not divisible into tasks of {classes_per_task}")
    order = np.random.default_rng(class_order_seed).permutation(classes)
    test = Split.empty(samples.dim) if test is None else test
    tasks = []
    for t in range(len(classes) // classes_per_task):
        group = frozenset(int(c) for c in order[t * classes_per_task:(t + 1) * classes_per_task])
        members = sorted(group)
        tr = samples.subset(np.flatnonzero(np.isin(samples.y, members)))
        te = test.subset(np.flatnonzero(np.isin(test.y, members)))
        tasks.append(Task(t + 1, tr, te, group))
    return TaskStream(tuple(tasks), len(classes), samples.dim)


def train_test_split(samples: Split, test_fraction: float, seed=0) -> tuple[Split, Split]:
    """Per-class random holdout; ids are kept."""
    if not 0 <= test_fraction < 1:
        raise InputError("test_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in np.unique(samples.y):
        members = np.flatnonzero(samples.y == c)
        k = int(np.floor(test_fraction * len(members) + 0.5))
        test_idx.extend(rng.choice(members, size=k, replace=False).tolist())
    mask = np.zeros(len(samples), dtype=bool)
    mask[test_idx] = True
    return samples.subset(np.flatnonzero(~mask)), samples.subset(np.flatnonzero(mask))


def load_csv_dataset(path, scale=False) -> Split:
    """Read ``label,f1,...,fd`` rows after a ``label,d=<dim>`` header.

    With ``scale`` each column is min-max mapped to [0, 1]; constant columns map to 0.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ParseError("empty file, expected header 'label,d=<dim>'", line=1, path=path)
    head = [h.strip() for h in lines[0].split(",")]
    if len(head) != 2 or head[0] != "label" or not head[1].startswith("d="):
        raise ParseError(f"bad header {lines[0]!r}, expected 'label,d=<dim>'", line=1, path=path)
    try:
        dim = int(head[1][2:])
    except ValueError:
        raise ParseError(f"bad dimension in header {lines[0]!r}", line=1, path=path) from None
    if dim < 1:
        raise ParseError("dimension must be >= 1", line=1, path=path)
    labels, rows = [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cells = raw.split(",")
        if len(cells) != dim + 1:
            raise SchemaError(f"expected {dim} features, found {len(cells) - 1}", line=lineno, path=path)
        try:
            label = int(cells[0])
            feats = [float(c) for c in cells[1:]]
        except ValueError:
            raise ParseError(f"malformed row {raw!r}", line=lineno, path=path) from None
        if label < 0 or not np.isfinite(feats).all():
            raise ParseError(f"malformed row {raw!r}", line=lineno, path=path)
        labels.append(label)
        rows.append(feats)
    x = np.array(rows, dtype=float).reshape(len(rows), dim)
    if scale and len(x):
        lo, hi = x.min(axis=0), x.max(axis=0)
        span = hi - lo
        x = np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0)
    return Split(x, np.array(labels, dtype=int), np.arange(len(labels)))


def write_csv_dataset(samples: Split, path) -> None:
    out = [f"label,d={samples.dim}"]
    for label, feats in zip(samples.y, samples.x):
        out.append(",".join([str(int(label))] + [repr(float(v)) for v in feats]))
    Path(path).write_text("\n".join(out) + "\n")
