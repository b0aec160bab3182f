"""The per-task warm-up / select / learn runner, metrics and diagnostic probes."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from dietcl import coreset as cs
from dietcl.errors import ContractError, DietError, InputError, ProtocolError, ShapeError
from dietcl.learners import Learner, LearnerConfig, make_learner
from dietcl.nn import SgdConfig, softmax
from dietcl.streams import TaskStream, load_csv_dataset, make_gaussian_stream, split_dataset, train_test_split

RECORD_SCHEMA = "dietcl.run_record/1"


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "gaussian"
    num_tasks: int = 5
    classes_per_task: int = 2
    train_per_class: int = 200
    test_per_class: int = 100
    dim: int = 16
    class_separation: float = 3.0
    noise_sigma: float = 1.0
    seed: int = 0
    train_path: str = ""
    test_path: str = ""
    test_fraction: float = 0.2
    scale: bool = False
    class_order_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "csv"):
            raise InputError(f"unknown dataset kind {self.kind!r}; accepted: gaussian, csv")
        if self.kind == "csv" and not self.train_path:
            raise InputError("dataset.train_path is required for csv datasets")


@dataclass(frozen=True)
class ProtocolConfig:
    e: int = 100
    alpha: float = 0.1
    seed: int = 0
    weight_decay_first: float = 5e-4
    weight_decay_later: float = 2e-4
    probe_layer: str = "last"
    saliency_samples: int = 5

    @property
    def warmup_epochs(self) -> int:
        return math.floor(self.alpha * self.e + 1e-9)

    @property
    def learning_epochs(self) -> int:
        return self.e - self.warmup_epochs

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InputError(f"protocol.alpha {self.alpha} must lie in (0,1)")
        if self.warmup_epochs < 1 or self.learning_epochs < 1:
            raise InputError(f"protocol.e={self.e}, alpha={self.alpha} leave a phase with no epochs")
        if self.weight_decay_first < 0 or self.weight_decay_later < 0:
            raise InputError("weight decays must be >= 0")
        if self.probe_layer not in ("last", "all"):
            raise InputError(f"protocol.probe_layer {self.probe_layer!r}; accepted: last, all")


@dataclass(frozen=True)
class OptimConfig:
    # desk-scale defaults; the ResNet-scale recipe is lr 0.1 with batch 128
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    schedule: str = "constant"

    def __post_init__(self):
        self.for_weight_decay(0.0)

    def for_weight_decay(self, wd: float) -> SgdConfig:
        return SgdConfig(self.learning_rate, self.momentum, wd, self.batch_size, self.schedule)


@dataclass(frozen=True)
class RunConfig:
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    sgd: OptimConfig = field(default_factory=OptimConfig)
    coreset: cs.CoresetSpec = field(default_factory=cs.CoresetSpec)

    def sgd_for_task(self, task_index: int) -> SgdConfig:
        p = self.protocol
        return self.sgd.for_weight_decay(p.weight_decay_first if task_index == 1 else p.weight_decay_later)

    def flat(self) -> dict:
        """Every effective parameter as ``section.key -> value``."""
        out = {}
        for section in ("dataset", "protocol", "sgd", "coreset", "learner"):
            for key, value in asdict(getattr(self, section)).items():
                out[f"{section}.{key}"] = list(value) if isinstance(value, tuple) else value
        return out

    def run_id(self) -> str:
        blob = json.dumps(self.flat(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def make_stream(cfg: DatasetConfig) -> TaskStream:
    if cfg.kind == "gaussian":
        return make_gaussian_stream(cfg.num_tasks, cfg.classes_per_task, cfg.train_per_class,
                                    cfg.test_per_class, cfg.dim, cfg.class_separation,
                                    cfg.noise_sigma, cfg.seed)
    train = load_csv_dataset(cfg.train_path, scale=cfg.scale)
    if cfg.test_path:
        test = load_csv_dataset(cfg.test_path, scale=cfg.scale)
    else:
        train, test = train_test_split(train, cfg.test_fraction, cfg.seed)
    return split_dataset(train, cfg.classes_per_task, cfg.class_order_seed, test=test)


# ---------------------------------------------------------------- metrics

def _exact(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(repr(float(x)))


def _rows(matrix) -> list[list[float]]:
    rows = matrix.rows if isinstance(matrix, AccuracyMatrix) else [list(r) for r in matrix]
    if not rows:
        raise ContractError("empty accuracy matrix")
    for t, row in enumerate(rows, start=1):
        if len(row) != t:
            raise ContractError(f"accuracy row {t} has {len(row)} entries, expected {t}")
    return rows


def acc(matrix) -> float:
    """Mean accuracy over all tasks after the last one.

    Entries are taken at their shortest decimal value and summed exactly,
    so hand-built matrices give hand-computed answers.
    """
    rows = _rows(matrix)
    final = rows[-1]
    return float(sum(_exact(a) for a in final) / len(final))


def bwt(matrix) -> float:
    """Mean of A[T][i] - A[i][i] over i < T."""
    rows = _rows(matrix)
    T = len(rows)
    if T < 2:
        raise ContractError("backward transfer needs at least two tasks")
    diffs = [_exact(rows[-1][i]) - _exact(rows[i][i]) for i in range(T - 1)]
    return float(sum(diffs) / (T - 1))


class AccuracyMatrix:
    """Lower-triangular table; ``rows[t-1][i-1]`` is task i's accuracy after task t."""

    def __init__(self, rows=()):
        self.rows: list[list[float]] = []
        for row in rows:
            self.append(row)

    def append(self, row) -> None:
        row = [float(a) for a in row]
        if len(row) != len(self.rows) + 1:
            raise ContractError(f"row {len(self.rows) + 1} must have {len(self.rows) + 1} entries")
        if any(not 0.0 <= a <= 1.0 for a in row):
            raise InputError("accuracies must lie in [0, 1]")
        self.rows.append(row)

    @property
    def T(self) -> int:
        return len(self.rows)

    def __getitem__(self, key):
        t, i = key
        if not 1 <= i <= t <= self.T:
            raise IndexError(f"A[{t}][{i}] is undefined")
        return self.rows[t - 1][i - 1]

    def to_csv(self) -> str:
        lines = ["after_task," + ",".join(f"task_{i}" for i in range(1, self.T + 1))]
        for t, row in enumerate(self.rows, start=1):
            cells = [repr(a) for a in row] + [""] * (self.T - t)
            lines.append(",".join([str(t)] + cells))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "AccuracyMatrix":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        rows = []
        for t, line in enumerate(lines[1:], start=1):
            cells = line.split(",")[1:]
            rows.append([float(c) for c in cells[:t]])
        return cls(rows)


# ----------------------------------------------------------------- probes

def _layer_index(name: str) -> int:
    digits = "".join(ch for ch in name.rsplit(".", 1)[-1] if ch.isdigit())
    return int(digits) if digits else 0


def weight_delta(params_before: dict, params_after: dict, layer_selector="last") -> float:
    """L2 norm of the parameter change, restricted to one layer by default.

    ``layer_selector`` is ``"last"`` (highest layer index), ``"all"``, an int
    layer index, or an explicit list of parameter names.
    """
    if set(params_before) != set(params_after):
        raise ShapeError("parameter snapshots have different names")
    if layer_selector == "all":
        names = sorted(params_before)
    elif isinstance(layer_selector, (list, tuple, set)):
        names = sorted(layer_selector)
    else:
        idx = max(map(_layer_index, params_before)) if layer_selector == "last" else int(layer_selector)
        names = sorted(n for n in params_before if _layer_index(n) == idx)
    total = 0.0
    for name in names:
        a, b = np.asarray(params_before[name], dtype=float), np.asarray(params_after[name], dtype=float)
        if a.shape != b.shape:
            raise ShapeError(f"{name}: {a.shape} vs {b.shape}")
        total += float(((b - a) ** 2).sum())
    return math.sqrt(total)


def leading_block(params_after: dict, params_before: dict) -> dict:
    """Slice grown tensors back to the shapes of an earlier snapshot."""
    return {k: np.asarray(v)[tuple(slice(0, s) for s in np.shape(params_before[k]))]
            for k, v in params_after.items()}


@dataclass
class PcaResult:
    coords: np.ndarray
    components: np.ndarray
    explained_ratio: np.ndarray
    truncated: bool


def pca_projection(embeddings, k=2, tol=1e-9, max_iter=10000, seed=0) -> PcaResult:
    """Top-k principal directions by power iteration with deflation.

    Each component's largest-magnitude loading is made positive. Fewer than
    ``k`` components come back, with ``truncated`` set, when the data rank is
    lower than ``k``.
    """
    x = np.asarray(embeddings, dtype=float)
    n, d = x.shape
    if n < k:
        raise InputError(f"{n} rows cannot give {k} components")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / n
    total = float(np.trace(cov))
    rng = np.random.default_rng(seed)
    work = cov.copy()
    comps, eigs = [], []
    for _ in range(min(k, d)):
        if total <= 0:
            break
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        exhausted = False
        for _ in range(max_iter):
            w = work @ v
            norm = np.linalg.norm(w)
            if norm <= 1e-12 * total:
                exhausted = True  # nothing left after deflation
                break
            w /= norm
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        # Rayleigh quotient on the deflated matrix, so a leftover noise
        # direction cannot pick up variance already explained
        lam = float(v @ work @ v)
        if exhausted or lam <= 1e-12 * total:
            break
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps.append(v)
        eigs.append(lam)
        work = work - lam * np.outer(v, v)
    components = np.array(comps).reshape(len(comps), d)
    return PcaResult(centered @ components.T, components,
                     np.array(eigs) / total if total > 0 else np.zeros(0), len(comps) < k)


# ----------------------------------------------------------------- runner

def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def run_task(learner: Learner, task, cfg: RunConfig, rng: np.random.Generator,
             on_batch=None, on_epoch=None):
    """Warm up on the full task, select the coreset, learn on it.

    Hooks: ``on_batch(phase, epoch, ids)`` sees the ids of every gradient batch
    (including replayed exemplars); ``on_epoch(phase, epoch)`` fires after
    each epoch. ``begin_task`` must already have been called.
    """
    sgd = cfg.sgd_for_task(task.index)
    train = task.train
    n_warm, n_learn = cfg.protocol.warmup_epochs, cfg.protocol.learning_epochs
    history = np.zeros((len(train), n_warm), dtype=bool)
    for epoch in range(n_warm):
        for idx in _batches(len(train), sgd.batch_size, rng):
            _, grads = learner.warmup_loss(train.x[idx], train.y[idx], train.ids[idx])
            if on_batch:
                on_batch("warmup", epoch, learner.last_batch_ids)
            learner.step(grads, sgd)
        logits = learner.logits(train.x)
        history[:, epoch] = np.asarray(learner.class_order)[np.argmax(logits, axis=1)] == train.y
        if on_epoch:
            on_epoch("warmup", epoch)
    new_cols = learner.columns(task.sorted_classes)
    stats = cs.WarmupStats(history, softmax(logits[:, new_cols]), learner.embed(train.x), train.y)
    chosen = cs.select(cfg.coreset, stats, rng)
    subset = train.subset(chosen.indices)
    for epoch in range(n_learn):
        for idx in _batches(len(subset), sgd.batch_size, rng):
            _, grads = learner.compute_batch_loss(subset.x[idx], subset.y[idx], subset.ids[idx])
            if on_batch:
                on_batch("learn", epoch, learner.last_batch_ids)
            learner.step(grads, sgd)
        if on_epoch:
            on_epoch("learn", epoch)
    return chosen, stats


def evaluate(learner: Learner, stream: TaskStream, upto_task: int) -> list[float]:
    """Accuracy on each task's test set so far, predicting over all seen classes."""
    seen = set().union(*(stream[i].classes for i in range(upto_task)))
    if set(learner.class_order) != seen:
        raise ProtocolError("learner's class set differs from the classes of tasks 1..t")
    row = []
    for i in range(upto_task):
        test = stream[i].test
        if len(test) == 0:
            raise ContractError(f"task {i + 1} has no test samples")
        row.append(float(np.mean(learner.predict(test.x) == test.y)))
    return row


@dataclass
class RunRecord:
    run_id: str
    config: dict
    tasks: list
    matrix: AccuracyMatrix
    weight_deltas: list
    coresets: list
    diagnostics: dict
    stream_digest: str
    complete: bool = True
    error: str | None = None
    wall_times: list = field(default_factory=list)
    learner: Learner | None = field(default=None, repr=False, compare=False)

    @property
    def acc(self):
        return acc(self.matrix) if self.matrix.T and self.complete else None

    @property
    def bwt(self):
        return bwt(self.matrix) if self.matrix.T >= 2 and self.complete else None

    def to_dict(self, include_timing=False) -> dict:
        d = {
            "schema": RECORD_SCHEMA,
            "run_id": self.run_id,
            "complete": self.complete,
            "config": self.config,
            "stream_digest": self.stream_digest,
            "tasks": self.tasks,
            "accuracy_matrix": self.matrix.rows,
            "weight_deltas": self.weight_deltas,
            "coresets": self.coresets,
            "diagnostics": self.diagnostics,
        }
        if self.complete:
            d["acc"] = self.acc
            if self.bwt is not None:
                d["bwt"] = self.bwt
        else:
            d["error"] = self.error
        if include_timing:
            d["wall_times"] = self.wall_times
        return d

    def to_json(self, include_timing=False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=1, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(d["run_id"], d["config"], d["tasks"], AccuracyMatrix(d["accuracy_matrix"]),
                   d["weight_deltas"], d["coresets"], d["diagnostics"], d["stream_digest"],
                   d["complete"], d.get("error"), d.get("wall_times", []))


class RunAborted(DietError):
    def __init__(self, record: RunRecord, cause: Exception):
        super().__init__(f"run {record.run_id} aborted: {cause}")
        self.record = record
        self.cause = cause


def _diagnostics(learner: Learner, stream: TaskStream, cfg: RunConfig) -> dict:
    first = stream[0].test
    sal = []
    for j in range(min(cfg.protocol.saliency_samples, len(first))):
        values = learner.saliency(first.x[j], int(first.y[j]))
        sal.append({"sample_id": int(first.ids[j]), "label": int(first.y[j]),
                    "saliency": [float(v) for v in values]})
    xs = np.vstack([t.test.x for t in stream])
    labels = np.concatenate([t.test.y for t in stream])
    task_of = np.concatenate([[t.index] * len(t.test) for t in stream])
    proj = pca_projection(learner.embed(xs), k=2)
    coords = np.zeros((len(xs), 2))
    coords[:, :proj.coords.shape[1]] = proj.coords
    pca = {"explained_ratio": [float(r) for r in proj.explained_ratio], "truncated": proj.truncated,
           "points": [[float(a), float(b), int(c), int(t)] for (a, b), c, t in zip(coords, labels, task_of)]}
    return {"saliency": sal, "pca": pca}


def run_stream(stream: TaskStream, cfg: RunConfig, on_batch=None, on_epoch=None,
               learner: Learner | None = None) -> RunRecord:
    """Run the whole protocol over ``stream``; raises :class:`RunAborted` on failure."""
    root = np.random.SeedSequence(cfg.protocol.seed)
    model_seq, data_seq = root.spawn(2)
    if learner is None:
        learner = make_learner(cfg.learner, stream.feature_dim, np.random.default_rng(model_seq))
    rng = np.random.default_rng(data_seq)
    record = RunRecord(cfg.run_id(), cfg.flat(), [], AccuracyMatrix(), [], [], {}, stream.digest())
    previous = None
    try:
        for task in stream:
            start = time.perf_counter()
            learner.begin_task(task)
            chosen, _ = run_task(learner, task, cfg, rng, on_batch, on_epoch)
            learner.end_task(task, task.train.subset(chosen.indices))
            record.matrix.append(evaluate(learner, stream, task.index))
            entry = {"task": task.index, **chosen.to_dict()}
            entry["ids"] = [int(i) for i in task.train.ids[list(chosen.indices)]]
            record.coresets.append(entry)
            record.tasks.append({
                "task": task.index,
                "classes": task.sorted_classes,
                "train_size": len(task.train),
                "coreset_size": len(chosen),
                "warmup_epochs": cfg.protocol.warmup_epochs,
                "learning_epochs": cfg.protocol.learning_epochs,
                "buffer_size": len(learner.buffer),
            })
            snapshot = learner.probe_parameters()
            if previous is not None:
                layer = "all" if cfg.protocol.probe_layer == "all" else "last"
                delta = weight_delta(previous, leading_block(snapshot, previous), layer)
                record.weight_deltas.append({"from_task": task.index - 1, "to_task": task.index,
                                             "delta": delta})
            previous = snapshot
            record.wall_times.append(time.perf_counter() - start)
        record.diagnostics = _diagnostics(learner, stream, cfg)
    except DietError as exc:
        record.complete = False
        record.error = f"{type(exc).__name__}: {exc}"
        raise RunAborted(record, exc) from exc
    record.learner = learner
    return record
