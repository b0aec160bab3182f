"""Class-incremental learners: ER, iCaRL, LwF and a slim DER ("DerLite").

All learners share one life cycle per task::

    learner.begin_task(task)
    ... learner.warmup_loss / learner.compute_batch_loss + learner.step ...
    learner.end_task(task, coreset_split)

Output column ``k`` of every classifier corresponds to class
``learner.class_order[k]``; class ids themselves can be arbitrary integers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from dietcl import nn
from dietcl.coreset import herding_order
from dietcl.errors import ContractError, InputError, ProtocolError, TrainingError
from dietcl.nn import Mlp, OptimizerState, SgdConfig

KINDS = ("er", "icarl", "lwf", "der")


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "er"
    hidden: tuple = (64, 32)
    memory_per_class: int = 20
    lwf_temperature: float = 2.0
    lwf_weight: float = 1.0
    icarl_temperature: float = 1.0
    icarl_kd_weight: float = 1.0
    der_aux_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown learner kind {self.kind!r}; accepted: {', '.join(KINDS)}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise InputError("hidden needs at least one positive layer width")
        if self.memory_per_class < 0:
            raise InputError("memory_per_class must be >= 0")
        for name in ("lwf_weight", "icarl_kd_weight", "der_aux_weight"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        for name in ("lwf_temperature", "icarl_temperature"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be > 0")


class ReplayBuffer:
    """Per-class exemplar store with a fixed per-class budget ``m``."""

    def __init__(self, per_class_budget: int):
        self.m = int(per_class_budget)
        self._ids: dict[int, list[int]] = {}
        self._x: dict[int, list[np.ndarray]] = {}
        self._seen: dict[int, int] = {}

    def classes(self) -> list[int]:
        return sorted(c for c in self._ids if self._ids[c])

    def class_size(self, c: int) -> int:
        return len(self._ids.get(c, ()))

    def __len__(self):
        return sum(len(v) for v in self._ids.values())

    def add_reservoir(self, x, y, ids, rng: np.random.Generator) -> None:
        """Stream samples through a per-class reservoir of size ``m``."""
        for feat, c, sid in zip(np.asarray(x, dtype=float), np.asarray(y, dtype=int), np.asarray(ids)):
            c = int(c)
            store_ids = self._ids.setdefault(c, [])
            store_x = self._x.setdefault(c, [])
            seen = self._seen.get(c, 0)
            if len(store_ids) < self.m:
                store_ids.append(int(sid))
                store_x.append(feat.copy())
            elif self.m > 0:
                j = int(rng.integers(0, seen + 1))
                if j < self.m:
                    store_ids[j] = int(sid)
                    store_x[j] = feat.copy()
            self._seen[c] = seen + 1

    def set_class(self, c: int, x, ids) -> None:
        x = np.asarray(x, dtype=float)
        if len(x) > self.m:
            raise InputError(f"{len(x)} exemplars exceed the per-class budget {self.m}")
        self._ids[int(c)] = [int(i) for i in ids]
        self._x[int(c)] = [row.copy() for row in x]
        self._seen[int(c)] = len(x)

    def class_arrays(self, c: int) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self._x[c]), np.array(self._ids[c], dtype=int)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xs, ys, ids = [], [], []
        for c in self.classes():
            xs.extend(self._x[c])
            ys.extend([c] * len(self._ids[c]))
            ids.extend(self._ids[c])
        dim = len(xs[0]) if xs else 0
        return np.array(xs).reshape(len(xs), dim), np.array(ys, dtype=int), np.array(ids, dtype=int)

    def sample(self, k: int, rng: np.random.Generator):
        x, y, ids = self.arrays()
        pick = rng.choice(len(y), size=k, replace=len(y) < k)
        return x[pick], y[pick], ids[pick]

    def state(self) -> tuple[dict, dict]:
        meta = {"m": self.m, "classes": {str(c): {"ids": self._ids[c], "seen": self._seen.get(c, 0)}
                                         for c in sorted(self._ids)}}
        arrays = {f"buffer.{c}": np.array(self._x[c]).reshape(len(self._x[c]), -1) for c in sorted(self._ids)}
        return meta, arrays

    @classmethod
    def from_state(cls, meta: dict, arrays: dict) -> "ReplayBuffer":
        buf = cls(meta["m"])
        for key, info in meta["classes"].items():
            c = int(key)
            buf._ids[c] = list(info["ids"])
            buf._x[c] = [row.copy() for row in arrays[f"buffer.{c}"]]
            buf._seen[c] = info["seen"]
        return buf


def _check_finite(loss: float, **diagnostics) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss}", diagnostics)


class Learner:
    """Shared bookkeeping; subclasses supply the model and the loss."""

    kind = "base"
    uses_buffer = True

    def __init__(self, input_dim: int, config: LearnerConfig | None = None, rng=None):
        self.config = config or LearnerConfig(kind=self.kind)
        self.input_dim = int(input_dim)
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.class_order: list[int] = []
        self.new_classes: list[int] = []
        self.old_classes: list[int] = []
        self.tasks_completed = 0
        self.in_task = False
        self.buffer = ReplayBuffer(self.config.memory_per_class)
        self.opt_state = OptimizerState()
        self.last_batch_ids = np.zeros(0, dtype=int)

    # bookkeeping ---------------------------------------------------------
    @property
    def num_classes(self) -> int:
        return len(self.class_order)

    def columns(self, labels) -> np.ndarray:
        col = {c: k for k, c in enumerate(self.class_order)}
        try:
            return np.array([col[int(c)] for c in np.asarray(labels)], dtype=int)
        except KeyError as exc:
            raise InputError(f"label {exc.args[0]} has not been registered") from None

    def begin_task(self, task) -> None:
        if self.in_task:
            raise ContractError("begin_task called before end_task of the previous task")
        new = sorted(int(c) for c in task.classes)
        overlap = set(new) & set(self.class_order)
        if overlap:
            raise ProtocolError(f"task {task.index} repeats already-seen classes {sorted(overlap)}")
        self.old_classes = list(self.class_order)
        self.new_classes = new
        self._expand(len(new))
        self.class_order = self.old_classes + new
        self.opt_state = OptimizerState()
        self.in_task = True

    def end_task(self, task, coreset_split) -> None:
        if not self.in_task:
            raise ContractError("end_task without begin_task")
        self._remember(coreset_split)
        self.tasks_completed += 1
        self.in_task = False

    def _mix_with_buffer(self, x, y, ids):
        if not self.uses_buffer or len(self.buffer) == 0:
            return x, y, ids
        bx, by, bids = self.buffer.sample(len(y), self.rng)
        return np.vstack([x, bx]), np.concatenate([y, by]), np.concatenate([ids, bids])

    def step(self, grads: dict, cfg: SgdConfig) -> None:
        params = self.named_parameters()
        trainable = self.trainable_names()
        nn.sgd_step(params, {k: g for k, g in grads.items() if k in trainable}, cfg, self.opt_state)
        self._touch()

    def predict(self, x) -> np.ndarray:
        if self.tasks_completed == 0:
            raise ContractError("predict needs at least one learned task")
        logits = self.logits(x)
        return np.asarray(self.class_order)[np.argmax(logits, axis=1)]

    def warmup_loss(self, x, y, ids=None):
        """Plain cross-entropy over all seen classes (no replay, no distillation)."""
        if not self.in_task:
            raise ContractError("begin_task must be called first")
        self.last_batch_ids = np.asarray(ids if ids is not None else [], dtype=int)
        return self._ce_all(np.asarray(x, dtype=float), self.columns(y))

    # subclass surface ----------------------------------------------------
    def _expand(self, count: int) -> None:
        raise NotImplementedError

    def _remember(self, coreset_split) -> None:
        self.buffer.add_reservoir(coreset_split.x, coreset_split.y, coreset_split.ids, self.rng)

    def _touch(self) -> None:
        pass

    def logits(self, x) -> np.ndarray:
        raise NotImplementedError

    def embed(self, x) -> np.ndarray:
        raise NotImplementedError

    def named_parameters(self) -> dict:
        raise NotImplementedError

    def trainable_names(self) -> set:
        return set(self.named_parameters())

    def probe_parameters(self) -> dict:
        raise NotImplementedError

    def saliency(self, sample, target_class: int) -> np.ndarray:
        raise NotImplementedError

    def compute_batch_loss(self, x, y, ids):
        raise NotImplementedError

    def _ce_all(self, x, cols):
        raise NotImplementedError

    # serialization -------------------------------------------------------
    def state(self) -> tuple[dict, dict]:
        buf_meta, arrays = self.buffer.state()
        meta = {
            "kind": self.kind,
            "config": {**asdict(self.config), "hidden": list(self.config.hidden)},
            "input_dim": self.input_dim,
            "class_order": self.class_order,
            "new_classes": self.new_classes,
            "old_classes": self.old_classes,
            "tasks_completed": self.tasks_completed,
            "in_task": self.in_task,
            "rng": self.rng.bit_generator.state,
            "buffer": buf_meta,
        }
        meta.update(self._model_meta())
        arrays.update(self._model_arrays())
        return meta, arrays

    def _model_meta(self) -> dict:
        return {}

    def _model_arrays(self) -> dict:
        return {}

    def _load_model(self, meta: dict, arrays: dict) -> None:
        raise NotImplementedError


def _mlp_from(prefix: str, dims, arrays: dict, rectify_output=False) -> Mlp:
    net = Mlp(dims, rectify_output=rectify_output)
    net.load_parameters({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
    return net


def _prefixed(prefix: str, params: dict) -> dict:
    return {prefix + k: v for k, v in params.items()}


class SingleNetLearner(Learner):
    """One MLP whose head grows per task (ER, iCaRL, LwF)."""

    def __init__(self, input_dim, config=None, rng=None):
        super().__init__(input_dim, config, rng)
        self.net: Mlp | None = None
        self.teacher: Mlp | None = None

    def _expand(self, count):
        if self.net is None:
            self.net = Mlp([self.input_dim, *self.config.hidden, count], rng=self.rng)
        else:
            nn.expand_head(self.net, count, self.rng)

    def logits(self, x):
        if self.net is None:
            raise ContractError("no task has been started")
        return nn.forward(self.net, x)[0]

    def embed(self, x):
        return nn.embed(self.net, x)

    def named_parameters(self):
        return self.net.named_parameters() if self.net is not None else {}

    def probe_parameters(self):
        return {k: v.copy() for k, v in self.net.head_parameters().items()}

    def saliency(self, sample, target_class):
        return nn.input_saliency(self.net, sample, int(self.columns([target_class])[0]))

    def _touch(self):
        self.net.version += 1

    def _ce_all(self, x, cols):
        out, cache = nn.forward(self.net, x)
        loss, g = nn.cross_entropy(out, cols)
        _check_finite(loss, kind=self.kind, batch=len(cols))
        return loss, nn.backward(self.net, cache, g)

    def _model_meta(self):
        meta = {"net_dims": self.net.layer_dims if self.net else None}
        meta["teacher_dims"] = self.teacher.layer_dims if self.teacher else None
        return meta

    def _model_arrays(self):
        arrays = _prefixed("net.", self.net.named_parameters()) if self.net else {}
        if self.teacher is not None:
            arrays.update(_prefixed("teacher.", self.teacher.named_parameters()))
        return arrays

    def _load_model(self, meta, arrays):
        if meta["net_dims"]:
            self.net = _mlp_from("net.", meta["net_dims"], arrays)
        if meta["teacher_dims"]:
            self.teacher = _mlp_from("teacher.", meta["teacher_dims"], arrays)


class ExperienceReplay(SingleNetLearner):
    """CE on current data mixed 1:1 with exemplars drawn uniformly from the buffer."""

    kind = "er"

    def compute_batch_loss(self, x, y, ids):
        x, y, ids = self._mix_with_buffer(np.asarray(x, dtype=float), np.asarray(y), np.asarray(ids))
        self.last_batch_ids = ids
        return self._ce_all(x, self.columns(y))


class ICaRL(SingleNetLearner):
    """Replay plus distillation on old-class logits; nearest-mean-of-exemplars prediction.

    Distillation uses the softmax KD form rather than per-class sigmoids.
    Exemplars are herded once per class at the end of its task and kept fixed.
    """

    kind = "icarl"

    def __init__(self, input_dim, config=None, rng=None):
        super().__init__(input_dim, config, rng)
        self.class_means: dict[int, np.ndarray] = {}

    def begin_task(self, task):
        teacher = self.net.copy() if self.net is not None else None
        super().begin_task(task)
        self.teacher = teacher

    def compute_batch_loss(self, x, y, ids):
        x, y, ids = self._mix_with_buffer(np.asarray(x, dtype=float), np.asarray(y), np.asarray(ids))
        self.last_batch_ids = ids
        out, cache = nn.forward(self.net, x)
        loss, g = nn.cross_entropy(out, self.columns(y))
        w = self.config.icarl_kd_weight
        if self.teacher is not None and w > 0:
            k = len(self.old_classes)
            kd, kd_g = nn.kd_loss(out[:, :k], nn.forward(self.teacher, x)[0], self.config.icarl_temperature)
            loss += w * kd
            g[:, :k] += w * kd_g
        _check_finite(loss, kind=self.kind, batch=len(y))
        return loss, nn.backward(self.net, cache, g)

    def _remember(self, coreset_split):
        m = self.buffer.m
        for c in self.new_classes:
            members = np.flatnonzero(coreset_split.y == c)
            if len(members) == 0 or m == 0:
                continue
            emb = self.embed(coreset_split.x[members])
            pick = members[herding_order(emb, min(m, len(members)))]
            self.buffer.set_class(c, coreset_split.x[pick], coreset_split.ids[pick])
        self.refresh_class_means()

    def refresh_class_means(self) -> None:
        self.class_means = {}
        for c in self.buffer.classes():
            x, _ = self.buffer.class_arrays(c)
            self.class_means[c] = self.embed(x).mean(axis=0)

    def predict(self, x):
        if self.tasks_completed == 0:
            raise ContractError("predict needs at least one learned task")
        if not self.class_means:
            return super().predict(x)
        classes = sorted(self.class_means)
        means = np.stack([self.class_means[c] for c in classes])
        emb = self.embed(x)
        dist = ((emb[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)
        return np.asarray(classes)[np.argmin(dist, axis=1)]

    def _model_meta(self):
        meta = super()._model_meta()
        meta["class_means"] = sorted(self.class_means)
        return meta

    def _model_arrays(self):
        arrays = super()._model_arrays()
        arrays.update({f"mean.{c}": v for c, v in self.class_means.items()})
        return arrays

    def _load_model(self, meta, arrays):
        super()._load_model(meta, arrays)
        self.class_means = {c: arrays[f"mean.{c}"] for c in meta["class_means"]}


class LwF(SingleNetLearner):
    """CE on the new classes plus distillation on old-class logits; no replay."""

    kind = "lwf"
    uses_buffer = False

    def begin_task(self, task):
        teacher = self.net.copy() if self.net is not None else None
        super().begin_task(task)
        self.teacher = teacher

    def compute_batch_loss(self, x, y, ids):
        x = np.asarray(x, dtype=float)
        self.last_batch_ids = np.asarray(ids, dtype=int)
        k = len(self.old_classes)
        out, cache = nn.forward(self.net, x)
        loss, g_new = nn.cross_entropy(out[:, k:], self.columns(y) - k)
        g = np.zeros_like(out)
        g[:, k:] = g_new
        w = self.config.lwf_weight
        if self.teacher is not None and w > 0:
            kd, kd_g = nn.kd_loss(out[:, :k], nn.forward(self.teacher, x)[0], self.config.lwf_temperature)
            loss += w * kd
            g[:, :k] += w * kd_g
        _check_finite(loss, kind=self.kind, batch=len(x))
        return loss, nn.backward(self.net, cache, g)

    def _remember(self, coreset_split):
        pass


class DerLite(Learner):
    """One rectified MLP trunk per task; a single linear classifier over all trunk features.

    Old trunks are frozen at the end of their task. An auxiliary head on the
    live trunk separates the new classes from a merged "old" label; old
    samples come from a reservoir buffer as in ER.
    """

    kind = "der"

    def __init__(self, input_dim, config=None, rng=None):
        super().__init__(input_dim, config, rng)
        self.frozen: list[Mlp] = []
        self.live: Mlp | None = None
        self.classifier: Mlp | None = None
        self.aux: Mlp | None = None

    @property
    def trunk_dim(self) -> int:
        return self.config.hidden[-1]

    @property
    def trunks(self) -> list[Mlp]:
        return self.frozen + ([self.live] if self.live is not None else [])

    def _expand(self, count):
        h = self.trunk_dim
        self.live = Mlp([self.input_dim, *self.config.hidden], rng=self.rng, rectify_output=True)
        if self.classifier is None:
            self.classifier = Mlp([h, count], rng=self.rng)
        else:
            w, b = self.classifier.weights[0], self.classifier.biases[0]
            rows, cols = w.shape[0] + count, w.shape[1] + h
            fresh = nn.glorot_uniform(cols, rows, rows, self.rng)
            fresh[: w.shape[0], : w.shape[1]] = w
            self.classifier.weights[0] = fresh
            self.classifier.biases[0] = np.concatenate([b, np.zeros(count)])
            self.classifier.layer_dims = [cols, rows]
            self.classifier.version += 1
        self.aux = Mlp([h, count + 1], rng=self.rng) if self.old_classes else None

    def _features(self, x):
        outs = [nn.forward(t, x) for t in self.trunks]
        return outs, np.hstack([o for o, _ in outs])

    def logits(self, x):
        if self.classifier is None:
            raise ContractError("no task has been started")
        return nn.forward(self.classifier, self._features(x)[1])[0]

    def embed(self, x):
        return self._features(x)[1]

    def named_parameters(self):
        params = {}
        for k, t in enumerate(self.frozen):
            params.update(_prefixed(f"trunk{k}.", t.named_parameters()))
        if self.live is not None:
            params.update(_prefixed(f"trunk{len(self.frozen)}.", self.live.named_parameters()))
        if self.classifier is not None:
            params.update(_prefixed("clf.", self.classifier.named_parameters()))
        if self.aux is not None:
            params.update(_prefixed("aux.", self.aux.named_parameters()))
        return params

    def trainable_names(self):
        frozen = {f"trunk{k}." for k in range(len(self.frozen))}
        return {n for n in self.named_parameters() if not any(n.startswith(p) for p in frozen)}

    def probe_parameters(self):
        return {k: v.copy() for k, v in self.classifier.head_parameters().items()}

    def _touch(self):
        for net in (self.live, self.classifier, self.aux):
            if net is not None:
                net.version += 1

    def _grads(self, x, cols, aux_cols=None):
        outs, feats = self._features(x)
        logits, clf_cache = nn.forward(self.classifier, feats)
        loss, g = nn.cross_entropy(logits, cols)
        clf_grads, g_feats = nn.backward(self.classifier, clf_cache, g, return_input_grad=True)
        h = self.trunk_dim
        g_live = g_feats[:, -h:]
        grads = {}
        aux_w = self.config.der_aux_weight
        if self.aux is not None and aux_cols is not None and aux_w > 0:
            aux_logits, aux_cache = nn.forward(self.aux, outs[-1][0])
            aux_loss, aux_g = nn.cross_entropy(aux_logits, aux_cols)
            aux_grads, g_from_aux = nn.backward(self.aux, aux_cache, aux_w * aux_g, return_input_grad=True)
            loss += aux_w * aux_loss
            g_live = g_live + g_from_aux
            grads.update(_prefixed("aux.", aux_grads))
        elif self.aux is not None:
            grads.update({f"aux.{k}": np.zeros_like(v) for k, v in self.aux.named_parameters().items()})
        for k, t in enumerate(self.frozen):
            grads.update({f"trunk{k}.{n}": np.zeros_like(v) for n, v in t.named_parameters().items()})
        live_cache = outs[-1][1]
        grads.update(_prefixed(f"trunk{len(self.frozen)}.", nn.backward(self.live, live_cache, g_live)))
        grads.update(_prefixed("clf.", clf_grads))
        _check_finite(loss, kind=self.kind, batch=len(cols))
        return loss, grads

    def _ce_all(self, x, cols):
        return self._grads(x, cols)

    def compute_batch_loss(self, x, y, ids):
        x, y, ids = self._mix_with_buffer(np.asarray(x, dtype=float), np.asarray(y), np.asarray(ids))
        self.last_batch_ids = ids
        cols = self.columns(y)
        k = len(self.old_classes)
        aux_cols = np.where(cols >= k, cols - k, len(self.new_classes)) if self.aux is not None else None
        return self._grads(x, cols, aux_cols)

    def end_task(self, task, coreset_split):
        super().end_task(task, coreset_split)
        self.frozen.append(self.live)
        self.live = None
        self.aux = None

    def saliency(self, sample, target_class):
        x = np.atleast_2d(np.asarray(sample, dtype=float))
        outs, feats = self._features(x)
        logits, cache = nn.forward(self.classifier, feats)
        up = np.zeros_like(logits)
        up[0, int(self.columns([target_class])[0])] = 1.0
        _, g_feats = nn.backward(self.classifier, cache, up, return_input_grad=True)
        h = self.trunk_dim
        dx = np.zeros(self.input_dim)
        for k, (trunk, (_, tcache)) in enumerate(zip(self.trunks, outs)):
            _, g_in = nn.backward(trunk, tcache, g_feats[:, k * h:(k + 1) * h], return_input_grad=True)
            dx += g_in[0]
        return np.abs(dx)

    def _model_meta(self):
        return {
            "frozen_dims": [t.layer_dims for t in self.frozen],
            "live_dims": self.live.layer_dims if self.live else None,
            "clf_dims": self.classifier.layer_dims if self.classifier else None,
            "aux_dims": self.aux.layer_dims if self.aux else None,
        }

    def _model_arrays(self):
        return self.named_parameters()

    def _load_model(self, meta, arrays):
        self.frozen = [_mlp_from(f"trunk{k}.", d, arrays, rectify_output=True)
                       for k, d in enumerate(meta["frozen_dims"])]
        if meta["live_dims"]:
            self.live = _mlp_from(f"trunk{len(self.frozen)}.", meta["live_dims"], arrays, rectify_output=True)
        if meta["clf_dims"]:
            self.classifier = _mlp_from("clf.", meta["clf_dims"], arrays)
        if meta["aux_dims"]:
            self.aux = _mlp_from("aux.", meta["aux_dims"], arrays)


LEARNERS = {"er": ExperienceReplay, "icarl": ICaRL, "lwf": LwF, "der": DerLite}


def make_learner(config: LearnerConfig, input_dim: int, rng=None) -> Learner:
    return LEARNERS[config.kind](input_dim, config, rng)


def learner_from_state(meta: dict, arrays: dict) -> Learner:
    cfg = dict(meta["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    learner = make_learner(LearnerConfig(**cfg), meta["input_dim"], rng)
    learner.class_order = list(meta["class_order"])
    learner.new_classes = list(meta["new_classes"])
    learner.old_classes = list(meta["old_classes"])
    learner.tasks_completed = meta["tasks_completed"]
    learner.in_task = meta["in_task"]
    learner.buffer = ReplayBuffer.from_state(meta["buffer"], arrays)
    learner._load_model(meta, arrays)
    return learner
