"""Key-value run configuration: parsing, validation and serialization.

A config file holds one ``section.key = value`` entry per line. Blank lines
and lines starting with ``#`` are ignored, as is anything after `` #`` on a
line. ``learner.kind`` and ``dataset.kind`` are required; every other key
falls back to its default. Adding any ``grid.*`` key turns the file into an
experiment grid.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, replace
from pathlib import Path

from dietcl.coreset import FULL, METHODS, CoresetSpec
from dietcl.errors import ConfigError, InputError, ParseError
from dietcl.learners import KINDS, LearnerConfig
from dietcl.protocol import DatasetConfig, OptimConfig, ProtocolConfig, RunConfig

SECTIONS = {
    "dataset": DatasetConfig,
    "protocol": ProtocolConfig,
    "sgd": OptimConfig,
    "coreset": CoresetSpec,
    "learner": LearnerConfig,
}
REQUIRED = ("learner.kind", "dataset.kind")
DEFAULT_OUTPUT_DIR = "runs"


def _choices(*options):
    return ", ".join(options), lambda v: v in options


def _at_least(lo):
    return f">= {lo}", lambda v: v >= lo


_POSITIVE = ("> 0", lambda v: v > 0)
_OPEN_UNIT = ("(0,1)", lambda v: 0 < v < 1)

# accepted-value description and predicate for every constrained key
CONSTRAINTS = {
    "dataset.kind": _choices("gaussian", "csv"),
    "dataset.num_tasks": _at_least(1),
    "dataset.classes_per_task": _at_least(1),
    "dataset.train_per_class": _at_least(1),
    "dataset.test_per_class": _at_least(1),
    "dataset.dim": _at_least(2),
    "dataset.class_separation": _at_least(0),
    "dataset.noise_sigma": _at_least(0),
    "dataset.test_fraction": ("[0,1)", lambda v: 0 <= v < 1),
    "protocol.e": _at_least(2),
    "protocol.alpha": _OPEN_UNIT,
    "protocol.weight_decay_first": _at_least(0),
    "protocol.weight_decay_later": _at_least(0),
    "protocol.probe_layer": _choices("last", "all"),
    "protocol.saliency_samples": _at_least(0),
    "sgd.learning_rate": _POSITIVE,
    "sgd.momentum": ("[0,1)", lambda v: 0 <= v < 1),
    "sgd.batch_size": _at_least(1),
    "sgd.schedule": _choices("constant"),
    "coreset.method": _choices(*METHODS, FULL),
    "coreset.fraction": _OPEN_UNIT,
    "coreset.graphcut_lambda": _POSITIVE,
    "learner.kind": _choices(*KINDS),
    "learner.hidden": ("comma-separated widths >= 1", lambda v: len(v) > 0 and min(v) >= 1),
    "learner.memory_per_class": _at_least(0),
    "learner.lwf_temperature": _POSITIVE,
    "learner.icarl_temperature": _POSITIVE,
    "learner.lwf_weight": _at_least(0),
    "learner.icarl_kd_weight": _at_least(0),
    "learner.der_aux_weight": _at_least(0),
}

GRID_KEYS = ("grid.methods", "grid.fractions", "grid.seeds", "grid.learners", "grid.workers")
OUTPUT_KEYS = ("output.dir",)


def _defaults() -> dict:
    out = {}
    for section, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            out[f"{section}.{f.name}"] = getattr(cls(), f.name) if f.default is dataclasses.MISSING else f.default
    return out


DEFAULTS = _defaults()


def _parse_bool(key, raw):
    low = raw.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ConfigError(key, f"expected a boolean, got {raw!r}; accepted: true, false")


def _parse_number(key, raw, kind):
    try:
        value = kind(raw)
    except ValueError:
        raise ConfigError(key, f"expected {'an integer' if kind is int else 'a number'}, got {raw!r}") from None
    if kind is float and not math.isfinite(value):
        raise ConfigError(key, f"value {raw!r} is not finite")
    return value


def _split_list(raw):
    return [p.strip() for p in raw.split(",") if p.strip()]


def _parse_value(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        value = _parse_bool(key, raw)
    elif isinstance(default, int):
        value = _parse_number(key, raw, int)
    elif isinstance(default, float):
        value = _parse_number(key, raw, float)
    elif isinstance(default, tuple):
        value = tuple(_parse_number(key, p, int) for p in _split_list(raw))
    else:
        value = raw
    if key in CONSTRAINTS:
        accepted, ok = CONSTRAINTS[key]
        if not ok(value):
            raise ConfigError(key, f"value {raw!r} not accepted; accepted: {accepted}")
    return value


@dataclass(frozen=True)
class GridCell:
    learner: str
    selector: str
    fraction: float
    seed: int
    config: RunConfig

    @property
    def fraction_label(self) -> str:
        return FULL if self.selector == FULL else repr(self.fraction)


@dataclass(frozen=True)
class ExperimentGrid:
    """A base config swept over selectors x fractions x seeds x learners.

    ``fractions`` may contain ``"full"``; the full-data baseline is run once
    per (learner, seed) however many selectors the grid lists.
    """

    base: RunConfig
    methods: tuple
    fractions: tuple
    seeds: tuple
    learners: tuple
    workers: int = 1

    def __post_init__(self):
        for name in ("methods", "fractions", "seeds", "learners"):
            if not getattr(self, name):
                raise ConfigError(f"grid.{name}", "empty sweep axis; the grid would have no cells")
        if self.workers < 1:
            raise ConfigError("grid.workers", "accepted: >= 1")
        self.cells()  # every derived config must validate

    def cells(self) -> list[GridCell]:
        out = []
        for learner in self.learners:
            for seed in self.seeds:
                for fraction in self.fractions:
                    if fraction == FULL:
                        out.append(self._cell(learner, FULL, 1.0, seed))
                        continue
                    for method in self.methods:
                        out.append(self._cell(learner, method, fraction, seed))
        return out

    def _cell(self, learner, method, fraction, seed) -> GridCell:
        b = self.base
        # a seed is an independent replicate: it redraws the data and the model
        cfg = replace(b, learner=replace(b.learner, kind=learner),
                      dataset=replace(b.dataset, seed=seed),
                      protocol=replace(b.protocol, seed=seed),
                      coreset=replace(b.coreset, method=method, fraction=fraction))
        return GridCell(learner, method, fraction, seed, cfg)

    def grid_id(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class LoadedConfig:
    config: RunConfig | ExperimentGrid
    output_dir: str = DEFAULT_OUTPUT_DIR


def read_entries(text: str, path=None) -> dict:
    """Raw ``key -> (value, line)`` pairs; syntax errors carry the line number."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if " #" in stripped:
            stripped = stripped.split(" #", 1)[0].rstrip()
        if "=" not in stripped:
            raise ParseError(f"expected 'key = value', got {line.strip()!r}", line=lineno, path=path)
        key, value = (p.strip() for p in stripped.split("=", 1))
        if not key:
            raise ParseError("missing key before '='", line=lineno, path=path)
        if key in entries:
            raise ParseError(f"duplicate key {key!r} (first set on line {entries[key][1]})",
                             line=lineno, path=path)
        entries[key] = (value, lineno)
    return entries


def parse_config_text(text: str, path=None) -> LoadedConfig:
    entries = read_entries(text, path)
    known = set(DEFAULTS) | set(GRID_KEYS) | set(OUTPUT_KEYS)
    for key, (_, lineno) in entries.items():
        if key not in known:
            sections = sorted({k.split(".")[0] for k in known})
            hint = ""
            if "." in key and key.split(".")[0] in sections:
                sect = key.split(".")[0]
                hint = "; accepted keys: " + ", ".join(sorted(k for k in known if k.startswith(sect + ".")))
            else:
                hint = "; accepted sections: " + ", ".join(sections)
            raise ParseError(f"unknown key {key!r}{hint}", line=lineno, path=path)
    for key in REQUIRED:
        if key not in entries:
            raise ConfigError(key, "required key missing; accepted: " + CONSTRAINTS[key][0], path=path)

    values = {}
    for key, (raw, lineno) in entries.items():
        if key in DEFAULTS:
            try:
                values[key] = _parse_value(key, raw)
            except ConfigError as exc:
                raise ConfigError(key, exc.reason, line=lineno, path=path) from None
    built = {}
    for section, cls in SECTIONS.items():
        kwargs = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(section + ".")}
        try:
            built[section] = cls(**kwargs)
        except InputError as exc:
            keys = ", ".join(sorted(kwargs)) or "defaults"
            raise ConfigError(section, f"{exc} (set keys: {keys})", path=path) from None
    base = RunConfig(**built)
    output_dir = entries["output.dir"][0] if "output.dir" in entries else DEFAULT_OUTPUT_DIR

    grid_entries = {k: v for k, v in entries.items() if k.startswith("grid.")}
    if not grid_entries:
        return LoadedConfig(base, output_dir)
    try:
        grid = _build_grid(base, grid_entries)
    except ConfigError as exc:
        line = grid_entries.get(exc.key, (None, None))[1]
        raise ConfigError(exc.key, exc.reason, line=line, path=path) from None
    return LoadedConfig(grid, output_dir)


def _grid_list(key, raw, parse, accepted):
    out = []
    for part in _split_list(raw):
        try:
            value = parse(part)
        except ValueError:
            raise ConfigError(key, f"bad entry {part!r}; accepted: {accepted}") from None
        if value in out:
            raise ConfigError(key, f"duplicate entry {part!r}")
        out.append(value)
    return tuple(out)


def _fraction(part):
    if part == FULL:
        return FULL
    v = float(part)
    if not 0 < v < 1:
        raise ValueError(part)
    return v


def _member(options):
    def parse(part):
        if part not in options:
            raise ValueError(part)
        return part
    return parse


def _build_grid(base: RunConfig, entries: dict) -> ExperimentGrid:
    def get(key, parse, accepted, default):
        if key not in entries:
            return default
        return _grid_list(key, entries[key][0], parse, accepted)

    methods = get("grid.methods", _member(METHODS), ", ".join(METHODS),
                  (base.coreset.method,) if base.coreset.method != FULL else ())
    fractions = get("grid.fractions", _fraction, "values in (0,1) or full",
                    (FULL,) if base.coreset.is_full else (base.coreset.fraction,))
    seeds = get("grid.seeds", int, "integers", (base.protocol.seed,))
    learners = get("grid.learners", _member(KINDS), ", ".join(KINDS), (base.learner.kind,))
    workers = 1
    if "grid.workers" in entries:
        raw = entries["grid.workers"][0]
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError("grid.workers", f"expected an integer, got {raw!r}; accepted: >= 1") from None
    if not methods and any(f != FULL for f in fractions):
        raise ConfigError("grid.methods", "empty sweep axis; the grid would have no cells")
    return ExperimentGrid(base, methods or (METHODS[0],), fractions, seeds, learners, workers)


def read_config(path) -> LoadedConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, path)


def parse_config(path) -> RunConfig | ExperimentGrid:
    return read_config(path).config


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    return str(value)


def dump_config(cfg: RunConfig | ExperimentGrid, output_dir: str | None = None) -> str:
    """Every effective key, one per line; ``parse_config_text`` inverts it."""
    base = cfg.base if isinstance(cfg, ExperimentGrid) else cfg
    lines = []
    for key, value in base.flat().items():
        lines.append(f"{key} = {_format(value)}")
    if isinstance(cfg, ExperimentGrid):
        lines += [f"grid.methods = {_format(cfg.methods)}",
                  f"grid.fractions = {_format(cfg.fractions)}",
                  f"grid.seeds = {_format(cfg.seeds)}",
                  f"grid.learners = {_format(cfg.learners)}",
                  f"grid.workers = {cfg.workers}"]
    if output_dir is not None:
        lines.append(f"output.dir = {output_dir}")
    return "\n".join(lines) + "\n"
