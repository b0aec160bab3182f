"""The four commands behind the ``dietcl`` executable, usable as plain functions."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from dietcl import checkpoint
from dietcl.config import ExperimentGrid, GridCell, LoadedConfig, dump_config
from dietcl.coreset import MAX_BRUTE_FORCE, brute_force_select, graphcut_objective, greedy_graphcut, \
    herding_order, similarity_matrix
from dietcl.errors import InputError, ParseError, RefusalError
from dietcl.protocol import RunAborted, RunConfig, make_stream, run_stream
from dietcl.results import ResultsTable, table_to_csv

log = logging.getLogger("dietcl")

RUN_FILES = ("record.json", "matrix.csv", "coreset.json", "config.cfg", "timing.json", "checkpoint.bin")
EXPORT_KINDS = ("accuracy-heatmap", "weight-deltas", "saliency", "pca")


def output_root(configured: str | None = None) -> Path:
    """``$DIETCL_OUT`` wins over the config's ``output.dir``."""
    return Path(os.environ.get("DIETCL_OUT") or configured or "runs")


def _write(path: Path, data) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, bytes):
            path.write_bytes(data)
        else:
            path.write_text(data)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}") from None


# ------------------------------------------------------------------- run

def write_run_dir(record, cfg: RunConfig, run_dir: Path) -> None:
    _write(run_dir / "record.json", record.to_json())
    _write(run_dir / "matrix.csv", record.matrix.to_csv())
    _write(run_dir / "coreset.json", json.dumps(record.coresets, sort_keys=True, indent=1) + "\n")
    _write(run_dir / "config.cfg", dump_config(cfg))
    _write(run_dir / "timing.json", json.dumps({"task_seconds": record.wall_times}, indent=1) + "\n")
    ckpt = run_dir / "checkpoint.bin"
    if record.complete and record.learner is not None:
        _write(ckpt, checkpoint.dumps(record.learner))
    elif ckpt.exists():
        ckpt.unlink()  # never leave a checkpoint from an earlier run next to a partial record


def execute(cfg: RunConfig, root: Path):
    """Run one config into ``root/<run-id>``; returns (record, run_dir)."""
    run_dir = root / cfg.run_id()
    try:
        record = run_stream(make_stream(cfg.dataset), cfg)
    except RunAborted as exc:
        write_run_dir(exc.record, cfg, run_dir)
        raise
    write_run_dir(record, cfg, run_dir)
    return record, run_dir


def cmd_run(loaded: LoadedConfig, out=print) -> int:
    cfg = loaded.config
    if isinstance(cfg, ExperimentGrid):
        raise InputError("config defines grid.* keys; use 'dietcl grid'")
    root = output_root(loaded.output_dir)
    try:
        record, run_dir = execute(cfg, root)
    except RunAborted as exc:
        out(f"run {exc.record.run_id} aborted: {exc.cause}")
        out(f"partial record written to {root / exc.record.run_id}")
        return 1
    line = f"run {record.run_id}: ACC {record.acc:.4f}"
    if record.bwt is not None:
        line += f", BWT {record.bwt:.4f}"
    out(line)
    out(f"wrote {run_dir}")
    return 0


# ------------------------------------------------------------------ grid

def _run_cell(cell: GridCell, runs_root: str) -> dict:
    start = time.perf_counter()
    base = dict(learner=cell.learner, selector=cell.selector, fraction=cell.fraction_label,
                seed=cell.seed, run_id=cell.config.run_id())
    try:
        record, _ = execute(cell.config, Path(runs_root))
    except Exception as exc:  # a failed cell is recorded; the grid carries on
        cause = exc.cause if isinstance(exc, RunAborted) else exc
        return dict(base, status="failed", runtime=time.perf_counter() - start,
                    error=f"{type(cause).__name__}: {cause}")
    return dict(base, status="ok", runtime=time.perf_counter() - start, acc=record.acc, bwt=record.bwt)


def run_grid(grid: ExperimentGrid, grid_dir: Path, progress=None) -> ResultsTable:
    """Run every cell (in a process pool when ``workers > 1``) and write the tables."""
    cells = grid.cells()
    runs_root = str(grid_dir / "runs")
    table = ResultsTable()
    done = 0

    def collect(row):
        nonlocal done
        done += 1
        table.add(**row)
        if progress:
            progress(done, len(cells), row)

    if grid.workers == 1:
        for cell in cells:
            collect(_run_cell(cell, runs_root))
    else:
        with ProcessPoolExecutor(max_workers=grid.workers) as pool:
            futures = [pool.submit(_run_cell, cell, runs_root) for cell in cells]
            for fut in as_completed(futures):
                collect(fut.result())

    order = dict(learner_order=grid.learners, selector_order=grid.methods)
    _write(grid_dir / "grid.cfg", dump_config(grid))
    _write(grid_dir / "results.csv", table.to_csv(**order))
    # summaries are computed from the rows as written, so they can be re-derived from results.csv
    written = ResultsTable.from_csv(table.to_csv(**order))
    _write(grid_dir / "summary.csv", table_to_csv(written.summary("acc", **order)))
    _write(grid_dir / "summary_bwt.csv", table_to_csv(written.summary("bwt", **order)))
    return table


def cmd_grid(loaded: LoadedConfig, out=print) -> int:
    cfg = loaded.config
    if not isinstance(cfg, ExperimentGrid):
        raise InputError("config has no grid.* keys; use 'dietcl run' or add e.g. grid.seeds")
    grid_dir = output_root(loaded.output_dir) / f"grid-{cfg.grid_id()}"

    def progress(i, n, row):
        status = row["status"] if row["status"] != "ok" else f"ACC {100 * row['acc']:.2f}"
        out(f"[{i}/{n}] {row['learner']} {row['selector']} {row['fraction']} seed={row['seed']}: {status}")

    table = run_grid(cfg, grid_dir, progress)
    failed = sum(r["status"] != "ok" for r in table.rows)
    out(f"wrote {grid_dir}/results.csv and summary.csv ({len(table.rows)} cells, {failed} failed)")
    return 1 if failed else 0


# ---------------------------------------------------------------- oracle

def parse_instance(text: str, path=None) -> dict:
    """Read an oracle instance: ``objective``, ``quota``, optional ``lambda`` and ``point`` lines."""
    inst = {"objective": None, "quota": None, "lambda": 1.0, "points": []}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, *rest = line.split()
        try:
            if word == "point":
                if not rest:
                    raise ValueError("point needs at least one coordinate")
                coords = [float(v) for v in rest]
                if not np.isfinite(coords).all():
                    raise ValueError("coordinates must be finite")
                if inst["points"] and len(coords) != len(inst["points"][0]):
                    raise ValueError(f"point has {len(coords)} coordinates, expected {len(inst['points'][0])}")
                inst["points"].append(coords)
                continue
            if word not in ("objective", "quota", "lambda"):
                raise ValueError(f"unknown directive {word!r}; accepted: objective, quota, lambda, point")
            if word in seen:
                raise ValueError(f"duplicate {word!r}")
            if len(rest) != 1:
                raise ValueError(f"{word} takes exactly one value")
            seen.add(word)
            if word == "objective":
                if rest[0] not in ("herding", "graphcut"):
                    raise ValueError(f"objective {rest[0]!r}; accepted: herding, graphcut")
                inst["objective"] = rest[0]
            elif word == "quota":
                inst["quota"] = int(rest[0])
                if inst["quota"] < 1:
                    raise ValueError("quota must be >= 1")
            else:
                inst["lambda"] = float(rest[0])
                if not inst["lambda"] > 0:
                    raise ValueError("lambda must be > 0")
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, path=path) from None
    for key in ("objective", "quota"):
        if inst[key] is None:
            raise ParseError(f"missing '{key}' line", path=path)
    n = len(inst["points"])
    if n == 0:
        raise ParseError("instance has no points", path=path)
    if inst["quota"] > n:
        raise ParseError(f"quota {inst['quota']} exceeds the {n} points", path=path)
    if n > MAX_BRUTE_FORCE:
        raise RefusalError(f"{n} points exceed the exhaustive-search limit of {MAX_BRUTE_FORCE}; refusing")
    return inst


def oracle_report(inst: dict) -> tuple[str, bool]:
    """Greedy vs exhaustive comparison; returns (report, greedy_is_optimal)."""
    emb = np.array(inst["points"], dtype=float)
    q, lam, objective = inst["quota"], inst["lambda"], inst["objective"]
    best, best_val = brute_force_select(objective, emb, q, lam)
    if objective == "herding":
        greedy = tuple(sorted(herding_order(emb, q)))
        greedy_val = float(np.linalg.norm(emb.mean(axis=0) - emb[list(greedy)].mean(axis=0)))
        optimal = greedy_val <= best_val + 1e-12
        quality = f"gap greedy - optimum  {greedy_val - best_val:.6g} (distance, lower is better)"
    else:
        order, _ = greedy_graphcut(similarity_matrix(emb), q, lam)
        greedy = tuple(sorted(order))
        greedy_val = graphcut_objective(similarity_matrix(emb), greedy, lam)
        optimal = greedy_val >= best_val - 1e-12
        ratio = greedy_val / best_val if best_val != 0 else float("nan")
        quality = f"ratio greedy/optimum  {ratio:.6f}"
    lines = [
        f"objective {objective}  n={len(emb)}  quota={q}" + (f"  lambda={lam!r}" if objective == "graphcut" else ""),
        f"greedy      subset {list(greedy)}  value {greedy_val:.10g}",
        f"exhaustive  subset {list(best)}  value {best_val:.10g}",
        quality,
        f"greedy reaches optimum: {'yes' if optimal else 'no'}",
    ]
    return "\n".join(lines) + "\n", optimal


def toy_instance_path() -> Path:
    return Path(__file__).parent / "data" / "toy_oracle.txt"


def cmd_oracle(path, out=print) -> int:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read instance {path}: {exc.strerror}") from None
    report, _ = oracle_report(parse_instance(text, path))
    out(report.rstrip("\n"))
    return 0


# ---------------------------------------------------------------- export

def _load_record(run_dir: Path) -> dict:
    path = run_dir / "record.json"
    if not path.is_file():
        raise InputError(f"missing artifact: {path}")
    try:
        record = json.loads(path.read_text())
    except ValueError as exc:
        raise ParseError(f"record is not valid JSON ({exc})", path=path) from None
    if not record.get("complete", False):
        raise InputError(f"{path} holds an incomplete run ({record.get('error')}); nothing to export")
    return record


def _rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def export(run_dir, kind: str) -> str:
    """Long-format CSV for one figure; a pure function of the run directory."""
    if kind not in EXPORT_KINDS:
        raise InputError(f"unknown export kind {kind!r}; accepted: {', '.join(EXPORT_KINDS)}")
    run_dir = Path(run_dir)
    record = _load_record(run_dir)
    if kind == "accuracy-heatmap":
        rows = [(t, i, repr(a)) for t, row in enumerate(record["accuracy_matrix"], start=1)
                for i, a in enumerate(row, start=1)]
        return _rows_to_csv(("after_task", "task", "accuracy"), rows)
    if kind == "weight-deltas":
        rows = [(d["from_task"], d["to_task"], repr(d["delta"])) for d in record["weight_deltas"]]
        return _rows_to_csv(("from_task", "to_task", "delta"), rows)
    diag = record.get("diagnostics") or {}
    if kind not in diag and kind.replace("-", "_") not in diag:
        raise InputError(f"missing artifact: {kind} diagnostics in {run_dir / 'record.json'}")
    if kind == "saliency":
        rows = [(s["sample_id"], s["label"], f, repr(v)) for s in diag["saliency"]
                for f, v in enumerate(s["saliency"])]
        return _rows_to_csv(("sample_id", "label", "feature", "saliency"), rows)
    rows = [(repr(x), repr(y), c, t) for x, y, c, t in diag["pca"]["points"]]
    return _rows_to_csv(("x", "y", "class", "task"), rows)


def cmd_export(run_dir, kind: str, output=None, out=print) -> int:
    text = export(run_dir, kind)
    if output is None:
        out(text.rstrip("\n"))
    else:
        _write(Path(output), text)
        out(f"wrote {output}")
    return 0
