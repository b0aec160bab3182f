"""Grid results: raw per-cell rows and the mean ± std summary tables."""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field

FULL = "full"
RESULT_COLUMNS = ("learner", "selector", "fraction", "seed", "acc", "bwt", "runtime", "status",
                  "run_id", "error")


def pct(x) -> str:
    """A [0, 1] score as a percentage with two decimals; empty when missing."""
    return "" if x is None else f"{100.0 * x:.2f}"


def fraction_header(label: str) -> str:
    return "100%" if label == FULL else f"{100.0 * float(label):g}%"


def _fraction_key(label: str) -> float:
    return 1.0 if label == FULL else float(label)


@dataclass
class ResultsTable:
    """Rows as written to results.csv (all values are strings)."""

    rows: list = field(default_factory=list)

    def add(self, learner, selector, fraction, seed, acc=None, bwt=None, runtime=0.0,
            status="ok", run_id="", error=""):
        self.rows.append({
            "learner": learner, "selector": selector, "fraction": fraction, "seed": str(seed),
            "acc": pct(acc), "bwt": pct(bwt), "runtime": f"{runtime:.3f}", "status": status,
            "run_id": run_id, "error": error,
        })

    def sorted_rows(self, learner_order=(), selector_order=()) -> list:
        lo = {k: i for i, k in enumerate(learner_order)}
        so = {k: i for i, k in enumerate(selector_order)}
        return sorted(self.rows, key=lambda r: (lo.get(r["learner"], len(lo)), r["learner"],
                                                so.get(r["selector"], len(so)), r["selector"],
                                                _fraction_key(r["fraction"]), int(r["seed"])))

    def to_csv(self, **order) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, RESULT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(self.sorted_rows(**order))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ResultsTable":
        return cls([dict(r) for r in csv.DictReader(io.StringIO(text))])

    def summary(self, metric="acc", learner_order=(), selector_order=()) -> list[list[str]]:
        """Wide table: one row per (learner, selector), one column per fraction.

        Cells are ``mean ± std`` over the successful seeds (sample std); a
        single seed gives just the mean and no seeds gives ``n/a``. The
        full-data baseline fills the ``100%`` column of every selector row.
        """
        ok = [r for r in self.rows if r["status"] == "ok" and r[metric] != ""]
        everything = self.sorted_rows(learner_order, selector_order)
        learners = list(dict.fromkeys(r["learner"] for r in everything))
        selectors = list(dict.fromkeys(r["selector"] for r in everything if r["selector"] != FULL))
        fractions = sorted({r["fraction"] for r in everything}, key=_fraction_key)
        if not selectors:
            selectors = [FULL]
        table = [["learner", "selector"] + [fraction_header(f) for f in fractions]]
        for learner in learners:
            for selector in selectors:
                line = [learner, selector]
                for frac in fractions:
                    sel = FULL if frac == FULL else selector
                    vals = [float(r[metric]) for r in ok
                            if r["learner"] == learner and r["selector"] == sel and r["fraction"] == frac]
                    line.append(aggregate(vals))
                table.append(line)
        return table


def aggregate(values) -> str:
    if not values:
        return "n/a"
    mean = statistics.fmean(values)
    if len(values) == 1:
        return f"{mean:.2f}"
    return f"{mean:.2f} ± {statistics.stdev(values):.2f}"


def table_to_csv(table) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(table)
    return buf.getvalue()
