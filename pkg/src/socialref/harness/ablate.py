"""Ablation matrix: paired runs sharing one seed, aggregated from their metrics CSVs."""

from __future__ import annotations

import csv
from pathlib import Path

from socialref.errors import ConfigError
from socialref.harness.config import RunConfig
from socialref.harness.data import corpus_for
from socialref.harness.metrics import macro_scores, read_metrics
from socialref.harness.train import train

TABLES = {
    "features": [("w/o visual", {"ablation": {"no-visual"}}), ("w/o gesture", {"ablation": {"no-gesture"}}),
                 ("w/o gaze", {"ablation": {"no-gaze"}}), ("full", {})],
    "permutation": [("w/o permutation", {"ablation": {"no-permutation"}}), ("with permutation", {})],
    "correction": [("w/o correction", {"ablation": {"no-correction"}}), ("with correction", {})],
    "context": [(f"n={n}", {"context_n": n}) for n in (1, 3, 5, 7, 9)],
    "frames": [(f"T={t}", {"frames": t}) for t in (2, 4, 6, 8, 10)],
}
COLUMNS = ("task", "table", "row", "ablation", "context_n", "frames", "best_epoch", "accuracy",
           "macro_precision", "macro_recall", "accuracy_shuffled")


def row_config(base: RunConfig, changes):
    extra = set(changes.get("ablation", ()))
    updates = {k: v for k, v in changes.items() if k != "ablation"}
    return base.with_(ablation=frozenset(base.ablation | extra), **updates)


def best_row(metrics_path):
    records = read_metrics(metrics_path)
    best = max(records, key=lambda r: (r.accuracy, -r.epoch))
    return best


def ablate(base: RunConfig, tables=("features",), out=None, log=None):
    """Run every requested row and write ``ablation_<task>.csv``; returns the rows."""
    unknown = [t for t in tables if t not in TABLES]
    if unknown:
        raise ConfigError(f"unknown ablation table(s) {unknown}; choose from {sorted(TABLES)}")
    out = Path(base.out if out is None else out)
    sessions = corpus_for(base)
    rows = []
    for table in tables:
        for name, changes in TABLES[table]:
            cfg = row_config(base, changes)
            slug = f"{table}_{name}".replace("/", "").replace(" ", "_").replace("=", "")
            if log is not None:
                log(f"[{table}] {name}")
            result = train(cfg, sessions=sessions, out=out / slug, log=log)
            best = best_row(result.metrics_path)
            p, r = macro_scores(best.confusion)
            shuffled = result.evaluate(shuffled=True).accuracy if table == "permutation" else None
            rows.append({
                "task": cfg.task.value, "table": table, "row": name, "ablation": ",".join(sorted(cfg.ablation)),
                "context_n": cfg.context_n, "frames": cfg.frames, "best_epoch": best.epoch,
                "accuracy": f"{best.accuracy:.6f}", "macro_precision": f"{p:.6f}", "macro_recall": f"{r:.6f}",
                "accuracy_shuffled": "" if shuffled is None else f"{shuffled:.6f}",
            })
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"ablation_{base.task.value}.csv"
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows, path
