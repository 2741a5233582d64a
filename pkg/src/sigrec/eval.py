"""Metrics (precision/recall, weighted accuracy, Efficiency), timing and ablation grids."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .labels import NUM_CLASSES, TASK_CLASSES, TASKS
from .model import ModelConfig, build_model, label_targets, predict_proba, train

log = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    task: str
    counts: np.ndarray  # rows = true class, columns = predicted

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def k(self) -> int:
        return self.counts.shape[0]


def _as_indices(items, task):
    out = []
    for it in items:
        if hasattr(it, "index") and hasattr(it, "pc"):  # SignatureLabel
            out.append(it.index(task))
        elif hasattr(it, "labels") and isinstance(getattr(it, "labels"), dict):  # Prediction
            out.append(TASK_CLASSES[task].index(it.labels[task]))
        elif isinstance(it, str):
            out.append(TASK_CLASSES[task].index(it))
        else:
            out.append(int(it))
    return np.asarray(out, dtype=np.int64)


def confusion(predictions, labels, task: str, k: int | None = None) -> ConfusionMatrix:
    pred = _as_indices(predictions, task)
    true = _as_indices(labels, task)
    if len(true) == 0:
        raise ValueError("no samples")
    if len(pred) != len(true):
        raise ValueError("predictions and labels differ in length")
    k = k or NUM_CLASSES.get(task) or int(max(pred.max(), true.max()) + 1)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    return ConfusionMatrix(task, counts)


def precision_recall(cm: ConfusionMatrix):
    """Per-class (P, R); None marks a zero denominator."""
    c = cm.counts
    tp = np.diag(c)
    pred_tot = c.sum(axis=0)
    true_tot = c.sum(axis=1)
    out = []
    for i in range(cm.k):
        p = tp[i] / pred_tot[i] if pred_tot[i] else None
        r = tp[i] / true_tot[i] if true_tot[i] else None
        out.append((None if p is None else float(p), None if r is None else float(r)))
    return out


def class_shares(cm: ConfusionMatrix) -> np.ndarray:
    return cm.counts.sum(axis=1) / cm.n


def weighted_accuracy(cm: ConfusionMatrix) -> float:
    shares = class_shares(cm)
    acc = 0.0
    for share, (_, r) in zip(shares, precision_recall(cm)):
        if r is not None:
            acc += share * r
    return float(acc)


@dataclass
class EfficiencyInput:
    acc_values: list[float]
    device_records: list[tuple[float, float]]

    def __post_init__(self):
        for t, u in self.device_records:
            if t <= 0:
                raise ValueError("device time must be positive")
            if not 0 <= u <= 1:
                raise ValueError("utilisation must lie in [0, 1]")
        if not self.device_records:
            raise ValueError("need at least one device record")


def efficiency(inp: EfficiencyInput) -> float:
    """Summed task accuracy per unit of utilisation-weighted device time."""
    denom = sum(t * u for t, u in inp.device_records)
    if denom <= 0:
        raise ValueError("zero utilisation-weighted time")
    return float(sum(inp.acc_values) / denom)


def cpu_utilization(cpu_seconds: float, wall_seconds: float, cores: int | None = None) -> float:
    cores = cores or os.cpu_count() or 1
    if wall_seconds <= 0:
        return 0.0
    return float(min(max(cpu_seconds / (wall_seconds * cores), 0.0), 1.0))


# ---------------------------------------------------------------------------
# reports

@dataclass
class TaskReport:
    task: str
    acc: float
    n: int
    shares: list[float]
    precision: list[float | None]
    recall: list[float | None]


@dataclass
class EvalReport:
    tasks: dict[str, TaskReport]
    timing: dict | None = None

    def rows(self):
        for t, rep in self.tasks.items():
            row = {"task": t, "acc": rep.acc, "n": rep.n}
            if self.timing:
                row["ms_per_function"] = self.timing["ms_per_function"]
            yield row


def task_report(cm: ConfusionMatrix) -> TaskReport:
    pr = precision_recall(cm)
    return TaskReport(
        cm.task,
        weighted_accuracy(cm),
        cm.n,
        class_shares(cm).tolist(),
        [p for p, _ in pr],
        [r for _, r in pr],
    )


def evaluate(model, dataset) -> EvalReport:
    if len(dataset) == 0:
        raise ValueError("empty evaluation set")
    probs = predict_proba(model, dataset.functions)
    targets = label_targets(dataset.labels, model.tasks)
    reports = {}
    for t in model.tasks:
        cm = confusion(probs[t].argmax(axis=1), targets[t], t)
        reports[t] = task_report(cm)
    return EvalReport(reports)


def time_epoch(history) -> float:
    if not history.epoch_seconds:
        raise ValueError("no epochs recorded")
    return float(np.mean(history.epoch_seconds))


def time_inference(models, functions, repetitions: int = 3) -> dict:
    """Per-function wall time (ms) at batch size 1, summed over ``models``.

    Encoding is included (it is part of answering one query); loading the
    data is not. One warm-up pass precedes ``repetitions`` timed passes.
    """
    if not len(functions):
        raise ValueError("no functions to time")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if not isinstance(models, (list, tuple)):
        models = [models]
    encoded = [m.encode(functions) for m in models]

    def one_pass(subset=None):
        for m, (ids, lengths) in zip(models, encoded):
            idx = range(len(ids)) if subset is None else subset
            for i in idx:
                m.predict_ids(ids[i:i + 1], lengths[i:i + 1])

    one_pass(range(min(len(functions), 8)))
    per_rep = []
    cpu0 = time.process_time()
    wall0 = time.perf_counter()
    for _ in range(repetitions):
        t0 = time.perf_counter()
        one_pass()
        per_rep.append((time.perf_counter() - t0) * 1000.0 / len(functions))
    wall = time.perf_counter() - wall0
    cpu = time.process_time() - cpu0
    return {
        "ms_per_function": float(np.mean(per_rep)),
        "ms_std": float(np.std(per_rep)),
        "repetitions": repetitions,
        "cpu_utilization": cpu_utilization(cpu, wall),
    }


# ---------------------------------------------------------------------------
# ablation

@dataclass(frozen=True)
class GridCell:
    size: int
    location: str
    structure: str


def make_grid(sizes, locations, structures) -> list[GridCell]:
    """Rows ordered size-major, then location, then structure."""
    return [GridCell(s, loc, st) for s in sizes for loc in locations for st in structures]


@dataclass
class AblationRow:
    cell: GridCell
    acc: dict[str, float] = field(default_factory=dict)
    epoch_seconds: float | None = None
    cpu_utilization: float | None = None
    efficiency: float | None = None
    infer_ms: float | None = None
    status: str = "ok"

    def record(self, timing: bool) -> dict:
        rec = {
            "size": self.cell.size,
            "location": self.cell.location,
            "structure": self.cell.structure,
        }
        for t in TASKS:
            rec[f"acc_{t}"] = self.acc.get(t)
        if timing:
            rec["epoch_seconds"] = self.epoch_seconds
            rec["cpu_utilization"] = self.cpu_utilization
            rec["efficiency"] = self.efficiency
            rec["infer_ms"] = self.infer_ms
        rec["status"] = self.status
        return rec


@dataclass
class AblationReport:
    rows: list[AblationRow]
    timing: bool = False

    def records(self) -> list[dict]:
        return [r.record(self.timing) for r in self.rows]

    def row(self, size, location, structure) -> AblationRow:
        for r in self.rows:
            if (r.cell.size, r.cell.location, r.cell.structure) == (size, location, structure):
                return r
        raise KeyError((size, location, structure))


def _run_cell(cell: GridCell, train_set, test_set, vocab, embeddings, hyper: dict, timing: bool) -> AblationRow:
    seed = hyper.get("seed", 0)
    base = {k: hyper[k] for k in ("hidden", "dropout", "learning_rate", "batch_size", "train_embeddings",
                                  "clip_norm", "precision") if k in hyper}
    emb = np.asarray(getattr(embeddings, "input_vectors", embeddings))
    base["embed_dim"] = emb.shape[1]
    if cell.structure == "mtl":
        configs = [ModelConfig(structure="mtl", size=cell.size, location=cell.location, **base)]
    else:
        configs = [ModelConfig(structure="stl", task=t, size=cell.size, location=cell.location, **base) for t in TASKS]
    row = AblationRow(cell)
    models = []
    epoch_time = 0.0
    cpu0 = time.process_time()
    wall0 = time.perf_counter()
    for cfg in configs:
        model = build_model(cfg, vocab, emb, seed=seed)
        model, hist = train(model, train_set, epochs=hyper.get("epochs", 100), seed=seed)
        epoch_time += time_epoch(hist) if hist.epochs else 0.0
        models.append(model)
    wall = time.perf_counter() - wall0
    cpu = time.process_time() - cpu0
    for model in models:
        rep = evaluate(model, test_set)
        for t, tr in rep.tasks.items():
            row.acc[t] = tr.acc
    if timing:
        # STL rows aggregate the four models' time, matching how the
        # efficiency of a full signature is charged
        row.epoch_seconds = epoch_time
        row.cpu_utilization = cpu_utilization(cpu, wall)
        if epoch_time > 0 and row.cpu_utilization > 0:
            row.efficiency = efficiency(EfficiencyInput(list(row.acc.values()), [(epoch_time, row.cpu_utilization)]))
        row.infer_ms = time_inference(models, test_set.functions[: hyper.get("timing_functions", 200)],
                                      hyper.get("repetitions", 3))["ms_per_function"]
    return row


def run_ablation(grid, train_set, test_set, vocab, embeddings, hyper: dict | None = None,
                 timing: bool = False) -> AblationReport:
    hyper = dict(hyper or {})
    rows = []
    for cell in grid:
        log.info("ablation cell %s", cell)
        try:
            rows.append(_run_cell(cell, train_set, test_set, vocab, embeddings, hyper, timing))
        except Exception as exc:  # a failed cell must not stop the grid
            log.warning("cell %s failed: %s", cell, exc)
            rows.append(AblationRow(cell, status=f"failed: {exc}"))
    return AblationReport(rows, timing)


# ---------------------------------------------------------------------------
# formatting

def _pct(v):
    return "-" if v is None else f"{100.0 * v:.2f}"


def _num(v, fmt="{:.2f}"):
    return "-" if v is None else fmt.format(v)


def format_records(records: list[dict], fmt: str = "table", percent_keys=()) -> str:
    if fmt == "jsonl":
        return "".join(json.dumps(r, sort_keys=False) + "\n" for r in records)
    if not records:
        return ""
    keys = list(records[0].keys())

    def cell(k, v):
        if k in percent_keys:
            return _pct(v)
        if isinstance(v, float):
            return _num(v, "{:.4f}")
        return "-" if v is None else str(v)

    if fmt == "tsv":
        lines = ["\t".join(keys)]
        lines += ["\t".join(repr(r[k]) if isinstance(r[k], float) else ("" if r[k] is None else str(r[k]))
                            for k in keys) for r in records]
        return "\n".join(lines) + "\n"
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    table = [[k for k in keys]] + [[cell(k, r[k]) for k in keys] for r in records]
    widths = [max(len(row[i]) for row in table) for i in range(len(keys))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in table) + "\n"


def format_ablation(report: AblationReport, fmt: str = "table") -> str:
    return format_records(report.records(), fmt, percent_keys={f"acc_{t}" for t in TASKS} | {"efficiency"})


def format_eval(report: EvalReport, fmt: str = "table") -> str:
    if fmt == "jsonl":
        lines = []
        for t, tr in report.tasks.items():
            rec = {"task": t, "acc": tr.acc, "n": tr.n, "classes": list(TASK_CLASSES[t]),
                   "share": tr.shares, "precision": tr.precision, "recall": tr.recall}
            if report.timing:
                rec["timing"] = report.timing
            lines.append(json.dumps(rec))
        return "\n".join(lines) + "\n"
    return format_records(list(report.rows()), fmt, percent_keys={"acc"})
