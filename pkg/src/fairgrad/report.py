"""Test-set evaluation and deterministic JSON/CSV artifacts.

Reals are written with 17 significant digits so every file parses back to
the exact same doubles.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .fairness import FairnessNotion, direct_fairness, group_index
from .model import Parameters, predict


@dataclass(frozen=True, eq=False)
class FairnessReport:
    notion: str
    accuracy: float
    fairness: np.ndarray
    counts: np.ndarray

    @property
    def mean_abs(self) -> float:
        return float(np.mean(np.abs(self.fairness)))

    @property
    def max_fairness(self) -> float:
        """Signed level of the most advantaged group."""
        return float(np.max(self.fairness))

    @property
    def min_fairness(self) -> float:
        """Signed level of the most disadvantaged group."""
        return float(np.min(self.fairness))

    def to_dict(self) -> dict:
        return {"notion": self.notion, "accuracy": float(self.accuracy),
                "mean_abs": self.mean_abs, "max_F": self.max_fairness, "min_F": self.min_fairness,
                "fairness": [float(v) for v in self.fairness],
                "counts": [int(c) for c in self.counts]}

    @classmethod
    def from_dict(cls, doc: dict) -> "FairnessReport":
        return cls(doc["notion"], float(doc["accuracy"]), np.array(doc["fairness"], dtype=float),
                   np.array(doc["counts"], dtype=np.int64))


def evaluate(params: Parameters, ds: Dataset, notion: FairnessNotion) -> FairnessReport:
    """Accuracy and definition-based fairness levels of ``params`` on ``ds``."""
    _, pred = predict(params, ds.features)
    F = direct_fairness(pred, ds.labels, ds.sensitive, notion,
                        label_count=ds.label_count, sensitive_count=ds.sensitive_count)
    groups = group_index(ds.labels, ds.sensitive, notion, ds.sensitive_count)
    counts = np.bincount(groups, minlength=len(F))
    return FairnessReport(notion.kind.value, float(np.mean(pred == ds.labels)), F, counts)


def fmt(x) -> str:
    """17-significant-digit text for a real; integers and non-finite values verbatim."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    text = format(x, ".17g")
    if "." not in text and "e" not in text and "n" not in text:
        text += ".0"
    return text


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with keys in insertion order and reals via :func:`fmt`."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_, int, np.integer, float, np.floating)):
        return fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def atomic_write(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_report(report: FairnessReport, path) -> None:
    atomic_write(path, dumps(report.to_dict()) + "\n")


def read_report(path) -> FairnessReport:
    return FairnessReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def history_header(K: int) -> list[str]:
    return (["epoch", "val_accuracy", "mean_abs_fairness", "max_F", "min_F"]
            + [f"lambda_{k}" for k in range(K)] + [f"delta_{k}" for k in range(K)]
            + [f"w_{k}" for k in range(K)])


def history_rows(history) -> list[list]:
    rows = []
    for rec in history:
        F = rec.val_fairness
        rows.append([rec.epoch, rec.val_accuracy, rec.mean_abs, float(F.max()), float(F.min()),
                     *rec.lam, *rec.delta, *rec.weights])
    return rows


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def write_history(history, path) -> None:
    K = len(history[0].weights) if history else 0
    atomic_write(path, to_csv(history_header(K), history_rows(history)))


def read_csv(path) -> list[dict]:
    """Rows as dicts; numeric-looking cells become int or float."""
    def conv(cell: str):
        try:
            return int(cell)
        except ValueError:
            pass
        try:
            return float(cell)
        except ValueError:
            return cell
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return [{k: conv(v) for k, v in row.items()} for row in csv.DictReader(fh)]
