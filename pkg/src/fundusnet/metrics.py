"""Confusion matrix, accuracy / precision / sensitivity / F1, and report rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from fundusnet.data.manifest import HEALTHY, LABELS, MD


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary counts with macular degeneration as the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def swapped(self) -> "ConfusionMatrix":
        """The same matrix with healthy treated as the positive class."""
        return ConfusionMatrix(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp)

    @classmethod
    def from_predictions(cls, labels, predictions) -> "ConfusionMatrix":
        pos = LABELS.index(MD)
        tp = tn = fp = fn = 0
        for y, p in zip(labels, predictions, strict=True):
            if p == pos:
                tp, fp = (tp + 1, fp) if y == pos else (tp, fp + 1)
            else:
                fn, tn = (fn + 1, tn) if y == pos else (fn, tn + 1)
        return cls(tp, tn, fp, fn)

    def to_json(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class ClassScores:
    precision: float
    sensitivity: float
    f1: float

    def to_json(self) -> dict:
        return {"precision": self.precision, "sensitivity": self.sensitivity, "f1": self.f1}


@dataclass(frozen=True)
class MetricsReport:
    model: str
    train_ratio: float | None
    seed: int | None
    accuracy: float
    confusion: ConfusionMatrix
    per_class: dict[str, ClassScores] = field(default_factory=dict)
    train_accuracy: float | None = None

    def to_json(self) -> dict:
        out = {
            "model": self.model,
            "split": {"train_ratio": self.train_ratio, "seed": self.seed},
            "accuracy": self.accuracy,
            "confusion": self.confusion.to_json(),
            "per_class": {label: self.per_class[label].to_json() for label in LABELS},
        }
        if self.train_accuracy is not None:
            out["train_accuracy"] = self.train_accuracy
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        return cls(
            model=obj["model"],
            train_ratio=obj["split"]["train_ratio"],
            seed=obj["split"]["seed"],
            accuracy=obj["accuracy"],
            confusion=ConfusionMatrix(**obj["confusion"]),
            per_class={label: ClassScores(**obj["per_class"][label]) for label in LABELS},
            train_accuracy=obj.get("train_accuracy"),
        )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def class_scores(cm: ConfusionMatrix) -> ClassScores:
    """Scores for the positive class of ``cm``; zero denominators give 0."""
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    sensitivity = _ratio(cm.tp, cm.tp + cm.fn)
    denom = precision + sensitivity
    f1 = 2 * sensitivity * precision / denom if denom else 0.0
    return ClassScores(precision, sensitivity, f1)


def metrics_from_confusion(cm: ConfusionMatrix, model: str = "", train_ratio=None,
                           seed=None, train_accuracy=None) -> MetricsReport:
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")
    return MetricsReport(
        model=model,
        train_ratio=train_ratio,
        seed=seed,
        accuracy=(cm.tp + cm.tn) / cm.total,
        confusion=cm,
        per_class={MD: class_scores(cm), HEALTHY: class_scores(cm.swapped())},
        train_accuracy=train_accuracy,
    )


def _split_label(r: MetricsReport) -> str:
    if r.train_ratio is None:
        return "-"
    train = round(r.train_ratio * 100)
    return f"{train}%+{100 - train}%"


def render_table(reports: list[MetricsReport]) -> str:
    short = {HEALTHY: "healthy", MD: "md"}
    headers = ["model", "split", "accuracy"] + [
        f"{short[label]}_{metric}" for label in LABELS
        for metric in ("precision", "sensitivity", "f1")]
    rows = []
    for r in reports:
        row = [r.model, _split_label(r), f"{r.accuracy:.3f}"]
        for label in LABELS:
            s = r.per_class[label]
            row += [f"{s.precision:.3f}", f"{s.sensitivity:.3f}", f"{s.f1:.3f}"]
        rows.append(row)
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines) + "\n"


def report_render(reports: list[MetricsReport]) -> tuple[str, str]:
    """Aligned text table plus a JSON document, both in input order."""
    doc = json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True) + "\n"
    return render_table(reports), doc


def reports_from_json(text: str) -> list[MetricsReport]:
    obj = json.loads(text)
    if isinstance(obj, dict):
        obj = [obj]
    return [MetricsReport.from_json(x) for x in obj]
