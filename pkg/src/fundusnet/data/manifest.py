"""Labeled image inventories and the deterministic class balancing / splitting rules."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

from fundusnet.rng import Rng

HEALTHY = "healthy"
MD = "macular_degeneration"
LABELS = (HEALTHY, MD)  # list position is the class index; MD is the positive class


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    path: str
    label: str

    @property
    def class_index(self) -> int:
        return LABELS.index(self.label)


@dataclass(frozen=True)
class Manifest:
    records: tuple[Record, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if r.label not in LABELS:
                raise ManifestError(f"unknown label {r.label!r} for {r.path!r}")
            if r.path in seen:
                raise ManifestError(f"duplicate path {r.path!r}")
            seen.add(r.path)

    def __len__(self):
        return len(self.records)

    def by_class(self) -> dict[str, list[Record]]:
        out: dict[str, list[Record]] = {label: [] for label in LABELS}
        for r in self.records:
            out[r.label].append(r)
        return out

    def counts(self) -> dict[str, int]:
        return {label: len(rs) for label, rs in self.by_class().items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["path", "label"])
        for r in self.records:
            writer.writerow([r.path, r.label])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Manifest":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["path", "label"]:
            raise ManifestError("manifest must start with the header 'path,label'")
        records = []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ManifestError(f"line {lineno}: expected 2 fields, got {len(row)}")
            records.append(Record(row[0], row[1]))
        return cls(tuple(records))


def load_manifest(path) -> Manifest:
    return Manifest.from_csv(Path(path).read_text(encoding="utf-8"))


def balance_downsample(manifest: Manifest, rng: Rng) -> Manifest:
    """Subsample the majority class, without replacement, to the minority count.

    The majority's records are shuffled (Fisher-Yates) and the first ``k``
    kept; survivors keep their original manifest order.
    """
    groups = manifest.by_class()
    for label, rs in groups.items():
        if not rs:
            raise ManifestError(f"class {label!r} has no records")
    k = min(len(rs) for rs in groups.values())
    keep = set()
    for label in LABELS:
        rs = groups[label]
        chosen = rng.shuffle(rs)[:k] if len(rs) > k else rs
        keep.update(r.path for r in chosen)
    return Manifest(tuple(r for r in manifest.records if r.path in keep))


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    train_ratio: float
    train: Manifest
    test: Manifest


def train_count(n: int, ratio: float) -> int:
    """ceil(n * ratio), guarded against float noise, leaving at least one test record."""
    return min(math.ceil(round(n * ratio, 9)), n - 1)


def stratified_split(manifest: Manifest, train_ratio: float, seed: int) -> SplitSpec:
    """Per class (healthy first, then MD, one shared stream): shuffle, then take
    ceil(n * ratio) records for training and the rest for testing."""
    if not 0.0 < train_ratio < 1.0:
        raise ValueError(f"train ratio must lie in the open interval (0, 1), got {train_ratio}")
    rng = Rng(seed)
    train_paths = set()
    for label in LABELS:
        rs = manifest.by_class()[label]
        if len(rs) < 2:
            raise ManifestError(f"class {label!r} needs at least 2 records to split, has {len(rs)}")
        shuffled = rng.shuffle(rs)
        train_paths.update(r.path for r in shuffled[:train_count(len(rs), train_ratio)])
    train = tuple(r for r in manifest.records if r.path in train_paths)
    test = tuple(r for r in manifest.records if r.path not in train_paths)
    return SplitSpec(seed, train_ratio, Manifest(train), Manifest(test))
