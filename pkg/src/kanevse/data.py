"""Charger telemetry rows and the CSV dataset format."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

FEATURES = ("shunt_voltage_V", "bus_voltage_V", "current_A", "power_W")
HEADER = ("timestamp",) + FEATURES + ("label",)
NORMAL, ATTACK = 0, 1


class DatasetError(ValueError):
    pass


class LabeledSample(NamedTuple):
    timestamp: int
    shunt_voltage: float
    bus_voltage: float
    current: float
    power: float
    label: int

    @property
    def features(self) -> tuple:
        return (self.shunt_voltage, self.bus_voltage, self.current, self.power)


@dataclass
class TelemetryDataset:
    """Column-stored 1 Hz samples. ``kinds`` holds the attack kind per row
    ("normal" for benign rows) when the generator knows it."""

    features: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray = None
    kinds: np.ndarray = None
    provenance: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float).reshape(-1, len(FEATURES))
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        n = len(self.labels)
        if len(self.features) != n:
            raise DatasetError(f"{len(self.features)} feature rows but {n} labels")
        if n and not np.isin(self.labels, (NORMAL, ATTACK)).all():
            raise DatasetError("labels must be 0 or 1")
        if self.timestamps is None:
            self.timestamps = np.arange(n, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64).ravel()
        if self.kinds is None:
            self.kinds = np.where(self.labels == ATTACK, "attack", "normal").astype(object)
        self.kinds = np.asarray(self.kinds, dtype=object).ravel()

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, idx) -> LabeledSample:
        f = self.features[idx]
        return LabeledSample(int(self.timestamps[idx]), *map(float, f), int(self.labels[idx]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def samples(self) -> list:
        return list(self)

    @classmethod
    def from_samples(cls, samples: Iterable[LabeledSample], provenance: str = "") -> "TelemetryDataset":
        rows = list(samples)
        return cls(
            np.array([s.features for s in rows], dtype=float).reshape(-1, 4),
            [s.label for s in rows],
            [s.timestamp for s in rows],
            provenance=provenance,
        )

    def subset(self, idx) -> "TelemetryDataset":
        idx = np.asarray(idx)
        return TelemetryDataset(
            self.features[idx], self.labels[idx], self.timestamps[idx], self.kinds[idx], self.provenance
        )

    def class_counts(self) -> tuple:
        n_attack = int(self.labels.sum())
        return len(self) - n_attack, n_attack


def concat(parts: list, provenance: str = "") -> TelemetryDataset:
    return TelemetryDataset(
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.timestamps for p in parts]),
        np.concatenate([p.kinds for p in parts]),
        provenance,
    )


def format_csv(ds: TelemetryDataset) -> str:
    out = io.StringIO()
    out.write(",".join(HEADER) + "\n")
    for t, f, y in zip(ds.timestamps.tolist(), ds.features.tolist(), ds.labels.tolist()):
        out.write(f"{t},{f[0]!r},{f[1]!r},{f[2]!r},{f[3]!r},{y}\n")
    return out.getvalue()


def parse_row(fields: list) -> LabeledSample:
    """One CSV row (already split) to a sample; raises ``DatasetError`` on bad content."""
    if len(fields) != len(HEADER):
        raise DatasetError(f"expected {len(HEADER)} fields, got {len(fields)}")
    try:
        t = int(fields[0])
        vals = [float(v) for v in fields[1:5]]
        label = int(fields[5])
    except ValueError as exc:
        raise DatasetError(str(exc)) from None
    if not all(math.isfinite(v) for v in vals):
        raise DatasetError("non-finite feature value")
    if label not in (NORMAL, ATTACK):
        raise DatasetError(f"label must be 0 or 1, got {label}")
    return LabeledSample(t, *vals, label)


def parse_csv(text: str, provenance: str = "") -> TelemetryDataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetError("empty dataset file")
    header = tuple(h.strip() for h in lines[0].split(","))
    if header != HEADER:
        raise DatasetError(f"bad header {','.join(header)!r}; expected {','.join(HEADER)!r}")
    rows, errors = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rows.append(parse_row(line.split(",")))
        except DatasetError as exc:
            errors.append(f"line {lineno}: {exc}")
    if errors:
        shown = "; ".join(errors[:10])
        more = f" (+{len(errors) - 10} more)" if len(errors) > 10 else ""
        raise DatasetError(f"{len(errors)} malformed rows: {shown}{more}")
    if not rows:
        raise DatasetError("dataset has no rows")
    return TelemetryDataset.from_samples(rows, provenance)


def read_csv(path) -> TelemetryDataset:
    with open(path, encoding="utf-8") as fh:
        return parse_csv(fh.read(), provenance=str(path))
