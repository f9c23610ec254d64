from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from ..logging_utils import get_logger

_LOGGER = get_logger(__name__)

TRACE_COLUMNS = ("iter", "objective", "fidelity", "penalty", "pos_violation", "mae", "elapsed_s")


class TraceFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    objective: float
    fidelity: float
    penalty: float
    pos_violation: float
    mae: Optional[float]
    elapsed_s: float


@dataclass
class SolverTrace:
    records: List[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if record.iteration != last.iteration + 1:
                raise ValueError(
                    f"Trace records must be consecutive, got iteration {record.iteration} after {last.iteration}"
                )
            if record.elapsed_s < last.elapsed_s:
                raise ValueError("Trace wall-clock must be non-decreasing")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: int) -> TraceRecord:
        return self.records[index]

    def objectives(self) -> np.ndarray:
        return np.array([record.objective for record in self.records], dtype=float)

    def elapsed(self) -> np.ndarray:
        return np.array([record.elapsed_s for record in self.records], dtype=float)

    @property
    def final_objective(self) -> float:
        return self.records[-1].objective if self.records else math.inf

    def to_csv(self, path: Path | str) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(TRACE_COLUMNS)
            for record in self.records:
                writer.writerow(
                    [
                        record.iteration,
                        repr(float(record.objective)),
                        repr(float(record.fidelity)),
                        repr(float(record.penalty)),
                        repr(float(record.pos_violation)),
                        "" if record.mae is None else repr(float(record.mae)),
                        repr(float(record.elapsed_s)),
                    ]
                )
        _LOGGER.debug("Wrote %d trace records to %s", len(self.records), target)
        return target

    @classmethod
    def from_csv(cls, path: Path | str) -> "SolverTrace":
        source = Path(path)
        if not source.exists():
            raise FileNotFoundError(f"Trace file not found: {source}")
        trace = cls()
        with source.open("r", encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None or tuple(column.strip() for column in header) != TRACE_COLUMNS:
                raise TraceFormatError(
                    f"{source}: line 1: expected header {','.join(TRACE_COLUMNS)}, got {header}"
                )
            for line_number, row in enumerate(reader, start=2):
                if len(row) != len(TRACE_COLUMNS):
                    raise TraceFormatError(
                        f"{source}: line {line_number}: expected {len(TRACE_COLUMNS)} fields, got {len(row)}"
                    )
                try:
                    record = TraceRecord(
                        iteration=int(row[0]),
                        objective=float(row[1]),
                        fidelity=float(row[2]),
                        penalty=float(row[3]),
                        pos_violation=float(row[4]),
                        mae=float(row[5]) if row[5].strip() else None,
                        elapsed_s=float(row[6]),
                    )
                    trace.append(record)
                except ValueError as exc:
                    raise TraceFormatError(f"{source}: line {line_number}: {exc}") from exc
        if not trace.records:
            raise TraceFormatError(f"{source}: trace has no data rows")
        return trace


__all__ = ["SolverTrace", "TRACE_COLUMNS", "TraceFormatError", "TraceRecord"]
