from __future__ import annotations

import math
import sys
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.recon.trace import TRACE_COLUMNS, SolverTrace, TraceFormatError, TraceRecord  # noqa: E402


def _record(iteration: int, objective: float, elapsed: float, mae: float | None = None) -> TraceRecord:
    return TraceRecord(
        iteration=iteration,
        objective=objective,
        fidelity=objective - 1.0,
        penalty=1.0,
        pos_violation=0.0,
        mae=mae,
        elapsed_s=elapsed,
    )


def _trace() -> SolverTrace:
    trace = SolverTrace()
    trace.append(_record(0, math.inf, 0.0))
    trace.append(_record(1, 12.5, 0.001, mae=0.25))
    trace.append(_record(2, 1.0 / 3.0, 0.003, mae=0.125))
    return trace


def test_csv_round_trip_keeps_infinities_and_missing_mae(tmp_path: Path) -> None:
    path = _trace().to_csv(tmp_path / "trace.csv")

    loaded = SolverTrace.from_csv(path)

    assert loaded.records == _trace().records
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert lines[1].split(",")[1] == "inf"
    assert lines[1].split(",")[5] == ""


def test_trace_accessors() -> None:
    trace = _trace()

    assert len(trace) == 3
    assert trace[-1].iteration == 2
    assert trace.final_objective == pytest.approx(1.0 / 3.0)
    assert list(trace.elapsed()) == [0.0, 0.001, 0.003]
    assert trace.objectives()[0] == math.inf


def test_append_requires_consecutive_iterations() -> None:
    trace = _trace()

    with pytest.raises(ValueError):
        trace.append(_record(4, 1.0, 0.01))


def test_append_requires_non_decreasing_time() -> None:
    trace = _trace()

    with pytest.raises(ValueError):
        trace.append(_record(3, 1.0, 0.002))


def test_empty_trace_has_infinite_final_objective() -> None:
    assert SolverTrace().final_objective == math.inf


def test_bad_header_is_reported_on_line_one(tmp_path: Path) -> None:
    path = tmp_path / "trace.csv"
    path.write_text("iteration,objective\n0,1.0\n", encoding="utf-8")

    with pytest.raises(TraceFormatError, match="line 1"):
        SolverTrace.from_csv(path)


def test_bad_field_is_reported_with_its_line(tmp_path: Path) -> None:
    path = tmp_path / "trace.csv"
    rows = [
        ",".join(TRACE_COLUMNS),
        "0,inf,inf,0.0,0.0,,0.0",
        "1,abc,1.0,0.0,0.0,,0.1",
    ]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")

    with pytest.raises(TraceFormatError, match="line 3"):
        SolverTrace.from_csv(path)


def test_missing_trace_file(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        SolverTrace.from_csv(tmp_path / "absent.csv")
