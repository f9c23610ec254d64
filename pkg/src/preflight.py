from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

from .config import RunConfig
from .logging_utils import get_logger
from .recon.sim import load_counts

_LOGGER = get_logger(__name__)


@dataclass(frozen=True)
class DeconvInputs:
    counts: Path
    psf: Union[Path, str]
    truth: Optional[Path]


def resolve_deconv_inputs(config: RunConfig) -> DeconvInputs:
    """Explicit input paths win; otherwise the files written by ``simulate`` in the output directory."""

    output_dir = config.output_dir
    counts = Path(config.inputs.counts) if config.inputs.counts else output_dir / "counts.txt"
    if config.inputs.psf:
        psf: Union[Path, str] = config.inputs.psf
    else:
        psf = output_dir / "psf.txt"
    if config.inputs.truth:
        truth: Optional[Path] = Path(config.inputs.truth)
    else:
        default_truth = output_dir / "truth.txt"
        truth = default_truth if default_truth.exists() else None
    return DeconvInputs(counts=counts, psf=psf, truth=truth)


def _ensure_output_writable(directory: Path) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PermissionError(f"Output directory {directory} cannot be created: {exc}") from exc
    if not directory.is_dir():
        raise PermissionError(f"Output path {directory} exists and is not a directory")
    if not os.access(directory, os.W_OK | os.X_OK):
        raise PermissionError(f"Output directory {directory} is not writable")
    _LOGGER.debug("Output directory %s is writable", directory)


def _ensure_exists(path: Path, what: str) -> None:
    if not path.is_file():
        raise FileNotFoundError(f"{what} not found at {path}. Run 'simulate' first or pass the file explicitly.")


def _ensure_dictionary_fits(shape: Sequence[int], dictionary: str, levels: Optional[int]) -> None:
    if dictionary == "identity":
        return
    rows, cols = (int(side) for side in shape)
    for side in (rows, cols):
        if side <= 0 or side & (side - 1):
            raise ValueError(
                f"Dictionary {dictionary} needs power-of-two image sides, got {rows}x{cols}"
            )
    max_levels = int(math.log2(min(rows, cols)))
    if levels is not None and levels > max_levels:
        raise ValueError(
            f"Dictionary depth {levels} exceeds the maximum of {max_levels} for a {rows}x{cols} image"
        )


def run_preflight_checks(config: RunConfig, command: str, traces: Tuple[Path, ...] = ()) -> None:
    """Raise early errors for unusable inputs or outputs before any numerical work."""

    _ensure_output_writable(config.output_dir)

    if command == "simulate":
        _ensure_dictionary_fits(config.simulation.shape, config.solver.dictionary, config.solver.levels)
        return

    if command == "deconv":
        inputs = resolve_deconv_inputs(config)
        _ensure_exists(inputs.counts, "Counts file")
        if isinstance(inputs.psf, Path):
            _ensure_exists(inputs.psf, "PSF file")
        if config.inputs.truth:
            _ensure_exists(Path(config.inputs.truth), "Ground-truth file")
        counts = load_counts(inputs.counts)
        _ensure_dictionary_fits(counts.shape, config.solver.dictionary, config.solver.levels)
        return

    if command == "compare":
        if len(traces) != 2:
            raise ValueError(f"compare needs exactly two trace files, got {len(traces)}")
        for trace in traces:
            _ensure_exists(Path(trace), "Trace file")
        return

    raise ValueError(f"Unknown command {command!r}")


__all__ = ["DeconvInputs", "resolve_deconv_inputs", "run_preflight_checks"]
