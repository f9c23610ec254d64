from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.config import RunConfig  # noqa: E402
from src.preflight import resolve_deconv_inputs, run_preflight_checks  # noqa: E402
from src.recon.sim import save_counts  # noqa: E402


def _config(directory: Path) -> RunConfig:
    config = RunConfig()
    config.output.directory = str(directory)
    return config


def test_output_directory_is_created(tmp_path: Path) -> None:
    target = tmp_path / "nested" / "run"

    run_preflight_checks(_config(target), "simulate")

    assert target.is_dir()


def test_output_path_that_is_a_file_is_rejected(tmp_path: Path) -> None:
    blocker = tmp_path / "blocker"
    blocker.write_text("", encoding="utf-8")

    with pytest.raises(PermissionError):
        run_preflight_checks(_config(blocker), "simulate")


def test_non_power_of_two_shape_needs_the_identity_dictionary(tmp_path: Path) -> None:
    config = _config(tmp_path)
    config.simulation.shape = [24, 32]

    with pytest.raises(ValueError, match="power-of-two"):
        run_preflight_checks(config, "simulate")

    config.solver.dictionary = "identity"
    run_preflight_checks(config, "simulate")


def test_excess_depth_is_rejected(tmp_path: Path) -> None:
    config = _config(tmp_path)
    config.simulation.shape = [8, 8]
    config.solver.levels = 4

    with pytest.raises(ValueError, match="depth"):
        run_preflight_checks(config, "simulate")


def test_deconv_requires_counts_and_psf(tmp_path: Path) -> None:
    config = _config(tmp_path)

    with pytest.raises(FileNotFoundError, match="Counts"):
        run_preflight_checks(config, "deconv")

    save_counts(np.ones((8, 8), dtype=int), tmp_path / "counts.txt")
    with pytest.raises(FileNotFoundError, match="PSF"):
        run_preflight_checks(config, "deconv")

    config.inputs.psf = "gaussian:sigma=1.0,size=3"
    run_preflight_checks(config, "deconv")


def test_deconv_checks_the_counts_shape(tmp_path: Path) -> None:
    config = _config(tmp_path)
    config.inputs.psf = "delta"
    save_counts(np.ones((6, 8), dtype=int), tmp_path / "counts.txt")

    with pytest.raises(ValueError):
        run_preflight_checks(config, "deconv")


def test_resolve_deconv_inputs_defaults_to_the_output_directory(tmp_path: Path) -> None:
    config = _config(tmp_path)

    inputs = resolve_deconv_inputs(config)

    assert inputs.counts == tmp_path / "counts.txt"
    assert inputs.psf == tmp_path / "psf.txt"
    assert inputs.truth is None

    (tmp_path / "truth.txt").write_text("1 1\n1\n", encoding="utf-8")
    assert resolve_deconv_inputs(config).truth == tmp_path / "truth.txt"


def test_compare_needs_two_existing_traces(tmp_path: Path) -> None:
    config = _config(tmp_path)
    present = tmp_path / "a.csv"
    present.write_text("", encoding="utf-8")

    with pytest.raises(ValueError):
        run_preflight_checks(config, "compare", (present,))
    with pytest.raises(FileNotFoundError):
        run_preflight_checks(config, "compare", (present, tmp_path / "b.csv"))
    run_preflight_checks(config, "compare", (present, present))
