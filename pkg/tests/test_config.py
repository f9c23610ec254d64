from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any

import pytest
import yaml

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.config import RunConfig, apply_overrides, dump_config, load_config  # noqa: E402


def _write_config(tmp_path: Path, content: Any) -> Path:
    config_path = tmp_path / "config.yaml"
    config_path.write_text(yaml.safe_dump(content), encoding="utf-8")
    return config_path


def _namespace(**overrides: Any) -> argparse.Namespace:
    values = {
        "command": "deconv",
        "phantom": None,
        "psf": None,
        "gamma": None,
        "alg": None,
        "iters": None,
        "mu": None,
        "sigma": None,
        "tau": None,
        "seed": None,
        "out": None,
    }
    values.update(overrides)
    return argparse.Namespace(**values)


def test_empty_file_gives_defaults(tmp_path: Path) -> None:
    config = load_config(_write_config(tmp_path, {}))

    assert config.simulation.shape == [32, 32]
    assert config.simulation.phantom == "point-sources"
    assert config.simulation.psf == "gaussian:sigma=1.5,size=7"
    assert config.simulation.seed == 42
    assert config.solver.n_iter == 500
    assert config.solver.gamma is None
    assert config.solver.theta == 1.8
    assert config.output_dir == tmp_path / "runs" / "default"


def test_config_round_trip(tmp_path: Path) -> None:
    config = load_config(
        _write_config(
            tmp_path,
            {
                "command": "deconv",
                "simulation": {"phantom": "gaussian-blobs", "shape": [16, 32], "seed": 7},
                "solver": {"algorithm": "both", "gamma": 0.25, "sigma": 0.5, "parallel": True},
                "inputs": {"counts": "data/counts.txt"},
                "logging": {"level": "debug", "log_file": "logs/run.log"},
            },
        )
    )

    dumped = dump_config(config, tmp_path / "echo" / "config.yaml")

    assert load_config(dumped) == config
    assert config.inputs.counts == str(tmp_path / "data" / "counts.txt")
    assert config.logging.level == "DEBUG"


@pytest.mark.parametrize(
    ("content", "error"),
    [
        ({"solver": {"gamma": 0}}, ValueError),
        ({"solver": {"n_iter": 0}}, ValueError),
        ({"solver": {"algorithm": "admm"}}, ValueError),
        ({"solver": {"theta": 2.0}}, ValueError),
        ({"solver": {"dictionary": "db4"}}, ValueError),
        ({"simulation": {"phantom": "stars"}}, ValueError),
        ({"simulation": {"shape": "32x32"}}, TypeError),
        ({"simulation": {"scale": "bright"}}, TypeError),
        ({"solver": {"parallel": "yes"}}, TypeError),
        ({"solver": {"unknown": 1}}, ValueError),
        ({"plots": {}}, ValueError),
        ({"solver": []}, TypeError),
    ],
)
def test_invalid_fields_are_rejected(tmp_path: Path, content: Any, error: type) -> None:
    with pytest.raises(error):
        load_config(_write_config(tmp_path, content))


def test_missing_file_is_reported(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.yaml")


def test_overrides_merge_command_line_flags() -> None:
    merged = apply_overrides(
        RunConfig(),
        _namespace(gamma=0.5, alg="both", iters=50, out=Path("/tmp/run"), psf="box:size=3"),
    )

    assert merged.solver.gamma == 0.5
    assert merged.solver.algorithm == "both"
    assert merged.solver.n_iter == 50
    assert merged.output.directory == "/tmp/run"
    assert merged.inputs.psf == "box:size=3"
    assert merged.simulation.psf == "gaussian:sigma=1.5,size=7"


def test_psf_flag_sets_the_simulated_blur_for_simulate() -> None:
    merged = apply_overrides(RunConfig(), _namespace(command="simulate", psf="delta"))

    assert merged.simulation.psf == "delta"
    assert merged.inputs.psf is None


def test_overrides_do_not_mutate_the_base_config() -> None:
    base = RunConfig()

    apply_overrides(base, _namespace(iters=7))

    assert base.solver.n_iter == 500


def test_overrides_are_validated() -> None:
    with pytest.raises(ValueError):
        apply_overrides(RunConfig(), _namespace(gamma=0.0))
