from __future__ import annotations

import argparse
import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml

ALGORITHMS = ("primal", "primal-dual", "both")
PHANTOM_KINDS = ("constant", "point-sources", "gaussian-blobs")
DICTIONARY_KINDS = ("orthonormal-haar", "undecimated-haar", "identity")
COMMANDS = ("simulate", "deconv", "compare")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass
class SimulationConfig:
    phantom: str = "point-sources"
    shape: List[int] = field(default_factory=lambda: [32, 32])
    scale: float = 30.0
    count: int = 8
    background: float = 1.0
    blob_sigma: float = 2.0
    psf: str = "gaussian:sigma=1.5,size=7"
    seed: int = 42


@dataclass
class SolverSettings:
    algorithm: str = "primal-dual"
    gamma: Optional[float] = None
    n_iter: int = 500
    mu: float = 1.0
    theta: float = 1.8
    sigma: Optional[float] = None
    tau: Optional[float] = None
    dictionary: str = "orthonormal-haar"
    levels: Optional[int] = None
    early_stop: bool = False
    parallel: bool = False
    log_every: int = 100


@dataclass
class InputConfig:
    counts: Optional[str] = None
    psf: Optional[str] = None
    truth: Optional[str] = None


@dataclass
class OutputConfig:
    directory: str = "runs/default"


@dataclass
class LoggingConfig:
    level: str = "INFO"
    log_file: Optional[str] = None
    max_bytes: int = 1_048_576
    backup_count: int = 5


@dataclass
class RunConfig:
    command: Optional[str] = None
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    solver: SolverSettings = field(default_factory=SolverSettings)
    inputs: InputConfig = field(default_factory=InputConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    _config_dir: str = field(init=False, repr=False, compare=False, default="")

    @property
    def config_dir(self) -> Path:
        config_dir = self._config_dir or "."
        return Path(config_dir)

    @property
    def output_dir(self) -> Path:
        return Path(self.output.directory)

    def resolve_paths(self) -> None:
        output_dir = Path(self.output.directory)
        if not output_dir.is_absolute():
            self.output.directory = str(self.config_dir / output_dir)
        for name in ("counts", "truth"):
            value = getattr(self.inputs, name)
            if value and not Path(value).is_absolute():
                setattr(self.inputs, name, str(self.config_dir / value))
        if self.inputs.psf and (self.config_dir / self.inputs.psf).is_file():
            self.inputs.psf = str(self.config_dir / self.inputs.psf)
        if (self.config_dir / self.simulation.psf).is_file():
            self.simulation.psf = str(self.config_dir / self.simulation.psf)
        if self.logging.log_file:
            log_file = Path(self.logging.log_file)
            if not log_file.is_absolute():
                self.logging.log_file = str(self.config_dir / log_file)

    def validate(self) -> None:
        sim = self.simulation
        if self.command is not None and self.command not in COMMANDS:
            raise ValueError(f"command must be one of {', '.join(COMMANDS)}, got {self.command!r}")
        if sim.phantom not in PHANTOM_KINDS:
            raise ValueError(
                f"simulation.phantom must be one of {', '.join(PHANTOM_KINDS)}, got {sim.phantom!r}"
            )
        if len(sim.shape) != 2 or any(side <= 0 for side in sim.shape):
            raise ValueError(f"simulation.shape must be two positive integers, got {sim.shape}")
        if sim.scale <= 0:
            raise ValueError("simulation.scale must be greater than zero")
        if sim.count <= 0:
            raise ValueError("simulation.count must be greater than zero")
        if sim.background < 0:
            raise ValueError("simulation.background must not be negative")
        if sim.blob_sigma <= 0:
            raise ValueError("simulation.blob_sigma must be greater than zero")
        if not sim.psf.strip():
            raise ValueError("simulation.psf must not be empty")
        if not 0 <= sim.seed < 2**64:
            raise ValueError("simulation.seed must be a 64-bit unsigned integer")

        solver = self.solver
        if solver.algorithm not in ALGORITHMS:
            raise ValueError(
                f"solver.algorithm must be one of {', '.join(ALGORITHMS)}, got {solver.algorithm!r}"
            )
        if solver.gamma is not None and solver.gamma <= 0:
            raise ValueError("solver.gamma must be greater than zero")
        if solver.n_iter <= 0:
            raise ValueError("solver.n_iter must be greater than zero")
        if solver.mu <= 0:
            raise ValueError("solver.mu must be greater than zero")
        if not 0 < solver.theta < 2:
            raise ValueError("solver.theta must lie strictly between 0 and 2")
        for name in ("sigma", "tau"):
            value = getattr(solver, name)
            if value is not None and value <= 0:
                raise ValueError(f"solver.{name} must be greater than zero")
        if solver.dictionary not in DICTIONARY_KINDS:
            raise ValueError(
                f"solver.dictionary must be one of {', '.join(DICTIONARY_KINDS)}, got {solver.dictionary!r}"
            )
        if solver.levels is not None and solver.levels <= 0:
            raise ValueError("solver.levels must be greater than zero")
        if solver.log_every < 0:
            raise ValueError("solver.log_every must not be negative")

        if not self.output.directory.strip():
            raise ValueError("output.directory must not be empty")
        if self.logging.level.upper() not in LOG_LEVELS:
            raise ValueError(
                f"logging.level must be one of {', '.join(LOG_LEVELS)}, got {self.logging.level!r}"
            )
        if self.logging.max_bytes < 0 or self.logging.backup_count < 0:
            raise ValueError("logging.max_bytes and logging.backup_count must not be negative")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("_config_dir", None)
        return data


def _section(raw: Mapping[str, Any], name: str) -> Dict[str, Any]:
    section = raw.get(name)
    if section is None:
        return {}
    if not isinstance(section, Mapping):
        raise TypeError(f"{name} must be a mapping, got {type(section).__name__}")
    return dict(section)


def _check_keys(section: Mapping[str, Any], name: str, allowed: Any) -> None:
    known = {item.name for item in fields(allowed) if not item.name.startswith("_")}
    unknown = sorted(set(section) - known)
    if unknown:
        raise ValueError(f"Unknown keys in {name}: {', '.join(unknown)}")


def _number(value: Any, key: str, kind: type) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"{key} must be a number, got {type(value).__name__}")
    if kind is int:
        if float(value) != int(value):
            raise ValueError(f"{key} must be an integer, got {value}")
        return int(value)
    return float(value)


def _optional(value: Any, key: str, kind: type) -> Any:
    return None if value is None else _number(value, key, kind)


def _flag(value: Any, key: str) -> bool:
    if not isinstance(value, bool):
        raise TypeError(f"{key} must be true or false, got {value!r}")
    return value


def _text(value: Any, key: str) -> str:
    if not isinstance(value, str):
        raise TypeError(f"{key} must be a string, got {type(value).__name__}")
    return value.strip()


def _optional_text(value: Any, key: str) -> Optional[str]:
    return None if value is None else _text(value, key)


def _shape(value: Any) -> List[int]:
    if isinstance(value, (str, bytes)) or not isinstance(value, (list, tuple)):
        raise TypeError("simulation.shape must be a sequence of two integers")
    return [_number(side, f"simulation.shape[{index}]", int) for index, side in enumerate(value)]


def config_from_dict(raw: Mapping[str, Any]) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise TypeError(f"Configuration root must be a mapping, got {type(raw).__name__}")
    unknown = sorted(set(raw) - {"command", "simulation", "solver", "inputs", "output", "logging"})
    if unknown:
        raise ValueError(f"Unknown configuration sections: {', '.join(unknown)}")

    sim_cfg = _section(raw, "simulation")
    solver_cfg = _section(raw, "solver")
    inputs_cfg = _section(raw, "inputs")
    output_cfg = _section(raw, "output")
    logging_cfg = _section(raw, "logging")
    for section, name, kind in (
        (sim_cfg, "simulation", SimulationConfig),
        (solver_cfg, "solver", SolverSettings),
        (inputs_cfg, "inputs", InputConfig),
        (output_cfg, "output", OutputConfig),
        (logging_cfg, "logging", LoggingConfig),
    ):
        _check_keys(section, name, kind)

    sim_defaults = SimulationConfig()
    solver_defaults = SolverSettings()
    logging_defaults = LoggingConfig()

    run_config = RunConfig(
        command=_optional_text(raw.get("command"), "command"),
        simulation=SimulationConfig(
            phantom=_text(sim_cfg.get("phantom", sim_defaults.phantom), "simulation.phantom"),
            shape=_shape(sim_cfg.get("shape", sim_defaults.shape)),
            scale=_number(sim_cfg.get("scale", sim_defaults.scale), "simulation.scale", float),
            count=_number(sim_cfg.get("count", sim_defaults.count), "simulation.count", int),
            background=_number(
                sim_cfg.get("background", sim_defaults.background), "simulation.background", float
            ),
            blob_sigma=_number(
                sim_cfg.get("blob_sigma", sim_defaults.blob_sigma), "simulation.blob_sigma", float
            ),
            psf=_text(sim_cfg.get("psf", sim_defaults.psf), "simulation.psf"),
            seed=_number(sim_cfg.get("seed", sim_defaults.seed), "simulation.seed", int),
        ),
        solver=SolverSettings(
            algorithm=_text(solver_cfg.get("algorithm", solver_defaults.algorithm), "solver.algorithm"),
            gamma=_optional(solver_cfg.get("gamma"), "solver.gamma", float),
            n_iter=_number(solver_cfg.get("n_iter", solver_defaults.n_iter), "solver.n_iter", int),
            mu=_number(solver_cfg.get("mu", solver_defaults.mu), "solver.mu", float),
            theta=_number(solver_cfg.get("theta", solver_defaults.theta), "solver.theta", float),
            sigma=_optional(solver_cfg.get("sigma"), "solver.sigma", float),
            tau=_optional(solver_cfg.get("tau"), "solver.tau", float),
            dictionary=_text(
                solver_cfg.get("dictionary", solver_defaults.dictionary), "solver.dictionary"
            ),
            levels=_optional(solver_cfg.get("levels"), "solver.levels", int),
            early_stop=_flag(solver_cfg.get("early_stop", solver_defaults.early_stop), "solver.early_stop"),
            parallel=_flag(solver_cfg.get("parallel", solver_defaults.parallel), "solver.parallel"),
            log_every=_number(
                solver_cfg.get("log_every", solver_defaults.log_every), "solver.log_every", int
            ),
        ),
        inputs=InputConfig(
            counts=_optional_text(inputs_cfg.get("counts"), "inputs.counts"),
            psf=_optional_text(inputs_cfg.get("psf"), "inputs.psf"),
            truth=_optional_text(inputs_cfg.get("truth"), "inputs.truth"),
        ),
        output=OutputConfig(
            directory=_text(output_cfg.get("directory", OutputConfig().directory), "output.directory"),
        ),
        logging=LoggingConfig(
            level=_text(logging_cfg.get("level", logging_defaults.level), "logging.level").upper(),
            log_file=_optional_text(logging_cfg.get("log_file"), "logging.log_file"),
            max_bytes=_number(
                logging_cfg.get("max_bytes", logging_defaults.max_bytes), "logging.max_bytes", int
            ),
            backup_count=_number(
                logging_cfg.get("backup_count", logging_defaults.backup_count), "logging.backup_count", int
            ),
        ),
    )
    run_config.validate()
    return run_config


def load_config(path: Path | str) -> RunConfig:
    config_path = Path(path).expanduser().resolve()
    if not config_path.exists():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    with config_path.open("r", encoding="utf-8") as handle:
        raw_config = yaml.safe_load(handle) or {}

    run_config = config_from_dict(raw_config)
    run_config._config_dir = str(config_path.parent)
    run_config.resolve_paths()
    return run_config


def dump_config(config: RunConfig, path: Path | str) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8") as handle:
        yaml.safe_dump(config.to_dict(), handle, sort_keys=False)
    return target


_FLAG_TARGETS = {
    "phantom": ("simulation", "phantom"),
    "gamma": ("solver", "gamma"),
    "alg": ("solver", "algorithm"),
    "iters": ("solver", "n_iter"),
    "mu": ("solver", "mu"),
    "sigma": ("solver", "sigma"),
    "tau": ("solver", "tau"),
    "seed": ("simulation", "seed"),
    "out": ("output", "directory"),
    "counts": ("inputs", "counts"),
    "truth": ("inputs", "truth"),
    "dictionary": ("solver", "dictionary"),
    "levels": ("solver", "levels"),
    "parallel": ("solver", "parallel"),
    "early_stop": ("solver", "early_stop"),
}


def apply_overrides(config: RunConfig, namespace: argparse.Namespace) -> RunConfig:
    """Return a copy of ``config`` with every command-line flag that was given applied.

    ``--psf`` is the simulated blur spec for ``simulate`` and the blur input
    (file or spec) for ``deconv``.
    """

    merged = copy.deepcopy(config)
    command = getattr(namespace, "command", None)
    if command is not None:
        merged.command = command
    for flag, (section, key) in _FLAG_TARGETS.items():
        value = getattr(namespace, flag, None)
        if value is None:
            continue
        if isinstance(value, Path):
            value = str(value)
        setattr(getattr(merged, section), key, value)
    psf = getattr(namespace, "psf", None)
    if psf is not None:
        if merged.command == "deconv":
            merged.inputs.psf = str(psf)
        else:
            merged.simulation.psf = str(psf)
    merged.validate()
    return merged


__all__ = [
    "ALGORITHMS",
    "DICTIONARY_KINDS",
    "InputConfig",
    "LoggingConfig",
    "OutputConfig",
    "PHANTOM_KINDS",
    "RunConfig",
    "SimulationConfig",
    "SolverSettings",
    "apply_overrides",
    "config_from_dict",
    "dump_config",
    "load_config",
]
