from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from .config import RunConfig
from .logging_utils import get_logger
from .preflight import resolve_deconv_inputs
from .recon.linops import make_convolution, make_dictionary
from .recon.objective import ProblemInstance
from .recon.sim import (
    PhantomSpec,
    load_counts,
    load_image,
    load_psf,
    make_phantom,
    observation_stats,
    sample_poisson,
    save_counts,
    save_image,
    save_psf,
)
from .recon.solvers import (
    PrimalConfig,
    PrimalDualConfig,
    Solution,
    solve_primal,
    solve_primal_dual,
)
from .recon.trace import SolverTrace

_LOGGER = get_logger(__name__)

GAMMA_FRACTION = 0.01
CROSSING_FRACTION = 0.01


@dataclass
class SimulationOutput:
    truth: Path
    psf: Path
    counts: Path
    stats: Dict[str, float]


@dataclass
class RunResult:
    solution: Solution
    trace: SolverTrace
    recon_path: Path
    trace_path: Path


@dataclass
class DeconvReport:
    gamma: float
    results: Dict[str, RunResult] = field(default_factory=dict)
    discrepancy: Optional[float] = None
    summary_path: Optional[Path] = None


@dataclass(frozen=True)
class Crossing:
    iteration: int
    elapsed_s: float


@dataclass
class CompareReport:
    final_a: float
    final_b: float
    crossing_a: Optional[Crossing]
    crossing_b: Optional[Crossing]

    def lines(self) -> List[str]:
        def describe(label: str, final: float, crossing: Optional[Crossing]) -> str:
            if crossing is None:
                return f"{label}: final objective {final!r}; no finite 1% crossing"
            return (
                f"{label}: final objective {final!r}; within 1% at iteration {crossing.iteration} "
                f"({crossing.elapsed_s:.6f}s)"
            )

        return [
            describe("trace_a", self.final_a, self.crossing_a),
            describe("trace_b", self.final_b, self.crossing_b),
        ]


def _phantom_spec(config: RunConfig) -> PhantomSpec:
    sim = config.simulation
    return PhantomSpec(
        kind=sim.phantom,
        shape=tuple(sim.shape),
        scale=sim.scale,
        count=sim.count,
        background=sim.background,
        blob_sigma=sim.blob_sigma,
        seed=sim.seed,
    )


def cmd_simulate(config: RunConfig) -> SimulationOutput:
    """Write ``truth.txt``, ``psf.txt`` and ``counts.txt`` for the configured phantom."""

    output_dir = config.output_dir
    phantom = make_phantom(_phantom_spec(config))
    blur = make_convolution(load_psf(config.simulation.psf), phantom.shape)
    # FFT round-off can leave -1e-16 on a zero background.
    intensity = np.maximum(blur.apply(phantom), 0.0)
    counts = sample_poisson(intensity, (config.simulation.seed + 1) % 2**64)

    output = SimulationOutput(
        truth=save_image(phantom, output_dir / "truth.txt"),
        psf=save_psf(blur.psf, output_dir / "psf.txt"),
        counts=save_counts(counts, output_dir / "counts.txt"),
        stats=observation_stats(counts),
    )
    _LOGGER.info(
        "Simulated %s phantom %s: %d total counts, max %d, %d zero pixels",
        config.simulation.phantom,
        phantom.shape,
        output.stats["total"],
        output.stats["max"],
        output.stats["zeros"],
    )
    return output


def build_instance(counts: np.ndarray, psf: np.ndarray, config: RunConfig) -> ProblemInstance:
    settings = config.solver
    gamma = settings.gamma
    if gamma is None:
        peak = float(np.max(counts))
        if peak <= 0:
            raise ValueError("All counts are zero; set solver.gamma explicitly")
        gamma = GAMMA_FRACTION * peak
        _LOGGER.info("Using gamma = %.6g (%.0f%% of the peak count)", gamma, 100 * GAMMA_FRACTION)
    dictionary, frame = make_dictionary(settings.dictionary, counts.shape, settings.levels)
    return ProblemInstance(
        counts=counts,
        blur=make_convolution(psf, counts.shape),
        dictionary=dictionary,
        frame=frame,
        gamma=gamma,
    )


def _solve(
    algorithm: str,
    inst: ProblemInstance,
    config: RunConfig,
    truth: Optional[np.ndarray],
) -> Tuple[Solution, SolverTrace]:
    settings = config.solver
    if algorithm == "primal":
        return solve_primal(
            inst,
            PrimalConfig(
                mu=settings.mu,
                theta=settings.theta,
                n_iter=settings.n_iter,
                early_stop=settings.early_stop,
                log_every=settings.log_every,
            ),
            truth,
        )
    return solve_primal_dual(
        inst,
        PrimalDualConfig(
            sigma=settings.sigma,
            tau=settings.tau,
            n_iter=settings.n_iter,
            early_stop=settings.early_stop,
            log_every=settings.log_every,
        ),
        truth,
    )


def _summary_entry(solution: Solution, trace: SolverTrace) -> Dict[str, object]:
    last = trace[-1]
    return {
        "iterations": solution.iterations,
        "final_objective": float(solution.final_objective),
        "mae": None if last.mae is None else float(last.mae),
        "pos_violation": float(last.pos_violation),
        "converged": bool(solution.converged),
        "criterion": solution.criterion,
    }


def cmd_deconv(config: RunConfig) -> DeconvReport:
    """Run the selected solver(s) and write reconstructions, traces and a summary."""

    output_dir = config.output_dir
    inputs = resolve_deconv_inputs(config)
    counts = load_counts(inputs.counts)
    psf = load_psf(inputs.psf)
    truth = None
    if inputs.truth is not None:
        truth = load_image(inputs.truth)
        if truth.shape != counts.shape:
            raise ValueError(f"Ground truth shape {truth.shape} does not match counts shape {counts.shape}")

    inst = build_instance(counts, psf, config)
    algorithms = ["primal", "primal-dual"] if config.solver.algorithm == "both" else [config.solver.algorithm]

    if len(algorithms) > 1 and config.solver.parallel:
        with ThreadPoolExecutor(max_workers=len(algorithms), thread_name_prefix="solver") as pool:
            futures = {name: pool.submit(_solve, name, inst, config, truth) for name in algorithms}
            outcomes = {name: future.result() for name, future in futures.items()}
    else:
        outcomes = {name: _solve(name, inst, config, truth) for name in algorithms}

    report = DeconvReport(gamma=inst.gamma)
    for name, (solution, trace) in outcomes.items():
        suffix = "" if len(algorithms) == 1 else "_" + name.replace("-", "_")
        report.results[name] = RunResult(
            solution=solution,
            trace=trace,
            recon_path=save_image(solution.x_hat, output_dir / f"recon{suffix}.txt"),
            trace_path=trace.to_csv(output_dir / f"trace{suffix}.csv"),
        )

    summary: Dict[str, object] = {
        "gamma": float(inst.gamma),
        "n_iter": config.solver.n_iter,
        "runs": {name: _summary_entry(result.solution, result.trace) for name, result in report.results.items()},
    }
    if len(algorithms) > 1:
        primal = report.results["primal"].solution.final_objective
        primal_dual = report.results["primal-dual"].solution.final_objective
        report.discrepancy = abs(primal - primal_dual) / max(abs(primal_dual), np.finfo(float).tiny)
        summary["relative_discrepancy"] = float(report.discrepancy)
        _LOGGER.info("Relative objective discrepancy between algorithms: %.3e", report.discrepancy)

    report.summary_path = output_dir / "summary.txt"
    with report.summary_path.open("w", encoding="utf-8") as handle:
        yaml.safe_dump(summary, handle, sort_keys=False)
    timing = {name: float(result.trace[-1].elapsed_s) for name, result in report.results.items()}
    with (output_dir / "timing.txt").open("w", encoding="utf-8") as handle:
        yaml.safe_dump({"elapsed_s": timing}, handle, sort_keys=False)
    return report


def _crossing(trace: SolverTrace) -> Optional[Crossing]:
    final = trace.final_objective
    if not math.isfinite(final):
        return None
    threshold = CROSSING_FRACTION * abs(final)
    for record in trace.records:
        if math.isfinite(record.objective) and abs(record.objective - final) <= threshold:
            return Crossing(record.iteration, record.elapsed_s)
    return None


def compare_traces(trace_a: SolverTrace, trace_b: SolverTrace) -> CompareReport:
    return CompareReport(
        final_a=trace_a.final_objective,
        final_b=trace_b.final_objective,
        crossing_a=_crossing(trace_a),
        crossing_b=_crossing(trace_b),
    )


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def _objective_at(trace: SolverTrace, elapsed: np.ndarray, stamp: float) -> Optional[float]:
    index = int(np.searchsorted(elapsed, stamp, side="right")) - 1
    return None if index < 0 else trace[index].objective


def cmd_compare(trace_a: Path | str, trace_b: Path | str, output_dir: Path | str) -> CompareReport:
    """Merge two traces on the iteration axis and on the wall-clock axis."""

    first = SolverTrace.from_csv(trace_a)
    second = SolverTrace.from_csv(trace_b)
    target = Path(output_dir)
    target.mkdir(parents=True, exist_ok=True)

    with (target / "compare_iter.csv").open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iter", "objective_a", "objective_b"])
        for iteration in range(max(len(first), len(second))):
            writer.writerow(
                [
                    iteration,
                    _cell(first[iteration].objective if iteration < len(first) else None),
                    _cell(second[iteration].objective if iteration < len(second) else None),
                ]
            )

    elapsed_a, elapsed_b = first.elapsed(), second.elapsed()
    with (target / "compare_time.csv").open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["elapsed_s", "objective_a", "objective_b"])
        for stamp in np.union1d(elapsed_a, elapsed_b):
            writer.writerow(
                [
                    repr(float(stamp)),
                    _cell(_objective_at(first, elapsed_a, stamp)),
                    _cell(_objective_at(second, elapsed_b, stamp)),
                ]
            )

    report = compare_traces(first, second)
    (target / "compare.txt").write_text("\n".join(report.lines()) + "\n", encoding="utf-8")
    for line in report.lines():
        _LOGGER.info(line)
    return report


__all__ = [
    "CompareReport",
    "Crossing",
    "DeconvReport",
    "RunResult",
    "SimulationOutput",
    "build_instance",
    "cmd_compare",
    "cmd_deconv",
    "cmd_simulate",
    "compare_traces",
]
