from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..logging_utils import get_logger
from .linops import BlockStackOperator, CompositionOperator, ConvolutionOperator, estimate_spectral_norm
from .objective import ProblemInstance, evaluate_terms
from .prox import (
    ProductPoint,
    project_ker_L1,
    project_ker_L2,
    project_nonneg,
    prox_penalty,
    prox_poisson,
)
from .trace import SolverTrace, TraceRecord

_LOGGER = get_logger(__name__)

_STALL_WINDOW = 50
_STALL_TOL = 1e-10
_CONVERGED_TOL = 1e-6
_STEP_SAFETY = 0.95


class Algorithm(str, Enum):
    PRIMAL = "primal"
    PRIMAL_DUAL = "primal-dual"


class StepSizeError(ValueError):
    def __init__(self, sigma: float, tau: float, zeta: float, suggestion: Tuple[float, float]) -> None:
        super().__init__(
            f"Step sizes violate sigma*tau*zeta < 1: sigma={sigma:.6g}, tau={tau:.6g}, zeta={zeta:.6g} "
            f"(product {sigma * tau * zeta:.6g}); try sigma={suggestion[0]:.6g}, tau={suggestion[1]:.6g}"
        )
        self.sigma = sigma
        self.tau = tau
        self.zeta = zeta
        self.suggestion = suggestion


class SolverDivergedError(RuntimeError):
    def __init__(self, algorithm: Algorithm, iteration: int) -> None:
        super().__init__(f"{algorithm.value} iterate became non-finite at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class PrimalConfig:
    mu: float = 1.0
    theta: Union[float, Sequence[float]] = 1.8
    n_iter: int = 500
    theta_min: float = 1e-3
    early_stop: bool = False
    log_every: int = 100

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ValueError(f"Proximal scale mu must be positive, got {self.mu}")
        if self.n_iter <= 0:
            raise ValueError(f"n_iter must be positive, got {self.n_iter}")
        if not 0 < self.theta_min < 1:
            raise ValueError(f"theta_min must lie in (0, 1), got {self.theta_min}")
        if isinstance(self.theta, (int, float)):
            schedule: Sequence[float] = [float(self.theta)]
        else:
            schedule = [float(value) for value in self.theta]
            if len(schedule) < self.n_iter:
                raise ValueError(
                    f"Relaxation schedule has {len(schedule)} entries, need at least n_iter={self.n_iter}"
                )
            object.__setattr__(self, "theta", tuple(schedule))
        for index, value in enumerate(schedule):
            if not self.theta_min <= value <= 2.0 - self.theta_min:
                raise ValueError(
                    f"Relaxation theta[{index}]={value} must lie in [{self.theta_min}, {2.0 - self.theta_min}] inside (0, 2)"
                )

    def theta_at(self, t: int) -> float:
        if isinstance(self.theta, tuple):
            return self.theta[t]
        return float(self.theta)


@dataclass(frozen=True)
class PrimalDualConfig:
    sigma: Optional[float] = None
    tau: Optional[float] = None
    n_iter: int = 500
    zeta: Optional[float] = None
    norm_tol: float = 1e-6
    early_stop: bool = False
    log_every: int = 100

    def __post_init__(self) -> None:
        for name in ("sigma", "tau", "zeta"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.n_iter <= 0:
            raise ValueError(f"n_iter must be positive, got {self.n_iter}")
        if not self.norm_tol > 0:
            raise ValueError(f"norm_tol must be positive, got {self.norm_tol}")


@dataclass
class PrimalDualState:
    alpha: np.ndarray
    alpha_bar: np.ndarray
    xi: np.ndarray
    eta: np.ndarray

    @classmethod
    def zeros(cls, inst: ProblemInstance) -> "PrimalDualState":
        return cls(
            alpha=np.zeros(inst.coeff_shape),
            alpha_bar=np.zeros(inst.coeff_shape),
            xi=np.zeros(inst.blur.output_shape),
            eta=np.zeros(inst.image_shape),
        )

    def copy(self) -> "PrimalDualState":
        return PrimalDualState(self.alpha.copy(), self.alpha_bar.copy(), self.xi.copy(), self.eta.copy())


@dataclass
class Solution:
    algorithm: Algorithm
    alpha_hat: np.ndarray
    x_hat: np.ndarray
    final_objective: float
    converged: bool
    criterion: str
    iterations: int
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def suggest_steps(zeta: float) -> Tuple[float, float]:
    if not zeta > 0:
        raise ValueError(f"Operator bound zeta must be positive, got {zeta}")
    step = _STEP_SAFETY / math.sqrt(zeta)
    return step, step


def operator_bound(inst: ProblemInstance, tol: float = 1e-6) -> float:
    """``zeta = ||Phi||^2 (1 + ||H||^2)``.

    ``||Phi||^2`` is the tight-frame constant widened by its measured misfit and
    ``||H||`` is the peak of the transfer function. Other blur operators fall back
    to a power-method norm inflated by ``1 + tol``.
    """

    frame = inst.frame
    phi_norm_sq = frame.frame_constant * (1.0 + frame.max_relative_error)
    if isinstance(inst.blur, ConvolutionOperator):
        blur_norm = inst.blur.exact_norm
    else:
        blur_norm = estimate_spectral_norm(inst.blur, tol).value * (1.0 + tol)
    return phi_norm_sq * (1.0 + blur_norm**2)


class _RunMonitor:
    """Collects the per-iteration trace and decides on early stopping."""

    def __init__(self, inst: ProblemInstance, x_true: Optional[np.ndarray], early_stop: bool) -> None:
        self._inst = inst
        self._x_true = x_true
        self._early_stop = early_stop
        self.trace = SolverTrace()

    def record(self, iteration: int, alpha: np.ndarray, elapsed: float) -> None:
        terms = evaluate_terms(alpha, self._inst, self._x_true)
        self.trace.append(
            TraceRecord(
                iteration=iteration,
                objective=terms.objective.value,
                fidelity=terms.fidelity.value,
                penalty=terms.penalty,
                pos_violation=terms.pos_violation,
                mae=terms.mae,
                elapsed_s=elapsed,
            )
        )

    def _relative_change(self, window: int) -> float:
        if len(self.trace) <= window:
            return math.inf
        current = self.trace[-1].objective
        previous = self.trace[-1 - window].objective
        if not (math.isfinite(current) and math.isfinite(previous)):
            return math.inf
        return abs(current - previous) / max(abs(current), 1e-300)

    def stalled(self) -> bool:
        return self._early_stop and self._relative_change(_STALL_WINDOW) < _STALL_TOL

    def verdict(self, stopped_early: bool) -> Tuple[bool, str]:
        objectives = self.trace.objectives()
        if not np.any(np.isfinite(objectives)):
            return False, "objective was infinite at every recorded iterate"
        if stopped_early:
            return True, f"relative objective change below {_STALL_TOL:g} over {_STALL_WINDOW} iterations"
        window = min(_STALL_WINDOW, len(self.trace) - 1)
        change = self._relative_change(window)
        converged = change <= _CONVERGED_TOL
        return converged, (
            f"fixed budget of {len(self.trace) - 1} iterations; relative objective change "
            f"{change:.3e} over the last {window} iterations (threshold {_CONVERGED_TOL:g})"
        )


def _log_progress(algorithm: Algorithm, iteration: int, log_every: int, trace: SolverTrace) -> None:
    if log_every > 0 and iteration % log_every == 0:
        record = trace[-1]
        _LOGGER.debug(
            "%s iteration %d: objective %.10g, positivity violation %.3e",
            algorithm.value,
            iteration,
            record.objective,
            record.pos_violation,
        )


def _finish(
    algorithm: Algorithm,
    monitor: _RunMonitor,
    alpha: np.ndarray,
    x_hat: np.ndarray,
    stopped_early: bool,
    diagnostics: Dict[str, Any],
) -> Tuple[Solution, SolverTrace]:
    converged, criterion = monitor.verdict(stopped_early)
    trace = monitor.trace
    if not np.any(np.isfinite(trace.objectives())):
        _LOGGER.warning("%s run never reached a finite objective", algorithm.value)
    solution = Solution(
        algorithm=algorithm,
        alpha_hat=alpha,
        x_hat=x_hat,
        final_objective=trace.final_objective,
        converged=converged,
        criterion=criterion,
        iterations=len(trace) - 1,
        diagnostics=diagnostics,
    )
    _LOGGER.info(
        "%s finished after %d iterations in %.3fs: objective %.10g (%s)",
        algorithm.value,
        solution.iterations,
        trace[-1].elapsed_s,
        solution.final_objective,
        "converged" if converged else "not converged",
    )
    return solution, trace


def solve_primal(
    inst: ProblemInstance,
    cfg: PrimalConfig,
    x_true: Optional[np.ndarray] = None,
) -> Tuple[Solution, SolverTrace]:
    """Product-space proximal averaging over ``(x1, x2, alpha)`` with three copies.

    Copy 1 takes the separable prox of ``f1(x2) + i_C(x1) + gamma Psi(alpha)``,
    copies 2 and 3 the projections onto ``x1 = Phi alpha`` and ``x2 = H x1``.
    """

    if not isinstance(inst.blur, ConvolutionOperator):
        raise ValueError("The primal scheme needs a convolution blur to invert I + H H* in Fourier")
    if not inst.frame.is_tight:
        raise ValueError("The primal scheme needs a tight-frame dictionary")

    algorithm = Algorithm.PRIMAL
    scale = cfg.mu / 3.0
    _LOGGER.info(
        "Starting %s scheme: mu=%g, theta=%s, n_iter=%d, gamma=%g",
        algorithm.value,
        cfg.mu,
        "schedule" if isinstance(cfg.theta, tuple) else cfg.theta,
        cfg.n_iter,
        inst.gamma,
    )

    z = ProductPoint.zeros(inst.image_shape, inst.coeff_shape)
    copies = [z.copy() for _ in range(3)]
    monitor = _RunMonitor(inst, x_true, cfg.early_stop)
    monitor.record(0, z.alpha, 0.0)
    consensus: List[float] = []
    elapsed = 0.0
    stopped_early = False

    for t in range(cfg.n_iter):
        started = time.perf_counter()
        first, second, third = copies
        proximal = (
            ProductPoint(
                x1=project_nonneg(first.x1),
                x2=prox_poisson(first.x2, scale, inst.counts),
                alpha=prox_penalty(first.alpha, scale * inst.gamma, inst.penalty),
            ),
            project_ker_L1(second, inst.dictionary, inst.frame),
            project_ker_L2(third, inst.blur),
        )
        average = (proximal[0] + proximal[1] + proximal[2]) * (1.0 / 3.0)
        theta = cfg.theta_at(t)
        reflected = 2.0 * average - z
        copies = [copy + theta * (reflected - output) for copy, output in zip(copies, proximal)]
        z = z + theta * (average - z)
        elapsed += time.perf_counter() - started

        if not all(np.all(np.isfinite(block)) for block in (z.x1, z.x2, z.alpha)):
            raise SolverDivergedError(algorithm, t + 1)
        consensus.append((proximal[0] - proximal[1]).norm() + (proximal[1] - proximal[2]).norm())
        monitor.record(t + 1, z.alpha, elapsed)
        _log_progress(algorithm, t + 1, cfg.log_every, monitor.trace)
        if monitor.stalled():
            stopped_early = True
            break

    diagnostics = {
        "x1_minus_phi_alpha": float(np.linalg.norm(z.x1 - inst.dictionary.apply(z.alpha))),
        "x2_minus_h_x1": float(np.linalg.norm(z.x2 - inst.blur.apply(z.x1))),
        "x1_norm": float(np.linalg.norm(z.x1)),
        "consensus": consensus,
    }
    return _finish(algorithm, monitor, z.alpha, project_nonneg(z.x1), stopped_early, diagnostics)


def solve_primal_dual(
    inst: ProblemInstance,
    cfg: PrimalDualConfig,
    x_true: Optional[np.ndarray] = None,
    warm_start: Optional[PrimalDualState] = None,
) -> Tuple[Solution, SolverTrace]:
    """Primal-dual iteration on ``F(K alpha) + gamma Psi(alpha)`` with ``K = (H Phi; Phi)``.

    Dual steps use the Moreau identity ``prox_{s F*}(v) = v - s prox_{F/s}(v/s)``
    channelwise: the Poisson channel through ``H Phi`` and the positivity channel
    through ``Phi``.
    """

    algorithm = Algorithm.PRIMAL_DUAL
    zeta = max(cfg.zeta or 0.0, operator_bound(inst, cfg.norm_tol))
    suggestion = suggest_steps(zeta)
    sigma = cfg.sigma if cfg.sigma is not None else suggestion[0]
    tau = cfg.tau if cfg.tau is not None else suggestion[1]
    if sigma * tau * zeta >= 1.0:
        raise StepSizeError(sigma, tau, zeta, suggestion)
    _LOGGER.info(
        "Starting %s scheme: sigma=%g, tau=%g, zeta=%g, n_iter=%d, gamma=%g",
        algorithm.value,
        sigma,
        tau,
        zeta,
        cfg.n_iter,
        inst.gamma,
    )

    stack = BlockStackOperator([CompositionOperator(inst.blur, inst.dictionary), inst.dictionary])
    state = warm_start.copy() if warm_start is not None else PrimalDualState.zeros(inst)
    monitor = _RunMonitor(inst, x_true, cfg.early_stop)
    monitor.record(0, state.alpha, 0.0)
    steps: List[float] = []
    elapsed = 0.0
    stopped_early = False

    for t in range(cfg.n_iter):
        started = time.perf_counter()
        blurred_bar, image_bar = stack.split(stack.apply(state.alpha_bar))
        fidelity_arg = state.xi + sigma * blurred_bar
        xi = fidelity_arg - sigma * prox_poisson(fidelity_arg / sigma, 1.0 / sigma, inst.counts)
        positivity_arg = state.eta + sigma * image_bar
        eta = positivity_arg - sigma * project_nonneg(positivity_arg / sigma)
        gradient = stack.adjoint_apply(np.concatenate((xi.ravel(), eta.ravel())))
        alpha = prox_penalty(state.alpha - tau * gradient, tau * inst.gamma, inst.penalty)
        steps.append(float(np.linalg.norm(alpha - state.alpha)))
        state = PrimalDualState(alpha=alpha, alpha_bar=2.0 * alpha - state.alpha, xi=xi, eta=eta)
        elapsed += time.perf_counter() - started

        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(xi)) and np.all(np.isfinite(eta))):
            raise SolverDivergedError(algorithm, t + 1)
        monitor.record(t + 1, state.alpha, elapsed)
        _log_progress(algorithm, t + 1, cfg.log_every, monitor.trace)
        if monitor.stalled():
            stopped_early = True
            break

    diagnostics = {
        "sigma": sigma,
        "tau": tau,
        "zeta": zeta,
        "primal_steps": steps,
        "final_state": state,
    }
    x_hat = project_nonneg(inst.dictionary.apply(state.alpha))
    return _finish(algorithm, monitor, state.alpha, x_hat, stopped_early, diagnostics)


def objective_gap_rate(
    trace: SolverTrace,
    t_lo: int,
    t_hi: int,
    reference: Optional[float] = None,
) -> float:
    """Ratio of objective suboptimality at ``t_lo`` and ``t_hi``.

    Under O(1/t) decay the ratio is about ``t_hi / t_lo``. A constant trace gives
    1.0; a gap that has underflowed at ``t_hi`` gives ``inf``.
    """

    last = len(trace) - 1
    if not 0 <= t_lo < t_hi <= last:
        raise ValueError(f"Need 0 <= t_lo < t_hi <= {last}, got t_lo={t_lo}, t_hi={t_hi}")
    objectives = trace.objectives()
    if not (math.isfinite(objectives[t_lo]) and math.isfinite(objectives[t_hi])):
        raise ValueError(f"Objective must be finite at iterations {t_lo} and {t_hi}")
    finite = objectives[np.isfinite(objectives)]
    ref = float(finite.min()) if reference is None else float(reference)
    eps = np.finfo(float).eps * max(1.0, abs(ref))
    if float(np.ptp(finite)) <= eps:
        _LOGGER.info("Objective trace is constant; rate ratio reported as 1")
        return 1.0
    gap_lo = float(objectives[t_lo]) - ref
    gap_hi = float(objectives[t_hi]) - ref
    if gap_hi <= 4.0 * eps:
        _LOGGER.info("Objective gap at iteration %d is at float precision; exact convergence", t_hi)
        return math.inf
    return gap_lo / gap_hi


__all__ = [
    "Algorithm",
    "PrimalConfig",
    "PrimalDualConfig",
    "PrimalDualState",
    "Solution",
    "SolverDivergedError",
    "StepSizeError",
    "objective_gap_rate",
    "operator_bound",
    "solve_primal",
    "solve_primal_dual",
    "suggest_steps",
]
