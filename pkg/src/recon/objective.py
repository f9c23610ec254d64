from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from ..logging_utils import get_logger
from .linops import LinearOperator, TightFrameDescriptor
from .prox import PenaltySpec

_LOGGER = get_logger(__name__)

# Slop tolerated on Phi alpha and H x before the orthant test.
POSITIVITY_TOL = 1e-12


class InfeasibilityReason(str, Enum):
    NEGATIVE_PIXEL = "negative-pixel"
    NEGATIVE_INTENSITY = "negative-intensity"
    ZERO_INTENSITY_WITH_COUNTS = "zero-intensity-with-positive-count"


@dataclass(frozen=True)
class ExtendedReal:
    """Value in ``(-inf, +inf]``; infinite values carry the reason they are infinite."""

    value: float
    reason: Optional[InfeasibilityReason] = None

    def __post_init__(self) -> None:
        if math.isnan(self.value) or self.value == -math.inf:
            raise ValueError(f"Extended reals are never NaN or -inf, got {self.value}")

    @classmethod
    def infinite(cls, reason: InfeasibilityReason) -> "ExtendedReal":
        return cls(math.inf, reason)

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value)

    def __float__(self) -> float:
        return self.value


def _validate_counts(y: np.ndarray) -> np.ndarray:
    counts = np.asarray(y)
    if not np.all(np.isfinite(counts)):
        raise ValueError("Counts must be finite")
    if np.any(counts < 0):
        raise ValueError("Counts must be non-negative")
    if not np.array_equal(counts, np.round(counts)):
        raise ValueError("Counts must be integers")
    return counts.astype(np.int64)


@dataclass
class ProblemInstance:
    """Data of the penalised Poisson problem ``min_alpha J(alpha)``."""

    counts: np.ndarray
    blur: LinearOperator
    dictionary: LinearOperator
    frame: TightFrameDescriptor
    gamma: float
    penalty: PenaltySpec = field(default_factory=PenaltySpec.l1)

    def __post_init__(self) -> None:
        self.counts = _validate_counts(self.counts)
        if not self.gamma > 0:
            raise ValueError(f"Regularisation parameter gamma must be positive, got {self.gamma}")
        if self.dictionary.output_dim != self.blur.input_dim:
            raise ValueError(
                f"Dictionary output dimension {self.dictionary.output_dim} does not match blur input dimension {self.blur.input_dim}"
            )
        if self.blur.output_dim != self.counts.size:
            raise ValueError(
                f"Blur output dimension {self.blur.output_dim} does not match {self.counts.size} observed counts"
            )
        self.counts = self.counts.reshape(self.blur.output_shape)
        self.penalty.validate()

        witness = self.dictionary.adjoint_apply(np.ones(self.image_shape))
        value = eval_objective(witness, self)
        if not value.is_finite:
            raise ValueError(
                "Problem has no feasible point: the blurred positive constant image is infeasible "
                f"({value.reason.value if value.reason else 'unknown reason'})"
            )

    @property
    def image_shape(self):
        return self.dictionary.output_shape

    @property
    def coeff_shape(self):
        return self.dictionary.input_shape


def eval_fidelity(eta: np.ndarray, y: np.ndarray) -> ExtendedReal:
    """Poisson anti log-likelihood ``f1(eta)`` with its extended-real domain."""

    eta = np.asarray(eta, dtype=float)
    counts = np.asarray(y, dtype=float)
    if eta.size != counts.size:
        raise ValueError(f"Intensity length {eta.size} does not match {counts.size} counts")
    eta = eta.reshape(counts.shape)
    if np.any(eta < 0):
        return ExtendedReal.infinite(InfeasibilityReason.NEGATIVE_INTENSITY)
    positive = counts > 0
    if np.any(eta[positive] == 0):
        return ExtendedReal.infinite(InfeasibilityReason.ZERO_INTENSITY_WITH_COUNTS)
    log_term = float(np.sum(counts[positive] * np.log(eta[positive])))
    return ExtendedReal(float(np.sum(eta)) - log_term)


def eval_penalty(alpha: np.ndarray, spec: PenaltySpec) -> float:
    alpha = np.asarray(alpha, dtype=float)
    if not np.all(np.isfinite(alpha)):
        raise ValueError("Coefficients must be finite")
    return float(np.sum(spec.value(alpha)))


def _clip_slop(values: np.ndarray) -> np.ndarray:
    return np.where(values >= -POSITIVITY_TOL, np.maximum(values, 0.0), values)


def eval_objective(alpha: np.ndarray, inst: ProblemInstance) -> ExtendedReal:
    """``J(alpha) = f1(H Phi alpha) + gamma Psi(alpha) + i_C(Phi alpha)``."""

    image = _clip_slop(inst.dictionary.apply(alpha))
    if np.any(image < 0):
        return ExtendedReal.infinite(InfeasibilityReason.NEGATIVE_PIXEL)
    fidelity = eval_fidelity(_clip_slop(inst.blur.apply(image)), inst.counts)
    if not fidelity.is_finite:
        return fidelity
    return ExtendedReal(fidelity.value + inst.gamma * eval_penalty(alpha, inst.penalty))


def mae(x_hat: np.ndarray, x_true: np.ndarray) -> float:
    x_hat = np.asarray(x_hat, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if x_hat.shape != x_true.shape:
        raise ValueError(f"MAE needs images of equal shape, got {x_hat.shape} and {x_true.shape}")
    return float(np.mean(np.abs(x_hat - x_true)))


@dataclass(frozen=True)
class ObjectiveTerms:
    objective: ExtendedReal
    fidelity: ExtendedReal
    penalty: float
    pos_violation: float
    mae: Optional[float]


def evaluate_terms(
    alpha: np.ndarray,
    inst: ProblemInstance,
    x_true: Optional[np.ndarray] = None,
) -> ObjectiveTerms:
    """Objective terms at the positive-orthant shadow of ``Phi alpha``.

    Iterates of both schemes satisfy the positivity constraint only in the
    limit, so the fidelity is taken at ``P_C(Phi alpha)`` and the distance to the
    orthant is reported on its own.
    """

    image = inst.dictionary.apply(alpha)
    shadow = np.maximum(image, 0.0)
    violation = float(np.linalg.norm(image - shadow))
    fidelity = eval_fidelity(_clip_slop(inst.blur.apply(shadow)), inst.counts)
    penalty = eval_penalty(alpha, inst.penalty)
    if fidelity.is_finite:
        objective = ExtendedReal(fidelity.value + inst.gamma * penalty)
    else:
        objective = fidelity
    return ObjectiveTerms(
        objective=objective,
        fidelity=fidelity,
        penalty=penalty,
        pos_violation=violation,
        mae=None if x_true is None else mae(shadow, x_true),
    )


__all__ = [
    "ExtendedReal",
    "InfeasibilityReason",
    "ObjectiveTerms",
    "POSITIVITY_TOL",
    "ProblemInstance",
    "eval_fidelity",
    "eval_objective",
    "eval_penalty",
    "evaluate_terms",
    "mae",
]
