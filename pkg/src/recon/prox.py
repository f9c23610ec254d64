from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from ..logging_utils import get_logger
from .linops import ConvolutionOperator, LinearOperator, TightFrameDescriptor

_LOGGER = get_logger(__name__)

ScalarFunction = Callable[[np.ndarray], np.ndarray]

_ROOT_TOL = 1e-10
_ROOT_MAX_ITERS = 200


class RootFindingError(RuntimeError):
    def __init__(self, coordinate: int, message: str) -> None:
        super().__init__(f"Scalar prox failed at coordinate {coordinate}: {message}")
        self.coordinate = coordinate


class PenaltyKind(str, Enum):
    L1 = "l1"
    GENERIC = "generic"


@dataclass(frozen=True)
class PenaltySpec:
    """Separable sparsity penalty ``Psi(alpha) = sum psi(alpha[i])``.

    ``dpsi`` is the derivative on ``(0, inf)`` and ``dpsi0`` the right derivative
    at zero; ``ddpsi`` is optional and only speeds up the scalar root-finding.
    """

    kind: PenaltyKind
    psi: Optional[ScalarFunction] = None
    dpsi: Optional[ScalarFunction] = None
    dpsi0: float = 1.0
    ddpsi: Optional[ScalarFunction] = None

    @classmethod
    def l1(cls) -> "PenaltySpec":
        return cls(kind=PenaltyKind.L1)

    @classmethod
    def generic(
        cls,
        psi: ScalarFunction,
        dpsi: ScalarFunction,
        dpsi0: float,
        ddpsi: Optional[ScalarFunction] = None,
    ) -> "PenaltySpec":
        spec = cls(kind=PenaltyKind.GENERIC, psi=psi, dpsi=dpsi, dpsi0=float(dpsi0), ddpsi=ddpsi)
        spec.validate()
        return spec

    def value(self, alpha: np.ndarray) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float)
        if self.kind is PenaltyKind.L1:
            return np.abs(alpha)
        assert self.psi is not None
        return np.asarray(self.psi(alpha), dtype=float)

    def validate(self, samples: int = 64) -> None:
        if self.kind is PenaltyKind.L1:
            return
        if self.psi is None or self.dpsi is None:
            raise ValueError("A generic penalty needs both psi and its derivative dpsi")
        if not self.dpsi0 > 0:
            raise ValueError(
                f"Penalty must admit a positive right derivative at zero, got dpsi0={self.dpsi0}"
            )
        grid = np.linspace(0.0, 10.0, samples)
        values = self.value(grid)
        if abs(float(self.value(np.zeros(1))[0])) > 1e-12:
            raise ValueError("Penalty must vanish at zero")
        if not np.allclose(self.value(-grid), values, rtol=1e-12, atol=1e-12):
            raise ValueError("Penalty must be even")
        if np.any(np.diff(values) < -1e-12):
            raise ValueError("Penalty must be non-decreasing on the positive half-line")
        left, right = grid[:-1], grid[1:]
        midpoint = self.value(0.5 * (left + right))
        if np.any(midpoint > 0.5 * (self.value(left) + self.value(right)) + 1e-12):
            raise ValueError("Penalty must be convex")


@dataclass
class ProductPoint:
    """Point ``(x1, x2, alpha)`` of the product space image x blurred x coefficients."""

    x1: np.ndarray
    x2: np.ndarray
    alpha: np.ndarray

    @classmethod
    def zeros(cls, image_shape: Sequence[int], coeff_shape: Sequence[int]) -> "ProductPoint":
        return cls(np.zeros(tuple(image_shape)), np.zeros(tuple(image_shape)), np.zeros(tuple(coeff_shape)))

    def copy(self) -> "ProductPoint":
        return ProductPoint(self.x1.copy(), self.x2.copy(), self.alpha.copy())

    def __add__(self, other: "ProductPoint") -> "ProductPoint":
        return ProductPoint(self.x1 + other.x1, self.x2 + other.x2, self.alpha + other.alpha)

    def __sub__(self, other: "ProductPoint") -> "ProductPoint":
        return ProductPoint(self.x1 - other.x1, self.x2 - other.x2, self.alpha - other.alpha)

    def __mul__(self, factor: float) -> "ProductPoint":
        return ProductPoint(factor * self.x1, factor * self.x2, factor * self.alpha)

    __rmul__ = __mul__

    def inner(self, other: "ProductPoint") -> float:
        return float(
            np.vdot(self.x1, other.x1) + np.vdot(self.x2, other.x2) + np.vdot(self.alpha, other.alpha)
        )

    def norm(self) -> float:
        return float(np.sqrt(self.inner(self)))


def prox_poisson(x: np.ndarray, beta: float, y: np.ndarray) -> np.ndarray:
    """Proximity operator of ``beta * f1`` for the Poisson anti log-likelihood."""

    if not beta > 0:
        raise ValueError(f"Poisson prox scale beta must be positive, got {beta}")
    x = np.asarray(x, dtype=float)
    counts = np.asarray(y, dtype=float)
    if counts.shape != x.shape:
        raise ValueError(f"Counts shape {counts.shape} does not match input shape {x.shape}")
    if np.any(counts < 0):
        raise ValueError("Poisson counts must be non-negative")

    shifted = x - beta
    root = np.sqrt(shifted * shifted + 4.0 * beta * counts)
    out = np.empty_like(x)
    upper = shifted >= 0
    out[upper] = 0.5 * (shifted[upper] + root[upper])
    lower = ~upper
    # Conjugate form on the negative branch avoids cancelling shifted against root.
    out[lower] = 2.0 * beta * counts[lower] / (root[lower] - shifted[lower])
    return out


def soft_threshold(b: np.ndarray, delta: float) -> np.ndarray:
    if delta < 0:
        raise ValueError(f"Soft-threshold level must be non-negative, got {delta}")
    b = np.asarray(b, dtype=float)
    return np.sign(b) * np.maximum(np.abs(b) - delta, 0.0)


def prox_penalty(b: np.ndarray, delta: float, spec: PenaltySpec) -> np.ndarray:
    """Proximity operator of ``delta * Psi``, decoupled per coordinate."""

    if not delta > 0:
        raise ValueError(f"Penalty prox scale must be positive, got {delta}")
    if spec.kind is PenaltyKind.L1:
        return soft_threshold(b, delta)
    spec.validate()
    return _generic_scalar_prox(np.asarray(b, dtype=float), delta, spec)


def _generic_scalar_prox(b: np.ndarray, delta: float, spec: PenaltySpec) -> np.ndarray:
    assert spec.dpsi is not None
    flat = b.ravel()
    magnitude = np.abs(flat)
    result = np.zeros_like(flat)
    active = np.flatnonzero(magnitude > delta * spec.dpsi0)
    if active.size == 0:
        return result.reshape(b.shape)

    target = magnitude[active]

    def residual(t: np.ndarray) -> np.ndarray:
        return t - target + delta * np.asarray(spec.dpsi(t), dtype=float)

    lo = np.zeros_like(target)
    hi = target.copy()
    g_hi = residual(hi)
    bad = np.flatnonzero(g_hi <= 0)
    if bad.size:
        raise RootFindingError(int(active[bad[0]]), "derivative is not monotone on (0, |b|]")

    t = 0.5 * (lo + hi)
    for _ in range(_ROOT_MAX_ITERS):
        g = residual(t)
        if np.all((np.abs(g) <= _ROOT_TOL) | (hi - lo <= _ROOT_TOL)):
            break
        negative = g < 0
        lo = np.where(negative, t, lo)
        hi = np.where(negative, hi, t)
        midpoint = 0.5 * (lo + hi)
        if spec.ddpsi is None:
            t = midpoint
            continue
        slope = 1.0 + delta * np.asarray(spec.ddpsi(t), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            candidate = t - g / slope
        # Newton steps that leave the bracket fall back to bisection.
        inside = np.isfinite(candidate) & (candidate > lo) & (candidate < hi)
        t = np.where(inside, candidate, midpoint)
    else:
        stuck = np.flatnonzero((np.abs(residual(t)) > _ROOT_TOL) & (hi - lo > _ROOT_TOL))
        if stuck.size:
            raise RootFindingError(
                int(active[stuck[0]]),
                f"no root found within {_ROOT_MAX_ITERS} iterations",
            )

    result[active] = np.sign(flat[active]) * t
    return result.reshape(b.shape)


def project_nonneg(v: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=float), 0.0)


def project_ker_L1(
    p: ProductPoint,
    dictionary: LinearOperator,
    frame: TightFrameDescriptor,
) -> ProductPoint:
    """Project onto ``{x1 = Phi alpha}`` using ``(I + Phi Phi^T)^-1 = I / (1 + c)``."""

    if not frame.is_tight:
        raise ValueError(
            "Kernel projector for x1 = Phi alpha requires a verified tight frame "
            f"(measured relative error {frame.max_relative_error:.3e})"
        )
    correction = (p.x1 - dictionary.apply(p.alpha)) / (1.0 + frame.frame_constant)
    return ProductPoint(
        x1=p.x1 - correction,
        x2=p.x2.copy(),
        alpha=p.alpha + dictionary.adjoint_apply(correction).reshape(p.alpha.shape),
    )


def project_ker_L2(p: ProductPoint, conv: LinearOperator) -> ProductPoint:
    """Project onto ``{x2 = H x1}`` with the inverse applied in the Fourier domain."""

    if not isinstance(conv, ConvolutionOperator):
        raise ValueError(
            f"Kernel projector for x2 = H x1 needs a convolution operator with a transfer function, got {type(conv).__name__}"
        )
    correction = conv.solve_shifted_normal(p.x2 - conv.apply(p.x1))
    return ProductPoint(
        x1=p.x1 + conv.adjoint_apply(correction),
        x2=p.x2 - correction,
        alpha=p.alpha.copy(),
    )


__all__ = [
    "PenaltyKind",
    "PenaltySpec",
    "ProductPoint",
    "RootFindingError",
    "project_ker_L1",
    "project_ker_L2",
    "project_nonneg",
    "prox_penalty",
    "prox_poisson",
    "soft_threshold",
]
