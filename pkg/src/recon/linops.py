from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pywt

from ..logging_utils import get_logger

_LOGGER = get_logger(__name__)

Shape = Tuple[int, ...]

_IMAG_RESIDUE_TOL = 1e-9
_FRAME_TOL = 1e-10
_WAVELET = "haar"
_DECIMATED_MODE = "periodization"


class OperatorKind(str, Enum):
    CONVOLUTION = "convolution"
    DICTIONARY_SYNTHESIS = "dictionary-synthesis"
    COMPOSITION = "composition"
    BLOCK_STACK = "block-stack"
    IDENTITY = "identity"


class DictionaryKind(str, Enum):
    ORTHONORMAL_HAAR = "orthonormal-haar"
    UNDECIMATED_HAAR = "undecimated-haar"
    IDENTITY = "identity"


class LinearOperator:
    """Base class for the matrix-free operators used by the solvers.

    Subclasses implement ``_forward`` and ``_adjoint`` on arrays already shaped
    to ``input_shape`` / ``output_shape``. Instances are immutable once built.
    """

    kind: OperatorKind

    def __init__(self, input_shape: Sequence[int], output_shape: Sequence[int]) -> None:
        self._input_shape: Shape = tuple(int(d) for d in input_shape)
        self._output_shape: Shape = tuple(int(d) for d in output_shape)

    @property
    def input_shape(self) -> Shape:
        return self._input_shape

    @property
    def output_shape(self) -> Shape:
        return self._output_shape

    @property
    def input_dim(self) -> int:
        return int(np.prod(self._input_shape))

    @property
    def output_dim(self) -> int:
        return int(np.prod(self._output_shape))

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self._forward(_conform(v, self._input_shape, "input"))

    def adjoint_apply(self, v: np.ndarray) -> np.ndarray:
        return self._adjoint(_conform(v, self._output_shape, "output"))

    def _forward(self, v: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def _adjoint(self, v: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.input_shape} -> {self.output_shape})"


def _conform(v: np.ndarray, shape: Shape, side: str) -> np.ndarray:
    array = np.asarray(v, dtype=float)
    expected = int(np.prod(shape))
    if array.size != expected:
        raise ValueError(
            f"Dimension mismatch: operator {side} dimension is {expected} {shape}, "
            f"got a vector of length {array.size} {array.shape}"
        )
    return array.reshape(shape)


def apply(op: LinearOperator, v: np.ndarray) -> np.ndarray:
    return op.apply(v)


def adjoint_apply(op: LinearOperator, v: np.ndarray) -> np.ndarray:
    return op.adjoint_apply(v)


def _real_part(spectrum: np.ndarray) -> np.ndarray:
    values = np.fft.ifft2(spectrum)
    residue = float(np.max(np.abs(values.imag), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(values.real), initial=0.0)))
    if residue > _IMAG_RESIDUE_TOL * scale:
        raise RuntimeError(
            f"Inverse FFT left an imaginary residue of {residue:.3e}; expected a real-valued signal"
        )
    return values.real


class IdentityOperator(LinearOperator):
    kind = OperatorKind.IDENTITY

    def __init__(self, shape: Sequence[int], scale: float = 1.0) -> None:
        super().__init__(shape, shape)
        self.scale = float(scale)

    def _forward(self, v: np.ndarray) -> np.ndarray:
        return self.scale * v

    def _adjoint(self, v: np.ndarray) -> np.ndarray:
        return self.scale * v


class ConvolutionOperator(LinearOperator):
    """Circular convolution with a unit-sum PSF, diagonal in the Fourier domain."""

    kind = OperatorKind.CONVOLUTION

    def __init__(self, psf: np.ndarray, image_shape: Sequence[int]) -> None:
        super().__init__(image_shape, image_shape)
        kernel = np.asarray(psf, dtype=float)
        if kernel.ndim != 2:
            raise ValueError(f"PSF must be a 2-D array, got shape {kernel.shape}")
        rows, cols = self.input_shape
        if kernel.shape[0] > rows or kernel.shape[1] > cols:
            raise ValueError(
                f"PSF of shape {kernel.shape} is larger than the image shape {self.input_shape}"
            )
        if not np.all(np.isfinite(kernel)):
            raise ValueError("PSF entries must be finite")
        if np.any(kernel < 0):
            raise ValueError("PSF entries must be non-negative")
        total = float(kernel.sum())
        if total <= 0.0:
            raise ValueError("PSF is identically zero; the blur operator would be the zero map")

        self._psf = kernel / total
        padded = np.zeros(self.input_shape)
        padded[: kernel.shape[0], : kernel.shape[1]] = self._psf
        # PSF centre sits at the origin so a one-pixel kernel is the identity.
        padded = np.roll(padded, (-(kernel.shape[0] // 2), -(kernel.shape[1] // 2)), axis=(0, 1))
        self._transfer = np.fft.fft2(padded)
        self._transfer.setflags(write=False)
        self._psf.setflags(write=False)

    @property
    def psf(self) -> np.ndarray:
        return self._psf

    @property
    def transfer_function(self) -> np.ndarray:
        return self._transfer

    @property
    def exact_norm(self) -> float:
        return float(np.max(np.abs(self._transfer)))

    def _forward(self, v: np.ndarray) -> np.ndarray:
        return _real_part(np.fft.fft2(v) * self._transfer)

    def _adjoint(self, v: np.ndarray) -> np.ndarray:
        return _real_part(np.fft.fft2(v) * np.conj(self._transfer))

    def solve_shifted_normal(self, r: np.ndarray) -> np.ndarray:
        """Apply ``(I + H H*)^-1`` by pointwise division in the Fourier domain."""

        r = _conform(r, self.output_shape, "output")
        return _real_part(np.fft.fft2(r) / (1.0 + np.abs(self._transfer) ** 2))


def _is_power_of_two(value: int) -> bool:
    return value > 0 and value & (value - 1) == 0


class HaarDictionary(LinearOperator):
    """Synthesis operator of a periodic 2-D Haar system.

    ``orthonormal-haar`` is the periodized multi-level ``wavedec2`` packed by
    ``coeffs_to_array`` (coefficients shaped like the image). ``undecimated-haar``
    is the normalised stationary transform with ``3 * levels + 1`` bands of full
    size, finest details first; its analysis is twice a Parseval map, so
    first-level atoms have unit norm and ``Phi Phi^T = 4 I``.
    """

    kind = OperatorKind.DICTIONARY_SYNTHESIS

    def __init__(
        self,
        transform: DictionaryKind,
        image_shape: Sequence[int],
        levels: Optional[int] = None,
    ) -> None:
        rows, cols = (int(d) for d in image_shape)
        if not (_is_power_of_two(rows) and _is_power_of_two(cols)):
            raise ValueError(
                f"Haar dictionaries need power-of-two image sides, got {rows}x{cols}"
            )
        max_levels = int(math.log2(min(rows, cols)))
        if levels is None:
            levels = max_levels
        if levels < 1 or levels > max_levels:
            raise ValueError(
                f"Haar depth must be between 1 and {max_levels} for a {rows}x{cols} image, got {levels}"
            )
        self.transform = DictionaryKind(transform)
        self.levels = int(levels)
        self._slices = None
        if self.transform is DictionaryKind.ORTHONORMAL_HAAR:
            coeff_shape: Shape = (rows, cols)
            _, self._slices = pywt.coeffs_to_array(
                pywt.wavedec2(np.zeros((rows, cols)), _WAVELET, mode=_DECIMATED_MODE, level=self.levels)
            )
        elif self.transform is DictionaryKind.UNDECIMATED_HAAR:
            coeff_shape = (3 * self.levels + 1, rows, cols)
        else:
            raise ValueError(f"Unsupported Haar transform: {transform}")
        super().__init__(coeff_shape, (rows, cols))

    @property
    def analytic_frame_constant(self) -> float:
        return 1.0 if self.transform is DictionaryKind.ORTHONORMAL_HAAR else 4.0

    def _forward(self, coeffs: np.ndarray) -> np.ndarray:
        if self.transform is DictionaryKind.ORTHONORMAL_HAAR:
            return _haar_synthesis(coeffs, self._slices)
        return 2.0 * _atrous_adjoint(coeffs, self.levels)

    def _adjoint(self, image: np.ndarray) -> np.ndarray:
        if self.transform is DictionaryKind.ORTHONORMAL_HAAR:
            return _haar_analysis(image, self.levels)
        return 2.0 * _atrous_analysis(image, self.levels)


def _haar_analysis(image: np.ndarray, levels: int) -> np.ndarray:
    coeffs = pywt.wavedec2(image, _WAVELET, mode=_DECIMATED_MODE, level=levels)
    array, _ = pywt.coeffs_to_array(coeffs)
    return array


def _haar_synthesis(array: np.ndarray, slices: list) -> np.ndarray:
    coeffs = pywt.array_to_coeffs(array, slices, output_format="wavedec2")
    return pywt.waverec2(coeffs, _WAVELET, mode=_DECIMATED_MODE)


def _atrous_analysis(image: np.ndarray, levels: int) -> np.ndarray:
    # Finest detail bands first, approximation last.
    coeffs = pywt.swt2(image, _WAVELET, level=levels, trim_approx=True, norm=True)
    bands: List[np.ndarray] = []
    for details in reversed(coeffs[1:]):
        bands.extend(details)
    bands.append(coeffs[0])
    return np.stack(bands)


def _atrous_adjoint(bands: np.ndarray, levels: int) -> np.ndarray:
    details = [tuple(bands[3 * level : 3 * level + 3]) for level in range(levels)]
    coeffs = [bands[-1]] + list(reversed(details))
    return pywt.iswt2(coeffs, _WAVELET, norm=True)


class CompositionOperator(LinearOperator):
    kind = OperatorKind.COMPOSITION

    def __init__(self, outer: LinearOperator, inner: LinearOperator) -> None:
        if inner.output_dim != outer.input_dim:
            raise ValueError(
                f"Cannot compose: inner output dimension {inner.output_dim} != outer input dimension {outer.input_dim}"
            )
        super().__init__(inner.input_shape, outer.output_shape)
        self.outer = outer
        self.inner = inner

    def _forward(self, v: np.ndarray) -> np.ndarray:
        return self.outer.apply(self.inner.apply(v))

    def _adjoint(self, v: np.ndarray) -> np.ndarray:
        return self.inner.adjoint_apply(self.outer.adjoint_apply(v))


class BlockStackOperator(LinearOperator):
    """Vertical stack ``(A_1; A_2; ...)`` with a flat, concatenated output."""

    kind = OperatorKind.BLOCK_STACK

    def __init__(self, blocks: Sequence[LinearOperator]) -> None:
        if not blocks:
            raise ValueError("A block stack needs at least one operator")
        input_shape = blocks[0].input_shape
        for block in blocks[1:]:
            if block.input_dim != blocks[0].input_dim:
                raise ValueError(
                    f"Stacked operators must share the input dimension, got {block.input_dim} and {blocks[0].input_dim}"
                )
        self.blocks: Tuple[LinearOperator, ...] = tuple(blocks)
        self._offsets = np.cumsum([0] + [block.output_dim for block in self.blocks])
        super().__init__(input_shape, (int(self._offsets[-1]),))

    def split(self, v: np.ndarray) -> List[np.ndarray]:
        flat = _conform(v, self.output_shape, "output")
        return [
            flat[start:stop].reshape(block.output_shape)
            for block, start, stop in zip(self.blocks, self._offsets[:-1], self._offsets[1:])
        ]

    def _forward(self, v: np.ndarray) -> np.ndarray:
        return np.concatenate([block.apply(v).ravel() for block in self.blocks])

    def _adjoint(self, v: np.ndarray) -> np.ndarray:
        parts = self.split(v)
        total = np.zeros(self.input_shape)
        for block, part in zip(self.blocks, parts):
            total += block.adjoint_apply(part).reshape(self.input_shape)
        return total


@dataclass(frozen=True)
class TightFrameDescriptor:
    frame_constant: float
    kind: DictionaryKind
    max_relative_error: float
    tolerance: float = _FRAME_TOL

    @property
    def is_tight(self) -> bool:
        return self.frame_constant > 0 and self.max_relative_error <= self.tolerance


def measure_frame(
    op: LinearOperator,
    kind: DictionaryKind | str,
    samples: int = 16,
    seed: int = 0,
    tolerance: float = _FRAME_TOL,
) -> TightFrameDescriptor:
    """Fit ``c`` in ``Phi Phi^T = c I`` on random images and record the worst misfit."""

    rng = np.random.default_rng(seed)
    vectors = [rng.standard_normal(op.output_shape) for _ in range(samples)]
    images = [op.apply(op.adjoint_apply(v)) for v in vectors]
    constants = [float(np.vdot(w, v) / np.vdot(v, v)) for w, v in zip(images, vectors)]
    constant = float(np.mean(constants))
    worst = 0.0
    for w, v in zip(images, vectors):
        denom = abs(constant) * float(np.linalg.norm(v)) or 1.0
        worst = max(worst, float(np.linalg.norm(w - constant * v)) / denom)
    return TightFrameDescriptor(
        frame_constant=constant,
        kind=DictionaryKind(kind),
        max_relative_error=worst,
        tolerance=tolerance,
    )


def make_convolution(psf: np.ndarray, image_shape: Sequence[int]) -> ConvolutionOperator:
    return ConvolutionOperator(psf, image_shape)


def make_dictionary(
    kind: DictionaryKind | str,
    image_shape: Sequence[int],
    levels: Optional[int] = None,
) -> Tuple[LinearOperator, TightFrameDescriptor]:
    kind = DictionaryKind(kind)
    if kind is DictionaryKind.IDENTITY:
        op: LinearOperator = IdentityOperator(image_shape)
    else:
        op = HaarDictionary(kind, image_shape, levels)
    frame = measure_frame(op, kind)
    if not frame.is_tight:
        raise ValueError(
            f"Dictionary {kind.value} failed the tight-frame check "
            f"(relative error {frame.max_relative_error:.3e} > {frame.tolerance:.1e})"
        )
    _LOGGER.debug(
        "Built %s dictionary %s -> %s with frame constant %.12g",
        kind.value,
        op.input_shape,
        op.output_shape,
        frame.frame_constant,
    )
    return op, frame


@dataclass(frozen=True)
class NormEstimate:
    value: float
    iterations: int
    converged: bool

    def __float__(self) -> float:
        return self.value


def estimate_spectral_norm(
    op: LinearOperator,
    tol: float = 1e-6,
    max_iters: int = 1000,
    seed: int = 0,
) -> NormEstimate:
    """Power iteration on ``A^T A``; the estimate approaches ``||A||`` from below.

    Stops once the eigen-residual ``||A^T A x - rho x||`` falls to ``tol * rho``,
    with ``rho = ||A x||^2`` the Rayleigh quotient of the unit iterate. The
    squared-norm deficit is then at most ``(tol * rho)^2 / gap`` for a spectral
    gap ``gap`` below the top eigenvalue.
    """

    if tol <= 0:
        raise ValueError(f"Power-iteration tolerance must be positive, got {tol}")
    if max_iters <= 0:
        raise ValueError(f"max_iters must be positive, got {max_iters}")

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.input_shape)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for iteration in range(1, max_iters + 1):
        ax = op.apply(x)
        rayleigh = float(np.vdot(ax, ax))
        if rayleigh == 0.0:
            return NormEstimate(0.0, iteration, True)
        estimate = math.sqrt(rayleigh)
        y = op.adjoint_apply(ax)
        residual = float(np.linalg.norm(y - rayleigh * x))
        if residual <= tol * rayleigh:
            _LOGGER.debug("Power iteration converged to %.12g after %d steps", estimate, iteration)
            return NormEstimate(estimate, iteration, True)
        x = y / np.linalg.norm(y)

    _LOGGER.warning(
        "Power iteration did not converge within %d steps; best estimate %.12g", max_iters, estimate
    )
    return NormEstimate(estimate, max_iters, False)


def gaussian_psf(sigma: float, size: int) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"Gaussian PSF sigma must be positive, got {sigma}")
    if size <= 0 or size % 2 == 0:
        raise ValueError(f"Gaussian PSF size must be a positive odd integer, got {size}")
    offsets = np.arange(size) - size // 2
    grid_r, grid_c = np.meshgrid(offsets, offsets, indexing="ij")
    kernel = np.exp(-(grid_r**2 + grid_c**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def box_psf(size: int) -> np.ndarray:
    if size <= 0:
        raise ValueError(f"Box PSF size must be positive, got {size}")
    return np.full((size, size), 1.0 / (size * size))


def delta_psf() -> np.ndarray:
    return np.ones((1, 1))


_PSF_SPEC = re.compile(r"^\s*(?P<name>[a-z]+)\s*(?::(?P<params>.*))?$", re.IGNORECASE)


def parse_psf_spec(text: str) -> np.ndarray:
    """Build a PSF from ``gaussian:sigma=<s>,size=<k>``, ``box:size=<k>`` or ``delta``."""

    match = _PSF_SPEC.match(text)
    if not match:
        raise ValueError(f"Malformed PSF specification: {text!r}")
    name = match.group("name").lower()
    params = {}
    for item in filter(None, (part.strip() for part in (match.group("params") or "").split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"PSF parameter {item!r} must be written as key=value")
        try:
            params[key.strip().lower()] = float(value)
        except ValueError as exc:
            raise ValueError(f"PSF parameter {key.strip()!r} is not a number: {value!r}") from exc

    if name == "gaussian":
        if "sigma" not in params:
            raise ValueError("gaussian PSF needs a sigma parameter")
        size = params.get("size", 2 * math.ceil(3 * params["sigma"]) + 1)
        return gaussian_psf(params["sigma"], int(size))
    if name == "box":
        return box_psf(int(params.get("size", 3)))
    if name == "delta":
        return delta_psf()
    raise ValueError(f"Unknown PSF kind {name!r}; expected gaussian, box or delta")


__all__ = [
    "BlockStackOperator",
    "CompositionOperator",
    "ConvolutionOperator",
    "DictionaryKind",
    "HaarDictionary",
    "IdentityOperator",
    "LinearOperator",
    "NormEstimate",
    "OperatorKind",
    "TightFrameDescriptor",
    "adjoint_apply",
    "apply",
    "box_psf",
    "delta_psf",
    "estimate_spectral_norm",
    "gaussian_psf",
    "make_convolution",
    "make_dictionary",
    "measure_frame",
    "parse_psf_spec",
]
