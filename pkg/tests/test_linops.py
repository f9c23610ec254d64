from __future__ import annotations

import logging
import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.recon.linops import (  # noqa: E402
    BlockStackOperator,
    CompositionOperator,
    ConvolutionOperator,
    DictionaryKind,
    HaarDictionary,
    IdentityOperator,
    box_psf,
    delta_psf,
    estimate_spectral_norm,
    gaussian_psf,
    make_dictionary,
    measure_frame,
    parse_psf_spec,
)


def _adjoint_gap(op, rng: np.random.Generator) -> float:
    u = rng.standard_normal(op.input_shape)
    v = rng.standard_normal(op.output_shape)
    lhs = float(np.vdot(op.apply(u).ravel(), v.ravel()))
    rhs = float(np.vdot(u.ravel(), op.adjoint_apply(v).ravel()))
    return abs(lhs - rhs) / (np.linalg.norm(u) * np.linalg.norm(v))


def _spatial_convolution(image: np.ndarray, psf: np.ndarray) -> np.ndarray:
    kernel = psf / psf.sum()
    centre_r, centre_c = kernel.shape[0] // 2, kernel.shape[1] // 2
    out = np.zeros_like(image)
    for a in range(kernel.shape[0]):
        for b in range(kernel.shape[1]):
            out += kernel[a, b] * np.roll(image, (a - centre_r, b - centre_c), axis=(0, 1))
    return out


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def test_identity_returns_input() -> None:
    op = IdentityOperator((3,))

    np.testing.assert_array_equal(op.apply(np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(op.adjoint_apply(np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])


def test_delta_psf_is_identity(rng: np.random.Generator) -> None:
    op = ConvolutionOperator(delta_psf(), (8, 8))
    image = rng.standard_normal((8, 8))

    np.testing.assert_allclose(op.apply(image), image, atol=1e-12)


def test_gaussian_blur_preserves_constant_image() -> None:
    op = ConvolutionOperator(gaussian_psf(1.0, 3), (4, 4))

    np.testing.assert_allclose(op.apply(np.ones((4, 4))), np.ones((4, 4)), atol=1e-12)


def test_box_blur_spreads_one_hot_with_periodic_wrap() -> None:
    op = ConvolutionOperator(box_psf(3), (8, 8))
    image = np.zeros((8, 8))
    image[0, 0] = 1.0

    blurred = op.apply(image)

    expected = np.zeros((8, 8))
    for r in (-1, 0, 1):
        for c in (-1, 0, 1):
            expected[r % 8, c % 8] = 1.0 / 9.0
    np.testing.assert_allclose(blurred, expected, atol=1e-12)


@pytest.mark.parametrize("size", [4, 9, 16])
def test_convolution_matches_spatial_oracle(size: int, rng: np.random.Generator) -> None:
    psf = rng.random((3, 4))
    image = rng.standard_normal((size, size))
    op = ConvolutionOperator(psf, (size, size))

    expected = _spatial_convolution(image, psf)

    assert np.linalg.norm(op.apply(image) - expected) <= 1e-10 * np.linalg.norm(expected)


def test_symmetric_psf_is_self_adjoint(rng: np.random.Generator) -> None:
    op = ConvolutionOperator(gaussian_psf(1.5, 7), (16, 16))
    v = rng.standard_normal((16, 16))

    np.testing.assert_allclose(op.adjoint_apply(v), op.apply(v), atol=1e-12)


def test_adjoint_consistency_for_every_operator(rng: np.random.Generator) -> None:
    blur = ConvolutionOperator(rng.random((5, 3)), (16, 8))
    orthonormal = HaarDictionary(DictionaryKind.ORTHONORMAL_HAAR, (16, 8))
    undecimated = HaarDictionary(DictionaryKind.UNDECIMATED_HAAR, (16, 8), levels=2)
    operators = [
        IdentityOperator((5, 5), scale=2.0),
        blur,
        orthonormal,
        undecimated,
        CompositionOperator(blur, undecimated),
        BlockStackOperator([CompositionOperator(blur, orthonormal), orthonormal]),
    ]

    for op in operators:
        for _ in range(100):
            assert _adjoint_gap(op, rng) <= 1e-10, op


def test_orthonormal_haar_round_trip_and_isometry(rng: np.random.Generator) -> None:
    phi = HaarDictionary(DictionaryKind.ORTHONORMAL_HAAR, (16, 16))
    alpha = rng.standard_normal(phi.input_shape)

    image = phi.apply(alpha)

    np.testing.assert_allclose(phi.adjoint_apply(image), alpha, atol=1e-10)
    assert abs(np.linalg.norm(image) - np.linalg.norm(alpha)) <= 1e-10 * np.linalg.norm(alpha)


def test_orthonormal_haar_on_two_by_two_basis() -> None:
    phi = HaarDictionary(DictionaryKind.ORTHONORMAL_HAAR, (2, 2))

    for index in range(4):
        basis = np.zeros((2, 2))
        basis.flat[index] = 1.0
        np.testing.assert_allclose(phi.apply(phi.adjoint_apply(basis)), basis, atol=1e-12)


def test_undecimated_haar_frame_constant_and_unit_atoms(rng: np.random.Generator) -> None:
    phi = HaarDictionary(DictionaryKind.UNDECIMATED_HAAR, (8, 8), levels=1)

    frame = measure_frame(phi, DictionaryKind.UNDECIMATED_HAAR, samples=100)

    assert phi.input_shape == (4, 8, 8)
    assert frame.is_tight
    assert frame.frame_constant == pytest.approx(phi.analytic_frame_constant, rel=1e-10)
    for band in range(3):
        atom = np.zeros(phi.input_shape)
        atom[band, 3, 5] = 1.0
        assert np.linalg.norm(phi.apply(atom)) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize(
    ("kind", "levels"),
    [
        (DictionaryKind.IDENTITY, 1),
        (DictionaryKind.ORTHONORMAL_HAAR, 3),
        (DictionaryKind.UNDECIMATED_HAAR, 3),
    ],
)
def test_frame_identity_holds_on_a_hundred_random_images(kind: DictionaryKind, levels: int) -> None:
    phi = make_dictionary(kind, (16, 16), levels=levels)[0]

    frame = measure_frame(phi, kind, samples=100)

    assert frame.is_tight
    assert frame.max_relative_error <= 1e-10


def test_make_dictionary_reports_frame_constants() -> None:
    _, orthonormal = make_dictionary("orthonormal-haar", (16, 16))
    _, undecimated = make_dictionary("undecimated-haar", (16, 16), levels=3)
    identity_op, identity = make_dictionary("identity", (6, 10))

    assert orthonormal.frame_constant == pytest.approx(1.0, rel=1e-10)
    assert undecimated.frame_constant == pytest.approx(4.0, rel=1e-10)
    assert identity.frame_constant == pytest.approx(1.0, rel=1e-12)
    assert identity_op.input_shape == (6, 10)


def test_haar_rejects_non_power_of_two_and_excess_depth() -> None:
    with pytest.raises(ValueError):
        make_dictionary("orthonormal-haar", (12, 16))
    with pytest.raises(ValueError):
        make_dictionary("undecimated-haar", (8, 8), levels=4)


def test_dimension_mismatch_is_reported() -> None:
    op = ConvolutionOperator(box_psf(3), (8, 8))

    with pytest.raises(ValueError, match="Dimension mismatch"):
        op.apply(np.ones(63))


def test_flat_vectors_are_accepted(rng: np.random.Generator) -> None:
    op = ConvolutionOperator(box_psf(3), (8, 8))
    image = rng.standard_normal((8, 8))

    np.testing.assert_allclose(op.apply(image.ravel()), op.apply(image))


@pytest.mark.parametrize(
    "psf",
    [np.ones((9, 9)), np.zeros((3, 3)), -np.ones((3, 3)), np.full((3, 3), np.nan), np.ones(3)],
)
def test_invalid_psfs_are_rejected(psf: np.ndarray) -> None:
    with pytest.raises(ValueError):
        ConvolutionOperator(psf, (8, 8))


def test_psf_is_normalised_to_unit_sum() -> None:
    op = ConvolutionOperator(np.full((3, 3), 2.0), (8, 8))

    assert op.psf.sum() == pytest.approx(1.0)
    assert op.exact_norm == pytest.approx(1.0)


def test_spectral_norm_of_identity_and_scaling() -> None:
    assert estimate_spectral_norm(IdentityOperator((4, 4))).value == pytest.approx(1.0, rel=1e-6)
    assert float(estimate_spectral_norm(IdentityOperator((4, 4), scale=2.0))) == pytest.approx(2.0, rel=1e-6)


@pytest.mark.parametrize("psf", [delta_psf(), box_psf(3), gaussian_psf(1.5, 7)])
def test_spectral_norm_of_normalised_blur_is_one(psf: np.ndarray) -> None:
    op = ConvolutionOperator(psf, (32, 32))

    estimate = estimate_spectral_norm(op, tol=1e-6)

    assert estimate.converged
    assert estimate.value == pytest.approx(op.exact_norm, rel=1e-4)
    assert estimate.value <= op.exact_norm * (1.0 + 1e-12)


def test_spectral_norm_resolves_a_clustered_top_of_spectrum() -> None:
    op = ConvolutionOperator(box_psf(3), (64, 64))

    estimate = estimate_spectral_norm(op, tol=1e-6, max_iters=5000)

    assert estimate.converged
    assert estimate.value <= op.exact_norm * (1.0 + 1e-12)
    assert (op.exact_norm - estimate.value) / op.exact_norm <= 1e-6


def test_spectral_norm_warns_when_capped(caplog: pytest.LogCaptureFixture) -> None:
    op = ConvolutionOperator(gaussian_psf(1.5, 7), (32, 32))
    caplog.set_level(logging.WARNING, logger="src.recon.linops")

    estimate = estimate_spectral_norm(op, tol=1e-12, max_iters=2)

    assert not estimate.converged
    assert estimate.iterations == 2
    assert 0.0 < estimate.value <= op.exact_norm * (1.0 + 1e-12)
    assert "did not converge" in caplog.text


def test_block_stack_splits_into_blocks(rng: np.random.Generator) -> None:
    first = IdentityOperator((2, 3), scale=2.0)
    second = IdentityOperator((2, 3), scale=-1.0)
    stack = BlockStackOperator([first, second])
    v = rng.standard_normal((2, 3))

    top, bottom = stack.split(stack.apply(v))

    assert stack.output_shape == (12,)
    np.testing.assert_allclose(top, 2.0 * v)
    np.testing.assert_allclose(bottom, -v)


def test_parse_psf_spec_variants() -> None:
    gaussian = parse_psf_spec("gaussian:sigma=1.5,size=7")
    box = parse_psf_spec("box:size=3")

    assert gaussian.shape == (7, 7)
    assert gaussian.sum() == pytest.approx(1.0)
    assert gaussian[3, 3] == gaussian.max()
    np.testing.assert_allclose(box, np.full((3, 3), 1.0 / 9.0))
    np.testing.assert_array_equal(parse_psf_spec("delta"), [[1.0]])


@pytest.mark.parametrize("text", ["airy:size=3", "gaussian:size=5", "gaussian:sigma=abc", "box:3"])
def test_parse_psf_spec_rejects_malformed_text(text: str) -> None:
    with pytest.raises(ValueError):
        parse_psf_spec(text)
