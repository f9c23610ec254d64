from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from src.recon.linops import ConvolutionOperator, delta_psf, gaussian_psf, make_dictionary  # noqa: E402
from src.recon.objective import (  # noqa: E402
    ExtendedReal,
    InfeasibilityReason,
    ProblemInstance,
    eval_fidelity,
    eval_objective,
    eval_penalty,
    evaluate_terms,
    mae,
)
from src.recon.prox import PenaltySpec  # noqa: E402


def _instance(counts: np.ndarray, gamma: float = 0.1, psf: np.ndarray | None = None) -> ProblemInstance:
    shape = counts.shape
    dictionary, frame = make_dictionary("orthonormal-haar", shape)
    blur = ConvolutionOperator(delta_psf() if psf is None else psf, shape)
    return ProblemInstance(counts=counts, blur=blur, dictionary=dictionary, frame=frame, gamma=gamma)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(99)


def test_fidelity_at_the_counts() -> None:
    y = np.array([1.0, 4.0, 9.0])

    value = eval_fidelity(y, y)

    assert value.is_finite
    assert float(value) == pytest.approx(float(np.sum(y - y * np.log(y))))


def test_fidelity_domain_cases() -> None:
    negative = eval_fidelity(np.array([1.0, -0.1]), np.array([1.0, 1.0]))
    zero_with_counts = eval_fidelity(np.array([0.0, 1.0]), np.array([2.0, 1.0]))
    zero_without_counts = eval_fidelity(np.zeros(4), np.zeros(4))

    assert negative.value == math.inf
    assert negative.reason is InfeasibilityReason.NEGATIVE_INTENSITY
    assert zero_with_counts.value == math.inf
    assert zero_with_counts.reason is InfeasibilityReason.ZERO_INTENSITY_WITH_COUNTS
    assert float(zero_without_counts) == 0.0


def test_fidelity_is_minimised_at_the_counts(rng: np.random.Generator) -> None:
    y = rng.integers(1, 30, 50).astype(float)
    best = float(eval_fidelity(y, y))

    for _ in range(100):
        direction = rng.standard_normal(50)
        perturbed = y + 1e-2 * direction
        assert float(eval_fidelity(perturbed, y)) >= best


def test_fidelity_is_strictly_convex_with_positive_counts(rng: np.random.Generator) -> None:
    y = rng.integers(1, 30, 20).astype(float)
    first = y * rng.uniform(0.5, 1.5, 20)
    second = y * rng.uniform(0.5, 1.5, 20)

    midpoint = float(eval_fidelity(0.5 * (first + second), y))
    average = 0.5 * (float(eval_fidelity(first, y)) + float(eval_fidelity(second, y)))

    assert midpoint < average - 1e-12


def test_extended_real_rejects_nan_and_negative_infinity() -> None:
    with pytest.raises(ValueError):
        ExtendedReal(float("nan"))
    with pytest.raises(ValueError):
        ExtendedReal(-math.inf)


def test_penalty_examples() -> None:
    spec = PenaltySpec.l1()
    alpha = np.array([1.0, -2.0, 3.0])

    assert eval_penalty(alpha, spec) == 6.0
    assert eval_penalty(np.zeros(3), spec) == 0.0
    assert eval_penalty(2 * alpha, spec) == 2 * eval_penalty(alpha, spec)


def test_mae_examples() -> None:
    image = np.arange(6.0).reshape(2, 3)

    assert mae(image, image) == 0.0
    assert mae(image + 1.0, image) == 1.0
    assert mae(np.array([0.0, 0.0]), np.array([1.0, 3.0])) == 2.0
    with pytest.raises(ValueError):
        mae(np.zeros(3), np.zeros(4))


def test_zero_coefficients_are_infeasible_with_positive_counts() -> None:
    inst = _instance(np.full((4, 4), 3))

    value = eval_objective(np.zeros((4, 4)), inst)

    assert value.value == math.inf
    assert value.reason is InfeasibilityReason.ZERO_INTENSITY_WITH_COUNTS


def test_negative_pixel_is_infeasible() -> None:
    inst = _instance(np.full((4, 4), 3))
    image = np.ones((4, 4))
    image[1, 2] = -1.0

    value = eval_objective(inst.dictionary.adjoint_apply(image), inst)

    assert value.reason is InfeasibilityReason.NEGATIVE_PIXEL


def test_objective_reduces_to_fidelity_for_tiny_gamma(rng: np.random.Generator) -> None:
    x_true = rng.uniform(1.0, 20.0, (8, 8))
    counts = rng.poisson(x_true)
    inst = _instance(counts, gamma=1e-12)

    value = eval_objective(inst.dictionary.adjoint_apply(x_true), inst)

    assert float(value) == pytest.approx(float(eval_fidelity(x_true, counts)), rel=1e-9)


def test_objective_is_midpoint_convex(rng: np.random.Generator) -> None:
    counts = rng.poisson(5.0, (8, 8))
    inst = _instance(counts, gamma=0.3, psf=gaussian_psf(1.0, 3))

    for _ in range(20):
        first = inst.dictionary.adjoint_apply(rng.uniform(0.1, 10.0, (8, 8)))
        second = inst.dictionary.adjoint_apply(rng.uniform(0.1, 10.0, (8, 8)))
        midpoint = float(eval_objective(0.5 * (first + second), inst))
        average = 0.5 * (float(eval_objective(first, inst)) + float(eval_objective(second, inst)))
        assert midpoint <= average + 1e-9


def test_evaluate_terms_uses_the_positive_shadow() -> None:
    counts = np.full((4, 4), 2)
    inst = _instance(counts, gamma=0.5)
    image = np.full((4, 4), 2.0)
    image[0, 0] = -1.0
    alpha = inst.dictionary.adjoint_apply(image)

    terms = evaluate_terms(alpha, inst, x_true=np.full((4, 4), 2.0))

    shadow = np.maximum(image, 0.0)
    assert terms.pos_violation == pytest.approx(1.0)
    assert terms.fidelity.value == math.inf
    assert terms.objective.reason is InfeasibilityReason.ZERO_INTENSITY_WITH_COUNTS
    assert terms.penalty == pytest.approx(eval_penalty(alpha, inst.penalty))
    assert terms.mae == pytest.approx(mae(shadow, np.full((4, 4), 2.0)))


def test_problem_instance_validation() -> None:
    counts = np.full((4, 4), 3)

    with pytest.raises(ValueError):
        _instance(counts, gamma=0.0)
    with pytest.raises(ValueError):
        _instance(np.full((4, 4), -1))
    with pytest.raises(ValueError):
        _instance(np.full((4, 4), 1.5))
    with pytest.raises(ValueError):
        _instance(np.full((4, 4), np.nan))

    dictionary, frame = make_dictionary("orthonormal-haar", (4, 4))
    with pytest.raises(ValueError):
        ProblemInstance(
            counts=np.ones((8, 8)),
            blur=ConvolutionOperator(delta_psf(), (4, 4)),
            dictionary=dictionary,
            frame=frame,
            gamma=1.0,
        )


def test_problem_instance_accepts_flat_counts() -> None:
    dictionary, frame = make_dictionary("orthonormal-haar", (4, 4))
    inst = ProblemInstance(
        counts=np.arange(16),
        blur=ConvolutionOperator(delta_psf(), (4, 4)),
        dictionary=dictionary,
        frame=frame,
        gamma=1.0,
    )

    assert inst.counts.shape == (4, 4)
    assert inst.counts.dtype == np.int64
    assert inst.image_shape == (4, 4)
