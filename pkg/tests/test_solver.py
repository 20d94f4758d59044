import dataclasses
import logging

import numpy as np
import pytest

from exposure_enhancement.exceptions import (
    ConvergenceError,
    InvalidParameter,
    InvalidWeights,
    OutOfRangeValue,
)
from exposure_enhancement.illumination import (
    GammaParams,
    box_lower_bound,
    initial_illumination,
    recover,
    s_min_map,
)
from exposure_enhancement.raster import RgbImage, ScalarField
from exposure_enhancement.rtv import RtvWeights, rtv_weights
from exposure_enhancement.solver import (
    LinearSolver,
    PairMasks,
    SolverConfig,
    assemble_system,
    count_edge_violations,
    enforce_detail_consistency,
    estimate_illumination,
    flat_components,
    flat_edge_masks,
    project_box,
    solve_quadratic,
)


def _random_instance(seed, config=SolverConfig(), size=8):
    rng = np.random.default_rng(seed)
    S_prev = ScalarField(rng.uniform(0.1, 1.0, (size, size)))
    S_init = ScalarField(rng.uniform(0.0, 1.0, (size, size)))
    masks = flat_edge_masks(S_init, config.tau)
    weights = rtv_weights(S_prev, config.rtv)
    return S_prev, S_init, weights, masks


def _random_system(seed, config=SolverConfig()):
    S_prev, S_init, weights, masks = _random_instance(seed, config)
    return assemble_system(S_prev, S_init, weights, masks, config)


def quadratic_form_matrix(weights, masks, config, shape):
    """
    Matrix of the quadratic objective with a zero data target, read off
    the energy by second differences on the unit vectors.
    """
    ax, ay = weights.products()
    pair_x = config.lam * ax[:, :-1] * np.where(masks.flat_x, config.w_flat, 1.0)
    pair_y = config.lam * ay[:-1, :] * np.where(masks.flat_y, config.w_flat, 1.0)

    def energy(values):
        S = values.reshape(shape)
        return (
            np.sum(S ** 2)
            + np.sum(pair_x * np.diff(S, axis=1) ** 2)
            + np.sum(pair_y * np.diff(S, axis=0) ** 2)
        )

    size = shape[0] * shape[1]
    basis = np.eye(size)
    matrix = np.empty((size, size))
    for i in range(size):
        for j in range(size):
            matrix[i, j] = (energy(basis[i] + basis[j]) - energy(basis[i]) - energy(basis[j])) / 2.0
    return matrix


def test_solver_config_validation():
    with pytest.raises(InvalidParameter):
        SolverConfig(lam=0.0)
    with pytest.raises(InvalidParameter):
        SolverConfig(tau=-1.0)
    with pytest.raises(InvalidParameter):
        SolverConfig(delta_slack=0.5)
    with pytest.raises(InvalidParameter):
        SolverConfig(linear_solver="lu")


def test_flat_edge_masks_threshold_is_inclusive():
    I_lum = ScalarField(np.array([[0.0, 1e-5, 1.0], [0.0, 0.5, 1.0]]))

    masks = flat_edge_masks(I_lum, 1e-5)

    assert masks.flat_x.shape == (2, 2)
    assert masks.flat_y.shape == (1, 3)
    assert masks.flat_x.tolist() == [[True, False], [False, False]]
    assert masks.flat_y.tolist() == [[True, False, True]]
    assert np.array_equal(masks.edge_x, ~masks.flat_x)
    assert masks.edge_count == 4


def test_flat_components_follow_flat_pairs():
    I_lum = ScalarField(np.array([[0.2, 0.2, 0.9], [0.2, 0.5, 0.9]]))
    labels, count = flat_components(flat_edge_masks(I_lum, 1e-5), I_lum.shape)

    assert count == 3
    assert labels[0, 0] == labels[0, 1] == labels[1, 0]
    assert labels[0, 2] == labels[1, 2]
    assert len({labels[0, 0], labels[1, 1], labels[0, 2]}) == 3


def test_assembled_matrix_is_symmetric_with_unit_diagonal_floor():
    system = _random_system(0)
    matrix = system.matrix

    assert abs(matrix - matrix.T).max() == 0.0
    assert np.all(matrix.diagonal() >= 1.0)
    assert system.rhs.shape == (64,)


def test_assembled_matrix_without_smoothness_is_identity():
    config = SolverConfig(exposure_constraint=False)
    system = _random_system(1, config)
    assert np.allclose(system.matrix.toarray(), np.eye(64))


@pytest.mark.parametrize("seed", range(3))
def test_assembled_matrix_matches_quadratic_form(seed):
    config = SolverConfig()
    S_prev, S_init, weights, masks = _random_instance(seed, config, size=6)

    matrix = assemble_system(S_prev, S_init, weights, masks, config).matrix.toarray()
    expected = quadratic_form_matrix(weights, masks, config, (6, 6))

    assert np.max(np.abs(matrix - expected)) <= 1e-12 * np.max(np.abs(expected))
    assert np.array_equal(matrix, matrix.T)


def test_assemble_rejects_nonpositive_weights():
    S = ScalarField.constant(3, 3, 0.5)
    weights = rtv_weights(S, SolverConfig().rtv)
    bad = RtvWeights(weights.ux, ScalarField(-weights.wx.data), weights.uy, weights.wy)
    with pytest.raises(InvalidWeights):
        assemble_system(S, S, bad, flat_edge_masks(S, 1e-5), SolverConfig())


@pytest.mark.parametrize("seed", range(10))
def test_conjugate_gradient_matches_dense_solve(seed):
    config = SolverConfig(cg_tol=1e-10, cg_max_iter=1000)
    system = _random_system(seed, config)
    dense = np.linalg.solve(system.matrix.toarray(), system.rhs)

    solution = solve_quadratic(system, LinearSolver.CG)

    assert np.max(np.abs(solution.data.ravel() - dense)) < 1e-6
    assert system.relative_residual(solution.data.ravel()) <= 1e-9


def test_direct_solve_matches_dense_solve():
    system = _random_system(42)
    dense = np.linalg.solve(system.matrix.toarray(), system.rhs)
    solution = solve_quadratic(system, "direct")
    assert np.allclose(solution.data.ravel(), dense, atol=1e-10)


def test_conjugate_gradient_reports_non_convergence():
    config = SolverConfig(cg_tol=1e-14, cg_max_iter=1)
    system = _random_system(5, config)
    with pytest.raises(ConvergenceError) as excinfo:
        solve_quadratic(system)
    assert excinfo.value.iterations >= 1
    assert excinfo.value.residual > 0


def test_project_box():
    S = ScalarField(np.array([[0.05, 0.5, 1.2]]))
    S_min = ScalarField(np.array([[0.1, 0.1, 0.1]]))
    assert project_box(S, S_min).data.tolist() == [[0.1, 0.5, 1.0]]


def test_project_box_rejects_empty_box():
    with pytest.raises(OutOfRangeValue):
        project_box(ScalarField.constant(1, 1, 0.5), ScalarField.constant(1, 1, 1.5))


def test_detail_projection_fixes_single_edge():
    I_lum = ScalarField(np.array([[0.2, 0.8]]))
    S = ScalarField(np.array([[0.3, 1.0]]))
    S_min = ScalarField.constant(2, 1, 0.01)
    config = SolverConfig()

    projected, violations = enforce_detail_consistency(
        S, I_lum, S_min, flat_edge_masks(I_lum, config.tau), config
    )

    expected = 0.8 / (0.2 / 0.3 + (1.0 - config.delta_slack) * 0.6)
    assert projected.data[0, 0] == 0.3
    assert projected.data[0, 1] == pytest.approx(expected, abs=1e-6)
    assert violations == 0


@pytest.mark.parametrize("seed", range(5))
def test_detail_projection_clears_every_edge(seed):
    rng = np.random.default_rng(seed)
    I_lum = ScalarField(rng.uniform(0.05, 0.3, (16, 16)))
    S = ScalarField(rng.uniform(0.3, 1.0, (16, 16)))
    S_min = ScalarField.constant(16, 16, 0.01)
    config = SolverConfig()
    masks = flat_edge_masks(I_lum, config.tau)
    assert count_edge_violations(S, I_lum, masks, config.delta_slack) > 0

    projected, violations = enforce_detail_consistency(S, I_lum, S_min, masks, config)

    assert violations == 0
    assert count_edge_violations(projected, I_lum, masks, config.delta_slack) == 0
    assert np.all(projected.data >= S_min.data)
    assert np.all(projected.data <= 1.0)


def test_detail_projection_raises_dark_side_when_box_binds():
    I_lum = ScalarField(np.array([[0.4, 0.5]]))
    S = ScalarField(np.array([[0.4, 0.5]]))
    S_min = ScalarField(np.array([[0.4, 0.5]]))
    config = SolverConfig()

    projected, violations = enforce_detail_consistency(
        S, I_lum, S_min, flat_edge_masks(I_lum, config.tau), config
    )

    expected = 0.4 / (1.0 - (1.0 - config.delta_slack) * 0.1)
    assert projected.data[0, 1] == 0.5
    assert projected.data[0, 0] == pytest.approx(expected, abs=1e-6)
    assert violations == 0


def test_detail_projection_averages_flat_regions():
    I_lum = ScalarField.constant(3, 1, 0.4)
    S = ScalarField(np.array([[0.2, 0.4, 0.6]]))
    S_min = ScalarField.constant(3, 1, 0.01)
    config = SolverConfig()

    projected, _ = enforce_detail_consistency(
        S, I_lum, S_min, flat_edge_masks(I_lum, config.tau), config
    )

    assert np.allclose(projected.data, 0.4)


def test_detail_projection_keeps_flat_regions_in_box():
    I_lum = ScalarField.constant(2, 1, 0.4)
    S = ScalarField(np.array([[0.2, 0.2]]))
    S_min = ScalarField(np.array([[0.01, 0.5]]))
    config = SolverConfig()

    projected, _ = enforce_detail_consistency(
        S, I_lum, S_min, flat_edge_masks(I_lum, config.tau), config
    )

    assert projected.data.tolist() == [[0.5, 0.5]]


def test_count_edge_violations():
    I_lum = ScalarField(np.array([[0.2, 0.8]]))
    masks = flat_edge_masks(I_lum, 1e-5)
    assert count_edge_violations(ScalarField(np.array([[0.3, 1.0]])), I_lum, masks, 1e-3) == 1
    assert count_edge_violations(ScalarField(np.array([[0.5, 0.5]])), I_lum, masks, 1e-3) == 0


def test_estimate_illumination_of_white_image():
    white = RgbImage(np.ones((6, 5, 3)))

    S, report = estimate_illumination(white)

    assert np.all(S.data == 1.0)
    assert report.outer_iterations == 1
    assert report.iterate_changes == [0.0]


@pytest.mark.parametrize("size, seed", [(48, 0), (48, 4), (64, 1)])
def test_estimate_illumination_invariants(make_dimmed, size, seed):
    img = make_dimmed(size, size, seed=seed)
    config = SolverConfig()
    S, report = estimate_illumination(img, config)
    S_min = s_min_map(img, config.gamma)

    assert np.all(S.data >= S_min.data)
    assert np.all(S.data <= 1.0)
    assert 1 <= report.outer_iterations <= config.max_outer
    assert len(report.objective_values) == report.outer_iterations
    assert report.iterate_changes[-1] < config.conv_tol
    assert report.residual_edge_violations <= 1e-3 * report.edge_pairs
    masks = flat_edge_masks(initial_illumination(img), config.tau)
    assert count_edge_violations(S, initial_illumination(img), masks, config.delta_slack) == (
        report.residual_edge_violations
    )

    enhanced, clamped = recover(img, S, config.gamma)
    assert clamped == 0
    assert np.all(enhanced.data >= img.data - 1e-6)


@pytest.mark.parametrize("quantized", [False, True])
def test_default_solver_converges_without_fallback(make_dimmed, quantized):
    img = make_dimmed(64, 64, seed=0)
    if quantized:
        img = RgbImage(np.round(img.data * 255.0) / 255.0)

    S, report = estimate_illumination(img, SolverConfig(cg_fallback=False))

    assert report.outer_iterations >= 1
    assert np.all(S.data <= 1.0)


def test_single_iteration_without_detail_projection_matches_dense_solve(make_dimmed):
    img = make_dimmed(8, 8, seed=6)
    config = SolverConfig(max_outer=1, detail_constraint=False, linear_solver="direct")
    S_init = initial_illumination(img)
    S_min = box_lower_bound(img, config.gamma)
    weights = rtv_weights(project_box(S_init, S_min), config.rtv)
    masks = flat_edge_masks(S_init, config.tau)

    dense = quadratic_form_matrix(weights, masks, config, S_init.shape)
    expected = np.clip(np.linalg.solve(dense, S_init.data.ravel()), S_min.data.ravel(), 1.0)
    S, report = estimate_illumination(img, config)

    assert report.outer_iterations == 1
    assert np.max(np.abs(S.data.ravel() - expected)) < 1e-6


def test_estimate_illumination_makes_flat_regions_constant(make_gray):
    values = np.full((12, 12), 0.1)
    values[:, 6:] = 0.4
    img = make_gray(values)
    config = SolverConfig()

    S, _ = estimate_illumination(img, config)
    masks = flat_edge_masks(initial_illumination(img), config.tau)

    assert np.all(np.diff(S.data, axis=1)[masks.flat_x] == 0.0)
    assert np.all(np.diff(S.data, axis=0)[masks.flat_y] == 0.0)


def test_estimate_illumination_without_smoothness_or_detail(dimmed_image):
    config = SolverConfig(exposure_constraint=False, detail_constraint=False)

    S, _ = estimate_illumination(dimmed_image, config)

    S_init = initial_illumination(dimmed_image).data
    S_min = s_min_map(dimmed_image, config.gamma).data
    assert np.allclose(S.data, np.clip(S_init, S_min, 1.0), atol=1e-12)


def test_estimate_illumination_without_color_constraint(dimmed_image):
    config = SolverConfig(color_constraint=False)
    S, _ = estimate_illumination(dimmed_image, config)
    assert np.all(S.data >= config.gamma.s_floor)


def test_direct_solver_agrees_with_cg(make_dimmed):
    img = make_dimmed(12, 12, seed=3)
    S_cg, _ = estimate_illumination(img, SolverConfig(cg_tol=1e-10, cg_max_iter=2000))
    S_direct, _ = estimate_illumination(img, SolverConfig(linear_solver="direct"))
    assert np.max(np.abs(S_cg.data - S_direct.data)) < 1e-4


def test_cg_failure_falls_back_to_direct_solve(make_dimmed, caplog):
    img = make_dimmed(12, 12, seed=4)
    config = SolverConfig(cg_tol=1e-14, cg_max_iter=1, max_outer=2)

    with caplog.at_level(logging.WARNING):
        S, report = estimate_illumination(img, config)

    assert "switching to a direct solve" in caplog.text
    assert report.outer_iterations >= 1
    assert np.all(S.data <= 1.0)


def test_cg_failure_without_fallback_raises(make_dimmed):
    img = make_dimmed(12, 12, seed=4)
    config = SolverConfig(cg_tol=1e-14, cg_max_iter=1, cg_fallback=False)
    with pytest.raises(ConvergenceError):
        estimate_illumination(img, config)


def test_solve_report_as_dict():
    white = RgbImage(np.ones((2, 2, 3)))
    _, report = estimate_illumination(white)
    values = report.as_dict()
    assert values["outer_iterations"] == 1
    assert values["residual_edge_violations"] == 0
    assert values["clamped_pixels"] == 0


def test_pair_masks_are_complementary():
    masks = PairMasks(np.array([[True, False]]), np.zeros((0, 3), dtype=bool))
    assert masks.edge_x.tolist() == [[False, True]]
    assert masks.edge_count == 1


def test_estimate_illumination_respects_gamma_bound(dimmed_image):
    stronger = dataclasses.replace(SolverConfig(), gamma=GammaParams(gamma=0.4))
    S, _ = estimate_illumination(dimmed_image, stronger)
    assert np.all(S.data >= s_min_map(dimmed_image, stronger.gamma).data)
