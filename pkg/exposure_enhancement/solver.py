import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numba import njit
from scipy.sparse import coo_matrix, csr_matrix, diags, identity
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, cg, spilu, spsolve

from typing import Dict, List, Tuple, Union

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
)
from exposure_enhancement.raster import RgbImage, ScalarField, require_same_shape
from exposure_enhancement.rtv import RtvParams, RtvWeights, rtv_energy, rtv_weights


BISECTION_STEPS = 30

# Incomplete LU settings of the conjugate gradient preconditioner
ILU_DROP_TOL = 1e-8
ILU_FILL_FACTOR = 20


class LinearSolver(Enum):
    """
    LinearSolver selects how each quadratic subproblem is solved.
    """

    CG = "cg"
    DIRECT = "direct"


@dataclass(frozen=True)
class SolverConfig:
    """
    Settings of the constrained illumination estimation.

    Args:
      lam (float): smoothness weight.
      tau (float): luminance step above which a pixel pair is an edge.
      conv_tol (float): outer loop stops once the largest per-pixel change
        falls below this.
      max_outer (int): outer iteration cap.
      cg_tol (float): relative residual target of the linear solve.
      cg_max_iter (int): conjugate gradient iteration cap.
      w_flat (float): multiplier on the smoothness weight of flat pairs.
      delta_slack (float): edges need a gradient ratio of at least
        1 - delta_slack.
      max_projection_passes (int): forward/backward sweep passes of the
        detail projection.
      rtv (RtvParams): smoothness measure settings.
      gamma (GammaParams): gamma and illumination floor.
      linear_solver (str): "cg" or "direct".
      cg_fallback (bool): on a CG failure, switch to a direct solve instead
        of raising.
      color_constraint (bool): keep the per-pixel lower bound of the box;
        when off only `s_floor` bounds the illumination from below.
      detail_constraint (bool): run the detail projection.
      exposure_constraint (bool): include the smoothness term.
    """

    lam: float = 0.8
    tau: float = 1e-5
    conv_tol: float = 1e-3
    max_outer: int = 20
    cg_tol: float = 1e-5
    cg_max_iter: int = 500
    w_flat: float = 1e3
    delta_slack: float = 1e-3
    max_projection_passes: int = 5
    rtv: RtvParams = field(default_factory=RtvParams)
    gamma: GammaParams = field(default_factory=GammaParams)
    linear_solver: str = "cg"
    cg_fallback: bool = True
    color_constraint: bool = True
    detail_constraint: bool = True
    exposure_constraint: bool = True

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise InvalidParameter("lambda must be positive")
        if self.tau <= 0:
            raise InvalidParameter("tau must be positive")
        if self.conv_tol <= 0:
            raise InvalidParameter("conv_tol must be positive")
        if self.max_outer < 1:
            raise InvalidParameter("max_outer must be at least 1")
        if self.cg_tol <= 0 or self.cg_max_iter < 1:
            raise InvalidParameter("cg_tol must be positive and cg_max_iter at least 1")
        if self.w_flat <= 0:
            raise InvalidParameter("w_flat must be positive")
        if not 0.0 <= self.delta_slack <= 0.1:
            raise InvalidParameter("delta_slack must be in [0, 0.1]")
        if self.max_projection_passes < 1:
            raise InvalidParameter("max_projection_passes must be at least 1")
        try:
            LinearSolver(self.linear_solver)
        except ValueError:
            raise InvalidParameter(
                "linear_solver must be one of {}".format([m.value for m in LinearSolver])
            )


@dataclass
class SolveReport:
    """
    Convergence telemetry of one illumination estimation.
    """

    outer_iterations: int = 0
    iterate_changes: List[float] = field(default_factory=list)
    objective_values: List[float] = field(default_factory=list)
    residual_edge_violations: int = 0
    edge_pairs: int = 0
    clamped_pixels: int = 0

    def record(self, change: float, objective: float, violations: int) -> None:
        self.outer_iterations += 1
        self.iterate_changes.append(change)
        self.objective_values.append(objective)
        self.residual_edge_violations = violations

    def as_dict(self) -> Dict[str, Union[int, float]]:
        final_change = self.iterate_changes[-1] if self.iterate_changes else 0.0
        return {
            "outer_iterations": self.outer_iterations,
            "final_change": final_change,
            "residual_edge_violations": self.residual_edge_violations,
            "clamped_pixels": self.clamped_pixels,
        }


class PairMasks:
    """
    Flat/edge classification of neighbouring pixel pairs. The x masks have
    shape (H, W-1) and entry [y, x] is the pair (x, y) -> (x+1, y); the y
    masks have shape (H-1, W). Flat and edge masks are complementary.
    """

    def __init__(self, flat_x: np.ndarray, flat_y: np.ndarray) -> None:
        self.flat_x = flat_x
        self.flat_y = flat_y

    @property
    def edge_x(self) -> np.ndarray:
        return ~self.flat_x

    @property
    def edge_y(self) -> np.ndarray:
        return ~self.flat_y

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(self.edge_x) + np.count_nonzero(self.edge_y))


class LinearSystem:
    """
    Normal equations A S = b of one lagged quadratic subproblem, along with
    the warm start and stopping rule for the iterative solve.
    """

    def __init__(
        self,
        matrix: csr_matrix,
        rhs: np.ndarray,
        x0: np.ndarray,
        shape: Tuple[int, int],
        cg_tol: float = 1e-5,
        cg_max_iter: int = 500,
    ) -> None:
        self.matrix = matrix
        self.rhs = rhs
        self.x0 = x0
        self.shape = shape
        self.cg_tol = cg_tol
        self.cg_max_iter = cg_max_iter

    def relative_residual(self, x: np.ndarray) -> float:
        residual = np.linalg.norm(self.rhs - self.matrix @ x)
        scale = np.linalg.norm(self.rhs)
        return float(residual / scale) if scale > 0 else float(residual)

    def __str__(self) -> str:
        return "<LinearSystem {} unknowns, {} nonzeros>".format(
            self.matrix.shape[0], self.matrix.nnz
        )


def flat_edge_masks(I_lum: ScalarField, tau: float) -> PairMasks:
    """
    Classify each neighbouring pair as flat (|dI| <= tau, inclusive) or
    edge.
    """
    values = I_lum.data
    flat_x = np.abs(np.diff(values, axis=1)) <= tau
    flat_y = np.abs(np.diff(values, axis=0)) <= tau
    return PairMasks(flat_x, flat_y)


def _pair_indices(height: int, width: int):
    index = np.arange(height * width).reshape(height, width)
    return (index[:, :-1], index[:, 1:]), (index[:-1, :], index[1:, :])


def assemble_system(
    S_prev: ScalarField,
    S_init: ScalarField,
    weights: RtvWeights,
    masks: PairMasks,
    config: SolverConfig,
) -> LinearSystem:
    """
    Build the normal equations of

      min_S sum (S - S')^2 + lam * sum a^x (dx S)^2 + lam * sum a^y (dy S)^2

    where a = u * w is lagged from `S_prev` and multiplied by `w_flat` on
    flat pairs. The matrix is the identity plus a weighted graph Laplacian
    on the 4-neighbour grid, hence symmetric positive definite.

    Args:
      S_prev (ScalarField): previous iterate, used as warm start.
      S_init (ScalarField): initial illumination S' (the data term target).
      weights (RtvWeights): weights computed from `S_prev`.
      masks (PairMasks): flat/edge classification of the input.
      config (SolverConfig): solver settings.

    Returns:
      system (LinearSystem): sparse system and warm start.
    """
    require_same_shape(S_prev.shape, S_init.shape, "iterate and initial illumination")
    require_same_shape(S_prev.shape, weights.ux.shape, "iterate and weights")
    height, width = S_prev.shape
    size = height * width

    ax, ay = weights.products()
    for product in (ax, ay):
        if not np.all(np.isfinite(product)) or product.min() <= 0:
            raise InvalidWeights("smoothness weights must be positive and finite")

    lam = config.lam if config.exposure_constraint else 0.0
    pair_weight_x = lam * ax[:, :-1] * np.where(masks.flat_x, config.w_flat, 1.0)
    pair_weight_y = lam * ay[:-1, :] * np.where(masks.flat_y, config.w_flat, 1.0)

    (first_x, second_x), (first_y, second_y) = _pair_indices(height, width)
    first = np.concatenate([first_x.ravel(), first_y.ravel()])
    second = np.concatenate([second_x.ravel(), second_y.ravel()])
    pair_weight = np.concatenate([pair_weight_x.ravel(), pair_weight_y.ravel()])

    rows = np.concatenate([first, second, first, second])
    cols = np.concatenate([first, second, second, first])
    values = np.concatenate([pair_weight, pair_weight, -pair_weight, -pair_weight])
    laplacian = coo_matrix((values, (rows, cols)), shape=(size, size)).tocsr()
    matrix = (identity(size, format="csr") + laplacian).tocsr()

    return LinearSystem(
        matrix,
        S_init.data.ravel().copy(),
        S_prev.data.ravel().copy(),
        (height, width),
        config.cg_tol,
        config.cg_max_iter,
    )


def ilu_preconditioner(matrix: csr_matrix) -> LinearOperator:
    """
    Operator applying an incomplete LU factorization of `matrix` as an
    approximate inverse. Flat pairs carry weights up to `w_flat` times those
    of edge pairs, so the drop tolerance keeps the weak couplings next to
    them. If the factorization fails the Jacobi preconditioner is used.
    """
    try:
        factor = spilu(matrix.tocsc(), drop_tol=ILU_DROP_TOL, fill_factor=ILU_FILL_FACTOR)
    except RuntimeError as e:
        logging.debug(f"incomplete LU failed ({e}), using the diagonal")
        return LinearOperator(matrix.shape, matvec=diags(1.0 / matrix.diagonal()).dot)
    return LinearOperator(matrix.shape, matvec=factor.solve)


def solve_quadratic(
    system: LinearSystem, method: LinearSolver = LinearSolver.CG
) -> ScalarField:
    """
    Solve the quadratic subproblem. The default is conjugate gradient
    preconditioned with an incomplete LU factorization and warm-started from
    the previous iterate; it raises `ConvergenceError` if the relative
    residual does not reach `cg_tol` within `cg_max_iter` iterations.
    """
    method = LinearSolver(method)
    if method is LinearSolver.DIRECT:
        solution = spsolve(system.matrix.tocsc(), system.rhs)
        return ScalarField(np.asarray(solution).reshape(system.shape))

    preconditioner = ilu_preconditioner(system.matrix)
    iterations = [0]

    def count(_: np.ndarray) -> None:
        iterations[0] += 1

    solution, info = cg(
        system.matrix,
        system.rhs,
        x0=system.x0,
        rtol=system.cg_tol,
        atol=0.0,
        maxiter=system.cg_max_iter,
        M=preconditioner,
        callback=count,
    )
    residual = system.relative_residual(solution)
    if info != 0:
        raise ConvergenceError(
            "conjugate gradient stopped after {} iterations at relative residual {:.3g}".format(
                iterations[0], residual
            ),
            iterations[0],
            residual,
        )
    logging.debug(f"cg converged in {iterations[0]} iterations, residual {residual:.3g}")
    return ScalarField(solution.reshape(system.shape))


def project_box(S: ScalarField, S_min: ScalarField) -> ScalarField:
    """
    Clamp every pixel into [S_min, 1].
    """
    require_same_shape(S.shape, S_min.shape, "illumination and lower bound")
    if S_min.data.max() > 1.0:
        raise OutOfRangeValue("lower bound exceeds 1, the box is empty")
    return ScalarField(np.clip(S.data, S_min.data, 1.0))


def _edge_ratios(s_p, s_q, i_p, i_q, edge):
    step = np.where(edge, i_q - i_p, 1.0)
    return np.where(edge, (i_q / s_q - i_p / s_p) / step, np.inf)


def count_edge_violations(
    S: ScalarField, I_lum: ScalarField, masks: PairMasks, delta_slack: float
) -> int:
    """
    Number of edge pairs whose enhanced-to-input gradient ratio is below
    1 - delta_slack.
    """
    s, i = S.data, I_lum.data
    threshold = 1.0 - delta_slack
    ratio_x = _edge_ratios(s[:, :-1], s[:, 1:], i[:, :-1], i[:, 1:], masks.edge_x)
    ratio_y = _edge_ratios(s[:-1, :], s[1:, :], i[:-1, :], i[1:, :], masks.edge_y)
    return int(np.count_nonzero(ratio_x < threshold) + np.count_nonzero(ratio_y < threshold))


def flat_components(masks: PairMasks, shape: Tuple[int, int]) -> Tuple[np.ndarray, int]:
    """
    Label the connected components of the graph whose edges are the flat
    pairs.

    Returns:
      A tuple of (labels of shape `shape`, number of components)
    """
    height, width = shape
    (first_x, second_x), (first_y, second_y) = _pair_indices(height, width)
    rows = np.concatenate([first_x[masks.flat_x], first_y[masks.flat_y]])
    cols = np.concatenate([second_x[masks.flat_x], second_y[masks.flat_y]])
    size = height * width
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(size, size))
    count, labels = connected_components(graph, directed=False)
    return labels.reshape(shape), count


@njit(cache=True)
def _ratio(i_fixed, s_fixed, i_moving, s_moving):
    return (i_moving / s_moving - i_fixed / s_fixed) / (i_moving - i_fixed)


@njit(cache=True)
def _bisect(i_fixed, s_fixed, i_moving, s_moving, threshold):
    # At s_moving == s_fixed the ratio is 1 / s_fixed >= 1.
    low = 0.0
    high = 1.0
    for _ in range(BISECTION_STEPS):
        middle = 0.5 * (low + high)
        candidate = s_moving + middle * (s_fixed - s_moving)
        if _ratio(i_fixed, s_fixed, i_moving, candidate) >= threshold:
            high = middle
        else:
            low = middle
    return s_moving + high * (s_fixed - s_moving)


@njit(cache=True)
def _relax_pair(values, lower, i_first, c_first, i_second, c_second, threshold):
    if c_first == c_second:
        return 0
    if i_first < i_second:
        i_dark, c_dark, i_bright, c_bright = i_first, c_first, i_second, c_second
    else:
        i_dark, c_dark, i_bright, c_bright = i_second, c_second, i_first, c_first
    if _ratio(i_dark, values[c_dark], i_bright, values[c_bright]) >= threshold:
        return 0
    target = _bisect(i_dark, values[c_dark], i_bright, values[c_bright], threshold)
    values[c_bright] = max(target, lower[c_bright])
    if _ratio(i_dark, values[c_dark], i_bright, values[c_bright]) < threshold:
        values[c_dark] = _bisect(i_bright, values[c_bright], i_dark, values[c_dark], threshold)
    return 1


@njit(cache=True)
def _sweep_edges(values, lower, labels, lum, edge_x, edge_y, threshold, passes):
    height, width = labels.shape
    for _ in range(passes):
        moved = 0
        for y in range(height):
            for x in range(width - 1):
                if edge_x[y, x]:
                    moved += _relax_pair(
                        values, lower, lum[y, x], labels[y, x],
                        lum[y, x + 1], labels[y, x + 1], threshold,
                    )
        for y in range(height - 1, -1, -1):
            for x in range(width - 2, -1, -1):
                if edge_x[y, x]:
                    moved += _relax_pair(
                        values, lower, lum[y, x + 1], labels[y, x + 1],
                        lum[y, x], labels[y, x], threshold,
                    )
        for y in range(height - 1):
            for x in range(width):
                if edge_y[y, x]:
                    moved += _relax_pair(
                        values, lower, lum[y, x], labels[y, x],
                        lum[y + 1, x], labels[y + 1, x], threshold,
                    )
        for y in range(height - 2, -1, -1):
            for x in range(width - 1, -1, -1):
                if edge_y[y, x]:
                    moved += _relax_pair(
                        values, lower, lum[y + 1, x], labels[y + 1, x],
                        lum[y, x], labels[y, x], threshold,
                    )
        if moved == 0:
            break


@njit(cache=True)
def _lower_bright_sides(values, lower, bright, dark, i_bright, i_dark, threshold):
    for k in range(bright.size):
        c, d = bright[k], dark[k]
        if _ratio(i_dark[k], values[d], i_bright[k], values[c]) < threshold:
            target = _bisect(i_dark[k], values[d], i_bright[k], values[c], threshold)
            values[c] = max(target, lower[c])


@njit(cache=True)
def _raise_dark_sides(values, bright, dark, i_bright, i_dark, threshold):
    for k in range(bright.size):
        c, d = bright[k], dark[k]
        if _ratio(i_dark[k], values[d], i_bright[k], values[c]) < threshold:
            values[d] = _bisect(i_bright[k], values[c], i_dark[k], values[d], threshold)


def edge_constraints(labels: np.ndarray, lum: np.ndarray, masks: PairMasks):
    """
    The edge pairs joining two different flat components, oriented by
    luminance.

    Returns:
      A tuple of (bright component, dark component, bright luminance, dark
      luminance) arrays, one entry per pair
    """
    first = np.concatenate([labels[:, :-1][masks.edge_x], labels[:-1, :][masks.edge_y]])
    second = np.concatenate([labels[:, 1:][masks.edge_x], labels[1:, :][masks.edge_y]])
    lum_first = np.concatenate([lum[:, :-1][masks.edge_x], lum[:-1, :][masks.edge_y]])
    lum_second = np.concatenate([lum[:, 1:][masks.edge_x], lum[1:, :][masks.edge_y]])

    first_is_bright = lum_first > lum_second
    bright = np.where(first_is_bright, first, second)
    dark = np.where(first_is_bright, second, first)
    i_bright = np.where(first_is_bright, lum_first, lum_second)
    i_dark = np.where(first_is_bright, lum_second, lum_first)
    keep = bright != dark
    return bright[keep], dark[keep], i_bright[keep], i_dark[keep]


def enforce_detail_consistency(
    S: ScalarField,
    I_lum: ScalarField,
    S_min: ScalarField,
    masks: PairMasks,
    config: SolverConfig,
) -> Tuple[ScalarField, int]:
    """
    Project S towards the detail constraints.

    Flat pairs: pixels connected through flat pairs are averaged to their
    common mean, clamped to the box of the component.

    Edge pairs: the ratio ((I_q/S_q) - (I_p/S_p)) / (I_q - I_p) must be at
    least 1 - delta_slack. A violated pair always has the larger
    illumination on its brighter side, and bisecting that side towards the
    darker one restores the ratio. Components are visited by increasing
    mean luminance and the brighter side of each violated pair is lowered,
    down to its box bound. Pairs still violated because the box binds are
    then visited by decreasing luminance of their darker side, which is
    raised towards the brighter one. Each phase only moves a component in
    the direction that keeps the pairs already visited satisfied.
    Forward/backward sweeps per axis, up to `max_projection_passes`, fix
    the pairs whose orientation disagrees with the component ordering.

    Args:
      S (ScalarField): illumination inside the box.
      I_lum (ScalarField): luminance proxy (the initial illumination).
      S_min (ScalarField): lower bound of the box.
      masks (PairMasks): flat/edge classification of `I_lum`.
      config (SolverConfig): solver settings.

    Returns:
      A tuple of (projected illumination, residual edge violations)

    Examples:
      >>> I_lum = ScalarField(np.array([[0.2, 0.8]]))
      >>> S = ScalarField(np.array([[0.3, 1.0]]))
      >>> S_min = ScalarField.constant(2, 1, 0.01)
      >>> masks = flat_edge_masks(I_lum, 1e-5)
      >>> projected, violations = enforce_detail_consistency(S, I_lum, S_min, masks, SolverConfig())
      >>> violations
      0
    """
    require_same_shape(S.shape, I_lum.shape, "illumination and luminance")
    require_same_shape(S.shape, S_min.shape, "illumination and lower bound")

    labels, count = flat_components(masks, S.shape)
    flat_labels = labels.ravel()
    sizes = np.bincount(flat_labels, minlength=count)
    lower = np.zeros(count)
    np.maximum.at(lower, flat_labels, S_min.data.ravel())
    values = np.bincount(flat_labels, weights=S.data.ravel(), minlength=count) / sizes
    values = np.clip(values, lower, 1.0)

    mean_lum = np.bincount(flat_labels, weights=I_lum.data.ravel(), minlength=count) / sizes
    rank = np.empty(count, dtype=np.int64)
    rank[np.argsort(mean_lum, kind="stable")] = np.arange(count)
    threshold = 1.0 - config.delta_slack

    bright, dark, i_bright, i_dark = edge_constraints(labels, I_lum.data, masks)
    order = np.argsort(rank[bright], kind="stable")
    _lower_bright_sides(
        values, lower, bright[order], dark[order], i_bright[order], i_dark[order], threshold
    )
    order = np.argsort(-rank[dark], kind="stable")
    _raise_dark_sides(values, bright[order], dark[order], i_bright[order], i_dark[order], threshold)

    _sweep_edges(
        values,
        lower,
        labels,
        I_lum.data,
        masks.edge_x,
        masks.edge_y,
        threshold,
        config.max_projection_passes,
    )
    projected = ScalarField(values[labels])
    violations = count_edge_violations(projected, I_lum, masks, config.delta_slack)
    logging.debug(f"detail projection: {violations} of {masks.edge_count} edge pairs violated")
    return projected, violations


def _objective(S: ScalarField, S_init: ScalarField, config: SolverConfig) -> float:
    data_term = float(np.sum((S.data - S_init.data) ** 2))
    if not config.exposure_constraint:
        return data_term
    return data_term + config.lam * rtv_energy(S, config.rtv)


def estimate_illumination(
    img: RgbImage, config: SolverConfig = SolverConfig()
) -> Tuple[ScalarField, SolveReport]:
    """
    Estimate the illumination of an underexposed image.

    Starting from the initial illumination, each outer iteration recomputes
    the smoothness weights from the current iterate, solves the quadratic
    subproblem, projects onto the box [S_min, 1] and then onto the detail
    constraints. Iteration stops once the largest per-pixel change is below
    `conv_tol` or after `max_outer` iterations.

    Args:
      img (RgbImage): underexposed input.
      config (SolverConfig): solver settings.

    Returns:
      A tuple of (illumination within [S_min, 1], solve report)
    """
    S_init = initial_illumination(img)
    S_min = box_lower_bound(img, config.gamma, config.color_constraint)
    masks = flat_edge_masks(S_init, config.tau)
    report = SolveReport(edge_pairs=masks.edge_count)
    method = LinearSolver(config.linear_solver)

    S = project_box(S_init, S_min)
    for iteration in range(1, config.max_outer + 1):
        weights = rtv_weights(S, config.rtv)
        system = assemble_system(S, S_init, weights, masks, config)
        try:
            solution = solve_quadratic(system, method)
        except ConvergenceError as e:
            if not config.cg_fallback:
                raise
            logging.warning(f"{e}; switching to a direct solve")
            method = LinearSolver.DIRECT
            solution = solve_quadratic(system, method)

        candidate = project_box(solution, S_min)
        if config.detail_constraint:
            candidate, violations = enforce_detail_consistency(
                candidate, S_init, S_min, masks, config
            )
        else:
            violations = count_edge_violations(candidate, S_init, masks, config.delta_slack)

        change = float(np.max(np.abs(candidate.data - S.data)))
        objective = _objective(candidate, S_init, config)
        report.record(change, objective, violations)
        S = candidate
        logging.debug(
            f"iteration {iteration}: change {change:.3g}, objective {objective:.6g}, "
            f"edge violations {violations}"
        )
        if change < config.conv_tol:
            logging.info(f"illumination converged after {iteration} iterations")
            break

    return S, report
