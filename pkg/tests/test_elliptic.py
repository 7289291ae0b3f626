import math

import numpy as np
import pytest

from zygmund_charts.elliptic import (
    SolverError,
    SolverTelemetry,
    ball_mask,
    contraction_ratio,
    contraction_TB,
    contraction_threshold,
    dirichlet_solve,
    dirichlet_spectral,
    displacement_jacobian,
    energy_gap,
    fixed_point_recovery,
    metric_from_A,
    pde_B_residual,
    remainder,
    remainder_series_check,
    solve_divergence_form,
    solve_R,
)
from zygmund_charts.exterior import ext_d, gradient, laplacian
from zygmund_charts.fields import (
    FormField,
    GridSpec,
    MatrixField,
    ScalarField,
    radial_cutoff,
)
from zygmund_charts.potential_para import SupportError
from zygmund_charts.selftest import manufactured_error


def _bump(spec: GridSpec) -> ScalarField:
    """Smooth test function supported in |x| < 0.6."""
    x, y = spec.nodes()
    chi = radial_cutoff(spec, 0.2, 0.6).samples
    return ScalarField(spec, chi * (1.0 + 0.5 * np.sin(2 * x) * np.cos(y)))


def _identity_coeff(spec: GridSpec) -> np.ndarray:
    return np.broadcast_to(
        np.eye(2).reshape((2, 2, 1, 1)), (2, 2) + spec.shape
    ).copy()


def _coefficient_bump(spec: GridSpec, epsilon: float) -> MatrixField:
    """A = epsilon chi (E11 + E21 / 2) with chi supported in |x| < 0.45."""
    x, _ = spec.nodes()
    chi = radial_cutoff(spec, 0.15, 0.45).samples * (1.0 + 0.5 * np.sin(2 * x))
    array = np.zeros((2, 2) + spec.shape)
    array[0, 0] = epsilon * chi
    array[1, 0] = 0.5 * epsilon * chi
    return MatrixField.from_array(spec, array)


def _five_point_laplacian(spec: GridSpec, values: np.ndarray) -> np.ndarray:
    total = np.zeros(spec.shape)
    for axis, h in enumerate(spec.spacing):
        rolled = np.roll(values, 1, axis) + np.roll(values, -1, axis)
        total += (rolled - 2.0 * values) / h**2
    return total


def test_ball_must_fit_the_torus():
    spec = GridSpec.cube(2, 64)
    with pytest.raises(SolverError) as excinfo:
        ball_mask(spec, 1.9)
    assert excinfo.value.category == "mask"
    mask = ball_mask(spec)
    assert not (mask.inside & mask.band).any()
    assert mask.outside.any()


def test_constant_source_matches_paraboloid():
    spec = GridSpec.cube(2, 64)
    mask = ball_mask(spec)
    telemetry = SolverTelemetry()
    u = dirichlet_solve(ScalarField.constant(spec, 1.0), mask=mask, telemetry=telemetry)
    exact = (1.0 - spec.radius() ** 2) / 4.0
    error = np.max(np.abs(u.samples - exact)[mask.inside])
    assert error < 2 * max(spec.spacing)
    assert telemetry.cg_iters > 0
    assert np.all(u.samples[~mask.inside] == 0.0)


def test_maximum_principle():
    spec = GridSpec.cube(2, 64)
    mask = ball_mask(spec)
    source = radial_cutoff(spec, 0.1, 0.5)
    u = dirichlet_solve(source, mask=mask)
    assert float(np.min(u.samples[mask.inside])) >= -1e-10


def test_second_order_convergence():
    order = math.log2(manufactured_error(64) / manufactured_error(128))
    assert 1.7 <= order <= 2.3


def test_solver_is_linear():
    spec = GridSpec.cube(2, 64)
    x, y = spec.nodes()
    f1 = ScalarField(spec, np.cos(x) * y)
    f2 = ScalarField(spec, np.exp(-(x**2)))
    combined = dirichlet_solve(f1 + f2 * 2.0).samples
    separate = dirichlet_solve(f1).samples + 2.0 * dirichlet_solve(f2).samples
    assert np.max(np.abs(combined - separate)) < 1e-8


def test_spectral_solver_inverts_laplacian_of_compact_function():
    spec = GridSpec.cube(2, 64)
    u = _bump(spec)
    mask = ball_mask(spec)
    solved = dirichlet_spectral(laplacian(u), mask)
    assert np.max(np.abs(solved.samples - u.samples)) < 1e-4


def test_zero_perturbation_is_flat_metric():
    spec = GridSpec.cube(2, 16)
    ginv, sqrtdet = metric_from_A(MatrixField.zeros(spec, 2, 2))
    assert np.array_equal(ginv.array, MatrixField.identity(spec).array)
    assert np.all(sqrtdet.samples == 1.0)


def test_singular_metric_is_rejected():
    spec = GridSpec.cube(2, 16)
    minus_one = MatrixField.from_array(
        spec, -np.broadcast_to(np.eye(2).reshape((2, 2, 1, 1)), (2, 2) + spec.shape)
    )
    with pytest.raises(SolverError) as excinfo:
        metric_from_A(minus_one)
    assert excinfo.value.category == "singular-metric"


def test_flat_divergence_form_recovers_potential_spectral():
    spec = GridSpec.cube(2, 64)
    u = _bump(spec)
    target = np.stack([g.samples for g in gradient(u)])
    telemetry = SolverTelemetry()
    (R,) = solve_divergence_form(
        _identity_coeff(spec), [target], ball_mask(spec), "spectral", telemetry
    )
    assert np.max(np.abs(R - u.samples)) < 1e-4
    assert contraction_ratio(telemetry) < 1e-6


def test_flat_divergence_form_recovers_potential_stencil():
    spec = GridSpec.cube(2, 128)
    u = ScalarField(spec, np.exp(-10.0 * spec.radius() ** 2))
    target = np.stack([g.samples for g in gradient(u)])
    coeff = _identity_coeff(spec)
    mask = ball_mask(spec)
    telemetry = SolverTelemetry()
    (R,) = solve_divergence_form(coeff, [target], mask, "stencil", telemetry)
    assert np.max(np.abs(R - u.samples)) < 0.02
    assert telemetry.residual < 1e-6
    assert energy_gap(coeff, [R], [target], mask) < 1e-6


def test_unknown_scheme_is_a_config_error():
    spec = GridSpec.cube(2, 16)
    with pytest.raises(SolverError) as excinfo:
        solve_divergence_form(
            _identity_coeff(spec), [], ball_mask(spec, 1.0), "multigrid"
        )
    assert excinfo.value.category == "config"


def test_remainder_matches_power_series():
    spec = GridSpec.cube(2, 16)
    rng = np.random.default_rng(0)
    B = MatrixField.from_array(spec, 0.05 * rng.standard_normal((2, 2) + spec.shape))
    assert remainder_series_check(B) < 1e-10
    zero = MatrixField.zeros(spec, 2, 2)
    assert remainder(zero).sup_norm() == 0.0


def test_flat_coefficients_have_no_residual():
    spec = GridSpec.cube(2, 64)
    assert pde_B_residual(MatrixField.zeros(spec, 2, 2)) == [0.0, 0.0]


def test_contraction_of_zero_data_is_trivial():
    spec = GridSpec.cube(2, 32)
    zero = MatrixField.zeros(spec, 2, 2)
    d_eta = [FormField.zeros(spec, 1) for _ in range(2)]
    telemetry = SolverTelemetry()
    fixed = contraction_TB(zero, d_eta, telemetry=telemetry)
    assert fixed.sup_norm() == 0.0
    assert contraction_ratio(telemetry) == 0.0
    assert fixed_point_recovery(fixed, zero) == 0.0


def test_threshold_sweep_reports_contracting_rows():
    spec = GridSpec.cube(2, 32)

    def make_input(amplitude):
        return MatrixField.zeros(spec, 2, 2), [FormField.zeros(spec, 1)] * 2

    table, threshold = contraction_threshold(make_input, [0.2, 0.1])
    assert table["amplitude"].tolist() == [0.1, 0.2]
    assert table["contracting"].all()
    assert threshold is None


def test_solve_R_requires_compact_coefficients():
    spec = GridSpec.cube(2, 32)
    wide = MatrixField.from_array(spec, np.full((2, 2) + spec.shape, 0.1))
    with pytest.raises(SupportError):
        solve_R(wide)


def test_solve_R_is_harmonic_between_support_and_boundary():
    spec = GridSpec.cube(2, 128)
    telemetry = SolverTelemetry()
    D = solve_R(_coefficient_bump(spec, 0.05), scheme="stencil", telemetry=telemetry)
    r = spec.radius()
    band = (r > 0.6) & (r < 0.9)
    for R in D.R:
        scale = R.sup_norm()
        assert scale > 0.0
        lap = _five_point_laplacian(spec, R.samples)
        assert np.max(np.abs(lap[band])) < 1e-6 * scale
        assert np.all(R.samples[r >= 1.0] == 0.0)
    assert telemetry.residual < 1e-6
    assert D.inversion_error < 1e-8


def test_solve_R_scales_linearly_for_small_coefficients():
    spec = GridSpec.cube(2, 64)
    telemetry = SolverTelemetry()
    small = solve_R(_coefficient_bump(spec, 0.025), telemetry=telemetry)
    large = solve_R(_coefficient_bump(spec, 0.05))
    assert telemetry.residual < 1e-8
    assert contraction_ratio(telemetry) < 0.5
    for a, b in zip(small.R, large.R):
        assert abs(b.sup_norm() / a.sup_norm() - 2.0) < 0.1


def test_solve_R_schemes_agree():
    spec = GridSpec.cube(2, 128)
    A = _coefficient_bump(spec, 0.05)
    spectral = solve_R(A, scheme="spectral")
    stencil = solve_R(A, scheme="stencil")
    for a, b in zip(spectral.R, stencil.R):
        gap = np.max(np.abs(a.samples - b.samples))
        assert gap < 0.1 * b.sup_norm()


def test_spectral_scheme_needs_flat_coefficients_near_the_boundary():
    spec = GridSpec.cube(2, 32)
    wide = 1.0 + 0.1 * radial_cutoff(spec, 0.9, 1.2).samples
    coeff = _identity_coeff(spec) * wide
    with pytest.raises(SolverError) as excinfo:
        solve_divergence_form(coeff, [], ball_mask(spec), "spectral")
    assert excinfo.value.category == "config"


def test_displacement_jacobian_is_clean_across_the_boundary_kink():
    spec = GridSpec.cube(2, 128)
    x, y = spec.nodes()
    r = spec.radius()
    inside = r < 1.0
    R = [ScalarField(spec, np.where(inside, 1.0 - r**2, 0.0))] * 2
    exact = np.stack([np.where(inside, -2.0 * x, 0.0), np.where(inside, -2.0 * y, 0.0)])
    jac = displacement_jacobian(R)
    h = max(spec.spacing)
    away = np.abs(r - 1.0) > 3 * h
    for i in range(2):
        error = np.abs(jac[i] - exact)
        assert np.max(error[:, away & (r >= 0.75)]) < 1e-8
        assert np.max(error[:, r < 0.75]) < 0.05


def test_random_coefficients_violate_the_coordinate_pde():
    spec = GridSpec.cube(2, 64)
    x, _ = spec.nodes()
    array = np.zeros((2, 2) + spec.shape)
    array[0, 0] = 0.1 * np.sin(3 * x)
    residual = pde_B_residual(MatrixField.from_array(spec, array))
    assert residual[0] > 0.1
    assert residual[1] == 0.0


def _tb_data(spec: GridSpec, amplitude: float):
    x, y = spec.nodes()
    chi = radial_cutoff(spec, 0.3, 0.9).samples
    B0 = MatrixField.from_array(
        spec,
        amplitude
        * chi
        * np.stack(
            [np.stack([np.sin(x), np.cos(y)]), np.stack([np.cos(x + y), np.sin(y)])]
        ),
    )
    bump = radial_cutoff(spec, 0.2, 0.5).samples
    forms = [
        FormField.from_arrays(spec, 1, [amplitude * bump * np.sin(2 * y), 0 * x]),
        FormField.from_arrays(spec, 1, [0 * x, amplitude * bump * np.cos(2 * x)]),
    ]
    return B0, [ext_d(f) for f in forms]


def test_contraction_of_nonzero_data_keeps_boundary_values():
    spec = GridSpec.cube(2, 64)
    B0, d_eta = _tb_data(spec, 0.005)
    telemetry = SolverTelemetry()
    fixed = contraction_TB(B0, d_eta, telemetry=telemetry)
    assert fixed.sup_norm() > 0.0
    assert contraction_ratio(telemetry) < 0.5
    outside = ~ball_mask(spec, 0.6).inside
    assert np.array_equal(fixed.array[:, :, outside], B0.array[:, :, outside])
    assert telemetry.residual < 1e-8


def test_contraction_budget_exhaustion_is_reported():
    spec = GridSpec.cube(2, 32)
    B0, d_eta = _tb_data(spec, 0.02)
    telemetry = SolverTelemetry()
    with pytest.raises(SolverError) as excinfo:
        contraction_TB(B0, d_eta, iterations=1, telemetry=telemetry)
    assert excinfo.value.category == "tb-stall"
    assert excinfo.value.iterations == 1
    assert telemetry.residual == 1.0
