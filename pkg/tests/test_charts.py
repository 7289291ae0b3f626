import math

import numpy as np
import pytest

from zygmund_charts.charts import (
    ChartError,
    RuleFrame,
    canonical_chart,
    chart_coefficients,
    check_injective,
    closed_form_chart,
    closed_form_coefficients,
    flow,
    harmonic_chart,
    jacobian_at_basepoint,
    loss_example_frame,
    loss_profile,
    loss_series,
    measured_series_coefficient,
    normalize_at_basepoint,
    ray_growth_constant,
    ray_ode_A,
    rotation_angle,
    rotation_frame,
    scaling_decay,
    scaling_prepare,
    series_coefficient,
    series_terms,
    spanning_margin,
)
from zygmund_charts.elliptic import ball_mask, metric_from_A
from zygmund_charts.exterior import DiffeoGrid
from zygmund_charts.fields import (
    FormField,
    GridSpec,
    MatrixField,
    ScalarField,
    one_sided_power,
    radial_cutoff,
)
from zygmund_charts.pipeline import measure_smallness


def _constant_coframe(spec, matrix):
    return [
        FormField.from_arrays(spec, 1, [np.full(spec.shape, v) for v in row])
        for row in matrix
    ]


def test_loss_profile_closed_values():
    assert loss_profile(1.0, 1.0) == pytest.approx(1 - math.exp(-1), abs=1e-7)
    assert loss_profile(1.0, 1.0) == pytest.approx(0.6321206, abs=1e-7)
    assert loss_profile(-1.0, 1.0) == 1.0
    values = loss_profile(np.array([0.0, 0.5]), 2.0)
    assert values.shape == (2,)
    assert values[0] == 1.0


def test_series_matches_profile():
    coeffs = series_terms(1.0, 3)
    assert coeffs.tolist() == pytest.approx([1.0, -0.5, 1.0 / 6.0])
    s = np.linspace(0.1, 1.0, 10)
    for alpha in (1.0, 1.5):
        assert np.max(np.abs(loss_series(s, alpha) - loss_profile(s, alpha))) < 1e-10


@pytest.mark.parametrize("alpha", [1.0, 1.5, 2.0])
def test_series_coefficient_is_measured(alpha):
    expected = series_coefficient(alpha)
    assert expected == pytest.approx(alpha / (alpha + 1))
    assert measured_series_coefficient(alpha) == pytest.approx(expected, rel=0.02)


def test_r_weighted_flow_runs_at_half_speed():
    frame = rotation_frame(lambda p: 0.3 * np.sin(p[0]))
    p = np.array([0.1, -0.2])
    t = np.array([0.4, 0.3])
    weighted = flow(frame, p, 2 * t, r_weighted=True)
    plain = flow(frame, p, t)
    assert np.max(np.abs(weighted - plain)) < 1e-8


def test_flow_leaving_the_domain_is_reported():
    frame = loss_example_frame(1.0)
    with pytest.raises(ChartError) as excinfo:
        flow(frame, np.zeros(2), np.array([5.0, 0.0]))
    assert excinfo.value.category == "flow-domain"
    assert excinfo.value.radius is not None


def test_canonical_chart_matches_closed_form():
    spec = GridSpec.cube(2, 32)
    D = canonical_chart(loss_example_frame(1.0), np.zeros(2), 1.0, spec)
    t, s = spec.nodes()
    expected_t, expected_s = closed_form_chart(t, s, 1.0)
    phi = D.phi_array()
    region = D.resolved
    assert np.max(np.abs(phi[0][region] - expected_t[region])) < 1e-6
    assert np.max(np.abs(phi[1][region] - expected_s[region])) < 1e-6
    ok, _ = check_injective(D)
    assert ok


def test_ray_ode_matches_closed_form_coefficients():
    spec = GridSpec.cube(2, 32)
    A = ray_ode_A(loss_example_frame(1.0), spec, radius=1.0)
    expected = closed_form_coefficients(spec, 1.0)
    region = spec.radius() <= 1.0
    assert np.max(np.abs(A.array - expected.array)[:, :, region]) < 1e-4
    growth = ray_growth_constant(A, (0.5, 1.0))
    assert np.all(np.isfinite(growth))


def test_ray_ode_needs_structure_coefficients():
    spec = GridSpec.cube(2, 16)
    with pytest.raises(ChartError) as excinfo:
        ray_ode_A(rotation_frame(lambda p: np.zeros(p.shape[1:])), spec)
    assert excinfo.value.category == "config"


def test_closed_form_coefficients_need_alpha_at_least_one():
    with pytest.raises(ChartError):
        closed_form_coefficients(GridSpec.cube(2, 16), 0.5)


def test_loss_frame_requires_positive_alpha():
    with pytest.raises(ChartError):
        loss_example_frame(0.0)


def test_rule_frame_round_trips_through_grid():
    spec = GridSpec.cube(2, 32)
    frame = loss_example_frame(2.0, cutoff=(0.4, 0.8))
    grid_frame = frame.on_grid(spec)
    assert grid_frame.c is not None
    back = RuleFrame.from_grid(grid_frame)
    points = np.stack(spec.nodes())
    assert np.max(np.abs(back.evaluate(points) - frame.evaluate(points))) < 1e-12


def test_rotation_frame_is_orthonormal():
    frame = rotation_frame(rotation_angle())
    points = np.random.default_rng(0).uniform(-1, 1, size=(2, 50))
    X1, X2 = frame.evaluate(points)
    assert np.allclose(np.sum(X1 * X2, axis=0), 0.0)
    assert np.allclose(np.sum(X1**2, axis=0), 1.0)


def test_identity_chart_is_injective_with_flat_coefficients():
    spec = GridSpec.cube(2, 16)
    D = DiffeoGrid.identity(spec)
    ok, separation = check_injective(D)
    assert ok
    assert separation == pytest.approx(spec.spacing[0])
    A = chart_coefficients(D, rotation_frame(lambda p: np.zeros(p.shape[1:])))
    assert A.sup_norm() < 1e-12


def test_normalization_at_basepoint():
    spec = GridSpec.cube(2, 16)
    coframe = _constant_coframe(spec, [[2.0, 1.0], [0.0, 1.0]])
    normalized, M = normalize_at_basepoint(coframe)
    assert np.allclose(M, np.linalg.inv([[2.0, 1.0], [0.0, 1.0]]))
    for k, lam in enumerate(normalized):
        for i in range(2):
            assert np.allclose(lam.components[(i,)].samples, 1.0 if i == k else 0.0)
    assert spanning_margin(normalized) == pytest.approx(1.0)


def test_singular_basepoint_is_rejected():
    spec = GridSpec.cube(2, 16)
    with pytest.raises(ChartError) as excinfo:
        normalize_at_basepoint(_constant_coframe(spec, [[1.0, 1.0], [1.0, 1.0]]))
    assert excinfo.value.category == "span"


def test_scaling_requires_normalized_coframe():
    spec = GridSpec.cube(2, 32)
    coframe = _constant_coframe(spec, [[2.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ChartError) as excinfo:
        scaling_prepare(coframe, 1e-2, spec, spanning_margin)
    assert excinfo.value.category == "normalization"


def test_scaling_stops_at_first_small_enough_kappa():
    spec = GridSpec.cube(2, 32)
    coframe = _constant_coframe(spec, [[1.0, 0.0], [0.0, 1.0]])
    history = []
    lam, kappa = scaling_prepare(
        coframe, 1e-2, spec, lambda c: 0.0, history=history
    )
    assert kappa == 1.0
    assert history == [(1.0, 0.0)]
    assert len(lam) == 2


def test_scaling_reports_unreachable_target():
    spec = GridSpec.cube(2, 32)
    coframe = _constant_coframe(spec, [[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ChartError) as excinfo:
        scaling_prepare(coframe, 1e-2, spec, lambda c: 1.0)
    assert excinfo.value.category == "scaling"


def test_scaled_homogeneous_cusp_decays():
    spec = GridSpec(1, (1024,))
    slope, norms = scaling_decay(
        lambda p: one_sided_power(p[0], 0.7), 0.7, (1.0, 0.5, 0.25, 0.125), spec
    )
    assert slope >= 0.4
    assert norms[0] > norms[-1]


def test_flat_metric_gives_identity_harmonic_chart():
    spec = GridSpec.cube(2, 32)
    flat = MatrixField.identity(spec)
    D = harmonic_chart(flat, ScalarField.constant(spec, 1.0), ball_mask(spec))
    assert np.max(np.abs(D.phi_array() - np.stack(spec.nodes()))) < 1e-10
    assert np.allclose(jacobian_at_basepoint(D), np.eye(2), atol=1e-10)


def test_harmonic_chart_is_harmonic_where_the_metric_is_flat():
    spec = GridSpec.cube(2, 128)
    x, _ = spec.nodes()
    array = np.zeros((2, 2) + spec.shape)
    array[0, 0] = 0.05 * radial_cutoff(spec, 0.15, 0.45).samples * np.cos(x)
    ginv, sqrtdet = metric_from_A(MatrixField.from_array(spec, array))
    D = harmonic_chart(ginv, sqrtdet, ball_mask(spec), scheme="stencil")
    r = spec.radius()
    band = (r > 0.6) & (r < 0.9)
    h = spec.spacing[0]
    for w in D.R:
        values = w.samples
        lap = sum(
            np.roll(values, 1, axis) + np.roll(values, -1, axis) - 2.0 * values
            for axis in range(2)
        ) / h**2
        assert np.max(np.abs(lap[band])) < 1e-6 * w.sup_norm()
        assert np.all(values[r >= 1.0] == 0.0)
    assert D.R[0].sup_norm() > 0.0


def test_ray_growth_is_bounded_by_structure_coefficients():
    spec = GridSpec.cube(2, 64)
    frame = loss_example_frame(1.0)
    A = ray_ode_A(frame, spec, radius=1.0)
    points = np.stack(spec.nodes())
    # C(x)_i^j = sum_k x_k c_ik^j; the chart keeps the sign of y, so c(Phi_0 x) = c(x)
    C = np.einsum("k...,ikj...->ij...", points, frame.coefficients(points))
    r = spec.radius()
    region = (r > 0) & (r <= 1.0)
    c_sup = np.max(np.sqrt(np.sum(C**2, axis=(0, 1)))[region] / r[region])
    assert c_sup == pytest.approx(1.0)
    growth = ray_growth_constant(A, (0.25, 0.5, 1.0))
    assert np.all(growth > 0.0)
    assert np.all(growth <= 2.0 * c_sup)
    assert np.all(np.diff(growth) >= 0.0)


def test_ray_ode_reports_blowup_radius():
    spec = GridSpec.cube(2, 16)
    with pytest.raises(ChartError) as excinfo:
        ray_ode_A(loss_example_frame(1.0, scale=1e7), spec, radius=1.0)
    assert excinfo.value.category == "ray-blowup"
    assert 0.0 < excinfo.value.radius <= 1.0


def _normalized_rule(points):
    x, y = points
    return np.stack(
        [
            np.stack([1.0 + 0.3 * np.sin(x), 0.2 * y]),
            np.stack([np.zeros_like(x), np.ones_like(x)]),
        ]
    )


def test_scaled_coframe_is_flat_outside_half_ball():
    spec = GridSpec.cube(2, 256)

    def deviation(coframe):
        return max(
            float(np.max(np.abs(lam.components[(i,)].samples - (i == k))))
            for k, lam in enumerate(coframe)
            for i in range(2)
        )

    history = []
    lam, kappa = scaling_prepare(
        _normalized_rule, 0.05, spec, deviation, history=history
    )
    assert kappa == 0.25
    assert [k for k, _ in history] == [1.0, 0.5, 0.25]
    outside = spec.radius() >= 0.5
    for k, form in enumerate(lam):
        for i in range(2):
            delta = 1.0 if i == k else 0.0
            leak = np.abs(form.components[(i,)].samples - delta)[outside]
            assert np.max(leak) < 1e-13


def test_flat_coframe_is_small_at_full_scale():
    spec = GridSpec.cube(2, 64)
    coframe = _constant_coframe(spec, [[1.0, 0.0], [0.0, 1.0]])
    lam, kappa = scaling_prepare(
        coframe, 1e-2, spec, lambda c: measure_smallness(c, 0.5, 1.0), mu0=0.75
    )
    assert kappa == 0.75
    for k, form in enumerate(lam):
        for i in range(2):
            delta = 1.0 if i == k else 0.0
            assert np.max(np.abs(form.components[(i,)].samples - delta)) < 1e-13
