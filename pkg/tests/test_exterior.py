import numpy as np
import pytest

from zygmund_charts.exterior import (
    DiffeoGrid,
    GeometryError,
    codifferential,
    coframe_pairing,
    compose,
    dual_coframe,
    ext_d,
    fd_jacobian,
    form_laplacian,
    hodge_laplacian,
    interior,
    interpolate,
    lie_derivative,
    partial,
    pullback_vf,
    pushforward_form,
    pushforward_vf_source,
    structure_coefficients,
    vf_apply,
    wedge,
)
from zygmund_charts.fields import (
    FieldError,
    FormField,
    Frame,
    GridSpec,
    ScalarField,
    VectorField,
    band_limited_field,
)
from zygmund_charts.spectral import wave_grid


def _random(spec: GridSpec, rng) -> ScalarField:
    return band_limited_field(spec, min(wave_grid(spec).nyquist) / 3, rng)


def _one_form(spec: GridSpec, rng) -> FormField:
    return FormField.from_arrays(
        spec, 1, [_random(spec, rng).samples for _ in range(spec.ndim)]
    )


def _shear_frame(spec: GridSpec, amplitude: float = 0.3):
    x, _ = spec.nodes()
    s = amplitude * np.sin(np.pi * x / 2)
    X1 = VectorField.coordinate(spec, 0)
    X2 = VectorField.from_array(spec, np.stack([s, np.ones_like(s)]))
    return Frame((X1, X2)), amplitude * np.pi / 2 * np.cos(np.pi * x / 2)


def test_d_squared_vanishes_in_three_dimensions():
    spec = GridSpec.cube(3, 16)
    rng = np.random.default_rng(0)
    f = FormField.from_scalar(_random(spec, rng))
    assert ext_d(ext_d(f)).sup_norm() < 1e-10
    omega = _one_form(spec, rng)
    assert ext_d(ext_d(omega)).sup_norm() < 1e-10


def test_top_degree_has_no_derivative():
    spec = GridSpec.cube(2, 16)
    with pytest.raises(FieldError):
        ext_d(FormField.zeros(spec, 2))


def test_codifferential_is_minus_divergence():
    spec = GridSpec.cube(2, 32)
    theta = _one_form(spec, np.random.default_rng(1))
    div = partial(theta.components[(0,)], 0) + partial(theta.components[(1,)], 1)
    result = codifferential(theta).scalar()
    assert np.max(np.abs(result.samples + div.samples)) < 1e-12


def test_hodge_laplacian_acts_componentwise():
    spec = GridSpec.cube(3, 16)
    rng = np.random.default_rng(2)
    for degree in (1, 2):
        arrays = [_random(spec, rng).samples for _ in range(3)]
        omega = FormField.from_arrays(spec, degree, arrays)
        gap = (hodge_laplacian(omega) - form_laplacian(omega)).sup_norm()
        assert gap < 1e-10 * form_laplacian(omega).sup_norm()


def test_wedge_of_one_forms_anticommutes():
    spec = GridSpec.cube(2, 16)
    rng = np.random.default_rng(3)
    sigma, omega = _one_form(spec, rng), _one_form(spec, rng)
    assert (wedge(sigma, omega) + wedge(omega, sigma)).sup_norm() < 1e-14


def test_interior_of_area_form():
    spec = GridSpec.cube(2, 16)
    area = wedge(FormField.coordinate(spec, 0), FormField.coordinate(spec, 1))
    result = interior(VectorField.coordinate(spec, 0), area)
    assert (result - FormField.coordinate(spec, 1)).sup_norm() == 0.0
    other = interior(VectorField.coordinate(spec, 1), area)
    assert (other + FormField.coordinate(spec, 0)).sup_norm() == 0.0


def test_lie_derivative_of_function_is_directional_derivative():
    spec = GridSpec.cube(2, 32)
    rng = np.random.default_rng(4)
    f = _random(spec, rng)
    Y = VectorField.from_array(spec, np.stack([_random(spec, rng).samples] * 2))
    lie = lie_derivative(Y, FormField.from_scalar(f)).scalar()
    assert np.max(np.abs(lie.samples - vf_apply(Y, f).samples)) < 1e-12


def test_identity_diffeo_composes_to_input():
    spec = GridSpec.cube(2, 32)
    f = _random(spec, np.random.default_rng(5))
    g = compose(f, DiffeoGrid.identity(spec))
    assert np.max(np.abs(g.samples - f.samples)) < 1e-12


def test_displacement_inversion_residual():
    spec = GridSpec.cube(2, 32)
    x, y = spec.nodes()
    R = (
        ScalarField(spec, 0.05 * np.sin(np.pi * y / 2)),
        ScalarField(spec, 0.05 * np.cos(np.pi * x / 2)),
    )
    D = DiffeoGrid.from_displacement(R)
    phi = D.phi_array()
    image = phi + np.stack([interpolate(r, phi) for r in R])
    assert np.max(np.abs(image - np.stack(spec.nodes()))) < 1e-8
    assert D.inversion_error < 1e-8


def test_newton_inversion_rejects_steps_that_do_not_descend():
    spec = GridSpec.cube(2, 32)
    x, y = spec.nodes()
    R = (
        ScalarField(spec, 0.05 * np.sin(np.pi * y / 2)),
        ScalarField(spec, 0.05 * np.cos(np.pi * x / 2)),
    )
    backwards = np.broadcast_to(
        -2.0 * np.eye(2)[:, :, None, None], (2, 2) + spec.shape
    )
    with pytest.raises(GeometryError) as excinfo:
        DiffeoGrid.from_displacement(R, grad_R=backwards)
    assert excinfo.value.category == "inversion"
    with pytest.raises(GeometryError) as excinfo:
        DiffeoGrid.from_displacement(R, max_iter=0)
    assert excinfo.value.category == "inversion"


def test_pullback_by_identity_keeps_vector_field():
    spec = GridSpec.cube(2, 16)
    frame, _ = _shear_frame(spec)
    pulled = pullback_vf(DiffeoGrid.identity(spec), frame.vfs[1])
    assert np.max(np.abs(pulled.to_array() - frame.vfs[1].to_array())) < 1e-12


def test_dual_coframe_pairs_to_identity():
    spec = GridSpec.cube(2, 32)
    frame, _ = _shear_frame(spec)
    pairing = coframe_pairing(dual_coframe(frame), frame)
    assert np.max(np.abs(pairing - np.eye(2)[:, :, None, None])) < 1e-12


def test_structure_coefficients_of_shear_frame():
    spec = GridSpec.cube(2, 32)
    frame, s_prime = _shear_frame(spec)
    c = structure_coefficients(dual_coframe(frame), frame)
    assert np.max(np.abs(c[0][1][0].samples - s_prime)) < 1e-10
    assert np.max(np.abs(c[0][1][1].samples)) < 1e-10
    assert np.max(np.abs(c[1][0][0].samples + s_prime)) < 1e-10


def test_singular_frame_does_not_span():
    spec = GridSpec.cube(2, 16)
    X = VectorField.coordinate(spec, 0)
    with pytest.raises(GeometryError) as excinfo:
        dual_coframe(Frame((X, X)))
    assert excinfo.value.category == "span"
    with pytest.raises(GeometryError):
        dual_coframe(Frame((X,)))


def _smooth_diffeo(spec: GridSpec) -> DiffeoGrid:
    x, y = spec.nodes()
    R = (
        ScalarField(spec, 0.05 * np.sin(np.pi * y / 2)),
        ScalarField(spec, 0.05 * np.cos(np.pi * x / 2)),
    )
    return DiffeoGrid.from_displacement(R)


def test_pushforward_commutes_with_d():
    spec = GridSpec.cube(2, 128)
    x, y = spec.nodes()
    omega = FormField.from_arrays(
        spec,
        1,
        [
            np.sin(np.pi * x / 2) * np.cos(np.pi * y / 2),
            np.cos(np.pi * x / 2) * np.sin(np.pi * y),
        ],
    )
    D = _smooth_diffeo(spec)
    lhs = ext_d(pushforward_form(D, omega))
    rhs = pushforward_form(D, ext_d(omega))
    assert (lhs - rhs).sup_norm() < 1e-4 * ext_d(omega).sup_norm()


def test_pushforward_of_function_is_composition():
    spec = GridSpec.cube(2, 32)
    f = _random(spec, np.random.default_rng(11))
    D = _smooth_diffeo(spec)
    pushed = pushforward_form(D, FormField.from_scalar(f)).scalar()
    assert np.array_equal(pushed.samples, compose(f, D).samples)


def test_fd_jacobian_is_exact_for_cubics_away_from_edges():
    spec = GridSpec.cube(2, 32)
    x, y = spec.nodes()
    jac = fd_jacobian(spec, [x + 0.1 * y**2, y + 0.05 * x**3])
    inner = (slice(2, -2), slice(2, -2))
    assert np.allclose(jac[0, 0][inner], 1.0, atol=1e-10)
    assert np.allclose(jac[0, 1][inner], (0.2 * y)[inner], atol=1e-10)
    assert np.allclose(jac[1, 0][inner], (0.15 * x**2)[inner], atol=1e-10)
    assert np.allclose(jac[1, 1][inner], 1.0, atol=1e-10)


def test_pushforward_vf_source_applies_forward_jacobian():
    spec = GridSpec.cube(2, 32)
    x, _ = spec.nodes()
    D = _smooth_diffeo(spec)
    pushed = pushforward_vf_source(D, VectorField.coordinate(spec, 0)).to_array()
    assert np.max(np.abs(pushed[0] - 1.0)) < 1e-10
    expected = -0.05 * np.pi / 2 * np.sin(np.pi * x / 2)
    assert np.max(np.abs(pushed[1] - expected)) < 1e-10
