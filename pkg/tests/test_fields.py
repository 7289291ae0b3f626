import numpy as np
import pytest

from zygmund_charts import fields
from zygmund_charts.fields import (
    FieldError,
    FormField,
    Frame,
    GridSpec,
    MatrixField,
    ScalarField,
    VectorField,
    field_io_read,
    field_io_write,
)


def test_grid_nodes_match_documented_example():
    spec = GridSpec(1, (16,))
    expected = -2.0 + 0.25 * np.arange(16)
    assert np.allclose(spec.axis_nodes(0), expected)
    assert spec.spacing == (0.25,)


@pytest.mark.parametrize("size", [8, 48])
def test_grid_rejects_bad_sizes(size):
    with pytest.raises(FieldError, match="powers of two"):
        GridSpec(1, (size,))


def test_grid_rejects_dimension_mismatch():
    with pytest.raises(FieldError) as excinfo:
        GridSpec(2, (16,))
    assert excinfo.value.category == "grid"


def test_scalar_field_rejects_non_finite():
    spec = GridSpec(1, (16,))
    values = np.zeros(16)
    values[3] = np.nan
    with pytest.raises(FieldError, match="non-finite"):
        ScalarField(spec, values)


def test_scalar_samples_are_read_only():
    spec = GridSpec(1, (16,))
    f = ScalarField.constant(spec, 2.0)
    with pytest.raises(ValueError):
        f.samples[0] = 1.0


def test_fields_on_different_grids_do_not_mix():
    a = ScalarField.zeros(GridSpec(1, (16,)))
    b = ScalarField.zeros(GridSpec(1, (32,)))
    with pytest.raises(FieldError) as excinfo:
        a + b
    assert excinfo.value.category == "spec-mismatch"


def test_form_requires_increasing_indices():
    spec = GridSpec.cube(2, 16)
    with pytest.raises(FieldError, match="components"):
        FormField(1, {(0,): ScalarField.zeros(spec)})


def test_form_from_arrays_orders_components():
    spec = GridSpec.cube(3, 16)
    arrays = [np.full(spec.shape, float(i)) for i in range(3)]
    form = FormField.from_arrays(spec, 2, arrays)
    assert list(form.components) == [(0, 1), (0, 2), (1, 2)]
    assert form.components[(1, 2)].samples[0, 0, 0] == 2.0


def test_frame_rejects_non_antisymmetric_coefficients():
    spec = GridSpec.cube(2, 16)
    vfs = (VectorField.coordinate(spec, 0), VectorField.coordinate(spec, 1))
    one = ScalarField.constant(spec, 1.0)
    zero = ScalarField.zeros(spec)
    c = (((zero, zero), (one, zero)), ((one, zero), (zero, zero)))
    with pytest.raises(FieldError, match="antisymmetric"):
        Frame(vfs, c)


def test_det_and_inverse_by_cofactors():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((3, 3, 5)) + 3 * np.eye(3)[:, :, None]
    det = fields.det_array(m)
    inv = fields.inv_array(m, det)
    for node in range(5):
        assert det[node] == pytest.approx(np.linalg.det(m[:, :, node]))
    product = fields.matmul_array(m, inv)
    assert np.allclose(product, np.eye(3)[:, :, None], atol=1e-12)


def test_one_sided_power_conventions():
    y = np.array([-1.0, 0.0, 4.0])
    assert fields.one_sided_power(y, 0.5).tolist() == [0.0, 0.0, 2.0]
    assert fields.one_sided_power(y, 0).tolist() == [0.0, 1.0, 1.0]


def test_cell_average_power_is_finite_for_negative_powers():
    y = np.linspace(-1, 1, 17)
    values = fields.cell_average_power(y, -0.5, 0.125)
    assert np.all(np.isfinite(values))
    assert values[y < -0.1].max() == 0.0
    linear = fields.cell_average_power(np.array([1.0]), 1.0, 0.125)
    assert linear[0] == pytest.approx(1.0)
    with pytest.raises(FieldError):
        fields.cell_average_power(y, -1.0, 0.125)


def test_smooth_step_endpoints():
    values = fields.smooth_step(np.array([-0.5, 0.0, 0.5, 1.0, 2.0]))
    assert values.tolist() == [0.0, 0.0, 0.5, 1.0, 1.0]


def test_radial_cutoff_support():
    spec = GridSpec.cube(2, 64)
    chi = fields.radial_cutoff(spec, 0.2, 0.45)
    r = spec.radius()
    assert np.all(chi.samples[r <= 0.2] == 1.0)
    assert np.all(chi.samples[r >= 0.45] == 0.0)
    with pytest.raises(FieldError):
        fields.radial_cutoff(spec, 0.5, 2.5)


def test_band_limited_field_has_no_high_modes():
    spec = GridSpec(1, (128,))
    rng = np.random.default_rng(0)
    f = fields.band_limited_field(spec, 10.0, rng)
    k = 2 * np.pi * np.fft.rfftfreq(128, d=spec.spacing[0])
    spectrum = np.fft.rfft(f.samples)
    assert np.max(np.abs(spectrum[k > 10.0])) < 1e-10
    assert f.sup_norm() == pytest.approx(1.0)


def test_sample_function_rejects_singular_rule():
    spec = GridSpec(1, (16,))
    with pytest.raises(FieldError, match="non-finite"):
        fields.sample_function(spec, lambda x: 1.0 / x)


def test_field_io_keeps_frames_with_coefficients(tmp_path):
    spec = GridSpec(2, (16, 32), half_width=1.5)
    x, y = spec.nodes()
    X = VectorField.from_array(spec, np.stack([np.ones_like(x), np.zeros_like(x)]))
    Y = VectorField.from_array(spec, np.stack([np.sin(y), np.ones_like(y)]))
    zero = ScalarField.zeros(spec)
    cos_y = ScalarField(spec, np.cos(y))
    c = (((zero, zero), (cos_y, zero)), ((-cos_y, zero), (zero, zero)))
    path = tmp_path / "frame.zygf"
    field_io_write(path, Frame((X, Y), c))
    loaded = field_io_read(path)
    assert loaded.spec == spec
    assert np.array_equal(loaded.vfs[1].to_array(), Y.to_array())
    assert np.array_equal(loaded.c[0][1][0].samples, cos_y.samples)
    assert not (tmp_path / "frame.zygf.tmp").exists()


def test_field_io_matrix_and_form(tmp_path):
    spec = GridSpec.cube(2, 16)
    rng = np.random.default_rng(1)
    matrix = MatrixField.from_array(spec, rng.standard_normal((2, 2) + spec.shape))
    form = FormField.from_arrays(spec, 2, [rng.standard_normal(spec.shape)])
    field_io_write(tmp_path / "m.zygf", matrix)
    field_io_write(tmp_path / "w.zygf", form)
    assert np.array_equal(field_io_read(tmp_path / "m.zygf").array, matrix.array)
    loaded = field_io_read(tmp_path / "w.zygf")
    assert loaded.degree == 2
    assert np.array_equal(
        loaded.components[(0, 1)].samples, form.components[(0, 1)].samples
    )


def test_field_io_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.zygf"
    bad.write_bytes(b"NOPE" + bytes(32))
    with pytest.raises(FieldError, match="not a ZYGF"):
        field_io_read(bad)

    spec = GridSpec(1, (16,))
    good = tmp_path / "good.zygf"
    field_io_write(good, ScalarField.constant(spec, 1.0))
    truncated = tmp_path / "short.zygf"
    truncated.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(FieldError, match="truncated"):
        field_io_read(truncated)
