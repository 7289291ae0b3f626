"""Exterior calculus, frames and coordinate changes on grid fields.

All derivatives are spectral (multiplication by i*k with the Nyquist bin
zeroed); composition with maps uses periodic cubic interpolation.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from zygmund_charts.fields import (
    FieldError,
    FormField,
    Frame,
    GridSpec,
    MatrixField,
    ScalarField,
    VectorField,
    det_array,
    field_io_read,
    inv_array,
    multi_indices,
    permutation_sign,
)
from zygmund_charts.spectral import forward, inverse, wave_grid

INVERSION_TOL = 1e-9
MIN_JACOBIAN_DET = 0.1
MIN_FRAME_DET = 0.05
SUPPORT_TOL = 1e-13
NEWTON_MAX_ITER = 60
DAMPING_HALVINGS = 8

PointRule = Callable[[np.ndarray], np.ndarray]


class GeometryError(RuntimeError):
    def __init__(
        self, message: str, category: str = "unknown", worst_value: float | None = None
    ):
        super().__init__(message)
        self.category = category
        self.worst_value = worst_value


def partial(f: ScalarField, axis: int) -> ScalarField:
    kt = wave_grid(f.spec).k_tilde[axis]
    return inverse(1j * kt * forward(f), f.spec)


def gradient(f: ScalarField) -> list[ScalarField]:
    spectrum = forward(f)
    return [
        inverse(1j * kt * spectrum, f.spec) for kt in wave_grid(f.spec).k_tilde
    ]


def laplacian(f: ScalarField) -> ScalarField:
    """Positive Laplacian -sum d^2 via the symbol sum k_tilde^2."""
    return inverse(wave_grid(f.spec).laplacian * forward(f), f.spec)


def vf_apply(Y: VectorField, f: ScalarField) -> ScalarField:
    """Yf = sum_i Y^i d_i f."""
    total = np.zeros(f.spec.shape)
    for comp, df in zip(Y.components, gradient(f)):
        total += comp.samples * df.samples
    return ScalarField(f.spec, total)


def _accumulate(spec: GridSpec, degree: int, terms) -> FormField:
    out = {idx: np.zeros(spec.shape) for idx in multi_indices(spec.ndim, degree)}
    for idx, values in terms:
        out[idx] += values
    return FormField.from_arrays(spec, degree, out.values())


def ext_d(omega: FormField) -> FormField:
    spec = omega.spec
    k = omega.degree
    if k >= spec.ndim:
        raise FieldError(f"d of a degree-{k} form in dimension {spec.ndim}", "degree")
    grid = wave_grid(spec)
    spectra = {idx: forward(c) for idx, c in omega.components.items()}

    def terms():
        for target in multi_indices(spec.ndim, k + 1):
            for pos, axis in enumerate(target):
                rest = target[:pos] + target[pos + 1:]
                sign = -1.0 if pos % 2 else 1.0
                deriv = inverse(1j * grid.k_tilde[axis] * spectra[rest], spec)
                yield target, sign * deriv.samples

    return _accumulate(spec, k + 1, terms())


def wedge(sigma: FormField, omega: FormField) -> FormField:
    spec = sigma.spec
    degree = sigma.degree + omega.degree
    if degree > spec.ndim:
        raise FieldError(
            f"wedge degree {degree} exceeds dimension {spec.ndim}", "degree"
        )

    def terms():
        for a, sa in sigma.components.items():
            for b, ob in omega.components.items():
                sign = permutation_sign(a + b)
                if sign:
                    yield tuple(sorted(a + b)), sign * sa.samples * ob.samples

    return _accumulate(spec, degree, terms())


def interior(Y: VectorField, omega: FormField) -> FormField:
    spec = omega.spec
    k = omega.degree
    if k == 0:
        raise FieldError("interior product of a 0-form", "degree")

    def terms():
        for target in multi_indices(spec.ndim, k - 1):
            for i in range(spec.ndim):
                if i in target:
                    continue
                full = (i,) + target
                sign = permutation_sign(full)
                source = omega.components[tuple(sorted(full))]
                yield target, sign * Y.components[i].samples * source.samples

    return _accumulate(spec, k - 1, terms())


def lie_derivative(Y: VectorField, omega: FormField) -> FormField:
    """Cartan formula d(i_Y w) + i_Y(dw)."""
    n = omega.spec.ndim
    if omega.degree == 0:
        return interior(Y, ext_d(omega))
    first = ext_d(interior(Y, omega))
    if omega.degree == n:
        return first
    return first + interior(Y, ext_d(omega))


def codifferential(omega: FormField) -> FormField:
    spec = omega.spec
    k = omega.degree
    if k == 0:
        raise FieldError("codifferential of a 0-form", "degree")
    grid = wave_grid(spec)

    def terms():
        for idx, comp in omega.components.items():
            spectrum = forward(comp)
            for pos, axis in enumerate(idx):
                rest = idx[:pos] + idx[pos + 1:]
                # (-1)^l with l counted from 1
                sign = 1.0 if pos % 2 else -1.0
                deriv = inverse(1j * grid.k_tilde[axis] * spectrum, spec)
                yield rest, sign * deriv.samples

    return _accumulate(spec, k - 1, terms())


def hodge_laplacian(omega: FormField) -> FormField:
    n = omega.spec.ndim
    parts = []
    if omega.degree > 0:
        parts.append(ext_d(codifferential(omega)))
    if omega.degree < n:
        parts.append(codifferential(ext_d(omega)))
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return total


def form_laplacian(omega: FormField) -> FormField:
    return omega.map(laplacian)


def interpolate(f: ScalarField, points: Sequence[np.ndarray]) -> np.ndarray:
    """Periodic cubic interpolation of f at absolute coordinates `points`."""
    spec = f.spec
    coords = [
        (np.asarray(p) + spec.half_width) / h for p, h in zip(points, spec.spacing)
    ]
    return ndimage.map_coordinates(
        np.asarray(f.samples), coords, order=3, mode="grid-wrap"
    )


def fd_jacobian(spec: GridSpec, phi: Sequence[np.ndarray]) -> np.ndarray:
    """Fourth-order central differences of non-periodic samples, [i][j] = d_j phi^i."""
    n = spec.ndim
    jac = np.empty((n, n) + spec.shape)
    for i in range(n):
        for j in range(n):
            h = spec.spacing[j]
            values = np.asarray(phi[i])
            edge = np.gradient(values, h, axis=j, edge_order=2)
            inner = np.moveaxis(edge.copy(), j, 0)
            v = np.moveaxis(values, j, 0)
            inner[2:-2] = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * h)
            jac[i, j] = np.moveaxis(inner, 0, j)
    return jac


def _spectral_jacobian(R: Sequence[ScalarField]) -> np.ndarray:
    return np.stack([np.stack([g.samples for g in gradient(r)]) for r in R])


@dataclass(frozen=True, eq=False)
class DiffeoGrid:
    """F = id + R with sampled inverse Phi and its Jacobian.

    `phi` holds absolute coordinates of Phi(y) at each target node y and
    `resolved` marks the nodes where Phi is meaningful.
    """

    spec: GridSpec
    R: tuple[ScalarField, ...] | None
    phi: tuple[ScalarField, ...]
    jac_phi: MatrixField
    resolved: np.ndarray
    inversion_error: float = 0.0
    grad_R: np.ndarray | None = None

    @classmethod
    def identity(cls, spec: GridSpec) -> "DiffeoGrid":
        return cls(
            spec,
            tuple(ScalarField.zeros(spec) for _ in range(spec.ndim)),
            tuple(ScalarField(spec, x) for x in spec.nodes()),
            MatrixField.identity(spec),
            np.ones(spec.shape, dtype=bool),
        )

    @classmethod
    def from_samples(
        cls,
        spec: GridSpec,
        phi: Sequence[np.ndarray],
        resolved: np.ndarray | None = None,
        jac: np.ndarray | None = None,
    ) -> "DiffeoGrid":
        jac = fd_jacobian(spec, phi) if jac is None else jac
        resolved = np.ones(spec.shape, dtype=bool) if resolved is None else resolved
        return cls(
            spec,
            None,
            tuple(ScalarField(spec, p) for p in phi),
            MatrixField.from_array(spec, jac),
            resolved,
        )

    @classmethod
    def from_displacement(
        cls,
        R: Sequence[ScalarField],
        tol: float | None = None,
        max_iter: int = NEWTON_MAX_ITER,
        grad_R: np.ndarray | None = None,
    ) -> "DiffeoGrid":
        """Invert x + R(x) = y at every node by damped Newton iteration.

        `grad_R[i][j]` = d_j R^i; spectral derivatives of R when omitted.
        """
        spec = R[0].spec
        n = spec.ndim
        tol = INVERSION_TOL * spec.half_width if tol is None else tol
        if grad_R is None:
            grad_R = _spectral_jacobian(R)
        grad_fields = [
            [ScalarField(spec, grad_R[i, j]) for j in range(n)] for i in range(n)
        ]
        ys = np.stack(spec.nodes())

        def evaluate(x):
            disp = np.stack([interpolate(r, x) for r in R])
            jac = np.stack(
                [np.stack([interpolate(grad_fields[i][j], x) for j in range(n)])
                 for i in range(n)]
            )
            jac += np.eye(n).reshape((n, n) + (1,) * n)
            return x + disp - ys, jac

        x = ys - np.stack([r.samples for r in R])
        residual, jac = evaluate(x)
        error = float(np.max(np.abs(residual)))
        for _ in range(max_iter):
            if error <= tol:
                break
            det = det_array(jac)
            if np.min(np.abs(det)) < MIN_JACOBIAN_DET:
                raise GeometryError(
                    "Jacobian of id + R is near-singular",
                    category="singular-jacobian",
                    worst_value=float(np.min(np.abs(det))),
                )
            step = np.einsum("ij...,j...->i...", inv_array(jac, det), residual)
            damping = np.ones(spec.shape)
            current = np.sqrt(np.sum(residual**2, axis=0))
            for _attempt in range(DAMPING_HALVINGS):
                trial = x - damping * step
                trial_residual, trial_jac = evaluate(trial)
                trial_norm = np.sqrt(np.sum(trial_residual**2, axis=0))
                improved = (trial_norm <= current) | (trial_norm <= tol)
                if improved.all():
                    break
                damping = np.where(improved, damping, 0.5 * damping)
            else:
                raise GeometryError(
                    "Newton step does not reduce the inversion residual",
                    category="inversion",
                    worst_value=error,
                )
            x, residual, jac = trial, trial_residual, trial_jac
            error = float(np.max(np.abs(residual)))
        if error > tol:
            raise GeometryError(
                f"Newton inversion stalled at residual {error:.3e}",
                category="inversion",
                worst_value=error,
            )
        det = det_array(jac)
        if np.min(np.abs(det)) < MIN_JACOBIAN_DET:
            raise GeometryError(
                "Jacobian of id + R is near-singular",
                category="singular-jacobian",
                worst_value=float(np.min(np.abs(det))),
            )
        return cls(
            spec,
            tuple(R),
            tuple(ScalarField(spec, xi) for xi in x),
            MatrixField.from_array(spec, inv_array(jac, det)),
            np.ones(spec.shape, dtype=bool),
            error,
            np.asarray(grad_R, dtype=np.float64),
        )

    def phi_array(self) -> np.ndarray:
        return np.stack([p.samples for p in self.phi])

    def forward_jacobian(self) -> np.ndarray:
        """I + grad R at source nodes, [k][j] = d_j F^k."""
        if self.R is None:
            raise GeometryError(
                "forward Jacobian needs the displacement", category="no-displacement"
            )
        n = self.spec.ndim
        jac = _spectral_jacobian(self.R) if self.grad_R is None else self.grad_R
        return jac + np.eye(n).reshape((n, n) + (1,) * n)


def compose(f: ScalarField, D: DiffeoGrid) -> ScalarField:
    """f o Phi sampled on the target grid; identity outside the resolved set."""
    values = interpolate(f, [p.samples for p in D.phi])
    return ScalarField(f.spec, np.where(D.resolved, values, f.samples))


def _check_support(omega: FormField, D: DiffeoGrid) -> None:
    if D.resolved.all():
        return
    magnitude = max(omega.sup_norm(), 1e-300)
    outside = ~D.resolved
    leak = max(
        float(np.max(np.abs(c.samples[outside]))) for c in omega.components.values()
    )
    if leak > SUPPORT_TOL * magnitude:
        raise GeometryError(
            "form support leaks outside the resolved region",
            category="support",
            worst_value=leak,
        )


def pushforward_form(D: DiffeoGrid, omega: FormField) -> FormField:
    """F_* w = Phi^* w: components at Phi contracted with minors of grad Phi."""
    _check_support(omega, D)
    spec = omega.spec
    k = omega.degree
    jac = D.jac_phi.array
    composed = {idx: compose(c, D).samples for idx, c in omega.components.items()}
    if k == 0:
        return FormField.from_arrays(spec, 0, composed.values())

    def terms():
        for target in multi_indices(spec.ndim, k):
            for source, values in composed.items():
                minor = jac[np.ix_(source, target)]
                yield target, values * det_array(minor)

    return _accumulate(spec, k, terms())


def _vector_values(D: DiffeoGrid, X) -> np.ndarray:
    points = D.phi_array()
    if isinstance(X, VectorField):
        return np.stack([interpolate(c, points) for c in X.components])
    return np.asarray(X(points), dtype=np.float64)


def pullback_vf(D: DiffeoGrid, X) -> VectorField:
    """Phi^* X = (grad Phi)^-1 X(Phi) on the target grid.

    `X` is a grid VectorField or a rule mapping points (n, ...) to (n, ...).
    """
    jac = D.jac_phi.array
    det = det_array(jac)
    worst = float(np.min(np.abs(det[D.resolved])))
    if worst < MIN_JACOBIAN_DET:
        raise GeometryError(
            "Jacobian of the inverse map is near-singular",
            category="singular-jacobian",
            worst_value=worst,
        )
    safe_det = np.where(D.resolved, det, 1.0)
    values = _vector_values(D, X)
    out = np.einsum("ij...,j...->i...", inv_array(jac, safe_det), values)
    out = np.where(D.resolved, out, 0.0)
    return VectorField.from_array(D.spec, out)


def pushforward_vf_source(D: DiffeoGrid, X: VectorField) -> VectorField:
    """(F_* X) o F sampled at source nodes: grad F . X."""
    out = np.einsum("kj...,j...->k...", D.forward_jacobian(), X.to_array())
    return VectorField.from_array(X.spec, out)


def dual_coframe(frame: Frame) -> list[FormField]:
    """lambda^k with lambda^k(X_j) = delta; Lambda = (M^T)^-1, M rows = fields."""
    spec = frame.spec
    n = spec.ndim
    if frame.q < n:
        raise GeometryError(f"frame has {frame.q} < {n} fields", category="span")
    m = frame.matrix(n).array
    mt = np.swapaxes(m, 0, 1)
    det = det_array(mt)
    worst = float(np.min(np.abs(det)))
    if worst <= MIN_FRAME_DET:
        raise GeometryError(
            "frame is singular at some node", category="span", worst_value=worst
        )
    lam = inv_array(mt, det)
    return [FormField.from_arrays(spec, 1, lam[k]) for k in range(n)]


def coframe_pairing(coframe: Sequence[FormField], frame: Frame) -> np.ndarray:
    """<lambda^k, X_j> as an array (n, q, *grid)."""
    out = []
    for lam in coframe:
        row = []
        for vf in frame.vfs:
            row.append(interior(vf, lam).scalar().samples)
        out.append(np.stack(row))
    return np.stack(out)


def structure_coefficients(
    coframe: Sequence[FormField], frame: Frame
) -> tuple[tuple[tuple[ScalarField, ...], ...], ...]:
    """c_ij^k with [X_i, X_j] = sum_k c_ij^k X_k, i.e. c_ij^k = -dlambda^k(X_i, X_j)."""
    spec = frame.spec
    n = len(coframe)
    if spec.ndim == 1:
        zero = ScalarField.zeros(spec)
        return (((zero,),),)
    d_lams = [ext_d(lam) for lam in coframe]
    zero = ScalarField.zeros(spec)
    c = [[[zero] * n for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(n):
                value = interior(frame.vfs[j], interior(frame.vfs[i], d_lams[k]))
                c[i][j][k] = -value.scalar()
                c[j][i][k] = value.scalar()
    return tuple(tuple(tuple(row) for row in plane) for plane in c)


def main():
    parser = argparse.ArgumentParser(description="Structure coefficients of a frame.")
    parser.add_argument("--frame", required=True)
    args = parser.parse_args()
    frame = field_io_read(Path(args.frame))
    c = structure_coefficients(dual_coframe(frame), frame)
    for i, plane in enumerate(c):
        for j, row in enumerate(plane):
            for k, coeff in enumerate(row):
                print(f"c[{i}][{j}][{k}] sup = {coeff.sup_norm():.6e}")


if __name__ == "__main__":
    main()
