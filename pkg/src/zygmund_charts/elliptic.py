"""Dirichlet problems on the ball and the coordinate-improvement PDE.

Sign convention: the Laplacian is the positive operator -sum d^2 throughout.
Two discretizations share the Picard driver:

- "stencil": conservative half-point divergence stencils, solved against the
  flat 5/7-point operator;
- "spectral": spectral derivatives with the Dirichlet operator built from the
  periodic Newtonian potential minus its discrete harmonic extension.
"""

from __future__ import annotations

import argparse
from dataclasses import asdict, dataclass, field
from functools import lru_cache, reduce
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import cg
from tqdm import tqdm

from zygmund_charts.exterior import (
    DiffeoGrid,
    codifferential,
    fd_jacobian,
    gradient,
    partial,
)
from zygmund_charts.fields import (
    FormField,
    GridSpec,
    MatrixField,
    ScalarField,
    det_array,
    inv_array,
    matmul_array,
    radial_cutoff,
)
from zygmund_charts.potential_para import check_support, newtonian
from zygmund_charts.spectral import build_filter_bank, low_pass

BAND_CELLS = 2
CG_RTOL = 1e-10
PICARD_TOL = 1e-10
MAX_PICARD = 80
PICARD_GRACE = 3
RATIO_FLOOR = 1e-9
MIN_METRIC_DET = 1e-3
SUPPORT_RADIUS = 0.5
# Rolls solutions off before spectral differentiation; 1 inside TAPER[0].
TAPER = (0.75, 0.95)
COEFFICIENT_TOL = 1e-13
TB_RADIUS = 0.6
RESIDUAL_RADIUS = 0.4
RESIDUAL_CUTOFF = (0.6, 0.7)
SCHEMES = ("spectral", "stencil")


@dataclass
class SolverTelemetry:
    picard_ratio: list[float] = field(default_factory=list)
    cg_iters: int = 0
    residual: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class SolverError(RuntimeError):
    def __init__(
        self,
        message: str,
        category: str = "unknown",
        iterations: int | None = None,
        ratio: float | None = None,
        telemetry: SolverTelemetry | None = None,
    ):
        super().__init__(message)
        self.category = category
        self.iterations = iterations
        self.ratio = ratio
        self.telemetry = telemetry


@dataclass(frozen=True, eq=False)
class BallMask:
    """Inside nodes |x| < radius and the band radius <= |x| <= radius + 2h."""

    spec: GridSpec
    radius: float
    inside: np.ndarray
    band: np.ndarray

    @property
    def outside(self) -> np.ndarray:
        return ~(self.inside | self.band)

    @property
    def inside_index(self) -> np.ndarray:
        return np.flatnonzero(self.inside.ravel())


@lru_cache(maxsize=16)
def ball_mask(spec: GridSpec, radius: float = 1.0) -> BallMask:
    width = BAND_CELLS * max(spec.spacing)
    if radius <= 0 or radius + width >= spec.half_width:
        raise SolverError(
            f"ball of radius {radius} does not fit the torus", category="mask"
        )
    r = spec.radius()
    inside = r < radius
    band = (r >= radius) & (r <= radius + width)
    for arr in (inside, band):
        arr.setflags(write=False)
    return BallMask(spec, float(radius), inside, band)


def _shift(n: int) -> sparse.csr_matrix:
    """(S u)_i = u_{i+1}, periodic."""
    return (sparse.eye(n, k=1) + sparse.eye(n, k=-(n - 1))).tocsr()


def _kron(ops: Sequence[sparse.spmatrix]) -> sparse.csr_matrix:
    return reduce(lambda a, b: sparse.kron(a, b, format="csr"), ops).tocsr()


def _axis_operator(spec: GridSpec, axis: int, off_axis: str) -> sparse.csr_matrix:
    """Forward difference on `axis`; identity or 2-point average elsewhere."""
    ops = []
    for a, (n, h) in enumerate(zip(spec.sizes, spec.spacing)):
        eye = sparse.eye(n, format="csr")
        if a == axis:
            ops.append((_shift(n) - eye) / h)
        elif off_axis == "average":
            ops.append(0.5 * (_shift(n) + eye))
        else:
            ops.append(eye)
    return _kron(ops)


def _half_average(values: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    for axis in axes:
        values = 0.5 * (values + np.roll(values, -1, axis=axis))
    return values


@lru_cache(maxsize=8)
def laplacian_matrix(spec: GridSpec) -> sparse.csr_matrix:
    """5-point (2-D) / 7-point (3-D) positive Laplacian, periodic."""
    terms = []
    for a in range(spec.ndim):
        g = _axis_operator(spec, a, "identity")
        terms.append(g.T @ g)
    return reduce(lambda x, y: x + y, terms).tocsr()


@lru_cache(maxsize=8)
def _dirichlet_system(spec: GridSpec, radius: float):
    mask = ball_mask(spec, radius)
    idx = mask.inside_index
    rows = laplacian_matrix(spec)[idx]
    return idx, rows[:, idx].tocsr(), rows


def _cg_solve(
    K: sparse.spmatrix,
    rhs: np.ndarray,
    rtol: float,
    telemetry: SolverTelemetry | None,
) -> np.ndarray:
    count = 0

    def callback(_xk):
        nonlocal count
        count += 1

    maxiter = 10 * K.shape[0]
    x, info = cg(K, rhs, rtol=rtol, atol=0.0, maxiter=maxiter, callback=callback)
    if telemetry is not None:
        telemetry.cg_iters += count
    if info != 0:
        raise SolverError(
            f"conjugate gradient did not converge in {maxiter} iterations",
            category="cg",
            iterations=count,
            telemetry=telemetry,
        )
    return x


def _mask_for(spec: GridSpec, mask: BallMask | None) -> BallMask:
    if mask is None:
        return ball_mask(spec)
    if mask.spec != spec:
        raise SolverError("mask built for a different grid", category="mask")
    return mask


def dirichlet_solve(
    f: ScalarField,
    boundary: ScalarField | None = None,
    mask: BallMask | None = None,
    telemetry: SolverTelemetry | None = None,
    rtol: float = CG_RTOL,
) -> ScalarField:
    """u with -sum d^2 u = f on inside nodes and u = g elsewhere."""
    spec = f.spec
    mask = _mask_for(spec, mask)
    idx, K, rows = _dirichlet_system(spec, mask.radius)
    g = np.zeros(spec.size) if boundary is None else boundary.samples.ravel().copy()
    g[idx] = 0.0
    rhs = f.samples.ravel()[idx] - rows @ g
    u = g
    u[idx] = _cg_solve(K, rhs, rtol, telemetry)
    return ScalarField(spec, u.reshape(spec.shape))


def dirichlet_spectral(
    f: ScalarField,
    mask: BallMask | None = None,
    telemetry: SolverTelemetry | None = None,
    rtol: float = CG_RTOL,
) -> ScalarField:
    """Newtonian potential of f minus the discrete harmonic extension of its trace."""
    mask = _mask_for(f.spec, mask)
    sigma = newtonian(
        FormField.from_scalar(f), subtract_mean=True, support_radius=None
    ).scalar()
    harmonic = dirichlet_solve(
        ScalarField.zeros(f.spec), sigma, mask, telemetry, rtol
    )
    values = np.where(mask.inside, sigma.samples - harmonic.samples, 0.0)
    return ScalarField(f.spec, values)


def metric_from_A(A: MatrixField) -> tuple[MatrixField, ScalarField]:
    """g^{-1} = (I+A)^{-1}(I+A)^{-T} and sqrt(det g) = det(I+A)."""
    spec = A.spec
    n = spec.ndim
    m = A.array + np.eye(n).reshape((n, n) + (1,) * n)
    det = det_array(m)
    worst = float(np.min(np.abs(det)))
    if worst < MIN_METRIC_DET:
        raise SolverError(
            f"I + A is near-singular (|det| = {worst:.3e})", category="singular-metric"
        )
    inv = inv_array(m, det)
    ginv = matmul_array(inv, np.swapaxes(inv, 0, 1))
    return MatrixField.from_array(spec, ginv), ScalarField(spec, det)


def coefficient_field(A: MatrixField) -> np.ndarray:
    """sqrt(det g) g^{ij} as an (n, n, *grid) array."""
    ginv, sqrtdet = metric_from_A(A)
    return sqrtdet.samples * ginv.array


def divergence_operator(spec: GridSpec, coeff: np.ndarray) -> sparse.csr_matrix:
    """Symmetric sparse form of -div(a grad), coefficients at half points."""
    n = spec.ndim
    everything = tuple(range(n))
    total = None
    for a in range(n):
        g = _axis_operator(spec, a, "identity")
        weight = _half_average(coeff[a, a], (a,)).ravel()
        term = g.T @ sparse.diags(weight) @ g
        total = term if total is None else total + term
    for a in range(n):
        ca = _axis_operator(spec, a, "average")
        for b in range(n):
            if a == b:
                continue
            cb = _axis_operator(spec, b, "average")
            weight = _half_average(coeff[a, b], everything).ravel()
            total = total + ca.T @ sparse.diags(weight) @ cb
    return total.tocsr()


def weak_rhs(spec: GridSpec, coeff: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Discrete -div(a T) paired the same way as divergence_operator."""
    n = spec.ndim
    everything = tuple(range(n))
    total = np.zeros(spec.size)
    for a in range(n):
        g = _axis_operator(spec, a, "identity")
        flux = _half_average(coeff[a, a], (a,)) * _half_average(target[a], (a,))
        total += g.T @ flux.ravel()
    for a in range(n):
        ca = _axis_operator(spec, a, "average")
        for b in range(n):
            if a == b:
                continue
            flux = _half_average(coeff[a, b], everything) * _half_average(
                target[b], everything
            )
            total += ca.T @ flux.ravel()
    return total


def _divergence(spec: GridSpec, flux: Sequence[np.ndarray]) -> np.ndarray:
    total = np.zeros(spec.shape)
    for j, values in enumerate(flux):
        total += partial(ScalarField(spec, values), j).samples
    return total


def solve_divergence_form(
    coeff: np.ndarray,
    targets: Sequence[np.ndarray],
    mask: BallMask,
    scheme: str = "spectral",
    telemetry: SolverTelemetry | None = None,
    tol: float = PICARD_TOL,
    max_iter: int = MAX_PICARD,
    cg_rtol: float = CG_RTOL,
    progress: bool = False,
) -> list[np.ndarray]:
    """Solve div(a (grad R^k - T^k)) = 0 in the ball with R^k = 0 outside.

    Picard iteration R_{m+1} = D(div((a - I) grad R_m) - div(a T)); the
    contraction ratio of successive increments is recorded in `telemetry`.
    """
    if scheme not in SCHEMES:
        raise SolverError(f"unknown scheme {scheme!r}", category="config")
    spec = mask.spec
    n = spec.ndim
    telemetry = SolverTelemetry() if telemetry is None else telemetry
    shape = spec.shape
    idx = mask.inside_index

    if scheme == "stencil":
        K_a = divergence_operator(spec, coeff)
        K_excess = (K_a - laplacian_matrix(spec)).tocsr()
        ells = [weak_rhs(spec, coeff, T) for T in targets]

        def step(current: list[np.ndarray]) -> list[np.ndarray]:
            out = []
            for R, ell in zip(current, ells):
                rhs = (ell - K_excess @ R.ravel()).reshape(shape)
                u = dirichlet_solve(
                    ScalarField(spec, rhs), None, mask, telemetry, cg_rtol
                )
                out.append(np.asarray(u.samples))
            return out

    else:
        excess = coeff - np.eye(n).reshape((n, n) + (1,) * n)
        beyond = spec.radius() >= TAPER[0]
        if np.max(np.abs(excess[..., beyond]), initial=0.0) > COEFFICIENT_TOL:
            raise SolverError(
                f"spectral scheme needs flat coefficients beyond radius {TAPER[0]}",
                category="config",
            )
        taper = radial_cutoff(spec, *TAPER).samples
        sources = []
        for T in targets:
            flux = [sum(coeff[i, j] * T[i] for i in range(n)) for j in range(n)]
            sources.append(-_divergence(spec, flux))

        def step(current: list[np.ndarray]) -> list[np.ndarray]:
            out = []
            for R, source in zip(current, sources):
                grads = [g.samples for g in gradient(ScalarField(spec, taper * R))]
                flux = [
                    sum(excess[i, j] * grads[i] for i in range(n)) for j in range(n)
                ]
                rhs = _divergence(spec, flux) + source
                u = dirichlet_spectral(ScalarField(spec, rhs), mask, telemetry, cg_rtol)
                out.append(np.asarray(u.samples))
            return out

    current = [np.zeros(shape) for _ in targets]
    previous_diff = None
    diff = 0.0
    scale = 0.0
    for m in tqdm(range(max_iter), desc="Picard", disable=not progress):
        new = step(current)
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(new, current))
        scale = max(float(np.max(np.abs(a))) for a in new)
        if previous_diff is not None and previous_diff > RATIO_FLOOR * scale:
            ratio = diff / previous_diff
            telemetry.picard_ratio.append(ratio)
            if m >= PICARD_GRACE and ratio >= 1.0:
                raise SolverError(
                    f"Picard iteration diverges (ratio {ratio:.3f})",
                    category="picard-divergence",
                    iterations=m + 1,
                    ratio=ratio,
                    telemetry=telemetry,
                )
        current = new
        if diff <= tol * scale or scale == 0.0:
            break
        previous_diff = diff
    else:
        raise SolverError(
            f"Picard iteration stalled at increment {diff:.3e}",
            category="picard-stall",
            iterations=max_iter,
            telemetry=telemetry,
        )

    if scheme == "stencil":
        worst = 0.0
        for R, ell in zip(current, ells):
            residual = (K_a @ R.ravel() - ell)[idx]
            norm = max(float(np.max(np.abs(ell[idx]))), 1e-300)
            worst = max(worst, float(np.max(np.abs(residual))) / norm)
        telemetry.residual = worst
    else:
        telemetry.residual = diff / scale if scale > 0 else 0.0
    return current


def energy_gap(
    coeff: np.ndarray,
    solution: Sequence[np.ndarray],
    targets: Sequence[np.ndarray],
    mask: BallMask,
) -> float:
    """max_k |R^T K R - R^T l| / |R^T l| over inside nodes."""
    spec = mask.spec
    idx = mask.inside_index
    K = divergence_operator(spec, coeff)[idx][:, idx]
    worst = 0.0
    for R, T in zip(solution, targets):
        r = R.ravel()[idx]
        ell = weak_rhs(spec, coeff, T)[idx]
        pairing = float(r @ ell)
        energy = float(r @ (K @ r))
        if pairing == 0.0 and energy == 0.0:
            continue
        worst = max(worst, abs(energy - pairing) / max(abs(pairing), 1e-300))
    return worst


def _check_matrix_support(A: MatrixField, radius: float) -> None:
    for row in A.entries:
        for entry in row:
            check_support(entry, radius, "coefficient matrix")


def solve_R(
    A: MatrixField,
    mask: BallMask | None = None,
    scheme: str = "spectral",
    telemetry: SolverTelemetry | None = None,
    tol: float = PICARD_TOL,
    max_iter: int = MAX_PICARD,
    cg_rtol: float = CG_RTOL,
    progress: bool = False,
) -> DiffeoGrid:
    """F = id + R from the coordinate PDE, inverted node by node.

    R vanishes outside the ball, so its gradient jumps at |x| = 1.
    """
    spec = A.spec
    mask = _mask_for(spec, mask)
    _check_matrix_support(A, SUPPORT_RADIUS)
    coeff = coefficient_field(A)
    targets = [A.array[k] for k in range(spec.ndim)]
    raw = solve_divergence_form(
        coeff, targets, mask, scheme, telemetry, tol, max_iter, cg_rtol, progress
    )
    R = [ScalarField(spec, r) for r in raw]
    return DiffeoGrid.from_displacement(R, grad_R=displacement_jacobian(R))


def displacement_jacobian(R: Sequence[ScalarField]) -> np.ndarray:
    """[i][j] = d_j R^i for displacements vanishing outside the unit ball.

    Spectral derivatives of the rolled-off field inside TAPER[0], fourth-order
    differences across the kink beyond it.
    """
    spec = R[0].spec
    taper = radial_cutoff(spec, *TAPER).samples
    smooth = np.stack(
        [np.stack([g.samples for g in gradient(ScalarField(spec, taper * r.samples))]) for r in R]
    )
    rough = fd_jacobian(spec, [r.samples for r in R])
    return np.where(spec.radius() < TAPER[0], smooth, rough)


def _remainder_array(arr: np.ndarray) -> np.ndarray:
    n = arr.shape[0]
    m = arr + np.eye(n).reshape((n, n) + (1,) * (arr.ndim - 2))
    det = det_array(m)
    inv = inv_array(m, det)
    weight = det * matmul_array(inv, np.swapaxes(inv, 0, 1))
    weight = weight - np.eye(n).reshape((n, n) + (1,) * (arr.ndim - 2))
    return np.einsum("ij...,kj...->ki...", weight, arr)


def remainder(f: MatrixField) -> MatrixField:
    """R_i^k(f) = sum_j (sqrt(det h) h^{ij} - delta^{ij}) f_j^k, h from f."""
    return MatrixField.from_array(f.spec, _remainder_array(f.array))


def remainder_series_check(
    B: MatrixField, node: tuple[int, ...] | None = None, terms: int = 12
) -> float:
    """Distance between the exact remainder and its power series at one node."""
    arr = B.array
    if node is None:
        magnitude = np.sum(np.abs(arr), axis=(0, 1))
        flat = np.argmax(magnitude)
        node = tuple(int(i) for i in np.unravel_index(flat, arr.shape[2:]))
    b = arr[(slice(None), slice(None)) + tuple(node)]
    n = b.shape[0]
    exact = _remainder_array(b.reshape((n, n, 1)))[..., 0]
    inv = np.zeros((n, n))
    power = np.eye(n)
    log_det = 0.0
    for m in range(terms):
        inv += power
        power = -power @ b
        log_det -= np.trace(power) / (m + 1)
    weight = np.exp(log_det) * inv @ inv.T - np.eye(n)
    series = b @ weight.T
    return float(np.max(np.abs(exact - series)))


def pde_B_residual(
    B: MatrixField,
    region_radius: float = RESIDUAL_RADIUS,
    level: int | None = None,
) -> list[float]:
    """Low-pass weak residual of sum_i d_i(sqrt(det h) h^{ij} b_j^k), per k.

    Measured as sup over |y| < region_radius of |psi_J * div(chi W^k)|,
    normalized by 2^J sup|chi W^k|.
    """
    spec = B.spec
    coeff = coefficient_field(B)
    W = np.einsum("ij...,kj...->ki...", coeff, B.array)
    chi = radial_cutoff(spec, *RESIDUAL_CUTOFF).samples
    region = spec.radius() < region_radius
    bank = build_filter_bank(spec)
    J = max(bank.jmax - 1, 0) if level is None else level
    out = []
    for k in range(spec.ndim):
        local = chi * W[k]
        scale = 2.0**J * float(np.max(np.abs(local)))
        if scale == 0.0:
            out.append(0.0)
            continue
        div = low_pass(ScalarField(spec, _divergence(spec, local)), J, bank)
        out.append(float(np.max(np.abs(div.samples[region]))) / scale)
    return out


def contraction_TB(
    B0: MatrixField,
    d_eta: Sequence[FormField],
    boundary: MatrixField | None = None,
    iterations: int = MAX_PICARD,
    radius: float = TB_RADIUS,
    telemetry: SolverTelemetry | None = None,
    tol: float = PICARD_TOL,
    progress: bool = False,
) -> MatrixField:
    """Iterate f -> H(B|boundary) + D(codiff d eta^k)_j + D(d_j sum_i d_i R_i^k(f)).

    Runs on the ball of `radius` from f = 0; outside the ball the iterate
    equals the boundary data.
    """
    spec = B0.spec
    n = spec.ndim
    mask = ball_mask(spec, radius)
    telemetry = SolverTelemetry() if telemetry is None else telemetry
    boundary = B0 if boundary is None else boundary
    zero = ScalarField.zeros(spec)
    base = np.zeros((n, n) + spec.shape)
    for k in range(n):
        curl = codifferential(d_eta[k])
        for j in range(n):
            harmonic = dirichlet_solve(zero, boundary.entries[k][j], mask, telemetry)
            rough = dirichlet_spectral(curl.components[(j,)], mask, telemetry)
            base[k, j] = harmonic.samples + rough.samples

    def apply(f: np.ndarray) -> np.ndarray:
        rem = _remainder_array(f)
        out = base.copy()
        for k in range(n):
            source = _divergence(spec, rem[k])
            source_field = ScalarField(spec, source)
            for j in range(n):
                second = partial(source_field, j)
                out[k, j] += dirichlet_spectral(second, mask, telemetry).samples
        return out

    current = np.zeros_like(base)
    previous_diff = None
    for m in tqdm(range(iterations), desc="T_B", disable=not progress):
        new = apply(current)
        diff = float(np.max(np.abs(new - current)))
        scale = float(np.max(np.abs(new)))
        if previous_diff is not None and previous_diff > RATIO_FLOOR * scale:
            ratio = diff / previous_diff
            telemetry.picard_ratio.append(ratio)
            if m >= PICARD_GRACE and ratio >= 1.0:
                raise SolverError(
                    f"T_B is not a contraction at this amplitude (ratio {ratio:.3f})",
                    category="not-contracting",
                    iterations=m + 1,
                    ratio=ratio,
                    telemetry=telemetry,
                )
        current = new
        if scale == 0.0 or diff <= tol * scale:
            break
        previous_diff = diff
    else:
        telemetry.residual = diff / scale
        raise SolverError(
            f"T_B did not converge in {iterations} iterations "
            f"(increment {diff:.3e})",
            category="tb-stall",
            iterations=iterations,
            ratio=contraction_ratio(telemetry),
            telemetry=telemetry,
        )
    telemetry.residual = diff / scale if scale > 0 else 0.0
    return MatrixField.from_array(spec, current)


def contraction_ratio(telemetry: SolverTelemetry) -> float:
    """Largest recorded successive-increment ratio, 0 when none was recorded."""
    return max(telemetry.picard_ratio, default=0.0)


def fixed_point_recovery(
    fixed: MatrixField, B0: MatrixField, radius: float = TB_RADIUS
) -> float:
    region = fixed.spec.radius() < radius
    scale = max(float(np.max(np.abs(B0.array[:, :, region]))), 1e-300)
    gap = np.abs(fixed.array - B0.array)[:, :, region]
    return float(np.max(gap)) / scale


def contraction_threshold(
    make_input: Callable[[float], tuple[MatrixField, Sequence[FormField]]],
    amplitudes: Sequence[float],
    iterations: int = MAX_PICARD,
    radius: float = TB_RADIUS,
    progress: bool = False,
) -> tuple[pd.DataFrame, float | None]:
    """Sweep amplitudes upward; report ratios and the first non-contracting one."""
    rows = []
    threshold = None
    for amplitude in tqdm(sorted(amplitudes), desc="amplitudes", disable=not progress):
        B0, d_eta = make_input(amplitude)
        telemetry = SolverTelemetry()
        try:
            contraction_TB(B0, d_eta, None, iterations, radius, telemetry)
            ratio = contraction_ratio(telemetry)
        except SolverError as exc:
            if exc.category not in ("not-contracting", "tb-stall"):
                raise
            ratio = float(exc.ratio)
        contracting = ratio < 1.0
        if not contracting and threshold is None:
            threshold = float(amplitude)
        rows.append(
            {"amplitude": float(amplitude), "ratio": ratio, "contracting": contracting}
        )
    return pd.DataFrame(rows), threshold


def main():
    parser = argparse.ArgumentParser(description="Solve -Lap u = 1 on the unit disc.")
    parser.add_argument("--size", type=int, default=128)
    args = parser.parse_args()
    spec = GridSpec.cube(2, args.size)
    telemetry = SolverTelemetry()
    u = dirichlet_solve(ScalarField.constant(spec, 1.0), telemetry=telemetry)
    mask = ball_mask(spec)
    exact = (1.0 - spec.radius() ** 2) / 4.0
    error = float(np.max(np.abs(u.samples - exact)[mask.inside]))
    print(f"Max error: {error:.3e} ({telemetry.cg_iters} CG iterations)")


if __name__ == "__main__":
    main()
