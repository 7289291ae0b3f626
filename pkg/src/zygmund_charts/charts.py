"""Coordinate charts built from a frame: canonical, ray-ODE and harmonic."""

from __future__ import annotations

import argparse
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree
from tqdm import tqdm

from zygmund_charts.elliptic import (
    BallMask,
    SolverTelemetry,
    displacement_jacobian,
    solve_divergence_form,
)
from zygmund_charts.exterior import (
    DiffeoGrid,
    GeometryError,
    interpolate,
    pullback_vf,
)
from zygmund_charts.fields import (
    FormField,
    Frame,
    GridSpec,
    MatrixField,
    ScalarField,
    VectorField,
    cell_average_power,
    det_array,
    one_sided_power,
    radial_cutoff,
    radial_profile,
    smooth_step,
)
from zygmund_charts.spectral import norm_dyadic

FLOW_STEP = 1e-3
RAY_STEP = 1e-3
BLOWUP = 1e6
FD_MARGIN_CELLS = 3
SCALING_CUTOFF = (0.38, 0.48)
MIN_SPAN_DET = 0.5
INJECTIVITY_FRACTION = 0.5

PointRule = Callable[[np.ndarray], np.ndarray]


class ChartError(RuntimeError):
    def __init__(
        self, message: str, category: str = "unknown", radius: float | None = None
    ):
        super().__init__(message)
        self.category = category
        self.radius = radius


@dataclass(frozen=True)
class RuleFrame:
    """Frame given by vectorized rules on points of shape (n, ...).

    `coefficients`, when present, maps points to c[i][j][k] of shape
    (q, q, q, ...) with [X_i, X_j] = sum_k c_ij^k X_k.
    """

    ndim: int
    fields: tuple[PointRule, ...]
    coefficients: PointRule | None = None

    @property
    def q(self) -> int:
        return len(self.fields)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return np.stack([np.asarray(X(points), dtype=np.float64) for X in self.fields])

    def combination(self, t: np.ndarray, points: np.ndarray) -> np.ndarray:
        """sum_i t^i X_i(points); t broadcasts against the point batch."""
        total = np.zeros(np.shape(points))
        for ti, X in zip(t, self.fields):
            total = total + ti * np.asarray(X(points), dtype=np.float64)
        return total

    def on_grid(self, spec: GridSpec) -> Frame:
        points = np.stack(spec.nodes())
        vfs = tuple(
            VectorField.from_array(spec, np.broadcast_to(X(points), points.shape))
            for X in self.fields
        )
        c = None
        if self.coefficients is not None:
            values = np.broadcast_to(
                self.coefficients(points), (self.q,) * 3 + spec.shape
            )
            c = tuple(
                tuple(
                    tuple(ScalarField(spec, values[i, j, k]) for k in range(self.q))
                    for j in range(self.q)
                )
                for i in range(self.q)
            )
        return Frame(vfs, c)

    @classmethod
    def from_grid(cls, frame: Frame) -> "RuleFrame":
        """Cubic periodic interpolation of a sampled frame."""

        def rule(vf: VectorField) -> PointRule:
            return lambda p: np.stack([interpolate(c, p) for c in vf.components])

        coefficients = None
        if frame.c is not None:
            c = frame.c
            q = frame.q

            def coefficients(p):
                return np.stack(
                    [
                        np.stack(
                            [
                                np.stack([interpolate(c[i][j][k], p) for k in range(q)])
                                for j in range(q)
                            ]
                        )
                        for i in range(q)
                    ]
                )

        return cls(frame.spec.ndim, tuple(rule(v) for v in frame.vfs), coefficients)


def _smooth_step_slope(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    inner = (t > 0) & (t < 1)
    safe = np.where(inner, t, 0.5)
    a = np.exp(-1.0 / safe)
    b = np.exp(-1.0 / (1.0 - safe))
    slope = a * b * (1.0 / safe**2 + 1.0 / (1.0 - safe) ** 2) / (a + b) ** 2
    return np.where(inner, slope, 0.0)


def _cutoff_and_dx(points: np.ndarray, inner: float, outer: float):
    r = np.sqrt(np.sum(points**2, axis=0))
    width = outer - inner
    value = smooth_step((outer - r) / width)
    with np.errstate(divide="ignore", invalid="ignore"):
        direction = np.where(r > 0, points[0] / np.where(r > 0, r, 1.0), 0.0)
    dx = -_smooth_step_slope((outer - r) / width) * direction / width
    return value, dx


def loss_example_frame(
    alpha: float,
    scale: float = 1.0,
    cell: float | None = None,
    cutoff: tuple[float, float] | None = None,
) -> RuleFrame:
    """X = d/dx, Y = -x f(y) chi d/dx + d/dy.

    Here f(y) = scale*alpha*(scale*y)_+^(alpha-1).

    `cell` replaces f by its cell averages (needed for alpha < 1);
    `cutoff` = (inner, outer) localizes the rough coefficient radially.
    """
    if alpha <= 0:
        raise ChartError(f"alpha must be positive, got {alpha}", category="config")

    def f(y):
        if cell is not None:
            averaged = cell_average_power(scale * y, alpha - 1, scale * cell)
            return scale * alpha * averaged
        return scale * alpha * one_sided_power(scale * y, alpha - 1)

    def chi(points):
        if cutoff is None:
            ones = np.ones(np.shape(points)[1:])
            return ones, np.zeros_like(ones)
        return _cutoff_and_dx(points, *cutoff)

    def X(points):
        return np.stack([np.ones(points.shape[1:]), np.zeros(points.shape[1:])])

    def Y(points):
        value, _ = chi(points)
        return np.stack(
            [-points[0] * f(points[1]) * value, np.ones(points.shape[1:])]
        )

    def coefficients(points):
        value, dx = chi(points)
        fy = f(points[1])
        c121 = -(fy * value + points[0] * fy * dx)
        out = np.zeros((2, 2, 2) + points.shape[1:])
        out[0, 1, 0] = c121
        out[1, 0, 0] = -c121
        return out

    return RuleFrame(2, (X, Y), coefficients)


def rotation_angle(
    exponent: float = 1.25,
    amplitude: float = 0.5,
    cutoff: tuple[float, float] = (0.3, 0.6),
) -> PointRule:
    """theta = amplitude * chi * x_+^exponent."""

    def theta(points):
        r = np.sqrt(np.sum(points**2, axis=0))
        return amplitude * radial_profile(r, *cutoff) * one_sided_power(
            points[0], exponent
        )

    return theta


def rotation_frame(theta: PointRule) -> RuleFrame:
    """Orthonormal frame rotated by theta(points).

    X1 = cos(theta) d/dx + sin(theta) d/dy, X2 = -sin(theta) d/dx + cos(theta) d/dy.
    """

    def X1(points):
        angle = theta(points)
        return np.stack([np.cos(angle), np.sin(angle)])

    def X2(points):
        angle = theta(points)
        return np.stack([-np.sin(angle), np.cos(angle)])

    return RuleFrame(2, (X1, X2))


def flow(
    frame: RuleFrame,
    p: np.ndarray,
    t: np.ndarray,
    step: float = FLOW_STEP,
    r_weighted: bool = False,
    bound: float = 2.0,
) -> np.ndarray:
    """E(1) for dE/dr = sum t^i X_i(E), E(0) = p, by fixed-step RK4.

    `p` and `t` may carry trailing batch axes; `r_weighted` integrates
    dE/dr = r sum t^i X_i(E) instead.
    """
    t = np.asarray(t, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1 and t.ndim > 1:
        p = p.reshape((frame.ndim,) + (1,) * (t.ndim - 1))
    E = np.broadcast_to(p, np.broadcast_shapes(p.shape, t.shape)).copy()
    steps = max(1, int(math.ceil(1.0 / step)))
    h = 1.0 / steps

    def rhs(r, x):
        weight = r if r_weighted else 1.0
        return weight * frame.combination(t, x)

    for m in range(steps):
        r = m * h
        k1 = rhs(r, E)
        k2 = rhs(r + h / 2, E + h / 2 * k1)
        k3 = rhs(r + h / 2, E + h / 2 * k2)
        k4 = rhs(r + h, E + h * k3)
        E = E + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(E)) or np.max(np.abs(E)) > bound:
            raise ChartError(
                f"trajectory leaves the domain at r = {r + h:.4f}",
                category="flow-domain",
                radius=r + h,
            )
    return E


def canonical_chart(
    frame: RuleFrame,
    p: np.ndarray,
    radius: float,
    spec: GridSpec,
    step: float = FLOW_STEP,
) -> DiffeoGrid:
    """Phi_p(t) = exp(t.X) p at nodes |t| <= radius; identity elsewhere."""
    nodes = np.stack(spec.nodes())
    r = spec.radius()
    margin = FD_MARGIN_CELLS * max(spec.spacing)
    active = r <= radius + margin
    phi = nodes.copy()
    base = np.asarray(p, dtype=np.float64).reshape((spec.ndim, 1))
    try:
        phi[:, active] = flow(
            frame, base, nodes[:, active], step, bound=spec.half_width
        )
    except ChartError as exc:
        raise ChartError(
            f"canonical chart failed: {exc}", category="flow", radius=exc.radius
        ) from exc
    return DiffeoGrid.from_samples(spec, phi, resolved=r <= radius)


def loss_profile(s, alpha: float) -> np.ndarray:
    """g(s) = s^-1 int_0^s exp(u^alpha - s^alpha) du for s > 0, g = 1 for s <= 0."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=np.float64))
    out = np.ones_like(s_arr)
    for idx, value in np.ndenumerate(s_arr):
        if value <= 0:
            continue
        top = value**alpha
        integral, _ = integrate.quad(
            lambda u: math.exp(u**alpha - top), 0.0, value, epsabs=1e-15, epsrel=1e-13
        )
        out[idx] = integral / value
    return out.reshape(np.shape(s)) if np.ndim(s) else out[0]


def series_terms(alpha: float, terms: int) -> np.ndarray:
    """a_l with g(s) = sum_l a_l s^(l alpha)."""
    coeffs = np.zeros(terms)
    for ell in range(terms):
        coeffs[ell] = sum(
            (-1) ** (ell - k)
            / (math.factorial(ell - k) * math.factorial(k) * (k * alpha + 1))
            for k in range(ell + 1)
        )
    return coeffs


def loss_series(s, alpha: float, terms: int = 20) -> np.ndarray:
    s_arr = np.asarray(s, dtype=np.float64)
    coeffs = series_terms(alpha, terms)
    base = one_sided_power(s_arr, alpha)
    total = np.zeros_like(base)
    for ell in reversed(range(terms)):
        total = total * base + coeffs[ell]
    return np.where(s_arr > 0, total, 1.0)


def series_coefficient(alpha: float) -> float:
    """lim (1 - g(s)) / s^alpha as s -> 0+."""
    return 1.0 - 1.0 / (alpha + 1.0)


def measured_series_coefficient(alpha: float, s: float = 1e-3) -> float:
    return float((1.0 - loss_profile(s, alpha)) / s**alpha)


def closed_form_chart(
    t, s, alpha: float, scale: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Canonical chart (t g(scale s), s) of loss_example_frame."""
    return np.asarray(t) * loss_profile(scale * np.asarray(s), alpha), np.asarray(s)


def closed_form_coefficients(
    spec: GridSpec, alpha: float, scale: float = 1.0
) -> MatrixField:
    """A with Phi^*X = (I + A) grad for the canonical chart of loss_example_frame.

    A_11 = 1/g - 1 and A_21 = -t (1 - g) / (s g); s = 0 takes the right limit.
    """
    if alpha < 1:
        raise ChartError(
            "closed-form coefficients are unbounded at s = 0 for alpha < 1",
            category="config",
        )
    t, s = spec.nodes()
    g = loss_profile(scale * s, alpha)
    a11 = 1.0 / g - 1.0
    ratio = np.zeros_like(s)
    positive = s > 0
    ratio[positive] = (1.0 - g[positive]) / s[positive]
    if alpha == 1:
        ratio[s == 0] = 0.5 * scale
    a21 = -t * ratio / g
    arr = np.zeros((2, 2) + spec.shape)
    arr[0, 0] = a11
    arr[1, 0] = a21
    return MatrixField.from_array(spec, arr)


def _ray_rhs(frame, x, E, N, tau):
    n = frame.ndim
    A = N / tau if tau > 0 else np.zeros_like(N)
    c = np.asarray(frame.coefficients(E))[:n, :n, :n]
    C = np.einsum("k...,ikj...->ij...", tau * x, c)
    AA = np.einsum("ik...,kj...->ij...", A, A)
    CA = np.einsum("ik...,kj...->ij...", C, A)
    dE = frame.combination(x, E)
    return dE, -AA - CA - C


def integrate_rays(
    frame: RuleFrame,
    points: np.ndarray,
    step: float = RAY_STEP,
    progress: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Joint RK4 for Phi_0(tau x) and N = tau A(tau x) on tau in [0, 1]."""
    if frame.coefficients is None:
        raise ChartError("ray ODE needs structure coefficients", category="config")
    n = frame.ndim
    x = np.asarray(points, dtype=np.float64)
    E = np.zeros_like(x)
    N = np.zeros((n, n) + x.shape[1:])
    steps = max(1, int(math.ceil(1.0 / step)))
    h = 1.0 / steps
    radius = np.sqrt(np.sum(x**2, axis=0))
    for m in tqdm(range(steps), desc="rays", disable=not progress):
        tau = m * h
        e1, n1 = _ray_rhs(frame, x, E, N, tau)
        e2, n2 = _ray_rhs(frame, x, E + h / 2 * e1, N + h / 2 * n1, tau + h / 2)
        e3, n3 = _ray_rhs(frame, x, E + h / 2 * e2, N + h / 2 * n2, tau + h / 2)
        e4, n4 = _ray_rhs(frame, x, E + h * e3, N + h * n3, tau + h)
        E = E + h / 6 * (e1 + 2 * e2 + 2 * e3 + e4)
        N = N + h / 6 * (n1 + 2 * n2 + 2 * n3 + n4)
        bad = ~np.isfinite(N).all(axis=(0, 1))
        bad |= np.max(np.abs(N), axis=(0, 1)) > BLOWUP
        if bad.any():
            reached = float((tau + h) * np.min(radius[bad]))
            raise ChartError(
                f"ray ODE blows up at radius {reached:.4f}",
                category="ray-blowup",
                radius=reached,
            )
    return N, E


def ray_ode_A(
    frame: RuleFrame,
    spec: GridSpec,
    radius: float = 1.0,
    step: float = RAY_STEP,
    progress: bool = False,
) -> MatrixField:
    """A with Phi_0^*X = (I + A) grad, integrated along rays from the origin.

    Nodes with |x| > radius carry A = 0.
    """
    nodes = np.stack(spec.nodes())
    active = spec.radius() <= radius
    N, _ = integrate_rays(frame, nodes[:, active], step, progress)
    arr = np.zeros((spec.ndim, spec.ndim) + spec.shape)
    arr[:, :, active] = N
    return MatrixField.from_array(spec, arr)


def ray_growth_constant(A: MatrixField, radii: Sequence[float]) -> np.ndarray:
    """max ||A(x)|| / |x| over 0 < |x| <= r for each r."""
    r = A.spec.radius()
    norms = np.sqrt(np.sum(A.array**2, axis=(0, 1)))
    out = []
    for radius in radii:
        region = (r > 0) & (r <= radius)
        out.append(float(np.max(norms[region] / r[region])) if region.any() else 0.0)
    return np.asarray(out)


def chart_coefficients(D: DiffeoGrid, frame: RuleFrame | Frame) -> MatrixField:
    """A with Phi^*X_i = sum_j (delta + A)_ij d_j, zero off the resolved set."""
    spec = D.spec
    n = spec.ndim
    if isinstance(frame, Frame):
        fields = frame.vfs[:n]
    else:
        fields = frame.fields[:n]
    arr = np.zeros((n, n) + spec.shape)
    for i, X in enumerate(fields):
        pulled = pullback_vf(D, X).to_array()
        pulled[i] -= 1.0
        arr[i] = np.where(D.resolved, pulled, 0.0)
    return MatrixField.from_array(spec, arr)


def check_injective(D: DiffeoGrid) -> tuple[bool, float]:
    """No two resolved nodes may map within half a cell of each other."""
    points = D.phi_array()[:, D.resolved].T
    if len(points) < 2:
        return True, math.inf
    distances, _ = cKDTree(points).query(points, k=2)
    separation = float(np.min(distances[:, 1]))
    return separation >= INJECTIVITY_FRACTION * min(D.spec.spacing), separation


def _basepoint_index(spec: GridSpec) -> tuple[int, ...]:
    return tuple(int(np.argmin(np.abs(spec.axis_nodes(a)))) for a in range(spec.ndim))


def normalize_at_basepoint(
    coframe: Sequence[FormField],
) -> tuple[list[FormField], np.ndarray]:
    """theta'^k = sum_l M_kl theta^l with theta'^k = dx^k at the origin."""
    spec = coframe[0].spec
    n = spec.ndim
    node = _basepoint_index(spec)
    values = np.array(
        [[lam.components[(i,)].samples[node] for i in range(n)] for lam in coframe]
    )
    if abs(np.linalg.det(values)) < 1e-12:
        raise ChartError("coframe is singular at the basepoint", category="span")
    M = np.linalg.inv(values)
    out = []
    for k in range(n):
        total = coframe[0] * float(M[k, 0])
        for ell in range(1, n):
            total = total + coframe[ell] * float(M[k, ell])
        out.append(total)
    return out, M


def _coefficients_at(theta, spec: GridSpec, points: np.ndarray) -> np.ndarray:
    n = spec.ndim
    if callable(theta):
        values = np.asarray(theta(points), dtype=np.float64)
        return np.broadcast_to(values, (n, n) + points.shape[1:])
    return np.stack(
        [
            np.stack([interpolate(lam.components[(j,)], points) for j in range(n)])
            for lam in theta
        ]
    )


def scaled_coframe(theta, kappa: float, spec: GridSpec) -> list[FormField]:
    """lambda^i_j(x) = delta_ij + chi(x) (theta^i_j(kappa x) - delta_ij)."""
    n = spec.ndim
    chi = radial_cutoff(spec, *SCALING_CUTOFF).samples
    points = kappa * np.stack(spec.nodes())
    values = _coefficients_at(theta, spec, points)
    out = []
    for i in range(n):
        comps = []
        for j in range(n):
            delta = 1.0 if i == j else 0.0
            comps.append(delta + chi * (values[i, j] - delta))
        out.append(FormField.from_arrays(spec, 1, comps))
    return out


def scaling_prepare(
    theta,
    target: float,
    spec: GridSpec,
    measure: Callable[[Sequence[FormField]], float],
    mu0: float = 1.0,
    kappa_floor_cells: int = 8,
    history: list[tuple[float, float]] | None = None,
) -> tuple[list[FormField], float]:
    """Halve kappa from mu0 until measure(lambda_kappa) < target.

    `theta` is a list of 1-forms or a rule mapping points to theta^i_j.
    """
    n = spec.ndim
    origin = np.zeros((n,) + (1,) * n)
    at_zero = _coefficients_at(theta, spec, origin).reshape(n, n)
    if np.max(np.abs(at_zero - np.eye(n))) > 1e-6:
        raise ChartError(
            "theta must equal dx at the basepoint; normalize it first",
            category="normalization",
        )
    floor = kappa_floor_cells * max(spec.spacing)
    kappa = float(mu0)
    while kappa >= floor:
        lam = scaled_coframe(theta, kappa, spec)
        value = measure(lam)
        if history is not None:
            history.append((kappa, value))
        if value < target:
            return lam, kappa
        kappa /= 2.0
    raise ChartError(
        f"smallness {target} unreachable above kappa floor {floor:.4f}",
        category="scaling",
    )


def scaling_decay(
    rule: PointRule,
    gamma: float,
    kappas: Sequence[float],
    spec: GridSpec,
    cutoff: tuple[float, float] = SCALING_CUTOFF,
) -> tuple[float, np.ndarray]:
    """Log-log slope of norm(chi f(kappa x), gamma) against kappa."""

    chi = radial_cutoff(spec, *cutoff).samples
    nodes = np.stack(spec.nodes())
    norms = []
    for kappa in kappas:
        values = chi * np.asarray(rule(kappa * nodes), dtype=np.float64)
        norms.append(norm_dyadic(ScalarField(spec, values), gamma))
    norms_arr = np.asarray(norms)
    slope, _ = np.polyfit(np.log(np.asarray(kappas)), np.log(norms_arr), 1)
    return float(slope), norms_arr


def spanning_margin(coframe: Sequence[FormField]) -> float:
    """min det(I + A) over the grid, where A[k][i] = lambda^k_i - delta."""
    spec = coframe[0].spec
    n = spec.ndim
    m = np.stack(
        [np.stack([lam.components[(i,)].samples for i in range(n)]) for lam in coframe]
    )
    return float(np.min(det_array(m)))


def harmonic_chart(
    ginv: MatrixField,
    sqrtdet: ScalarField,
    mask: BallMask,
    scheme: str = "spectral",
    telemetry: SolverTelemetry | None = None,
    progress: bool = False,
) -> DiffeoGrid:
    """psi = x + w with Lap_g psi^k = 0 in the ball and psi^k = x^k on its boundary."""
    spec = ginv.spec
    n = spec.ndim
    coeff = sqrtdet.samples * ginv.array
    targets = []
    for k in range(n):
        T = np.zeros((n,) + spec.shape)
        T[k] = -1.0
        targets.append(T)
    raw = solve_divergence_form(
        coeff, targets, mask, scheme, telemetry, progress=progress
    )
    w = [ScalarField(spec, values) for values in raw]
    try:
        return DiffeoGrid.from_displacement(w, grad_R=displacement_jacobian(w))
    except GeometryError as exc:
        raise ChartError(
            f"harmonic chart is not invertible: {exc}", category="harmonic"
        ) from exc


def jacobian_at_basepoint(D: DiffeoGrid) -> np.ndarray:
    node = _basepoint_index(D.spec)
    return D.jac_phi.array[(slice(None), slice(None)) + node]


def main():
    parser = argparse.ArgumentParser(description="Closed-form canonical chart profile.")
    parser.add_argument("--alpha", type=float, default=1.0)
    parser.add_argument("--s", type=float, default=1.0)
    args = parser.parse_args()
    g = loss_profile(args.s, args.alpha)
    print(f"g({args.s}) = {g:.9f}; series coefficient {series_coefficient(args.alpha)}")


if __name__ == "__main__":
    main()
