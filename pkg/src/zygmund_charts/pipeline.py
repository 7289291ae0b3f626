"""End-to-end runs: coordinate improvement, condition (b), chart comparison."""

from __future__ import annotations

import argparse
import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from zygmund_charts.charts import (
    ChartError,
    canonical_chart,
    closed_form_chart,
    harmonic_chart,
    loss_example_frame,
    measured_series_coefficient,
    normalize_at_basepoint,
    ray_ode_A,
    scaling_prepare,
    series_coefficient,
)
from zygmund_charts.elliptic import (
    MAX_PICARD,
    SCHEMES,
    SUPPORT_RADIUS,
    TAPER,
    SolverError,
    SolverTelemetry,
    ball_mask,
    contraction_ratio,
    contraction_TB,
    fixed_point_recovery,
    metric_from_A,
    pde_B_residual,
    solve_R,
)
from zygmund_charts.exterior import (
    DiffeoGrid,
    GeometryError,
    coframe_pairing,
    dual_coframe,
    ext_d,
    gradient,
    interior,
    interpolate,
    pushforward_vf_source,
    vf_apply,
)
from zygmund_charts.fields import (
    FieldError,
    FormField,
    Frame,
    GridSpec,
    MatrixField,
    ScalarField,
    VectorField,
    inv_array,
    matmul_array,
    one_sided_power,
    radial_cutoff,
)
from zygmund_charts.potential_para import SupportError, check_support
from zygmund_charts.spectral import (
    RegularityReport,
    ResolutionError,
    fit_exponent,
    norm_dyadic,
)

EXPONENT_TOL = 0.15
MAX_RECURSION = 3
MANUFACTURE_CUTOFF = (0.25, 0.4)
SUPPORT_CLIP = (0.42, 0.49)
FRAME_CUTOFF = (0.5, 0.75)
COMPARISON_MEASURE = (0.2, 0.35)
COMPARISON_RADIUS = 0.45
COMPARISON_SCALE = 0.25
FAILURE_COLUMNS = ["stage", "error", "category", "picard_ratio", "cg_iters"]


class StageError(RuntimeError):
    def __init__(
        self,
        stage: str,
        message: str,
        category: str = "unknown",
        telemetry: SolverTelemetry | None = None,
    ):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.category = category
        self.telemetry = telemetry


@dataclass(frozen=True)
class ImproveConfig:
    alpha: float
    beta: float
    target: float = 1e-2
    kappa_floor_cells: int = 8
    mu0: float = 1.0
    scheme: str = "spectral"
    picard_tol: float = 1e-10
    max_picard: int = 80
    cg_rtol: float = 1e-10
    tb_iterations: int = MAX_PICARD
    tb_radius: float = 0.6
    report_window: tuple[int, int] | None = None
    localize: tuple[float, float] = (0.2, 0.33)
    expect_gain: bool = False
    exponent_tol: float = EXPONENT_TOL

    def __post_init__(self):
        if not 0 < self.alpha <= self.beta <= self.alpha + 1:
            raise ValueError(
                f"need 0 < alpha <= beta <= alpha + 1, got {self.alpha}, {self.beta}"
            )
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        for name in ("target", "mu0", "picard_tol", "cg_rtol", "tb_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.report_window is not None:
            window = tuple(int(j) for j in self.report_window)
            object.__setattr__(self, "report_window", window)
        object.__setattr__(self, "localize", tuple(float(r) for r in self.localize))
        if not 0 <= self.localize[0] < self.localize[1]:
            raise ValueError("localize needs 0 <= inner < outer")


def load_config(path: Path | None, overrides: dict | None = None) -> ImproveConfig:
    """JSON config file merged with non-None overrides; unknown keys rejected."""
    data: dict = {}
    if path is not None:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    known = {f.name for f in fields(ImproveConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return ImproveConfig(**data)


def record_failure(outdir: Path, error: StageError) -> Path:
    """Append one row to failures.csv, writing the header once."""
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "failures.csv"
    telemetry = error.telemetry
    ratio = ""
    iters = ""
    if telemetry is not None:
        ratio = repr(max(telemetry.picard_ratio)) if telemetry.picard_ratio else ""
        iters = str(telemetry.cg_iters)
    write_header = not path.exists()
    with path.open("a", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        if write_header:
            writer.writerow(FAILURE_COLUMNS)
        writer.writerow([error.stage, str(error), error.category, ratio, iters])
    return path


def coefficient_matrix(coframe: Sequence[FormField]) -> MatrixField:
    """A[k][i] = lambda^k_i - delta."""
    spec = coframe[0].spec
    n = spec.ndim
    arr = np.stack(
        [np.stack([lam.components[(i,)].samples for i in range(n)]) for lam in coframe]
    )
    arr = arr - np.eye(n).reshape((n, n) + (1,) * n)
    return MatrixField.from_array(spec, arr)


def coframe_from_matrix(B: MatrixField) -> list[FormField]:
    """eta^k = dy^k + sum_j B[k][j] dy^j."""
    n = B.spec.ndim
    arr = B.array + np.eye(n).reshape((n, n) + (1,) * n)
    return [FormField.from_arrays(B.spec, 1, arr[k]) for k in range(n)]


def frame_from_coframe(coframe: Sequence[FormField]) -> Frame:
    """Vector fields X_i with lambda^k(X_i) = delta_i^k."""
    A = coefficient_matrix(coframe)
    n = A.spec.ndim
    inv = inv_array(A.array + np.eye(n).reshape((n, n) + (1,) * n))
    return Frame(
        tuple(VectorField.from_array(A.spec, inv[:, i]) for i in range(n))
    )


def measure_smallness(coframe: Sequence[FormField], alpha: float, beta: float) -> float:
    """sum_i norm(lambda^i - dx^i, alpha) + norm(d lambda^i, beta - 1)."""
    spec = coframe[0].spec
    total = 0.0
    for i, lam in enumerate(coframe):
        total += norm_dyadic(lam - FormField.coordinate(spec, i), alpha)
        if spec.ndim > 1:
            total += norm_dyadic(ext_d(lam), beta - 1)
    return total


def _localized(spec: GridSpec, values: np.ndarray, localize) -> ScalarField:
    return ScalarField(spec, radial_cutoff(spec, *localize).samples * values)


def manufactured_coframe(
    spec: GridSpec,
    alpha: float,
    beta: float,
    epsilon: float,
    control: str = "positive",
) -> list[FormField]:
    """2-D coframes with known regularity.

    positive: lambda^1 = dx + eps (dU + V dy), lambda^2 = dy + eps dU2 with
    U = chi y_+^(1+alpha), V = chi x_+^beta, U2 = chi x_+^(1+alpha); the
    coefficients are C^alpha and d lambda is C^(beta-1).
    negative: lambda^1 = dx + eps chi x_+^alpha dy, so d lambda is C^(alpha-1).
    """
    if spec.ndim != 2:
        raise FieldError("manufactured coframes are two-dimensional", "grid")
    x, y = spec.nodes()
    chi = radial_cutoff(spec, *MANUFACTURE_CUTOFF).samples
    clip = radial_cutoff(spec, *SUPPORT_CLIP).samples
    if control == "positive":
        U = ScalarField(spec, chi * one_sided_power(y, 1 + alpha))
        U2 = ScalarField(spec, chi * one_sided_power(x, 1 + alpha))
        V = chi * one_sided_power(x, beta)
        dU = [g.samples for g in gradient(U)]
        dU2 = [g.samples for g in gradient(U2)]
        first = [1.0 + epsilon * clip * dU[0], epsilon * clip * (dU[1] + V)]
        second = [epsilon * clip * dU2[0], 1.0 + epsilon * clip * dU2[1]]
    elif control == "negative":
        first = [np.ones(spec.shape), epsilon * chi * one_sided_power(x, alpha)]
        second = [np.zeros(spec.shape), np.ones(spec.shape)]
    else:
        raise ValueError(f"control must be 'positive' or 'negative', got {control!r}")
    return [
        FormField.from_arrays(spec, 1, first),
        FormField.from_arrays(spec, 1, second),
    ]


def manufactured_at_target(
    spec: GridSpec,
    cfg: ImproveConfig,
    control: str = "positive",
    epsilon: float = 1.0,
    max_halvings: int = 40,
) -> tuple[list[FormField], float]:
    """Halve the amplitude until the manufactured coframe is below cfg.target."""
    for _ in range(max_halvings):
        coframe = manufactured_coframe(spec, cfg.alpha, cfg.beta, epsilon, control)
        if measure_smallness(coframe, cfg.alpha, cfg.beta) < cfg.target:
            return coframe, epsilon
        epsilon /= 2.0
    raise StageError(
        "scaling", f"no amplitude above {epsilon:.3e} reaches {cfg.target}", "scaling"
    )


def prepare_coframe(
    coframe: Sequence[FormField],
    cfg: ImproveConfig,
    history: list[tuple[float, float]] | None = None,
) -> tuple[list[FormField], float]:
    """Normalize at the origin and zoom in until the smallness target holds.

    Returns the coframe and the zoom factor kappa (1.0 when already small
    and supported in the half ball).
    """
    coframe = list(coframe)
    spec = coframe[0].spec
    try:
        A = coefficient_matrix(coframe)
        for row in A.entries:
            for entry in row:
                check_support(entry, SUPPORT_RADIUS, "coefficient matrix")
        if measure_smallness(coframe, cfg.alpha, cfg.beta) < cfg.target:
            return coframe, 1.0
    except SupportError:
        pass

    def measure(lam):
        return measure_smallness(lam, cfg.alpha, cfg.beta)

    normalized, _ = _stage("normalize", normalize_at_basepoint, coframe)
    return _stage(
        "scaling",
        scaling_prepare,
        normalized,
        cfg.target,
        spec,
        measure,
        cfg.mu0,
        cfg.kappa_floor_cells,
        history,
    )


@dataclass
class ImproveResult:
    diffeo: DiffeoGrid
    eta: list[FormField]
    A: MatrixField
    B: MatrixField
    report_A: RegularityReport
    report_B: RegularityReport
    smallness: float
    pde_residual: list[float]
    tb_ratio: float
    tb_recovery: float
    telemetry: dict[str, SolverTelemetry] = field(default_factory=dict)

    @property
    def gain(self) -> float:
        after = self.report_B.exponent_or_inf
        if math.isinf(after):
            return math.inf
        return after - self.report_A.exponent_or_inf

    def to_dict(self) -> dict:
        return {
            "smallness": self.smallness,
            "inversion_error": self.diffeo.inversion_error,
            "pde_residual": self.pde_residual,
            "tb_ratio": self.tb_ratio,
            "tb_recovery": self.tb_recovery,
            "report_A": self.report_A.to_dict(),
            "report_B": self.report_B.to_dict(),
            "telemetry": {k: v.to_dict() for k, v in self.telemetry.items()},
        }


def pushed_coefficients(D: DiffeoGrid, A: MatrixField) -> MatrixField:
    """B = [(I + A)(I + grad R)^-1 - I] o Phi."""
    spec = A.spec
    n = spec.ndim
    eye = np.eye(n).reshape((n, n) + (1,) * n)
    jac = D.forward_jacobian()
    source = matmul_array(A.array + eye, inv_array(jac)) - eye
    points = [p.samples for p in D.phi]
    arr = np.empty_like(source)
    for k in range(n):
        for j in range(n):
            arr[k, j] = interpolate(ScalarField(spec, source[k, j]), points)
    return MatrixField.from_array(spec, arr)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (
        SolverError, GeometryError, ChartError, SupportError, ResolutionError
    ) as exc:
        telemetry = getattr(exc, "telemetry", None)
        raise StageError(
            name, str(exc), getattr(exc, "category", "unknown"), telemetry
        ) from exc


def _report(M: MatrixField, cfg: ImproveConfig, rows: Sequence[int] | None = None):
    spec = M.spec
    chi = radial_cutoff(spec, *cfg.localize).samples
    picked = range(M.rows) if rows is None else rows
    local = MatrixField(
        tuple(
            tuple(ScalarField(spec, chi * e.samples) for e in M.entries[k])
            for k in picked
        )
    )
    return fit_exponent(local, cfg.report_window)


def improve_chart(
    coframe: Sequence[FormField], cfg: ImproveConfig, progress: bool = False
) -> ImproveResult:
    """F = id + R solving the coordinate PDE, with B = F_*lambda - dy checked."""
    smallness = measure_smallness(coframe, cfg.alpha, cfg.beta)
    if smallness >= cfg.target:
        raise StageError(
            "smallness",
            f"measured smallness {smallness:.3e} >= target {cfg.target}; rescale first",
            "not-small",
        )
    A = coefficient_matrix(coframe)
    spec = A.spec
    solve_telemetry = SolverTelemetry()
    D = _stage(
        "solve_R",
        solve_R,
        A,
        ball_mask(spec),
        cfg.scheme,
        solve_telemetry,
        cfg.picard_tol,
        cfg.max_picard,
        cfg.cg_rtol,
        progress,
    )
    B = _stage("pushforward", pushed_coefficients, D, A)
    eta = coframe_from_matrix(B)
    residual = _stage("pde_B", pde_B_residual, B)
    tb_telemetry = SolverTelemetry()
    # T_B only reads d eta inside its ball; the roll-off avoids the jump at |y| = 1.
    taper = radial_cutoff(spec, *TAPER)
    d_eta = [ext_d(e) for e in coframe_from_matrix(B * taper)]
    fixed = _stage(
        "contraction",
        contraction_TB,
        B,
        d_eta,
        None,
        cfg.tb_iterations,
        cfg.tb_radius,
        tb_telemetry,
        progress=progress,
    )
    result = ImproveResult(
        diffeo=D,
        eta=eta,
        A=A,
        B=B,
        report_A=_report(A, cfg),
        report_B=_report(B, cfg),
        smallness=smallness,
        pde_residual=residual,
        tb_ratio=contraction_ratio(tb_telemetry),
        tb_recovery=fixed_point_recovery(fixed, B, cfg.tb_radius),
        telemetry={"solve_R": solve_telemetry, "contraction": tb_telemetry},
    )
    if cfg.expect_gain:
        needed = 0.8 * (cfg.beta - cfg.alpha) - cfg.exponent_tol
        if result.gain < needed:
            raise StageError(
                "regularity",
                f"exponent gain {result.gain:.3f} below {needed:.3f}",
                "no-gain",
            )
    return result


def estimate_quantity(result: ImproveResult, cfg: ImproveConfig) -> float:
    """norm(F - id, alpha + 1) + sum_k norm(eta^k - dy^k, beta), R rolled off."""
    D = result.diffeo
    taper = radial_cutoff(D.spec, *TAPER)
    total = max(norm_dyadic(r * taper, cfg.alpha + 1) for r in D.R)
    for k, eta in enumerate(result.eta):
        total += norm_dyadic(eta - FormField.coordinate(D.spec, k), cfg.beta)
    return total


def linear_trend(
    make_coframe: Callable[[float], Sequence[FormField]],
    amplitudes: Sequence[float],
    cfg: ImproveConfig,
    progress: bool = False,
) -> pd.DataFrame:
    """Output quantity against input smallness over a sweep of amplitudes."""
    rows = []
    for amplitude in tqdm(sorted(amplitudes), desc="amplitudes", disable=not progress):
        result = improve_chart(make_coframe(amplitude), cfg)
        rows.append(
            {
                "amplitude": float(amplitude),
                "smallness": result.smallness,
                "quantity": estimate_quantity(result, cfg),
            }
        )
    table = pd.DataFrame(rows)
    table["ratio"] = table["quantity"] / table["quantity"].shift(1)
    table["smallness_ratio"] = table["smallness"] / table["smallness"].shift(1)
    return table


def _frame_fields(frame: Frame) -> tuple:
    n = frame.spec.ndim
    try:
        dual_coframe(frame)
    except GeometryError as exc:
        raise StageError("span", str(exc), exc.category) from exc
    return frame.vfs[:n]


def cX_norm(
    f: ScalarField, frame: Frame, beta: float, depth: int = MAX_RECURSION
) -> float:
    """norm(f, beta) for beta <= 1, else cX(f, beta - 1) + sum_j cX(X_j f, beta - 1)."""
    if beta <= 0:
        raise ResolutionError(f"cX_norm needs beta > 0, got {beta}")
    needed = max(math.ceil(beta) - 1, 0)
    if needed > depth:
        raise ResolutionError(
            f"order {beta} needs recursion depth {needed} > budget {depth}"
        )
    vfs = _frame_fields(frame)
    return _cX(f, vfs, beta)


def _cX(f: ScalarField, vfs, beta: float) -> float:
    if beta <= 1:
        return norm_dyadic(f, beta)
    total = _cX(f, vfs, beta - 1)
    for X in vfs:
        total += _cX(vf_apply(X, f), vfs, beta - 1)
    return total


def cX_exponent(
    f: ScalarField,
    frame: Frame,
    depth: int = 1,
    localize: tuple[float, float] = (0.2, 0.33),
    window: tuple[int, int] | None = None,
) -> float:
    """min(exp(f), 1 + min_j exp(X_j f)) along `depth` levels of frame derivatives."""
    spec = f.spec
    base = fit_exponent(_localized(spec, f.samples, localize), window).exponent_or_inf
    if depth <= 0:
        return base
    vfs = _frame_fields(frame)
    derived = min(
        cX_exponent(vf_apply(X, f), frame, depth - 1, localize, window) for X in vfs
    )
    return min(base, 1.0 + derived)


@dataclass
class ConditionBReport:
    beta: float
    passed: bool
    lie_meaningful: bool
    exponents: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["exponents"] = {
            k: (None if math.isinf(v) else v) for k, v in self.exponents.items()
        }
        return data


def _form_exponent(form: FormField, cfg: ImproveConfig) -> float:
    spec = form.spec
    local = FormField(
        form.degree,
        {
            idx: _localized(spec, c.samples, cfg.localize)
            for idx, c in form.components.items()
        },
    )
    return fit_exponent(local, cfg.report_window).exponent_or_inf


def _check_closed(
    label: str,
    d_theta: FormField,
    beta: float,
    vfs,
    cfg: ImproveConfig,
    report: ConditionBReport,
    depth: int,
) -> bool:
    """d theta at order beta - 1, along the frame-adapted recursion."""
    exponent = _form_exponent(d_theta, cfg)
    report.exponents[f"{label}@{beta:g}"] = exponent
    tol = cfg.exponent_tol
    if beta <= 1:
        ok = exponent >= beta - 1 - tol
        if not ok:
            report.failures.append(f"{label}: exponent {exponent:.3f} < {beta - 1:.3f}")
        return ok
    ok = exponent >= -tol
    if not ok:
        report.failures.append(f"{label}: exponent {exponent:.3f} < 0")
    if depth >= MAX_RECURSION:
        report.failures.append(f"{label}: recursion budget exhausted at order {beta:g}")
        return False
    derived = [(f"{label}.d", d_theta)] if beta > 2 else []
    for i, X in enumerate(vfs):
        lie = ext_d(interior(X, d_theta))
        derived.append((f"L{i + 1}({label})", lie))
    for name, form in derived:
        ok = _check_closed(name, form, beta - 1, vfs, cfg, report, depth + 1) and ok
    return ok


def evaluate_condition_b(
    frame: Frame, beta: float, cfg: ImproveConfig | None = None
) -> ConditionBReport:
    """d lambda^j in C^(beta-1)_X and <lambda^j, X_k> in C^beta_X for k > n."""
    if cfg is None:
        cfg = ImproveConfig(alpha=max(beta - 1.0, beta / 2.0), beta=beta)
    spec = frame.spec
    n = spec.ndim
    vfs = _frame_fields(frame)
    coframe = dual_coframe(frame)
    entries = []
    for vf in vfs:
        for comp in vf.components:
            entries.append(_localized(spec, comp.samples, cfg.localize))
    frame_exponent = min(
        fit_exponent(e, cfg.report_window).exponent_or_inf for e in entries
    )
    report = ConditionBReport(
        beta=beta, passed=True, lie_meaningful=frame_exponent > 0.5
    )
    report.exponents["frame"] = frame_exponent
    ok = True
    if n > 1:
        for j, lam in enumerate(coframe):
            label = f"dlambda{j + 1}"
            ok = _check_closed(label, ext_d(lam), beta, vfs, cfg, report, 0) and ok
    if frame.q > n:
        pairing = coframe_pairing(coframe, frame)
        for j in range(n):
            for k in range(n, frame.q):
                value = ScalarField(spec, pairing[j, k])
                exponent = cX_exponent(value, frame, 1, cfg.localize, cfg.report_window)
                report.exponents[f"<lambda{j + 1},X{k + 1}>"] = exponent
                if exponent < beta - cfg.exponent_tol:
                    report.failures.append(
                        f"<lambda{j + 1},X{k + 1}>: "
                        f"exponent {exponent:.3f} < {beta:.3f}"
                    )
                    ok = False
    report.passed = ok
    return report


@dataclass
class ComparisonReport:
    alpha: float
    size: int
    chart_error: float
    canonical_exponent: float
    harmonic_exponent: float
    series_measured: float
    series_expected: float
    canonical_ok: bool
    harmonic_ok: bool
    series_ok: bool
    harmonic_telemetry: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.canonical_ok and self.harmonic_ok and self.series_ok

    def to_dict(self) -> dict:
        data = asdict(self)
        data["passed"] = self.passed
        return data


def canonical_vs_harmonic(
    alpha: float,
    size: int = 256,
    scale: float = COMPARISON_SCALE,
    tol: float = EXPONENT_TOL,
    progress: bool = False,
) -> ComparisonReport:
    """Regularity of the frame in canonical and in harmonic coordinates."""
    if alpha <= 1:
        raise StageError("comparison", f"needs alpha > 1, got {alpha}", "config")
    spec = GridSpec.cube(2, size)
    frame = loss_example_frame(alpha, scale=scale, cutoff=FRAME_CUTOFF)
    chart = _stage(
        "canonical", canonical_chart, frame, np.zeros(2), COMPARISON_RADIUS, spec
    )
    t, s = spec.nodes()
    expected_t, _ = closed_form_chart(t, s, alpha, scale)
    resolved = chart.resolved
    chart_error = float(
        max(
            np.max(np.abs(chart.phi[0].samples - expected_t)[resolved]),
            np.max(np.abs(chart.phi[1].samples - s)[resolved]),
        )
    )
    A_canonical = _stage(
        "ray_ode", ray_ode_A, frame, spec, COMPARISON_RADIUS, progress=progress
    )
    measure = radial_cutoff(spec, *COMPARISON_MEASURE).samples
    canonical_exponent = fit_exponent(
        ScalarField(spec, measure * A_canonical.array[1, 0])
    ).exponent_or_inf

    grid_frame = frame.on_grid(spec)
    A = coefficient_matrix(dual_coframe(grid_frame))
    ginv, sqrtdet = _stage("metric", metric_from_A, A)
    telemetry = SolverTelemetry()
    psi = _stage(
        "harmonic",
        harmonic_chart,
        ginv,
        sqrtdet,
        ball_mask(spec),
        "spectral",
        telemetry,
        progress,
    )
    pushed = pushforward_vf_source(psi, grid_frame.vfs[1]).to_array()
    pushed[1] -= 1.0
    harmonic_exponent = min(
        fit_exponent(ScalarField(spec, measure * pushed[i])).exponent_or_inf
        for i in range(2)
    )
    measured = measured_series_coefficient(alpha)
    expected = series_coefficient(alpha)
    return ComparisonReport(
        alpha=alpha,
        size=size,
        chart_error=chart_error,
        canonical_exponent=canonical_exponent,
        harmonic_exponent=harmonic_exponent,
        series_measured=measured,
        series_expected=expected,
        canonical_ok=abs(canonical_exponent - (alpha - 1)) <= tol,
        harmonic_ok=harmonic_exponent >= alpha - tol,
        series_ok=abs(measured - expected) <= 0.02 * expected,
        harmonic_telemetry=telemetry.to_dict(),
    )


def main():
    parser = argparse.ArgumentParser(description="Canonical vs harmonic coordinates.")
    parser.add_argument("--alpha", type=float, default=1.3)
    parser.add_argument("--size", type=int, default=256)
    args = parser.parse_args()
    report = canonical_vs_harmonic(args.alpha, args.size, progress=True)
    print(json.dumps(report.to_dict(), indent=2))


if __name__ == "__main__":
    main()
