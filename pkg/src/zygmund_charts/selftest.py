"""Acceptance suite: one registered check per end-to-end property.

Each check returns (passed, detail). `quick=True` shrinks the grids so the
suite finishes in a few minutes; the full sizes are the calibrated ones.
"""

from __future__ import annotations

import argparse
import math
import time
from functools import lru_cache
from typing import Callable

import numpy as np
import pandas as pd
from tqdm import tqdm

from zygmund_charts.charts import (
    closed_form_chart,
    closed_form_coefficients,
    flow,
    loss_example_frame,
    measured_series_coefficient,
    ray_growth_constant,
    ray_ode_A,
    rotation_angle,
    rotation_frame,
    scaling_decay,
    series_coefficient,
)
from zygmund_charts.elliptic import SolverTelemetry, ball_mask, dirichlet_solve
from zygmund_charts.exterior import (
    codifferential,
    ext_d,
    form_laplacian,
    hodge_laplacian,
    interior,
)
from zygmund_charts.fields import (
    FormField,
    GridSpec,
    ScalarField,
    VectorField,
    band_limited_field,
    one_sided_power,
    radial_cutoff,
    radial_profile,
    sample_function,
)
from zygmund_charts.pipeline import (
    FRAME_CUTOFF,
    ImproveConfig,
    StageError,
    canonical_vs_harmonic,
    coframe_from_matrix,
    evaluate_condition_b,
    frame_from_coframe,
    improve_chart,
    linear_trend,
    manufactured_at_target,
    manufactured_coframe,
)
from zygmund_charts.potential_para import bony_check, leibniz_check
from zygmund_charts.spectral import (
    build_filter_bank,
    fit_exponent,
    low_pass,
    lp_block,
    norm_diff2,
    norm_dyadic,
    wave_grid,
)

IDENTITY_TOL = 1e-10
RAY_TOL = 1e-4
CHART_TOL = 1e-6
SERIES_TOL = 0.02

CheckResult = tuple[bool, str]


def _sizes(quick: bool, full: int, small: int) -> int:
    return small if quick else full


def check_closed_form(quick: bool, seed: int) -> CheckResult:
    """Flowed canonical chart of the alpha = 1 example against t (1 - e^-s) / s."""
    frame = loss_example_frame(1.0)
    count = 512
    angles = np.linspace(0.0, 2 * np.pi, 8, endpoint=False)
    r = np.linspace(0.0, 1.0, count)
    worst = 0.0
    for angle in angles:
        t = np.stack([r * np.cos(angle), r * np.sin(angle)])
        end = flow(frame, np.zeros(2), t, step=1e-3)
        expected_t, expected_s = closed_form_chart(t[0], t[1], 1.0)
        worst = max(
            worst,
            float(np.max(np.abs(end[0] - expected_t))),
            float(np.max(np.abs(end[1] - expected_s))),
        )
    series = {}
    for alpha in (1.0, 1.5, 2.0):
        measured = measured_series_coefficient(alpha)
        expected = series_coefficient(alpha)
        series[alpha] = abs(measured - expected) / expected
    ok = worst < CHART_TOL and max(series.values()) < SERIES_TOL
    detail = f"chart error {worst:.2e}; series rel. error {max(series.values()):.2e}"
    return ok, detail


def check_loss_vs_harmonic(quick: bool, seed: int) -> CheckResult:
    size = _sizes(quick, 1024, 256)
    parts = []
    ok = True
    for alpha in (1.3, 1.7):
        report = canonical_vs_harmonic(alpha, size=size)
        ok = ok and report.canonical_ok and report.harmonic_ok
        parts.append(
            f"alpha {alpha}: canonical {report.canonical_exponent:.2f},"
            f" harmonic {report.harmonic_exponent:.2f}"
        )
    return ok, "; ".join(parts)


@lru_cache(maxsize=2)
def _improvement_runs(quick: bool):
    size = _sizes(quick, 512, 256)
    spec = GridSpec.cube(2, size)
    cfg = ImproveConfig(alpha=0.6, beta=1.4)
    positive, _ = manufactured_at_target(spec, cfg, "positive")
    negative, _ = manufactured_at_target(spec, cfg, "negative")
    return spec, cfg, improve_chart(positive, cfg), improve_chart(negative, cfg)


def check_improvement(quick: bool, seed: int) -> CheckResult:
    _, _, result, control = _improvement_runs(quick)
    after = result.report_B.exponent_or_inf
    ok = (
        after >= 1.2
        and result.gain >= 0.5
        and max(result.pde_residual) < 1e-5
        and result.tb_ratio < 0.8
        and result.tb_recovery < 1e-5
        and control.gain <= 0.2
    )
    detail = (
        f"gain {result.gain:.2f} (control {control.gain:.2f}),"
        f" residual {max(result.pde_residual):.1e}, T_B ratio {result.tb_ratio:.2f},"
        f" recovery {result.tb_recovery:.1e}"
    )
    return ok, detail


def check_linear_trend(quick: bool, seed: int) -> CheckResult:
    size = _sizes(quick, 512, 256)
    spec = GridSpec.cube(2, size)
    cfg = ImproveConfig(alpha=0.6, beta=1.4)
    _, epsilon = manufactured_at_target(spec, cfg, "positive")
    amplitudes = [epsilon / 4, epsilon / 2, epsilon]
    table = linear_trend(
        lambda eps: manufactured_coframe(spec, cfg.alpha, cfg.beta, eps),
        amplitudes,
        cfg,
    )
    halving = 1.0 / table["ratio"].dropna()
    ok = bool(((halving - 0.5).abs() <= 0.15).all())
    return ok, "halving factors " + ", ".join(f"{v:.3f}" for v in halving)


def check_identities(quick: bool, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    spec = GridSpec.cube(2, 64)
    kmax = min(wave_grid(spec).nyquist) / 3
    bank = build_filter_bank(spec)

    def scalar():
        return band_limited_field(spec, kmax, rng)

    f = scalar()
    sigma = FormField.from_arrays(spec, 1, [scalar().samples, scalar().samples])
    omega = FormField.from_arrays(spec, 1, [scalar().samples, scalar().samples])
    two = FormField.from_arrays(spec, 2, [scalar().samples])
    X = VectorField.from_array(spec, np.stack([scalar().samples, scalar().samples]))
    residuals = {
        "bony": bony_check(sigma, omega, bank),
        "leibniz": leibniz_check(FormField.from_scalar(f), omega, bank),
        "telescoping": _telescoping(f, bank),
        "hodge": _relative(hodge_laplacian(sigma), form_laplacian(sigma)),
        "dd": ext_d(ext_d(FormField.from_scalar(f))).sup_norm() / f.sup_norm(),
        "codiff2": codifferential(codifferential(two)).sup_norm() / two.sup_norm(),
        "interior2": interior(X, interior(X, two)).sup_norm() / two.sup_norm(),
    }
    worst = max(residuals, key=residuals.get)
    ok = residuals[worst] < IDENTITY_TOL
    return ok, f"worst {worst} {residuals[worst]:.1e}"


def _telescoping(f: ScalarField, bank) -> float:
    total = np.zeros(f.spec.shape)
    for j in range(bank.jmax + 1):
        total = total + lp_block(f, j, bank).samples
    top = low_pass(f, bank.jmax, bank).samples
    return float(np.max(np.abs(total - top))) / f.sup_norm()


def _relative(a: FormField, b: FormField) -> float:
    return (a - b).sup_norm() / max(b.sup_norm(), 1e-300)


def manufactured_error(size: int) -> float:
    """Max error of the disc solver against u = sin(pi x / 2) cos(pi y / 3) + x^2 y."""
    spec = GridSpec.cube(2, size)
    x, y = spec.nodes()
    exact = np.sin(np.pi * x / 2) * np.cos(np.pi * y / 3) + x**2 * y
    source = (np.pi**2 / 4 + np.pi**2 / 9) * np.sin(np.pi * x / 2) * np.cos(
        np.pi * y / 3
    ) - 2 * y
    mask = ball_mask(spec)
    u = dirichlet_solve(ScalarField(spec, source), ScalarField(spec, exact), mask)
    return float(np.max(np.abs(u.samples - exact)[mask.inside]))


def check_elliptic(quick: bool, seed: int) -> CheckResult:
    sizes = (64, 128, 256) if quick else (128, 256, 512)
    errors = [manufactured_error(n) for n in sizes]
    orders = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    spec = GridSpec.cube(2, sizes[-1])
    mask = ball_mask(spec)
    telemetry = SolverTelemetry()
    u = dirichlet_solve(ScalarField.constant(spec, 1.0), mask=mask, telemetry=telemetry)
    exact = (1.0 - spec.radius() ** 2) / 4.0
    one_error = float(np.max(np.abs(u.samples - exact)[mask.inside]))
    h = max(spec.spacing)
    positive = float(np.min(u.samples[mask.inside])) >= 0.0
    ok = (
        all(abs(p - 2.0) <= 0.2 for p in orders) and one_error < 2 * h and positive
    )
    detail = (
        "orders " + ", ".join(f"{p:.2f}" for p in orders)
        + f"; D(1) error {one_error:.1e}; {telemetry.cg_iters} CG iterations"
    )
    return ok, detail


def check_scaling_law(quick: bool, seed: int) -> CheckResult:
    spec = GridSpec(1, (_sizes(quick, 4096, 1024),))
    kappas = (1.0, 0.5, 0.25, 0.125)
    slopes = {}
    for gamma in (0.3, 0.7, 1.2):
        slope, _ = scaling_decay(
            lambda p, g=gamma: one_sided_power(p[0], g), gamma, kappas, spec
        )
        slopes[gamma] = slope
    ok = all(s >= min(g, 0.5) - 0.1 for g, s in slopes.items())
    return ok, "slopes " + ", ".join(f"{g}: {s:.2f}" for g, s in slopes.items())


def check_ray_ode(quick: bool, seed: int) -> CheckResult:
    spec = GridSpec.cube(2, _sizes(quick, 256, 128))
    frame = loss_example_frame(1.0)
    A = ray_ode_A(frame, spec, radius=1.0)
    expected = closed_form_coefficients(spec, 1.0)
    region = spec.radius() <= 1.0
    gap = float(np.max(np.abs(A.array - expected.array)[:, :, region]))
    growth = ray_growth_constant(A, (0.25, 0.5, 1.0))
    ok = gap < RAY_TOL and bool(np.all(np.isfinite(growth)))
    return ok, f"gap {gap:.1e}; growth constants {np.round(growth, 3).tolist()}"


def check_calibration(quick: bool, seed: int) -> CheckResult:
    spec = GridSpec(1, (4096,))
    chi = radial_cutoff(spec, 0.25, 0.5)
    fitted = {}
    for s in (0.4, 0.7, 1.3):
        f = sample_function(spec, lambda y, s=s: one_sided_power(y, s)) * chi
        fitted[s] = fit_exponent(f).exponent_or_inf
    rng = np.random.default_rng(seed)
    small = GridSpec(1, (256,))
    kmax = min(wave_grid(small).nyquist) / 3
    ratios = []
    for _ in range(20):
        g = band_limited_field(small, kmax, rng)
        for s in (0.5, 1.0, 1.5):
            ratios.append(norm_diff2(g, s) / norm_dyadic(g, s))
    ok = all(abs(v - s) <= 0.1 for s, v in fitted.items()) and (
        1 / 50 <= min(ratios) and max(ratios) <= 50
    )
    detail = (
        "exponents " + ", ".join(f"{s}: {v:.2f}" for s, v in fitted.items())
        + f"; diff2/dyadic in [{min(ratios):.2f}, {max(ratios):.2f}]"
    )
    return ok, detail


def _smooth_angle(points: np.ndarray) -> np.ndarray:
    r = np.sqrt(np.sum(points**2, axis=0))
    return 0.3 * radial_profile(r, 0.3, 0.6) * np.sin(points[0] + 2 * points[1])


def check_condition_b(quick: bool, seed: int) -> CheckResult:
    spec = GridSpec.cube(2, _sizes(quick, 512, 256))
    smooth = rotation_frame(_smooth_angle).on_grid(spec)
    smooth_ok = all(
        evaluate_condition_b(smooth, b).passed for b in (0.5, 1.0, 2.0)
    )
    alpha = 0.7
    h = max(spec.spacing)
    loss = loss_example_frame(alpha, cell=h, cutoff=FRAME_CUTOFF).on_grid(spec)
    loss_ok = (
        evaluate_condition_b(loss, alpha).passed
        and not evaluate_condition_b(loss, alpha + 0.6).passed
    )
    rotation = rotation_frame(rotation_angle()).on_grid(spec)
    rotation_ok = (
        evaluate_condition_b(rotation, 1.0).passed
        and not evaluate_condition_b(rotation, 2.0).passed
    )
    consistent = True
    try:
        _, cfg, result, control = _improvement_runs(quick)
        if result.gain >= 0.5:
            beta = min(cfg.alpha + result.gain - 0.2, cfg.beta)
            frame = frame_from_coframe(coframe_from_matrix(result.A))
            consistent = evaluate_condition_b(frame, beta).passed
        rough = frame_from_coframe(coframe_from_matrix(control.A))
        rough_passes = evaluate_condition_b(rough, cfg.alpha + 0.6).passed
        consistent = consistent and not rough_passes
    except StageError:
        consistent = False
    ok = smooth_ok and loss_ok and rotation_ok and consistent
    detail = (
        f"smooth {smooth_ok}, loss example {loss_ok}, rotation {rotation_ok},"
        f" consistent with improvement {consistent}"
    )
    return ok, detail



CHECKS: dict[str, Callable[[bool, int], CheckResult]] = {
    "closed_form": check_closed_form,
    "loss_vs_harmonic": check_loss_vs_harmonic,
    "improvement": check_improvement,
    "linear_trend": check_linear_trend,
    "identities": check_identities,
    "elliptic": check_elliptic,
    "scaling_law": check_scaling_law,
    "ray_ode": check_ray_ode,
    "calibration": check_calibration,
    "condition_b": check_condition_b,
}


def run_selftest(
    names: list[str] | None = None,
    quick: bool = False,
    seed: int = 0,
    progress: bool = False,
) -> pd.DataFrame:
    """Run the registered checks; failures and exceptions become failed rows."""
    selected = list(CHECKS) if not names else names
    unknown = [n for n in selected if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {', '.join(unknown)}")
    rows = []
    for name in tqdm(selected, desc="selftest", disable=not progress):
        start = time.perf_counter()
        try:
            passed, detail = CHECKS[name](quick, seed)
        except Exception as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append(
            {
                "name": name,
                "passed": bool(passed),
                "detail": detail,
                "seconds": round(time.perf_counter() - start, 2),
            }
        )
    return pd.DataFrame(rows, columns=["name", "passed", "detail", "seconds"])


def main():
    parser = argparse.ArgumentParser(description="Run the acceptance checks.")
    parser.add_argument("--check", action="append", choices=sorted(CHECKS))
    parser.add_argument("--quick", action="store_true")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    table = run_selftest(args.check, args.quick, args.seed, progress=True)
    print(table.to_string(index=False))
    print(f"Passed: {int(table['passed'].sum())}/{len(table)}")


if __name__ == "__main__":
    main()
