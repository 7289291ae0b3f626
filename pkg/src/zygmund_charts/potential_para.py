"""Newtonian potential, rho + d xi splitting and Bony paraproducts."""

from __future__ import annotations

import argparse
from typing import Sequence

import numpy as np

from zygmund_charts.exterior import codifferential, ext_d, wedge
from zygmund_charts.fields import FormField, GridSpec, ScalarField, band_limited_field
from zygmund_charts.spectral import (
    LPFilterBank,
    bank_for,
    forward,
    inverse,
    norm_dyadic,
    wave_grid,
)

SUPPORT_RADIUS = 0.5
SUPPORT_TOL = 1e-13
MEAN_TOL = 1e-12


class SupportError(ValueError):
    pass


def check_support(f: FormField | ScalarField, radius: float, label: str = "field"):
    comps = [f] if isinstance(f, ScalarField) else list(f.components.values())
    spec = comps[0].spec
    outside = spec.radius() >= radius
    magnitude = max(c.sup_norm() for c in comps)
    if magnitude == 0 or not outside.any():
        return
    leak = max(float(np.max(np.abs(c.samples[outside]))) for c in comps)
    if leak > SUPPORT_TOL * magnitude:
        raise SupportError(
            f"{label} is not supported in the ball of radius {radius}"
            f" (outside magnitude {leak:.3e})"
        )


def null_mode_part(f: ScalarField) -> ScalarField:
    """Projection onto modes with every axis at frequency 0 or Nyquist."""
    grid = wave_grid(f.spec)
    return inverse(np.where(grid.null_modes, forward(f), 0.0), f.spec)


def _potential(f: ScalarField, subtract_mean: bool) -> ScalarField:
    grid = wave_grid(f.spec)
    spectrum = forward(f)
    if f.spec.ndim <= 2 and not subtract_mean:
        mean = abs(spectrum.flat[0]) / f.spec.size
        if mean > MEAN_TOL * max(f.sup_norm(), 1e-300):
            raise SupportError(
                f"component has mean {mean:.3e}; pass subtract_mean=True to drop it"
            )
    symbol = grid.laplacian
    positive = symbol > 0
    out = np.zeros_like(spectrum)
    out[positive] = spectrum[positive] / symbol[positive]
    return inverse(out, f.spec)


def newtonian(
    omega: FormField,
    subtract_mean: bool = False,
    support_radius: float | None = SUPPORT_RADIUS,
) -> FormField:
    """sigma with Lap sigma = omega, componentwise on the torus."""
    if support_radius is not None:
        check_support(omega, support_radius, "Newtonian source")
    return omega.map(lambda c: _potential(c, subtract_mean))


def decompose_rho_dxi(
    theta: FormField, chi: ScalarField, support_radius: float = SUPPORT_RADIUS
) -> tuple[FormField, FormField]:
    """rho = G(codiff d(chi theta)) + null part, xi = G(codiff(chi theta))."""
    check_support(chi, support_radius, "cutoff")
    if theta.degree == 0:
        raise SupportError("the rho + d xi splitting needs a form of degree >= 1")
    localized = theta * chi
    n = theta.spec.ndim
    null = localized.map(null_mode_part)
    if theta.degree < n:
        rho = newtonian(
            codifferential(ext_d(localized)), subtract_mean=True, support_radius=None
        ) + null
    else:
        rho = null
    xi = newtonian(codifferential(localized), subtract_mean=True, support_radius=None)
    return rho, xi


def _blocks(form: FormField, bank: LPFilterBank) -> list[FormField]:
    spectra = {idx: forward(c) for idx, c in form.components.items()}
    spec = form.spec
    return [
        FormField(
            form.degree,
            {idx: inverse(s * mult, spec) for idx, s in spectra.items()},
        )
        for mult in bank.blocks
    ]


def _low_passes(form: FormField, bank: LPFilterBank) -> list[FormField]:
    spectra = {idx: forward(c) for idx, c in form.components.items()}
    spec = form.spec
    return [
        FormField(
            form.degree,
            {idx: inverse(s * mult, spec) for idx, s in spectra.items()},
        )
        for mult in bank.low
    ]


def para_P(
    sigma: FormField, omega: FormField, bank: LPFilterBank | None = None
) -> FormField:
    """sum_j Delta_j sigma ^ psi_{j-2} omega."""
    bank = bank_for(sigma.spec, bank)
    blocks = _blocks(sigma, bank)
    lows = _low_passes(omega, bank)
    total = FormField.zeros(sigma.spec, sigma.degree + omega.degree)
    for j in range(2, bank.jmax + 1):
        total = total + wedge(blocks[j], lows[j - 2])
    return total


def para_R(
    sigma: FormField, omega: FormField, bank: LPFilterBank | None = None
) -> FormField:
    """sum_{|j-k| <= 1} Delta_j sigma ^ Delta_k omega."""
    bank = bank_for(sigma.spec, bank)
    s_blocks = _blocks(sigma, bank)
    o_blocks = _blocks(omega, bank)
    total = FormField.zeros(sigma.spec, sigma.degree + omega.degree)
    for j in range(bank.jmax + 1):
        for k in range(max(0, j - 1), min(bank.jmax, j + 1) + 1):
            total = total + wedge(s_blocks[j], o_blocks[k])
    return total


def bony_check(
    sigma: FormField, omega: FormField, bank: LPFilterBank | None = None
) -> float:
    """Relative residual of s^w = P(s, w) + (-1)^{kl} P(w, s) + R(s, w)."""
    sign = -1.0 if (sigma.degree * omega.degree) % 2 else 1.0
    product = wedge(sigma, omega)
    parts = para_P(sigma, omega, bank) + sign * para_P(omega, sigma, bank)
    parts = parts + para_R(sigma, omega, bank)
    scale = product.sup_norm()
    if scale == 0:
        return (product - parts).sup_norm()
    return (product - parts).sup_norm() / scale


def leibniz_check(
    sigma: FormField, omega: FormField, bank: LPFilterBank | None = None
) -> float:
    """Relative residual of d P(s, w) = P(ds, w) + (-1)^k P(s, dw)."""
    sign = -1.0 if sigma.degree % 2 else 1.0
    lhs = ext_d(para_P(sigma, omega, bank))
    rhs = para_P(ext_d(sigma), omega, bank) + sign * para_P(sigma, ext_d(omega), bank)
    scale = lhs.sup_norm()
    if scale == 0:
        return (lhs - rhs).sup_norm()
    return (lhs - rhs).sup_norm() / scale


def build_tau(
    pairs: Sequence[tuple[ScalarField, FormField]],
    bank: LPFilterBank | None = None,
    support_radius: float | None = 1.0,
) -> FormField:
    """tau = sum P(rho, d mu) + (-1)^k P(mu, d rho) + R(rho, d mu).

    Each pair is a scalar rho and a (k-1)-form mu; tau has degree k and
    d tau = d(sum rho d mu).
    """
    if not pairs:
        raise SupportError("build_tau needs at least one (rho, mu) pair")
    total = None
    for rho, mu in pairs:
        if support_radius is not None:
            check_support(rho, support_radius, "rho")
            check_support(mu, support_radius, "mu")
        k = mu.degree + 1
        sign = -1.0 if k % 2 else 1.0
        rho_form = FormField.from_scalar(rho)
        d_mu = ext_d(mu)
        d_rho = ext_d(rho_form)
        term = para_P(rho_form, d_mu, bank) + sign * para_P(mu, d_rho, bank)
        term = term + para_R(rho_form, d_mu, bank)
        total = term if total is None else total + term
    return total


def tau_residual(
    pairs: Sequence[tuple[ScalarField, FormField]], tau: FormField
) -> float:
    """Relative sup distance between d tau and d(sum rho d mu)."""
    target = None
    for rho, mu in pairs:
        term = wedge(FormField.from_scalar(rho), ext_d(mu))
        target = term if target is None else target + term
    d_target = ext_d(target)
    scale = max(d_target.sup_norm(), 1e-300)
    return (ext_d(tau) - d_target).sup_norm() / scale


def paraproduct_ratios(
    sigma: FormField, omegas: Sequence[FormField], order: float
) -> list[float]:
    """norm(P(sigma, w_m), order) / norm(sigma, order) across a family."""
    base = norm_dyadic(sigma, order)
    return [norm_dyadic(para_P(sigma, w), order) / base for w in omegas]


def main():
    parser = argparse.ArgumentParser(description="Bony identity on random fields.")
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    spec = GridSpec(2, (args.size, args.size))
    rng = np.random.default_rng(args.seed)
    kmax = min(wave_grid(spec).nyquist) / 3
    sigma = FormField.from_scalar(band_limited_field(spec, kmax, rng))
    omega = FormField.from_scalar(band_limited_field(spec, kmax, rng))
    print(f"Bony residual: {bony_check(sigma, omega):.3e}")


if __name__ == "__main__":
    main()
