"""Polychromatic data models: Beer's-law mismatch and its truncated series.

The scanned medium is ``f_E = f_E0 + alpha * (E - e0) * chi_D`` over a flat
spectral window of half-width ``eps`` centered at ``e0`` (see
:class:`streaklab.model.EnergyModel`).  Integrating Beer's law over the window
turns the measured data into

    ``P = R f_E0 - ln( sinh(t) / t )``,  ``t = alpha * eps * R chi_D``,

so the mismatch ``P - R f_E0`` is the pointwise map :func:`pma_exact` of the
metal-only sinogram, and vanishes exactly on rays that miss the metal.
:func:`pma_series` is the truncated double series of the same map (the log
series composed with the sinh/t series), the object the artifact analysis is
stated for.  :func:`beer_quadrature` evaluates the spectral integral
numerically and serves as the independent oracle for both.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry, xray
from .model import DataMode, EnergyModel, SinogramGrid

_SMALL_T = 1.0e-3
_LARGE_T = 20.0


def _pma_exact_scalar(t: float) -> float:
    if t < _SMALL_T:
        # -ln(1 + t^2/6 + t^4/120 + ...) expanded; error O(t^6)
        return -t * t / 6.0 + t**4 / 180.0
    if t >= _LARGE_T:
        # sinh(t)/t = e^t (1 - e^{-2t}) / (2t); exact up to overflow-free terms
        return -t + math.log(2.0 * t) - math.log1p(-math.exp(-2.0 * t))
    return -math.log(math.sinh(t) / t)


def pma_exact(t: float | np.ndarray) -> float | np.ndarray:
    """Beam-hardening mismatch ``-ln(sinh(t)/t)`` for ``t >= 0``.

    The removable singularity at ``t = 0`` evaluates to 0; large ``t`` uses an
    overflow-safe branch.  Negative input raises ``ValueError``.
    """
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("pma_exact: non-finite input")
    if np.any(arr < 0.0):
        raise ValueError("pma_exact: t must be >= 0")
    out = np.empty_like(arr)
    small = arr < _SMALL_T
    large = arr >= _LARGE_T
    mid = ~small & ~large
    ts = arr[small]
    out[small] = -ts * ts / 6.0 + ts**4 / 180.0
    tl = arr[large]
    out[large] = -tl + np.log(2.0 * tl) - np.log1p(-np.exp(-2.0 * tl))
    tm = arr[mid]
    out[mid] = -np.log(np.sinh(tm) / tm)
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out)
    return out


def series_inner(t: float | np.ndarray, n_terms: int) -> float | np.ndarray:
    """Inner sum ``sum_{n=1}^{N} t^(2n) / (2n+1)!`` (= sinh(t)/t - 1 as N->inf)."""
    arr = np.asarray(t, dtype=np.float64)
    x = np.zeros_like(arr)
    t2 = arr * arr
    term = np.ones_like(arr)
    for n in range(1, n_terms + 1):
        term = term * t2 / ((2.0 * n) * (2.0 * n + 1.0))
        x = x + term
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(x)
    return x


def pma_series(t: float | np.ndarray, n_terms: int) -> float | np.ndarray:
    """Truncated double series: ``sum_{k=1}^{N} (-1)^k x^k / k`` with x the inner sum.

    Outside the log-series disk (``x >= 1``) the value is still returned;
    callers needing the domain flag use :func:`series_domain_flags`.
    """
    if n_terms < 1:
        raise ValueError(f"n_terms must be >= 1, got {n_terms}")
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0.0):
        raise ValueError("pma_series: t must be >= 0")
    x = np.asarray(series_inner(arr, n_terms))
    out = np.zeros_like(x)
    xk = np.ones_like(x)
    for k in range(1, n_terms + 1):
        xk = xk * x
        out = out + ((-1.0) ** k) * xk / k
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(out)
    return out


def series_domain_flags(t: float | np.ndarray, n_terms: int) -> np.ndarray:
    """True where the inner sum reaches 1 (log series no longer converges there)."""
    x = np.asarray(series_inner(np.asarray(t, dtype=np.float64), n_terms))
    return x >= 1.0


def series_coefficients(n_terms: int) -> np.ndarray:
    """Power-series coefficients of the truncated map: ``pma_series(t, N) = sum_m c[m] t^m``.

    Expands the log truncation over the inner truncation as an exact
    polynomial composition, so ``c`` has degree ``2 * N^2`` (only even powers
    are populated).  Lets callers split the truncated mismatch into pointwise
    powers of the metal sinogram with the matching coefficients.
    """
    if n_terms < 1:
        raise ValueError(f"n_terms must be >= 1, got {n_terms}")
    inner = np.zeros(2 * n_terms + 1)
    for n in range(1, n_terms + 1):
        inner[2 * n] = 1.0 / math.factorial(2 * n + 1)
    out = np.zeros(1)
    xk = np.ones(1)
    for k in range(1, n_terms + 1):
        xk = np.polynomial.polynomial.polymul(xk, inner)
        out = np.polynomial.polynomial.polyadd(out, ((-1.0) ** k / k) * xk)
    return out


def beer_quadrature(
    rchi_d: SinogramGrid,
    rf_e0: SinogramGrid,
    energy: EnergyModel,
    nodes: int = 32,
) -> SinogramGrid:
    """Direct Gauss-Legendre quadrature of the Beer's-law spectral integral.

    ``P = -ln [ (1/2eps) int_{-eps}^{eps} exp(-(R f_E0 + alpha u R chi_D)) du ]``,
    evaluated in log-sum-exp form so large optical depths cannot overflow.
    Validation oracle for :func:`pma_exact`.
    """
    if nodes < 2:
        raise ValueError(f"nodes must be >= 2, got {nodes}")
    u, w = np.polynomial.legendre.leggauss(nodes)
    t = energy.alpha_eps * rchi_d.values  # (phi, s)
    # (1/2) sum_i w_i exp(-u_i t): factor the largest exponent out of the log
    expo = -np.multiply.outer(u, t)  # (nodes, phi, s)
    m = expo.max(axis=0)
    acc = np.einsum("i,i...->...", w, np.exp(expo - m[None]))
    p = rf_e0.values - (m + np.log(0.5 * acc))
    return rf_e0.with_values(p)


@dataclass(frozen=True)
class SynthesizedData:
    """Sinogram triple produced by :func:`synthesize_data`.

    ``series_flags`` is None in exact mode; in series mode it marks samples
    whose inner sum left the log-series disk (truncation unreliable there).
    """

    p: SinogramGrid
    rf_e0: SinogramGrid
    rchi_d: SinogramGrid
    series_flags: np.ndarray | None = None


def synthesize_data(
    phantom: geometry.Phantom,
    spec: xray.ProjectorSpec,
    mode: DataMode | None = None,
) -> SynthesizedData:
    """Forward-model the polychromatic scan of a phantom.

    ``R chi_D`` is the analytic projection of the metal indicator,
    ``R f_E0`` the analytic projection of the full medium at center energy,
    and ``P = R f_E0 + pma(alpha_eps * R chi_D)`` with the exact or series
    pointwise map.
    """
    mode = mode or DataMode.exact()
    metal_shapes: list[xray.WeightedShape] = [(m.shape, 1.0) for m in phantom.metals]
    e0_shapes: list[xray.WeightedShape] = [(e, w) for e, w in phantom.background]
    e0_shapes += [(m.shape, m.value) for m in phantom.metals]
    rchi_d = xray.radon_analytic(metal_shapes, spec)
    rf_e0 = xray.radon_analytic(e0_shapes, spec)
    t = phantom.energy.alpha_eps * rchi_d.values
    if mode.kind == "exact":
        mismatch = pma_exact(t)
        flags = None
    else:
        mismatch = pma_series(t, mode.n_terms)
        flags = series_domain_flags(t, mode.n_terms)
    p = rf_e0.with_values(rf_e0.values + mismatch)
    return SynthesizedData(p=p, rf_e0=rf_e0, rchi_d=rchi_d, series_flags=flags)
