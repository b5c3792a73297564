"""Asymptotic means and covariances of linear spectral statistics of ``S^+``
and ``S_tilde^+``, evaluated by contour quadrature, plus a Monte Carlo
harness that checks them."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, stats

from . import solver
from .ensemble import DegenerateEnsembleError, build_ensemble
from .spectra import (
    EntryLaw,
    PopulationSpectrum,
    RectContour,
    SpectralLimit,
    TestFunction,
    as_test_function,
    mix_seed,
    pairwise_sum,
)

log = logging.getLogger(__name__)

__all__ = [
    "QuadratureError",
    "QuadratureReport",
    "CltPrediction",
    "build_contour",
    "inner_contour",
    "support_upper",
    "h_functions",
    "mean_non_centered",
    "mean_fourth_moment_term",
    "cov_lss",
    "cov_fourth_moment_term",
    "extra_mean_contour",
    "extra_mean_realline",
    "mean_centered",
    "mean_centered_literal",
    "proxy_functional",
    "predict",
    "CltConfig",
    "CltExperiment",
    "mc_clt_experiment",
]

GATE_TOL = 1e-5
IMAG_TOL = 1e-6
DEFAULT_MARGIN = 0.1
DEFAULT_Y0 = 0.2
DEFAULT_NODES = 2048
NORMALIZATIONS = ("sample", "dimension")


class QuadratureError(ArithmeticError):
    """Node doubling changed a contour integral by more than the gate, or an
    integral that must be real kept an imaginary part."""


@dataclass(frozen=True)
class QuadratureReport:
    nodes: int
    error: float
    imag_residue: float


# ---------------------------------------------------------------------------
# contours and transforms on them


def support_upper(c: float, H: PopulationSpectrum) -> float:
    """Upper endpoint of the support of ``P``."""
    return solver.support_interval(c, H)[1]


def build_contour(
    limit: SpectralLimit | float,
    margin: float = DEFAULT_MARGIN,
    y0: float = DEFAULT_Y0,
    nodes: int = DEFAULT_NODES,
) -> RectContour:
    """Rectangle with ``a = -margin * upper`` and ``b = (1 + margin) * upper``.

    ``limit`` may be a ``SpectralLimit`` or the upper support endpoint itself.
    """
    if margin <= 0 or y0 <= 0:
        raise ValueError("margin and y0 must be positive")
    upper = limit.support[1] if isinstance(limit, SpectralLimit) else float(limit)
    if upper <= 0:
        raise ValueError("upper support endpoint must be positive")
    return RectContour(-margin * upper, (1.0 + margin) * upper, y0, nodes)


def inner_contour(outer: RectContour) -> RectContour:
    """Nested contour for double integrals: half the margin and half the height."""
    # a = -margin * upper and b = (1 + margin) * upper
    upper = outer.a + outer.b
    if upper <= 0:
        raise ValueError("contour is not of the build_contour form")
    margin = -outer.a / upper
    return RectContour(-0.5 * margin * upper, (1.0 + 0.5 * margin) * upper, 0.5 * outer.y0, outer.nodes_per_side)


_M_CACHE: dict[tuple, tuple] = {}


def _companion_on(contour: RectContour, c: float, H: PopulationSpectrum):
    """``z, dz, m(1/z), m'(1/z)`` at the nodes of ``contour``."""
    key = (contour.a, contour.b, contour.y0, contour.nodes_per_side, contour.panel_order, c, H)
    hit = _M_CACHE.get(key)
    if hit is not None:
        return hit
    z, dz = contour.nodes()
    w = 1.0 / z
    m = solver.solve_m_companion(w, c, H)
    mp = solver.stieltjes_derivative(w, c, H, m=m)
    if len(_M_CACHE) > 32:
        _M_CACHE.clear()
    _M_CACHE[key] = (z, dz, m, mp)
    return _M_CACHE[key]


def _gated(compute, contour: RectContour, *, name: str, gate: bool = True, real_scale: float = 1.0):
    """Evaluate ``compute(contour)`` and ``compute(contour.refined())``.

    Returns ``(value, QuadratureReport)``; raises ``QuadratureError`` when the
    two differ by more than ``GATE_TOL`` or the imaginary residue exceeds
    ``IMAG_TOL`` (both scaled by ``real_scale``).
    """
    v1 = complex(compute(contour))
    if gate:
        fine = contour.refined(2)
        v2 = complex(compute(fine))
        err = abs(v2 - v1)
        nodes = fine.nodes_per_side
        value = v2
    else:
        err, nodes, value = float("nan"), contour.nodes_per_side, v1
    if gate and err > GATE_TOL * real_scale:
        raise QuadratureError(f"{name}: doubling nodes changed the integral by {err:.3e} (> {GATE_TOL:g})")
    if abs(value.imag) > IMAG_TOL * real_scale:
        raise QuadratureError(f"{name}: imaginary residue {abs(value.imag):.3e} exceeds {IMAG_TOL:g}")
    return value.real, QuadratureReport(nodes=nodes, error=float(err), imag_residue=abs(value.imag))


def _poly_on(g: TestFunction, z):
    return g.poly(z) if not g.is_zero else np.zeros_like(z)


# ---------------------------------------------------------------------------
# assumption (v) functions


def h_functions(
    H_n: PopulationSpectrum,
    p: int,
    n: int,
    m1,
    m2=None,
    *,
    normalization: str = "sample",
):
    """``h1(m1, m2) = (1/n) sum kappa_i(m1) kappa_i(m2)`` and
    ``h2(m1) = (1/n) sum kappa_i(m1) chi_i(m1)``, summed over all ``p``
    diagonal entries, with ``kappa = tau/(1 + m tau)``, ``chi = tau/(1 + m tau)^2``.

    ``normalization='dimension'`` divides by ``p`` instead of ``n``.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    taus = H_n.expand(p)
    m1 = np.asarray(m1, dtype=complex)
    m2 = m1 if m2 is None else np.asarray(m2, dtype=complex)
    k1 = taus / (1.0 + m1[..., None] * taus)
    k2 = taus / (1.0 + m2[..., None] * taus)
    chi1 = taus / (1.0 + m1[..., None] * taus) ** 2
    denom = n if normalization == "sample" else p
    h1 = np.sum(k1 * k2, axis=-1) / denom
    h2 = np.sum(k1 * chi1, axis=-1) / denom
    if h1.ndim == 0:
        return complex(h1), complex(h2)
    return h1, h2


def _h2_sample(m, c: float, H: PopulationSpectrum):
    # (1/n) sum_{i<=p} kappa_i chi_i  =  c * int tau^2/(1+m tau)^3 dH
    taus, wts = H.tau_array, H.weight_array
    return c * np.sum(wts * taus**2 / (1.0 + m[..., None] * taus) ** 3, axis=-1)


# ---------------------------------------------------------------------------
# means


def _base_mean_integrand(g, c, H, z, m, mp):
    taus, wts = H.tau_array, H.weight_array
    d = 1.0 + m[..., None] * taus
    num = c * np.sum(wts * taus**2 * m[..., None] ** 3 / d**3, axis=-1)
    den = 1.0 - c * np.sum(wts * taus**2 * m[..., None] ** 2 / d**2, axis=-1)
    return _poly_on(g, z) / z**2 * num / den**2


def _fourth_mean_integrand(g, c, H, z, m):
    taus, wts = H.tau_array, H.weight_array
    d = 1.0 + m[..., None] * taus
    den = 1.0 - c * np.sum(wts * taus**2 * m[..., None] ** 2 / d**2, axis=-1)
    h2 = _h2_sample(m, c, H)
    return _poly_on(g, z) / z**2 * m**3 * h2 / den


def mean_fourth_moment_term(g, c: float, H: PopulationSpectrum, contour: RectContour, *, gate: bool = True):
    """``(1/2 pi i) oint g/z^2 m^3 h2 / (1 - c int tau^2 m^2/(1+m tau)^2 dH) dz``
    with ``h2`` in the sample normalization; multiply by ``E X^4 - 3``."""
    g = as_test_function(g)
    if g.is_zero:
        return 0.0, QuadratureReport(contour.nodes_per_side, 0.0, 0.0)

    def f(ct):
        z, dz, m, _ = _companion_on(ct, c, H)
        return np.sum(_fourth_mean_integrand(g, c, H, z, m) * dz) / (2j * math.pi)

    return _gated(f, contour, name="mean fourth-moment term", gate=gate)


def mean_non_centered(
    g,
    c: float,
    H: PopulationSpectrum,
    kurt_excess: float,
    contour: RectContour,
    *,
    gate: bool = True,
    return_parts: bool = False,
):
    """Asymptotic mean of ``p (F^{S+}(g) - P*_n(g))``."""
    g = as_test_function(g)
    if g.is_zero:
        rep = QuadratureReport(contour.nodes_per_side, 0.0, 0.0)
        return (0.0, {"base": 0.0, "fourth": 0.0}, rep) if return_parts else 0.0

    def f(ct):
        z, dz, m, mp = _companion_on(ct, c, H)
        return np.sum(_base_mean_integrand(g, c, H, z, m, mp) * dz) / (2j * math.pi)

    base, rep = _gated(f, contour, name="non-centered mean", gate=gate)
    fourth = 0.0
    if kurt_excess != 0.0:
        t, rep4 = mean_fourth_moment_term(g, c, H, contour, gate=gate)
        fourth = kurt_excess * t
        rep = QuadratureReport(rep.nodes, max(rep.error, abs(kurt_excess) * rep4.error), max(rep.imag_residue, rep4.imag_residue))
    total = base + fourth
    if return_parts:
        return total, {"base": base, "fourth": fourth}, rep
    return total


def extra_mean_contour(g, c: float, H: PopulationSpectrum, contour: RectContour, *, gate: bool = True, with_report: bool = False):
    """``-(1/2 pi i) oint g(z)/z^2 m'(1/z)/m(1/z) dz``: the mean shift caused by
    centering the sample covariance matrix."""
    g = as_test_function(g)

    def f(ct):
        z, dz, m, mp = _companion_on(ct, c, H)
        return -np.sum(_poly_on(g, z) / z**2 * mp / m * dz) / (2j * math.pi)

    val, rep = _gated(f, contour, name="extra mean term", gate=gate)
    return (val, rep) if with_report else val


def _boundary_arg(x, c, H, eps=1e-12):
    # arg m_{F_}(1/x + i0) with the limit taken from the upper half w-plane
    m = solver.companion_boundary(1.0 / np.asarray(x, dtype=float), eps, c, H)
    return np.angle(m)


def extra_mean_realline(
    g,
    c: float,
    H: PopulationSpectrum,
    a: float,
    b: float,
    *,
    epsabs: float = 1e-12,
    epsrel: float = 1e-10,
) -> float:
    """``-(1/pi) int_a^b g'(x) arg m_{F_}(1/x) dx``.

    The boundary value is the limit from ``Im(1/x) > 0``, so ``arg`` lies in
    ``[0, pi]``: it equals ``pi`` on ``(0, inf supp P)`` and ``0`` for
    ``x < 0`` and beyond the support. Those pieces are integrated exactly.
    """
    g = as_test_function(g)
    if not a < 0 < b:
        raise ValueError("need a < 0 < b")
    gp = g.derivative()
    if gp.is_zero:
        return 0.0
    lo, hi = solver.support_interval(c, H)
    if b < hi:
        raise ValueError("(a, b) must contain the support of P")
    # pi-plateau on (0, lo]
    plateau = float(g(lo) - g(0.0))

    def f(x):
        return float(gp(x)) * float(_boundary_arg(x, c, H))

    val, _ = integrate.quad(f, lo, hi, epsabs=epsabs, epsrel=epsrel, limit=400)
    return -(plateau + val / math.pi)


def boundary_arg_profile(c: float, H: PopulationSpectrum, a: float, b: float, points: int = 400):
    """``(x, arg)`` samples of the boundary argument on ``[a, b]`` (diagnostic)."""
    x = np.linspace(a, b, points)
    x = x[x != 0.0]
    return x, _boundary_arg(x, c, H)


def mean_centered(g, c: float, H: PopulationSpectrum, kurt_excess: float, contour: RectContour, *, gate: bool = True):
    """Asymptotic mean of ``p (F^{S_tilde+}(g) - P*_n(g))``: the non-centered
    mean plus the centering shift."""
    return mean_non_centered(g, c, H, kurt_excess, contour, gate=gate) + extra_mean_contour(g, c, H, contour, gate=gate)


def mean_centered_literal(g, c: float, H: PopulationSpectrum, kurt_excess: float, contour: RectContour, *, gate: bool = True) -> float:
    """Diagnostic: the centered mean with the alternative signs (both shared
    summands negated) and without ``1/z^2`` in the fourth-moment integrand.
    Not used for predictions."""
    g = as_test_function(g)

    def base(ct):
        z, dz, m, mp = _companion_on(ct, c, H)
        return np.sum(_base_mean_integrand(g, c, H, z, m, mp) * dz) / (2j * math.pi)

    def fourth(ct):
        z, dz, m, _ = _companion_on(ct, c, H)
        return np.sum(z**2 * _fourth_mean_integrand(g, c, H, z, m) * dz) / (2j * math.pi)

    b, _ = _gated(base, contour, name="literal base", gate=gate)
    f4 = 0.0
    if kurt_excess != 0.0:
        f4, _ = _gated(fourth, contour, name="literal fourth", gate=gate)
    return -b - kurt_excess * f4 + extra_mean_contour(g, c, H, contour, gate=gate)


# ---------------------------------------------------------------------------
# covariances


def _gaussian_cov(g1, g2, c, H, outer, inner, block=256):
    z1, dz1, m1, mp1 = _companion_on(outer, c, H)
    z2, dz2, m2, mp2 = _companion_on(inner, c, H)
    a1 = _poly_on(g1, z1) / z1**2 * mp1 * dz1
    a2 = _poly_on(g2, z2) / z2**2 * mp2 * dz2
    parts = []
    for s in range(0, z1.size, block):
        d = m1[s : s + block, None] - m2[None, :]
        parts.append(a1[s : s + block] @ (1.0 / d**2) @ a2)
    total = complex(np.sum(parts))
    return -total / (2.0 * math.pi**2)


def _fourth_J(g, c, H, contour, tau, route):
    z, dz, m, mp = _companion_on(contour, c, H)
    if route == "ibp":
        return np.sum(_poly_on(g.derivative(), z) * (m * tau / (1.0 + m * tau)) * dz)
    if route == "direct":
        return np.sum(_poly_on(g, z) / z**2 * tau * mp / (1.0 + m * tau) ** 2 * dz)
    if route == "finite_difference":
        h = 1e-6
        w = 1.0 / z
        mp_plus = solver.solve_m_companion(w + h, c, H, start=m)
        mp_minus = solver.solve_m_companion(w - h, c, H, start=m)

        def F(mm):
            return mm * tau / (1.0 + mm * tau)

        dF = (F(mp_plus) - F(mp_minus)) / (2 * h)
        return np.sum(_poly_on(g, z) / z**2 * dF * dz)
    raise ValueError(f"unknown route {route!r}")


def cov_fourth_moment_term(g1, g2, c: float, H: PopulationSpectrum, contour: RectContour, *, route: str = "ibp", gate: bool = True):
    """``-(1/4 pi^2) oint oint g1 g2/(z1^2 z2^2) d^2/(dw1 dw2)[m1 m2 h1] dz1 dz2``
    with ``w = 1/z`` and ``h1`` in the sample normalization; multiply by
    ``E X^4 - 3``.

    ``m1 m2 h1 = c sum_j w_j F_j(w1) F_j(w2)`` with ``F_j = m tau_j/(1 + m tau_j)``
    separates, so the double integral is a sum of products of single ones.
    The default route integrates by parts onto ``g'``.
    """
    g1, g2 = as_test_function(g1), as_test_function(g2)
    if g1.is_zero or g2.is_zero:
        return 0.0, QuadratureReport(contour.nodes_per_side, 0.0, 0.0)

    def f(ct):
        tot = 0.0
        for tau, wt in zip(H.taus, H.weights):
            tot += wt * _fourth_J(g1, c, H, ct, tau, route) * _fourth_J(g2, c, H, ct, tau, route)
        return -c * tot / (4.0 * math.pi**2)

    return _gated(f, contour, name="covariance fourth-moment term", gate=gate)


def cov_lss(
    g1,
    g2,
    c: float,
    H: PopulationSpectrum,
    kurt_excess: float,
    contour1: RectContour,
    contour2: RectContour | None = None,
    *,
    gate: bool = True,
    return_parts: bool = False,
):
    """Asymptotic covariance of two linear spectral statistics (same for
    ``S^+`` and ``S_tilde^+``).

    ``contour2`` must lie strictly inside ``contour1``; by default it is
    ``inner_contour(contour1)``.
    """
    g1, g2 = as_test_function(g1), as_test_function(g2)
    if contour2 is None:
        contour2 = inner_contour(contour1)
    if not (contour1.a < contour2.a and contour2.b < contour1.b and contour2.y0 < contour1.y0):
        raise ValueError("contour2 must be nested strictly inside contour1")
    if g1.is_zero or g2.is_zero:
        rep = QuadratureReport(contour1.nodes_per_side, 0.0, 0.0)
        return (0.0, {"gaussian": 0.0, "fourth": 0.0}, rep) if return_parts else 0.0

    scale = 1.0

    def f(ct):
        inner = contour2 if ct.nodes_per_side == contour1.nodes_per_side else contour2.refined(ct.nodes_per_side // contour1.nodes_per_side)
        return _gaussian_cov(g1, g2, c, H, ct, inner)

    gauss, rep = _gated(f, contour1, name="covariance", gate=gate, real_scale=scale)
    fourth = 0.0
    if kurt_excess != 0.0:
        t, rep4 = cov_fourth_moment_term(g1, g2, c, H, contour1, gate=gate)
        fourth = kurt_excess * t
        rep = QuadratureReport(rep.nodes, max(rep.error, abs(kurt_excess) * rep4.error), max(rep.imag_residue, rep4.imag_residue))
    total = gauss + fourth
    if return_parts:
        return total, {"gaussian": gauss, "fourth": fourth}, rep
    return total


# ---------------------------------------------------------------------------
# centering functional P*_n(g)


def proxy_functional(g, c: float, H: PopulationSpectrum, contour: RectContour, *, gate: bool = True) -> float:
    """``P*_n(g) = -(1/2 pi i) oint g(z) m_P(z) dz``.

    The pole of ``m_P`` at zero contributes the atom ``(1 - 1/c) g(0)``.
    """
    g = as_test_function(g)
    if c <= 1:
        raise ValueError("need c > 1")

    def f(ct):
        z, dz, m, _ = _companion_on(ct, c, H)
        mP = -1.0 / z - m / (c * z**2)
        return -np.sum(_poly_on(g, z) * mP * dz) / (2j * math.pi)

    val, _ = _gated(f, contour, name="P*_n functional", gate=gate)
    return val


# ---------------------------------------------------------------------------
# predictions


@dataclass(frozen=True)
class CltPrediction:
    mean: float
    variance: float
    g: TestFunction
    regime: str
    kurtosis_excess: float
    quadrature_report: QuadratureReport
    c: float = float("nan")
    H: PopulationSpectrum | None = None
    mean_parts: dict = field(default_factory=dict)
    variance_parts: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.regime not in ("non_centered", "centered"):
            raise ValueError("regime must be 'non_centered' or 'centered'")
        if self.variance < 0:
            raise ValueError(f"negative variance {self.variance}")

    def to_dict(self) -> dict:
        return {
            "g": self.g.label,
            "regime": self.regime,
            "c": self.c,
            "H": None if self.H is None else {"taus": list(self.H.taus), "weights": list(self.H.weights)},
            "kurt_excess": self.kurtosis_excess,
            "mean": self.mean,
            "variance": self.variance,
            "mean_parts": self.mean_parts,
            "variance_parts": self.variance_parts,
            "nodes": self.quadrature_report.nodes,
            "quad_error": self.quadrature_report.error,
            "imag_residue": self.quadrature_report.imag_residue,
        }


def predict(
    g,
    c: float,
    H: PopulationSpectrum,
    kurt_excess: float = 0.0,
    *,
    margin: float = DEFAULT_MARGIN,
    y0: float = DEFAULT_Y0,
    nodes: int = DEFAULT_NODES,
    gate: bool = True,
) -> dict[str, CltPrediction]:
    """Predictions for both regimes, keyed ``'non_centered'`` and ``'centered'``."""
    g = as_test_function(g)
    contour = build_contour(support_upper(c, H), margin, y0, nodes)
    mean_nc, parts, rep_m = mean_non_centered(g, c, H, kurt_excess, contour, gate=gate, return_parts=True)
    extra, rep_x = extra_mean_contour(g, c, H, contour, gate=gate, with_report=True)
    var, vparts, rep_v = cov_lss(g, g, c, H, kurt_excess, contour, gate=gate, return_parts=True)
    rep = QuadratureReport(
        rep_m.nodes,
        max(rep_m.error, rep_x.error, rep_v.error),
        max(rep_m.imag_residue, rep_x.imag_residue, rep_v.imag_residue),
    )
    common = dict(variance=max(var, 0.0), g=g, kurtosis_excess=kurt_excess, quadrature_report=rep, c=c, H=H, variance_parts=vparts)
    return {
        "non_centered": CltPrediction(mean=mean_nc, regime="non_centered", mean_parts=dict(parts), **common),
        "centered": CltPrediction(mean=mean_nc + extra, regime="centered", mean_parts={**parts, "extra": extra}, **common),
    }


# ---------------------------------------------------------------------------
# Monte Carlo verification


@dataclass(frozen=True)
class CltConfig:
    p: int
    n: int
    g: TestFunction
    reps: int
    seed: int
    law: EntryLaw = EntryLaw("gaussian")
    H: PopulationSpectrum = PopulationSpectrum.isotropic(1.0)
    threads: int = 1
    margin: float = DEFAULT_MARGIN
    y0: float = DEFAULT_Y0
    nodes: int = DEFAULT_NODES

    def __post_init__(self) -> None:
        if self.p <= self.n:
            raise ValueError("need p > n")
        if self.reps < 2:
            raise ValueError("need at least two replicates")
        object.__setattr__(self, "g", as_test_function(self.g))

    @property
    def c(self) -> float:
        return self.p / self.n


def _replicate(cfg: CltConfig, index: int, centering: float):
    seed = mix_seed(cfg.seed, index)
    ens = build_ensemble(cfg.law, cfg.H, cfg.p, cfg.n, seed)
    g0 = float(cfg.g(0.0))
    ev = np.linalg.eigvalsh(ens.gram)
    evc = np.linalg.eigvalsh(ens.gram_centered)
    if ev[0] <= 0 or evc[0] <= 0:
        raise DegenerateEnsembleError(f"replicate {index}: singular Gram matrix")
    nc = pairwise_sum(cfg.g(1.0 / ev)) + (cfg.p - cfg.n) * g0 - centering
    ce = pairwise_sum(cfg.g(1.0 / evc)) + (cfg.p - cfg.n + 1) * g0 - centering
    return nc, ce, ens.seed != ens.requested_seed


def _summary(x: np.ndarray) -> dict:
    r = x.size
    mean = pairwise_sum(x) / r
    dev = x - mean
    var = pairwise_sum(dev**2) / (r - 1)
    return {
        "mean": mean,
        "se_mean": math.sqrt(var / r),
        "var": var,
        "se_var": var * math.sqrt(2.0 / (r - 1)),
        "skew": float(stats.skew(x)),
        "kurt": float(stats.kurtosis(x)),
    }


@dataclass(frozen=True)
class CltExperiment:
    config: CltConfig
    values_non_centered: np.ndarray = field(repr=False)
    values_centered: np.ndarray = field(repr=False)
    non_centered: dict
    centered: dict
    difference: dict
    predicted: dict
    z_scores: dict
    degenerate: int
    centering: float

    def report(self) -> dict:
        cfg = self.config
        return {
            "config": {
                "p": cfg.p,
                "n": cfg.n,
                "g": cfg.g.label,
                "law": cfg.law.label,
                "H": {"taus": list(cfg.H.taus), "weights": list(cfg.H.weights)},
                "seed": cfg.seed,
                "margin": cfg.margin,
                "y0": cfg.y0,
                "nodes": cfg.nodes,
            },
            "R": cfg.reps,
            "centering_pPn": self.centering,
            "empirical_mean": {"non_centered": self.non_centered["mean"], "centered": self.centered["mean"], "difference": self.difference["mean"]},
            "se_mean": {"non_centered": self.non_centered["se_mean"], "centered": self.centered["se_mean"], "difference": self.difference["se_mean"]},
            "empirical_var": {"non_centered": self.non_centered["var"], "centered": self.centered["var"]},
            "se_var": {"non_centered": self.non_centered["se_var"], "centered": self.centered["se_var"]},
            "skew": {"non_centered": self.non_centered["skew"], "centered": self.centered["skew"]},
            "kurt": {"non_centered": self.non_centered["kurt"], "centered": self.centered["kurt"]},
            "predicted": {k: v.to_dict() for k, v in self.predicted.items()},
            "z_score": self.z_scores,
            "degenerate": self.degenerate,
        }

    def histogram_csv(self) -> str:
        lines = ["replicate,value_noncentered,value_centered"]
        for i, (a, b) in enumerate(zip(self.values_non_centered, self.values_centered)):
            lines.append(f"{i},{float(a)!r},{float(b)!r}")
        return "\n".join(lines) + "\n"


def mc_clt_experiment(cfg: CltConfig, *, predicted: dict | None = None) -> CltExperiment:
    """Replicate ``p (F^{S+}(g) - P*_n(g))`` and ``p (F^{S_tilde+}(g) - P*_n(g))``
    and compare them with the predictions for ``c = p/n``, ``H = H_n``.

    Replicates run on ``cfg.threads`` workers with seeds ``mix_seed(seed, i)``;
    results are gathered by index and reduced by pairwise summation, so the
    output does not depend on the thread count.
    """
    c = cfg.c
    kurt = cfg.law.kurtosis_excess
    if predicted is None:
        predicted = predict(cfg.g, c, cfg.H, kurt, margin=cfg.margin, y0=cfg.y0, nodes=cfg.nodes)
    contour = build_contour(support_upper(c, cfg.H), cfg.margin, cfg.y0, cfg.nodes)
    centering = cfg.p * proxy_functional(cfg.g, c, cfg.H, contour)

    idx = range(cfg.reps)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            out = list(pool.map(lambda i: _replicate(cfg, i, centering), idx))
    else:
        out = [_replicate(cfg, i, centering) for i in idx]
    nc = np.array([o[0] for o in out])
    ce = np.array([o[1] for o in out])
    degenerate = sum(o[2] for o in out)
    if degenerate:
        log.warning("%d of %d replicates were resampled as degenerate", degenerate, cfg.reps)
    if degenerate > 0.01 * cfg.reps:
        raise DegenerateEnsembleError(f"{degenerate} of {cfg.reps} replicates degenerate (> 1%)")

    s_nc, s_ce, s_d = _summary(nc), _summary(ce), _summary(ce - nc)
    pn, pc = predicted["non_centered"], predicted["centered"]
    extra = pc.mean_parts.get("extra", pc.mean - pn.mean)
    z = {
        "mean_non_centered": (s_nc["mean"] - pn.mean) / s_nc["se_mean"],
        "mean_centered": (s_ce["mean"] - pc.mean) / s_ce["se_mean"],
        "difference_vs_extra": (s_d["mean"] - extra) / s_d["se_mean"],
        "var_non_centered": (s_nc["var"] - pn.variance) / s_nc["se_var"],
        "var_centered": (s_ce["var"] - pc.variance) / s_ce["se_var"],
        "var_gap": (s_ce["var"] - s_nc["var"]) / math.hypot(s_nc["se_var"], s_ce["se_var"]),
    }
    return CltExperiment(cfg, nc, ce, s_nc, s_ce, s_d, predicted, z, int(degenerate), centering)


def config_dict(cfg: CltConfig) -> dict:
    d = asdict(cfg)
    d["g"] = cfg.g.label
    d["law"] = cfg.law.label
    d["H"] = {"taus": list(cfg.H.taus), "weights": list(cfg.H.weights)}
    return d
