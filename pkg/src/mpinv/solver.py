"""Limiting spectral equations for the pseudoinverse of a sample covariance
matrix.

Conventions: ``w`` denotes the argument of the companion transform
``m_{F_}`` (Stieltjes transform of the limit of ``Y'Y/n``), ``z`` the argument
of ``m_P`` (transform of the limit of ``S^+``); the two are linked by
``w = 1/z``.
"""

from __future__ import annotations

import logging
import math
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .spectra import PopulationSpectrum, SpectralLimit

log = logging.getLogger(__name__)

__all__ = [
    "ConvergenceError",
    "solve_m_companion",
    "companion_residual",
    "companion_to_primary",
    "primary_to_companion",
    "solve_m_F",
    "solve_m_P",
    "mp_residual",
    "closed_form_mP",
    "closed_form_companion",
    "density_isotropic",
    "isotropic_edges",
    "density_from_stieltjes",
    "stieltjes_derivative",
    "stability_denominator",
    "support_interval",
    "finite_sample_proxy",
    "mP_boundary",
    "companion_boundary",
    "density_P",
    "limit_law",
]

BOUNDARY_EPS = 1e-9


class ConvergenceError(ArithmeticError):
    """The fixed-point solver did not reach its tolerance."""

    def __init__(self, message: str, residual: float, location: complex | None = None):
        super().__init__(message)
        self.residual = residual
        self.location = location


# ---------------------------------------------------------------------------
# companion Marchenko-Pastur equation


def _integrals(m, taus, wts):
    # int tau/(1+m tau) dH and int tau^2/(1+m tau)^2 dH, broadcast over m
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d = 1.0 + m[..., None] * taus
        s1 = np.sum(wts * taus / d, axis=-1)
        s2 = np.sum(wts * taus**2 / d**2, axis=-1)
    return s1, s2


def _picard_map(m, w, c, taus, wts):
    s1, _ = _integrals(m, taus, wts)
    return -1.0 / (w - c * s1)


def companion_residual(m: ArrayLike, w: ArrayLike, c: float, H: PopulationSpectrum):
    """``|m - G(m)|`` for ``G(m) = -(w - c int tau/(1+m tau) dH)^{-1}``."""
    m = np.asarray(m, dtype=complex)
    w = np.asarray(w, dtype=complex)
    g = _picard_map(np.atleast_1d(m), np.atleast_1d(w), c, H.tau_array, H.weight_array)
    r = np.abs(np.atleast_1d(m) - g)
    return float(r[0]) if m.ndim == 0 else r.reshape(m.shape)


def _accept(m, w, c, taus, wts, tol):
    g = _picard_map(m, w, c, taus, wts)
    res = np.abs(m - g)
    _, s2 = _integrals(m, taus, wts)
    stab = np.abs(c * m**2 * s2)
    ok = np.isfinite(m) & (res <= tol * np.maximum(1.0, np.abs(m)))
    ok &= m.imag >= -1e-300
    # the Stieltjes root is the unique one with |c int tau^2 m^2/(1+m tau)^2| < 1
    ok &= stab < 1.0 + 1e-8
    return ok, res


def _newton(m, w, c, taus, wts, steps=40):
    m = m.copy()
    with np.errstate(all="ignore"):
        for _ in range(steps):
            s1, s2 = _integrals(m, taus, wts)
            f = 1.0 / m + w - c * s1
            fp = -1.0 / m**2 + c * s2
            step = f / fp
            m = m - step
            if np.all(np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(m))):
                break
    return m


def solve_m_companion(
    w: ArrayLike,
    c: float,
    H: PopulationSpectrum,
    *,
    boundary: bool = False,
    boundary_eps: float = BOUNDARY_EPS,
    start: ArrayLike | None = None,
    damping: float = 0.5,
    tol: float = 1e-13,
    max_iter: int = 100_000,
    newton_after: int = 200,
):
    """Companion Stieltjes transform ``m_{F_}(w)``.

    Solves ``m = -(w - c int tau/(1+m tau) dH(tau))^{-1}`` by damped Picard
    iteration from ``m0 = -1/w``, with a Newton polish once the iteration
    slows down. Points with ``Im w < 0`` are handled by conjugate symmetry.
    Real ``w`` is rejected unless ``boundary`` is set, in which case the
    equation is solved at ``w + i*boundary_eps``.

    ``start`` supplies initial guesses (used for continuation); they are only
    accepted if Newton lands on the Stieltjes branch.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    w_in = np.asarray(w, dtype=complex)
    scalar = w_in.ndim == 0
    w_arr = np.atleast_1d(w_in).ravel().copy()
    real = w_arr.imag == 0.0
    if np.any(real):
        if not boundary:
            raise ValueError("w on the real axis; pass boundary=True to solve at w + i*eps")
        w_arr[real] = w_arr[real] + 1j * boundary_eps
    flip = w_arr.imag < 0
    w_arr[flip] = np.conj(w_arr[flip])
    taus, wts = H.tau_array, H.weight_array

    m = np.empty_like(w_arr)
    done = np.zeros(w_arr.size, dtype=bool)
    if start is not None:
        s = np.atleast_1d(np.asarray(start, dtype=complex)).ravel().copy()
        s[flip] = np.conj(s[flip])
        cand = _newton(s, w_arr, c, taus, wts)
        ok, _ = _accept(cand, w_arr, c, taus, wts, tol)
        m[ok] = cand[ok]
        done |= ok

    idx = np.flatnonzero(~done)
    cur = -1.0 / w_arr[idx]
    ww = w_arr[idx]
    it = 0
    res = np.full(idx.size, np.inf)
    while idx.size and it < max_iter:
        g = _picard_map(cur, ww, c, taus, wts)
        res = np.abs(cur - g)
        conv = res <= tol * np.maximum(1.0, np.abs(cur))
        cur = (1.0 - damping) * cur + damping * g
        it += 1
        if it >= newton_after and (it - newton_after) % 1000 == 0:
            cand = _newton(cur, ww, c, taus, wts)
            ok, _ = _accept(cand, ww, c, taus, wts, tol)
            cur = np.where(ok, cand, cur)
            conv |= ok
        if np.any(conv):
            m[idx[conv]] = cur[conv]
            keep = ~conv
            idx, cur, ww, res = idx[keep], cur[keep], ww[keep], res[keep]
    if idx.size:
        k = int(np.argmax(res))
        raise ConvergenceError(
            f"companion solver did not converge at {idx.size} point(s) after {it} iterations; "
            f"worst residual {res[k]:.3e} at w={w_arr[idx[k]]!r}",
            residual=float(res[k]),
            location=complex(w_arr[idx[k]]),
        )
    m[flip] = np.conj(m[flip])
    return complex(m[0]) if scalar else m.reshape(w_in.shape)


def companion_to_primary(m_companion, w, c: float):
    """``m_F(w)`` from ``m_{F_}(w) = -(1-c)/w + c m_F(w)``."""
    if c == 0:
        raise ValueError("c must be nonzero")
    return (m_companion + (1.0 - c) / w) / c


def primary_to_companion(m_primary, w, c: float):
    return -(1.0 - c) / w + c * m_primary


def solve_m_F(w, c: float, H: PopulationSpectrum, **kw):
    """Stieltjes transform of the limiting spectral distribution of ``S_n``."""
    w = np.asarray(w, dtype=complex)
    return companion_to_primary(solve_m_companion(w, c, H, **kw), w, c)


def stability_denominator(m, c: float, H: PopulationSpectrum):
    """``1 - c int tau^2 m^2 / (1 + m tau)^2 dH``."""
    m = np.asarray(m, dtype=complex)
    _, s2 = _integrals(np.atleast_1d(m), H.tau_array, H.weight_array)
    out = 1.0 - c * np.atleast_1d(m) ** 2 * s2
    return complex(out[0]) if m.ndim == 0 else out.reshape(m.shape)


def stieltjes_derivative(w, c: float, H: PopulationSpectrum, m=None, *, edge_tol: float = 1e-12, **kw):
    """``m_{F_}'(w)`` by implicit differentiation of the fixed-point equation:
    ``m' = m^2 / (1 - c int tau^2 m^2/(1+m tau)^2 dH)``."""
    w = np.asarray(w, dtype=complex)
    if m is None:
        m = solve_m_companion(w, c, H, **kw)
    m = np.asarray(m, dtype=complex)
    den = stability_denominator(m, c, H)
    if np.any(~np.isfinite(den) | (np.abs(den) < edge_tol)):
        raise ConvergenceError("implicit-differentiation denominator vanishes (spectrum edge)", 0.0)
    out = m**2 / den
    return complex(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# transform of the limit of S^+


def solve_m_P(z, c: float, H: PopulationSpectrum, **kw):
    """Stieltjes transform ``m_P(z)`` of the limit law of ``S_n^+`` (``c > 1``).

    Uses ``m_P(z) = -1/z - m_{F_}(1/z) / (c z^2)``, equivalently
    ``-(2 - 1/c)/z - m_F(1/z)/z^2``.
    """
    if c <= 1:
        raise ValueError("the pseudoinverse regime needs c > 1")
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise ValueError("z = 0 is not admissible")
    mc = solve_m_companion(1.0 / z, c, H, **kw)
    out = -1.0 / z - mc / (c * z**2)
    return complex(out) if np.ndim(out) == 0 else out


def mp_residual(z, m_P, c: float, H: PopulationSpectrum):
    """Residual of ``m_P = -(1/z)(2 - 1/c + int dH/(z tau c (z m_P + 1) - 1))``."""
    z = np.asarray(z, dtype=complex)
    m_P = np.asarray(m_P, dtype=complex)
    taus, wts = H.tau_array, H.weight_array
    zz, mm = np.atleast_1d(z), np.atleast_1d(m_P)
    integral = np.sum(wts / (zz[..., None] * taus * c * (zz[..., None] * mm[..., None] + 1.0) - 1.0), axis=-1)
    rhs = -(2.0 - 1.0 / c + integral) / zz
    r = np.abs(mm - rhs)
    return float(r[0]) if z.ndim == 0 else r.reshape(z.shape)


def _mp_root(u, c: float, sigma2: float):
    # sqrt((u - lambda_+)(u - lambda_-)) as a product of principal roots: analytic
    # off [lambda_-, lambda_+] and ~ u at infinity, which is the Herglotz branch
    lam_plus = sigma2 * (1.0 + math.sqrt(c)) ** 2
    lam_minus = sigma2 * (1.0 - math.sqrt(c)) ** 2
    return np.sqrt(u - lam_plus) * np.sqrt(u - lam_minus)


def closed_form_mP(z, c: float, sigma2: float):
    """Closed-form ``m_P`` for ``Sigma = sigma2 * I``.

    The radicand ``(1/z - c sigma2 + sigma2)^2 - 4 sigma2/z`` factors as
    ``(1/z - lambda_+)(1/z - lambda_-)``; its root is taken on the branch cut
    along the support, which gives ``Im m_P > 0`` on the upper half plane.
    Real ``z`` is evaluated at ``z + 1e-9 i``.
    """
    if c <= 1 or sigma2 <= 0:
        raise ValueError("need c > 1 and sigma2 > 0")
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise ValueError("z = 0 is not admissible")
    zz = np.where(z.imag == 0.0, z + 1e-9j, z)
    u = 1.0 / zz
    out = -(1.0 + (-u + (c - 1.0) * sigma2 + _mp_root(u, c, sigma2)) / (2.0 * sigma2 * c)) / zz
    return complex(out) if out.ndim == 0 else out


def closed_form_companion(w, c: float, sigma2: float):
    """Closed-form ``m_{F_}(w)`` for ``H = delta_{sigma2}``: the root of
    ``sigma2 w m^2 + (w + sigma2 - c sigma2) m + 1 = 0`` with ``m ~ -1/w``."""
    w = np.asarray(w, dtype=complex)
    ww = np.where(w.imag == 0.0, w + 1e-9j, w)
    out = (-(ww + sigma2 * (1.0 - c)) + _mp_root(ww, c, sigma2)) / (2.0 * sigma2 * ww)
    return complex(out) if out.ndim == 0 else out


def isotropic_edges(c: float, sigma2: float) -> tuple[float, float]:
    """Support ``[1/lambda_+, 1/lambda_-]`` of the density of ``P``."""
    lam_plus = sigma2 * (1.0 + math.sqrt(c)) ** 2
    lam_minus = sigma2 * (1.0 - math.sqrt(c)) ** 2
    return 1.0 / lam_plus, 1.0 / lam_minus


def density_isotropic(x, c: float, sigma2: float):
    """Absolutely continuous part of ``P`` for ``Sigma = sigma2 * I``.

    ``nu(x) = sqrt((lambda_+ - 1/x)(1/x - lambda_-)) / (2 pi sigma2 c x)`` on
    ``[1/lambda_+, 1/lambda_-]`` (the image of the Marchenko-Pastur density
    under ``lambda -> 1/lambda``); total mass ``1/c``.
    """
    if c <= 1 or sigma2 <= 0:
        raise ValueError("need c > 1 and sigma2 > 0")
    x = np.asarray(x, dtype=float)
    lam_plus = sigma2 * (1.0 + math.sqrt(c)) ** 2
    lam_minus = sigma2 * (1.0 - math.sqrt(c)) ** 2
    lo, hi = 1.0 / lam_plus, 1.0 / lam_minus
    inside = (x >= lo) & (x <= hi)
    xs = np.where(inside, x, 1.0)
    inv = 1.0 / xs
    prod = np.clip((lam_plus - inv) * (inv - lam_minus), 0.0, None)
    out = np.where(inside, np.sqrt(prod) / (2.0 * math.pi * sigma2 * c * xs), 0.0)
    return float(out) if out.ndim == 0 else out


def density_from_stieltjes(
    x,
    eps: float,
    m_provider: Callable,
    *,
    richardson: bool = False,
):
    """``max(0, Im m(x + i eps) / pi)``.

    With ``richardson`` the value is extrapolated to ``eps -> 0`` from
    ``eps * {100, 10, 1}`` assuming an error linear in ``eps``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    if richardson:
        f = [np.imag(m_provider(x + 1j * e)) / math.pi for e in (100 * eps, 10 * eps, eps)]
        # second-order Richardson on a geometric ladder of ratio 10
        r1 = (10 * f[2] - f[1]) / 9
        r0 = (10 * f[1] - f[0]) / 9
        est = (100 * r1 - r0) / 99
    else:
        est = np.imag(m_provider(x + 1j * eps)) / math.pi
    out = np.maximum(0.0, est)
    return float(out) if out.ndim == 0 else out


def _eps_ladder(eps: float, top: float) -> list[float]:
    ladder = []
    e = max(top, eps)
    while e > eps * 1.0000001:
        ladder.append(e)
        e /= 10.0
    ladder.append(eps)
    return ladder


def companion_boundary(w, eps: float, c: float, H: PopulationSpectrum, *, ladder_top: float = 1.0):
    """``m_{F_}(w + i eps)`` for real ``w``, solved by continuation in ``eps``.

    Starting at ``ladder_top`` the offset is reduced by factors of ten, each
    solve seeded with the previous solution.
    """
    w = np.asarray(w, dtype=float)
    ws = np.atleast_1d(w).ravel()
    mc = None
    for e in _eps_ladder(eps, ladder_top):
        mc = solve_m_companion(ws + 1j * e, c, H, start=mc)
    return complex(mc[0]) if w.ndim == 0 else mc.reshape(w.shape)


def mP_boundary(x, eps: float, c: float, H: PopulationSpectrum, *, ladder_top: float = 1.0):
    """``m_P(x + i eps)`` for real ``x``, solved by continuation in ``eps``."""
    x = np.asarray(x, dtype=float)
    xs = np.atleast_1d(x).ravel()
    mc = None
    for e in _eps_ladder(eps, ladder_top):
        z = xs + 1j * e
        mc = solve_m_companion(1.0 / z, c, H, start=mc)
    z = xs + 1j * eps
    out = -1.0 / z - mc / (c * z**2)
    return complex(out[0]) if x.ndim == 0 else out.reshape(x.shape)


def density_P(x, c: float, H: PopulationSpectrum, *, eps: float = 1e-9):
    """Density of the absolutely continuous part of ``P`` at ``x > 0``.

    Computed as ``Im m_{F_}(1/x + i eps) / (pi c x^2)``, which leaves out the
    Lorentzian tail of the atom at zero that ``Im m_P(x + i eps)`` carries.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("density_P needs x > 0")
    mc = companion_boundary(1.0 / x, eps, c, H)
    out = np.maximum(0.0, np.imag(mc) / (math.pi * c * x**2))
    return float(out) if np.ndim(out) == 0 else out


def support_interval(
    c: float,
    H: PopulationSpectrum,
    *,
    threshold: float = 1e-6,
    grid_points: int = 4000,
    eps: float = 1e-9,
) -> tuple[float, float]:
    """Interval ``[lo, hi]`` carrying the density of ``P``.

    Exact for a single atom. Otherwise the positive-density region is located
    on a grid spanning the a priori bounds
    ``[1/(tau_max (1+sqrt c)^2), 1/(tau_min (1-sqrt c)^2)]``; for a support with
    several components this is their convex hull.
    """
    if H.is_isotropic:
        return isotropic_edges(c, H.taus[0])
    lo_b = 1.0 / (max(H.taus) * (1.0 + math.sqrt(c)) ** 2)
    hi_b = 1.0 / (min(H.taus) * (1.0 - math.sqrt(c)) ** 2)
    pad = 0.05 * (hi_b - lo_b)
    grid = np.linspace(max(lo_b - pad, 1e-3 * lo_b), hi_b + pad, grid_points)
    dens = density_P(grid, c, H, eps=eps)
    pos = np.flatnonzero(dens > threshold)
    if pos.size == 0:
        raise ConvergenceError("no positive-density region detected", 0.0)
    step = grid[1] - grid[0]
    return float(max(grid[pos[0]] - step, 1e-12)), float(grid[pos[-1]] + step)


def limit_law(
    c: float,
    H: PopulationSpectrum,
    *,
    resolution: int = 2000,
    eps: float = 1e-9,
    margin: float = 0.01,
) -> SpectralLimit:
    """Limit law ``P`` of ``S^+`` for ratio ``c > 1`` and population law ``H``.

    Atom ``1 - 1/c`` at zero; density gridded on ``resolution`` points that
    extend ``margin`` (relative to the support width) beyond the support.
    """
    if c <= 1:
        raise ValueError("the pseudoinverse regime needs c > 1")
    lo, hi = support_interval(c, H)
    span = hi - lo
    x = np.linspace(max(lo - margin * span, 1e-12), hi + margin * span, resolution)
    nu = density_P(x, c, H, eps=eps)
    return SpectralLimit(atom_mass=1.0 - 1.0 / c, x=x, density=nu, support=(lo, hi))


def finite_sample_proxy(
    p: int,
    n: int,
    H_n: PopulationSpectrum,
    *,
    resolution: int = 2000,
    eps: float = 1e-9,
    margin: float = 0.01,
) -> SpectralLimit:
    """``P*_n``: the limit law with ``c = p/n`` and ``H = H_n``, gridded.

    Atom ``1 - n/p`` at zero; density by Stieltjes inversion on a grid that
    extends ``margin`` (relative to the support width) beyond the support.
    """
    if p <= n:
        raise ValueError("finite_sample_proxy needs p > n")
    return limit_law(p / n, H_n, resolution=resolution, eps=eps, margin=margin)
